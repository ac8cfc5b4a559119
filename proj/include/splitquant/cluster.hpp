#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <vector>

#include "splitquant/errors.hpp"

namespace splitquant {

/// Partition of a scalar list into k clusters, labelled in ascending
/// centroid order (0 = lower, 1 = middle, 2 = upper for k = 3).
struct ClusterAssignment {
    int k = 0;
    std::vector<double> centroids;
    std::vector<int> labels;
    double objective = 0.0;  // sum of squared distances to assigned centroid
};

struct KMeansOptions {
    int restarts = 10;
    int max_iterations = 100;
};

namespace detail {

// Uniform double in [0, 1) from the top 53 bits; independent of the
// standard library's distribution implementations.
inline double uniform01(std::mt19937_64 &rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

// SplitMix64 finalizer, used to derive per-restart seeds.
inline std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline std::size_t nearest(double v, const std::vector<double> &centers) {
    std::size_t best = 0;
    double best_d = std::abs(v - centers[0]);
    for (std::size_t j = 1; j < centers.size(); ++j) {
        const double d = std::abs(v - centers[j]);
        if (d < best_d) {  // strict: ties stay with the lower index
            best = j;
            best_d = d;
        }
    }
    return best;
}

inline double potential(std::span<const double> xs, const std::vector<double> &d2, double center) {
    double total = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) total += std::min(d2[i], (xs[i] - center) * (xs[i] - center));
    return total;
}

// Greedy k-means++: first center uniform, then each further center is the
// best (lowest resulting potential) of 2 + floor(ln k) D^2-sampled candidates.
inline std::vector<double> greedy_kmeanspp(std::span<const double> xs, int k, std::mt19937_64 &rng) {
    const std::size_t n = xs.size();
    const int trials = 2 + static_cast<int>(std::floor(std::log(static_cast<double>(k))));
    std::vector<double> centers;
    centers.push_back(xs[std::min(n - 1, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)))]);
    std::vector<double> d2(n);
    for (std::size_t i = 0; i < n; ++i) d2[i] = (xs[i] - centers[0]) * (xs[i] - centers[0]);

    while (static_cast<int>(centers.size()) < k) {
        double total = 0.0;
        for (double d : d2) total += d;
        if (total <= 0.0) break;  // fewer distinct points than k
        double best_pot = std::numeric_limits<double>::infinity();
        std::size_t best_idx = 0;
        for (int t = 0; t < trials; ++t) {
            const double r = uniform01(rng) * total;
            double acc = 0.0;
            std::size_t pick = n;
            for (std::size_t i = 0; i < n; ++i) {
                acc += d2[i];
                if (d2[i] > 0.0 && acc > r) {
                    pick = i;
                    break;
                }
            }
            if (pick == n)  // r landed on the float tail; take the last candidate with mass
                for (std::size_t i = n; i-- > 0;)
                    if (d2[i] > 0.0) {
                        pick = i;
                        break;
                    }
            const double pot = potential(xs, d2, xs[pick]);
            if (pot < best_pot) {
                best_pot = pot;
                best_idx = pick;
            }
        }
        centers.push_back(xs[best_idx]);
        for (std::size_t i = 0; i < n; ++i)
            d2[i] = std::min(d2[i], (xs[i] - xs[best_idx]) * (xs[i] - xs[best_idx]));
    }
    return centers;
}

inline ClusterAssignment lloyd(std::span<const double> xs, std::vector<double> centers, int max_iterations) {
    const std::size_t n = xs.size();
    const std::size_t k = centers.size();
    std::vector<int> labels(n, -1);
    for (int it = 0; it < max_iterations; ++it) {
        std::sort(centers.begin(), centers.end());
        bool changed = false;
        for (std::size_t i = 0; i < n; ++i) {
            const int lab = static_cast<int>(nearest(xs[i], centers));
            changed |= lab != labels[i];
            labels[i] = lab;
        }
        std::vector<double> sum(k, 0.0);
        std::vector<std::size_t> count(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            sum[static_cast<std::size_t>(labels[i])] += xs[i];
            ++count[static_cast<std::size_t>(labels[i])];
        }
        bool empty = false;
        for (std::size_t j = 0; j < k; ++j) {
            if (count[j]) {
                centers[j] = sum[j] / static_cast<double>(count[j]);
                continue;
            }
            // reseed an empty cluster at the point worst served by its centroid
            empty = true;
            std::size_t worst = 0;
            double worst_d = -1.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double d = std::abs(xs[i] - centers[static_cast<std::size_t>(labels[i])]);
                if (d > worst_d) {
                    worst_d = d;
                    worst = i;
                }
            }
            centers[j] = xs[worst];
        }
        if (!changed && !empty) break;
    }
    // relabel in ascending centroid order (only matters if the cap was hit)
    std::vector<std::size_t> order(k);
    for (std::size_t j = 0; j < k; ++j) order[j] = j;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return centers[a] < centers[b]; });
    std::vector<int> rank(k);
    for (std::size_t j = 0; j < k; ++j) rank[order[j]] = static_cast<int>(j);
    for (auto &lab : labels) lab = rank[static_cast<std::size_t>(lab)];
    std::sort(centers.begin(), centers.end());

    ClusterAssignment a;
    a.k = static_cast<int>(k);
    a.centroids = centers;
    a.labels = labels;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = xs[i] - centers[static_cast<std::size_t>(labels[i])];
        a.objective += d * d;
    }
    return a;
}

inline std::size_t count_distinct(std::span<const double> xs) {
    std::vector<double> s(xs.begin(), xs.end());
    std::sort(s.begin(), s.end());
    return static_cast<std::size_t>(std::unique(s.begin(), s.end()) - s.begin());
}

}  // namespace detail

/// 1-D k-means: greedy k-means++ seeding, Lloyd refinement, best of
/// `opts.restarts` seeded runs (ties on objective keep the earliest run).
/// Returns min(k, distinct values) clusters.
inline ClusterAssignment kmeans_1d(std::span<const double> values, int k, std::uint64_t seed,
                                   KMeansOptions opts = {}) {
    if (values.empty()) throw ArgumentError("kmeans_1d: empty input");
    if (k < 1) throw ArgumentError("kmeans_1d: k must be >= 1");
    for (double v : values)
        if (!std::isfinite(v)) throw ArgumentError("kmeans_1d: non-finite value");
    const int k_eff = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(k), detail::count_distinct(values)));

    ClusterAssignment best;
    best.objective = std::numeric_limits<double>::infinity();
    for (int r = 0; r < std::max(1, opts.restarts); ++r) {
        std::mt19937_64 rng(detail::mix_seed(seed ^ detail::mix_seed(static_cast<std::uint64_t>(r))));
        auto centers = detail::greedy_kmeanspp(values, k_eff, rng);
        auto a = detail::lloyd(values, std::move(centers), opts.max_iterations);
        if (a.objective < best.objective) best = std::move(a);
    }
    return best;
}

inline ClusterAssignment kmeans_1d(std::span<const float> values, int k, std::uint64_t seed,
                                   KMeansOptions opts = {}) {
    std::vector<double> xs(values.begin(), values.end());
    return kmeans_1d(std::span<const double>(xs), k, seed, opts);
}

}  // namespace splitquant
