#pragma once

// Exact 1-D k-means by dynamic programming over the sorted values. Optimal
// 1-D clusters are contiguous in sorted order, so the optimum is the best
// split of the sorted list into k runs. Used as a verification oracle.

#include <algorithm>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "splitquant/cluster.hpp"

namespace splitquant {

inline constexpr std::size_t kBruteForceMaxValues = 64;

inline ClusterAssignment brute_force_kmeans_1d(std::span<const double> values, int k) {
    const std::size_t n = values.size();
    if (n == 0) throw ArgumentError("brute_force_kmeans_1d: empty input");
    if (n > kBruteForceMaxValues) throw ArgumentError("brute_force_kmeans_1d: at most 64 values supported");
    if (k < 1) throw ArgumentError("brute_force_kmeans_1d: k must be >= 1");

    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    std::vector<double> s(n);
    for (std::size_t i = 0; i < n; ++i) s[i] = values[idx[i]];

    std::vector<double> distinct = s;
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    const std::size_t kk = std::min<std::size_t>(static_cast<std::size_t>(k), distinct.size());

    // sum of squared deviations of s[i..j], computed directly from the mean
    auto cost = [&](std::size_t i, std::size_t j) {
        double mean = 0.0;
        for (std::size_t t = i; t <= j; ++t) mean += s[t];
        mean /= static_cast<double>(j - i + 1);
        double c = 0.0;
        for (std::size_t t = i; t <= j; ++t) c += (s[t] - mean) * (s[t] - mean);
        return c;
    };

    const double inf = std::numeric_limits<double>::infinity();
    // best[c][j]: optimal cost of s[0..j-1] in c runs; cut[c][j]: start of last run
    std::vector<std::vector<double>> best(kk + 1, std::vector<double>(n + 1, inf));
    std::vector<std::vector<std::size_t>> cut(kk + 1, std::vector<std::size_t>(n + 1, 0));
    best[0][0] = 0.0;
    for (std::size_t c = 1; c <= kk; ++c)
        for (std::size_t j = c; j <= n; ++j)
            for (std::size_t i = c - 1; i < j; ++i) {
                if (best[c - 1][i] == inf) continue;
                const double v = best[c - 1][i] + cost(i, j - 1);
                if (v < best[c][j]) {
                    best[c][j] = v;
                    cut[c][j] = i;
                }
            }

    ClusterAssignment a;
    a.k = static_cast<int>(kk);
    a.objective = best[kk][n];
    a.centroids.assign(kk, 0.0);
    a.labels.assign(n, 0);
    std::size_t end = n;
    for (std::size_t c = kk; c >= 1; --c) {
        const std::size_t start = cut[c][end];
        double mean = 0.0;
        for (std::size_t t = start; t < end; ++t) mean += s[t];
        a.centroids[c - 1] = mean / static_cast<double>(end - start);
        for (std::size_t t = start; t < end; ++t) a.labels[idx[t]] = static_cast<int>(c - 1);
        end = start;
    }
    return a;
}

inline ClusterAssignment brute_force_kmeans_1d(std::span<const float> values, int k) {
    std::vector<double> xs(values.begin(), values.end());
    return brute_force_kmeans_1d(std::span<const double>(xs), k);
}

}  // namespace splitquant
