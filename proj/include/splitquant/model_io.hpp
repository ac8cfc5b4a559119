#pragma once

// On-disk model format "sqm-1": a JSON manifest plus a sibling raw blob
// sharing the manifest's stem (model.json + model.bin). The blob holds
// little-endian FP32 tensors, row-major, concatenated at 4-byte aligned
// offsets; the manifest's tensor directory locates each one.

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "splitquant/graph.hpp"

namespace splitquant {

inline constexpr const char *kModelFormatVersion = "sqm-1";

namespace io {

using json = nlohmann::json;

struct TensorEntry {
    std::string name;
    Shape shape;
    std::uint64_t offset = 0;
    std::uint64_t length = 0;
};

inline std::filesystem::path blob_path_for(const std::filesystem::path &manifest) {
    auto p = manifest;
    p.replace_extension(".bin");
    return p;
}

/// Accumulates tensors into a blob and a matching directory.
class BlobWriter {
  public:
    std::string add(const std::string &name, const Tensor &t) {
        TensorEntry e{name, t.shape(), bytes_.size(), t.size() * sizeof(float)};
        const std::size_t base = bytes_.size();
        bytes_.resize(base + e.length);
        for (std::size_t i = 0; i < t.size(); ++i) {
            std::uint32_t bits = std::bit_cast<std::uint32_t>(t[i]);
            if constexpr (std::endian::native == std::endian::big)
                bits = (bits >> 24) | ((bits >> 8) & 0xff00u) | ((bits << 8) & 0xff0000u) | (bits << 24);
            std::memcpy(bytes_.data() + base + i * 4, &bits, 4);
        }
        entries_.push_back(std::move(e));
        return name;
    }

    json directory() const {
        json dir = json::array();
        for (const auto &e : entries_)
            dir.push_back({{"name", e.name}, {"dtype", "fp32"}, {"shape", e.shape}, {"offset", e.offset},
                           {"length", e.length}});
        return dir;
    }

    void write(const std::filesystem::path &path) const {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError(path.string(), "cannot open for writing");
        out.write(reinterpret_cast<const char *>(bytes_.data()), static_cast<std::streamsize>(bytes_.size()));
        if (!out) throw IoError(path.string(), "write failed");
    }

  private:
    std::vector<unsigned char> bytes_;
    std::vector<TensorEntry> entries_;
};

inline std::vector<unsigned char> read_bytes(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(path.string(), "cannot open for reading");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline json read_manifest(const std::filesystem::path &path, const char *expected_version) {
    std::ifstream in(path);
    if (!in) throw IoError(path.string(), "cannot open for reading");
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception &e) {
        throw ManifestParseError(path.string() + ": malformed manifest: " + e.what());
    }
    if (!doc.is_object() || !doc.contains("format") || !doc["format"].is_string())
        throw ManifestParseError(path.string() + ": manifest has no format string");
    if (doc["format"] != expected_version)
        throw VersionError(path.string() + ": unsupported format '" + doc["format"].get<std::string>() +
                           "', expected '" + expected_version + "'");
    return doc;
}

/// Resolves a manifest tensor directory against the blob bytes.
class BlobReader {
  public:
    BlobReader(const json &directory, std::vector<unsigned char> blob) : blob_(std::move(blob)) {
        if (!directory.is_array()) throw ManifestParseError("tensor directory must be an array");
        for (const auto &e : directory) {
            TensorEntry t;
            try {
                t.name = e.at("name").get<std::string>();
                if (e.at("dtype").get<std::string>() != "fp32")
                    throw ManifestParseError("tensor '" + t.name + "' has unsupported dtype");
                t.shape = e.at("shape").get<Shape>();
                t.offset = e.at("offset").get<std::uint64_t>();
                t.length = e.at("length").get<std::uint64_t>();
            } catch (const json::exception &ex) {
                throw ManifestParseError(std::string("bad tensor directory entry: ") + ex.what());
            }
            if (t.offset % 4 != 0) throw TensorBoundsError("tensor '" + t.name + "' offset is not 4-byte aligned");
            if (t.offset > blob_.size() || t.length > blob_.size() - t.offset)
                throw TensorBoundsError("tensor '" + t.name + "' [" + std::to_string(t.offset) + ", +" +
                                        std::to_string(t.length) + ") exceeds blob of " +
                                        std::to_string(blob_.size()) + " bytes");
            if (t.shape.empty() || num_elements(t.shape) * 4 != t.length)
                throw ManifestParseError("tensor '" + t.name + "' length does not match its shape");
            if (!entries_.emplace(t.name, t).second)
                throw ManifestParseError("duplicate tensor name '" + t.name + "'");
        }
    }

    Tensor get(const std::string &name) const {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw ManifestParseError("unknown tensor '" + name + "'");
        const TensorEntry &e = it->second;
        std::vector<float> data(e.length / 4);
        for (std::size_t i = 0; i < data.size(); ++i) {
            std::uint32_t bits;
            std::memcpy(&bits, blob_.data() + e.offset + i * 4, 4);
            if constexpr (std::endian::native == std::endian::big)
                bits = (bits >> 24) | ((bits >> 8) & 0xff00u) | ((bits << 8) & 0xff0000u) | (bits << 24);
            data[i] = std::bit_cast<float>(bits);
        }
        return Tensor(e.shape, std::move(data));
    }

  private:
    std::vector<unsigned char> blob_;
    std::map<std::string, TensorEntry> entries_;
};

inline json layer_to_json(const Layer &l, BlobWriter &blob) {
    json j{{"id", l.id}, {"kind", std::string(kind_name(l.kind))}, {"inputs", l.inputs}};
    json attrs = json::object();
    switch (l.kind) {
        case LayerKind::Conv2d:
            attrs["stride"] = l.attrs.stride;
            attrs["padding"] = l.attrs.padding;
            break;
        case LayerKind::Slice:
            attrs["axis"] = l.attrs.axis;
            attrs["start"] = l.attrs.start;
            attrs["length"] = l.attrs.length;
            break;
        case LayerKind::Concat: attrs["axis"] = l.attrs.axis; break;
        case LayerKind::BatchNorm: attrs["epsilon"] = l.attrs.epsilon; break;
        default: break;
    }
    j["attrs"] = attrs;
    json params = json::object();
    for (const auto &[name, t] : l.params) params[name] = blob.add(l.id + "/" + name, t);
    j["params"] = params;
    if (l.generated) j["generated"] = true;
    return j;
}

inline Layer layer_from_json(const json &j, const BlobReader &blob) {
    Layer l;
    try {
        l.id = j.at("id").get<std::string>();
        const auto kind = j.at("kind").get<std::string>();
        auto parsed = parse_kind(kind);
        if (!parsed) throw UnsupportedKindError(kind);
        l.kind = *parsed;
        l.inputs = j.at("inputs").get<std::vector<std::string>>();
        const json attrs = j.value("attrs", json::object());
        l.attrs.stride = attrs.value("stride", l.attrs.stride);
        l.attrs.padding = attrs.value("padding", l.attrs.padding);
        l.attrs.axis = attrs.value("axis", l.attrs.axis);
        l.attrs.start = attrs.value("start", l.attrs.start);
        l.attrs.length = attrs.value("length", l.attrs.length);
        l.attrs.epsilon = attrs.value("epsilon", l.attrs.epsilon);
        const json params = j.value("params", json::object());
        for (const auto &[name, ref] : params.items())
            l.params.emplace(name, blob.get(ref.get<std::string>()));
        l.generated = j.value("generated", false);
    } catch (const json::exception &e) {
        throw ManifestParseError(std::string("bad layer entry: ") + e.what());
    }
    return l;
}

}  // namespace io

/// Writes `<stem>.json`-style manifest at `path` and the blob beside it.
inline void save_model(const Graph &g, const std::filesystem::path &path) {
    io::BlobWriter blob;
    io::json graph{{"inputs", io::json::array()}, {"outputs", g.outputs}, {"layers", io::json::array()}};
    for (const auto &in : g.inputs) graph["inputs"].push_back({{"name", in.name}, {"shape", in.shape}});
    for (const auto &l : g.layers) graph["layers"].push_back(io::layer_to_json(l, blob));
    const auto blob_path = io::blob_path_for(path);
    io::json doc{{"format", kModelFormatVersion},
                 {"blob", blob_path.filename().string()},
                 {"graph", graph},
                 {"tensors", blob.directory()}};
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError(path.string(), "cannot open for writing");
    out << doc.dump(2) << '\n';
    if (!out) throw IoError(path.string(), "write failed");
    blob.write(blob_path);
}

inline Graph load_model(const std::filesystem::path &path) {
    const io::json doc = io::read_manifest(path, kModelFormatVersion);
    Graph g;
    try {
        const auto blob_name = doc.at("blob").get<std::string>();
        io::BlobReader blob(doc.at("tensors"), io::read_bytes(path.parent_path() / blob_name));
        const io::json &graph = doc.at("graph");
        for (const auto &in : graph.at("inputs"))
            g.inputs.push_back({in.at("name").get<std::string>(), in.at("shape").get<Shape>()});
        g.outputs = graph.at("outputs").get<std::vector<std::string>>();
        for (const auto &l : graph.at("layers")) g.layers.push_back(io::layer_from_json(l, blob));
    } catch (const io::json::exception &e) {
        throw ManifestParseError(path.string() + ": " + e.what());
    }
    return g;
}

}  // namespace splitquant
