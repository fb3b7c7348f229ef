#pragma once

#include <nlohmann/json.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "lcl/error.hpp"
#include "lcl/model.hpp"

namespace lcl {

// File layout:
//   8 bytes   magic "LCLCKPT\0"
//   u32 LE    format version
//   u64 LE    header length H
//   H bytes   JSON header (spec, step, seed, optimizer, tensor and stats list)
//   payload   float32 LE values: each tensor in header order, then for each
//             running-stats entry its means followed by its variances
inline constexpr char kCheckpointMagic[8] = {'L', 'C', 'L', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
    std::uint64_t step = 0;
    std::uint64_t seed = 0;
    std::string momentum = "classical";
    nlohmann::json extra = nlohmann::json::object();
};

template <class T>
struct Checkpoint {
    ModelParams<T> params;
    CheckpointMeta meta;
};

inline nlohmann::json to_json(const ModelSpec& s) {
    return {{"n", s.n}, {"image_size", s.image_size}, {"in_channels", s.in_channels}, {"embed_dim", s.embed_dim},
            {"L", s.L}};
}

inline ModelSpec spec_from_json(const nlohmann::json& j) {
    ModelSpec s;
    s.n = j.at("n").get<int>();
    s.image_size = j.at("image_size").get<int>();
    s.in_channels = j.at("in_channels").get<int>();
    s.embed_dim = j.at("embed_dim").get<int>();
    s.L = j.at("L").get<int>();
    return s;
}

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_f32(std::string& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

class ByteReader {
public:
    ByteReader(const std::string& data, std::string what) : data_(data), what_(std::move(what)) {}

    const char* take(std::size_t n) {
        if (data_.size() - pos_ < n) {
            throw LoadError(what_ + ": file is truncated");
        }
        const char* p = data_.data() + pos_;
        pos_ += n;
        return p;
    }

    std::uint32_t u32() {
        const auto* p = reinterpret_cast<const unsigned char*>(take(4));
        std::uint32_t v = 0;
        for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
        return v;
    }

    std::uint64_t u64() {
        const auto* p = reinterpret_cast<const unsigned char*>(take(8));
        std::uint64_t v = 0;
        for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
        return v;
    }

    float f32() { return std::bit_cast<float>(u32()); }

    bool done() const { return pos_ == data_.size(); }

private:
    const std::string& data_;
    std::string what_;
    std::size_t pos_ = 0;
};

} // namespace detail

/// Serializes parameters as float32 regardless of T.
template <class T>
std::string encode_checkpoint(const ModelParams<T>& params, const CheckpointMeta& meta) {
    nlohmann::json header;
    header["format_version"] = kCheckpointVersion;
    header["spec"] = to_json(params.spec());
    header["step"] = meta.step;
    header["seed"] = meta.seed;
    header["optimizer"] = {{"kind", "sgd"}, {"momentum", meta.momentum}};
    header["extra"] = meta.extra;
    auto tensors = nlohmann::json::array();
    for (std::size_t i = 0; i < params.size(); ++i) {
        tensors.push_back({{"name", params.name(i)}, {"shape", params.tensor(i).shape()}});
    }
    header["tensors"] = tensors;
    auto stats = nlohmann::json::array();
    for (const auto& [name, s] : params.bn_stats()) {
        stats.push_back({{"name", name}, {"channels", s.mean.size()}});
    }
    header["running_stats"] = stats;
    const std::string text = header.dump();

    std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
    detail::put_u32(out, kCheckpointVersion);
    detail::put_u64(out, text.size());
    out += text;
    for (std::size_t i = 0; i < params.size(); ++i) {
        for (T v : params.tensor(i).data()) detail::put_f32(out, static_cast<float>(v));
    }
    for (const auto& [name, s] : params.bn_stats()) {
        for (T v : s.mean) detail::put_f32(out, static_cast<float>(v));
        for (T v : s.var) detail::put_f32(out, static_cast<float>(v));
    }
    return out;
}

template <class T = float>
Checkpoint<T> decode_checkpoint(const std::string& bytes, const std::string& what = "checkpoint") {
    detail::ByteReader in(bytes, what);
    if (std::memcmp(in.take(sizeof kCheckpointMagic), kCheckpointMagic, sizeof kCheckpointMagic) != 0) {
        throw LoadError(what + ": not a checkpoint file");
    }
    const std::uint32_t version = in.u32();
    if (version != kCheckpointVersion) {
        throw LoadError(what + ": unsupported format version " + std::to_string(version));
    }
    const std::uint64_t header_len = in.u64();
    nlohmann::json header;
    try {
        const char* p = in.take(header_len);
        header = nlohmann::json::parse(p, p + header_len);
    } catch (const nlohmann::json::exception& e) {
        throw LoadError(what + ": bad header: " + e.what());
    }

    Checkpoint<T> ck;
    try {
        ck.meta.step = header.at("step").get<std::uint64_t>();
        ck.meta.seed = header.at("seed").get<std::uint64_t>();
        ck.meta.momentum = header.at("optimizer").at("momentum").get<std::string>();
        ck.meta.extra = header.value("extra", nlohmann::json::object());
        ck.params.set_spec(spec_from_json(header.at("spec")));
        for (const auto& t : header.at("tensors")) {
            const auto shape = t.at("shape").get<Shape>();
            Tensor<T> tensor(shape);
            for (auto& v : tensor.data()) v = static_cast<T>(in.f32());
            ck.params.add(t.at("name").get<std::string>(), std::move(tensor));
        }
        for (const auto& s : header.at("running_stats")) {
            const auto channels = s.at("channels").get<std::size_t>();
            RunningStats<T> rs;
            rs.mean.resize(channels);
            rs.var.resize(channels);
            for (auto& v : rs.mean) v = static_cast<T>(in.f32());
            for (auto& v : rs.var) v = static_cast<T>(in.f32());
            ck.params.bn_stats()[s.at("name").get<std::string>()] = std::move(rs);
        }
    } catch (const nlohmann::json::exception& e) {
        throw LoadError(what + ": bad header: " + e.what());
    } catch (const ShapeError& e) {
        throw LoadError(what + ": " + e.what());
    }
    if (!in.done()) {
        throw LoadError(what + ": trailing bytes after payload");
    }
    return ck;
}

template <class T>
void save_checkpoint(const ModelParams<T>& params, const CheckpointMeta& meta, const std::filesystem::path& path) {
    const std::string bytes = encode_checkpoint(params, meta);
    // Write to a sibling file first so a crash never leaves a torn checkpoint.
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) {
            throw DataError("cannot open " + tmp.string() + " for writing");
        }
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!f) {
            throw DataError("failed writing " + tmp.string());
        }
    }
    std::filesystem::rename(tmp, path);
}

template <class T = float>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw LoadError("cannot open checkpoint " + path.string());
    }
    const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return decode_checkpoint<T>(bytes, path.string());
}

/// Loads and checks the tensors against `expected`; ShapeError on mismatch.
template <class T = float>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path, const ModelSpec& expected) {
    auto ck = load_checkpoint<T>(path);
    check_against_spec(ck.params, expected);
    return ck;
}

} // namespace lcl
