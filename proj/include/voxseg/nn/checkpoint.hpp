#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "voxseg/nn/network.hpp"

// Versioned binary checkpoint: the serialized network config, the training
// position (epoch, step), and every parameter tensor keyed by its path, with
// optional SGD momentum buffers so a resumed run continues bit-for-bit.
// Payloads are little-endian scalars in parameter-list order.

namespace voxseg::nn {

inline constexpr char kCheckpointMagic[8] = {'V', 'S', 'E', 'G', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
struct ParamBlob {
    std::string path;
    std::vector<std::size_t> shape;
    std::vector<T> data;
    std::vector<T> momentum;  // empty unless the checkpoint carries momentum
};

template <typename T>
struct Checkpoint {
    std::string config_text;    // flat key = value lines, parsed by the config module
    std::uint64_t epoch = 0;
    std::uint64_t step = 0;
    std::string sampler_state;  // serialized batch-sampler RNG; empty when absent
    bool has_momentum = false;
    std::vector<ParamBlob<T>> params;
};

namespace detail {

template <typename V>
void write_pod(std::ofstream& out, const V& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V read_pod(std::ifstream& in, const std::string& path) {
    V v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(V));
    if (!in) throw FormatError("checkpoint " + path + " truncated");
    return v;
}

inline std::string read_string(std::ifstream& in, std::uint64_t len, const std::string& path) {
    if (len > (1ull << 30)) throw FormatError("checkpoint " + path + " has absurd string length");
    std::string s(len, '\0');
    in.read(s.data(), static_cast<std::streamsize>(len));
    if (!in) throw FormatError("checkpoint " + path + " truncated");
    return s;
}

}  // namespace detail

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Checkpoint<T>& ckpt) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    detail::write_pod(out, kCheckpointVersion);
    detail::write_pod(out, static_cast<std::uint32_t>(sizeof(T)));
    detail::write_pod(out, static_cast<std::uint64_t>(ckpt.config_text.size()));
    out.write(ckpt.config_text.data(), static_cast<std::streamsize>(ckpt.config_text.size()));
    detail::write_pod(out, ckpt.epoch);
    detail::write_pod(out, ckpt.step);
    detail::write_pod(out, static_cast<std::uint64_t>(ckpt.sampler_state.size()));
    out.write(ckpt.sampler_state.data(),
              static_cast<std::streamsize>(ckpt.sampler_state.size()));
    detail::write_pod(out, static_cast<std::uint8_t>(ckpt.has_momentum ? 1 : 0));
    detail::write_pod(out, static_cast<std::uint64_t>(ckpt.params.size()));
    for (const auto& p : ckpt.params) {
        detail::write_pod(out, static_cast<std::uint64_t>(p.path.size()));
        out.write(p.path.data(), static_cast<std::streamsize>(p.path.size()));
        detail::write_pod(out, static_cast<std::uint32_t>(p.shape.size()));
        for (std::size_t d : p.shape) detail::write_pod(out, static_cast<std::uint64_t>(d));
        out.write(reinterpret_cast<const char*>(p.data.data()),
                  static_cast<std::streamsize>(p.data.size() * sizeof(T)));
        if (ckpt.has_momentum) {
            if (p.momentum.size() != p.data.size())
                throw ValidationError("checkpoint: momentum size mismatch on " + p.path);
            out.write(reinterpret_cast<const char*>(p.momentum.data()),
                      static_cast<std::streamsize>(p.momentum.size() * sizeof(T)));
        }
    }
    if (!out) throw IoError("write failure on checkpoint " + path.string());
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
        throw FormatError(path.string() + " is not a checkpoint file (bad magic)");
    const auto version = detail::read_pod<std::uint32_t>(in, path.string());
    if (version != kCheckpointVersion)
        throw FormatError("checkpoint " + path.string() + " has version " +
                          std::to_string(version) + ", expected " +
                          std::to_string(kCheckpointVersion));
    const auto dtype_size = detail::read_pod<std::uint32_t>(in, path.string());
    if (dtype_size != sizeof(T))
        throw FormatError("checkpoint " + path.string() + " stores " +
                          std::to_string(dtype_size) + "-byte scalars, expected " +
                          std::to_string(sizeof(T)));

    Checkpoint<T> ckpt;
    const auto cfg_len = detail::read_pod<std::uint64_t>(in, path.string());
    ckpt.config_text = detail::read_string(in, cfg_len, path.string());
    ckpt.epoch = detail::read_pod<std::uint64_t>(in, path.string());
    ckpt.step = detail::read_pod<std::uint64_t>(in, path.string());
    const auto sampler_len = detail::read_pod<std::uint64_t>(in, path.string());
    ckpt.sampler_state = detail::read_string(in, sampler_len, path.string());
    ckpt.has_momentum = detail::read_pod<std::uint8_t>(in, path.string()) != 0;
    const auto n = detail::read_pod<std::uint64_t>(in, path.string());
    ckpt.params.reserve(n);
    for (std::uint64_t i = 0; i < n; ++i) {
        ParamBlob<T> p;
        const auto path_len = detail::read_pod<std::uint64_t>(in, path.string());
        p.path = detail::read_string(in, path_len, path.string());
        const auto rank = detail::read_pod<std::uint32_t>(in, path.string());
        if (rank > 8) throw FormatError("checkpoint " + path.string() + " has absurd rank");
        std::size_t numel = 1;
        for (std::uint32_t r = 0; r < rank; ++r) {
            const auto d = detail::read_pod<std::uint64_t>(in, path.string());
            p.shape.push_back(static_cast<std::size_t>(d));
            numel *= static_cast<std::size_t>(d);
        }
        p.data.resize(numel);
        in.read(reinterpret_cast<char*>(p.data.data()),
                static_cast<std::streamsize>(numel * sizeof(T)));
        if (!in) throw FormatError("checkpoint " + path.string() + " truncated");
        if (ckpt.has_momentum) {
            p.momentum.resize(numel);
            in.read(reinterpret_cast<char*>(p.momentum.data()),
                    static_cast<std::streamsize>(numel * sizeof(T)));
            if (!in) throw FormatError("checkpoint " + path.string() + " truncated");
        }
        ckpt.params.push_back(std::move(p));
    }
    return ckpt;
}

// Snapshot a network's parameters (and optionally the optimizer's momentum
// buffers, passed in parameter-list order).
template <typename T>
Checkpoint<T> checkpoint_from_network(DilatedAttentionNet<T>& net, const std::string& config_text,
                                      std::uint64_t epoch, std::uint64_t step,
                                      const std::vector<std::vector<T>>* momentum = nullptr) {
    Checkpoint<T> ckpt;
    ckpt.config_text = config_text;
    ckpt.epoch = epoch;
    ckpt.step = step;
    ckpt.has_momentum = momentum != nullptr;
    auto params = net.parameters();
    if (momentum && momentum->size() != params.size())
        throw ValidationError("checkpoint: momentum buffer count " +
                              std::to_string(momentum->size()) + " != parameter count " +
                              std::to_string(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        ParamBlob<T> p;
        p.path = params[i].path;
        p.shape = params[i].value->shape();
        p.data.assign(params[i].value->data(),
                      params[i].value->data() + params[i].value->numel());
        if (momentum) p.momentum = (*momentum)[i];
        ckpt.params.push_back(std::move(p));
    }
    return ckpt;
}

// Copy checkpointed parameters into a constructed network, validating the key
// set and every shape. When `momentum_out` is given and the checkpoint
// carries momentum, the buffers are returned in parameter-list order.
template <typename T>
void load_checkpoint_into(DilatedAttentionNet<T>& net, const Checkpoint<T>& ckpt,
                          std::vector<std::vector<T>>* momentum_out = nullptr) {
    auto params = net.parameters();
    if (params.size() != ckpt.params.size())
        throw ValidationError("checkpoint has " + std::to_string(ckpt.params.size()) +
                              " parameters, network expects " + std::to_string(params.size()));
    if (momentum_out) momentum_out->clear();
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& blob = ckpt.params[i];
        if (blob.path != params[i].path)
            throw ValidationError("checkpoint parameter '" + blob.path +
                                  "' does not match network parameter '" + params[i].path + "'");
        if (blob.shape != params[i].value->shape())
            throw ValidationError("checkpoint parameter '" + blob.path + "' has wrong shape");
        std::copy(blob.data.begin(), blob.data.end(), params[i].value->data());
        if (momentum_out) {
            if (ckpt.has_momentum)
                momentum_out->push_back(blob.momentum);
            else
                momentum_out->emplace_back(blob.data.size(), T(0));
        }
    }
}

}  // namespace voxseg::nn
