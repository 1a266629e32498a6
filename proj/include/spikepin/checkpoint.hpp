#pragma once

// Versioned binary model container:
//   "SPKPCKPT" | u32 version | u64 header length | JSON header | payload
// The payload holds each layer's weights as out x in row-major little-endian
// float32, followed by its bias when enabled. The header records the network
// configuration, free-form metadata and the SHA-256 of the payload.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "spikepin/errors.hpp"
#include "spikepin/hash.hpp"
#include "spikepin/image_io.hpp"
#include "spikepin/lif.hpp"

namespace spikepin {

inline constexpr char kCheckpointMagic[8] = {'S', 'P', 'K', 'P', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

inline nlohmann::ordered_json network_config_to_json(const NetworkConfig& c) {
    nlohmann::ordered_json j;
    j["layer_sizes"] = c.layer_sizes;
    j["beta"] = c.beta;
    j["threshold"] = c.threshold;
    j["reset"] = to_string(c.reset);
    j["use_bias"] = c.use_bias;
    j["n_steps"] = c.n_steps;
    return j;
}

inline NetworkConfig network_config_from_json(const nlohmann::json& j) {
    NetworkConfig c;
    c.layer_sizes = j.at("layer_sizes").get<std::vector<int>>();
    c.beta = j.at("beta").get<double>();
    c.threshold = j.at("threshold").get<double>();
    c.reset = reset_mode_from_string(j.at("reset").get<std::string>());
    c.use_bias = j.at("use_bias").get<bool>();
    c.n_steps = j.at("n_steps").get<int>();
    c.validate();
    return c;
}

struct Checkpoint {
    LifNetwork<float> network;
    nlohmann::ordered_json meta = nlohmann::ordered_json::object();
    std::string payload_sha256;
};

inline std::vector<std::uint8_t> encode_checkpoint(const LifNetwork<float>& net,
                                                   const nlohmann::ordered_json& meta = nlohmann::ordered_json::object()) {
    std::vector<std::uint8_t> payload;
    for (const auto& l : net.layers) {
        std::vector<float> rowmajor(static_cast<std::size_t>(l.out) * l.in);
        for (int k = 0; k < l.out; ++k)
            for (int j = 0; j < l.in; ++j) rowmajor[static_cast<std::size_t>(k) * l.in + j] = l.w(k, j);
        const auto* p = reinterpret_cast<const std::uint8_t*>(rowmajor.data());
        payload.insert(payload.end(), p, p + rowmajor.size() * sizeof(float));
        const auto* b = reinterpret_cast<const std::uint8_t*>(l.bias.data());
        payload.insert(payload.end(), b, b + l.bias.size() * sizeof(float));
    }

    nlohmann::ordered_json header;
    header["format"] = "spikepin-checkpoint";
    header["version"] = kCheckpointVersion;
    header["config"] = network_config_to_json(net.config);
    header["layers"] = nlohmann::ordered_json::array();
    for (const auto& l : net.layers) {
        header["layers"].push_back({{"in", l.in},
                                    {"out", l.out},
                                    {"beta", l.beta},
                                    {"threshold", l.threshold},
                                    {"reset", to_string(l.reset)},
                                    {"bias", !l.bias.empty()}});
    }
    header["payload_bytes"] = payload.size();
    header["payload_sha256"] = sha256_hex(payload.data(), payload.size());
    header["meta"] = meta;
    const std::string text = header.dump();

    std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + 8);
    auto put = [&out](const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        out.insert(out.end(), b, b + n);
    };
    const std::uint32_t version = kCheckpointVersion;
    const std::uint64_t hlen = text.size();
    put(&version, sizeof version);
    put(&hlen, sizeof hlen);
    put(text.data(), text.size());
    put(payload.data(), payload.size());
    return out;
}

inline Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 20 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0)
        throw InvalidInput("checkpoint: bad magic");
    std::uint32_t version = 0;
    std::uint64_t hlen = 0;
    std::memcpy(&version, bytes.data() + 8, sizeof version);
    std::memcpy(&hlen, bytes.data() + 12, sizeof hlen);
    if (version != kCheckpointVersion) throw InvalidInput("checkpoint: unsupported version " + std::to_string(version));
    if (hlen > bytes.size() - 20) throw InvalidInput("checkpoint: truncated header");
    const auto header = nlohmann::ordered_json::parse(bytes.begin() + 20, bytes.begin() + 20 + static_cast<std::ptrdiff_t>(hlen));
    const std::size_t off = 20 + hlen;
    const std::size_t payload_bytes = header.at("payload_bytes").get<std::size_t>();
    if (bytes.size() - off != payload_bytes) throw InvalidInput("checkpoint: payload size mismatch");
    const std::string sha = sha256_hex(bytes.data() + off, payload_bytes);
    if (sha != header.at("payload_sha256").get<std::string>()) throw InvalidInput("checkpoint: payload hash mismatch");

    Checkpoint ck;
    ck.payload_sha256 = sha;
    ck.meta = header.contains("meta") ? header.at("meta") : nlohmann::ordered_json::object();
    ck.network.config = network_config_from_json(header.at("config"));
    std::size_t pos = off;
    for (const auto& lj : header.at("layers")) {
        LifLayer<float> l;
        l.in = lj.at("in").get<int>();
        l.out = lj.at("out").get<int>();
        l.beta = lj.at("beta").get<float>();
        l.threshold = lj.at("threshold").get<float>();
        l.reset = reset_mode_from_string(lj.at("reset").get<std::string>());
        const std::size_t nw = static_cast<std::size_t>(l.in) * l.out;
        const std::size_t nb = lj.at("bias").get<bool>() ? static_cast<std::size_t>(l.out) : 0;
        if (pos + (nw + nb) * sizeof(float) > bytes.size()) throw InvalidInput("checkpoint: truncated payload");
        std::vector<float> rowmajor(nw);
        std::memcpy(rowmajor.data(), bytes.data() + pos, nw * sizeof(float));
        pos += nw * sizeof(float);
        l.weights.resize(nw);
        for (int k = 0; k < l.out; ++k)
            for (int j = 0; j < l.in; ++j) l.w(k, j) = rowmajor[static_cast<std::size_t>(k) * l.in + j];
        l.bias.resize(nb);
        std::memcpy(l.bias.data(), bytes.data() + pos, nb * sizeof(float));
        pos += nb * sizeof(float);
        ck.network.layers.push_back(std::move(l));
    }
    const auto& sizes = ck.network.config.layer_sizes;
    if (ck.network.layers.size() + 1 != sizes.size()) throw InvalidInput("checkpoint: layer count mismatch");
    for (std::size_t i = 0; i < ck.network.layers.size(); ++i)
        if (ck.network.layers[i].in != sizes[i] || ck.network.layers[i].out != sizes[i + 1])
            throw InvalidInput("checkpoint: layer shape mismatch");
    return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const LifNetwork<float>& net,
                            const nlohmann::ordered_json& meta = nlohmann::ordered_json::object()) {
    const auto bytes = encode_checkpoint(net, meta);
    io::write_bytes(path, bytes.data(), bytes.size());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(io::read_bytes(path)); }

}  // namespace spikepin
