#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "hazeforge/mappers.hpp"
#include "hazeforge/nn/adam.hpp"

namespace hazeforge {

// Checkpoint archive: magic "HFCK", u32 version, u64 JSON-header length, the
// JSON header (config echo, toggles, epoch, training seed, named tensor
// index, optimizer index), then all float64 data little-endian in index
// order: weights first, then per optimizer entry its two moment buffers.
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32_le(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i)
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_u64_le(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i)
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_f64_le(std::string& out, double d) {
    put_u64_le(out, std::bit_cast<std::uint64_t>(d));
}

inline std::uint32_t get_u32_le(const unsigned char* p) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
        v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return v;
}

inline std::uint64_t get_u64_le(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
        v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

inline double get_f64_le(const unsigned char* p) {
    return std::bit_cast<double>(get_u64_le(p));
}

inline std::string read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (!in.good() && !in.eof())
        throw IoError("failed reading " + path);
    return bytes;
}

inline void write_file_atomic(const std::string& path, const std::string& bytes) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out)
            throw IoError("cannot open " + tmp + " for writing");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out.good())
            throw IoError("failed writing " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

inline std::string fnv1a_hex(const std::string& bytes) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[i] = digits[h & 0xF];
        h >>= 4;
    }
    return out;
}

} // namespace detail

struct OptimizerState {
    std::uint64_t step = 0;
    // parameter name -> (first moment, second moment)
    std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> moments;
};

inline std::string serialize_checkpoint(const AugmenterModel& model, const nn::Adam* optimizer,
                                        int epoch, std::uint64_t train_seed, double last_loss) {
    const auto params = model.parameters();

    nlohmann::json header;
    header["config"] = {{"base_channels", model.config().base_channels},
                        {"depth_levels", model.config().depth_levels},
                        {"variant", model.config().variant},
                        {"seed", model.config().seed}};
    header["toggles"] = {{"use_dhr", model.toggles().use_dhr}, {"use_drm", model.toggles().use_drm}};
    header["epoch"] = epoch;
    header["train_seed"] = train_seed;
    header["last_loss"] = last_loss;

    nlohmann::json tensors = nlohmann::json::array();
    for (const auto& p : params)
        tensors.push_back({{"name", p.name}, {"count", p.node->value.numel()}});
    header["tensors"] = std::move(tensors);

    if (optimizer) {
        nlohmann::json moments = nlohmann::json::array();
        for (std::size_t i = 0; i < optimizer->params().size(); ++i)
            moments.push_back({{"name", optimizer->params()[i].name},
                               {"count", optimizer->first_moments()[i].size()}});
        header["optimizer"] = {{"step", optimizer->step_count()}, {"moments", std::move(moments)}};
    } else {
        header["optimizer"] = nullptr;
    }

    const std::string header_text = header.dump(2);

    std::string bytes;
    bytes += "HFCK";
    detail::put_u32_le(bytes, kCheckpointVersion);
    detail::put_u64_le(bytes, header_text.size());
    bytes += header_text;
    for (const auto& p : params)
        for (double v : p.node->value.values())
            detail::put_f64_le(bytes, v);
    if (optimizer) {
        for (std::size_t i = 0; i < optimizer->params().size(); ++i) {
            for (double v : optimizer->first_moments()[i])
                detail::put_f64_le(bytes, v);
            for (double v : optimizer->second_moments()[i])
                detail::put_f64_le(bytes, v);
        }
    }
    return bytes;
}

inline void save_checkpoint(const std::string& path, const AugmenterModel& model,
                            const nn::Adam* optimizer, int epoch, std::uint64_t train_seed,
                            double last_loss) {
    detail::write_file_atomic(path, serialize_checkpoint(model, optimizer, epoch, train_seed, last_loss));
}

struct LoadedCheckpoint {
    std::shared_ptr<AugmenterModel> model;
    int epoch = 0;
    std::uint64_t train_seed = 0;
    double last_loss = 0.0;
    bool has_optimizer = false;
    OptimizerState optimizer;
    std::string id; // content hash of the file
};

inline LoadedCheckpoint load_checkpoint(const std::string& path, bool trainable) {
    const std::string bytes = detail::read_file_bytes(path);
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    if (bytes.size() < 16 || bytes.compare(0, 4, "HFCK") != 0)
        throw IoError(path + ": not a checkpoint file");
    const std::uint32_t version = detail::get_u32_le(p + 4);
    if (version != kCheckpointVersion)
        throw IoError(path + ": unsupported checkpoint version " + std::to_string(version));
    const std::uint64_t header_len = detail::get_u64_le(p + 8);
    if (bytes.size() < 16 + header_len)
        throw IoError(path + ": truncated checkpoint header");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.substr(16, header_len));
    } catch (const nlohmann::json::exception& e) {
        throw IoError(path + ": bad checkpoint header: " + e.what());
    }

    MapperConfig cfg;
    cfg.base_channels = header.at("config").at("base_channels").get<int>();
    cfg.depth_levels = header.at("config").at("depth_levels").get<int>();
    cfg.variant = header.at("config").at("variant").get<std::string>();
    cfg.seed = header.at("config").at("seed").get<std::uint64_t>();
    ModelToggles toggles;
    toggles.use_dhr = header.at("toggles").at("use_dhr").get<bool>();
    toggles.use_drm = header.at("toggles").at("use_drm").get<bool>();

    LoadedCheckpoint out;
    out.model = std::make_shared<AugmenterModel>(cfg, toggles, trainable);
    out.epoch = header.at("epoch").get<int>();
    out.train_seed = header.at("train_seed").get<std::uint64_t>();
    out.last_loss = header.at("last_loss").get<double>();
    out.id = detail::fnv1a_hex(bytes);

    std::size_t offset = 16 + header_len;
    auto take = [&](std::size_t count) {
        const std::size_t need = count * 8;
        if (bytes.size() < offset + need)
            throw IoError(path + ": truncated checkpoint data");
        std::vector<double> vals(count);
        for (std::size_t i = 0; i < count; ++i)
            vals[i] = detail::get_f64_le(p + offset + i * 8);
        offset += need;
        return vals;
    };

    auto params = out.model->parameters();
    const auto& tensors = header.at("tensors");
    if (tensors.size() != params.size())
        throw IoError(path + ": checkpoint lists " + std::to_string(tensors.size()) +
                      " tensors, model has " + std::to_string(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const std::string name = tensors[i].at("name").get<std::string>();
        const std::size_t count = tensors[i].at("count").get<std::size_t>();
        if (name != params[i].name || count != params[i].node->value.numel())
            throw IoError(path + ": tensor \"" + name + "\" does not match model parameter \"" +
                          params[i].name + "\"");
        params[i].node->value.values() = take(count);
    }

    if (!header.at("optimizer").is_null()) {
        out.has_optimizer = true;
        out.optimizer.step = header.at("optimizer").at("step").get<std::uint64_t>();
        for (const auto& m : header.at("optimizer").at("moments")) {
            const std::string name = m.at("name").get<std::string>();
            const std::size_t count = m.at("count").get<std::size_t>();
            auto first = take(count);
            auto second = take(count);
            out.optimizer.moments[name] = {std::move(first), std::move(second)};
        }
    }
    if (offset != bytes.size())
        throw IoError(path + ": trailing bytes in checkpoint");
    return out;
}

// Restores Adam moments by parameter name; every optimizer parameter must be
// present in the saved state.
inline void restore_optimizer(nn::Adam& optimizer, const OptimizerState& state) {
    optimizer.set_step_count(state.step);
    for (std::size_t i = 0; i < optimizer.params().size(); ++i) {
        const auto& name = optimizer.params()[i].name;
        auto it = state.moments.find(name);
        if (it == state.moments.end())
            throw IoError("optimizer state missing parameter \"" + name + "\"");
        if (it->second.first.size() != optimizer.first_moments()[i].size())
            throw IoError("optimizer state size mismatch for \"" + name + "\"");
        optimizer.first_moments()[i] = it->second.first;
        optimizer.second_moments()[i] = it->second.second;
    }
}

inline std::string checkpoint_id(const std::string& path) {
    return detail::fnv1a_hex(detail::read_file_bytes(path));
}

} // namespace hazeforge
