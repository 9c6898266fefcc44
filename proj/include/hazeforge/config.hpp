#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "hazeforge/core.hpp"
#include "hazeforge/mappers.hpp"
#include "hazeforge/resampler.hpp"
#include "hazeforge/training.hpp"

namespace hazeforge {

// Flat INI-style configuration: [section] headers, key = value lines,
// '#' or ';' comments. Keys are addressed as "section.key".
class ConfigFile {
  public:
    ConfigFile() = default;

    static ConfigFile parse_file(const std::string& path) {
        std::ifstream in(path);
        if (!in)
            throw IoError("cannot open config " + path);
        std::stringstream buf;
        buf << in.rdbuf();
        return parse(buf.str(), path);
    }

    static ConfigFile parse(const std::string& text, const std::string& origin = "<string>") {
        ConfigFile cfg;
        std::istringstream in(text);
        std::string line, section;
        int line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            const std::string t = trim(strip_comment(line));
            if (t.empty())
                continue;
            if (t.front() == '[') {
                if (t.back() != ']')
                    throw UsageError(origin + ":" + std::to_string(line_no) + ": unterminated section");
                section = trim(t.substr(1, t.size() - 2));
                continue;
            }
            const auto eq = t.find('=');
            if (eq == std::string::npos)
                throw UsageError(origin + ":" + std::to_string(line_no) + ": expected key = value");
            const std::string key = trim(t.substr(0, eq));
            if (key.empty())
                throw UsageError(origin + ":" + std::to_string(line_no) + ": empty key");
            cfg.values_[section.empty() ? key : section + "." + key] = trim(t.substr(eq + 1));
        }
        return cfg;
    }

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string get_string(const std::string& key, const std::string& fallback) const {
        auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }

    double get_double(const std::string& key, double fallback) const {
        auto it = values_.find(key);
        if (it == values_.end())
            return fallback;
        try {
            std::size_t used = 0;
            const double v = std::stod(it->second, &used);
            if (used != it->second.size())
                throw std::invalid_argument("trailing characters");
            return v;
        } catch (const std::exception&) {
            throw UsageError("config key " + key + ": \"" + it->second + "\" is not a number");
        }
    }

    int get_int(const std::string& key, int fallback) const {
        auto it = values_.find(key);
        if (it == values_.end())
            return fallback;
        try {
            std::size_t used = 0;
            const int v = std::stoi(it->second, &used);
            if (used != it->second.size())
                throw std::invalid_argument("trailing characters");
            return v;
        } catch (const std::exception&) {
            throw UsageError("config key " + key + ": \"" + it->second + "\" is not an integer");
        }
    }

    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const {
        auto it = values_.find(key);
        if (it == values_.end())
            return fallback;
        try {
            std::size_t used = 0;
            const unsigned long long v = std::stoull(it->second, &used);
            if (used != it->second.size())
                throw std::invalid_argument("trailing characters");
            return v;
        } catch (const std::exception&) {
            throw UsageError("config key " + key + ": \"" + it->second + "\" is not an unsigned integer");
        }
    }

    bool get_bool(const std::string& key, bool fallback) const {
        auto it = values_.find(key);
        if (it == values_.end())
            return fallback;
        const std::string& v = it->second;
        if (v == "true" || v == "1" || v == "yes" || v == "on")
            return true;
        if (v == "false" || v == "0" || v == "no" || v == "off")
            return false;
        throw UsageError("config key " + key + ": \"" + v + "\" is not a boolean");
    }

  private:
    static std::string strip_comment(const std::string& s) {
        const auto pos = s.find_first_of("#;");
        return pos == std::string::npos ? s : s.substr(0, pos);
    }

    static std::string trim(const std::string& s) {
        const auto begin = s.find_first_not_of(" \t\r\n");
        if (begin == std::string::npos)
            return "";
        const auto end = s.find_last_not_of(" \t\r\n");
        return s.substr(begin, end - begin + 1);
    }

    std::map<std::string, std::string> values_;
};

// Everything the CLI needs, assembled from one config file. Every key has a
// default, so an empty file yields the toy setup.
struct PipelineConfig {
    MapperConfig mapper = MapperConfig::toy_defaults();
    ModelToggles toggles;
    TrainConfig train;
    DepthProviderConfig depth;
    SamplingPolicy policy;
};

inline PipelineConfig load_pipeline_config(const ConfigFile& cfg) {
    PipelineConfig out;

    const std::string variant = cfg.get_string("mapper.variant", "toy");
    if (variant == "toy")
        out.mapper = MapperConfig::toy_defaults();
    else if (variant == "paper")
        out.mapper = MapperConfig::paper_defaults();
    else
        throw UsageError("config key mapper.variant: \"" + variant + "\" is not toy or paper");
    out.mapper.base_channels = cfg.get_int("mapper.base_channels", out.mapper.base_channels);
    out.mapper.depth_levels = cfg.get_int("mapper.depth_levels", out.mapper.depth_levels);
    out.mapper.seed = cfg.get_u64("mapper.seed", out.mapper.seed);
    out.mapper.validate();

    out.toggles.use_dhr = cfg.get_bool("toggles.use_dhr", true);
    out.toggles.use_drm = cfg.get_bool("toggles.use_drm", true);

    out.train.lr_init = cfg.get_double("train.lr_init", out.train.lr_init);
    out.train.lr_final = cfg.get_double("train.lr_final", out.train.lr_final);
    out.train.epochs = cfg.get_int("train.epochs", out.train.epochs);
    out.train.batch_size = cfg.get_int("train.batch_size", out.train.batch_size);
    out.train.crop = cfg.get_int("train.crop", out.train.crop);
    out.train.lambda_perc = cfg.get_double("train.lambda_perc", out.train.lambda_perc);
    out.train.charbonnier_eps = cfg.get_double("train.charbonnier_eps", out.train.charbonnier_eps);
    out.train.seed = cfg.get_u64("train.seed", out.train.seed);
    out.train.validate(out.mapper.spatial_multiple());

    out.depth.kind = cfg.get_string("depth.kind", out.depth.kind);
    out.depth.source = cfg.get_string("depth.source", out.depth.source);

    out.policy.w_scale = cfg.get_double("policy.w_scale", out.policy.w_scale);
    out.policy.w_reverse = cfg.get_double("policy.w_reverse", out.policy.w_reverse);
    out.policy.w_interpolate = cfg.get_double("policy.w_interpolate", out.policy.w_interpolate);
    out.policy.w_compose = cfg.get_double("policy.w_compose", out.policy.w_compose);
    out.policy.alpha_range.lo = cfg.get_double("policy.alpha_lo", out.policy.alpha_range.lo);
    out.policy.alpha_range.hi = cfg.get_double("policy.alpha_hi", out.policy.alpha_range.hi);
    out.policy.gamma_range.lo = cfg.get_double("policy.gamma_lo", out.policy.gamma_range.lo);
    out.policy.gamma_range.hi = cfg.get_double("policy.gamma_hi", out.policy.gamma_range.hi);
    out.policy.eta_range.lo = cfg.get_double("policy.eta_lo", out.policy.eta_range.lo);
    out.policy.eta_range.hi = cfg.get_double("policy.eta_hi", out.policy.eta_range.hi);
    out.policy.fill_range.lo = cfg.get_double("policy.fill_lo", out.policy.fill_range.lo);
    out.policy.fill_range.hi = cfg.get_double("policy.fill_hi", out.policy.fill_range.hi);
    out.policy.haze_free_threshold =
        cfg.get_double("policy.haze_free_threshold", out.policy.haze_free_threshold);
    out.policy.validate();

    return out;
}

inline PipelineConfig load_pipeline_config_file(const std::string& path) {
    return load_pipeline_config(ConfigFile::parse_file(path));
}

} // namespace hazeforge
