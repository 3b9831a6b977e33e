#pragma once

#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "voxseg/nn/network.hpp"
#include "voxseg/schedule.hpp"

// Flat `key = value` configuration files. Keys match the NetworkConfig /
// TrainConfig field names; '#' starts a comment; CLI flags override file
// values by rewriting entries before parsing.

namespace voxseg {

using ConfigMap = std::map<std::string, std::string>;

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline int cfg_int(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const int r = std::stoi(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError("config: key '" + key + "' expects an integer, got '" + v + "'");
    }
}

inline double cfg_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double r = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError("config: key '" + key + "' expects a number, got '" + v + "'");
    }
}

inline std::uint64_t cfg_u64(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const unsigned long long r = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return static_cast<std::uint64_t>(r);
    } catch (const std::exception&) {
        throw ConfigError("config: key '" + key + "' expects a nonnegative integer, got '" + v +
                          "'");
    }
}

inline bool cfg_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config: key '" + key + "' expects true/false, got '" + v + "'");
}

inline std::vector<int> cfg_int_list(const std::string& key, const std::string& v) {
    std::vector<int> out;
    std::string item;
    std::istringstream in(v);
    while (std::getline(in, item, ',')) {
        item = trim(item);
        if (item.empty())
            throw ConfigError("config: key '" + key + "' has an empty list entry");
        out.push_back(cfg_int(key, item));
    }
    if (out.empty()) throw ConfigError("config: key '" + key + "' expects a list");
    return out;
}

inline std::string join_ints(const std::vector<int>& xs) {
    std::string s;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(xs[i]);
    }
    return s;
}

}  // namespace detail

inline ConfigMap parse_config_text(const std::string& text) {
    ConfigMap map;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config: line " + std::to_string(line_no) +
                              " is not 'key = value': '" + line + "'");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string val = detail::trim(line.substr(eq + 1));
        if (key.empty())
            throw ConfigError("config: line " + std::to_string(line_no) + " has an empty key");
        map[key] = val;
    }
    return map;
}

struct RunConfig {
    nn::NetworkConfig net;
    TrainConfig train;
};

// Applies recognized keys onto the defaults; unknown keys are an error so
// typos fail loudly.
inline RunConfig parse_run_config(const ConfigMap& map) {
    RunConfig rc;
    for (const auto& [key, v] : map) {
        // network
        if (key == "in_channels") rc.net.in_channels = detail::cfg_int(key, v);
        else if (key == "num_classes") rc.net.num_classes = detail::cfg_int(key, v);
        else if (key == "encoder_channels") {
            const auto xs = detail::cfg_int_list(key, v);
            if (xs.size() != 5)
                throw ConfigError("config: encoder_channels expects 5 entries, got " +
                                  std::to_string(xs.size()));
            for (int i = 0; i < 5; ++i) rc.net.encoder_channels[i] = xs[i];
        } else if (key == "sa_kernel") rc.net.sa_kernel = detail::cfg_int(key, v);
        else if (key == "atrous_rates") rc.net.atrous_rates = detail::cfg_int_list(key, v);
        else if (key == "ca_reduction") rc.net.ca_reduction = detail::cfg_int(key, v);
        else if (key == "leaky_slope") rc.net.leaky_slope = detail::cfg_double(key, v);
        else if (key == "gated_skips") rc.net.gated_skips = detail::cfg_bool(key, v);
        else if (key == "atrous_all_high") rc.net.atrous_all_high = detail::cfg_bool(key, v);
        // training
        else if (key == "batch_size") rc.train.batch_size = detail::cfg_int(key, v);
        else if (key == "patch_size") rc.train.patch_size = detail::cfg_int(key, v);
        else if (key == "base_lr") rc.train.base_lr = detail::cfg_double(key, v);
        else if (key == "lr_decay_factor") rc.train.lr_decay_factor = detail::cfg_double(key, v);
        else if (key == "decay_every") rc.train.decay_every = detail::cfg_int(key, v);
        else if (key == "period_length") rc.train.period_length = detail::cfg_int(key, v);
        else if (key == "num_periods") rc.train.num_periods = detail::cfg_int(key, v);
        else if (key == "momentum") rc.train.momentum = detail::cfg_double(key, v);
        else if (key == "weight_decay") rc.train.weight_decay = detail::cfg_double(key, v);
        else if (key == "lambda_dice") rc.train.lambda_dice = detail::cfg_double(key, v);
        else if (key == "seed") rc.train.seed = detail::cfg_u64(key, v);
        else if (key == "steps_per_epoch") rc.train.steps_per_epoch = detail::cfg_int(key, v);
        else if (key == "loss_mode") {
            if (v == "combined") rc.train.loss_mode = LossMode::combined;
            else if (v == "dice") rc.train.loss_mode = LossMode::dice_only;
            else throw ConfigError("config: loss_mode expects 'combined' or 'dice', got '" + v +
                                   "'");
        } else if (key == "checkpoint_every") rc.train.checkpoint_every = detail::cfg_int(key, v);
        else if (key == "foreground_bias") rc.train.foreground_bias = detail::cfg_bool(key, v);
        else if (key == "normalize") rc.train.normalize = detail::cfg_bool(key, v);
        else throw ConfigError("config: unknown key '" + key + "'");
    }
    rc.net.validate();
    rc.train.validate();
    return rc;
}

inline RunConfig parse_run_config(const std::string& text) {
    return parse_run_config(parse_config_text(text));
}

inline std::string serialize_run_config(const RunConfig& rc) {
    std::ostringstream out;
    out << "in_channels = " << rc.net.in_channels << "\n";
    out << "num_classes = " << rc.net.num_classes << "\n";
    out << "encoder_channels = "
        << detail::join_ints({rc.net.encoder_channels.begin(), rc.net.encoder_channels.end()})
        << "\n";
    out << "sa_kernel = " << rc.net.sa_kernel << "\n";
    out << "atrous_rates = " << detail::join_ints(rc.net.atrous_rates) << "\n";
    out << "ca_reduction = " << rc.net.ca_reduction << "\n";
    out << "leaky_slope = " << rc.net.leaky_slope << "\n";
    out << "gated_skips = " << (rc.net.gated_skips ? "true" : "false") << "\n";
    out << "atrous_all_high = " << (rc.net.atrous_all_high ? "true" : "false") << "\n";
    out << "batch_size = " << rc.train.batch_size << "\n";
    out << "patch_size = " << rc.train.patch_size << "\n";
    out << "base_lr = " << rc.train.base_lr << "\n";
    out << "lr_decay_factor = " << rc.train.lr_decay_factor << "\n";
    out << "decay_every = " << rc.train.decay_every << "\n";
    out << "period_length = " << rc.train.period_length << "\n";
    out << "num_periods = " << rc.train.num_periods << "\n";
    out << "momentum = " << rc.train.momentum << "\n";
    out << "weight_decay = " << rc.train.weight_decay << "\n";
    out << "lambda_dice = " << rc.train.lambda_dice << "\n";
    out << "seed = " << rc.train.seed << "\n";
    out << "steps_per_epoch = " << rc.train.steps_per_epoch << "\n";
    out << "loss_mode = " << loss_mode_name(rc.train.loss_mode) << "\n";
    out << "checkpoint_every = " << rc.train.checkpoint_every << "\n";
    out << "foreground_bias = " << (rc.train.foreground_bias ? "true" : "false") << "\n";
    out << "normalize = " << (rc.train.normalize ? "true" : "false") << "\n";
    return out.str();
}

}  // namespace voxseg
