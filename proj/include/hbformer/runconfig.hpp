#pragma once

// Run configuration: UTF-8 `key = value` lines, blank lines and full-line
// `#` comments allowed. Unknown or duplicate keys are rejected with the
// offending line number. List values are comma-separated.

#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include "hbformer/encoder.hpp"
#include "hbformer/errors.hpp"
#include "hbformer/training.hpp"

namespace hbf {

struct RunConfig {
    std::string task;  // train | eval | gradcheck | synth; empty adopts the command
    int img_size = 64;
    int patch_size = 4;
    int in_channels = 3;
    std::array<int, 4> widths{96, 192, 384, 768};
    std::array<int, 4> depths{2, 2, 6, 2};
    std::array<int, 4> heads{3, 6, 12, 24};
    int window_size = 4;
    int effn_ratio = 4;
    int num_classes = 2;
    std::vector<int> dspp_rates{1, 6, 12, 18};
    std::string decoder = "mff";      // mff | plain
    std::string encoder_ffn = "effn";  // effn | ffn
    std::vector<std::uint64_t> seeds{3407, 8261, 10993};
    double lr = 1e-2;
    double lr_min = 6e-6;
    double momentum = 0.98;
    double weight_decay = 1e-6;
    int batch_size = 4;
    long total_steps = 200;
    std::string data_dir;
    std::string out_dir = ".";
    int synth_count = 100;
    int synth_min_tumors = 0;

    ModelConfig to_model_config() const {
        ModelConfig mc;
        mc.img_size = img_size;
        mc.patch_size = patch_size;
        mc.in_channels = in_channels;
        mc.stage_widths = widths;
        mc.stage_depths = depths;
        mc.heads_per_stage = heads;
        mc.window_size = window_size;
        mc.effn_ratio = effn_ratio;
        mc.num_classes = num_classes;
        mc.dspp_rates = dspp_rates;
        mc.use_effn = (encoder_ffn == "effn");
        mc.use_mff_decoder = (decoder == "mff");
        mc.validate();
        return mc;
    }

    TrainOptions to_train_options() const {
        TrainOptions opt;
        opt.batch_size = batch_size;
        opt.total_steps = total_steps;
        opt.sched = {lr, lr_min, total_steps};
        opt.momentum = momentum;
        opt.weight_decay = weight_decay;
        return opt;
    }

    SynthParams to_synth_params(std::uint64_t seed) const {
        SynthParams sp;
        sp.count = synth_count;
        sp.size = img_size;
        sp.seed = seed;
        sp.num_classes = num_classes == 2 ? 2 : 3;
        sp.min_tumors = synth_min_tumors;
        return sp;
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream ss(s);
    while (std::getline(ss, cur, ',')) out.push_back(trim(cur));
    return out;
}

// Shortest natural form: 0.98 -> "0.98", 6e-06 -> "6e-6".
inline std::string fmt_double(double v) {
    std::ostringstream ss;
    ss << std::setprecision(12) << v;
    std::string s = ss.str();
    const size_t e = s.find('e');
    if (e != std::string::npos) {
        size_t i = e + 1;
        std::string sign;
        if (i < s.size() && (s[i] == '+' || s[i] == '-')) {
            if (s[i] == '-') sign = "-";
            ++i;
        }
        while (i + 1 < s.size() && s[i] == '0') ++i;
        s = s.substr(0, e + 1) + sign + s.substr(i);
    }
    return s;
}

}  // namespace detail

// Parses one config file. Every error names the line it came from.
inline RunConfig parse_run_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read config: " + path);

    RunConfig rc;
    std::set<std::string> assigned;
    std::string line;
    int line_no = 0;

    auto fail = [&](const std::string& why) {
        return ConfigError(path + ":" + std::to_string(line_no) + ": " + why);
    };
    auto to_long = [&](const std::string& v, const std::string& key) {
        try {
            size_t pos = 0;
            const long x = std::stol(v, &pos);
            if (pos != v.size()) throw std::invalid_argument(v);
            return x;
        } catch (const std::exception&) {
            throw fail("key '" + key + "' needs an integer, got '" + v + "'");
        }
    };
    auto to_double = [&](const std::string& v, const std::string& key) {
        try {
            size_t pos = 0;
            const double x = std::stod(v, &pos);
            if (pos != v.size()) throw std::invalid_argument(v);
            return x;
        } catch (const std::exception&) {
            throw fail("key '" + key + "' needs a number, got '" + v + "'");
        }
    };
    auto to_int4 = [&](const std::string& v, const std::string& key) {
        const auto parts = detail::split_list(v);
        if (parts.size() != 4) throw fail("key '" + key + "' needs 4 comma-separated integers");
        std::array<int, 4> out{};
        for (int i = 0; i < 4; ++i) out[i] = static_cast<int>(to_long(parts[i], key));
        return out;
    };

    while (std::getline(f, line)) {
        ++line_no;
        const std::string s = detail::trim(line);
        if (s.empty() || s[0] == '#') continue;
        const size_t eq = s.find('=');
        if (eq == std::string::npos) throw fail("expected 'key = value', got '" + s + "'");
        const std::string key = detail::trim(s.substr(0, eq));
        const std::string val = detail::trim(s.substr(eq + 1));
        if (key.empty()) throw fail("empty key");
        if (!assigned.insert(key).second) throw fail("duplicate key '" + key + "'");

        if (key == "task") {
            if (val != "train" && val != "eval" && val != "gradcheck" && val != "synth")
                throw fail("task must be train, eval, gradcheck or synth, got '" + val + "'");
            rc.task = val;
        } else if (key == "img_size") {
            rc.img_size = static_cast<int>(to_long(val, key));
        } else if (key == "patch_size") {
            rc.patch_size = static_cast<int>(to_long(val, key));
        } else if (key == "in_channels") {
            rc.in_channels = static_cast<int>(to_long(val, key));
        } else if (key == "widths") {
            rc.widths = to_int4(val, key);
        } else if (key == "depths") {
            rc.depths = to_int4(val, key);
        } else if (key == "heads") {
            rc.heads = to_int4(val, key);
        } else if (key == "window_size") {
            rc.window_size = static_cast<int>(to_long(val, key));
        } else if (key == "effn_ratio") {
            rc.effn_ratio = static_cast<int>(to_long(val, key));
        } else if (key == "num_classes") {
            rc.num_classes = static_cast<int>(to_long(val, key));
        } else if (key == "dspp_rates") {
            const auto r = to_int4(val, key);
            rc.dspp_rates.assign(r.begin(), r.end());
        } else if (key == "decoder") {
            if (val != "mff" && val != "plain")
                throw fail("decoder must be mff or plain, got '" + val + "'");
            rc.decoder = val;
        } else if (key == "encoder_ffn") {
            if (val != "effn" && val != "ffn")
                throw fail("encoder_ffn must be effn or ffn, got '" + val + "'");
            rc.encoder_ffn = val;
        } else if (key == "seeds") {
            const auto parts = detail::split_list(val);
            if (parts.empty()) throw fail("key 'seeds' needs at least one seed");
            rc.seeds.clear();
            for (const auto& p : parts)
                rc.seeds.push_back(static_cast<std::uint64_t>(to_long(p, key)));
        } else if (key == "lr") {
            rc.lr = to_double(val, key);
        } else if (key == "lr_min") {
            rc.lr_min = to_double(val, key);
        } else if (key == "momentum") {
            rc.momentum = to_double(val, key);
        } else if (key == "weight_decay") {
            rc.weight_decay = to_double(val, key);
        } else if (key == "batch_size") {
            rc.batch_size = static_cast<int>(to_long(val, key));
        } else if (key == "total_steps") {
            rc.total_steps = to_long(val, key);
        } else if (key == "data_dir") {
            rc.data_dir = val;
        } else if (key == "out_dir") {
            rc.out_dir = val;
        } else if (key == "synth_count") {
            rc.synth_count = static_cast<int>(to_long(val, key));
        } else if (key == "synth_min_tumors") {
            rc.synth_min_tumors = static_cast<int>(to_long(val, key));
        } else {
            throw fail("unknown key '" + key + "'");
        }
    }
    if (rc.batch_size < 1) throw ConfigError(path + ": batch_size must be positive");
    if (rc.total_steps < 1) throw ConfigError(path + ": total_steps must be positive");
    if (rc.lr <= 0 || rc.lr_min <= 0 || rc.lr_min > rc.lr)
        throw ConfigError(path + ": need lr >= lr_min > 0");
    if (rc.synth_count < 1) throw ConfigError(path + ": synth_count must be positive");
    if (rc.synth_min_tumors < 0) throw ConfigError(path + ": synth_min_tumors must be >= 0");
    try {
        rc.to_model_config();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return rc;
}

// Deterministic echo of every effective key, parseable as a config file.
inline std::string print_run_config(const RunConfig& rc) {
    auto join_int = [](const auto& xs) {
        std::string s;
        for (size_t i = 0; i < xs.size(); ++i)
            s += (i ? "," : "") + std::to_string(xs[i]);
        return s;
    };
    std::ostringstream out;
    out << "task = " << rc.task << "\n";
    out << "img_size = " << rc.img_size << "\n";
    out << "patch_size = " << rc.patch_size << "\n";
    out << "in_channels = " << rc.in_channels << "\n";
    out << "widths = " << join_int(rc.widths) << "\n";
    out << "depths = " << join_int(rc.depths) << "\n";
    out << "heads = " << join_int(rc.heads) << "\n";
    out << "window_size = " << rc.window_size << "\n";
    out << "effn_ratio = " << rc.effn_ratio << "\n";
    out << "num_classes = " << rc.num_classes << "\n";
    out << "dspp_rates = " << join_int(rc.dspp_rates) << "\n";
    out << "decoder = " << rc.decoder << "\n";
    out << "encoder_ffn = " << rc.encoder_ffn << "\n";
    out << "seeds = " << join_int(rc.seeds) << "\n";
    out << "lr = " << detail::fmt_double(rc.lr) << "\n";
    out << "lr_min = " << detail::fmt_double(rc.lr_min) << "\n";
    out << "momentum = " << detail::fmt_double(rc.momentum) << "\n";
    out << "weight_decay = " << detail::fmt_double(rc.weight_decay) << "\n";
    out << "batch_size = " << rc.batch_size << "\n";
    out << "total_steps = " << rc.total_steps << "\n";
    out << "data_dir = " << rc.data_dir << "\n";
    out << "out_dir = " << rc.out_dir << "\n";
    out << "synth_count = " << rc.synth_count << "\n";
    out << "synth_min_tumors = " << rc.synth_min_tumors << "\n";
    return out.str();
}

}  // namespace hbf
