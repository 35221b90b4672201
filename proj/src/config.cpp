#include "edpose/config.hpp"

#include "edpose/errors.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace edpose {
namespace {

std::string trim(const std::string& s) {
    auto begin = s.find_first_not_of(" \t\r");
    if (begin == std::string::npos) return "";
    auto end = s.find_last_not_of(" \t\r");
    return s.substr(begin, end - begin + 1);
}

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

using Setter = std::function<void(const std::string&)>;

struct KeyTable {
    std::map<std::string, std::map<std::string, Setter>> sections;

    void apply(const std::string& section, const std::string& key, const std::string& value) {
        auto sec = sections.find(section);
        if (sec == sections.end()) throw ConfigError("unknown config section [" + section + "]");
        auto entry = sec->second.find(key);
        if (entry == sec->second.end())
            throw ConfigError("unknown config key '" + key + "' in section [" + section + "]");
        entry->second(value);
    }
};

template <typename T, typename Parser>
Setter parse_with(T& slot, const std::string& full_name, Parser parse) {
    return [&slot, full_name, parse](const std::string& raw) {
        try {
            std::size_t used = 0;
            slot = parse(raw, &used);
            if (used != raw.size()) throw std::invalid_argument("trailing characters");
        } catch (const std::exception&) {
            throw ConfigError("invalid value '" + raw + "' for " + full_name);
        }
    };
}

Setter int_key(int& slot, const std::string& full_name) {
    return parse_with(slot, full_name, [](const std::string& r, std::size_t* used) {
        return std::stoi(r, used);
    });
}

Setter i64_key(std::int64_t& slot, const std::string& full_name) {
    return parse_with(slot, full_name, [](const std::string& r, std::size_t* used) {
        return static_cast<std::int64_t>(std::stoll(r, used));
    });
}

Setter u64_key(std::uint64_t& slot, const std::string& full_name) {
    return parse_with(slot, full_name, [](const std::string& r, std::size_t* used) {
        return static_cast<std::uint64_t>(std::stoull(r, used));
    });
}

Setter double_key(double& slot, const std::string& full_name) {
    return parse_with(slot, full_name, [](const std::string& r, std::size_t* used) {
        return std::stod(r, used);
    });
}

Setter bool_key(bool& slot, const std::string& full_name) {
    return [&slot, full_name](const std::string& raw) {
        if (raw == "on")
            slot = true;
        else if (raw == "off")
            slot = false;
        else
            throw ConfigError("invalid value '" + raw + "' for " + full_name +
                              " (expected on or off)");
    };
}

Setter string_key(std::string& slot) {
    return [&slot](const std::string& raw) { slot = raw; };
}

KeyTable key_table(RunConfig& c) {
    KeyTable t;
    auto& model = t.sections["model"];
    model["dim"] = int_key(c.model.dim, "model.dim");
    model["n_keypoints"] = int_key(c.model.n_keypoints, "model.n_keypoints");
    model["n_coarse"] = int_key(c.model.n_coarse, "model.n_coarse");
    model["n_fine"] = int_key(c.model.n_fine, "model.n_fine");
    model["encoder_layers"] = int_key(c.model.encoder_layers, "model.encoder_layers");
    model["human_layers"] = int_key(c.model.human_layers, "model.human_layers");
    model["hk_layers"] = int_key(c.model.hk_layers, "model.hk_layers");
    model["n_heads"] = int_key(c.model.n_heads, "model.n_heads");
    model["n_points"] = int_key(c.model.n_points, "model.n_points");
    model["n_levels"] = int_key(c.model.n_levels, "model.n_levels");
    model["ffn_dim"] = int_key(c.model.ffn_dim, "model.ffn_dim");
    model["base_channels"] = int_key(c.model.base_channels, "model.base_channels");
    model["size_init"] = [&c](const std::string& raw) {
        c.model.size_init = size_init_from_string(raw);
    };
    model["mask"] = [&c](const std::string& raw) {
        c.model.mask = mask_strategy_from_string(raw);
    };

    auto& opt = t.sections["optimization"];
    opt["lr"] = double_key(c.optimization.lr, "optimization.lr");
    opt["weight_decay"] = double_key(c.optimization.weight_decay, "optimization.weight_decay");
    opt["decay_epoch"] = int_key(c.optimization.decay_epoch, "optimization.decay_epoch");
    opt["decay_factor"] = double_key(c.optimization.decay_factor, "optimization.decay_factor");
    opt["epochs"] = int_key(c.optimization.epochs, "optimization.epochs");
    opt["batch_size"] = int_key(c.optimization.batch_size, "optimization.batch_size");
    opt["seed"] = u64_key(c.optimization.seed, "optimization.seed");
    opt["max_steps"] = i64_key(c.optimization.max_steps, "optimization.max_steps");
    opt["eval_period"] = int_key(c.optimization.eval_period, "optimization.eval_period");
    opt["clip_norm"] = double_key(c.optimization.clip_norm, "optimization.clip_norm");

    auto& data = t.sections["data"];
    data["source"] = [&c](const std::string& raw) {
        if (raw != "synthetic" && raw != "coco_json")
            throw ConfigError("invalid value '" + raw +
                              "' for data.source (expected synthetic or coco_json)");
        c.data.source = raw;
    };
    data["path"] = string_key(c.data.path);
    data["val_path"] = string_key(c.data.val_path);
    data["seed"] = u64_key(c.data.seed, "data.seed");
    data["n_images"] = int_key(c.data.n_images, "data.n_images");
    data["n_val"] = int_key(c.data.n_val, "data.n_val");
    data["people_min"] = int_key(c.data.people_min, "data.people_min");
    data["people_max"] = int_key(c.data.people_max, "data.people_max");
    data["image_size"] = int_key(c.data.image_size, "data.image_size");
    data["augment"] = bool_key(c.data.augment, "data.augment");

    auto& loss = t.sections["loss"];
    loss["mu"] = double_key(c.loss.weights.mu, "loss.mu");
    loss["beta"] = double_key(c.loss.weights.beta, "loss.beta");
    loss["lambda"] = double_key(c.loss.weights.lambda, "loss.lambda");
    loss["omega"] = double_key(c.loss.weights.omega, "loss.omega");
    loss["theta"] = double_key(c.loss.weights.theta, "loss.theta");
    loss["human_det_supervision"] =
        bool_key(c.loss.human_det_supervision, "loss.human_det_supervision");
    return t;
}

}  // namespace

const char* to_string(SizeInit s) {
    switch (s) {
        case SizeInit::None: return "none";
        case SizeInit::Min: return "min";
        case SizeInit::Max: return "max";
        case SizeInit::Ffn: return "ffn";
        case SizeInit::Learned: return "learned";
    }
    return "ffn";
}

const char* to_string(MaskStrategy m) {
    switch (m) {
        case MaskStrategy::Ours: return "ours";
        case MaskStrategy::Full: return "full";
        case MaskStrategy::NoHK: return "no_hk";
        case MaskStrategy::NoHH: return "no_hh";
    }
    return "ours";
}

SizeInit size_init_from_string(const std::string& s) {
    if (s == "none") return SizeInit::None;
    if (s == "min") return SizeInit::Min;
    if (s == "max") return SizeInit::Max;
    if (s == "ffn") return SizeInit::Ffn;
    if (s == "learned") return SizeInit::Learned;
    throw ConfigError("invalid value '" + s +
                      "' for model.size_init (expected none, min, max, ffn, or learned)");
}

MaskStrategy mask_strategy_from_string(const std::string& s) {
    if (s == "ours") return MaskStrategy::Ours;
    if (s == "full") return MaskStrategy::Full;
    if (s == "no_hk") return MaskStrategy::NoHK;
    if (s == "no_hh") return MaskStrategy::NoHH;
    throw ConfigError("invalid value '" + s +
                      "' for model.mask (expected ours, full, no_hk, or no_hh)");
}

RunConfig parse_run_config(const std::string& text) {
    RunConfig cfg;
    KeyTable table = key_table(cfg);

    std::istringstream in(text);
    std::string line, section;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;

        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError("malformed section header at line " + std::to_string(line_no));
            section = trim(line.substr(1, line.size() - 2));
            if (table.sections.find(section) == table.sections.end())
                throw ConfigError("unknown config section [" + section + "]");
            continue;
        }

        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("expected key = value at line " + std::to_string(line_no));
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (section.empty())
            throw ConfigError("key '" + key + "' appears before any [section]");
        table.apply(section, key, value);
    }
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_run_config(buf.str());
}

std::string serialize_run_config(const RunConfig& c) {
    std::ostringstream out;
    out << "[model]\n";
    out << "dim = " << c.model.dim << "\n";
    out << "n_keypoints = " << c.model.n_keypoints << "\n";
    out << "n_coarse = " << c.model.n_coarse << "\n";
    out << "n_fine = " << c.model.n_fine << "\n";
    out << "encoder_layers = " << c.model.encoder_layers << "\n";
    out << "human_layers = " << c.model.human_layers << "\n";
    out << "hk_layers = " << c.model.hk_layers << "\n";
    out << "n_heads = " << c.model.n_heads << "\n";
    out << "n_points = " << c.model.n_points << "\n";
    out << "n_levels = " << c.model.n_levels << "\n";
    out << "ffn_dim = " << c.model.ffn_dim << "\n";
    out << "base_channels = " << c.model.base_channels << "\n";
    out << "size_init = " << to_string(c.model.size_init) << "\n";
    out << "mask = " << to_string(c.model.mask) << "\n";
    out << "\n[optimization]\n";
    out << "lr = " << fmt_double(c.optimization.lr) << "\n";
    out << "weight_decay = " << fmt_double(c.optimization.weight_decay) << "\n";
    out << "decay_epoch = " << c.optimization.decay_epoch << "\n";
    out << "decay_factor = " << fmt_double(c.optimization.decay_factor) << "\n";
    out << "epochs = " << c.optimization.epochs << "\n";
    out << "batch_size = " << c.optimization.batch_size << "\n";
    out << "seed = " << c.optimization.seed << "\n";
    out << "max_steps = " << c.optimization.max_steps << "\n";
    out << "eval_period = " << c.optimization.eval_period << "\n";
    out << "clip_norm = " << fmt_double(c.optimization.clip_norm) << "\n";
    out << "\n[data]\n";
    out << "source = " << c.data.source << "\n";
    out << "path = " << c.data.path << "\n";
    out << "val_path = " << c.data.val_path << "\n";
    out << "seed = " << c.data.seed << "\n";
    out << "n_images = " << c.data.n_images << "\n";
    out << "n_val = " << c.data.n_val << "\n";
    out << "people_min = " << c.data.people_min << "\n";
    out << "people_max = " << c.data.people_max << "\n";
    out << "image_size = " << c.data.image_size << "\n";
    out << "augment = " << (c.data.augment ? "on" : "off") << "\n";
    out << "\n[loss]\n";
    out << "mu = " << fmt_double(c.loss.weights.mu) << "\n";
    out << "beta = " << fmt_double(c.loss.weights.beta) << "\n";
    out << "lambda = " << fmt_double(c.loss.weights.lambda) << "\n";
    out << "omega = " << fmt_double(c.loss.weights.omega) << "\n";
    out << "theta = " << fmt_double(c.loss.weights.theta) << "\n";
    out << "human_det_supervision = " << (c.loss.human_det_supervision ? "on" : "off") << "\n";
    return out.str();
}

}  // namespace edpose
