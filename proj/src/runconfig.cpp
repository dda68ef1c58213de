#include "fpan/runconfig.hpp"

#include <fstream>
#include <sstream>

namespace fpan {

namespace {

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r");
    return s.substr(begin, end - begin + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value,
                            int line_no) {
    throw ConfigError("config line " + std::to_string(line_no) + ": invalid value '" +
                      value + "' for key '" + key + "'");
}

int parse_int(const std::string& key, const std::string& value, int line_no) {
    try {
        std::size_t used = 0;
        const int v = std::stoi(value, &used);
        if (used != value.size()) bad_value(key, value, line_no);
        return v;
    } catch (const ConfigError&) {
        throw;
    } catch (...) {
        bad_value(key, value, line_no);
    }
}

double parse_double(const std::string& key, const std::string& value, int line_no) {
    try {
        std::size_t used = 0;
        const double v = std::stod(value, &used);
        if (used != value.size()) bad_value(key, value, line_no);
        return v;
    } catch (const ConfigError&) {
        throw;
    } catch (...) {
        bad_value(key, value, line_no);
    }
}

std::vector<int> parse_int_list(const std::string& key, const std::string& value,
                                int line_no) {
    std::vector<int> out;
    std::stringstream ss(value);
    std::string part;
    while (std::getline(ss, part, ',')) {
        part = trim(part);
        if (part.empty()) bad_value(key, value, line_no);
        out.push_back(parse_int(key, part, line_no));
    }
    if (out.empty()) bad_value(key, value, line_no);
    return out;
}

void apply_key(RunConfig& cfg, const std::string& key, const std::string& value,
               int line_no) {
    if (key == "scale") {
        cfg.model.scale = parse_int(key, value, line_no);
    } else if (key == "blocks") {
        cfg.model.num_blocks = parse_int(key, value, line_no);
    } else if (key == "stage_depth") {
        cfg.model.stage_depth = parse_int(key, value, line_no);
    } else if (key == "channels") {
        cfg.model.channels = parse_int(key, value, line_no);
    } else if (key == "pyramid_scales") {
        cfg.model.pyramid_scales = parse_int_list(key, value, line_no);
    } else if (key == "reduction") {
        cfg.model.reduction = parse_int(key, value, line_no);
    } else if (key == "ablation") {
        try {
            cfg.model.ablation = ablation_switches(value);
        } catch (const ConfigError&) {
            bad_value(key, value, line_no);
        }
    } else if (key == "degradation") {
        try {
            cfg.degradation = parse_degradation_kind(value);
        } catch (const ConfigError&) {
            bad_value(key, value, line_no);
        }
    } else if (key == "seed") {
        try {
            cfg.seed = std::stoull(value);
        } catch (...) {
            bad_value(key, value, line_no);
        }
    } else if (key == "epochs") {
        cfg.epochs = parse_int(key, value, line_no);
    } else if (key == "batch") {
        cfg.batch = parse_int(key, value, line_no);
    } else if (key == "patch") {
        cfg.patch = parse_int(key, value, line_no);
    } else if (key == "lr0") {
        cfg.lr0 = parse_double(key, value, line_no);
    } else if (key == "halve_every") {
        cfg.halve_every = parse_int(key, value, line_no);
    } else if (key == "data_dir") {
        cfg.data_dir = value;
    } else if (key == "out_dir") {
        cfg.out_dir = value;
    } else {
        throw ConfigError("config line " + std::to_string(line_no) + ": unknown key '" +
                          key + "'");
    }
}

}  // namespace

Ablation ablation_switches(const std::string& preset) {
    if (preset == "P0") return {false, false, Attention::none};
    if (preset == "P1") return {true, false, Attention::none};
    if (preset == "P2") return {true, true, Attention::none};
    if (preset == "P3") return {true, true, Attention::gc};
    if (preset == "P4") return {true, true, Attention::pnlb};
    throw ConfigError("unknown ablation preset '" + preset + "'");
}

void RunConfig::validate() const {
    model.validate();
    if (epochs < 1) throw ConfigError("RunConfig: epochs must be >= 1");
    if (batch < 1) throw ConfigError("RunConfig: batch must be >= 1");
    if (patch < 1) throw ConfigError("RunConfig: patch must be >= 1");
    if (halve_every < 1) throw ConfigError("RunConfig: halve_every must be >= 1");
    if (!(lr0 > 0.0)) throw ConfigError("RunConfig: lr0 must be > 0");
    if (degradation != DegradationKind::BI && model.scale != 3) {
        throw ConfigError("RunConfig: BD/DN degradations are defined for scale 3");
    }
}

RunConfig parse_run_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file '" + path + "'");
    RunConfig cfg;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(line_no) +
                              ": expected 'key = value'");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) {
            throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
        }
        apply_key(cfg, key, value, line_no);
    }
    return cfg;
}

void apply_run_config_override(RunConfig& cfg, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) {
        throw ConfigError("override '" + assignment + "': expected key=value");
    }
    apply_key(cfg, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)), 0);
}

}  // namespace fpan
