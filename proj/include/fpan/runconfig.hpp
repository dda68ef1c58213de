#pragma once

#include <cstdint>
#include <string>

#include "fpan/imaging.hpp"
#include "fpan/model.hpp"

namespace fpan {

// Line-oriented `key = value` run configuration. '#' starts a comment; blank
// lines are skipped; unknown keys are rejected with their line number.
//
// Keys and defaults: scale 2, blocks 2, stage_depth 4, channels 64,
// pyramid_scales 1,2,4, reduction 16, ablation P4, degradation BI, seed 0,
// epochs 2, batch 16, patch 48, lr0 1e-4, halve_every 200, data_dir, out_dir.
struct RunConfig {
    ModelConfig model;
    DegradationKind degradation{DegradationKind::BI};
    std::uint64_t seed{0};
    int epochs{2};
    int batch{16};
    int patch{48};
    double lr0{1e-4};
    int halve_every{200};
    std::string data_dir;
    std::string out_dir;

    void validate() const;
};

// Switch combination for a named ablation preset, leaving pyramid scales to
// the caller (the model-level preset additionally pins them).
Ablation ablation_switches(const std::string& preset);

RunConfig parse_run_config_file(const std::string& path);

// `key=value` override applied after the file (line 0 in error messages).
void apply_run_config_override(RunConfig& cfg, const std::string& assignment);

}  // namespace fpan
