// Command-line surface: train / sr / eval / count subcommands over the
// library. Exit codes: 0 ok, 1 runtime failure, 2 usage or config error.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "fpan/checkpoint.hpp"
#include "fpan/imaging.hpp"
#include "fpan/metrics.hpp"
#include "fpan/model.hpp"
#include "fpan/runconfig.hpp"
#include "fpan/training.hpp"

namespace fs = std::filesystem;
using namespace fpan;

namespace {

SrFunction make_sr_function(const FpanModel<float>& model) {
    return [&model](const ImageU8& lr) {
        TensorF out = model.forward(nullptr, image_to_tensor(lr));
        return tensor_to_image(out);  // clamps to [0,1] and quantizes
    };
}

std::string checkpoint_name(int epoch) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "epoch_%04d.ckpt", epoch);
    return buf;
}

// Highest epoch_%04d.ckpt in out_dir, or -1 when none exists.
int latest_checkpoint_epoch(const std::string& out_dir) {
    int latest = -1;
    if (!fs::is_directory(out_dir)) return latest;
    for (const auto& entry : fs::directory_iterator(out_dir)) {
        int epoch = -1;
        const std::string name = entry.path().filename().string();
        if (std::sscanf(name.c_str(), "epoch_%d.ckpt", &epoch) == 1) {
            latest = std::max(latest, epoch);
        }
    }
    return latest;
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& overrides) {
    RunConfig cfg = parse_run_config_file(config_path);
    for (const auto& o : overrides) apply_run_config_override(cfg, o);
    cfg.validate();
    if (cfg.data_dir.empty()) throw ConfigError("train: data_dir is not set");
    if (cfg.out_dir.empty()) throw ConfigError("train: out_dir is not set");

    DegradationSpec spec;
    spec.kind = cfg.degradation;
    spec.scale = cfg.model.scale;
    spec.seed = cfg.seed;

    // Pre-generated LR images are picked up from a sibling "<data_dir>_lr".
    const fs::path data_dir(cfg.data_dir);
    const fs::path lr_dir = data_dir.parent_path() / (data_dir.filename().string() + "_lr");
    const std::string lr_dir_arg = fs::is_directory(lr_dir) ? lr_dir.string() : "";
    Dataset dataset = load_dataset(cfg.data_dir, spec, lr_dir_arg);
    if (dataset.items.empty()) {
        throw Error("train: no PNG images in '" + cfg.data_dir + "'");
    }

    fs::create_directories(cfg.out_dir);
    const int resume_epoch = latest_checkpoint_epoch(cfg.out_dir);

    FpanModel<float> model =
        resume_epoch >= 0
            ? load_checkpoint((fs::path(cfg.out_dir) / checkpoint_name(resume_epoch)).string())
            : FpanModel<float>(cfg.model, cfg.seed);
    if (resume_epoch >= 0) {
        std::printf("resuming from %s\n", checkpoint_name(resume_epoch).c_str());
    }

    TrainConfig tc;
    tc.batch_size = cfg.batch;
    tc.lr_patch = cfg.patch;
    tc.lr0 = cfg.lr0;
    tc.halve_every = cfg.halve_every;
    tc.epochs = cfg.epochs;
    tc.seed = cfg.seed;
    tc.scale = cfg.model.scale;
    tc.degradation = spec;

    const auto trace =
        train(model, dataset, tc,
              [&](int epoch, const FpanModel<float>& m) {
                  save_checkpoint(m, (fs::path(cfg.out_dir) / checkpoint_name(epoch)).string());
              },
              resume_epoch + 1);

    std::ofstream log(fs::path(cfg.out_dir) / "loss.log", std::ios::app);
    if (!log) throw IoError("train: cannot write loss.log in '" + cfg.out_dir + "'");
    log << format_loss_log(trace);
    log.close();

    if (!trace.empty()) {
        std::printf("trained %zu steps, final loss %.6g\n", trace.size(),
                    trace.back().loss);
    } else {
        std::printf("nothing to do: run is already at epoch %d\n", resume_epoch);
    }
    return 0;
}

int cmd_sr(const std::string& ckpt_path, const std::string& input_path,
           const std::string& output_path, bool ensemble) {
    const FpanModel<float> model = load_checkpoint(ckpt_path);
    const ImageU8 lr = load_png(input_path);
    const SrFunction sr = make_sr_function(model);
    const ImageU8 out = ensemble ? self_ensemble_sr(sr, lr) : sr(lr);
    save_png(out, output_path);
    std::printf("%dx%d -> %dx%d (x%d%s)\n", lr.width, lr.height, out.width, out.height,
                model.config.scale, ensemble ? ", self-ensemble" : "");
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& hr_dir,
             const std::string& degradation, std::uint64_t seed,
             const std::string& out_csv) {
    const FpanModel<float> model = load_checkpoint(ckpt_path);
    const int scale = model.config.scale;

    DegradationSpec spec;
    spec.kind = parse_degradation_kind(degradation);
    spec.scale = scale;
    spec.validate();

    if (list_png_files(hr_dir).empty()) {
        throw Error("eval: no PNG files in '" + hr_dir + "'");
    }
    const EvalReport report =
        evaluate_directory(make_sr_function(model), hr_dir, spec, seed);

    const std::string csv = report.to_csv();
    if (out_csv.empty()) {
        std::fputs(csv.c_str(), stdout);
    } else {
        std::ofstream out(out_csv, std::ios::trunc);
        if (!out) throw IoError("eval: cannot write '" + out_csv + "'");
        out << csv;
    }
    return 0;
}

ModelConfig count_config(const std::string& config_path, const std::string& preset) {
    ModelConfig cfg;
    if (!config_path.empty()) cfg = parse_run_config_file(config_path).model;
    if (preset.empty()) return cfg;
    if (preset == "reference") return reference_config();
    if (preset == "tiny") {
        ModelConfig tiny;
        tiny.scale = 2;
        tiny.channels = 8;
        tiny.num_blocks = 1;
        tiny.stage_depth = 1;
        tiny.reduction = 4;
        tiny.pyramid_scales = {1};
        tiny.ablation.attention = Attention::gc;
        return tiny;
    }
    return apply_ablation_preset(cfg, preset);  // P0..P4
}

int cmd_count(const std::string& config_path, const std::string& preset, int hr_size,
              bool grid, bool csv) {
    if (grid) {
        ModelConfig base =
            config_path.empty() ? ModelConfig{} : parse_run_config_file(config_path).model;
        std::printf("preset  params      flops@%dx%d\n", hr_size, hr_size);
        for (int p = 0; p <= 4; ++p) {
            const ModelConfig cfg = apply_ablation_preset(base, "P" + std::to_string(p));
            const CostReport report =
                count_flops(cfg, hr_size / cfg.scale, hr_size / cfg.scale);
            std::printf("P%d      %-11zu %zu\n", p, report.total_params(),
                        report.total_flops());
        }
        std::printf("# structural costs only; image-quality differences between these\n"
                    "# configurations require full training runs and are not computed here\n");
        return 0;
    }

    const ModelConfig cfg = count_config(config_path, preset);
    const int lr_size = hr_size / cfg.scale;
    const CostReport report = count_flops(cfg, lr_size, lr_size);
    if (csv) {
        std::fputs(report.to_csv().c_str(), stdout);
        return 0;
    }
    std::printf("blocks %d, depth %d, channels %d, scale x%d\n", cfg.num_blocks,
                cfg.stage_depth, cfg.channels, cfg.scale);
    std::printf("parameters: %zu\n", report.total_params());
    std::printf("flops at %dx%d HR (%dx%d LR): %zu\n", hr_size, hr_size, lr_size,
                lr_size, report.total_flops());
    if (preset == "reference") {
        const double gap = (static_cast<double>(report.total_params()) -
                            static_cast<double>(kReferenceParamTarget)) /
                           static_cast<double>(kReferenceParamTarget);
        std::printf("resolved blocks: %d (smallest count reaching %zu parameters)\n",
                    cfg.num_blocks, kReferenceParamTarget);
        std::printf("target gap: %+.2f%%\n", 100.0 * gap);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"fpan: feedback pyramid attention network for single-image "
                 "super-resolution"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> overrides;
    auto* train_cmd = app.add_subcommand("train", "train a model from a config file");
    train_cmd->add_option("--config", config_path, "run configuration file")->required();
    train_cmd->add_option("--set", overrides, "override a config key (key=value)");

    std::string ckpt_path, input_path, output_path;
    bool ensemble = false;
    auto* sr_cmd = app.add_subcommand("sr", "super-resolve one PNG");
    sr_cmd->add_option("--checkpoint", ckpt_path, "model checkpoint")->required();
    sr_cmd->add_option("--input", input_path, "input LR PNG")->required();
    sr_cmd->add_option("--output", output_path, "output SR PNG")->required();
    sr_cmd->add_flag("--ensemble", ensemble, "average the 8 dihedral passes");

    std::string eval_ckpt, hr_dir, degradation = "BI", eval_csv;
    std::uint64_t eval_seed = 0;
    auto* eval_cmd = app.add_subcommand("eval", "PSNR/SSIM over a directory of HR PNGs");
    eval_cmd->add_option("--checkpoint", eval_ckpt, "model checkpoint")->required();
    eval_cmd->add_option("--hr-dir", hr_dir, "directory of HR PNGs")->required();
    eval_cmd->add_option("--degradation", degradation, "BI, BD or DN (default BI)");
    eval_cmd->add_option("--noise-seed", eval_seed, "base seed for DN noise");
    eval_cmd->add_option("--out", eval_csv, "write the CSV report here instead of stdout");

    std::string count_config_path, preset;
    int hr_size = 512;
    bool grid = false, csv = false;
    auto* count_cmd = app.add_subcommand("count", "parameter and FLOP accounting");
    count_cmd->add_option("--config", count_config_path, "run configuration file");
    count_cmd->add_option("--preset", preset, "reference, tiny or P0..P4");
    count_cmd->add_option("--hr-size", hr_size, "HR evaluation size (default 512)");
    count_cmd->add_flag("--grid", grid, "emit the P0..P4 ablation grid");
    count_cmd->add_flag("--csv", csv, "per-layer CSV instead of the summary");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (app.got_subcommand(train_cmd)) return cmd_train(config_path, overrides);
        if (app.got_subcommand(sr_cmd))
            return cmd_sr(ckpt_path, input_path, output_path, ensemble);
        if (app.got_subcommand(eval_cmd))
            return cmd_eval(eval_ckpt, hr_dir, degradation, eval_seed, eval_csv);
        if (app.got_subcommand(count_cmd))
            return cmd_count(count_config_path, preset, hr_size, grid, csv);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const UsageError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
