// normformer-lab: train and compare small-scale transformer LM variants
// (Post-LN / Pre-LN / NormFormer) and export training diagnostics.
//
// Subcommands:
//   train      one training run (metrics, diagnostics, checkpoint)
//   stability  LR-ramp-until-divergence sweep across architectures
//   ablate     the fixed modification-removal grid at equal steps/seeds
//   report     offline comparison report over finished run directories
//
// Exit codes: 0 success (including a measured divergence), 1 usage/config
// error, 2 I/O error.

#include <cstdio>
#include <filesystem>

#include <CLI11.hpp>

#include "nflab/harness.hpp"
#include "nflab/textio.hpp"

namespace fs = std::filesystem;
using namespace nflab;

namespace {

LabConfig load_config(const std::string& config_path, const std::vector<std::string>& sets) {
    LabConfig cfg = LabConfig::from_file(config_path);
    for (const auto& s : sets) cfg.apply_override(s);
    cfg.validate();
    return cfg;
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& sets,
              const std::string& out_dir) {
    const LabConfig cfg = load_config(config_path, sets);
    const RunArtifacts art = run_training_job(cfg, out_dir, "train");
    std::printf("run %s: %d steps, diverged=%s, final valid loss %.6f (ppl %.3f)\n",
                art.run_id.c_str(), art.result.steps_completed,
                to_string(art.result.cause).c_str(), art.result.final_valid_loss,
                art.result.final_valid_ppl);
    std::printf("artifacts in %s\n", art.dir.c_str());
    return 0;
}

int cmd_stability(const std::string& config_path, const std::vector<std::string>& sets,
                  const std::string& out_dir, double increment, int seeds) {
    LabConfig cfg = load_config(config_path, sets);
    if (increment > 0.0) cfg.train.ramp_increment = increment;
    if (seeds > 0) cfg.stability_seeds = seeds;
    cfg.validate();
    const StabilitySummary summary = run_stability_sweep(cfg, out_dir);
    std::printf("%s", summary.to_table().c_str());
    std::printf("details in %s/stability.csv\n", out_dir.c_str());
    return 0;
}

int cmd_ablate(const std::string& config_path, const std::vector<std::string>& sets,
               const std::string& out_dir, int seeds) {
    LabConfig cfg = load_config(config_path, sets);
    if (seeds > 0) cfg.ablate_seeds = seeds;
    cfg.validate();
    const AblationSummary summary = run_ablation(cfg, out_dir);
    std::printf("%s", summary.to_markdown().c_str());
    std::printf("details in %s/ablation.csv\n", out_dir.c_str());
    return 0;
}

int cmd_report(const std::vector<std::string>& run_dirs, const std::string& out_dir,
               const std::string& window, const std::string& param) {
    ReportOptions opt;
    opt.run_dirs = run_dirs;
    opt.out_dir = out_dir;
    opt.mismatch_param = param;
    if (!window.empty()) {
        const auto parts = split(window, ':');
        if (parts.size() != 2) throw ConfigError("--window expects LO:HI, got '" + window + "'");
        opt.window_lo = std::stoi(parts[0]);
        opt.window_hi = std::stoi(parts[1]);
    }
    build_report(opt);
    std::printf("report in %s/report.md\n", out_dir.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"normformer-lab: LayerNorm-placement experiments for small LMs"};
    app.require_subcommand(1);

    std::string config_path, out_dir, window, mismatch_param = "ffn.w2";
    std::vector<std::string> sets, run_dirs;
    double increment = 0.0;
    int seeds = 0;

    auto* train_cmd = app.add_subcommand("train", "run one training job");
    train_cmd->add_option("--config", config_path, "config file")->required();
    train_cmd->add_option("--set", sets, "override key=value (repeatable)");
    train_cmd->add_option("--out", out_dir, "output directory")->default_val("runs/train");

    auto* stab_cmd = app.add_subcommand("stability", "LR ramp test across architectures");
    stab_cmd->add_option("--config", config_path, "config file")->required();
    stab_cmd->add_option("--set", sets, "override key=value (repeatable)");
    stab_cmd->add_option("--out", out_dir, "output directory")->default_val("runs/stability");
    stab_cmd->add_option("--increment", increment, "lr increase per step");
    stab_cmd->add_option("--seeds", seeds, "number of seeds per architecture");

    auto* ablate_cmd = app.add_subcommand("ablate", "modification-removal grid");
    ablate_cmd->add_option("--config", config_path, "config file")->required();
    ablate_cmd->add_option("--set", sets, "override key=value (repeatable)");
    ablate_cmd->add_option("--out", out_dir, "output directory")->default_val("runs/ablate");
    ablate_cmd->add_option("--seeds", seeds, "seeds per grid row");

    auto* report_cmd = app.add_subcommand("report", "compare finished runs");
    report_cmd->add_option("dirs", run_dirs, "run directories")->required();
    report_cmd->add_option("--out", out_dir, "output directory")->default_val("report");
    report_cmd->add_option("--window", window, "step window LO:HI for gradient stats");
    report_cmd->add_option("--param", mismatch_param, "parameter for the mismatch ratio");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (app.got_subcommand(train_cmd)) return cmd_train(config_path, sets, out_dir);
        if (app.got_subcommand(stab_cmd)) {
            return cmd_stability(config_path, sets, out_dir, increment, seeds);
        }
        if (app.got_subcommand(ablate_cmd)) return cmd_ablate(config_path, sets, out_dir, seeds);
        if (app.got_subcommand(report_cmd)) {
            return cmd_report(run_dirs, out_dir, window, mismatch_param);
        }
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 1;
    } catch (const IoError& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return 2;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 1;
}
