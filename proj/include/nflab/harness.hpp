#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "nflab/config.hpp"
#include "nflab/diagnostics.hpp"

namespace nflab {

// Stable hex id derived from the canonical config and command; two runs with
// identical effective configuration share an id.
std::string run_id_of(const LabConfig& cfg, const std::string& command);

struct RunArtifacts {
    std::string dir;
    std::string run_id;
    TrainResult result;
    ParamCount params;
};

// One full training run into `dir`: manifest.json written before training
// and finalized after; metrics.csv; gradnorm.csv/scales.csv when diagnostics
// are enabled; checkpoint.nfck with the final parameters.
RunArtifacts run_training_job(const LabConfig& cfg, const std::string& dir,
                              const std::string& command);

// Sweep parallelism cap: NORMFORMER_LAB_THREADS, else hardware concurrency.
int sweep_thread_cap(int n_jobs);
void run_parallel(const std::vector<std::function<void()>>& jobs, int max_threads);

struct StabilitySummary {
    struct Row {
        std::string variant;
        uint64_t seed = 0;
        int steps_survived = 0;
        DivergenceCause cause = DivergenceCause::none;
    };
    std::vector<Row> rows;
    std::vector<std::pair<std::string, int>> medians;  // per variant
    std::string to_csv() const;
    std::string to_table() const;  // stdout-friendly
};

// Ramp-until-divergence sweep over stability.variants x stability.seeds.
// Per-run artifacts land in out_dir/<variant>/seed<k>/.
StabilitySummary run_stability_sweep(const LabConfig& cfg, const std::string& out_dir);

struct AblationRowSpec {
    std::string label;         // table row name
    std::string variant_spec;  // parseable by variant_from_spec
};

// The fixed 7-row grid: full model, four single removals, +qkv_ln, baseline.
std::vector<AblationRowSpec> ablation_grid();

struct AblationSummary {
    struct Entry {
        std::string label;
        std::string variant_spec;
        int64_t params_total = 0;
        int64_t params_added = 0;
        uint64_t seed = 0;
        double final_valid_loss = 0.0;
        double final_valid_ppl = 0.0;
        int steps_completed = 0;
        std::string cause;
        double mean_step_wall_ms = 0.0;
    };
    std::vector<Entry> entries;
    std::string to_csv() const;
    std::string to_markdown() const;  // per-row medians, grid order
};

AblationSummary run_ablation(const LabConfig& cfg, const std::string& out_dir);

struct ReportOptions {
    std::vector<std::string> run_dirs;
    std::string out_dir;
    int window_lo = -1;  // default: last 20% of each run's recorded steps
    int window_hi = -1;
    std::string mismatch_param = "ffn.w2";
};

// Offline, read-only over run logs; emits report.md plus CSV tables.
// Re-running over the same inputs produces identical bytes.
void build_report(const ReportOptions& opt);

}  // namespace nflab
