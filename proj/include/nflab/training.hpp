#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "nflab/data.hpp"
#include "nflab/model.hpp"

namespace nflab {

enum class Schedule { linear_decay, ramp };

std::string to_string(Schedule s);
Schedule schedule_from_string(const std::string& s);

struct TrainConfig {
    double peak_lr = 1e-3;
    int warmup_steps = 100;
    int total_steps = 2000;
    Schedule schedule = Schedule::linear_decay;
    double ramp_increment = 5e-5;
    int batch_size = 8;
    int seq_len = 64;
    std::optional<double> clip_norm;  // absent = no clipping
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.98;
    double adam_eps = 1e-8;
    uint64_t seed = 1;
    int valid_every = 50;
    int train_log_every = 10;
    int valid_windows = 16;          // fixed prefix of the held-out split per eval
    double explosion_factor = 3.0;   // smoothed-loss divergence threshold
    double mask_prob = 0.15;         // masked objective only
    int max_steps = 0;               // stop after this many updates without
                                     // reshaping the lr schedule; 0 = total_steps

    void validate() const;
};

enum class DivergenceCause { none, nan_loss, inf_activation, loss_explosion };

std::string to_string(DivergenceCause c);

struct TrainState {
    int step = 0;
    ModelParams params;
    std::vector<Tensor> adam_m, adam_v;  // aligned with collect_params order
    DivergenceCause diverged = DivergenceCause::none;
};

TrainState init_train_state(const ModelConfig& cfg);

// Learning rate for the update producing `step`.
//   linear_decay: peak*step/warmup during warmup, then linear to 0 at
//                 total_steps.
//   ramp:         ramp_increment*step, unbounded.
double lr_at_step(const TrainConfig& cfg, int step);

// Global L2 norm over all gradient tensors.
double global_grad_norm(const std::vector<Tensor>& grads);

// Scales all gradients by clip_norm/norm when the global norm exceeds
// clip_norm; returns the pre-clip norm.
double clip_gradients(std::vector<Tensor>& grads, double clip_norm);

// One Adam update with bias correction. Returns false (and marks the state
// diverged) without touching parameters when any gradient is non-finite.
bool adam_step(TrainState& state, const std::vector<Tensor>& grads, double lr,
               const TrainConfig& cfg);

// Mean masked cross-entropy for a batch on a fresh tape; used by validation
// and tests. Throws when the batch mask is all zero.
double batch_loss(const ModelConfig& cfg, const ModelParams& params, const Batch& batch);

struct MetricRow {
    int step = 0;
    std::string split;  // "train" | "valid"
    double loss = 0.0;
    double ppl = 0.0;
    double lr = 0.0;
    double wall_ms = 0.0;
};

struct MetricLog {
    std::vector<MetricRow> rows;
    std::string to_csv() const;              // header: step,split,loss,ppl,lr,wall_ms
    static MetricLog from_csv(const std::string& text);
    void write(const std::string& path) const;
    static MetricLog read(const std::string& path);
};

// Read-only per-step observation passed to diagnostic hooks; gradients are
// pre-clipping.
struct StepObservation {
    int step = 0;  // the step this update produced (1-based)
    double train_loss = 0.0;
    const std::vector<ParamRef>* params = nullptr;
    const std::vector<Tensor>* grads = nullptr;
};

struct TrainHooks {
    std::function<void(const StepObservation&)> on_grads;        // every step
    std::function<void(int step, const ModelParams&)> on_params; // step 0 + after updates
};

struct TrainResult {
    TrainState state;
    MetricLog metrics;
    DivergenceCause cause = DivergenceCause::none;
    int steps_completed = 0;
    double final_valid_loss = 0.0;
    double final_valid_ppl = 0.0;
    double mean_step_wall_ms = 0.0;  // measured overhead; reported, never a control
};

// Runs total_steps updates or stops early at divergence (recorded, not
// thrown). Bit-deterministic given (configs, seed) apart from wall_ms.
TrainResult train(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                  const Corpus& corpus, const TrainHooks* hooks = nullptr);

struct StabilityResult {
    uint64_t seed = 0;
    int steps_survived = 0;
    DivergenceCause cause = DivergenceCause::none;
};

// Trains with the ramp schedule until divergence (or the step cap in
// ramp_cfg.total_steps). Seeds are base_seed..base_seed+n_seeds-1 applied to
// both model init and data order.
std::vector<StabilityResult> stability_ramp_test(const ModelConfig& model_cfg,
                                                 const TrainConfig& ramp_cfg,
                                                 const Corpus& corpus, int n_seeds,
                                                 uint64_t base_seed = 1);

int median_steps_survived(std::vector<StabilityResult> results);

}  // namespace nflab
