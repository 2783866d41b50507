#include "nflab/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "nflab/textio.hpp"

namespace nflab {

std::string to_string(Schedule s) {
    return s == Schedule::linear_decay ? "linear_decay" : "ramp";
}

Schedule schedule_from_string(const std::string& s) {
    if (s == "linear_decay") return Schedule::linear_decay;
    if (s == "ramp") return Schedule::ramp;
    throw ValueError("unknown schedule '" + s + "' (linear_decay|ramp)");
}

std::string to_string(DivergenceCause c) {
    switch (c) {
        case DivergenceCause::none: return "none";
        case DivergenceCause::nan_loss: return "nan_loss";
        case DivergenceCause::inf_activation: return "inf_activation";
        case DivergenceCause::loss_explosion: return "loss_explosion";
    }
    return "?";
}

void TrainConfig::validate() const {
    if (peak_lr <= 0.0) throw ValueError("train.peak_lr must be > 0");
    if (warmup_steps < 0) throw ValueError("train.warmup_steps must be >= 0");
    if (total_steps < 0) throw ValueError("train.total_steps must be >= 0");
    if (ramp_increment <= 0.0) throw ValueError("train.ramp_increment must be > 0");
    if (batch_size < 1 || seq_len < 1) throw ValueError("train.batch_size and train.seq_len must be >= 1");
    if (clip_norm && *clip_norm <= 0.0) throw ValueError("train.clip_norm must be > 0");
    if (adam_beta1 < 0.0 || adam_beta1 >= 1.0 || adam_beta2 < 0.0 || adam_beta2 >= 1.0) {
        throw ValueError("train.adam_beta1/beta2 must be in [0,1)");
    }
    if (adam_eps <= 0.0) throw ValueError("train.adam_eps must be > 0");
    if (valid_every < 1 || train_log_every < 1) {
        throw ValueError("train.valid_every and train.train_log_every must be >= 1");
    }
    if (valid_windows < 1) throw ValueError("train.valid_windows must be >= 1");
    if (explosion_factor <= 1.0) throw ValueError("train.explosion_factor must be > 1");
    if (mask_prob < 0.0 || mask_prob >= 1.0) throw ValueError("train.mask_prob must be in [0,1)");
    if (max_steps < 0) throw ValueError("train.max_steps must be >= 0");
}

TrainState init_train_state(const ModelConfig& cfg) {
    TrainState st;
    st.params = init_model_params(cfg);
    auto refs = collect_params(st.params);
    st.adam_m.reserve(refs.size());
    st.adam_v.reserve(refs.size());
    for (const auto& r : refs) {
        st.adam_m.emplace_back(r.tensor->shape());
        st.adam_v.emplace_back(r.tensor->shape());
    }
    return st;
}

double lr_at_step(const TrainConfig& cfg, int step) {
    if (step < 0) throw ValueError("lr_at_step: step must be >= 0");
    if (cfg.schedule == Schedule::ramp) return cfg.ramp_increment * step;
    if (cfg.warmup_steps > 0 && step <= cfg.warmup_steps) {
        return cfg.peak_lr * step / cfg.warmup_steps;
    }
    if (step >= cfg.total_steps) return 0.0;
    const double span = cfg.total_steps - cfg.warmup_steps;
    return cfg.peak_lr * (cfg.total_steps - step) / span;
}

double global_grad_norm(const std::vector<Tensor>& grads) {
    double sq = 0.0;
    for (const auto& g : grads) {
        for (int64_t i = 0; i < g.numel(); ++i) sq += g[i] * g[i];
    }
    return std::sqrt(sq);
}

double clip_gradients(std::vector<Tensor>& grads, double clip_norm) {
    if (clip_norm <= 0.0) throw ValueError("clip_gradients: clip_norm must be > 0");
    const double norm = global_grad_norm(grads);
    if (norm > clip_norm) {
        const double s = clip_norm / norm;
        for (auto& g : grads) {
            for (int64_t i = 0; i < g.numel(); ++i) g[i] *= s;
        }
    }
    return norm;
}

bool adam_step(TrainState& state, const std::vector<Tensor>& grads, double lr,
               const TrainConfig& cfg) {
    auto refs = collect_params(state.params);
    if (grads.size() != refs.size()) {
        throw ShapeError("adam_step: got " + std::to_string(grads.size()) +
                         " gradient tensors, expected " + std::to_string(refs.size()));
    }
    for (size_t i = 0; i < grads.size(); ++i) {
        check_same_shape("adam_step", refs[i].name.c_str(), grads[i], *refs[i].tensor);
        if (!grads[i].all_finite()) {
            state.diverged = DivergenceCause::inf_activation;
            return false;
        }
    }
    const int t = state.step + 1;
    const double bc1 = 1.0 - std::pow(cfg.adam_beta1, t);
    const double bc2 = 1.0 - std::pow(cfg.adam_beta2, t);
    for (size_t i = 0; i < refs.size(); ++i) {
        Tensor& m = state.adam_m[i];
        Tensor& v = state.adam_v[i];
        Tensor& p = *refs[i].tensor;
        const Tensor& g = grads[i];
        for (int64_t j = 0; j < p.numel(); ++j) {
            m[j] = cfg.adam_beta1 * m[j] + (1.0 - cfg.adam_beta1) * g[j];
            v[j] = cfg.adam_beta2 * v[j] + (1.0 - cfg.adam_beta2) * g[j] * g[j];
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            p[j] -= lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
        }
    }
    state.step = t;
    return true;
}

namespace {

struct BatchGraph {
    Var loss;      // mean masked cross-entropy, scalar
    int64_t mask_count = 0;
};

BatchGraph build_batch_graph(Tape& tape, const ModelVars& vars, const ModelConfig& cfg,
                             const Batch& batch, Rng* dropout_rng) {
    int64_t count = 0;
    for (uint8_t m : batch.loss_mask) count += m;
    if (count == 0) throw ValueError("batch loss: loss_mask is all zero (undefined mean)");
    Var total;
    for (int b = 0; b < batch.batch_size; ++b) {
        std::vector<int> tokens(batch.input_row(b), batch.input_row(b) + batch.seq_len);
        std::vector<int> targets(batch.target_row(b), batch.target_row(b) + batch.seq_len);
        std::vector<uint8_t> mask(batch.mask_row(b), batch.mask_row(b) + batch.seq_len);
        Var logits = model_forward(tape, vars, cfg, tokens, dropout_rng);
        Var ce = cross_entropy_sum_masked(logits, targets, mask);
        total = total.valid() ? add(total, ce) : ce;
    }
    return {scale(total, 1.0 / static_cast<double>(count)), count};
}

double eval_validation(const ModelConfig& cfg, const ModelParams& params,
                       const std::vector<int>& valid_tokens, const TrainConfig& tc) {
    // Fixed prefix of the held-out split: deterministic and identical at
    // every evaluation point.
    const bool causal = cfg.objective == Objective::causal;
    const int need = causal ? tc.seq_len + 1 : tc.seq_len;
    if (static_cast<int64_t>(valid_tokens.size()) < need) {
        throw ValueError("validation split too small: " + std::to_string(valid_tokens.size()) +
                         " tokens, need " + std::to_string(need));
    }
    const int avail = static_cast<int>((valid_tokens.size() - (causal ? 1 : 0)) /
                                       static_cast<size_t>(tc.seq_len));
    const int n_windows = std::min(tc.valid_windows, avail);

    double total = 0.0;
    int64_t count = 0;
    // Fresh generator per evaluation so masked-objective corruption is the
    // same fixed cloze set every time.
    Rng mask_rng = Rng(tc.seed).split(3);
    Tape tape;
    for (int w = 0; w < n_windows; ++w) {
        tape.clear();
        ModelVars vars = make_model_vars(tape, params);
        const int64_t start = static_cast<int64_t>(w) * tc.seq_len;
        std::vector<int> tokens(valid_tokens.begin() + start,
                                valid_tokens.begin() + start + tc.seq_len);
        std::vector<int> targets;
        std::vector<uint8_t> mask;
        std::vector<int> inputs = tokens;
        if (causal) {
            targets.assign(valid_tokens.begin() + start + 1,
                           valid_tokens.begin() + start + tc.seq_len + 1);
            mask.assign(static_cast<size_t>(tc.seq_len), 1);
        } else {
            targets = tokens;
            mask.assign(static_cast<size_t>(tc.seq_len), 0);
            for (int j = 0; j < tc.seq_len; ++j) {
                if (mask_rng.uniform() < tc.mask_prob) {
                    mask[static_cast<size_t>(j)] = 1;
                    const double r2 = mask_rng.uniform();
                    if (r2 < 0.8) {
                        inputs[static_cast<size_t>(j)] = kMaskToken;
                    } else if (r2 < 0.9) {
                        inputs[static_cast<size_t>(j)] = mask_rng.uniform_int(256);
                    }
                }
            }
        }
        Var logits = model_forward(tape, vars, cfg, inputs, nullptr);
        Var ce = cross_entropy_sum_masked(logits, targets, mask);
        total += ce.value()[0];
        for (uint8_t m : mask) count += m;
    }
    if (count == 0) throw ValueError("validation: no masked positions");
    return total / static_cast<double>(count);
}

}  // namespace

double batch_loss(const ModelConfig& cfg, const ModelParams& params, const Batch& batch) {
    Tape tape;
    ModelVars vars = make_model_vars(tape, params);
    return build_batch_graph(tape, vars, cfg, batch, nullptr).loss.value()[0];
}

std::string MetricLog::to_csv() const {
    std::string out = "step,split,loss,ppl,lr,wall_ms\n";
    for (const auto& r : rows) {
        out += std::to_string(r.step) + "," + r.split + "," + fmt_g17(r.loss) + "," +
               fmt_g17(r.ppl) + "," + fmt_g17(r.lr) + "," + fmt_g17(r.wall_ms) + "\n";
    }
    return out;
}

MetricLog MetricLog::from_csv(const std::string& text) {
    MetricLog log;
    const auto lines = split(text, '\n');
    for (size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        const auto f = split(lines[i], ',');
        if (f.size() != 6) throw ValueError("metrics csv: bad row '" + lines[i] + "'");
        MetricRow r;
        r.step = std::stoi(f[0]);
        r.split = f[1];
        r.loss = std::stod(f[2]);
        r.ppl = std::stod(f[3]);
        r.lr = std::stod(f[4]);
        r.wall_ms = std::stod(f[5]);
        log.rows.push_back(std::move(r));
    }
    return log;
}

void MetricLog::write(const std::string& path) const { write_text_file(path, to_csv()); }

MetricLog MetricLog::read(const std::string& path) {
    return from_csv(read_text_file(path));
}

TrainResult train(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                  const Corpus& corpus, const TrainHooks* hooks) {
    model_cfg.validate();
    train_cfg.validate();
    using Clock = std::chrono::steady_clock;
    const auto t0 = Clock::now();
    const auto wall_ms = [&] {
        return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
    };

    TrainResult res;
    res.state = init_train_state(model_cfg);
    TrainState& st = res.state;
    auto refs = collect_params(st.params);

    const bool causal = model_cfg.objective == Objective::causal;
    std::optional<ClmBatcher> clm;
    std::optional<MlmBatcher> mlm;
    if (causal) {
        clm.emplace(corpus.train_tokens, train_cfg.batch_size, train_cfg.seq_len, train_cfg.seed);
    } else {
        mlm.emplace(corpus.train_tokens, train_cfg.batch_size, train_cfg.seq_len,
                    train_cfg.mask_prob, train_cfg.seed);
    }
    Rng dropout_rng = Rng(train_cfg.seed).split(2);

    const auto log_valid = [&](int step) {
        const double vl = eval_validation(model_cfg, st.params, corpus.valid_tokens, train_cfg);
        res.metrics.rows.push_back(
            {step, "valid", vl, std::exp(vl), lr_at_step(train_cfg, step), wall_ms()});
        res.final_valid_loss = vl;
        res.final_valid_ppl = std::exp(vl);
    };

    if (hooks && hooks->on_params) hooks->on_params(0, st.params);
    log_valid(0);

    double ema_loss = 0.0;
    double min_ema = 0.0;
    double step_ms_total = 0.0;
    Tape tape;

    const int run_steps = train_cfg.max_steps > 0
                              ? std::min(train_cfg.max_steps, train_cfg.total_steps)
                              : train_cfg.total_steps;
    for (int s = 0; s < run_steps; ++s) {
        const auto step_t0 = Clock::now();
        const Batch batch = causal ? clm->next() : mlm->next();

        tape.clear();
        ModelVars vars = make_model_vars(tape, st.params);
        Rng* drop = model_cfg.dropout > 0.0 ? &dropout_rng : nullptr;
        BatchGraph bg = build_batch_graph(tape, vars, model_cfg, batch, drop);
        const double loss = bg.loss.value()[0];

        // Divergence detection, same step it appears.
        if (!std::isfinite(loss)) {
            st.diverged = DivergenceCause::nan_loss;
            break;
        }
        if (!tape.all_values_finite()) {
            st.diverged = DivergenceCause::inf_activation;
            break;
        }
        ema_loss = s == 0 ? loss : 0.9 * ema_loss + 0.1 * loss;
        min_ema = s == 0 ? ema_loss : std::min(min_ema, ema_loss);
        if (ema_loss > train_cfg.explosion_factor * min_ema) {
            st.diverged = DivergenceCause::loss_explosion;
            break;
        }

        tape.backward(bg.loss);
        std::vector<Tensor> grads;
        grads.reserve(refs.size());
        for (const Var& leaf : vars.leaves) grads.push_back(leaf.grad());

        if (hooks && hooks->on_grads) {
            StepObservation obs;
            obs.step = s + 1;
            obs.train_loss = loss;
            obs.params = &refs;
            obs.grads = &grads;
            hooks->on_grads(obs);
        }

        if (train_cfg.clip_norm) clip_gradients(grads, *train_cfg.clip_norm);
        const double lr = lr_at_step(train_cfg, s + 1);
        if (!adam_step(st, grads, lr, train_cfg)) break;

        if (hooks && hooks->on_params) hooks->on_params(st.step, st.params);
        step_ms_total += std::chrono::duration<double, std::milli>(Clock::now() - step_t0).count();

        const bool last = s + 1 == run_steps;
        if ((s + 1) % train_cfg.train_log_every == 0 || last) {
            res.metrics.rows.push_back({s + 1, "train", loss, std::exp(loss), lr, wall_ms()});
        }
        if ((s + 1) % train_cfg.valid_every == 0 || last) log_valid(s + 1);
    }

    res.steps_completed = st.step;
    res.cause = st.diverged;
    res.mean_step_wall_ms = st.step > 0 ? step_ms_total / st.step : 0.0;
    return res;
}

std::vector<StabilityResult> stability_ramp_test(const ModelConfig& model_cfg,
                                                 const TrainConfig& ramp_cfg,
                                                 const Corpus& corpus, int n_seeds,
                                                 uint64_t base_seed) {
    if (ramp_cfg.schedule != Schedule::ramp) {
        throw ValueError("stability_ramp_test: schedule must be ramp");
    }
    std::vector<StabilityResult> out;
    for (int i = 0; i < n_seeds; ++i) {
        ModelConfig mc = model_cfg;
        TrainConfig tc = ramp_cfg;
        mc.seed = base_seed + static_cast<uint64_t>(i);
        tc.seed = base_seed + static_cast<uint64_t>(i);
        TrainResult r = train(mc, tc, corpus);
        out.push_back({mc.seed, r.steps_completed, r.cause});
    }
    return out;
}

int median_steps_survived(std::vector<StabilityResult> results) {
    if (results.empty()) throw ValueError("median_steps_survived: empty results");
    std::sort(results.begin(), results.end(),
              [](const StabilityResult& a, const StabilityResult& b) {
                  return a.steps_survived < b.steps_survived;
              });
    return results[results.size() / 2].steps_survived;
}

}  // namespace nflab
