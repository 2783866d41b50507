#include "nflab/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "nflab/textio.hpp"

namespace nflab {

double mean_abs(const Tensor& t) {
    if (t.numel() == 0) return 0.0;
    double acc = 0.0;
    for (int64_t i = 0; i < t.numel(); ++i) acc += std::abs(t[i]);
    return acc / static_cast<double>(t.numel());
}

std::vector<GradNormRecord> record_grad_norms(const StepObservation& obs,
                                              const std::vector<std::string>& param_filter) {
    const auto& refs = *obs.params;
    const auto& grads = *obs.grads;
    if (!param_filter.empty()) {
        std::set<std::string> known;
        for (const auto& r : refs) known.insert(r.name);
        for (const auto& f : param_filter) {
            if (!known.count(f)) {
                throw ValueError("record_grad_norms: unknown param_name '" + f + "' in filter");
            }
        }
    }
    std::vector<GradNormRecord> out;
    for (size_t i = 0; i < refs.size(); ++i) {
        if (!param_filter.empty() &&
            std::find(param_filter.begin(), param_filter.end(), refs[i].name) ==
                param_filter.end()) {
            continue;
        }
        out.push_back({obs.step, refs[i].layer, refs[i].name, mean_abs(grads[i])});
    }
    return out;
}

std::vector<ScaleSnapshot> snapshot_scales(const ModelParams& params, int step) {
    std::vector<ScaleSnapshot> out;
    const auto copy_of = [](const Tensor& t) {
        return std::vector<double>(t.data(), t.data() + t.numel());
    };
    for (size_t l = 0; l < params.blocks.size(); ++l) {
        const auto& b = params.blocks[l];
        const int layer = static_cast<int>(l);
        if (b.ln_ffn_mid) out.push_back({step, layer, "ffn_ln_gamma", copy_of(b.ln_ffn_mid->gamma)});
        if (b.ln_post_attn) {
            out.push_back({step, layer, "post_attn_ln_gamma", copy_of(b.ln_post_attn->gamma)});
        }
        if (b.head_scale) out.push_back({step, layer, "head_scale_gamma", copy_of(b.head_scale->gamma)});
        if (b.res_scale) out.push_back({step, layer, "lambda_resid", copy_of(b.res_scale->lambda)});
    }
    return out;
}

std::string gradnorm_to_csv(const std::vector<GradNormRecord>& records) {
    std::string out = "step,layer,param,l1\n";
    for (const auto& r : records) {
        out += std::to_string(r.step) + "," + std::to_string(r.layer) + "," + r.param + "," +
               fmt_g17(r.l1) + "\n";
    }
    return out;
}

std::vector<GradNormRecord> gradnorm_from_csv(const std::string& text) {
    std::vector<GradNormRecord> out;
    const auto lines = split(text, '\n');
    for (size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        const auto f = split(lines[i], ',');
        if (f.size() != 4) throw ValueError("gradnorm csv: bad row '" + lines[i] + "'");
        out.push_back({std::stoi(f[0]), std::stoi(f[1]), f[2], std::stod(f[3])});
    }
    return out;
}

std::string scales_to_csv(const std::vector<ScaleSnapshot>& snaps) {
    std::string out = "step,layer,kind,index,value\n";
    for (const auto& s : snaps) {
        for (size_t i = 0; i < s.values.size(); ++i) {
            out += std::to_string(s.step) + "," + std::to_string(s.layer) + "," + s.kind + "," +
                   std::to_string(i) + "," + fmt_g17(s.values[i]) + "\n";
        }
    }
    return out;
}

std::vector<ScaleSnapshot> scales_from_csv(const std::string& text) {
    std::vector<ScaleSnapshot> out;
    const auto lines = split(text, '\n');
    for (size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        const auto f = split(lines[i], ',');
        if (f.size() != 5) throw ValueError("scales csv: bad row '" + lines[i] + "'");
        const int step = std::stoi(f[0]);
        const int layer = std::stoi(f[1]);
        const size_t index = static_cast<size_t>(std::stoul(f[3]));
        const double v = std::stod(f[4]);
        if (!out.empty() && out.back().step == step && out.back().layer == layer &&
            out.back().kind == f[2]) {
            if (out.back().values.size() != index) {
                throw ValueError("scales csv: non-contiguous index in row '" + lines[i] + "'");
            }
            out.back().values.push_back(v);
        } else {
            out.push_back({step, layer, f[2], {v}});
        }
    }
    return out;
}

namespace {

// Window means of l1 per (layer,param) key.
std::map<std::pair<int, std::string>, double> window_means(
    const std::vector<GradNormRecord>& records, int w0, int w1) {
    std::map<std::pair<int, std::string>, std::pair<double, int>> acc;
    for (const auto& r : records) {
        if (r.step < w0 || r.step > w1) continue;
        auto& a = acc[{r.layer, r.param}];
        a.first += r.l1;
        a.second += 1;
    }
    std::map<std::pair<int, std::string>, double> out;
    for (const auto& [k, v] : acc) out[k] = v.first / v.second;
    return out;
}

double window_mean_train_loss(const MetricLog& m, int w0, int w1) {
    double acc = 0.0;
    int n = 0;
    for (const auto& r : m.rows) {
        if (r.split == "train" && r.step >= w0 && r.step <= w1) {
            acc += r.loss;
            ++n;
        }
    }
    if (n == 0) {
        throw ValueError("grad_ratio_report: no train loss rows in window [" +
                         std::to_string(w0) + "," + std::to_string(w1) + "]");
    }
    return acc / n;
}

}  // namespace

double mismatch_ratio(const std::vector<GradNormRecord>& records, const std::string& param,
                      int w0, int w1) {
    double first_acc = 0.0, last_acc = 0.0;
    int first_n = 0, last_n = 0;
    int first_layer = 1 << 30, last_layer = -1;
    for (const auto& r : records) {
        if (r.layer < 0 || r.param != param) continue;
        first_layer = std::min(first_layer, r.layer);
        last_layer = std::max(last_layer, r.layer);
    }
    if (last_layer < 0) {
        throw ValueError("mismatch_ratio: no records for param '" + param + "'");
    }
    for (const auto& r : records) {
        if (r.param != param || r.step < w0 || r.step > w1) continue;
        if (r.layer == first_layer) {
            first_acc += r.l1;
            ++first_n;
        }
        if (r.layer == last_layer) {
            last_acc += r.l1;
            ++last_n;
        }
    }
    if (first_n == 0 || last_n == 0) {
        throw ValueError("mismatch_ratio: window [" + std::to_string(w0) + "," +
                         std::to_string(w1) + "] lacks records for layer " +
                         std::to_string(first_n == 0 ? first_layer : last_layer));
    }
    return (first_acc / first_n) / (last_acc / last_n);
}

std::vector<GradRatioRow> grad_ratio_report(const std::vector<GradNormRecord>& run_a,
                                            const MetricLog& metrics_a,
                                            const std::vector<GradNormRecord>& run_b,
                                            const MetricLog& metrics_b, int w0, int w1) {
    const auto mean_a = window_means(run_a, w0, w1);
    const auto mean_b = window_means(run_b, w0, w1);
    if (mean_a.empty() || mean_b.empty()) {
        throw ValueError("grad_ratio_report: no gradient records in window [" +
                         std::to_string(w0) + "," + std::to_string(w1) + "]");
    }
    const double loss_a = window_mean_train_loss(metrics_a, w0, w1);
    const double loss_b = window_mean_train_loss(metrics_b, w0, w1);

    std::vector<GradRatioRow> out;
    for (const auto& [key, va] : mean_a) {
        const auto it = mean_b.find(key);
        if (it == mean_b.end()) continue;
        const double a_norm = va / loss_a;
        const double b_norm = it->second / loss_b;
        out.push_back({key.first, key.second, a_norm / b_norm});
    }
    if (out.empty()) throw ValueError("grad_ratio_report: runs share no (layer,param) keys");
    return out;
}

TrainHooks DiagnosticsRecorder::hooks() {
    TrainHooks h;
    h.on_grads = [this](const StepObservation& obs) {
        if (obs.step == 1 || obs.step % opt_.gradnorm_every == 0) {
            auto recs = record_grad_norms(obs, opt_.param_filter);
            grads_.insert(grads_.end(), recs.begin(), recs.end());
        }
    };
    h.on_params = [this](int step, const ModelParams& params) {
        last_seen_ = snapshot_scales(params, step);
        if (step % opt_.scales_every == 0) {
            scales_.insert(scales_.end(), last_seen_.begin(), last_seen_.end());
            last_recorded_step_ = step;
        }
    };
    return h;
}

std::vector<ScaleSnapshot> DiagnosticsRecorder::scale_records() const {
    std::vector<ScaleSnapshot> out = scales_;
    if (!last_seen_.empty() && last_seen_.front().step != last_recorded_step_) {
        out.insert(out.end(), last_seen_.begin(), last_seen_.end());
    }
    return out;
}

void DiagnosticsRecorder::write(const std::string& dir) const {
    namespace fs = std::filesystem;
    write_text_file((fs::path(dir) / "gradnorm.csv").string(), gradnorm_to_csv(grads_));
    write_text_file((fs::path(dir) / "scales.csv").string(), scales_to_csv(scale_records()));
}

}  // namespace nflab
