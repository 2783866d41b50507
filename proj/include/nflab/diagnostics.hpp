#pragma once

#include <string>
#include <vector>

#include "nflab/training.hpp"

namespace nflab {

// One (step, layer, parameter) gradient-magnitude sample. l1 is the mean
// absolute entry value; layer is -1 for model-level parameters.
struct GradNormRecord {
    int step = 0;
    int layer = 0;
    std::string param;
    double l1 = 0.0;
};

// Values of one learned scale parameter at one step.
struct ScaleSnapshot {
    int step = 0;
    int layer = 0;
    std::string kind;  // ffn_ln_gamma | post_attn_ln_gamma | head_scale_gamma | lambda_resid
    std::vector<double> values;
};

double mean_abs(const Tensor& t);

// Pure observation of the current step's gradients. An empty filter records
// every parameter; unknown names in the filter raise ValueError.
std::vector<GradNormRecord> record_grad_norms(const StepObservation& obs,
                                              const std::vector<std::string>& param_filter);

// Copies the current values of all learned scale parameters present in the
// variant. Absent kinds simply produce no entries.
std::vector<ScaleSnapshot> snapshot_scales(const ModelParams& params, int step);

// CSV schemas: gradnorm "step,layer,param,l1"; scales
// "step,layer,kind,index,value". Doubles use 17 significant digits so the
// exported values reparse bit-exactly.
std::string gradnorm_to_csv(const std::vector<GradNormRecord>& records);
std::vector<GradNormRecord> gradnorm_from_csv(const std::string& text);
std::string scales_to_csv(const std::vector<ScaleSnapshot>& snaps);
std::vector<ScaleSnapshot> scales_from_csv(const std::string& text);

// mean l1 of `param` at the earliest layer divided by the same at the
// deepest layer, over steps in [w0, w1]. Errors when either end of the
// network has no records in the window.
double mismatch_ratio(const std::vector<GradNormRecord>& records, const std::string& param,
                      int w0, int w1);

struct GradRatioRow {
    int layer = 0;
    std::string param;
    double ratio = 0.0;
};

// Per-(layer,param) ratio of window-mean gradient norms between two runs,
// each normalized by its run's window-mean training loss. Only keys present
// in both runs are reported; an empty window raises ValueError.
std::vector<GradRatioRow> grad_ratio_report(const std::vector<GradNormRecord>& run_a,
                                            const MetricLog& metrics_a,
                                            const std::vector<GradNormRecord>& run_b,
                                            const MetricLog& metrics_b, int w0, int w1);

// Hook-driven recorder used by the training CLI. Recording never mutates
// training state; runs with the recorder attached produce bit-identical
// metric logs to runs without it.
class DiagnosticsRecorder {
public:
    struct Options {
        int gradnorm_every = 1;
        int scales_every = 50;
        std::vector<std::string> param_filter;  // empty = all parameters
    };

    explicit DiagnosticsRecorder(Options opt) : opt_(std::move(opt)) {}

    TrainHooks hooks();

    const std::vector<GradNormRecord>& grad_records() const { return grads_; }
    // Snapshot records including the final step (appended if the cadence
    // missed it).
    std::vector<ScaleSnapshot> scale_records() const;

    void write(const std::string& dir) const;  // gradnorm.csv + scales.csv

private:
    Options opt_;
    std::vector<GradNormRecord> grads_;
    std::vector<ScaleSnapshot> scales_;
    std::vector<ScaleSnapshot> last_seen_;
    int last_recorded_step_ = -1;
};

}  // namespace nflab
