#pragma once

#include <string>
#include <utility>
#include <vector>

#include "nflab/data.hpp"
#include "nflab/training.hpp"

namespace nflab {

// Flat `key = value` configuration with dotted keys (model.d_model,
// train.peak_lr, ...). `#` starts a comment; blank lines are skipped.
// Parse/validation errors carry the offending line number. canonical_kv()
// echoes every effective key including defaults, so runs are fully
// self-describing.
struct LabConfig {
    ModelConfig model;
    TrainConfig train;

    std::vector<std::string> data_paths;   // comma-separated in the file
    double data_split_fraction = 0.9;
    uint64_t data_synth_bytes = 0;         // used when data.paths is empty
    uint64_t data_synth_seed = 42;

    bool diag_enabled = true;
    int diag_gradnorm_every = 1;
    int diag_scales_every = 50;
    std::vector<std::string> diag_params;  // empty = all parameters

    std::vector<std::string> stability_variants = {"pre_ln", "normformer"};
    int stability_max_steps = 4000;
    int stability_seeds = 3;

    int ablate_seeds = 1;

    static LabConfig from_file(const std::string& path);
    static LabConfig from_text(const std::string& text);

    // key=value override, e.g. from a --set flag.
    void apply_override(const std::string& assignment);

    void set_kv(const std::string& key, const std::string& value, int line = 0);
    std::vector<std::pair<std::string, std::string>> canonical_kv() const;

    void validate() const;
    Corpus load_corpus() const;
};

// Variant shorthand: "pre_ln", "post_ln", "normformer", optionally followed
// by +/- modifiers: normformer+res_scale-head_scale+qkv_ln.
BlockVariant variant_from_spec(const std::string& s);
std::string variant_to_spec(const BlockVariant& v);

}  // namespace nflab
