#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "nflab/blocks.hpp"

namespace nflab {

enum class Objective { causal, masked };

std::string to_string(Objective o);

struct ModelConfig {
    int vocab_size = 258;
    int d_model = 64;
    int n_heads = 4;
    int n_layers = 4;
    int d_ffn = 256;
    int max_seq_len = 512;
    BlockVariant variant = BlockVariant::pre_ln();
    Objective objective = Objective::causal;
    bool tie_embeddings = true;
    double dropout = 0.0;
    double ln_eps = 1e-5;
    double init_std = 0.02;
    uint64_t seed = 1;

    void validate() const;
};

struct ModelParams {
    Tensor token_embedding;  // [vocab, d_model]
    std::vector<BlockParams> blocks;
    LayerNormParams final_ln;
    std::optional<Tensor> output_projection;  // [d_model, vocab]; absent when tied
};

// Gaussian init (std init_std; output-side projections scaled by
// 1/sqrt(2*n_layers)); scale parameters start at exactly 1, biases at 0.
ModelParams init_model_params(const ModelConfig& cfg);

// Shape-only allocation (all zeros); used for storage enumeration and
// checkpoint loading.
ModelParams alloc_model_params(const ModelConfig& cfg);

// Stable name/order enumeration of every trainable tensor. Model-level
// parameters carry layer = -1 and names "token_embedding", "final_ln.gamma",
// "final_ln.beta", "output_projection".
std::vector<ParamRef> collect_params(ModelParams& p);

// Fully-qualified checkpoint name, e.g. "blocks.2.ffn.w2".
std::string qualified_param_name(const ParamRef& ref);

// PE[pos,2i] = sin(pos/10000^(2i/d)), PE[pos,2i+1] = cos(pos/10000^(2i/d)).
Tensor sinusoidal_positions(int seq_len, int d_model);

// Tape-side model: leaves for every parameter, in collect_params order.
struct ModelVars {
    Var token_embedding;
    std::vector<BlockVars> blocks;
    LayerNormVars final_ln;
    Var output_projection;   // invalid when tied
    std::vector<Var> leaves; // aligned with collect_params order
};

ModelVars make_model_vars(Tape& t, const ModelParams& p);

// Forward pass for one token sequence: embeddings + sinusoidal positions,
// n_layers blocks, final LayerNorm, (tied) output projection. Returns
// [seq, vocab] logits. Causality follows cfg.objective unless overridden.
Var model_forward(Tape& t, const ModelVars& vars, const ModelConfig& cfg,
                  const std::vector<int>& tokens, Rng* dropout_rng = nullptr);

// Convenience single-sequence entry points (build a private tape).
Tensor forward_clm(const ModelConfig& cfg, const ModelParams& params,
                   const std::vector<int>& tokens);
Tensor forward_mlm(const ModelConfig& cfg, const ModelParams& params,
                   const std::vector<int>& tokens);

struct ParamCount {
    int64_t total = 0;
    int64_t added_by_modifications = 0;
};

// Closed-form parameter count. added_by_modifications counts parameters the
// normformer additions introduce on top of the pre_ln baseline:
//   per layer: post_attn_ln + ffn_ln LayerNorms, n_heads head scales,
//   d_model residual scales, 3 more LayerNorms for qkv_ln.
ParamCount count_parameters(const ModelConfig& cfg);

// Same quantity measured by walking allocated parameter storage.
ParamCount count_parameters_enumerated(const ModelConfig& cfg);

// --- checkpoint format ---
// Single file: text header with the canonical config key=value lines, then
// named tensors with shape headers and little-endian IEEE-754 float64 data.
// Round-trips bit-exactly.
void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, std::string>>& config_kv,
                     ModelParams& params);

struct Checkpoint {
    std::vector<std::pair<std::string, std::string>> config_kv;
    std::vector<std::pair<std::string, Tensor>> tensors;
};

Checkpoint read_checkpoint(const std::string& path);

// Restores parameter tensors by qualified name into an allocated ModelParams.
void load_checkpoint_params(const Checkpoint& ck, ModelParams& params);

}  // namespace nflab
