#pragma once

#include <optional>
#include <string>
#include <vector>

#include "nflab/tape.hpp"

namespace nflab {

enum class Arrangement { post_ln, pre_ln, normformer };
enum class Activation { gelu, relu_squared };
enum class LnStyle { standard, no_bias_no_mean };

// Which layer arrangement to use and which of the modifications are active.
// The modification flags only apply to the normformer arrangement; the two
// baselines reject them.
struct BlockVariant {
    Arrangement arrangement = Arrangement::pre_ln;
    bool head_scale = false;
    bool post_attn_ln = false;
    bool ffn_ln = false;
    bool res_scale = false;
    bool qkv_ln = false;
    Activation activation = Activation::gelu;
    LnStyle ln_style = LnStyle::standard;

    static BlockVariant pre_ln();
    static BlockVariant post_ln();
    static BlockVariant normformer();  // head_scale + post_attn_ln + ffn_ln on

    void validate() const;
    std::string label() const;  // e.g. "normformer+res_scale", "pre_ln"
};

Arrangement arrangement_from_string(const std::string& s);
std::string to_string(Arrangement a);
std::string to_string(Activation a);
std::string to_string(LnStyle s);

// --- parameter bundles ---

struct LayerNormParams {
    Tensor gamma;  // [d], init 1
    Tensor beta;   // [d], init 0; empty when ln_style drops the bias
    static LayerNormParams init(int d, LnStyle style);
};

struct AttentionParams {
    Tensor w_q, w_k, w_v, w_o;  // [d_model, d_model]; w_q/w_k/w_v partitioned by head
    Tensor b_q, b_k, b_v, b_o;  // [d_model]
};

struct FFNParams {
    Tensor w1;  // [d_model, d_ffn]
    Tensor b1;  // [d_ffn]
    Tensor w2;  // [d_ffn, d_model]
    Tensor b2;  // [d_model]
};

struct HeadScaleParams {
    Tensor gamma;  // [n_heads], init exactly 1
};

struct ResScaleParams {
    Tensor lambda;  // [d_model], init exactly 1
};

// Per-layer parameters. Optional slots are present exactly when the variant
// requires them:
//   pre_ln      -> ln_pre_attn, ln_pre_ffn
//   post_ln     -> ln_post_attn (after the attention residual),
//                  ln_post_ffn (after the FFN residual)
//   normformer  -> ln_pre_attn, ln_pre_ffn, plus ln_post_attn / ln_ffn_mid /
//                  head_scale / res_scale / ln_q,ln_k,ln_v per flags
struct BlockParams {
    AttentionParams attn;
    FFNParams ffn;
    std::optional<LayerNormParams> ln_pre_attn, ln_pre_ffn;
    std::optional<LayerNormParams> ln_post_attn, ln_post_ffn;
    std::optional<LayerNormParams> ln_ffn_mid;
    std::optional<LayerNormParams> ln_q, ln_k, ln_v;
    std::optional<HeadScaleParams> head_scale;
    std::optional<ResScaleParams> res_scale;
};

BlockParams init_block_params(const BlockVariant& variant, int d_model, int n_heads,
                              int d_ffn, double init_std, double out_proj_std, Rng& rng);

// Named reference to one parameter tensor; `layer` is -1 for model-level
// parameters. Names come from a fixed enumeration ("attn.w_q", "ffn.w2", ...).
struct ParamRef {
    std::string name;
    int layer;
    Tensor* tensor;
};

void collect_block_params(BlockParams& p, int layer, std::vector<ParamRef>& out);

// --- tape-side mirrors ---

struct LayerNormVars {
    Var gamma, beta;
};

struct AttentionVars {
    Var w_q, w_k, w_v, w_o, b_q, b_k, b_v, b_o;
};

struct FFNVars {
    Var w1, b1, w2, b2;
};

struct BlockVars {
    AttentionVars attn;
    FFNVars ffn;
    std::optional<LayerNormVars> ln_pre_attn, ln_pre_ffn;
    std::optional<LayerNormVars> ln_post_attn, ln_post_ffn;
    std::optional<LayerNormVars> ln_ffn_mid;
    std::optional<LayerNormVars> ln_q, ln_k, ln_v;
    Var head_scale_gamma;  // invalid when absent
    Var res_scale_lambda;  // invalid when absent
};

// Creates leaves in the same order as collect_block_params; when `collected`
// is given, the leaf Vars are appended so callers can zip them with refs.
BlockVars make_block_vars(Tape& t, const BlockParams& p, std::vector<Var>* collected = nullptr);

struct BlockRunConfig {
    int n_heads = 1;
    double ln_eps = 1e-5;
    bool causal = true;
    double dropout_p = 0.0;
    Rng* dropout_rng = nullptr;
};

// Standard multi-head self-attention (no modifications).
Var multi_head_attention(Tape& t, Var x, const AttentionVars& p, int n_heads, bool causal);

// Multi-head attention with per-head learned scaling applied before the
// output projection. gamma_heads is a [n_heads] leaf.
Var head_scale_mha(Tape& t, Var x, const AttentionVars& p, Var gamma_heads, int n_heads,
                   bool causal);

// lambda ∘ x + sublayer_out with lambda broadcast over positions.
Var res_scale_combine(Tape& t, Var x, Var sublayer_out, Var lambda);

// Arrangement-checked block forwards.
Var pre_ln_block(Tape& t, Var x, const BlockVars& p, const BlockVariant& v,
                 const BlockRunConfig& rc);
Var post_ln_block(Tape& t, Var x, const BlockVars& p, const BlockVariant& v,
                  const BlockRunConfig& rc);
Var normformer_block(Tape& t, Var x, const BlockVars& p, const BlockVariant& v,
                     const BlockRunConfig& rc);
Var block_forward(Tape& t, Var x, const BlockVars& p, const BlockVariant& v,
                  const BlockRunConfig& rc);

// Convenience for tests: forward a single block outside any training loop.
Tensor run_block(const BlockParams& p, const BlockVariant& v, const Tensor& x,
                 const BlockRunConfig& rc);

}  // namespace nflab
