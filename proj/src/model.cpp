#include "nflab/model.hpp"

#include <cmath>

namespace nflab {

std::string to_string(Objective o) {
    return o == Objective::causal ? "causal" : "masked";
}

void ModelConfig::validate() const {
    if (vocab_size < 2) throw ValueError("model.vocab_size must be >= 2");
    if (n_layers < 1) throw ValueError("model.n_layers must be >= 1");
    if (d_model < 1 || n_heads < 1) throw ValueError("model.d_model and model.n_heads must be >= 1");
    if (d_model % n_heads != 0) {
        throw ValueError("model.d_model " + std::to_string(d_model) +
                         " not divisible by model.n_heads " + std::to_string(n_heads));
    }
    if (d_model % 2 != 0) throw ValueError("model.d_model must be even (sinusoidal positions)");
    if (d_ffn < 1) throw ValueError("model.d_ffn must be >= 1");
    if (max_seq_len < 1) throw ValueError("model.max_seq_len must be >= 1");
    if (dropout < 0.0 || dropout >= 1.0) throw ValueError("model.dropout must be in [0,1)");
    if (ln_eps <= 0.0) throw ValueError("model.ln_eps must be > 0");
    variant.validate();
}

namespace {

ModelParams build_params(const ModelConfig& cfg, bool random_init) {
    cfg.validate();
    Rng rng = Rng(cfg.seed).split(0);  // stream 0: parameter init
    const double init_std = random_init ? cfg.init_std : 0.0;
    const double out_std = random_init
                               ? cfg.init_std / std::sqrt(2.0 * cfg.n_layers)
                               : 0.0;
    ModelParams p;
    p.token_embedding = random_init
                            ? Tensor::randn({cfg.vocab_size, cfg.d_model}, init_std, rng)
                            : Tensor::zeros({cfg.vocab_size, cfg.d_model});
    p.blocks.reserve(static_cast<size_t>(cfg.n_layers));
    for (int l = 0; l < cfg.n_layers; ++l) {
        p.blocks.push_back(init_block_params(cfg.variant, cfg.d_model, cfg.n_heads, cfg.d_ffn,
                                             init_std, out_std, rng));
    }
    p.final_ln = LayerNormParams::init(cfg.d_model, cfg.variant.ln_style);
    if (!cfg.tie_embeddings) {
        p.output_projection = random_init
                                  ? Tensor::randn({cfg.d_model, cfg.vocab_size}, init_std, rng)
                                  : Tensor::zeros({cfg.d_model, cfg.vocab_size});
    }
    return p;
}

}  // namespace

ModelParams init_model_params(const ModelConfig& cfg) { return build_params(cfg, true); }
ModelParams alloc_model_params(const ModelConfig& cfg) { return build_params(cfg, false); }

std::vector<ParamRef> collect_params(ModelParams& p) {
    std::vector<ParamRef> out;
    out.push_back({"token_embedding", -1, &p.token_embedding});
    for (size_t l = 0; l < p.blocks.size(); ++l) {
        collect_block_params(p.blocks[l], static_cast<int>(l), out);
    }
    out.push_back({"final_ln.gamma", -1, &p.final_ln.gamma});
    if (!p.final_ln.beta.empty()) out.push_back({"final_ln.beta", -1, &p.final_ln.beta});
    if (p.output_projection) out.push_back({"output_projection", -1, &*p.output_projection});
    return out;
}

std::string qualified_param_name(const ParamRef& ref) {
    if (ref.layer < 0) return ref.name;
    return "blocks." + std::to_string(ref.layer) + "." + ref.name;
}

Tensor sinusoidal_positions(int seq_len, int d_model) {
    if (d_model % 2 != 0) {
        throw ValueError("sinusoidal_positions: d_model must be even, got " +
                         std::to_string(d_model));
    }
    if (seq_len < 1) throw ValueError("sinusoidal_positions: seq_len must be >= 1");
    Tensor pe({seq_len, d_model});
    for (int pos = 0; pos < seq_len; ++pos) {
        for (int i = 0; i < d_model / 2; ++i) {
            const double freq = std::pow(10000.0, -2.0 * i / d_model);
            pe.at(pos, 2 * i) = std::sin(pos * freq);
            pe.at(pos, 2 * i + 1) = std::cos(pos * freq);
        }
    }
    return pe;
}

ModelVars make_model_vars(Tape& t, const ModelParams& p) {
    ModelVars v;
    v.token_embedding = t.leaf(p.token_embedding);
    v.leaves.push_back(v.token_embedding);
    v.blocks.reserve(p.blocks.size());
    for (const auto& bp : p.blocks) {
        v.blocks.push_back(make_block_vars(t, bp, &v.leaves));
    }
    v.final_ln.gamma = t.leaf(p.final_ln.gamma);
    v.leaves.push_back(v.final_ln.gamma);
    if (!p.final_ln.beta.empty()) {
        v.final_ln.beta = t.leaf(p.final_ln.beta);
        v.leaves.push_back(v.final_ln.beta);
    }
    if (p.output_projection) {
        v.output_projection = t.leaf(*p.output_projection);
        v.leaves.push_back(v.output_projection);
    }
    return v;
}

Var model_forward(Tape& t, const ModelVars& vars, const ModelConfig& cfg,
                  const std::vector<int>& tokens, Rng* dropout_rng) {
    const int seq = static_cast<int>(tokens.size());
    if (seq < 1) throw ValueError("model_forward: empty token sequence");
    if (seq > cfg.max_seq_len) {
        throw ValueError("model_forward: sequence length " + std::to_string(seq) +
                         " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
    }
    for (size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i] < 0 || tokens[i] >= cfg.vocab_size) {
            throw ValueError("model_forward: token id " + std::to_string(tokens[i]) +
                             " at position " + std::to_string(i) + " out of range [0," +
                             std::to_string(cfg.vocab_size) + ")");
        }
    }

    Var x = add(embedding_rows(vars.token_embedding, tokens),
                t.leaf(sinusoidal_positions(seq, cfg.d_model)));
    if (cfg.dropout > 0.0 && dropout_rng) x = dropout(x, cfg.dropout, *dropout_rng);

    BlockRunConfig rc;
    rc.n_heads = cfg.n_heads;
    rc.ln_eps = cfg.ln_eps;
    rc.causal = cfg.objective == Objective::causal;
    rc.dropout_p = dropout_rng ? cfg.dropout : 0.0;
    rc.dropout_rng = dropout_rng;
    for (const auto& b : vars.blocks) {
        x = block_forward(t, x, b, cfg.variant, rc);
    }

    const bool standard = cfg.variant.ln_style == LnStyle::standard;
    x = layer_norm(x, vars.final_ln.gamma, vars.final_ln.beta, cfg.ln_eps, standard, standard);

    if (cfg.tie_embeddings) return matmul_nt(x, vars.token_embedding);
    return matmul(x, vars.output_projection);
}

namespace {

Tensor forward_impl(const ModelConfig& cfg, const ModelParams& params,
                    const std::vector<int>& tokens, Objective objective) {
    ModelConfig c = cfg;
    c.objective = objective;
    Tape t;
    ModelVars vars = make_model_vars(t, params);
    return model_forward(t, vars, c, tokens).value();
}

}  // namespace

Tensor forward_clm(const ModelConfig& cfg, const ModelParams& params,
                   const std::vector<int>& tokens) {
    return forward_impl(cfg, params, tokens, Objective::causal);
}

Tensor forward_mlm(const ModelConfig& cfg, const ModelParams& params,
                   const std::vector<int>& tokens) {
    return forward_impl(cfg, params, tokens, Objective::masked);
}

ParamCount count_parameters(const ModelConfig& cfg) {
    cfg.validate();
    const int64_t d = cfg.d_model, f = cfg.d_ffn, v = cfg.vocab_size, L = cfg.n_layers;
    const int64_t ln = cfg.variant.ln_style == LnStyle::standard ? 2 * d : d;
    const int64_t ln_mid = cfg.variant.ln_style == LnStyle::standard ? 2 * f : f;

    int64_t per_layer = 4 * d * d + 4 * d   // attention projections + biases
                        + d * f + f + f * d + d;  // FFN
    switch (cfg.variant.arrangement) {
        case Arrangement::pre_ln:
        case Arrangement::post_ln:
            per_layer += 2 * ln;
            break;
        case Arrangement::normformer:
            per_layer += 2 * ln;  // pre-attn + pre-ffn, shared with the baseline
            if (cfg.variant.post_attn_ln) per_layer += ln;
            if (cfg.variant.ffn_ln) per_layer += ln_mid;
            if (cfg.variant.head_scale) per_layer += cfg.n_heads;
            if (cfg.variant.res_scale) per_layer += d;
            if (cfg.variant.qkv_ln) per_layer += 3 * ln;
            break;
    }

    ParamCount out;
    out.total = v * d + L * per_layer + ln + (cfg.tie_embeddings ? 0 : d * v);

    int64_t added = 0;
    if (cfg.variant.arrangement == Arrangement::normformer) {
        if (cfg.variant.post_attn_ln) added += ln;
        if (cfg.variant.ffn_ln) added += ln_mid;
        if (cfg.variant.head_scale) added += cfg.n_heads;
        if (cfg.variant.res_scale) added += d;
        if (cfg.variant.qkv_ln) added += 3 * ln;
    }
    out.added_by_modifications = L * added;
    return out;
}

ParamCount count_parameters_enumerated(const ModelConfig& cfg) {
    ModelParams p = alloc_model_params(cfg);
    auto refs = collect_params(p);
    ParamCount out;
    for (const auto& r : refs) out.total += r.tensor->numel();

    // Baseline storage: same config with the pre_ln arrangement (post_ln has
    // the same parameter count; the additions are measured against no flags).
    ModelConfig base = cfg;
    base.variant = BlockVariant::pre_ln();
    base.variant.activation = cfg.variant.activation;
    base.variant.ln_style = cfg.variant.ln_style;
    ModelParams bp = alloc_model_params(base);
    int64_t base_total = 0;
    for (const auto& r : collect_params(bp)) base_total += r.tensor->numel();
    out.added_by_modifications = out.total - base_total;
    return out;
}

}  // namespace nflab
