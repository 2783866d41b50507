#include "nflab/blocks.hpp"

#include <cmath>

namespace nflab {

BlockVariant BlockVariant::pre_ln() {
    BlockVariant v;
    v.arrangement = Arrangement::pre_ln;
    return v;
}

BlockVariant BlockVariant::post_ln() {
    BlockVariant v;
    v.arrangement = Arrangement::post_ln;
    return v;
}

BlockVariant BlockVariant::normformer() {
    BlockVariant v;
    v.arrangement = Arrangement::normformer;
    v.head_scale = true;
    v.post_attn_ln = true;
    v.ffn_ln = true;
    return v;
}

void BlockVariant::validate() const {
    if (arrangement != Arrangement::normformer &&
        (head_scale || post_attn_ln || ffn_ln || res_scale || qkv_ln)) {
        throw ValueError("variant: modification flags require arrangement=normformer");
    }
}

std::string BlockVariant::label() const {
    std::string s = to_string(arrangement);
    if (arrangement == Arrangement::normformer) {
        if (!head_scale) s += "-head_scale";
        if (!post_attn_ln) s += "-post_attn_ln";
        if (!ffn_ln) s += "-ffn_ln";
        if (res_scale) s += "+res_scale";
        if (qkv_ln) s += "+qkv_ln";
    }
    if (activation == Activation::relu_squared) s += "+relu2";
    if (ln_style == LnStyle::no_bias_no_mean) s += "+rms_ln";
    return s;
}

Arrangement arrangement_from_string(const std::string& s) {
    if (s == "post_ln") return Arrangement::post_ln;
    if (s == "pre_ln") return Arrangement::pre_ln;
    if (s == "normformer") return Arrangement::normformer;
    throw ValueError("unknown arrangement '" + s + "' (post_ln|pre_ln|normformer)");
}

std::string to_string(Arrangement a) {
    switch (a) {
        case Arrangement::post_ln: return "post_ln";
        case Arrangement::pre_ln: return "pre_ln";
        case Arrangement::normformer: return "normformer";
    }
    return "?";
}

std::string to_string(Activation a) {
    return a == Activation::gelu ? "gelu" : "relu_squared";
}

std::string to_string(LnStyle s) {
    return s == LnStyle::standard ? "standard" : "no_bias_no_mean";
}

LayerNormParams LayerNormParams::init(int d, LnStyle style) {
    LayerNormParams p;
    p.gamma = Tensor::full({d}, 1.0);
    if (style == LnStyle::standard) p.beta = Tensor::zeros({d});
    return p;
}

BlockParams init_block_params(const BlockVariant& variant, int d_model, int n_heads,
                              int d_ffn, double init_std, double out_proj_std, Rng& rng) {
    variant.validate();
    if (d_model % n_heads != 0) {
        throw ValueError("init_block_params: d_model " + std::to_string(d_model) +
                         " not divisible by n_heads " + std::to_string(n_heads));
    }
    BlockParams p;
    p.attn.w_q = Tensor::randn({d_model, d_model}, init_std, rng);
    p.attn.w_k = Tensor::randn({d_model, d_model}, init_std, rng);
    p.attn.w_v = Tensor::randn({d_model, d_model}, init_std, rng);
    p.attn.w_o = Tensor::randn({d_model, d_model}, out_proj_std, rng);
    p.attn.b_q = Tensor::zeros({d_model});
    p.attn.b_k = Tensor::zeros({d_model});
    p.attn.b_v = Tensor::zeros({d_model});
    p.attn.b_o = Tensor::zeros({d_model});
    p.ffn.w1 = Tensor::randn({d_model, d_ffn}, init_std, rng);
    p.ffn.b1 = Tensor::zeros({d_ffn});
    p.ffn.w2 = Tensor::randn({d_ffn, d_model}, out_proj_std, rng);
    p.ffn.b2 = Tensor::zeros({d_model});

    const LnStyle st = variant.ln_style;
    switch (variant.arrangement) {
        case Arrangement::pre_ln:
            p.ln_pre_attn = LayerNormParams::init(d_model, st);
            p.ln_pre_ffn = LayerNormParams::init(d_model, st);
            break;
        case Arrangement::post_ln:
            p.ln_post_attn = LayerNormParams::init(d_model, st);
            p.ln_post_ffn = LayerNormParams::init(d_model, st);
            break;
        case Arrangement::normformer:
            p.ln_pre_attn = LayerNormParams::init(d_model, st);
            p.ln_pre_ffn = LayerNormParams::init(d_model, st);
            if (variant.post_attn_ln) p.ln_post_attn = LayerNormParams::init(d_model, st);
            if (variant.ffn_ln) p.ln_ffn_mid = LayerNormParams::init(d_ffn, st);
            if (variant.qkv_ln) {
                p.ln_q = LayerNormParams::init(d_model, st);
                p.ln_k = LayerNormParams::init(d_model, st);
                p.ln_v = LayerNormParams::init(d_model, st);
            }
            if (variant.head_scale) p.head_scale = HeadScaleParams{Tensor::full({n_heads}, 1.0)};
            if (variant.res_scale) p.res_scale = ResScaleParams{Tensor::full({d_model}, 1.0)};
            break;
    }
    return p;
}

namespace {

void collect_ln(const char* base, std::optional<LayerNormParams>& ln, int layer,
                std::vector<ParamRef>& out) {
    if (!ln) return;
    out.push_back({std::string(base) + ".gamma", layer, &ln->gamma});
    if (!ln->beta.empty()) out.push_back({std::string(base) + ".beta", layer, &ln->beta});
}

}  // namespace

void collect_block_params(BlockParams& p, int layer, std::vector<ParamRef>& out) {
    out.push_back({"attn.w_q", layer, &p.attn.w_q});
    out.push_back({"attn.b_q", layer, &p.attn.b_q});
    out.push_back({"attn.w_k", layer, &p.attn.w_k});
    out.push_back({"attn.b_k", layer, &p.attn.b_k});
    out.push_back({"attn.w_v", layer, &p.attn.w_v});
    out.push_back({"attn.b_v", layer, &p.attn.b_v});
    out.push_back({"attn.w_o", layer, &p.attn.w_o});
    out.push_back({"attn.b_o", layer, &p.attn.b_o});
    out.push_back({"ffn.w1", layer, &p.ffn.w1});
    out.push_back({"ffn.b1", layer, &p.ffn.b1});
    out.push_back({"ffn.w2", layer, &p.ffn.w2});
    out.push_back({"ffn.b2", layer, &p.ffn.b2});
    collect_ln("ln_pre_attn", p.ln_pre_attn, layer, out);
    collect_ln("ln_pre_ffn", p.ln_pre_ffn, layer, out);
    collect_ln("ln_post_attn", p.ln_post_attn, layer, out);
    collect_ln("ln_post_ffn", p.ln_post_ffn, layer, out);
    collect_ln("ln_ffn_mid", p.ln_ffn_mid, layer, out);
    collect_ln("ln_q", p.ln_q, layer, out);
    collect_ln("ln_k", p.ln_k, layer, out);
    collect_ln("ln_v", p.ln_v, layer, out);
    if (p.head_scale) out.push_back({"head_scale.gamma", layer, &p.head_scale->gamma});
    if (p.res_scale) out.push_back({"res_scale.lambda", layer, &p.res_scale->lambda});
}

namespace {

LayerNormVars make_ln_vars(Tape& t, const LayerNormParams& p, std::vector<Var>* collected) {
    LayerNormVars v;
    v.gamma = t.leaf(p.gamma);
    if (collected) collected->push_back(v.gamma);
    if (!p.beta.empty()) {
        v.beta = t.leaf(p.beta);
        if (collected) collected->push_back(v.beta);
    }
    return v;
}

void maybe_ln_vars(Tape& t, const std::optional<LayerNormParams>& p,
                   std::optional<LayerNormVars>& out, std::vector<Var>* collected) {
    if (p) out = make_ln_vars(t, *p, collected);
}

Var leaf_of(Tape& t, const Tensor& v, std::vector<Var>* collected) {
    Var x = t.leaf(v);
    if (collected) collected->push_back(x);
    return x;
}

}  // namespace

BlockVars make_block_vars(Tape& t, const BlockParams& p, std::vector<Var>* collected) {
    BlockVars v;
    v.attn.w_q = leaf_of(t, p.attn.w_q, collected);
    v.attn.b_q = leaf_of(t, p.attn.b_q, collected);
    v.attn.w_k = leaf_of(t, p.attn.w_k, collected);
    v.attn.b_k = leaf_of(t, p.attn.b_k, collected);
    v.attn.w_v = leaf_of(t, p.attn.w_v, collected);
    v.attn.b_v = leaf_of(t, p.attn.b_v, collected);
    v.attn.w_o = leaf_of(t, p.attn.w_o, collected);
    v.attn.b_o = leaf_of(t, p.attn.b_o, collected);
    v.ffn.w1 = leaf_of(t, p.ffn.w1, collected);
    v.ffn.b1 = leaf_of(t, p.ffn.b1, collected);
    v.ffn.w2 = leaf_of(t, p.ffn.w2, collected);
    v.ffn.b2 = leaf_of(t, p.ffn.b2, collected);
    maybe_ln_vars(t, p.ln_pre_attn, v.ln_pre_attn, collected);
    maybe_ln_vars(t, p.ln_pre_ffn, v.ln_pre_ffn, collected);
    maybe_ln_vars(t, p.ln_post_attn, v.ln_post_attn, collected);
    maybe_ln_vars(t, p.ln_post_ffn, v.ln_post_ffn, collected);
    maybe_ln_vars(t, p.ln_ffn_mid, v.ln_ffn_mid, collected);
    maybe_ln_vars(t, p.ln_q, v.ln_q, collected);
    maybe_ln_vars(t, p.ln_k, v.ln_k, collected);
    maybe_ln_vars(t, p.ln_v, v.ln_v, collected);
    if (p.head_scale) v.head_scale_gamma = leaf_of(t, p.head_scale->gamma, collected);
    if (p.res_scale) v.res_scale_lambda = leaf_of(t, p.res_scale->lambda, collected);
    return v;
}

namespace {

Var apply_ln(Tape&, Var x, const LayerNormVars& ln, LnStyle style, double eps) {
    const bool standard = style == LnStyle::standard;
    return layer_norm(x, ln.gamma, ln.beta, eps, /*center=*/standard,
                      /*affine_bias=*/standard);
}

struct AttentionOptions {
    int n_heads = 1;
    bool causal = true;
    Var head_scale;  // invalid => unscaled
    const LayerNormVars* ln_q = nullptr;
    const LayerNormVars* ln_k = nullptr;
    const LayerNormVars* ln_v = nullptr;
    LnStyle ln_style = LnStyle::standard;
    double ln_eps = 1e-5;
};

Var attention_core(Tape& t, Var x, const AttentionVars& p, const AttentionOptions& o) {
    const int d_model = x.value().cols();
    if (d_model % o.n_heads != 0) {
        throw ShapeError("attention: d_model " + std::to_string(d_model) +
                         " not divisible by n_heads " + std::to_string(o.n_heads));
    }
    const int d_head = d_model / o.n_heads;
    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(d_head));

    Var q = add_rows(matmul(x, p.w_q), p.b_q);
    Var k = add_rows(matmul(x, p.w_k), p.b_k);
    Var v = add_rows(matmul(x, p.w_v), p.b_v);
    if (o.ln_q) q = apply_ln(t, q, *o.ln_q, o.ln_style, o.ln_eps);
    if (o.ln_k) k = apply_ln(t, k, *o.ln_k, o.ln_style, o.ln_eps);
    if (o.ln_v) v = apply_ln(t, v, *o.ln_v, o.ln_style, o.ln_eps);

    std::vector<Var> heads;
    heads.reserve(static_cast<size_t>(o.n_heads));
    for (int h = 0; h < o.n_heads; ++h) {
        const int c0 = h * d_head, c1 = (h + 1) * d_head;
        Var qh = slice_cols(q, c0, c1);
        Var kh = slice_cols(k, c0, c1);
        Var vh = slice_cols(v, c0, c1);
        Var scores = scale(matmul_nt(qh, kh), inv_sqrt_dk);
        Var probs = o.causal ? causal_masked_softmax(scores) : softmax(scores);
        Var head = matmul(probs, vh);
        if (o.head_scale.valid()) head = scale_by_element(head, o.head_scale, h);
        heads.push_back(head);
    }
    return add_rows(matmul(concat_cols(heads), p.w_o), p.b_o);
}

Var ffn_raw(Tape& t, Var x, const FFNVars& p, const BlockVariant& v,
            const std::optional<LayerNormVars>& ln_mid, double ln_eps) {
    Var a = add_rows(matmul(x, p.w1), p.b1);
    Var act = v.activation == Activation::gelu ? gelu(a) : relu_squared(a);
    if (ln_mid) act = apply_ln(t, act, *ln_mid, v.ln_style, ln_eps);
    return add_rows(matmul(act, p.w2), p.b2);
}

Var maybe_dropout(Var x, const BlockRunConfig& rc) {
    if (rc.dropout_p > 0.0 && rc.dropout_rng) return dropout(x, rc.dropout_p, *rc.dropout_rng);
    return x;
}

void require_ln(const std::optional<LayerNormVars>& ln, const char* which) {
    if (!ln) throw ValueError(std::string("block: missing LayerNorm params '") + which + "'");
}

}  // namespace

Var multi_head_attention(Tape& t, Var x, const AttentionVars& p, int n_heads, bool causal) {
    AttentionOptions o;
    o.n_heads = n_heads;
    o.causal = causal;
    return attention_core(t, x, p, o);
}

Var head_scale_mha(Tape& t, Var x, const AttentionVars& p, Var gamma_heads, int n_heads,
                   bool causal) {
    AttentionOptions o;
    o.n_heads = n_heads;
    o.causal = causal;
    o.head_scale = gamma_heads;
    return attention_core(t, x, p, o);
}

Var res_scale_combine(Tape& t, Var x, Var sublayer_out, Var lambda) {
    (void)t;
    check_same_shape("res_scale_combine", "sublayer_out", sublayer_out.value(), x.value());
    return add(mul_rows(x, lambda), sublayer_out);
}

Var pre_ln_block(Tape& t, Var x, const BlockVars& p, const BlockVariant& v,
                 const BlockRunConfig& rc) {
    if (v.arrangement != Arrangement::pre_ln) {
        throw ValueError("pre_ln_block: variant arrangement is " + to_string(v.arrangement));
    }
    return block_forward(t, x, p, v, rc);
}

Var post_ln_block(Tape& t, Var x, const BlockVars& p, const BlockVariant& v,
                  const BlockRunConfig& rc) {
    if (v.arrangement != Arrangement::post_ln) {
        throw ValueError("post_ln_block: variant arrangement is " + to_string(v.arrangement));
    }
    return block_forward(t, x, p, v, rc);
}

Var normformer_block(Tape& t, Var x, const BlockVars& p, const BlockVariant& v,
                     const BlockRunConfig& rc) {
    if (v.arrangement != Arrangement::normformer) {
        throw ValueError("normformer_block: variant arrangement is " + to_string(v.arrangement));
    }
    return block_forward(t, x, p, v, rc);
}

Var block_forward(Tape& t, Var x, const BlockVars& p, const BlockVariant& v,
                  const BlockRunConfig& rc) {
    v.validate();
    switch (v.arrangement) {
        case Arrangement::pre_ln: {
            require_ln(p.ln_pre_attn, "ln_pre_attn");
            require_ln(p.ln_pre_ffn, "ln_pre_ffn");
            Var a = multi_head_attention(t, apply_ln(t, x, *p.ln_pre_attn, v.ln_style, rc.ln_eps),
                                         p.attn, rc.n_heads, rc.causal);
            Var x1 = add(x, maybe_dropout(a, rc));
            Var f = ffn_raw(t, apply_ln(t, x1, *p.ln_pre_ffn, v.ln_style, rc.ln_eps), p.ffn, v,
                            std::nullopt, rc.ln_eps);
            return add(x1, maybe_dropout(f, rc));
        }
        case Arrangement::post_ln: {
            require_ln(p.ln_post_attn, "ln_post_attn");
            require_ln(p.ln_post_ffn, "ln_post_ffn");
            Var a = multi_head_attention(t, x, p.attn, rc.n_heads, rc.causal);
            Var x1 = apply_ln(t, add(x, maybe_dropout(a, rc)), *p.ln_post_attn, v.ln_style,
                              rc.ln_eps);
            Var f = ffn_raw(t, x1, p.ffn, v, std::nullopt, rc.ln_eps);
            return apply_ln(t, add(x1, maybe_dropout(f, rc)), *p.ln_post_ffn, v.ln_style,
                            rc.ln_eps);
        }
        case Arrangement::normformer: {
            require_ln(p.ln_pre_attn, "ln_pre_attn");
            require_ln(p.ln_pre_ffn, "ln_pre_ffn");
            AttentionOptions o;
            o.n_heads = rc.n_heads;
            o.causal = rc.causal;
            o.ln_style = v.ln_style;
            o.ln_eps = rc.ln_eps;
            if (v.head_scale) {
                if (!p.head_scale_gamma.valid()) {
                    throw ValueError("block: missing head_scale params");
                }
                o.head_scale = p.head_scale_gamma;
            }
            if (v.qkv_ln) {
                require_ln(p.ln_q, "ln_q");
                require_ln(p.ln_k, "ln_k");
                require_ln(p.ln_v, "ln_v");
                o.ln_q = &*p.ln_q;
                o.ln_k = &*p.ln_k;
                o.ln_v = &*p.ln_v;
            }
            Var a = attention_core(t, apply_ln(t, x, *p.ln_pre_attn, v.ln_style, rc.ln_eps),
                                   p.attn, o);
            if (v.post_attn_ln) {
                require_ln(p.ln_post_attn, "ln_post_attn");
                a = apply_ln(t, a, *p.ln_post_attn, v.ln_style, rc.ln_eps);
            }
            Var x1 = add(x, maybe_dropout(a, rc));
            if (v.ffn_ln) require_ln(p.ln_ffn_mid, "ln_ffn_mid");
            Var f = ffn_raw(t, apply_ln(t, x1, *p.ln_pre_ffn, v.ln_style, rc.ln_eps), p.ffn, v,
                            v.ffn_ln ? p.ln_ffn_mid : std::nullopt, rc.ln_eps);
            Var fd = maybe_dropout(f, rc);
            if (v.res_scale) {
                if (!p.res_scale_lambda.valid()) {
                    throw ValueError("block: missing res_scale params");
                }
                return res_scale_combine(t, x1, fd, p.res_scale_lambda);
            }
            return add(x1, fd);
        }
    }
    throw ValueError("block_forward: unknown arrangement");
}

Tensor run_block(const BlockParams& p, const BlockVariant& v, const Tensor& x,
                 const BlockRunConfig& rc) {
    Tape t;
    BlockVars vars = make_block_vars(t, p);
    Var out = block_forward(t, t.leaf(x), vars, v, rc);
    return out.value();
}

}  // namespace nflab
