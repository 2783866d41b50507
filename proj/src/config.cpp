#include "nflab/config.hpp"
#include <filesystem>

#include <algorithm>

#include "nflab/textio.hpp"

namespace nflab {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    size_t b = s.find_last_not_of(" \t\r");
    if (a == std::string::npos) return "";
    return s.substr(a, b - a + 1);
}

bool parse_bool(const std::string& v, const std::string& key, int line) {
    if (v == "true") return true;
    if (v == "false") return false;
    throw ConfigError(key + ": expected true|false, got '" + v + "'", line);
}

int parse_int(const std::string& v, const std::string& key, int line) {
    try {
        size_t pos = 0;
        const long long x = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing");
        return static_cast<int>(x);
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected integer, got '" + v + "'", line);
    }
}

uint64_t parse_u64(const std::string& v, const std::string& key, int line) {
    try {
        size_t pos = 0;
        const unsigned long long x = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing");
        return static_cast<uint64_t>(x);
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected unsigned integer, got '" + v + "'", line);
    }
}

double parse_double(const std::string& v, const std::string& key, int line) {
    try {
        size_t pos = 0;
        const double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing");
        return x;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected number, got '" + v + "'", line);
    }
}

std::vector<std::string> parse_list(const std::string& v) {
    std::vector<std::string> out;
    for (auto& item : split(v, ',')) {
        const std::string t = trim(item);
        if (!t.empty()) out.push_back(t);
    }
    return out;
}

std::string join(const std::vector<std::string>& v) {
    std::string out;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += v[i];
    }
    return out;
}

}  // namespace

BlockVariant variant_from_spec(const std::string& s) {
    size_t base_end = s.find_first_of("+-");
    const std::string base = s.substr(0, base_end);
    BlockVariant v;
    if (base == "pre_ln") {
        v = BlockVariant::pre_ln();
    } else if (base == "post_ln") {
        v = BlockVariant::post_ln();
    } else if (base == "normformer") {
        v = BlockVariant::normformer();
    } else {
        throw ValueError("variant: unknown base '" + base + "' in '" + s + "'");
    }
    size_t i = base_end;
    while (i != std::string::npos && i < s.size()) {
        const bool on = s[i] == '+';
        size_t j = s.find_first_of("+-", i + 1);
        const std::string flag = s.substr(i + 1, j == std::string::npos ? j : j - i - 1);
        if (flag == "head_scale") v.head_scale = on;
        else if (flag == "post_attn_ln") v.post_attn_ln = on;
        else if (flag == "ffn_ln") v.ffn_ln = on;
        else if (flag == "res_scale") v.res_scale = on;
        else if (flag == "qkv_ln") v.qkv_ln = on;
        else throw ValueError("variant: unknown flag '" + flag + "' in '" + s + "'");
        i = j;
    }
    v.validate();
    return v;
}

std::string variant_to_spec(const BlockVariant& v) {
    std::string s = to_string(v.arrangement);
    if (v.arrangement == Arrangement::normformer) {
        const BlockVariant def = BlockVariant::normformer();
        if (v.head_scale != def.head_scale) s += v.head_scale ? "+head_scale" : "-head_scale";
        if (v.post_attn_ln != def.post_attn_ln) {
            s += v.post_attn_ln ? "+post_attn_ln" : "-post_attn_ln";
        }
        if (v.ffn_ln != def.ffn_ln) s += v.ffn_ln ? "+ffn_ln" : "-ffn_ln";
        if (v.res_scale) s += "+res_scale";
        if (v.qkv_ln) s += "+qkv_ln";
    }
    return s;
}

void LabConfig::set_kv(const std::string& key, const std::string& value, int line) {
    // model.*
    if (key == "model.vocab_size") model.vocab_size = parse_int(value, key, line);
    else if (key == "model.d_model") model.d_model = parse_int(value, key, line);
    else if (key == "model.n_heads") model.n_heads = parse_int(value, key, line);
    else if (key == "model.n_layers") model.n_layers = parse_int(value, key, line);
    else if (key == "model.d_ffn") model.d_ffn = parse_int(value, key, line);
    else if (key == "model.max_seq_len") model.max_seq_len = parse_int(value, key, line);
    else if (key == "model.variant") {
        try {
            model.variant = variant_from_spec(value);
        } catch (const ValueError& e) {
            throw ConfigError(e.what(), line);
        }
    } else if (key == "model.head_scale") model.variant.head_scale = parse_bool(value, key, line);
    else if (key == "model.post_attn_ln") model.variant.post_attn_ln = parse_bool(value, key, line);
    else if (key == "model.ffn_ln") model.variant.ffn_ln = parse_bool(value, key, line);
    else if (key == "model.res_scale") model.variant.res_scale = parse_bool(value, key, line);
    else if (key == "model.qkv_ln") model.variant.qkv_ln = parse_bool(value, key, line);
    else if (key == "model.activation") {
        if (value == "gelu") model.variant.activation = Activation::gelu;
        else if (value == "relu_squared") model.variant.activation = Activation::relu_squared;
        else throw ConfigError(key + ": expected gelu|relu_squared, got '" + value + "'", line);
    } else if (key == "model.ln_style") {
        if (value == "standard") model.variant.ln_style = LnStyle::standard;
        else if (value == "no_bias_no_mean") model.variant.ln_style = LnStyle::no_bias_no_mean;
        else throw ConfigError(key + ": expected standard|no_bias_no_mean, got '" + value + "'", line);
    } else if (key == "model.objective") {
        if (value == "causal") model.objective = Objective::causal;
        else if (value == "masked") model.objective = Objective::masked;
        else throw ConfigError(key + ": expected causal|masked, got '" + value + "'", line);
    } else if (key == "model.tie_embeddings") model.tie_embeddings = parse_bool(value, key, line);
    else if (key == "model.dropout") model.dropout = parse_double(value, key, line);
    else if (key == "model.ln_eps") model.ln_eps = parse_double(value, key, line);
    else if (key == "model.init_std") model.init_std = parse_double(value, key, line);
    else if (key == "model.seed") model.seed = parse_u64(value, key, line);
    // train.*
    else if (key == "train.peak_lr") train.peak_lr = parse_double(value, key, line);
    else if (key == "train.warmup_steps") train.warmup_steps = parse_int(value, key, line);
    else if (key == "train.total_steps") train.total_steps = parse_int(value, key, line);
    else if (key == "train.schedule") {
        try {
            train.schedule = schedule_from_string(value);
        } catch (const ValueError& e) {
            throw ConfigError(e.what(), line);
        }
    } else if (key == "train.ramp_increment") train.ramp_increment = parse_double(value, key, line);
    else if (key == "train.batch_size") train.batch_size = parse_int(value, key, line);
    else if (key == "train.seq_len") train.seq_len = parse_int(value, key, line);
    else if (key == "train.clip_norm") {
        if (value == "none") train.clip_norm.reset();
        else train.clip_norm = parse_double(value, key, line);
    } else if (key == "train.adam_beta1") train.adam_beta1 = parse_double(value, key, line);
    else if (key == "train.adam_beta2") train.adam_beta2 = parse_double(value, key, line);
    else if (key == "train.adam_eps") train.adam_eps = parse_double(value, key, line);
    else if (key == "train.seed") train.seed = parse_u64(value, key, line);
    else if (key == "train.valid_every") train.valid_every = parse_int(value, key, line);
    else if (key == "train.train_log_every") train.train_log_every = parse_int(value, key, line);
    else if (key == "train.valid_windows") train.valid_windows = parse_int(value, key, line);
    else if (key == "train.explosion_factor") train.explosion_factor = parse_double(value, key, line);
    else if (key == "train.mask_prob") train.mask_prob = parse_double(value, key, line);
    else if (key == "train.max_steps") train.max_steps = parse_int(value, key, line);
    // data.*
    else if (key == "data.paths") data_paths = parse_list(value);
    else if (key == "data.split_fraction") data_split_fraction = parse_double(value, key, line);
    else if (key == "data.synth_bytes") data_synth_bytes = parse_u64(value, key, line);
    else if (key == "data.synth_seed") data_synth_seed = parse_u64(value, key, line);
    // diag.*
    else if (key == "diag.enabled") diag_enabled = parse_bool(value, key, line);
    else if (key == "diag.gradnorm_every") diag_gradnorm_every = parse_int(value, key, line);
    else if (key == "diag.scales_every") diag_scales_every = parse_int(value, key, line);
    else if (key == "diag.params") diag_params = parse_list(value);
    // stability.*
    else if (key == "stability.variants") stability_variants = parse_list(value);
    else if (key == "stability.max_steps") stability_max_steps = parse_int(value, key, line);
    else if (key == "stability.seeds") stability_seeds = parse_int(value, key, line);
    // ablate.*
    else if (key == "ablate.seeds") ablate_seeds = parse_int(value, key, line);
    else throw ConfigError("unknown config key '" + key + "'", line);
}

std::vector<std::pair<std::string, std::string>> LabConfig::canonical_kv() const {
    std::vector<std::pair<std::string, std::string>> kv;
    const auto b = [](bool v) { return v ? std::string("true") : std::string("false"); };
    kv.emplace_back("ablate.seeds", std::to_string(ablate_seeds));
    kv.emplace_back("data.paths", join(data_paths));
    kv.emplace_back("data.split_fraction", fmt_g17(data_split_fraction));
    kv.emplace_back("data.synth_bytes", std::to_string(data_synth_bytes));
    kv.emplace_back("data.synth_seed", std::to_string(data_synth_seed));
    kv.emplace_back("diag.enabled", b(diag_enabled));
    kv.emplace_back("diag.gradnorm_every", std::to_string(diag_gradnorm_every));
    kv.emplace_back("diag.params", join(diag_params));
    kv.emplace_back("diag.scales_every", std::to_string(diag_scales_every));
    kv.emplace_back("model.activation", to_string(model.variant.activation));
    kv.emplace_back("model.d_ffn", std::to_string(model.d_ffn));
    kv.emplace_back("model.d_model", std::to_string(model.d_model));
    kv.emplace_back("model.dropout", fmt_g17(model.dropout));
    kv.emplace_back("model.ffn_ln", b(model.variant.ffn_ln));
    kv.emplace_back("model.head_scale", b(model.variant.head_scale));
    kv.emplace_back("model.init_std", fmt_g17(model.init_std));
    kv.emplace_back("model.ln_eps", fmt_g17(model.ln_eps));
    kv.emplace_back("model.ln_style", to_string(model.variant.ln_style));
    kv.emplace_back("model.max_seq_len", std::to_string(model.max_seq_len));
    kv.emplace_back("model.n_heads", std::to_string(model.n_heads));
    kv.emplace_back("model.n_layers", std::to_string(model.n_layers));
    kv.emplace_back("model.objective", to_string(model.objective));
    kv.emplace_back("model.post_attn_ln", b(model.variant.post_attn_ln));
    kv.emplace_back("model.qkv_ln", b(model.variant.qkv_ln));
    kv.emplace_back("model.res_scale", b(model.variant.res_scale));
    kv.emplace_back("model.seed", std::to_string(model.seed));
    kv.emplace_back("model.tie_embeddings", b(model.tie_embeddings));
    kv.emplace_back("model.variant", to_string(model.variant.arrangement));
    kv.emplace_back("model.vocab_size", std::to_string(model.vocab_size));
    kv.emplace_back("train.adam_beta1", fmt_g17(train.adam_beta1));
    kv.emplace_back("train.adam_beta2", fmt_g17(train.adam_beta2));
    kv.emplace_back("train.adam_eps", fmt_g17(train.adam_eps));
    kv.emplace_back("train.batch_size", std::to_string(train.batch_size));
    kv.emplace_back("train.clip_norm", train.clip_norm ? fmt_g17(*train.clip_norm) : "none");
    kv.emplace_back("train.explosion_factor", fmt_g17(train.explosion_factor));
    kv.emplace_back("train.mask_prob", fmt_g17(train.mask_prob));
    kv.emplace_back("train.max_steps", std::to_string(train.max_steps));
    kv.emplace_back("train.peak_lr", fmt_g17(train.peak_lr));
    kv.emplace_back("train.ramp_increment", fmt_g17(train.ramp_increment));
    kv.emplace_back("train.schedule", to_string(train.schedule));
    kv.emplace_back("train.seed", std::to_string(train.seed));
    kv.emplace_back("train.seq_len", std::to_string(train.seq_len));
    kv.emplace_back("train.total_steps", std::to_string(train.total_steps));
    kv.emplace_back("train.train_log_every", std::to_string(train.train_log_every));
    kv.emplace_back("train.valid_every", std::to_string(train.valid_every));
    kv.emplace_back("train.valid_windows", std::to_string(train.valid_windows));
    kv.emplace_back("train.warmup_steps", std::to_string(train.warmup_steps));
    kv.emplace_back("stability.max_steps", std::to_string(stability_max_steps));
    kv.emplace_back("stability.seeds", std::to_string(stability_seeds));
    kv.emplace_back("stability.variants", join(stability_variants));
    std::sort(kv.begin(), kv.end());
    return kv;
}

namespace {

void parse_into(LabConfig& cfg, const std::string& text, const std::string& base_dir, int depth) {
    if (depth > 8) throw ConfigError("include depth exceeds 8 (cycle?)");
    const auto lines = split(text, '\n');
    for (size_t i = 0; i < lines.size(); ++i) {
        std::string line = lines[i];
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("expected 'key = value', got '" + line + "'",
                              static_cast<int>(i + 1));
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError("empty key", static_cast<int>(i + 1));
        if (key == "include") {
            // Applies the included file at this point; later keys override.
            namespace fs = std::filesystem;
            const fs::path inc = fs::path(value).is_absolute()
                                     ? fs::path(value)
                                     : fs::path(base_dir) / value;
            parse_into(cfg, read_text_file(inc.string()), inc.parent_path().string(), depth + 1);
            continue;
        }
        cfg.set_kv(key, value, static_cast<int>(i + 1));
    }
}

}  // namespace

LabConfig LabConfig::from_text(const std::string& text) {
    LabConfig cfg;
    parse_into(cfg, text, ".", 0);
    return cfg;
}

LabConfig LabConfig::from_file(const std::string& path) {
    LabConfig cfg;
    parse_into(cfg, read_text_file(path),
               std::filesystem::path(path).parent_path().string(), 0);
    return cfg;
}

void LabConfig::apply_override(const std::string& assignment) {
    const size_t eq = assignment.find('=');
    if (eq == std::string::npos) {
        throw ConfigError("--set expects key=value, got '" + assignment + "'");
    }
    set_kv(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void LabConfig::validate() const {
    try {
        model.validate();
        train.validate();
    } catch (const ValueError& e) {
        throw ConfigError(e.what());
    }
    if (data_split_fraction <= 0.0 || data_split_fraction >= 1.0) {
        throw ConfigError("data.split_fraction must be in (0,1)");
    }
    if (data_paths.empty() && data_synth_bytes == 0) {
        throw ConfigError("no corpus: set data.paths or data.synth_bytes");
    }
    if (diag_gradnorm_every < 1 || diag_scales_every < 1) {
        throw ConfigError("diag.gradnorm_every and diag.scales_every must be >= 1");
    }
    if (stability_max_steps < 1) throw ConfigError("stability.max_steps must be >= 1");
    if (stability_seeds < 1) throw ConfigError("stability.seeds must be >= 1");
    if (ablate_seeds < 1) throw ConfigError("ablate.seeds must be >= 1");
    for (const auto& v : stability_variants) {
        try {
            variant_from_spec(v);
        } catch (const ValueError& e) {
            throw ConfigError(std::string("stability.variants: ") + e.what());
        }
    }
}

Corpus LabConfig::load_corpus() const {
    if (!data_paths.empty()) return Corpus::from_files(data_paths, data_split_fraction);
    if (data_synth_bytes > 0) {
        return Corpus::from_text(make_synthetic_corpus(data_synth_bytes, data_synth_seed),
                                 data_split_fraction);
    }
    throw ConfigError("no corpus: set data.paths or data.synth_bytes");
}

}  // namespace nflab
