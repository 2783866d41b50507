#include "nflab/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <mutex>
#include <thread>

#include <json.hpp>

#include "nflab/textio.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace nflab {

namespace {

uint64_t fnv1a(const std::string& s) {
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::string hex16(uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

json manifest_base(const LabConfig& cfg, const std::string& command,
                   const std::string& run_id) {
    json j;
    j["run_id"] = run_id;
    j["command"] = command;
    json conf = json::object();
    for (const auto& [k, v] : cfg.canonical_kv()) conf[k] = v;
    j["config"] = conf;
    j["variant"] = variant_to_spec(cfg.model.variant);
    const ParamCount pc = count_parameters(cfg.model);
    j["param_count_total"] = pc.total;
    j["param_count_added"] = pc.added_by_modifications;
    j["completed"] = false;
    j["diverged"] = "none";
    return j;
}

void write_json(const std::string& path, const json& j) {
    write_text_file(path, j.dump(2) + "\n");
}

}  // namespace

std::string run_id_of(const LabConfig& cfg, const std::string& command) {
    std::string text = command + "\n";
    for (const auto& [k, v] : cfg.canonical_kv()) text += k + "=" + v + "\n";
    return hex16(fnv1a(text));
}

RunArtifacts run_training_job(const LabConfig& cfg, const std::string& dir,
                              const std::string& command) {
    cfg.validate();
    fs::create_directories(dir);
    const std::string run_id = run_id_of(cfg, command);
    json manifest = manifest_base(cfg, command, run_id);
    write_json((fs::path(dir) / "manifest.json").string(), manifest);

    const Corpus corpus = cfg.load_corpus();

    RunArtifacts out;
    out.dir = dir;
    out.run_id = run_id;
    out.params = count_parameters(cfg.model);

    DiagnosticsRecorder::Options dopt;
    dopt.gradnorm_every = cfg.diag_gradnorm_every;
    dopt.scales_every = cfg.diag_scales_every;
    dopt.param_filter = cfg.diag_params;
    DiagnosticsRecorder recorder(dopt);
    TrainHooks hooks = recorder.hooks();

    out.result = train(cfg.model, cfg.train, corpus, cfg.diag_enabled ? &hooks : nullptr);

    out.result.metrics.write((fs::path(dir) / "metrics.csv").string());
    if (cfg.diag_enabled) recorder.write(dir);

    auto kv = cfg.canonical_kv();
    save_checkpoint((fs::path(dir) / "checkpoint.nfck").string(), kv, out.result.state.params);

    manifest["completed"] = true;
    manifest["diverged"] = to_string(out.result.cause);
    manifest["steps_completed"] = out.result.steps_completed;
    manifest["final_valid_loss"] = out.result.final_valid_loss;
    manifest["final_valid_ppl"] = out.result.final_valid_ppl;
    manifest["mean_step_wall_ms"] = out.result.mean_step_wall_ms;  // wall-time field
    write_json((fs::path(dir) / "manifest.json").string(), manifest);
    return out;
}

int sweep_thread_cap(int n_jobs) {
    int cap = static_cast<int>(std::thread::hardware_concurrency());
    if (cap < 1) cap = 1;
    if (const char* env = std::getenv("NORMFORMER_LAB_THREADS")) {
        try {
            cap = std::max(1, std::stoi(env));
        } catch (const std::exception&) {
            throw ConfigError("NORMFORMER_LAB_THREADS: expected integer, got '" +
                              std::string(env) + "'");
        }
    }
    return std::min(cap, std::max(1, n_jobs));
}

void run_parallel(const std::vector<std::function<void()>>& jobs, int max_threads) {
    if (jobs.empty()) return;
    if (max_threads <= 1) {
        for (const auto& j : jobs) j();
        return;
    }
    std::atomic<size_t> next{0};
    std::mutex err_mutex;
    std::string first_error;
    auto worker = [&] {
        for (;;) {
            const size_t i = next.fetch_add(1);
            if (i >= jobs.size()) return;
            try {
                jobs[i]();
            } catch (const std::exception& e) {
                std::lock_guard<std::mutex> lock(err_mutex);
                if (first_error.empty()) first_error = e.what();
            }
        }
    };
    std::vector<std::thread> threads;
    const int n = std::min<int>(max_threads, static_cast<int>(jobs.size()));
    threads.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
    if (!first_error.empty()) throw Error(first_error);
}

std::string StabilitySummary::to_csv() const {
    std::string out = "variant,seed,steps_survived,cause\n";
    for (const auto& r : rows) {
        out += r.variant + "," + std::to_string(r.seed) + "," + std::to_string(r.steps_survived) +
               "," + to_string(r.cause) + "\n";
    }
    for (const auto& [v, m] : medians) {
        out += v + ",median," + std::to_string(m) + ",\n";
    }
    return out;
}

std::string StabilitySummary::to_table() const {
    std::string out = "variant                        median-steps\n";
    for (const auto& [v, m] : medians) {
        std::string pad = v;
        pad.resize(30, ' ');
        out += pad + " " + std::to_string(m) + "\n";
    }
    return out;
}

StabilitySummary run_stability_sweep(const LabConfig& cfg, const std::string& out_dir) {
    cfg.validate();
    struct Job {
        std::string variant;
        uint64_t seed;
        std::string dir;
        LabConfig run_cfg;
    };
    std::vector<Job> jobspecs;
    for (const auto& vspec : cfg.stability_variants) {
        for (int s = 0; s < cfg.stability_seeds; ++s) {
            Job j;
            j.variant = vspec;
            j.seed = cfg.train.seed + static_cast<uint64_t>(s);
            j.dir = (fs::path(out_dir) / vspec / ("seed" + std::to_string(j.seed))).string();
            j.run_cfg = cfg;
            j.run_cfg.model.variant = variant_from_spec(vspec);
            j.run_cfg.model.seed = j.seed;
            j.run_cfg.train.seed = j.seed;
            j.run_cfg.train.schedule = Schedule::ramp;
            j.run_cfg.train.total_steps = cfg.stability_max_steps;
            // Gradient norms are not the object of this sweep; keep the runs lean.
            j.run_cfg.diag_enabled = false;
            jobspecs.push_back(std::move(j));
        }
    }

    std::vector<StabilitySummary::Row> rows(jobspecs.size());
    std::vector<std::function<void()>> jobs;
    jobs.reserve(jobspecs.size());
    for (size_t i = 0; i < jobspecs.size(); ++i) {
        jobs.push_back([&, i] {
            const Job& j = jobspecs[i];
            RunArtifacts art = run_training_job(j.run_cfg, j.dir, "stability");
            rows[i] = {j.variant, j.seed, art.result.steps_completed, art.result.cause};
        });
    }
    run_parallel(jobs, sweep_thread_cap(static_cast<int>(jobs.size())));

    StabilitySummary summary;
    summary.rows = std::move(rows);
    for (const auto& vspec : cfg.stability_variants) {
        std::vector<StabilityResult> rs;
        for (const auto& r : summary.rows) {
            if (r.variant == vspec) rs.push_back({r.seed, r.steps_survived, r.cause});
        }
        summary.medians.emplace_back(vspec, median_steps_survived(rs));
    }
    fs::create_directories(out_dir);
    write_text_file((fs::path(out_dir) / "stability.csv").string(), summary.to_csv());
    return summary;
}

std::vector<AblationRowSpec> ablation_grid() {
    return {
        {"normformer+res_scale", "normformer+res_scale"},
        {"-post_attn_ln", "normformer+res_scale-post_attn_ln"},
        {"-ffn_ln", "normformer+res_scale-ffn_ln"},
        {"-head_scale", "normformer+res_scale-head_scale"},
        {"-res_scale", "normformer"},
        {"+qkv_ln", "normformer+res_scale+qkv_ln"},
        {"baseline", "pre_ln"},
    };
}

std::string AblationSummary::to_csv() const {
    std::string out =
        "label,variant,params_total,params_added,seed,final_valid_loss,final_valid_ppl,"
        "steps_completed,cause,mean_step_wall_ms\n";
    for (const auto& e : entries) {
        out += e.label + "," + e.variant_spec + "," + std::to_string(e.params_total) + "," +
               std::to_string(e.params_added) + "," + std::to_string(e.seed) + "," +
               fmt_g17(e.final_valid_loss) + "," + fmt_g17(e.final_valid_ppl) + "," +
               std::to_string(e.steps_completed) + "," + e.cause + "," +
               fmt_g17(e.mean_step_wall_ms) + "\n";
    }
    return out;
}

namespace {

double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
}

}  // namespace

std::string AblationSummary::to_markdown() const {
    std::string out = "| architecture | params | added | median valid loss | median valid ppl |\n";
    out += "|---|---|---|---|---|\n";
    for (const auto& row : ablation_grid()) {
        std::vector<double> losses, ppls;
        int64_t total = 0, added = 0;
        for (const auto& e : entries) {
            if (e.label != row.label) continue;
            losses.push_back(e.final_valid_loss);
            ppls.push_back(e.final_valid_ppl);
            total = e.params_total;
            added = e.params_added;
        }
        if (losses.empty()) continue;
        out += "| " + row.label + " | " + std::to_string(total) + " | " + std::to_string(added) +
               " | " + fmt_g17(median_of(losses)) + " | " + fmt_g17(median_of(ppls)) + " |\n";
    }
    return out;
}

AblationSummary run_ablation(const LabConfig& cfg, const std::string& out_dir) {
    cfg.validate();
    const auto grid = ablation_grid();
    struct Job {
        AblationRowSpec row;
        uint64_t seed;
        std::string dir;
        LabConfig run_cfg;
    };
    std::vector<Job> jobspecs;
    for (const auto& row : grid) {
        for (int s = 0; s < cfg.ablate_seeds; ++s) {
            Job j;
            j.row = row;
            j.seed = cfg.train.seed + static_cast<uint64_t>(s);
            std::string dirname = row.variant_spec;
            j.dir = (fs::path(out_dir) / dirname / ("seed" + std::to_string(j.seed))).string();
            j.run_cfg = cfg;
            j.run_cfg.model.variant = variant_from_spec(row.variant_spec);
            j.run_cfg.model.seed = j.seed;
            j.run_cfg.train.seed = j.seed;
            jobspecs.push_back(std::move(j));
        }
    }

    std::vector<AblationSummary::Entry> entries(jobspecs.size());
    std::vector<std::function<void()>> jobs;
    jobs.reserve(jobspecs.size());
    for (size_t i = 0; i < jobspecs.size(); ++i) {
        jobs.push_back([&, i] {
            const Job& j = jobspecs[i];
            RunArtifacts art = run_training_job(j.run_cfg, j.dir, "ablate");
            const ParamCount pc = count_parameters(j.run_cfg.model);
            entries[i] = {j.row.label,
                          j.row.variant_spec,
                          pc.total,
                          pc.added_by_modifications,
                          j.seed,
                          art.result.final_valid_loss,
                          art.result.final_valid_ppl,
                          art.result.steps_completed,
                          to_string(art.result.cause),
                          art.result.mean_step_wall_ms};
        });
    }
    run_parallel(jobs, sweep_thread_cap(static_cast<int>(jobs.size())));

    AblationSummary summary;
    summary.entries = std::move(entries);
    fs::create_directories(out_dir);
    write_text_file((fs::path(out_dir) / "ablation.csv").string(), summary.to_csv());
    write_text_file((fs::path(out_dir) / "ablation.md").string(), summary.to_markdown());

    json manifest;
    manifest["command"] = "ablate";
    manifest["rows"] = json::array();
    for (const auto& r : grid) manifest["rows"].push_back(r.label);
    manifest["seeds"] = json::array();
    for (int s = 0; s < cfg.ablate_seeds; ++s) {
        manifest["seeds"].push_back(cfg.train.seed + static_cast<uint64_t>(s));
    }
    manifest["total_steps"] = cfg.train.total_steps;
    write_json((fs::path(out_dir) / "manifest.json").string(), manifest);
    return summary;
}

void build_report(const ReportOptions& opt) {
    struct RunData {
        std::string name;
        std::string variant;
        MetricLog metrics;
        std::vector<GradNormRecord> gradnorms;
        std::vector<ScaleSnapshot> scales;
        bool has_gradnorms = false;
        bool has_scales = false;
    };

    // Collect inputs first; report every missing file at once.
    std::vector<RunData> runs;
    std::vector<std::string> missing;
    for (const auto& dir : opt.run_dirs) {
        RunData rd;
        rd.name = fs::path(dir).filename().string();
        if (rd.name.empty()) rd.name = dir;
        const std::string manifest_path = (fs::path(dir) / "manifest.json").string();
        const std::string metrics_path = (fs::path(dir) / "metrics.csv").string();
        if (!fs::exists(manifest_path)) missing.push_back(manifest_path);
        if (!fs::exists(metrics_path)) missing.push_back(metrics_path);
        if (!missing.empty()) continue;
        const json manifest = json::parse(read_text_file(manifest_path));
        rd.variant = manifest.value("variant", "?");
        rd.name = rd.name + ":" + rd.variant;
        rd.metrics = MetricLog::read(metrics_path);
        const std::string gn = (fs::path(dir) / "gradnorm.csv").string();
        const std::string sc = (fs::path(dir) / "scales.csv").string();
        if (fs::exists(gn)) {
            rd.gradnorms = gradnorm_from_csv(read_text_file(gn));
            rd.has_gradnorms = true;
        }
        if (fs::exists(sc)) {
            rd.scales = scales_from_csv(read_text_file(sc));
            rd.has_scales = true;
        }
        runs.push_back(std::move(rd));
    }
    if (!missing.empty()) {
        std::string msg = "report: missing inputs:";
        for (const auto& m : missing) msg += "\n  " + m;
        throw IoError(msg);
    }
    if (runs.empty()) throw ValueError("report: no run directories given");

    fs::create_directories(opt.out_dir);

    // Per-run analysis window over recorded gradient steps.
    const auto window_for = [&](const RunData& rd) -> std::pair<int, int> {
        if (opt.window_lo >= 0 && opt.window_hi >= 0) return {opt.window_lo, opt.window_hi};
        int max_step = 0;
        for (const auto& r : rd.gradnorms) max_step = std::max(max_step, r.step);
        return {static_cast<int>(std::ceil(0.8 * max_step)), max_step};
    };

    std::string curves = "run,step,split,loss,ppl\n";
    for (const auto& rd : runs) {
        for (const auto& r : rd.metrics.rows) {
            curves += rd.name + "," + std::to_string(r.step) + "," + r.split + "," +
                      fmt_g17(r.loss) + "," + fmt_g17(r.ppl) + "\n";
        }
    }
    write_text_file((fs::path(opt.out_dir) / "loss_curves.csv").string(), curves);

    std::string md;
    md += "# Run comparison report\n\n";
    md += "Conventions: gradient magnitudes are mean |entry| per parameter tensor "
          "(\"L1\" below); divergence is detected in double precision via non-finite "
          "values or a smoothed-loss explosion, an analogue of low-precision overflow "
          "criteria.\n\n";
    md += "## Final validation\n\n";
    md += "| run | steps | final valid loss | final valid ppl |\n|---|---|---|---|\n";
    for (const auto& rd : runs) {
        int last_step = 0;
        double last_loss = 0.0, last_ppl = 0.0;
        for (const auto& r : rd.metrics.rows) {
            if (r.split == "valid" && r.step >= last_step) {
                last_step = r.step;
                last_loss = r.loss;
                last_ppl = r.ppl;
            }
        }
        md += "| " + rd.name + " | " + std::to_string(last_step) + " | " + fmt_g17(last_loss) +
              " | " + fmt_g17(last_ppl) + " |\n";
    }

    std::string mismatch_csv = "run,param,window_lo,window_hi,mismatch_ratio\n";
    md += "\n## Gradient mismatch (earliest layer / deepest layer, window mean)\n\n";
    md += "| run | param | window | ratio |\n|---|---|---|---|\n";
    for (const auto& rd : runs) {
        if (!rd.has_gradnorms) continue;
        const auto [w0, w1] = window_for(rd);
        try {
            const double ratio = mismatch_ratio(rd.gradnorms, opt.mismatch_param, w0, w1);
            mismatch_csv += rd.name + "," + opt.mismatch_param + "," + std::to_string(w0) + "," +
                            std::to_string(w1) + "," + fmt_g17(ratio) + "\n";
            md += "| " + rd.name + " | " + opt.mismatch_param + " | " + std::to_string(w0) + ".." +
                  std::to_string(w1) + " | " + fmt_g17(ratio) + " |\n";
        } catch (const ValueError& e) {
            md += "| " + rd.name + " | " + opt.mismatch_param + " | - | n/a (" +
                  std::string(e.what()) + ") |\n";
        }
    }
    write_text_file((fs::path(opt.out_dir) / "mismatch.csv").string(), mismatch_csv);

    std::string ratios_csv = "run,baseline,layer,param,ratio\n";
    if (runs.size() >= 2 && runs[0].has_gradnorms) {
        md += "\n## Gradient-norm ratios vs " + runs[0].name +
              " (window means, loss-normalized)\n\n";
        for (size_t i = 1; i < runs.size(); ++i) {
            if (!runs[i].has_gradnorms) continue;
            const auto [w0, w1] = window_for(runs[i]);
            try {
                const auto rows = grad_ratio_report(runs[i].gradnorms, runs[i].metrics,
                                                    runs[0].gradnorms, runs[0].metrics, w0, w1);
                for (const auto& r : rows) {
                    ratios_csv += runs[i].name + "," + runs[0].name + "," +
                                  std::to_string(r.layer) + "," + r.param + "," +
                                  fmt_g17(r.ratio) + "\n";
                }
                md += runs[i].name + ": " + std::to_string(rows.size()) +
                      " (layer,param) ratios in grad_ratios.csv\n\n";
            } catch (const ValueError& e) {
                md += runs[i].name + ": n/a (" + std::string(e.what()) + ")\n\n";
            }
        }
    }
    write_text_file((fs::path(opt.out_dir) / "grad_ratios.csv").string(), ratios_csv);

    std::string scales_csv = "run,step,layer,kind,mean,min,max\n";
    md += "\n## Learned scale parameters (final snapshot)\n\n";
    md += "| run | layer | kind | mean | min | max |\n|---|---|---|---|---|---|\n";
    for (const auto& rd : runs) {
        if (!rd.has_scales || rd.scales.empty()) continue;
        int final_step = 0;
        for (const auto& s : rd.scales) final_step = std::max(final_step, s.step);
        for (const auto& s : rd.scales) {
            if (s.step != final_step || s.values.empty()) continue;
            double mn = s.values[0], mx = s.values[0], mean = 0.0;
            for (double v : s.values) {
                mn = std::min(mn, v);
                mx = std::max(mx, v);
                mean += v;
            }
            mean /= static_cast<double>(s.values.size());
            scales_csv += rd.name + "," + std::to_string(s.step) + "," + std::to_string(s.layer) +
                          "," + s.kind + "," + fmt_g17(mean) + "," + fmt_g17(mn) + "," +
                          fmt_g17(mx) + "\n";
            md += "| " + rd.name + " | " + std::to_string(s.layer) + " | " + s.kind + " | " +
                  fmt_g17(mean) + " | " + fmt_g17(mn) + " | " + fmt_g17(mx) + " |\n";
        }
    }
    write_text_file((fs::path(opt.out_dir) / "scales_summary.csv").string(), scales_csv);
    write_text_file((fs::path(opt.out_dir) / "report.md").string(), md);
}

}  // namespace nflab
