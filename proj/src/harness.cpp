#include "quota/harness.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "quota/digest.hpp"
#include "quota/selector.hpp"
#include "quota/version.hpp"

namespace quota {

using nlohmann::json;

std::string mode_name(PipelineMode mode) {
    switch (mode) {
        case PipelineMode::FpBaseline: return "fp_baseline";
        case PipelineMode::QuantOnly: return "quant_only";
        case PipelineMode::PruneOnly: return "prune_only";
        case PipelineMode::QuantThenPrune: return "quant_then_prune";
        case PipelineMode::PruneThenQuant: return "prune_then_quant";
        case PipelineMode::Collaborative: return "collaborative";
    }
    return "unknown";
}

std::optional<PipelineMode> parse_mode(const std::string& name) {
    for (PipelineMode m : {PipelineMode::FpBaseline, PipelineMode::QuantOnly, PipelineMode::PruneOnly,
                           PipelineMode::QuantThenPrune, PipelineMode::PruneThenQuant,
                           PipelineMode::Collaborative}) {
        if (mode_name(m) == name) return m;
    }
    return std::nullopt;
}

std::vector<CalibSample> make_eval_samples(const HarnessConfig& config) {
    return make_calibration_samples(config.eval_seed, config.eval_samples, config.calib.v0,
                                    config.model.d_model, config.calib.text_min,
                                    config.calib.text_max);
}

namespace {

bool mode_prunes(PipelineMode mode) {
    return mode == PipelineMode::PruneOnly || mode == PipelineMode::QuantThenPrune ||
           mode == PipelineMode::PruneThenQuant || mode == PipelineMode::Collaborative;
}

bool mode_quantizes(PipelineMode mode) {
    return mode == PipelineMode::QuantOnly || mode == PipelineMode::QuantThenPrune ||
           mode == PipelineMode::PruneThenQuant || mode == PipelineMode::Collaborative;
}

}  // namespace

RunReport run_pipeline(const HarnessConfig& config, PipelineMode mode,
                       const std::vector<CalibSample>& eval_samples,
                       const PruningRecipe* recipe_override) {
    if (eval_samples.empty()) throw std::invalid_argument("no eval samples");
    Model model = init_model(config.model);
    const bool prunes = mode_prunes(mode);
    const bool quantized = mode_quantizes(mode);

    std::optional<PruningRecipe> recipe;
    std::optional<CalibrationOutput> calib_out;
    std::vector<CalibSample> calib_samples;
    auto ensure_calib_samples = [&] {
        if (calib_samples.empty()) {
            calib_samples = make_calibration_samples(config.calib.seed, config.calib.samples,
                                                     config.calib.v0, config.model.d_model,
                                                     config.calib.text_min, config.calib.text_max);
        }
    };

    if (prunes) {
        if (recipe_override != nullptr) {
            recipe_override->validate();
            recipe = *recipe_override;
        } else {
            ensure_calib_samples();
            calib_out = run_quota_calibration(model, config.quant, config.calib, config.weights);
            recipe = calib_out->recipe;
        }
        if (recipe->candidate_layers.back() >= config.model.n_layers) {
            throw std::runtime_error("recipe candidate layers do not fit the model");
        }
    }

    // stage-wise scoring drops the quantization-residual cue
    const bool stage_wise = mode == PipelineMode::PruneOnly ||
                            mode == PipelineMode::QuantThenPrune ||
                            mode == PipelineMode::PruneThenQuant;
    MetricWeights scoring_weights;
    if (prunes) {
        scoring_weights = stage_wise ? recipe->weights.without_quant() : recipe->weights;
    }

    std::optional<QuantEnv> env;
    if (quantized) {
        ActScales scales;
        if (mode == PipelineMode::PruneThenQuant) {
            ensure_calib_samples();
            PruneHook calib_hook = make_recipe_hook(*recipe, scoring_weights, std::nullopt);
            scales = fit_act_scales(model, calib_samples, config.quant.act_bits, calib_hook);
        } else if (calib_out) {
            scales = calib_out->act_scales;
        } else {
            ensure_calib_samples();
            scales = fit_act_scales(model, calib_samples, config.quant.act_bits);
        }
        env = prepare_quant_env(model, config.quant, scales);
    }

    PruneHook eval_hook;
    if (prunes) {
        std::optional<int> res_bits =
            quantized ? std::optional<int>(config.quant.act_bits) : std::nullopt;
        eval_hook = make_recipe_hook(*recipe, scoring_weights, res_bits);
    }

    RunReport report;
    report.mode = mode_name(mode);
    report.model_seed = config.model.seed;
    report.recipe_digest = recipe ? recipe_digest(*recipe) : "";
    report.eval_digest = sample_set_digest(eval_samples);
    report.eval_count = static_cast<int>(eval_samples.size());

    double divergence_sum = 0.0;
    int final_count = -1;
    for (const CalibSample& s : eval_samples) {
        ForwardOptions fp_opts;
        ForwardResult fp = forward_prefill(model, s.embeddings, s.layout, fp_opts);

        ForwardOptions opts;
        opts.hook = eval_hook;
        if (quantized) {
            opts.mode = ExecMode::Quantized;
            opts.quant = &*env;
        }
        ForwardResult run = forward_prefill(model, s.embeddings, s.layout, opts);

        report.sample_logits_digests.push_back(hex_digest(run.logits.data));
        report.traces.push_back(run.prune_trace);

        const int last_fp = fp.logits.rows - 1;
        const int last_run = run.logits.rows - 1;
        double acc = 0.0;
        for (int c = 0; c < run.logits.cols; ++c) {
            double d = run.logits.at(last_run, c) - fp.logits.at(last_fp, c);
            acc += d * d;
        }
        divergence_sum += std::sqrt(acc);

        if (final_count < 0) final_count = run.final_layout.visual_count;
        if (final_count != run.final_layout.visual_count) {
            throw std::runtime_error("inconsistent final visual count across samples");
        }
    }
    report.divergence_mean = divergence_sum / static_cast<double>(eval_samples.size());
    report.final_visual_count = final_count;

    CostModel cm;
    cm.f_vt = config.f_vt;
    cm.f_pj = config.f_pj;
    cm.d_model = config.model.d_model;
    cm.d_ff = config.model.d_ff();
    cm.n_heads = config.model.n_heads;
    cm.text_len = config.gflops_text_len;
    if (prunes) {
        std::vector<int> v_hat = executed_visual_lengths(*recipe, config.model.n_layers);
        report.gflops = pipeline_flops(v_hat, recipe->v0, cm);
    } else {
        std::vector<int> v_hat(config.model.n_layers, config.calib.v0);
        report.gflops = pipeline_flops(v_hat, config.calib.v0, cm);
    }
    return report;
}

ComparisonTable compare_reports(const std::vector<RunReport>& reports) {
    if (reports.size() < 2) throw std::invalid_argument("need at least two reports to compare");
    for (const RunReport& r : reports) {
        if (r.eval_digest != reports.front().eval_digest ||
            r.eval_count != reports.front().eval_count) {
            throw std::runtime_error("reports cover different eval sample sets");
        }
    }
    ComparisonTable table;
    for (const RunReport& r : reports) {
        table.rows.push_back({r.mode, r.divergence_mean, r.final_visual_count,
                              r.gflops.ratio_pct});
    }
    std::sort(table.rows.begin(), table.rows.end(),
              [](const ComparisonRow& a, const ComparisonRow& b) { return a.mode < b.mode; });
    return table;
}

namespace {

json gflops_to_json(const GflopsReport& g) {
    json layers = json::array();
    for (const GflopsLayer& l : g.layers) {
        layers.push_back({{"layer", l.layer}, {"v_hat", l.v_hat}, {"cost", l.cost}});
    }
    return {{"layers", layers}, {"f_vlm", g.f_vlm}, {"f_base", g.f_base}, {"ratio_pct", g.ratio_pct}};
}

GflopsReport gflops_from_json(const json& j) {
    GflopsReport g;
    for (const json& l : j.at("layers")) {
        g.layers.push_back({l.at("layer").get<int>(), l.at("v_hat").get<int>(),
                            l.at("cost").get<double>()});
    }
    g.f_vlm = j.at("f_vlm").get<double>();
    g.f_base = j.at("f_base").get<double>();
    g.ratio_pct = j.at("ratio_pct").get<double>();
    return g;
}

}  // namespace

json report_to_json(const RunReport& report) {
    json traces = json::array();
    for (const auto& sample_trace : report.traces) {
        json events = json::array();
        for (const PruneEvent& ev : sample_trace) {
            events.push_back({{"layer", ev.layer},
                              {"budget", ev.budget},
                              {"retained_indices", ev.retained_positions}});
        }
        traces.push_back(events);
    }
    return {
        {"meta",
         {{"tool_version", kToolVersion},
          {"seed", report.model_seed},
          {"recipe_digest", report.recipe_digest}}},
        {"mode", report.mode},
        {"eval", {{"digest", report.eval_digest}, {"count", report.eval_count}}},
        {"divergence_mean", report.divergence_mean},
        {"final_visual_count", report.final_visual_count},
        {"sample_logits_digests", report.sample_logits_digests},
        {"traces", traces},
        {"gflops", gflops_to_json(report.gflops)},
    };
}

RunReport report_from_json(const json& j) {
    RunReport r;
    r.mode = j.at("mode").get<std::string>();
    r.model_seed = j.at("meta").at("seed").get<uint64_t>();
    r.recipe_digest = j.at("meta").at("recipe_digest").get<std::string>();
    r.eval_digest = j.at("eval").at("digest").get<std::string>();
    r.eval_count = j.at("eval").at("count").get<int>();
    r.sample_logits_digests = j.at("sample_logits_digests").get<std::vector<std::string>>();
    r.divergence_mean = j.at("divergence_mean").get<double>();
    for (const json& sample_trace : j.at("traces")) {
        std::vector<PruneEvent> events;
        for (const json& ev : sample_trace) {
            PruneEvent e;
            e.layer = ev.at("layer").get<int>();
            e.budget = ev.at("budget").get<int>();
            e.retained_positions = ev.at("retained_indices").get<std::vector<int>>();
            events.push_back(std::move(e));
        }
        r.traces.push_back(std::move(events));
    }
    r.final_visual_count = j.at("final_visual_count").get<int>();
    r.gflops = gflops_from_json(j.at("gflops"));
    return r;
}

json comparison_to_json(const ComparisonTable& table) {
    json rows = json::array();
    for (const ComparisonRow& r : table.rows) {
        rows.push_back({{"mode", r.mode},
                        {"divergence_mean", r.divergence_mean},
                        {"final_visual_count", r.final_visual_count},
                        {"gflops_ratio_pct", r.gflops_ratio_pct}});
    }
    return {{"rows", rows}};
}

std::string render_comparison_text(const ComparisonTable& table) {
    // cells reuse the JSON scalar rendering so both outputs carry identical values
    std::vector<std::array<std::string, 4>> cells;
    cells.push_back({"mode", "divergence_mean", "final_visual_count", "gflops_ratio_pct"});
    for (const ComparisonRow& r : table.rows) {
        cells.push_back({r.mode, json(r.divergence_mean).dump(),
                         json(r.final_visual_count).dump(), json(r.gflops_ratio_pct).dump()});
    }
    std::array<size_t, 4> width = {0, 0, 0, 0};
    for (const auto& row : cells) {
        for (size_t c = 0; c < 4; ++c) width[c] = std::max(width[c], row[c].size());
    }
    std::ostringstream out;
    for (const auto& row : cells) {
        for (size_t c = 0; c < 4; ++c) {
            out << row[c];
            if (c + 1 < 4) out << std::string(width[c] - row[c].size() + 2, ' ');
        }
        out << "\n";
    }
    return out.str();
}

}  // namespace quota
