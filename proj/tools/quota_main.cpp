// quota: calibrate pruning recipes, run pipeline comparisons, estimate
// prefill FLOPs, and diff run reports. All outputs are deterministic JSON:
// the same flags and seeds produce byte-identical files.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "quota/calibrator.hpp"
#include "quota/digest.hpp"
#include "quota/gflops.hpp"
#include "quota/harness.hpp"
#include "quota/model.hpp"
#include "quota/recipe.hpp"
#include "quota/selector.hpp"
#include "quota/version.hpp"

namespace {

using nlohmann::json;
using namespace quota;

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ToolConfig {
    HarnessConfig harness;
    bool calib_seed_explicit = false;
    bool eval_seed_explicit = false;
};

uint64_t get_u64(const json& j) {
    return j.is_number_unsigned() ? j.get<uint64_t>() : static_cast<uint64_t>(j.get<int64_t>());
}

void apply_config_json(const json& j, ToolConfig& cfg) {
    static const std::set<std::string> known = {
        "seed",       "calib_seed", "eval_seed",   "n_layers",   "n_heads",
        "d_model",    "d_head",     "bits",        "p_min",      "tau",
        "eta",        "window",     "v0",          "calib_samples", "eval_samples",
        "text_min",   "text_max",   "weights",     "gflops_text_len", "f_vt", "f_pj"};
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!known.count(it.key())) throw UsageError("unknown config key '" + it.key() + "'");
    }
    HarnessConfig& h = cfg.harness;
    if (j.contains("seed")) h.model.seed = get_u64(j["seed"]);
    if (j.contains("n_layers")) h.model.n_layers = j["n_layers"].get<int>();
    if (j.contains("n_heads")) h.model.n_heads = j["n_heads"].get<int>();
    if (j.contains("d_model")) h.model.d_model = j["d_model"].get<int>();
    if (j.contains("d_head")) h.model.d_head = j["d_head"].get<int>();
    if (j.contains("bits")) {
        int bits = j["bits"].get<int>();
        h.quant.weight_bits = bits;
        h.quant.act_bits = bits;
        h.quant.kv_bits = bits;
    }
    if (j.contains("calib_seed")) {
        h.calib.seed = get_u64(j["calib_seed"]);
        cfg.calib_seed_explicit = true;
    }
    if (j.contains("eval_seed")) {
        h.eval_seed = get_u64(j["eval_seed"]);
        cfg.eval_seed_explicit = true;
    }
    if (j.contains("p_min")) h.calib.p_min = j["p_min"].get<double>();
    if (j.contains("tau")) h.calib.tau = j["tau"].get<double>();
    if (j.contains("eta")) h.calib.eta = j["eta"].get<double>();
    if (j.contains("window")) h.calib.window = j["window"].get<int>();
    if (j.contains("v0")) h.calib.v0 = j["v0"].get<int>();
    if (j.contains("calib_samples")) h.calib.samples = j["calib_samples"].get<int>();
    if (j.contains("eval_samples")) h.eval_samples = j["eval_samples"].get<int>();
    if (j.contains("text_min")) h.calib.text_min = j["text_min"].get<int>();
    if (j.contains("text_max")) h.calib.text_max = j["text_max"].get<int>();
    if (j.contains("gflops_text_len")) h.gflops_text_len = j["gflops_text_len"].get<int>();
    if (j.contains("f_vt")) h.f_vt = j["f_vt"].get<double>();
    if (j.contains("f_pj")) h.f_pj = j["f_pj"].get<double>();
    if (j.contains("weights")) {
        const json& w = j["weights"];
        h.weights.mag = w.at("mag").get<double>();
        h.weights.inter = w.at("inter").get<double>();
        h.weights.intra = w.at("intra").get<double>();
        h.weights.quant = w.at("quant").get<double>();
    }
}

ToolConfig load_tool_config(const std::string& config_path) {
    ToolConfig cfg;
    if (!config_path.empty()) {
        std::ifstream in(config_path, std::ios::binary);
        if (!in) throw UsageError("config not found: " + config_path);
        json j;
        try {
            j = json::parse(in);
        } catch (const json::parse_error& e) {
            throw UsageError(std::string("config parse error: ") + e.what());
        }
        apply_config_json(j, cfg);
    }
    return cfg;
}

// QUOTA_SEED overrides the master seed; derived seeds follow unless the
// config pinned them explicitly.
void finalize_seeds(ToolConfig& cfg) {
    if (const char* env = std::getenv("QUOTA_SEED")) {
        cfg.harness.model.seed = std::strtoull(env, nullptr, 10);
    }
    if (!cfg.calib_seed_explicit) cfg.harness.calib.seed = cfg.harness.model.seed + 1000;
    if (!cfg.eval_seed_explicit) cfg.harness.eval_seed = cfg.harness.model.seed + 2000;
}

json meta_header(uint64_t seed, const std::string& recipe_digest_hex) {
    return {{"tool_version", kToolVersion}, {"seed", seed}, {"recipe_digest", recipe_digest_hex}};
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open output file: " + path);
    out << content;
}

std::string read_file(const std::string& path, const char* what) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw UsageError(std::string(what) + " not found: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

int cmd_calibrate(const std::string& config_path, const std::string& recipe_out,
                  const std::string& diag_out, std::optional<double> p_min,
                  std::optional<double> tau, std::optional<uint64_t> seed) {
    ToolConfig cfg = load_tool_config(config_path);
    if (seed) cfg.harness.model.seed = *seed;
    finalize_seeds(cfg);
    if (p_min) cfg.harness.calib.p_min = *p_min;
    if (tau) cfg.harness.calib.tau = *tau;

    Model model = init_model(cfg.harness.model);
    CalibrationOutput out =
        run_quota_calibration(model, cfg.harness.quant, cfg.harness.calib, cfg.harness.weights);
    save_recipe(out.recipe, recipe_out);

    if (!diag_out.empty()) {
        json layers = json::array();
        for (int l = 0; l < out.diagnostics.n_layers(); ++l) {
            layers.push_back({{"layer", l},
                              {"concentration_median", out.diagnostics.concentration_median[l]},
                              {"concentration_iqr", out.diagnostics.concentration_iqr[l]},
                              {"redundancy_median", out.diagnostics.redundancy_median[l]}});
        }
        json sens = json::array();
        for (size_t i = 0; i < out.profile.layers.size(); ++i) {
            sens.push_back({{"layer", out.profile.layers[i]},
                            {"raw", out.profile.raw[i]},
                            {"normalized", out.profile.normalized[i]},
                            {"drop_share", out.schedule.drop_shares[i]},
                            {"keep_ratio", out.schedule.keep_ratios[i]}});
        }
        json diag = {{"meta", meta_header(cfg.harness.model.seed, recipe_digest(out.recipe))},
                     {"layers", layers},
                     {"sensitivity", sens}};
        write_file(diag_out, diag.dump(2) + "\n");
    }
    std::cout << "recipe written to " << recipe_out << "\n";
    return kExitOk;
}

int cmd_run(const std::string& config_path, const std::string& recipe_path,
            const std::string& mode_str, const std::string& out_path,
            std::optional<int> samples) {
    ToolConfig cfg = load_tool_config(config_path);
    finalize_seeds(cfg);
    if (samples) cfg.harness.eval_samples = *samples;

    std::optional<PipelineMode> mode = parse_mode(mode_str);
    if (!mode) {
        throw UsageError("unknown mode '" + mode_str +
                         "' (expected one of fp_baseline, quant_only, prune_only, "
                         "quant_then_prune, prune_then_quant, collaborative)");
    }

    std::optional<PruningRecipe> recipe;
    if (!recipe_path.empty()) {
        recipe = load_recipe(recipe_path);  // schema or format problems refuse the run
    }

    std::vector<CalibSample> eval = make_eval_samples(cfg.harness);
    RunReport report =
        run_pipeline(cfg.harness, *mode, eval, recipe ? &*recipe : nullptr);
    write_file(out_path, report_to_json(report).dump(2) + "\n");
    std::cout << "report written to " << out_path << "\n";
    return kExitOk;
}

int cmd_gflops(const std::string& recipe_path, const std::string& out_path, int n_layers,
               int d_model, int d_ff, int n_heads, int text_len, double f_vt, double f_pj) {
    PruningRecipe recipe = load_recipe(recipe_path);
    CostModel cm;
    cm.f_vt = f_vt;
    cm.f_pj = f_pj;
    cm.d_model = d_model;
    cm.d_ff = d_ff > 0 ? d_ff : 4 * d_model;
    cm.n_heads = n_heads;
    cm.text_len = text_len;
    cm.validate();

    std::vector<int> v_hat = executed_visual_lengths(recipe, n_layers);
    GflopsReport report = pipeline_flops(v_hat, recipe.v0, cm);

    json layers = json::array();
    for (const GflopsLayer& l : report.layers) {
        layers.push_back({{"layer", l.layer}, {"v_hat", l.v_hat}, {"cost", l.cost}});
    }
    json j = {{"meta", meta_header(0, recipe_digest(recipe))},
              {"layers", layers},
              {"f_vlm", report.f_vlm},
              {"f_base", report.f_base},
              {"ratio_pct", report.ratio_pct}};
    write_file(out_path, j.dump(2) + "\n");

    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.2f%%", report.ratio_pct);
    std::cout << "gflops ratio " << buf << " (" << out_path << ")\n";
    return kExitOk;
}

int cmd_compare(const std::vector<std::string>& report_paths, const std::string& out_path) {
    std::vector<RunReport> reports;
    for (const std::string& path : report_paths) {
        json j;
        try {
            j = json::parse(read_file(path, "report"));
        } catch (const json::parse_error& e) {
            throw std::runtime_error(std::string("report parse error: ") + e.what());
        }
        reports.push_back(report_from_json(j));
    }
    ComparisonTable table = compare_reports(reports);
    std::string meta_digest = reports.front().recipe_digest;
    json j = {{"meta", meta_header(reports.front().model_seed, meta_digest)},
              {"rows", comparison_to_json(table)["rows"]}};
    if (!out_path.empty()) write_file(out_path, j.dump(2) + "\n");
    std::cout << render_comparison_text(table);
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"collaborative low-bit quantization and visual-token pruning toolkit"};
    app.require_subcommand(1);

    std::string config_path, recipe_path, out_path, diag_path, mode_str;
    std::optional<double> p_min, tau;
    std::optional<uint64_t> seed;
    std::optional<int> samples;

    CLI::App* calibrate = app.add_subcommand("calibrate", "profile the model and emit a pruning recipe");
    calibrate->add_option("--config", config_path, "config JSON path");
    calibrate->add_option("--out", out_path, "recipe output path")->required();
    calibrate->add_option("--diagnostics", diag_path, "layer diagnostics output path");
    calibrate->add_option("--p-min", p_min, "final keep ratio floor");
    calibrate->add_option("--tau", tau, "drop-share softmax temperature");
    calibrate->add_option("--seed", seed, "master seed override");

    CLI::App* run = app.add_subcommand("run", "run one pipeline mode and write its report");
    run->add_option("--config", config_path, "config JSON path");
    run->add_option("--recipe", recipe_path, "recipe JSON path (pruning modes)");
    run->add_option("--mode", mode_str, "pipeline mode")->required();
    run->add_option("--out", out_path, "report output path")->required();
    run->add_option("--samples", samples, "eval sample count override");

    int n_layers = 12, d_model = 32, d_ff = 0, n_heads = 4, text_len = 16;
    double f_vt = 0.0, f_pj = 0.0;
    CLI::App* gflops = app.add_subcommand("gflops", "estimate the prefill FLOPs ratio of a recipe");
    gflops->add_option("--recipe", recipe_path, "recipe JSON path")->required();
    gflops->add_option("--out", out_path, "report output path")->required();
    gflops->add_option("--layers", n_layers, "transformer layer count");
    gflops->add_option("--d-model", d_model, "model width");
    gflops->add_option("--d-ff", d_ff, "MLP width (default 4*d_model)");
    gflops->add_option("--n-heads", n_heads, "attention heads");
    gflops->add_option("--text-len", text_len, "text length proxy");
    gflops->add_option("--f-vt", f_vt, "vision tower constant FLOPs");
    gflops->add_option("--f-pj", f_pj, "projector constant FLOPs");

    std::vector<std::string> report_paths;
    CLI::App* compare = app.add_subcommand("compare", "tabulate run reports over one eval set");
    compare->add_option("reports", report_paths, "report JSON paths")->expected(-2);
    compare->add_option("--out", out_path, "comparison JSON output path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (calibrate->parsed()) return cmd_calibrate(config_path, out_path, diag_path, p_min, tau, seed);
        if (run->parsed()) return cmd_run(config_path, recipe_path, mode_str, out_path, samples);
        if (gflops->parsed())
            return cmd_gflops(recipe_path, out_path, n_layers, d_model, d_ff, n_heads, text_len,
                              f_vt, f_pj);
        if (compare->parsed()) return cmd_compare(report_paths, out_path);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitUsage;
}
