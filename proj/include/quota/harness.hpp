#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "quota/calibrator.hpp"
#include "quota/gflops.hpp"
#include "quota/model.hpp"
#include "quota/recipe.hpp"

namespace quota {

// Integration orders under comparison. Every pruning mode consumes the same
// recipe (external file, or derived inline from the calibration stream); the
// modes differ in which graph calibrates the activation scales and in how
// token scores are composed:
//   quant_then_prune  scales fit on the unpruned graph, stage-wise scoring
//                     (no quantization-residual term)
//   prune_then_quant  scales fit on the recipe-pruned graph, stage-wise scoring
//   collaborative     scales fit on the unpruned graph, budgets derived from
//                     quantization sensitivities, scoring includes the
//                     residual term, all under the quantized forward pass
enum class PipelineMode {
    FpBaseline,
    QuantOnly,
    PruneOnly,
    QuantThenPrune,
    PruneThenQuant,
    Collaborative,
};

std::string mode_name(PipelineMode mode);
std::optional<PipelineMode> parse_mode(const std::string& name);

struct HarnessConfig {
    ModelConfig model;
    QuantConfig quant;
    CalibrationConfig calib;
    MetricWeights weights;  // fusion weights for collaborative scoring
    uint64_t eval_seed = 2002;
    int eval_samples = 8;
    int gflops_text_len = 16;
    double f_vt = 0.0;
    double f_pj = 0.0;
};

struct RunReport {
    std::string mode;
    uint64_t model_seed = 0;
    std::string recipe_digest;  // empty when the mode does not prune
    std::string eval_digest;
    int eval_count = 0;
    std::vector<std::string> sample_logits_digests;
    double divergence_mean = 0.0;  // mean L2 over final-position logits vs fp baseline
    std::vector<std::vector<PruneEvent>> traces;  // per sample
    int final_visual_count = 0;
    GflopsReport gflops;
};

std::vector<CalibSample> make_eval_samples(const HarnessConfig& config);

// Runs one integration order over the eval samples. recipe_override, when
// given, is applied as-is by every pruning mode; otherwise the recipe is
// regenerated inline from the calibration seed (identical to the offline
// artifact for matching configs).
RunReport run_pipeline(const HarnessConfig& config, PipelineMode mode,
                       const std::vector<CalibSample>& eval_samples,
                       const PruningRecipe* recipe_override = nullptr);

struct ComparisonRow {
    std::string mode;
    double divergence_mean = 0.0;
    int final_visual_count = 0;
    double gflops_ratio_pct = 100.0;
};

struct ComparisonTable {
    std::vector<ComparisonRow> rows;  // sorted by mode name
};

// Requires every report to cover the same eval sample set.
ComparisonTable compare_reports(const std::vector<RunReport>& reports);

nlohmann::json report_to_json(const RunReport& report);
RunReport report_from_json(const nlohmann::json& j);

nlohmann::json comparison_to_json(const ComparisonTable& table);
std::string render_comparison_text(const ComparisonTable& table);

}  // namespace quota
