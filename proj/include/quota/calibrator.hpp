#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "quota/model.hpp"
#include "quota/recipe.hpp"

namespace quota {

// Offline recipe generation: profile quantization sensitivity per layer,
// normalize into [0.1, 0.9], convert to drop shares with a temperature
// softmax, fold into a non-increasing keep-ratio schedule, and pick the
// candidate pruning window from attention/redundancy diagnostics.

struct CalibSample {
    Matrix embeddings;
    SequenceLayout layout;
};

std::vector<CalibSample> make_calibration_samples(uint64_t seed, int count, int v0, int d_model,
                                                  int text_min = 8, int text_max = 32);

// Digest over the sample embeddings and layouts, for report comparability.
std::string sample_set_digest(const std::vector<CalibSample>& samples);

struct SensitivityProfile {
    std::vector<int> layers;         // profiled candidate layers
    std::vector<double> raw;         // relative fp-vs-quantized deviation, >= 0
    std::vector<double> normalized;  // clipped into [0.1, 0.9]
    double eta = 1e-6;
    int sample_count = 0;
};

struct BudgetSchedule {
    std::vector<int> candidate_layers;
    std::vector<double> drop_shares;  // sums to 1
    std::vector<double> drops;        // budget * share
    std::vector<double> keep_ratios;  // non-increasing, last entry == p_min
    double tau = 0.25;
    double p_min = 0.30;
    double budget = 0.70;  // 1 - p_min
};

// Per-layer medians of attention concentration (summed top-10 text->visual
// mass, averaged over heads and queries) with IQR, and of visual-token
// redundancy (median pairwise cosine), across calibration samples.
struct LayerDiagnostics {
    std::vector<double> concentration_median;
    std::vector<double> concentration_iqr;
    std::vector<double> redundancy_median;

    int n_layers() const { return static_cast<int>(concentration_median.size()); }
};

// Median over samples of ||x_q - x||_2 / (||x||_2 + eta) at each requested
// layer's post-block hidden state. A null QuantEnv disables quantization,
// making both paths identical and every sensitivity exactly zero.
SensitivityProfile profile_sensitivity(const Model& model, const std::vector<CalibSample>& samples,
                                       std::span<const int> layers, double eta,
                                       const QuantEnv* quant);

// clip((raw - P10) / (P90 - P10), 0.1, 0.9); a flat profile maps to all 0.5.
std::vector<double> normalize_sensitivities(std::span<const double> raw);

// softmax((1 - normalized) / tau): less sensitive layers absorb more drop.
Vector allocate_drop_shares(std::span<const double> normalized, double tau);

// Keep ratios from cumulative drops over a total budget of 1 - p_min.
std::vector<double> build_keep_schedule(std::span<const double> drop_shares, double p_min);

BudgetSchedule make_budget_schedule(const SensitivityProfile& profile, double tau, double p_min);

LayerDiagnostics profile_diagnostics(const Model& model, const std::vector<CalibSample>& samples,
                                     const QuantEnv* quant);

// Contiguous window of `window` eligible layers maximizing mean concentration
// minus mean redundancy, earliest on ties. The first `front_exclude` layers
// and the trailing `tail_exclude` layers (default: the last quarter) are
// never eligible.
std::vector<int> select_candidate_layers(const LayerDiagnostics& diagnostics, int window,
                                         int front_exclude = 2, int tail_exclude = -1);

// Validates the schedule and weights and assembles the deployable recipe.
PruningRecipe emit_recipe(const BudgetSchedule& schedule, const MetricWeights& weights, int v0,
                          const std::string& quant_digest);

// Fits per-site per-tensor activation scales from full-precision runs; the
// optional hook reproduces a pruned execution graph during collection.
ActScales fit_act_scales(const Model& model, const std::vector<CalibSample>& samples, int act_bits,
                         const PruneHook& hook = {});

struct CalibrationConfig {
    uint64_t seed = 1001;
    int samples = 16;
    int v0 = 64;
    double eta = 1e-6;
    int window = 5;
    double p_min = 0.30;
    double tau = 0.25;
    int text_min = 8;
    int text_max = 32;
};

struct CalibrationOutput {
    PruningRecipe recipe;
    LayerDiagnostics diagnostics;
    SensitivityProfile profile;
    BudgetSchedule schedule;
    ActScales act_scales;
};

// End-to-end offline pass: fit activation scales on the unpruned graph,
// profile diagnostics and sensitivities under the deployed quantizer, select
// the candidate window, build the schedule, and emit the recipe.
CalibrationOutput run_quota_calibration(const Model& model, const QuantConfig& quant,
                                        const CalibrationConfig& config,
                                        const MetricWeights& weights);

}  // namespace quota
