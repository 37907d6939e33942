#pragma once

#include <optional>
#include <span>
#include <vector>

#include "quota/model.hpp"
#include "quota/recipe.hpp"

namespace quota {

// Per-visual-token importance signals at one layer, all nonnegative.
struct TokenMetrics {
    Vector mag;    // L2 norm of the token state
    Vector inter;  // summed text->visual attention, averaged over heads
    Vector intra;  // summed visual->visual attention, averaged over heads
    Vector res;    // L2 quantization residual of the token state
};

struct ScoreVector {
    Vector mag_n, inter_n, intra_n, res_n;  // robust-normalized to [0,1]
    Vector fused;
    MetricWeights weights;
};

// ceil(keep_ratio * v0); keep_ratio in (0,1], v0 >= 1.
int compute_budget(double keep_ratio, int v0);

// Signals from a layer record. res_bits selects the per-token activation
// quantizer for the residual; nullopt (a full-precision pipeline with no
// deployed quantizer) makes the residual identically zero.
TokenMetrics compute_metrics(const LayerActivationRecord& record, std::optional<int> res_bits);

// Clip to [P5, P95] and rescale that interval to [0,1]; a constant input
// maps to all 0.5.
Vector robust_normalize(std::span<const double> values);

// Weighted sum of the four normalized metrics; weights must be nonnegative
// and sum to 1 within 1e-6.
Vector fuse_scores(const ScoreVector& normalized, const MetricWeights& weights);

ScoreVector score_tokens(const TokenMetrics& metrics, const MetricWeights& weights);

// The k largest scores, ties broken toward the smaller index; returned slots
// ascending. k > score count retains everything.
RetainedSet select_top_k(std::span<const double> scores, int k);

// Filters the layout to the retained visual slots (text always survives) and
// drops cache rows of pruned tokens at the pruning layer and deeper. Returns
// the kept row indices so callers can filter aligned per-token state.
std::vector<int> apply_pruning(SequenceLayout& layout, const RetainedSet& retained,
                               KVCacheState& cache);

// Hook wiring a recipe into forward_prefill: scores each candidate layer's
// record and returns the budgeted retained set.
PruneHook make_recipe_hook(const PruningRecipe& recipe, const MetricWeights& weights,
                           std::optional<int> res_bits);

}  // namespace quota
