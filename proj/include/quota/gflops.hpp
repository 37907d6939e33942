#pragma once

#include <span>
#include <string>
#include <vector>

#include "quota/recipe.hpp"

namespace quota {

// Prefill cost accounting. Per-layer cost as a function of the executed
// sequence length S = T + V_hat, with multiply-accumulate counted as 2 FLOPs:
//
//   cost(S) = 8*S*d_model^2          (q/k/v/o projections)
//           + 4*S^2*d_model          (attention scores + weighted sum)
//           + 4*S*d_model*d_ff       (two MLP matmuls)
//
// Vision tower and projector enter as fixed constants and cancel in relative
// comparisons between pruning schedules on the same model.
struct CostModel {
    double f_vt = 0.0;
    double f_pj = 0.0;
    int d_model = 32;
    int d_ff = 128;
    int n_heads = 4;
    int text_len = 16;

    void validate() const;
};

double layer_cost(int seq_len, const CostModel& cm);

struct GflopsLayer {
    int layer = 0;
    int v_hat = 0;
    double cost = 0.0;
};

struct GflopsReport {
    std::vector<GflopsLayer> layers;
    double f_vlm = 0.0;
    double f_base = 0.0;
    double ratio_pct = 100.0;
};

// v_hat holds the executed visual length at each layer entry; it must be
// non-increasing and bounded by v0. The baseline runs every layer at v0.
GflopsReport pipeline_flops(std::span<const int> v_hat, int v0, const CostModel& cm);

// Executed visual length per layer under a recipe: v0 until the first
// candidate layer, then the running minimum of ceil(r_l * v0) from each
// pruning layer onward (the reduction lands on the layers after the prune).
std::vector<int> executed_visual_lengths(const PruningRecipe& recipe, int n_layers);

}  // namespace quota
