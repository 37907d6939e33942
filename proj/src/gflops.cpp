#include "quota/gflops.hpp"

#include <stdexcept>

#include "quota/selector.hpp"

namespace quota {

void CostModel::validate() const {
    if (f_vt < 0 || f_pj < 0) throw std::invalid_argument("negative constant cost");
    if (d_model < 1 || d_ff < 1 || n_heads < 1) throw std::invalid_argument("invalid dims");
    if (d_model % n_heads != 0) throw std::invalid_argument("d_model must divide by n_heads");
    if (text_len < 0) throw std::invalid_argument("negative text length");
}

double layer_cost(int seq_len, const CostModel& cm) {
    if (seq_len < 1) throw std::invalid_argument("sequence length must be >= 1");
    const double s = static_cast<double>(seq_len);
    const double d = static_cast<double>(cm.d_model);
    const double f = static_cast<double>(cm.d_ff);
    return 8.0 * s * d * d + 4.0 * s * s * d + 4.0 * s * d * f;
}

GflopsReport pipeline_flops(std::span<const int> v_hat, int v0, const CostModel& cm) {
    cm.validate();
    if (v_hat.empty()) throw std::invalid_argument("empty schedule");
    if (v0 < 1) throw std::invalid_argument("v0 must be >= 1");
    for (size_t l = 0; l < v_hat.size(); ++l) {
        if (v_hat[l] < 1 || v_hat[l] > v0) {
            throw std::invalid_argument("executed visual length outside [1, v0]");
        }
        if (l > 0 && v_hat[l] > v_hat[l - 1]) {
            throw std::invalid_argument("executed visual lengths must be non-increasing");
        }
    }

    GflopsReport report;
    report.layers.reserve(v_hat.size());
    double sum_pruned = 0.0;
    double sum_base = 0.0;
    for (size_t l = 0; l < v_hat.size(); ++l) {
        double cost = layer_cost(cm.text_len + v_hat[l], cm);
        report.layers.push_back({static_cast<int>(l), v_hat[l], cost});
        sum_pruned += cost;
        sum_base += layer_cost(cm.text_len + v0, cm);
    }
    report.f_vlm = cm.f_vt + cm.f_pj + sum_pruned;
    report.f_base = cm.f_vt + cm.f_pj + sum_base;
    report.ratio_pct = report.f_vlm / report.f_base * 100.0;
    return report;
}

std::vector<int> executed_visual_lengths(const PruningRecipe& recipe, int n_layers) {
    recipe.validate();
    if (n_layers < 1) throw std::invalid_argument("n_layers must be >= 1");
    if (!recipe.candidate_layers.empty() && recipe.candidate_layers.back() >= n_layers) {
        throw std::invalid_argument("recipe candidate layer beyond model depth");
    }
    std::vector<int> v_hat(n_layers);
    int current = recipe.v0;
    size_t next_candidate = 0;
    for (int l = 0; l < n_layers; ++l) {
        v_hat[l] = current;
        if (next_candidate < recipe.candidate_layers.size() &&
            recipe.candidate_layers[next_candidate] == l) {
            int budget = compute_budget(recipe.keep_ratios[next_candidate], recipe.v0);
            current = std::min(current, budget);
            ++next_candidate;
        }
    }
    return v_hat;
}

}  // namespace quota
