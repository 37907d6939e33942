#include "quota/selector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <unordered_set>

namespace quota {

int compute_budget(double keep_ratio, int v0) {
    if (!(keep_ratio > 0.0 && keep_ratio <= 1.0)) {
        throw std::invalid_argument("keep ratio outside (0,1]");
    }
    if (v0 < 1) throw std::invalid_argument("v0 must be >= 1");
    return static_cast<int>(std::ceil(keep_ratio * static_cast<double>(v0)));
}

TokenMetrics compute_metrics(const LayerActivationRecord& record, std::optional<int> res_bits) {
    const int n = record.visual_states.rows;
    const size_t heads = record.attn_inter.size();
    if (heads == 0 || record.attn_intra.size() != heads) {
        throw std::invalid_argument("head count mismatch between attention blocks");
    }
    for (const Matrix& b : record.attn_inter) {
        if (b.cols != n) throw std::invalid_argument("inter block width mismatch");
    }
    for (const Matrix& b : record.attn_intra) {
        if (b.cols != n) throw std::invalid_argument("intra block width mismatch");
    }

    TokenMetrics m;
    m.mag.resize(n);
    m.inter.assign(n, 0.0);
    m.intra.assign(n, 0.0);
    m.res.assign(n, 0.0);

    for (int i = 0; i < n; ++i) m.mag[i] = l2_norm(record.visual_states.row(i));

    for (const Matrix& block : record.attn_inter) {
        for (int j = 0; j < block.rows; ++j) {
            for (int i = 0; i < n; ++i) m.inter[i] += block.at(j, i);
        }
    }
    for (const Matrix& block : record.attn_intra) {
        for (int k = 0; k < block.rows; ++k) {
            for (int i = 0; i < n; ++i) m.intra[i] += block.at(k, i);
        }
    }
    const double inv_heads = 1.0 / static_cast<double>(heads);
    for (int i = 0; i < n; ++i) {
        m.inter[i] *= inv_heads;
        m.intra[i] *= inv_heads;
    }

    if (res_bits) {
        Matrix fq = fake_quant_per_row(record.visual_states, *res_bits);
        for (int i = 0; i < n; ++i) {
            double acc = 0.0;
            for (int c = 0; c < fq.cols; ++c) {
                double d = fq.at(i, c) - record.visual_states.at(i, c);
                acc += d * d;
            }
            m.res[i] = std::sqrt(acc);
        }
    }
    return m;
}

Vector robust_normalize(std::span<const double> values) {
    if (values.empty()) throw std::invalid_argument("empty sample");
    double p5 = percentile(values, 5.0);
    double p95 = percentile(values, 95.0);
    Vector out(values.size());
    if (p95 - p5 < 1e-12) {
        std::fill(out.begin(), out.end(), 0.5);
        return out;
    }
    double inv = 1.0 / (p95 - p5);
    for (size_t i = 0; i < values.size(); ++i) {
        out[i] = std::clamp((values[i] - p5) * inv, 0.0, 1.0);
    }
    return out;
}

Vector fuse_scores(const ScoreVector& normalized, const MetricWeights& weights) {
    if (weights.mag < 0 || weights.inter < 0 || weights.intra < 0 || weights.quant < 0) {
        throw std::invalid_argument("negative metric weight");
    }
    if (std::fabs(weights.sum() - 1.0) > 1e-6) {
        throw std::invalid_argument("metric weights must sum to 1");
    }
    size_t n = normalized.mag_n.size();
    if (normalized.inter_n.size() != n || normalized.intra_n.size() != n ||
        normalized.res_n.size() != n) {
        throw std::invalid_argument("normalized metric length mismatch");
    }
    Vector fused(n);
    for (size_t i = 0; i < n; ++i) {
        fused[i] = weights.mag * normalized.mag_n[i] + weights.inter * normalized.inter_n[i] +
                   weights.intra * normalized.intra_n[i] + weights.quant * normalized.res_n[i];
    }
    return fused;
}

ScoreVector score_tokens(const TokenMetrics& metrics, const MetricWeights& weights) {
    ScoreVector s;
    s.weights = weights;
    s.mag_n = robust_normalize(metrics.mag);
    s.inter_n = robust_normalize(metrics.inter);
    s.intra_n = robust_normalize(metrics.intra);
    s.res_n = robust_normalize(metrics.res);
    s.fused = fuse_scores(s, weights);
    return s;
}

RetainedSet select_top_k(std::span<const double> scores, int k) {
    if (k < 1) throw std::invalid_argument("k must be >= 1");
    const int n = static_cast<int>(scores.size());
    RetainedSet rs;
    rs.budget = k;
    if (k >= n) {
        rs.slots.resize(n);
        std::iota(rs.slots.begin(), rs.slots.end(), 0);
        return rs;
    }
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&scores](int a, int b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    });
    rs.slots.assign(order.begin(), order.begin() + k);
    std::sort(rs.slots.begin(), rs.slots.end());
    return rs;
}

std::vector<int> apply_pruning(SequenceLayout& layout, const RetainedSet& retained,
                               KVCacheState& cache) {
    if (retained.slots.empty()) throw std::runtime_error("pruning would remove every visual token");
    int prev = -1;
    for (int s : retained.slots) {
        if (s <= prev) throw std::runtime_error("retained slots must be ascending and unique");
        if (s < 0 || s >= layout.visual_count) {
            throw std::runtime_error("pruning text or out-of-range token");
        }
        prev = s;
    }

    std::vector<int> keep(retained.slots.begin(), retained.slots.end());
    for (int i = layout.visual_count; i < layout.total(); ++i) keep.push_back(i);

    // retain-all is a strict no-op so identity pruning stays bitwise identical
    if (static_cast<int>(retained.slots.size()) == layout.visual_count) return keep;

    std::unordered_set<int> kept_positions;
    for (int idx : keep) kept_positions.insert(layout.position_ids[idx]);

    SequenceLayout next;
    next.visual_count = static_cast<int>(retained.slots.size());
    next.text_count = layout.text_count;
    for (int idx : keep) {
        next.position_ids.push_back(layout.position_ids[idx]);
        next.modality.push_back(layout.modality[idx]);
    }
    layout = std::move(next);

    for (size_t l = retained.layer; l < cache.layers.size(); ++l) {
        LayerKV& lk = cache.layers[l];
        if (lk.position_ids.empty()) continue;  // not materialized yet
        std::vector<int> rows;
        std::vector<int> positions;
        for (size_t r = 0; r < lk.position_ids.size(); ++r) {
            if (kept_positions.count(lk.position_ids[r])) {
                rows.push_back(static_cast<int>(r));
                positions.push_back(lk.position_ids[r]);
            }
        }
        if (rows.size() == lk.position_ids.size()) continue;
        for (HeadKV& hk : lk.heads) {
            if (cache.mode == ExecMode::Quantized) {
                QuantizedTensor k_sel, v_sel;
                auto select = [&rows](const QuantizedTensor& t) {
                    QuantizedTensor out;
                    out.rows = static_cast<int>(rows.size());
                    out.cols = t.cols;
                    out.params.bits = t.params.bits;
                    out.params.axis = t.params.axis;
                    out.codes.resize(rows.size() * static_cast<size_t>(t.cols));
                    out.params.scales.resize(rows.size());
                    for (size_t i = 0; i < rows.size(); ++i) {
                        std::copy_n(t.codes.begin() + static_cast<size_t>(rows[i]) * t.cols, t.cols,
                                    out.codes.begin() + i * t.cols);
                        out.params.scales[i] = t.params.scales[rows[i]];
                    }
                    return out;
                };
                hk.k_q = select(hk.k_q);
                hk.v_q = select(hk.v_q);
            } else {
                hk.k_fp = hk.k_fp.select_rows(rows);
                hk.v_fp = hk.v_fp.select_rows(rows);
            }
        }
        lk.position_ids = positions;
    }
    cache.layout = layout;
    return keep;
}

PruneHook make_recipe_hook(const PruningRecipe& recipe, const MetricWeights& weights,
                           std::optional<int> res_bits) {
    recipe.validate();
    return [recipe, weights, res_bits](const LayerActivationRecord& record,
                                       const SequenceLayout& layout) -> std::optional<RetainedSet> {
        for (size_t i = 0; i < recipe.candidate_layers.size(); ++i) {
            if (recipe.candidate_layers[i] != record.layer) continue;
            int budget = compute_budget(recipe.keep_ratios[i], recipe.v0);
            TokenMetrics metrics = compute_metrics(record, res_bits);
            ScoreVector scores = score_tokens(metrics, weights);
            RetainedSet rs = select_top_k(scores.fused, budget);
            rs.layer = record.layer;
            (void)layout;
            return rs;
        }
        return std::nullopt;
    };
}

}  // namespace quota
