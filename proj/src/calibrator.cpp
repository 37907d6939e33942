#include "quota/calibrator.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "quota/digest.hpp"
#include "quota/rng.hpp"

namespace quota {

std::vector<CalibSample> make_calibration_samples(uint64_t seed, int count, int v0, int d_model,
                                                  int text_min, int text_max) {
    if (count < 1) throw std::invalid_argument("need at least one sample");
    if (v0 < 1 || d_model < 1) throw std::invalid_argument("invalid sample dims");
    if (text_min < 1 || text_max < text_min) throw std::invalid_argument("invalid text range");
    std::vector<CalibSample> samples;
    samples.reserve(count);
    for (int i = 0; i < count; ++i) {
        SplitMix64 rng(mix_seed(seed, static_cast<uint64_t>(i)));
        int text_count = rng.next_int(text_min, text_max);
        CalibSample s;
        s.layout = SequenceLayout::prefix(v0, text_count);
        s.embeddings = Matrix(s.layout.total(), d_model);
        for (double& v : s.embeddings.data) v = rng.next_uniform(-1.0, 1.0);
        samples.push_back(std::move(s));
    }
    return samples;
}

std::string sample_set_digest(const std::vector<CalibSample>& samples) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const CalibSample& s : samples) {
        h = fnv1a64(s.embeddings.data, h);
        h = fnv1a64(s.layout.position_ids.data(), s.layout.position_ids.size() * sizeof(int), h);
        int counts[2] = {s.layout.visual_count, s.layout.text_count};
        h = fnv1a64(counts, sizeof(counts), h);
    }
    return to_hex(h);
}

SensitivityProfile profile_sensitivity(const Model& model, const std::vector<CalibSample>& samples,
                                       std::span<const int> layers, double eta,
                                       const QuantEnv* quant) {
    if (samples.empty()) throw std::invalid_argument("no calibration samples");
    if (layers.empty()) throw std::invalid_argument("no layers to profile");
    for (int l : layers) {
        if (l < 0 || l >= model.config.n_layers) throw std::invalid_argument("layer out of range");
    }

    // per layer, per sample relative deviations; samples folded in input order
    std::vector<std::vector<double>> deviations(layers.size());
    for (const CalibSample& s : samples) {
        ForwardOptions fp_opts;
        ForwardResult fp = forward_prefill(model, s.embeddings, s.layout, fp_opts);

        const ForwardResult* q = &fp;
        ForwardResult q_run;
        if (quant != nullptr) {
            ForwardOptions q_opts;
            q_opts.mode = ExecMode::Quantized;
            q_opts.quant = quant;
            q_run = forward_prefill(model, s.embeddings, s.layout, q_opts);
            q = &q_run;
        }

        for (size_t i = 0; i < layers.size(); ++i) {
            const Matrix& x = fp.block_outputs[layers[i]];
            const Matrix& xq = q->block_outputs[layers[i]];
            deviations[i].push_back(l2_distance(xq, x) / (frobenius_norm(x) + eta));
        }
    }

    SensitivityProfile profile;
    profile.layers.assign(layers.begin(), layers.end());
    profile.eta = eta;
    profile.sample_count = static_cast<int>(samples.size());
    profile.raw.reserve(layers.size());
    for (const auto& per_sample : deviations) profile.raw.push_back(median(per_sample));
    profile.normalized = normalize_sensitivities(profile.raw);
    return profile;
}

std::vector<double> normalize_sensitivities(std::span<const double> raw) {
    if (raw.empty()) throw std::invalid_argument("empty sample");
    double p10 = percentile(raw, 10.0);
    double p90 = percentile(raw, 90.0);
    std::vector<double> out(raw.size());
    if (p90 - p10 < 1e-12) {
        std::fill(out.begin(), out.end(), 0.5);  // flat profile: neutral sensitivity
        return out;
    }
    double inv = 1.0 / (p90 - p10);
    for (size_t i = 0; i < raw.size(); ++i) {
        out[i] = std::clamp((raw[i] - p10) * inv, 0.1, 0.9);
    }
    return out;
}

Vector allocate_drop_shares(std::span<const double> normalized, double tau) {
    if (tau <= 0.0) throw std::invalid_argument("invalid temperature");
    Vector logits(normalized.size());
    for (size_t i = 0; i < normalized.size(); ++i) logits[i] = 1.0 - normalized[i];
    return softmax_with_temperature(logits, tau);
}

std::vector<double> build_keep_schedule(std::span<const double> drop_shares, double p_min) {
    if (!(p_min > 0.0 && p_min <= 1.0)) throw std::invalid_argument("p_min outside (0,1]");
    if (drop_shares.empty()) throw std::invalid_argument("empty drop shares");
    double share_sum = 0.0;
    for (double s : drop_shares) {
        if (s < 0.0) throw std::invalid_argument("negative drop share");
        share_sum += s;
    }
    if (std::fabs(share_sum - 1.0) > 1e-6) throw std::invalid_argument("drop shares must sum to 1");

    const double budget = 1.0 - p_min;
    std::vector<double> keep(drop_shares.size());
    double dropped = 0.0;
    for (size_t i = 0; i < drop_shares.size(); ++i) {
        dropped += budget * drop_shares[i];
        keep[i] = std::max(p_min, 1.0 - dropped);
    }
    keep.back() = p_min;  // cumulative drops sum to the whole budget
    return keep;
}

BudgetSchedule make_budget_schedule(const SensitivityProfile& profile, double tau, double p_min) {
    BudgetSchedule schedule;
    schedule.candidate_layers = profile.layers;
    schedule.tau = tau;
    schedule.p_min = p_min;
    schedule.budget = 1.0 - p_min;
    schedule.drop_shares = allocate_drop_shares(profile.normalized, tau);
    schedule.drops.resize(schedule.drop_shares.size());
    for (size_t i = 0; i < schedule.drops.size(); ++i) {
        schedule.drops[i] = schedule.budget * schedule.drop_shares[i];
    }
    schedule.keep_ratios = build_keep_schedule(schedule.drop_shares, p_min);
    return schedule;
}

namespace {

// Mean over heads and text queries of the summed top-10 attention mass each
// text query places on visual keys.
double concentration_for_record(const LayerActivationRecord& record) {
    double total = 0.0;
    int rows = 0;
    for (const Matrix& block : record.attn_inter) {
        for (int j = 0; j < block.rows; ++j) {
            std::vector<double> row(block.row(j).begin(), block.row(j).end());
            size_t k = std::min<size_t>(10, row.size());
            std::partial_sort(row.begin(), row.begin() + k, row.end(), std::greater<>());
            double mass = 0.0;
            for (size_t i = 0; i < k; ++i) mass += row[i];
            total += mass;
            ++rows;
        }
    }
    return rows == 0 ? 0.0 : total / static_cast<double>(rows);
}

}  // namespace

LayerDiagnostics profile_diagnostics(const Model& model, const std::vector<CalibSample>& samples,
                                     const QuantEnv* quant) {
    if (samples.empty()) throw std::invalid_argument("no calibration samples");
    const int n_layers = model.config.n_layers;
    std::vector<std::vector<double>> conc(n_layers), red(n_layers);

    for (const CalibSample& s : samples) {
        ForwardOptions opts;
        if (quant != nullptr) {
            opts.mode = ExecMode::Quantized;
            opts.quant = quant;
        }
        ForwardResult run = forward_prefill(model, s.embeddings, s.layout, opts);
        for (int l = 0; l < n_layers; ++l) {
            conc[l].push_back(concentration_for_record(run.records[l]));
            red[l].push_back(median_pairwise_cosine(run.records[l].visual_states));
        }
    }

    LayerDiagnostics diag;
    diag.concentration_median.resize(n_layers);
    diag.concentration_iqr.resize(n_layers);
    diag.redundancy_median.resize(n_layers);
    for (int l = 0; l < n_layers; ++l) {
        diag.concentration_median[l] = median(conc[l]);
        diag.concentration_iqr[l] = percentile(conc[l], 75.0) - percentile(conc[l], 25.0);
        diag.redundancy_median[l] = median(red[l]);
    }
    return diag;
}

std::vector<int> select_candidate_layers(const LayerDiagnostics& diagnostics, int window,
                                         int front_exclude, int tail_exclude) {
    const int n = diagnostics.n_layers();
    if (window < 1) throw std::invalid_argument("window must be >= 1");
    if (tail_exclude < 0) tail_exclude = n / 4;
    const int first = front_exclude;
    const int last = n - tail_exclude;  // exclusive
    if (last - first < window) throw std::invalid_argument("infeasible candidate window");

    int best_start = first;
    double best_score = -1e300;
    for (int start = first; start + window <= last; ++start) {
        double c = 0.0, r = 0.0;
        for (int l = start; l < start + window; ++l) {
            c += diagnostics.concentration_median[l];
            r += diagnostics.redundancy_median[l];
        }
        double score = (c - r) / static_cast<double>(window);
        if (score > best_score) {  // strict: ties keep the earliest window
            best_score = score;
            best_start = start;
        }
    }
    std::vector<int> layers(window);
    for (int i = 0; i < window; ++i) layers[i] = best_start + i;
    return layers;
}

PruningRecipe emit_recipe(const BudgetSchedule& schedule, const MetricWeights& weights, int v0,
                          const std::string& quant_digest) {
    PruningRecipe recipe;
    recipe.candidate_layers = schedule.candidate_layers;
    recipe.keep_ratios = schedule.keep_ratios;
    recipe.weights = weights;
    recipe.v0 = v0;
    recipe.quant_digest = quant_digest;
    recipe.validate();  // refuse to emit on any invariant violation
    return recipe;
}

ActScales fit_act_scales(const Model& model, const std::vector<CalibSample>& samples, int act_bits,
                         const PruneHook& hook) {
    if (samples.empty()) throw std::invalid_argument("no calibration samples");
    ActStats stats;
    stats.ensure(model.config.n_layers);
    for (const CalibSample& s : samples) {
        ForwardOptions opts;
        opts.hook = hook;
        opts.act_stats = &stats;
        forward_prefill(model, s.embeddings, s.layout, opts);
    }
    return stats.to_scales(act_bits);
}

CalibrationOutput run_quota_calibration(const Model& model, const QuantConfig& quant,
                                        const CalibrationConfig& config,
                                        const MetricWeights& weights) {
    std::vector<CalibSample> samples = make_calibration_samples(
        config.seed, config.samples, config.v0, model.config.d_model, config.text_min,
        config.text_max);

    CalibrationOutput out;
    out.act_scales = fit_act_scales(model, samples, quant.act_bits);
    QuantEnv env = prepare_quant_env(model, quant, out.act_scales);

    out.diagnostics = profile_diagnostics(model, samples, &env);
    std::vector<int> candidates = select_candidate_layers(out.diagnostics, config.window);
    out.profile = profile_sensitivity(model, samples, candidates, config.eta, &env);
    out.schedule = make_budget_schedule(out.profile, config.tau, config.p_min);
    out.recipe = emit_recipe(out.schedule, weights, config.v0, quant.digest());
    return out;
}

}  // namespace quota
