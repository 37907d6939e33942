#include "quota/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "quota/digest.hpp"
#include "quota/rng.hpp"
#include "quota/selector.hpp"

namespace quota {

namespace {

constexpr double kNormEps = 1e-6;
constexpr double kRopeBase = 10000.0;
constexpr double kNegInf = -1e30;

Matrix random_matrix(SplitMix64& rng, int rows, int cols, double bound) {
    Matrix m(rows, cols);
    for (double& v : m.data) v = rng.next_uniform(-bound, bound);
    return m;
}

const Matrix& weight(const LayerWeights& fp, const QuantizedLayerWeights* q,
                     Matrix LayerWeights::* fp_member, QuantizedWeight QuantizedLayerWeights::* q_member) {
    return q ? (q->*q_member).deq : fp.*fp_member;
}

// Applies the per-site activation quantizer in quantized mode, identity in fp.
Matrix site_quant(const Matrix& x, const QuantParams* params) {
    return params ? fake_quant(x, *params) : x;
}

struct MaskRule {
    // true when query token qi may attend to key token ki
    static bool allowed(const SequenceLayout& layout, int qi, int ki) {
        bool q_visual = layout.modality[qi] == Modality::Visual;
        bool k_visual = layout.modality[ki] == Modality::Visual;
        if (q_visual) return k_visual;  // prefix is bidirectional, blind to text
        if (k_visual) return true;      // text sees the whole visual prefix
        return layout.position_ids[ki] <= layout.position_ids[qi];  // causal text
    }
};

}  // namespace

void ModelConfig::validate() const {
    if (n_layers < 4) throw std::invalid_argument("n_layers must be >= 4");
    if (n_heads < 1 || d_head < 2 || d_head % 2 != 0) {
        throw std::invalid_argument("d_head must be even and >= 2");
    }
    if (d_model != n_heads * d_head) {
        throw std::invalid_argument("d_model must equal n_heads * d_head");
    }
}

void SequenceLayout::validate() const {
    if (visual_count < 0 || text_count < 0) throw std::invalid_argument("negative token count");
    size_t n = static_cast<size_t>(total());
    if (position_ids.size() != n || modality.size() != n) {
        throw std::invalid_argument("layout length mismatch");
    }
    for (size_t i = 0; i + 1 < n; ++i) {
        if (position_ids[i] >= position_ids[i + 1]) {
            throw std::invalid_argument("position_ids must be strictly increasing");
        }
    }
    for (int i = 0; i < total(); ++i) {
        Modality expect = i < visual_count ? Modality::Visual : Modality::Text;
        if (modality[i] != expect) throw std::invalid_argument("visual tokens must precede text");
    }
}

SequenceLayout SequenceLayout::prefix(int visual_count, int text_count) {
    SequenceLayout l;
    l.visual_count = visual_count;
    l.text_count = text_count;
    l.position_ids.resize(visual_count + text_count);
    l.modality.resize(visual_count + text_count);
    for (int i = 0; i < l.total(); ++i) {
        l.position_ids[i] = i;
        l.modality[i] = i < visual_count ? Modality::Visual : Modality::Text;
    }
    return l;
}

int64_t Model::parameter_count() const {
    const int d = config.d_model;
    const int f = config.d_ff();
    int64_t per_layer = 4LL * d * d + 2LL * d * f + 2LL * d;
    return config.n_layers * per_layer + d + static_cast<int64_t>(d) * d;
}

uint64_t Model::weight_checksum() const {
    uint64_t h = 0xcbf29ce484222325ULL;
    auto fold = [&h](std::span<const double> v) { h = fnv1a64(v, h); };
    for (const auto& l : layers) {
        fold(l.wq.data);
        fold(l.wk.data);
        fold(l.wv.data);
        fold(l.wo.data);
        fold(l.w1.data);
        fold(l.w2.data);
        fold(l.norm1_gain);
        fold(l.norm2_gain);
    }
    fold(final_norm_gain);
    fold(w_head.data);
    return h;
}

Model init_model(const ModelConfig& config) {
    config.validate();
    Model m;
    m.config = config;
    SplitMix64 rng(config.seed);
    const int d = config.d_model;
    const int f = config.d_ff();
    const double bound = 1.0 / std::sqrt(static_cast<double>(d));
    m.layers.resize(config.n_layers);
    for (auto& l : m.layers) {
        l.wq = random_matrix(rng, d, d, bound);
        l.wk = random_matrix(rng, d, d, bound);
        l.wv = random_matrix(rng, d, d, bound);
        l.wo = random_matrix(rng, d, d, bound);
        l.w1 = random_matrix(rng, d, f, bound);
        l.w2 = random_matrix(rng, f, d, 1.0 / std::sqrt(static_cast<double>(f)));
        l.norm1_gain.assign(d, 1.0);
        l.norm2_gain.assign(d, 1.0);
    }
    m.final_norm_gain.assign(d, 1.0);
    m.w_head = random_matrix(rng, d, d, bound);
    return m;
}

Vector rms_norm(std::span<const double> x, std::span<const double> gain) {
    double ms = 0.0;
    for (double v : x) ms += v * v;
    ms /= static_cast<double>(x.size());
    double inv = 1.0 / std::sqrt(ms + kNormEps);
    Vector out(x.size());
    for (size_t i = 0; i < x.size(); ++i) out[i] = x[i] * inv * gain[i];
    return out;
}

Matrix rms_norm_rows(const Matrix& x, std::span<const double> gain) {
    Matrix out(x.rows, x.cols);
    for (int r = 0; r < x.rows; ++r) {
        Vector n = rms_norm(x.row(r), gain);
        std::copy(n.begin(), n.end(), out.row(r).begin());
    }
    return out;
}

void rope_in_place(std::span<double> head_vec, int position) {
    const size_t half = head_vec.size() / 2;
    for (size_t i = 0; i < half; ++i) {
        double freq = std::pow(kRopeBase, -2.0 * static_cast<double>(i) / static_cast<double>(head_vec.size()));
        double angle = static_cast<double>(position) * freq;
        double c = std::cos(angle);
        double s = std::sin(angle);
        double x = head_vec[2 * i];
        double y = head_vec[2 * i + 1];
        head_vec[2 * i] = x * c - y * s;
        head_vec[2 * i + 1] = x * s + y * c;
    }
}

double silu(double x) {
    return x / (1.0 + std::exp(-x));
}

void ActStats::ensure(int n_layers) {
    if (layer_max.size() < static_cast<size_t>(n_layers)) {
        layer_max.resize(n_layers, {0.0, 0.0, 0.0, 0.0});
    }
}

void ActStats::observe(int layer, int site, const Matrix& x) {
    double& m = layer_max[layer][site];
    for (double v : x.data) {
        double a = std::fabs(v);
        if (a > m) m = a;
    }
}

void ActStats::observe_head(const Matrix& x) {
    for (double v : x.data) {
        double a = std::fabs(v);
        if (a > head_in_max) head_in_max = a;
    }
}

ActScales ActStats::to_scales(int act_bits) const {
    auto make = [act_bits](double max_abs) {
        QuantParams p;
        p.bits = act_bits;
        p.axis = GroupAxis::PerTensor;
        p.scales = {max_abs == 0.0 ? 1.0 : max_abs / static_cast<double>(p.qmax())};
        return p;
    };
    ActScales s;
    s.layers.reserve(layer_max.size());
    for (const auto& lm : layer_max) {
        s.layers.push_back({make(lm[0]), make(lm[1]), make(lm[2]), make(lm[3])});
    }
    s.head_in = make(head_in_max);
    return s;
}

QuantEnv prepare_quant_env(const Model& model, const QuantConfig& config, const ActScales& act) {
    if (act.layers.size() != static_cast<size_t>(model.config.n_layers)) {
        throw std::invalid_argument("activation scales do not cover all layers");
    }
    QuantEnv env;
    env.config = config;
    env.act = act;
    env.layers.resize(model.layers.size());
    auto pack = [&config](const Matrix& w) {
        QuantizedWeight qw;
        qw.codes = quantize(w, fit_params(w, config.weight_bits, GroupAxis::PerRow));
        qw.deq = dequantize(qw.codes);
        return qw;
    };
    for (size_t l = 0; l < model.layers.size(); ++l) {
        const auto& src = model.layers[l];
        env.layers[l].wq = pack(src.wq);
        env.layers[l].wk = pack(src.wk);
        env.layers[l].wv = pack(src.wv);
        env.layers[l].wo = pack(src.wo);
        env.layers[l].w1 = pack(src.w1);
        env.layers[l].w2 = pack(src.w2);
    }
    env.w_head = pack(model.w_head);
    return env;
}

namespace {

struct HeadSlices {
    // per-head token x d_head matrices with rotary positions applied to q/k
    std::vector<Matrix> q, k, v;
};

HeadSlices split_heads(const Matrix& q, const Matrix& k, const Matrix& v,
                       const std::vector<int>& positions, int n_heads, int d_head) {
    HeadSlices s;
    s.q.reserve(n_heads);
    s.k.reserve(n_heads);
    s.v.reserve(n_heads);
    for (int h = 0; h < n_heads; ++h) {
        Matrix qh(q.rows, d_head), kh(q.rows, d_head), vh(q.rows, d_head);
        for (int r = 0; r < q.rows; ++r) {
            for (int c = 0; c < d_head; ++c) {
                qh.at(r, c) = q.at(r, h * d_head + c);
                kh.at(r, c) = k.at(r, h * d_head + c);
                vh.at(r, c) = v.at(r, h * d_head + c);
            }
            rope_in_place(qh.row(r), positions[r]);
            rope_in_place(kh.row(r), positions[r]);
        }
        s.q.push_back(std::move(qh));
        s.k.push_back(std::move(kh));
        s.v.push_back(std::move(vh));
    }
    return s;
}

// Row softmax of masked scaled dot products; every row has at least one
// allowed key, so rows always sum to 1.
Matrix masked_attention_probs(const Matrix& qh, const Matrix& kh, const SequenceLayout& layout) {
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(qh.cols));
    Matrix probs(qh.rows, kh.rows);
    for (int i = 0; i < qh.rows; ++i) {
        double max_score = kNegInf;
        std::vector<double> scores(kh.rows, kNegInf);
        for (int j = 0; j < kh.rows; ++j) {
            if (!MaskRule::allowed(layout, i, j)) continue;
            scores[j] = dot(qh.row(i), kh.row(j)) * inv_sqrt;
            if (scores[j] > max_score) max_score = scores[j];
        }
        double sum = 0.0;
        for (int j = 0; j < kh.rows; ++j) {
            double e = scores[j] <= kNegInf ? 0.0 : std::exp(scores[j] - max_score);
            probs.at(i, j) = e;
            sum += e;
        }
        for (int j = 0; j < kh.rows; ++j) probs.at(i, j) /= sum;
    }
    return probs;
}

Matrix slice_block(const Matrix& probs, int row_begin, int row_count, int col_begin, int col_count) {
    Matrix out(row_count, col_count);
    for (int r = 0; r < row_count; ++r) {
        for (int c = 0; c < col_count; ++c) {
            out.at(r, c) = probs.at(row_begin + r, col_begin + c);
        }
    }
    return out;
}

// Functional append of a freshly quantized single row (own scale per token).
QuantizedTensor append_quant_row(const QuantizedTensor& t, const QuantizedTensor& row) {
    QuantizedTensor out = t;
    out.rows += 1;
    out.codes.insert(out.codes.end(), row.codes.begin(), row.codes.end());
    out.params.scales.push_back(row.params.scales[0]);
    return out;
}

}  // namespace

ForwardResult forward_prefill(const Model& model, const Matrix& embeddings,
                              const SequenceLayout& layout, const ForwardOptions& options) {
    model.config.validate();
    layout.validate();
    if (embeddings.rows != layout.total() || embeddings.cols != model.config.d_model) {
        throw std::invalid_argument("embedding shape does not match layout");
    }
    const bool quantized = options.mode == ExecMode::Quantized;
    if (quantized && options.quant == nullptr) {
        throw std::invalid_argument("quantized mode requires a QuantEnv");
    }
    const QuantEnv* env = quantized ? options.quant : nullptr;
    const int n_heads = model.config.n_heads;
    const int d_head = model.config.d_head;

    ForwardResult result;
    result.cache.mode = options.mode;
    result.cache.kv_bits = env ? env->config.kv_bits : 0;
    result.cache.layers.resize(model.config.n_layers);
    result.records.reserve(model.config.n_layers);
    result.block_outputs.reserve(model.config.n_layers);

    Matrix x = embeddings;
    SequenceLayout cur = layout;

    if (options.act_stats) options.act_stats->ensure(model.config.n_layers);

    for (int l = 0; l < model.config.n_layers; ++l) {
        const LayerWeights& w = model.layers[l];
        const QuantizedLayerWeights* qw = env ? &env->layers[l] : nullptr;
        const LayerActScales* scales = env ? &env->act.layers[l] : nullptr;

        Matrix normed = rms_norm_rows(x, w.norm1_gain);
        if (options.act_stats) options.act_stats->observe(l, 0, normed);
        Matrix attn_in = site_quant(normed, scales ? &scales->attn_in : nullptr);

        Matrix q = matmul(attn_in, weight(w, qw, &LayerWeights::wq, &QuantizedLayerWeights::wq));
        Matrix k = matmul(attn_in, weight(w, qw, &LayerWeights::wk, &QuantizedLayerWeights::wk));
        Matrix v = matmul(attn_in, weight(w, qw, &LayerWeights::wv, &QuantizedLayerWeights::wv));
        HeadSlices heads = split_heads(q, k, v, cur.position_ids, n_heads, d_head);

        LayerKV& cache_layer = result.cache.layers[l];
        cache_layer.heads.resize(n_heads);
        cache_layer.position_ids = cur.position_ids;

        Matrix attn_concat(cur.total(), model.config.d_model);
        LayerActivationRecord record;
        record.layer = l;
        record.attn_inter.reserve(n_heads);
        record.attn_intra.reserve(n_heads);

        for (int h = 0; h < n_heads; ++h) {
            Matrix k_used, v_used;
            if (quantized) {
                QuantizedTensor kq = kv_quantize(heads.k[h], env->config.kv_bits);
                QuantizedTensor vq = kv_quantize(heads.v[h], env->config.kv_bits);
                k_used = dequantize(kq);
                v_used = dequantize(vq);
                cache_layer.heads[h].k_q = std::move(kq);
                cache_layer.heads[h].v_q = std::move(vq);
            } else {
                k_used = heads.k[h];
                v_used = heads.v[h];
                cache_layer.heads[h].k_fp = k_used;
                cache_layer.heads[h].v_fp = v_used;
            }
            Matrix probs = masked_attention_probs(heads.q[h], k_used, cur);
            record.attn_inter.push_back(
                slice_block(probs, cur.visual_count, cur.text_count, 0, cur.visual_count));
            record.attn_intra.push_back(slice_block(probs, 0, cur.visual_count, 0, cur.visual_count));
            Matrix out_h = matmul(probs, v_used);
            for (int r = 0; r < cur.total(); ++r) {
                for (int c = 0; c < d_head; ++c) {
                    attn_concat.at(r, h * d_head + c) = out_h.at(r, c);
                }
            }
        }

        if (options.act_stats) options.act_stats->observe(l, 1, attn_concat);
        Matrix attn_q = site_quant(attn_concat, scales ? &scales->attn_out : nullptr);
        Matrix attn_proj = matmul(attn_q, weight(w, qw, &LayerWeights::wo, &QuantizedLayerWeights::wo));
        for (size_t i = 0; i < x.data.size(); ++i) x.data[i] += attn_proj.data[i];

        std::vector<int> visual_rows(cur.visual_count), text_rows(cur.text_count);
        for (int i = 0; i < cur.visual_count; ++i) visual_rows[i] = i;
        for (int i = 0; i < cur.text_count; ++i) text_rows[i] = cur.visual_count + i;
        record.visual_states = x.select_rows(visual_rows);
        record.text_states = x.select_rows(text_rows);

        std::optional<RetainedSet> retained;
        if (options.hook) retained = options.hook(record, cur);
        result.records.push_back(std::move(record));

        if (retained && static_cast<int>(retained->slots.size()) < cur.visual_count) {
            PruneEvent ev;
            ev.layer = l;
            ev.budget = retained->budget;
            for (int s : retained->slots) {
                if (s < 0 || s >= cur.visual_count) {
                    throw std::runtime_error("pruning text or out-of-range token");
                }
                ev.retained_positions.push_back(cur.position_ids[s]);
            }
            result.prune_trace.push_back(std::move(ev));

            retained->layer = l;
            std::vector<int> keep = apply_pruning(cur, *retained, result.cache);
            x = x.select_rows(keep);
        } else if (retained) {
            RetainedSet checked = *retained;
            checked.layer = l;
            apply_pruning(cur, checked, result.cache);  // validates; retain-all is a no-op
        }

        Matrix normed2 = rms_norm_rows(x, w.norm2_gain);
        if (options.act_stats) options.act_stats->observe(l, 2, normed2);
        Matrix mlp_in = site_quant(normed2, scales ? &scales->mlp_in : nullptr);
        Matrix mid = matmul(mlp_in, weight(w, qw, &LayerWeights::w1, &QuantizedLayerWeights::w1));
        for (double& m : mid.data) m = silu(m);
        if (options.act_stats) options.act_stats->observe(l, 3, mid);
        Matrix mid_q = site_quant(mid, scales ? &scales->mlp_mid : nullptr);
        Matrix mlp_out = matmul(mid_q, weight(w, qw, &LayerWeights::w2, &QuantizedLayerWeights::w2));
        for (size_t i = 0; i < x.data.size(); ++i) x.data[i] += mlp_out.data[i];

        result.block_outputs.push_back(x);
    }

    Matrix final_norm = rms_norm_rows(x, model.final_norm_gain);
    if (options.act_stats) options.act_stats->observe_head(final_norm);
    Matrix head_in = env ? fake_quant(final_norm, env->act.head_in) : final_norm;
    result.logits = matmul(head_in, env ? env->w_head.deq : model.w_head);

    result.final_layout = cur;
    result.cache.layout = cur;
    result.cache.next_position = layout.position_ids.empty()
                                     ? 0
                                     : layout.position_ids.back() + 1;
    return result;
}

Vector decode_step(const Model& model, const QuantEnv* quant, KVCacheState& cache,
                   std::span<const double> embedding) {
    const bool quantized = cache.mode == ExecMode::Quantized;
    if (quantized != (quant != nullptr)) {
        throw std::runtime_error("cache and execution mode mismatch");
    }
    if (cache.layers.size() != static_cast<size_t>(model.config.n_layers)) {
        throw std::invalid_argument("cache does not match model depth");
    }
    if (embedding.size() != static_cast<size_t>(model.config.d_model)) {
        throw std::invalid_argument("embedding width mismatch");
    }
    const int n_heads = model.config.n_heads;
    const int d_head = model.config.d_head;
    const int pos = cache.next_position;

    Matrix x(1, model.config.d_model);
    std::copy(embedding.begin(), embedding.end(), x.data.begin());

    for (int l = 0; l < model.config.n_layers; ++l) {
        const LayerWeights& w = model.layers[l];
        const QuantizedLayerWeights* qw = quant ? &quant->layers[l] : nullptr;
        const LayerActScales* scales = quant ? &quant->act.layers[l] : nullptr;

        Matrix normed = rms_norm_rows(x, w.norm1_gain);
        Matrix attn_in = site_quant(normed, scales ? &scales->attn_in : nullptr);
        Matrix q = matmul(attn_in, weight(w, qw, &LayerWeights::wq, &QuantizedLayerWeights::wq));
        Matrix k = matmul(attn_in, weight(w, qw, &LayerWeights::wk, &QuantizedLayerWeights::wk));
        Matrix v = matmul(attn_in, weight(w, qw, &LayerWeights::wv, &QuantizedLayerWeights::wv));

        LayerKV& cache_layer = cache.layers[l];
        Matrix attn_concat(1, model.config.d_model);
        for (int h = 0; h < n_heads; ++h) {
            Matrix qh(1, d_head), kh(1, d_head), vh(1, d_head);
            for (int c = 0; c < d_head; ++c) {
                qh.at(0, c) = q.at(0, h * d_head + c);
                kh.at(0, c) = k.at(0, h * d_head + c);
                vh.at(0, c) = v.at(0, h * d_head + c);
            }
            rope_in_place(qh.row(0), pos);
            rope_in_place(kh.row(0), pos);

            HeadKV& hk = cache_layer.heads[h];
            Matrix k_all, v_all;
            if (quantized) {
                hk.k_q = append_quant_row(hk.k_q, kv_quantize(kh, cache.kv_bits));
                hk.v_q = append_quant_row(hk.v_q, kv_quantize(vh, cache.kv_bits));
                k_all = dequantize(hk.k_q);
                v_all = dequantize(hk.v_q);
            } else {
                hk.k_fp.data.insert(hk.k_fp.data.end(), kh.data.begin(), kh.data.end());
                hk.k_fp.rows += 1;
                hk.k_fp.cols = d_head;
                hk.v_fp.data.insert(hk.v_fp.data.end(), vh.data.begin(), vh.data.end());
                hk.v_fp.rows += 1;
                hk.v_fp.cols = d_head;
                k_all = hk.k_fp;
                v_all = hk.v_fp;
            }

            // a decoded text token at the latest position attends to every
            // cached token and to itself
            const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(d_head));
            std::vector<double> scores(k_all.rows);
            double max_score = kNegInf;
            for (int j = 0; j < k_all.rows; ++j) {
                scores[j] = dot(qh.row(0), k_all.row(j)) * inv_sqrt;
                if (scores[j] > max_score) max_score = scores[j];
            }
            double sum = 0.0;
            for (double& s : scores) {
                s = std::exp(s - max_score);
                sum += s;
            }
            for (int c = 0; c < d_head; ++c) {
                double acc = 0.0;
                for (int j = 0; j < k_all.rows; ++j) {
                    acc += (scores[j] / sum) * v_all.at(j, c);
                }
                attn_concat.at(0, h * d_head + c) = acc;
            }
        }
        cache_layer.position_ids.push_back(pos);

        Matrix attn_q = site_quant(attn_concat, scales ? &scales->attn_out : nullptr);
        Matrix attn_proj = matmul(attn_q, weight(w, qw, &LayerWeights::wo, &QuantizedLayerWeights::wo));
        for (size_t i = 0; i < x.data.size(); ++i) x.data[i] += attn_proj.data[i];

        Matrix normed2 = rms_norm_rows(x, w.norm2_gain);
        Matrix mlp_in = site_quant(normed2, scales ? &scales->mlp_in : nullptr);
        Matrix mid = matmul(mlp_in, weight(w, qw, &LayerWeights::w1, &QuantizedLayerWeights::w1));
        for (double& m : mid.data) m = silu(m);
        Matrix mid_q = site_quant(mid, scales ? &scales->mlp_mid : nullptr);
        Matrix mlp_out = matmul(mid_q, weight(w, qw, &LayerWeights::w2, &QuantizedLayerWeights::w2));
        for (size_t i = 0; i < x.data.size(); ++i) x.data[i] += mlp_out.data[i];
    }

    // token becomes part of the sequence for subsequent steps
    cache.layout.text_count += 1;
    cache.layout.position_ids.push_back(pos);
    cache.layout.modality.push_back(Modality::Text);
    cache.next_position += 1;

    Matrix final_norm = rms_norm_rows(x, model.final_norm_gain);
    Matrix head_in = quant ? fake_quant(final_norm, quant->act.head_in) : final_norm;
    Matrix logits = matmul(head_in, quant ? quant->w_head.deq : model.w_head);
    return {logits.data.begin(), logits.data.end()};
}

}  // namespace quota
