#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "quota/numeric.hpp"
#include "quota/quant.hpp"

namespace quota {

// A small deterministic decoder with a bidirectional visual-token prefix
// followed by causally masked text tokens. Per layer: pre-norm attention
// (RMSNorm, rotary positions, multi-head) and a pre-norm SiLU MLP with
// d_ff = 4 * d_model. Logits are a d_model-wide head projection of the
// final normed hidden state.
//
// The model runs in full precision or through the quantizer (weights
// dequantized from per-row int codes, activations clipped by calibrated
// per-site scales, keys/values stored as per-token quantized rows).

enum class Modality : uint8_t { Visual, Text };

enum class ExecMode { Fp, Quantized };

struct ModelConfig {
    int n_layers = 12;
    int n_heads = 4;
    int d_model = 32;
    int d_head = 8;
    uint64_t seed = 1;

    int d_ff() const { return 4 * d_model; }
    void validate() const;  // d_model == n_heads * d_head, n_layers >= 4, d_head even
};

struct SequenceLayout {
    int visual_count = 0;
    int text_count = 0;
    std::vector<int> position_ids;     // strictly increasing originals
    std::vector<Modality> modality;    // visual prefix first, then text

    int total() const { return visual_count + text_count; }
    void validate() const;

    static SequenceLayout prefix(int visual_count, int text_count);
};

struct LayerWeights {
    Matrix wq, wk, wv, wo;  // d_model x d_model
    Matrix w1;              // d_model x d_ff
    Matrix w2;              // d_ff x d_model
    Vector norm1_gain, norm2_gain;
};

struct Model {
    ModelConfig config;
    std::vector<LayerWeights> layers;
    Vector final_norm_gain;
    Matrix w_head;  // d_model x d_model

    int64_t parameter_count() const;
    uint64_t weight_checksum() const;
};

Model init_model(const ModelConfig& config);

// Per-layer snapshot taken after the attention residual, before the pruning
// hook runs, so it covers the still-present token set. Attention blocks are
// post-softmax probabilities sliced out of full rows.
struct LayerActivationRecord {
    int layer = 0;
    Matrix visual_states;            // N_l x d_model
    Matrix text_states;              // T x d_model
    std::vector<Matrix> attn_inter;  // per head: text queries x visual keys
    std::vector<Matrix> attn_intra;  // per head: visual queries x visual keys
};

// Output of budgeted selection: which of the current visual slots survive.
struct RetainedSet {
    int layer = 0;
    int budget = 0;
    std::vector<int> slots;  // ascending indices into the current visual range
};

// Trace entry in original-position space, for reports.
struct PruneEvent {
    int layer = 0;
    int budget = 0;
    std::vector<int> retained_positions;
};

struct HeadKV {
    Matrix k_fp, v_fp;           // fp mode
    QuantizedTensor k_q, v_q;    // quantized mode
};

struct LayerKV {
    std::vector<HeadKV> heads;
    std::vector<int> position_ids;  // tokens cached at this layer
};

struct KVCacheState {
    ExecMode mode = ExecMode::Fp;
    int kv_bits = 4;
    std::vector<LayerKV> layers;
    SequenceLayout layout;   // retained tokens after prefill
    int next_position = 0;   // position id assigned to the next decoded token
};

// Calibrated per-tensor activation scales for each quantized input site.
struct LayerActScales {
    QuantParams attn_in, attn_out, mlp_in, mlp_mid;
};

struct ActScales {
    std::vector<LayerActScales> layers;
    QuantParams head_in;
};

// Running max-abs collector for fitting ActScales from full-precision runs.
struct ActStats {
    std::vector<std::array<double, 4>> layer_max;  // attn_in, attn_out, mlp_in, mlp_mid
    double head_in_max = 0.0;

    void ensure(int n_layers);
    void observe(int layer, int site, const Matrix& x);
    void observe_head(const Matrix& x);
    ActScales to_scales(int act_bits) const;
};

// Weights quantized per output row, with the dequantized form cached for the
// simulated forward pass.
struct QuantizedWeight {
    QuantizedTensor codes;
    Matrix deq;
};

struct QuantizedLayerWeights {
    QuantizedWeight wq, wk, wv, wo, w1, w2;
};

struct QuantEnv {
    QuantConfig config;
    std::vector<QuantizedLayerWeights> layers;
    QuantizedWeight w_head;
    ActScales act;
};

QuantEnv prepare_quant_env(const Model& model, const QuantConfig& config, const ActScales& act);

using PruneHook =
    std::function<std::optional<RetainedSet>(const LayerActivationRecord&, const SequenceLayout&)>;

struct ForwardOptions {
    ExecMode mode = ExecMode::Fp;
    const QuantEnv* quant = nullptr;  // required when mode == Quantized
    PruneHook hook;                   // may prune visual tokens at candidate layers
    ActStats* act_stats = nullptr;    // optional collection during fp runs
};

struct ForwardResult {
    Matrix logits;  // final token count x d_model
    std::vector<LayerActivationRecord> records;
    std::vector<Matrix> block_outputs;  // post-block hidden states per layer
    KVCacheState cache;
    SequenceLayout final_layout;
    std::vector<PruneEvent> prune_trace;
};

ForwardResult forward_prefill(const Model& model, const Matrix& embeddings,
                              const SequenceLayout& layout, const ForwardOptions& options);

// Appends one text token and returns its logits. The cache must come from a
// forward_prefill run in the matching mode.
Vector decode_step(const Model& model, const QuantEnv* quant, KVCacheState& cache,
                   std::span<const double> embedding);

// Shared primitives, exposed for tests and straight-line oracles.
Vector rms_norm(std::span<const double> x, std::span<const double> gain);
Matrix rms_norm_rows(const Matrix& x, std::span<const double> gain);
void rope_in_place(std::span<double> head_vec, int position);
double silu(double x);

}  // namespace quota
