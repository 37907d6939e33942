#pragma once

#include <string>
#include <vector>

namespace quota {

// Weighted fusion coefficients for the four token importance signals.
// JSON keys: mag, inter, intra, quant.
struct MetricWeights {
    double mag = 0.25;
    double inter = 0.45;
    double intra = 0.10;
    double quant = 0.20;

    double sum() const { return mag + inter + intra + quant; }

    // Drops the quantization-residual term and spreads its weight uniformly
    // over the remaining three cues (the stage-wise scoring convention).
    MetricWeights without_quant() const;
};

// The deployable offline artifact: which layers prune, how much each keeps,
// how token scores are fused, and the reference visual-token length.
struct PruningRecipe {
    int schema_version = 1;
    std::vector<int> candidate_layers;  // ascending
    std::vector<double> keep_ratios;    // non-increasing, aligned with layers
    MetricWeights weights;
    int v0 = 64;
    std::string quant_digest;

    void validate() const;  // throws std::invalid_argument on any violation
};

constexpr int kRecipeSchemaVersion = 1;

// Canonical JSON text. Serialization validates first and round-trips floats
// exactly (shortest representation that parses back to the same bits).
std::string serialize_recipe(const PruningRecipe& recipe);

// Strict parse: fixed key set, unknown keys rejected, schema_version checked.
// Malformed text raises with a byte position in the message.
PruningRecipe parse_recipe(const std::string& text);

void save_recipe(const PruningRecipe& recipe, const std::string& path);
PruningRecipe load_recipe(const std::string& path);

// Digest of the canonical serialized form, for report headers.
std::string recipe_digest(const PruningRecipe& recipe);

// Recipe that keeps every token at every candidate layer.
PruningRecipe retain_all_recipe(std::vector<int> candidate_layers, int v0,
                                const MetricWeights& weights, const std::string& quant_digest);

}  // namespace quota
