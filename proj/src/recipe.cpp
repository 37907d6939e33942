#include "quota/recipe.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "quota/digest.hpp"

namespace quota {

using nlohmann::json;

MetricWeights MetricWeights::without_quant() const {
    double share = quant / 3.0;
    return {mag + share, inter + share, intra + share, 0.0};
}

void PruningRecipe::validate() const {
    if (schema_version != kRecipeSchemaVersion) {
        throw std::invalid_argument("unsupported recipe schema_version");
    }
    if (candidate_layers.empty() || candidate_layers.size() != keep_ratios.size()) {
        throw std::invalid_argument("candidate_layers and keep_ratios must align and be nonempty");
    }
    for (size_t i = 0; i < candidate_layers.size(); ++i) {
        if (candidate_layers[i] < 0) throw std::invalid_argument("negative candidate layer");
        if (i > 0 && candidate_layers[i] <= candidate_layers[i - 1]) {
            throw std::invalid_argument("candidate layers must be strictly increasing");
        }
        double r = keep_ratios[i];
        if (!(r > 0.0 && r <= 1.0)) throw std::invalid_argument("keep ratio outside (0,1]");
        if (i > 0 && r > keep_ratios[i - 1] + 1e-12) {
            throw std::invalid_argument("keep ratios must be non-increasing");
        }
    }
    if (weights.mag < 0 || weights.inter < 0 || weights.intra < 0 || weights.quant < 0) {
        throw std::invalid_argument("negative metric weight");
    }
    if (std::fabs(weights.sum() - 1.0) > 1e-9) {
        throw std::invalid_argument("metric weights must sum to 1");
    }
    if (v0 < 1) throw std::invalid_argument("v0 must be >= 1");
}

std::string serialize_recipe(const PruningRecipe& recipe) {
    recipe.validate();
    json j;
    j["schema_version"] = recipe.schema_version;
    j["candidate_layers"] = recipe.candidate_layers;
    j["keep_ratios"] = recipe.keep_ratios;
    j["metric_weights"] = {{"mag", recipe.weights.mag},
                           {"inter", recipe.weights.inter},
                           {"intra", recipe.weights.intra},
                           {"quant", recipe.weights.quant}};
    j["v0"] = recipe.v0;
    j["quant_digest"] = recipe.quant_digest;
    return j.dump(2) + "\n";
}

namespace {

void reject_unknown_keys(const json& obj, std::initializer_list<const char*> allowed,
                         const char* where) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool known = false;
        for (const char* k : allowed) {
            if (it.key() == k) {
                known = true;
                break;
            }
        }
        if (!known) {
            throw std::invalid_argument(std::string("unknown key '") + it.key() + "' in " + where);
        }
    }
}

const json& require(const json& obj, const char* key, const char* where) {
    auto it = obj.find(key);
    if (it == obj.end()) {
        throw std::invalid_argument(std::string("missing key '") + key + "' in " + where);
    }
    return *it;
}

}  // namespace

PruningRecipe parse_recipe(const std::string& text) {
    json j = json::parse(text);  // json::parse errors carry the byte offset
    if (!j.is_object()) throw std::invalid_argument("recipe must be a JSON object");
    reject_unknown_keys(
        j, {"schema_version", "candidate_layers", "keep_ratios", "metric_weights", "v0", "quant_digest"},
        "recipe");

    PruningRecipe r;
    r.schema_version = require(j, "schema_version", "recipe").get<int>();
    if (r.schema_version != kRecipeSchemaVersion) {
        throw std::invalid_argument("unsupported recipe schema_version");
    }
    r.candidate_layers = require(j, "candidate_layers", "recipe").get<std::vector<int>>();
    r.keep_ratios = require(j, "keep_ratios", "recipe").get<std::vector<double>>();
    const json& w = require(j, "metric_weights", "recipe");
    if (!w.is_object()) throw std::invalid_argument("metric_weights must be an object");
    reject_unknown_keys(w, {"mag", "inter", "intra", "quant"}, "metric_weights");
    r.weights.mag = require(w, "mag", "metric_weights").get<double>();
    r.weights.inter = require(w, "inter", "metric_weights").get<double>();
    r.weights.intra = require(w, "intra", "metric_weights").get<double>();
    r.weights.quant = require(w, "quant", "metric_weights").get<double>();
    r.v0 = require(j, "v0", "recipe").get<int>();
    r.quant_digest = require(j, "quant_digest", "recipe").get<std::string>();
    r.validate();
    return r;
}

void save_recipe(const PruningRecipe& recipe, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open recipe file for writing: " + path);
    out << serialize_recipe(recipe);
}

PruningRecipe load_recipe(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open recipe file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_recipe(buf.str());
}

std::string recipe_digest(const PruningRecipe& recipe) {
    return hex_digest(serialize_recipe(recipe));
}

PruningRecipe retain_all_recipe(std::vector<int> candidate_layers, int v0,
                                const MetricWeights& weights, const std::string& quant_digest) {
    PruningRecipe r;
    r.candidate_layers = std::move(candidate_layers);
    r.keep_ratios.assign(r.candidate_layers.size(), 1.0);
    r.weights = weights;
    r.v0 = v0;
    r.quant_digest = quant_digest;
    return r;
}

}  // namespace quota
