#pragma once

// The learnable state: per-layer language prompt tokens plus one shared
// language-to-vision projection. compile_plan turns a bank into per-layer
// hooks: the language tower gets fresh prompts per layer with previous prompt
// outputs discarded (replacement), the vision tower gets projected prompts
// that concatenate with surviving prompt outputs (accumulation).

#include <cstring>
#include <string>
#include <vector>

#include <json.hpp>

#include "promptcl/autodiff.hpp"
#include "promptcl/dual_encoder.hpp"
#include "promptcl/errors.hpp"
#include "promptcl/util.hpp"

namespace promptcl {

enum class PromptMode { deep, shallow };

enum class PlanAblation { full, no_accumulation, no_vision_prompts };

struct GPromptBank {
    std::vector<ag::NodePtr> prompts; // depth entries of length x d_nlp, learnable
    ag::NodePtr projection;           // d_nlp x d_cv, learnable, shared across layers
    int depth = 0;
    int length = 0;
    int d_nlp = 0;
    int d_cv = 0;
    PromptMode mode = PromptMode::deep;
    uint64_t seed = 0;
    long long version = 0; // bumped after every optimizer step

    std::vector<ag::NodePtr> params() const {
        std::vector<ag::NodePtr> out = prompts;
        out.push_back(projection);
        return out;
    }

    uint64_t checksum() const {
        uint64_t h = 0xcbf29ce484222325ULL;
        for (const auto& p : params())
            h = hash_matrix(p->value, h);
        return h;
    }
};

/// Fresh learnable bank; prompt entries ~ N(0, 0.02^2), projection entries
/// ~ N(0, 1/d_NLP) so projected tokens start near the backbone's scale.
inline GPromptBank init_prompts(int length, int depth, int d_nlp, int d_cv, int max_depth,
                                uint64_t seed) {
    if (length < 1)
        throw ConfigError("init_prompts: L must be >= 1");
    if (depth < 1 || depth > max_depth)
        throw ConfigError("init_prompts: D must be in [1, K]");
    if (d_nlp < 1 || d_cv < 1)
        throw ConfigError("init_prompts: embedding dims must be positive");
    GPromptBank bank;
    bank.depth = depth;
    bank.length = length;
    bank.d_nlp = d_nlp;
    bank.d_cv = d_cv;
    bank.mode = depth == 1 ? PromptMode::shallow : PromptMode::deep;
    bank.seed = seed;
    Rng rng(seed);
    for (int i = 0; i < depth; ++i)
        bank.prompts.push_back(ag::leaf(gaussian(length, d_nlp, 0.02, rng), /*requires_grad=*/true));
    bank.projection = ag::leaf(
        gaussian(d_nlp, d_cv, 1.0 / std::sqrt(static_cast<double>(d_nlp)), rng),
        /*requires_grad=*/true);
    return bank;
}

/// Layer's language prompts pushed through the shared projection (values only).
inline Mat project_prompts(const GPromptBank& bank, int layer) {
    if (layer < 1 || layer > bank.depth)
        throw ConfigError("project_prompts: layer out of [1, D]");
    return bank.prompts[static_cast<size_t>(layer - 1)]->value * bank.projection->value;
}

struct PromptPlan {
    std::vector<LayerForwardHook> language_hooks;
    std::vector<LayerForwardHook> vision_hooks;
    PlanAblation ablation = PlanAblation::full;
    int length = 0;
    int depth = 0;

    /// Prompt rows expected at the input of vision layer `layer` (1-based).
    int expected_vision_prompt_rows(int layer) const {
        switch (ablation) {
        case PlanAblation::no_vision_prompts:
            return 0;
        case PlanAblation::no_accumulation:
            return length; // fresh block only, at every layer
        case PlanAblation::full:
        default:
            return std::min(layer, depth) * length;
        }
    }
};

/// Hooks for the language tower: fresh prompts prepended at layers 1..D,
/// prompt-position outputs discarded below D and propagated from D onward.
/// Injected nodes are value snapshots wired back to the bank's leaves, so a
/// plan is safe to evaluate concurrently yet still trains the bank.
inline std::vector<LayerForwardHook> compile_language_hooks(const GPromptBank& bank) {
    std::vector<LayerForwardHook> hooks;
    for (int i = 1; i <= bank.depth; ++i) {
        LayerForwardHook h;
        h.layer_index = i;
        h.injected_tokens = ag::slice_rows(bank.prompts[static_cast<size_t>(i - 1)], 0, bank.length);
        h.injection_mode = InjectionMode::prepend;
        h.discard_prompt_outputs = i < bank.depth;
        hooks.push_back(std::move(h));
    }
    return hooks;
}

inline PromptPlan compile_plan(const GPromptBank& bank, PlanAblation ablation) {
    if (bank.depth < 1 || static_cast<int>(bank.prompts.size()) != bank.depth)
        throw ConfigError("compile_plan: malformed bank");
    if (bank.mode == PromptMode::shallow && bank.depth != 1)
        throw ConfigError("compile_plan: shallow mode requires depth 1");
    PromptPlan plan;
    plan.ablation = ablation;
    plan.length = bank.length;
    plan.depth = bank.depth;
    plan.language_hooks = compile_language_hooks(bank);
    if (ablation == PlanAblation::no_vision_prompts)
        return plan;
    for (int i = 1; i <= bank.depth; ++i) {
        LayerForwardHook h;
        h.layer_index = i;
        h.injected_tokens = ag::matmul(bank.prompts[static_cast<size_t>(i - 1)], bank.projection);
        h.injection_mode = InjectionMode::append;
        h.discard_prompt_outputs = ablation == PlanAblation::no_accumulation ? i < bank.depth : false;
        plan.vision_hooks.push_back(std::move(h));
    }
    return plan;
}

inline ParameterCount count_parameters(const DualEncoderBundle& bundle, const GPromptBank& bank) {
    return make_parameter_count(bundle.parameter_count(),
                                learnable_parameter_count(bank.length, bank.depth, bank.d_nlp,
                                                          bank.d_cv));
}

// ---------------------------------------------------------------------------
// Serialization: JSON header (length-prefixed) followed by row-major
// little-endian float32 payloads, prompts first (layer-major), projection last.
// ---------------------------------------------------------------------------

namespace detail {

inline void append_f32(std::string& out, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    for (int i = 0; i < 4; ++i)
        out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

inline float take_f32(const std::string& in, size_t& at) {
    if (at + 4 > in.size())
        throw DataError("prompt bank payload truncated");
    uint32_t bits = 0;
    for (int i = 0; i < 4; ++i)
        bits |= static_cast<uint32_t>(static_cast<unsigned char>(in[at++])) << (8 * i);
    float v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
}

} // namespace detail

inline std::string serialize_bank(const GPromptBank& bank) {
    nlohmann::json header = {
        {"L", bank.length},
        {"D", bank.depth},
        {"d_NLP", bank.d_nlp},
        {"d_CV", bank.d_cv},
        {"mode", bank.mode == PromptMode::deep ? "deep" : "shallow"},
        {"seed", bank.seed},
    };
    std::string hdr = header.dump();
    std::string out;
    for (int i = 0; i < 4; ++i)
        out.push_back(static_cast<char>((hdr.size() >> (8 * i)) & 0xff));
    out += hdr;
    for (const auto& p : bank.prompts)
        for (Eigen::Index r = 0; r < p->value.rows(); ++r)
            for (Eigen::Index c = 0; c < p->value.cols(); ++c)
                detail::append_f32(out, static_cast<float>(p->value(r, c)));
    for (Eigen::Index r = 0; r < bank.projection->value.rows(); ++r)
        for (Eigen::Index c = 0; c < bank.projection->value.cols(); ++c)
            detail::append_f32(out, static_cast<float>(bank.projection->value(r, c)));
    return out;
}

inline GPromptBank deserialize_bank(const std::string& in) {
    if (in.size() < 4)
        throw DataError("prompt bank blob too short");
    size_t at = 0;
    uint32_t hlen = 0;
    for (int i = 0; i < 4; ++i)
        hlen |= static_cast<uint32_t>(static_cast<unsigned char>(in[at++])) << (8 * i);
    if (at + hlen > in.size())
        throw DataError("prompt bank header truncated");
    nlohmann::json header = nlohmann::json::parse(in.substr(at, hlen));
    at += hlen;
    GPromptBank bank = init_prompts(header.at("L").get<int>(), header.at("D").get<int>(),
                                    header.at("d_NLP").get<int>(), header.at("d_CV").get<int>(),
                                    /*max_depth=*/header.at("D").get<int>(),
                                    header.at("seed").get<uint64_t>());
    bank.mode = header.at("mode").get<std::string>() == "shallow" ? PromptMode::shallow
                                                                  : PromptMode::deep;
    for (auto& p : bank.prompts)
        for (Eigen::Index r = 0; r < p->value.rows(); ++r)
            for (Eigen::Index c = 0; c < p->value.cols(); ++c)
                p->value(r, c) = static_cast<double>(detail::take_f32(in, at));
    for (Eigen::Index r = 0; r < bank.projection->value.rows(); ++r)
        for (Eigen::Index c = 0; c < bank.projection->value.cols(); ++c)
            bank.projection->value(r, c) = static_cast<double>(detail::take_f32(in, at));
    if (at != in.size())
        throw DataError("prompt bank blob has trailing bytes");
    return bank;
}

inline void save_bank(const GPromptBank& bank, const std::string& path) {
    atomic_write_file(path, serialize_bank(bank));
}

inline GPromptBank load_bank(const std::string& path) {
    return deserialize_bank(read_file(path));
}

} // namespace promptcl
