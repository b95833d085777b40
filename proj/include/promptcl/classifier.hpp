#pragma once

// Cosine-similarity classification over text prototypes. Prototypes are
// recomputed from the current prompts whenever the bank version moves, since
// the prompts are shared across classes and change every training step.

#include <string>
#include <vector>

#include "promptcl/dual_encoder.hpp"
#include "promptcl/errors.hpp"
#include "promptcl/prompt_engine.hpp"
#include "promptcl/util.hpp"

namespace promptcl {

struct RegistryEntry {
    int class_id = 0;
    std::string class_name;
    int session_id = 0;
};

enum class PrototypeMode { learned, zero_shot };

class ClassRegistry {
  public:
    int register_class(const std::string& name, int session_id) {
        if (name.empty())
            throw DataError("register_class: empty class name");
        for (const auto& e : entries_)
            if (e.class_name == name)
                throw ProtocolError("register_class: duplicate class name: " + name);
        if (!entries_.empty() && session_id < entries_.back().session_id)
            throw ProtocolError("register_class: session ids must be non-decreasing");
        int id = static_cast<int>(entries_.size());
        entries_.push_back({id, name, session_id});
        invalidate_cache();
        return id;
    }

    const std::vector<RegistryEntry>& entries() const { return entries_; }
    int size() const { return static_cast<int>(entries_.size()); }
    bool empty() const { return entries_.empty(); }

    int id_of(const std::string& name) const {
        for (const auto& e : entries_)
            if (e.class_name == name)
                return e.class_id;
        throw DataError("id_of: unknown class name: " + name);
    }

    bool cache_valid() const { return cache_valid_; }
    bool cache_matches(PrototypeMode mode, long long bank_version) const {
        return cache_valid_ && cache_mode_ == mode &&
               (mode == PrototypeMode::zero_shot || cache_version_ == bank_version);
    }
    const Mat& prototypes() const {
        if (!cache_valid_)
            throw ProtocolError("prototype cache is not populated");
        return prototypes_;
    }
    void set_prototypes(Mat protos, PrototypeMode mode, long long bank_version) {
        if (protos.rows() != size())
            throw InvariantError("prototype count must match registry size");
        prototypes_ = std::move(protos);
        cache_mode_ = mode;
        cache_version_ = bank_version;
        cache_valid_ = true;
    }
    void invalidate_cache() { cache_valid_ = false; }

  private:
    std::vector<RegistryEntry> entries_;
    Mat prototypes_; // size() x d_joint, unit rows
    PrototypeMode cache_mode_ = PrototypeMode::zero_shot;
    long long cache_version_ = -1;
    bool cache_valid_ = false;
};

struct Prediction {
    Vec probabilities; // over registered classes, in class_id order
    int predicted_class = -1;
};

/// Computes and caches L2-normalized joint-space prototypes for every
/// registered class. Learned mode runs [prompts + class-name tokens] through
/// the hooked text encoder; zero-shot mode runs the filled caption template
/// through the plain frozen forward.
inline void encode_class_prototypes(const DualEncoderBundle& bundle, const GPromptBank* bank,
                                    ClassRegistry& registry, const std::string& caption_template,
                                    PrototypeMode mode) {
    if (registry.empty())
        throw ProtocolError("encode_class_prototypes: registry is empty");
    if (mode == PrototypeMode::learned && bank == nullptr)
        throw ConfigError("encode_class_prototypes: learned mode needs a prompt bank");
    std::vector<LayerForwardHook> hooks;
    if (mode == PrototypeMode::learned)
        hooks = compile_language_hooks(*bank);
    Mat protos(registry.size(), bundle.d_joint);
    for (const auto& entry : registry.entries()) {
        std::vector<int> ids =
            mode == PrototypeMode::learned
                ? bundle.tokenizer.encode(entry.class_name)
                : bundle.tokenizer.encode(fill_template(caption_template, entry.class_name));
        ag::NodePtr emb = encode_text(bundle, ids, hooks);
        double norm = emb->value.row(0).norm();
        if (norm < 1e-12)
            throw NumericError("encode_class_prototypes: zero-norm prototype");
        protos.row(entry.class_id) = emb->value.row(0) / norm;
    }
    registry.set_prototypes(std::move(protos), mode,
                            mode == PrototypeMode::learned ? bank->version : 0);
}

/// Recomputes prototypes only when the cache is missing or stale.
inline void ensure_prototypes(const DualEncoderBundle& bundle, const GPromptBank* bank,
                              ClassRegistry& registry, const std::string& caption_template,
                              PrototypeMode mode) {
    long long version = mode == PrototypeMode::learned && bank ? bank->version : 0;
    if (!registry.cache_matches(mode, version))
        encode_class_prototypes(bundle, bank, registry, caption_template, mode);
}

/// Softmax over tau-scaled cosine similarities against the cached prototypes.
inline Prediction classify(const Vec& image_embedding, const ClassRegistry& registry,
                           double logit_scale = 1.0) {
    if (registry.empty())
        throw ProtocolError("classify: no classes registered");
    const Mat& protos = registry.prototypes();
    if (image_embedding.size() != protos.cols())
        throw DataError("classify: embedding dimension mismatch");
    double norm = image_embedding.norm();
    if (norm < 1e-12)
        throw NumericError("classify: zero-norm image embedding");
    Vec cos = protos * (image_embedding / norm);
    Vec logits = logit_scale * cos;
    double mx = logits.maxCoeff();
    Vec e = (logits.array() - mx).exp();
    Prediction pred;
    pred.probabilities = e / e.sum();
    pred.probabilities.maxCoeff(&pred.predicted_class);
    return pred;
}

/// Classification with template-built prototypes and no learned prompts.
inline Prediction zero_shot_classify(const DualEncoderBundle& bundle, const Mat& image,
                                     ClassRegistry& registry, const std::string& caption_template,
                                     double logit_scale = 1.0) {
    ensure_prototypes(bundle, nullptr, registry, caption_template, PrototypeMode::zero_shot);
    ag::NodePtr emb = encode_image(bundle, image);
    return classify(emb->value.row(0).transpose(), registry, logit_scale);
}

} // namespace promptcl
