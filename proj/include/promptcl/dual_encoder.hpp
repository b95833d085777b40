#pragma once

// Frozen dual encoder with per-layer forward hooks. Hooks carry prompt tokens
// to inject at a layer's input and a policy for what happens to the
// prompt-position outputs, which is enough to express replacement (language)
// and accumulation (vision) propagation as well as their ablations.

#include <algorithm>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "promptcl/autodiff.hpp"
#include "promptcl/encoder.hpp"
#include "promptcl/errors.hpp"
#include "promptcl/util.hpp"

namespace promptcl {

enum class InjectionMode { prepend, append };

struct LayerForwardHook {
    int layer_index = 1; // 1-based, in [1, K]
    ag::NodePtr injected_tokens; // null means "no injection at this layer"
    InjectionMode injection_mode = InjectionMode::prepend;
    bool discard_prompt_outputs = false;
};

/// Per-layer prompt-block sizes observed during a hooked forward.
struct ForwardTrace {
    std::vector<int> prompt_rows_at_layer_input;
    int pooled_prompt_rows = 0;
};

struct LabeledImage {
    Mat pixels; // image_size x image_size grayscale in [-1, 1]
    std::string name;
};

struct DualEncoderBundle {
    TransformerTower language;
    TransformerTower vision;

    ag::NodePtr token_embed;   // vocab x d_NLP
    ag::NodePtr lang_pos;      // max_seq_len x d_NLP, real-token positions only
    ag::NodePtr patch_embed_w; // patch_dim x d_CV
    ag::NodePtr patch_embed_b; // 1 x d_CV
    ag::NodePtr cls_token;     // 1 x d_CV
    ag::NodePtr vis_pos;       // max_seq_len x d_CV

    ag::NodePtr text_out_proj;   // d_NLP x d_joint
    ag::NodePtr vision_out_proj; // d_CV x d_joint

    int d_joint = 0;
    double logit_scale = 1.0; // native scale; toy default is 1
    Tokenizer tokenizer;
    PatchConfig patch;
    bool frozen = false;
    std::vector<std::string> pretrain_classes; // for benchmark-overlap checks

    std::vector<ag::NodePtr> all_params() const {
        std::vector<ag::NodePtr> out = language.params();
        for (auto& p : vision.params())
            out.push_back(p);
        for (auto& p : {token_embed, lang_pos, patch_embed_w, patch_embed_b, cls_token, vis_pos,
                        text_out_proj, vision_out_proj})
            out.push_back(p);
        return out;
    }

    long long parameter_count() const {
        long long n = 0;
        for (const auto& p : all_params())
            n += static_cast<long long>(p->value.size());
        return n;
    }

    uint64_t checksum() const {
        uint64_t h = 0xcbf29ce484222325ULL;
        for (const auto& p : all_params())
            h = hash_matrix(p->value, h);
        double ls = logit_scale;
        return fnv1a64(&ls, sizeof(ls), h);
    }

    void set_trainable(bool trainable) {
        for (auto& p : all_params()) {
            p->requires_grad = trainable;
            p->needs_grad = trainable;
        }
    }

    void freeze() {
        set_trainable(false);
        frozen = true;
    }
};

struct ToyBundleConfig {
    EncoderSpec language;
    EncoderSpec vision;
    int d_joint = 8;
    PatchConfig patch{16, 4};
    uint64_t seed = 0;
};

inline DualEncoderBundle build_toy_bundle(const ToyBundleConfig& cfg) {
    cfg.language.validate();
    cfg.vision.validate();
    cfg.patch.validate();
    if (cfg.language.modality != Modality::language || cfg.vision.modality != Modality::vision)
        throw ConfigError("build_toy_bundle: spec modalities are swapped or wrong");
    if (cfg.vision.embed_dim <= cfg.language.embed_dim)
        throw ConfigError("build_toy_bundle: vision embed_dim must exceed language embed_dim");
    if (cfg.d_joint < 1 || cfg.d_joint > cfg.language.embed_dim)
        throw ConfigError("build_toy_bundle: d_joint must be in [1, language embed_dim]");
    if (cfg.patch.num_patches() + 1 > cfg.vision.max_seq_len)
        throw ConfigError("build_toy_bundle: patches plus [CLS] exceed vision max_seq_len");

    Rng rng(cfg.seed);
    DualEncoderBundle b;
    b.language = TransformerTower::build(cfg.language, rng);
    b.vision = TransformerTower::build(cfg.vision, rng);
    const int dl = cfg.language.embed_dim;
    const int dv = cfg.vision.embed_dim;
    b.token_embed = ag::leaf(gaussian(Tokenizer::vocab_size(), dl, 0.02, rng));
    b.lang_pos = ag::leaf(gaussian(cfg.language.max_seq_len, dl, 0.01, rng));
    b.patch_embed_w = ag::leaf(gaussian(cfg.patch.patch_dim(), dv,
                                        1.0 / std::sqrt(static_cast<double>(cfg.patch.patch_dim())), rng));
    b.patch_embed_b = ag::leaf(Mat::Zero(1, dv));
    b.cls_token = ag::leaf(gaussian(1, dv, 0.02, rng));
    b.vis_pos = ag::leaf(gaussian(cfg.vision.max_seq_len, dv, 0.01, rng));
    b.text_out_proj = ag::leaf(gaussian(dl, cfg.d_joint, 1.0 / std::sqrt(static_cast<double>(dl)), rng));
    b.vision_out_proj = ag::leaf(gaussian(dv, cfg.d_joint, 1.0 / std::sqrt(static_cast<double>(dv)), rng));
    b.d_joint = cfg.d_joint;
    b.patch = cfg.patch;
    return b;
}

namespace detail {

/// Runs a tower over real-token states plus a prompt block managed by hooks.
/// lead_rows keeps that many leading sentinel rows pinned in front when hooks
/// prepend ([BOS, prompts, words, EOS] for text). Fresh injected tokens go to
/// the head of the prompt block, so surviving previous outputs accumulate
/// behind them.
inline ag::NodePtr hooked_tower_forward(const TransformerTower& tower, ag::NodePtr real,
                                        int lead_rows, const std::vector<LayerForwardHook>& hooks,
                                        ForwardTrace* trace) {
    const int K = tower.spec.num_layers;
    std::vector<const LayerForwardHook*> by_layer(static_cast<size_t>(K) + 1, nullptr);
    for (const auto& h : hooks) {
        if (h.layer_index < 1 || h.layer_index > K)
            throw ConfigError("hook layer_index out of [1, K]");
        if (by_layer[static_cast<size_t>(h.layer_index)])
            throw ConfigError("duplicate hook for one layer");
        if (h.injected_tokens && h.injected_tokens->cols() != tower.spec.embed_dim)
            throw ConfigError("injected tokens have wrong embedding width");
        by_layer[static_cast<size_t>(h.layer_index)] = &h;
    }
    std::optional<InjectionMode> mode;
    for (const auto& h : hooks) {
        if (!h.injected_tokens)
            continue;
        if (mode && *mode != h.injection_mode)
            throw ConfigError("hooks mix prepend and append within one forward");
        mode = h.injection_mode;
    }

    const int real_rows = real->rows();
    ag::NodePtr prompt; // null when the prompt block is empty
    if (trace) {
        trace->prompt_rows_at_layer_input.assign(static_cast<size_t>(K), 0);
        trace->pooled_prompt_rows = 0;
    }
    for (int layer = 1; layer <= K; ++layer) {
        const LayerForwardHook* hook = by_layer[static_cast<size_t>(layer)];
        if (hook && hook->injected_tokens)
            prompt = prompt ? ag::concat_rows({hook->injected_tokens, prompt}) : hook->injected_tokens;

        int prompt_rows = prompt ? prompt->rows() : 0;
        if (real_rows + prompt_rows > tower.spec.max_seq_len)
            throw CapacityError("sequence with injected prompts exceeds max_seq_len");
        if (trace)
            trace->prompt_rows_at_layer_input[static_cast<size_t>(layer - 1)] = prompt_rows;

        ag::NodePtr seq = real;
        int prompt_at = 0;
        if (prompt) {
            if (mode.value_or(InjectionMode::prepend) == InjectionMode::prepend) {
                prompt_at = lead_rows;
                if (lead_rows > 0)
                    seq = ag::concat_rows({ag::slice_rows(real, 0, lead_rows), prompt,
                                           ag::slice_rows(real, lead_rows, real_rows - lead_rows)});
                else
                    seq = ag::concat_rows({prompt, real});
            } else {
                prompt_at = real_rows;
                seq = ag::concat_rows({real, prompt});
            }
        }

        ag::NodePtr out = tower.layer_forward(layer - 1, seq);

        if (prompt) {
            ag::NodePtr prompt_out = ag::slice_rows(out, prompt_at, prompt_rows);
            if (prompt_at == 0) {
                real = ag::slice_rows(out, prompt_rows, real_rows);
            } else if (prompt_at == real_rows) {
                real = ag::slice_rows(out, 0, real_rows);
            } else {
                real = ag::concat_rows({ag::slice_rows(out, 0, prompt_at),
                                        ag::slice_rows(out, prompt_at + prompt_rows,
                                                       real_rows - prompt_at)});
            }
            prompt = (hook && hook->discard_prompt_outputs) ? nullptr : prompt_out;
        } else {
            real = out;
        }
    }
    if (trace)
        trace->pooled_prompt_rows = prompt ? prompt->rows() : 0;
    return real;
}

} // namespace detail

/// Embed tokens, run the hooked language tower, and project the [EOS]-position
/// state into the joint space. Returns a 1 x d_joint node.
inline ag::NodePtr encode_text(const DualEncoderBundle& bundle, const std::vector<int>& token_ids,
                               const std::vector<LayerForwardHook>& hooks = {},
                               ForwardTrace* trace = nullptr) {
    const int T = static_cast<int>(token_ids.size());
    if (T < 2)
        throw DataError("encode_text: need at least [BOS] and [EOS]");
    if (T > bundle.language.spec.max_seq_len)
        throw CapacityError("encode_text: token sequence exceeds max_seq_len");
    auto emb = ag::add(ag::gather_rows(bundle.token_embed, token_ids),
                       ag::slice_rows(bundle.lang_pos, 0, T));
    auto real = detail::hooked_tower_forward(bundle.language, emb, /*lead_rows=*/1, hooks, trace);
    auto eos_state = bundle.language.final_norm(ag::slice_rows(real, T - 1, 1));
    return ag::matmul(eos_state, bundle.text_out_proj);
}

/// Embed patches behind a leading [CLS] token, run the hooked vision tower,
/// and project the [CLS]-position state into the joint space.
inline ag::NodePtr encode_patches(const DualEncoderBundle& bundle, const Mat& patches,
                                  const std::vector<LayerForwardHook>& hooks = {},
                                  ForwardTrace* trace = nullptr) {
    if (patches.cols() != bundle.patch.patch_dim())
        throw DataError("encode_patches: patch dimension mismatch");
    const int J = static_cast<int>(patches.rows());
    if (J + 1 > bundle.vision.spec.max_seq_len)
        throw CapacityError("encode_patches: patches plus [CLS] exceed max_seq_len");
    auto tokens = ag::add_rowvec(ag::matmul(ag::leaf(patches), bundle.patch_embed_w),
                                 bundle.patch_embed_b);
    auto seq = ag::add(ag::concat_rows({bundle.cls_token, tokens}),
                       ag::slice_rows(bundle.vis_pos, 0, J + 1));
    auto real = detail::hooked_tower_forward(bundle.vision, seq, /*lead_rows=*/0, hooks, trace);
    auto cls_state = bundle.vision.final_norm(ag::slice_rows(real, 0, 1));
    return ag::matmul(cls_state, bundle.vision_out_proj);
}

inline ag::NodePtr encode_image(const DualEncoderBundle& bundle, const Mat& image,
                                const std::vector<LayerForwardHook>& hooks = {},
                                ForwardTrace* trace = nullptr) {
    return encode_patches(bundle, patchify(image, bundle.patch), hooks, trace);
}

inline std::string fill_template(const std::string& caption_template, const std::string& name) {
    const std::string placeholder = "<category>";
    auto at = caption_template.find(placeholder);
    if (at == std::string::npos)
        throw DataError("caption template must contain \"<category>\"");
    std::string out = caption_template;
    out.replace(at, placeholder.size(), name);
    return out;
}

struct ParameterCount {
    long long frozen = 0;
    long long learnable = 0;
    double learnable_fraction = 0.0;
};

/// Prompt bank size is D*L*d_NLP for the prompts plus d_NLP*d_CV for the
/// shared language-to-vision projection.
inline long long learnable_parameter_count(int length, int depth, int d_nlp, int d_cv) {
    return static_cast<long long>(depth) * length * d_nlp +
           static_cast<long long>(d_nlp) * d_cv;
}

inline ParameterCount make_parameter_count(long long frozen, long long learnable) {
    ParameterCount pc;
    pc.frozen = frozen;
    pc.learnable = learnable;
    pc.learnable_fraction =
        static_cast<double>(learnable) / static_cast<double>(learnable + frozen);
    return pc;
}

// ---------------------------------------------------------------------------
// Alignment pretraining: symmetric contrastive loss over projected pair
// embeddings so the frozen toy backbone starts with usable zero-shot ability.
// ---------------------------------------------------------------------------

struct PretrainOptions {
    int steps = 400;
    int batch_classes = 24; // distinct classes per step, capped at corpus size
    double learning_rate = 3e-3;
    double temperature = 10.0; // fixed contrastive logit scale
    std::string caption_template = "a photo of a <category>";
    uint64_t seed = 1;
};

namespace detail {

struct AdamState {
    std::vector<Mat> m, v;
    long long t = 0;

    void step(const std::vector<ag::NodePtr>& params, double lr, double beta1 = 0.9,
              double beta2 = 0.999, double eps = 1e-8) {
        if (m.empty()) {
            for (const auto& p : params) {
                m.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
                v.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
            }
        }
        ++t;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
        for (size_t i = 0; i < params.size(); ++i) {
            auto& p = params[i];
            if (p->grad.size() == 0)
                continue;
            m[i] = beta1 * m[i] + (1.0 - beta1) * p->grad;
            v[i] = beta2 * v[i] + (1.0 - beta2) * p->grad.cwiseProduct(p->grad);
            Mat mhat = m[i] / bc1;
            Mat vhat = v[i] / bc2;
            p->value -= lr * (mhat.array() / (vhat.array().sqrt() + eps)).matrix();
        }
    }
};

} // namespace detail

/// Contrastively aligns the two towers on (image, caption) pairs, then
/// freezes every bundle weight. steps = 0 freezes without touching weights.
inline void pretrain_toy_alignment(DualEncoderBundle& bundle,
                                   const std::vector<LabeledImage>& corpus, int steps,
                                   const PretrainOptions& opts = {}) {
    if (bundle.frozen && steps > 0)
        throw ProtocolError("pretrain_toy_alignment: bundle is already frozen");

    // Group corpus indices by class name, preserving first-seen order.
    std::vector<std::string> classes;
    std::vector<std::vector<size_t>> members;
    for (size_t i = 0; i < corpus.size(); ++i) {
        auto it = std::find(classes.begin(), classes.end(), corpus[i].name);
        if (it == classes.end()) {
            classes.push_back(corpus[i].name);
            members.push_back({i});
        } else {
            members[static_cast<size_t>(it - classes.begin())].push_back(i);
        }
    }
    bundle.pretrain_classes = classes;

    if (steps > 0) {
        if (classes.size() < 2)
            throw ProtocolError("pretrain_toy_alignment: need at least two classes");
        bundle.set_trainable(true);
        auto params = bundle.all_params();
        detail::AdamState adam;
        Rng rng(opts.seed);
        const int batch = std::min<int>(opts.batch_classes, static_cast<int>(classes.size()));
        std::vector<size_t> class_order(classes.size());
        for (size_t i = 0; i < class_order.size(); ++i)
            class_order[i] = i;

        for (int step = 0; step < steps; ++step) {
            std::shuffle(class_order.begin(), class_order.end(), rng);
            std::vector<ag::NodePtr> img_embs, txt_embs;
            for (int b = 0; b < batch; ++b) {
                size_t ci = class_order[static_cast<size_t>(b)];
                const auto& pool = members[ci];
                size_t pick = pool[std::uniform_int_distribution<size_t>(0, pool.size() - 1)(rng)];
                img_embs.push_back(encode_image(bundle, corpus[pick].pixels));
                auto ids = bundle.tokenizer.encode(
                    fill_template(opts.caption_template, classes[ci]));
                txt_embs.push_back(encode_text(bundle, ids));
            }
            auto img = ag::l2_normalize_rows(ag::concat_rows(img_embs));
            auto txt = ag::l2_normalize_rows(ag::concat_rows(txt_embs));
            auto logits = ag::scale(ag::matmul_nt(img, txt), opts.temperature);
            std::vector<int> labels(static_cast<size_t>(batch));
            for (int i = 0; i < batch; ++i)
                labels[static_cast<size_t>(i)] = i;
            auto loss = ag::scale(ag::add(ag::cross_entropy_mean(logits, labels),
                                          ag::cross_entropy_mean(ag::transpose(logits), labels)),
                                  0.5);
            for (auto& p : params)
                p->zero_grad();
            ag::backward(loss);
            adam.step(params, opts.learning_rate);
        }
    }
    bundle.freeze();
}

// ---------------------------------------------------------------------------
// Checkpoint adapter contract. Real pretrained checkpoints plug in behind
// this interface; the toy adapter round-trips the bundle's own binary format.
// ---------------------------------------------------------------------------

class CheckpointAdapter {
  public:
    virtual ~CheckpointAdapter() = default;
    virtual DualEncoderBundle load(const std::string& path) const = 0;
    virtual double native_logit_scale() const = 0;
};

namespace detail {

inline void write_i32(std::string& out, int32_t v) {
    for (int i = 0; i < 4; ++i)
        out.push_back(static_cast<char>((static_cast<uint32_t>(v) >> (8 * i)) & 0xff));
}

inline int32_t read_i32(const std::string& in, size_t& at) {
    if (at + 4 > in.size())
        throw DataError("checkpoint truncated");
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
        v |= static_cast<uint32_t>(static_cast<unsigned char>(in[at++])) << (8 * i);
    return static_cast<int32_t>(v);
}

inline void write_f64(std::string& out, double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    for (int i = 0; i < 8; ++i)
        out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

inline double read_f64(const std::string& in, size_t& at) {
    if (at + 8 > in.size())
        throw DataError("checkpoint truncated");
    uint64_t bits = 0;
    for (int i = 0; i < 8; ++i)
        bits |= static_cast<uint64_t>(static_cast<unsigned char>(in[at++])) << (8 * i);
    double v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
}

inline void write_mat(std::string& out, const Mat& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            write_f64(out, m(r, c));
}

inline void read_mat(const std::string& in, size_t& at, Mat& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            m(r, c) = read_f64(in, at);
}

} // namespace detail

class ToyCheckpointAdapter final : public CheckpointAdapter {
  public:
    static void save(const DualEncoderBundle& bundle, const std::string& path) {
        std::string out = "PCLB0001";
        detail::write_i32(out, bundle.language.spec.num_layers);
        detail::write_i32(out, bundle.language.spec.embed_dim);
        detail::write_i32(out, bundle.language.spec.num_heads);
        detail::write_i32(out, bundle.language.spec.max_seq_len);
        detail::write_i32(out, bundle.vision.spec.num_layers);
        detail::write_i32(out, bundle.vision.spec.embed_dim);
        detail::write_i32(out, bundle.vision.spec.num_heads);
        detail::write_i32(out, bundle.vision.spec.max_seq_len);
        detail::write_i32(out, bundle.d_joint);
        detail::write_i32(out, bundle.patch.image_size);
        detail::write_i32(out, bundle.patch.patch_size);
        detail::write_f64(out, bundle.logit_scale);
        detail::write_i32(out, static_cast<int32_t>(bundle.pretrain_classes.size()));
        for (const auto& name : bundle.pretrain_classes) {
            detail::write_i32(out, static_cast<int32_t>(name.size()));
            out += name;
        }
        for (const auto& p : bundle.all_params())
            detail::write_mat(out, p->value);
        atomic_write_file(path, out);
    }

    DualEncoderBundle load(const std::string& path) const override {
        std::string in = read_file(path);
        if (in.size() < 8 || in.compare(0, 8, "PCLB0001") != 0)
            throw DataError("not a toy checkpoint: " + path);
        size_t at = 8;
        ToyBundleConfig cfg;
        cfg.language.num_layers = detail::read_i32(in, at);
        cfg.language.embed_dim = detail::read_i32(in, at);
        cfg.language.num_heads = detail::read_i32(in, at);
        cfg.language.max_seq_len = detail::read_i32(in, at);
        cfg.language.modality = Modality::language;
        cfg.vision.num_layers = detail::read_i32(in, at);
        cfg.vision.embed_dim = detail::read_i32(in, at);
        cfg.vision.num_heads = detail::read_i32(in, at);
        cfg.vision.max_seq_len = detail::read_i32(in, at);
        cfg.vision.modality = Modality::vision;
        cfg.d_joint = detail::read_i32(in, at);
        cfg.patch.image_size = detail::read_i32(in, at);
        cfg.patch.patch_size = detail::read_i32(in, at);
        DualEncoderBundle bundle = build_toy_bundle(cfg);
        bundle.logit_scale = detail::read_f64(in, at);
        scale_ = bundle.logit_scale;
        int n_classes = detail::read_i32(in, at);
        bundle.pretrain_classes.clear();
        for (int i = 0; i < n_classes; ++i) {
            int len = detail::read_i32(in, at);
            if (at + static_cast<size_t>(len) > in.size())
                throw DataError("checkpoint truncated");
            bundle.pretrain_classes.push_back(in.substr(at, static_cast<size_t>(len)));
            at += static_cast<size_t>(len);
        }
        for (auto& p : bundle.all_params())
            detail::read_mat(in, at, p->value);
        bundle.freeze();
        return bundle;
    }

    double native_logit_scale() const override { return scale_; }

  private:
    mutable double scale_ = 1.0;
};

} // namespace promptcl
