#pragma once

// Frozen-capable transformer towers plus the toy tokenizer and patchifier.
// Weights live in autodiff leaves so the same code path serves alignment
// pretraining (weights learnable) and prompt tuning (weights frozen).

#include <string>
#include <vector>

#include "promptcl/autodiff.hpp"
#include "promptcl/errors.hpp"
#include "promptcl/util.hpp"

namespace promptcl {

enum class Modality { language, vision };

struct EncoderSpec {
    int num_layers = 0;
    int embed_dim = 0;
    int num_heads = 0;
    int max_seq_len = 0;
    Modality modality = Modality::language;

    void validate() const {
        if (num_layers < 1 || embed_dim < 1 || num_heads < 1 || max_seq_len < 1)
            throw ConfigError("EncoderSpec: all dimensions must be positive");
        if (embed_dim % num_heads != 0)
            throw ConfigError("EncoderSpec: embed_dim must be divisible by num_heads");
    }
};

// Pre-layer-norm block: x + Attn(LN1(x)), then x + MLP(LN2(x)).
struct LayerWeights {
    ag::NodePtr ln1_gain, ln1_bias;
    ag::NodePtr wq, bq, wk, bk, wv, bv, wo, bo;
    ag::NodePtr ln2_gain, ln2_bias;
    ag::NodePtr w1, b1, w2, b2;

    std::vector<ag::NodePtr> params() const {
        return {ln1_gain, ln1_bias, wq, bq, wk, bk, wv, bv, wo, bo,
                ln2_gain, ln2_bias, w1,  b1, w2, b2};
    }
};

struct TransformerTower {
    EncoderSpec spec;
    std::vector<LayerWeights> layers;
    ag::NodePtr final_ln_gain, final_ln_bias;

    static TransformerTower build(const EncoderSpec& spec, Rng& rng) {
        spec.validate();
        TransformerTower t;
        t.spec = spec;
        const int d = spec.embed_dim;
        auto lin = [&](int in, int out) {
            return ag::leaf(gaussian(in, out, 1.0 / std::sqrt(static_cast<double>(in)), rng));
        };
        for (int i = 0; i < spec.num_layers; ++i) {
            LayerWeights lw;
            lw.ln1_gain = ag::leaf(Mat::Ones(1, d));
            lw.ln1_bias = ag::leaf(Mat::Zero(1, d));
            lw.wq = lin(d, d);
            lw.bq = ag::leaf(Mat::Zero(1, d));
            lw.wk = lin(d, d);
            lw.bk = ag::leaf(Mat::Zero(1, d));
            lw.wv = lin(d, d);
            lw.bv = ag::leaf(Mat::Zero(1, d));
            lw.wo = lin(d, d);
            lw.bo = ag::leaf(Mat::Zero(1, d));
            lw.ln2_gain = ag::leaf(Mat::Ones(1, d));
            lw.ln2_bias = ag::leaf(Mat::Zero(1, d));
            lw.w1 = lin(d, 4 * d);
            lw.b1 = ag::leaf(Mat::Zero(1, 4 * d));
            lw.w2 = lin(4 * d, d);
            lw.b2 = ag::leaf(Mat::Zero(1, d));
            t.layers.push_back(std::move(lw));
        }
        t.final_ln_gain = ag::leaf(Mat::Ones(1, d));
        t.final_ln_bias = ag::leaf(Mat::Zero(1, d));
        return t;
    }

    /// One encoder block applied to a T x d sequence (bidirectional attention).
    ag::NodePtr layer_forward(int layer, const ag::NodePtr& x) const {
        const LayerWeights& lw = layers.at(static_cast<size_t>(layer));
        const int heads = spec.num_heads;
        const int hd = spec.embed_dim / heads;
        auto n1 = ag::layer_norm(x, lw.ln1_gain, lw.ln1_bias);
        auto q = ag::add_rowvec(ag::matmul(n1, lw.wq), lw.bq);
        auto k = ag::add_rowvec(ag::matmul(n1, lw.wk), lw.bk);
        auto v = ag::add_rowvec(ag::matmul(n1, lw.wv), lw.bv);
        std::vector<ag::NodePtr> head_outs;
        head_outs.reserve(static_cast<size_t>(heads));
        for (int h = 0; h < heads; ++h) {
            auto qh = ag::slice_cols(q, h * hd, hd);
            auto kh = ag::slice_cols(k, h * hd, hd);
            auto vh = ag::slice_cols(v, h * hd, hd);
            auto att = ag::softmax_rows(ag::scale(ag::matmul_nt(qh, kh), 1.0 / std::sqrt(static_cast<double>(hd))));
            head_outs.push_back(ag::matmul(att, vh));
        }
        auto merged = heads == 1 ? head_outs[0] : ag::concat_cols(head_outs);
        auto attn = ag::add_rowvec(ag::matmul(merged, lw.wo), lw.bo);
        auto x2 = ag::add(x, attn);
        auto n2 = ag::layer_norm(x2, lw.ln2_gain, lw.ln2_bias);
        auto mlp = ag::add_rowvec(
            ag::matmul(ag::gelu(ag::add_rowvec(ag::matmul(n2, lw.w1), lw.b1)), lw.w2), lw.b2);
        return ag::add(x2, mlp);
    }

    ag::NodePtr final_norm(const ag::NodePtr& x) const {
        return ag::layer_norm(x, final_ln_gain, final_ln_bias);
    }

    std::vector<ag::NodePtr> params() const {
        std::vector<ag::NodePtr> out;
        for (const auto& lw : layers)
            for (auto& p : lw.params())
                out.push_back(p);
        out.push_back(final_ln_gain);
        out.push_back(final_ln_bias);
        return out;
    }
};

/// Deterministic character-level tokenizer with begin/end sentinels.
/// Multiword class names simply become longer token sequences.
class Tokenizer {
  public:
    static constexpr int kBos = 0;
    static constexpr int kEos = 1;

    static int vocab_size() { return 2 + 26 + 1 + 10 + 3; } // sentinels, a-z, space, 0-9, -'_

    static int char_id(char c) {
        if (c >= 'a' && c <= 'z') return 2 + (c - 'a');
        if (c == ' ') return 28;
        if (c >= '0' && c <= '9') return 29 + (c - '0');
        if (c == '-') return 39;
        if (c == '\'') return 40;
        if (c == '_') return 41;
        return -1;
    }

    std::vector<int> encode(const std::string& name) const {
        if (name.empty())
            throw DataError("Tokenizer: empty class name");
        std::vector<int> ids;
        ids.reserve(name.size() + 2);
        ids.push_back(kBos);
        for (char raw : name) {
            char c = raw >= 'A' && raw <= 'Z' ? static_cast<char>(raw - 'A' + 'a') : raw;
            int id = char_id(c);
            if (id < 0)
                throw DataError(std::string("Tokenizer: unsupported character '") + raw + "'");
            ids.push_back(id);
        }
        ids.push_back(kEos);
        return ids;
    }
};

struct PatchConfig {
    int image_size = 0;
    int patch_size = 0;

    void validate() const {
        if (image_size < 1 || patch_size < 1 || image_size % patch_size != 0)
            throw ConfigError("PatchConfig: patch_size must divide image_size");
    }
    int patches_per_side() const { return image_size / patch_size; }
    int num_patches() const { return patches_per_side() * patches_per_side(); }
    int patch_dim() const { return patch_size * patch_size; }
};

/// Flatten an image_size x image_size grayscale image into J x patch_dim rows,
/// patches in row-major grid order, pixels row-major within a patch.
inline Mat patchify(const Mat& image, const PatchConfig& cfg) {
    cfg.validate();
    if (image.rows() != cfg.image_size || image.cols() != cfg.image_size)
        throw DataError("patchify: image size mismatch");
    const int n = cfg.patches_per_side();
    const int p = cfg.patch_size;
    Mat out(cfg.num_patches(), cfg.patch_dim());
    for (int pr = 0; pr < n; ++pr)
        for (int pc = 0; pc < n; ++pc) {
            int row = pr * n + pc;
            for (int y = 0; y < p; ++y)
                for (int x = 0; x < p; ++x)
                    out(row, y * p + x) = image(pr * p + y, pc * p + x);
        }
    return out;
}

} // namespace promptcl
