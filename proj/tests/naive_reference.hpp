#pragma once

// Test-only oracle: a from-scratch forward pass over plain vectors that
// materializes the full concatenated sequence at every layer. Reads weight
// values from a bundle but shares no math with the library's hooked path,
// so agreement between the two is a real cross-check of both the layer
// arithmetic and the replacement/accumulation propagation.

#include <cmath>
#include <vector>

#include "promptcl/dual_encoder.hpp"
#include "promptcl/prompt_engine.hpp"

namespace ref {

using Row = std::vector<double>;
using Seq = std::vector<Row>;

inline Row mat_row(const promptcl::Mat& m, int r) {
    Row out(static_cast<size_t>(m.cols()));
    for (int c = 0; c < m.cols(); ++c)
        out[static_cast<size_t>(c)] = m(r, c);
    return out;
}

inline Seq mat_to_seq(const promptcl::Mat& m) {
    Seq out;
    for (int r = 0; r < m.rows(); ++r)
        out.push_back(mat_row(m, r));
    return out;
}

// y = x * W + b with explicit loops
inline Seq linear(const Seq& x, const promptcl::Mat& w, const promptcl::Mat& b) {
    Seq y(x.size(), Row(static_cast<size_t>(w.cols()), 0.0));
    for (size_t r = 0; r < x.size(); ++r)
        for (int c = 0; c < w.cols(); ++c) {
            double acc = b(0, c);
            for (int k = 0; k < w.rows(); ++k)
                acc += x[r][static_cast<size_t>(k)] * w(k, c);
            y[r][static_cast<size_t>(c)] = acc;
        }
    return y;
}

inline Seq layer_norm(const Seq& x, const promptcl::Mat& gain, const promptcl::Mat& bias,
                      double eps = 1e-5) {
    Seq y = x;
    for (auto& row : y) {
        double mu = 0.0;
        for (double v : row)
            mu += v;
        mu /= static_cast<double>(row.size());
        double var = 0.0;
        for (double v : row)
            var += (v - mu) * (v - mu);
        var /= static_cast<double>(row.size());
        double istd = 1.0 / std::sqrt(var + eps);
        for (size_t c = 0; c < row.size(); ++c)
            row[c] = (row[c] - mu) * istd * gain(0, static_cast<int>(c)) +
                     bias(0, static_cast<int>(c));
    }
    return y;
}

inline double gelu_scalar(double v) {
    return v * 0.5 * (1.0 + std::erf(v * 0.7071067811865475244));
}

inline Seq transformer_layer(const promptcl::LayerWeights& lw, int num_heads, const Seq& x) {
    const int T = static_cast<int>(x.size());
    const int d = static_cast<int>(x[0].size());
    const int hd = d / num_heads;

    Seq n1 = layer_norm(x, lw.ln1_gain->value, lw.ln1_bias->value);
    Seq q = linear(n1, lw.wq->value, lw.bq->value);
    Seq k = linear(n1, lw.wk->value, lw.bk->value);
    Seq v = linear(n1, lw.wv->value, lw.bv->value);

    Seq merged(static_cast<size_t>(T), Row(static_cast<size_t>(d), 0.0));
    for (int h = 0; h < num_heads; ++h) {
        for (int t = 0; t < T; ++t) {
            std::vector<double> scores(static_cast<size_t>(T), 0.0);
            for (int u = 0; u < T; ++u) {
                double dot = 0.0;
                for (int c = 0; c < hd; ++c)
                    dot += q[static_cast<size_t>(t)][static_cast<size_t>(h * hd + c)] *
                           k[static_cast<size_t>(u)][static_cast<size_t>(h * hd + c)];
                scores[static_cast<size_t>(u)] = dot / std::sqrt(static_cast<double>(hd));
            }
            double mx = scores[0];
            for (double s : scores)
                mx = std::max(mx, s);
            double z = 0.0;
            for (double& s : scores) {
                s = std::exp(s - mx);
                z += s;
            }
            for (int c = 0; c < hd; ++c) {
                double acc = 0.0;
                for (int u = 0; u < T; ++u)
                    acc += scores[static_cast<size_t>(u)] / z *
                           v[static_cast<size_t>(u)][static_cast<size_t>(h * hd + c)];
                merged[static_cast<size_t>(t)][static_cast<size_t>(h * hd + c)] = acc;
            }
        }
    }

    Seq attn = linear(merged, lw.wo->value, lw.bo->value);
    Seq x2 = x;
    for (int t = 0; t < T; ++t)
        for (int c = 0; c < d; ++c)
            x2[static_cast<size_t>(t)][static_cast<size_t>(c)] +=
                attn[static_cast<size_t>(t)][static_cast<size_t>(c)];

    Seq n2 = layer_norm(x2, lw.ln2_gain->value, lw.ln2_bias->value);
    Seq h1 = linear(n2, lw.w1->value, lw.b1->value);
    for (auto& row : h1)
        for (double& val : row)
            val = gelu_scalar(val);
    Seq mlp = linear(h1, lw.w2->value, lw.b2->value);
    Seq y = x2;
    for (int t = 0; t < T; ++t)
        for (int c = 0; c < d; ++c)
            y[static_cast<size_t>(t)][static_cast<size_t>(c)] +=
                mlp[static_cast<size_t>(t)][static_cast<size_t>(c)];
    return y;
}

inline Seq concat(const Seq& a, const Seq& b) {
    Seq out = a;
    out.insert(out.end(), b.begin(), b.end());
    return out;
}

inline Seq slice(const Seq& x, int from, int count) {
    return Seq(x.begin() + from, x.begin() + from + count);
}

inline Row project_readout(const promptcl::TransformerTower& tower, const Row& state,
                           const promptcl::Mat& out_proj) {
    Seq normed = layer_norm({state}, tower.final_ln_gain->value, tower.final_ln_bias->value);
    Row out(static_cast<size_t>(out_proj.cols()), 0.0);
    for (int c = 0; c < out_proj.cols(); ++c)
        for (int k = 0; k < out_proj.rows(); ++k)
            out[static_cast<size_t>(c)] += normed[0][static_cast<size_t>(k)] * out_proj(k, c);
    return out;
}

/// Text forward materializing [BOS, g_i, words..., EOS] per layer: fresh
/// prompts through depth D with prompt outputs dropped below D, then normal
/// propagation; readout at the [EOS] position.
inline Row encode_text(const promptcl::DualEncoderBundle& bundle,
                       const promptcl::GPromptBank& bank, const std::vector<int>& token_ids,
                       int depth) {
    const int T = static_cast<int>(token_ids.size());
    Seq real;
    for (int t = 0; t < T; ++t) {
        Row row = mat_row(bundle.token_embed->value, token_ids[static_cast<size_t>(t)]);
        for (size_t c = 0; c < row.size(); ++c)
            row[c] += bundle.lang_pos->value(t, static_cast<int>(c));
        real.push_back(std::move(row));
    }
    const int K = bundle.language.spec.num_layers;
    Seq prompt_state;
    for (int i = 1; i <= K; ++i) {
        if (i <= depth)
            prompt_state = mat_to_seq(bank.prompts[static_cast<size_t>(i - 1)]->value);
        Seq in = concat(concat(slice(real, 0, 1), prompt_state), slice(real, 1, T - 1));
        Seq out = transformer_layer(bundle.language.layers[static_cast<size_t>(i - 1)],
                                    bundle.language.spec.num_heads, in);
        int p = static_cast<int>(prompt_state.size());
        real = concat(slice(out, 0, 1), slice(out, 1 + p, T - 1));
        if (i < depth)
            prompt_state.clear(); // replaced by fresh parameters next layer
        else if (p > 0)
            prompt_state = slice(out, 1, p);
    }
    return project_readout(bundle.language, real[static_cast<size_t>(T - 1)],
                           bundle.text_out_proj->value);
}

/// Vision forward materializing [c, g-block] per layer. In accumulation mode
/// the fresh projected prompts are concatenated ahead of the previous layer's
/// prompt outputs; in replacement mode previous outputs are dropped below D.
inline Row encode_image(const promptcl::DualEncoderBundle& bundle,
                        const promptcl::GPromptBank& bank, const promptcl::Mat& image, int depth,
                        bool accumulate, bool with_prompts = true) {
    promptcl::Mat patches = promptcl::patchify(image, bundle.patch);
    const int J = static_cast<int>(patches.rows());
    Seq real;
    {
        Row cls = mat_row(bundle.cls_token->value, 0);
        for (size_t c = 0; c < cls.size(); ++c)
            cls[c] += bundle.vis_pos->value(0, static_cast<int>(c));
        real.push_back(std::move(cls));
        Seq tok = linear(mat_to_seq(patches), bundle.patch_embed_w->value,
                         bundle.patch_embed_b->value);
        for (int t = 0; t < J; ++t) {
            for (size_t c = 0; c < tok[static_cast<size_t>(t)].size(); ++c)
                tok[static_cast<size_t>(t)][c] += bundle.vis_pos->value(t + 1, static_cast<int>(c));
            real.push_back(tok[static_cast<size_t>(t)]);
        }
    }
    const int K = bundle.vision.spec.num_layers;
    const int R = J + 1;
    Seq prompt_state;
    for (int i = 1; i <= K; ++i) {
        if (with_prompts && i <= depth) {
            Seq fresh = mat_to_seq(promptcl::project_prompts(bank, i));
            prompt_state = accumulate ? concat(fresh, prompt_state) : fresh;
        }
        Seq in = concat(real, prompt_state);
        Seq out = transformer_layer(bundle.vision.layers[static_cast<size_t>(i - 1)],
                                    bundle.vision.spec.num_heads, in);
        int p = static_cast<int>(prompt_state.size());
        real = slice(out, 0, R);
        if (!accumulate && i < depth)
            prompt_state.clear();
        else if (p > 0)
            prompt_state = slice(out, R, p);
    }
    return project_readout(bundle.vision, real[0], bundle.vision_out_proj->value);
}

inline double max_abs_diff(const Row& a, const promptcl::Mat& b) {
    double mx = 0.0;
    for (size_t c = 0; c < a.size(); ++c)
        mx = std::max(mx, std::abs(a[c] - b(0, static_cast<int>(c))));
    return mx;
}

} // namespace ref
