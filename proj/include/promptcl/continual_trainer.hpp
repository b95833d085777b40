#pragma once

// Per-session optimization of the prompt bank. The backbone stays frozen
// (checked bit-exactly); only the prompt tokens and the shared projection
// receive updates. Gradients are scaled by alpha_t = |C_t| / sum_{tau<=t}
// |C_tau| before the optimizer sees them, so momentum accumulates the scaled
// gradients and updates slow down as more classes have been seen.

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include <json.hpp>

#include "promptcl/classifier.hpp"
#include "promptcl/dual_encoder.hpp"
#include "promptcl/errors.hpp"
#include "promptcl/prompt_engine.hpp"
#include "promptcl/util.hpp"

namespace promptcl {

struct OptimizerConfig {
    double learning_rate = 0.00325;
    double weight_decay = 1e-5;
    double momentum = 0.9;
    double warmup_fraction = 0.1; // fraction of total steps spent warming up
    int epochs = 1;
    int batch_size = 4;

    void validate() const {
        if (learning_rate <= 0.0)
            throw ConfigError("OptimizerConfig: learning_rate must be > 0");
        if (epochs < 1)
            throw ConfigError("OptimizerConfig: epochs must be >= 1");
        if (batch_size < 1)
            throw ConfigError("OptimizerConfig: batch_size must be >= 1");
        if (warmup_fraction < 0.0 || warmup_fraction > 1.0)
            throw ConfigError("OptimizerConfig: warmup_fraction must be in [0, 1]");
    }
};

struct RegularizerState {
    std::vector<int> class_counts; // |C_tau| per completed session, index 0 = base
    bool enabled = true;
    double alpha_floor = 0.0; // 0 disables the floor
};

/// alpha_t = |C_t| / sum_{tau=0..t} |C_tau|, defined for t >= 1.
inline double alpha(int t, const RegularizerState& state) {
    if (t < 1)
        throw ConfigError("alpha: defined for sessions t >= 1 only");
    if (t >= static_cast<int>(state.class_counts.size()))
        throw ConfigError("alpha: class counts unknown through session t");
    long long total = 0;
    for (int tau = 0; tau <= t; ++tau) {
        int c = state.class_counts[static_cast<size_t>(tau)];
        if (c <= 0)
            throw ConfigError("alpha: class counts must be positive");
        total += c;
    }
    return static_cast<double>(state.class_counts[static_cast<size_t>(t)]) /
           static_cast<double>(total);
}

/// Multiplies every prompt and projection gradient entry by alpha, in place.
inline void scale_prompt_gradients(GPromptBank& bank, double alpha_value) {
    for (auto& p : bank.params())
        if (p->grad.size() != 0)
            p->grad *= alpha_value;
}

/// Linear warmup to the base rate, then cosine decay that reaches zero on the
/// final step. The peak equals cfg.learning_rate.
inline double lr_at_step(const OptimizerConfig& cfg, int step, int total_steps) {
    if (step < 0 || step >= total_steps)
        throw ConfigError("lr_at_step: step out of range");
    const int warmup = static_cast<int>(std::lround(cfg.warmup_fraction * total_steps));
    if (step < warmup)
        return cfg.learning_rate * (step + 1) / warmup;
    const int span = total_steps - 1 - warmup;
    if (span <= 0)
        return cfg.learning_rate;
    double phase = static_cast<double>(step - warmup) / span;
    return cfg.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * phase));
}

struct SgdMomentum {
    std::vector<Mat> velocity;

    void step(const std::vector<ag::NodePtr>& params, double lr, double momentum,
              double weight_decay) {
        if (velocity.empty())
            for (const auto& p : params)
                velocity.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
        for (size_t i = 0; i < params.size(); ++i) {
            auto& p = params[i];
            Mat g = p->grad.size() != 0 ? p->grad : Mat::Zero(p->value.rows(), p->value.cols());
            if (weight_decay != 0.0)
                g += weight_decay * p->value;
            velocity[i] = momentum * velocity[i] + g;
            p->value -= lr * velocity[i];
        }
    }
};

struct TrainStepRecord {
    int session = 0;
    int epoch = 0;
    int step = 0;
    double loss = 0.0;
    double lr = 0.0;
    double alpha = 1.0;
};

struct TrainingLog {
    std::vector<TrainStepRecord> steps;
    std::vector<double> epoch_losses;

    std::string to_jsonl() const {
        std::string out;
        for (const auto& r : steps) {
            nlohmann::json j = {{"session", r.session}, {"epoch", r.epoch}, {"step", r.step},
                                {"loss", r.loss},       {"lr", r.lr},       {"alpha", r.alpha}};
            out += j.dump();
            out += '\n';
        }
        return out;
    }
};

struct TrainExample {
    Mat pixels;
    int class_id = 0;
};

struct TrainSessionOptions {
    PlanAblation ablation = PlanAblation::full;
    bool regularization = true;
    double logit_scale = 1.0;
    uint64_t seed = 0;
};

namespace detail {

/// Batch loss: cross-entropy of tau-scaled cosine logits between hooked image
/// embeddings and hooked text prototypes for every registered class.
inline ag::NodePtr batch_loss(const DualEncoderBundle& bundle, const PromptPlan& plan,
                              const ClassRegistry& registry,
                              const std::vector<const TrainExample*>& batch, double logit_scale) {
    std::vector<ag::NodePtr> protos;
    protos.reserve(static_cast<size_t>(registry.size()));
    for (const auto& entry : registry.entries())
        protos.push_back(
            encode_text(bundle, bundle.tokenizer.encode(entry.class_name), plan.language_hooks));
    auto proto_mat = ag::l2_normalize_rows(ag::concat_rows(protos));
    std::vector<ag::NodePtr> imgs;
    std::vector<int> labels;
    imgs.reserve(batch.size());
    for (const auto* ex : batch) {
        imgs.push_back(encode_image(bundle, ex->pixels, plan.vision_hooks));
        labels.push_back(ex->class_id);
    }
    auto img_mat = ag::l2_normalize_rows(ag::concat_rows(imgs));
    auto logits = ag::scale(ag::matmul_nt(img_mat, proto_mat), logit_scale);
    return ag::cross_entropy_mean(logits, labels);
}

} // namespace detail

/// One session of prompt tuning over all registered classes. Returns the
/// per-step training log; throws if any frozen weight moves.
inline TrainingLog train_session(const DualEncoderBundle& bundle, GPromptBank& bank,
                                 const ClassRegistry& registry,
                                 const std::vector<TrainExample>& examples, int session_index,
                                 const OptimizerConfig& cfg, const RegularizerState& reg,
                                 const TrainSessionOptions& opts) {
    cfg.validate();
    if (!bundle.frozen)
        throw ProtocolError("train_session: bundle must be frozen before training");
    if (examples.empty())
        throw ProtocolError("train_session: empty session data");
    if (registry.empty())
        throw ProtocolError("train_session: no classes registered");
    if (session_index >= static_cast<int>(reg.class_counts.size()))
        throw ProtocolError("train_session: regularizer counts missing for this session");

    const uint64_t before = bundle.checksum();
    const int n = static_cast<int>(examples.size());
    const int steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
    const int total_steps = cfg.epochs * steps_per_epoch;

    double alpha_t = 1.0;
    if (opts.regularization && session_index >= 1)
        alpha_t = std::max(alpha(session_index, reg), reg.alpha_floor);

    auto params = bank.params();
    SgdMomentum opt;
    Rng rng(opts.seed);
    std::vector<int> order(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i)
        order[static_cast<size_t>(i)] = i;

    TrainingLog log;
    int global_step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        for (int s = 0; s < steps_per_epoch; ++s) {
            std::vector<const TrainExample*> batch;
            for (int b = s * cfg.batch_size; b < std::min(n, (s + 1) * cfg.batch_size); ++b)
                batch.push_back(&examples[static_cast<size_t>(order[static_cast<size_t>(b)])]);

            PromptPlan plan = compile_plan(bank, opts.ablation);
            auto loss = detail::batch_loss(bundle, plan, registry, batch, opts.logit_scale);
            for (auto& p : params)
                p->zero_grad();
            ag::backward(loss);
            if (opts.regularization && session_index >= 1)
                scale_prompt_gradients(bank, alpha_t);

            double lr = lr_at_step(cfg, global_step, total_steps);
            opt.step(params, lr, cfg.momentum, cfg.weight_decay);
            ++bank.version;

            epoch_loss += loss->value(0, 0);
            log.steps.push_back({session_index, epoch, global_step, loss->value(0, 0), lr,
                                 session_index >= 1 && opts.regularization ? alpha_t : 1.0});
            ++global_step;
        }
        log.epoch_losses.push_back(epoch_loss / steps_per_epoch);
    }

    if (bundle.checksum() != before)
        throw InvariantError("train_session: frozen backbone weights changed");
    return log;
}

/// Central-difference check of the analytic prompt/projection gradients on a
/// fixed batch. Returns the max relative error over the sampled coordinates.
inline double finite_difference_check(const DualEncoderBundle& bundle, GPromptBank& bank,
                                      const ClassRegistry& registry,
                                      const std::vector<TrainExample>& batch, double epsilon,
                                      int sample_size, const TrainSessionOptions& opts = {}) {
    if (batch.empty())
        throw ProtocolError("finite_difference_check: empty batch");
    std::vector<const TrainExample*> ptrs;
    for (const auto& ex : batch)
        ptrs.push_back(&ex);

    auto eval_loss = [&]() {
        PromptPlan plan = compile_plan(bank, opts.ablation);
        auto loss = detail::batch_loss(bundle, plan, registry, ptrs, opts.logit_scale);
        return loss;
    };

    auto params = bank.params();
    for (auto& p : params)
        p->zero_grad();
    ag::backward(eval_loss());

    struct Coord {
        ag::NodePtr param;
        Eigen::Index r, c;
        double analytic;
    };
    std::vector<Coord> coords;
    Rng rng(opts.seed);
    for (int i = 0; i < sample_size; ++i) {
        auto& p = params[std::uniform_int_distribution<size_t>(0, params.size() - 1)(rng)];
        Eigen::Index r = std::uniform_int_distribution<Eigen::Index>(0, p->value.rows() - 1)(rng);
        Eigen::Index c = std::uniform_int_distribution<Eigen::Index>(0, p->value.cols() - 1)(rng);
        double g = p->grad.size() != 0 ? p->grad(r, c) : 0.0;
        coords.push_back({p, r, c, g});
    }

    double max_rel = 0.0;
    for (const auto& coord : coords) {
        double saved = coord.param->value(coord.r, coord.c);
        coord.param->value(coord.r, coord.c) = saved + epsilon;
        double up = eval_loss()->value(0, 0);
        coord.param->value(coord.r, coord.c) = saved - epsilon;
        double down = eval_loss()->value(0, 0);
        coord.param->value(coord.r, coord.c) = saved;
        double fd = (up - down) / (2.0 * epsilon);
        double denom = std::max({std::abs(fd), std::abs(coord.analytic), 1e-6});
        max_rel = std::max(max_rel, std::abs(fd - coord.analytic) / denom);
    }
    return max_rel;
}

} // namespace promptcl
