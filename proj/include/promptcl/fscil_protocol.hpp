#pragma once

// Session-stream construction and validation for few-shot class-incremental
// runs, the end-to-end session loop, and the evaluation metrics: cumulative
// top-1 accuracy per session, dropping rate (base minus final), and the
// across-session average.
//
// Desk-scale data is procedural: each class name maps deterministically to a
// sinusoidal grating (orientation word + frequency word), so class identity
// is visible in pixels and compositional in text. That gives a frozen toy
// backbone genuine zero-shot ability on held-out word combinations.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "promptcl/classifier.hpp"
#include "promptcl/continual_trainer.hpp"
#include "promptcl/dual_encoder.hpp"
#include "promptcl/errors.hpp"
#include "promptcl/prompt_engine.hpp"
#include "promptcl/util.hpp"

namespace promptcl {

// ---------------------------------------------------------------------------
// Synthetic dataset
// ---------------------------------------------------------------------------

struct DatasetClass {
    std::string name;
    std::vector<Mat> images;
};

struct DatasetDescriptor {
    std::vector<DatasetClass> classes;
    int image_size = 0;

    std::vector<std::string> class_names() const {
        std::vector<std::string> out;
        for (const auto& c : classes)
            out.push_back(c.name);
        return out;
    }
};

namespace detail {

inline const std::vector<std::pair<std::string, double>>& orientation_words() {
    static const std::vector<std::pair<std::string, double>> table = {
        {"flat", 0.0},    {"leaning", 15.0}, {"tilted", 30.0},
        {"slanted", 60.0}, {"steep", 75.0},   {"upright", 90.0},
    };
    return table;
}

inline const std::vector<std::pair<std::string, double>>& frequency_words() {
    static const std::vector<std::pair<std::string, double>> table = {
        {"sparse", 1.0}, {"coarse", 1.5}, {"medium", 2.0},
        {"dense", 3.0},  {"fine", 4.0},   {"packed", 5.0},
    };
    return table;
}

struct GratingParams {
    double theta_deg = 0.0;
    double cycles = 1.0;
    double phase = 0.0;
};

/// Class name -> grating parameters. Known word pairs map through the tables;
/// anything else falls back to a name hash so the generator stays total.
inline GratingParams grating_from_name(const std::string& name) {
    GratingParams p;
    std::vector<std::string> words;
    std::istringstream ss(name);
    for (std::string w; ss >> w;)
        words.push_back(w);
    bool known = false;
    if (words.size() == 2) {
        for (const auto& [w, deg] : orientation_words())
            if (w == words[0]) {
                for (const auto& [f, cyc] : frequency_words())
                    if (f == words[1]) {
                        p.theta_deg = deg;
                        p.cycles = cyc;
                        known = true;
                    }
            }
    }
    uint64_t h = fnv1a64(name.data(), name.size());
    if (!known) {
        p.theta_deg = static_cast<double>(h % 180);
        p.cycles = 1.0 + static_cast<double>((h >> 8) % 40) / 10.0;
    }
    p.phase = 2.0 * std::numbers::pi * static_cast<double>((h >> 16) % 997) / 997.0;
    return p;
}

inline Mat render_grating(const GratingParams& p, int size, double noise_std, Rng& rng) {
    std::normal_distribution<double> noise(0.0, noise_std);
    const double theta = p.theta_deg * std::numbers::pi / 180.0;
    const double ct = std::cos(theta), st = std::sin(theta);
    Mat img(size, size);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            double u = (x * ct + y * st) / size;
            img(y, x) = 0.8 * std::sin(2.0 * std::numbers::pi * p.cycles * u + p.phase) +
                        noise(rng);
        }
    return img;
}

} // namespace detail

/// All orientation x frequency word pairs, a 36-name universe.
inline std::vector<std::string> default_vocab() {
    std::vector<std::string> names;
    for (const auto& [o, deg] : detail::orientation_words())
        for (const auto& [f, cyc] : detail::frequency_words())
            names.push_back(o + " " + f);
    return names;
}

/// Deterministic dataset of seeded grating images; class identity is
/// recoverable from pixels and encoded compositionally in the name.
inline DatasetDescriptor synthesize_dataset(int num_classes, int per_class, int image_size,
                                            const std::vector<std::string>& vocab, uint64_t seed,
                                            double noise_std = 0.15) {
    if (num_classes < 1 || per_class < 1 || image_size < 2)
        throw ConfigError("synthesize_dataset: counts and image size must be positive");
    if (static_cast<int>(vocab.size()) < num_classes)
        throw ConfigError("synthesize_dataset: vocab smaller than num_classes");
    Rng rng(seed);
    std::vector<size_t> order(vocab.size());
    for (size_t i = 0; i < order.size(); ++i)
        order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    DatasetDescriptor ds;
    ds.image_size = image_size;
    for (int c = 0; c < num_classes; ++c) {
        DatasetClass cls;
        cls.name = vocab[order[static_cast<size_t>(c)]];
        auto params = detail::grating_from_name(cls.name);
        for (int i = 0; i < per_class; ++i)
            cls.images.push_back(detail::render_grating(params, image_size, noise_std, rng));
        ds.classes.push_back(std::move(cls));
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Session streams
// ---------------------------------------------------------------------------

struct SessionSplit {
    std::vector<std::string> class_names; // C_t
    std::vector<LabeledImage> train;      // D_t
    std::vector<LabeledImage> eval;       // E_t
};

struct SessionStream {
    std::vector<SessionSplit> sessions; // index 0 is the base session
    int way = 0;
    int shot = 0;
};

struct SplitManifest {
    std::vector<std::string> base;
    std::vector<std::vector<std::string>> sessions;
};

inline SplitManifest parse_manifest(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    SplitManifest m;
    m.base = j.at("base").get<std::vector<std::string>>();
    m.sessions = j.at("sessions").get<std::vector<std::vector<std::string>>>();
    return m;
}

inline std::string render_manifest(const SplitManifest& m) {
    nlohmann::json j = {{"base", m.base}, {"sessions", m.sessions}};
    return j.dump(2) + "\n";
}

namespace detail {

inline SessionSplit make_split(const DatasetDescriptor& ds,
                               const std::vector<std::string>& names, int train_per_class,
                               Rng& rng) {
    SessionSplit split;
    split.class_names = names;
    for (const auto& name : names) {
        const DatasetClass* cls = nullptr;
        for (const auto& c : ds.classes)
            if (c.name == name)
                cls = &c;
        if (!cls)
            throw DataError("session stream: dataset has no class named '" + name + "'");
        const int n = static_cast<int>(cls->images.size());
        if (train_per_class >= n)
            throw ConfigError("session stream: class '" + name +
                              "' lacks held-out eval examples");
        std::vector<int> idx(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i)
            idx[static_cast<size_t>(i)] = i;
        std::shuffle(idx.begin(), idx.end(), rng);
        for (int i = 0; i < n; ++i) {
            LabeledImage li{cls->images[static_cast<size_t>(idx[static_cast<size_t>(i)])], name};
            if (i < train_per_class)
                split.train.push_back(std::move(li));
            else
                split.eval.push_back(std::move(li));
        }
    }
    return split;
}

} // namespace detail

/// Seeded assignment of classes to sessions plus per-class example sampling.
/// The base session trains on half of each class's examples; incremental
/// sessions train on `shot` examples per class. Eval sets are all held-out
/// examples of each session's classes.
inline SessionStream build_session_stream(const DatasetDescriptor& ds, int base_classes, int way,
                                          int shot, int num_sessions, uint64_t seed) {
    if (base_classes < 1 || way < 1 || shot < 1 || num_sessions < 0)
        throw ConfigError("build_session_stream: sizes must be positive");
    if (base_classes <= way && num_sessions > 0)
        throw ConfigError("build_session_stream: base class set must exceed session way");
    const int needed = base_classes + way * num_sessions;
    if (needed > static_cast<int>(ds.classes.size()))
        throw ConfigError("build_session_stream: dataset has too few classes");

    Rng rng(seed);
    std::vector<size_t> order(ds.classes.size());
    for (size_t i = 0; i < order.size(); ++i)
        order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);

    auto names_at = [&](int from, int count) {
        std::vector<std::string> names;
        for (int i = from; i < from + count; ++i)
            names.push_back(ds.classes[order[static_cast<size_t>(i)]].name);
        return names;
    };

    SessionStream stream;
    stream.way = way;
    stream.shot = shot;
    {
        auto base_names = names_at(0, base_classes);
        int min_examples = std::numeric_limits<int>::max();
        for (const auto& c : ds.classes)
            min_examples = std::min(min_examples, static_cast<int>(c.images.size()));
        int base_train = std::max(shot + 1, min_examples / 2);
        if (base_train >= min_examples)
            throw ConfigError("build_session_stream: too few examples per class for a base split");
        stream.sessions.push_back(detail::make_split(ds, base_names, base_train, rng));
    }
    for (int t = 0; t < num_sessions; ++t)
        stream.sessions.push_back(
            detail::make_split(ds, names_at(base_classes + t * way, way), shot, rng));
    return stream;
}

/// Same split logic but with the class-to-session assignment given explicitly.
inline SessionStream build_session_stream_from_manifest(const DatasetDescriptor& ds,
                                                        const SplitManifest& manifest, int shot,
                                                        uint64_t seed) {
    if (manifest.base.empty())
        throw ConfigError("manifest: base class list is empty");
    for (const auto& s : manifest.sessions)
        if (s.size() != manifest.sessions.front().size())
            throw ConfigError("manifest: incremental sessions must have equal size");
    Rng rng(seed);
    SessionStream stream;
    stream.way = manifest.sessions.empty() ? 0 : static_cast<int>(manifest.sessions.front().size());
    stream.shot = shot;
    int min_examples = std::numeric_limits<int>::max();
    for (const auto& c : ds.classes)
        min_examples = std::min(min_examples, static_cast<int>(c.images.size()));
    int base_train = std::max(shot + 1, min_examples / 2);
    stream.sessions.push_back(detail::make_split(ds, manifest.base, base_train, rng));
    for (const auto& names : manifest.sessions)
        stream.sessions.push_back(detail::make_split(ds, names, shot, rng));
    return stream;
}

/// Checks the three stream requirements; returns one message per violation.
inline std::vector<std::string> validate_stream(const SessionStream& stream) {
    std::vector<std::string> violations;
    const auto& s = stream.sessions;
    if (s.empty()) {
        violations.push_back("stream has no sessions");
        return violations;
    }
    for (size_t t = 0; t < s.size(); ++t)
        for (size_t u = t + 1; u < s.size(); ++u)
            for (const auto& name : s[t].class_names)
                for (const auto& other : s[u].class_names)
                    if (name == other)
                        violations.push_back("requirement (1) class overlap: '" + name +
                                             "' in sessions " + std::to_string(t) + " and " +
                                             std::to_string(u));
    for (size_t t = 1; t < s.size(); ++t) {
        if (s[0].class_names.size() <= s[t].class_names.size())
            violations.push_back("requirement (2) base class set not larger: |C_0|=" +
                                 std::to_string(s[0].class_names.size()) + " vs |C_" +
                                 std::to_string(t) + "|=" +
                                 std::to_string(s[t].class_names.size()));
        if (s[0].train.size() <= s[t].train.size())
            violations.push_back("requirement (2) base train set not larger: |D_0|=" +
                                 std::to_string(s[0].train.size()) + " vs |D_" +
                                 std::to_string(t) + "|=" + std::to_string(s[t].train.size()));
    }
    for (size_t t = 2; t < s.size(); ++t) {
        if (s[t].class_names.size() != s[1].class_names.size())
            violations.push_back("requirement (3) uneven class sets: |C_" + std::to_string(t) +
                                 "|=" + std::to_string(s[t].class_names.size()) + " vs |C_1|=" +
                                 std::to_string(s[1].class_names.size()));
        if (s[t].train.size() != s[1].train.size())
            violations.push_back("requirement (3) uneven train sets: |D_" + std::to_string(t) +
                                 "|=" + std::to_string(s[t].train.size()) + " vs |D_1|=" +
                                 std::to_string(s[1].train.size()));
    }
    return violations;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

struct SessionEvalResult {
    int correct = 0;
    int total = 0;
};

/// Top-1 accuracy (percent) over the union of eval sets through session t.
inline double cumulative_accuracy(const std::vector<SessionEvalResult>& results) {
    if (results.empty())
        throw ProtocolError("cumulative_accuracy: no session results");
    long long correct = 0, total = 0;
    for (const auto& r : results) {
        if (r.total <= 0)
            throw ProtocolError("cumulative_accuracy: missing session results");
        correct += r.correct;
        total += r.total;
    }
    return 100.0 * static_cast<double>(correct) / static_cast<double>(total);
}

struct SessionMetrics {
    std::vector<double> session_accuracies; // A_0 .. A_T, percent
    double pd = 0.0;                        // A_0 - A_T
    double avg = 0.0;                       // mean of A_0 .. A_T
};

inline SessionMetrics summarize(const std::vector<double>& session_accuracies) {
    if (session_accuracies.empty())
        throw ProtocolError("summarize: no session accuracies");
    SessionMetrics m;
    m.session_accuracies = session_accuracies;
    double sum = 0.0;
    for (double a : session_accuracies) {
        if (a < 0.0 || a > 100.0)
            throw ProtocolError("summarize: accuracy outside [0, 100]");
        sum += a;
    }
    m.avg = sum / static_cast<double>(session_accuracies.size());
    m.pd = session_accuracies.front() - session_accuracies.back();
    return m;
}

/// Eval-results CSV: one row per session with the cumulative accuracy and the
/// drop from the base session, two decimals.
inline std::string metrics_csv(const SessionMetrics& m) {
    std::string out = "session,t,A_t,pd_so_far\n";
    for (size_t t = 0; t < m.session_accuracies.size(); ++t) {
        double a = m.session_accuracies[t];
        out += "s" + std::to_string(t) + "," + std::to_string(t) + "," + format_fixed(a, 2) +
               "," + format_fixed(m.session_accuracies.front() - a, 2) + "\n";
    }
    return out;
}

// ---------------------------------------------------------------------------
// Session loop
// ---------------------------------------------------------------------------

enum class RunAblation { full, no_accumulation, no_vision_prompts, no_regularization, zero_shot };

inline PlanAblation plan_ablation_of(RunAblation a) {
    switch (a) {
    case RunAblation::no_accumulation:
        return PlanAblation::no_accumulation;
    case RunAblation::no_vision_prompts:
        return PlanAblation::no_vision_prompts;
    default:
        return PlanAblation::full;
    }
}

struct RunOptions {
    RunAblation ablation = RunAblation::full;
    OptimizerConfig base_optimizer{0.00325, 1e-5, 0.9, 0.1, /*epochs=*/3, /*batch_size=*/32};
    OptimizerConfig incremental_optimizer{0.00325, 1e-5, 0.9, 0.1, /*epochs=*/5, /*batch_size=*/4};
    double logit_scale = 1.0;
    double alpha_floor = 0.0;
    std::string caption_template = "a photo of a <category>";
    uint64_t seed = 0;
};

struct RunOutput {
    SessionMetrics metrics;
    TrainingLog log;
    std::vector<SessionEvalResult> per_session_eval; // last evaluation pass
};

/// Full protocol: per session, register classes, tune prompts, recompute
/// prototypes, and evaluate over the union of all eval sets seen so far.
inline RunOutput run_fscil(const DualEncoderBundle& bundle, GPromptBank* bank,
                           const SessionStream& stream, const RunOptions& opts) {
    auto violations = validate_stream(stream);
    if (!violations.empty()) {
        std::string msg = "run_fscil: invalid stream:";
        for (const auto& v : violations)
            msg += "\n  " + v;
        throw ProtocolError(msg);
    }
    if (!bundle.frozen)
        throw ProtocolError("run_fscil: bundle must be frozen");
    const bool zero_shot = opts.ablation == RunAblation::zero_shot;
    if (!zero_shot && bank == nullptr)
        throw ConfigError("run_fscil: non-zero-shot runs need a prompt bank");
    for (const auto& session : stream.sessions)
        for (const auto& name : session.class_names)
            for (const auto& seen : bundle.pretrain_classes)
                if (name == seen)
                    throw ProtocolError("run_fscil: benchmark class '" + name +
                                        "' overlaps the pretraining corpus");

    ClassRegistry registry;
    RegularizerState reg;
    reg.enabled = opts.ablation != RunAblation::no_regularization;
    reg.alpha_floor = opts.alpha_floor;

    RunOutput out;
    std::vector<double> accuracies;
    for (size_t t = 0; t < stream.sessions.size(); ++t) {
        const auto& session = stream.sessions[t];
        for (const auto& name : session.class_names)
            registry.register_class(name, static_cast<int>(t));
        reg.class_counts.push_back(static_cast<int>(session.class_names.size()));

        if (!zero_shot) {
            std::vector<TrainExample> examples;
            for (const auto& li : session.train)
                examples.push_back({li.pixels, registry.id_of(li.name)});
            TrainSessionOptions topts;
            topts.ablation = plan_ablation_of(opts.ablation);
            topts.regularization = reg.enabled;
            topts.logit_scale = opts.logit_scale;
            topts.seed = opts.seed + 0x9e3779b97f4a7c15ULL * (t + 1);
            const OptimizerConfig& cfg = t == 0 ? opts.base_optimizer : opts.incremental_optimizer;
            TrainingLog log = train_session(bundle, *bank, registry, examples,
                                            static_cast<int>(t), cfg, reg, topts);
            for (auto& r : log.steps)
                out.log.steps.push_back(r);
            for (double l : log.epoch_losses)
                out.log.epoch_losses.push_back(l);
        }

        ensure_prototypes(bundle, zero_shot ? nullptr : bank, registry, opts.caption_template,
                          zero_shot ? PrototypeMode::zero_shot : PrototypeMode::learned);

        std::vector<LayerForwardHook> vision_hooks;
        if (!zero_shot)
            vision_hooks = compile_plan(*bank, plan_ablation_of(opts.ablation)).vision_hooks;

        std::vector<SessionEvalResult> results;
        for (size_t u = 0; u <= t; ++u) {
            SessionEvalResult r;
            for (const auto& li : stream.sessions[u].eval) {
                auto emb = encode_image(bundle, li.pixels, vision_hooks);
                Prediction pred = classify(emb->value.row(0).transpose(), registry,
                                           opts.logit_scale);
                r.correct += pred.predicted_class == registry.id_of(li.name) ? 1 : 0;
                ++r.total;
            }
            results.push_back(r);
        }
        accuracies.push_back(cumulative_accuracy(results));
        out.per_session_eval = results;
    }
    out.metrics = summarize(accuracies);
    return out;
}

} // namespace promptcl
