#pragma once

// Run configuration, execution records, and the reporting surface behind the
// CLI: single runs, the L x D grid, the ablation suite, and comparison
// tables. All artifacts are plain JSON/CSV/SVG files written atomically.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "promptcl/fscil_protocol.hpp"

namespace promptcl {

inline std::string ablation_name(RunAblation a) {
    switch (a) {
    case RunAblation::full: return "full";
    case RunAblation::no_accumulation: return "no_accumulation";
    case RunAblation::no_vision_prompts: return "no_vision_prompts";
    case RunAblation::no_regularization: return "no_regularization";
    case RunAblation::zero_shot: return "zero_shot";
    }
    throw ConfigError("unknown ablation");
}

inline RunAblation ablation_from_name(const std::string& s) {
    if (s == "full") return RunAblation::full;
    if (s == "no_accumulation") return RunAblation::no_accumulation;
    if (s == "no_vision_prompts") return RunAblation::no_vision_prompts;
    if (s == "no_regularization") return RunAblation::no_regularization;
    if (s == "zero_shot") return RunAblation::zero_shot;
    throw ConfigError("unknown ablation: " + s);
}

struct ToyBackboneConfig {
    int lang_layers = 2;
    int lang_dim = 32;
    int lang_heads = 4;
    int lang_max_seq = 64;
    int vis_layers = 2;
    int vis_dim = 48;
    int vis_heads = 4;
    int vis_max_seq = 64;
    int d_joint = 16;
    int image_size = 16;
    int patch_size = 4;
    uint64_t bundle_seed = 7;
    int pretrain_steps = 400;
    int pretrain_classes = 24;
    int pretrain_per_class = 24;
    double pretrain_lr = 3e-3;
    double pretrain_temperature = 10.0;
};

struct StreamConfig {
    int num_classes = 10;
    int per_class = 40;
    int base_classes = 6;
    int way = 2;
    int shot = 3;
    int sessions = 2;
    uint64_t seed = 3;
    std::vector<std::string> vocab;  // empty means the default vocab
    std::string manifest_path;       // optional explicit class assignment
};

struct RunConfig {
    std::string backbone = "toy"; // "toy" or "adapter:<path>"
    int prompt_length = 2;        // L
    int prompt_depth = 2;         // D
    RunAblation ablation = RunAblation::full;
    double logit_scale = 1.0;
    double alpha_floor = 0.0;
    std::string caption_template = "a photo of a <category>";
    OptimizerConfig base_optimizer{0.00325, 1e-5, 0.9, 0.1, 3, 32};
    OptimizerConfig incremental_optimizer{0.00325, 1e-5, 0.9, 0.1, 5, 4};
    ToyBackboneConfig toy;
    StreamConfig stream;
    std::vector<uint64_t> seeds = {1};
    std::string output_dir = "runs/out";
    std::vector<int> grid_lengths;  // cmd_grid only
    std::vector<int> grid_depths;   // cmd_grid only

    void validate() const {
        if (prompt_length < 1 || prompt_depth < 1)
            throw ConfigError("config: L and D must be >= 1");
        if (seeds.empty())
            throw ConfigError("config: seeds must be nonempty");
        if (logit_scale <= 0.0)
            throw ConfigError("config: logit_scale must be > 0");
        if (backbone != "toy" && backbone.rfind("adapter:", 0) != 0)
            throw ConfigError("config: backbone must be 'toy' or 'adapter:<path>'");
        if (ablation != RunAblation::zero_shot) {
            base_optimizer.validate();
            incremental_optimizer.validate();
        }
    }
};

namespace detail {

inline nlohmann::json optimizer_to_json(const OptimizerConfig& c) {
    return {{"learning_rate", c.learning_rate}, {"weight_decay", c.weight_decay},
            {"momentum", c.momentum},           {"warmup_fraction", c.warmup_fraction},
            {"epochs", c.epochs},               {"batch_size", c.batch_size}};
}

inline OptimizerConfig optimizer_from_json(const nlohmann::json& j, OptimizerConfig base) {
    base.learning_rate = j.value("learning_rate", base.learning_rate);
    base.weight_decay = j.value("weight_decay", base.weight_decay);
    base.momentum = j.value("momentum", base.momentum);
    base.warmup_fraction = j.value("warmup_fraction", base.warmup_fraction);
    base.epochs = j.value("epochs", base.epochs);
    base.batch_size = j.value("batch_size", base.batch_size);
    return base;
}

} // namespace detail

inline nlohmann::json config_to_json(const RunConfig& c) {
    nlohmann::json j;
    j["backbone"] = c.backbone;
    j["L"] = c.prompt_length;
    j["D"] = c.prompt_depth;
    j["ablation"] = ablation_name(c.ablation);
    j["logit_scale"] = c.logit_scale;
    j["alpha_floor"] = c.alpha_floor;
    j["caption_template"] = c.caption_template;
    j["optimizer"] = {{"base", detail::optimizer_to_json(c.base_optimizer)},
                      {"incremental", detail::optimizer_to_json(c.incremental_optimizer)}};
    j["toy"] = {{"lang_layers", c.toy.lang_layers},
                {"lang_dim", c.toy.lang_dim},
                {"lang_heads", c.toy.lang_heads},
                {"lang_max_seq", c.toy.lang_max_seq},
                {"vis_layers", c.toy.vis_layers},
                {"vis_dim", c.toy.vis_dim},
                {"vis_heads", c.toy.vis_heads},
                {"vis_max_seq", c.toy.vis_max_seq},
                {"d_joint", c.toy.d_joint},
                {"image_size", c.toy.image_size},
                {"patch_size", c.toy.patch_size},
                {"bundle_seed", c.toy.bundle_seed},
                {"pretrain_steps", c.toy.pretrain_steps},
                {"pretrain_classes", c.toy.pretrain_classes},
                {"pretrain_per_class", c.toy.pretrain_per_class},
                {"pretrain_lr", c.toy.pretrain_lr},
                {"pretrain_temperature", c.toy.pretrain_temperature}};
    j["stream"] = {{"num_classes", c.stream.num_classes},
                   {"per_class", c.stream.per_class},
                   {"base_classes", c.stream.base_classes},
                   {"way", c.stream.way},
                   {"shot", c.stream.shot},
                   {"sessions", c.stream.sessions},
                   {"seed", c.stream.seed}};
    if (!c.stream.vocab.empty())
        j["stream"]["vocab"] = c.stream.vocab;
    if (!c.stream.manifest_path.empty())
        j["stream"]["manifest"] = c.stream.manifest_path;
    j["seeds"] = c.seeds;
    j["output_dir"] = c.output_dir;
    if (!c.grid_lengths.empty())
        j["grid"] = {{"L_list", c.grid_lengths}, {"D_list", c.grid_depths}};
    return j;
}

inline RunConfig config_from_json(const nlohmann::json& j) {
    RunConfig c;
    c.backbone = j.value("backbone", c.backbone);
    c.prompt_length = j.value("L", c.prompt_length);
    c.prompt_depth = j.value("D", c.prompt_depth);
    if (j.contains("ablation"))
        c.ablation = ablation_from_name(j.at("ablation").get<std::string>());
    c.logit_scale = j.value("logit_scale", c.logit_scale);
    c.alpha_floor = j.value("alpha_floor", c.alpha_floor);
    c.caption_template = j.value("caption_template", c.caption_template);
    if (j.contains("optimizer")) {
        const auto& o = j.at("optimizer");
        if (o.contains("base"))
            c.base_optimizer = detail::optimizer_from_json(o.at("base"), c.base_optimizer);
        if (o.contains("incremental"))
            c.incremental_optimizer =
                detail::optimizer_from_json(o.at("incremental"), c.incremental_optimizer);
    }
    if (j.contains("toy")) {
        const auto& t = j.at("toy");
        c.toy.lang_layers = t.value("lang_layers", c.toy.lang_layers);
        c.toy.lang_dim = t.value("lang_dim", c.toy.lang_dim);
        c.toy.lang_heads = t.value("lang_heads", c.toy.lang_heads);
        c.toy.lang_max_seq = t.value("lang_max_seq", c.toy.lang_max_seq);
        c.toy.vis_layers = t.value("vis_layers", c.toy.vis_layers);
        c.toy.vis_dim = t.value("vis_dim", c.toy.vis_dim);
        c.toy.vis_heads = t.value("vis_heads", c.toy.vis_heads);
        c.toy.vis_max_seq = t.value("vis_max_seq", c.toy.vis_max_seq);
        c.toy.d_joint = t.value("d_joint", c.toy.d_joint);
        c.toy.image_size = t.value("image_size", c.toy.image_size);
        c.toy.patch_size = t.value("patch_size", c.toy.patch_size);
        c.toy.bundle_seed = t.value("bundle_seed", c.toy.bundle_seed);
        c.toy.pretrain_steps = t.value("pretrain_steps", c.toy.pretrain_steps);
        c.toy.pretrain_classes = t.value("pretrain_classes", c.toy.pretrain_classes);
        c.toy.pretrain_per_class = t.value("pretrain_per_class", c.toy.pretrain_per_class);
        c.toy.pretrain_lr = t.value("pretrain_lr", c.toy.pretrain_lr);
        c.toy.pretrain_temperature = t.value("pretrain_temperature", c.toy.pretrain_temperature);
    }
    if (j.contains("stream")) {
        const auto& s = j.at("stream");
        c.stream.num_classes = s.value("num_classes", c.stream.num_classes);
        c.stream.per_class = s.value("per_class", c.stream.per_class);
        c.stream.base_classes = s.value("base_classes", c.stream.base_classes);
        c.stream.way = s.value("way", c.stream.way);
        c.stream.shot = s.value("shot", c.stream.shot);
        c.stream.sessions = s.value("sessions", c.stream.sessions);
        c.stream.seed = s.value("seed", c.stream.seed);
        if (s.contains("vocab"))
            c.stream.vocab = s.at("vocab").get<std::vector<std::string>>();
        c.stream.manifest_path = s.value("manifest", c.stream.manifest_path);
    }
    if (j.contains("seeds"))
        c.seeds = j.at("seeds").get<std::vector<uint64_t>>();
    c.output_dir = j.value("output_dir", c.output_dir);
    if (j.contains("grid")) {
        c.grid_lengths = j.at("grid").at("L_list").get<std::vector<int>>();
        c.grid_depths = j.at("grid").at("D_list").get<std::vector<int>>();
    }
    return c;
}

// ---------------------------------------------------------------------------
// Execution
// ---------------------------------------------------------------------------

/// Benchmark dataset plus the bundle to run it on. The pretraining corpus is
/// drawn from vocab entries the benchmark did not claim, so corpus and
/// benchmark classes never overlap.
struct PreparedExperiment {
    DualEncoderBundle bundle;
    DatasetDescriptor dataset;
    SessionStream stream;
};

inline PreparedExperiment prepare_experiment(const RunConfig& cfg) {
    PreparedExperiment prep;
    std::vector<std::string> vocab = cfg.stream.vocab.empty() ? default_vocab() : cfg.stream.vocab;
    prep.dataset = synthesize_dataset(cfg.stream.num_classes, cfg.stream.per_class,
                                      cfg.toy.image_size, vocab, cfg.stream.seed);
    if (!cfg.stream.manifest_path.empty()) {
        SplitManifest manifest = parse_manifest(read_file(cfg.stream.manifest_path));
        prep.stream = build_session_stream_from_manifest(prep.dataset, manifest, cfg.stream.shot,
                                                         cfg.stream.seed);
    } else {
        prep.stream = build_session_stream(prep.dataset, cfg.stream.base_classes, cfg.stream.way,
                                           cfg.stream.shot, cfg.stream.sessions, cfg.stream.seed);
    }

    if (cfg.backbone.rfind("adapter:", 0) == 0) {
        ToyCheckpointAdapter adapter;
        prep.bundle = adapter.load(cfg.backbone.substr(8));
        return prep;
    }

    ToyBundleConfig bc;
    bc.language = {cfg.toy.lang_layers, cfg.toy.lang_dim, cfg.toy.lang_heads,
                   cfg.toy.lang_max_seq, Modality::language};
    bc.vision = {cfg.toy.vis_layers, cfg.toy.vis_dim, cfg.toy.vis_heads, cfg.toy.vis_max_seq,
                 Modality::vision};
    bc.d_joint = cfg.toy.d_joint;
    bc.patch = {cfg.toy.image_size, cfg.toy.patch_size};
    bc.seed = cfg.toy.bundle_seed;
    prep.bundle = build_toy_bundle(bc);

    std::vector<std::string> benchmark = prep.dataset.class_names();
    std::vector<std::string> leftover;
    for (const auto& name : vocab)
        if (std::find(benchmark.begin(), benchmark.end(), name) == benchmark.end())
            leftover.push_back(name);
    int n_pretrain = std::min<int>(cfg.toy.pretrain_classes, static_cast<int>(leftover.size()));
    if (n_pretrain < 2)
        throw ConfigError("prepare_experiment: vocab leaves too few classes for pretraining");
    DatasetDescriptor pre = synthesize_dataset(n_pretrain, cfg.toy.pretrain_per_class,
                                               cfg.toy.image_size, leftover, cfg.toy.bundle_seed);
    std::vector<LabeledImage> corpus;
    for (const auto& cls : pre.classes)
        for (const auto& img : cls.images)
            corpus.push_back({img, cls.name});
    PretrainOptions popts;
    popts.steps = cfg.toy.pretrain_steps;
    popts.batch_classes = n_pretrain;
    popts.learning_rate = cfg.toy.pretrain_lr;
    popts.temperature = cfg.toy.pretrain_temperature;
    popts.caption_template = cfg.caption_template;
    popts.seed = cfg.toy.bundle_seed;
    pretrain_toy_alignment(prep.bundle, corpus, cfg.toy.pretrain_steps, popts);
    return prep;
}

struct SeedResult {
    uint64_t seed = 0;
    SessionMetrics metrics;
    TrainingLog log;
};

struct Aggregate {
    std::vector<double> mean_accuracies;
    std::vector<double> se_accuracies;
    double mean_avg = 0.0, se_avg = 0.0;
    double mean_pd = 0.0, se_pd = 0.0;
};

namespace detail {

inline std::pair<double, double> mean_se(const std::vector<double>& xs) {
    const auto n = static_cast<double>(xs.size());
    double mean = 0.0;
    for (double x : xs)
        mean += x;
    mean /= n;
    if (xs.size() < 2)
        return {mean, 0.0};
    double ss = 0.0;
    for (double x : xs)
        ss += (x - mean) * (x - mean);
    double sd = std::sqrt(ss / (n - 1.0));
    return {mean, sd / std::sqrt(n)};
}

} // namespace detail

inline Aggregate aggregate_results(const std::vector<SeedResult>& results) {
    Aggregate agg;
    const size_t sessions = results.front().metrics.session_accuracies.size();
    for (size_t t = 0; t < sessions; ++t) {
        std::vector<double> xs;
        for (const auto& r : results)
            xs.push_back(r.metrics.session_accuracies[t]);
        auto [m, se] = detail::mean_se(xs);
        agg.mean_accuracies.push_back(m);
        agg.se_accuracies.push_back(se);
    }
    std::vector<double> avgs, pds;
    for (const auto& r : results) {
        avgs.push_back(r.metrics.avg);
        pds.push_back(r.metrics.pd);
    }
    std::tie(agg.mean_avg, agg.se_avg) = detail::mean_se(avgs);
    std::tie(agg.mean_pd, agg.se_pd) = detail::mean_se(pds);
    return agg;
}

struct RunRecord {
    RunConfig config;
    std::vector<SeedResult> per_seed;
    Aggregate aggregate;
    double wall_seconds = 0.0;
};

inline RunOptions run_options_of(const RunConfig& cfg, uint64_t seed) {
    RunOptions opts;
    opts.ablation = cfg.ablation;
    opts.base_optimizer = cfg.base_optimizer;
    opts.incremental_optimizer = cfg.incremental_optimizer;
    opts.logit_scale = cfg.logit_scale;
    opts.alpha_floor = cfg.alpha_floor;
    opts.caption_template = cfg.caption_template;
    opts.seed = seed;
    return opts;
}

/// Runs every seed of a config against a prepared experiment.
inline RunRecord execute_run(const RunConfig& cfg, const PreparedExperiment& prep) {
    cfg.validate();
    auto start = std::chrono::steady_clock::now();
    RunRecord record;
    record.config = cfg;
    const int max_depth =
        std::min(prep.bundle.language.spec.num_layers, prep.bundle.vision.spec.num_layers);
    for (uint64_t seed : cfg.seeds) {
        SeedResult sr;
        sr.seed = seed;
        if (cfg.ablation == RunAblation::zero_shot) {
            RunOutput out = run_fscil(prep.bundle, nullptr, prep.stream, run_options_of(cfg, seed));
            sr.metrics = out.metrics;
            sr.log = out.log;
        } else {
            GPromptBank bank =
                init_prompts(cfg.prompt_length, cfg.prompt_depth, prep.bundle.language.spec.embed_dim,
                             prep.bundle.vision.spec.embed_dim, max_depth, seed);
            RunOutput out = run_fscil(prep.bundle, &bank, prep.stream, run_options_of(cfg, seed));
            sr.metrics = out.metrics;
            sr.log = out.log;
        }
        record.per_seed.push_back(std::move(sr));
    }
    record.aggregate = aggregate_results(record.per_seed);
    record.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return record;
}

inline nlohmann::json record_to_json(const RunRecord& r) {
    nlohmann::json j;
    j["config"] = config_to_json(r.config);
    j["per_seed"] = nlohmann::json::array();
    for (const auto& s : r.per_seed)
        j["per_seed"].push_back({{"seed", s.seed},
                                 {"accuracies", s.metrics.session_accuracies},
                                 {"avg", s.metrics.avg},
                                 {"pd", s.metrics.pd}});
    j["aggregate"] = {{"mean_accuracies", r.aggregate.mean_accuracies},
                      {"se_accuracies", r.aggregate.se_accuracies},
                      {"mean_avg", r.aggregate.mean_avg},
                      {"se_avg", r.aggregate.se_avg},
                      {"mean_pd", r.aggregate.mean_pd},
                      {"se_pd", r.aggregate.se_pd}};
    j["wall_seconds"] = r.wall_seconds;
    return j;
}

inline RunRecord record_from_json(const nlohmann::json& j) {
    RunRecord r;
    r.config = config_from_json(j.at("config"));
    for (const auto& s : j.at("per_seed")) {
        SeedResult sr;
        sr.seed = s.at("seed").get<uint64_t>();
        sr.metrics.session_accuracies = s.at("accuracies").get<std::vector<double>>();
        sr.metrics.avg = s.at("avg").get<double>();
        sr.metrics.pd = s.at("pd").get<double>();
        r.per_seed.push_back(std::move(sr));
    }
    const auto& a = j.at("aggregate");
    r.aggregate.mean_accuracies = a.at("mean_accuracies").get<std::vector<double>>();
    r.aggregate.se_accuracies = a.at("se_accuracies").get<std::vector<double>>();
    r.aggregate.mean_avg = a.at("mean_avg").get<double>();
    r.aggregate.se_avg = a.at("se_avg").get<double>();
    r.aggregate.mean_pd = a.at("mean_pd").get<double>();
    r.aggregate.se_pd = a.at("se_pd").get<double>();
    r.wall_seconds = j.value("wall_seconds", 0.0);
    return r;
}

/// Aggregate metrics CSV; deterministic bytes for identical configs.
inline std::string record_metrics_csv(const RunRecord& r) {
    SessionMetrics m;
    m.session_accuracies = r.aggregate.mean_accuracies;
    m.avg = r.aggregate.mean_avg;
    m.pd = r.aggregate.mean_pd;
    return metrics_csv(m);
}

inline void persist_record(const RunRecord& r, const std::filesystem::path& dir) {
    atomic_write_file(dir / "record.json", record_to_json(r).dump(2) + "\n");
    atomic_write_file(dir / "metrics.csv", record_metrics_csv(r));
    for (const auto& s : r.per_seed)
        if (!s.log.steps.empty())
            atomic_write_file(dir / ("train_log_seed" + std::to_string(s.seed) + ".jsonl"),
                              s.log.to_jsonl());
}

// ---------------------------------------------------------------------------
// Grid search
// ---------------------------------------------------------------------------

struct GridCell {
    int length = 0;
    int depth = 0;
    double mean_avg = 0.0;
    double se_avg = 0.0;
    bool best = false;
};

struct GridResult {
    std::vector<GridCell> cells;
    int best_length = 0;
    int best_depth = 0;
};

/// Exhaustive L x D sweep. Argmax over mean across-session accuracy; ties
/// break toward smaller D, then smaller L.
inline GridResult run_grid(const RunConfig& base_cfg, const PreparedExperiment& prep) {
    if (base_cfg.grid_lengths.empty() || base_cfg.grid_depths.empty())
        throw ConfigError("run_grid: grid L_list and D_list must be nonempty");
    GridResult grid;
    for (int L : base_cfg.grid_lengths)
        for (int D : base_cfg.grid_depths) {
            RunConfig cfg = base_cfg;
            cfg.prompt_length = L;
            cfg.prompt_depth = D;
            RunRecord rec = execute_run(cfg, prep);
            grid.cells.push_back({L, D, rec.aggregate.mean_avg, rec.aggregate.se_avg, false});
        }
    size_t best = 0;
    for (size_t i = 1; i < grid.cells.size(); ++i) {
        const auto& c = grid.cells[i];
        const auto& b = grid.cells[best];
        if (c.mean_avg > b.mean_avg ||
            (c.mean_avg == b.mean_avg &&
             (c.depth < b.depth || (c.depth == b.depth && c.length < b.length))))
            best = i;
    }
    grid.cells[best].best = true;
    grid.best_length = grid.cells[best].length;
    grid.best_depth = grid.cells[best].depth;
    return grid;
}

inline std::string grid_csv(const GridResult& grid) {
    std::string out = "L,D,mean_avg,se_avg,best\n";
    for (const auto& c : grid.cells)
        out += std::to_string(c.length) + "," + std::to_string(c.depth) + "," +
               format_fixed(c.mean_avg, 2) + "," + format_fixed(c.se_avg, 2) + "," +
               (c.best ? "1" : "0") + "\n";
    return out;
}

inline std::string grid_table(const GridResult& grid) {
    std::string out = "  L \\ D ";
    std::vector<int> depths;
    for (const auto& c : grid.cells)
        if (std::find(depths.begin(), depths.end(), c.depth) == depths.end())
            depths.push_back(c.depth);
    for (int d : depths)
        out += "| " + std::to_string(d) + std::string(12 - std::to_string(d).size(), ' ');
    out += "\n";
    std::vector<int> lengths;
    for (const auto& c : grid.cells)
        if (std::find(lengths.begin(), lengths.end(), c.length) == lengths.end())
            lengths.push_back(c.length);
    for (int l : lengths) {
        std::string row = "  " + std::to_string(l) + std::string(6 - std::to_string(l).size(), ' ');
        for (int d : depths) {
            for (const auto& c : grid.cells)
                if (c.length == l && c.depth == d) {
                    std::string cell = format_fixed(c.mean_avg, 2) + " (" +
                                       format_fixed(c.se_avg, 2) + ")" + (c.best ? "*" : "");
                    row += "| " + cell + std::string(cell.size() < 12 ? 12 - cell.size() : 1, ' ');
                }
        }
        out += row + "\n";
    }
    out += "  * best cell\n";
    return out;
}

// ---------------------------------------------------------------------------
// Ablation suite
// ---------------------------------------------------------------------------

struct AblationResult {
    std::vector<std::pair<RunAblation, RunRecord>> records; // full + three ablations
};

inline AblationResult run_ablation_suite(const RunConfig& base_cfg,
                                         const PreparedExperiment& prep) {
    AblationResult out;
    for (RunAblation a : {RunAblation::full, RunAblation::no_accumulation,
                          RunAblation::no_vision_prompts, RunAblation::no_regularization}) {
        RunConfig cfg = base_cfg;
        cfg.ablation = a;
        out.records.push_back({a, execute_run(cfg, prep)});
    }
    return out;
}

/// One row per variant per session: 4 x (T+1) data rows.
inline std::string ablation_csv(const AblationResult& res) {
    std::string out = "variant,session,t,A_t\n";
    for (const auto& [ablation, rec] : res.records)
        for (size_t t = 0; t < rec.aggregate.mean_accuracies.size(); ++t)
            out += ablation_name(ablation) + ",s" + std::to_string(t) + "," + std::to_string(t) +
                   "," + format_fixed(rec.aggregate.mean_accuracies[t], 2) + "\n";
    return out;
}

// ---------------------------------------------------------------------------
// SVG accuracy curves
// ---------------------------------------------------------------------------

struct CurveSeries {
    std::string label;
    std::vector<double> values; // percent, one per session
};

/// Minimal deterministic line chart (accuracy vs session).
inline std::string render_line_chart_svg(const std::vector<CurveSeries>& series) {
    const int width = 640, height = 420;
    const int left = 60, right = 20, top = 40, bottom = 60;
    const int plot_w = width - left - right, plot_h = height - top - bottom;
    size_t max_points = 1;
    for (const auto& s : series)
        max_points = std::max(max_points, s.values.size());
    const std::vector<std::string> colors = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                             "#ff7f0e", "#8c564b"};
    std::string svg;
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) +
           "\" height=\"" + std::to_string(height) + "\">\n";
    svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    auto xpos = [&](size_t i) {
        return left + (max_points == 1 ? plot_w / 2.0
                                       : plot_w * static_cast<double>(i) /
                                             static_cast<double>(max_points - 1));
    };
    auto ypos = [&](double v) { return top + plot_h * (1.0 - v / 100.0); };
    for (int g = 0; g <= 10; ++g) {
        double y = ypos(g * 10.0);
        svg += "<line x1=\"" + std::to_string(left) + "\" y1=\"" + format_fixed(y, 1) +
               "\" x2=\"" + std::to_string(left + plot_w) + "\" y2=\"" + format_fixed(y, 1) +
               "\" stroke=\"#dddddd\"/>\n";
        svg += "<text x=\"" + std::to_string(left - 8) + "\" y=\"" + format_fixed(y + 4, 1) +
               "\" font-size=\"11\" text-anchor=\"end\">" + std::to_string(g * 10) + "</text>\n";
    }
    for (size_t i = 0; i < max_points; ++i) {
        svg += "<text x=\"" + format_fixed(xpos(i), 1) + "\" y=\"" +
               std::to_string(top + plot_h + 18) +
               "\" font-size=\"11\" text-anchor=\"middle\">" + std::to_string(i) + "</text>\n";
    }
    svg += "<text x=\"" + std::to_string(left + plot_w / 2) + "\" y=\"" +
           std::to_string(height - 16) +
           "\" font-size=\"12\" text-anchor=\"middle\">session</text>\n";
    svg += "<text x=\"16\" y=\"" + std::to_string(top + plot_h / 2) +
           "\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 16 " +
           std::to_string(top + plot_h / 2) + ")\">accuracy (%)</text>\n";
    for (size_t s = 0; s < series.size(); ++s) {
        const std::string& color = colors[s % colors.size()];
        std::string points;
        for (size_t i = 0; i < series[s].values.size(); ++i)
            points += format_fixed(xpos(i), 2) + "," + format_fixed(ypos(series[s].values[i]), 2) +
                      " ";
        svg += "<polyline fill=\"none\" stroke=\"" + color + "\" stroke-width=\"2\" points=\"" +
               points + "\"/>\n";
        svg += "<text x=\"" + std::to_string(left + 10) + "\" y=\"" +
               std::to_string(top - 24 + 14 * static_cast<int>(s) + 20) +
               "\" font-size=\"12\" fill=\"" + color + "\">" + series[s].label + "</text>\n";
    }
    svg += "</svg>\n";
    return svg;
}

inline std::string ablation_plot_svg(const AblationResult& res) {
    std::vector<CurveSeries> series;
    for (const auto& [ablation, rec] : res.records)
        series.push_back({ablation_name(ablation), rec.aggregate.mean_accuracies});
    return render_line_chart_svg(series);
}

// ---------------------------------------------------------------------------
// Comparison report
// ---------------------------------------------------------------------------

struct ReportRow {
    std::string name;
    std::vector<double> accuracies;
    double avg = 0.0;
    double pd = 0.0;
};

inline ReportRow report_row_of(const std::string& name, const RunRecord& rec) {
    ReportRow row;
    row.name = name;
    row.accuracies = rec.aggregate.mean_accuracies;
    row.avg = rec.aggregate.mean_avg;
    row.pd = rec.aggregate.mean_pd;
    return row;
}

/// Sessions-as-columns comparison table; rows with fewer sessions get blanks.
inline std::string report_table(const std::vector<ReportRow>& rows) {
    if (rows.empty())
        throw ConfigError("report_table: need at least one record");
    size_t max_sessions = 0;
    size_t name_w = 6;
    for (const auto& r : rows) {
        max_sessions = std::max(max_sessions, r.accuracies.size());
        name_w = std::max(name_w, r.name.size());
    }
    auto pad = [](std::string s, size_t w) {
        if (s.size() < w)
            s += std::string(w - s.size(), ' ');
        return s;
    };
    std::string out = pad("record", name_w + 2);
    for (size_t t = 0; t < max_sessions; ++t)
        out += pad(std::to_string(t), 8);
    out += pad("Avg", 8) + pad("PD", 8) + "\n";
    for (const auto& r : rows) {
        out += pad(r.name, name_w + 2);
        for (size_t t = 0; t < max_sessions; ++t)
            out += pad(t < r.accuracies.size() ? format_fixed(r.accuracies[t], 2) : "", 8);
        out += pad(format_fixed(r.avg, 2), 8) + pad(format_fixed(r.pd, 2), 8) + "\n";
    }
    return out;
}

inline std::string report_csv(const std::vector<ReportRow>& rows) {
    if (rows.empty())
        throw ConfigError("report_csv: need at least one record");
    size_t max_sessions = 0;
    for (const auto& r : rows)
        max_sessions = std::max(max_sessions, r.accuracies.size());
    std::string out = "record";
    for (size_t t = 0; t < max_sessions; ++t)
        out += ",s" + std::to_string(t);
    out += ",avg,pd\n";
    for (const auto& r : rows) {
        out += r.name;
        for (size_t t = 0; t < max_sessions; ++t)
            out += "," + (t < r.accuracies.size() ? format_fixed(r.accuracies[t], 2) : "");
        out += "," + format_fixed(r.avg, 2) + "," + format_fixed(r.pd, 2) + "\n";
    }
    return out;
}

} // namespace promptcl
