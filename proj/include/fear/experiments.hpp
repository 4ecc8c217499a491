#pragma once

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <set>
#include <thread>

#include <json.hpp>

#include "fear/metrics.hpp"
#include "fear/search.hpp"
#include "fear/zero_cost.hpp"

namespace fear {

using nlohmann::json;

struct DatasetSpec {
    std::string kind = "synthetic";  // synthetic | patterned | file | cifar10
    SyntheticConfig synthetic;
    std::uint64_t seed = 1;
    std::string file;
    std::vector<std::string> cifar_train;
    std::vector<std::string> cifar_test;

    ImageDataset build() const {
        if (kind == "synthetic") return normalize(generate_synthetic(synthetic, seed));
        if (kind == "patterned") return normalize(generate_patterned(synthetic, seed));
        if (kind == "file") return load_dataset(file);  // stats stored in the file
        if (kind == "cifar10") return normalize(load_cifar10_binary(cifar_train, cifar_test));
        throw FormatError("unknown dataset kind: " + kind);
    }
};

struct PoolSpec {
    int size = 32;
    std::uint64_t seed = 1;
    std::vector<int> archs;  // explicit list wins over (size, seed)

    std::vector<ArchId> resolve() const {
        std::vector<ArchId> out;
        if (!archs.empty()) {
            for (int a : archs) out.push_back(ArchId{a});
            return out;
        }
        if (size < 1 || size > kSpaceSize) throw DomainError("pool: bad size");
        Rng rng(stream_seed(seed, "pool-sample", 0));
        std::set<int> seen;
        while (static_cast<int>(out.size()) < size) {
            const int id = static_cast<int>(rng.below(kSpaceSize));
            if (seen.insert(id).second) out.push_back(ArchId{id});
        }
        return out;
    }
};

struct ExperimentConfig {
    std::string out_dir = "out";
    std::string gt_dir;  // ground-truth store location; defaults to out_dir
    int workers = 1;
    std::vector<std::uint64_t> seeds = {1, 2, 3};
    std::uint64_t gt_seed = 1;
    DatasetSpec dataset;
    MacroConfig macro{.stages = 3, .cells_per_stage = 1, .init_channels = 8,
                      .num_classes = 10, .image_hw = 8, .image_channels = 3};
    PoolSpec pool;
    FearConfig fear;  // fear.tau <= 0 means: compute it with the threshold module
    ThresholdConfig threshold;
    std::vector<int> shortreg_epochs = {1, 2, 4, 8};
    std::vector<int> shortreg_batches = {32, 64, 128};
    ScoreMetric shortreg_metric = ScoreMetric::train_accuracy;
    FullTrainConfig full_train;
    int zc_batch = 64;
    int zc_epochs = 1;
    int search_budget = 50;
    int search_shortreg_epochs = 10;
    FastestUpdateMode search_mode = FastestUpdateMode::as_printed;

    std::string gt_directory() const { return gt_dir.empty() ? out_dir : gt_dir; }
};

inline void to_json(json& j, const ExperimentConfig& c) {
    j = json{
        {"out_dir", c.out_dir},
        {"gt_dir", c.gt_directory()},
        {"workers", c.workers},
        {"seeds", c.seeds},
        {"gt_seed", c.gt_seed},
        {"dataset",
         {{"kind", c.dataset.kind},
          {"seed", c.dataset.seed},
          {"file", c.dataset.file},
          {"cifar_train", c.dataset.cifar_train},
          {"cifar_test", c.dataset.cifar_test},
          {"n_total", c.dataset.synthetic.n_total},
          {"n_train", c.dataset.synthetic.n_train},
          {"n_val", c.dataset.synthetic.n_val},
          {"hw", c.dataset.synthetic.hw},
          {"channels", c.dataset.synthetic.channels},
          {"num_classes", c.dataset.synthetic.num_classes},
          {"num_labelers", c.dataset.synthetic.num_labelers},
          {"balance_classes", c.dataset.synthetic.balance_classes}}},
        {"macro",
         {{"stages", c.macro.stages},
          {"cells_per_stage", c.macro.cells_per_stage},
          {"init_channels", c.macro.init_channels},
          {"num_classes", c.macro.num_classes},
          {"image_hw", c.macro.image_hw},
          {"image_channels", c.macro.image_channels}}},
        {"pool", {{"size", c.pool.size}, {"seed", c.pool.seed}, {"archs", c.pool.archs}}},
        {"fear",
         {{"tau", c.fear.tau},
          {"freeze_fraction", c.fear.freeze_fraction},
          {"stage2_epochs", c.fear.stage2_epochs},
          {"stage1_max_epochs", c.fear.stage1_max_epochs},
          {"batch", c.fear.batch},
          {"score_metric", score_metric_name(c.fear.score_metric)},
          {"reject_ratio", c.fear.reject_ratio},
          {"lr_horizon_epochs", c.fear.lr_horizon_epochs}}},
        {"threshold",
         {{"hog_cell", c.threshold.hog.cell},
          {"hog_bins", c.threshold.hog.bins},
          {"hidden1", c.threshold.hidden1},
          {"hidden2", c.threshold.hidden2},
          {"epochs", c.threshold.epochs},
          {"batch", c.threshold.batch},
          {"lr", c.threshold.lr},
          {"seed", c.threshold.seed},
          {"target_metric", score_metric_name(c.threshold.target_metric)}}},
        {"shortreg",
         {{"epochs", c.shortreg_epochs},
          {"batches", c.shortreg_batches},
          {"score_metric", score_metric_name(c.shortreg_metric)}}},
        {"full_train", {{"epochs", c.full_train.epochs}, {"batch", c.full_train.batch}}},
        {"zero_cost", {{"batch", c.zc_batch}, {"epochs", c.zc_epochs}}},
        {"search",
         {{"budget", c.search_budget},
          {"shortreg_epochs", c.search_shortreg_epochs},
          {"fastest_update_mode", fastest_update_mode_name(c.search_mode)}}},
        {"sgd",
         {{"lr_max", c.fear.sgd.lr_max},
          {"lr_min", c.fear.sgd.lr_min},
          {"weight_decay", c.fear.sgd.weight_decay},
          {"momentum", c.fear.sgd.momentum},
          {"nesterov", c.fear.sgd.nesterov}}},
    };
}

namespace detail {

inline void run_jobs(int n, int workers, const std::function<void(int)>& f) {
    if (workers <= 1) {
        for (int i = 0; i < n; ++i) f(i);
        return;
    }
    std::atomic<int> next{0};
    std::mutex err_mu;
    std::exception_ptr err;
    auto worker = [&]() {
        for (int i; (i = next.fetch_add(1)) < n;) {
            try {
                f(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mu);
                if (!err) err = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> threads;
    for (int w = 0; w < workers; ++w) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
    if (err) std::rethrow_exception(err);
}

inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

inline std::ofstream open_out(const std::string& dir, const std::string& name) {
    std::filesystem::create_directories(dir);
    std::ofstream f(dir + "/" + name, std::ios::binary);
    if (!f) throw FormatError("cannot open for write: " + dir + "/" + name);
    return f;
}

// Every CSV opens with the resolved config as a comment line, so runs are
// self-describing.
inline void csv_header(std::ofstream& f, const ExperimentConfig& cfg,
                       const std::string& columns) {
    f << "# config " << json(cfg).dump() << "\n" << columns << "\n";
}

inline json outcome_json(const std::string& method, std::uint64_t seed,
                         const EvalOutcome& o) {
    json j{{"method", method},
           {"seed", seed},
           {"arch", o.arch.id},
           {"arch_str", to_arch_string(decode(o.arch))},
           {"reached_threshold", o.reached_threshold},
           {"rejected_early", o.rejected_early},
           {"failed", o.failed},
           {"epochs_stage1", o.epochs_stage1},
           {"epochs_stage2", o.epochs_stage2},
           {"cost_units", o.cost_units},
           {"stage1_cost_units", o.stage1_cost_units},
           {"wall_ms", o.wall_ms}};
    if (o.score) j["score"] = *o.score;
    return j;
}

}  // namespace detail

// Macro geometry always follows the dataset that was actually built.
inline MacroConfig resolve_macro(const MacroConfig& base, const ImageDataset& ds) {
    MacroConfig m = base;
    m.image_hw = ds.height;
    m.image_channels = ds.channels;
    m.num_classes = ds.num_classes;
    m.validate();
    return m;
}

// Resumable (arch, seed) -> test accuracy store backed by gt.jsonl.
class GroundTruthStore {
public:
    explicit GroundTruthStore(const std::string& dir) : path_(dir + "/gt.jsonl") {
        std::filesystem::create_directories(dir);
        std::ifstream f(path_);
        std::string line;
        while (f && std::getline(f, line)) {
            if (line.empty()) continue;
            const json j = json::parse(line);
            acc_[{j.at("arch").get<int>(), j.at("seed").get<std::uint64_t>()}] =
                j.at("test_accuracy").get<double>();
        }
    }

    std::optional<double> get(ArchId arch, std::uint64_t seed) const {
        auto it = acc_.find({arch.id, seed});
        if (it == acc_.end()) return std::nullopt;
        return it->second;
    }

    void put(ArchId arch, std::uint64_t seed, double accuracy) {
        std::lock_guard<std::mutex> lock(mu_);
        if (acc_.count({arch.id, seed})) return;
        acc_[{arch.id, seed}] = accuracy;
        std::ofstream f(path_, std::ios::app | std::ios::binary);
        f << json{{"arch", arch.id}, {"seed", seed}, {"test_accuracy", accuracy}}.dump()
          << "\n";
    }

    std::size_t size() const { return acc_.size(); }

private:
    std::string path_;
    std::map<std::pair<int, std::uint64_t>, double> acc_;
    std::mutex mu_;
};

// Fills the store for the pool at gt_seed (plus any extra archs); skips
// entries that already exist, so interrupted builds resume.
inline void ensure_ground_truth(const ExperimentConfig& cfg, const ImageDataset& ds,
                                const std::vector<ArchId>& pool, GroundTruthStore& store,
                                std::uint64_t seed) {
    const MacroConfig macro = resolve_macro(cfg.macro, ds);
    std::vector<ArchId> missing;
    for (ArchId a : pool)
        if (!store.get(a, seed)) missing.push_back(a);
    // Each entry persists as soon as it finishes, so an interrupted build
    // leaves a valid partial store.
    detail::run_jobs(static_cast<int>(missing.size()), cfg.workers, [&](int i) {
        const ArchId a = missing[static_cast<std::size_t>(i)];
        store.put(a, seed, ground_truth<float>(a, ds, macro, cfg.full_train, seed));
    });
}

// Resolves tau: explicit config value, or the threshold module's shallow
// learner on this dataset.
inline double resolve_tau(const ExperimentConfig& cfg, const ImageDataset& ds) {
    if (cfg.fear.tau > 0.0) return cfg.fear.tau;
    return compute_threshold<float>(ds, cfg.threshold).tau;
}

struct GroundTruthBuildResult {
    int pool_size = 0;
    int entries = 0;
    double min_accuracy = 0.0;
    double max_accuracy = 0.0;
};

inline GroundTruthBuildResult run_ground_truth_build(const ExperimentConfig& cfg) {
    const ImageDataset ds = cfg.dataset.build();
    const std::vector<ArchId> pool = cfg.pool.resolve();
    GroundTruthStore store(cfg.gt_directory());
    for (std::uint64_t seed : cfg.seeds) ensure_ground_truth(cfg, ds, pool, store, seed);
    ensure_ground_truth(cfg, ds, pool, store, cfg.gt_seed);
    GroundTruthBuildResult r;
    r.pool_size = static_cast<int>(pool.size());
    r.entries = static_cast<int>(store.size());
    double lo = 1.0, hi = 0.0;
    for (ArchId a : pool) {
        const double v = *store.get(a, cfg.gt_seed);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    r.min_accuracy = lo;
    r.max_accuracy = hi;
    auto mf = detail::open_out(cfg.out_dir, "manifest.json");
    mf << json{{"kind", "ground_truth_build"},
               {"config", json(cfg)},
               {"pool_size", r.pool_size},
               {"entries", r.entries},
               {"min_accuracy", r.min_accuracy},
               {"max_accuracy", r.max_accuracy}}
              .dump(2)
       << "\n";
    return r;
}

namespace detail {

// Per-method aligned score vectors for one seed, for metric computation.
struct MethodRun {
    std::string method;
    std::vector<double> scores;
    std::vector<double> costs;
    std::vector<double> wall;
    std::vector<char> ok;  // failed evaluations are excluded from bins
};

inline void append_bin_rows(std::ofstream& csv,
                            const std::map<std::string, std::vector<BinReport>>& reports) {
    for (const auto& [method, rows] : reports) {
        for (const BinReport& r : rows) {
            csv << method << "," << r.bin_percent << ","
                << (r.spearman ? fmt_double(*r.spearman) : std::string()) << ","
                << fmt_double(r.common_ratio) << "," << fmt_double(r.avg_cost_units) << ","
                << fmt_double(r.avg_wall_ms) << "," << r.n_in_bin << "\n";
        }
    }
}

// Mean of per-seed bin reports; spearman averaged over the seeds where it is
// defined.
inline std::vector<BinReport> average_reports(const std::vector<std::vector<BinReport>>& per_seed) {
    std::vector<BinReport> out = per_seed.front();
    for (std::size_t b = 0; b < out.size(); ++b) {
        double sp = 0.0, cr = 0.0, cu = 0.0, wm = 0.0;
        int sp_n = 0;
        for (const auto& rep : per_seed) {
            const BinReport& r = rep[b];
            if (r.spearman) {
                sp += *r.spearman;
                ++sp_n;
            }
            cr += r.common_ratio;
            cu += r.avg_cost_units;
            wm += r.avg_wall_ms;
        }
        const double n = static_cast<double>(per_seed.size());
        out[b].spearman = sp_n > 0 ? std::optional<double>(sp / sp_n) : std::nullopt;
        out[b].common_ratio = cr / n;
        out[b].avg_cost_units = cu / n;
        out[b].avg_wall_ms = wm / n;
    }
    return out;
}

template <typename T>
Tensor<T> proxy_batch(const ImageDataset& ds, int batch) {
    const int count = std::min<int>(batch, static_cast<int>(ds.train_idx.size()));
    Tensor<T> images;
    std::vector<int> labels;
    make_batch(ds, ds.train_idx, 0, count, images, labels);
    return images;
}

template <typename T>
std::vector<int> proxy_labels(const ImageDataset& ds, int batch) {
    const int count = std::min<int>(batch, static_cast<int>(ds.train_idx.size()));
    std::vector<int> labels(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i)
        labels[static_cast<std::size_t>(i)] =
            ds.labels[static_cast<std::size_t>(ds.train_idx[static_cast<std::size_t>(i)])];
    return labels;
}

}  // namespace detail

struct RankCompareResult {
    // method -> averaged-over-seeds bin reports
    std::map<std::string, std::vector<BinReport>> bins;
    // method -> seed -> outcomes aligned with the pool
    std::map<std::string, std::map<std::uint64_t, std::vector<EvalOutcome>>> evals;
    // proxy method -> per-pool scores (first seed's initialization)
    std::map<std::string, std::vector<double>> proxy_scores;
    std::vector<ArchId> pool;
    std::vector<double> gt;
    double tau = 0.0;
};

// Fig. 2 style comparison: FEAR, a shortreg sweep, and all zero-cost proxies
// ranked against the ground-truth store, binned cumulatively.
inline RankCompareResult run_rank_compare(const ExperimentConfig& cfg) {
    const ImageDataset ds = cfg.dataset.build();
    const MacroConfig macro = resolve_macro(cfg.macro, ds);
    const std::vector<ArchId> pool = cfg.pool.resolve();
    const int n = static_cast<int>(pool.size());
    GroundTruthStore store(cfg.gt_directory());
    ensure_ground_truth(cfg, ds, pool, store, cfg.gt_seed);

    RankCompareResult res;
    res.pool = pool;
    res.tau = resolve_tau(cfg, ds);
    FearConfig fear = cfg.fear;
    fear.tau = res.tau;
    std::vector<int> ids;
    for (ArchId a : pool) {
        res.gt.push_back(*store.get(a, cfg.gt_seed));
        ids.push_back(a.id);
    }

    auto evals_file = detail::open_out(cfg.out_dir, "evals.jsonl");
    evals_file << json{{"config", json(cfg)}, {"tau", res.tau}}.dump() << "\n";
    auto proxies_file = detail::open_out(cfg.out_dir, "proxies.jsonl");
    proxies_file << json{{"config", json(cfg)}, {"tau", res.tau}}.dump() << "\n";

    std::map<std::string, std::vector<std::vector<BinReport>>> per_seed_bins;
    std::map<std::string, int> failures;  // per-method failed-eval count across seeds

    for (std::uint64_t seed : cfg.seeds) {
        std::vector<detail::MethodRun> runs;
        // FEAR
        {
            std::vector<EvalOutcome> outs(pool.size());
            detail::run_jobs(n, cfg.workers, [&](int i) {
                outs[static_cast<std::size_t>(i)] = fear_evaluate<float>(
                    pool[static_cast<std::size_t>(i)], ds, macro, fear, seed);
            });
            detail::MethodRun run;
            run.method = "fear";
            for (const EvalOutcome& o : outs) {
                evals_file << detail::outcome_json("fear", seed, o).dump() << "\n";
                run.scores.push_back(o.score.value_or(0.0));
                run.costs.push_back(static_cast<double>(o.cost_units));
                run.wall.push_back(static_cast<double>(o.wall_ms));
                run.ok.push_back(o.score.has_value() && !o.failed);
            }
            res.evals["fear"][seed] = std::move(outs);
            runs.push_back(std::move(run));
        }
        // shortreg sweep
        for (int epochs : cfg.shortreg_epochs)
            for (int batch : cfg.shortreg_batches) {
                ShortregConfig sc;
                sc.epochs = epochs;
                sc.batch = batch;
                sc.lr_horizon_epochs = cfg.full_train.epochs;
                sc.score_metric = cfg.shortreg_metric;
                sc.sgd = cfg.fear.sgd;
                const std::string name =
                    "shortreg_e" + std::to_string(epochs) + "_b" + std::to_string(batch);
                std::vector<EvalOutcome> outs(pool.size());
                detail::run_jobs(n, cfg.workers, [&](int i) {
                    outs[static_cast<std::size_t>(i)] = shortreg_evaluate<float>(
                        pool[static_cast<std::size_t>(i)], ds, macro, sc, seed);
                });
                detail::MethodRun run;
                run.method = name;
                for (const EvalOutcome& o : outs) {
                    evals_file << detail::outcome_json(name, seed, o).dump() << "\n";
                    run.scores.push_back(o.score.value_or(0.0));
                    run.costs.push_back(static_cast<double>(o.cost_units));
                    run.wall.push_back(static_cast<double>(o.wall_ms));
                    run.ok.push_back(o.score.has_value() && !o.failed);
                }
                res.evals[name][seed] = std::move(outs);
                runs.push_back(std::move(run));
            }
        // zero-cost proxies at initialization
        {
            Tensor<float> images = detail::proxy_batch<float>(ds, cfg.zc_batch);
            std::vector<int> labels = detail::proxy_labels<float>(ds, cfg.zc_batch);
            std::map<std::string, std::vector<double>> scores;
            std::vector<ProxyScores> vote_in(pool.size());
            for (ProxyKind k : all_proxies())
                scores[proxy_name(k)] = std::vector<double>(pool.size(), 0.0);
            detail::run_jobs(n, cfg.workers, [&](int i) {
                Network<float> net =
                    build_network<float>(pool[static_cast<std::size_t>(i)], macro, seed);
                for (ProxyKind k : all_proxies()) {
                    const double s = k == ProxyKind::jacob_cov
                                         ? jacob_cov_score(net, images)
                                         : saliency_score(k, net, images, labels);
                    scores[proxy_name(k)][static_cast<std::size_t>(i)] = s;
                }
                vote_in[static_cast<std::size_t>(i)] = ProxyScores{
                    scores["synflow"][static_cast<std::size_t>(i)],
                    scores["jacob_cov"][static_cast<std::size_t>(i)],
                    scores["snip"][static_cast<std::size_t>(i)]};
            });
            // vote: Copeland wins as the score
            const std::vector<int> order = vote_ranking(vote_in, ids);
            std::vector<double> vote_scores(pool.size(), 0.0);
            for (std::size_t r = 0; r < order.size(); ++r)
                vote_scores[static_cast<std::size_t>(order[r])] =
                    static_cast<double>(order.size() - r);
            scores["vote"] = vote_scores;
            const std::int64_t proxy_cost =
                3 * build_network<float>(pool[0], macro, seed).forward_macs_per_sample() *
                images.dim(0);
            for (const auto& [name, vals] : scores) {
                for (std::size_t i = 0; i < pool.size(); ++i)
                    proxies_file << json{{"method", name},
                                         {"seed", seed},
                                         {"arch", pool[i].id},
                                         {"score", vals[i]}}
                                        .dump()
                                 << "\n";
                detail::MethodRun run;
                run.method = name;
                run.scores = vals;
                run.costs.assign(pool.size(), static_cast<double>(proxy_cost));
                run.wall.assign(pool.size(), 0.0);
                run.ok.assign(pool.size(), 1);
                runs.push_back(std::move(run));
                if (seed == cfg.seeds.front()) res.proxy_scores[name] = vals;
            }
        }
        for (const detail::MethodRun& run : runs) {
            std::vector<double> g, s, c, w;
            std::vector<int> id;
            for (std::size_t i = 0; i < run.scores.size(); ++i) {
                if (!run.ok[i]) continue;
                g.push_back(res.gt[i]);
                s.push_back(run.scores[i]);
                c.push_back(run.costs[i]);
                w.push_back(run.wall[i]);
                id.push_back(ids[i]);
            }
            failures[run.method] += static_cast<int>(run.scores.size() - g.size());
            if (g.size() >= 2)
                per_seed_bins[run.method].push_back(bin_report(run.method, g, s, id, c, w));
        }
    }

    auto csv = detail::open_out(cfg.out_dir, "bins.csv");
    detail::csv_header(csv, cfg,
                       "method,bin_percent,spearman,common_ratio,avg_cost_units,avg_wall_ms,n");
    for (auto& [method, reps] : per_seed_bins)
        if (!reps.empty()) res.bins[method] = detail::average_reports(reps);
    detail::append_bin_rows(csv, res.bins);

    auto mf = detail::open_out(cfg.out_dir, "manifest.json");
    mf << json{{"kind", "rank_compare"},
               {"config", json(cfg)},
               {"tau", res.tau},
               {"failures", failures}}
              .dump(2)
       << "\n";
    return res;
}

struct TimeToThresholdRow {
    std::uint64_t seed = 0;
    ArchId arch{};
    int epochs_to_tau = 0;
    bool reached = false;
    std::int64_t cost_units = 0;
    double gt_accuracy = 0.0;
};

struct TimeToThresholdResult {
    std::vector<TimeToThresholdRow> rows;
    // per-seed Spearman(epochs_to_tau, gt_accuracy)
    std::map<std::uint64_t, std::optional<double>> spearman_by_seed;
    double tau = 0.0;
};

// Fig. 3 analog: epochs and cost to reach tau versus ground-truth accuracy.
inline TimeToThresholdResult run_time_to_threshold(const ExperimentConfig& cfg) {
    const ImageDataset ds = cfg.dataset.build();
    const MacroConfig macro = resolve_macro(cfg.macro, ds);
    const std::vector<ArchId> pool = cfg.pool.resolve();
    const int n = static_cast<int>(pool.size());
    GroundTruthStore store(cfg.gt_directory());
    ensure_ground_truth(cfg, ds, pool, store, cfg.gt_seed);

    TimeToThresholdResult res;
    res.tau = resolve_tau(cfg, ds);
    FearConfig fear = cfg.fear;
    fear.tau = res.tau;

    auto csv = detail::open_out(cfg.out_dir, "scatter.csv");
    detail::csv_header(csv, cfg, "seed,arch,epochs_to_tau,reached,cost_units,gt_accuracy");
    for (std::uint64_t seed : cfg.seeds) {
        std::vector<EvalOutcome> outs(pool.size());
        detail::run_jobs(n, cfg.workers, [&](int i) {
            const ArchId a = pool[static_cast<std::size_t>(i)];
            Network<float> net = build_network<float>(a, macro, seed);
            Rng shuffle_rng(stream_seed(seed, "train-shuffle", static_cast<std::uint64_t>(a.id)));
            std::int64_t step = 0;
            EvalOutcome o =
                train_to_threshold(net, ds, fear.tau, std::nullopt, fear, shuffle_rng, step);
            o.arch = a;
            outs[static_cast<std::size_t>(i)] = std::move(o);
        });
        std::vector<double> epochs, gt;
        for (const EvalOutcome& o : outs) {
            TimeToThresholdRow row;
            row.seed = seed;
            row.arch = o.arch;
            row.epochs_to_tau = o.epochs_stage1;
            row.reached = o.reached_threshold;
            row.cost_units = o.cost_units;
            row.gt_accuracy = *store.get(o.arch, cfg.gt_seed);
            csv << seed << "," << o.arch.id << "," << row.epochs_to_tau << ","
                << (row.reached ? 1 : 0) << "," << row.cost_units << ","
                << detail::fmt_double(row.gt_accuracy) << "\n";
            epochs.push_back(static_cast<double>(row.epochs_to_tau));
            gt.push_back(row.gt_accuracy);
            res.rows.push_back(std::move(row));
        }
        res.spearman_by_seed[seed] = spearman(epochs, gt);
    }
    auto mf = detail::open_out(cfg.out_dir, "manifest.json");
    json sp = json::object();
    for (auto& [seed, v] : res.spearman_by_seed)
        sp[std::to_string(seed)] = v ? json(*v) : json();
    mf << json{{"kind", "time_to_threshold"},
               {"config", json(cfg)},
               {"tau", res.tau},
               {"spearman_by_seed", sp}}
              .dump(2)
       << "\n";
    return res;
}

struct ZcOverEpochsResult {
    // proxy -> epoch -> spearman vs ground truth (nullopt when degenerate)
    std::map<std::string, std::vector<std::optional<double>>> spearman_by_epoch;
};

// Section 4.4 analog: proxy rankings recomputed from checkpoints after each
// training epoch. Uses the first seed.
inline ZcOverEpochsResult run_zero_cost_over_epochs(const ExperimentConfig& cfg) {
    const ImageDataset ds = cfg.dataset.build();
    const MacroConfig macro = resolve_macro(cfg.macro, ds);
    const std::vector<ArchId> pool = cfg.pool.resolve();
    const int n = static_cast<int>(pool.size());
    GroundTruthStore store(cfg.gt_directory());
    ensure_ground_truth(cfg, ds, pool, store, cfg.gt_seed);
    const std::uint64_t seed = cfg.seeds.front();

    std::vector<double> gt;
    std::vector<int> ids;
    for (ArchId a : pool) {
        gt.push_back(*store.get(a, cfg.gt_seed));
        ids.push_back(a.id);
    }

    Tensor<float> images = detail::proxy_batch<float>(ds, cfg.zc_batch);
    std::vector<int> labels = detail::proxy_labels<float>(ds, cfg.zc_batch);

    // scores[arch][epoch][proxy]
    std::vector<std::vector<std::map<std::string, double>>> scores(
        pool.size(),
        std::vector<std::map<std::string, double>>(static_cast<std::size_t>(cfg.zc_epochs + 1)));
    detail::run_jobs(n, cfg.workers, [&](int i) {
        const ArchId a = pool[static_cast<std::size_t>(i)];
        Network<float> net = build_network<float>(a, macro, seed);
        Rng shuffle_rng(stream_seed(seed, "train-shuffle", static_cast<std::uint64_t>(a.id)));
        std::vector<int> order = ds.train_idx;
        const int spe = static_cast<int>(order.size()) / cfg.fear.batch;
        SgdConfig sched = cfg.fear.sgd;
        sched.total_steps = std::max<std::int64_t>(
            1, static_cast<std::int64_t>(cfg.fear.lr_horizon_epochs) * spe);
        auto lr_fn = [&](std::int64_t s) {
            return cosine_lr(std::min(s, sched.total_steps), sched);
        };
        std::int64_t step = 0, cost = 0;
        for (int e = 0; e <= cfg.zc_epochs; ++e) {
            if (e > 0)
                detail::train_one_epoch(net, ds, cfg.fear.batch, shuffle_rng, order, lr_fn, step,
                                        cost, cfg.fear.sgd);
            for (ProxyKind k : all_proxies())
                scores[static_cast<std::size_t>(i)][static_cast<std::size_t>(e)][proxy_name(k)] =
                    k == ProxyKind::jacob_cov ? jacob_cov_score(net, images)
                                              : saliency_score(k, net, images, labels);
        }
    });

    ZcOverEpochsResult res;
    auto csv = detail::open_out(cfg.out_dir, "zc_epochs.csv");
    detail::csv_header(csv, cfg, "proxy,epoch,spearman");
    for (ProxyKind k : all_proxies()) {
        const std::string name = proxy_name(k);
        auto& col = res.spearman_by_epoch[name];
        for (int e = 0; e <= cfg.zc_epochs; ++e) {
            std::vector<double> vals;
            for (std::size_t i = 0; i < pool.size(); ++i)
                vals.push_back(scores[i][static_cast<std::size_t>(e)].at(name));
            const std::optional<double> sp = spearman(vals, gt);
            col.push_back(sp);
            csv << name << "," << e << "," << (sp ? detail::fmt_double(*sp) : std::string())
                << "\n";
        }
    }
    auto mf = detail::open_out(cfg.out_dir, "manifest.json");
    mf << json{{"kind", "zero_cost_over_epochs"}, {"config", json(cfg)}}.dump(2) << "\n";
    return res;
}

struct SyntheticZcRow {
    std::string method;
    std::optional<double> spearman;
    double avg_cost_units = 0.0;
};

struct SyntheticZcResult {
    std::vector<SyntheticZcRow> rows;
    double tau = 0.0;
};

// Table 4 analog: all proxies plus FEAR on the synthetic dataset.
inline SyntheticZcResult run_synthetic_zero_cost(const ExperimentConfig& cfg) {
    ExperimentConfig rc = cfg;
    rc.shortreg_epochs.clear();  // proxies + FEAR only
    RankCompareResult base = run_rank_compare(rc);

    SyntheticZcResult res;
    res.tau = base.tau;
    auto csv = detail::open_out(cfg.out_dir, "table.csv");
    detail::csv_header(csv, cfg, "method,spearman,avg_cost_units");
    for (const auto& [method, bins] : base.bins) {
        const BinReport& whole = bins.back();  // 100% bin
        SyntheticZcRow row{method, whole.spearman, whole.avg_cost_units};
        csv << method << "," << (whole.spearman ? detail::fmt_double(*whole.spearman) : std::string())
            << "," << detail::fmt_double(whole.avg_cost_units) << "\n";
        res.rows.push_back(std::move(row));
    }
    return res;
}

struct SearchCompareSummary {
    double fear_mean_best_gt = 0.0;
    double shortreg_mean_best_gt = 0.0;
    double fear_mean_cost = 0.0;
    double shortreg_mean_cost = 0.0;
    double cost_ratio = 0.0;  // shortreg / fear
    std::vector<SearchResult> fear_runs;
    std::vector<SearchResult> shortreg_runs;
    double tau = 0.0;
};

// Table 2 analog: RS-FEAR vs RS-shortreg on identical sampling streams.
inline SearchCompareSummary run_random_search_compare(const ExperimentConfig& cfg) {
    const ImageDataset ds = cfg.dataset.build();
    const MacroConfig macro = resolve_macro(cfg.macro, ds);
    GroundTruthStore store(cfg.gt_directory());
    SearchCompareSummary res;
    res.tau = resolve_tau(cfg, ds);

    auto trace_file = detail::open_out(cfg.out_dir, "trace.jsonl");
    trace_file << json{{"config", json(cfg)}, {"tau", res.tau}}.dump() << "\n";
    auto csv = detail::open_out(cfg.out_dir, "search.csv");
    detail::csv_header(csv, cfg,
                       "method,seed,best_arch,best_score,best_gt_accuracy,total_cost_units");

    for (std::uint64_t seed : cfg.seeds) {
        SearchConfig sc;
        sc.budget = cfg.search_budget;
        sc.seed = seed;
        sc.fastest_update_mode = cfg.search_mode;
        sc.fear = cfg.fear;
        sc.fear.tau = res.tau;
        sc.shortreg.epochs = cfg.search_shortreg_epochs;
        sc.shortreg.batch = cfg.fear.batch;
        sc.shortreg.lr_horizon_epochs = cfg.full_train.epochs;
        sc.shortreg.score_metric = cfg.shortreg_metric;
        sc.shortreg.sgd = cfg.fear.sgd;

        SearchResult fr = random_search_fear<float>(ds, macro, sc);
        SearchResult sr = random_search_shortreg<float>(ds, macro, sc);
        for (const auto* run : {&fr, &sr}) {
            const bool is_fear = run == &fr;
            for (const TraceRecord& t : run->trace) {
                json j = detail::outcome_json(is_fear ? "rs_fear" : "rs_shortreg", seed, t.outcome);
                j["index"] = t.index;
                j["best_so_far"] = t.best_so_far;
                j["best_arch"] = t.best_arch;
                j["fastest_so_far"] = t.fastest_so_far;
                j["cumulative_cost"] = t.cumulative_cost;
                trace_file << j.dump() << "\n";
            }
        }
        for (const auto* run : {&fr, &sr}) {
            if (!store.get(run->best, cfg.gt_seed)) {
                const double acc =
                    ground_truth<float>(run->best, ds, macro, cfg.full_train, cfg.gt_seed);
                store.put(run->best, cfg.gt_seed, acc);
            }
        }
        const double fgt = *store.get(fr.best, cfg.gt_seed);
        const double sgt = *store.get(sr.best, cfg.gt_seed);
        csv << "rs_fear," << seed << "," << fr.best.id << "," << detail::fmt_double(fr.best_score)
            << "," << detail::fmt_double(fgt) << "," << fr.total_cost_units << "\n";
        csv << "rs_shortreg," << seed << "," << sr.best.id << ","
            << detail::fmt_double(sr.best_score) << "," << detail::fmt_double(sgt) << ","
            << sr.total_cost_units << "\n";
        res.fear_mean_best_gt += fgt;
        res.shortreg_mean_best_gt += sgt;
        res.fear_mean_cost += static_cast<double>(fr.total_cost_units);
        res.shortreg_mean_cost += static_cast<double>(sr.total_cost_units);
        res.fear_runs.push_back(std::move(fr));
        res.shortreg_runs.push_back(std::move(sr));
    }
    const double k = static_cast<double>(cfg.seeds.size());
    res.fear_mean_best_gt /= k;
    res.shortreg_mean_best_gt /= k;
    res.fear_mean_cost /= k;
    res.shortreg_mean_cost /= k;
    res.cost_ratio = res.shortreg_mean_cost / res.fear_mean_cost;

    auto mf = detail::open_out(cfg.out_dir, "manifest.json");
    mf << json{{"kind", "random_search_compare"},
               {"config", json(cfg)},
               {"tau", res.tau},
               {"fear_mean_best_gt", res.fear_mean_best_gt},
               {"shortreg_mean_best_gt", res.shortreg_mean_best_gt},
               {"fear_mean_cost", res.fear_mean_cost},
               {"shortreg_mean_cost", res.shortreg_mean_cost},
               {"cost_ratio", res.cost_ratio}}
              .dump(2)
       << "\n";
    return res;
}

// Consolidates a rank-compare bins.csv into pareto-frontier plot data
// (avg cost vs whole-population spearman per method).
inline void run_plot_data(const std::string& bins_csv_path, const std::string& out_dir) {
    std::ifstream f(bins_csv_path);
    if (!f) throw FormatError("cannot open: " + bins_csv_path);
    std::string line;
    std::vector<std::tuple<std::string, double, double>> pts;  // method, cost, spearman
    while (std::getline(f, line)) {
        if (line.empty() || line[0] == '#' || line.rfind("method,", 0) == 0) continue;
        std::vector<std::string> cells;
        std::size_t pos = 0;
        while (true) {
            const std::size_t c = line.find(',', pos);
            cells.push_back(line.substr(pos, c - pos));
            if (c == std::string::npos) break;
            pos = c + 1;
        }
        if (cells.size() != 7 || cells[1] != "100" || cells[2].empty()) continue;
        pts.emplace_back(cells[0], std::stod(cells[4]), std::stod(cells[2]));
    }
    std::vector<ParetoPoint> points;
    for (auto& [m, c, s] : pts) points.push_back({c, s});
    const std::vector<ParetoPoint> frontier = pareto_frontier(points);
    auto csv = detail::open_out(out_dir, "pareto.csv");
    csv << "method,avg_cost_units,spearman,on_frontier\n";
    for (std::size_t i = 0; i < pts.size(); ++i) {
        const bool on = std::find(frontier.begin(), frontier.end(), points[i]) != frontier.end();
        csv << std::get<0>(pts[i]) << "," << detail::fmt_double(std::get<1>(pts[i])) << ","
            << detail::fmt_double(std::get<2>(pts[i])) << "," << (on ? 1 : 0) << "\n";
    }
}

}  // namespace fear
