#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>

#include "fear/experiments.hpp"

using namespace fear;
namespace fs = std::filesystem;

namespace {

std::string temp_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / name;
    fs::remove_all(p);
    return p.string();
}

ExperimentConfig tiny_config(const std::string& out) {
    ExperimentConfig c;
    c.out_dir = out;
    c.seeds = {1};
    c.gt_seed = 1;
    c.dataset.synthetic.n_total = 400;
    c.dataset.synthetic.n_train = 240;
    c.dataset.synthetic.n_val = 80;
    c.dataset.synthetic.hw = 8;
    c.dataset.seed = 5;
    c.pool.archs = {777, 4242, 9876, 5555};
    c.fear.tau = 0.3;
    c.fear.stage2_epochs = 1;
    c.fear.stage1_max_epochs = 20;
    c.fear.batch = 32;
    c.fear.lr_horizon_epochs = 12;
    c.shortreg_epochs = {1};
    c.shortreg_batches = {32};
    c.full_train.epochs = 3;
    c.full_train.batch = 32;
    c.zc_batch = 16;
    c.zc_epochs = 1;
    c.search_budget = 3;
    c.search_shortreg_epochs = 1;
    return c;
}

std::string read_file(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    REQUIRE(f.good());
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

// Strip everything that is allowed to vary between identical runs: wall-time
// measurements and the output directory embedded in the config echoes.
std::string canonical(const fs::path& p, const std::string& dir_token) {
    std::string text = read_file(p);
    std::size_t pos;
    while ((pos = text.find(dir_token)) != std::string::npos)
        text.replace(pos, dir_token.size(), "DIR");
    text = std::regex_replace(text, std::regex("\"wall_ms\":[0-9]+"), "\"wall_ms\":0");
    if (p.extension() != ".csv") return text;
    // zero out csv columns whose header name mentions wall
    std::istringstream in(text);
    std::ostringstream out;
    std::string line;
    std::vector<std::size_t> wall_cols;
    bool have_header = false;
    while (std::getline(in, line)) {
        if (!line.empty() && line[0] != '#') {
            std::vector<std::string> cells;
            std::size_t start = 0;
            while (true) {
                const std::size_t c = line.find(',', start);
                cells.push_back(line.substr(start, c - start));
                if (c == std::string::npos) break;
                start = c + 1;
            }
            if (!have_header) {
                have_header = true;
                for (std::size_t i = 0; i < cells.size(); ++i)
                    if (cells[i].find("wall") != std::string::npos) wall_cols.push_back(i);
            } else {
                for (std::size_t i : wall_cols)
                    if (i < cells.size()) cells[i] = "0";
                line.clear();
                for (std::size_t i = 0; i < cells.size(); ++i)
                    line += (i ? "," : "") + cells[i];
            }
        }
        out << line << "\n";
    }
    return out.str();
}

int count_lines(const fs::path& p) {
    std::ifstream f(p);
    int n = 0;
    std::string line;
    while (std::getline(f, line))
        if (!line.empty()) ++n;
    return n;
}

}  // namespace

TEST_CASE("pool resolution is deterministic, distinct, and honors explicit lists") {
    PoolSpec a;
    a.size = 16;
    a.seed = 3;
    const std::vector<ArchId> p1 = a.resolve();
    const std::vector<ArchId> p2 = a.resolve();
    REQUIRE(p1.size() == 16);
    std::set<int> ids;
    for (std::size_t i = 0; i < p1.size(); ++i) {
        CHECK(p1[i].id == p2[i].id);
        ids.insert(p1[i].id);
    }
    CHECK(ids.size() == 16);

    PoolSpec b;
    b.archs = {5, 7};
    b.size = 100;  // ignored
    const std::vector<ArchId> pb = b.resolve();
    REQUIRE(pb.size() == 2);
    CHECK(pb[0].id == 5);
    CHECK(pb[1].id == 7);

    PoolSpec bad;
    bad.size = 0;
    CHECK_THROWS_AS(bad.resolve(), DomainError);
}

TEST_CASE("dataset specs build every kind and reject unknown kinds") {
    DatasetSpec s;
    s.synthetic.n_total = 400;
    s.synthetic.n_train = 240;
    s.synthetic.n_val = 80;
    s.synthetic.hw = 8;
    s.seed = 5;
    const ImageDataset syn = s.build();
    CHECK(syn.n == 400);
    s.kind = "patterned";
    const ImageDataset pat = s.build();
    CHECK(pat.n == 400);
    CHECK(pat.pixels != syn.pixels);

    const std::string dir = temp_dir("fear_exp_ds");
    fs::create_directories(dir);
    save_dataset(syn, dir + "/d.bin");
    DatasetSpec f;
    f.kind = "file";
    f.file = dir + "/d.bin";
    const ImageDataset back = f.build();
    CHECK(back.pixels == syn.pixels);

    DatasetSpec bad;
    bad.kind = "bogus";
    CHECK_THROWS_AS(bad.build(), FormatError);
    fs::remove_all(dir);
}

TEST_CASE("the ground-truth store resumes from disk and never retrains") {
    const std::string dir = temp_dir("fear_exp_gt");
    ExperimentConfig cfg = tiny_config(dir);
    const ImageDataset ds = cfg.dataset.build();
    const std::vector<ArchId> pool = cfg.pool.resolve();
    {
        GroundTruthStore store(dir);
        ensure_ground_truth(cfg, ds, pool, store, 1);
        CHECK(store.size() == pool.size());
    }
    const std::string bytes_after_first = read_file(fs::path(dir) / "gt.jsonl");
    CHECK(count_lines(fs::path(dir) / "gt.jsonl") == static_cast<int>(pool.size()));

    {
        // a fresh store reloads the file; re-ensuring appends nothing
        GroundTruthStore store(dir);
        CHECK(store.size() == pool.size());
        ensure_ground_truth(cfg, ds, pool, store, 1);
        CHECK(read_file(fs::path(dir) / "gt.jsonl") == bytes_after_first);

        // a superset pool only appends the genuinely new arch
        std::vector<ArchId> bigger = pool;
        bigger.push_back(ArchId{123});
        ensure_ground_truth(cfg, ds, bigger, store, 1);
        const std::string now = read_file(fs::path(dir) / "gt.jsonl");
        CHECK(now.rfind(bytes_after_first, 0) == 0);  // append-only
        CHECK(count_lines(fs::path(dir) / "gt.jsonl") == static_cast<int>(pool.size()) + 1);

        // another seed adds one row per arch, values stay deterministic
        const double before = *store.get(pool[0], 1);
        ensure_ground_truth(cfg, ds, pool, store, 2);
        CHECK(*store.get(pool[0], 1) == before);
        CHECK(store.get(pool[0], 2).has_value());
    }
    fs::remove_all(dir);
}

TEST_CASE("rank-compare runs are byte-identical apart from wall time") {
    const std::string dir_a = temp_dir("fear_exp_a");
    const std::string dir_b = temp_dir("fear_exp_b");
    const RankCompareResult ra = run_rank_compare(tiny_config(dir_a));
    const RankCompareResult rb = run_rank_compare(tiny_config(dir_b));

    for (const char* name : {"evals.jsonl", "proxies.jsonl", "bins.csv", "manifest.json",
                             "gt.jsonl"}) {
        const std::string a = canonical(fs::path(dir_a) / name, dir_a);
        const std::string b = canonical(fs::path(dir_b) / name, dir_b);
        CHECK_MESSAGE(a == b, name);
    }

    // structural checks on the result itself
    CHECK(ra.tau == doctest::Approx(0.3));
    CHECK(ra.gt == rb.gt);
    REQUIRE(ra.bins.count("fear") == 1);
    REQUIRE(ra.bins.count("shortreg_e1_b32") == 1);
    for (const char* proxy :
         {"synflow", "synflow_bn", "grad_norm", "snip", "fisher", "grasp", "jacob_cov", "vote"})
        CHECK(ra.bins.count(proxy) == 1);
    for (const auto& [method, rows] : ra.bins) {
        REQUIRE(rows.size() == bin_percents().size());
        CHECK(rows.back().n_in_bin == 4);
        CHECK(rows.back().avg_cost_units > 0.0);
    }
    // proxies cost far less than fear
    CHECK(ra.bins.at("synflow").back().avg_cost_units <
          0.01 * ra.bins.at("fear").back().avg_cost_units);

    // plot data from the produced bins
    run_plot_data(dir_a + "/bins.csv", dir_a);
    std::ifstream pf(dir_a + "/pareto.csv");
    REQUIRE(pf.good());
    std::string line;
    std::getline(pf, line);
    CHECK(line == "method,avg_cost_units,spearman,on_frontier");
    int rows = 0, on = 0;
    while (std::getline(pf, line)) {
        if (line.empty()) continue;
        ++rows;
        const char flag = line.back();
        CHECK((flag == '0' || flag == '1'));
        if (flag == '1') ++on;
    }
    // one row per method whose whole-population spearman is defined
    int defined = 0;
    for (const auto& [method, bins] : ra.bins)
        if (bins.back().spearman) ++defined;
    CHECK(rows == defined);
    CHECK(on >= 1);

    fs::remove_all(dir_a);
    fs::remove_all(dir_b);
}

TEST_CASE("time-to-threshold emits one row per arch and seed") {
    const std::string dir = temp_dir("fear_exp_ttt");
    ExperimentConfig cfg = tiny_config(dir);
    cfg.seeds = {1, 2};
    const TimeToThresholdResult r = run_time_to_threshold(cfg);
    CHECK(r.rows.size() == 8);  // 4 archs x 2 seeds
    for (const TimeToThresholdRow& row : r.rows) {
        CHECK(row.epochs_to_tau >= 1);
        CHECK(row.cost_units > 0);
        CHECK(row.gt_accuracy >= 0.0);
        CHECK(row.gt_accuracy <= 1.0);
    }
    CHECK(r.spearman_by_seed.size() == 2);
    CHECK(count_lines(fs::path(dir) / "scatter.csv") == 2 + 8);  // config + header + rows
    CHECK(fs::exists(fs::path(dir) / "manifest.json"));
    fs::remove_all(dir);
}

TEST_CASE("zero-cost-over-epochs tracks every proxy per checkpoint") {
    const std::string dir = temp_dir("fear_exp_zc");
    ExperimentConfig cfg = tiny_config(dir);
    const ZcOverEpochsResult r = run_zero_cost_over_epochs(cfg);
    CHECK(r.spearman_by_epoch.size() == all_proxies().size());
    for (const auto& [proxy, col] : r.spearman_by_epoch)
        CHECK(col.size() == static_cast<std::size_t>(cfg.zc_epochs + 1));
    CHECK(fs::exists(fs::path(dir) / "zc_epochs.csv"));
    fs::remove_all(dir);
}

TEST_CASE("synthetic zero-cost table covers fear and the proxies, no shortreg") {
    const std::string dir = temp_dir("fear_exp_table");
    const SyntheticZcResult r = run_synthetic_zero_cost(tiny_config(dir));
    std::set<std::string> methods;
    for (const SyntheticZcRow& row : r.rows) methods.insert(row.method);
    CHECK(methods.count("fear") == 1);
    CHECK(methods.count("synflow") == 1);
    for (const std::string& m : methods) CHECK(m.rfind("shortreg", 0) != 0);
    CHECK(fs::exists(fs::path(dir) / "table.csv"));
    fs::remove_all(dir);
}

TEST_CASE("random-search compare produces traces, winners, and a cost ratio") {
    const std::string dir = temp_dir("fear_exp_rs");
    ExperimentConfig cfg = tiny_config(dir);
    const SearchCompareSummary r = run_random_search_compare(cfg);
    REQUIRE(r.fear_runs.size() == 1);
    REQUIRE(r.shortreg_runs.size() == 1);
    CHECK(r.fear_runs[0].trace.size() == 3);
    CHECK(r.fear_mean_cost > 0.0);
    CHECK(r.cost_ratio > 0.0);
    CHECK(r.fear_mean_best_gt >= 0.0);
    // identical sampling streams
    for (std::size_t i = 0; i < 3; ++i)
        CHECK(r.fear_runs[0].trace[i].outcome.arch.id ==
              r.shortreg_runs[0].trace[i].outcome.arch.id);
    // config line + 3 records per method
    CHECK(count_lines(fs::path(dir) / "trace.jsonl") == 1 + 6);
    CHECK(count_lines(fs::path(dir) / "search.csv") == 2 + 2);
    fs::remove_all(dir);
}

TEST_CASE("the config serialization is complete and gt_dir defaults to out_dir") {
    ExperimentConfig cfg = tiny_config("somewhere");
    CHECK(cfg.gt_directory() == "somewhere");
    cfg.gt_dir = "elsewhere";
    CHECK(cfg.gt_directory() == "elsewhere");
    const json j(cfg);
    for (const char* key : {"out_dir", "gt_dir", "workers", "seeds", "gt_seed", "dataset",
                            "macro", "pool", "fear", "threshold", "shortreg", "full_train",
                            "zero_cost", "search", "sgd"})
        CHECK_MESSAGE(j.contains(key), key);
    CHECK(j["fear"]["tau"] == 0.3);
    CHECK(j["pool"]["archs"].size() == 4);
}
