// fearbench: desk-scale experiment runner. Verbs map one-to-one onto the
// experiment kinds; all options can come from a TOML config file (--config).
#include <iostream>

#include <CLI11.hpp>

#include "fear/experiments.hpp"

namespace {

using fear::json;

int fail(const std::string& type, const std::string& message) {
    std::cerr << json{{"error", {{"type", type}, {"message", message}}}}.dump() << "\n";
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"FEAR evaluation workbench"};
    app.set_config("--config", "", "TOML config file");
    app.require_subcommand(1);
    app.fallthrough();

    fear::ExperimentConfig cfg;
    std::uint64_t base_seed = 1;
    std::string score_metric = "train_accuracy";
    std::string shortreg_metric = "train_accuracy";
    std::string threshold_metric = "train_accuracy";
    std::string fastest_mode = "as_printed";
    std::string bins_path;  // plot-data input

    app.add_option("--out", cfg.out_dir, "output directory");
    auto* seed_opt = app.add_option("--seed", base_seed, "base seed for all streams");
    app.add_option("--workers", cfg.workers, "worker pool size");

    auto* seeds_opt = app.add_option("--seeds", cfg.seeds, "method seeds");
    auto* gt_seed_opt = app.add_option("--gt-seed", cfg.gt_seed, "ground-truth training seed");
    app.add_option("--gt-dir", cfg.gt_dir, "ground-truth store directory (default: --out)");

    app.add_option("--dataset-kind", cfg.dataset.kind,
                   "synthetic | patterned | file | cifar10");
    auto* ds_seed_opt = app.add_option("--dataset-seed", cfg.dataset.seed, "dataset seed");
    app.add_option("--dataset-file", cfg.dataset.file, "saved dataset path (kind=file)");
    app.add_option("--cifar-train", cfg.dataset.cifar_train, "CIFAR-10 train batch files");
    app.add_option("--cifar-test", cfg.dataset.cifar_test, "CIFAR-10 test batch files");
    app.add_option("--n-total", cfg.dataset.synthetic.n_total, "synthetic: total examples");
    app.add_option("--n-train", cfg.dataset.synthetic.n_train, "synthetic: train split size");
    app.add_option("--n-val", cfg.dataset.synthetic.n_val, "synthetic: val split size");
    app.add_option("--hw", cfg.dataset.synthetic.hw, "image height=width");
    app.add_option("--channels", cfg.dataset.synthetic.channels, "image channels");
    app.add_option("--num-classes", cfg.dataset.synthetic.num_classes, "label classes");
    app.add_option("--num-labelers", cfg.dataset.synthetic.num_labelers,
                   "synthetic: random labeler networks");
    app.add_option("--balance", cfg.dataset.synthetic.balance_classes,
                   "synthetic: balance class counts");

    app.add_option("--stages", cfg.macro.stages, "macro: stages");
    app.add_option("--cells-per-stage", cfg.macro.cells_per_stage, "macro: cells per stage");
    app.add_option("--init-channels", cfg.macro.init_channels, "macro: stem channels");

    app.add_option("--pool-size", cfg.pool.size, "sampled pool size");
    auto* pool_seed_opt = app.add_option("--pool-seed", cfg.pool.seed, "pool sampling seed");
    app.add_option("--archs", cfg.pool.archs, "explicit pool arch ids");

    app.add_option("--tau", cfg.fear.tau, "threshold accuracy; <= 0 computes it");
    app.add_option("--freeze-fraction", cfg.fear.freeze_fraction, "FEAR freeze fraction");
    app.add_option("--stage2-epochs", cfg.fear.stage2_epochs, "FEAR stage-2 epochs");
    app.add_option("--stage1-max-epochs", cfg.fear.stage1_max_epochs, "FEAR stage-1 cap");
    app.add_option("--batch", cfg.fear.batch, "training batch size");
    app.add_option("--score-metric", score_metric, "FEAR score metric");
    app.add_option("--reject-ratio", cfg.fear.reject_ratio, "early-rejection ratio r");
    app.add_option("--lr-horizon", cfg.fear.lr_horizon_epochs, "stage-1 cosine horizon epochs");

    app.add_option("--shortreg-epochs", cfg.shortreg_epochs, "shortreg epoch sweep");
    app.add_option("--shortreg-batches", cfg.shortreg_batches, "shortreg batch sweep");
    app.add_option("--shortreg-metric", shortreg_metric, "shortreg score metric");

    app.add_option("--gt-epochs", cfg.full_train.epochs, "ground-truth training epochs");
    app.add_option("--gt-batch", cfg.full_train.batch, "ground-truth batch size");

    app.add_option("--thr-epochs", cfg.threshold.epochs, "threshold learner epochs");
    app.add_option("--thr-lr", cfg.threshold.lr, "threshold learner lr");
    app.add_option("--thr-batch", cfg.threshold.batch, "threshold learner batch");
    app.add_option("--thr-hidden1", cfg.threshold.hidden1, "threshold learner hidden 1");
    app.add_option("--thr-hidden2", cfg.threshold.hidden2, "threshold learner hidden 2");
    app.add_option("--thr-cell", cfg.threshold.hog.cell, "HoG cell size");
    app.add_option("--thr-bins", cfg.threshold.hog.bins, "HoG orientation bins");
    app.add_option("--thr-metric", threshold_metric, "threshold target metric");
    auto* thr_seed_opt = app.add_option("--thr-seed", cfg.threshold.seed, "threshold seed");

    app.add_option("--zc-batch", cfg.zc_batch, "proxy batch size");
    app.add_option("--zc-epochs", cfg.zc_epochs, "zc-epochs: training epochs E");

    app.add_option("--budget", cfg.search_budget, "search: evaluation budget B");
    app.add_option("--search-shortreg-epochs", cfg.search_shortreg_epochs,
                   "search: shortreg control epochs");
    app.add_option("--fastest-mode", fastest_mode, "as_printed | all_completed");

    app.add_option("--lr-max", cfg.fear.sgd.lr_max, "SGD peak lr");
    app.add_option("--lr-min", cfg.fear.sgd.lr_min, "SGD final lr");
    app.add_option("--wd", cfg.fear.sgd.weight_decay, "SGD weight decay");
    app.add_option("--momentum", cfg.fear.sgd.momentum, "SGD momentum");
    app.add_option("--nesterov", cfg.fear.sgd.nesterov, "SGD Nesterov momentum");

    CLI::App* gen_data = app.add_subcommand("gen-data", "generate and save a dataset");
    CLI::App* threshold = app.add_subcommand("threshold", "compute tau on the dataset");
    CLI::App* ground_truth = app.add_subcommand("ground-truth", "build the ground-truth store");
    CLI::App* rank_compare = app.add_subcommand("rank-compare", "FEAR vs shortreg vs proxies");
    CLI::App* time_to_threshold =
        app.add_subcommand("time-to-threshold", "epochs-to-tau scatter vs ground truth");
    CLI::App* zc_epochs = app.add_subcommand("zc-epochs", "proxy rankings after each epoch");
    CLI::App* synthetic_zc =
        app.add_subcommand("synthetic-zc", "proxies + FEAR on synthetic data");
    CLI::App* search_compare =
        app.add_subcommand("search-compare", "RS-FEAR vs RS-shortreg");
    CLI::App* plot_data = app.add_subcommand("plot-data", "pareto plot data from bins.csv");
    plot_data->add_option("--bins", bins_path, "bins.csv produced by rank-compare")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        std::cerr << json{{"error", {{"type", "CliError"}, {"message", e.what()}}}}.dump()
                  << "\n";
        return e.get_exit_code() == 0 ? 1 : e.get_exit_code();
    }

    try {
        // The base seed feeds every stream whose seed was not set explicitly.
        if (seed_opt->count() > 0) {
            if (ds_seed_opt->count() == 0) cfg.dataset.seed = base_seed;
            if (pool_seed_opt->count() == 0) cfg.pool.seed = base_seed;
            if (gt_seed_opt->count() == 0) cfg.gt_seed = base_seed;
            if (thr_seed_opt->count() == 0) cfg.threshold.seed = base_seed;
            if (seeds_opt->count() == 0)
                cfg.seeds = {base_seed, base_seed + 1, base_seed + 2};
        }
        cfg.fear.score_metric = fear::score_metric_from_name(score_metric);
        cfg.shortreg_metric = fear::score_metric_from_name(shortreg_metric);
        cfg.threshold.target_metric = fear::score_metric_from_name(threshold_metric);
        cfg.search_mode = fear::fastest_update_mode_from_name(fastest_mode);

        // Macro geometry follows the dataset.
        cfg.macro.image_hw = cfg.dataset.synthetic.hw;
        cfg.macro.image_channels = cfg.dataset.synthetic.channels;
        cfg.macro.num_classes = cfg.dataset.synthetic.num_classes;
        cfg.full_train.sgd = cfg.fear.sgd;

        if (*gen_data) {
            const fear::ImageDataset ds = cfg.dataset.build();
            std::filesystem::create_directories(cfg.out_dir);
            const std::string path = cfg.out_dir + "/dataset.bin";
            fear::save_dataset(ds, path);
            json counts = json::object();
            std::map<int, int> by_class;
            for (int l : ds.labels) ++by_class[l];
            for (auto& [c, n] : by_class) counts[std::to_string(c)] = n;
            json out{{"kind", "gen_data"},   {"config", json(cfg)},
                     {"path", path},         {"n", ds.n},
                     {"train", ds.train_idx.size()}, {"val", ds.val_idx.size()},
                     {"test", ds.test_idx.size()},   {"class_counts", counts},
                     {"warnings", ds.warnings}};
            std::ofstream mf(cfg.out_dir + "/manifest.json");
            mf << out.dump(2) << "\n";
            std::cout << out.dump() << "\n";
        } else if (*threshold) {
            const fear::ImageDataset ds = cfg.dataset.build();
            const fear::ThresholdResult r = fear::compute_threshold<float>(ds, cfg.threshold);
            json out{{"kind", "threshold"},
                     {"config", json(cfg)},
                     {"tau", r.tau},
                     {"warnings", r.warnings}};
            std::filesystem::create_directories(cfg.out_dir);
            std::ofstream mf(cfg.out_dir + "/manifest.json");
            mf << out.dump(2) << "\n";
            std::cout << out.dump() << "\n";
        } else if (*ground_truth) {
            const fear::GroundTruthBuildResult r = fear::run_ground_truth_build(cfg);
            std::cout << json{{"kind", "ground_truth_build"},
                              {"pool_size", r.pool_size},
                              {"entries", r.entries},
                              {"min_accuracy", r.min_accuracy},
                              {"max_accuracy", r.max_accuracy}}
                             .dump()
                      << "\n";
        } else if (*rank_compare) {
            const fear::RankCompareResult r = fear::run_rank_compare(cfg);
            std::cout << json{{"kind", "rank_compare"},
                              {"tau", r.tau},
                              {"methods", r.bins.size()},
                              {"pool", r.pool.size()}}
                             .dump()
                      << "\n";
        } else if (*time_to_threshold) {
            const fear::TimeToThresholdResult r = fear::run_time_to_threshold(cfg);
            json sp = json::object();
            for (auto& [seed, v] : r.spearman_by_seed)
                sp[std::to_string(seed)] = v ? json(*v) : json();
            std::cout << json{{"kind", "time_to_threshold"},
                              {"tau", r.tau},
                              {"spearman_by_seed", sp}}
                             .dump()
                      << "\n";
        } else if (*zc_epochs) {
            const fear::ZcOverEpochsResult r = fear::run_zero_cost_over_epochs(cfg);
            json sp = json::object();
            for (auto& [proxy, col] : r.spearman_by_epoch) {
                json vals = json::array();
                for (auto& v : col) vals.push_back(v ? json(*v) : json());
                sp[proxy] = vals;
            }
            std::cout << json{{"kind", "zero_cost_over_epochs"}, {"spearman", sp}}.dump()
                      << "\n";
        } else if (*synthetic_zc) {
            const fear::SyntheticZcResult r = fear::run_synthetic_zero_cost(cfg);
            json rows = json::array();
            for (auto& row : r.rows)
                rows.push_back(json{{"method", row.method},
                                    {"spearman", row.spearman ? json(*row.spearman) : json()},
                                    {"avg_cost_units", row.avg_cost_units}});
            std::cout << json{{"kind", "synthetic_zero_cost"}, {"tau", r.tau}, {"rows", rows}}
                             .dump()
                      << "\n";
        } else if (*search_compare) {
            const fear::SearchCompareSummary r = fear::run_random_search_compare(cfg);
            std::cout << json{{"kind", "random_search_compare"},
                              {"tau", r.tau},
                              {"fear_mean_best_gt", r.fear_mean_best_gt},
                              {"shortreg_mean_best_gt", r.shortreg_mean_best_gt},
                              {"cost_ratio", r.cost_ratio}}
                             .dump()
                      << "\n";
        } else if (*plot_data) {
            fear::run_plot_data(bins_path, cfg.out_dir);
            std::cout << json{{"kind", "plot_data"}, {"out", cfg.out_dir + "/pareto.csv"}}.dump()
                      << "\n";
        }
        return 0;
    } catch (const fear::DomainError& e) {
        return fail("DomainError", e.what());
    } catch (const fear::ShapeError& e) {
        return fail("ShapeError", e.what());
    } catch (const fear::NumericError& e) {
        return fail("NumericError", e.what());
    } catch (const fear::FormatError& e) {
        return fail("FormatError", e.what());
    } catch (const std::exception& e) {
        return fail("Error", e.what());
    }
}
