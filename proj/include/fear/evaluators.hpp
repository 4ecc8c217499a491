#pragma once

#include <chrono>
#include <optional>

#include "fear/dataset.hpp"
#include "fear/search_space.hpp"
#include "fear/threshold.hpp"

namespace fear {

struct FearConfig {
    double tau = 0.5;
    double freeze_fraction = 0.53;
    int stage2_epochs = 5;
    int stage1_max_epochs = 50;
    int batch = 64;
    ScoreMetric score_metric = ScoreMetric::train_accuracy;
    double reject_ratio = 4.0;
    // Stage-1 cosine horizon in epochs; mirrors the full-training schedule so
    // a candidate that trains to the horizon sees the oracle's curve.
    int lr_horizon_epochs = 40;
    SgdConfig sgd;

    void validate() const {
        if (!(tau > 0.0 && tau < 1.0)) throw DomainError("fear: tau must be in (0,1)");
        if (!(freeze_fraction > 0.0 && freeze_fraction < 1.0))
            throw DomainError("fear: freeze_fraction must be in (0,1)");
        if (!(reject_ratio > 1.0)) throw DomainError("fear: reject_ratio must be > 1");
        if (stage2_epochs < 0 || stage1_max_epochs <= 0 || batch <= 0 || lr_horizon_epochs <= 0)
            throw DomainError("fear: epoch and batch fields must be positive");
    }
};

struct ShortregConfig {
    int epochs = 4;
    int batch = 64;
    // Horizon the cosine schedule anneals over. 0 means the run's own epoch
    // count; the benchmark analog is the full-training budget, making shortreg
    // a truncated snapshot of the same schedule the ground truth follows.
    int lr_horizon_epochs = 0;
    ScoreMetric score_metric = ScoreMetric::train_accuracy;
    SgdConfig sgd;

    void validate() const {
        if (epochs < 1 || batch <= 0) throw DomainError("shortreg: epochs >= 1, batch > 0 required");
        if (lr_horizon_epochs < 0) throw DomainError("shortreg: lr_horizon_epochs >= 0 required");
    }
};

struct FullTrainConfig {
    int epochs = 60;
    int batch = 64;
    SgdConfig sgd;

    void validate() const {
        if (epochs < 1 || batch <= 0) throw DomainError("full-train: epochs >= 1, batch > 0");
    }
};

struct EvalOutcome {
    ArchId arch{};
    bool reached_threshold = false;
    std::optional<double> score;
    std::int64_t cost_units = 0;
    std::int64_t stage1_cost_units = 0;  // time-to-threshold component
    std::int64_t wall_ms = 0;
    int epochs_stage1 = 0;
    int epochs_stage2 = 0;
    bool rejected_early = false;
    bool failed = false;  // non-finite loss; treated as rejected
};

namespace detail {

template <typename T>
double accuracy_on_split(Network<T>& net, const ImageDataset& ds, const std::vector<int>& split,
                         int batch, std::int64_t* cost = nullptr) {
    if (split.empty()) throw DomainError("accuracy: empty split");
    int correct = 0;
    const int n = static_cast<int>(split.size());
    for (int begin = 0; begin < n; begin += batch) {
        const int count = std::min(batch, n - begin);
        Tensor<T> x;
        std::vector<int> labels;
        make_batch(ds, split, begin, count, x, labels);
        Tensor<T> logits = net.forward(x, false);
        for (int b = 0; b < count; ++b) {
            int argmax = 0;
            for (int j = 1; j < logits.dim(1); ++j)
                if (logits.at(b, j) > logits.at(b, argmax)) argmax = j;
            if (argmax == labels[static_cast<std::size_t>(b)]) ++correct;
        }
        if (cost) *cost += net.forward_macs_per_sample() * count;
    }
    return static_cast<double>(correct) / static_cast<double>(n);
}

// One pass over the train split in shuffled order, dropping the trailing
// partial batch; lr follows lr_fn(global step). Returns steps taken.
template <typename T, typename LrFn>
int train_one_epoch(Network<T>& net, const ImageDataset& ds, int batch, Rng& shuffle_rng,
                    std::vector<int>& order, LrFn&& lr_fn, std::int64_t& step,
                    std::int64_t& cost, const SgdConfig& sgd) {
    shuffle_rng.shuffle(order);
    std::vector<ParamGroup<T>*> params = net.params();
    const int n = static_cast<int>(order.size());
    int steps = 0;
    for (int begin = 0; begin + batch <= n; begin += batch) {
        Tensor<T> x;
        std::vector<int> labels;
        make_batch(ds, order, begin, batch, x, labels);
        net.zero_grad();
        loss_and_backward(net, x, labels, true);
        sgd_step(params, lr_fn(step), sgd);
        cost += cost_units(net, batch);
        ++step;
        ++steps;
    }
    if (steps == 0) throw DomainError("train split smaller than one batch");
    return steps;
}

inline std::int64_t now_ms() {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

template <typename T>
double metric_value(Network<T>& net, const ImageDataset& ds, ScoreMetric m, int batch,
                    std::int64_t* cost) {
    const std::vector<int>& split =
        m == ScoreMetric::val_accuracy ? ds.val_idx : ds.train_idx;
    return accuracy_on_split(net, ds, split, batch, cost);
}

}  // namespace detail

// Stage 1: train the full network epoch by epoch until train accuracy
// reaches tau. The budget check runs right after each epoch's optimizer
// steps, before the accuracy pass, so replaying a recorded per-epoch cost
// sequence under any budget reproduces the rejection decision exactly.
template <typename T>
EvalOutcome train_to_threshold(Network<T>& net, const ImageDataset& ds, double tau,
                               std::optional<std::int64_t> cost_cap, const FearConfig& cfg,
                               Rng& shuffle_rng, std::int64_t& step) {
    if (!(tau > 0.0 && tau < 1.0)) throw DomainError("train_to_threshold: tau must be in (0,1)");
    EvalOutcome out;
    const std::int64_t t0 = detail::now_ms();
    std::vector<int> order = ds.train_idx;
    const int spe = static_cast<int>(order.size()) / cfg.batch;
    if (spe < 1) throw DomainError("train_to_threshold: train split smaller than one batch");
    SgdConfig sched = cfg.sgd;
    sched.total_steps = static_cast<std::int64_t>(cfg.lr_horizon_epochs) * spe;
    auto lr_fn = [&](std::int64_t s) {
        return cosine_lr(std::min(s, sched.total_steps), sched);
    };
    try {
        while (out.epochs_stage1 < cfg.stage1_max_epochs) {
            detail::train_one_epoch(net, ds, cfg.batch, shuffle_rng, order, lr_fn, step,
                                    out.cost_units, cfg.sgd);
            ++out.epochs_stage1;
            if (cost_cap && out.cost_units > *cost_cap) {
                out.rejected_early = true;
                break;
            }
            const double acc =
                detail::accuracy_on_split(net, ds, ds.train_idx, cfg.batch, &out.cost_units);
            if (acc >= tau) {
                out.reached_threshold = true;
                break;
            }
        }
    } catch (const NumericError&) {
        out.failed = true;
        out.rejected_early = true;
    }
    out.wall_ms = detail::now_ms() - t0;
    return out;
}

// FEAR: train to threshold, freeze the parameter prefix covering
// freeze_fraction (snapped up to a cell boundary), then train stage2_epochs
// more with the learning rate annealed from the stage-1 exit value to zero.
template <typename T>
EvalOutcome fear_evaluate(ArchId arch, const ImageDataset& ds, const MacroConfig& macro,
                          const FearConfig& cfg, std::uint64_t seed,
                          std::optional<std::int64_t> fastest_budget = std::nullopt) {
    cfg.validate();
    const std::int64_t t0 = detail::now_ms();
    Network<T> net = build_network<T>(arch, macro, seed);
    Rng shuffle_rng(stream_seed(seed, "train-shuffle", static_cast<std::uint64_t>(arch.id)));
    std::int64_t step = 0;
    std::optional<std::int64_t> cap;
    if (fastest_budget)
        cap = static_cast<std::int64_t>(cfg.reject_ratio * static_cast<double>(*fastest_budget));
    EvalOutcome out = train_to_threshold(net, ds, cfg.tau, cap, cfg, shuffle_rng, step);
    out.arch = arch;
    out.stage1_cost_units = out.cost_units;
    if (out.rejected_early) {
        out.wall_ms = detail::now_ms() - t0;
        return out;
    }

    const int spe = static_cast<int>(ds.train_idx.size()) / cfg.batch;
    SgdConfig sched1 = cfg.sgd;
    sched1.total_steps = static_cast<std::int64_t>(cfg.lr_horizon_epochs) * spe;
    const double exit_lr = cosine_lr(std::min(step, sched1.total_steps), sched1);

    const int boundary = freeze_boundary_for_fraction(net, cfg.freeze_fraction);
    net.freeze_up_to_cell(boundary);

    try {
        if (cfg.stage2_epochs > 0) {
            SgdConfig sched2 = cfg.sgd;
            sched2.lr_max = exit_lr;
            sched2.lr_min = 0.0;
            sched2.total_steps = static_cast<std::int64_t>(cfg.stage2_epochs) * spe;
            const std::int64_t s0 = step;
            auto lr_fn = [&](std::int64_t s) {
                return cosine_lr(std::min(s - s0, sched2.total_steps), sched2);
            };
            std::vector<int> order = ds.train_idx;
            for (int e = 0; e < cfg.stage2_epochs; ++e) {
                detail::train_one_epoch(net, ds, cfg.batch, shuffle_rng, order, lr_fn, step,
                                        out.cost_units, cfg.sgd);
                ++out.epochs_stage2;
            }
        }
        out.score =
            detail::metric_value(net, ds, cfg.score_metric, cfg.batch, &out.cost_units);
    } catch (const NumericError&) {
        out.failed = true;
        out.rejected_early = true;
        out.score.reset();
    }
    out.wall_ms = detail::now_ms() - t0;
    return out;
}

// Plain reduced training for a fixed epoch count; never rejects.
template <typename T>
EvalOutcome shortreg_evaluate(ArchId arch, const ImageDataset& ds, const MacroConfig& macro,
                              const ShortregConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    EvalOutcome out;
    out.arch = arch;
    const std::int64_t t0 = detail::now_ms();
    Network<T> net = build_network<T>(arch, macro, seed);
    Rng shuffle_rng(stream_seed(seed, "train-shuffle", static_cast<std::uint64_t>(arch.id)));
    std::vector<int> order = ds.train_idx;
    const int spe = static_cast<int>(order.size()) / cfg.batch;
    if (spe < 1) throw DomainError("shortreg: train split smaller than one batch");
    SgdConfig sched = cfg.sgd;
    sched.total_steps =
        static_cast<std::int64_t>(std::max(cfg.epochs, cfg.lr_horizon_epochs)) * spe;
    auto lr_fn = [&](std::int64_t s) { return cosine_lr(std::min(s, sched.total_steps), sched); };
    std::int64_t step = 0;
    try {
        for (int e = 0; e < cfg.epochs; ++e) {
            detail::train_one_epoch(net, ds, cfg.batch, shuffle_rng, order, lr_fn, step,
                                    out.cost_units, cfg.sgd);
            ++out.epochs_stage1;
        }
        out.score =
            detail::metric_value(net, ds, cfg.score_metric, cfg.batch, &out.cost_units);
        out.reached_threshold = true;
    } catch (const NumericError&) {
        out.failed = true;
        out.rejected_early = true;
        out.score.reset();
    }
    out.wall_ms = detail::now_ms() - t0;
    return out;
}

// Full cosine-schedule training; returns accuracy on the test split.
template <typename T>
double ground_truth(ArchId arch, const ImageDataset& ds, const MacroConfig& macro,
                    const FullTrainConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Network<T> net = build_network<T>(arch, macro, seed);
    Rng shuffle_rng(stream_seed(seed, "train-shuffle", static_cast<std::uint64_t>(arch.id)));
    std::vector<int> order = ds.train_idx;
    const int spe = static_cast<int>(order.size()) / cfg.batch;
    if (spe < 1) throw DomainError("ground_truth: train split smaller than one batch");
    SgdConfig sched = cfg.sgd;
    sched.total_steps = static_cast<std::int64_t>(cfg.epochs) * spe;
    auto lr_fn = [&](std::int64_t s) { return cosine_lr(std::min(s, sched.total_steps), sched); };
    std::int64_t step = 0, cost = 0;
    for (int e = 0; e < cfg.epochs; ++e)
        detail::train_one_epoch(net, ds, cfg.batch, shuffle_rng, order, lr_fn, step, cost,
                                cfg.sgd);
    return detail::accuracy_on_split(net, ds, ds.test_idx, cfg.batch);
}

}  // namespace fear
