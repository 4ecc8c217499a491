#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fear/evaluators.hpp"

using namespace fear;

namespace {

MacroConfig desk_macro() {
    MacroConfig m;
    m.stages = 3;
    m.cells_per_stage = 1;
    m.init_channels = 8;
    m.num_classes = 10;
    m.image_hw = 8;
    m.image_channels = 3;
    return m;
}

const ImageDataset& small_dataset() {
    static const ImageDataset ds = [] {
        SyntheticConfig c;
        c.n_total = 400;
        c.n_train = 240;
        c.n_val = 80;
        c.hw = 8;
        return normalize(generate_synthetic(c, 5));
    }();
    return ds;
}

FearConfig fast_fear() {
    FearConfig c;
    c.tau = 0.3;
    c.stage2_epochs = 2;
    c.stage1_max_epochs = 40;
    c.batch = 32;
    c.lr_horizon_epochs = 12;
    return c;
}

ArchId conv_arch() {
    CellSpec s;
    s.edge_ops.fill(OpKind::conv3x3);
    return encode(s);
}

ArchId dead_cell_arch() {
    // Every edge into node 3 zeroized: the cell contributes nothing.
    CellSpec s;
    s.edge_ops.fill(OpKind::conv3x3);
    s.edge_ops[2] = OpKind::zeroize;
    s.edge_ops[4] = OpKind::zeroize;
    s.edge_ops[5] = OpKind::zeroize;
    return encode(s);
}

}  // namespace

TEST_CASE("tau below chance returns after the first epoch") {
    FearConfig cfg = fast_fear();
    cfg.tau = 0.02;
    const EvalOutcome out =
        fear_evaluate<float>(ArchId{777}, small_dataset(), desk_macro(), cfg, 1);
    CHECK(out.reached_threshold);
    CHECK(out.epochs_stage1 == 1);
    CHECK(out.epochs_stage2 == cfg.stage2_epochs);
    REQUIRE(out.score.has_value());
    CHECK(*out.score >= 0.0);
    CHECK(*out.score <= 1.0);
    CHECK(out.cost_units > out.stage1_cost_units);
}

TEST_CASE("a tiny cost cap rejects early with no score") {
    Network<float> net = build_network<float>(ArchId{777}, desk_macro(), 1);
    Rng shuffle(stream_seed(1, "train-shuffle", 777));
    std::int64_t step = 0;
    FearConfig cfg = fast_fear();
    const EvalOutcome out =
        train_to_threshold(net, small_dataset(), cfg.tau, std::int64_t{1}, cfg, shuffle, step);
    CHECK(out.rejected_early);
    CHECK(!out.reached_threshold);
    CHECK(!out.score.has_value());
    CHECK(out.epochs_stage1 == 1);  // the check fires after the first epoch
}

TEST_CASE("stage2_epochs = 0 scores the stage-1 exit accuracy") {
    FearConfig cfg = fast_fear();
    cfg.tau = 0.15;
    cfg.stage2_epochs = 0;
    const ArchId a{777};
    const EvalOutcome out = fear_evaluate<float>(a, small_dataset(), desk_macro(), cfg, 3);
    REQUIRE(out.score.has_value());

    // Replication oracle: run stage 1 alone with the same streams and read
    // the same metric from the exit checkpoint.
    Network<float> net = build_network<float>(a, desk_macro(), 3);
    Rng shuffle(stream_seed(3, "train-shuffle", static_cast<std::uint64_t>(a.id)));
    std::int64_t step = 0;
    const EvalOutcome s1 =
        train_to_threshold(net, small_dataset(), cfg.tau, std::nullopt, cfg, shuffle, step);
    CHECK(s1.reached_threshold);
    CHECK(s1.epochs_stage1 == out.epochs_stage1);
    const double exit_acc =
        detail::accuracy_on_split(net, small_dataset(), small_dataset().train_idx, cfg.batch);
    CHECK(*out.score == doctest::Approx(exit_acc).epsilon(1e-12));
}

TEST_CASE("frozen prefix stays bit-identical through stage 2") {
    const ArchId a = conv_arch();
    Network<float> net = build_network<float>(a, desk_macro(), 2);
    Rng shuffle(stream_seed(2, "train-shuffle", static_cast<std::uint64_t>(a.id)));
    std::int64_t step = 0;
    FearConfig cfg = fast_fear();
    cfg.tau = 0.15;
    const EvalOutcome s1 =
        train_to_threshold(net, small_dataset(), cfg.tau, std::nullopt, cfg, shuffle, step);
    REQUIRE(s1.reached_threshold);

    const int boundary = freeze_boundary_for_fraction(net, cfg.freeze_fraction);
    CHECK(param_fraction_up_to(net, boundary) >= cfg.freeze_fraction);
    net.freeze_up_to_cell(boundary);

    std::vector<std::vector<float>> frozen_before;
    for (auto* p : net.params())
        if (p->frozen) frozen_before.push_back(p->value.values);
    REQUIRE(!frozen_before.empty());

    std::vector<int> order = small_dataset().train_idx;
    SgdConfig sched = cfg.sgd;
    sched.total_steps = 2 * (static_cast<std::int64_t>(order.size()) / cfg.batch);
    std::int64_t cost = 0, st = 0;
    for (int e = 0; e < 2; ++e)
        detail::train_one_epoch(net, small_dataset(), cfg.batch, shuffle, order,
                                [&](std::int64_t s) { return cosine_lr(s, sched); }, st, cost,
                                cfg.sgd);

    std::size_t i = 0;
    bool any_unfrozen_changed = false;
    std::vector<std::vector<float>> unfrozen_now;
    for (auto* p : net.params()) {
        if (p->frozen)
            CHECK(p->value.values == frozen_before[i++]);
        else
            any_unfrozen_changed = true;
    }
    CHECK(any_unfrozen_changed);
}

TEST_CASE("rejection is monotone in the budget") {
    FearConfig cfg = fast_fear();
    const ArchId a{4242};
    const EvalOutcome free_run =
        fear_evaluate<float>(a, small_dataset(), desk_macro(), cfg, 1);
    REQUIRE(!free_run.rejected_early);
    const std::int64_t s1 = free_run.stage1_cost_units;

    // cap just below the unbudgeted stage-1 cost -> rejected; at or above -> kept
    const std::int64_t low_budget = static_cast<std::int64_t>(
        static_cast<double>(s1) / cfg.reject_ratio / 2.0);
    const std::int64_t high_budget =
        static_cast<std::int64_t>(static_cast<double>(s1) / cfg.reject_ratio) + 1;
    const EvalOutcome rejected =
        fear_evaluate<float>(a, small_dataset(), desk_macro(), cfg, 1, low_budget);
    const EvalOutcome kept =
        fear_evaluate<float>(a, small_dataset(), desk_macro(), cfg, 1, high_budget);
    CHECK(rejected.rejected_early);
    CHECK(!rejected.score.has_value());
    CHECK(!kept.rejected_early);
    CHECK(kept.stage1_cost_units == s1);
    // monotone: any budget below low_budget also rejects
    const EvalOutcome tighter =
        fear_evaluate<float>(a, small_dataset(), desk_macro(), cfg, 1, low_budget / 2);
    CHECK(tighter.rejected_early);
    CHECK(tighter.epochs_stage1 <= rejected.epochs_stage1);
}

TEST_CASE("stage1_max exhaustion without a cap still proceeds to stage 2") {
    FearConfig cfg = fast_fear();
    cfg.tau = 0.999;  // unreachable
    cfg.stage1_max_epochs = 2;
    const EvalOutcome out =
        fear_evaluate<float>(ArchId{777}, small_dataset(), desk_macro(), cfg, 1);
    CHECK(!out.reached_threshold);
    CHECK(!out.rejected_early);
    CHECK(out.epochs_stage1 == 2);
    CHECK(out.score.has_value());
}

TEST_CASE("shortreg equals an independent replication of the same procedure") {
    ShortregConfig cfg;
    cfg.epochs = 3;
    cfg.batch = 32;
    const ArchId a{9876};
    const EvalOutcome out = shortreg_evaluate<float>(a, small_dataset(), desk_macro(), cfg, 4);
    REQUIRE(out.score.has_value());
    CHECK(out.reached_threshold);
    CHECK(out.epochs_stage1 == 3);

    Network<float> net = build_network<float>(a, desk_macro(), 4);
    Rng shuffle(stream_seed(4, "train-shuffle", static_cast<std::uint64_t>(a.id)));
    std::vector<int> order = small_dataset().train_idx;
    SgdConfig sched = cfg.sgd;
    sched.total_steps = 3 * (static_cast<std::int64_t>(order.size()) / cfg.batch);
    std::int64_t st = 0, cost = 0;
    for (int e = 0; e < 3; ++e)
        detail::train_one_epoch(
            net, small_dataset(), cfg.batch, shuffle, order,
            [&](std::int64_t s) { return cosine_lr(std::min(s, sched.total_steps), sched); },
            st, cost, cfg.sgd);
    const double acc =
        detail::accuracy_on_split(net, small_dataset(), small_dataset().train_idx, cfg.batch);
    CHECK(*out.score == doctest::Approx(acc).epsilon(1e-12));
}

TEST_CASE("larger shortreg batches drop more samples and cost less") {
    ShortregConfig small;
    small.epochs = 2;
    small.batch = 32;  // 240 train -> 7 steps, 224 samples per epoch
    ShortregConfig large = small;
    large.batch = 64;  // 240 train -> 3 steps, 192 samples per epoch
    const EvalOutcome a = shortreg_evaluate<float>(ArchId{777}, small_dataset(),
                                                   desk_macro(), small, 1);
    const EvalOutcome b = shortreg_evaluate<float>(ArchId{777}, small_dataset(),
                                                   desk_macro(), large, 1);
    CHECK(b.cost_units < a.cost_units);
}

TEST_CASE("ground truth is deterministic and bounded") {
    FullTrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch = 32;
    const double a = ground_truth<float>(ArchId{555}, small_dataset(), desk_macro(), cfg, 1);
    const double b = ground_truth<float>(ArchId{555}, small_dataset(), desk_macro(), cfg, 1);
    CHECK(a == b);
    CHECK(a >= 0.0);
    CHECK(a <= 1.0);
}

TEST_CASE("capacity ordering: dead-cell arch scores below all-conv under FEAR") {
    FearConfig cfg = fast_fear();
    cfg.tau = 0.25;
    int wins = 0;
    for (std::uint64_t seed : {1, 2, 3}) {
        const EvalOutcome a =
            fear_evaluate<float>(conv_arch(), small_dataset(), desk_macro(), cfg, seed);
        const EvalOutcome b =
            fear_evaluate<float>(dead_cell_arch(), small_dataset(), desk_macro(), cfg, seed);
        REQUIRE(a.score.has_value());
        REQUIRE(b.score.has_value());
        if (*a.score > *b.score) ++wins;
    }
    CHECK(wins == 3);
}

TEST_CASE("ground truth measures generalization, not fit") {
    // Learnable class patterns: high test accuracy. Random labels at this
    // training-set size: chance-level test accuracy.
    FullTrainConfig cfg;
    cfg.epochs = 6;
    cfg.batch = 32;
    SyntheticConfig sc;
    sc.n_total = 400;
    sc.n_train = 240;
    sc.n_val = 80;
    sc.hw = 8;
    const ImageDataset patterned = normalize(generate_patterned(sc, 5));
    const double learnable =
        ground_truth<float>(conv_arch(), patterned, desk_macro(), cfg, 1);
    const double noise =
        ground_truth<float>(conv_arch(), small_dataset(), desk_macro(), cfg, 1);
    CHECK(learnable > 0.8);
    CHECK(noise < 0.4);
}

TEST_CASE("fear outcomes are deterministic apart from wall time") {
    FearConfig cfg = fast_fear();
    const EvalOutcome a = fear_evaluate<float>(ArchId{321}, small_dataset(), desk_macro(), cfg, 9);
    const EvalOutcome b = fear_evaluate<float>(ArchId{321}, small_dataset(), desk_macro(), cfg, 9);
    CHECK(a.score == b.score);
    CHECK(a.cost_units == b.cost_units);
    CHECK(a.stage1_cost_units == b.stage1_cost_units);
    CHECK(a.epochs_stage1 == b.epochs_stage1);
    CHECK(a.epochs_stage2 == b.epochs_stage2);
    CHECK(a.reached_threshold == b.reached_threshold);
}

TEST_CASE("config validation rejects bad fields") {
    FearConfig f;
    f.tau = 1.5;
    CHECK_THROWS_AS(f.validate(), DomainError);
    f = FearConfig{};
    f.freeze_fraction = 0.0;
    CHECK_THROWS_AS(f.validate(), DomainError);
    f = FearConfig{};
    f.reject_ratio = 1.0;
    CHECK_THROWS_AS(f.validate(), DomainError);
    ShortregConfig s;
    s.epochs = 0;
    CHECK_THROWS_AS(s.validate(), DomainError);
    FullTrainConfig g;
    g.batch = 0;
    CHECK_THROWS_AS(g.validate(), DomainError);
}
