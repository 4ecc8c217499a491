#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fear/network.hpp>
#include <fear/search_space.hpp>
#include <fear/sgd.hpp>

using namespace fear;

namespace {

bool close_rel(double a, double b, double tol) {
    return std::abs(a - b) <= tol * std::max({1.0, std::abs(a), std::abs(b)});
}

double weighted_sum(const Tensor<double>& y, const Tensor<double>& c) {
    double s = 0.0;
    for (std::size_t i = 0; i < y.values.size(); ++i) s += y.values[i] * c.values[i];
    return s;
}

Tensor<double> random_tensor(std::vector<int> shape, Rng& rng) {
    Tensor<double> t(std::move(shape));
    for (auto& v : t.values) v = rng.normal();
    return t;
}

// Checks input and parameter gradients of one module against central finite
// differences of the scalar loss sum(c * forward(x)).
void check_module_grads(Module<double>& m, const std::vector<int>& in_shape, Rng& rng,
                        bool training = true, double tol = 1e-4) {
    Tensor<double> x = random_tensor(in_shape, rng);
    Tensor<double> y0 = m.forward(x, training);
    Tensor<double> c = random_tensor(y0.shape, rng);

    std::vector<ParamGroup<double>*> params;
    m.collect_params(params);
    for (auto* p : params) p->grad.fill(0.0);
    m.forward(x, training);
    Tensor<double> gx = m.backward(c, true);
    REQUIRE(gx.shape == x.shape);

    const double h = 1e-4;
    auto loss_at = [&]() { return weighted_sum(m.forward(x, training), c); };
    for (std::size_t i = 0; i < x.values.size(); ++i) {
        const double keep = x.values[i];
        x.values[i] = keep + h;
        const double lp = loss_at();
        x.values[i] = keep - h;
        const double lm = loss_at();
        x.values[i] = keep;
        const double fd = (lp - lm) / (2.0 * h);
        CHECK_MESSAGE(close_rel(gx.values[i], fd, tol),
                      "input grad " << i << ": " << gx.values[i] << " vs " << fd);
    }
    for (auto* p : params)
        for (std::size_t i = 0; i < p->value.values.size(); ++i) {
            const double keep = p->value.values[i];
            p->value.values[i] = keep + h;
            const double lp = loss_at();
            p->value.values[i] = keep - h;
            const double lm = loss_at();
            p->value.values[i] = keep;
            const double fd = (lp - lm) / (2.0 * h);
            CHECK_MESSAGE(close_rel(p->grad.values[i], fd, tol),
                          p->name << " grad " << i << ": " << p->grad.values[i] << " vs " << fd);
        }
}

}  // namespace

TEST_CASE("cosine schedule matches the closed form") {
    SgdConfig cfg;
    cfg.lr_max = 0.1;
    cfg.lr_min = 0.0;
    cfg.total_steps = 100;
    CHECK(cosine_lr(0, cfg) == doctest::Approx(0.1));
    CHECK(cosine_lr(100, cfg) == doctest::Approx(0.0));
    CHECK(cosine_lr(50, cfg) == doctest::Approx(0.05));
    for (int s = 1; s <= 100; ++s) CHECK(cosine_lr(s, cfg) <= cosine_lr(s - 1, cfg));
    CHECK_THROWS_AS(cosine_lr(101, cfg), DomainError);
    CHECK_THROWS_AS(cosine_lr(-1, cfg), DomainError);
}

TEST_CASE("conv2d 1x1 identity kernel is the identity") {
    Rng rng(7);
    Conv2d<double> conv(3, 3, 1, 1, 0, 5, 5, rng, "c");
    conv.weight().value.fill(0.0);
    for (int c = 0; c < 3; ++c) conv.weight().value.at(c, c, 0, 0) = 1.0;
    Tensor<double> x = random_tensor({2, 3, 5, 5}, rng);
    Tensor<double> y = conv.forward(x, true);
    for (std::size_t i = 0; i < x.values.size(); ++i) CHECK(y.values[i] == doctest::Approx(x.values[i]));
}

TEST_CASE("avgpool3x3 on a constant image: interior 7, zero-padded corner 7*4/9") {
    Rng rng(7);
    AvgPool3x3<double> pool(1, 4, 4, "p");
    Tensor<double> x({1, 1, 4, 4});
    x.fill(7.0);
    Tensor<double> y = pool.forward(x, true);
    CHECK(y.at(0, 0, 1, 1) == doctest::Approx(7.0));
    CHECK(y.at(0, 0, 0, 0) == doctest::Approx(7.0 * 4.0 / 9.0));
}

TEST_CASE("relu forward") {
    ReLU<double> relu("r");
    Tensor<double> x({1, 3}, {-1.0, 0.0, 2.0});
    Tensor<double> y = relu.forward(x, true);
    CHECK(y.values == std::vector<double>{0.0, 0.0, 2.0});
}

TEST_CASE("softmax cross-entropy hand example") {
    // two classes, equal logits, true label 0: loss = ln 2, dlogits = (-0.5, 0.5)/N
    Tensor<double> logits({1, 2});
    logits.fill(0.3);
    LossResult<double> r = softmax_cross_entropy(logits, {0});
    CHECK(r.loss == doctest::Approx(std::log(2.0)));
    CHECK(r.dlogits.at(0, 0) == doctest::Approx(-0.5));
    CHECK(r.dlogits.at(0, 1) == doctest::Approx(0.5));
    // argmax ties resolve to the lowest index, so label 0 counts as correct
    CHECK(r.accuracy == doctest::Approx(1.0));
}

TEST_CASE("output-bias gradient of the hand example flows through a linear head") {
    Rng rng(3);
    Linear<double> lin(4, 2, rng, "head");
    Tensor<double> x({1, 4});
    x.fill(0.0);  // logits collapse to the bias, which starts at 0: equal logits
    Tensor<double> y = lin.forward(x, true);
    LossResult<double> r = softmax_cross_entropy(y, {0});
    lin.backward(r.dlogits, false);
    CHECK(lin.bias().grad.values[0] == doctest::Approx(-0.5));
    CHECK(lin.bias().grad.values[1] == doctest::Approx(0.5));
}

TEST_CASE("sgd vanilla step, freezing, and Nesterov recurrence") {
    SgdConfig cfg;
    cfg.weight_decay = 0.0;
    cfg.momentum = 0.0;
    cfg.nesterov = false;
    ParamGroup<double> p;
    p.init({1}, ParamKind::conv_weight, "w");
    p.value.values[0] = 1.0;
    p.grad.values[0] = 1.0;
    std::vector<ParamGroup<double>*> ps{&p};
    sgd_step(ps, 0.1, cfg);
    CHECK(p.value.values[0] == doctest::Approx(0.9));

    p.frozen = true;
    sgd_step(ps, 0.1, cfg);
    CHECK(p.value.values[0] == doctest::Approx(0.9));
    p.frozen = false;

    // Nesterov, constant grad g=1, mu=0.9, lr=0.1, from w:
    // v1=1, w -= lr*(1+0.9*1)          -> w - 0.19
    // v2=1.9, w -= lr*(1+0.9*1.9)      -> w - 0.271
    SgdConfig nes;
    nes.weight_decay = 0.0;
    nes.momentum = 0.9;
    nes.nesterov = true;
    p.value.values[0] = 0.9;
    p.momentum.values[0] = 0.0;
    sgd_step(ps, 0.1, nes);
    CHECK(p.value.values[0] == doctest::Approx(0.9 - 0.19));
    sgd_step(ps, 0.1, nes);
    CHECK(p.value.values[0] == doctest::Approx(0.9 - 0.19 - 0.271));
}

TEST_CASE("weight decay applies to all kinds except linear bias") {
    SgdConfig cfg;
    cfg.weight_decay = 0.5;
    cfg.momentum = 0.0;
    cfg.nesterov = false;
    for (ParamKind k : {ParamKind::conv_weight, ParamKind::bn_gamma, ParamKind::bn_beta,
                        ParamKind::linear_weight, ParamKind::linear_bias}) {
        ParamGroup<double> p;
        p.init({1}, k, "p");
        p.value.values[0] = 2.0;
        p.grad.values[0] = 0.0;
        std::vector<ParamGroup<double>*> ps{&p};
        sgd_step(ps, 0.1, cfg);
        const double expect = k == ParamKind::linear_bias ? 2.0 : 2.0 - 0.1 * 0.5 * 2.0;
        CHECK(p.value.values[0] == doctest::Approx(expect));
    }
}

TEST_CASE("finite-difference gradients: every layer kind") {
    Rng rng(11);
    SUBCASE("conv2d 3x3 stride 1") {
        Conv2d<double> m(3, 4, 3, 1, 1, 6, 6, rng, "c");
        check_module_grads(m, {2, 3, 6, 6}, rng);
    }
    SUBCASE("conv2d 3x3 stride 2") {
        Conv2d<double> m(2, 3, 3, 2, 1, 6, 6, rng, "c");
        check_module_grads(m, {2, 2, 6, 6}, rng);
    }
    SUBCASE("conv2d 1x1") {
        Conv2d<double> m(3, 2, 1, 1, 0, 4, 4, rng, "c");
        check_module_grads(m, {2, 3, 4, 4}, rng);
    }
    SUBCASE("batchnorm training mode") {
        BatchNorm2d<double> m(3, 4, 4, "bn");
        check_module_grads(m, {2, 3, 4, 4}, rng);
    }
    SUBCASE("batchnorm eval mode") {
        BatchNorm2d<double> m(3, 4, 4, "bn");
        // run one training pass so running stats are not trivial
        Tensor<double> warm = random_tensor({2, 3, 4, 4}, rng);
        m.forward(warm, true);
        check_module_grads(m, {2, 3, 4, 4}, rng, false);
    }
    SUBCASE("relu") {
        ReLU<double> m("r");
        check_module_grads(m, {2, 3, 4, 4}, rng);
    }
    SUBCASE("avgpool3x3") {
        AvgPool3x3<double> m(2, 5, 5, "p");
        check_module_grads(m, {2, 2, 5, 5}, rng);
    }
    SUBCASE("global average pool") {
        GlobalAvgPool<double> m("g");
        check_module_grads(m, {2, 3, 4, 4}, rng);
    }
    SUBCASE("linear") {
        Linear<double> m(6, 4, rng, "l");
        check_module_grads(m, {3, 6}, rng);
    }
    SUBCASE("cell with every op kind") {
        CellSpec spec;
        spec.edge_ops = {OpKind::conv3x3, OpKind::skip_connection, OpKind::zeroize,
                         OpKind::avgpool3x3, OpKind::conv1x1, OpKind::conv3x3};
        Cell<double> m(spec, 3, 4, 4, rng, "cell");
        check_module_grads(m, {2, 3, 4, 4}, rng);
    }
    SUBCASE("residual downsample") {
        ResidualDownsample<double> m(2, 4, 4, 4, rng, "down");
        check_module_grads(m, {2, 2, 4, 4}, rng);
    }
}

TEST_CASE("finite-difference gradients: full small network through the CE loss") {
    const MacroConfig macro{.stages = 3, .cells_per_stage = 1, .init_channels = 3,
                            .num_classes = 4, .image_hw = 8, .image_channels = 3};
    CellSpec spec;
    spec.edge_ops = {OpKind::conv1x1, OpKind::avgpool3x3, OpKind::skip_connection,
                     OpKind::conv3x3, OpKind::zeroize, OpKind::conv3x3};
    Network<double> net = build_network<double>(spec, macro, 5);
    Rng rng(21);
    Tensor<double> x = random_tensor({2, 3, 8, 8}, rng);
    const std::vector<int> labels = {1, 3};

    net.zero_grad();
    loss_and_backward(net, x, labels, true);
    std::vector<ParamGroup<double>*> params = net.params();

    const double h = 1e-4;
    auto loss_at = [&]() {
        Tensor<double> logits = net.forward(x, true);
        return softmax_cross_entropy(logits, labels).loss;
    };
    Rng pick(99);
    int checked = 0;
    for (auto* p : params) {
        // sample a few entries per tensor to keep the suite under a minute
        const std::size_t n = p->value.values.size();
        for (int t = 0; t < 3; ++t) {
            const std::size_t i = static_cast<std::size_t>(pick.below(n));
            const double keep = p->value.values[i];
            p->value.values[i] = keep + h;
            const double lp = loss_at();
            p->value.values[i] = keep - h;
            const double lm = loss_at();
            p->value.values[i] = keep;
            const double fd = (lp - lm) / (2.0 * h);
            CHECK_MESSAGE(close_rel(p->grad.values[i], fd, 1e-4),
                          p->name << "[" << i << "]: " << p->grad.values[i] << " vs " << fd);
            ++checked;
        }
    }
    CHECK(checked > 30);
}

TEST_CASE("freezing: frozen groups are bit-identical across training steps") {
    const MacroConfig macro{.stages = 3, .cells_per_stage = 1, .init_channels = 4,
                            .num_classes = 4, .image_hw = 8, .image_channels = 3};
    Network<float> net = build_network<float>(decode(ArchId{8888}), macro, 3);
    const int boundary = freeze_boundary_for_fraction(net, 0.53);
    net.freeze_up_to_cell(boundary);

    std::vector<float> before;
    std::vector<ParamGroup<float>*> params = net.params();
    for (auto* p : params)
        if (p->frozen) before.insert(before.end(), p->value.values.begin(), p->value.values.end());
    REQUIRE(!before.empty());

    Rng rng(4);
    SgdConfig cfg;
    cfg.total_steps = 10;
    for (int s = 0; s < 5; ++s) {
        Tensor<float> x({4, 3, 8, 8});
        for (auto& v : x.values) v = static_cast<float>(rng.normal());
        std::vector<int> labels = {0, 1, 2, 3};
        net.zero_grad();
        loss_and_backward(net, x, labels, true);
        sgd_step(params, 0.05, cfg);
    }
    std::vector<float> after;
    for (auto* p : params)
        if (p->frozen) after.insert(after.end(), p->value.values.begin(), p->value.values.end());
    CHECK(before == after);

    // frozen groups received no gradient at all
    for (auto* p : params)
        if (p->frozen)
            for (float g : p->grad.values) CHECK(g == 0.0f);
}

TEST_CASE("all-frozen network still yields a loss, with zero gradients") {
    const MacroConfig macro{.stages = 2, .cells_per_stage = 1, .init_channels = 4,
                            .num_classes = 3, .image_hw = 8, .image_channels = 3};
    Network<float> net = build_network<float>(decode(ArchId{444}), macro, 9);
    for (auto& b : net.blocks) b->set_frozen(true);
    net.frozen_blocks = static_cast<int>(net.blocks.size());
    Rng rng(5);
    Tensor<float> x({2, 3, 8, 8});
    for (auto& v : x.values) v = static_cast<float>(rng.normal());
    LossResult<float> r = loss_and_backward(net, x, {0, 2}, true);
    CHECK(std::isfinite(r.loss));
    for (auto* p : net.params())
        for (float g : p->grad.values) CHECK(g == 0.0f);
}

TEST_CASE("determinism: same seed and config give bit-identical parameters after training") {
    const MacroConfig macro{.stages = 3, .cells_per_stage = 1, .init_channels = 4,
                            .num_classes = 4, .image_hw = 8, .image_channels = 3};
    auto run = [&]() {
        Network<float> net = build_network<float>(decode(ArchId{1234}), macro, 77);
        Rng rng(42);
        SgdConfig cfg;
        cfg.total_steps = 8;
        std::vector<ParamGroup<float>*> params = net.params();
        for (int s = 0; s < 8; ++s) {
            Tensor<float> x({4, 3, 8, 8});
            for (auto& v : x.values) v = static_cast<float>(rng.normal());
            std::vector<int> labels = {0, 1, 2, 3};
            net.zero_grad();
            loss_and_backward(net, x, labels, true);
            sgd_step(params, cosine_lr(s, cfg), cfg);
        }
        return net.get_flat_params();
    };
    CHECK(run() == run());
}

TEST_CASE("batchnorm running stats approach batch stats under repetition") {
    BatchNorm2d<float> bn(2, 4, 4, "bn");
    Rng rng(8);
    Tensor<float> x({4, 2, 4, 4});
    for (auto& v : x.values) v = static_cast<float>(2.0 * rng.normal() + 1.0);
    Tensor<float> train_out;
    for (int i = 0; i < 200; ++i) train_out = bn.forward(x, true);
    Tensor<float> eval_out = bn.forward(x, false);
    for (std::size_t i = 0; i < train_out.values.size(); ++i)
        CHECK(std::abs(train_out.values[i] - eval_out.values[i]) < 1e-2);
}

TEST_CASE("batchnorm training mode rejects batch of one") {
    BatchNorm2d<float> bn(2, 4, 4, "bn");
    Tensor<float> x({1, 2, 4, 4});
    x.fill(1.0f);
    CHECK_THROWS_AS(bn.forward(x, true), ShapeError);
    CHECK_NOTHROW(bn.forward(x, false));
}

TEST_CASE("non-finite loss raises a numeric error naming the block") {
    const MacroConfig macro{.stages = 2, .cells_per_stage = 1, .init_channels = 4,
                            .num_classes = 3, .image_hw = 8, .image_channels = 3};
    Network<float> net = build_network<float>(decode(ArchId{2222}), macro, 1);
    for (auto* p : net.params())
        for (auto& v : p->value.values) v *= 1e30f;
    Tensor<float> x({2, 3, 8, 8});
    x.fill(1.0f);
    CHECK_THROWS_AS(loss_and_backward(net, x, {0, 1}, true), NumericError);
}
