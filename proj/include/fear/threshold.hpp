#pragma once

#include <string>
#include <vector>

#include "fear/hog.hpp"
#include "fear/network.hpp"
#include "fear/sgd.hpp"

namespace fear {

enum class ScoreMetric { train_accuracy, val_accuracy };

inline const char* score_metric_name(ScoreMetric m) {
    return m == ScoreMetric::train_accuracy ? "train_accuracy" : "val_accuracy";
}
inline ScoreMetric score_metric_from_name(const std::string& s) {
    if (s == "train_accuracy") return ScoreMetric::train_accuracy;
    if (s == "val_accuracy") return ScoreMetric::val_accuracy;
    throw FormatError("unknown score metric: " + s);
}

struct ThresholdConfig {
    HogConfig hog;
    int hidden1 = 256;
    int hidden2 = 128;
    int epochs = 20;
    int batch = 64;
    double lr = 0.05;
    std::uint64_t seed = 1;
    ScoreMetric target_metric = ScoreMetric::train_accuracy;

    void validate() const {
        hog.validate();
        if (hidden1 <= 0 || hidden2 <= 0) throw DomainError("threshold: hidden sizes must be positive");
        if (epochs <= 0 || batch <= 0 || lr <= 0.0)
            throw DomainError("threshold: epochs, batch, lr must be positive");
    }
};

struct ThresholdResult {
    double tau = 0.0;
    double final_train_accuracy = 0.0;
    std::vector<std::string> warnings;
};

// Trains the paper's shallow learner, HoG features into a two-hidden-layer
// MLP, with the engine's SGD at a constant learning rate, and returns the
// final target metric as the threshold accuracy tau.
template <typename T>
ThresholdResult compute_threshold(const ImageDataset& ds, const ThresholdConfig& cfg) {
    cfg.validate();
    ds.validate();
    if (ds.num_classes < 2) throw DomainError("threshold: dataset needs >= 2 classes");
    if (static_cast<int>(ds.train_idx.size()) < cfg.batch)
        throw DomainError("threshold: train split smaller than one batch");
    if (cfg.target_metric == ScoreMetric::val_accuracy && ds.val_idx.empty())
        throw DomainError("threshold: val metric requested but dataset has no val split");

    auto featurize = [&](const std::vector<int>& idx) {
        std::vector<std::vector<double>> out;
        out.reserve(idx.size());
        for (int i : idx) out.push_back(hog_features(ds, i, cfg.hog));
        return out;
    };
    const std::vector<std::vector<double>> ftr = featurize(ds.train_idx);
    const int d = static_cast<int>(ftr.front().size());

    Rng init_rng(stream_seed(cfg.seed, "threshold-init", 0));
    Sequential<T> mlp;
    mlp.add(std::make_unique<Linear<T>>(d, cfg.hidden1, init_rng, "thr.fc1"));
    mlp.add(std::make_unique<ReLU<T>>("thr.relu1"));
    mlp.add(std::make_unique<Linear<T>>(cfg.hidden1, cfg.hidden2, init_rng, "thr.fc2"));
    mlp.add(std::make_unique<ReLU<T>>("thr.relu2"));
    mlp.add(std::make_unique<Linear<T>>(cfg.hidden2, ds.num_classes, init_rng, "thr.fc3"));
    std::vector<ParamGroup<T>*> params;
    mlp.collect_params(params);

    SgdConfig sgd;
    sgd.lr_max = cfg.lr;
    sgd.lr_min = cfg.lr;
    sgd.total_steps = 1;

    auto batch_tensor = [&](const std::vector<std::vector<double>>& feats,
                            const std::vector<int>& order, int begin, int count,
                            const std::vector<int>& src_idx, std::vector<int>& labels) {
        Tensor<T> x({count, d});
        labels.resize(static_cast<std::size_t>(count));
        for (int b = 0; b < count; ++b) {
            const int k = order[static_cast<std::size_t>(begin + b)];
            labels[static_cast<std::size_t>(b)] = ds.labels[static_cast<std::size_t>(
                src_idx[static_cast<std::size_t>(k)])];
            for (int j = 0; j < d; ++j)
                x.at(b, j) = static_cast<T>(feats[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)]);
        }
        return x;
    };

    auto accuracy_on = [&](const std::vector<std::vector<double>>& feats,
                           const std::vector<int>& src_idx) {
        const int n = static_cast<int>(feats.size());
        std::vector<int> order(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
        int correct = 0;
        for (int begin = 0; begin < n; begin += cfg.batch) {
            const int count = std::min(cfg.batch, n - begin);
            std::vector<int> labels;
            Tensor<T> x = batch_tensor(feats, order, begin, count, src_idx, labels);
            Tensor<T> logits = mlp.forward(x, false);
            for (int b = 0; b < count; ++b) {
                int argmax = 0;
                for (int j = 1; j < ds.num_classes; ++j)
                    if (logits.at(b, j) > logits.at(b, argmax)) argmax = j;
                if (argmax == labels[static_cast<std::size_t>(b)]) ++correct;
            }
        }
        return static_cast<double>(correct) / static_cast<double>(n);
    };

    Rng shuffle_rng(stream_seed(cfg.seed, "threshold-shuffle", 0));
    const int n = static_cast<int>(ftr.size());
    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    for (int ep = 0; ep < cfg.epochs; ++ep) {
        shuffle_rng.shuffle(order);
        for (int begin = 0; begin + cfg.batch <= n; begin += cfg.batch) {
            std::vector<int> labels;
            Tensor<T> x = batch_tensor(ftr, order, begin, cfg.batch, ds.train_idx, labels);
            Tensor<T> logits = mlp.forward(x, true);
            LossResult<T> r = softmax_cross_entropy(logits, labels);
            if (!std::isfinite(r.loss)) throw NumericError("threshold: non-finite loss");
            for (auto* p : params) p->grad.fill(T(0));
            mlp.backward(r.dlogits, false);
            sgd_step(params, cfg.lr, sgd);
        }
    }

    ThresholdResult res;
    res.final_train_accuracy = accuracy_on(ftr, ds.train_idx);
    if (cfg.target_metric == ScoreMetric::train_accuracy) {
        res.tau = res.final_train_accuracy;
    } else {
        const std::vector<std::vector<double>> fva = featurize(ds.val_idx);
        res.tau = accuracy_on(fva, ds.val_idx);
    }
    const double chance = 1.0 / static_cast<double>(ds.num_classes);
    if (!(res.tau > chance && res.tau < 1.0))
        res.warnings.push_back("threshold outside (chance, 1): " + std::to_string(res.tau));
    return res;
}

}  // namespace fear
