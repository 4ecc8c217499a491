#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "fear/network.hpp"

namespace fear {

enum class ProxyKind { grad_norm, snip, grasp, fisher, synflow, synflow_bn, jacob_cov };

inline const char* proxy_name(ProxyKind k) {
    switch (k) {
        case ProxyKind::grad_norm: return "grad_norm";
        case ProxyKind::snip: return "snip";
        case ProxyKind::grasp: return "grasp";
        case ProxyKind::fisher: return "fisher";
        case ProxyKind::synflow: return "synflow";
        case ProxyKind::synflow_bn: return "synflow_bn";
        case ProxyKind::jacob_cov: return "jacob_cov";
    }
    throw DomainError("bad proxy kind");
}

inline ProxyKind proxy_from_name(const std::string& s) {
    for (ProxyKind k : {ProxyKind::grad_norm, ProxyKind::snip, ProxyKind::grasp,
                        ProxyKind::fisher, ProxyKind::synflow, ProxyKind::synflow_bn,
                        ProxyKind::jacob_cov})
        if (s == proxy_name(k)) return k;
    throw FormatError("unknown proxy: " + s);
}

inline const std::vector<ProxyKind>& all_proxies() {
    static const std::vector<ProxyKind> kAll = {
        ProxyKind::grad_norm, ProxyKind::snip,       ProxyKind::grasp,    ProxyKind::fisher,
        ProxyKind::synflow,   ProxyKind::synflow_bn, ProxyKind::jacob_cov};
    return kAll;
}

namespace detail {

// Restores parameters, batchnorm running statistics, and gradient buffers of
// a network when leaving scope: proxies must not perturb the checkpoint.
template <typename T>
class NetStateGuard {
public:
    explicit NetStateGuard(Network<T>& net) : net_(net), state_(net.save_state()) {}
    ~NetStateGuard() {
        net_.load_state(state_);
        net_.zero_grad();
    }
    NetStateGuard(const NetStateGuard&) = delete;
    NetStateGuard& operator=(const NetStateGuard&) = delete;

private:
    Network<T>& net_;
    std::vector<double> state_;
};

template <typename T>
void set_bn_identity(Network<T>& net, bool on) {
    net.visit([&](Module<T>& m) {
        if (auto* bn = dynamic_cast<BatchNorm2d<T>*>(&m)) bn->set_identity(on);
    });
}

template <typename T>
void backward_batch(Network<T>& net, const Tensor<T>& images, const std::vector<int>& labels) {
    net.zero_grad();
    loss_and_backward(net, images, labels, true);
}

// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
inline std::vector<double> symmetric_eigenvalues(std::vector<double> a, int n) {
    auto at = [&](int i, int j) -> double& { return a[static_cast<std::size_t>(i) * n + j]; };
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) off += at(i, j) * at(i, j);
        if (off < 1e-24) break;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) {
                const double apq = at(p, q);
                if (std::abs(apq) < 1e-18) continue;
                const double theta = (at(q, q) - at(p, p)) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (int k = 0; k < n; ++k) {
                    const double akp = at(k, p), akq = at(k, q);
                    at(k, p) = c * akp - s * akq;
                    at(k, q) = s * akp + c * akq;
                }
                for (int k = 0; k < n; ++k) {
                    const double apk = at(p, k), aqk = at(q, k);
                    at(p, k) = c * apk - s * aqk;
                    at(q, k) = s * apk + c * aqk;
                }
            }
    }
    std::vector<double> ev(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) ev[static_cast<std::size_t>(i)] = at(i, i);
    return ev;
}

}  // namespace detail

// Weight-saliency proxies. The network is returned to its entry state.
template <typename T>
double saliency_score(ProxyKind kind, Network<T>& net, const Tensor<T>& images,
                      const std::vector<int>& labels) {
    if (kind == ProxyKind::jacob_cov)
        throw DomainError("jacob_cov is not a saliency proxy; use jacob_cov_score");
    detail::NetStateGuard<T> guard(net);
    double score = 0.0;

    if (kind == ProxyKind::synflow || kind == ProxyKind::synflow_bn) {
        // Linearize: parameters replaced by absolute values, all-ones input,
        // R = sum of logits, score = sum of theta_abs * dR/dtheta_abs.
        for (auto* p : net.params())
            for (auto& v : p->value.values) v = v < T(0) ? -v : v;
        const bool bn_training = kind == ProxyKind::synflow_bn;
        if (!bn_training) detail::set_bn_identity(net, true);
        Tensor<T> ones(images.shape);
        ones.fill(T(1));
        Tensor<T> logits = net.forward(ones, bn_training);
        Tensor<T> dlogits(logits.shape);
        dlogits.fill(T(1));
        net.zero_grad();
        net.backward(dlogits);
        for (auto* p : net.params())
            for (std::size_t i = 0; i < p->value.values.size(); ++i)
                score += static_cast<double>(p->value.values[i]) * p->grad.values[i];
        if (!bn_training) detail::set_bn_identity(net, false);
    } else if (kind == ProxyKind::grad_norm) {
        detail::backward_batch(net, images, labels);
        for (auto* p : net.params()) {
            double sq = 0.0;
            for (T g : p->grad.values) sq += static_cast<double>(g) * g;
            score += std::sqrt(sq);
        }
    } else if (kind == ProxyKind::snip) {
        detail::backward_batch(net, images, labels);
        for (auto* p : net.params())
            for (std::size_t i = 0; i < p->value.values.size(); ++i)
                score += std::abs(static_cast<double>(p->value.values[i]) * p->grad.values[i]);
    } else if (kind == ProxyKind::fisher) {
        std::vector<ReLU<T>*> relus;
        net.visit([&](Module<T>& m) {
            if (auto* r = dynamic_cast<ReLU<T>*>(&m)) {
                r->capture_activation_grads = true;
                relus.push_back(r);
            }
        });
        detail::backward_batch(net, images, labels);
        for (auto* r : relus) {
            for (double s : r->fisher_channel_sums) score += s * s;
            r->capture_activation_grads = false;
            r->fisher_channel_sums.clear();
        }
    } else {  // grasp
        // Hv by central differences of the gradient in direction g itself;
        // score = sum of -(Hg * theta).
        detail::backward_batch(net, images, labels);
        const std::vector<double> g0 = net.get_flat_grads();
        const std::vector<double> theta = net.get_flat_params();
        double max_abs = 0.0;
        for (double v : theta) max_abs = std::max(max_abs, std::abs(v));
        const double h = 1e-3 * (1.0 + max_abs);
        std::vector<double> shifted(theta.size());
        for (std::size_t i = 0; i < theta.size(); ++i) shifted[i] = theta[i] + h * g0[i];
        net.set_flat_params(shifted);
        detail::backward_batch(net, images, labels);
        const std::vector<double> gp = net.get_flat_grads();
        for (std::size_t i = 0; i < theta.size(); ++i) shifted[i] = theta[i] - h * g0[i];
        net.set_flat_params(shifted);
        detail::backward_batch(net, images, labels);
        const std::vector<double> gm = net.get_flat_grads();
        for (std::size_t i = 0; i < theta.size(); ++i) {
            const double hv = (gp[i] - gm[i]) / (2.0 * h);
            score -= hv * theta[i];
        }
    }

    if (!std::isfinite(score))
        throw NumericError(std::string("non-finite proxy score: ") + proxy_name(kind));
    return score;
}

// Builds the correlation matrix from per-input Jacobian rows.
// Exposed separately so the closed-form oracle tests can target it.
inline std::vector<double> jacobian_correlation(const std::vector<std::vector<double>>& jac) {
    const int n = static_cast<int>(jac.size());
    std::vector<std::vector<double>> centered(jac.size());
    std::vector<double> norms(jac.size(), 0.0);
    for (int i = 0; i < n; ++i) {
        const auto& j = jac[static_cast<std::size_t>(i)];
        double mean = 0.0;
        for (double v : j) mean += v;
        mean /= static_cast<double>(j.size());
        auto& c = centered[static_cast<std::size_t>(i)];
        c.resize(j.size());
        double sq = 0.0;
        for (std::size_t k = 0; k < j.size(); ++k) {
            c[k] = j[k] - mean;
            sq += c[k] * c[k];
        }
        norms[static_cast<std::size_t>(i)] = std::sqrt(sq);
    }
    std::vector<double> corr(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) {
        corr[static_cast<std::size_t>(i) * n + i] = 1.0;
        for (int j = i + 1; j < n; ++j) {
            const double ni = norms[static_cast<std::size_t>(i)];
            const double nj = norms[static_cast<std::size_t>(j)];
            double v = 0.0;
            if (ni > 0.0 && nj > 0.0) {
                double dot = 0.0;
                const auto& ci = centered[static_cast<std::size_t>(i)];
                const auto& cj = centered[static_cast<std::size_t>(j)];
                for (std::size_t k = 0; k < ci.size(); ++k) dot += ci[k] * cj[k];
                v = dot / (ni * nj);
            }
            corr[static_cast<std::size_t>(i) * n + j] = v;
            corr[static_cast<std::size_t>(j) * n + i] = v;
        }
    }
    return corr;
}

inline double jacob_cov_from_correlation(const std::vector<double>& corr, int n) {
    constexpr double kEps = 1e-5;
    std::vector<double> ev = detail::symmetric_eigenvalues(corr, n);
    double score = 0.0;
    for (double l : ev) {
        if (l < 0.0) l = 0.0;  // correlation matrices are PSD up to roundoff
        score -= std::log(l + kEps) + 1.0 / (l + kEps);
    }
    if (!std::isfinite(score)) throw NumericError("non-finite proxy score: jacob_cov");
    return score;
}

// Correlation of per-input Jacobians of the summed logits; higher scores
// mean less correlated local linear maps.
template <typename T>
double jacob_cov_score(Network<T>& net, const Tensor<T>& images) {
    const int n = images.dim(0);
    if (n < 2) throw DomainError("jacob_cov: needs a batch of >= 2 inputs");
    detail::NetStateGuard<T> guard(net);
    Tensor<T> logits = net.forward(images, true);
    Tensor<T> dlogits(logits.shape);
    dlogits.fill(T(1));
    net.zero_grad();
    Tensor<T> gx = net.backward(dlogits, true);
    if (gx.values.empty()) throw DomainError("jacob_cov: input gradient unavailable");
    const std::size_t per = gx.values.size() / static_cast<std::size_t>(n);
    std::vector<std::vector<double>> jac(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        auto& row = jac[static_cast<std::size_t>(i)];
        row.resize(per);
        for (std::size_t k = 0; k < per; ++k)
            row[k] = static_cast<double>(gx.values[static_cast<std::size_t>(i) * per + k]);
    }
    return jacob_cov_from_correlation(jacobian_correlation(jac), n);
}

struct ProxyScores {
    double synflow = 0.0;
    double jacob_cov = 0.0;
    double snip = 0.0;
};

// Copeland pairwise-majority ranking over {synflow, jacob_cov, snip}.
// Returns indices into `scores`, best first; ties broken by synflow score
// then by arch id (the caller supplies ids aligned with scores).
inline std::vector<int> vote_ranking(const std::vector<ProxyScores>& scores,
                                     const std::vector<int>& arch_ids) {
    const int n = static_cast<int>(scores.size());
    if (arch_ids.size() != scores.size()) throw ShapeError("vote: ids/scores length mismatch");
    std::vector<int> wins(static_cast<std::size_t>(n), 0);
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            int votes_i = 0;
            if (scores[static_cast<std::size_t>(i)].synflow >
                scores[static_cast<std::size_t>(j)].synflow)
                ++votes_i;
            if (scores[static_cast<std::size_t>(i)].jacob_cov >
                scores[static_cast<std::size_t>(j)].jacob_cov)
                ++votes_i;
            if (scores[static_cast<std::size_t>(i)].snip >
                scores[static_cast<std::size_t>(j)].snip)
                ++votes_i;
            if (votes_i >= 2)
                ++wins[static_cast<std::size_t>(i)];
            else
                ++wins[static_cast<std::size_t>(j)];
        }
    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        const auto ia = static_cast<std::size_t>(a), ib = static_cast<std::size_t>(b);
        if (wins[ia] != wins[ib]) return wins[ia] > wins[ib];
        if (scores[ia].synflow != scores[ib].synflow)
            return scores[ia].synflow > scores[ib].synflow;
        return arch_ids[ia] < arch_ids[ib];
    });
    return order;
}

}  // namespace fear
