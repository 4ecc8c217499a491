#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "fear/rng.hpp"
#include "fear/tensor.hpp"

namespace fear {

enum class ParamKind { conv_weight, bn_gamma, bn_beta, linear_weight, linear_bias };

template <typename T>
struct ParamGroup {
    Tensor<T> value;
    Tensor<T> grad;
    Tensor<T> momentum;
    ParamKind kind;
    bool frozen = false;
    std::string name;

    void init(std::vector<int> shape, ParamKind k, std::string n) {
        value = Tensor<T>(shape);
        grad = Tensor<T>(shape);
        momentum = Tensor<T>(shape);
        kind = k;
        name = std::move(n);
    }
};

template <typename T>
class Module {
public:
    virtual ~Module() = default;

    // Forward caches whatever backward needs; one forward per backward.
    virtual Tensor<T> forward(const Tensor<T>& x, bool training) = 0;

    // Accumulates parameter gradients; returns grad w.r.t. input when
    // need_input_grad is set (empty tensor otherwise).
    virtual Tensor<T> backward(const Tensor<T>& grad_out, bool need_input_grad) = 0;

    virtual void collect_params(std::vector<ParamGroup<T>*>& out) { (void)out; }

    // Multiply-accumulate estimate per sample for one forward pass.
    virtual std::int64_t forward_macs() const { return 0; }

    virtual const char* kind_name() const = 0;

    // Depth-first visit of this module and all children.
    virtual void visit(const std::function<void(Module<T>&)>& f) { f(*this); }

    // Freezing hook; batchnorm overrides to stop stat updates.
    virtual void set_frozen(bool frozen) {
        std::vector<ParamGroup<T>*> ps;
        collect_params(ps);
        for (auto* p : ps) p->frozen = frozen;
    }
};

template <typename T>
void kaiming_normal(Tensor<T>& w, int fan_in, Rng& rng) {
    double std = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (auto& v : w.values) v = static_cast<T>(rng.normal() * std);
}

// 2-d convolution, zero padding, no bias.
template <typename T>
class Conv2d : public Module<T> {
public:
    Conv2d(int c_in, int c_out, int k, int stride, int pad, int h_in, int w_in, Rng& rng,
           const std::string& name)
        : c_in_(c_in), c_out_(c_out), k_(k), stride_(stride), pad_(pad) {
        weight_.init({c_out, c_in, k, k}, ParamKind::conv_weight, name + ".weight");
        kaiming_normal(weight_.value, c_in * k * k, rng);
        h_out_ = (h_in + 2 * pad - k) / stride + 1;
        w_out_ = (w_in + 2 * pad - k) / stride + 1;
        macs_ = static_cast<std::int64_t>(k) * k * c_in * c_out * h_out_ * w_out_;
    }

    // im2col + GEMM per sample; the column buffer is cached for backward.
    Tensor<T> forward(const Tensor<T>& x, bool) override {
        if (x.rank() != 4 || x.dim(1) != c_in_)
            throw ShapeError("conv2d: bad input shape " + shape_str(x));
        input_shape_ = x.shape;
        const int n = x.dim(0), ih = x.dim(2), iw = x.dim(3);
        const int oh = (ih + 2 * pad_ - k_) / stride_ + 1;
        const int ow = (iw + 2 * pad_ - k_) / stride_ + 1;
        oh_ = oh;
        ow_ = ow;
        const int kk = c_in_ * k_ * k_;
        const std::size_t ohw = static_cast<std::size_t>(oh) * ow;
        col_.assign(static_cast<std::size_t>(n) * kk * ohw, T(0));
        Tensor<T> y({n, c_out_, oh, ow});
        for (int in = 0; in < n; ++in) {
            T* col = &col_[static_cast<std::size_t>(in) * kk * ohw];
            int krow = 0;
            for (int ci = 0; ci < c_in_; ++ci)
                for (int kh = 0; kh < k_; ++kh)
                    for (int kw = 0; kw < k_; ++kw, ++krow) {
                        T* dst = col + static_cast<std::size_t>(krow) * ohw;
                        for (int r = 0; r < oh; ++r) {
                            const int hy = r * stride_ + kh - pad_;
                            if (hy < 0 || hy >= ih) continue;
                            const T* xrow = &x.at(in, ci, hy, 0);
                            int c0 = 0, c1 = ow;
                            clamp_cols(kw, iw, ow, c0, c1);
                            T* drow = dst + static_cast<std::size_t>(r) * ow;
                            for (int c = c0; c < c1; ++c)
                                drow[c] = xrow[c * stride_ + kw - pad_];
                        }
                    }
            for (int co = 0; co < c_out_; ++co) {
                T* yrow = &y.at(in, co, 0, 0);
                const T* wrow = &weight_.value.at(co, 0, 0, 0);
                for (int kr = 0; kr < kk; ++kr) {
                    const T wv = wrow[kr];
                    if (wv == T(0)) continue;
                    const T* crow = col + static_cast<std::size_t>(kr) * ohw;
                    for (std::size_t i = 0; i < ohw; ++i) yrow[i] += wv * crow[i];
                }
            }
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& gy, bool need_input_grad) override {
        const int n = input_shape_[0], ih = input_shape_[2], iw = input_shape_[3];
        const int oh = oh_, ow = ow_;
        const int kk = c_in_ * k_ * k_;
        const std::size_t ohw = static_cast<std::size_t>(oh) * ow;
        Tensor<T> gx;
        if (need_input_grad) gx = Tensor<T>(input_shape_);
        std::vector<T> gcol;
        if (need_input_grad) gcol.resize(static_cast<std::size_t>(kk) * ohw);
        for (int in = 0; in < n; ++in) {
            const T* col = &col_[static_cast<std::size_t>(in) * kk * ohw];
            // dW += gy_n * col_n^T
            for (int co = 0; co < c_out_; ++co) {
                const T* grow = &gy.at(in, co, 0, 0);
                T* wg = &weight_.grad.at(co, 0, 0, 0);
                for (int kr = 0; kr < kk; ++kr)
                    wg[kr] += dot_unrolled(grow, col + static_cast<std::size_t>(kr) * ohw, ohw);
            }
            if (!need_input_grad) continue;
            // dcol = W^T * gy_n, then col2im scatter-add
            std::fill(gcol.begin(), gcol.end(), T(0));
            for (int co = 0; co < c_out_; ++co) {
                const T* grow = &gy.at(in, co, 0, 0);
                const T* wrow = &weight_.value.at(co, 0, 0, 0);
                for (int kr = 0; kr < kk; ++kr) {
                    const T wv = wrow[kr];
                    if (wv == T(0)) continue;
                    T* crow = &gcol[static_cast<std::size_t>(kr) * ohw];
                    for (std::size_t i = 0; i < ohw; ++i) crow[i] += wv * grow[i];
                }
            }
            int krow = 0;
            for (int ci = 0; ci < c_in_; ++ci)
                for (int kh = 0; kh < k_; ++kh)
                    for (int kw = 0; kw < k_; ++kw, ++krow) {
                        const T* src = &gcol[static_cast<std::size_t>(krow) * ohw];
                        for (int r = 0; r < oh; ++r) {
                            const int hy = r * stride_ + kh - pad_;
                            if (hy < 0 || hy >= ih) continue;
                            T* gxrow = &gx.at(in, ci, hy, 0);
                            int c0 = 0, c1 = ow;
                            clamp_cols(kw, iw, ow, c0, c1);
                            const T* srow = src + static_cast<std::size_t>(r) * ow;
                            for (int c = c0; c < c1; ++c)
                                gxrow[c * stride_ + kw - pad_] += srow[c];
                        }
                    }
        }
        return gx;
    }

    void collect_params(std::vector<ParamGroup<T>*>& out) override { out.push_back(&weight_); }
    std::int64_t forward_macs() const override { return macs_; }
    const char* kind_name() const override { return "conv2d"; }

    ParamGroup<T>& weight() { return weight_; }

private:
    void clamp_cols(int kw, int iw, int ow, int& c0, int& c1) const {
        // smallest/largest output col whose input col is in range
        while (c0 < ow && c0 * stride_ + kw - pad_ < 0) ++c0;
        while (c1 > c0 && (c1 - 1) * stride_ + kw - pad_ >= iw) --c1;
    }

    int c_in_, c_out_, k_, stride_, pad_;
    int h_out_, w_out_;
    int oh_ = 0, ow_ = 0;
    std::int64_t macs_;
    ParamGroup<T> weight_;
    std::vector<int> input_shape_;
    std::vector<T> col_;
};

// Batch normalization over (N, H, W) per channel, EMA running stats.
template <typename T>
class BatchNorm2d : public Module<T> {
public:
    explicit BatchNorm2d(int channels, int h, int w, const std::string& name, double ema = 0.1)
        : c_(channels), ema_(ema) {
        gamma_.init({channels}, ParamKind::bn_gamma, name + ".gamma");
        beta_.init({channels}, ParamKind::bn_beta, name + ".beta");
        gamma_.value.fill(T(1));
        running_mean_ = Tensor<T>({channels});
        running_var_ = Tensor<T>({channels});
        running_var_.fill(T(1));
        macs_ = static_cast<std::int64_t>(2) * channels * h * w;
    }

    Tensor<T> forward(const Tensor<T>& x, bool training) override {
        if (x.rank() != 4 || x.dim(1) != c_)
            throw ShapeError("batchnorm2d: bad input shape " + shape_str(x));
        const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
        const bool use_batch_stats = training && !frozen_ && !identity_;
        if (use_batch_stats && n < 2)
            throw ShapeError("batchnorm2d: training mode requires batch >= 2");
        if (identity_) {
            xhat_ = x;  // pass-through; backward is identity too
            return x;
        }
        const std::int64_t cnt = static_cast<std::int64_t>(n) * h * w;
        Tensor<T> y(x.shape);
        xhat_ = Tensor<T>(x.shape);
        invstd_.assign(c_, 0.0);
        count_ = cnt;
        for (int c = 0; c < c_; ++c) {
            double mean, var;
            if (use_batch_stats) {
                double s = 0.0, s2 = 0.0;
                for (int in = 0; in < n; ++in) {
                    const T* row = &x.at(in, c, 0, 0);
                    for (std::int64_t i = 0; i < static_cast<std::int64_t>(h) * w; ++i) {
                        s += row[i];
                        s2 += static_cast<double>(row[i]) * row[i];
                    }
                }
                mean = s / static_cast<double>(cnt);
                var = s2 / static_cast<double>(cnt) - mean * mean;
                if (var < 0.0) var = 0.0;
                if (update_running_) {
                    running_mean_.values[c] =
                        static_cast<T>((1.0 - ema_) * running_mean_.values[c] + ema_ * mean);
                    running_var_.values[c] =
                        static_cast<T>((1.0 - ema_) * running_var_.values[c] + ema_ * var);
                }
            } else {
                mean = running_mean_.values[c];
                var = running_var_.values[c];
            }
            const double inv = 1.0 / std::sqrt(var + kEps);
            invstd_[c] = inv;
            const T g = gamma_.value.values[c], b = beta_.value.values[c];
            for (int in = 0; in < n; ++in) {
                const T* row = &x.at(in, c, 0, 0);
                T* xh = &xhat_.at(in, c, 0, 0);
                T* yr = &y.at(in, c, 0, 0);
                for (std::int64_t i = 0; i < static_cast<std::int64_t>(h) * w; ++i) {
                    xh[i] = static_cast<T>((row[i] - mean) * inv);
                    yr[i] = g * xh[i] + b;
                }
            }
        }
        batch_stats_used_ = use_batch_stats;
        return y;
    }

    Tensor<T> backward(const Tensor<T>& gy, bool need_input_grad) override {
        if (identity_) return need_input_grad ? gy : Tensor<T>();
        const int n = gy.dim(0), h = gy.dim(2), w = gy.dim(3);
        const std::int64_t hw = static_cast<std::int64_t>(h) * w;
        Tensor<T> gx;
        if (need_input_grad) gx = Tensor<T>(gy.shape);
        for (int c = 0; c < c_; ++c) {
            double sum_gy = 0.0, sum_gy_xhat = 0.0;
            for (int in = 0; in < n; ++in) {
                const T* g = &gy.at(in, c, 0, 0);
                const T* xh = &xhat_.at(in, c, 0, 0);
                for (std::int64_t i = 0; i < hw; ++i) {
                    sum_gy += g[i];
                    sum_gy_xhat += static_cast<double>(g[i]) * xh[i];
                }
            }
            gamma_.grad.values[c] += static_cast<T>(sum_gy_xhat);
            beta_.grad.values[c] += static_cast<T>(sum_gy);
            if (!need_input_grad) continue;
            const double g = gamma_.value.values[c];
            const double inv = invstd_[c];
            if (batch_stats_used_) {
                const double m = static_cast<double>(count_);
                for (int in = 0; in < n; ++in) {
                    const T* gr = &gy.at(in, c, 0, 0);
                    const T* xh = &xhat_.at(in, c, 0, 0);
                    T* gxr = &gx.at(in, c, 0, 0);
                    for (std::int64_t i = 0; i < hw; ++i)
                        gxr[i] = static_cast<T>(
                            g * inv * (gr[i] - sum_gy / m - xh[i] * sum_gy_xhat / m));
                }
            } else {
                for (int in = 0; in < n; ++in) {
                    const T* gr = &gy.at(in, c, 0, 0);
                    T* gxr = &gx.at(in, c, 0, 0);
                    for (std::int64_t i = 0; i < hw; ++i)
                        gxr[i] = static_cast<T>(g * inv * gr[i]);
                }
            }
        }
        return gx;
    }

    void collect_params(std::vector<ParamGroup<T>*>& out) override {
        out.push_back(&gamma_);
        out.push_back(&beta_);
    }
    std::int64_t forward_macs() const override { return macs_; }
    const char* kind_name() const override { return "batchnorm2d"; }

    // Frozen batchnorm uses running stats even in training mode and stops
    // updating them: the extracted features must be fixed.
    void set_frozen(bool frozen) override {
        Module<T>::set_frozen(frozen);
        frozen_ = frozen;
        if (frozen) update_running_ = false;
    }

    void set_update_running(bool u) { update_running_ = u; }
    // Identity transform (gamma=1, beta=0, mu=0, var=1) used by synflow.
    void set_identity(bool on) { identity_ = on; }

    Tensor<T>& running_mean() { return running_mean_; }
    Tensor<T>& running_var() { return running_var_; }

    static constexpr double kEps = 1e-5;

private:
    int c_;
    double ema_;
    std::int64_t macs_;
    ParamGroup<T> gamma_, beta_;
    Tensor<T> running_mean_, running_var_;
    Tensor<T> xhat_;
    std::vector<double> invstd_;
    std::int64_t count_ = 0;
    bool batch_stats_used_ = false;
    bool update_running_ = true;
    bool frozen_ = false;
    bool identity_ = false;
};

template <typename T>
class ReLU : public Module<T> {
public:
    explicit ReLU(const std::string& name) { (void)name; }

    Tensor<T> forward(const Tensor<T>& x, bool) override {
        out_ = x;
        for (auto& v : out_.values)
            if (v < T(0)) v = T(0);
        return out_;
    }

    Tensor<T> backward(const Tensor<T>& gy, bool need_input_grad) override {
        if (capture_activation_grads) {
            // per-channel sum of a * dL/da over the post-activation map
            const int c = out_.rank() >= 2 ? out_.dim(1) : 1;
            fisher_channel_sums.assign(static_cast<std::size_t>(c), 0.0);
            const std::int64_t per =
                out_.size() / (out_.dim(0) * static_cast<std::int64_t>(c));
            for (int in = 0; in < out_.dim(0); ++in)
                for (int ch = 0; ch < c; ++ch) {
                    const std::size_t base =
                        (static_cast<std::size_t>(in) * c + ch) * per;
                    double s = 0.0;
                    for (std::int64_t i = 0; i < per; ++i)
                        s += static_cast<double>(out_.values[base + i]) *
                             gy.values[base + i];
                    fisher_channel_sums[ch] += s;
                }
        }
        if (!need_input_grad) return Tensor<T>();
        Tensor<T> gx(gy.shape);
        for (std::size_t i = 0; i < gx.values.size(); ++i)
            gx.values[i] = out_.values[i] > T(0) ? gy.values[i] : T(0);
        return gx;
    }

    const char* kind_name() const override { return "relu"; }

    bool capture_activation_grads = false;
    std::vector<double> fisher_channel_sums;

private:
    Tensor<T> out_;
};

// 3x3 average pooling, zero padding 1, stride 1, divisor fixed at 9.
template <typename T>
class AvgPool3x3 : public Module<T> {
public:
    AvgPool3x3(int channels, int h, int w, const std::string& name) {
        (void)name;
        macs_ = static_cast<std::int64_t>(9) * channels * h * w;
    }

    Tensor<T> forward(const Tensor<T>& x, bool) override {
        shape_ = x.shape;
        const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
        Tensor<T> y(x.shape);
        for (int in = 0; in < n; ++in)
            for (int ch = 0; ch < c; ++ch)
                for (int r = 0; r < h; ++r)
                    for (int cl = 0; cl < w; ++cl) {
                        T s = T(0);
                        for (int dr = -1; dr <= 1; ++dr)
                            for (int dc = -1; dc <= 1; ++dc) {
                                const int rr = r + dr, cc = cl + dc;
                                if (rr >= 0 && rr < h && cc >= 0 && cc < w)
                                    s += x.at(in, ch, rr, cc);
                            }
                        y.at(in, ch, r, cl) = s / T(9);
                    }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& gy, bool need_input_grad) override {
        if (!need_input_grad) return Tensor<T>();
        const int n = gy.dim(0), c = gy.dim(1), h = gy.dim(2), w = gy.dim(3);
        Tensor<T> gx(shape_);
        for (int in = 0; in < n; ++in)
            for (int ch = 0; ch < c; ++ch)
                for (int r = 0; r < h; ++r)
                    for (int cl = 0; cl < w; ++cl) {
                        const T g = gy.at(in, ch, r, cl) / T(9);
                        for (int dr = -1; dr <= 1; ++dr)
                            for (int dc = -1; dc <= 1; ++dc) {
                                const int rr = r + dr, cc = cl + dc;
                                if (rr >= 0 && rr < h && cc >= 0 && cc < w)
                                    gx.at(in, ch, rr, cc) += g;
                            }
                    }
        return gx;
    }

    std::int64_t forward_macs() const override { return macs_; }
    const char* kind_name() const override { return "avgpool3x3"; }

private:
    std::vector<int> shape_;
    std::int64_t macs_;
};

template <typename T>
class GlobalAvgPool : public Module<T> {
public:
    explicit GlobalAvgPool(const std::string& name) { (void)name; }

    Tensor<T> forward(const Tensor<T>& x, bool) override {
        if (x.rank() != 4) throw ShapeError("global_avg_pool: expects 4-d input");
        shape_ = x.shape;
        const int n = x.dim(0), c = x.dim(1);
        const std::int64_t hw = static_cast<std::int64_t>(x.dim(2)) * x.dim(3);
        Tensor<T> y({n, c});
        for (int in = 0; in < n; ++in)
            for (int ch = 0; ch < c; ++ch) {
                const T* row = &x.at(in, ch, 0, 0);
                double s = 0.0;
                for (std::int64_t i = 0; i < hw; ++i) s += row[i];
                y.at(in, ch) = static_cast<T>(s / static_cast<double>(hw));
            }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& gy, bool need_input_grad) override {
        if (!need_input_grad) return Tensor<T>();
        Tensor<T> gx(shape_);
        const int n = shape_[0], c = shape_[1];
        const std::int64_t hw = static_cast<std::int64_t>(shape_[2]) * shape_[3];
        for (int in = 0; in < n; ++in)
            for (int ch = 0; ch < c; ++ch) {
                const T g = gy.at(in, ch) / static_cast<T>(hw);
                T* row = &gx.at(in, ch, 0, 0);
                for (std::int64_t i = 0; i < hw; ++i) row[i] = g;
            }
        return gx;
    }

    const char* kind_name() const override { return "global_avg_pool"; }

private:
    std::vector<int> shape_;
};

template <typename T>
class Linear : public Module<T> {
public:
    Linear(int in_features, int out_features, Rng& rng, const std::string& name)
        : in_(in_features), out_(out_features) {
        weight_.init({out_features, in_features}, ParamKind::linear_weight, name + ".weight");
        bias_.init({out_features}, ParamKind::linear_bias, name + ".bias");
        kaiming_normal(weight_.value, in_features, rng);
        macs_ = static_cast<std::int64_t>(in_features) * out_features;
    }

    Tensor<T> forward(const Tensor<T>& x, bool) override {
        if (x.rank() != 2 || x.dim(1) != in_)
            throw ShapeError("linear: bad input shape " + shape_str(x));
        input_ = x;
        const int n = x.dim(0);
        Tensor<T> y({n, out_});
        for (int in = 0; in < n; ++in)
            for (int o = 0; o < out_; ++o) {
                double s = bias_.value.values[o];
                const T* xr = &x.at(in, 0);
                const T* wr = &weight_.value.at(o, 0);
                for (int i = 0; i < in_; ++i) s += static_cast<double>(xr[i]) * wr[i];
                y.at(in, o) = static_cast<T>(s);
            }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& gy, bool need_input_grad) override {
        const int n = input_.dim(0);
        for (int in = 0; in < n; ++in)
            for (int o = 0; o < out_; ++o) {
                const T g = gy.at(in, o);
                bias_.grad.values[o] += g;
                const T* xr = &input_.at(in, 0);
                T* wg = &weight_.grad.at(o, 0);
                for (int i = 0; i < in_; ++i) wg[i] += g * xr[i];
            }
        if (!need_input_grad) return Tensor<T>();
        Tensor<T> gx(input_.shape);
        for (int in = 0; in < n; ++in)
            for (int o = 0; o < out_; ++o) {
                const T g = gy.at(in, o);
                const T* wr = &weight_.value.at(o, 0);
                T* gxr = &gx.at(in, 0);
                for (int i = 0; i < in_; ++i) gxr[i] += g * wr[i];
            }
        return gx;
    }

    void collect_params(std::vector<ParamGroup<T>*>& out) override {
        out.push_back(&weight_);
        out.push_back(&bias_);
    }
    std::int64_t forward_macs() const override { return macs_; }
    const char* kind_name() const override { return "linear"; }

    ParamGroup<T>& weight() { return weight_; }
    ParamGroup<T>& bias() { return bias_; }

private:
    int in_, out_;
    std::int64_t macs_;
    ParamGroup<T> weight_, bias_;
    Tensor<T> input_;
};

template <typename T>
class Sequential : public Module<T> {
public:
    Sequential() = default;

    void add(std::unique_ptr<Module<T>> m) { mods_.push_back(std::move(m)); }

    Tensor<T> forward(const Tensor<T>& x, bool training) override {
        Tensor<T> h = x;
        for (auto& m : mods_) h = m->forward(h, training);
        return h;
    }

    Tensor<T> backward(const Tensor<T>& gy, bool need_input_grad) override {
        Tensor<T> g = gy;
        for (std::size_t i = mods_.size(); i-- > 0;) {
            const bool need = need_input_grad || i > 0;
            g = mods_[i]->backward(g, need);
        }
        return need_input_grad ? g : Tensor<T>();
    }

    void collect_params(std::vector<ParamGroup<T>*>& out) override {
        for (auto& m : mods_) m->collect_params(out);
    }
    std::int64_t forward_macs() const override {
        std::int64_t s = 0;
        for (auto& m : mods_) s += m->forward_macs();
        return s;
    }
    void set_frozen(bool frozen) override {
        for (auto& m : mods_) m->set_frozen(frozen);
    }
    void visit(const std::function<void(Module<T>&)>& f) override {
        f(*this);
        for (auto& m : mods_) m->visit(f);
    }
    const char* kind_name() const override { return "sequential"; }

    std::vector<std::unique_ptr<Module<T>>>& children() { return mods_; }

private:
    std::vector<std::unique_ptr<Module<T>>> mods_;
};

}  // namespace fear
