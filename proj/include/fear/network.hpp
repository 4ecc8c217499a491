#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fear/layers.hpp"
#include "fear/sgd.hpp"

namespace fear {

// An executable layer graph: a linear chain of blocks. Blocks [1, 1+cell_blocks)
// are the cells and downsample blocks in input-to-output order; block 0 is the
// stem and the last block is the classifier head. Parameter groups are
// registered in block order so prefix freezing is well defined.
template <typename T>
struct Network {
    std::vector<std::unique_ptr<Module<T>>> blocks;
    std::vector<std::string> block_names;
    int cell_blocks = 0;   // cells + downsample blocks between stem and head
    int frozen_blocks = 0;  // blocks[0..frozen_blocks) are frozen

    std::vector<ParamGroup<T>*> params() {
        std::vector<ParamGroup<T>*> out;
        for (auto& b : blocks) b->collect_params(out);
        return out;
    }

    Tensor<T> forward(const Tensor<T>& x, bool training) {
        Tensor<T> h = x;
        for (auto& b : blocks) h = b->forward(h, training);
        return h;
    }

    // Backpropagates from dlogits; frozen prefix blocks are skipped entirely.
    // Returns the input gradient when requested (only possible with no frozen
    // prefix, since backward stops there).
    Tensor<T> backward(const Tensor<T>& dlogits, bool need_input_grad = false) {
        Tensor<T> g = dlogits;
        for (int i = static_cast<int>(blocks.size()) - 1; i >= frozen_blocks; --i) {
            const bool need = i > frozen_blocks || (frozen_blocks == 0 && need_input_grad);
            g = blocks[static_cast<std::size_t>(i)]->backward(g, need);
        }
        return frozen_blocks == 0 && need_input_grad ? g : Tensor<T>();
    }

    void zero_grad() {
        for (auto* p : params()) p->grad.fill(T(0));
    }

    std::int64_t total_param_count() {
        std::int64_t n = 0;
        for (auto* p : params()) n += p->value.size();
        return n;
    }

    // Per-sample forward MACs over all blocks.
    std::int64_t forward_macs_per_sample() const {
        std::int64_t s = 0;
        for (auto& b : blocks) s += b->forward_macs();
        return s;
    }

    // Per-sample MACs for one training step: forward everywhere plus 2x
    // forward for the backward pass of non-frozen blocks.
    std::int64_t step_macs_per_sample() const {
        std::int64_t s = 0;
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            const std::int64_t f = blocks[i]->forward_macs();
            s += f;
            if (static_cast<int>(i) >= frozen_blocks) s += 2 * f;
        }
        return s;
    }

    // Freezes the stem plus the first `boundary` cell blocks.
    void freeze_up_to_cell(int boundary) {
        if (boundary < 0 || boundary > cell_blocks)
            throw DomainError("freeze boundary outside cell range");
        frozen_blocks = 1 + boundary;
        for (std::size_t i = 0; i < blocks.size(); ++i)
            blocks[i]->set_frozen(static_cast<int>(i) < frozen_blocks);
    }

    // Flat parameter vector helpers (used by proxies and gradient checks).
    std::vector<double> get_flat_params() {
        std::vector<double> out;
        for (auto* p : params())
            for (T v : p->value.values) out.push_back(static_cast<double>(v));
        return out;
    }
    void set_flat_params(const std::vector<double>& flat) {
        std::size_t k = 0;
        for (auto* p : params())
            for (auto& v : p->value.values) v = static_cast<T>(flat[k++]);
        if (k != flat.size()) throw ShapeError("flat parameter size mismatch");
    }
    std::vector<double> get_flat_grads() {
        std::vector<double> out;
        for (auto* p : params())
            for (T v : p->grad.values) out.push_back(static_cast<double>(v));
        return out;
    }

    void visit(const std::function<void(Module<T>&)>& f) {
        for (auto& b : blocks) b->visit(f);
    }

    // Full trainable state: parameters plus batchnorm running statistics.
    // Momentum buffers are deliberately excluded (checkpoints are consumed by
    // proxies, which never step the optimizer).
    std::vector<double> save_state() {
        std::vector<double> out = get_flat_params();
        visit([&](Module<T>& m) {
            if (auto* bn = dynamic_cast<BatchNorm2d<T>*>(&m)) {
                for (T v : bn->running_mean().values) out.push_back(static_cast<double>(v));
                for (T v : bn->running_var().values) out.push_back(static_cast<double>(v));
            }
        });
        return out;
    }
    void load_state(const std::vector<double>& state) {
        std::size_t n_params = 0;
        for (auto* p : params()) n_params += p->value.values.size();
        set_flat_params(std::vector<double>(state.begin(),
                                            state.begin() + static_cast<std::ptrdiff_t>(n_params)));
        std::size_t k = n_params;
        visit([&](Module<T>& m) {
            if (auto* bn = dynamic_cast<BatchNorm2d<T>*>(&m)) {
                for (auto& v : bn->running_mean().values) v = static_cast<T>(state[k++]);
                for (auto& v : bn->running_var().values) v = static_cast<T>(state[k++]);
            }
        });
        if (k != state.size()) throw ShapeError("network state size mismatch");
    }
};

template <typename T>
struct LossResult {
    double loss = 0.0;
    double accuracy = 0.0;
    Tensor<T> dlogits;
};

// Softmax cross-entropy averaged over the batch; dlogits = (softmax - onehot)/N.
template <typename T>
LossResult<T> softmax_cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels) {
    if (logits.rank() != 2) throw ShapeError("softmax_cross_entropy: expects 2-d logits");
    const int n = logits.dim(0), k = logits.dim(1);
    if (n == 0 || static_cast<std::size_t>(n) != labels.size())
        throw ShapeError("softmax_cross_entropy: batch/label mismatch");
    LossResult<T> r;
    r.dlogits = Tensor<T>(logits.shape);
    double loss = 0.0;
    int correct = 0;
    for (int i = 0; i < n; ++i) {
        const int y = labels[static_cast<std::size_t>(i)];
        if (y < 0 || y >= k) throw DomainError("label out of range");
        const T* row = &logits.at(i, 0);
        double mx = row[0];
        int argmax = 0;
        for (int j = 1; j < k; ++j)
            if (row[j] > mx) {
                mx = row[j];
                argmax = j;
            }
        if (argmax == y) ++correct;
        double z = 0.0;
        for (int j = 0; j < k; ++j) z += std::exp(static_cast<double>(row[j]) - mx);
        loss += std::log(z) - (static_cast<double>(row[y]) - mx);
        for (int j = 0; j < k; ++j) {
            const double p = std::exp(static_cast<double>(row[j]) - mx) / z;
            r.dlogits.at(i, j) =
                static_cast<T>((p - (j == y ? 1.0 : 0.0)) / static_cast<double>(n));
        }
    }
    r.loss = loss / static_cast<double>(n);
    r.accuracy = static_cast<double>(correct) / static_cast<double>(n);
    return r;
}

// Forward + loss + backward. Frozen groups receive no gradient. On a
// non-finite loss the forward pass is replayed block by block to name the
// first offending layer.
template <typename T>
LossResult<T> loss_and_backward(Network<T>& net, const Tensor<T>& images,
                                const std::vector<int>& labels, bool training = true) {
    Tensor<T> logits = net.forward(images, training);
    LossResult<T> r = softmax_cross_entropy(logits, labels);
    if (!std::isfinite(r.loss)) {
        Tensor<T> h = images;
        for (std::size_t i = 0; i < net.blocks.size(); ++i) {
            h = net.blocks[i]->forward(h, training);
            if (!all_finite(h))
                throw NumericError(std::string("non-finite activation in block ") +
                                   net.block_names[i]);
        }
        throw NumericError("non-finite loss with finite activations");
    }
    net.backward(r.dlogits);
    return r;
}

}  // namespace fear
