#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "fear/network.hpp"

namespace fear {

// Edge operators in canonical order; the ordering defines ArchId and is frozen.
enum class OpKind : int {
    zeroize = 0,
    skip_connection = 1,
    conv1x1 = 2,
    conv3x3 = 3,
    avgpool3x3 = 4,
};
inline constexpr int kNumOps = 5;
inline constexpr int kNumEdges = 6;
inline constexpr int kSpaceSize = 15625;  // 5^6

inline const char* op_name(OpKind k) {
    switch (k) {
        case OpKind::zeroize: return "none";
        case OpKind::skip_connection: return "skip_connect";
        case OpKind::conv1x1: return "nor_conv_1x1";
        case OpKind::conv3x3: return "nor_conv_3x3";
        case OpKind::avgpool3x3: return "avg_pool_3x3";
    }
    throw DomainError("bad op kind");
}

inline OpKind op_from_name(const std::string& s) {
    for (int i = 0; i < kNumOps; ++i)
        if (s == op_name(static_cast<OpKind>(i))) return static_cast<OpKind>(i);
    throw FormatError("unknown operator name: " + s);
}

// Edges over 4 nodes in fixed order: 0->1, 0->2, 0->3, 1->2, 1->3, 2->3.
inline constexpr std::array<std::pair<int, int>, kNumEdges> kEdgeOrder = {
    {{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}}};

struct CellSpec {
    std::array<OpKind, kNumEdges> edge_ops{};

    bool operator==(const CellSpec&) const = default;
};

struct ArchId {
    int id = 0;

    bool operator==(const ArchId&) const = default;
    auto operator<=>(const ArchId&) const = default;
};

inline ArchId encode(const CellSpec& spec) {
    int id = 0, base = 1;
    for (int k = 0; k < kNumEdges; ++k) {
        id += static_cast<int>(spec.edge_ops[static_cast<std::size_t>(k)]) * base;
        base *= kNumOps;
    }
    return ArchId{id};
}

inline CellSpec decode(ArchId arch) {
    if (arch.id < 0 || arch.id >= kSpaceSize)
        throw DomainError("arch id out of [0, 15625): " + std::to_string(arch.id));
    CellSpec spec;
    int v = arch.id;
    for (int k = 0; k < kNumEdges; ++k) {
        spec.edge_ops[static_cast<std::size_t>(k)] = static_cast<OpKind>(v % kNumOps);
        v /= kNumOps;
    }
    return spec;
}

inline std::vector<ArchId> enumerate_space() {
    std::vector<ArchId> out;
    out.reserve(kSpaceSize);
    for (int i = 0; i < kSpaceSize; ++i) out.push_back(ArchId{i});
    return out;
}

// Benchmark-style string: |op~0|+|op~0|op~1|+|op~0|op~1|op~2|
inline std::string to_arch_string(const CellSpec& spec) {
    // edge index for (i -> j)
    auto edge_idx = [](int i, int j) {
        for (int k = 0; k < kNumEdges; ++k)
            if (kEdgeOrder[static_cast<std::size_t>(k)] == std::make_pair(i, j)) return k;
        throw DomainError("bad edge");
    };
    std::string s;
    for (int j = 1; j < 4; ++j) {
        if (j > 1) s += "+";
        for (int i = 0; i < j; ++i) {
            s += "|";
            s += op_name(spec.edge_ops[static_cast<std::size_t>(edge_idx(i, j))]);
            s += "~" + std::to_string(i);
        }
        s += "|";
    }
    return s;
}

inline CellSpec parse_arch_string(const std::string& s) {
    CellSpec spec;
    auto edge_idx = [](int i, int j) {
        for (int k = 0; k < kNumEdges; ++k)
            if (kEdgeOrder[static_cast<std::size_t>(k)] == std::make_pair(i, j)) return k;
        throw DomainError("bad edge");
    };
    std::size_t pos = 0;
    for (int j = 1; j < 4; ++j) {
        for (int i = 0; i < j; ++i) {
            std::size_t open = s.find('|', pos);
            if (open == std::string::npos) throw FormatError("malformed arch string: " + s);
            std::size_t tilde = s.find('~', open);
            std::size_t close = s.find('|', open + 1);
            if (tilde == std::string::npos || close == std::string::npos || tilde > close)
                throw FormatError("malformed arch string: " + s);
            const std::string name = s.substr(open + 1, tilde - open - 1);
            const int src = std::stoi(s.substr(tilde + 1, close - tilde - 1));
            if (src != i) throw FormatError("arch string source index mismatch: " + s);
            spec.edge_ops[static_cast<std::size_t>(edge_idx(i, j))] = op_from_name(name);
            pos = close;
        }
        pos = s.find('+', pos);
        if (j < 3 && pos == std::string::npos) throw FormatError("malformed arch string: " + s);
    }
    return spec;
}

// Accepts either a decimal ArchId or a benchmark-style string.
inline ArchId parse_arch(const std::string& s) {
    if (!s.empty() && s.find('|') == std::string::npos) {
        std::size_t used = 0;
        const int v = std::stoi(s, &used);
        if (used != s.size()) throw FormatError("bad architecture name: " + s);
        if (v < 0 || v >= kSpaceSize) throw DomainError("arch id out of range: " + s);
        return ArchId{v};
    }
    return encode(parse_arch_string(s));
}

struct MacroConfig {
    int stages = 3;
    int cells_per_stage = 1;
    int init_channels = 8;
    int num_classes = 10;
    int image_hw = 16;
    int image_channels = 3;

    void validate() const {
        if (stages <= 0 || cells_per_stage <= 0 || init_channels <= 0 || num_classes <= 0 ||
            image_hw <= 0 || image_channels <= 0)
            throw DomainError("macro config fields must be positive");
    }
};

// One cell: node_j = sum over i<j of op_{i->j}(node_i). Conv ops are
// relu->conv->batchnorm composites, skip is identity, zeroize contributes a
// zero tensor, avgpool is parameter free.
template <typename T>
class Cell : public Module<T> {
public:
    Cell(const CellSpec& spec, int channels, int h, int w, Rng& rng, const std::string& name)
        : spec_(spec), channels_(channels) {
        for (int k = 0; k < kNumEdges; ++k) {
            const OpKind op = spec.edge_ops[static_cast<std::size_t>(k)];
            const std::string ename = name + ".edge" + std::to_string(k);
            std::unique_ptr<Module<T>> m;
            if (op == OpKind::conv1x1 || op == OpKind::conv3x3) {
                const int ksz = op == OpKind::conv3x3 ? 3 : 1;
                auto seq = std::make_unique<Sequential<T>>();
                seq->add(std::make_unique<ReLU<T>>(ename + ".relu"));
                seq->add(std::make_unique<Conv2d<T>>(channels, channels, ksz, 1, ksz / 2, h, w,
                                                     rng, ename + ".conv"));
                seq->add(std::make_unique<BatchNorm2d<T>>(channels, h, w, ename + ".bn"));
                m = std::move(seq);
            } else if (op == OpKind::avgpool3x3) {
                m = std::make_unique<AvgPool3x3<T>>(channels, h, w, ename);
            }
            edges_[static_cast<std::size_t>(k)] = std::move(m);
        }
    }

    Tensor<T> forward(const Tensor<T>& x, bool training) override {
        input_shape_ = x.shape;
        std::array<Tensor<T>, 4> nodes;
        nodes[0] = x;
        for (int j = 1; j < 4; ++j) {
            Tensor<T> acc;
            for (int k = 0; k < kNumEdges; ++k) {
                if (kEdgeOrder[static_cast<std::size_t>(k)].second != j) continue;
                const int i = kEdgeOrder[static_cast<std::size_t>(k)].first;
                const OpKind op = spec_.edge_ops[static_cast<std::size_t>(k)];
                if (op == OpKind::zeroize) continue;
                Tensor<T> v = op == OpKind::skip_connection
                                  ? nodes[static_cast<std::size_t>(i)]
                                  : edges_[static_cast<std::size_t>(k)]->forward(
                                        nodes[static_cast<std::size_t>(i)], training);
                if (acc.values.empty()) {
                    acc = std::move(v);
                } else {
                    for (std::size_t t = 0; t < acc.values.size(); ++t)
                        acc.values[t] += v.values[t];
                }
            }
            nodes[static_cast<std::size_t>(j)] = acc.values.empty() ? x.zeros_like() : acc;
        }
        return nodes[3];
    }

    Tensor<T> backward(const Tensor<T>& gy, bool need_input_grad) override {
        std::array<Tensor<T>, 4> grads;
        grads[3] = gy;
        for (int j = 3; j >= 1; --j) {
            if (grads[static_cast<std::size_t>(j)].values.empty()) continue;
            for (int k = 0; k < kNumEdges; ++k) {
                if (kEdgeOrder[static_cast<std::size_t>(k)].second != j) continue;
                const int i = kEdgeOrder[static_cast<std::size_t>(k)].first;
                const OpKind op = spec_.edge_ops[static_cast<std::size_t>(k)];
                if (op == OpKind::zeroize) continue;
                const bool need = i > 0 || need_input_grad;
                Tensor<T> gi;
                if (op == OpKind::skip_connection) {
                    if (need) gi = grads[static_cast<std::size_t>(j)];
                } else {
                    gi = edges_[static_cast<std::size_t>(k)]->backward(
                        grads[static_cast<std::size_t>(j)], need);
                }
                if (!need || gi.values.empty()) continue;
                auto& dst = grads[static_cast<std::size_t>(i)];
                if (dst.values.empty()) {
                    dst = std::move(gi);
                } else {
                    for (std::size_t t = 0; t < dst.values.size(); ++t)
                        dst.values[t] += gi.values[t];
                }
            }
        }
        if (!need_input_grad) return Tensor<T>();
        // No live path back to the input (e.g. all edges into node 3
        // zeroized): the input gradient is exactly zero, not absent.
        if (grads[0].values.empty()) return Tensor<T>(input_shape_);
        return grads[0];
    }

    void collect_params(std::vector<ParamGroup<T>*>& out) override {
        for (auto& e : edges_)
            if (e) e->collect_params(out);
    }
    std::int64_t forward_macs() const override {
        std::int64_t s = 0;
        for (auto& e : edges_)
            if (e) s += e->forward_macs();
        return s;
    }
    void set_frozen(bool frozen) override {
        for (auto& e : edges_)
            if (e) e->set_frozen(frozen);
    }
    void visit(const std::function<void(Module<T>&)>& f) override {
        f(*this);
        for (auto& e : edges_)
            if (e) e->visit(f);
    }
    const char* kind_name() const override { return "cell"; }

private:
    CellSpec spec_;
    int channels_;
    std::vector<int> input_shape_;
    std::array<std::unique_ptr<Module<T>>, kNumEdges> edges_;
};

// Stride-2 residual downsampling block doubling channels: two 3x3 convs on
// the main path, 1x1 stride-2 conv shortcut.
template <typename T>
class ResidualDownsample : public Module<T> {
public:
    ResidualDownsample(int c_in, int c_out, int h, int w, Rng& rng, const std::string& name) {
        main_ = std::make_unique<Sequential<T>>();
        main_->add(std::make_unique<ReLU<T>>(name + ".relu1"));
        main_->add(std::make_unique<Conv2d<T>>(c_in, c_out, 3, 2, 1, h, w, rng, name + ".conv1"));
        main_->add(std::make_unique<BatchNorm2d<T>>(c_out, h / 2, w / 2, name + ".bn1"));
        main_->add(std::make_unique<ReLU<T>>(name + ".relu2"));
        main_->add(std::make_unique<Conv2d<T>>(c_out, c_out, 3, 1, 1, h / 2, w / 2, rng,
                                               name + ".conv2"));
        main_->add(std::make_unique<BatchNorm2d<T>>(c_out, h / 2, w / 2, name + ".bn2"));
        shortcut_ = std::make_unique<Sequential<T>>();
        shortcut_->add(
            std::make_unique<Conv2d<T>>(c_in, c_out, 1, 2, 0, h, w, rng, name + ".sc_conv"));
        shortcut_->add(std::make_unique<BatchNorm2d<T>>(c_out, h / 2, w / 2, name + ".sc_bn"));
    }

    Tensor<T> forward(const Tensor<T>& x, bool training) override {
        Tensor<T> a = main_->forward(x, training);
        Tensor<T> b = shortcut_->forward(x, training);
        for (std::size_t i = 0; i < a.values.size(); ++i) a.values[i] += b.values[i];
        return a;
    }

    Tensor<T> backward(const Tensor<T>& gy, bool need_input_grad) override {
        Tensor<T> ga = main_->backward(gy, need_input_grad);
        Tensor<T> gb = shortcut_->backward(gy, need_input_grad);
        if (!need_input_grad) return Tensor<T>();
        for (std::size_t i = 0; i < ga.values.size(); ++i) ga.values[i] += gb.values[i];
        return ga;
    }

    void collect_params(std::vector<ParamGroup<T>*>& out) override {
        main_->collect_params(out);
        shortcut_->collect_params(out);
    }
    std::int64_t forward_macs() const override {
        return main_->forward_macs() + shortcut_->forward_macs();
    }
    void set_frozen(bool frozen) override {
        main_->set_frozen(frozen);
        shortcut_->set_frozen(frozen);
    }
    void visit(const std::function<void(Module<T>&)>& f) override {
        f(*this);
        main_->visit(f);
        shortcut_->visit(f);
    }
    const char* kind_name() const override { return "residual_downsample"; }

private:
    std::unique_ptr<Sequential<T>> main_;
    std::unique_ptr<Sequential<T>> shortcut_;
};

// Macro skeleton: stem conv3x3+bn, `stages` stages of N cells with a stride-2
// residual downsample (doubling channels) between stages, then
// relu -> global average pool -> linear head.
template <typename T>
Network<T> build_network(const CellSpec& spec, const MacroConfig& macro, std::uint64_t seed) {
    macro.validate();
    Rng rng(stream_seed(seed, "net-init", static_cast<std::uint64_t>(encode(spec).id)));
    Network<T> net;
    int c = macro.init_channels;
    int hw = macro.image_hw;

    auto stem = std::make_unique<Sequential<T>>();
    stem->add(std::make_unique<Conv2d<T>>(macro.image_channels, c, 3, 1, 1, hw, hw, rng, "stem.conv"));
    stem->add(std::make_unique<BatchNorm2d<T>>(c, hw, hw, "stem.bn"));
    net.blocks.push_back(std::move(stem));
    net.block_names.push_back("stem");

    for (int s = 0; s < macro.stages; ++s) {
        for (int k = 0; k < macro.cells_per_stage; ++k) {
            std::string name = "stage" + std::to_string(s) + ".cell" + std::to_string(k);
            net.blocks.push_back(std::make_unique<Cell<T>>(spec, c, hw, hw, rng, name));
            net.block_names.push_back(name);
            ++net.cell_blocks;
        }
        if (s + 1 < macro.stages) {
            std::string name = "down" + std::to_string(s);
            net.blocks.push_back(
                std::make_unique<ResidualDownsample<T>>(c, 2 * c, hw, hw, rng, name));
            net.block_names.push_back(name);
            ++net.cell_blocks;
            c *= 2;
            hw /= 2;
            if (hw < 1) throw DomainError("image too small for macro skeleton");
        }
    }

    auto head = std::make_unique<Sequential<T>>();
    head->add(std::make_unique<ReLU<T>>("head.relu"));
    head->add(std::make_unique<GlobalAvgPool<T>>("head.gap"));
    head->add(std::make_unique<Linear<T>>(c, macro.num_classes, rng, "head.linear"));
    net.blocks.push_back(std::move(head));
    net.block_names.push_back("head");
    return net;
}

template <typename T>
Network<T> build_network(ArchId arch, const MacroConfig& macro, std::uint64_t seed) {
    return build_network<T>(decode(arch), macro, seed);
}

// Fraction of parameters in stem + cell blocks strictly before `boundary`
// (head excluded from the numerator, included in the denominator).
template <typename T>
double param_fraction_up_to(Network<T>& net, int boundary) {
    if (boundary < 0 || boundary > net.cell_blocks)
        throw DomainError("boundary outside cell count");
    std::int64_t prefix = 0, total = 0;
    for (std::size_t i = 0; i < net.blocks.size(); ++i) {
        std::vector<ParamGroup<T>*> ps;
        net.blocks[i]->collect_params(ps);
        std::int64_t n = 0;
        for (auto* p : ps) n += p->value.size();
        total += n;
        if (static_cast<int>(i) < 1 + boundary) prefix += n;
    }
    return static_cast<double>(prefix) / static_cast<double>(total);
}

// Smallest cell boundary whose frozen-prefix parameter fraction covers the
// target (snapped to a cell boundary from above, capped at the last cell).
template <typename T>
int freeze_boundary_for_fraction(Network<T>& net, double fraction) {
    for (int b = 0; b <= net.cell_blocks; ++b)
        if (param_fraction_up_to(net, b) >= fraction) return b;
    return net.cell_blocks;
}

// Deterministic MAC cost of one training step at the given batch size,
// honoring the current frozen prefix (backward is 2x forward for non-frozen
// blocks and free for frozen ones).
template <typename T>
std::int64_t cost_units(const Network<T>& net, int batch_size) {
    return net.step_macs_per_sample() * batch_size;
}

}  // namespace fear
