#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "fear/rng.hpp"
#include "fear/tensor.hpp"

namespace fear {

// Images are kept as quantized bytes (the on-disk representation) together
// with the dequantization transform and per-channel normalization statistics.
// Batches are materialized as float tensors on demand:
//   value = ((byte - dequant_offset) / dequant_scale - mean[c]) / std[c]
struct ImageDataset {
    std::string name;
    std::uint64_t seed = 0;
    int n = 0;
    int channels = 0;
    int height = 0;
    int width = 0;
    int num_classes = 0;
    std::vector<std::uint8_t> pixels;  // n * channels * height * width, channel-major
    std::vector<int> labels;
    std::vector<int> train_idx;
    std::vector<int> val_idx;
    std::vector<int> test_idx;
    double dequant_offset = 127.5;
    double dequant_scale = 50.0;
    std::vector<double> channel_mean;  // set by normalize(); defaults below
    std::vector<double> channel_std;
    std::vector<std::string> warnings;

    std::size_t pixel_index(int i, int c, int h, int w) const {
        return ((static_cast<std::size_t>(i) * channels + c) * height + h) * width + w;
    }
    double raw_value(int i, int c, int h, int w) const {
        return (static_cast<double>(pixels[pixel_index(i, c, h, w)]) - dequant_offset) /
               dequant_scale;
    }
    double value(int i, int c, int h, int w) const {
        const double m = channel_mean.empty() ? 0.0 : channel_mean[static_cast<std::size_t>(c)];
        const double s = channel_std.empty() ? 1.0 : channel_std[static_cast<std::size_t>(c)];
        return (raw_value(i, c, h, w) - m) / s;
    }

    void validate() const {
        if (n <= 0) throw DomainError("dataset is empty");
        if (static_cast<std::size_t>(n) != labels.size())
            throw ShapeError("dataset label count mismatch");
        if (pixels.size() != static_cast<std::size_t>(n) * channels * height * width)
            throw ShapeError("dataset pixel buffer size mismatch");
        for (int y : labels)
            if (y < 0 || y >= num_classes) throw DomainError("dataset label out of range");
        std::vector<char> seen(static_cast<std::size_t>(n), 0);
        auto mark = [&](const std::vector<int>& idx) {
            for (int i : idx) {
                if (i < 0 || i >= n) throw DomainError("split index out of range");
                if (seen[static_cast<std::size_t>(i)]) throw DomainError("split indices overlap");
                seen[static_cast<std::size_t>(i)] = 1;
            }
        };
        mark(train_idx);
        mark(val_idx);
        mark(test_idx);
        for (char c : seen)
            if (!c) throw DomainError("split indices do not cover the dataset");
    }
};

struct SyntheticConfig {
    int n_total = 2560;
    int n_train = 1280;
    int n_val = 640;  // carved out of the non-train remainder; 0 disables the split
    int hw = 8;
    int channels = 3;
    int num_classes = 10;
    int num_labelers = 10;
    bool balance_classes = true;

    void validate() const {
        if (n_total <= 0 || n_train <= 0 || hw <= 0 || channels <= 0 || num_classes < 2)
            throw DomainError("synthetic config fields must be positive");
        if (n_train + n_val >= n_total) throw DomainError("synthetic: need n_train + n_val < n_total");
        if (num_labelers != num_classes)
            throw DomainError("synthetic: num_labelers must equal num_classes");
    }
};

// Batch materialization as a float tensor plus labels.
template <typename T>
void make_batch(const ImageDataset& ds, const std::vector<int>& indices, int begin, int count,
                Tensor<T>& images, std::vector<int>& labels) {
    images = Tensor<T>({count, ds.channels, ds.height, ds.width});
    labels.resize(static_cast<std::size_t>(count));
    for (int b = 0; b < count; ++b) {
        const int i = indices[static_cast<std::size_t>(begin + b)];
        labels[static_cast<std::size_t>(b)] = ds.labels[static_cast<std::size_t>(i)];
        for (int c = 0; c < ds.channels; ++c)
            for (int h = 0; h < ds.height; ++h)
                for (int w = 0; w < ds.width; ++w)
                    images.at(b, c, h, w) = static_cast<T>(ds.value(i, c, h, w));
    }
}

namespace detail {

inline std::uint8_t quantize(double v, double offset, double scale) {
    double b = offset + scale * v;
    b = b < 0.0 ? 0.0 : (b > 255.0 ? 255.0 : b);
    return static_cast<std::uint8_t>(std::lround(b));
}

inline void assign_splits(ImageDataset& ds, int n_train, int n_val) {
    ds.train_idx.clear();
    ds.val_idx.clear();
    ds.test_idx.clear();
    for (int i = 0; i < ds.n; ++i) {
        if (i < n_train)
            ds.train_idx.push_back(i);
        else if (i < n_train + n_val)
            ds.val_idx.push_back(i);
        else
            ds.test_idx.push_back(i);
    }
}

}  // namespace detail

// Random Gaussian images labeled by the argmax over num_labelers randomly
// initialized two-layer scorers linear(D->D) -> relu -> linear(D->1) with
// D = channels*hw^2 and Gaussian(0, 1/fan_in) weights. Labels are computed on
// the dequantized (stored) pixel values so disk roundtrips cannot drift.
// With balance_classes, rejection-samples until each class holds exactly
// n_total/num_classes examples and interleaves classes so every prefix split
// stays balanced.
inline ImageDataset generate_synthetic(const SyntheticConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    if (cfg.balance_classes && cfg.n_total % cfg.num_classes != 0)
        throw DomainError("synthetic: n_total must be divisible by num_classes when balancing");
    Rng rng(stream_seed(seed, "synthetic-data", 0));

    const int d = cfg.channels * cfg.hw * cfg.hw;
    const double w_std = std::sqrt(1.0 / static_cast<double>(d));
    // labeler weights: per labeler, w1[d*d] then w2[d]
    std::vector<std::vector<double>> w1(static_cast<std::size_t>(cfg.num_labelers));
    std::vector<std::vector<double>> w2(static_cast<std::size_t>(cfg.num_labelers));
    for (int l = 0; l < cfg.num_labelers; ++l) {
        auto& a = w1[static_cast<std::size_t>(l)];
        auto& b = w2[static_cast<std::size_t>(l)];
        a.resize(static_cast<std::size_t>(d) * d);
        b.resize(static_cast<std::size_t>(d));
        for (auto& v : a) v = rng.normal() * w_std;
        for (auto& v : b) v = rng.normal() * w_std;
    }

    ImageDataset ds;
    ds.name = "synthetic";
    ds.seed = seed;
    ds.channels = cfg.channels;
    ds.height = cfg.hw;
    ds.width = cfg.hw;
    ds.num_classes = cfg.num_classes;

    auto label_of = [&](const std::vector<double>& x) {
        int best = 0;
        double best_s = -1e300;
        for (int l = 0; l < cfg.num_labelers; ++l) {
            const auto& a = w1[static_cast<std::size_t>(l)];
            const auto& b = w2[static_cast<std::size_t>(l)];
            double s = 0.0;
            for (int j = 0; j < d; ++j) {
                const double h =
                    dot_unrolled(&a[static_cast<std::size_t>(j) * d], x.data(),
                                 static_cast<std::size_t>(d));
                if (h > 0.0) s += b[static_cast<std::size_t>(j)] * h;
            }
            if (s > best_s) {
                best_s = s;
                best = l;
            }
        }
        return best;
    };

    std::vector<std::uint8_t> img_bytes(static_cast<std::size_t>(d));
    std::vector<double> img_vals(static_cast<std::size_t>(d));
    auto draw_image = [&]() {
        for (int j = 0; j < d; ++j) {
            const std::uint8_t b = detail::quantize(rng.normal(), ds.dequant_offset, ds.dequant_scale);
            img_bytes[static_cast<std::size_t>(j)] = b;
            img_vals[static_cast<std::size_t>(j)] =
                (static_cast<double>(b) - ds.dequant_offset) / ds.dequant_scale;
        }
    };

    if (!cfg.balance_classes) {
        ds.n = cfg.n_total;
        ds.pixels.reserve(static_cast<std::size_t>(cfg.n_total) * d);
        for (int i = 0; i < cfg.n_total; ++i) {
            draw_image();
            ds.pixels.insert(ds.pixels.end(), img_bytes.begin(), img_bytes.end());
            ds.labels.push_back(label_of(img_vals));
        }
    } else {
        const int quota = cfg.n_total / cfg.num_classes;
        std::vector<std::vector<std::uint8_t>> per_class(
            static_cast<std::size_t>(cfg.num_classes));
        std::vector<int> counts(static_cast<std::size_t>(cfg.num_classes), 0);
        int got = 0;
        const std::int64_t budget = 200LL * cfg.n_total;
        std::int64_t drawn = 0;
        while (got < cfg.n_total) {
            if (drawn++ >= budget) {
                std::string msg = "synthetic: class balancing exhausted sample budget; counts:";
                for (int c = 0; c < cfg.num_classes; ++c)
                    msg += " " + std::to_string(counts[static_cast<std::size_t>(c)]);
                throw DomainError(msg);
            }
            draw_image();
            const int y = label_of(img_vals);
            if (counts[static_cast<std::size_t>(y)] >= quota) continue;
            per_class[static_cast<std::size_t>(y)].insert(
                per_class[static_cast<std::size_t>(y)].end(), img_bytes.begin(), img_bytes.end());
            ++counts[static_cast<std::size_t>(y)];
            ++got;
        }
        ds.n = cfg.n_total;
        ds.pixels.reserve(static_cast<std::size_t>(cfg.n_total) * d);
        for (int k = 0; k < quota; ++k)
            for (int c = 0; c < cfg.num_classes; ++c) {
                const auto* src = &per_class[static_cast<std::size_t>(c)][static_cast<std::size_t>(k) * d];
                ds.pixels.insert(ds.pixels.end(), src, src + d);
                ds.labels.push_back(c);
            }
    }
    detail::assign_splits(ds, cfg.n_train, cfg.n_val);
    ds.validate();
    return ds;
}

// Image-like control dataset: oriented sinusoidal gratings (one orientation
// per class) under additive Gaussian noise. Spatially structured where the
// Gaussian synthetic set is not; used for the synthetic-vs-image proxy
// comparison. Class-interleaved like the balanced synthetic generator.
inline ImageDataset generate_patterned(const SyntheticConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    if (cfg.n_total % cfg.num_classes != 0)
        throw DomainError("patterned: n_total must be divisible by num_classes");
    Rng rng(stream_seed(seed, "patterned-data", 0));

    ImageDataset ds;
    ds.name = "patterned";
    ds.seed = seed;
    ds.channels = cfg.channels;
    ds.height = cfg.hw;
    ds.width = cfg.hw;
    ds.num_classes = cfg.num_classes;
    ds.n = cfg.n_total;
    ds.dequant_offset = 127.5;
    ds.dequant_scale = 50.0;

    const double pi = 3.14159265358979323846;
    const int per_class = cfg.n_total / cfg.num_classes;
    const double freq = 2.0 / static_cast<double>(cfg.hw);
    for (int k = 0; k < per_class; ++k)
        for (int c = 0; c < cfg.num_classes; ++c) {
            const double theta = pi * static_cast<double>(c) / static_cast<double>(cfg.num_classes);
            const double phase = 2.0 * pi * rng.uniform();
            for (int ch = 0; ch < cfg.channels; ++ch)
                for (int h = 0; h < cfg.hw; ++h)
                    for (int w = 0; w < cfg.hw; ++w) {
                        const double u = h * std::cos(theta) + w * std::sin(theta);
                        const double v =
                            std::sin(2.0 * pi * freq * u + phase) + 0.5 * rng.normal();
                        ds.pixels.push_back(
                            detail::quantize(v, ds.dequant_offset, ds.dequant_scale));
                    }
            ds.labels.push_back(c);
        }
    detail::assign_splits(ds, cfg.n_train, cfg.n_val);
    ds.validate();
    return ds;
}

// Standard CIFAR-10 binary layout: records of 3073 bytes, 1 label byte then
// 3072 channel-major pixel bytes. Train files first, then optional test files;
// the split boundary falls between the two groups.
inline ImageDataset load_cifar10_binary(const std::vector<std::string>& train_paths,
                                        const std::vector<std::string>& test_paths = {}) {
    if (train_paths.empty()) throw DomainError("cifar10: empty path list");
    ImageDataset ds;
    ds.name = "cifar10";
    ds.channels = 3;
    ds.height = 32;
    ds.width = 32;
    ds.num_classes = 10;
    ds.dequant_offset = 0.0;
    ds.dequant_scale = 255.0;

    constexpr std::size_t kRecord = 3073;
    auto read_file = [&](const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw FormatError("cifar10: cannot open " + path);
        std::vector<char> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
        if (buf.empty() || buf.size() % kRecord != 0)
            throw FormatError("cifar10: file length not a multiple of 3073: " + path);
        for (std::size_t off = 0; off < buf.size(); off += kRecord) {
            const int y = static_cast<std::uint8_t>(buf[off]);
            if (y > 9) throw FormatError("cifar10: label byte > 9 in " + path);
            ds.labels.push_back(y);
            ds.pixels.insert(ds.pixels.end(),
                             reinterpret_cast<std::uint8_t*>(&buf[off + 1]),
                             reinterpret_cast<std::uint8_t*>(&buf[off + 1]) + 3072);
            ++ds.n;
        }
    };
    for (const auto& p : train_paths) read_file(p);
    const int n_train = ds.n;
    for (const auto& p : test_paths) read_file(p);
    detail::assign_splits(ds, n_train, 0);
    ds.validate();
    return ds;
}

// Per-channel standardization using train-split statistics; val/test reuse
// them. Zero-variance channels keep a unit divisor and emit a warning.
inline ImageDataset normalize(const ImageDataset& input) {
    ImageDataset ds = input;
    ds.validate();
    if (ds.train_idx.empty()) throw DomainError("normalize: empty train split");
    ds.channel_mean.assign(static_cast<std::size_t>(ds.channels), 0.0);
    ds.channel_std.assign(static_cast<std::size_t>(ds.channels), 1.0);
    const std::int64_t per_channel =
        static_cast<std::int64_t>(ds.train_idx.size()) * ds.height * ds.width;
    for (int c = 0; c < ds.channels; ++c) {
        double sum = 0.0, sq = 0.0;
        for (int i : ds.train_idx)
            for (int h = 0; h < ds.height; ++h)
                for (int w = 0; w < ds.width; ++w) {
                    const double v = ds.raw_value(i, c, h, w);
                    sum += v;
                    sq += v * v;
                }
        const double mean = sum / static_cast<double>(per_channel);
        const double var = sq / static_cast<double>(per_channel) - mean * mean;
        ds.channel_mean[static_cast<std::size_t>(c)] = mean;
        if (var > 0.0) {
            ds.channel_std[static_cast<std::size_t>(c)] = std::sqrt(var);
        } else {
            ds.warnings.push_back("normalize: zero variance in channel " + std::to_string(c) +
                                  ", divisor kept at 1");
        }
    }
    return ds;
}

// Internal dataset format: fixed header, index lists, labels, pixel bytes.
// Roundtrips byte-identically (normalization stats included).
inline constexpr char kDatasetMagic[8] = {'F', 'E', 'A', 'R', 'D', 'S', '0', '1'};

inline void save_dataset(const ImageDataset& ds, const std::string& path) {
    ds.validate();
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open for write: " + path);
    auto w_u64 = [&](std::uint64_t v) { f.write(reinterpret_cast<const char*>(&v), 8); };
    auto w_i32 = [&](std::int32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); };
    auto w_f64 = [&](double v) { f.write(reinterpret_cast<const char*>(&v), 8); };
    f.write(kDatasetMagic, 8);
    w_i32(static_cast<std::int32_t>(ds.name.size()));
    f.write(ds.name.data(), static_cast<std::streamsize>(ds.name.size()));
    w_u64(ds.seed);
    w_i32(ds.n);
    w_i32(ds.channels);
    w_i32(ds.height);
    w_i32(ds.width);
    w_i32(ds.num_classes);
    w_f64(ds.dequant_offset);
    w_f64(ds.dequant_scale);
    w_i32(static_cast<std::int32_t>(ds.channel_mean.size()));
    for (double v : ds.channel_mean) w_f64(v);
    for (double v : ds.channel_std) w_f64(v);
    auto w_idx = [&](const std::vector<int>& idx) {
        w_i32(static_cast<std::int32_t>(idx.size()));
        for (int i : idx) w_i32(i);
    };
    w_idx(ds.train_idx);
    w_idx(ds.val_idx);
    w_idx(ds.test_idx);
    for (int y : ds.labels) f.put(static_cast<char>(y));
    f.write(reinterpret_cast<const char*>(ds.pixels.data()),
            static_cast<std::streamsize>(ds.pixels.size()));
    if (!f) throw FormatError("write failed: " + path);
}

inline ImageDataset load_dataset(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open: " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::string(magic, 8) != std::string(kDatasetMagic, 8))
        throw FormatError("bad dataset magic: " + path);
    auto r_u64 = [&]() { std::uint64_t v; f.read(reinterpret_cast<char*>(&v), 8); return v; };
    auto r_i32 = [&]() { std::int32_t v; f.read(reinterpret_cast<char*>(&v), 4); return v; };
    auto r_f64 = [&]() { double v; f.read(reinterpret_cast<char*>(&v), 8); return v; };
    ImageDataset ds;
    const int name_len = r_i32();
    if (name_len < 0 || name_len > 1024) throw FormatError("bad dataset header: " + path);
    ds.name.resize(static_cast<std::size_t>(name_len));
    f.read(ds.name.data(), name_len);
    ds.seed = r_u64();
    ds.n = r_i32();
    ds.channels = r_i32();
    ds.height = r_i32();
    ds.width = r_i32();
    ds.num_classes = r_i32();
    ds.dequant_offset = r_f64();
    ds.dequant_scale = r_f64();
    const int n_stats = r_i32();
    if (n_stats != 0 && n_stats != ds.channels) throw FormatError("bad dataset stats: " + path);
    ds.channel_mean.resize(static_cast<std::size_t>(n_stats));
    ds.channel_std.resize(static_cast<std::size_t>(n_stats));
    for (auto& v : ds.channel_mean) v = r_f64();
    for (auto& v : ds.channel_std) v = r_f64();
    auto r_idx = [&](std::vector<int>& idx) {
        const int k = r_i32();
        if (k < 0) throw FormatError("bad dataset split: " + path);
        idx.resize(static_cast<std::size_t>(k));
        for (auto& i : idx) i = r_i32();
    };
    r_idx(ds.train_idx);
    r_idx(ds.val_idx);
    r_idx(ds.test_idx);
    if (!f || ds.n <= 0) throw FormatError("bad dataset header: " + path);
    ds.labels.resize(static_cast<std::size_t>(ds.n));
    for (auto& y : ds.labels) y = static_cast<int>(static_cast<std::uint8_t>(f.get()));
    ds.pixels.resize(static_cast<std::size_t>(ds.n) * ds.channels * ds.height * ds.width);
    f.read(reinterpret_cast<char*>(ds.pixels.data()),
           static_cast<std::streamsize>(ds.pixels.size()));
    if (!f) throw FormatError("truncated dataset file: " + path);
    ds.validate();
    return ds;
}

}  // namespace fear
