#pragma once

#include <cmath>
#include <vector>

#include "fear/dataset.hpp"

namespace fear {

struct HogConfig {
    int cell = 8;   // pixels per cell side
    int bins = 9;   // unsigned orientation bins over [0, 180)

    void validate() const {
        if (cell <= 0 || bins <= 0) throw DomainError("hog: cell and bins must be positive");
    }
};

// HoG on a grayscale image: centered-difference gradients (edge-replicated
// borders), unsigned orientation with linear interpolation between adjacent
// bins, cell histograms, 2x2-cell blocks at stride 1 cell, per-block L2
// normalization, concatenated.
inline std::vector<double> hog_features_gray(const std::vector<double>& gray, int h, int w,
                                             const HogConfig& cfg) {
    cfg.validate();
    const int cy = h / cfg.cell, cx = w / cfg.cell;
    if (cy < 2 || cx < 2) throw DomainError("hog: image smaller than one 2x2-cell block");
    auto px = [&](int y, int x) {
        y = y < 0 ? 0 : (y >= h ? h - 1 : y);
        x = x < 0 ? 0 : (x >= w ? w - 1 : x);
        return gray[static_cast<std::size_t>(y) * w + x];
    };
    const double pi = 3.14159265358979323846;
    const double bin_width = 180.0 / cfg.bins;
    std::vector<double> hist(static_cast<std::size_t>(cy) * cx * cfg.bins, 0.0);
    for (int y = 0; y < cy * cfg.cell; ++y)
        for (int x = 0; x < cx * cfg.cell; ++x) {
            const double gx = 0.5 * (px(y, x + 1) - px(y, x - 1));
            const double gy = 0.5 * (px(y + 1, x) - px(y - 1, x));
            const double mag = std::sqrt(gx * gx + gy * gy);
            if (mag == 0.0) continue;
            double ori = std::atan2(gy, gx) * 180.0 / pi;  // (-180, 180]
            if (ori < 0.0) ori += 180.0;                    // unsigned, [0, 180)
            if (ori >= 180.0) ori -= 180.0;
            const double pos = ori / bin_width - 0.5;
            int b0 = static_cast<int>(std::floor(pos));
            const double frac = pos - b0;
            b0 = ((b0 % cfg.bins) + cfg.bins) % cfg.bins;
            const int b1 = (b0 + 1) % cfg.bins;
            const std::size_t base =
                (static_cast<std::size_t>(y / cfg.cell) * cx + x / cfg.cell) * cfg.bins;
            hist[base + static_cast<std::size_t>(b0)] += (1.0 - frac) * mag;
            hist[base + static_cast<std::size_t>(b1)] += frac * mag;
        }
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(cy - 1) * (cx - 1) * 4 * cfg.bins);
    for (int by = 0; by + 1 < cy; ++by)
        for (int bx = 0; bx + 1 < cx; ++bx) {
            std::vector<double> block;
            block.reserve(static_cast<std::size_t>(4) * cfg.bins);
            for (int dy = 0; dy < 2; ++dy)
                for (int dx = 0; dx < 2; ++dx) {
                    const std::size_t base =
                        (static_cast<std::size_t>(by + dy) * cx + bx + dx) * cfg.bins;
                    for (int b = 0; b < cfg.bins; ++b)
                        block.push_back(hist[base + static_cast<std::size_t>(b)]);
                }
            double sq = 0.0;
            for (double v : block) sq += v * v;
            const double inv = 1.0 / std::sqrt(sq + 1e-6);
            for (double v : block) out.push_back(v * inv);
        }
    return out;
}

// Luma grayscale conversion of one dataset image, then HoG. Single-channel
// datasets use the channel directly.
inline std::vector<double> hog_features(const ImageDataset& ds, int index, const HogConfig& cfg) {
    std::vector<double> gray(static_cast<std::size_t>(ds.height) * ds.width);
    for (int y = 0; y < ds.height; ++y)
        for (int x = 0; x < ds.width; ++x) {
            double v;
            if (ds.channels >= 3)
                v = 0.299 * ds.value(index, 0, y, x) + 0.587 * ds.value(index, 1, y, x) +
                    0.114 * ds.value(index, 2, y, x);
            else
                v = ds.value(index, 0, y, x);
            gray[static_cast<std::size_t>(y) * ds.width + x] = v;
        }
    return hog_features_gray(gray, ds.height, ds.width, cfg);
}

}  // namespace fear
