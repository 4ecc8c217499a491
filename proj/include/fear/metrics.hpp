#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "fear/common.hpp"

namespace fear {

// Average ranks, ties receiving the mean of their rank span.
inline std::vector<double> average_ranks(const std::vector<double>& v) {
    const int n = static_cast<int>(v.size());
    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        return v[static_cast<std::size_t>(a)] < v[static_cast<std::size_t>(b)];
    });
    std::vector<double> ranks(static_cast<std::size_t>(n), 0.0);
    int i = 0;
    while (i < n) {
        int j = i;
        while (j + 1 < n && v[static_cast<std::size_t>(order[static_cast<std::size_t>(j + 1)])] ==
                                v[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])])
            ++j;
        const double r = 0.5 * (i + j) + 1.0;
        for (int k = i; k <= j; ++k)
            ranks[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])] = r;
        i = j + 1;
    }
    return ranks;
}

// Tie-aware Spearman rank correlation: Pearson correlation of average ranks.
// Returns nullopt when either rank vector has zero variance (all ties).
inline std::optional<double> spearman(const std::vector<double>& a,
                                      const std::vector<double>& b) {
    if (a.size() != b.size()) throw ShapeError("spearman: length mismatch");
    if (a.size() < 2) throw DomainError("spearman: need length >= 2");
    const std::vector<double> ra = average_ranks(a), rb = average_ranks(b);
    const double n = static_cast<double>(a.size());
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += ra[i];
        mb += rb[i];
    }
    ma /= n;
    mb /= n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double da = ra[i] - ma, db = rb[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if (saa == 0.0 || sbb == 0.0) return std::nullopt;
    return sab / std::sqrt(saa * sbb);
}

namespace detail {

// Indices sorted by descending score, ties broken by id ascending.
inline std::vector<int> ranked_desc(const std::vector<double>& scores,
                                    const std::vector<int>& ids) {
    const int n = static_cast<int>(scores.size());
    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        const auto ia = static_cast<std::size_t>(a), ib = static_cast<std::size_t>(b);
        if (scores[ia] != scores[ib]) return scores[ia] > scores[ib];
        return ids[ia] < ids[ib];
    });
    return order;
}

}  // namespace detail

// Fraction of the top-k (k = ceil(p*n)) shared between the ground-truth and
// method orderings; ties broken by arch id.
inline double common_ratio(const std::vector<double>& gt_scores,
                           const std::vector<double>& method_scores,
                           const std::vector<int>& arch_ids, double top_percent) {
    if (gt_scores.size() != method_scores.size() || gt_scores.size() != arch_ids.size())
        throw ShapeError("common_ratio: length mismatch");
    const int n = static_cast<int>(gt_scores.size());
    const int k = static_cast<int>(std::ceil(top_percent / 100.0 * n));
    if (k < 1) throw DomainError("common_ratio: top percent yields an empty bin");
    const std::vector<int> go = detail::ranked_desc(gt_scores, arch_ids);
    const std::vector<int> mo = detail::ranked_desc(method_scores, arch_ids);
    std::vector<char> in_gt(static_cast<std::size_t>(n), 0);
    for (int i = 0; i < k; ++i) in_gt[static_cast<std::size_t>(go[static_cast<std::size_t>(i)])] = 1;
    int common = 0;
    for (int i = 0; i < k; ++i)
        if (in_gt[static_cast<std::size_t>(mo[static_cast<std::size_t>(i)])]) ++common;
    return static_cast<double>(common) / static_cast<double>(k);
}

struct BinReport {
    std::string method;
    int bin_percent = 100;
    std::optional<double> spearman;  // omitted for degenerate bins
    double common_ratio = 0.0;
    double avg_cost_units = 0.0;
    double avg_wall_ms = 0.0;
    int n_in_bin = 0;
};

inline const std::vector<int>& bin_percents() {
    static const std::vector<int> kBins = {10, 20, 30, 40, 50, 100};
    return kBins;
}

// Cumulative top-percent bins by ground-truth rank: within-bin Spearman,
// whole-population common_ratio at the bin percent, costs averaged over bin
// members' evaluations.
inline std::vector<BinReport> bin_report(const std::string& method,
                                         const std::vector<double>& gt_scores,
                                         const std::vector<double>& method_scores,
                                         const std::vector<int>& arch_ids,
                                         const std::vector<double>& costs,
                                         const std::vector<double>& wall_ms) {
    const int n = static_cast<int>(gt_scores.size());
    if (method_scores.size() != gt_scores.size() || arch_ids.size() != gt_scores.size() ||
        costs.size() != gt_scores.size() || wall_ms.size() != gt_scores.size())
        throw ShapeError("bin_report: length mismatch");
    const std::vector<int> go = detail::ranked_desc(gt_scores, arch_ids);
    std::vector<BinReport> out;
    for (int p : bin_percents()) {
        BinReport r;
        r.method = method;
        r.bin_percent = p;
        const int k = static_cast<int>(std::ceil(p / 100.0 * n));
        r.n_in_bin = k;
        std::vector<double> g, m;
        double cs = 0.0, ws = 0.0;
        for (int i = 0; i < k; ++i) {
            const auto idx = static_cast<std::size_t>(go[static_cast<std::size_t>(i)]);
            g.push_back(gt_scores[idx]);
            m.push_back(method_scores[idx]);
            cs += costs[idx];
            ws += wall_ms[idx];
        }
        if (k >= 2) r.spearman = spearman(g, m);
        r.common_ratio = common_ratio(gt_scores, method_scores, arch_ids, p);
        r.avg_cost_units = cs / static_cast<double>(k);
        r.avg_wall_ms = ws / static_cast<double>(k);
        out.push_back(std::move(r));
    }
    return out;
}

struct ParetoPoint {
    double cost = 0.0;
    double quality = 0.0;

    bool operator==(const ParetoPoint&) const = default;
};

// Non-dominated subset: kept unless some other point has cost <= and
// quality >= with at least one strict inequality.
inline std::vector<ParetoPoint> pareto_frontier(const std::vector<ParetoPoint>& points) {
    std::vector<ParetoPoint> out;
    for (std::size_t i = 0; i < points.size(); ++i) {
        bool dominated = false;
        for (std::size_t j = 0; j < points.size() && !dominated; ++j) {
            if (j == i) continue;
            const auto& a = points[i];
            const auto& b = points[j];
            if (b.cost <= a.cost && b.quality >= a.quality &&
                (b.cost < a.cost || b.quality > a.quality))
                dominated = true;
        }
        if (!dominated) out.push_back(points[i]);
    }
    return out;
}

}  // namespace fear
