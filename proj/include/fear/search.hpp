#pragma once

#include <limits>

#include "fear/evaluators.hpp"

namespace fear {

enum class FastestUpdateMode { as_printed, all_completed };

inline const char* fastest_update_mode_name(FastestUpdateMode m) {
    return m == FastestUpdateMode::as_printed ? "as_printed" : "all_completed";
}
inline FastestUpdateMode fastest_update_mode_from_name(const std::string& s) {
    if (s == "as_printed") return FastestUpdateMode::as_printed;
    if (s == "all_completed") return FastestUpdateMode::all_completed;
    throw FormatError("unknown fastest_update_mode: " + s);
}

struct SearchConfig {
    int budget = 50;  // B
    FearConfig fear;
    ShortregConfig shortreg;
    std::uint64_t seed = 1;
    FastestUpdateMode fastest_update_mode = FastestUpdateMode::as_printed;
    // Optional restriction of the sampling space; empty means all 15625 ids.
    std::vector<ArchId> pool;

    void validate() const {
        if (budget < 1) throw DomainError("search: budget must be >= 1");
    }
};

struct TraceRecord {
    int index = 0;
    EvalOutcome outcome;
    double best_so_far = 0.0;             // best score after this step
    int best_arch = -1;                   // -1 until a survivor exists
    std::int64_t fastest_so_far = -1;     // -1 encodes "infinity"
    std::int64_t cumulative_cost = 0;
};

struct SearchResult {
    ArchId best{};
    double best_score = 0.0;
    std::vector<TraceRecord> trace;
    std::int64_t total_cost_units = 0;
};

namespace detail {

// The shared sampling stream: both search variants draw the identical
// architecture sequence for a given seed.
inline std::vector<ArchId> sample_stream(const SearchConfig& cfg) {
    Rng rng(stream_seed(cfg.seed, "search-sample", 0));
    std::vector<ArchId> out;
    out.reserve(static_cast<std::size_t>(cfg.budget));
    for (int i = 0; i < cfg.budget; ++i) {
        if (cfg.pool.empty())
            out.push_back(ArchId{static_cast<int>(rng.below(kSpaceSize))});
        else
            out.push_back(cfg.pool[static_cast<std::size_t>(rng.below(cfg.pool.size()))]);
    }
    return out;
}

}  // namespace detail

// Algorithm 1: random search with FEAR and early rejection. In as_printed
// mode the fastest time updates only inside the best-improvement branch,
// exactly as the paper's pseudocode nests it; all_completed updates it on
// every completed evaluation.
template <typename T>
SearchResult random_search_fear(const ImageDataset& ds, const MacroConfig& macro,
                                const SearchConfig& cfg) {
    cfg.validate();
    cfg.fear.validate();
    SearchResult res;
    double best = -std::numeric_limits<double>::infinity();
    int best_arch = -1;
    std::int64_t fastest = -1;  // -1 = infinity
    std::int64_t cum = 0;
    const std::vector<ArchId> stream = detail::sample_stream(cfg);
    for (int i = 0; i < cfg.budget; ++i) {
        const ArchId a = stream[static_cast<std::size_t>(i)];
        std::optional<std::int64_t> budget;
        if (fastest >= 0) budget = fastest;
        EvalOutcome out = fear_evaluate<T>(a, ds, macro, cfg.fear, cfg.seed, budget);
        cum += out.cost_units;
        if (!out.rejected_early && out.score) {
            const std::int64_t time_taken = out.stage1_cost_units;
            if (cfg.fastest_update_mode == FastestUpdateMode::all_completed &&
                (fastest < 0 || time_taken < fastest))
                fastest = time_taken;
            if (*out.score > best) {
                best = *out.score;
                best_arch = a.id;
                if (cfg.fastest_update_mode == FastestUpdateMode::as_printed &&
                    (fastest < 0 || time_taken < fastest))
                    fastest = time_taken;
            }
        }
        TraceRecord rec;
        rec.index = i;
        rec.outcome = std::move(out);
        rec.best_so_far = best;
        rec.best_arch = best_arch;
        rec.fastest_so_far = fastest;
        rec.cumulative_cost = cum;
        res.trace.push_back(std::move(rec));
    }
    if (best_arch < 0) throw DomainError("random_search_fear: no survivor in the budget");
    res.best = ArchId{best_arch};
    res.best_score = best;
    res.total_cost_units = cum;
    return res;
}

// The shortreg control: identical sampling stream, plain reduced training,
// never rejects.
template <typename T>
SearchResult random_search_shortreg(const ImageDataset& ds, const MacroConfig& macro,
                                    const SearchConfig& cfg) {
    cfg.validate();
    cfg.shortreg.validate();
    SearchResult res;
    double best = -std::numeric_limits<double>::infinity();
    int best_arch = -1;
    std::int64_t cum = 0;
    const std::vector<ArchId> stream = detail::sample_stream(cfg);
    for (int i = 0; i < cfg.budget; ++i) {
        const ArchId a = stream[static_cast<std::size_t>(i)];
        EvalOutcome out = shortreg_evaluate<T>(a, ds, macro, cfg.shortreg, cfg.seed);
        cum += out.cost_units;
        if (out.score && *out.score > best) {
            best = *out.score;
            best_arch = a.id;
        }
        TraceRecord rec;
        rec.index = i;
        rec.outcome = std::move(out);
        rec.best_so_far = best;
        rec.best_arch = best_arch;
        rec.fastest_so_far = -1;
        rec.cumulative_cost = cum;
        res.trace.push_back(std::move(rec));
    }
    if (best_arch < 0) throw DomainError("random_search_shortreg: no survivor in the budget");
    res.best = ArchId{best_arch};
    res.best_score = best;
    res.total_cost_units = cum;
    return res;
}

}  // namespace fear
