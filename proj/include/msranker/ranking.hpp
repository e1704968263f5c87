#pragma once

// Ranked candidate list with per-insert Average Precision, step rewards, and
// corpus-level MAP / MRR.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "msranker/tensor.hpp"

namespace msranker {

struct RankEntry {
    int cand_index = 0;
    double score = 0.0;
    int label = 0;
    int arrival = 0;  // insertion step, 0-based
};

// Entries stay sorted by score descending; ties keep earlier arrivals first.
class RankedList {
public:
    // Returns AveP of the list after the insertion.
    double insert(int cand_index, double score, int label) {
        if (!(score >= 0.0 && score <= 1.0))
            throw ValidationError("insert: score must lie in [0,1]");
        if (label != 0 && label != 1) throw ValidationError("insert: label must be 0 or 1");
        for (const RankEntry& e : entries_)
            if (e.cand_index == cand_index)
                throw ValidationError("insert: duplicate candidate index " +
                                      std::to_string(cand_index));
        RankEntry entry{cand_index, score, label, arrivals_++};
        auto pos = std::upper_bound(
            entries_.begin(), entries_.end(), score,
            [](double s, const RankEntry& e) { return e.score < s; });
        entries_.insert(pos, entry);
        return average_precision();
    }

    // AveP over the current list: (1/N) * sum_n n / position(n), with the
    // convention AveP = 0 when the list holds no correct entry.
    double average_precision() const {
        int n = 0;
        double sum = 0.0;
        for (size_t i = 0; i < entries_.size(); ++i) {
            if (entries_[i].label == 1) {
                ++n;
                sum += static_cast<double>(n) / static_cast<double>(i + 1);
            }
        }
        return n == 0 ? 0.0 : sum / n;
    }

    // 1 / rank of the highest-ranked correct entry; 0 when none present.
    double reciprocal_rank() const {
        for (size_t i = 0; i < entries_.size(); ++i)
            if (entries_[i].label == 1) return 1.0 / static_cast<double>(i + 1);
        return 0.0;
    }

    const std::vector<RankEntry>& entries() const { return entries_; }
    size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }

private:
    std::vector<RankEntry> entries_;
    int arrivals_ = 0;
};

// Step reward: the AveP delta caused by the insertion, or 0.1 when AveP is
// unchanged (equality tested at 1e-12; AveP values are small-integer ratios).
inline double step_reward(double ap_t, double ap_prev) {
    if (!(ap_t >= 0.0 && ap_t <= 1.0) || !(ap_prev >= 0.0 && ap_prev <= 1.0))
        throw ValidationError("step_reward: AveP values must lie in [0,1]");
    if (std::fabs(ap_t - ap_prev) <= 1e-12) return 0.1;
    return ap_t - ap_prev;
}

struct MapMrr {
    double map = 0.0;
    double mrr = 0.0;
};

inline MapMrr map_mrr(const std::vector<RankedList>& lists) {
    if (lists.empty()) throw ValidationError("map_mrr: no ranked lists");
    double ap_sum = 0.0, rr_sum = 0.0;
    for (const RankedList& l : lists) {
        const double rr = l.reciprocal_rank();
        if (rr == 0.0)
            throw ValidationError("map_mrr: question without a correct candidate");
        ap_sum += l.average_precision();
        rr_sum += rr;
    }
    return {ap_sum / static_cast<double>(lists.size()),
            rr_sum / static_cast<double>(lists.size())};
}

}  // namespace msranker
