#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "ape/util.hpp"

namespace ape {

/// One scored prediction: the confidence assigned to it and whether it was
/// correct.
struct ScoredOutcome {
    std::string pair_id;
    double confidence = 0.5;
    bool correct = false;
};

inline double agreement_rate(const std::vector<ScoredOutcome>& outcomes) {
    if (outcomes.empty()) throw DataError("agreement_rate over empty input");
    std::size_t hits = 0;
    for (const auto& o : outcomes) hits += o.correct;
    return static_cast<double>(hits) / outcomes.size();
}

// ---------------------------------------------------------------------------
// Reliability binning / ECE
// ---------------------------------------------------------------------------

struct ReliabilityBin {
    double lower = 0.0;
    double upper = 0.0;
    std::size_t count = 0;
    double mean_confidence = 0.0;
    double empirical_accuracy = 0.0;
};

struct ReliabilityTable {
    std::vector<ReliabilityBin> bins;
    int bin_count = 0;
    double range_lo = 0.0;
    double range_hi = 1.0;
    std::size_t sample_count = 0;

    /// ECE is exactly recomputable from the table.
    double ece() const {
        double sum = 0.0;
        for (const auto& b : bins) {
            if (b.count == 0) continue;
            sum += (static_cast<double>(b.count) / sample_count) *
                   std::abs(b.empirical_accuracy - b.mean_confidence);
        }
        return sum;
    }

    std::string to_csv() const {
        std::string out = "bin_lower,bin_upper,count,mean_confidence,empirical_accuracy\n";
        char buf[160];
        for (const auto& b : bins) {
            std::snprintf(buf, sizeof(buf), "%.6f,%.6f,%zu,%.6f,%.6f\n", b.lower, b.upper,
                          b.count, b.mean_confidence, b.empirical_accuracy);
            out += buf;
        }
        return out;
    }
};

inline json to_json(const ReliabilityTable& t) {
    json bins = json::array();
    for (const auto& b : t.bins) {
        bins.push_back(json{{"lower", b.lower},
                            {"upper", b.upper},
                            {"count", b.count},
                            {"mean_confidence", b.mean_confidence},
                            {"empirical_accuracy", b.empirical_accuracy}});
    }
    return json{{"bins", bins},
                {"bin_count", t.bin_count},
                {"range", {t.range_lo, t.range_hi}},
                {"sample_count", t.sample_count}};
}

/// Equal-width bins over [lo, hi): each bin takes [lower, upper), except the
/// last which also includes hi. Confidences outside the range are clipped
/// with a warning.
inline ReliabilityTable reliability_table(const std::vector<ScoredOutcome>& outcomes,
                                          int bin_count, double lo, double hi) {
    if (outcomes.empty()) throw DataError("reliability_table over empty input");
    if (bin_count < 1) throw ConfigError("bin_count must be >= 1");
    if (!(lo < hi)) throw ConfigError("bad confidence range");

    ReliabilityTable t;
    t.bin_count = bin_count;
    t.range_lo = lo;
    t.range_hi = hi;
    t.sample_count = outcomes.size();
    double width = (hi - lo) / bin_count;
    t.bins.resize(static_cast<std::size_t>(bin_count));
    std::vector<double> conf_sum(static_cast<std::size_t>(bin_count), 0.0);
    std::vector<std::size_t> correct(static_cast<std::size_t>(bin_count), 0);
    for (int b = 0; b < bin_count; ++b) {
        t.bins[static_cast<std::size_t>(b)].lower = lo + b * width;
        t.bins[static_cast<std::size_t>(b)].upper = (b == bin_count - 1) ? hi : lo + (b + 1) * width;
    }

    std::size_t clipped = 0;
    for (const auto& o : outcomes) {
        double c = o.confidence;
        if (c < lo || c > hi) {
            ++clipped;
            c = std::min(hi, std::max(lo, c));
        }
        auto b = static_cast<std::size_t>((c - lo) / width);
        if (b >= static_cast<std::size_t>(bin_count)) b = static_cast<std::size_t>(bin_count) - 1;
        t.bins[b].count += 1;
        conf_sum[b] += c;
        correct[b] += o.correct;
    }
    if (clipped > 0)
        log_warn(std::to_string(clipped) + " confidence value(s) outside [" + std::to_string(lo) +
                 ", " + std::to_string(hi) + "] were clipped");

    for (std::size_t b = 0; b < t.bins.size(); ++b) {
        if (t.bins[b].count == 0) continue;
        t.bins[b].mean_confidence = conf_sum[b] / t.bins[b].count;
        t.bins[b].empirical_accuracy = static_cast<double>(correct[b]) / t.bins[b].count;
    }
    return t;
}

/// Expected calibration error: bin-weighted mean |accuracy - confidence|.
inline double ece(const std::vector<ScoredOutcome>& outcomes, int bin_count, double lo,
                  double hi) {
    return reliability_table(outcomes, bin_count, lo, hi).ece();
}

// ---------------------------------------------------------------------------
// Rank metrics: correctness is the positive class, scored by confidence.
// ---------------------------------------------------------------------------

/// Tie-aware AUROC (Mann-Whitney with midranks): the probability a random
/// correct outcome outranks a random incorrect one, ties counting one half.
inline double auroc(const std::vector<ScoredOutcome>& outcomes) {
    std::size_t n_pos = 0;
    for (const auto& o : outcomes) n_pos += o.correct;
    std::size_t n_neg = outcomes.size() - n_pos;
    if (n_pos == 0 || n_neg == 0)
        throw DataError("auroc needs at least one correct and one incorrect outcome");

    std::vector<std::size_t> idx(outcomes.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return outcomes[a].confidence < outcomes[b].confidence;
    });

    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < idx.size()) {
        std::size_t j = i;
        while (j < idx.size() &&
               outcomes[idx[j]].confidence == outcomes[idx[i]].confidence) {
            ++j;
        }
        // Ranks are 1-based; every member of a tie group gets the midrank.
        double midrank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        for (std::size_t k = i; k < j; ++k) {
            if (outcomes[idx[k]].correct) rank_sum_pos += midrank;
        }
        i = j;
    }
    double u = rank_sum_pos - static_cast<double>(n_pos) * (n_pos + 1) / 2.0;
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

/// Average precision with ties grouped: items of equal confidence are
/// retrieved together and every positive in the group contributes the
/// precision at the group's end.
inline double auprc(const std::vector<ScoredOutcome>& outcomes) {
    std::size_t n_pos = 0;
    for (const auto& o : outcomes) n_pos += o.correct;
    if (n_pos == 0) throw DataError("auprc needs at least one correct outcome");

    std::vector<std::size_t> idx(outcomes.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return outcomes[a].confidence > outcomes[b].confidence;
    });

    double sum = 0.0;
    std::size_t retrieved = 0;
    std::size_t true_pos = 0;
    std::size_t i = 0;
    while (i < idx.size()) {
        std::size_t j = i;
        std::size_t group_pos = 0;
        while (j < idx.size() &&
               outcomes[idx[j]].confidence == outcomes[idx[i]].confidence) {
            group_pos += outcomes[idx[j]].correct;
            ++j;
        }
        retrieved += j - i;
        true_pos += group_pos;
        double precision = static_cast<double>(true_pos) / retrieved;
        sum += static_cast<double>(group_pos) * precision;
        i = j;
    }
    return sum / static_cast<double>(n_pos);
}

}  // namespace ape
