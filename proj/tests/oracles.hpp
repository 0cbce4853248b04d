#pragma once

// Independent reference implementations used only by tests. These stay
// deliberately naive (exhaustive counting, direct curve integration) so they
// can arbitrate the production implementations.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <vector>

#include "ape/metrics.hpp"

namespace oracle {

/// AUROC by exhaustive pair counting: wins count 1, ties count 1/2.
inline double auroc_pair_counting(const std::vector<ape::ScoredOutcome>& outcomes) {
    double wins = 0.0;
    std::size_t n_pos = 0;
    std::size_t n_neg = 0;
    for (const auto& p : outcomes) {
        if (!p.correct) continue;
        ++n_pos;
        for (const auto& q : outcomes) {
            if (q.correct) continue;
            if (p.confidence > q.confidence) wins += 1.0;
            else if (p.confidence == q.confidence) wins += 0.5;
        }
    }
    for (const auto& q : outcomes) n_neg += !q.correct;
    return wins / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

/// AUPRC by direct integration of the precision-recall curve over the
/// distinct-threshold sweep: sum of precision * recall-gain at each step.
inline double auprc_curve_integration(const std::vector<ape::ScoredOutcome>& outcomes) {
    std::set<double, std::greater<double>> thresholds;
    std::size_t total_pos = 0;
    for (const auto& o : outcomes) {
        thresholds.insert(o.confidence);
        total_pos += o.correct;
    }
    double area = 0.0;
    double prev_recall = 0.0;
    for (double t : thresholds) {
        std::size_t retrieved = 0;
        std::size_t tp = 0;
        for (const auto& o : outcomes) {
            if (o.confidence >= t) {
                ++retrieved;
                tp += o.correct;
            }
        }
        double precision = static_cast<double>(tp) / retrieved;
        double recall = static_cast<double>(tp) / total_pos;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    return area;
}

/// ECE by direct binning, written independently of the library:
/// left-closed equal-width bins, last bin closed, out-of-range clipped.
inline double ece_direct(const std::vector<ape::ScoredOutcome>& outcomes, int bins, double lo,
                         double hi) {
    std::vector<double> conf(static_cast<std::size_t>(bins), 0.0);
    std::vector<double> acc(static_cast<std::size_t>(bins), 0.0);
    std::vector<std::size_t> count(static_cast<std::size_t>(bins), 0);
    for (const auto& o : outcomes) {
        double c = std::clamp(o.confidence, lo, hi);
        int b = static_cast<int>((c - lo) / (hi - lo) * bins);
        if (b >= bins) b = bins - 1;
        conf[static_cast<std::size_t>(b)] += c;
        acc[static_cast<std::size_t>(b)] += o.correct ? 1.0 : 0.0;
        count[static_cast<std::size_t>(b)] += 1;
    }
    double total = 0.0;
    for (int b = 0; b < bins; ++b) {
        auto ub = static_cast<std::size_t>(b);
        if (count[ub] == 0) continue;
        double mean_conf = conf[ub] / count[ub];
        double mean_acc = acc[ub] / count[ub];
        total += (static_cast<double>(count[ub]) / outcomes.size()) *
                 std::abs(mean_acc - mean_conf);
    }
    return total;
}

/// Spearman rank correlation with midranks for ties.
inline double spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
    auto ranks = [](const std::vector<double>& v) {
        std::vector<std::size_t> idx(v.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
        std::vector<double> r(v.size());
        std::size_t i = 0;
        while (i < idx.size()) {
            std::size_t j = i;
            while (j < idx.size() && v[idx[j]] == v[idx[i]]) ++j;
            double mid = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
            for (std::size_t k = i; k < j; ++k) r[idx[k]] = mid;
            i = j;
        }
        return r;
    };
    auto rx = ranks(xs);
    auto ry = ranks(ys);
    double mx = 0.0;
    double my = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        mx += rx[i];
        my += ry[i];
    }
    mx /= rx.size();
    my /= ry.size();
    double cov = 0.0;
    double vx = 0.0;
    double vy = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        cov += (rx[i] - mx) * (ry[i] - my);
        vx += (rx[i] - mx) * (rx[i] - mx);
        vy += (ry[i] - my) * (ry[i] - my);
    }
    if (vx == 0.0 || vy == 0.0) return 1.0;  // constant sequence: treat as perfectly monotone
    return cov / std::sqrt(vx * vy);
}

}  // namespace oracle
