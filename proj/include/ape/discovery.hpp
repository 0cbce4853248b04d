#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "ape/core.hpp"
#include "ape/judge.hpp"
#include "ape/util.hpp"

namespace ape {

// ---------------------------------------------------------------------------
// Failure cases
// ---------------------------------------------------------------------------

/// A pair the vanilla judge got wrong: the initial verdict disagrees with the
/// human label.
struct FailureCase {
    PreferencePair pair;
    Label initial_verdict = Label::A;

    void validate() const {
        if (initial_verdict == pair.label)
            throw DataError("pair \"" + pair.id + "\" is not a failure: verdict matches label");
    }
};

inline json to_json(const FailureCase& f) {
    return json{{"pair", to_json(f.pair)}, {"initial_verdict", to_string(f.initial_verdict)}};
}

inline FailureCase failure_from_json(const json& j) {
    FailureCase f;
    f.pair = preference_pair_from_json(j.at("pair"));
    auto v = label_from_string(j.at("initial_verdict").get<std::string>());
    if (!v) throw DataError("failure case for \"" + f.pair.id + "\": bad initial verdict");
    f.initial_verdict = *v;
    f.validate();
    return f;
}

/// Returns exactly the pairs whose vanilla verdict disagrees with the label,
/// preserving dataset order.
inline std::vector<FailureCase> collect_failures(const std::vector<PreferencePair>& pairs,
                                                 const std::vector<JudgmentRecord>& judgments) {
    std::unordered_map<std::string, const JudgmentRecord*> by_id;
    for (const auto& r : judgments) {
        if (r.mode == JudgeMode::vanilla) by_id[r.pair_id] = &r;
    }
    std::vector<FailureCase> out;
    for (const auto& p : pairs) {
        auto it = by_id.find(p.id);
        if (it == by_id.end())
            throw DataError("no vanilla judgment for pair \"" + p.id + "\"");
        if (it->second->verdict != p.label) {
            out.push_back(FailureCase{p, it->second->verdict});
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Dimension proposal and verification
// ---------------------------------------------------------------------------

namespace detail {

inline std::optional<std::pair<std::string, std::string>> parse_proposal(const std::string& raw) {
    for (const auto& obj : extract_json_objects(raw)) {
        if (!obj.contains("name") || !obj.contains("rubric")) continue;
        if (!obj["name"].is_string() || !obj["rubric"].is_string()) continue;
        std::string name = obj["name"].get<std::string>();
        std::string rubric = obj["rubric"].get<std::string>();
        if (name.empty() || rubric.empty()) continue;
        return std::make_pair(name, rubric);
    }
    return std::nullopt;
}

}  // namespace detail

/// Proposal loop for one failure case: the support model suggests a
/// dimension, the judge re-evaluates the case with it embedded, and the
/// loop feeds failed attempts back until the verdict flips or the retry
/// budget runs out. Each round costs exactly one support call.
inline std::optional<EvaluationDimension> propose_and_verify(const FailureCase& failure,
                                                             int retry_limit,
                                                             const Judger& support,
                                                             const Judger& judge) {
    if (retry_limit < 1) throw ConfigError("retry_limit must be >= 1");
    const PromptTemplate& tmpl = support.templates().get("propose");
    std::string history = "(none)";
    for (int attempt = 1; attempt <= retry_limit; ++attempt) {
        std::map<std::string, std::string> bindings{
            {"pair_id", failure.pair.id},
            {"attempt", std::to_string(attempt)},
            {"prompt", failure.pair.prompt},
            {"response_a", failure.pair.response_a},
            {"response_b", failure.pair.response_b},
            {"label", to_string(failure.pair.label)},
            {"history", history}};
        std::string raw = support.complete_text(render_template(tmpl, bindings));
        auto proposal = detail::parse_proposal(raw);
        if (!proposal) {
            history += "\n- attempt " + std::to_string(attempt) + ": reply was not parsable";
            continue;
        }

        EvaluationDimension dim;
        dim.id = failure.pair.id + "-d" + std::to_string(attempt);
        dim.name = proposal->first;
        dim.rubric = proposal->second;
        dim.origin_case_id = failure.pair.id;

        auto outcome = judge.judge_pair(failure.pair, JudgeMode::dimension, &dim);
        if (outcome && outcome->record.verdict == failure.pair.label) {
            dim.verified = true;
            dim.validate();
            return dim;
        }
        std::string result = outcome ? "judge still chose " + to_string(outcome->record.verdict)
                                     : "judge reply was not parsable";
        history += "\n- attempt " + std::to_string(attempt) + ": name: " + dim.name +
                   "; rubric: " + dim.rubric + "; result: " + result;
    }
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Score-separation filter
// ---------------------------------------------------------------------------

/// Keeps a candidate iff, on its origin failure case, the judge's independent
/// scores of the two responses differ by strictly more than `threshold`.
/// A gap equal to the threshold does not survive. Unscorable candidates are
/// dropped with a logged reason.
inline std::vector<EvaluationDimension> semantic_filter(
    const std::vector<EvaluationDimension>& candidates, const std::vector<FailureCase>& cases,
    double threshold, const Judger& judge) {
    std::unordered_map<std::string, const FailureCase*> by_id;
    for (const auto& c : cases) by_id[c.pair.id] = &c;

    std::vector<EvaluationDimension> kept;
    for (const auto& dim : candidates) {
        auto it = by_id.find(dim.origin_case_id);
        if (it == by_id.end())
            throw DataError("candidate \"" + dim.id + "\" references unknown case \"" +
                            dim.origin_case_id + "\"");
        const PreferencePair& pair = it->second->pair;
        auto score_a = judge.score_response(pair, Label::A, dim);
        auto score_b = judge.score_response(pair, Label::B, dim);
        if (!score_a || !score_b) {
            log_warn("discarding dimension \"" + dim.id + "\": unscorable on its origin case");
            continue;
        }
        if (std::abs(*score_a - *score_b) > threshold) kept.push_back(dim);
    }
    return kept;
}

// ---------------------------------------------------------------------------
// Coverage matrix and top-K selection
// ---------------------------------------------------------------------------

struct CoverageMatrix {
    std::vector<std::string> dimension_ids;
    std::vector<std::string> case_ids;
    // cells[j][i] == 1 iff judging case i under dimension j alone yields the
    // human label.
    std::vector<std::vector<std::uint8_t>> cells;

    double row_rate(std::size_t j) const {
        if (case_ids.empty()) return 0.0;
        std::size_t hits = 0;
        for (auto c : cells[j]) hits += c;
        return static_cast<double>(hits) / static_cast<double>(case_ids.size());
    }
};

inline json to_json(const CoverageMatrix& m) {
    json rows = json::array();
    for (const auto& row : m.cells) {
        json r = json::array();
        for (auto c : row) r.push_back(static_cast<int>(c));
        rows.push_back(std::move(r));
    }
    return json{{"dimension_ids", m.dimension_ids}, {"case_ids", m.case_ids}, {"cells", rows}};
}

inline CoverageMatrix coverage_matrix_from_json(const json& j) {
    CoverageMatrix m;
    m.dimension_ids = j.at("dimension_ids").get<std::vector<std::string>>();
    m.case_ids = j.at("case_ids").get<std::vector<std::string>>();
    for (const auto& row : j.at("cells")) {
        std::vector<std::uint8_t> r;
        for (const auto& c : row) r.push_back(static_cast<std::uint8_t>(c.get<int>()));
        m.cells.push_back(std::move(r));
    }
    return m;
}

/// Evaluates every (dimension, case) cell: 1 iff the dimension alone fixes
/// the case. Cells are independent and run concurrently up to `workers`.
inline CoverageMatrix coverage_matrix(const std::vector<EvaluationDimension>& dimensions,
                                      const std::vector<FailureCase>& validation_cases,
                                      const Judger& judge, std::size_t workers = 1) {
    if (validation_cases.empty()) throw DataError("coverage needs a nonempty validation set");
    CoverageMatrix m;
    for (const auto& d : dimensions) m.dimension_ids.push_back(d.id);
    for (const auto& c : validation_cases) m.case_ids.push_back(c.pair.id);
    m.cells.assign(dimensions.size(),
                   std::vector<std::uint8_t>(validation_cases.size(), 0));

    std::size_t n_cases = validation_cases.size();
    parallel_for(dimensions.size() * n_cases, workers, [&](std::size_t flat) {
        std::size_t j = flat / n_cases;
        std::size_t i = flat % n_cases;
        auto outcome =
            judge.judge_pair(validation_cases[i].pair, JudgeMode::dimension, &dimensions[j]);
        if (!outcome) {
            log_warn("coverage cell (" + dimensions[j].id + ", " +
                     validation_cases[i].pair.id + "): no parsable verdict, counting 0");
            return;
        }
        m.cells[j][i] =
            outcome->record.verdict == validation_cases[i].pair.label ? 1 : 0;
    });
    return m;
}

struct DimensionSet {
    std::vector<EvaluationDimension> dimensions;  // descending coverage rate
    int k = 0;
    std::string validation_id;
    double union_coverage = 0.0;
};

inline json to_json(const DimensionSet& s) {
    json dims = json::array();
    for (const auto& d : s.dimensions) dims.push_back(to_json(d));
    return json{{"dimensions", dims},
                {"k", s.k},
                {"validation_id", s.validation_id},
                {"union_coverage", s.union_coverage}};
}

/// Ranks dimensions by coverage rate (descending) and keeps the top k.
/// Ties break by earlier origin-case position in the validation order, then
/// id, so the result does not depend on input row order.
inline DimensionSet select_top_k(const CoverageMatrix& matrix,
                                 const std::vector<EvaluationDimension>& dimensions, int k) {
    if (dimensions.size() != matrix.dimension_ids.size())
        throw DataError("dimension list does not match coverage matrix");
    if (k < 1 || static_cast<std::size_t>(k) > matrix.dimension_ids.size())
        throw DataError("k=" + std::to_string(k) + " out of range for " +
                        std::to_string(matrix.dimension_ids.size()) + " dimensions");

    std::unordered_map<std::string, std::size_t> case_pos;
    for (std::size_t i = 0; i < matrix.case_ids.size(); ++i) case_pos[matrix.case_ids[i]] = i;

    struct Row {
        std::size_t index;
        double rate;
        std::size_t origin_pos;
    };
    std::vector<Row> rows;
    rows.reserve(dimensions.size());
    for (std::size_t j = 0; j < dimensions.size(); ++j) {
        auto it = case_pos.find(dimensions[j].origin_case_id);
        std::size_t pos = it == case_pos.end() ? matrix.case_ids.size() : it->second;
        rows.push_back(Row{j, matrix.row_rate(j), pos});
    }
    std::sort(rows.begin(), rows.end(), [&](const Row& a, const Row& b) {
        if (a.rate != b.rate) return a.rate > b.rate;
        if (a.origin_pos != b.origin_pos) return a.origin_pos < b.origin_pos;
        return dimensions[a.index].id < dimensions[b.index].id;
    });

    DimensionSet out;
    out.k = k;
    {
        ContentHash h;
        for (const auto& id : matrix.case_ids) h.feed(id);
        out.validation_id = "cases-" + h.hex().substr(0, 12);
    }
    std::vector<bool> covered(matrix.case_ids.size(), false);
    for (int r = 0; r < k; ++r) {
        const Row& row = rows[static_cast<std::size_t>(r)];
        EvaluationDimension d = dimensions[row.index];
        d.coverage_rate = row.rate;
        out.dimensions.push_back(std::move(d));
        for (std::size_t i = 0; i < matrix.case_ids.size(); ++i) {
            if (matrix.cells[row.index][i]) covered[i] = true;
        }
    }
    std::size_t hit = 0;
    for (bool c : covered) hit += c;
    out.union_coverage =
        matrix.case_ids.empty() ? 0.0 : static_cast<double>(hit) / matrix.case_ids.size();
    return out;
}

}  // namespace ape
