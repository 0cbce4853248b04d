#pragma once

#include <algorithm>
#include <cstdlib>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ape/core.hpp"
#include "ape/discovery.hpp"
#include "ape/judge.hpp"
#include "ape/util.hpp"

namespace ape {

// ---------------------------------------------------------------------------
// Votes
// ---------------------------------------------------------------------------

enum class VoteValue : int { prefer_a = +1, prefer_b = -1, abstain = 0 };

inline std::string to_string(VoteValue v) {
    switch (v) {
        case VoteValue::prefer_a: return "+1";
        case VoteValue::prefer_b: return "-1";
        case VoteValue::abstain: return "abstain";
    }
    return "abstain";
}

inline std::optional<VoteValue> vote_value_from_string(std::string_view s) {
    if (s == "+1") return VoteValue::prefer_a;
    if (s == "-1") return VoteValue::prefer_b;
    if (s == "abstain") return VoteValue::abstain;
    return std::nullopt;
}

struct Vote {
    std::string dimension_id;
    VoteValue value = VoteValue::abstain;
};

enum class JuryPreference { A, B, tie };

inline std::string to_string(JuryPreference p) {
    switch (p) {
        case JuryPreference::A: return "A";
        case JuryPreference::B: return "B";
        case JuryPreference::tie: return "tie";
    }
    return "tie";
}

inline std::optional<JuryPreference> jury_preference_from_string(std::string_view s) {
    if (s == "A") return JuryPreference::A;
    if (s == "B") return JuryPreference::B;
    if (s == "tie") return JuryPreference::tie;
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

enum class AbstainPolicy { shrink_n, fail_instance };

inline std::string to_string(AbstainPolicy p) {
    return p == AbstainPolicy::shrink_n ? "shrink_n" : "fail_instance";
}

inline std::optional<AbstainPolicy> abstain_policy_from_string(std::string_view s) {
    if (s == "shrink_n") return AbstainPolicy::shrink_n;
    if (s == "fail_instance") return AbstainPolicy::fail_instance;
    return std::nullopt;
}

struct EnsembleConfig {
    int t_gate = 4;
    int k_dimensions = 16;
    AbstainPolicy abstain_policy = AbstainPolicy::shrink_n;

    void validate() const {
        if (t_gate < 0) throw ConfigError("t_gate must be >= 0");
        if (k_dimensions < 1) throw ConfigError("k_dimensions must be >= 1");
        if (t_gate >= k_dimensions) {
            log_warn("t_gate " + std::to_string(t_gate) + " >= k_dimensions " +
                     std::to_string(k_dimensions) + ": no override is ever possible");
        }
    }
};

// ---------------------------------------------------------------------------
// Jury confidence
// ---------------------------------------------------------------------------

/// Maps a raw consensus margin onto [0.5, 1.0]: 0.5 is a coin flip, 1.0 is
/// unanimity. Linear in c_jury, exact at both endpoints.
inline double calibrate_confidence(int c_jury, int n_cast) {
    if (n_cast < 1) throw DataError("calibrate_confidence needs n_cast >= 1");
    if (c_jury < 0 || c_jury > n_cast)
        throw DataError("c_jury " + std::to_string(c_jury) + " outside [0, " +
                        std::to_string(n_cast) + "]");
    return 0.5 + static_cast<double>(c_jury) / (2.0 * n_cast);
}

struct JuryResult {
    std::string pair_id;
    std::vector<Vote> votes;          // one per dimension, stored order
    int n_cast = 0;                   // non-abstaining votes
    int c_jury = 0;                   // |signed sum| over cast votes
    double calibrated_confidence = 0.5;
    JuryPreference jury_preference = JuryPreference::tie;
};

/// Aggregates votes: c_jury = |sum of cast votes|, preference from the sign.
/// With zero cast votes, shrink_n degrades to (c=0, tie, 0.5) and
/// fail_instance raises.
inline JuryResult jury_confidence(const std::string& pair_id, const std::vector<Vote>& votes,
                                  AbstainPolicy policy = AbstainPolicy::shrink_n) {
    JuryResult out;
    out.pair_id = pair_id;
    out.votes = votes;
    int sum = 0;
    for (const auto& v : votes) {
        if (v.value == VoteValue::abstain) continue;
        sum += static_cast<int>(v.value);
        ++out.n_cast;
    }
    if (out.n_cast == 0) {
        if (policy == AbstainPolicy::fail_instance)
            throw DataError("pair \"" + pair_id + "\": every juror abstained");
        return out;  // c=0, tie, 0.5
    }
    out.c_jury = std::abs(sum);
    out.jury_preference = sum > 0   ? JuryPreference::A
                          : sum < 0 ? JuryPreference::B
                                    : JuryPreference::tie;
    out.calibrated_confidence = calibrate_confidence(out.c_jury, out.n_cast);
    return out;
}

/// One dimension-mode judge call per juror; A maps to +1, B to -1, and a
/// parse failure after repairs to abstain. Jurors never see the initial
/// verdict or each other.
inline std::vector<Vote> cast_votes(const PreferencePair& pair, const DimensionSet& dimensions,
                                    const Judger& judge, std::size_t workers = 1) {
    if (dimensions.dimensions.empty()) throw ConfigError("cast_votes needs dimensions");
    std::vector<Vote> votes(dimensions.dimensions.size());
    parallel_for(dimensions.dimensions.size(), workers, [&](std::size_t i) {
        const auto& dim = dimensions.dimensions[i];
        votes[i].dimension_id = dim.id;
        auto outcome = judge.judge_pair(pair, JudgeMode::dimension, &dim);
        if (!outcome) {
            votes[i].value = VoteValue::abstain;
            return;
        }
        votes[i].value =
            outcome->record.verdict == Label::A ? VoteValue::prefer_a : VoteValue::prefer_b;
    });
    return votes;
}

// ---------------------------------------------------------------------------
// Gated decision
// ---------------------------------------------------------------------------

struct Decision {
    std::string pair_id;
    Label initial = Label::A;
    JuryPreference jury = JuryPreference::tie;
    Label final_verdict = Label::A;
    bool overridden = false;
    int c_jury = 0;
    int n_cast = 0;
    double calibrated_confidence = 0.5;
};

/// The gating rule: adopt the jury preference iff c_jury strictly exceeds
/// t_gate; otherwise retain the initial verdict. A tie (c_jury = 0) never
/// clears any gate.
inline Decision decide(Label initial, const JuryResult& jury, const EnsembleConfig& config) {
    Decision d;
    d.pair_id = jury.pair_id;
    d.initial = initial;
    d.jury = jury.jury_preference;
    d.c_jury = jury.c_jury;
    d.n_cast = jury.n_cast;
    d.calibrated_confidence = jury.calibrated_confidence;

    bool gate_open = jury.c_jury > config.t_gate && jury.jury_preference != JuryPreference::tie;
    Label jury_label = jury.jury_preference == JuryPreference::A ? Label::A : Label::B;
    d.overridden = gate_open && jury_label != initial;
    d.final_verdict = gate_open ? jury_label : initial;
    return d;
}

/// Sign of the vote sum; a tie falls back to the initial verdict.
inline Label majority_vote_baseline(const std::vector<Vote>& votes, Label initial) {
    int sum = 0;
    for (const auto& v : votes) sum += static_cast<int>(v.value);
    if (sum > 0) return Label::A;
    if (sum < 0) return Label::B;
    return initial;
}

// ---------------------------------------------------------------------------
// Threshold calibration
// ---------------------------------------------------------------------------

struct CalibrationRow {
    Label label = Label::A;    // human ground truth
    Label initial = Label::A;  // vanilla verdict
    JuryResult jury;
};

struct GateStats {
    int gate = 0;
    double agreement = 0.0;
    int overrides = 0;
};

struct CalibrationResult {
    int t_gate = 0;
    std::vector<GateStats> table;  // one row per candidate gate, ascending
};

/// Simulates the decision rule over a labelled calibration set for every
/// candidate gate and returns the agreement-maximizing one. Ties break
/// toward the larger gate (fewer overrides).
inline CalibrationResult calibrate_threshold(const std::vector<CalibrationRow>& calibration,
                                             std::vector<int> candidate_gates,
                                             AbstainPolicy policy = AbstainPolicy::shrink_n) {
    if (calibration.empty()) throw DataError("calibration set is empty");
    if (candidate_gates.empty()) throw ConfigError("no candidate gates");
    std::sort(candidate_gates.begin(), candidate_gates.end());
    candidate_gates.erase(std::unique(candidate_gates.begin(), candidate_gates.end()),
                          candidate_gates.end());

    CalibrationResult out;
    double best = -1.0;
    for (int gate : candidate_gates) {
        EnsembleConfig cfg;
        cfg.t_gate = gate;
        cfg.k_dimensions = std::max<int>(gate + 1, 1);  // suppress the gate>=k warning here
        cfg.abstain_policy = policy;
        std::size_t correct = 0;
        int overrides = 0;
        for (const auto& row : calibration) {
            Decision d = decide(row.initial, row.jury, cfg);
            if (d.final_verdict == row.label) ++correct;
            if (d.overridden) ++overrides;
        }
        double agreement = static_cast<double>(correct) / calibration.size();
        out.table.push_back(GateStats{gate, agreement, overrides});
        if (agreement >= best) {  // >= so later (larger) gates win ties
            best = agreement;
            out.t_gate = gate;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Decisions file records (the ensemble module's on-disk interface)
// ---------------------------------------------------------------------------

struct DecisionRecord {
    Decision decision;
    std::map<std::string, VoteValue> votes;  // dimension_id -> vote
    Label majority_verdict = Label::A;       // majority-vote baseline over the same votes
};

inline json to_json(const DecisionRecord& r) {
    json votes = json::object();
    for (const auto& [dim, v] : r.votes) votes[dim] = to_string(v);
    return json{{"pair_id", r.decision.pair_id},
                {"initial", to_string(r.decision.initial)},
                {"jury", to_string(r.decision.jury)},
                {"final", to_string(r.decision.final_verdict)},
                {"overridden", r.decision.overridden},
                {"c_jury", r.decision.c_jury},
                {"n_cast", r.decision.n_cast},
                {"calibrated_confidence", r.decision.calibrated_confidence},
                {"majority_verdict", to_string(r.majority_verdict)},
                {"votes", votes}};
}

inline DecisionRecord decision_record_from_json(const json& j) {
    DecisionRecord r;
    r.decision.pair_id = j.at("pair_id").get<std::string>();
    auto initial = label_from_string(j.at("initial").get<std::string>());
    auto final_verdict = label_from_string(j.at("final").get<std::string>());
    auto jury = jury_preference_from_string(j.at("jury").get<std::string>());
    auto majority = label_from_string(j.value("majority_verdict", "A"));
    if (!initial || !final_verdict || !jury || !majority)
        throw DataError("decision for \"" + r.decision.pair_id + "\": bad verdict field");
    r.decision.initial = *initial;
    r.decision.final_verdict = *final_verdict;
    r.decision.jury = *jury;
    r.majority_verdict = *majority;
    r.decision.overridden = j.at("overridden").get<bool>();
    r.decision.c_jury = j.at("c_jury").get<int>();
    r.decision.n_cast = j.at("n_cast").get<int>();
    r.decision.calibrated_confidence = j.at("calibrated_confidence").get<double>();
    for (const auto& [dim, v] : j.at("votes").items()) {
        auto vote = vote_value_from_string(v.get<std::string>());
        if (!vote) throw DataError("decision for \"" + r.decision.pair_id + "\": bad vote");
        r.votes[dim] = *vote;
    }
    return r;
}

}  // namespace ape
