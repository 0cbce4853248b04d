#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "ape/util.hpp"

namespace ape {

// ---------------------------------------------------------------------------
// Labels and verdicts
// ---------------------------------------------------------------------------

enum class Label { A, B };

inline Label opposite(Label l) { return l == Label::A ? Label::B : Label::A; }

inline std::string to_string(Label l) { return l == Label::A ? "A" : "B"; }

inline std::optional<Label> label_from_string(std::string_view s) {
    if (s == "A") return Label::A;
    if (s == "B") return Label::B;
    return std::nullopt;
}

enum class JudgeMode { vanilla, dimension, monolithic, majority_component };

inline std::string to_string(JudgeMode m) {
    switch (m) {
        case JudgeMode::vanilla: return "vanilla";
        case JudgeMode::dimension: return "dimension";
        case JudgeMode::monolithic: return "monolithic";
        case JudgeMode::majority_component: return "majority_component";
    }
    return "vanilla";
}

inline std::optional<JudgeMode> judge_mode_from_string(std::string_view s) {
    if (s == "vanilla") return JudgeMode::vanilla;
    if (s == "dimension") return JudgeMode::dimension;
    if (s == "monolithic") return JudgeMode::monolithic;
    if (s == "majority_component") return JudgeMode::majority_component;
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Preference pairs
// ---------------------------------------------------------------------------

/// One evaluation instance: a prompt, two candidate responses, and the
/// human-annotated winner.
struct PreferencePair {
    std::string id;
    std::string prompt;
    std::string response_a;
    std::string response_b;
    Label label = Label::A;
    std::string source;  // origin dataset tag, may be empty

    void validate() const {
        if (id.empty()) throw DataError("preference pair with empty id");
        if (response_a.empty() || response_b.empty())
            throw DataError("pair \"" + id + "\": both responses must be nonempty");
    }
};

inline json to_json(const PreferencePair& p) {
    json j{{"id", p.id},
           {"prompt", p.prompt},
           {"response_a", p.response_a},
           {"response_b", p.response_b},
           {"label", to_string(p.label)}};
    if (!p.source.empty()) j["source"] = p.source;
    return j;
}

inline PreferencePair preference_pair_from_json(const json& j) {
    PreferencePair p;
    p.id = j.at("id").get<std::string>();
    p.prompt = j.at("prompt").get<std::string>();
    p.response_a = j.at("response_a").get<std::string>();
    p.response_b = j.at("response_b").get<std::string>();
    auto label = label_from_string(j.at("label").get<std::string>());
    if (!label) throw DataError("pair \"" + p.id + "\": label must be \"A\" or \"B\"");
    p.label = *label;
    p.source = j.value("source", "");
    p.validate();
    return p;
}

/// Loads a canonical JSONL dataset. Rejects malformed lines (naming the line
/// number) and duplicate ids.
inline std::vector<PreferencePair> load_dataset(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open dataset: " + path.string());
    std::vector<PreferencePair> out;
    std::unordered_set<std::string> seen;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object()) {
            throw DataError("malformed record at line " + std::to_string(lineno) + " of " +
                            path.string());
        }
        PreferencePair p;
        try {
            p = preference_pair_from_json(j);
        } catch (const json::exception& e) {
            throw DataError("invalid record at line " + std::to_string(lineno) + " of " +
                            path.string() + ": " + e.what());
        }
        if (!seen.insert(p.id).second) {
            throw DataError("duplicate id \"" + p.id + "\" at line " + std::to_string(lineno));
        }
        out.push_back(std::move(p));
    }
    return out;
}

inline std::string serialize_dataset(const std::vector<PreferencePair>& pairs) {
    std::vector<json> rows;
    rows.reserve(pairs.size());
    for (const auto& p : pairs) rows.push_back(to_json(p));
    return to_jsonl(rows);
}

inline void save_dataset(const fs::path& path, const std::vector<PreferencePair>& pairs) {
    atomic_write_file(path, serialize_dataset(pairs));
}

// ---------------------------------------------------------------------------
// Judgment records
// ---------------------------------------------------------------------------

struct JudgmentRecord {
    std::string pair_id;
    Label verdict = Label::A;
    JudgeMode mode = JudgeMode::vanilla;
    std::optional<std::string> dimension_id;  // present iff mode == dimension
    std::string raw_output;
    std::optional<bool> correct;  // set when the pair's label is known

    void validate() const {
        if (dimension_id.has_value() != (mode == JudgeMode::dimension))
            throw DataError("judgment for \"" + pair_id +
                            "\": dimension_id present iff mode is dimension");
    }
};

inline json to_json(const JudgmentRecord& r) {
    json j{{"pair_id", r.pair_id},
           {"verdict", to_string(r.verdict)},
           {"mode", to_string(r.mode)},
           {"raw_output", r.raw_output}};
    if (r.dimension_id) j["dimension_id"] = *r.dimension_id;
    if (r.correct) j["correct"] = *r.correct;
    return j;
}

inline JudgmentRecord judgment_from_json(const json& j) {
    JudgmentRecord r;
    r.pair_id = j.at("pair_id").get<std::string>();
    auto verdict = label_from_string(j.at("verdict").get<std::string>());
    if (!verdict) throw DataError("judgment for \"" + r.pair_id + "\": bad verdict");
    r.verdict = *verdict;
    auto mode = judge_mode_from_string(j.at("mode").get<std::string>());
    if (!mode) throw DataError("judgment for \"" + r.pair_id + "\": bad mode");
    r.mode = *mode;
    if (j.contains("dimension_id")) r.dimension_id = j.at("dimension_id").get<std::string>();
    r.raw_output = j.value("raw_output", "");
    if (j.contains("correct")) r.correct = j.at("correct").get<bool>();
    r.validate();
    return r;
}

// ---------------------------------------------------------------------------
// Dataset splitting
// ---------------------------------------------------------------------------

struct SplitSizes {
    std::size_t train = 0;
    std::size_t calibration = 0;
    std::size_t test = 0;

    std::size_t total() const { return train + calibration + test; }
};

struct DatasetSplit {
    std::vector<PreferencePair> train;
    std::vector<PreferencePair> calibration;
    std::vector<PreferencePair> test;
    std::uint64_t seed = 0;
};

namespace detail {

// Fisher-Yates with an explicit draw rule so splits are identical across
// platforms and standard library versions.
inline void seeded_shuffle(std::vector<std::size_t>& idx, std::uint64_t seed) {
    std::mt19937_64 gen(seed);
    for (std::size_t i = idx.size(); i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(gen() % i);
        std::swap(idx[i - 1], idx[j]);
    }
}

}  // namespace detail

/// Seeded uniform shuffle followed by contiguous assignment. With
/// `stratify_by_source`, each source group is shuffled and allotted
/// proportionally (largest remainder) instead.
inline DatasetSplit split_dataset(const std::vector<PreferencePair>& pairs, SplitSizes sizes,
                                  std::uint64_t seed, bool stratify_by_source = false) {
    if (sizes.total() > pairs.size()) {
        throw DataError("split sizes (" + std::to_string(sizes.train) + "," +
                        std::to_string(sizes.calibration) + "," + std::to_string(sizes.test) +
                        ") exceed population " + std::to_string(pairs.size()));
    }

    std::vector<std::size_t> order(pairs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    if (!stratify_by_source) {
        detail::seeded_shuffle(order, seed);
    } else {
        // Group by source in first-appearance order; shuffle within groups,
        // then interleave allocations so each split draws from every group
        // proportionally to group size.
        std::vector<std::string> group_names;
        std::map<std::string, std::vector<std::size_t>> groups;
        for (std::size_t i = 0; i < pairs.size(); ++i) {
            auto& g = groups[pairs[i].source];
            if (g.empty()) group_names.push_back(pairs[i].source);
            g.push_back(i);
        }
        for (auto& name : group_names) {
            detail::seeded_shuffle(groups[name], seed ^ std::stoull(hash_bytes(name).substr(0, 15), nullptr, 16));
        }
        order.clear();
        // Largest-remainder allotment per group for each split segment, in
        // segment order, so the contiguous assignment below still works.
        std::size_t n = pairs.size();
        std::array<std::size_t, 3> want{sizes.train, sizes.calibration, sizes.test};
        std::map<std::string, std::size_t> cursor;
        for (std::size_t seg = 0; seg < 3; ++seg) {
            std::vector<std::pair<double, std::string>> remainders;
            std::size_t assigned = 0;
            std::map<std::string, std::size_t> take;
            for (const auto& name : group_names) {
                double exact = static_cast<double>(want[seg]) * groups[name].size() / n;
                std::size_t base = static_cast<std::size_t>(exact);
                take[name] = base;
                assigned += base;
                remainders.push_back({exact - static_cast<double>(base), name});
            }
            std::stable_sort(remainders.begin(), remainders.end(),
                             [](const auto& a, const auto& b) { return a.first > b.first; });
            for (std::size_t r = 0; assigned < want[seg] && r < remainders.size(); ++r) {
                auto& name = remainders[r].second;
                if (cursor[name] + take[name] < groups[name].size()) {
                    ++take[name];
                    ++assigned;
                }
            }
            if (assigned < want[seg]) {
                // Remainder rounding left some groups exhausted; top up from
                // any group with spare members, in group order.
                for (const auto& name : group_names) {
                    while (assigned < want[seg] && cursor[name] + take[name] < groups[name].size()) {
                        ++take[name];
                        ++assigned;
                    }
                }
            }
            for (const auto& name : group_names) {
                auto& g = groups[name];
                for (std::size_t k = 0; k < take[name]; ++k) order.push_back(g[cursor[name] + k]);
                cursor[name] += take[name];
            }
        }
    }

    DatasetSplit split;
    split.seed = seed;
    std::size_t pos = 0;
    for (std::size_t i = 0; i < sizes.train; ++i) split.train.push_back(pairs[order[pos++]]);
    for (std::size_t i = 0; i < sizes.calibration; ++i)
        split.calibration.push_back(pairs[order[pos++]]);
    for (std::size_t i = 0; i < sizes.test; ++i) split.test.push_back(pairs[order[pos++]]);
    return split;
}

// ---------------------------------------------------------------------------
// Agreement join
// ---------------------------------------------------------------------------

struct AgreementRow {
    PreferencePair pair;
    JudgmentRecord record;
    bool correct = false;
};

/// Joins judgment records to their pairs and marks correctness, preserving
/// record order. A record whose pair_id has no pair is an error.
inline std::vector<AgreementRow> agreement_pairs(const std::vector<JudgmentRecord>& records,
                                                 const std::vector<PreferencePair>& pairs) {
    std::unordered_map<std::string, const PreferencePair*> by_id;
    for (const auto& p : pairs) by_id[p.id] = &p;
    std::vector<AgreementRow> out;
    out.reserve(records.size());
    for (const auto& r : records) {
        auto it = by_id.find(r.pair_id);
        if (it == by_id.end())
            throw DataError("judgment references unknown pair id \"" + r.pair_id + "\"");
        AgreementRow row;
        row.pair = *it->second;
        row.record = r;
        row.correct = (r.verdict == it->second->label);
        row.record.correct = row.correct;
        out.push_back(std::move(row));
    }
    return out;
}

}  // namespace ape
