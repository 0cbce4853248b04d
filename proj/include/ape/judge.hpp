#pragma once

#include <cctype>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "ape/backend.hpp"
#include "ape/core.hpp"
#include "ape/templates_builtin.hpp"
#include "ape/util.hpp"

namespace ape {

// ---------------------------------------------------------------------------
// Evaluation dimensions (defined here because judge prompts embed them; the
// discovery module produces them).
// ---------------------------------------------------------------------------

/// A named criterion plus a rubric describing how to apply it.
struct EvaluationDimension {
    std::string id;
    std::string name;
    std::string rubric;
    std::string origin_case_id;
    bool verified = false;
    std::optional<double> coverage_rate;
    std::pair<int, int> score_scale{1, 10};

    void validate() const {
        if (verified && (name.empty() || rubric.empty()))
            throw DataError("verified dimension \"" + id + "\" needs a name and rubric");
        if (score_scale.first >= score_scale.second)
            throw DataError("dimension \"" + id + "\": bad score scale");
    }
};

inline json to_json(const EvaluationDimension& d) {
    json j{{"id", d.id},
           {"name", d.name},
           {"rubric", d.rubric},
           {"origin_case_id", d.origin_case_id},
           {"verified", d.verified},
           {"score_scale", {d.score_scale.first, d.score_scale.second}}};
    j["coverage_rate"] = d.coverage_rate ? json(*d.coverage_rate) : json(nullptr);
    return j;
}

inline EvaluationDimension dimension_from_json(const json& j) {
    EvaluationDimension d;
    d.id = j.at("id").get<std::string>();
    d.name = j.at("name").get<std::string>();
    d.rubric = j.at("rubric").get<std::string>();
    d.origin_case_id = j.value("origin_case_id", "");
    d.verified = j.value("verified", false);
    if (j.contains("coverage_rate") && !j["coverage_rate"].is_null())
        d.coverage_rate = j["coverage_rate"].get<double>();
    if (j.contains("score_scale")) {
        d.score_scale = {j["score_scale"][0].get<int>(), j["score_scale"][1].get<int>()};
    }
    d.validate();
    return d;
}

inline std::vector<EvaluationDimension> load_dimension_store(const fs::path& path) {
    std::vector<EvaluationDimension> out;
    for (const auto& j : read_jsonl(path)) out.push_back(dimension_from_json(j));
    return out;
}

inline void save_dimension_store(const fs::path& path,
                                 const std::vector<EvaluationDimension>& dims) {
    std::vector<json> rows;
    rows.reserve(dims.size());
    for (const auto& d : dims) rows.push_back(to_json(d));
    write_jsonl(path, rows);
}

// ---------------------------------------------------------------------------
// Prompt templates
// ---------------------------------------------------------------------------

enum class OutputSchema { verdict, verdict_with_confidence, score };

struct PromptTemplate {
    std::string name;
    std::string body;
    OutputSchema schema = OutputSchema::verdict;
};

namespace detail {

inline const std::set<std::string>& known_placeholders() {
    static const std::set<std::string> names{
        "prompt",   "response_a",     "response_b", "response",  "response_tag",
        "dimension_name", "dimension_id", "rubric", "dimensions_block",
        "pair_id",  "mode",           "label",      "history",   "attempt",
        "scale_min", "scale_max"};
    return names;
}

inline OutputSchema schema_for_name(const std::string& name) {
    if (name == "confidence") return OutputSchema::verdict_with_confidence;
    if (name == "score") return OutputSchema::score;
    return OutputSchema::verdict;
}

}  // namespace detail

/// Single-pass placeholder substitution. A known placeholder without a
/// binding is an error; unknown brace content passes through untouched, so
/// substituted values are never re-expanded.
inline std::string render_template(const PromptTemplate& tmpl,
                                   const std::map<std::string, std::string>& bindings) {
    std::string out;
    out.reserve(tmpl.body.size());
    const std::string& body = tmpl.body;
    std::size_t i = 0;
    while (i < body.size()) {
        if (body[i] != '{') {
            out += body[i++];
            continue;
        }
        std::size_t close = body.find('}', i + 1);
        if (close == std::string::npos) {
            out += body.substr(i);
            break;
        }
        std::string name = body.substr(i + 1, close - i - 1);
        auto it = bindings.find(name);
        if (it != bindings.end()) {
            out += it->second;
            i = close + 1;
        } else if (detail::known_placeholders().count(name)) {
            throw TemplateError("template \"" + tmpl.name + "\": no binding for placeholder {" +
                                name + "}");
        } else {
            out += body[i++];  // literal brace content, not a placeholder
        }
    }
    return out;
}

class TemplateLibrary {
public:
    static TemplateLibrary builtin() {
        TemplateLibrary lib;
        lib.add("vanilla", builtin_templates::kVanilla);
        lib.add("dimension", builtin_templates::kDimension);
        lib.add("monolithic", builtin_templates::kMonolithic);
        lib.add("confidence", builtin_templates::kConfidence);
        lib.add("score", builtin_templates::kScore);
        lib.add("propose", builtin_templates::kPropose);
        return lib;
    }

    /// Loads every *.txt file in a directory; template name = file stem.
    static TemplateLibrary load_dir(const fs::path& dir) {
        if (!fs::is_directory(dir))
            throw ConfigError("template directory not found: " + dir.string());
        TemplateLibrary lib;
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(dir)) {
            if (entry.path().extension() == ".txt") files.push_back(entry.path());
        }
        std::sort(files.begin(), files.end());
        for (const auto& f : files) lib.add(f.stem().string(), read_file(f));
        return lib;
    }

    const PromptTemplate& get(const std::string& name) const {
        auto it = templates_.find(name);
        if (it == templates_.end()) throw ConfigError("no template named \"" + name + "\"");
        return it->second;
    }

    bool has(const std::string& name) const { return templates_.count(name) > 0; }

private:
    void add(const std::string& name, std::string body) {
        templates_[name] = PromptTemplate{name, std::move(body), detail::schema_for_name(name)};
    }

    std::map<std::string, PromptTemplate> templates_;
};

inline std::string dimensions_block(const std::vector<EvaluationDimension>& dims) {
    std::string out;
    for (std::size_t i = 0; i < dims.size(); ++i) {
        out += std::to_string(i + 1) + ". " + dims[i].name + ": " + dims[i].rubric;
        if (i + 1 < dims.size()) out += '\n';
    }
    return out;
}

/// Renders a judging prompt for a pair. Dimension mode embeds one rubric;
/// monolithic mode embeds the whole numbered block in stored order.
inline std::string render_prompt(const PromptTemplate& tmpl, const PreferencePair& pair,
                                 const EvaluationDimension* dimension = nullptr,
                                 const std::vector<EvaluationDimension>* dimensions = nullptr) {
    std::map<std::string, std::string> bindings{
        {"pair_id", pair.id},        {"mode", tmpl.name},
        {"prompt", pair.prompt},     {"response_a", pair.response_a},
        {"response_b", pair.response_b}};
    if (dimension) {
        bindings["dimension_id"] = dimension->id;
        bindings["dimension_name"] = dimension->name;
        bindings["rubric"] = dimension->rubric;
    }
    if (dimensions) bindings["dimensions_block"] = dimensions_block(*dimensions);
    return render_template(tmpl, bindings);
}

// ---------------------------------------------------------------------------
// Output parsing. Total over arbitrary text: either a value or nullopt,
// never a crash.
// ---------------------------------------------------------------------------

namespace detail {

/// Extracts every parseable top-level JSON object embedded in free text
/// (prose and code fences tolerated), in order of appearance.
inline std::vector<json> extract_json_objects(const std::string& raw) {
    std::vector<json> out;
    std::size_t i = 0;
    while (i < raw.size()) {
        if (raw[i] != '{') {
            ++i;
            continue;
        }
        int depth = 0;
        bool in_string = false;
        bool escaped = false;
        std::size_t end = std::string::npos;
        for (std::size_t j = i; j < raw.size(); ++j) {
            char c = raw[j];
            if (in_string) {
                if (escaped) {
                    escaped = false;
                } else if (c == '\\') {
                    escaped = true;
                } else if (c == '"') {
                    in_string = false;
                }
                continue;
            }
            if (c == '"') {
                in_string = true;
            } else if (c == '{') {
                ++depth;
            } else if (c == '}') {
                if (--depth == 0) {
                    end = j;
                    break;
                }
            }
        }
        if (end == std::string::npos) {
            ++i;
            continue;
        }
        json j = json::parse(raw.substr(i, end - i + 1), nullptr, false);
        if (!j.is_discarded() && j.is_object()) {
            out.push_back(std::move(j));
            i = end + 1;
        } else {
            ++i;
        }
    }
    return out;
}

inline std::optional<Label> verdict_token(const json& v) {
    if (!v.is_string()) return std::nullopt;
    std::string s = v.get<std::string>();
    std::size_t a = s.find_first_not_of(" \t\r\n");
    std::size_t b = s.find_last_not_of(" \t\r\n");
    if (a == std::string::npos || b != a) return std::nullopt;  // single char only
    char c = static_cast<char>(std::toupper(static_cast<unsigned char>(s[a])));
    if (c == 'A') return Label::A;
    if (c == 'B') return Label::B;
    return std::nullopt;
}

}  // namespace detail

struct ParsedVerdict {
    Label verdict = Label::A;
    std::optional<double> confidence;
    int parse_attempts = 1;
};

/// Pulls a structured verdict object out of a model reply. Confidence, when
/// present, is clipped to [0, 1] with a warning.
inline std::optional<ParsedVerdict> parse_verdict(const std::string& raw) {
    for (const auto& obj : detail::extract_json_objects(raw)) {
        if (!obj.contains("verdict")) continue;
        auto verdict = detail::verdict_token(obj["verdict"]);
        if (!verdict) continue;
        ParsedVerdict out;
        out.verdict = *verdict;
        if (obj.contains("confidence") && obj["confidence"].is_number()) {
            double c = obj["confidence"].get<double>();
            if (std::isfinite(c)) {
                if (c < 0.0 || c > 1.0) {
                    log_warn("confidence " + std::to_string(c) + " clipped to [0,1]");
                    c = std::min(1.0, std::max(0.0, c));
                }
                out.confidence = c;
            }
        }
        return out;
    }
    return std::nullopt;
}

/// Extracts a numeric score. Missing or non-numeric is a parse miss
/// (nullopt); a score outside the declared scale throws.
inline std::optional<double> parse_score(const std::string& raw, int scale_min, int scale_max) {
    for (const auto& obj : detail::extract_json_objects(raw)) {
        if (!obj.contains("score") || !obj["score"].is_number()) continue;
        double s = obj["score"].get<double>();
        if (!std::isfinite(s)) continue;
        if (s < scale_min || s > scale_max) {
            throw ScoreRangeError("score " + std::to_string(s) + " outside scale [" +
                                  std::to_string(scale_min) + ", " + std::to_string(scale_max) +
                                  "]");
        }
        return s;
    }
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// The judge: prompt construction + backend calls + parse-repair loop.
// ---------------------------------------------------------------------------

struct JudgeOptions {
    // Re-ask budget when a reply fails to parse. Attempt k re-issues the
    // prompt with a terse nudge appended and sample_index = k, so repeated
    // asks stay distinct for caching and for scripted mocks.
    int parse_repair_limit = 3;
    bool position_debias = false;
};

struct JudgeOutcome {
    JudgmentRecord record;
    int parse_attempts = 1;
};

class Judger {
public:
    Judger(ChatClient& client, const TemplateLibrary& templates, JudgeOptions options = {})
        : client_(client), templates_(templates), options_(options) {}

    const TemplateLibrary& templates() const { return templates_; }
    const JudgeOptions& options() const { return options_; }

    /// One judgment in the given mode. Returns nullopt when every parse
    /// repair is exhausted (abstention) or the debias check disagrees.
    std::optional<JudgeOutcome> judge_pair(
        const PreferencePair& pair, JudgeMode mode,
        const EvaluationDimension* dimension = nullptr,
        const std::vector<EvaluationDimension>* dimensions = nullptr) const {
        const PromptTemplate& tmpl = template_for_mode(mode);
        if (mode == JudgeMode::dimension && !dimension)
            throw ConfigError("dimension mode needs a dimension");
        if (mode == JudgeMode::monolithic && !dimensions)
            throw ConfigError("monolithic mode needs the dimension list");

        std::string text = render_prompt(tmpl, pair, dimension, dimensions);
        auto [parsed, raw] = ask(text);
        if (!parsed) return std::nullopt;

        if (options_.position_debias) {
            PreferencePair swapped = pair;
            std::swap(swapped.response_a, swapped.response_b);
            auto [check, raw2] = ask(render_prompt(tmpl, swapped, dimension, dimensions) +
                                     "\n[order:swapped]");
            if (!check) return std::nullopt;
            if (opposite(check->verdict) != parsed->verdict) return std::nullopt;
        }

        JudgeOutcome out;
        out.parse_attempts = parsed->parse_attempts;
        out.record.pair_id = pair.id;
        out.record.verdict = parsed->verdict;
        out.record.mode = mode;
        if (mode == JudgeMode::dimension) out.record.dimension_id = dimension->id;
        out.record.raw_output = raw;
        out.record.correct = (parsed->verdict == pair.label);
        return out;
    }

    /// Single verdict+confidence call; the stated confidence is clipped to
    /// [0, 1].
    std::optional<std::pair<Label, double>> estimate_verbalized_confidence(
        const PreferencePair& pair) const {
        std::string text = render_prompt(templates_.get("confidence"), pair);
        auto [parsed, raw] = ask(text);
        if (!parsed) return std::nullopt;
        double confidence = parsed->confidence.value_or(0.5);
        return std::make_pair(parsed->verdict, confidence);
    }

    static constexpr int kDefaultPredictiveSamples = 8;

    /// Majority verdict over k independent samples; probability is the
    /// majority fraction of the parsable samples, so it is always >= 0.5.
    /// Ties break toward A with a warning.
    std::optional<std::pair<Label, double>> estimate_predictive_probability(
        const PreferencePair& pair, int k = kDefaultPredictiveSamples) const {
        if (k < 1) throw ConfigError("sample count must be >= 1");
        std::string text = render_prompt(templates_.get("vanilla"), pair);
        int count_a = 0;
        int count_b = 0;
        for (int s = 0; s < k; ++s) {
            ChatRequest req;
            req.messages = {{MessageRole::user, text}};
            req.sample_index = s;
            auto parsed = parse_verdict(client_.complete(req).content);
            if (!parsed) continue;
            (parsed->verdict == Label::A ? count_a : count_b)++;
        }
        int parsed_total = count_a + count_b;
        if (parsed_total == 0) return std::nullopt;
        Label verdict = Label::A;
        if (count_b > count_a) {
            verdict = Label::B;
        } else if (count_b == count_a) {
            log_warn("predictive-probability tie for pair \"" + pair.id +
                     "\"; breaking toward A");
        }
        int majority = std::max(count_a, count_b);
        return std::make_pair(verdict, static_cast<double>(majority) / parsed_total);
    }

    /// Scores one response of the pair under a dimension's rubric. Range
    /// violations and parse misses both consume repair attempts.
    std::optional<double> score_response(const PreferencePair& pair, Label which,
                                         const EvaluationDimension& dimension) const {
        const PromptTemplate& tmpl = templates_.get("score");
        std::map<std::string, std::string> bindings{
            {"pair_id", pair.id},
            {"response", which == Label::A ? pair.response_a : pair.response_b},
            {"response_tag", to_string(which)},
            {"prompt", pair.prompt},
            {"dimension_id", dimension.id},
            {"dimension_name", dimension.name},
            {"rubric", dimension.rubric},
            {"scale_min", std::to_string(dimension.score_scale.first)},
            {"scale_max", std::to_string(dimension.score_scale.second)}};
        std::string text = render_template(tmpl, bindings);
        for (int attempt = 0; attempt < options_.parse_repair_limit; ++attempt) {
            ChatRequest req = repair_request(text, attempt);
            std::string raw = client_.complete(req).content;
            try {
                auto score =
                    parse_score(raw, dimension.score_scale.first, dimension.score_scale.second);
                if (score) return score;
            } catch (const ScoreRangeError& e) {
                log_warn(std::string(e.what()) + " (pair \"" + pair.id + "\", dimension \"" +
                         dimension.id + "\")");
            }
        }
        return std::nullopt;
    }

    /// Raw completion for an already-rendered prompt (used by discovery for
    /// the support model).
    std::string complete_text(const std::string& rendered, int sample_index = 0) const {
        ChatRequest req;
        req.messages = {{MessageRole::user, rendered}};
        req.sample_index = sample_index;
        return client_.complete(req).content;
    }

private:
    const PromptTemplate& template_for_mode(JudgeMode mode) const {
        switch (mode) {
            case JudgeMode::dimension: return templates_.get("dimension");
            case JudgeMode::monolithic: return templates_.get("monolithic");
            case JudgeMode::vanilla:
            case JudgeMode::majority_component: return templates_.get("vanilla");
        }
        return templates_.get("vanilla");
    }

    static ChatRequest repair_request(const std::string& text, int attempt) {
        ChatRequest req;
        std::string content = text;
        if (attempt > 0) content += "\n\nReply with only the required JSON object.";
        req.messages = {{MessageRole::user, content}};
        req.sample_index = attempt;
        return req;
    }

    std::pair<std::optional<ParsedVerdict>, std::string> ask(const std::string& text) const {
        std::string raw;
        for (int attempt = 0; attempt < options_.parse_repair_limit; ++attempt) {
            raw = client_.complete(repair_request(text, attempt)).content;
            if (auto parsed = parse_verdict(raw)) {
                parsed->parse_attempts = attempt + 1;
                return {parsed, raw};
            }
        }
        return {std::nullopt, raw};
    }

    ChatClient& client_;
    const TemplateLibrary& templates_;
    JudgeOptions options_;
};

}  // namespace ape
