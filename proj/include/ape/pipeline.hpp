#pragma once

#include <fcntl.h>
#include <unistd.h>

#include <cmath>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ape/backend.hpp"
#include "ape/core.hpp"
#include "ape/discovery.hpp"
#include "ape/ensemble.hpp"
#include "ape/http_client.hpp"
#include "ape/judge.hpp"
#include "ape/metrics.hpp"
#include "ape/util.hpp"

namespace ape {

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

struct RunConfig {
    std::string dataset_path;
    std::string template_dir;  // empty = built-in templates

    BackendProfile judge_profile{BackendRole::judge,
                                 "https://api.openai.com/v1/chat/completions",
                                 "gpt-4o"};
    BackendProfile support_profile{BackendRole::support,
                                   "https://api.openai.com/v1/chat/completions",
                                   "gpt-4o"};

    int retry_limit = 10;           // proposal attempts per failure case
    double filter_threshold = 2.0;  // score gap must strictly exceed this
    int k_dimensions = 16;
    int t_gate = 4;                 // overridden by the calibrate stage
    SplitSizes split_sizes{500, 200, 1000};
    std::uint64_t seed = 0;
    bool stratify_by_source = false;
    int bin_count = 10;
    double bin_lo = 0.5;
    double bin_hi = 1.0;
    AbstainPolicy abstain_policy = AbstainPolicy::shrink_n;
    std::string cache_dir = "cache";  // relative to the run directory; empty disables
    std::string mock_script;          // path to a mock script; empty = live backends
    double holdout = 0.0;             // fraction of failures reserved as D_val
    int parse_repair_limit = 3;
    bool position_debias = false;

    std::vector<std::string> validate() const {
        std::vector<std::string> problems;
        auto check = [&](bool ok, const std::string& msg) {
            if (!ok) problems.push_back(msg);
        };
        check(retry_limit >= 1, "retry_limit must be >= 1");
        check(filter_threshold >= 0.0, "filter_threshold must be >= 0");
        check(k_dimensions >= 1, "k_dimensions must be >= 1");
        check(t_gate >= 0, "t_gate must be >= 0");
        check(bin_count >= 1, "bin_count must be >= 1");
        check(bin_lo < bin_hi, "bin range must satisfy lo < hi");
        check(holdout >= 0.0 && holdout < 1.0, "holdout must be in [0, 1)");
        check(parse_repair_limit >= 1, "parse_repair_limit must be >= 1");
        try {
            judge_profile.validate();
        } catch (const Error& e) {
            problems.push_back(std::string("judge_profile: ") + e.what());
        }
        try {
            support_profile.validate();
        } catch (const Error& e) {
            problems.push_back(std::string("support_profile: ") + e.what());
        }
        return problems;
    }

    void validate_or_throw() const {
        auto problems = validate();
        if (problems.empty()) return;
        std::string msg = "invalid configuration:";
        for (const auto& p : problems) msg += "\n  - " + p;
        throw ConfigError(msg);
    }
};

namespace detail {

inline json profile_to_json(const BackendProfile& p) {
    return json{{"endpoint", p.endpoint},
                {"model_name", p.model_name},
                {"temperature", p.temperature},
                {"max_in_flight", p.max_in_flight},
                {"request_timeout_ms", p.request_timeout.count()},
                {"max_transport_retries", p.max_transport_retries}};
}

inline BackendProfile profile_from_json(const json& j, BackendProfile defaults) {
    BackendProfile p = defaults;
    p.endpoint = j.value("endpoint", p.endpoint);
    p.model_name = j.value("model_name", p.model_name);
    p.temperature = j.value("temperature", p.temperature);
    p.max_in_flight = j.value("max_in_flight", p.max_in_flight);
    p.request_timeout = std::chrono::milliseconds(
        j.value("request_timeout_ms", p.request_timeout.count()));
    p.max_transport_retries = j.value("max_transport_retries", p.max_transport_retries);
    return p;
}

}  // namespace detail

inline json to_json(const RunConfig& c) {
    return json{{"dataset_path", c.dataset_path},
                {"template_dir", c.template_dir},
                {"judge_profile", detail::profile_to_json(c.judge_profile)},
                {"support_profile", detail::profile_to_json(c.support_profile)},
                {"retry_limit", c.retry_limit},
                {"filter_threshold", c.filter_threshold},
                {"k_dimensions", c.k_dimensions},
                {"t_gate", c.t_gate},
                {"split_sizes", {c.split_sizes.train, c.split_sizes.calibration, c.split_sizes.test}},
                {"seed", c.seed},
                {"stratify_by_source", c.stratify_by_source},
                {"bin_count", c.bin_count},
                {"bin_range", {c.bin_lo, c.bin_hi}},
                {"abstain_policy", to_string(c.abstain_policy)},
                {"cache_dir", c.cache_dir},
                {"mock_script", c.mock_script},
                {"holdout", c.holdout},
                {"parse_repair_limit", c.parse_repair_limit},
                {"position_debias", c.position_debias}};
}

inline RunConfig run_config_from_json(const json& j) {
    RunConfig c;
    c.dataset_path = j.value("dataset_path", c.dataset_path);
    c.template_dir = j.value("template_dir", c.template_dir);
    if (j.contains("judge_profile"))
        c.judge_profile = detail::profile_from_json(j["judge_profile"], c.judge_profile);
    if (j.contains("support_profile"))
        c.support_profile = detail::profile_from_json(j["support_profile"], c.support_profile);
    c.retry_limit = j.value("retry_limit", c.retry_limit);
    c.filter_threshold = j.value("filter_threshold", c.filter_threshold);
    c.k_dimensions = j.value("k_dimensions", c.k_dimensions);
    c.t_gate = j.value("t_gate", c.t_gate);
    if (j.contains("split_sizes")) {
        const auto& s = j["split_sizes"];
        c.split_sizes = SplitSizes{s.at(0).get<std::size_t>(), s.at(1).get<std::size_t>(),
                                   s.at(2).get<std::size_t>()};
    }
    c.seed = j.value("seed", c.seed);
    c.stratify_by_source = j.value("stratify_by_source", c.stratify_by_source);
    c.bin_count = j.value("bin_count", c.bin_count);
    if (j.contains("bin_range")) {
        c.bin_lo = j["bin_range"].at(0).get<double>();
        c.bin_hi = j["bin_range"].at(1).get<double>();
    }
    if (j.contains("abstain_policy")) {
        auto p = abstain_policy_from_string(j["abstain_policy"].get<std::string>());
        if (!p) throw ConfigError("abstain_policy must be shrink_n or fail_instance");
        c.abstain_policy = *p;
    }
    c.cache_dir = j.value("cache_dir", c.cache_dir);
    c.mock_script = j.value("mock_script", c.mock_script);
    c.holdout = j.value("holdout", c.holdout);
    c.parse_repair_limit = j.value("parse_repair_limit", c.parse_repair_limit);
    c.position_debias = j.value("position_debias", c.position_debias);
    return c;
}

/// Loads a config file. Relative dataset/mock/template paths resolve against
/// the config file's directory, so a bundled config works from any cwd.
inline RunConfig load_run_config(const fs::path& path) {
    json j = json::parse(read_file(path), nullptr, false);
    if (j.is_discarded() || !j.is_object())
        throw ConfigError("config file is not a JSON object: " + path.string());
    RunConfig c = run_config_from_json(j);
    fs::path base = fs::absolute(path).parent_path();
    auto resolve = [&](std::string& p) {
        if (!p.empty() && fs::path(p).is_relative()) p = (base / p).string();
    };
    resolve(c.dataset_path);
    resolve(c.mock_script);
    resolve(c.template_dir);
    return c;
}

// ---------------------------------------------------------------------------
// Run directory
// ---------------------------------------------------------------------------

/// Fixed layout of pipeline artifacts under one run directory. Every stage
/// writes atomically and records an input fingerprint so reruns skip work.
class RunDirectory {
public:
    explicit RunDirectory(fs::path root) : root_(std::move(root)) {
        fs::create_directories(root_);
        fs::create_directories(root_ / "splits");
        fs::create_directories(root_ / "judgments");
        fs::create_directories(root_ / ".stamps");
    }

    const fs::path& root() const { return root_; }

    fs::path config_file() const { return root_ / "config.json"; }
    fs::path dataset_file() const { return root_ / "dataset.jsonl"; }
    fs::path split_file(const std::string& which) const {
        return root_ / "splits" / (which + ".jsonl");
    }
    fs::path judgments_file(const std::string& which) const {
        return root_ / "judgments" / (which + ".jsonl");
    }
    fs::path failures_file() const { return root_ / "failures.jsonl"; }
    fs::path candidates_file() const { return root_ / "candidates.jsonl"; }
    fs::path filtered_file() const { return root_ / "filtered.jsonl"; }
    fs::path coverage_file() const { return root_ / "coverage.json"; }
    fs::path selected_file() const { return root_ / "selected.jsonl"; }
    fs::path selection_meta_file() const { return root_ / "selection.json"; }
    fs::path calibration_file() const { return root_ / "calibration.json"; }
    fs::path decisions_file() const { return root_ / "decisions.jsonl"; }
    fs::path metrics_file() const { return root_ / "metrics.json"; }
    fs::path reliability_file() const { return root_ / "reliability.csv"; }
    fs::path calls_file() const { return root_ / "calls.json"; }
    fs::path stamp_file(const std::string& stage) const {
        return root_ / ".stamps" / (stage + ".json");
    }
    fs::path lock_file() const { return root_ / ".lock"; }

private:
    fs::path root_;
};

/// Advisory lock: a second invocation against the same run directory fails
/// fast instead of interleaving writes.
class RunLock {
public:
    explicit RunLock(const RunDirectory& dir) : path_(dir.lock_file()) {
        int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        if (fd < 0) {
            throw StageError("run directory is locked (" + path_.string() +
                             " exists); another invocation may be active. Remove the file if "
                             "it is stale.");
        }
        std::string pid = std::to_string(::getpid()) + "\n";
        [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
        ::close(fd);
    }

    ~RunLock() {
        std::error_code ec;
        fs::remove(path_, ec);
    }

    RunLock(const RunLock&) = delete;
    RunLock& operator=(const RunLock&) = delete;

private:
    fs::path path_;
};

// ---------------------------------------------------------------------------
// Pipeline stages
// ---------------------------------------------------------------------------

enum class Stage { ingest, split, judge, discover, filter, select, calibrate, ensemble, metrics };

inline const std::vector<std::pair<Stage, std::string>>& stage_order() {
    static const std::vector<std::pair<Stage, std::string>> order{
        {Stage::ingest, "ingest"},       {Stage::split, "split"},
        {Stage::judge, "judge"},         {Stage::discover, "discover"},
        {Stage::filter, "filter"},       {Stage::select, "select"},
        {Stage::calibrate, "calibrate"}, {Stage::ensemble, "ensemble"},
        {Stage::metrics, "metrics"}};
    return order;
}

inline std::string to_string(Stage s) {
    for (const auto& [stage, name] : stage_order())
        if (stage == s) return name;
    return "?";
}

inline std::optional<Stage> stage_from_string(std::string_view s) {
    for (const auto& [stage, name] : stage_order())
        if (name == s) return stage;
    return std::nullopt;
}

struct RunOptions {
    std::optional<fs::path> dimensions_override;  // --dimensions on ensemble
    std::optional<int> t_gate_override;           // --t-gate given explicitly
    bool force = false;                           // ignore stamps, rerun anyway
};

class Pipeline {
public:
    Pipeline(RunConfig config, fs::path run_dir, RunOptions options = {})
        : cfg_(std::move(config)), dir_(std::move(run_dir)), opts_(std::move(options)) {
        cfg_.validate_or_throw();
        templates_ = cfg_.template_dir.empty() ? TemplateLibrary::builtin()
                                               : TemplateLibrary::load_dir(cfg_.template_dir);
        atomic_write_file(dir_.config_file(), to_json(cfg_).dump(2) + "\n");
    }

    const RunDirectory& dir() const { return dir_; }

    void run(Stage stage) {
        switch (stage) {
            case Stage::ingest: return run_ingest();
            case Stage::split: return run_split();
            case Stage::judge: return run_judge();
            case Stage::discover: return run_discover();
            case Stage::filter: return run_filter();
            case Stage::select: return run_select();
            case Stage::calibrate: return run_calibrate();
            case Stage::ensemble: return run_ensemble();
            case Stage::metrics: return run_metrics();
        }
    }

    void run_all() {
        for (const auto& [stage, name] : stage_order()) run(stage);
    }

    /// Total mock-backend calls issued by this invocation (0 when live).
    std::size_t mock_calls() const {
        std::size_t n = 0;
        if (judge_mock_) n += judge_mock_->call_count();
        if (support_mock_ && support_mock_ != judge_mock_) n += support_mock_->call_count();
        return n;
    }

private:
    // --- backends -----------------------------------------------------------

    ChatClient& judge_client() {
        if (!judge_client_) judge_client_ = make_client(cfg_.judge_profile, &judge_mock_);
        return *judge_client_;
    }

    ChatClient& support_client() {
        if (!support_client_) support_client_ = make_client(cfg_.support_profile, &support_mock_);
        return *support_client_;
    }

    std::unique_ptr<ChatClient> make_client(const BackendProfile& profile,
                                            ScriptedMockClient** mock_out) {
        if (!cfg_.mock_script.empty()) {
            auto mock = std::make_unique<ScriptedMockClient>(profile,
                                                             MockScript::load(cfg_.mock_script));
            *mock_out = mock.get();
            return mock;
        }
        std::unique_ptr<ChatClient> live = std::make_unique<HttpChatClient>(profile);
        if (!cfg_.cache_dir.empty()) {
            live = std::make_unique<CachedClient>(std::move(live), dir_.root() / cfg_.cache_dir);
        }
        return live;
    }

    Judger judge_judger() {
        return Judger(judge_client(), templates_,
                      JudgeOptions{cfg_.parse_repair_limit, cfg_.position_debias});
    }

    Judger support_judger() {
        return Judger(support_client(), templates_, JudgeOptions{cfg_.parse_repair_limit, false});
    }

    void write_call_accounting() {
        if (cfg_.mock_script.empty()) return;
        json j{{"backend", "mock"},
               {"judge_calls", judge_mock_ ? judge_mock_->call_count() : 0},
               {"support_calls", support_mock_ ? support_mock_->call_count() : 0}};
        atomic_write_file(dir_.calls_file(), j.dump(2) + "\n");
    }

    // --- stamps --------------------------------------------------------------

    std::string templates_token() const {
        if (cfg_.template_dir.empty()) return "builtin";
        ContentHash h;
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(cfg_.template_dir))
            if (e.path().extension() == ".txt") files.push_back(e.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) h.feed(f.filename().string()).feed(read_file(f));
        return h.hex();
    }

    std::string judge_tokens() const {
        json t{{"judge", detail::profile_to_json(cfg_.judge_profile)},
               {"templates", templates_token()},
               {"parse_repair_limit", cfg_.parse_repair_limit},
               {"position_debias", cfg_.position_debias}};
        if (!cfg_.mock_script.empty()) t["mock"] = hash_file(cfg_.mock_script);
        return t.dump();
    }

    std::string fingerprint(const std::string& stage, const std::vector<fs::path>& inputs,
                            const std::string& tokens) const {
        ContentHash h;
        h.feed(stage).feed(tokens);
        for (const auto& p : inputs) h.feed(p.filename().string()).feed(hash_file(p));
        return h.hex();
    }

    bool up_to_date(const std::string& stage, const std::string& fp,
                    const std::vector<fs::path>& outputs) const {
        if (opts_.force) return false;
        for (const auto& o : outputs)
            if (!fs::exists(o)) return false;
        fs::path stamp = dir_.stamp_file(stage);
        if (!fs::exists(stamp)) return false;
        json j = json::parse(read_file(stamp), nullptr, false);
        return !j.is_discarded() && j.value("fingerprint", "") == fp;
    }

    void write_stamp(const std::string& stage, const std::string& fp) {
        atomic_write_file(dir_.stamp_file(stage), json{{"fingerprint", fp}}.dump() + "\n");
    }

    void require(const fs::path& file, const std::string& producer) const {
        if (!fs::exists(file)) {
            throw StageError("missing " + file.string() + "; run `" + producer + "` first");
        }
    }

    static void log_stage(const std::string& stage, const std::string& what) {
        std::cerr << "[" << stage << "] " << what << "\n";
    }

    // --- failure-set partitioning (holdout) ----------------------------------

    // With holdout = 0 every failure both seeds generation and serves as
    // validation. With holdout > 0 the trailing fraction is reserved for
    // validation only.
    std::size_t holdout_count(std::size_t n_failures) const {
        if (cfg_.holdout <= 0.0) return 0;
        return static_cast<std::size_t>(std::ceil(cfg_.holdout * static_cast<double>(n_failures)));
    }

    std::vector<FailureCase> generation_cases(const std::vector<FailureCase>& failures) const {
        std::size_t held = holdout_count(failures.size());
        return {failures.begin(), failures.end() - static_cast<std::ptrdiff_t>(held)};
    }

    std::vector<FailureCase> validation_cases(const std::vector<FailureCase>& failures) const {
        std::size_t held = holdout_count(failures.size());
        if (held == 0) return failures;
        return {failures.end() - static_cast<std::ptrdiff_t>(held), failures.end()};
    }

    // --- stages ---------------------------------------------------------------

    void run_ingest() {
        if (cfg_.dataset_path.empty())
            throw ConfigError("dataset_path is required (set it in the config file)");
        if (!fs::exists(cfg_.dataset_path))
            throw ConfigError("dataset file not found: " + cfg_.dataset_path);
        std::string fp = fingerprint("ingest", {fs::path(cfg_.dataset_path)}, "");
        if (up_to_date("ingest", fp, {dir_.dataset_file()})) {
            log_stage("ingest", "up to date, skipping");
            return;
        }
        auto pairs = load_dataset(cfg_.dataset_path);
        save_dataset(dir_.dataset_file(), pairs);
        write_stamp("ingest", fp);
        log_stage("ingest", "wrote " + std::to_string(pairs.size()) + " pairs");
    }

    void run_split() {
        require(dir_.dataset_file(), "ingest");
        json tokens{{"sizes",
                     {cfg_.split_sizes.train, cfg_.split_sizes.calibration, cfg_.split_sizes.test}},
                    {"seed", cfg_.seed},
                    {"stratify", cfg_.stratify_by_source}};
        std::string fp = fingerprint("split", {dir_.dataset_file()}, tokens.dump());
        std::vector<fs::path> outputs{dir_.split_file("train"), dir_.split_file("calibration"),
                                      dir_.split_file("test")};
        if (up_to_date("split", fp, outputs)) {
            log_stage("split", "up to date, skipping");
            return;
        }
        auto pairs = load_dataset(dir_.dataset_file());
        auto split = split_dataset(pairs, cfg_.split_sizes, cfg_.seed, cfg_.stratify_by_source);
        save_dataset(dir_.split_file("train"), split.train);
        save_dataset(dir_.split_file("calibration"), split.calibration);
        save_dataset(dir_.split_file("test"), split.test);
        write_stamp("split", fp);
        log_stage("split", "train/calibration/test = " + std::to_string(split.train.size()) + "/" +
                               std::to_string(split.calibration.size()) + "/" +
                               std::to_string(split.test.size()));
    }

    void run_judge() {
        for (const auto& which : {"train", "calibration", "test"}) require(dir_.split_file(which), "split");
        std::string fp = fingerprint("judge",
                                     {dir_.split_file("train"), dir_.split_file("calibration"),
                                      dir_.split_file("test")},
                                     judge_tokens());
        std::vector<fs::path> outputs{dir_.judgments_file("train"),
                                      dir_.judgments_file("calibration"),
                                      dir_.judgments_file("test")};
        if (up_to_date("judge", fp, outputs)) {
            log_stage("judge", "up to date, skipping");
            return;
        }
        Judger judger = judge_judger();
        for (const auto& which : {"train", "calibration", "test"}) {
            auto pairs = load_dataset(dir_.split_file(which));
            std::vector<json> rows(pairs.size());
            parallel_for(pairs.size(), workers(cfg_.judge_profile), [&](std::size_t i) {
                auto outcome = judger.judge_pair(pairs[i], JudgeMode::vanilla);
                if (!outcome)
                    throw DataError("no parsable verdict for pair \"" + pairs[i].id + "\" after " +
                                    std::to_string(cfg_.parse_repair_limit) + " attempts");
                rows[i] = to_json(outcome->record);
            });
            write_jsonl(dir_.judgments_file(which), rows);
        }
        write_stamp("judge", fp);
        write_call_accounting();
        log_stage("judge", "vanilla judgments written");
    }

    void run_discover() {
        require(dir_.split_file("train"), "split");
        require(dir_.judgments_file("train"), "judge");
        json tokens{{"judge", json::parse(judge_tokens())},
                    {"support", detail::profile_to_json(cfg_.support_profile)},
                    {"retry_limit", cfg_.retry_limit},
                    {"holdout", cfg_.holdout}};
        std::string fp = fingerprint(
            "discover", {dir_.split_file("train"), dir_.judgments_file("train")}, tokens.dump());
        std::vector<fs::path> outputs{dir_.failures_file(), dir_.candidates_file()};
        if (up_to_date("discover", fp, outputs)) {
            log_stage("discover", "up to date, skipping");
            return;
        }

        auto pairs = load_dataset(dir_.split_file("train"));
        std::vector<JudgmentRecord> judgments;
        for (const auto& j : read_jsonl(dir_.judgments_file("train")))
            judgments.push_back(judgment_from_json(j));
        auto failures = collect_failures(pairs, judgments);
        {
            std::vector<json> rows;
            for (const auto& f : failures) rows.push_back(to_json(f));
            write_jsonl(dir_.failures_file(), rows);
        }

        auto gen_cases = generation_cases(failures);
        Judger judge = judge_judger();
        Judger support = support_judger();
        std::vector<std::optional<EvaluationDimension>> found(gen_cases.size());
        parallel_for(gen_cases.size(), workers(cfg_.support_profile), [&](std::size_t i) {
            found[i] = propose_and_verify(gen_cases[i], cfg_.retry_limit, support, judge);
        });
        std::vector<json> rows;
        std::size_t skipped = 0;
        for (const auto& d : found) {
            if (d) {
                rows.push_back(to_json(*d));
            } else {
                ++skipped;
            }
        }
        write_jsonl(dir_.candidates_file(), rows);
        write_stamp("discover", fp);
        write_call_accounting();
        log_stage("discover", std::to_string(failures.size()) + " failures -> " +
                                  std::to_string(rows.size()) + " candidate dimensions (" +
                                  std::to_string(skipped) + " cases skipped)");
    }

    void run_filter() {
        require(dir_.candidates_file(), "discover");
        require(dir_.failures_file(), "discover");
        json tokens{{"judge", json::parse(judge_tokens())},
                    {"threshold", cfg_.filter_threshold}};
        std::string fp = fingerprint("filter", {dir_.candidates_file(), dir_.failures_file()},
                                     tokens.dump());
        if (up_to_date("filter", fp, {dir_.filtered_file()})) {
            log_stage("filter", "up to date, skipping");
            return;
        }
        auto candidates = load_dimension_store(dir_.candidates_file());
        auto failures = load_failures(dir_.failures_file());
        Judger judger = judge_judger();
        auto kept = semantic_filter(candidates, failures, cfg_.filter_threshold, judger);
        save_dimension_store(dir_.filtered_file(), kept);
        write_stamp("filter", fp);
        write_call_accounting();
        log_stage("filter", std::to_string(candidates.size()) + " -> " +
                                std::to_string(kept.size()) + " dimensions kept");
    }

    void run_select() {
        require(dir_.filtered_file(), "filter");
        require(dir_.failures_file(), "discover");
        json tokens{{"judge", json::parse(judge_tokens())},
                    {"k", cfg_.k_dimensions},
                    {"holdout", cfg_.holdout}};
        std::string fp = fingerprint("select", {dir_.filtered_file(), dir_.failures_file()},
                                     tokens.dump());
        std::vector<fs::path> outputs{dir_.coverage_file(), dir_.selected_file(),
                                      dir_.selection_meta_file()};
        if (up_to_date("select", fp, outputs)) {
            log_stage("select", "up to date, skipping");
            return;
        }
        auto filtered = load_dimension_store(dir_.filtered_file());
        if (filtered.empty()) throw DataError("no dimensions survived filtering; nothing to select");
        auto failures = load_failures(dir_.failures_file());
        auto val_cases = validation_cases(failures);
        Judger judger = judge_judger();
        auto matrix = coverage_matrix(filtered, val_cases, judger, workers(cfg_.judge_profile));
        atomic_write_file(dir_.coverage_file(), to_json(matrix).dump(2) + "\n");
        auto selected = select_top_k(matrix, filtered, cfg_.k_dimensions);
        save_dimension_store(dir_.selected_file(), selected.dimensions);
        json meta{{"k", selected.k},
                  {"validation_id", selected.validation_id},
                  {"union_coverage", selected.union_coverage},
                  {"dimension_ids", matrix.dimension_ids}};
        atomic_write_file(dir_.selection_meta_file(), meta.dump(2) + "\n");
        write_stamp("select", fp);
        write_call_accounting();
        log_stage("select", "top " + std::to_string(selected.k) + " selected, union coverage " +
                                std::to_string(selected.union_coverage));
    }

    void run_calibrate() {
        require(dir_.selected_file(), "select");
        require(dir_.split_file("calibration"), "split");
        require(dir_.judgments_file("calibration"), "judge");
        json tokens{{"judge", json::parse(judge_tokens())},
                    {"abstain", to_string(cfg_.abstain_policy)}};
        std::string fp = fingerprint("calibrate",
                                     {dir_.selected_file(), dir_.split_file("calibration"),
                                      dir_.judgments_file("calibration")},
                                     tokens.dump());
        if (up_to_date("calibrate", fp, {dir_.calibration_file()})) {
            log_stage("calibrate", "up to date, skipping");
            return;
        }
        DimensionSet dims = load_selected();
        auto pairs = load_dataset(dir_.split_file("calibration"));
        auto initial = initial_verdicts(dir_.judgments_file("calibration"));
        Judger judger = judge_judger();

        std::vector<CalibrationRow> rows;
        rows.reserve(pairs.size());
        for (const auto& pair : pairs) {
            auto votes = cast_votes(pair, dims, judger, workers(cfg_.judge_profile));
            CalibrationRow row;
            row.label = pair.label;
            row.initial = initial_for(initial, pair.id);
            row.jury = jury_confidence(pair.id, votes, cfg_.abstain_policy);
            rows.push_back(std::move(row));
        }
        std::vector<int> gates;
        for (int g = 0; g <= static_cast<int>(dims.dimensions.size()); ++g) gates.push_back(g);
        auto result = calibrate_threshold(rows, gates, cfg_.abstain_policy);

        json table = json::array();
        for (const auto& g : result.table)
            table.push_back(
                json{{"gate", g.gate}, {"agreement", g.agreement}, {"overrides", g.overrides}});
        atomic_write_file(dir_.calibration_file(),
                          json{{"t_gate", result.t_gate}, {"table", table}}.dump(2) + "\n");
        write_stamp("calibrate", fp);
        write_call_accounting();
        log_stage("calibrate", "chose t_gate = " + std::to_string(result.t_gate));
    }

    void run_ensemble() {
        require(dir_.split_file("test"), "split");
        require(dir_.judgments_file("test"), "judge");
        fs::path store = dir_.selected_file();
        if (opts_.dimensions_override) {
            store = *opts_.dimensions_override;
            if (!fs::exists(store))
                throw ConfigError("dimension store not found: " + store.string());
        } else if (!fs::exists(store)) {
            throw StageError("no selected dimension set; run `select` first or pass --dimensions");
        }
        int gate = effective_t_gate();
        json tokens{{"judge", json::parse(judge_tokens())},
                    {"abstain", to_string(cfg_.abstain_policy)},
                    {"t_gate", gate},
                    {"store", store.string()}};
        std::string fp = fingerprint(
            "ensemble", {store, dir_.split_file("test"), dir_.judgments_file("test")},
            tokens.dump());
        if (up_to_date("ensemble", fp, {dir_.decisions_file()})) {
            log_stage("ensemble", "up to date, skipping");
            return;
        }

        DimensionSet dims;
        dims.dimensions = load_dimension_store(store);
        if (dims.dimensions.empty()) throw DataError("dimension store is empty: " + store.string());
        dims.k = static_cast<int>(dims.dimensions.size());

        EnsembleConfig ecfg{gate, dims.k, cfg_.abstain_policy};
        ecfg.validate();

        auto pairs = load_dataset(dir_.split_file("test"));
        auto initial = initial_verdicts(dir_.judgments_file("test"));
        Judger judger = judge_judger();

        std::vector<json> rows;
        rows.reserve(pairs.size());
        std::size_t overrides = 0;
        for (const auto& pair : pairs) {
            auto votes = cast_votes(pair, dims, judger, workers(cfg_.judge_profile));
            auto jury = jury_confidence(pair.id, votes, cfg_.abstain_policy);
            Label init = initial_for(initial, pair.id);
            DecisionRecord rec;
            rec.decision = decide(init, jury, ecfg);
            for (const auto& v : votes) rec.votes[v.dimension_id] = v.value;
            rec.majority_verdict = majority_vote_baseline(votes, init);
            overrides += rec.decision.overridden;
            rows.push_back(to_json(rec));
        }
        write_jsonl(dir_.decisions_file(), rows);
        write_stamp("ensemble", fp);
        write_call_accounting();
        log_stage("ensemble", std::to_string(rows.size()) + " decisions, " +
                                  std::to_string(overrides) + " overridden (t_gate " +
                                  std::to_string(gate) + ")");
    }

    void run_metrics() {
        require(dir_.decisions_file(), "ensemble");
        require(dir_.split_file("test"), "split");
        json tokens{{"bin_count", cfg_.bin_count}, {"range", {cfg_.bin_lo, cfg_.bin_hi}}};
        std::string fp = fingerprint(
            "metrics", {dir_.decisions_file(), dir_.split_file("test")}, tokens.dump());
        std::vector<fs::path> outputs{dir_.metrics_file(), dir_.reliability_file()};
        if (up_to_date("metrics", fp, outputs)) {
            log_stage("metrics", "up to date, skipping");
            return;
        }

        auto pairs = load_dataset(dir_.split_file("test"));
        std::map<std::string, Label> labels;
        for (const auto& p : pairs) labels[p.id] = p.label;

        std::vector<ScoredOutcome> outcomes;
        std::size_t initial_hits = 0;
        std::size_t jury_hits = 0;
        std::size_t majority_hits = 0;
        std::size_t overrides = 0;
        for (const auto& j : read_jsonl(dir_.decisions_file())) {
            DecisionRecord rec = decision_record_from_json(j);
            auto it = labels.find(rec.decision.pair_id);
            if (it == labels.end())
                throw DataError("decision references unknown pair \"" + rec.decision.pair_id +
                                "\"");
            Label truth = it->second;
            ScoredOutcome o;
            o.pair_id = rec.decision.pair_id;
            o.confidence = rec.decision.calibrated_confidence;
            o.correct = rec.decision.final_verdict == truth;
            outcomes.push_back(o);
            initial_hits += rec.decision.initial == truth;
            Label jury_as_label = rec.decision.jury == JuryPreference::tie
                                      ? rec.decision.initial
                                      : (rec.decision.jury == JuryPreference::A ? Label::A
                                                                                : Label::B);
            jury_hits += jury_as_label == truth;
            majority_hits += rec.majority_verdict == truth;
            overrides += rec.decision.overridden;
        }
        if (outcomes.empty()) throw DataError("decisions file is empty");

        auto table = reliability_table(outcomes, cfg_.bin_count, cfg_.bin_lo, cfg_.bin_hi);
        double n = static_cast<double>(outcomes.size());
        json report{{"agreement", agreement_rate(outcomes)},
                    {"agreement_initial", initial_hits / n},
                    {"agreement_jury", jury_hits / n},
                    {"agreement_majority", majority_hits / n},
                    {"overrides", overrides},
                    {"ece", table.ece()},
                    {"reliability", to_json(table)},
                    {"meta",
                     {{"n", outcomes.size()},
                      {"seed", cfg_.seed},
                      {"t_gate", effective_t_gate()},
                      {"bin_count", cfg_.bin_count},
                      {"range", {cfg_.bin_lo, cfg_.bin_hi}}}}};
        // Rank metrics are undefined on single-class outcomes; report null.
        try {
            report["auroc"] = auroc(outcomes);
        } catch (const DataError& e) {
            log_warn(std::string("auroc unavailable: ") + e.what());
            report["auroc"] = nullptr;
        }
        try {
            report["auprc"] = auprc(outcomes);
        } catch (const DataError& e) {
            log_warn(std::string("auprc unavailable: ") + e.what());
            report["auprc"] = nullptr;
        }
        atomic_write_file(dir_.metrics_file(), report.dump(2) + "\n");
        atomic_write_file(dir_.reliability_file(), table.to_csv());
        write_stamp("metrics", fp);
        log_stage("metrics", "agreement " + std::to_string(report["agreement"].get<double>()));
    }

    // --- shared helpers -------------------------------------------------------

    static std::size_t workers(const BackendProfile& p) {
        return static_cast<std::size_t>(std::max(1, p.max_in_flight));
    }

    static std::vector<FailureCase> load_failures(const fs::path& path) {
        std::vector<FailureCase> out;
        for (const auto& j : read_jsonl(path)) out.push_back(failure_from_json(j));
        return out;
    }

    DimensionSet load_selected() const {
        DimensionSet dims;
        dims.dimensions = load_dimension_store(dir_.selected_file());
        dims.k = static_cast<int>(dims.dimensions.size());
        if (fs::exists(dir_.selection_meta_file())) {
            json meta = json::parse(read_file(dir_.selection_meta_file()), nullptr, false);
            if (!meta.is_discarded()) {
                dims.validation_id = meta.value("validation_id", "");
                dims.union_coverage = meta.value("union_coverage", 0.0);
            }
        }
        return dims;
    }

    std::map<std::string, Label> initial_verdicts(const fs::path& judgments) const {
        std::map<std::string, Label> out;
        for (const auto& j : read_jsonl(judgments)) {
            JudgmentRecord r = judgment_from_json(j);
            if (r.mode == JudgeMode::vanilla) out[r.pair_id] = r.verdict;
        }
        return out;
    }

    static Label initial_for(const std::map<std::string, Label>& initial, const std::string& id) {
        auto it = initial.find(id);
        if (it == initial.end()) throw DataError("no vanilla judgment for pair \"" + id + "\"");
        return it->second;
    }

    /// Gate precedence: explicit --t-gate, then the calibrate stage's choice,
    /// then the config default.
    int effective_t_gate() const {
        if (opts_.t_gate_override) return *opts_.t_gate_override;
        if (fs::exists(dir_.calibration_file())) {
            json j = json::parse(read_file(dir_.calibration_file()), nullptr, false);
            if (!j.is_discarded() && j.contains("t_gate")) return j["t_gate"].get<int>();
        }
        return cfg_.t_gate;
    }

    RunConfig cfg_;
    RunDirectory dir_;
    RunOptions opts_;
    TemplateLibrary templates_;
    std::unique_ptr<ChatClient> judge_client_;
    std::unique_ptr<ChatClient> support_client_;
    ScriptedMockClient* judge_mock_ = nullptr;
    ScriptedMockClient* support_mock_ = nullptr;
};

}  // namespace ape
