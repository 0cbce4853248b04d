#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "ape/pipeline.hpp"

using namespace ape;

namespace {

fs::path fresh_dir(const std::string& name) {
    fs::path p = fs::temp_directory_path() / ("ape_pipe_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

// A complete scripted world for a tiny 8-pair pipeline: one designated
// failure in the train split, one dimension that repairs it, clean
// calibration and test splits.
struct MiniFixture {
    fs::path dir;
    RunConfig cfg;
    std::string failing_id;

    explicit MiniFixture(const std::string& name) : dir(fresh_dir(name)) {
        std::vector<PreferencePair> pairs;
        for (int i = 1; i <= 8; ++i) {
            PreferencePair p;
            p.id = "q" + std::to_string(i);
            p.prompt = "question " + p.id;
            p.response_a = "answer one for " + p.id;
            p.response_b = "answer two for " + p.id;
            p.label = (i % 3 == 0) ? Label::B : Label::A;
            pairs.push_back(std::move(p));
        }
        save_dataset(dir / "dataset.jsonl", pairs);

        SplitSizes sizes{4, 2, 2};
        std::uint64_t seed = 1;
        auto split = split_dataset(pairs, sizes, seed);
        failing_id = split.train[0].id;

        std::map<std::string, Label> label_of;
        for (const auto& p : pairs) label_of[p.id] = p.label;
        std::string dim_id = failing_id + "-d1";

        json rules = json::array();
        auto add = [&rules](const std::string& match, const std::string& response) {
            rules.push_back({{"match", match}, {"response", response}});
        };
        auto verdict = [](Label v) { return json{{"verdict", to_string(v)}}.dump(); };

        add("[[case " + failing_id + " | mode propose",
            json{{"name", "Directness"},
                 {"rubric", "Prefer the answer that addresses the question head on."}}
                .dump());
        for (const auto& p : pairs) {
            add("[[instance " + p.id + " | mode dimension | dimension " + dim_id + "]]",
                verdict(p.label));
        }
        bool label_a = label_of[failing_id] == Label::A;
        add("[[instance " + failing_id + " | mode score | dimension " + dim_id + " | target A]]",
            json{{"score", label_a ? 9 : 3}}.dump());
        add("[[instance " + failing_id + " | mode score | dimension " + dim_id + " | target B]]",
            json{{"score", label_a ? 3 : 9}}.dump());
        for (const auto& p : pairs) {
            Label v = p.id == failing_id ? opposite(p.label) : p.label;
            add("[[instance " + p.id + " | mode vanilla]]", verdict(v));
        }
        atomic_write_file(dir / "mock.json",
                          json{{"default_response", "hmm"}, {"rules", rules}}.dump(2));

        cfg.dataset_path = (dir / "dataset.jsonl").string();
        cfg.mock_script = (dir / "mock.json").string();
        cfg.split_sizes = sizes;
        cfg.seed = seed;
        cfg.k_dimensions = 1;
        cfg.cache_dir = "";
        cfg.judge_profile.endpoint = "mock://x";
        cfg.support_profile.endpoint = "mock://x";
    }

    fs::path run_dir(const std::string& name) const { return dir / name; }
};

std::string slurp(const fs::path& p) { return read_file(p); }

}  // namespace

TEST_CASE("run config: default values match the documented constants") {
    RunConfig cfg;
    CHECK(cfg.retry_limit == 10);
    CHECK(cfg.filter_threshold == 2.0);
    CHECK(cfg.k_dimensions == 16);
    CHECK(cfg.t_gate == 4);
    CHECK(cfg.judge_profile.temperature == 0.6);
    CHECK(cfg.support_profile.temperature == 0.6);
    CHECK(cfg.split_sizes.train == 500);
    CHECK(cfg.split_sizes.calibration == 200);
    CHECK(cfg.split_sizes.test == 1000);
    CHECK(cfg.bin_count == 10);
    CHECK(cfg.parse_repair_limit == 3);
    CHECK_FALSE(cfg.position_debias);
}

TEST_CASE("run config round-trips losslessly through JSON") {
    RunConfig cfg;
    cfg.dataset_path = "/data/set.jsonl";
    cfg.seed = 1234;
    cfg.k_dimensions = 7;
    cfg.holdout = 0.25;
    cfg.abstain_policy = AbstainPolicy::fail_instance;
    cfg.judge_profile.model_name = "other-model";
    cfg.judge_profile.temperature = 0.9;
    auto j = to_json(cfg);
    auto back = run_config_from_json(j);
    CHECK(to_json(back) == j);
    CHECK(back.judge_profile.temperature == 0.9);
    CHECK(back.abstain_policy == AbstainPolicy::fail_instance);
}

TEST_CASE("default run config matches the golden file") {
    auto golden_path = fs::path(APE_SOURCE_DIR) / "tests" / "golden" / "default_config.json";
    std::string golden = read_file(golden_path);
    CHECK(to_json(RunConfig{}).dump(2) + "\n" == golden);
}

TEST_CASE("config validation reports every problem at once") {
    RunConfig cfg;
    cfg.retry_limit = 0;
    cfg.k_dimensions = 0;
    cfg.t_gate = -1;
    cfg.bin_count = 0;
    auto problems = cfg.validate();
    CHECK(problems.size() == 4);
    CHECK_THROWS_AS(cfg.validate_or_throw(), ConfigError);
}

TEST_CASE("load_run_config resolves relative paths against the config file") {
    fs::path dir = fresh_dir("cfg_resolve");
    atomic_write_file(dir / "config.json",
                      json{{"dataset_path", "dataset.jsonl"}, {"mock_script", "mock.json"}}
                          .dump());
    auto cfg = load_run_config(dir / "config.json");
    CHECK(cfg.dataset_path == (dir / "dataset.jsonl").string());
    CHECK(cfg.mock_script == (dir / "mock.json").string());
}

TEST_CASE("run lock: the second holder fails fast, release reopens") {
    RunDirectory dir(fresh_dir("lock"));
    {
        RunLock lock(dir);
        CHECK_THROWS_AS(RunLock{dir}, StageError);
    }
    CHECK_NOTHROW(RunLock{dir});
}

TEST_CASE("stage preconditions name the stage to run first") {
    MiniFixture fx("pre");
    Pipeline p(fx.cfg, fx.run_dir("rd"));
    CHECK_THROWS_WITH(p.run(Stage::split), Catch::Matchers::ContainsSubstring("ingest"));
    p.run(Stage::ingest);
    CHECK_THROWS_WITH(p.run(Stage::judge), Catch::Matchers::ContainsSubstring("split"));
    p.run(Stage::split);
    p.run(Stage::judge);
    CHECK_THROWS_WITH(p.run(Stage::ensemble),
                      Catch::Matchers::ContainsSubstring("--dimensions") &&
                          Catch::Matchers::ContainsSubstring("select"));
    CHECK_THROWS_WITH(p.run(Stage::metrics), Catch::Matchers::ContainsSubstring("ensemble"));
}

TEST_CASE("the full mini pipeline runs offline and lands at perfect agreement") {
    MiniFixture fx("full");
    fs::path rd = fx.run_dir("rd");
    Pipeline p(fx.cfg, rd);
    p.run_all();
    RunDirectory dir(rd);

    auto failures = read_jsonl(dir.failures_file());
    REQUIRE(failures.size() == 1);
    CHECK(failures[0]["pair"]["id"] == fx.failing_id);

    auto candidates = read_jsonl(dir.candidates_file());
    REQUIRE(candidates.size() == 1);
    CHECK(candidates[0]["verified"] == true);
    CHECK(candidates[0]["origin_case_id"] == fx.failing_id);

    auto selected = load_dimension_store(dir.selected_file());
    REQUIRE(selected.size() == 1);
    CHECK(*selected[0].coverage_rate == 1.0);

    json calibration = json::parse(slurp(dir.calibration_file()));
    CHECK(calibration["t_gate"] == 1);  // ties break toward the larger gate
    for (const auto& row : calibration["table"]) CHECK(row["agreement"] == 1.0);

    auto decisions = read_jsonl(dir.decisions_file());
    CHECK(decisions.size() == 2);
    for (const auto& d : decisions) CHECK(d["overridden"] == false);

    json metrics = json::parse(slurp(dir.metrics_file()));
    CHECK(metrics["agreement"] == 1.0);
    CHECK(metrics["agreement_initial"] == 1.0);
    CHECK(metrics["auroc"].is_null());  // single-class outcomes
    CHECK(fs::exists(dir.reliability_file()));

    json calls = json::parse(slurp(dir.calls_file()));
    CHECK(calls["backend"] == "mock");
    CHECK(calls["judge_calls"].get<int>() > 0);
    CHECK(calls["support_calls"].get<int>() == 1);
}

TEST_CASE("reruns skip cleanly and leave byte-identical artifacts") {
    MiniFixture fx("idem");
    fs::path rd = fx.run_dir("rd");
    {
        Pipeline p(fx.cfg, rd);
        p.run_all();
    }
    RunDirectory dir(rd);
    std::string decisions = slurp(dir.decisions_file());
    std::string metrics = slurp(dir.metrics_file());
    std::string reliability = slurp(dir.reliability_file());
    {
        Pipeline p(fx.cfg, rd);
        p.run_all();
        CHECK(p.mock_calls() == 0);  // every stage was up to date
    }
    CHECK(slurp(dir.decisions_file()) == decisions);
    CHECK(slurp(dir.metrics_file()) == metrics);
    CHECK(slurp(dir.reliability_file()) == reliability);
}

TEST_CASE("two fresh runs of the same fixture are byte-identical") {
    MiniFixture fx("detA");
    fs::path rd1 = fx.run_dir("rd1");
    fs::path rd2 = fx.run_dir("rd2");
    Pipeline(fx.cfg, rd1).run_all();
    Pipeline(fx.cfg, rd2).run_all();
    RunDirectory a(rd1);
    RunDirectory b(rd2);
    CHECK(slurp(a.decisions_file()) == slurp(b.decisions_file()));
    CHECK(slurp(a.metrics_file()) == slurp(b.metrics_file()));
    CHECK(slurp(a.selected_file()) == slurp(b.selected_file()));
}

TEST_CASE("a dimension store transfers into a different run via override") {
    MiniFixture fx("transfer");
    fs::path rd1 = fx.run_dir("rd1");
    Pipeline(fx.cfg, rd1).run_all();

    fs::path rd2 = fx.run_dir("rd2");
    RunOptions opts;
    opts.dimensions_override = RunDirectory(rd1).selected_file();
    opts.t_gate_override = 0;
    Pipeline p(fx.cfg, rd2, opts);
    p.run(Stage::ingest);
    p.run(Stage::split);
    p.run(Stage::judge);
    p.run(Stage::ensemble);  // no select stage in this run
    p.run(Stage::metrics);
    json metrics = json::parse(slurp(RunDirectory(rd2).metrics_file()));
    CHECK(metrics["agreement"] == 1.0);
    CHECK(metrics["meta"]["t_gate"] == 0);
}

TEST_CASE("ingest rejects a broken dataset") {
    MiniFixture fx("badset");
    atomic_write_file(fx.dir / "dataset.jsonl", "{\"id\":\"x\"}\n");
    Pipeline p(fx.cfg, fx.run_dir("rd"));
    CHECK_THROWS_AS(p.run(Stage::ingest), DataError);
}

TEST_CASE("missing dataset path is a config error") {
    MiniFixture fx("nocfg");
    fx.cfg.dataset_path = "";
    Pipeline p(fx.cfg, fx.run_dir("rd"));
    CHECK_THROWS_AS(p.run(Stage::ingest), ConfigError);
}
