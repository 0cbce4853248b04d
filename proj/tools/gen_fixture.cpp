// Regenerates the bundled synthetic fixture (data/synthetic50): a 50-pair
// dataset, a scripted mock for both model roles, a pipeline config, and the
// hand-computed expectations the acceptance suite asserts against.
//
// The mock is designed around the seed-7 split of the dataset:
//   - the vanilla judge errs on exactly the first 10 train pairs (so the
//     dataset-level initial agreement is 40/50 = 0.80),
//   - the support model repairs 8 of those 10 failures within the retry
//     budget (one of them on its third attempt; two cases never verify),
//   - score-separation filtering keeps 6 of the 8 candidates (two sit
//     exactly on the threshold gap of 2 and are discarded),
//   - coverage rates rank the kept dimensions 0.8/0.6/0.2/0.2/0.1/0.1 with
//     ties broken by origin order, and the top 4 jointly cover 8/10 cases,
//   - on the calibration split two pairs draw a wrong-way margin-2 jury, so
//     every gate >= 2 ties at agreement 1.0 and calibration picks gate 4,
//   - on the test split the initial verdicts are all correct and no jury
//     margin exceeds the gate, so the final agreement stays 1.0.
//
// Rerun after changing the splitter, templates, or prompt headers:
//   ./build/ape-gen-fixture data/synthetic50

#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "ape/core.hpp"
#include "ape/pipeline.hpp"

using namespace ape;

namespace {

struct FixtureDesign {
    std::vector<PreferencePair> pairs;
    DatasetSplit split;
    std::vector<std::string> designated;  // failing train pairs, in train order
    json mock;
    json expected;
};

std::string verdict_json(Label v) { return json{{"verdict", to_string(v)}}.dump(); }

json rule(const std::string& match, const std::string& response) {
    return json{{"match", match}, {"response", response}};
}

FixtureDesign build() {
    FixtureDesign fx;

    const std::vector<std::string> topics{
        "Summarize the causes of the 1906 San Francisco earthquake",
        "Explain how photosynthesis stores energy",
        "Draft a polite reply declining a meeting invitation",
        "Describe the difference between weather and climate",
        "Give advice for a first-time marathon runner",
        "Explain why ships float in water",
        "Outline the plot of a mystery story set in a library",
        "Describe how vaccines train the immune system",
        "Explain what a hash table is to a beginner",
        "Suggest a weekend itinerary for visiting a coastal town"};
    const std::vector<std::string> sources{"helpsteer2", "offsetbias", "wildguard"};

    for (int i = 1; i <= 50; ++i) {
        char id[8];
        std::snprintf(id, sizeof(id), "p%02d", i);
        PreferencePair p;
        p.id = id;
        p.prompt = topics[static_cast<std::size_t>(i - 1) % topics.size()] + " (request " +
                   std::string(id) + ").";
        p.response_a = "Candidate answer one for " + std::string(id) +
                       ": a direct, factual treatment of the request.";
        p.response_b = "Candidate answer two for " + std::string(id) +
                       ": a looser, more conversational treatment of the request.";
        p.label = (i % 3 == 0) ? Label::B : Label::A;
        p.source = sources[static_cast<std::size_t>(i - 1) % sources.size()];
        fx.pairs.push_back(std::move(p));
    }

    const SplitSizes sizes{30, 10, 10};
    const std::uint64_t seed = 7;
    fx.split = split_dataset(fx.pairs, sizes, seed);
    for (std::size_t i = 0; i < 10; ++i) fx.designated.push_back(fx.split.train[i].id);

    std::map<std::string, Label> label_of;
    for (const auto& p : fx.pairs) label_of[p.id] = p.label;
    auto wrong = [&](const std::string& id) { return opposite(label_of.at(id)); };
    auto right = [&](const std::string& id) { return label_of.at(id); };

    json rules = json::array();

    // --- support-model proposals -------------------------------------------
    // Cases 0..6 verify on the first attempt; case 7 needs three attempts;
    // cases 8 and 9 never produce a dimension that flips the judge.
    auto proposal = [](const std::string& name, const std::string& rubric) {
        return json{{"name", name}, {"rubric", rubric}}.dump();
    };
    for (std::size_t k = 0; k < 7; ++k) {
        const std::string& id = fx.designated[k];
        rules.push_back(rule(
            "[[case " + id + " | mode propose",
            proposal("Grounded specificity " + id,
                     "Prefer the response that stays concrete and grounded for request " + id +
                         "; penalize vague filler.")));
    }
    {
        const std::string& id = fx.designated[7];
        rules.push_back(rule("[[case " + id + " | mode propose | attempt 1]]",
                             proposal("Tone match " + id,
                                      "Prefer the response whose tone fits the request " + id + ".")));
        rules.push_back(rule("[[case " + id + " | mode propose | attempt 2]]",
                             proposal("Brevity " + id,
                                      "Prefer the shorter response for request " + id + ".")));
        rules.push_back(rule("[[case " + id + " | mode propose | attempt 3]]",
                             proposal("Instruction fidelity " + id,
                                      "Prefer the response that follows every explicit instruction in "
                                      "request " + id + ".")));
    }
    for (std::size_t k = 8; k < 10; ++k) {
        const std::string& id = fx.designated[k];
        rules.push_back(rule("[[case " + id + " | mode propose",
                             proposal("Surface polish " + id,
                                      "Prefer the response with smoother phrasing for request " + id +
                                          ".")));
    }

    // --- judge, dimension mode ----------------------------------------------
    // Dimension ids follow the library's <case>-d<attempt> scheme.
    std::vector<std::string> verified;  // candidate store content, in case order
    for (std::size_t k = 0; k < 7; ++k) verified.push_back(fx.designated[k] + "-d1");
    verified.push_back(fx.designated[7] + "-d3");

    auto dim_rule = [&](const std::string& pair_id, const std::string& dim_id, Label verdict) {
        rules.push_back(rule("[[instance " + pair_id + " | mode dimension | dimension " + dim_id +
                                 "]]",
                             verdict_json(verdict)));
    };

    // Verification outcomes on each dimension's origin case.
    for (std::size_t k = 0; k < 7; ++k) dim_rule(fx.designated[k], verified[k], right(fx.designated[k]));
    dim_rule(fx.designated[7], fx.designated[7] + "-d1", wrong(fx.designated[7]));
    dim_rule(fx.designated[7], fx.designated[7] + "-d2", wrong(fx.designated[7]));
    dim_rule(fx.designated[7], fx.designated[7] + "-d3", right(fx.designated[7]));
    for (std::size_t k = 8; k < 10; ++k) {
        // One prefix rule covers every attempt's dimension id (-d1 ... -d10).
        rules.push_back(rule("[[instance " + fx.designated[k] + " | mode dimension | dimension " +
                                 fx.designated[k] + "-d",
                             verdict_json(wrong(fx.designated[k]))));
    }

    // --- score-separation filter ---------------------------------------------
    // Kept candidates score (9,3) in the winner's favor; the two discarded
    // ones land exactly on the threshold gap |6-4| = 2, which must not pass.
    std::set<std::size_t> discarded{5, 6};  // designated indices of f6-d1, f7-d1
    std::vector<std::string> kept;
    for (std::size_t k = 0; k < verified.size(); ++k) {
        std::size_t case_idx = k < 7 ? k : 7;
        const std::string& case_id = fx.designated[case_idx];
        bool keep = !discarded.count(case_idx);
        int win = keep ? 9 : 6;
        int lose = keep ? 3 : 4;
        int score_a = label_of.at(case_id) == Label::A ? win : lose;
        int score_b = label_of.at(case_id) == Label::A ? lose : win;
        rules.push_back(rule("[[instance " + case_id + " | mode score | dimension " + verified[k] +
                                 " | target A]]",
                             json{{"score", score_a}}.dump()));
        rules.push_back(rule("[[instance " + case_id + " | mode score | dimension " + verified[k] +
                                 " | target B]]",
                             json{{"score", score_b}}.dump()));
        if (keep) kept.push_back(verified[k]);
    }

    // --- coverage cells --------------------------------------------------------
    // Fix sets per kept dimension, expressed as designated-case indices.
    std::map<std::string, std::set<std::size_t>> fixes{
        {kept[0], {0, 1, 2, 3, 4, 5, 6, 7}},  // rate 0.8
        {kept[1], {1, 2, 3, 4, 5, 6}},        // rate 0.6
        {kept[2], {0, 2}},                    // rate 0.2, origin 3rd case
        {kept[3], {1, 3}},                    // rate 0.2, origin 4th case
        {kept[4], {4}},                       // rate 0.1, origin 5th case
        {kept[5], {7}},                       // rate 0.1, origin 8th case
    };
    for (const auto& dim : kept) {
        for (std::size_t i = 0; i < 10; ++i) {
            const std::string& case_id = fx.designated[i];
            bool verification_combo =
                dim.rfind(case_id + "-d", 0) == 0;  // rule already emitted above
            if (verification_combo) continue;
            dim_rule(case_id, dim, fixes[dim].count(i) ? right(case_id) : wrong(case_id));
        }
    }
    // Consistency check: verification rules say the origin case is fixed, so
    // each kept dimension's fix set must contain its origin index.
    for (std::size_t k = 0; k < kept.size(); ++k) {
        std::size_t origin_idx = k < 5 ? k : 7;
        if (!fixes[kept[k]].count(origin_idx))
            throw std::logic_error("fix set must include the origin case");
    }

    std::vector<std::string> selected{kept[0], kept[1], kept[2], kept[3]};

    // --- jury votes on calibration and test splits -----------------------------
    // Calibration: pairs 0 and 1 draw a wrong-way margin-2 jury (3 vs 1), the
    // rest a unanimous agreeing jury. Test: pairs 0..2 split 2-2 (tie), the
    // rest unanimous.
    for (std::size_t i = 0; i < fx.split.calibration.size(); ++i) {
        const auto& pair = fx.split.calibration[i];
        for (std::size_t d = 0; d < selected.size(); ++d) {
            Label v = right(pair.id);
            if (i < 2 && d != 0) v = wrong(pair.id);  // 1 right, 3 wrong
            dim_rule(pair.id, selected[d], v);
        }
    }
    for (std::size_t i = 0; i < fx.split.test.size(); ++i) {
        const auto& pair = fx.split.test[i];
        for (std::size_t d = 0; d < selected.size(); ++d) {
            Label v = right(pair.id);
            if (i < 3 && d >= 2) v = wrong(pair.id);  // 2-2 tie
            dim_rule(pair.id, selected[d], v);
        }
    }

    // --- vanilla verdicts -------------------------------------------------------
    std::set<std::string> failing(fx.designated.begin(), fx.designated.end());
    for (const auto& p : fx.pairs) {
        Label v = failing.count(p.id) ? opposite(p.label) : p.label;
        rules.push_back(rule("[[instance " + p.id + " | mode vanilla]]", verdict_json(v)));
    }

    fx.mock = json{{"default_response", "I am not sure."}, {"rules", rules}};

    // --- hand-computed expectations ----------------------------------------------
    // Judge-call budget: 50 vanilla + (7 + 3 + 10 + 10) verification
    // + 16 filter scores + 60 coverage cells + 40 calibration votes
    // + 40 test votes = 236. Support calls: 7 + 3 + 10 + 10 = 30.
    fx.expected = json{{"designated_failures", fx.designated},
                       {"initial_dataset_agreement", 0.8},
                       {"candidate_count", 8},
                       {"verified_ids", verified},
                       {"kept_ids", kept},
                       {"selected_ranking", selected},
                       {"union_coverage", 0.8},
                       {"coverage_rates", {0.8, 0.6, 0.2, 0.2}},
                       {"t_gate", 4},
                       {"calibration_table",
                        {{{"gate", 0}, {"agreement", 0.8}, {"overrides", 2}},
                         {{"gate", 1}, {"agreement", 0.8}, {"overrides", 2}},
                         {{"gate", 2}, {"agreement", 1.0}, {"overrides", 0}},
                         {{"gate", 3}, {"agreement", 1.0}, {"overrides", 0}},
                         {{"gate", 4}, {"agreement", 1.0}, {"overrides", 0}}}},
                       {"final_agreement", 1.0},
                       {"override_count", 0},
                       {"judge_calls", 236},
                       {"support_calls", 30}};
    return fx;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        fs::path out = argc > 1 ? argv[1] : "data/synthetic50";
        fs::create_directories(out);
        FixtureDesign fx = build();

        save_dataset(out / "dataset.jsonl", fx.pairs);
        atomic_write_file(out / "mock.json", fx.mock.dump(2) + "\n");
        atomic_write_file(out / "expected.json", fx.expected.dump(2) + "\n");

        RunConfig cfg;
        cfg.dataset_path = "dataset.jsonl";
        cfg.mock_script = "mock.json";
        cfg.split_sizes = SplitSizes{30, 10, 10};
        cfg.seed = 7;
        cfg.k_dimensions = 4;
        cfg.judge_profile.endpoint = "mock://scripted";
        cfg.judge_profile.model_name = "scripted-judge";
        cfg.support_profile.endpoint = "mock://scripted";
        cfg.support_profile.model_name = "scripted-support";
        cfg.cache_dir = "";  // the mock needs no cache
        atomic_write_file(out / "config.json", to_json(cfg).dump(2) + "\n");

        std::cout << "fixture written to " << out.string() << "\n";
        std::cout << "train head (designated failures):";
        for (const auto& id : fx.designated) std::cout << " " << id;
        std::cout << "\n";
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "gen-fixture failed: " << e.what() << "\n";
        return 1;
    }
}
