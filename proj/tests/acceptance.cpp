// Acceptance suite: one pass/fail line per criterion, nonzero exit if any
// criterion fails. Criteria 1-5, 7, 8 run in-process; criterion 6 drives the
// installed CLI binary against the bundled synthetic fixture.

#include <chrono>
#include <cstdlib>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ape/core.hpp"
#include "ape/ensemble.hpp"
#include "ape/metrics.hpp"
#include "ape/pipeline.hpp"
#include "oracles.hpp"

using namespace ape;
using Clock = std::chrono::steady_clock;

namespace {

struct Criterion {
    int id;
    std::string name;
    bool pass = true;
    std::vector<std::string> notes;

    void check(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            notes.push_back(what);
        }
    }

    void note(const std::string& what) { notes.push_back(what); }
};

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

// ---------------------------------------------------------------------------
// 1. Vote arithmetic, exhaustive over all 3^12 vote patterns.
// ---------------------------------------------------------------------------
Criterion criterion1() {
    Criterion c{1, "vote arithmetic, exhaustive 3^12 patterns, gates 0..12"};
    auto start = Clock::now();
    const int n = 12;
    long patterns = 1;
    for (int i = 0; i < n; ++i) patterns *= 3;

    std::vector<Vote> votes(n);
    for (long code = 0; code < patterns; ++code) {
        long rest = code;
        int sum = 0;
        int cast = 0;
        for (int i = 0; i < n; ++i) {
            int digit = static_cast<int>(rest % 3);
            rest /= 3;
            votes[static_cast<std::size_t>(i)].dimension_id = "d";
            votes[static_cast<std::size_t>(i)].value =
                digit == 0 ? VoteValue::abstain
                           : (digit == 1 ? VoteValue::prefer_a : VoteValue::prefer_b);
            if (digit == 1) {
                ++sum;
                ++cast;
            } else if (digit == 2) {
                --sum;
                ++cast;
            }
        }
        auto jury = jury_confidence("p", votes);
        int brute = sum < 0 ? -sum : sum;
        if (jury.c_jury != brute || jury.n_cast != cast) {
            c.check(false, "c_jury mismatch at pattern " + std::to_string(code));
            break;
        }
        if ((jury.c_jury % 2) != (jury.n_cast % 2)) {
            c.check(false, "parity violated at pattern " + std::to_string(code));
            break;
        }
        bool ok = true;
        for (int t = 0; t <= 12 && ok; ++t) {
            EnsembleConfig cfg{t, n + 1, AbstainPolicy::shrink_n};
            for (Label initial : {Label::A, Label::B}) {
                Label expect = initial;  // the piecewise definition
                if (brute > t && sum != 0) expect = sum > 0 ? Label::A : Label::B;
                if (decide(initial, jury, cfg).final_verdict != expect) {
                    c.check(false, "decide deviates from piecewise at pattern " +
                                       std::to_string(code) + ", t=" + std::to_string(t));
                    ok = false;
                    break;
                }
            }
        }
        if (!c.pass) break;
    }
    double elapsed = seconds_since(start);
    c.note("runtime " + std::to_string(elapsed) + "s");
    c.check(elapsed < 5.0, "runtime exceeded 5s");
    return c;
}

// ---------------------------------------------------------------------------
// 2. Calibrated map: exact endpoints, strict monotonicity.
// ---------------------------------------------------------------------------
Criterion criterion2() {
    Criterion c{2, "calibrated map endpoints exact for n in 1..64, strictly increasing"};
    for (int n = 1; n <= 64; ++n) {
        c.check(calibrate_confidence(0, n) == 0.5, "(0," + std::to_string(n) + ") != 0.5");
        c.check(calibrate_confidence(n, n) == 1.0, "(" + std::to_string(n) + "," +
                                                       std::to_string(n) + ") != 1.0");
        for (int k = 1; k <= n; ++k) {
            if (!(calibrate_confidence(k, n) > calibrate_confidence(k - 1, n))) {
                c.check(false, "not strictly increasing at (" + std::to_string(k) + "," +
                                   std::to_string(n) + ")");
            }
        }
    }
    return c;
}

// ---------------------------------------------------------------------------
// 3. Gate monotonicity over randomized juries.
// ---------------------------------------------------------------------------
Criterion criterion3() {
    Criterion c{3, "override count nonincreasing as t_gate sweeps 0..N, 1000 juries"};
    std::mt19937_64 gen(42);
    const int N = 16;
    struct Instance {
        JuryResult jury;
        Label initial;
    };
    std::vector<Instance> instances;
    for (int i = 0; i < 1000; ++i) {
        int n_cast = 1 + static_cast<int>(gen() % N);
        int a = static_cast<int>(gen() % (n_cast + 1));
        std::vector<Vote> votes;
        for (int v = 0; v < n_cast; ++v) {
            votes.push_back({"d" + std::to_string(v),
                             v < a ? VoteValue::prefer_a : VoteValue::prefer_b});
        }
        instances.push_back({jury_confidence("p", votes), gen() % 2 ? Label::A : Label::B});
    }
    int prev = -1;
    for (int t = 0; t <= N; ++t) {
        EnsembleConfig cfg{t, N + 1, AbstainPolicy::shrink_n};
        int overrides = 0;
        for (const auto& inst : instances) {
            overrides += decide(inst.initial, inst.jury, cfg).overridden;
        }
        if (prev >= 0 && overrides > prev) {
            c.check(false, "override count rose from " + std::to_string(prev) + " to " +
                               std::to_string(overrides) + " at t=" + std::to_string(t));
        }
        prev = overrides;
    }
    return c;
}

// ---------------------------------------------------------------------------
// 4. Metric oracles on random instance sets.
// ---------------------------------------------------------------------------
Criterion criterion4() {
    Criterion c{4, "ece/auroc/auprc match brute-force oracles within 1e-9"};
    std::mt19937 gen(42);
    std::uniform_real_distribution<double> conf(0.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        std::size_t n = 2 + gen() % 11;
        std::vector<ScoredOutcome> outcomes;
        for (std::size_t i = 0; i < n; ++i) {
            ScoredOutcome o;
            o.confidence = (gen() % 2) ? conf(gen) : static_cast<double>(gen() % 5) / 4.0;
            o.correct = gen() % 2 == 0;
            outcomes.push_back(o);
        }
        outcomes[0].correct = true;
        outcomes[n - 1].correct = false;

        if (std::abs(auroc(outcomes) - oracle::auroc_pair_counting(outcomes)) > 1e-9) {
            c.check(false, "auroc deviates at trial " + std::to_string(trial));
        }
        if (std::abs(auprc(outcomes) - oracle::auprc_curve_integration(outcomes)) > 1e-9) {
            c.check(false, "auprc deviates at trial " + std::to_string(trial));
        }
        if (std::abs(ece(outcomes, 4, 0.0, 1.0) - oracle::ece_direct(outcomes, 4, 0.0, 1.0)) >
            1e-9) {
            c.check(false, "ece deviates at trial " + std::to_string(trial));
        }
        double acc = 0.0;
        double mean_conf = 0.0;
        for (const auto& o : outcomes) {
            acc += o.correct;
            mean_conf += o.confidence;
        }
        acc /= static_cast<double>(n);
        mean_conf /= static_cast<double>(n);
        if (ece(outcomes, 1, 0.0, 1.0) != std::abs(acc - mean_conf)) {
            c.check(false, "single-bin ece is not exactly |acc - mean conf| at trial " +
                               std::to_string(trial));
        }
    }
    return c;
}

// ---------------------------------------------------------------------------
// 5. Simulation calibration with independent jurors.
// ---------------------------------------------------------------------------
Criterion criterion5() {
    Criterion c{5, "simulated jurors: bucket accuracy monotone, collective ECE beats 0.9-const"};
    auto start = Clock::now();
    std::mt19937_64 gen(42);
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    const int N = 16;
    const double juror_accuracy = 0.8;
    const int instances = 10000;

    std::map<int, std::pair<int, int>> buckets;  // c -> (count, correct)
    std::vector<ScoredOutcome> collective;
    std::vector<ScoredOutcome> baseline;
    for (int i = 0; i < instances; ++i) {
        Label winner = gen() % 2 ? Label::A : Label::B;
        int sum = 0;
        for (int v = 0; v < N; ++v) {
            bool votes_winner = coin(gen) < juror_accuracy;
            Label vote = votes_winner ? winner : opposite(winner);
            sum += vote == Label::A ? 1 : -1;
        }
        int margin = sum < 0 ? -sum : sum;
        bool correct;
        if (sum == 0) {
            correct = false;  // a tied jury predicts nothing
        } else {
            correct = (sum > 0 ? Label::A : Label::B) == winner;
        }
        buckets[margin].first += 1;
        buckets[margin].second += correct;
        ScoredOutcome o;
        o.confidence = calibrate_confidence(margin, N);
        o.correct = correct;
        collective.push_back(o);
        o.confidence = 0.9;
        baseline.push_back(o);
    }

    std::vector<double> xs;
    std::vector<double> ys;
    int decreases = 0;
    double prev_acc = -1.0;
    for (const auto& [margin, stat] : buckets) {
        double acc = static_cast<double>(stat.second) / stat.first;
        xs.push_back(margin);
        ys.push_back(acc);
        if (prev_acc >= 0.0 && acc < prev_acc) ++decreases;
        prev_acc = acc;
    }
    double rho = oracle::spearman(xs, ys);
    double ece_collective = ece(collective, 10, 0.5, 1.0);
    double ece_baseline = ece(baseline, 10, 0.5, 1.0);

    std::ostringstream diag;
    diag << "spearman=" << rho << ", adjacent decreases=" << decreases
         << ", ece collective=" << ece_collective << ", ece constant-0.9=" << ece_baseline;
    c.note(diag.str());

    c.check(rho >= 0.9, "bucket-accuracy Spearman below 0.9 (saturated buckets tie at "
                        "accuracy 1.0, collapsing rank variance)");
    c.check(ece_collective < ece_baseline,
            "collective ECE not below the constant-0.9 baseline (the linear confidence map "
            "understates the sharp binomial posterior of independent 0.8-accurate jurors)");
    double elapsed = seconds_since(start);
    c.note("runtime " + std::to_string(elapsed) + "s");
    c.check(elapsed < 30.0, "runtime exceeded 30s");
    return c;
}

// ---------------------------------------------------------------------------
// 6. End-to-end offline pipeline on the bundled fixture, via the CLI.
// ---------------------------------------------------------------------------
Criterion criterion6() {
    Criterion c{6, "offline `run all` on the bundled 50-pair fixture"};
    auto start = Clock::now();
#if defined(_WIN32)
    c.check(false, "posix shell required");
    return c;
#endif
    ::unsetenv("APE_API_KEY");

    fs::path fixture = fs::path(APE_SOURCE_DIR) / "data" / "synthetic50";
    json expected = json::parse(read_file(fixture / "expected.json"));

    fs::path base = fs::temp_directory_path() / "ape_acceptance6";
    fs::remove_all(base);
    fs::create_directories(base);

    auto run_all = [&](const std::string& run_dir) {
        std::string cmd = std::string(APE_CLI_PATH) + " all --config " +
                          (fixture / "config.json").string() + " --run-dir " + run_dir + " > " +
                          run_dir + "-stdout.txt 2> " + run_dir + "-stderr.txt";
        return std::system(cmd.c_str());
    };

    fs::path rd1 = base / "run1";
    int status = run_all(rd1.string());
    c.check(status == 0, "CLI exited with status " + std::to_string(status));
    if (status != 0) return c;

    RunDirectory dir(rd1);

    // (pre) the scripted vanilla judge errs on exactly 10 of the 50 pairs.
    {
        std::size_t correct = 0;
        std::size_t total = 0;
        for (const auto& which : {"train", "calibration", "test"}) {
            for (const auto& j : read_jsonl(dir.judgments_file(which))) {
                ++total;
                correct += j.at("correct").get<bool>();
            }
        }
        c.check(total == 50, "expected 50 vanilla judgments, saw " + std::to_string(total));
        double agreement = static_cast<double>(correct) / static_cast<double>(total);
        c.check(agreement == expected["initial_dataset_agreement"].get<double>(),
                "vanilla dataset agreement " + std::to_string(agreement) + " != 0.80");
    }

    // (a) exactly the designated failure cases, in train order.
    {
        auto failures = read_jsonl(dir.failures_file());
        auto want = expected["designated_failures"].get<std::vector<std::string>>();
        c.check(failures.size() == want.size(),
                "failure count " + std::to_string(failures.size()));
        for (std::size_t i = 0; i < failures.size() && i < want.size(); ++i) {
            if (failures[i]["pair"]["id"] != want[i]) {
                c.check(false, "failure " + std::to_string(i) + " is not " + want[i]);
                break;
            }
        }
    }

    // (b) at least 8 dimensions verified within the 10-attempt budget.
    {
        auto candidates = read_jsonl(dir.candidates_file());
        c.check(candidates.size() >= 8, "only " + std::to_string(candidates.size()) +
                                            " candidates verified");
        c.check(candidates.size() == expected["candidate_count"].get<std::size_t>(),
                "candidate count deviates from the fixture design");
        json calls = json::parse(read_file(dir.calls_file()));
        c.check(calls["support_calls"] == expected["support_calls"],
                "support-call budget deviates: " + calls["support_calls"].dump());
        c.check(calls["judge_calls"] == expected["judge_calls"],
                "judge-call count deviates: " + calls["judge_calls"].dump());
        c.check(calls["backend"] == "mock", "pipeline did not run on the scripted mock");
    }

    // (c) top-K selection reproduces the hand-computed ranking.
    {
        auto selected = load_dimension_store(dir.selected_file());
        auto want = expected["selected_ranking"].get<std::vector<std::string>>();
        auto rates = expected["coverage_rates"].get<std::vector<double>>();
        c.check(selected.size() == want.size(), "selected size != K");
        for (std::size_t i = 0; i < selected.size() && i < want.size(); ++i) {
            if (selected[i].id != want[i]) {
                c.check(false, "rank " + std::to_string(i) + " is " + selected[i].id +
                                   ", expected " + want[i]);
                break;
            }
            if (!selected[i].coverage_rate || *selected[i].coverage_rate != rates[i]) {
                c.check(false, "coverage rate mismatch at rank " + std::to_string(i));
                break;
            }
        }
        json meta = json::parse(read_file(dir.selection_meta_file()));
        c.check(meta["union_coverage"] == expected["union_coverage"],
                "union coverage " + meta["union_coverage"].dump());
    }

    // (d) calibrated gate and final agreement.
    {
        json calibration = json::parse(read_file(dir.calibration_file()));
        c.check(calibration["t_gate"] == expected["t_gate"],
                "calibrated gate " + calibration["t_gate"].dump());
        c.check(calibration["table"] == expected["calibration_table"],
                "calibration table deviates from the hand-computed sweep");
        json metrics = json::parse(read_file(dir.metrics_file()));
        double agreement = metrics["agreement"].get<double>();
        c.check(agreement >= 0.94, "final agreement " + std::to_string(agreement) + " < 0.94");
        c.check(agreement == expected["final_agreement"].get<double>(),
                "final agreement deviates from the fixture design");
        c.check(metrics["overrides"] == expected["override_count"], "override count deviates");
    }

    // Determinism: a second fresh run produces byte-identical artifacts.
    {
        fs::path rd2 = base / "run2";
        int status2 = run_all(rd2.string());
        c.check(status2 == 0, "second CLI run exited with " + std::to_string(status2));
        if (status2 == 0) {
            RunDirectory other(rd2);
            c.check(read_file(dir.decisions_file()) == read_file(other.decisions_file()),
                    "decisions.jsonl differs between runs");
            c.check(read_file(dir.metrics_file()) == read_file(other.metrics_file()),
                    "metrics.json differs between runs");
            c.check(read_file(dir.selected_file()) == read_file(other.selected_file()),
                    "selected.jsonl differs between runs");
        }
    }

    double elapsed = seconds_since(start);
    c.note("runtime " + std::to_string(elapsed) + "s (both runs)");
    c.check(elapsed < 60.0, "runtime exceeded 60s");
    return c;
}

// ---------------------------------------------------------------------------
// 7. Threshold boundary fidelity at T_gate = 4, all 16-juror splits.
// ---------------------------------------------------------------------------
Criterion criterion7() {
    Criterion c{7, "T_gate=4: margin 4 never overrides, margin 6 always (16 jurors)"};
    EnsembleConfig cfg{4, 16, AbstainPolicy::shrink_n};
    for (int a = 0; a <= 16; ++a) {
        std::vector<Vote> votes;
        for (int v = 0; v < 16; ++v) {
            votes.push_back({"d" + std::to_string(v),
                             v < a ? VoteValue::prefer_a : VoteValue::prefer_b});
        }
        auto jury = jury_confidence("p", votes);
        int margin = std::abs(2 * a - 16);
        if (jury.c_jury != margin) {
            c.check(false, "margin mismatch at split " + std::to_string(a));
            continue;
        }
        for (Label initial : {Label::A, Label::B}) {
            auto d = decide(initial, jury, cfg);
            Label jury_label = a > 8 ? Label::A : Label::B;
            bool disagrees = jury.c_jury > 0 && jury_label != initial;
            if (margin == 4) {
                c.check(!d.overridden && d.final_verdict == initial,
                        "margin 4 must never override (split " + std::to_string(a) + ")");
            }
            if (margin == 6 && disagrees) {
                c.check(d.overridden && d.final_verdict == jury_label,
                        "margin 6 must override a disagreeing initial (split " +
                            std::to_string(a) + ")");
            }
            if (margin <= 4) {
                c.check(d.final_verdict == initial,
                        "gate is strict: margin <= 4 must retain (split " + std::to_string(a) +
                            ")");
            }
        }
    }
    return c;
}

// ---------------------------------------------------------------------------
// 8. Constants fidelity against the golden config.
// ---------------------------------------------------------------------------
Criterion criterion8() {
    Criterion c{8, "default config carries the documented constants, golden file matches"};
    RunConfig cfg;
    c.check(cfg.retry_limit == 10, "retry_limit != 10");
    c.check(cfg.filter_threshold == 2.0, "filter_threshold != 2");
    c.check(cfg.k_dimensions == 16, "k_dimensions != 16");
    c.check(cfg.t_gate == 4, "t_gate != 4");
    c.check(cfg.judge_profile.temperature == 0.6, "judge temperature != 0.6");
    c.check(cfg.support_profile.temperature == 0.6, "support temperature != 0.6");
    c.check(cfg.split_sizes.train == 500 && cfg.split_sizes.calibration == 200 &&
                cfg.split_sizes.test == 1000,
            "split sizes != (500,200,1000)");

    fs::path golden = fs::path(APE_SOURCE_DIR) / "tests" / "golden" / "default_config.json";
    std::string want = read_file(golden);
    std::string got = to_json(cfg).dump(2) + "\n";
    c.check(got == want, "serialized default config deviates from the golden file");
    return c;
}

}  // namespace

int main() {
    std::vector<Criterion> results;
    results.push_back(criterion1());
    results.push_back(criterion2());
    results.push_back(criterion3());
    results.push_back(criterion4());
    results.push_back(criterion5());
    results.push_back(criterion6());
    results.push_back(criterion7());
    results.push_back(criterion8());

    int failures = 0;
    for (const auto& c : results) {
        std::cout << (c.pass ? "[PASS]" : "[FAIL]") << " criterion " << c.id << ": " << c.name
                  << "\n";
        for (const auto& n : c.notes) std::cout << "        " << n << "\n";
        failures += !c.pass;
    }
    std::cout << (failures == 0 ? "all criteria passed"
                                : std::to_string(failures) + " criterion(s) failed")
              << "\n";
    return failures == 0 ? 0 : 1;
}
