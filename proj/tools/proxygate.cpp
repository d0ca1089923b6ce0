// Command-line front end: train, eval, sweep, and check subcommands over a
// single JSON run config. Exit codes: 0 success, 1 validation error,
// 2 runtime divergence, 3 check failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "proxygate/proxygate.hpp"

namespace fs = std::filesystem;
using namespace proxygate;

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out_dir;
    std::string checkpoint_path;
    std::string grid_path;
    std::int64_t seed = -1;  // <0: use the config (or default) seed
    int workers = 1;
};

RunConfig load_and_seed(const CommonArgs& args) {
    RunConfig cfg = load_run_config(args.config_path);
    if (args.seed >= 0) {
        cfg.seed = std::uint64_t(args.seed);
        cfg.train.seed = cfg.seed;
    }
    return cfg;
}

void write_summary_csv(const std::string& path, const EvalSummary& summary, std::size_t n) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write summary " + path);
    char buf[128];
    std::snprintf(buf, sizeof(buf), "mean,stddev,n\n%.10g,%.10g,%zu\n", summary.mean,
                  summary.stddev, n);
    out << buf;
}

int cmd_train(const CommonArgs& args) {
    RunConfig cfg = load_and_seed(args);
    const Generator gen = Generator::from_json(cfg.generator_json);
    const PromptSet prompts = make_prompt_set(gen, cfg.prompts, cfg.seed);
    const FeatureExtractor features(gen.vocab().size, cfg.proxy.embed_dim, gen.hidden_dim(),
                                    cfg.seed);
    ProxyParams init = init_params(features.dim(), cfg.proxy.hidden_size, cfg.seed);

    TrainResult result = train(gen, make_reward_fn(cfg.oracle), cfg.skam, cfg.train, features,
                               std::move(init), prompts.train, args.workers);

    fs::create_directories(args.out_dir);
    RunManifest manifest = make_manifest("train", cfg);
    const std::string checkpoint = (fs::path(args.out_dir) / "checkpoint.json").string();
    const std::string metrics = (fs::path(args.out_dir) / "metrics.csv").string();
    save_params(result.params, checkpoint);
    write_metrics_csv(metrics, result.log);
    manifest.artifacts["checkpoint"] = checkpoint;
    manifest.artifacts["metrics_csv"] = metrics;
    write_manifest(manifest, (fs::path(args.out_dir) / "manifest.json").string());

    const double final_reward = result.log.empty() ? 0.0 : result.log.back().mean_reward;
    std::printf("run %s: %ld env steps, %ld episodes, final mean reward %.6g\n",
                manifest.run_id.c_str(), result.env_steps, result.episodes, final_reward);
    return 0;
}

int cmd_eval(const CommonArgs& args) {
    RunConfig cfg = load_and_seed(args);
    const Generator gen = Generator::from_json(cfg.generator_json);
    const int expected_d = gen.hidden_dim() + cfg.proxy.embed_dim + 4;
    const ProxyParams params =
        load_params(args.checkpoint_path, expected_d, cfg.proxy.hidden_size);
    // features must match the ones the checkpoint was trained with
    const FeatureExtractor features(gen.vocab().size, cfg.proxy.embed_dim, gen.hidden_dim(),
                                    params.seed);
    const PromptSet prompts = make_prompt_set(gen, cfg.prompts, cfg.seed);

    const EvalResult result =
        evaluate(gen, params, features, cfg.skam, make_reward_fn(cfg.oracle), prompts.test);

    fs::create_directories(args.out_dir);
    RunManifest manifest = make_manifest("eval", cfg);
    const std::string scores = (fs::path(args.out_dir) / "scores.jsonl").string();
    const std::string summary = (fs::path(args.out_dir) / "summary.csv").string();
    const std::string histogram = (fs::path(args.out_dir) / "histogram.csv").string();
    const std::string trace = (fs::path(args.out_dir) / "trace.jsonl").string();
    write_scores_jsonl(scores, prompts.test, result);
    write_summary_csv(summary, result.summary, result.scores.size());
    write_histogram_csv(histogram, result.summary.histogram);
    {
        std::ofstream out(trace);
        for (std::size_t i = 0; i < result.trajectories.size(); ++i)
            write_trace_jsonl(out, int(i), result.trajectories[i]);
    }
    manifest.artifacts["scores_jsonl"] = scores;
    manifest.artifacts["summary_csv"] = summary;
    manifest.artifacts["histogram_csv"] = histogram;
    manifest.artifacts["trace_jsonl"] = trace;
    write_manifest(manifest, (fs::path(args.out_dir) / "manifest.json").string());

    std::printf("mean score %.10g over %zu prompts\n", result.summary.mean,
                result.scores.size());
    return 0;
}

SweepGrid load_grid(const std::string& path, const RunConfig& cfg) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open grid " + path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("grid parse error: ") + e.what());
    }
    SweepGrid grid;
    grid.p_t_values = j.value("p_t", std::vector<double>{cfg.skam.p_t});
    grid.temperatures = j.value("temperature", std::vector<double>{cfg.skam.temperature});
    grid.budgets = j.value("budgets", std::vector<long>{0});
    for (double p : grid.p_t_values)
        if (p < 0.0 || p > 1.0) throw ConfigError("grid p_t: must be in [0, 1]");
    for (double t : grid.temperatures)
        if (!(t > 0.0)) throw ConfigError("grid temperature: must be > 0");
    for (long b : grid.budgets)
        if (b < 0) throw ConfigError("grid budgets: must be >= 0");
    return grid;
}

int cmd_sweep(const CommonArgs& args) {
    RunConfig cfg = load_and_seed(args);
    const SweepGrid grid = load_grid(args.grid_path, cfg);
    const Generator gen = Generator::from_json(cfg.generator_json);
    const PromptSet prompts = make_prompt_set(gen, cfg.prompts, cfg.seed);

    const std::vector<SweepCell> cells = sweep(gen, make_reward_fn(cfg.oracle), cfg.skam,
                                               cfg.train, cfg.proxy, prompts, grid, args.workers);

    fs::create_directories(args.out_dir);
    RunManifest manifest = make_manifest("sweep", cfg);
    const std::string csv = (fs::path(args.out_dir) / "sweep.csv").string();
    write_sweep_csv(csv, cells);
    manifest.artifacts["sweep_csv"] = csv;
    write_manifest(manifest, (fs::path(args.out_dir) / "manifest.json").string());

    for (const SweepCell& c : cells)
        std::printf("p_t=%g temperature=%g budget=%ld: mean %.6g (stderr %.3g, %ld episodes)\n",
                    c.p_t, c.temperature, c.budget, c.mean_score, c.stderr_score, c.episodes);
    return 0;
}

int cmd_check(const CommonArgs& args) {
    RunConfig cfg = load_and_seed(args);
    const Generator gen = Generator::from_json(cfg.generator_json);
    const FeatureExtractor features(gen.vocab().size, cfg.proxy.embed_dim, gen.hidden_dim(),
                                    cfg.seed);
    const int d = features.dim();

    std::vector<CheckReport> reports;
    reports.push_back(gradient_check(d, cfg.proxy.hidden_size, cfg.seed));
    reports.push_back(skam_mask_check(cfg.seed, 10000));
    {
        PromptSetConfig tiny = cfg.prompts;
        tiny.train_size = 1;
        tiny.test_size = 1;
        const PromptSet prompts = make_prompt_set(gen, tiny, cfg.seed);
        const ProxyParams params = init_params(d, cfg.proxy.hidden_size, cfg.seed);
        reports.push_back(mc_selection_check(gen, params, features, cfg.skam, prompts.test[0],
                                             50000, 0.015, cfg.seed));
    }

    bool all_pass = true;
    for (const CheckReport& r : reports) {
        std::printf("check %s: %s (%s)\n", r.name.c_str(), r.pass ? "PASS" : "FAIL",
                    r.detail.c_str());
        all_pass = all_pass && r.pass;
    }
    return all_pass ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Gated decoding with a trainable accept/reject proxy"};
    app.require_subcommand(1);
    CommonArgs args;

    auto add_common = [&](CLI::App* sub, bool needs_out) {
        sub->add_option("--config", args.config_path, "run config JSON")
            ->required()
            ->check(CLI::ExistingFile);
        if (needs_out) sub->add_option("--out", args.out_dir, "output directory")->required();
        sub->add_option("--seed", args.seed, "seed override (flag > config > 42)");
        sub->add_option("--workers", args.workers, "worker threads")
            ->envname("PROXYGATE_WORKERS")
            ->check(CLI::PositiveNumber);
    };

    CLI::App* train_cmd = app.add_subcommand("train", "train a proxy checkpoint");
    add_common(train_cmd, true);

    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
    add_common(eval_cmd, true);
    eval_cmd->add_option("--checkpoint", args.checkpoint_path, "proxy checkpoint JSON")
        ->required()
        ->check(CLI::ExistingFile);

    CLI::App* sweep_cmd = app.add_subcommand("sweep", "train/evaluate over a parameter grid");
    add_common(sweep_cmd, true);
    sweep_cmd->add_option("--grid", args.grid_path, "sweep grid JSON")
        ->required()
        ->check(CLI::ExistingFile);

    CLI::App* check_cmd = app.add_subcommand("check", "run self-diagnostics");
    add_common(check_cmd, false);

    CLI11_PARSE(app, argc, argv);

    try {
        if (app.got_subcommand(train_cmd)) return cmd_train(args);
        if (app.got_subcommand(eval_cmd)) return cmd_eval(args);
        if (app.got_subcommand(sweep_cmd)) return cmd_sweep(args);
        if (app.got_subcommand(check_cmd)) return cmd_check(args);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 1;
    } catch (const DivergenceError& e) {
        std::cerr << "divergence: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
