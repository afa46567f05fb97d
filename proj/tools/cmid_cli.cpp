// SPDX-License-Identifier: Apache-2.0
// Command-line driver: training, sweeps and the evaluation protocols.
//
// Exit codes: 0 success, 1 configuration or usage error, 2 run aborted.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cmid/cli/config.hpp"
#include "cmid/cli/trainer.hpp"
#include "cmid/eval/attribution.hpp"
#include "cmid/eval/cmi.hpp"
#include "cmid/eval/colours.hpp"
#include "cmid/eval/probe.hpp"
#include "cmid/eval/shift.hpp"
#include "cmid/platform.hpp"

namespace fs = std::filesystem;
using namespace cmid;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitAbort = 2;

struct ConfigFlags {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string out_dir;
};

void add_config_flags(CLI::App* sub, ConfigFlags& f) {
    sub->add_option("-c,--config", f.config_path, "run-config file (key = value lines)");
    sub->add_option("-s,--set", f.overrides, "override a config key, e.g. --set cmid.alpha=0.5")->allow_extra_args(false);
    sub->add_option("-o,--out", f.out_dir, "output directory (overrides io.out_dir)");
}

cli::RunConfig build_config(const ConfigFlags& f) {
    cli::RunConfig cfg = f.config_path.empty() ? cli::RunConfig{} : cli::load_config(f.config_path);
    for (const auto& kv : f.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
        try {
            cli::set_key(cfg, cli::detail::trim(kv.substr(0, eq)), cli::detail::trim(kv.substr(eq + 1)));
        } catch (const ConfigError& e) {
            throw ConfigError(std::string("--set: ") + e.what());
        }
    }
    if (!f.out_dir.empty()) cfg.io.out_dir = f.out_dir;
    cfg.validate();
    return cfg;
}

// A trained run: one seed directory with its effective config.
struct LoadedRun {
    fs::path dir;
    cli::RunConfig cfg;
    std::uint64_t seed = 1;
    std::unique_ptr<cli::Learner> learner;
};

std::uint64_t run_seed(const fs::path& dir) {
    std::ifstream js(dir / "summary.json");
    if (js) {
        const auto j = nlohmann::json::parse(js, nullptr, false);
        if (!j.is_discarded() && j.contains("seed")) return j["seed"].get<std::uint64_t>();
    }
    const std::string name = dir.filename().string();
    if (name.rfind("seed_", 0) == 0) return std::stoull(name.substr(5));
    return 1;
}

LoadedRun load_run(const fs::path& dir, const std::string& checkpoint) {
    if (!fs::exists(dir / "config.txt")) throw ConfigError("no config.txt in run directory " + dir.string());
    LoadedRun r;
    r.dir = dir;
    r.cfg = cli::load_config((dir / "config.txt").string());
    r.seed = run_seed(dir);
    r.learner = std::make_unique<cli::Learner>(r.cfg, r.seed);
    r.learner->load(dir / checkpoint);
    return r;
}

// A directory holding config.txt is one run; otherwise every seed_* child is.
std::vector<fs::path> run_dirs(const fs::path& root) {
    if (fs::exists(root / "config.txt")) return {root};
    std::vector<fs::path> out;
    if (fs::is_directory(root)) {
        for (const auto& e : fs::directory_iterator(root)) {
            if (e.is_directory() && e.path().filename().string().rfind("seed_", 0) == 0 &&
                fs::exists(e.path() / "config.txt")) {
                out.push_back(e.path());
            }
        }
    }
    std::sort(out.begin(), out.end());
    if (out.empty()) throw ConfigError("no run found under " + root.string());
    return out;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
    fs::create_directories(path.parent_path());
    std::ofstream(path) << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------

int cmd_train(const ConfigFlags& f) {
    const auto cfg = build_config(f);
    bool aborted = false;
    for (auto seed : cfg.protocol.seeds) {
        const auto dir = cli::seed_dir(cfg.io.out_dir, seed);
        const auto res = cli::run_train(cfg, seed, dir);
        std::printf("seed %llu: %s, %ld steps, final eval return %.4f\n", static_cast<unsigned long long>(seed),
                    res.status.c_str(), res.steps_done, res.final_eval_return);
        if (res.zero_shot) std::printf("  zero-shot return %.4f\n", res.zero_shot->zero_shot_return());
        if (res.status != "ok") {
            std::fprintf(stderr, "seed %llu aborted: %s\n", static_cast<unsigned long long>(seed),
                         res.message.c_str());
            aborted = true;
        }
    }
    return aborted ? kExitAbort : kExitOk;
}

int cmd_sweep(const ConfigFlags& f) {
    const auto cfg = build_config(f);
    const auto rows = cli::run_sweep(cfg, cfg.io.out_dir);
    bool aborted = false;
    for (const auto& r : rows) {
        std::printf("%s=%s seed %llu: %s, final eval return %.4f\n", cfg.sweep.axis.c_str(), r.value.c_str(),
                    static_cast<unsigned long long>(r.seed), r.result.status.c_str(), r.result.final_eval_return);
        aborted = aborted || r.result.status != "ok";
    }
    std::printf("table: %s\n", (fs::path(cfg.io.out_dir) / "sweep.csv").string().c_str());
    return aborted ? kExitAbort : kExitOk;
}

int cmd_evaluate(const std::string& run, const std::string& ckpt, int episodes, int probe_episodes) {
    const auto r = load_run(run, ckpt);
    const auto policy = eval::agent_policy(*r.learner->agent);
    eval::ShiftEvalConfig scfg;
    scfg.phases = {envs::Phase::train, envs::Phase::reversed, envs::Phase::uncorrelated};
    scfg.rho = r.cfg.correlation.rho;
    scfg.greyscale = r.cfg.correlation.greyscale;
    scfg.episodes = episodes;
    scfg.cell_episodes = 0;
    scfg.stack = r.cfg.agent.stack;
    const auto rep = eval::shift_eval({{r.seed, policy}}, r.cfg.env, scfg);

    Rng probe_rng = substream(r.seed, "probe");
    const auto data = eval::collect_probe_data(&r.learner->agent->nets().encoder, r.cfg.env,
                                               {0.5, envs::Phase::uncorrelated, r.cfg.correlation.greyscale},
                                               probe_episodes, probe_rng);
    const auto probe = eval::latent_factor_probe(data.latents, data.factors, data.kinds);

    const fs::path out = r.dir / "evaluate";
    fs::create_directories(out);
    eval::write_episode_csv(out / "episodes.csv", rep.episodes);
    {
        std::ofstream os(out / "probe.csv");
        os << "feature";
        for (const auto& n : data.names) os << ',' << n;
        os << ",constant\n";
        for (std::size_t i = 0; i < probe.association.rows(); ++i) {
            os << i;
            for (std::size_t j = 0; j < probe.association.cols(); ++j) os << ',' << cli::detail::num(probe.association(i, j));
            os << ',' << (probe.constant_feature[i] ? 1 : 0) << '\n';
        }
    }
    nlohmann::json j;
    j["checkpoint"] = ckpt;
    j["seed"] = r.seed;
    for (const auto& ph : rep.phases) j["returns"][envs::to_string(ph.phase)] = ph.ret.mean;
    j["modularity"] = probe.modularity;
    write_json(out / "summary.json", j);
    for (const auto& ph : rep.phases) {
        std::printf("%-13s %.4f\n", envs::to_string(ph.phase).c_str(), ph.ret.mean);
    }
    std::printf("modularity    %.4f\nwritten to %s\n", probe.modularity, out.string().c_str());
    return kExitOk;
}

int cmd_shift_eval(const std::string& run, const std::string& ckpt, const std::string& shift, int episodes,
                   int cell_episodes) {
    const auto dirs = run_dirs(run);
    std::vector<LoadedRun> runs;
    for (const auto& d : dirs) runs.push_back(load_run(d, ckpt));
    const auto& cfg = runs.front().cfg;
    std::vector<std::pair<std::uint64_t, eval::Policy>> seeded;
    for (const auto& r : runs) seeded.emplace_back(r.seed, eval::agent_policy(*r.learner->agent));
    auto scfg = cli::shift_eval_config(cfg);
    const auto s = shift.empty() ? (cfg.protocol.shift == cli::Shift::none ? cli::Shift::reversed : cfg.protocol.shift)
                                 : cli::parse_shift(shift);
    if (s == cli::Shift::none) throw ConfigError("shift-eval needs a shift (reversed|uncorrelated)");
    scfg.phases = {cli::shifted_phase(s), cfg.correlation.phase};
    if (episodes > 0) scfg.episodes = episodes;
    if (cell_episodes >= 0) scfg.cell_episodes = cell_episodes;
    const auto rep = eval::shift_eval(seeded, cfg.env, scfg);
    const fs::path out = fs::path(run) / "shift_eval";
    eval::write_shift_report(out, rep);
    for (const auto& ph : rep.phases) {
        std::printf("%-13s %.4f ± %.4f over %zu seeds\n", envs::to_string(ph.phase).c_str(), ph.ret.mean,
                    ph.ret.se, ph.seed_means.size());
    }
    for (const auto& c : rep.cells) {
        std::printf("  %s-%s %.4f\n", envs::to_string(c.variant).c_str(), envs::to_string(c.colour).c_str(),
                    c.ret.mean);
    }
    std::printf("written to %s\n", out.string().c_str());
    return kExitOk;
}

int cmd_colours(const std::string& run, const std::string& ckpt, int grid, int episodes) {
    const auto r = load_run(run, ckpt);
    const auto rep = eval::colour_robustness(eval::agent_policy(*r.learner->agent), r.cfg.env,
                                             r.cfg.correlation.greyscale, grid, episodes, r.seed, r.cfg.agent.stack);
    eval::write_colour_csv(r.dir / "colours.csv", rep);
    write_json(r.dir / "colours.json", {{"grid", grid},
                                        {"episodes", episodes},
                                        {"colours", rep.colours.size()},
                                        {"worst", rep.worst},
                                        {"best", rep.best},
                                        {"average", rep.average}});
    std::printf("%zu colours: worst %.4f best %.4f average %.4f\n", rep.colours.size(), rep.worst, rep.best,
                rep.average);
    return kExitOk;
}

int cmd_attribute(const std::string& run, const std::string& ckpt, int steps) {
    const auto r = load_run(run, ckpt);
    // first frame of an uncorrelated-phase episode from the run's own stream
    envs::PointMassEnv env(r.cfg.env, {0.5, envs::Phase::uncorrelated, r.cfg.correlation.greyscale},
                           substream(r.seed, "attribute"));
    const auto x = env.reset().values;
    const std::vector<double> black(x.size(), 0.0);
    const auto& encoder = r.learner->agent->nets().encoder;
    const fs::path out = r.dir / "attributions";
    fs::create_directories(out);
    nlohmann::json j;
    j["steps"] = steps;
    j["baseline"] = "black";
    double worst = 0.0;
    for (std::size_t n = 0; n < encoder.output_width(); ++n) {
        const auto m = eval::integrated_gradients(encoder, n, x, black, steps);
        eval::write_attribution_csv(out / ("feature_" + std::to_string(n) + ".csv"), m);
        j["residual"].push_back(m.residual);
        worst = std::max(worst, std::abs(m.residual));
    }
    {
        std::ofstream os(out / "input.csv");
        for (std::size_t i = 0; i < x.size(); ++i) os << (i ? "," : "") << cli::detail::num(x[i]);
        os << '\n';
    }
    j["max_abs_residual"] = worst;
    write_json(out / "summary.json", j);
    std::printf("%zu attribution files, max completeness residual %.3g\n", encoder.output_width(), worst);
    return kExitOk;
}

// Columns of a headed CSV picked by name.
nn::Tensor csv_columns(const std::map<std::string, std::vector<double>>& table, const std::string& list,
                       std::size_t rows) {
    const auto names = cli::detail::split_list(list);
    nn::Tensor t = nn::Tensor::matrix(rows, names.size());
    for (std::size_t c = 0; c < names.size(); ++c) {
        auto it = table.find(names[c]);
        if (it == table.end()) throw ConfigError("estimate-cmi: no column '" + names[c] + "'");
        for (std::size_t r = 0; r < rows; ++r) t(r, c) = it->second[r];
    }
    return t;
}

int cmd_estimate_cmi(const std::string& data, const std::string& xs, const std::string& ys, const std::string& zs,
                     const eval::CmiConfig& ccfg, const std::string& out) {
    std::ifstream is(data);
    if (!is) throw ConfigError("cannot read " + data);
    std::string line;
    std::getline(is, line);
    const auto header = cli::detail::split_list(line);
    std::map<std::string, std::vector<double>> table;
    std::size_t rows = 0;
    while (std::getline(is, line)) {
        if (cli::detail::trim(line).empty()) continue;
        const auto cells = cli::detail::split_list(line);
        if (cells.size() != header.size()) {
            throw ConfigError(data + ":" + std::to_string(rows + 2) + ": expected " + std::to_string(header.size()) +
                              " fields");
        }
        for (std::size_t c = 0; c < cells.size(); ++c) table[header[c]].push_back(cli::detail::to_double(header[c], cells[c]));
        ++rows;
    }
    const auto x = csv_columns(table, xs, rows), y = csv_columns(table, ys, rows);
    const auto z = zs.empty() ? nn::Tensor::matrix(rows, 0) : csv_columns(table, zs, rows);
    const auto est = eval::estimate_cmi(x, y, z, ccfg);
    nlohmann::json j{{"estimate_nats", est.estimate}, {"accuracy", est.accuracy}, {"samples", est.samples},
                     {"k", est.k},                    {"degenerate", est.degenerate}};
    if (!est.note.empty()) j["note"] = est.note;
    if (!out.empty()) write_json(out, j);
    std::printf("%s\n", j.dump(2).c_str());
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    cmid::tune_allocator();
    CLI::App app{"Conditional mutual information minimisation for RL representations"};
    app.require_subcommand(1);

    ConfigFlags train_flags, sweep_flags, show_flags;
    add_config_flags(app.add_subcommand("train", "train one run per configured seed"), train_flags);
    add_config_flags(app.add_subcommand("sweep", "train one run per sweep value and seed"), sweep_flags);
    add_config_flags(app.add_subcommand("show-config", "print the effective configuration"), show_flags);

    std::string run, ckpt = "final.ckpt", shift;
    int episodes = 10, probe_episodes = 40, cell_episodes = -1, grid = 6, steps = 256;
    auto* evaluate = app.add_subcommand("evaluate", "returns on every phase and a latent-factor probe");
    evaluate->add_option("-r,--run", run, "seed directory of a finished run")->required();
    evaluate->add_option("--checkpoint", ckpt, "checkpoint file inside the run directory");
    evaluate->add_option("--episodes", episodes, "episodes per phase");
    evaluate->add_option("--probe-episodes", probe_episodes, "random-action episodes for the probe");

    auto* shift_eval = app.add_subcommand("shift-eval", "zero-shot returns under a correlation shift");
    shift_eval->add_option("-r,--run", run, "seed directory, or a directory of seed_* runs")->required();
    shift_eval->add_option("--checkpoint", ckpt, "checkpoint file inside each run directory");
    shift_eval->add_option("--shift", shift, "reversed | uncorrelated (default: the run's shift)");
    shift_eval->add_option("--episodes", episodes, "episodes per seed and phase");
    shift_eval->add_option("--cell-episodes", cell_episodes, "episodes per seed and variant×colour cell");

    auto* colours = app.add_subcommand("colours", "returns over an RGB colour grid");
    colours->add_option("-r,--run", run, "seed directory of a finished run")->required();
    colours->add_option("--checkpoint", ckpt, "checkpoint file inside the run directory");
    colours->add_option("--grid", grid, "levels per channel");
    colours->add_option("--episodes", episodes, "episodes per colour");

    auto* attribute = app.add_subcommand("attribute", "integrated-gradients maps for every latent feature");
    attribute->add_option("-r,--run", run, "seed directory of a finished run")->required();
    attribute->add_option("--checkpoint", ckpt, "checkpoint file inside the run directory");
    attribute->add_option("--steps", steps, "path steps (at least 16)");

    std::string data, xs, ys, zs, cmi_out;
    eval::CmiConfig ccfg;
    auto* cmi = app.add_subcommand("estimate-cmi", "classifier estimate of I(X;Y|Z) from a CSV");
    cmi->add_option("--data", data, "CSV file with a header row")->required();
    cmi->add_option("--x", xs, "comma-separated X columns")->required();
    cmi->add_option("--y", ys, "comma-separated Y columns")->required();
    cmi->add_option("--z", zs, "comma-separated Z columns (empty: unconditional)");
    cmi->add_option("--k", ccfg.k, "neighbours for the permutation");
    cmi->add_option("--hidden", ccfg.hidden, "classifier width");
    cmi->add_option("--epochs", ccfg.epochs, "training epochs");
    cmi->add_option("--lr", ccfg.lr, "learning rate");
    cmi->add_option("--holdout", ccfg.holdout, "held-out fraction");
    cmi->add_option("--seed", ccfg.seed, "random seed");
    cmi->add_option("-o,--out", cmi_out, "JSON output file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    try {
        const auto* sub = app.get_subcommands().front();
        const std::string name = sub->get_name();
        if (name == "train") return cmd_train(train_flags);
        if (name == "sweep") return cmd_sweep(sweep_flags);
        if (name == "show-config") {
            std::fputs(cli::serialise(build_config(show_flags)).c_str(), stdout);
            return kExitOk;
        }
        if (name == "evaluate") return cmd_evaluate(run, ckpt, episodes, probe_episodes);
        if (name == "shift-eval") return cmd_shift_eval(run, ckpt, shift, episodes, cell_episodes);
        if (name == "colours") return cmd_colours(run, ckpt, grid, episodes);
        if (name == "attribute") return cmd_attribute(run, ckpt, steps);
        if (name == "estimate-cmi") return cmd_estimate_cmi(data, xs, ys, zs, ccfg, cmi_out);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitConfig;
    } catch (const UsageError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return kExitConfig;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "aborted: %s\n", e.what());
        return kExitAbort;
    }
    return kExitConfig;
}
