// rmabdfl: generate data, train and evaluate transition predictors, time
// them, check the layer's guarantees, and export plot-ready tables.

#include <iostream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "app/app.hpp"
#include "rmab/errors.hpp"
#include "rmab/io.hpp"

namespace {

using rmab::app::RunConfig;

// Flag values are staged here and copied onto the config only when given,
// so that flags override the config file, which overrides the defaults.
struct Flags {
    std::string dataset, out, results, kind, config, capacity;
    std::vector<std::string> losses;
    int trajectories = 0, epochs = 0, patience = 0, jobs = 0, states = 0, repeats = 0;
    int eval_trajectories = 0, cohorts = 0, arms = 0;
    std::vector<double> alphas, lrs;
    std::vector<std::uint64_t> seeds;
    double budget = 0, gamma = 0, epsilon = 0, eval_alpha = 0;
    std::vector<int> scaling;
};

void add_common(CLI::App* cmd, Flags& f, std::vector<CLI::Option*>& opts) {
    opts.push_back(cmd->add_option("--config", f.config, "JSON config file"));
    opts.push_back(cmd->add_option("--out", f.out, "output directory"));
    opts.push_back(cmd->add_option("--seed", f.seeds, "seed(s)")->delimiter(','));
    opts.push_back(cmd->add_option("--jobs", f.jobs, "parallel jobs")->check(CLI::PositiveNumber));
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Decision-focused learning of restless bandit transition models"};
    app.set_version_flag("--version", std::string(rmab::toolkit_version()));
    app.require_subcommand(1);
    app.fallthrough();

    RunConfig cfg;
    Flags f;
    bool overwrite = false;
    int verbose = 0;
    bool quiet = false;
    app.add_flag("--overwrite", overwrite, "replace existing result files");
    app.add_flag("-v,--verbose", verbose, "more output (repeatable)");
    app.add_flag("-q,--quiet", quiet, "only errors and verification lines");

    std::vector<CLI::Option*> opts;
    auto* gen = app.add_subcommand("generate", "write a synthetic dataset");
    auto* train = app.add_subcommand("train", "train predictors and evaluate them");
    auto* eval = app.add_subcommand("eval", "re-evaluate trained models in --out");
    auto* bench = app.add_subcommand("bench", "time training epochs and the layer");
    auto* verify = app.add_subcommand("verify", "check the layer's guarantees");
    auto* exp = app.add_subcommand("export", "write plot-ready CSV files");
    for (auto* cmd : {gen, train, eval, bench, verify, exp})
        add_common(cmd, f, opts);

    for (auto* cmd : {gen}) {
        opts.push_back(cmd->add_option("--states", f.states, "states per arm"));
        opts.push_back(cmd->add_option("--budget", f.budget, "interventions per step"));
        opts.push_back(cmd->add_option("--gamma", f.gamma, "discount factor"));
        opts.push_back(cmd->add_option("--cohorts", f.cohorts, "number of cohorts"));
        opts.push_back(cmd->add_option("--arms", f.arms, "arms per cohort"));
    }
    for (auto* cmd : {train, eval, bench, exp})
        opts.push_back(cmd->add_option("--dataset", f.dataset, "dataset file"));
    for (auto* cmd : {train, bench}) {
        opts.push_back(cmd->add_option("--loss", f.losses,
                                       "mse|nll|sim-dfl|dec-dfl|fast-dec-dfl")
                           ->delimiter(','));
        opts.push_back(cmd->add_option("--trajectories", f.trajectories,
                                       "SIM-DFL rollouts per step"));
        opts.push_back(cmd->add_option("--alpha", f.alphas, "layer regularization grid")
                           ->delimiter(','));
        opts.push_back(cmd->add_option("--lr", f.lrs, "learning-rate grid")->delimiter(','));
        opts.push_back(cmd->add_option("--capacity", f.capacity, "small|medium|large"));
    }
    for (auto* cmd : {train, eval, bench}) {
        opts.push_back(cmd->add_option("--epsilon", f.epsilon, "bisection tolerance"));
        opts.push_back(cmd->add_option("--eval-alpha", f.eval_alpha,
                                       "layer regularization for decomposed DQ"));
    }
    for (auto* cmd : {train, eval})
        opts.push_back(cmd->add_option("--eval-trajectories", f.eval_trajectories,
                                       "rollouts for joint DQ"));
    opts.push_back(train->add_option("--epochs", f.epochs, "maximum epochs"));
    opts.push_back(train->add_option("--patience", f.patience, "early-stopping patience"));
    opts.push_back(bench->add_option("--repeats", f.repeats, "timing repeats"));
    opts.push_back(bench->add_option("--scaling", f.scaling, "arm counts for layer timing")
                       ->delimiter(','));
    opts.push_back(exp->add_option("--results", f.results, "train output directory"));
    opts.push_back(exp->add_option("--kind", f.kind, "dq_table|time_table|dq_vs_epoch|wi_scatter")
                       ->required());

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : rmab::kExitInputError;
    }

    auto given = [&](const std::string& name) {
        for (CLI::Option* o : opts)
            if (o->check_lname(name) && o->count() > 0)
                return true;
        return false;
    };

    try {
        CLI::App* cmd = app.get_subcommands().front();
        cfg.command = cmd->get_name();
        if (given("config"))
            cfg.apply_json(rmab::read_file(f.config));
        if (given("dataset"))
            cfg.dataset = f.dataset;
        if (given("out"))
            cfg.out = f.out;
        if (given("results"))
            cfg.results = f.results;
        if (given("kind"))
            cfg.kind = f.kind;
        if (given("loss"))
            cfg.losses = f.losses;
        if (given("trajectories"))
            cfg.trajectories = f.trajectories;
        if (given("alpha"))
            cfg.alphas = f.alphas;
        if (given("lr"))
            cfg.learning_rates = f.lrs;
        if (given("epochs"))
            cfg.epochs = f.epochs;
        if (given("patience"))
            cfg.patience = f.patience;
        if (given("seed"))
            cfg.seeds = f.seeds;
        if (given("jobs"))
            cfg.jobs = f.jobs;
        if (given("capacity"))
            cfg.capacity = f.capacity;
        if (given("epsilon"))
            cfg.epsilon = f.epsilon;
        if (given("eval-alpha"))
            cfg.eval_alpha = f.eval_alpha;
        if (given("eval-trajectories"))
            cfg.eval_trajectories = f.eval_trajectories;
        if (given("repeats"))
            cfg.repeats = f.repeats;
        if (given("scaling"))
            cfg.scaling_arms = f.scaling;
        if (given("states"))
            cfg.manifest.states = f.states;
        if (given("budget"))
            cfg.manifest.budget = f.budget;
        if (given("gamma"))
            cfg.manifest.gamma = f.gamma;
        if (given("cohorts")) {
            // keep the 20/20/60 proportions
            cfg.manifest.cohorts = f.cohorts;
            cfg.manifest.train = f.cohorts / 5;
            cfg.manifest.validation = f.cohorts / 5;
            cfg.manifest.test = f.cohorts - 2 * (f.cohorts / 5);
        }
        if (given("arms"))
            cfg.manifest.arms_per_cohort = f.arms;
        if (overwrite)
            cfg.overwrite = true;
        if (quiet)
            cfg.verbosity = 0;
        cfg.verbosity += verbose;

        if (cfg.command == "generate")
            return rmab::app::cmd_generate(cfg, std::cout);
        if (cfg.command == "train")
            return rmab::app::cmd_train(cfg, std::cout);
        if (cfg.command == "eval")
            return rmab::app::cmd_eval(cfg, std::cout);
        if (cfg.command == "bench")
            return rmab::app::cmd_bench(cfg, std::cout);
        if (cfg.command == "verify")
            return rmab::app::cmd_verify(cfg, std::cout);
        return rmab::app::cmd_export(cfg, std::cout);
    } catch (const rmab::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.exit_code();
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return rmab::kExitInputError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return rmab::kExitNumericError;
    }
}
