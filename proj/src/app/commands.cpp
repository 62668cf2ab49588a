#include <algorithm>
#include <cstdlib>
#include <ostream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "app/app.hpp"
#include "rmab/errors.hpp"
#include "rmab/io.hpp"

namespace rmab::app {

namespace {

using json = nlohmann::json;

template <typename T>
void read_field(const json& j, const char* key, T& target) {
    if (!j.contains(key))
        return;
    try {
        target = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw InputError(fmt::format("config field \"{}\": {}", key, e.what()));
    }
}

fs::path output_dir(const RunConfig& cfg) {
    return cfg.out.empty() ? default_output_root() : cfg.out;
}

void check_writable(const fs::path& path, bool overwrite) {
    if (!overwrite && fs::exists(path))
        throw InputError(fmt::format("{} exists; pass --overwrite to replace it", path.string()));
}

std::string loss_label(LossKind kind, int trajectories) {
    return kind == LossKind::SimDFL ? fmt::format("sim-dfl-{}", trajectories) : loss_name(kind);
}

// config.json written next to every command's outputs
std::string provenance_json(const RunConfig& cfg, const std::string& manifest_hash) {
    json j = json::parse(cfg.to_json());
    j["manifest_hash"] = manifest_hash;
    j["toolkit_version"] = toolkit_version();
    return j.dump(2) + "\n";
}

std::vector<SavedModel> load_models(const fs::path& dir) {
    if (!fs::is_directory(dir))
        throw InputError(fmt::format("{} is not a results directory", dir.string()));
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        if (entry.is_regular_file() && name.rfind("model_", 0) == 0 &&
            entry.path().extension() == ".json")
            files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    std::vector<SavedModel> out;
    for (const fs::path& f : files)
        out.push_back(parse_model(read_file(f)));
    if (out.empty())
        throw InputError(fmt::format("no model files in {}", dir.string()));
    return out;
}

// Validation and test rows for one trained model.
std::vector<ResultRow> evaluate_rows(const SavedModel& saved, const Dataset& data,
                                     const std::string& dataset, const RunConfig& cfg) {
    std::vector<ResultRow> rows;
    EvalOptions eo;
    eo.trajectories = cfg.eval_trajectories;
    eo.alpha = cfg.eval_alpha;
    eo.epsilon = cfg.epsilon;
    eo.seed = saved.seed;
    for (const auto& [split, ids] : {std::pair{"validation", &data.validation},
                                     std::pair{"test", &data.test}}) {
        if (ids->empty())
            continue;
        const EvaluationResult ev = evaluate_dq(saved.model, select_cohorts(data, *ids), eo);
        ResultRow r;
        r.loss = saved.loss;
        r.dataset = dataset;
        r.seed = saved.seed;
        r.split = split;
        r.normalized_joint_dq = ev.total.normalized_joint_dq;
        r.normalized_decomposed_dq = ev.total.normalized_decomposed_dq;
        r.seconds_per_epoch = saved.seconds_per_epoch;
        r.manifest_hash = saved.manifest_hash;
        r.version = saved.version;
        rows.push_back(std::move(r));
    }
    return rows;
}

fs::path dataset_from(const RunConfig& cfg, const fs::path& results_dir) {
    if (!cfg.dataset.empty())
        return cfg.dataset;
    const fs::path config = results_dir / "config.json";
    if (fs::exists(config)) {
        const json j = json::parse(read_file(config), nullptr, false);
        if (!j.is_discarded() && j.contains("dataset") && j["dataset"].is_string() &&
            !j["dataset"].get<std::string>().empty())
            return j["dataset"].get<std::string>();
    }
    throw InputError("--dataset is required");
}

} // namespace

std::string RunConfig::to_json() const {
    json j;
    j["command"] = command;
    j["dataset"] = dataset.string();
    j["out"] = out.string();
    j["results"] = results.string();
    j["kind"] = kind;
    j["losses"] = losses;
    j["trajectories"] = trajectories;
    j["alphas"] = alphas;
    j["learning_rates"] = learning_rates;
    j["epochs"] = epochs;
    j["patience"] = patience;
    j["seeds"] = seeds;
    j["jobs"] = jobs;
    j["capacity"] = capacity;
    j["epsilon"] = epsilon;
    j["eval_alpha"] = eval_alpha;
    j["eval_trajectories"] = eval_trajectories;
    j["overwrite"] = overwrite;
    j["verbosity"] = verbosity;
    j["repeats"] = repeats;
    j["scaling_arms"] = scaling_arms;
    j["cohorts"] = manifest.cohorts;
    j["arms"] = manifest.arms_per_cohort;
    j["states"] = manifest.states;
    j["budget"] = manifest.budget;
    j["gamma"] = manifest.gamma;
    j["feature_dim"] = manifest.feature_dim;
    j["splits"] = {manifest.train, manifest.validation, manifest.test};
    return j.dump(2);
}

void RunConfig::apply_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw InputError(fmt::format("config file is not valid JSON: {}", e.what()));
    }
    if (!j.is_object())
        throw InputError("config file must hold a JSON object");
    static const std::vector<std::string> known = {
        "command", "dataset", "out", "results", "kind", "losses", "trajectories", "alphas",
        "learning_rates", "epochs", "patience", "seeds", "jobs", "capacity", "epsilon",
        "eval_alpha", "eval_trajectories", "overwrite", "verbosity", "repeats", "scaling_arms",
        "cohorts", "arms", "states", "budget", "gamma", "feature_dim", "splits",
        "manifest_hash", "toolkit_version"};
    for (const auto& [key, value] : j.items())
        if (std::find(known.begin(), known.end(), key) == known.end())
            throw InputError(fmt::format("unknown config field \"{}\"", key));

    std::string path;
    if (j.contains("dataset")) {
        read_field(j, "dataset", path);
        dataset = path;
    }
    if (j.contains("out")) {
        read_field(j, "out", path);
        out = path;
    }
    if (j.contains("results")) {
        read_field(j, "results", path);
        results = path;
    }
    read_field(j, "kind", kind);
    read_field(j, "losses", losses);
    read_field(j, "trajectories", trajectories);
    read_field(j, "alphas", alphas);
    read_field(j, "learning_rates", learning_rates);
    read_field(j, "epochs", epochs);
    read_field(j, "patience", patience);
    read_field(j, "seeds", seeds);
    read_field(j, "jobs", jobs);
    read_field(j, "capacity", capacity);
    read_field(j, "epsilon", epsilon);
    read_field(j, "eval_alpha", eval_alpha);
    read_field(j, "eval_trajectories", eval_trajectories);
    read_field(j, "overwrite", overwrite);
    read_field(j, "verbosity", verbosity);
    read_field(j, "repeats", repeats);
    read_field(j, "scaling_arms", scaling_arms);
    read_field(j, "cohorts", manifest.cohorts);
    read_field(j, "arms", manifest.arms_per_cohort);
    read_field(j, "states", manifest.states);
    read_field(j, "budget", manifest.budget);
    read_field(j, "gamma", manifest.gamma);
    read_field(j, "feature_dim", manifest.feature_dim);
    if (j.contains("splits")) {
        std::vector<int> s;
        read_field(j, "splits", s);
        if (s.size() != 3)
            throw InputError("config splits must have three entries");
        manifest.train = s[0];
        manifest.validation = s[1];
        manifest.test = s[2];
    }
}

fs::path default_output_root() {
    const char* env = std::getenv("RMABDFL_OUTPUT_ROOT");
    return env && *env ? fs::path(env) : fs::path("results");
}

std::string dataset_name(const fs::path& path) { return path.stem().string(); }

std::string serialize_model(const SavedModel& saved) {
    const ModelSpec& spec = saved.model.spec();
    json j;
    j["format"] = "rmab-model";
    j["version"] = 1;
    j["arch"] = spec.arch == Architecture::Linear ? "linear" : "mlp";
    j["layers"] = spec.layers;
    j["hidden_dim"] = spec.hidden_dim;
    j["input_dim"] = spec.input_dim;
    j["num_states"] = spec.num_states;
    j["loss"] = saved.loss;
    j["seed"] = saved.seed;
    j["learning_rate"] = saved.learning_rate;
    j["alpha"] = saved.alpha;
    j["best_epoch"] = saved.best_epoch;
    j["seconds_per_epoch"] = saved.seconds_per_epoch;
    j["manifest_hash"] = saved.manifest_hash;
    j["toolkit_version"] = saved.version;
    const Eigen::VectorXd& theta = saved.model.theta();
    j["theta"] = std::vector<double>(theta.data(), theta.data() + theta.size());
    return j.dump() + "\n";
}

SavedModel parse_model(const std::string& text) {
    SavedModel s;
    try {
        const json j = json::parse(text);
        if (j.at("format").get<std::string>() != "rmab-model" || j.at("version").get<int>() != 1)
            throw InputError("not a version-1 rmab model file");
        ModelSpec spec;
        const std::string arch = j.at("arch").get<std::string>();
        if (arch != "linear" && arch != "mlp")
            throw InputError(fmt::format("unknown model architecture '{}'", arch));
        spec.arch = arch == "linear" ? Architecture::Linear : Architecture::MLP;
        spec.layers = j.at("layers").get<int>();
        spec.hidden_dim = j.at("hidden_dim").get<int>();
        spec.input_dim = j.at("input_dim").get<int>();
        spec.num_states = j.at("num_states").get<int>();
        spec.validate();
        const auto theta = j.at("theta").get<std::vector<double>>();
        if (theta.size() != spec.num_parameters())
            throw InputError(fmt::format("model has {} parameters, spec expects {}",
                                         theta.size(), spec.num_parameters()));
        s.model = ModelParams(spec);
        s.model.theta() = Eigen::Map<const Eigen::VectorXd>(theta.data(),
                                                            static_cast<Eigen::Index>(theta.size()));
        s.loss = j.at("loss").get<std::string>();
        s.seed = j.at("seed").get<std::uint64_t>();
        s.learning_rate = j.at("learning_rate").get<double>();
        s.alpha = j.at("alpha").get<double>();
        s.best_epoch = j.at("best_epoch").get<int>();
        s.seconds_per_epoch = j.at("seconds_per_epoch").get<double>();
        s.manifest_hash = j.at("manifest_hash").get<std::string>();
        s.version = j.at("toolkit_version").get<std::string>();
    } catch (const json::exception& e) {
        throw InputError(fmt::format("malformed model file: {}", e.what()));
    }
    return s;
}

int cmd_generate(const RunConfig& cfg, std::ostream& log) {
    DatasetManifest m = cfg.manifest;
    m.seed = cfg.seeds.empty() ? 0 : cfg.seeds.front();
    m.validate();
    const fs::path dir = output_dir(cfg);
    const fs::path file = dir / fmt::format("synthetic-s{}-seed{}.jsonl", m.states, m.seed);
    check_writable(file, cfg.overwrite);
    const Dataset data = generate_synthetic(m, cfg.jobs);
    write_file_atomic(file, serialize_dataset(data), cfg.overwrite);
    RunConfig record = cfg;
    record.dataset = file;
    write_file_atomic(dir / "config.json", provenance_json(record, manifest_hash(m)), true);
    if (cfg.verbosity > 0)
        log << fmt::format("wrote {} ({} cohorts x {} arms, manifest {})\n", file.string(),
                           m.cohorts, m.arms_per_cohort, manifest_hash(m));
    return kExitOk;
}

int cmd_train(const RunConfig& cfg, std::ostream& log) {
    if (cfg.dataset.empty())
        throw InputError("--dataset is required");
    if (cfg.seeds.empty() || cfg.losses.empty())
        throw InputError("at least one seed and one loss are required");
    const Dataset data = read_dataset(cfg.dataset);
    const std::string hash = manifest_hash(data.manifest);
    const std::string name = dataset_name(cfg.dataset);
    const fs::path dir = output_dir(cfg);
    check_writable(dir / "results.csv", cfg.overwrite);

    std::vector<LossKind> kinds;
    for (const std::string& l : cfg.losses)
        kinds.push_back(parse_loss(l));

    ResultsTable table;
    for (LossKind kind : kinds) {
        for (std::uint64_t seed : cfg.seeds) {
            TrainingConfig tc;
            tc.loss = kind;
            tc.epochs = cfg.epochs;
            tc.patience = cfg.patience;
            tc.seed = seed;
            tc.capacity = cfg.capacity;
            tc.epsilon = cfg.epsilon;
            tc.eval_alpha = cfg.eval_alpha;
            tc.sim.trajectories = cfg.trajectories;
            const GridResult grid =
                train_grid(tc, cfg.learning_rates, cfg.alphas, data, cfg.jobs);
            const TrainResult& best = grid.runs[grid.best];

            SavedModel saved;
            saved.model = best.model;
            saved.loss = loss_label(kind, cfg.trajectories);
            saved.seed = seed;
            saved.learning_rate = best.config.learning_rate;
            saved.alpha = best.config.reg.alpha;
            saved.best_epoch = best.best_epoch;
            double secs = 0.0;
            for (const EpochRecord& e : best.log)
                secs += e.seconds;
            saved.seconds_per_epoch = best.log.empty() ? 0.0 : secs / best.log.size();
            saved.manifest_hash = hash;
            saved.version = toolkit_version();

            const std::string stem = fmt::format("{}_seed{}", saved.loss, seed);
            write_file_atomic(dir / fmt::format("model_{}.json", stem), serialize_model(saved),
                              cfg.overwrite);
            write_file_atomic(dir / fmt::format("log_{}.jsonl", stem), training_log_jsonl(best),
                              cfg.overwrite);
            for (ResultRow& r : evaluate_rows(saved, data, name, cfg)) {
                if (cfg.verbosity > 0)
                    log << fmt::format("{} seed {} {}: joint {:.4f} decomposed {:.4f} "
                                       "(lr {:g}, alpha {:g}, best epoch {}, {:.4f} s/epoch)\n",
                                       r.loss, seed, r.split, r.normalized_joint_dq,
                                       r.normalized_decomposed_dq, saved.learning_rate,
                                       saved.alpha, saved.best_epoch, saved.seconds_per_epoch);
                table.rows.push_back(std::move(r));
            }
        }
    }
    write_file_atomic(dir / "results.csv", table.to_csv(), cfg.overwrite);
    write_file_atomic(dir / "config.json", provenance_json(cfg, hash), true);
    return kExitOk;
}

int cmd_eval(const RunConfig& cfg, std::ostream& log) {
    const fs::path dir = output_dir(cfg);
    const fs::path dataset = dataset_from(cfg, dir);
    const Dataset data = read_dataset(dataset);
    const std::string hash = manifest_hash(data.manifest);
    check_writable(dir / "eval.csv", cfg.overwrite);
    ResultsTable table;
    for (const SavedModel& saved : load_models(dir)) {
        if (saved.manifest_hash != hash)
            throw InputError(fmt::format("model {} seed {} was trained on manifest {}, not {}",
                                         saved.loss, saved.seed, saved.manifest_hash, hash));
        for (ResultRow& r : evaluate_rows(saved, data, dataset_name(dataset), cfg)) {
            if (cfg.verbosity > 0)
                log << fmt::format("{} seed {} {}: joint {:.4f} decomposed {:.4f}\n", r.loss,
                                   r.seed, r.split, r.normalized_joint_dq,
                                   r.normalized_decomposed_dq);
            table.rows.push_back(std::move(r));
        }
    }
    write_file_atomic(dir / "eval.csv", table.to_csv(), cfg.overwrite);
    return kExitOk;
}

int cmd_bench(const RunConfig& cfg, std::ostream& log) {
    if (cfg.dataset.empty())
        throw InputError("--dataset is required");
    const Dataset data = read_dataset(cfg.dataset);
    const std::string hash = manifest_hash(data.manifest);
    const std::uint64_t seed = cfg.seeds.empty() ? 0 : cfg.seeds.front();
    const fs::path dir = output_dir(cfg);
    check_writable(dir / "bench.csv", cfg.overwrite);
    check_writable(dir / "bench_scaling.csv", cfg.overwrite);

    std::string epochs = "loss,dataset,repeats,seconds_per_epoch_mean,seconds_per_epoch_sem,"
                         "seconds_per_epoch_median,seed,manifest_hash,version\n";
    for (const std::string& l : cfg.losses) {
        TrainingConfig tc;
        tc.loss = parse_loss(l);
        tc.seed = seed;
        tc.capacity = cfg.capacity;
        tc.epsilon = cfg.epsilon;
        tc.eval_alpha = cfg.eval_alpha;
        tc.learning_rate = cfg.learning_rates.empty() ? 1e-2 : cfg.learning_rates.front();
        tc.reg.alpha = cfg.alphas.empty() ? 1.0 : cfg.alphas.front();
        tc.sim.trajectories = cfg.trajectories;
        const EpochTiming t = time_epoch(tc, data, cfg.repeats);
        const std::string label = loss_label(tc.loss, cfg.trajectories);
        if (cfg.verbosity > 0)
            log << fmt::format("{}: {:.6f} +- {:.6f} s/epoch (median {:.6f}, n = {})\n", label,
                               t.seconds.mean, t.seconds.sem, t.median, t.seconds.n);
        epochs += fmt::format("{},{},{},{:.9g},{:.9g},{:.9g},{},{},{}\n", label,
                              dataset_name(cfg.dataset), t.seconds.n, t.seconds.mean,
                              t.seconds.sem, t.median, seed, hash, toolkit_version());
    }

    std::string scaling =
        "arms,states,forward_seconds,backward_seconds,seed,manifest_hash,version\n";
    for (int n : cfg.scaling_arms) {
        const ScalingTiming s = time_layer(n, cfg.repeats, seed);
        if (cfg.verbosity > 0)
            log << fmt::format("layer N={}: forward {:.3e} s, backward {:.3e} s\n", n,
                               s.forward_seconds, s.backward_seconds);
        scaling += fmt::format("{},2,{:.9g},{:.9g},{},{},{}\n", n, s.forward_seconds,
                               s.backward_seconds, seed, hash, toolkit_version());
    }
    write_file_atomic(dir / "bench.csv", epochs, cfg.overwrite);
    write_file_atomic(dir / "bench_scaling.csv", scaling, cfg.overwrite);
    return kExitOk;
}

int cmd_verify(const RunConfig& cfg, std::ostream& log) {
    const std::uint64_t seed = cfg.seeds.empty() ? 0 : cfg.seeds.front();
    const fs::path file = output_dir(cfg) / "verify.csv";
    check_writable(file, cfg.overwrite);
    std::string csv = "claim,passed,quantity,value,seconds,seed,version\n";
    bool all = true;
    for (const ClaimResult& c : run_verification(seed)) {
        all = all && c.passed;
        std::string values;
        for (const auto& [key, value] : c.measured) {
            values += fmt::format(" {}={:.6g}", key, value);
            csv += fmt::format("{},{},{},{:.17g},{:.3f},{},{}\n", c.name, c.passed ? 1 : 0, key,
                               value, c.seconds, seed, toolkit_version());
        }
        log << fmt::format("[{}] {}:{} ({:.2f} s)\n", c.passed ? "PASS" : "FAIL", c.name, values,
                           c.seconds);
        if (cfg.verbosity > 1)
            log << "       " << c.detail << "\n";
    }
    write_file_atomic(file, csv, cfg.overwrite);
    return all ? kExitOk : kExitVerificationFailed;
}

int cmd_export(const RunConfig& cfg, std::ostream& log) {
    const fs::path in = cfg.results.empty() ? output_dir(cfg) : cfg.results;
    const fs::path dir = cfg.out.empty() ? in : cfg.out;
    auto emit = [&](const fs::path& file, const std::string& text) {
        write_file_atomic(file, text, cfg.overwrite);
        if (cfg.verbosity > 0)
            log << "wrote " << file.string() << "\n";
    };
    if (cfg.kind == "dq_table" || cfg.kind == "time_table") {
        const ResultsTable table = ResultsTable::from_csv(read_file(in / "results.csv"));
        const bool dq = cfg.kind == "dq_table";
        const fs::path file = dir / (cfg.kind + ".csv");
        check_writable(file, cfg.overwrite);
        emit(file, dq ? dq_table_csv(table) : time_table_csv(table));
    } else if (cfg.kind == "dq_vs_epoch") {
        std::string hash;
        const fs::path config = in / "config.json";
        if (fs::exists(config)) {
            const json j = json::parse(read_file(config), nullptr, false);
            if (!j.is_discarded() && j.contains("manifest_hash"))
                hash = j["manifest_hash"].get<std::string>();
        }
        const fs::path file = dir / "dq_vs_epoch.csv";
        check_writable(file, cfg.overwrite);
        emit(file, dq_vs_epoch_csv(in, hash));
    } else if (cfg.kind == "wi_scatter") {
        const Dataset data = read_dataset(dataset_from(cfg, in));
        const std::string hash = manifest_hash(data.manifest);
        for (const SavedModel& saved : load_models(in)) {
            if (saved.manifest_hash != hash)
                throw InputError("models and dataset come from different manifests");
            const fs::path file =
                dir / fmt::format("wi_scatter_{}_seed{}.csv", saved.loss, saved.seed);
            check_writable(file, cfg.overwrite);
            emit(file, wi_scatter_csv(saved, data, data.test));
        }
    } else {
        throw InputError(fmt::format(
            "unknown export kind '{}' (expected dq_table, time_table, dq_vs_epoch or wi_scatter)",
            cfg.kind));
    }
    return kExitOk;
}

} // namespace rmab::app
