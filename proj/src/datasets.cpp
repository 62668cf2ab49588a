#include "rmab/datasets.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <thread>

#include <Eigen/Dense>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "rmab/errors.hpp"
#include "rmab/io.hpp"
#include "rmab/rng.hpp"

namespace rmab {

namespace {

using json = nlohmann::json;

void check_trajectory(const ArmTrajectory& t, int S, std::size_t arm) {
    if (t.states.size() != t.actions.size() + 1)
        throw InputError(fmt::format("arm {} trajectory has {} states for {} actions", arm,
                                     t.states.size(), t.actions.size()));
    for (int s : t.states)
        if (s < 0 || s >= S)
            throw InputError(fmt::format("arm {} visits state {} outside [0, {})", arm, s, S));
    for (int a : t.actions)
        if (a < 0 || a >= kNumActions)
            throw InputError(fmt::format("arm {} takes invalid action {}", arm, a));
}

TransitionTensor dirichlet_tensor(int S, Rng& rng) {
    TransitionTensor T(S);
    for (int s = 0; s < S; ++s)
        for (int a = 0; a < kNumActions; ++a) {
            double total = 0.0;
            for (int n = 0; n < S; ++n) {
                double u = uniform01(rng);
                while (u <= 0.0)
                    u = uniform01(rng);
                T(s, a, n) = -std::log(u); // Gamma(1) draw
                total += T(s, a, n);
            }
            for (int n = 0; n < S; ++n)
                T(s, a, n) /= total;
        }
    return T;
}

// Randomly initialized tanh network mapping flattened tensors to features.
struct FeatureNet {
    std::vector<Eigen::MatrixXd> weights; // each is (out x in)

    FeatureNet(const DatasetManifest& m) {
        Rng rng(derive_seed(m.seed, stream::kFeatures));
        const int input = m.states * kNumActions * m.states;
        int fan_in = input;
        for (int layer = 0; layer < m.feature_layers; ++layer) {
            const int out = layer + 1 == m.feature_layers ? m.feature_dim : m.feature_hidden;
            Eigen::MatrixXd W(out, fan_in);
            const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
            for (int r = 0; r < out; ++r)
                for (int c = 0; c < fan_in; ++c)
                    W(r, c) = scale * standard_normal(rng);
            weights.push_back(std::move(W));
            fan_in = out;
        }
    }

    // Rows of `x` are flattened tensors.
    Eigen::MatrixXd apply(Eigen::MatrixXd x) const {
        for (std::size_t k = 0; k < weights.size(); ++k) {
            x = x * weights[k].transpose();
            if (k + 1 < weights.size())
                x = x.array().tanh().matrix();
        }
        return x;
    }
};

CohortRecord make_cohort(const DatasetManifest& m, const FeatureNet& net, int index) {
    const int N = m.arms_per_cohort;
    const int S = m.states;
    Rng trans_rng(derive_seed(m.seed, stream::kTransitions, static_cast<std::uint64_t>(index)));
    Rng traj_rng(derive_seed(m.seed, stream::kTrajectories, static_cast<std::uint64_t>(index)));

    CohortRecord rec;
    rec.cohort.budget = m.budget;
    rec.cohort.setup = DiscountedSetup::uniform(S, m.gamma);
    rec.trajectories.num_states = S;
    Eigen::MatrixXd flat(N, S * kNumActions * S);
    for (int i = 0; i < N; ++i) {
        Arm arm;
        arm.truth = dirichlet_tensor(S, trans_rng);
        for (std::size_t k = 0; k < arm.truth.size(); ++k)
            flat(i, static_cast<Eigen::Index>(k)) = arm.truth.data()[k];

        ArmTrajectory traj;
        traj.states.push_back(static_cast<int>(uniform01(traj_rng) * S));
        for (int t = 0; t < m.trajectory_length; ++t) {
            const int a = uniform01(traj_rng) < 0.5 ? 0 : 1;
            const int s = traj.states.back();
            traj.actions.push_back(a);
            traj.states.push_back(sample_index(arm.truth.row(s, a), uniform01(traj_rng)));
        }
        rec.trajectories.arms.push_back(std::move(traj));
        rec.cohort.arms.push_back(std::move(arm));
    }
    const Eigen::MatrixXd features = net.apply(flat);
    for (int i = 0; i < N; ++i) {
        std::vector<double>& f = rec.cohort.arms[i].features;
        f.resize(static_cast<std::size_t>(features.cols()));
        for (Eigen::Index k = 0; k < features.cols(); ++k)
            f[static_cast<std::size_t>(k)] = features(i, k);
    }
    return rec;
}

void append_reals(std::string& out, std::span<const double> values) {
    out += '[';
    for (std::size_t k = 0; k < values.size(); ++k) {
        if (k)
            out += ',';
        out += fmt::format("{:.17g}", values[k]);
    }
    out += ']';
}

void append_ints(std::string& out, const std::vector<int>& values) {
    out += '[';
    for (std::size_t k = 0; k < values.size(); ++k) {
        if (k)
            out += ',';
        out += fmt::format("{}", values[k]);
    }
    out += ']';
}

std::string manifest_line(const DatasetManifest& m) {
    json j = {{"format", "rmab-dataset"},
              {"version", 1},
              {"cohorts", m.cohorts},
              {"arms_per_cohort", m.arms_per_cohort},
              {"states", m.states},
              {"feature_dim", m.feature_dim},
              {"seed", m.seed},
              {"splits", {m.train, m.validation, m.test}},
              {"trajectory_length", m.trajectory_length},
              {"feature_layers", m.feature_layers},
              {"feature_hidden", m.feature_hidden},
              {"feature_activation", m.feature_activation},
              {"feature_init", m.feature_init},
              {"trajectory_actions", m.trajectory_actions},
              {"initial_state", m.initial_state}};
    std::string line = j.dump();
    // reals are appended by hand so they keep 17 significant digits
    line.pop_back();
    line += fmt::format(",\"budget\":{:.17g},\"gamma\":{:.17g}}}", m.budget, m.gamma);
    return line;
}

template <typename T>
T field(const json& j, const char* key) {
    if (!j.contains(key))
        throw InputError(fmt::format("dataset record is missing \"{}\"", key));
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw InputError(fmt::format("dataset field \"{}\": {}", key, e.what()));
    }
}

DatasetManifest parse_manifest(const json& j) {
    if (field<std::string>(j, "format") != "rmab-dataset")
        throw InputError("not an rmab dataset file");
    if (field<int>(j, "version") != 1)
        throw InputError(fmt::format("unsupported dataset version {}", field<int>(j, "version")));
    DatasetManifest m;
    m.cohorts = field<int>(j, "cohorts");
    m.arms_per_cohort = field<int>(j, "arms_per_cohort");
    m.budget = field<double>(j, "budget");
    m.states = field<int>(j, "states");
    m.gamma = field<double>(j, "gamma");
    m.feature_dim = field<int>(j, "feature_dim");
    m.seed = field<std::uint64_t>(j, "seed");
    const auto splits = field<std::vector<int>>(j, "splits");
    if (splits.size() != 3)
        throw InputError("manifest splits must have three entries");
    m.train = splits[0];
    m.validation = splits[1];
    m.test = splits[2];
    m.trajectory_length = field<int>(j, "trajectory_length");
    m.feature_layers = field<int>(j, "feature_layers");
    m.feature_hidden = field<int>(j, "feature_hidden");
    m.feature_activation = field<std::string>(j, "feature_activation");
    m.feature_init = field<std::string>(j, "feature_init");
    m.trajectory_actions = field<std::string>(j, "trajectory_actions");
    m.initial_state = field<std::string>(j, "initial_state");
    m.validate();
    return m;
}

} // namespace

std::vector<TransitionCounts> TrajectoryData::counts() const {
    std::vector<TransitionCounts> out;
    out.reserve(arms.size());
    const TransitionTensor layout(num_states);
    for (std::size_t i = 0; i < arms.size(); ++i) {
        check_trajectory(arms[i], num_states, i);
        TransitionCounts c(layout.size(), 0.0);
        for (std::size_t t = 0; t < arms[i].actions.size(); ++t)
            c[layout.offset(arms[i].states[t], arms[i].actions[t], arms[i].states[t + 1])] += 1.0;
        out.push_back(std::move(c));
    }
    return out;
}

TransitionTensor TrajectoryData::pooled_prior() const {
    TransitionTensor P(num_states);
    std::vector<double> pooled(P.size(), 0.0);
    for (const TransitionCounts& c : counts())
        for (std::size_t k = 0; k < c.size(); ++k)
            pooled[k] += c[k];
    for (int s = 0; s < num_states; ++s)
        for (int a = 0; a < kNumActions; ++a) {
            double total = 0.0;
            for (int n = 0; n < num_states; ++n)
                total += pooled[P.offset(s, a, n)];
            for (int n = 0; n < num_states; ++n)
                P(s, a, n) = total > 0.0 ? pooled[P.offset(s, a, n)] / total : 1.0 / num_states;
        }
    return P;
}

void TrajectoryData::validate() const {
    if (num_states < 1 || num_states > kMaxStates)
        throw InputError(fmt::format("trajectory data has {} states", num_states));
    for (std::size_t i = 0; i < arms.size(); ++i)
        check_trajectory(arms[i], num_states, i);
}

std::vector<TransitionTensor> estimate_from_trajectories(const TrajectoryData& data,
                                                         double prior_strength,
                                                         const TransitionTensor& prior) {
    if (!(prior_strength >= 0.0))
        throw InputError(fmt::format("prior strength must be nonnegative, got {}", prior_strength));
    const int S = data.num_states;
    if (prior.num_states() != S)
        throw InputError("prior and trajectories disagree on the number of states");
    std::vector<TransitionTensor> out;
    const std::vector<TransitionCounts> counts = data.counts();
    for (std::size_t i = 0; i < counts.size(); ++i) {
        TransitionTensor T(S);
        for (int s = 0; s < S; ++s)
            for (int a = 0; a < kNumActions; ++a) {
                double total = 0.0;
                for (int n = 0; n < S; ++n)
                    total += prior_strength * prior(s, a, n) + counts[i][T.offset(s, a, n)];
                if (!(total > 0.0))
                    throw InputError(fmt::format(
                        "arm {} has no data for (s={}, a={}) and no prior weight", i, s, a));
                for (int n = 0; n < S; ++n)
                    T(s, a, n) =
                        (prior_strength * prior(s, a, n) + counts[i][T.offset(s, a, n)]) / total;
            }
        out.push_back(std::move(T));
    }
    return out;
}

std::vector<TransitionTensor> estimate_from_trajectories(const TrajectoryData& data,
                                                         double prior_strength) {
    return estimate_from_trajectories(data, prior_strength, data.pooled_prior());
}

std::vector<int> discretize_engagement(std::span<const double> listen_seconds, double threshold) {
    if (!(threshold > 0.0))
        throw InputError(fmt::format("engagement threshold must be positive, got {}", threshold));
    std::vector<int> out;
    out.reserve(listen_seconds.size());
    for (double d : listen_seconds) {
        if (d < 0.0 || std::isnan(d))
            throw InputError(fmt::format("listen duration {} is negative", d));
        out.push_back(d > threshold ? 1 : 0);
    }
    return out;
}

void DatasetManifest::validate() const {
    if (cohorts < 1 || arms_per_cohort < 1)
        throw InputError("a dataset needs at least one cohort of one arm");
    if (train < 0 || validation < 0 || test < 0 || train + validation + test != cohorts)
        throw InputError(fmt::format("split sizes {}+{}+{} do not sum to {} cohorts", train,
                                     validation, test, cohorts));
    if (states < 1 || states > kMaxStates)
        throw CapacityError(fmt::format("{} states outside supported range [1, {}]", states,
                                        kMaxStates));
    if (!(budget > 0.0) || budget > arms_per_cohort)
        throw InputError(fmt::format("budget {} must lie in (0, {}]", budget, arms_per_cohort));
    if (!(gamma >= 0.0 && gamma < 1.0))
        throw InputError(fmt::format("discount factor must lie in [0, 1), got {}", gamma));
    if (feature_dim < 1 || feature_layers < 1 || feature_hidden < 1 || trajectory_length < 0)
        throw InputError("feature network and trajectory sizes must be positive");
}

void assign_splits(Dataset& data) {
    const DatasetManifest& m = data.manifest;
    std::vector<int> order(m.cohorts);
    for (int k = 0; k < m.cohorts; ++k)
        order[k] = k;
    Rng rng(derive_seed(m.seed, stream::kSplits));
    for (int k = m.cohorts - 1; k > 0; --k) {
        const int j = static_cast<int>(uniform01(rng) * (k + 1));
        std::swap(order[k], order[j]);
    }
    data.train.assign(order.begin(), order.begin() + m.train);
    data.validation.assign(order.begin() + m.train, order.begin() + m.train + m.validation);
    data.test.assign(order.begin() + m.train + m.validation, order.end());
}

Dataset generate_synthetic(const DatasetManifest& manifest, int jobs) {
    manifest.validate();
    Dataset data;
    data.manifest = manifest;
    data.cohorts.resize(manifest.cohorts);
    const FeatureNet net(manifest);

    std::atomic<int> next{0};
    auto worker = [&] {
        for (int c = next++; c < manifest.cohorts; c = next++)
            data.cohorts[c] = make_cohort(manifest, net, c);
    };
    const int threads = std::clamp(jobs, 1, manifest.cohorts);
    std::vector<std::thread> pool;
    for (int t = 1; t < threads; ++t)
        pool.emplace_back(worker);
    worker();
    for (std::thread& t : pool)
        t.join();

    assign_splits(data);
    return data;
}

std::string serialize_dataset(const Dataset& data) {
    std::string out = manifest_line(data.manifest);
    out += '\n';
    for (std::size_t c = 0; c < data.cohorts.size(); ++c) {
        const CohortRecord& rec = data.cohorts[c];
        out += fmt::format("{{\"cohort\":{},\"features\":[", c);
        for (int i = 0; i < rec.cohort.num_arms(); ++i) {
            if (i)
                out += ',';
            append_reals(out, rec.cohort.arms[i].features);
        }
        out += "],\"transitions\":[";
        for (int i = 0; i < rec.cohort.num_arms(); ++i) {
            if (i)
                out += ',';
            append_reals(out, rec.cohort.arms[i].truth.data());
        }
        out += "],\"states\":[";
        for (std::size_t i = 0; i < rec.trajectories.arms.size(); ++i) {
            if (i)
                out += ',';
            append_ints(out, rec.trajectories.arms[i].states);
        }
        out += "],\"actions\":[";
        for (std::size_t i = 0; i < rec.trajectories.arms.size(); ++i) {
            if (i)
                out += ',';
            append_ints(out, rec.trajectories.arms[i].actions);
        }
        out += "]}\n";
    }
    return out;
}

Dataset parse_dataset(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line))
        throw InputError("dataset file is empty");
    Dataset data;
    try {
        data.manifest = parse_manifest(json::parse(line));
    } catch (const json::parse_error& e) {
        throw InputError(fmt::format("malformed dataset manifest: {}", e.what()));
    }
    const DatasetManifest& m = data.manifest;
    const int S = m.states;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty())
            continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw InputError(fmt::format("dataset line {}: {}", lineno, e.what()));
        }
        CohortRecord rec;
        rec.cohort.budget = m.budget;
        rec.cohort.setup = DiscountedSetup::uniform(S, m.gamma);
        rec.trajectories.num_states = S;
        const auto features = field<std::vector<std::vector<double>>>(j, "features");
        const auto transitions = field<std::vector<std::vector<double>>>(j, "transitions");
        const auto states = field<std::vector<std::vector<int>>>(j, "states");
        const auto actions = field<std::vector<std::vector<int>>>(j, "actions");
        const std::size_t N = features.size();
        if (transitions.size() != N || states.size() != N || actions.size() != N)
            throw InputError(fmt::format("dataset line {}: per-arm arrays differ in length",
                                         lineno));
        for (std::size_t i = 0; i < N; ++i) {
            rec.cohort.arms.push_back({features[i], TransitionTensor(S, transitions[i])});
            rec.trajectories.arms.push_back({states[i], actions[i]});
        }
        rec.trajectories.validate();
        data.cohorts.push_back(std::move(rec));
    }
    if (static_cast<int>(data.cohorts.size()) != m.cohorts)
        throw InputError(fmt::format("manifest lists {} cohorts but the file has {}", m.cohorts,
                                     data.cohorts.size()));
    assign_splits(data);
    return data;
}

void write_dataset(const Dataset& data, const std::filesystem::path& path) {
    write_file_atomic(path, serialize_dataset(data));
}

Dataset read_dataset(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path))
        throw InputError(fmt::format("dataset {} does not exist", path.string()));
    return parse_dataset(read_file(path));
}

std::string manifest_hash(const DatasetManifest& manifest) {
    return hex64(fnv1a64(manifest_line(manifest)));
}

} // namespace rmab
