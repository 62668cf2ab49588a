#include "rmab/training.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <thread>

#include <fmt/format.h>

#include "rmab/errors.hpp"
#include "rmab/planning.hpp"
#include "rmab/rng.hpp"

namespace rmab {

namespace {

class Adam {
  public:
    explicit Adam(Eigen::Index n, double lr)
        : lr_(lr), m_(Eigen::VectorXd::Zero(n)), v_(Eigen::VectorXd::Zero(n)) {}

    void step(Eigen::VectorXd& theta, const Eigen::VectorXd& grad) {
        constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        ++t_;
        m_ = b1 * m_ + (1.0 - b1) * grad;
        v_ = b2 * v_ + (1.0 - b2) * grad.cwiseProduct(grad);
        const double c1 = 1.0 - std::pow(b1, t_);
        const double c2 = 1.0 - std::pow(b2, t_);
        theta.array() -= lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps);
    }

  private:
    double lr_;
    int t_ = 0;
    Eigen::VectorXd m_, v_;
};

std::vector<std::vector<double>> features_of(const Cohort& c) {
    std::vector<std::vector<double>> f;
    f.reserve(c.arms.size());
    for (const Arm& a : c.arms)
        f.push_back(a.features);
    return f;
}

// Per-cohort quantities that do not depend on the model.
struct CohortCache {
    const CohortRecord* record = nullptr;
    std::vector<std::vector<double>> features;
    std::vector<TransitionTensor> truth;
    TruthTables truth_tables;
    double never_act = 0.0; // decomposed DQ anchors at the evaluation alpha
    double perfect = 0.0;
};

SolverConfig solver_for(const Cohort& c, double epsilon) {
    SolverConfig cfg;
    cfg.budget = c.budget;
    cfg.gamma = c.setup.gamma;
    cfg.epsilon = epsilon;
    return cfg;
}

double decomposed_value(const std::vector<TransitionTensor>& pred, const TruthTables& truth,
                        const Cohort& c, double alpha, double epsilon) {
    ReturnsTable t;
    t.j_pred = build_return_table(pred, RewardSpec::engagement(c.num_states()), c.setup);
    t.j_true = truth.j_true;
    t.j_budget = truth.j_budget;
    const DualSolution sol = forward_pass(t, {Regularizer::Entropy, alpha}, solver_for(c, epsilon));
    return sol.z_star.z.cwiseProduct(t.j_true).sum();
}

CohortCache make_cache(const CohortRecord& rec, const TrainingConfig& cfg) {
    CohortCache cc;
    cc.record = &rec;
    cc.features = features_of(rec.cohort);
    cc.truth = rec.cohort.true_tensors();
    cc.truth_tables = build_truth_tables(cc.truth, rec.cohort.setup);
    cc.never_act = cc.truth_tables.j_true.col(0).sum();
    cc.perfect = decomposed_value(cc.truth, cc.truth_tables, rec.cohort, cfg.eval_alpha,
                                  cfg.epsilon);
    return cc;
}

void check_finite(double value, const std::vector<TransitionGrad>& grad, int epoch, int cohort) {
    bool ok = std::isfinite(value);
    for (const auto& g : grad)
        for (double v : g)
            ok = ok && std::isfinite(v);
    if (!ok)
        throw NumericError(fmt::format(
            "training diverged: non-finite loss or gradient at epoch {} on cohort {} (loss {})",
            epoch, cohort, value));
}

LossValue cohort_loss(const TrainingConfig& cfg, const std::vector<TransitionTensor>& pred,
                      const CohortCache& cc, int cohort_id) {
    const Cohort& c = cc.record->cohort;
    switch (cfg.loss) {
    case LossKind::MSE:
        return mse_loss(pred, cc.truth);
    case LossKind::NLL:
        return nll_loss(pred, cc.record->trajectories);
    case LossKind::SimDFL: {
        SimDflOptions o = cfg.sim;
        // common random numbers: the stream depends on the cohort, not the epoch
        o.seed = derive_seed(cfg.seed, stream::kSimDfl, static_cast<std::uint64_t>(cohort_id));
        return sim_dfl_loss(pred, c, o);
    }
    case LossKind::DecDFL:
    case LossKind::FastDecDFL: {
        DecDflOptions o;
        o.fast = cfg.loss == LossKind::FastDecDFL;
        RegularizerConfig reg = cfg.reg;
        if (o.fast)
            reg.kind = Regularizer::Entropy;
        const DecDflResult r =
            dec_dfl_loss(pred, cc.truth_tables, reg, solver_for(c, cfg.epsilon), c.setup, o);
        return {r.loss, r.grad_pred};
    }
    }
    throw InputError("unknown loss");
}

struct Validation {
    double objective = 0.0;
    double normalized_dq = 0.0;
};

Validation validate(const TrainingConfig& cfg, const ModelParams& model,
                    const std::vector<CohortCache>& val) {
    Validation out;
    double value = 0.0, never = 0.0, perfect = 0.0, own = 0.0;
    for (const CohortCache& cc : val) {
        const auto pred = model.predict(cc.features);
        value += decomposed_value(pred, cc.truth_tables, cc.record->cohort, cfg.eval_alpha,
                                  cfg.epsilon);
        never += cc.never_act;
        perfect += cc.perfect;
        if (cfg.loss == LossKind::MSE)
            own += mse_loss(pred, cc.truth).value;
        else if (cfg.loss == LossKind::NLL)
            own += nll_loss(pred, cc.record->trajectories).value;
    }
    const auto norm = normalize_dq(value, never, perfect);
    out.normalized_dq = norm.value_or(0.0);
    if (is_decision_loss(cfg.loss))
        out.objective = norm.value_or(value);
    else
        out.objective = val.empty() ? 0.0 : own / static_cast<double>(val.size());
    return out;
}

} // namespace

std::string loss_name(LossKind kind) {
    switch (kind) {
    case LossKind::MSE:
        return "mse";
    case LossKind::NLL:
        return "nll";
    case LossKind::SimDFL:
        return "sim-dfl";
    case LossKind::DecDFL:
        return "dec-dfl";
    case LossKind::FastDecDFL:
        return "fast-dec-dfl";
    }
    return "unknown";
}

LossKind parse_loss(const std::string& name) {
    for (LossKind k : {LossKind::MSE, LossKind::NLL, LossKind::SimDFL, LossKind::DecDFL,
                       LossKind::FastDecDFL})
        if (loss_name(k) == name)
            return k;
    throw InputError(fmt::format(
        "unknown loss '{}' (expected mse, nll, sim-dfl, dec-dfl or fast-dec-dfl)", name));
}

bool is_decision_loss(LossKind kind) {
    return kind == LossKind::SimDFL || kind == LossKind::DecDFL || kind == LossKind::FastDecDFL;
}

std::optional<double> normalize_dq(double value, double never, double perfect) {
    const double span = perfect - never;
    if (!(std::abs(span) > 1e-12 * std::max(1.0, std::abs(perfect))))
        return std::nullopt;
    return (value - never) / span;
}

std::vector<const Cohort*> select_cohorts(const Dataset& data, const std::vector<int>& ids) {
    std::vector<const Cohort*> out;
    for (int id : ids)
        out.push_back(&data.cohorts.at(static_cast<std::size_t>(id)).cohort);
    return out;
}

TrainResult train(const TrainingConfig& config, const Dataset& data) {
    if (data.train.empty())
        throw InputError("training split is empty");
    if (config.epochs < 0 || config.patience < 1)
        throw InputError("epochs must be nonnegative and patience positive");
    if (!(config.learning_rate >= 0.0))
        throw InputError("learning rate must be nonnegative");
    if (config.loss == LossKind::FastDecDFL && config.reg.kind != Regularizer::Entropy)
        throw InputError("the fast DEC-DFL path requires the entropy regularizer");

    const int feature_dim = data.manifest.feature_dim;
    const ModelSpec spec = ModelSpec::preset(config.capacity, feature_dim, data.manifest.states);

    std::vector<CohortCache> train_set, val_set;
    for (int id : data.train)
        train_set.push_back(make_cache(data.cohorts.at(static_cast<std::size_t>(id)), config));
    for (int id : data.validation)
        val_set.push_back(make_cache(data.cohorts.at(static_cast<std::size_t>(id)), config));

    TrainResult result;
    result.config = config;
    ModelParams model = ModelParams::initialize(spec, config.seed);
    Adam adam(model.theta().size(), config.learning_rate);
    const double sign = is_decision_loss(config.loss) ? -1.0 : 1.0;
    auto better = [&](double a, double b) {
        return is_decision_loss(config.loss) ? a > b : a < b;
    };

    const Validation initial = validate(config, model, val_set);
    result.model = model;
    result.best_validation = initial.objective;
    result.best_epoch = 0;

    std::vector<int> order(train_set.size());
    int since_best = 0;
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        const auto start = std::chrono::steady_clock::now();
        for (std::size_t k = 0; k < order.size(); ++k)
            order[k] = static_cast<int>(k);
        Rng rng(derive_seed(config.seed, stream::kShuffle, static_cast<std::uint64_t>(epoch)));
        for (std::size_t k = order.size(); k-- > 1;)
            std::swap(order[k], order[static_cast<std::size_t>(uniform01(rng) * (k + 1))]);

        double epoch_loss = 0.0;
        for (int idx : order) {
            const CohortCache& cc = train_set[idx];
            ForwardCache fc;
            const auto pred = model.forward(cc.features, fc);
            LossValue lv = cohort_loss(config, pred, cc, data.train[idx]);
            check_finite(lv.value, lv.grad, epoch, data.train[idx]);
            epoch_loss += lv.value;
            for (auto& g : lv.grad)
                for (double& v : g)
                    v *= sign;
            const Eigen::VectorXd grad = model.backward(fc, lv.grad);
            if (!grad.allFinite())
                throw NumericError(fmt::format(
                    "training diverged: non-finite parameter gradient at epoch {}", epoch));
            adam.step(model.theta(), grad);
        }
        const double seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

        const Validation v = validate(config, model, val_set);
        result.log.push_back({epoch, epoch_loss / static_cast<double>(order.size()), v.objective,
                              v.normalized_dq, seconds});
        if (better(v.objective, result.best_validation)) {
            result.best_validation = v.objective;
            result.best_epoch = epoch;
            result.model = model;
            since_best = 0;
        } else if (++since_best >= config.patience) {
            break;
        }
    }
    return result;
}

GridResult train_grid(const TrainingConfig& base, const std::vector<double>& learning_rates,
                      const std::vector<double>& alphas, const Dataset& data, int jobs) {
    if (learning_rates.empty())
        throw InputError("learning-rate grid is empty");
    std::vector<TrainingConfig> configs;
    const std::vector<double> alpha_grid =
        is_decision_loss(base.loss) && base.loss != LossKind::SimDFL && !alphas.empty()
            ? alphas
            : std::vector<double>{base.reg.alpha};
    for (double lr : learning_rates)
        for (double a : alpha_grid) {
            TrainingConfig c = base;
            c.learning_rate = lr;
            c.reg.alpha = a;
            configs.push_back(c);
        }

    GridResult grid;
    grid.runs.resize(configs.size());
    std::vector<std::exception_ptr> errors(configs.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t k = next++; k < configs.size(); k = next++) {
            try {
                grid.runs[k] = train(configs[k], data);
            } catch (...) {
                errors[k] = std::current_exception();
            }
        }
    };
    const int threads = std::clamp(jobs, 1, static_cast<int>(configs.size()));
    std::vector<std::thread> pool;
    for (int t = 1; t < threads; ++t)
        pool.emplace_back(worker);
    worker();
    for (std::thread& t : pool)
        t.join();
    for (const auto& e : errors)
        if (e)
            std::rethrow_exception(e);

    const bool maximize = is_decision_loss(base.loss);
    for (std::size_t k = 1; k < grid.runs.size(); ++k) {
        const double v = grid.runs[k].best_validation;
        const double b = grid.runs[grid.best].best_validation;
        if (maximize ? v > b : v < b)
            grid.best = k;
    }
    return grid;
}

std::string training_log_jsonl(const TrainResult& result) {
    std::string out;
    const std::string name = loss_name(result.config.loss);
    for (const EpochRecord& r : result.log) {
        out += fmt::format("{{\"epoch\":{},\"split\":\"train\",\"loss\":\"{}\",\"value\":{:.17g},"
                           "\"seconds\":{:.6f}}}\n",
                           r.epoch, name, r.train_loss, r.seconds);
        out += fmt::format("{{\"epoch\":{},\"split\":\"validation\",\"loss\":\"{}\",\"value\":{:."
                           "17g},\"normalized_decomposed_dq\":{:.17g},\"seconds\":{:.6f}}}\n",
                           r.epoch, name, r.validation, r.validation_decomposed_dq, r.seconds);
    }
    return out;
}

EvaluationResult evaluate_predictions(const std::vector<std::vector<TransitionTensor>>& pred,
                                      const std::vector<const Cohort*>& cohorts,
                                      const EvalOptions& opts) {
    if (pred.size() != cohorts.size())
        throw InputError("one prediction list per cohort is required");
    EvaluationResult out;
    DQReport& tot = out.total;
    for (std::size_t c = 0; c < cohorts.size(); ++c) {
        const Cohort& cohort = *cohorts[c];
        cohort.validate();
        const auto truth = cohort.true_tensors();
        const TruthTables tt = build_truth_tables(truth, cohort.setup);
        DQReport r;
        r.decomposed_dq = decomposed_value(pred[c], tt, cohort, opts.alpha, opts.epsilon);
        r.perfect_dq = decomposed_value(truth, tt, cohort, opts.alpha, opts.epsilon);
        r.never_act_dq = tt.j_true.col(0).sum();
        if (opts.joint) {
            const std::uint64_t seed =
                derive_seed(opts.seed, stream::kSimulation, static_cast<std::uint64_t>(c));
            r.joint_dq = simulate_joint(cohort, whittle_policy(pred[c], cohort.setup),
                                        opts.trajectories, seed)
                             .mean_return;
            r.perfect_joint_dq = simulate_joint(cohort, whittle_policy(truth, cohort.setup),
                                                opts.trajectories, seed)
                                     .mean_return;
            Decomposed never{
                Mixture{Table::Zero(cohort.num_arms(), num_policies(cohort.num_states()))}};
            never.mixture.z.col(0).setOnes();
            r.never_act_joint_dq =
                simulate_joint(cohort, never, opts.trajectories, seed).mean_return;
        }
        tot.decomposed_dq += r.decomposed_dq;
        tot.perfect_dq += r.perfect_dq;
        tot.never_act_dq += r.never_act_dq;
        tot.joint_dq += r.joint_dq;
        tot.perfect_joint_dq += r.perfect_joint_dq;
        tot.never_act_joint_dq += r.never_act_joint_dq;
        out.per_cohort.push_back(r);
    }
    auto finish = [&](DQReport& r) {
        const auto d = normalize_dq(r.decomposed_dq, r.never_act_dq, r.perfect_dq);
        r.decomposed_normalization_defined = d.has_value();
        r.normalized_decomposed_dq = d.value_or(0.0);
        if (opts.joint) {
            const auto j = normalize_dq(r.joint_dq, r.never_act_joint_dq, r.perfect_joint_dq);
            r.joint_normalization_defined = j.has_value();
            r.normalized_joint_dq = j.value_or(0.0);
        } else {
            r.joint_normalization_defined = false;
        }
    };
    finish(tot);
    for (DQReport& r : out.per_cohort)
        finish(r);
    return out;
}

EvaluationResult evaluate_dq(const ModelParams& model, const std::vector<const Cohort*>& cohorts,
                             const EvalOptions& opts) {
    std::vector<std::vector<TransitionTensor>> pred;
    pred.reserve(cohorts.size());
    for (const Cohort* c : cohorts)
        pred.push_back(model.predict(features_of(*c)));
    return evaluate_predictions(pred, cohorts, opts);
}

} // namespace rmab
