#pragma once

// Decomposed mixture-policy layer.
//
// Each arm i picks a distribution Z_i over its 2^|S| deterministic policies.
// The layer maximizes
//
//     sum_ij Z_ij * J_pred[i][j] + Phi(Z)
//     s.t. sum_j Z_ij = 1,  sum_ij Z_ij * J_budget[i][j] <= B / (1 - gamma)
//
// where J_pred comes from predicted transitions and J_budget (expected
// discounted intervention count) from the true ones. With the entropy
// regularizer the inner maximization for a fixed multiplier is a row-wise
// softmax, so the forward pass reduces to a 1-D monotone root find and the
// backward pass to an arrow-structured linear system solved in O(N * 2^|S|).

#include <vector>

#include <Eigen/Dense>

#include "rmab/mdp.hpp"

namespace rmab {

using Table = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Per-arm, per-policy expected returns. Rows are arms, columns policies.
struct ReturnsTable {
    Table j_pred;   // J_{T^_i}(pi^j)
    Table j_true;   // J_{T_i}(pi^j); may be empty when truth is unknown
    Table j_budget; // Jbar(pi^j), discounted intervention count

    int num_arms() const { return static_cast<int>(j_pred.rows()); }
    int num_policies() const { return static_cast<int>(j_pred.cols()); }
    void validate() const;
};

/// Row-stochastic N x 2^|S| matrix of policy probabilities.
struct Mixture {
    Table z;

    int num_arms() const { return static_cast<int>(z.rows()); }
    int num_policies() const { return static_cast<int>(z.cols()); }
};

struct DualSolution {
    double lambda_star = 0.0;
    double slack_xi = 0.0; // B/(1-gamma) - sum Z* . J_budget
    Mixture z_star;
    int eval_calls = 0;
};

enum class Regularizer { Entropy, L2 };

struct RegularizerConfig {
    Regularizer kind = Regularizer::Entropy;
    double alpha = 1.0;
};

struct SolverConfig {
    double epsilon = 1e-6; // bisection tolerance on the multiplier
    double r_max = 1.0;
    double budget = 1.0; // per-step interventions B
    double gamma = 0.9;
    /// Complementary-slackness target for |lambda * xi|, relative to
    /// B/(1-gamma). After bisection reaches epsilon, Newton polishing steps
    /// inside the final bracket run until this holds.
    double slackness_tol = 1e-9;

    double discounted_budget() const { return budget / (1.0 - gamma); }
    void validate() const;
};

/// Intermediate variables of the KKT adjoint system.
struct BackwardWorkspace {
    Table d_z;
    Eigen::VectorXd d_nu;
    double d_lambda = 0.0;
    bool dense_fallback = false;
};

struct LayerGradients {
    Table grad_j_pred;
    Table grad_j_budget;
    BackwardWorkspace workspace;
};

struct EvalLambdaResult {
    double residual = 0.0; // sum Z . J_budget - B/(1-gamma)
    Mixture z;
};

/// Row-wise softmax of (J_pred - lambda * J_budget) / alpha and the budget residual.
EvalLambdaResult eval_lambda(const ReturnsTable& tables, double lambda,
                             const RegularizerConfig& reg, const SolverConfig& cfg);

/// Bisection on the budget residual over [-R_max/(1-gamma), R_max/(1-gamma)],
/// negative roots clamped to zero. Entropy regularizer only.
DualSolution forward_pass(const ReturnsTable& tables, const RegularizerConfig& reg,
                          const SolverConfig& cfg);

struct ReferenceOptions {
    double kkt_tol = 1e-7;
    int max_iterations = 500;
};

/// Slow reference solve supporting both regularizers. Minimizes the 1-D
/// Lagrangian dual over lambda >= 0 with safeguarded Newton steps; the inner
/// per-arm maximizers are exact (softmax, or Euclidean projection onto the
/// simplex for L2). Throws NumericError unless the KKT residual reaches kkt_tol.
DualSolution solve_reference(const ReturnsTable& tables, const RegularizerConfig& reg,
                             const SolverConfig& cfg, const ReferenceOptions& opts = {});

/// KKT residual of a candidate (lambda, Z): max of primal infeasibility,
/// |lambda * xi| and row-sum violation, scaled by max(1, B/(1-gamma)).
double kkt_residual(const ReturnsTable& tables, const DualSolution& sol,
                    const SolverConfig& cfg);

/// Optimal value of the unregularized problem (Phi = 0), computed exactly by
/// minimizing the piecewise-linear Lagrangian dual over its breakpoints.
struct LpSolution {
    double value = 0.0;
    double lambda = 0.0;
};
LpSolution solve_unregularized(const ReturnsTable& tables, const SolverConfig& cfg);

/// Vector-Jacobian product through the layer: given upstream = dl/dZ*,
/// returns dl/dJ_pred and dl/dJ_budget. Closed-form elimination of the
/// budget row against the per-arm blocks; entropy regularizer only.
LayerGradients backward_pass(const DualSolution& sol, const ReturnsTable& tables,
                             const RegularizerConfig& reg, const SolverConfig& cfg,
                             const Table& upstream);

/// Same quantity from a dense LU solve of the full KKT adjoint system.
/// Supports both regularizers; `ridge` is added to the diagonal.
LayerGradients backward_pass_dense(const DualSolution& sol, const ReturnsTable& tables,
                                   const RegularizerConfig& reg, const SolverConfig& cfg,
                                   const Table& upstream, double ridge = 0.0);

/// Returns-table blocks that depend only on the true transitions.
struct TruthTables {
    Table j_true;
    Table j_budget;
};
TruthTables build_truth_tables(const std::vector<TransitionTensor>& truth,
                               const DiscountedSetup& setup);
Table build_return_table(const std::vector<TransitionTensor>& tensors, const RewardSpec& R,
                         const DiscountedSetup& setup);

struct DecDflOptions {
    /// false routes through solve_reference + backward_pass_dense (slow path).
    bool fast = true;
};

struct DecDflResult {
    double loss = 0.0; // sum Z* . J_true (decision quality; larger is better)
    std::vector<TransitionGrad> grad_pred;
    DualSolution solution;
};

/// Decomposed decision-quality loss of predictions and its gradient with
/// respect to every predicted transition entry.
DecDflResult dec_dfl_loss(const std::vector<TransitionTensor>& pred,
                          const std::vector<TransitionTensor>& truth,
                          const RegularizerConfig& reg, const SolverConfig& cfg,
                          const DiscountedSetup& setup, const DecDflOptions& opts = {});

/// Overload reusing precomputed truth blocks (training caches them per cohort).
DecDflResult dec_dfl_loss(const std::vector<TransitionTensor>& pred, const TruthTables& truth,
                          const RegularizerConfig& reg, const SolverConfig& cfg,
                          const DiscountedSetup& setup, const DecDflOptions& opts = {});

} // namespace rmab
