#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>

#include "codesfm/geometry.hpp"
#include "codesfm/warp.hpp"

namespace codesfm {

enum class VariableKind { Pose, Code, Affine };

struct VariableEntry {
  VarId id = 0;
  VariableKind kind = VariableKind::Code;
  int offset = 0;
  int size = 0;
};

/// Ordered, contiguous placement of solver variables in the stacked state vector.
class VariableLayout {
 public:
  /// Appends a variable; pose and affine sizes are fixed at 6 and 2.
  const VariableEntry& add(VarId id, VariableKind kind, int size = 0);

  bool contains(VarId id) const { return index_.count(id) != 0; }
  /// Throws UnknownVariable.
  const VariableEntry& at(VarId id) const;
  const std::vector<VariableEntry>& entries() const { return entries_; }
  int dimension() const { return dimension_; }

 private:
  std::vector<VariableEntry> entries_;
  std::map<VarId, std::size_t> index_;
  int dimension_ = 0;
};

/// Current values of solver variables: poses live on SE(3), codes and affine terms are vectors.
struct VariableState {
  std::map<VarId, Se3Pose> poses;
  std::map<VarId, Eigen::VectorXd> vectors;

  /// Applies a stacked update (left-multiplicative for poses).
  VariableState retracted(const VariableLayout& layout, const Eigen::VectorXd& delta) const;
  /// Stacked local coordinates of this state around `base` for the variables of `layout`.
  Eigen::VectorXd local(const VariableLayout& layout, const VariableState& base) const;
};

/// Gaussian prior left behind by marginalization: cost(x) = c0 + g'd + 0.5 d'Hd with
/// d = x [-] x_lin in local coordinates.
struct LinearPrior {
  VariableLayout layout;
  Eigen::MatrixXd H;
  Eigen::VectorXd g;
  double cost0 = 0.0;
  VariableState linearization_point;
};

struct NormalEquations {
  VariableLayout layout;
  Eigen::MatrixXd H;
  Eigen::VectorXd g;
  double cost = 0.0;
};

/// Incremental accumulation of J'WJ and J'Wr; blocks may be added one at a time so large
/// residual blocks need not coexist in memory.
class NormalEquationsBuilder {
 public:
  NormalEquationsBuilder(const VariableLayout& layout, const VariableState& state);

  void add(const ResidualBlock& block);
  /// Adds another builder's accumulation (same layout).
  void merge(const NormalEquationsBuilder& other);
  void add_prior(const LinearPrior& prior);
  /// weight * I on every code variable, weight * c on the gradient.
  void add_code_prior(double weight);

  const NormalEquations& equations() const { return ne_; }
  NormalEquations finish();

 private:
  const VariableState* state_;
  NormalEquations ne_;
};

NormalEquations assemble(std::span<const ResidualBlock> blocks, const VariableLayout& layout,
                         const VariableState& state, std::span<const LinearPrior> priors,
                         double code_prior_weight);

/// Solves (H + lambda diag(H)) delta = -g by Cholesky; throws IndefiniteSystem.
Eigen::VectorXd solve_step(const NormalEquations& ne, double lambda);

/// Schur complement onto the variables not in `drop`. Throws SingularBlock / UnknownVariable.
LinearPrior marginalize(const NormalEquations& ne, std::span<const VarId> drop,
                        const VariableState& state);

/// Damped Gauss-Newton problem evaluated at caller-provided states.
class LeastSquaresProblem {
 public:
  virtual ~LeastSquaresProblem() = default;
  virtual const VariableLayout& layout() const = 0;
  virtual NormalEquations linearize(const VariableState& state) = 0;
  virtual double cost(const VariableState& state) = 0;
};

struct OptimizerOptions {
  int max_iters = 50;
  double lambda_init = 1e-4;
  double lambda_up = 10.0;
  double lambda_down = 0.5;
  double lambda_max = 1e12;
  double cost_tol = 1e-9;
  double step_tol = 1e-10;
};

enum class Termination { CostTolerance, StepTolerance, MaxIterations, NoProgress };
std::string to_string(Termination t);

struct OptimizationReport {
  int iterations = 0;
  int accepted = 0;
  int rejected = 0;
  std::vector<double> cost_trace;  // initial cost followed by each accepted step
  double final_lambda = 0.0;
  Termination termination = Termination::MaxIterations;

  double initial_cost() const { return cost_trace.empty() ? 0.0 : cost_trace.front(); }
  double final_cost() const { return cost_trace.empty() ? 0.0 : cost_trace.back(); }
  /// Appends another stage (e.g. a finer pyramid schedule) to this report.
  void append(const OptimizationReport& stage);
};

void to_json(nlohmann::json& j, const OptimizationReport& r);

/// Levenberg-style loop: steps that lower the cost are accepted and shrink lambda, others are
/// discarded and grow it. `state` is only replaced by accepted candidates.
/// Throws DivergenceDetected if the cost at the current state is not finite.
OptimizationReport optimize(LeastSquaresProblem& problem, VariableState& state,
                            const OptimizerOptions& opts);

}  // namespace codesfm
