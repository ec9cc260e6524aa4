#include <random>

#include <gtest/gtest.h>

#include "codesfm/error.hpp"
#include "codesfm/solver.hpp"
#include "test_util.hpp"

namespace codesfm {
namespace {

Eigen::MatrixXd random_spd(int n, std::mt19937& rng) {
  std::normal_distribution<double> nd;
  Eigen::MatrixXd a(n + 3, n);
  for (int i = 0; i < a.size(); ++i) a.data()[i] = nd(rng);
  return a.transpose() * a + 0.1 * Eigen::MatrixXd::Identity(n, n);
}

Eigen::VectorXd random_vec(int n, std::mt19937& rng) {
  std::normal_distribution<double> nd;
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = nd(rng);
  return v;
}

NormalEquations three_var_system(std::mt19937& rng, VariableState& state) {
  NormalEquations ne;
  ne.layout.add(10, VariableKind::Pose);
  ne.layout.add(11, VariableKind::Code, 4);
  ne.layout.add(12, VariableKind::Pose);
  ne.H = random_spd(ne.layout.dimension(), rng);
  ne.g = random_vec(ne.layout.dimension(), rng);
  ne.cost = 7.0;
  state.poses[10] = Se3Pose::exp(test::random_twist(rng, 0.3));
  state.poses[12] = Se3Pose::exp(test::random_twist(rng, 0.3));
  state.vectors[11] = random_vec(4, rng);
  return ne;
}

TEST(Layout, OffsetsAreContiguous) {
  VariableLayout l;
  l.add(5, VariableKind::Pose);
  l.add(-1, VariableKind::Affine);
  l.add(7, VariableKind::Code, 9);
  EXPECT_EQ(l.at(5).offset, 0);
  EXPECT_EQ(l.at(-1).offset, 6);
  EXPECT_EQ(l.at(-1).size, 2);
  EXPECT_EQ(l.at(7).offset, 8);
  EXPECT_EQ(l.dimension(), 17);
  try {
    l.at(99);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnknownVariable);
  }
}

TEST(State, RetractLocalRoundTrip) {
  std::mt19937 rng(4);
  VariableState s;
  const NormalEquations ne = three_var_system(rng, s);
  const Eigen::VectorXd d = 0.05 * random_vec(ne.layout.dimension(), rng);
  const VariableState moved = s.retracted(ne.layout, d);
  EXPECT_LT((moved.local(ne.layout, s) - d).norm(), 1e-10);
}

// No residuals and one code: the normal equations are exactly the prior.
TEST(Assembly, CodePriorAlone) {
  VariableLayout layout;
  layout.add(1, VariableKind::Code, 5);
  VariableState state;
  state.vectors[1] = (Eigen::VectorXd(5) << 1, -2, 0, 0.5, 3).finished();
  const double lambda = 0.25;
  const NormalEquations ne = assemble({}, layout, state, {}, lambda);
  EXPECT_EQ(ne.H, lambda * Eigen::MatrixXd::Identity(5, 5));
  EXPECT_EQ(ne.g, lambda * state.vectors[1]);
  EXPECT_DOUBLE_EQ(ne.cost, 0.5 * lambda * state.vectors[1].squaredNorm());
  const Eigen::VectorXd step = solve_step(ne, 0.0);
  EXPECT_LT((step + state.vectors[1]).norm(), 1e-14);
}

TEST(Solve, MatchesDenseInverseAndDamps) {
  std::mt19937 rng(8);
  VariableState s;
  const NormalEquations ne = three_var_system(rng, s);
  const Eigen::VectorXd plain = solve_step(ne, 0.0);
  EXPECT_LT((ne.H * plain + ne.g).norm(), 1e-10);
  Eigen::MatrixXd damped = ne.H;
  damped.diagonal() *= 1.5;
  EXPECT_LT((damped * solve_step(ne, 0.5) + ne.g).norm(), 1e-10);
}

TEST(Solve, RejectsIndefinite) {
  NormalEquations ne;
  ne.layout.add(0, VariableKind::Affine);
  ne.H = Eigen::Matrix2d(Eigen::Vector2d(1.0, -1.0).asDiagonal());
  ne.g = Eigen::Vector2d(1.0, 1.0);
  try {
    solve_step(ne, 0.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::IndefiniteSystem);
  }
}

// The Schur complement equals the inverse of the kept block of H^-1, and the reduced solve
// reproduces the kept part of the joint solve.
TEST(Marginalization, MatchesJointSolve) {
  std::mt19937 rng(14);
  VariableState s;
  const NormalEquations ne = three_var_system(rng, s);
  const std::vector<VarId> drop = {10};
  const LinearPrior prior = marginalize(ne, drop, s);
  ASSERT_EQ(prior.layout.dimension(), 10);
  EXPECT_FALSE(prior.layout.contains(10));

  const Eigen::MatrixXd cov = ne.H.inverse();
  const Eigen::MatrixXd expected = cov.bottomRightCorner(10, 10).inverse();
  EXPECT_LT((prior.H - expected).cwiseAbs().maxCoeff(), 1e-9 * expected.cwiseAbs().maxCoeff());

  const Eigen::VectorXd joint = -ne.H.ldlt().solve(ne.g);
  const Eigen::VectorXd reduced = -prior.H.ldlt().solve(prior.g);
  EXPECT_LT((reduced - joint.tail(10)).norm(), 1e-9 * joint.norm());

  // Minimum cost is preserved.
  const double min_joint = ne.cost + 0.5 * ne.g.dot(joint);
  const double min_reduced = prior.cost0 + 0.5 * prior.g.dot(reduced);
  EXPECT_NEAR(min_joint, min_reduced, 1e-9 * std::abs(min_joint));
  EXPECT_EQ(prior.linearization_point.poses.at(12).translation(), s.poses.at(12).translation());
}

TEST(Marginalization, PriorReassemblesAtItsLinearizationPoint) {
  std::mt19937 rng(21);
  VariableState s;
  const NormalEquations ne = three_var_system(rng, s);
  const std::vector<VarId> drop = {11};
  const LinearPrior prior = marginalize(ne, drop, s);
  const NormalEquations back = assemble({}, prior.layout, s, std::span(&prior, 1), 0.0);
  EXPECT_LT((back.H - prior.H).norm(), 1e-12);
  EXPECT_LT((back.g - prior.g).norm(), 1e-12);
  EXPECT_NEAR(back.cost, prior.cost0, 1e-12);
}

TEST(Marginalization, SingularBlockAndUnknownVariable) {
  std::mt19937 rng(3);
  VariableState s;
  NormalEquations ne = three_var_system(rng, s);
  ne.H.row(0).setZero();
  ne.H.col(0).setZero();
  const std::vector<VarId> drop = {10};
  try {
    marginalize(ne, drop, s);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SingularBlock);
  }
  const std::vector<VarId> unknown = {42};
  try {
    marginalize(ne, unknown, s);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnknownVariable);
  }
}

// Residual r = A x - b over one vector variable, with a pose term that pulls towards a target so
// the retraction path is exercised too.
class ToyProblem : public LeastSquaresProblem {
 public:
  ToyProblem() {
    layout_.add(0, VariableKind::Code, 3);
    layout_.add(1, VariableKind::Pose);
    a_ << 2, 0, 1, 0, 1, 0, 1, 0, 3;
    b_ << 1, -2, 0.5;
    target_ = Se3Pose::exp((Vec6() << 0.2, -0.1, 0.3, 0.1, 0.05, -0.2).finished());
  }
  const VariableLayout& layout() const override { return layout_; }
  double cost(const VariableState& s) override {
    const Eigen::Vector3d r = a_ * s.vectors.at(0) - b_;
    return 0.5 * r.squaredNorm() + 0.5 * s.poses.at(1).local(target_).squaredNorm();
  }
  NormalEquations linearize(const VariableState& s) override {
    NormalEquations ne;
    ne.layout = layout_;
    ne.H = Eigen::MatrixXd::Zero(9, 9);
    ne.g = Eigen::VectorXd::Zero(9);
    const Eigen::Vector3d r = a_ * s.vectors.at(0) - b_;
    ne.H.topLeftCorner(3, 3) = a_.transpose() * a_;
    ne.g.head(3) = a_.transpose() * r;
    // Gauss-Newton on the log residual with the small-angle Jacobian approximation.
    ne.H.bottomRightCorner(6, 6).setIdentity();
    ne.g.tail(6) = s.poses.at(1).local(target_);
    ne.cost = cost(s);
    return ne;
  }

 private:
  VariableLayout layout_;
  Eigen::Matrix3d a_;
  Eigen::Vector3d b_;
  Se3Pose target_;
};

TEST(Optimizer, ConvergesMonotonically) {
  ToyProblem problem;
  VariableState s;
  s.vectors[0] = Eigen::Vector3d::Zero();
  s.poses[1] = Se3Pose();
  OptimizerOptions o;
  o.max_iters = 100;
  const OptimizationReport r = optimize(problem, s, o);
  ASSERT_GE(r.cost_trace.size(), 2u);
  for (std::size_t i = 1; i < r.cost_trace.size(); ++i) EXPECT_LT(r.cost_trace[i], r.cost_trace[i - 1]);
  EXPECT_LT(r.final_cost(), 1e-12);
  EXPECT_NE(r.termination, Termination::MaxIterations);
  EXPECT_EQ(static_cast<std::size_t>(r.accepted) + 1, r.cost_trace.size());
  EXPECT_GE(r.iterations, r.accepted);
}

class NanProblem : public ToyProblem {
 public:
  double cost(const VariableState&) override { return std::nan(""); }
};

TEST(Optimizer, DetectsNonFiniteCost) {
  NanProblem problem;
  VariableState s;
  s.vectors[0] = Eigen::Vector3d::Zero();
  s.poses[1] = Se3Pose();
  try {
    optimize(problem, s, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DivergenceDetected);
  }
}

}  // namespace
}  // namespace codesfm
