#include "codesfm/solver.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <Eigen/Cholesky>
#include <nlohmann/json.hpp>

#include "codesfm/error.hpp"

namespace codesfm {

const VariableEntry& VariableLayout::add(VarId id, VariableKind kind, int size) {
  if (contains(id)) throw Error(ErrorCode::InvalidArgument, "duplicate variable id");
  if (kind == VariableKind::Pose) size = 6;
  if (kind == VariableKind::Affine) size = 2;
  if (size <= 0) throw Error(ErrorCode::InvalidArgument, "variable size must be positive");
  entries_.push_back({id, kind, dimension_, size});
  index_[id] = entries_.size() - 1;
  dimension_ += size;
  return entries_.back();
}

const VariableEntry& VariableLayout::at(VarId id) const {
  const auto it = index_.find(id);
  if (it == index_.end()) {
    throw Error(ErrorCode::UnknownVariable, "variable " + std::to_string(id) + " not in layout");
  }
  return entries_[it->second];
}

VariableState VariableState::retracted(const VariableLayout& layout,
                                       const Eigen::VectorXd& delta) const {
  if (delta.size() != layout.dimension()) {
    throw Error(ErrorCode::DimensionMismatch, "update does not match layout dimension");
  }
  VariableState out = *this;
  for (const VariableEntry& e : layout.entries()) {
    if (e.kind == VariableKind::Pose) {
      Se3Pose& pose = out.poses.at(e.id);
      pose = pose.retract(delta.segment<6>(e.offset));
    } else {
      out.vectors.at(e.id) += delta.segment(e.offset, e.size);
    }
  }
  return out;
}

Eigen::VectorXd VariableState::local(const VariableLayout& layout, const VariableState& base) const {
  Eigen::VectorXd d(layout.dimension());
  for (const VariableEntry& e : layout.entries()) {
    if (e.kind == VariableKind::Pose) {
      d.segment<6>(e.offset) = poses.at(e.id).local(base.poses.at(e.id));
    } else {
      d.segment(e.offset, e.size) = vectors.at(e.id) - base.vectors.at(e.id);
    }
  }
  return d;
}

NormalEquationsBuilder::NormalEquationsBuilder(const VariableLayout& layout,
                                               const VariableState& state)
    : state_(&state) {
  ne_.layout = layout;
  ne_.H = Eigen::MatrixXd::Zero(layout.dimension(), layout.dimension());
  ne_.g = Eigen::VectorXd::Zero(layout.dimension());
}

namespace {

struct Slot {
  const double* data;  // row-major block Jacobian, null for a mirrored slot
  int cols;
  int global;
  int local;
  double sign = 1.0;
};

}  // namespace

void NormalEquationsBuilder::add(const ResidualBlock& block) {
  ne_.cost += block.cost();
  const BlockVariables& v = block.vars;
  if (!v.pose_a && !v.pose_b && !v.code_a && !v.code_b && !v.affine) return;
  if (!block.has_jacobians()) {
    throw Error(ErrorCode::InvalidArgument, "residual block was evaluated without Jacobians");
  }

  std::vector<Slot> slots;
  int local_dim = 0;
  auto add_slot = [&](const std::optional<VarId>& id, const double* data, Eigen::Index cols) {
    if (!id) return;
    const VariableEntry& e = ne_.layout.at(*id);
    if (cols != e.size) {
      throw Error(ErrorCode::DimensionMismatch,
                  "block Jacobian width does not match variable " + std::to_string(*id));
    }
    slots.push_back({data, static_cast<int>(cols), e.offset, local_dim});
    local_dim += static_cast<int>(cols);
  };
  add_slot(v.pose_a, block.j_pose_a.data(), 6);
  if (block.pose_b_negates_a && v.pose_a && v.pose_b) {
    // Reuses the A columns with a flipped sign.
    const VariableEntry& e = ne_.layout.at(*v.pose_b);
    if (e.size != 6) throw Error(ErrorCode::DimensionMismatch, "pose variable size");
    slots.push_back({nullptr, 6, e.offset, slots.front().local, -1.0});
  } else {
    add_slot(v.pose_b, block.j_pose_b.data(), 6);
  }
  add_slot(v.code_a, block.j_code_a.data(), block.j_code_a.cols());
  add_slot(v.code_b, block.j_code_b.data(), block.j_code_b.cols());
  add_slot(v.affine, block.j_affine.data(), block.j_affine.cols());

  constexpr Eigen::Index kChunk = 512;
  RowMatrixXd jw(kChunk, local_dim);
  Eigen::VectorXd rw(kChunk);
  Eigen::MatrixXd h_local = Eigen::MatrixXd::Zero(local_dim, local_dim);
  Eigen::VectorXd g_local = Eigen::VectorXd::Zero(local_dim);

  auto flush = [&](Eigen::Index rows) {
    if (rows == 0) return;
    const auto j = jw.topRows(rows);
    h_local.selfadjointView<Eigen::Lower>().rankUpdate(j.transpose());
    g_local.noalias() += j.transpose() * rw.head(rows);
  };

  Eigen::Index fill = 0;
  for (Eigen::Index i = 0; i < block.size(); ++i) {
    const double w = block.weights[i];
    if (!block.valid[static_cast<std::size_t>(i)] || !(w > 0.0)) continue;
    const double sw = std::sqrt(w);
    for (const Slot& s : slots) {
      if (s.data == nullptr) continue;
      jw.block(fill, s.local, 1, s.cols) =
          sw * Eigen::Map<const Eigen::RowVectorXd>(s.data + i * s.cols, s.cols);
    }
    rw[fill] = sw * block.residuals[i];
    if (++fill == kChunk) {
      flush(fill);
      fill = 0;
    }
  }
  flush(fill);

  const Eigen::MatrixXd h_full = h_local.selfadjointView<Eigen::Lower>();
  for (const Slot& a : slots) {
    ne_.g.segment(a.global, a.cols) += a.sign * g_local.segment(a.local, a.cols);
    for (const Slot& b : slots) {
      ne_.H.block(a.global, b.global, a.cols, b.cols) +=
          (a.sign * b.sign) * h_full.block(a.local, b.local, a.cols, b.cols);
    }
  }
}

void NormalEquationsBuilder::merge(const NormalEquationsBuilder& other) {
  if (other.ne_.layout.dimension() != ne_.layout.dimension()) {
    throw Error(ErrorCode::DimensionMismatch, "merging builders with different layouts");
  }
  ne_.H += other.ne_.H;
  ne_.g += other.ne_.g;
  ne_.cost += other.ne_.cost;
}

void NormalEquationsBuilder::add_prior(const LinearPrior& prior) {
  std::vector<const VariableEntry*> targets;
  targets.reserve(prior.layout.entries().size());
  for (const VariableEntry& e : prior.layout.entries()) {
    const VariableEntry& t = ne_.layout.at(e.id);
    if (t.size != e.size) throw Error(ErrorCode::DimensionMismatch, "prior variable size");
    targets.push_back(&t);
  }
  const Eigen::VectorXd d = state_->local(prior.layout, prior.linearization_point);
  const Eigen::VectorXd g = prior.g + prior.H * d;
  ne_.cost += prior.cost0 + prior.g.dot(d) + 0.5 * d.dot(prior.H * d);
  const auto& entries = prior.layout.entries();
  for (std::size_t a = 0; a < entries.size(); ++a) {
    ne_.g.segment(targets[a]->offset, entries[a].size) += g.segment(entries[a].offset, entries[a].size);
    for (std::size_t b = 0; b < entries.size(); ++b) {
      ne_.H.block(targets[a]->offset, targets[b]->offset, entries[a].size, entries[b].size) +=
          prior.H.block(entries[a].offset, entries[b].offset, entries[a].size, entries[b].size);
    }
  }
}

void NormalEquationsBuilder::add_code_prior(double weight) {
  if (weight == 0.0) return;
  for (const VariableEntry& e : ne_.layout.entries()) {
    if (e.kind != VariableKind::Code) continue;
    const Eigen::VectorXd& c = state_->vectors.at(e.id);
    ne_.H.block(e.offset, e.offset, e.size, e.size).diagonal().array() += weight;
    ne_.g.segment(e.offset, e.size) += weight * c;
    ne_.cost += 0.5 * weight * c.squaredNorm();
  }
}

NormalEquations NormalEquationsBuilder::finish() {
  ne_.H = 0.5 * (ne_.H + ne_.H.transpose()).eval();
  return std::move(ne_);
}

NormalEquations assemble(std::span<const ResidualBlock> blocks, const VariableLayout& layout,
                         const VariableState& state, std::span<const LinearPrior> priors,
                         double code_prior_weight) {
  NormalEquationsBuilder builder(layout, state);
  for (const ResidualBlock& b : blocks) builder.add(b);
  for (const LinearPrior& p : priors) builder.add_prior(p);
  builder.add_code_prior(code_prior_weight);
  return builder.finish();
}

Eigen::VectorXd solve_step(const NormalEquations& ne, double lambda) {
  if (lambda < 0.0) throw Error(ErrorCode::InvalidArgument, "damping must be non-negative");
  Eigen::MatrixXd a = ne.H;
  a.diagonal() += lambda * ne.H.diagonal();
  const Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorCode::IndefiniteSystem, "Cholesky factorization failed");
  }
  Eigen::VectorXd delta = llt.solve(-ne.g);
  if (!delta.allFinite()) throw Error(ErrorCode::IndefiniteSystem, "non-finite step");
  return delta;
}

LinearPrior marginalize(const NormalEquations& ne, std::span<const VarId> drop,
                        const VariableState& state) {
  const std::set<VarId> dropped(drop.begin(), drop.end());
  for (VarId id : dropped) ne.layout.at(id);

  std::vector<int> keep_idx;
  std::vector<int> drop_idx;
  LinearPrior prior;
  for (const VariableEntry& e : ne.layout.entries()) {
    std::vector<int>& dst = dropped.count(e.id) ? drop_idx : keep_idx;
    for (int k = 0; k < e.size; ++k) dst.push_back(e.offset + k);
    if (dropped.count(e.id)) continue;
    prior.layout.add(e.id, e.kind, e.size);
    if (e.kind == VariableKind::Pose) {
      prior.linearization_point.poses[e.id] = state.poses.at(e.id);
    } else {
      prior.linearization_point.vectors[e.id] = state.vectors.at(e.id);
    }
  }

  const Eigen::MatrixXd h_kk = ne.H(keep_idx, keep_idx);
  const Eigen::VectorXd g_k = ne.g(keep_idx);
  if (drop_idx.empty()) {
    prior.H = h_kk;
    prior.g = g_k;
    prior.cost0 = ne.cost;
    return prior;
  }
  const Eigen::MatrixXd h_dd = ne.H(drop_idx, drop_idx);
  const Eigen::MatrixXd h_kd = ne.H(keep_idx, drop_idx);
  const Eigen::VectorXd g_d = ne.g(drop_idx);
  const Eigen::LLT<Eigen::MatrixXd> llt(h_dd);
  if (llt.info() != Eigen::Success || !(llt.rcond() > 1e-14)) {
    throw Error(ErrorCode::SingularBlock, "marginalized block is not positive definite");
  }
  const Eigen::MatrixXd hdd_inv_hdk = llt.solve(h_kd.transpose());
  const Eigen::VectorXd hdd_inv_gd = llt.solve(g_d);
  prior.H = h_kk - h_kd * hdd_inv_hdk;
  prior.H = 0.5 * (prior.H + prior.H.transpose()).eval();
  prior.g = g_k - h_kd * hdd_inv_gd;
  prior.cost0 = ne.cost - 0.5 * g_d.dot(hdd_inv_gd);
  return prior;
}

std::string to_string(Termination t) {
  switch (t) {
    case Termination::CostTolerance: return "cost_tolerance";
    case Termination::StepTolerance: return "step_tolerance";
    case Termination::MaxIterations: return "max_iterations";
    case Termination::NoProgress: return "no_progress";
  }
  return "unknown";
}

void OptimizationReport::append(const OptimizationReport& stage) {
  iterations += stage.iterations;
  accepted += stage.accepted;
  rejected += stage.rejected;
  // Stages may re-evaluate the cost with a different residual set; keep the full sequence.
  cost_trace.insert(cost_trace.end(), stage.cost_trace.begin(), stage.cost_trace.end());
  final_lambda = stage.final_lambda;
  termination = stage.termination;
}

void to_json(nlohmann::json& j, const OptimizationReport& r) {
  j = nlohmann::json{{"iterations", r.iterations},
                     {"accepted", r.accepted},
                     {"rejected", r.rejected},
                     {"cost_trace", r.cost_trace},
                     {"final_lambda", r.final_lambda},
                     {"termination", to_string(r.termination)}};
}

OptimizationReport optimize(LeastSquaresProblem& problem, VariableState& state,
                            const OptimizerOptions& opts) {
  OptimizationReport report;
  double lambda = opts.lambda_init;
  const VariableLayout& layout = problem.layout();

  for (int iter = 0; iter < opts.max_iters; ++iter) {
    const NormalEquations ne = problem.linearize(state);
    if (!std::isfinite(ne.cost) || !ne.g.allFinite() || !ne.H.allFinite()) {
      throw Error(ErrorCode::DivergenceDetected, "non-finite cost or normal equations");
    }
    if (report.cost_trace.empty()) report.cost_trace.push_back(ne.cost);
    ++report.iterations;
    if (ne.g.isZero(0.0)) {
      report.termination = Termination::StepTolerance;
      report.final_lambda = lambda;
      return report;
    }

    bool accepted = false;
    while (!accepted) {
      Eigen::VectorXd delta;
      try {
        delta = solve_step(ne, lambda);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::IndefiniteSystem) throw;
        ++report.rejected;
        lambda = lambda > 0.0 ? lambda * opts.lambda_up : 1e-6;
        if (lambda > opts.lambda_max) {
          report.termination = Termination::NoProgress;
          report.final_lambda = lambda;
          return report;
        }
        continue;
      }
      if (delta.norm() <= opts.step_tol) {
        report.termination = Termination::StepTolerance;
        report.final_lambda = lambda;
        return report;
      }
      VariableState candidate = state.retracted(layout, delta);
      const double c = problem.cost(candidate);
      if (std::isfinite(c) && c < ne.cost) {
        state = std::move(candidate);
        report.cost_trace.push_back(c);
        ++report.accepted;
        lambda *= opts.lambda_down;
        accepted = true;
        if ((ne.cost - c) <= opts.cost_tol * ne.cost) {
          report.termination = Termination::CostTolerance;
          report.final_lambda = lambda;
          return report;
        }
      } else {
        ++report.rejected;
        lambda = lambda > 0.0 ? lambda * opts.lambda_up : 1e-6;
        if (lambda > opts.lambda_max) {
          report.termination = Termination::NoProgress;
          report.final_lambda = lambda;
          return report;
        }
      }
    }
  }
  report.termination = Termination::MaxIterations;
  report.final_lambda = lambda;
  return report;
}

}  // namespace codesfm
