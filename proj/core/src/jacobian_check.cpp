#include "codesfm/jacobian_check.hpp"

#include <algorithm>
#include <chrono>
#include <functional>

#include <nlohmann/json.hpp>

#include "codesfm/error.hpp"

namespace codesfm {

bool JacobianCheckReport::ok(double min_fraction) const {
  if (groups.empty()) return false;
  return std::all_of(groups.begin(), groups.end(),
                     [&](const JacobianGroupStats& g) { return g.pass_fraction() >= min_fraction; });
}

void to_json(nlohmann::json& j, const JacobianCheckReport& r) {
  j = nlohmann::json{{"seconds", r.seconds}, {"groups", nlohmann::json::array()}};
  for (const JacobianGroupStats& g : r.groups) {
    j["groups"].push_back({{"residual", g.residual},
                           {"variable", g.variable},
                           {"checked", g.checked},
                           {"passed", g.passed},
                           {"pass_fraction", g.pass_fraction()},
                           {"max_rel", g.max_rel},
                           {"p95_rel", g.p95_rel}});
  }
}

namespace {

struct Group {
  std::string name;
  // Perturbs column `k` of the group by `h` and evaluates the block.
  int columns;
  std::function<ResidualBlock(int k, double h)> eval;
  std::function<Eigen::VectorXd(const ResidualBlock&, Eigen::Index row)> analytic;
};

JacobianGroupStats compare(const std::string& residual, const Group& g, const ResidualBlock& base,
                           const std::vector<std::uint8_t>& usable, const JacobianCheckOptions& opts) {
  const Eigen::Index n = base.size();
  Eigen::MatrixXd fd(n, g.columns);
  std::vector<std::uint8_t> ok = usable;
  for (int k = 0; k < g.columns; ++k) {
    const ResidualBlock plus = g.eval(k, opts.step);
    const ResidualBlock minus = g.eval(k, -opts.step);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto s = static_cast<std::size_t>(i);
      if (!plus.valid[s] || !minus.valid[s]) ok[s] = 0;
      fd(i, k) = (plus.residuals[i] - minus.residuals[i]) / (2.0 * opts.step);
    }
  }
  JacobianGroupStats st;
  st.residual = residual;
  st.variable = g.name;
  std::vector<double> rel;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!ok[static_cast<std::size_t>(i)]) continue;
    const Eigen::VectorXd ja = g.analytic(base, i);
    const Eigen::VectorXd jf = fd.row(i).transpose();
    const double err = (ja - jf).norm();
    const double scale = jf.norm();
    double r = 0.0;
    if (scale < opts.abs_floor) {
      r = ja.norm() < opts.abs_floor ? 0.0 : err / opts.abs_floor;
    } else {
      r = err / scale;
    }
    rel.push_back(r);
    ++st.checked;
    if (r <= opts.tolerance) ++st.passed;
  }
  if (!rel.empty()) {
    st.max_rel = *std::max_element(rel.begin(), rel.end());
    const std::size_t k = std::min(rel.size() - 1, rel.size() * 95 / 100);
    std::nth_element(rel.begin(), rel.begin() + static_cast<std::ptrdiff_t>(k), rel.end());
    st.p95_rel = rel[k];
  }
  return st;
}

}  // namespace

JacobianCheckReport check_jacobians(const Keyframe& a, const Keyframe& b,
                                    const CameraIntrinsics& camera, const ProximityParams& params,
                                    const JacobianCheckOptions& opts) {
  a.validate();
  b.validate();
  const auto t0 = std::chrono::steady_clock::now();
  JacobianCheckReport report;

  for (int type = 0; type < 2; ++type) {
    const bool photo = type == 0;
    auto evaluate = [&](const Se3Pose& pa, const Se3Pose& pb, const Code& ca, const Code& cb,
                        bool jac) {
      ResidualOptions ro = opts.residual;
      ro.compute_jacobians = jac;
      const FrameView va{a.image.get(), a.decoder.get(), &ca, pa};
      const FrameView vb{b.image.get(), b.decoder.get(), &cb, pb};
      return photo ? photometric_residual(va, vb, opts.level, camera, params, ro)
                   : geometric_residual(va, vb, opts.level, camera, params, ro);
    };
    const ResidualBlock base = evaluate(a.pose, b.pose, a.code, b.code, true);

    // Pixels whose decoded proximity sits on the clamp have no code derivative.
    const ProximityMap pa = decode_proximity(*a.decoder, a.code, opts.level);
    std::vector<std::uint8_t> usable(base.valid);
    for (std::size_t i = 0; i < usable.size(); ++i) usable[i] = usable[i] && !pa.clamped[i];

    auto unit = [](int size, int k, double h) {
      Eigen::VectorXd d = Eigen::VectorXd::Zero(size);
      d[k] = h;
      return d;
    };
    auto pose_delta = [&](int offset, int k, double h) { return Vec6(unit(6, offset + k, h)); };

    std::vector<Group> groups;
    groups.push_back({"pose_a.translation", 3,
                      [&](int k, double h) {
                        return evaluate(a.pose.retract(pose_delta(0, k, h)), b.pose, a.code, b.code, false);
                      },
                      [](const ResidualBlock& r, Eigen::Index i) {
                        return Eigen::VectorXd(r.j_pose_a.row(i).head<3>().transpose());
                      }});
    groups.push_back({"pose_a.rotation", 3,
                      [&](int k, double h) {
                        return evaluate(a.pose.retract(pose_delta(3, k, h)), b.pose, a.code, b.code, false);
                      },
                      [](const ResidualBlock& r, Eigen::Index i) {
                        return Eigen::VectorXd(r.j_pose_a.row(i).tail<3>().transpose());
                      }});
    groups.push_back({"pose_b.translation", 3,
                      [&](int k, double h) {
                        return evaluate(a.pose, b.pose.retract(pose_delta(0, k, h)), a.code, b.code, false);
                      },
                      [](const ResidualBlock& r, Eigen::Index i) {
                        return Eigen::VectorXd(r.j_pose_b.row(i).head<3>().transpose());
                      }});
    groups.push_back({"pose_b.rotation", 3,
                      [&](int k, double h) {
                        return evaluate(a.pose, b.pose.retract(pose_delta(3, k, h)), a.code, b.code, false);
                      },
                      [](const ResidualBlock& r, Eigen::Index i) {
                        return Eigen::VectorXd(r.j_pose_b.row(i).tail<3>().transpose());
                      }});
    const int csa = static_cast<int>(a.code.size());
    groups.push_back({"code_a", csa,
                      [&](int k, double h) {
                        return evaluate(a.pose, b.pose, a.code + unit(csa, k, h), b.code, false);
                      },
                      [](const ResidualBlock& r, Eigen::Index i) {
                        return Eigen::VectorXd(r.j_code_a.row(i).transpose());
                      }});
    if (!photo) {
      const int csb = static_cast<int>(b.code.size());
      groups.push_back({"code_b", csb,
                        [&, csb](int k, double h) {
                          return evaluate(a.pose, b.pose, a.code, b.code + unit(csb, k, h), false);
                        },
                        [](const ResidualBlock& r, Eigen::Index i) {
                          return Eigen::VectorXd(r.j_code_b.row(i).transpose());
                        }});
    }
    for (const Group& g : groups) {
      report.groups.push_back(compare(photo ? "photometric" : "geometric", g, base, usable, opts));
    }
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

}  // namespace codesfm
