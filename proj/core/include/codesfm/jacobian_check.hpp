#pragma once

#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "codesfm/sfm.hpp"
#include "codesfm/warp.hpp"

namespace codesfm {

struct JacobianCheckOptions {
  double step = 1e-4;
  double tolerance = 1e-4;
  /// Pixels whose finite-difference and analytic rows are both below this norm pass.
  double abs_floor = 1e-9;
  int level = 0;
  ResidualOptions residual;
};

/// Agreement of one residual type with one variable group ("pose_a.translation", ...).
struct JacobianGroupStats {
  std::string residual;
  std::string variable;
  std::size_t checked = 0;
  std::size_t passed = 0;
  double max_rel = 0.0;
  double p95_rel = 0.0;

  double pass_fraction() const { return checked == 0 ? 0.0 : static_cast<double>(passed) / checked; }
};

struct JacobianCheckReport {
  std::vector<JacobianGroupStats> groups;
  double seconds = 0.0;

  bool ok(double min_fraction = 0.95) const;
};

void to_json(nlohmann::json& j, const JacobianCheckReport& r);

/// Central differences of the photometric (a into b) and geometric residuals against their
/// analytic Jacobians for the poses and codes of both frames. A pixel counts for a group when it
/// is valid, unclamped and keeps its validity under every perturbation; it passes when
/// |J - J_fd| <= tolerance |J_fd| over the group's columns.
JacobianCheckReport check_jacobians(const Keyframe& a, const Keyframe& b,
                                    const CameraIntrinsics& camera, const ProximityParams& params,
                                    const JacobianCheckOptions& opts = {});

}  // namespace codesfm
