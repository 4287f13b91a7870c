#pragma once

#include <cmath>
#include <string>

#include "sohtl/cell_sim.hpp"

namespace testutil {

// Synthetic trajectory with 1 kAh spacing. SOH decays linearly with `slope`
// per step plus a small curvature; rates alternate inside the batch set.
inline sohtl::sim::SohTrajectory linear_traj(const std::string& id, sohtl::sim::Batch batch, std::size_t n,
                                             double slope, double curvature = 1e-5) {
  sohtl::sim::SohTrajectory t;
  t.cell_id = id;
  t.batch = batch;
  const auto set = sohtl::sim::operating_set(batch);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = static_cast<double>(i);
    t.samples.push_back({x, 1.0 - slope * x - curvature * x * x, set[i % set.size()], set[(i / 2) % set.size()]});
  }
  return t;
}

}  // namespace testutil
