#pragma once

// Reduced-order aging simulator: loss of active material on both electrodes
// plus SEI side-reaction lithium loss on the anode, integrated over full
// 100% DoD cycles with piecewise-constant C-rates.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sohtl/error.hpp"

namespace sohtl::sim {

enum class Batch { B1 = 1, B2 = 2, B3 = 3, B4 = 4 };

inline constexpr Batch kAllBatches[] = {Batch::B1, Batch::B2, Batch::B3, Batch::B4};

/// C-rate operating set of a batch [1/h].
std::span<const double> operating_set(Batch batch);
std::string to_string(Batch batch);
/// Accepts "B1".."B4"; throws ContractError otherwise.
Batch parse_batch(std::string_view name);

struct Constants {
  double faraday = 96485.33212;      // C/mol
  double gas_constant = 8.314462618; // J/(mol K)
  double temperature = 298.0;        // K
};

/// Monotone-decreasing graphite OCP proxy, U(soc) = base + amplitude * exp(-decay * soc).
struct AnodeOcp {
  double base = 0.08;      // V
  double amplitude = 0.7;  // V
  double decay = 6.0;      // -
  double operator()(double soc) const;
  bool operator==(const AnodeOcp&) const = default;
};

struct CellParams {
  double eps_am_n = 0.60;       // negative active-material volume fraction
  double eps_am_p = 0.50;       // positive active-material volume fraction
  double radius_n = 5.86e-6;    // m
  double radius_p = 5.22e-6;    // m
  double thickness_n = 85.2e-6; // m
  double thickness_p = 75.6e-6; // m
  double area = 0.6;            // m^2
  double k_am_n = 2.0e-7;       // m^2/(A s), LAM rate constant
  double k_am_p = 2.5e-7;
  double e_am_n = 20000.0;      // J/mol
  double e_am_p = 20000.0;
  double k_fs = 5.0e-13;        // m/s, SEI rate constant
  double c_ec = 4541.0;         // mol/m^3
  double beta_s = 0.5;
  double r_sei_0 = 0.012;       // Ohm m^2
  double r_sei_growth = 2.5e-4; // Ohm m^2 per Ah of lithium consumed by SEI
  double q_nominal = 30.0;      // Ah
  AnodeOcp ocp{};

  bool operator==(const CellParams&) const = default;
};

/// Throws ContractError when an invariant of CellParams is violated.
void validate(const CellParams& params);

struct SimState {
  double eps_am_n = 0.0;
  double eps_am_p = 0.0;
  double q_li = 0.0;       // Ah
  double r_sei = 0.0;      // Ohm m^2
  double soc = 1.0;
  double throughput = 0.0; // Ah

  bool operator==(const SimState&) const = default;
};

/// Beginning-of-life state: fully charged, fresh electrodes and lithium inventory.
SimState fresh_state(const CellParams& params);

struct Segment {
  double c_rate_dis = 0.0; // 1/h
  double c_rate_ch = 0.0;  // 1/h
  double length = 0.0;     // Ah

  bool operator==(const Segment&) const = default;
};

struct CyclingProtocol {
  Batch batch = Batch::B1;
  std::vector<Segment> segments;
  double total_throughput = 0.0; // Ah
  double segment_size = 0.0;     // Ah
  double dod = 1.0;

  /// Segment active at the given cumulative throughput; the last segment
  /// extends past the end.
  const Segment& segment_at(double throughput) const;
  double max_c_rate() const;
};

/// Piecewise-constant protocol whose per-segment discharge and charge rates
/// are drawn uniformly and independently from the batch operating set.
CyclingProtocol make_protocol(Batch batch, double total_throughput, double segment_size,
                              std::uint64_t seed);

/// Draws n cells around `nominal`'s volume fractions with standard deviation
/// rel_sigma * nominal; draws outside (0, 1) are rejected and redrawn. Every
/// other field is copied from `nominal`.
std::vector<CellParams> sample_population(std::size_t n, const CellParams& nominal,
                                          double rel_sigma, std::uint64_t seed);

/// Thrown when an active-material fraction is driven to zero.
struct DegradationFloor : NumericError {
  using NumericError::NumericError;
};

/// One explicit Euler step. `current` is the applied cell current [A],
/// positive on discharge and negative on charge. The side reaction runs only
/// while charging.
SimState step_degradation(const SimState& state, const CellParams& params,
                          const Constants& constants, double current, double dt);

/// Side-reaction current density [A/m^2] (negative, cathodic) for a charging
/// current of magnitude `charge_current` [A]. Exposed for diagnostics.
double side_reaction_current(const SimState& state, const CellParams& params,
                             const Constants& constants, double charge_current);

/// min(Q_n, Q_p, Q_li) / q_nominal with Q_i proportional to eps_am_i and
/// equal to q_nominal at beginning of life. Clamped at 0.
double soh_of_state(const SimState& state, const CellParams& params);

struct TrajectorySample {
  double throughput_kah = 0.0;
  double soh = 1.0;
  // Rates applied over the interval that starts at this sample.
  double c_rate_dis = 0.0;
  double c_rate_ch = 0.0;

  bool operator==(const TrajectorySample&) const = default;
};

struct SohTrajectory {
  std::string cell_id;
  Batch batch = Batch::B1;
  CellParams params;
  std::vector<TrajectorySample> samples;
  bool truncated = false;
};

struct IntegratorSettings {
  double record_interval = 1000.0;   // Ah
  std::size_t steps_per_cycle = 200; // at the protocol's highest C-rate
  double max_relative_change = 1e-3; // per step; dt is halved above this
  double soh_floor = 0.5;
};

SohTrajectory simulate_cell(std::string cell_id, const CellParams& params,
                            const CyclingProtocol& protocol, const Constants& constants,
                            const IntegratorSettings& settings);

}  // namespace sohtl::sim
