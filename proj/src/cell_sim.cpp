#include "sohtl/cell_sim.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <random>

#include "sohtl/rng.hpp"

namespace sohtl::sim {

namespace {

constexpr std::array<double, 3> kSetB1{3.0, 4.0, 5.0};
constexpr std::array<double, 3> kSetB2{1.0, 2.0, 3.0};
constexpr std::array<double, 7> kSetB3{1.0 / 3.0, 0.5, 1.0, 2.0, 3.0, 4.0, 5.0};
constexpr std::array<double, 3> kSetB4{1.0 / 3.0, 0.5, 1.0};

bool finite_state(const SimState& s) {
  return std::isfinite(s.eps_am_n) && std::isfinite(s.eps_am_p) && std::isfinite(s.q_li) &&
         std::isfinite(s.r_sei) && std::isfinite(s.soc) && std::isfinite(s.throughput);
}

double relative_change(double before, double after) {
  const double scale = std::abs(before);
  return scale > 0.0 ? std::abs(after - before) / scale : std::abs(after - before);
}

double max_relative_change(const SimState& a, const SimState& b) {
  return std::max({relative_change(a.eps_am_n, b.eps_am_n), relative_change(a.eps_am_p, b.eps_am_p),
                   relative_change(a.q_li, b.q_li), relative_change(a.r_sei, b.r_sei)});
}

}  // namespace

std::span<const double> operating_set(Batch batch) {
  switch (batch) {
    case Batch::B1: return kSetB1;
    case Batch::B2: return kSetB2;
    case Batch::B3: return kSetB3;
    case Batch::B4: return kSetB4;
  }
  throw ContractError("unknown batch id " + std::to_string(static_cast<int>(batch)));
}

std::string to_string(Batch batch) {
  const int id = static_cast<int>(batch);
  if (id < 1 || id > 4) throw ContractError("unknown batch id " + std::to_string(id));
  return "B" + std::to_string(id);
}

Batch parse_batch(std::string_view name) {
  if (name.size() == 2 && name[0] == 'B' && name[1] >= '1' && name[1] <= '4')
    return static_cast<Batch>(name[1] - '0');
  throw ContractError("unknown batch id '" + std::string(name) + "'");
}

double AnodeOcp::operator()(double soc) const { return base + amplitude * std::exp(-decay * soc); }

void validate(const CellParams& p) {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw ContractError(std::string("invalid cell parameter: ") + what);
  };
  require(p.eps_am_n > 0.0 && p.eps_am_n < 1.0, "eps_am_n must lie in (0, 1)");
  require(p.eps_am_p > 0.0 && p.eps_am_p < 1.0, "eps_am_p must lie in (0, 1)");
  require(p.radius_n > 0.0 && p.radius_p > 0.0, "particle radii must be positive");
  require(p.thickness_n > 0.0 && p.thickness_p > 0.0, "electrode thicknesses must be positive");
  require(p.area > 0.0, "electrode area must be positive");
  require(p.k_am_n >= 0.0 && p.k_am_p >= 0.0, "LAM rate constants must be non-negative");
  require(p.e_am_n >= 0.0 && p.e_am_p >= 0.0, "LAM activation energies must be non-negative");
  require(p.k_fs >= 0.0, "SEI rate constant must be non-negative");
  require(p.c_ec > 0.0, "c_ec must be positive");
  require(p.beta_s > 0.0 && p.beta_s < 1.0, "beta_s must lie in (0, 1)");
  require(p.r_sei_0 > 0.0, "r_sei_0 must be positive");
  require(p.r_sei_growth >= 0.0, "r_sei_growth must be non-negative");
  require(p.q_nominal > 0.0, "q_nominal must be positive");
}

SimState fresh_state(const CellParams& params) {
  SimState s;
  s.eps_am_n = params.eps_am_n;
  s.eps_am_p = params.eps_am_p;
  s.q_li = params.q_nominal;
  s.r_sei = params.r_sei_0;
  s.soc = 1.0;
  s.throughput = 0.0;
  return s;
}

const Segment& CyclingProtocol::segment_at(double throughput) const {
  if (segments.empty()) throw ContractError("protocol has no segments");
  if (segment_size <= 0.0) return segments.front();
  const double idx = std::floor(throughput / segment_size + 1e-9);
  if (idx <= 0.0) return segments.front();
  const auto i = static_cast<std::size_t>(idx);
  return segments[std::min(i, segments.size() - 1)];
}

double CyclingProtocol::max_c_rate() const {
  double m = 0.0;
  for (const auto& s : segments) m = std::max({m, s.c_rate_dis, s.c_rate_ch});
  return m;
}

CyclingProtocol make_protocol(Batch batch, double total_throughput, double segment_size,
                              std::uint64_t seed) {
  const auto rates = operating_set(batch);
  if (!(total_throughput > 0.0)) throw ContractError("total_throughput must be positive");
  if (!(segment_size > 0.0)) throw ContractError("segment_size must be positive");

  CyclingProtocol protocol;
  protocol.batch = batch;
  protocol.total_throughput = total_throughput;
  protocol.segment_size = segment_size;

  Rng rng = make_stream(seed, 0x70c0ULL, static_cast<std::uint64_t>(batch));
  std::uniform_int_distribution<std::size_t> pick(0, rates.size() - 1);
  double remaining = total_throughput;
  while (remaining > 1e-9 * total_throughput) {
    Segment s;
    s.c_rate_dis = rates[pick(rng)];
    s.c_rate_ch = rates[pick(rng)];
    s.length = std::min(segment_size, remaining);
    remaining -= s.length;
    protocol.segments.push_back(s);
  }
  return protocol;
}

std::vector<CellParams> sample_population(std::size_t n, const CellParams& nominal,
                                          double rel_sigma, std::uint64_t seed) {
  if (n == 0) throw ContractError("empty population requested");
  validate(nominal);
  if (!(rel_sigma >= 0.0) || !std::isfinite(rel_sigma))
    throw ContractError("rel_sigma must be a non-negative finite fraction");

  Rng rng = make_stream(seed, 0x5eedULL);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double sigma_n = rel_sigma * nominal.eps_am_n;
  const double sigma_p = rel_sigma * nominal.eps_am_p;
  auto draw = [&](double mean, double sigma) {
    for (;;) {
      const double v = mean + sigma * normal(rng);
      if (v > 0.0 && v < 1.0) return v;
    }
  };

  std::vector<CellParams> cells(n, nominal);
  for (auto& c : cells) {
    c.eps_am_n = draw(nominal.eps_am_n, sigma_n);
    c.eps_am_p = draw(nominal.eps_am_p, sigma_p);
  }
  return cells;
}

double side_reaction_current(const SimState& s, const CellParams& p, const Constants& k,
                             double charge_current) {
  // Specific surface area a_n = 3 eps / R over the electrode volume A L.
  const double reaction_area = 3.0 * s.eps_am_n / p.radius_n * p.area * p.thickness_n;
  const double i_t = std::abs(charge_current) / reaction_area;
  const double phi_1 = p.ocp(s.soc) - s.r_sei * i_t;
  const double f_rt = k.faraday / (k.gas_constant * k.temperature);
  return -k.faraday * p.k_fs * p.c_ec * std::exp(-p.beta_s * f_rt * (phi_1 - s.r_sei * i_t));
}

SimState step_degradation(const SimState& s, const CellParams& p, const Constants& k,
                          double current, double dt) {
  if (!(dt > 0.0)) throw ContractError("step_degradation: dt must be positive");
  if (!finite_state(s)) throw NumericError("step_degradation: non-finite state");

  const double rt = k.gas_constant * k.temperature;
  const double abs_i = std::abs(current);

  SimState next = s;
  next.eps_am_n -= dt * p.k_am_n * (3.0 * p.radius_n / (s.eps_am_n * p.area * p.thickness_n)) *
                   abs_i * std::exp(-p.e_am_n / rt);
  next.eps_am_p -= dt * p.k_am_p * (3.0 * p.radius_p / (s.eps_am_p * p.area * p.thickness_p)) *
                   abs_i * std::exp(-p.e_am_p / rt);

  if (current < 0.0) {
    const double reaction_area = 3.0 * s.eps_am_n / p.radius_n * p.area * p.thickness_n;
    const double i_s = side_reaction_current(s, p, k, current);
    const double lost = std::abs(i_s) * reaction_area * dt / 3600.0;
    next.q_li -= lost;
    next.r_sei += p.r_sei_growth * lost;
  }

  const double capacity = soh_of_state(s, p) * p.q_nominal;
  if (capacity > 0.0) next.soc = std::clamp(s.soc - current * dt / (3600.0 * capacity), 0.0, 1.0);
  next.throughput += abs_i * dt / 3600.0;

  if (!finite_state(next)) throw NumericError("step_degradation: non-finite state after step");
  if (next.eps_am_n <= 0.0 || next.eps_am_p <= 0.0)
    throw DegradationFloor("step_degradation: active material exhausted");
  next.q_li = std::max(next.q_li, 0.0);
  return next;
}

double soh_of_state(const SimState& s, const CellParams& p) {
  const double q_n = p.q_nominal * s.eps_am_n / p.eps_am_n;
  const double q_p = p.q_nominal * s.eps_am_p / p.eps_am_p;
  return std::max(0.0, std::min({q_n, q_p, s.q_li}) / p.q_nominal);
}

SohTrajectory simulate_cell(std::string cell_id, const CellParams& params,
                            const CyclingProtocol& protocol, const Constants& constants,
                            const IntegratorSettings& settings) {
  validate(params);
  if (protocol.segments.empty()) throw ContractError(cell_id + ": protocol has no segments");
  const double ri = settings.record_interval;
  if (!(ri > 0.0)) throw ContractError(cell_id + ": record_interval must be positive");
  const double per_segment = protocol.segment_size / ri;
  const auto records_per_segment = static_cast<std::size_t>(std::llround(per_segment));
  if (records_per_segment == 0 || std::abs(per_segment - records_per_segment) > 1e-9)
    throw ContractError(cell_id + ": record_interval must divide segment_size");
  if (settings.steps_per_cycle == 0) throw ContractError(cell_id + ": steps_per_cycle must be > 0");

  const auto n_records =
      static_cast<std::size_t>(std::floor(protocol.total_throughput / ri + 1e-9));
  auto rates_from = [&](std::size_t record) -> const Segment& {
    return protocol.segments[std::min(record / records_per_segment, protocol.segments.size() - 1)];
  };

  SohTrajectory traj;
  traj.cell_id = std::move(cell_id);
  traj.batch = protocol.batch;
  traj.params = params;
  traj.samples.reserve(n_records + 1);
  traj.samples.push_back({0.0, 1.0, rates_from(0).c_rate_dis, rates_from(0).c_rate_ch});

  // A full cycle at the highest rate takes 2 * 3600 / c seconds.
  const double dt_nominal =
      2.0 * 3600.0 / (protocol.max_c_rate() * static_cast<double>(settings.steps_per_cycle));

  SimState state = fresh_state(params);
  bool discharging = true;
  std::size_t k = 1;
  try {
    while (k <= n_records) {
      const Segment& seg = rates_from(k - 1);
      const double rate = discharging ? seg.c_rate_dis : seg.c_rate_ch;
      const double abs_i = rate * params.q_nominal;
      const double current = discharging ? abs_i : -abs_i;
      const double capacity = soh_of_state(state, params) * params.q_nominal;

      const double ah_to_soc_end = discharging ? state.soc * capacity : (1.0 - state.soc) * capacity;
      const double ah_to_record = static_cast<double>(k) * ri - state.throughput;
      double ah = abs_i * dt_nominal / 3600.0;
      bool hits_soc = false;
      bool hits_record = false;
      if (ah_to_soc_end <= ah) {
        ah = ah_to_soc_end;
        hits_soc = true;
      }
      if (ah_to_record <= ah) {
        hits_soc = ah_to_record == ah_to_soc_end;
        ah = ah_to_record;
        hits_record = true;
      }

      SimState next = state;
      if (ah > 0.0) {
        double dt = ah * 3600.0 / abs_i;
        next = step_degradation(state, params, constants, current, dt);
        while (max_relative_change(state, next) > settings.max_relative_change) {
          dt *= 0.5;
          hits_soc = hits_record = false;
          next = step_degradation(state, params, constants, current, dt);
        }
      }
      if (hits_soc) {
        next.soc = discharging ? 0.0 : 1.0;
        discharging = !discharging;
      }
      if (hits_record) next.throughput = static_cast<double>(k) * ri;
      state = next;

      const double soh = soh_of_state(state, params);
      if (soh <= settings.soh_floor) {
        traj.truncated = true;
        break;
      }
      if (hits_record) {
        const Segment& upcoming = rates_from(k);
        traj.samples.push_back(
            {state.throughput / 1000.0, soh, upcoming.c_rate_dis, upcoming.c_rate_ch});
        ++k;
      }
    }
  } catch (const DegradationFloor&) {
    traj.truncated = true;
  } catch (const NumericError& e) {
    throw NumericError(traj.cell_id + ": " + e.what());
  }
  return traj;
}

}  // namespace sohtl::sim
