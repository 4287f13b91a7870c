#include "sohtl/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "sohtl/error.hpp"
#include "sohtl/rng.hpp"

namespace sohtl::config {

using json = nlohmann::ordered_json;

namespace {

// Reads one JSON object, remembering which keys were consumed so that
// leftovers can be reported as unknown.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + ": expected an object");
  }

  const json* find(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void get(const char* key, double& out) {
    if (const json* v = find(key)) {
      if (!v->is_number()) throw ConfigError(field(key) + ": expected a number");
      out = v->get<double>();
    }
  }
  void get(const char* key, std::size_t& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_integer() || v->get<long long>() < 0)
        throw ConfigError(field(key) + ": expected a non-negative integer");
      out = v->get<std::size_t>();
    }
  }
  void get(const char* key, std::uint64_t& out, int) {
    if (const json* v = find(key)) {
      if (!v->is_number_unsigned() && !(v->is_number_integer() && v->get<long long>() >= 0))
        throw ConfigError(field(key) + ": expected a non-negative integer");
      out = v->get<std::uint64_t>();
    }
  }
  void get(const char* key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) throw ConfigError(field(key) + ": expected a string");
      out = v->get<std::string>();
    }
  }
  void get(const char* key, sim::Batch& out) {
    std::string s;
    if (find(key) == nullptr) return;
    get(key, s);
    try {
      out = sim::parse_batch(s);
    } catch (const ContractError&) {
      throw ConfigError(field(key) + ": unknown batch '" + s + "'");
    }
  }
  void get(const char* key, std::vector<double>& out) {
    if (const json* v = find(key)) {
      if (!v->is_array()) throw ConfigError(field(key) + ": expected an array of numbers");
      out.clear();
      for (const auto& e : *v) {
        if (!e.is_number()) throw ConfigError(field(key) + ": expected an array of numbers");
        out.push_back(e.get<double>());
      }
    }
  }

  std::string field(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.contains(it.key())) throw ConfigError("unknown config key '" + field(it.key().c_str()) + "'");
  }

 private:
  std::string where() const { return path_.empty() ? "config" : path_; }
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

json cell_to_json(const sim::CellParams& c) {
  return json{{"eps_am_n", c.eps_am_n},   {"eps_am_p", c.eps_am_p},       {"radius_n", c.radius_n},
              {"radius_p", c.radius_p},   {"thickness_n", c.thickness_n}, {"thickness_p", c.thickness_p},
              {"area", c.area},           {"k_am_n", c.k_am_n},           {"k_am_p", c.k_am_p},
              {"e_am_n", c.e_am_n},       {"e_am_p", c.e_am_p},           {"k_fs", c.k_fs},
              {"c_ec", c.c_ec},           {"beta_s", c.beta_s},           {"r_sei_0", c.r_sei_0},
              {"r_sei_growth", c.r_sei_growth}, {"q_nominal", c.q_nominal},
              {"ocp", json{{"base", c.ocp.base}, {"amplitude", c.ocp.amplitude}, {"decay", c.ocp.decay}}}};
}

void cell_from_json(const json& j, const std::string& path, sim::CellParams& c) {
  ObjectReader r(j, path);
  r.get("eps_am_n", c.eps_am_n);
  r.get("eps_am_p", c.eps_am_p);
  r.get("radius_n", c.radius_n);
  r.get("radius_p", c.radius_p);
  r.get("thickness_n", c.thickness_n);
  r.get("thickness_p", c.thickness_p);
  r.get("area", c.area);
  r.get("k_am_n", c.k_am_n);
  r.get("k_am_p", c.k_am_p);
  r.get("e_am_n", c.e_am_n);
  r.get("e_am_p", c.e_am_p);
  r.get("k_fs", c.k_fs);
  r.get("c_ec", c.c_ec);
  r.get("beta_s", c.beta_s);
  r.get("r_sei_0", c.r_sei_0);
  r.get("r_sei_growth", c.r_sei_growth);
  r.get("q_nominal", c.q_nominal);
  if (const json* o = r.find("ocp")) {
    ObjectReader ro(*o, path + ".ocp");
    ro.get("base", c.ocp.base);
    ro.get("amplitude", c.ocp.amplitude);
    ro.get("decay", c.ocp.decay);
    ro.finish();
  }
  r.finish();
}

std::string selection_name(adapt::BandwidthSelection s) {
  return s == adapt::BandwidthSelection::fixed ? "fixed" : "median";
}

json to_json_value(const RunConfig& c) {
  const auto& s = c.simulator;
  json sim{{"cells_per_source_batch", s.cells_per_source_batch},
           {"target_cells", s.target_cells},
           {"total_throughput_kah", s.total_throughput_kah},
           {"segment_kah", s.segment_kah},
           {"record_interval_kah", s.record_interval_kah},
           {"spread_fraction", s.spread_fraction},
           {"spread_to_sigma", s.spread_to_sigma},
           {"target_shift_n", s.target_shift_n},
           {"target_shift_p", s.target_shift_p},
           {"target_sigma_scale", s.target_sigma_scale},
           {"steps_per_cycle", s.steps_per_cycle},
           {"max_relative_change", s.max_relative_change},
           {"soh_floor", s.soh_floor},
           {"temperature", s.temperature},
           {"nominal", cell_to_json(s.nominal)}};
  json model{{"window", c.model.window},         {"hidden", c.model.hidden},
             {"learning_rate", c.model.learning_rate}, {"batch_size", c.model.batch_size},
             {"epochs", c.model.epochs},         {"patience", c.model.patience},
             {"final_lr_fraction", c.model.final_lr_fraction},
             {"clip_norm", c.model.clip_norm}};
  json adapt{{"lambda", c.adapt.lambda ? json(*c.adapt.lambda) : json("lobo")},
             {"grid", c.adapt.grid},
             {"kernel", json{{"selection", selection_name(c.adapt.kernel.selection)}, {"sigma", c.adapt.kernel.sigma}}},
             {"refine_points", c.adapt.refine_points},
             {"tune_epochs", c.adapt.tune_epochs}};
  json finetune{{"epochs", c.finetune.epochs},
                {"batch_size", c.finetune.batch_size},
                {"learning_rate", c.finetune.learning_rate}};
  json conformal{{"alpha", c.conformal.alpha}, {"calib_per_batch", c.conformal.calib_per_batch}};
  json split{{"cutoff_kah", c.split.cutoff_kah},
             {"test_per_batch", c.split.test_per_batch},
             {"target_batch", sim::to_string(c.split.target_batch)}};
  return json{{"seed", c.seed},         {"jobs", c.jobs},         {"paths", json{{"output", c.output}}},
              {"simulator", sim},       {"model", model},         {"adapt", adapt},
              {"finetune", finetune},   {"conformal", conformal}, {"split", split}};
}

RunConfig from_json_value(const json& j) {
  RunConfig c;
  ObjectReader r(j, "");
  r.get("seed", c.seed, 0);
  r.get("jobs", c.jobs);
  if (const json* p = r.find("paths")) {
    ObjectReader rp(*p, "paths");
    rp.get("output", c.output);
    rp.finish();
  }
  if (const json* v = r.find("simulator")) {
    auto& s = c.simulator;
    ObjectReader rs(*v, "simulator");
    rs.get("cells_per_source_batch", s.cells_per_source_batch);
    rs.get("target_cells", s.target_cells);
    rs.get("total_throughput_kah", s.total_throughput_kah);
    rs.get("segment_kah", s.segment_kah);
    rs.get("record_interval_kah", s.record_interval_kah);
    rs.get("spread_fraction", s.spread_fraction);
    rs.get("spread_to_sigma", s.spread_to_sigma);
    rs.get("target_shift_n", s.target_shift_n);
    rs.get("target_shift_p", s.target_shift_p);
    rs.get("target_sigma_scale", s.target_sigma_scale);
    rs.get("steps_per_cycle", s.steps_per_cycle);
    rs.get("max_relative_change", s.max_relative_change);
    rs.get("soh_floor", s.soh_floor);
    rs.get("temperature", s.temperature);
    if (const json* n = rs.find("nominal")) cell_from_json(*n, "simulator.nominal", s.nominal);
    rs.finish();
  }
  if (const json* v = r.find("model")) {
    auto& m = c.model;
    ObjectReader rm(*v, "model");
    rm.get("window", m.window);
    rm.get("hidden", m.hidden);
    rm.get("learning_rate", m.learning_rate);
    rm.get("batch_size", m.batch_size);
    rm.get("epochs", m.epochs);
    rm.get("patience", m.patience);
    rm.get("final_lr_fraction", m.final_lr_fraction);
    rm.get("clip_norm", m.clip_norm);
    rm.finish();
  }
  if (const json* v = r.find("adapt")) {
    auto& a = c.adapt;
    ObjectReader ra(*v, "adapt");
    if (const json* l = ra.find("lambda")) {
      if (l->is_number()) {
        a.lambda = l->get<double>();
      } else if (l->is_string() && l->get<std::string>() == "lobo") {
        a.lambda.reset();
      } else {
        throw ConfigError("adapt.lambda: expected a number or \"lobo\"");
      }
    }
    ra.get("grid", a.grid);
    if (const json* k = ra.find("kernel")) {
      ObjectReader rk(*k, "adapt.kernel");
      std::string sel = selection_name(a.kernel.selection);
      rk.get("selection", sel);
      if (sel == "fixed") {
        a.kernel.selection = adapt::BandwidthSelection::fixed;
      } else if (sel == "median") {
        a.kernel.selection = adapt::BandwidthSelection::median_heuristic;
      } else {
        throw ConfigError("adapt.kernel.selection: expected \"fixed\" or \"median\"");
      }
      rk.get("sigma", a.kernel.sigma);
      rk.finish();
    }
    ra.get("refine_points", a.refine_points);
    ra.get("tune_epochs", a.tune_epochs);
    ra.finish();
  }
  if (const json* v = r.find("finetune")) {
    ObjectReader rf(*v, "finetune");
    rf.get("epochs", c.finetune.epochs);
    rf.get("batch_size", c.finetune.batch_size);
    rf.get("learning_rate", c.finetune.learning_rate);
    rf.finish();
  }
  if (const json* v = r.find("conformal")) {
    ObjectReader rc(*v, "conformal");
    rc.get("alpha", c.conformal.alpha);
    rc.get("calib_per_batch", c.conformal.calib_per_batch);
    rc.finish();
  }
  if (const json* v = r.find("split")) {
    ObjectReader rs(*v, "split");
    rs.get("cutoff_kah", c.split.cutoff_kah);
    rs.get("test_per_batch", c.split.test_per_batch);
    rs.get("target_batch", c.split.target_batch);
    rs.finish();
  }
  r.finish();
  validate(c);
  return c;
}

void require(bool ok, const std::string& field, const std::string& rule) {
  if (!ok) throw ConfigError(field + ": " + rule);
}

bool finite_positive(double x) { return std::isfinite(x) && x > 0.0; }

}  // namespace

void validate(const RunConfig& c) {
  require(c.jobs >= 1, "jobs", "must be at least 1");
  require(!c.output.empty(), "paths.output", "must not be empty");

  const auto& s = c.simulator;
  require(s.cells_per_source_batch >= 1, "simulator.cells_per_source_batch", "must be at least 1");
  require(s.target_cells >= 1, "simulator.target_cells", "must be at least 1");
  require(finite_positive(s.total_throughput_kah), "simulator.total_throughput_kah", "must be positive");
  require(finite_positive(s.segment_kah), "simulator.segment_kah", "must be positive");
  require(finite_positive(s.record_interval_kah), "simulator.record_interval_kah", "must be positive");
  const double ratio = s.segment_kah / s.record_interval_kah;
  require(std::abs(ratio - std::round(ratio)) < 1e-9 * ratio, "simulator.record_interval_kah",
          "must divide simulator.segment_kah");
  require(s.spread_fraction >= 0.0 && s.spread_fraction < 1.0, "simulator.spread_fraction", "must lie in [0, 1)");
  require(finite_positive(s.spread_to_sigma), "simulator.spread_to_sigma", "must be positive");
  require(s.target_shift_n > -1.0 && std::isfinite(s.target_shift_n), "simulator.target_shift_n", "must exceed -1");
  require(s.target_shift_p > -1.0 && std::isfinite(s.target_shift_p), "simulator.target_shift_p", "must exceed -1");
  require(s.target_sigma_scale >= 0.0 && std::isfinite(s.target_sigma_scale), "simulator.target_sigma_scale",
          "must be non-negative");
  require(s.steps_per_cycle >= 1, "simulator.steps_per_cycle", "must be at least 1");
  require(finite_positive(s.max_relative_change), "simulator.max_relative_change", "must be positive");
  require(s.soh_floor >= 0.0 && s.soh_floor < 1.0, "simulator.soh_floor", "must lie in [0, 1)");
  require(finite_positive(s.temperature), "simulator.temperature", "must be positive");
  try {
    sim::validate(s.nominal);
    sim::CellParams shifted = s.nominal;
    shifted.eps_am_n *= 1.0 + s.target_shift_n;
    shifted.eps_am_p *= 1.0 + s.target_shift_p;
    sim::validate(shifted);
  } catch (const ContractError& e) {
    throw ConfigError(std::string("simulator.nominal: ") + e.what());
  }

  const auto& m = c.model;
  require(m.window >= 1, "model.window", "must be at least 1");
  require(m.hidden >= 1, "model.hidden", "must be at least 1");
  require(finite_positive(m.learning_rate), "model.learning_rate", "must be positive");
  require(m.batch_size >= 1, "model.batch_size", "must be at least 1");
  require(m.final_lr_fraction > 0.0 && m.final_lr_fraction <= 1.0, "model.final_lr_fraction", "must lie in (0, 1]");
  require(finite_positive(m.clip_norm), "model.clip_norm", "must be positive");

  const auto& a = c.adapt;
  if (a.lambda) require(*a.lambda >= 0.0 && std::isfinite(*a.lambda), "adapt.lambda", "must be non-negative");
  require(!a.grid.empty(), "adapt.grid", "must not be empty");
  for (double l : a.grid) require(l >= 0.0 && l <= 1.0, "adapt.grid", "values must lie in [0, 1]");
  require(finite_positive(a.kernel.sigma), "adapt.kernel.sigma", "must be positive");

  require(c.finetune.batch_size >= 1, "finetune.batch_size", "must be at least 1");
  require(finite_positive(c.finetune.learning_rate), "finetune.learning_rate", "must be positive");

  require(c.conformal.alpha > 0.0 && c.conformal.alpha < 1.0, "conformal.alpha", "must lie in (0, 1)");
  require(c.conformal.calib_per_batch >= 1, "conformal.calib_per_batch", "must be at least 1");

  require(c.split.cutoff_kah >= 0.0 && std::isfinite(c.split.cutoff_kah), "split.cutoff_kah",
          "must be non-negative");
}

RunConfig parse(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return from_json_value(j);
}

RunConfig load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

RunConfig with_overrides(const RunConfig& base, const std::vector<std::string>& assignments) {
  json j = to_json_value(base);
  for (const auto& a : assignments) {
    const auto eq = a.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + a + "' is not of the form key=value");
    const std::string key = a.substr(0, eq);
    const std::string text = a.substr(eq + 1);

    json* node = &j;
    std::string walked;
    std::size_t start = 0;
    for (;;) {
      const auto dot = key.find('.', start);
      const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      walked += (walked.empty() ? "" : ".") + part;
      if (!node->is_object() || !node->contains(part)) throw ConfigError("unknown config key '" + walked + "'");
      node = &(*node)[part];
      if (dot == std::string::npos) break;
      start = dot + 1;
    }
    json value;
    try {
      value = json::parse(text);
    } catch (const json::parse_error&) {
      value = text;
    }
    *node = value;
  }
  return from_json_value(j);
}

std::string to_json(const RunConfig& config) { return to_json_value(config).dump(2) + "\n"; }

void write_resolved(const RunConfig& config, const std::filesystem::path& path) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << to_json(config);
  if (!out) throw DataError("failed writing " + path.string());
}

std::uint64_t config_hash(const RunConfig& config) { return stable_hash(to_json(config)); }

data::SplitOptions split_options(const RunConfig& c) {
  data::SplitOptions o;
  o.window = c.model.window;
  o.cutoff_kah = c.split.cutoff_kah;
  o.calib_per_batch = c.conformal.calib_per_batch;
  o.test_per_batch = c.split.test_per_batch;
  o.target_batch = c.split.target_batch;
  o.seed = c.seed;
  return o;
}

nn::ModelShape model_shape(const RunConfig& c) {
  return {data::kNumFeatures, c.model.hidden, c.model.window};
}

adapt::AdaptConfig adapt_config(const RunConfig& c) {
  adapt::AdaptConfig a;
  a.shape = model_shape(c);
  a.train.epochs = c.model.epochs;
  a.train.batch_size = c.model.batch_size;
  a.train.adam.learning_rate = c.model.learning_rate;
  a.train.clip_norm = c.model.clip_norm;
  a.train.patience = c.model.patience;
  a.train.final_lr_fraction = c.model.final_lr_fraction;
  a.kernel = c.adapt.kernel;
  return a;
}

adapt::FineTuneConfig finetune_config(const RunConfig& c) {
  adapt::FineTuneConfig f;
  f.epochs = c.finetune.epochs;
  f.batch_size = c.finetune.batch_size;
  f.adam.learning_rate = c.finetune.learning_rate;
  return f;
}

sim::IntegratorSettings integrator_settings(const RunConfig& c) {
  sim::IntegratorSettings s;
  s.record_interval = c.simulator.record_interval_kah * 1000.0;
  s.steps_per_cycle = c.simulator.steps_per_cycle;
  s.max_relative_change = c.simulator.max_relative_change;
  s.soh_floor = c.simulator.soh_floor;
  return s;
}

}  // namespace sohtl::config
