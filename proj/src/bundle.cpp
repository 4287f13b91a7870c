#include "sohtl/bundle.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "sohtl/error.hpp"

namespace sohtl::bundle {

using json = nlohmann::ordered_json;

std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view text, const std::string& context) {
  while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) text.remove_prefix(1);
  while (!text.empty() && (text.back() == ' ' || text.back() == '\t' || text.back() == '\r')) text.remove_suffix(1);
  double v = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc{} || res.ptr != text.data() + text.size())
    throw DataError(context + ": cannot parse number '" + std::string(text) + "'");
  return v;
}

void AccessLog::record(const fs::path& path) {
  std::lock_guard lock(mu_);
  reads_.push_back(path.lexically_normal().string());
}

std::vector<std::string> AccessLog::reads() const {
  std::lock_guard lock(mu_);
  return reads_;
}

void AccessLog::clear() {
  std::lock_guard lock(mu_);
  reads_.clear();
}

Bundle::Bundle(fs::path root, std::shared_ptr<AccessLog> log) : root_(std::move(root)), log_(std::move(log)) {}

std::string Bundle::read_text(const fs::path& path) const {
  log_->record(path);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& content) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  if (ec) throw DataError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << content;
  if (!out) throw DataError("failed writing " + path.string());
}

namespace {

json parse_json(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(what + ": malformed JSON: " + e.what());
  }
}

template <class F>
auto guarded(const std::string& what, F&& f) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw DataError(what + ": " + e.what());
  } catch (const ContractError& e) {
    throw DataError(what + ": " + e.what());
  }
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream ss(line);
  while (std::getline(ss, cur, ',')) out.push_back(cur);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

json scaler_to_json(const data::Scaler& s) {
  return json{{"features", data::kFeatureNames}, {"mean", s.mean()}, {"stddev", s.stddev()}};
}

data::Scaler scaler_from_json(const json& j) {
  return data::Scaler(j.at("mean").get<std::array<double, data::kNumFeatures>>(),
                      j.at("stddev").get<std::array<double, data::kNumFeatures>>());
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  const auto res = std::to_chars(buf, buf + 16, v, 16);
  return std::string(16 - static_cast<std::size_t>(res.ptr - buf), '0') + std::string(buf, res.ptr);
}

std::uint64_t parse_hex64(const std::string& s) {
  std::uint64_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v, 16);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) throw DataError("bad hash '" + s + "'");
  return v;
}

}  // namespace

std::string trajectory_csv(const sim::SohTrajectory& traj) {
  std::string out = "throughput_kAh,soh,c_rate_dis,c_rate_ch\n";
  for (const auto& s : traj.samples) {
    out += format_double(s.throughput_kah) + ',' + format_double(s.soh) + ',' + format_double(s.c_rate_dis) +
           ',' + format_double(s.c_rate_ch) + '\n';
  }
  return out;
}

std::vector<sim::TrajectorySample> parse_trajectory_csv(const std::string& text, const std::string& context) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw DataError(context + ": empty trajectory file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "throughput_kAh,soh,c_rate_dis,c_rate_ch") throw DataError(context + ": unexpected header");
  std::vector<sim::TrajectorySample> samples;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    const auto f = split_fields(line);
    const std::string where = context + " line " + std::to_string(row);
    if (f.size() != 4) throw DataError(where + ": expected 4 columns");
    samples.push_back({parse_double(f[0], where), parse_double(f[1], where), parse_double(f[2], where),
                       parse_double(f[3], where)});
  }
  return samples;
}

std::string manifest_json(const Manifest& m) {
  json sets = json::object();
  for (auto b : sim::kAllBatches) {
    const auto s = sim::operating_set(b);
    sets[sim::to_string(b)] = std::vector<double>(s.begin(), s.end());
  }
  json cells = json::array();
  for (const auto& c : m.cells) {
    cells.push_back(json{{"cell_id", c.cell_id},
                         {"batch", sim::to_string(c.batch)},
                         {"eps_am_n", c.eps_am_n},
                         {"eps_am_p", c.eps_am_p},
                         {"seed", c.seed},
                         {"truncated", c.truncated}});
  }
  return json{{"seed", m.seed}, {"operating_sets", sets}, {"cells", cells}}.dump(2) + "\n";
}

Manifest parse_manifest(const std::string& text) {
  const json j = parse_json(text, "manifest");
  return guarded("manifest", [&] {
    Manifest m;
    m.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& c : j.at("cells")) {
      m.cells.push_back({c.at("cell_id").get<std::string>(), sim::parse_batch(c.at("batch").get<std::string>()),
                         c.at("eps_am_n").get<double>(), c.at("eps_am_p").get<double>(),
                         c.at("seed").get<std::uint64_t>(), c.at("truncated").get<bool>()});
    }
    return m;
  });
}

std::string split_json(const SplitFile& s) {
  return json{{"window", s.window},
              {"cutoff_kah", s.cutoff_kah},
              {"target_batch", sim::to_string(s.target_batch)},
              {"source_train", s.cells.source_train},
              {"source_test", s.cells.source_test},
              {"calibration", s.cells.calibration},
              {"target", s.cells.target},
              {"scaler", scaler_to_json(s.scaler)}}
             .dump(2) +
         "\n";
}

SplitFile parse_split(const std::string& text) {
  const json j = parse_json(text, "split file");
  return guarded("split file", [&] {
    SplitFile s;
    s.window = j.at("window").get<std::size_t>();
    s.cutoff_kah = j.at("cutoff_kah").get<double>();
    s.target_batch = sim::parse_batch(j.at("target_batch").get<std::string>());
    s.cells.source_train = j.at("source_train").get<std::vector<std::string>>();
    s.cells.source_test = j.at("source_test").get<std::vector<std::string>>();
    s.cells.calibration = j.at("calibration").get<std::vector<std::string>>();
    s.cells.target = j.at("target").get<std::vector<std::string>>();
    s.scaler = scaler_from_json(j.at("scaler"));
    return s;
  });
}

std::string checkpoint_json(const Checkpoint& c) {
  const auto& shape = c.model.shape();
  const auto& v = c.model.values();
  return json{{"format", "sohtl-checkpoint"},
              {"version", kCheckpointVersion},
              {"variant", c.variant},
              {"shape", json{{"input", shape.input}, {"hidden", shape.hidden}, {"window", shape.window}}},
              {"config_hash", hex64(c.config_hash)},
              {"lambda", c.lambda ? json(*c.lambda) : json(nullptr)},
              {"scaler", scaler_to_json(c.scaler)},
              {"params", std::vector<double>(v.data(), v.data() + v.size())}}
             .dump() +
         "\n";
}

Checkpoint parse_checkpoint(const std::string& text, const std::optional<nn::ModelShape>& expected) {
  const json j = parse_json(text, "checkpoint");
  return guarded("checkpoint", [&] {
    if (j.at("format").get<std::string>() != "sohtl-checkpoint") throw DataError("checkpoint: wrong format tag");
    const int version = j.at("version").get<int>();
    if (version != kCheckpointVersion) throw DataError("checkpoint: unsupported version " + std::to_string(version));
    nn::ModelShape shape;
    shape.input = j.at("shape").at("input").get<std::size_t>();
    shape.hidden = j.at("shape").at("hidden").get<std::size_t>();
    shape.window = j.at("shape").at("window").get<std::size_t>();
    if (expected && !(shape == *expected)) {
      throw DataError("checkpoint: shape (input " + std::to_string(shape.input) + ", hidden " +
                      std::to_string(shape.hidden) + ", window " + std::to_string(shape.window) +
                      ") does not match the configured model");
    }
    Checkpoint c;
    c.variant = j.at("variant").get<std::string>();
    c.config_hash = parse_hex64(j.at("config_hash").get<std::string>());
    if (!j.at("lambda").is_null()) c.lambda = j.at("lambda").get<double>();
    c.scaler = scaler_from_json(j.at("scaler"));
    const auto params = j.at("params").get<std::vector<double>>();
    c.model = nn::ModelParams(shape);
    if (params.size() != c.model.size()) {
      throw DataError("checkpoint: " + std::to_string(params.size()) + " parameters, shape header implies " +
                      std::to_string(c.model.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) c.model.values()(static_cast<Eigen::Index>(i)) = params[i];
    return c;
  });
}

std::string history_csv(const std::vector<nn::EpochRecord>& history) {
  std::string out = "epoch,L_source,MMD2,L_total\n";
  for (const auto& r : history) {
    out += std::to_string(r.epoch) + ',' + format_double(r.source) + ',' + format_double(r.mmd2) + ',' +
           format_double(r.total) + '\n';
  }
  return out;
}

std::string lobo_csv(const adapt::LoboResult& r) {
  std::string out = "lambda";
  for (auto b : r.folds) out += ",rmse_" + sim::to_string(b);
  out += ",score,selected\n";
  for (std::size_t i = 0; i < r.grid.size(); ++i) {
    out += format_double(r.grid[i]);
    for (double v : r.rmse[i]) out += ',' + format_double(v);
    out += ',' + format_double(r.score[i]) + ',' + (i == r.star_index ? "1" : "0") + '\n';
  }
  return out;
}

std::string lobo_json(const adapt::LoboResult& r) {
  std::vector<std::string> folds;
  for (auto b : r.folds) folds.push_back(sim::to_string(b));
  return json{{"lambda_star", r.lambda_star},
              {"star_index", r.star_index},
              {"grid", r.grid},
              {"folds", folds},
              {"rmse", r.rmse},
              {"score", r.score}}
             .dump(2) +
         "\n";
}

double parse_lobo_lambda(const std::string& text) {
  const json j = parse_json(text, "LOBO report");
  return guarded("LOBO report", [&] { return j.at("lambda_star").get<double>(); });
}

std::string calibration_json(const CalibrationFile& c) {
  return json{{"variant", c.variant},
              {"alpha", c.alpha},
              {"q", c.q},
              {"p", c.p},
              {"eps_hat", c.infinite ? json("inf") : json(c.eps_hat)},
              {"infinite", c.infinite}}
             .dump(2) +
         "\n";
}

CalibrationFile parse_calibration(const std::string& text) {
  const json j = parse_json(text, "calibration file");
  return guarded("calibration file", [&] {
    CalibrationFile c;
    c.variant = j.at("variant").get<std::string>();
    c.alpha = j.at("alpha").get<double>();
    c.q = j.at("q").get<std::size_t>();
    c.p = j.at("p").get<std::size_t>();
    c.infinite = j.at("infinite").get<bool>();
    c.eps_hat = c.infinite ? std::numeric_limits<double>::infinity() : j.at("eps_hat").get<double>();
    return c;
  });
}

std::string forecast_csv(std::span<const double> throughput_kah, std::span<const std::optional<double>> truths,
                         const conformal::Forecast& f) {
  if (throughput_kah.size() != f.point.size() || truths.size() != f.point.size())
    throw ContractError("forecast_csv: column lengths differ");
  std::string out = "step,throughput_kAh,soh_true,soh_pred,lower,upper\n";
  for (std::size_t k = 0; k < f.point.size(); ++k) {
    out += std::to_string(f.intervals[k].step) + ',' + format_double(throughput_kah[k]) + ',' +
           (truths[k] ? format_double(*truths[k]) : std::string()) + ',' + format_double(f.point[k]) + ',' +
           format_double(f.intervals[k].lower) + ',' + format_double(f.intervals[k].upper) + '\n';
  }
  return out;
}

}  // namespace sohtl::bundle
