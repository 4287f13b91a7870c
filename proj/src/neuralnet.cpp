#include "sohtl/neuralnet.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <string>

#include "sohtl/error.hpp"
#include "sohtl/rng.hpp"

namespace sohtl::nn {

// ---------------------------------------------------------------------------
// Parameter layout

namespace {

enum Block { kEncWx, kEncWh, kEncB, kDecWx, kDecWh, kDecB, kHeadW, kHeadB, kBlocks };

std::size_t block_size(const ModelShape& s, int block) {
  const std::size_t g = 4 * s.hidden;
  switch (block) {
    case kEncWx: return g * s.input;
    case kEncWh: return g * s.hidden;
    case kEncB: return g;
    case kDecWx: return g * s.hidden;
    case kDecWh: return g * s.hidden;
    case kDecB: return g;
    case kHeadW: return s.hidden;
    case kHeadB: return 1;
    default: return 0;
  }
}

}  // namespace

ModelParams::ModelParams(ModelShape shape) : shape_(shape) {
  if (shape.input == 0 || shape.hidden == 0 || shape.window == 0)
    throw ContractError("ModelParams: shape dimensions must be positive");
  values_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(offset(kBlocks)));
}

std::size_t ModelParams::offset(int block) const {
  std::size_t o = 0;
  for (int b = 0; b < block; ++b) o += block_size(shape_, b);
  return o;
}

ModelParams ModelParams::initialized(ModelShape shape, std::uint64_t seed) {
  ModelParams p(shape);
  Rng rng = make_stream(seed, 0x1417ULL);
  auto fill = [&rng](auto&& m, double fan_in) {
    const double bound = 1.0 / std::sqrt(fan_in);
    std::uniform_real_distribution<double> u(-bound, bound);
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = u(rng);
  };
  const auto in = static_cast<double>(shape.input);
  const auto h = static_cast<double>(shape.hidden);
  fill(p.enc_wx(), in);
  fill(p.enc_wh(), h);
  fill(p.dec_wx(), h);
  fill(p.dec_wh(), h);
  auto head = p.head_w();
  std::uniform_real_distribution<double> u(-1.0 / std::sqrt(h), 1.0 / std::sqrt(h));
  for (Eigen::Index i = 0; i < head.size(); ++i) head(i) = u(rng);
  return p;
}

#define SOHTL_MAT(name, block, rows, cols)                                                     \
  ModelParams::MatMap ModelParams::name() {                                                    \
    return MatMap(values_.data() + offset(block), static_cast<Eigen::Index>(rows),             \
                  static_cast<Eigen::Index>(cols));                                            \
  }                                                                                            \
  ModelParams::ConstMatMap ModelParams::name() const {                                         \
    return ConstMatMap(values_.data() + offset(block), static_cast<Eigen::Index>(rows),        \
                       static_cast<Eigen::Index>(cols));                                       \
  }
#define SOHTL_VEC(name, block, len)                                                            \
  ModelParams::VecMap ModelParams::name() {                                                    \
    return VecMap(values_.data() + offset(block), static_cast<Eigen::Index>(len));             \
  }                                                                                            \
  ModelParams::ConstVecMap ModelParams::name() const {                                         \
    return ConstVecMap(values_.data() + offset(block), static_cast<Eigen::Index>(len));        \
  }

SOHTL_MAT(enc_wx, kEncWx, 4 * shape_.hidden, shape_.input)
SOHTL_MAT(enc_wh, kEncWh, 4 * shape_.hidden, shape_.hidden)
SOHTL_VEC(enc_b, kEncB, 4 * shape_.hidden)
SOHTL_MAT(dec_wx, kDecWx, 4 * shape_.hidden, shape_.hidden)
SOHTL_MAT(dec_wh, kDecWh, 4 * shape_.hidden, shape_.hidden)
SOHTL_VEC(dec_b, kDecB, 4 * shape_.hidden)
SOHTL_VEC(head_w, kHeadW, shape_.hidden)

#undef SOHTL_MAT
#undef SOHTL_VEC

double& ModelParams::head_b() { return values_(static_cast<Eigen::Index>(offset(kHeadB))); }
double ModelParams::head_b() const { return values_(static_cast<Eigen::Index>(offset(kHeadB))); }

std::pair<std::size_t, std::size_t> ModelParams::group_range(ParamGroup group) const {
  switch (group) {
    case ParamGroup::encoder: return {offset(kEncWx), offset(kDecWx) - offset(kEncWx)};
    case ParamGroup::decoder: return {offset(kDecWx), offset(kHeadW) - offset(kDecWx)};
    case ParamGroup::head: return {offset(kHeadW), offset(kBlocks) - offset(kHeadW)};
  }
  return {0, 0};
}

// ---------------------------------------------------------------------------
// Batches

SequenceBatch make_batch(std::span<const std::vector<data::Step>* const> windows) {
  SequenceBatch b;
  if (windows.empty()) return b;
  const std::size_t w = windows.front()->size();
  const auto n = static_cast<Eigen::Index>(windows.size());
  b.steps.assign(w, Eigen::MatrixXd(static_cast<Eigen::Index>(data::kNumFeatures), n));
  for (Eigen::Index k = 0; k < n; ++k) {
    const auto& win = *windows[static_cast<std::size_t>(k)];
    if (win.size() != w) throw ContractError("make_batch: ragged window lengths");
    for (std::size_t t = 0; t < w; ++t)
      for (std::size_t f = 0; f < data::kNumFeatures; ++f)
        b.steps[t](static_cast<Eigen::Index>(f), k) = win[t][f];
  }
  return b;
}

SequenceBatch make_batch(std::span<const data::WindowSample> samples) {
  std::vector<const std::vector<data::Step>*> ptrs;
  ptrs.reserve(samples.size());
  for (const auto& s : samples) ptrs.push_back(&s.window);
  return make_batch(ptrs);
}

SequenceBatch make_batch(std::span<const data::UnlabeledWindow> samples) {
  std::vector<const std::vector<data::Step>*> ptrs;
  ptrs.reserve(samples.size());
  for (const auto& s : samples) ptrs.push_back(&s.window);
  return make_batch(ptrs);
}

Eigen::VectorXd labels_of(std::span<const data::WindowSample> samples) {
  Eigen::VectorXd y(static_cast<Eigen::Index>(samples.size()));
  for (std::size_t i = 0; i < samples.size(); ++i) y(static_cast<Eigen::Index>(i)) = samples[i].label;
  return y;
}

// ---------------------------------------------------------------------------
// LSTM forward / backward

namespace {

struct LstmTrace {
  std::vector<Eigen::MatrixXd> gates;  // per step, 4H x n, post-activation
  std::vector<Eigen::MatrixXd> c;      // c[0] = 0, c[t + 1] after step t
  std::vector<Eigen::MatrixXd> h;      // h[0] = 0, h[t + 1] after step t
  std::vector<Eigen::MatrixXd> tanh_c; // tanh(c[t + 1])
};

Eigen::ArrayXXd sigmoid(const Eigen::ArrayXXd& x) { return 1.0 / (1.0 + (-x).exp()); }

template <class Wx, class Wh, class B>
void lstm_forward(const Wx& wx, const Wh& wh, const B& bias, const std::vector<Eigen::MatrixXd>& xs,
                  LstmTrace& tr) {
  const Eigen::Index hidden = wh.cols();
  const Eigen::Index n = xs.front().cols();
  tr.gates.resize(xs.size());
  tr.tanh_c.resize(xs.size());
  tr.c.assign(xs.size() + 1, Eigen::MatrixXd::Zero(hidden, n));
  tr.h.assign(xs.size() + 1, Eigen::MatrixXd::Zero(hidden, n));
  for (std::size_t t = 0; t < xs.size(); ++t) {
    Eigen::MatrixXd a = wx * xs[t];
    if (t > 0) a.noalias() += wh * tr.h[t];
    a.colwise() += bias;
    Eigen::MatrixXd& g = tr.gates[t];
    g.resize(4 * hidden, n);
    g.topRows(2 * hidden) = sigmoid(a.topRows(2 * hidden).array()).matrix();
    g.middleRows(2 * hidden, hidden) = a.middleRows(2 * hidden, hidden).array().tanh().matrix();
    g.bottomRows(hidden) = sigmoid(a.bottomRows(hidden).array()).matrix();
    const auto i = g.topRows(hidden).array();
    const auto f = g.middleRows(hidden, hidden).array();
    const auto gg = g.middleRows(2 * hidden, hidden).array();
    const auto o = g.bottomRows(hidden).array();
    tr.c[t + 1] = (f * tr.c[t].array() + i * gg).matrix();
    tr.tanh_c[t] = tr.c[t + 1].array().tanh().matrix();
    tr.h[t + 1] = (o * tr.tanh_c[t].array()).matrix();
  }
}

// Backpropagates dh_last through all steps. Accumulates into the gradient
// maps and, when dxs is given, returns the gradient w.r.t. each input.
template <class Wx, class Wh, class GWx, class GWh, class GB>
void lstm_backward(const Wx& wx, const Wh& wh, const std::vector<Eigen::MatrixXd>& xs,
                   const LstmTrace& tr, Eigen::MatrixXd dh, GWx&& gwx, GWh&& gwh, GB&& gb,
                   std::vector<Eigen::MatrixXd>* dxs) {
  const Eigen::Index hidden = wh.cols();
  const Eigen::Index n = dh.cols();
  Eigen::MatrixXd dc = Eigen::MatrixXd::Zero(hidden, n);
  Eigen::MatrixXd da(4 * hidden, n);
  if (dxs) dxs->resize(xs.size());
  for (std::size_t t = xs.size(); t-- > 0;) {
    const Eigen::MatrixXd& g = tr.gates[t];
    const auto i = g.topRows(hidden).array();
    const auto f = g.middleRows(hidden, hidden).array();
    const auto gg = g.middleRows(2 * hidden, hidden).array();
    const auto o = g.bottomRows(hidden).array();
    const auto tc = tr.tanh_c[t].array();

    dc.array() += dh.array() * o * (1.0 - tc.square());
    da.topRows(hidden) = (dc.array() * gg * i * (1.0 - i)).matrix();
    da.middleRows(hidden, hidden) = (dc.array() * tr.c[t].array() * f * (1.0 - f)).matrix();
    da.middleRows(2 * hidden, hidden) = (dc.array() * i * (1.0 - gg.square())).matrix();
    da.bottomRows(hidden) = (dh.array() * tc * o * (1.0 - o)).matrix();

    gwx.noalias() += da * xs[t].transpose();
    if (t > 0) gwh.noalias() += da * tr.h[t].transpose();
    gb += da.rowwise().sum();
    if (dxs) (*dxs)[t].noalias() = wx.transpose() * da;
    if (t > 0) {
      dh.noalias() = wh.transpose() * da;
      dc.array() *= f;
    }
  }
}

void require_finite(const Eigen::MatrixXd& m, const char* layer) {
  if (!m.allFinite()) throw NumericError(std::string("non-finite values in ") + layer + " layer");
}

void check_batch(const ModelParams& model, const SequenceBatch& batch) {
  if (batch.steps.size() != model.shape().window)
    throw ContractError("window length " + std::to_string(batch.steps.size()) +
                        " does not match model window " + std::to_string(model.shape().window));
  for (const auto& s : batch.steps)
    if (static_cast<std::size_t>(s.rows()) != model.shape().input)
      throw ContractError("input feature count does not match model");
}

struct FullTrace {
  LstmTrace encoder;
  LstmTrace decoder;
  std::vector<Eigen::MatrixXd> dec_input;  // {z}
  Eigen::VectorXd predictions;
};

FullTrace run_forward(const ModelParams& model, const SequenceBatch& batch) {
  check_batch(model, batch);
  FullTrace ft;
  lstm_forward(model.enc_wx(), model.enc_wh(), model.enc_b(), batch.steps, ft.encoder);
  require_finite(ft.encoder.h.back(), "encoder");
  ft.dec_input = {ft.encoder.h.back()};
  lstm_forward(model.dec_wx(), model.dec_wh(), model.dec_b(), ft.dec_input, ft.decoder);
  require_finite(ft.decoder.h.back(), "decoder");
  ft.predictions = (model.head_w().transpose() * ft.decoder.h.back()).transpose();
  ft.predictions.array() += model.head_b();
  require_finite(ft.predictions, "head");
  return ft;
}

}  // namespace

ForwardResult forward(const ModelParams& model, const SequenceBatch& batch) {
  if (batch.empty()) return {adapt::LatentBatch(0, static_cast<Eigen::Index>(model.shape().hidden)),
                             Eigen::MatrixXd(static_cast<Eigen::Index>(model.shape().hidden), 0),
                             Eigen::VectorXd(0)};
  FullTrace ft = run_forward(model, batch);
  return {ft.encoder.h.back().transpose(), ft.decoder.h.back(), std::move(ft.predictions)};
}

double loss_source(const Eigen::VectorXd& predictions, const Eigen::VectorXd& labels, double* mean) {
  if (predictions.size() != labels.size()) throw ContractError("loss_source: length mismatch");
  if (predictions.size() == 0) throw ContractError("loss_source: empty batch");
  const double sse = (predictions - labels).squaredNorm();
  if (mean) *mean = sse / static_cast<double>(predictions.size());
  return sse;
}

GradientResult gradients(const ModelParams& model, const SequenceBatch& batch_s,
                         const Eigen::VectorXd& labels_s, const SequenceBatch& batch_t,
                         double lambda, double kernel_sigma) {
  if (batch_s.empty()) throw ContractError("gradients: empty source batch");
  if (static_cast<std::size_t>(labels_s.size()) != batch_s.size())
    throw ContractError("gradients: label count does not match batch");
  if (lambda < 0.0) throw ContractError("gradients: lambda must be non-negative");

  GradientResult out{Gradients(model.shape()), {}};
  Gradients& g = out.grads;
  FullTrace fs = run_forward(model, batch_s);

  const Eigen::VectorXd diff = fs.predictions - labels_s;
  out.loss.source = diff.squaredNorm();
  const Eigen::RowVectorXd dpred = 2.0 * diff.transpose();

  const Eigen::MatrixXd& h_dec = fs.decoder.h.back();
  g.head_w() = h_dec * dpred.transpose();
  g.head_b() = dpred.sum();
  Eigen::MatrixXd dh_dec = model.head_w() * dpred;

  std::vector<Eigen::MatrixXd> dz;
  lstm_backward(model.dec_wx(), model.dec_wh(), fs.dec_input, fs.decoder, std::move(dh_dec),
                g.dec_wx(), g.dec_wh(), g.dec_b(), &dz);
  Eigen::MatrixXd dz_s = std::move(dz.front());

  if (lambda > 0.0 && !batch_t.empty()) {
    check_batch(model, batch_t);
    LstmTrace tt;
    lstm_forward(model.enc_wx(), model.enc_wh(), model.enc_b(), batch_t.steps, tt);
    require_finite(tt.h.back(), "encoder (target)");
    const adapt::Mmd2Gradient mg =
        adapt::mmd2_with_gradient(fs.encoder.h.back().transpose(), tt.h.back().transpose(), kernel_sigma);
    out.loss.mmd2 = mg.value;
    dz_s += lambda * mg.d_source.transpose();
    lstm_backward(model.enc_wx(), model.enc_wh(), batch_t.steps, tt,
                  Eigen::MatrixXd(lambda * mg.d_target.transpose()), g.enc_wx(), g.enc_wh(),
                  g.enc_b(), nullptr);
  }
  lstm_backward(model.enc_wx(), model.enc_wh(), batch_s.steps, fs.encoder, std::move(dz_s),
                g.enc_wx(), g.enc_wh(), g.enc_b(), nullptr);

  out.loss.total = out.loss.source + lambda * out.loss.mmd2;
  for (auto [group, name] : {std::pair{ParamGroup::encoder, "encoder"},
                             std::pair{ParamGroup::decoder, "decoder"},
                             std::pair{ParamGroup::head, "head"}}) {
    const auto [off, len] = g.group_range(group);
    if (!g.values().segment(static_cast<Eigen::Index>(off), static_cast<Eigen::Index>(len)).allFinite())
      throw NumericError(std::string("non-finite gradient in ") + name + " layer");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Optimizer

OptState OptState::for_model(const ModelParams& model, AdamConfig config) {
  OptState s;
  s.config = config;
  s.m = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(model.size()));
  s.v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(model.size()));
  return s;
}

void adam_step(ModelParams& model, const Gradients& grads, OptState& opt) {
  const auto& c = opt.config;
  const Eigen::VectorXd& g = grads.values();
  if (g.size() != model.values().size() || opt.m.size() != g.size())
    throw ContractError("adam_step: gradient/optimizer shape mismatch");
  ++opt.t;
  opt.m = c.beta1 * opt.m + (1.0 - c.beta1) * g;
  opt.v = c.beta2 * opt.v + (1.0 - c.beta2) * g.cwiseProduct(g);
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(opt.t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(opt.t));
  model.values().array() -=
      c.learning_rate * (opt.m.array() / bc1) / ((opt.v.array() / bc2).sqrt() + c.epsilon);
}

double clip_global_norm(Gradients& grads, double max_norm) {
  const double norm = grads.values().norm();
  if (max_norm > 0.0 && norm > max_norm) grads.values() *= max_norm / norm;
  return norm;
}

// ---------------------------------------------------------------------------
// Training

namespace {

// Column-gathering view over a fixed set of windows.
class WindowTable {
 public:
  template <class Sample>
  explicit WindowTable(std::span<const Sample> samples) {
    std::vector<const std::vector<data::Step>*> ptrs;
    ptrs.reserve(samples.size());
    for (const auto& s : samples) ptrs.push_back(&s.window);
    all_ = make_batch(ptrs);
  }

  SequenceBatch gather(std::span<const std::size_t> idx) const {
    SequenceBatch b;
    b.steps.resize(all_.steps.size());
    for (std::size_t t = 0; t < all_.steps.size(); ++t) {
      b.steps[t].resize(all_.steps[t].rows(), static_cast<Eigen::Index>(idx.size()));
      for (std::size_t k = 0; k < idx.size(); ++k)
        b.steps[t].col(static_cast<Eigen::Index>(k)) = all_.steps[t].col(static_cast<Eigen::Index>(idx[k]));
    }
    return b;
  }

 private:
  SequenceBatch all_;
};

double validation_mse(const ModelParams& model, std::span<const data::WindowSample> val) {
  if (val.empty()) return 0.0;
  const Eigen::VectorXd p = predict(model, val);
  return (p - labels_of(val)).squaredNorm() / static_cast<double>(val.size());
}

}  // namespace

TrainResult train_joint(ModelParams model, std::span<const data::WindowSample> source,
                        std::span<const data::UnlabeledWindow> target, double lambda,
                        const adapt::KernelConfig& kernel, const TrainConfig& config,
                        std::uint64_t seed, std::span<const data::WindowSample> validation) {
  if (source.empty()) throw ContractError("training: empty source data");
  if (config.batch_size == 0) throw ContractError("training: batch_size must be positive");
  if (lambda < 0.0) throw ContractError("training: lambda must be non-negative");
  const bool use_target = lambda > 0.0 && !target.empty();
  if (use_target && kernel.selection == adapt::BandwidthSelection::fixed && !(kernel.sigma > 0.0))
    throw ContractError("training: fixed kernel bandwidth must be positive");

  TrainResult result;
  OptState opt = OptState::for_model(model, config.adam);
  const WindowTable src_table(source);
  const Eigen::VectorXd labels = labels_of(source);
  std::optional<WindowTable> tgt_table;
  if (use_target) tgt_table.emplace(target);

  Rng shuffle_rng = make_stream(seed, 0x50ffULL);
  Rng target_rng = make_stream(seed, 0x7a46e7ULL);
  std::vector<std::size_t> order(source.size());
  std::vector<std::size_t> t_order(use_target ? target.size() : 0);
  std::iota(t_order.begin(), t_order.end(), std::size_t{0});
  std::shuffle(t_order.begin(), t_order.end(), target_rng);
  std::size_t t_pos = 0;

  ModelParams best = model;
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;

  const double base_lr = config.adam.learning_rate;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    if (config.epochs > 1) {
      const double progress = static_cast<double>(epoch) / static_cast<double>(config.epochs - 1);
      const double f = config.final_lr_fraction;
      opt.config.learning_rate = base_lr * (f + (1.0 - f) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
    }
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double sigma = 0.0;
    if (use_target) {
      sigma = kernel.sigma;
      if (kernel.selection == adapt::BandwidthSelection::median_heuristic) {
        constexpr std::size_t kProbe = 200;
        std::vector<std::size_t> ps(order.begin(), order.begin() + std::min(kProbe, order.size()));
        std::vector<std::size_t> pt(t_order.begin(), t_order.begin() + std::min(kProbe, t_order.size()));
        const auto zs = forward(model, src_table.gather(ps)).latent;
        const auto zt = forward(model, tgt_table->gather(pt)).latent;
        try {
          sigma = adapt::median_bandwidth(zs, zt);
        } catch (const DataError&) {
          sigma = 1.0;
        }
      }
    }

    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.sigma = sigma;
    std::size_t n_batches = 0;
    std::vector<std::size_t> t_idx;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, stop - start);
      const SequenceBatch bs = src_table.gather(idx);
      Eigen::VectorXd ys(static_cast<Eigen::Index>(idx.size()));
      for (std::size_t k = 0; k < idx.size(); ++k) ys(static_cast<Eigen::Index>(k)) = labels(static_cast<Eigen::Index>(idx[k]));

      SequenceBatch bt;
      if (use_target) {
        t_idx.clear();
        for (std::size_t k = 0; k < idx.size(); ++k) {
          if (t_pos == t_order.size()) {
            std::shuffle(t_order.begin(), t_order.end(), target_rng);
            t_pos = 0;
          }
          t_idx.push_back(t_order[t_pos++]);
        }
        bt = tgt_table->gather(t_idx);
      }

      GradientResult gr;
      try {
        gr = gradients(model, bs, ys, bt, use_target ? lambda : 0.0, sigma);
      } catch (const NumericError& e) {
        throw NumericError("training diverged at epoch " + std::to_string(rec.epoch) + ": " + e.what());
      }
      clip_global_norm(gr.grads, config.clip_norm);
      adam_step(model, gr.grads, opt);
      rec.source += gr.loss.source;
      rec.mmd2 += gr.loss.mmd2;
      rec.total += gr.loss.total;
      ++n_batches;
    }
    rec.source /= static_cast<double>(n_batches);
    rec.mmd2 /= static_cast<double>(n_batches);
    rec.total /= static_cast<double>(n_batches);
    if (!std::isfinite(rec.total) || !model.values().allFinite())
      throw NumericError("training diverged at epoch " + std::to_string(rec.epoch));

    if (!validation.empty()) {
      rec.validation = validation_mse(model, validation);
      if (rec.validation < best_val) {
        best_val = rec.validation;
        best = model;
        since_best = 0;
      } else {
        ++since_best;
      }
    }
    result.history.push_back(rec);
    if (config.patience > 0 && !validation.empty() && since_best >= config.patience) break;
  }

  result.model = (config.patience > 0 && !validation.empty() && !result.history.empty()) ? best : model;
  return result;
}

TrainResult train_epochs(ModelParams model, std::span<const data::WindowSample> source,
                         const TrainConfig& config, std::uint64_t seed,
                         std::span<const data::WindowSample> validation) {
  return train_joint(std::move(model), source, {}, 0.0, adapt::KernelConfig{}, config, seed, validation);
}

Eigen::VectorXd predict(const ModelParams& model, std::span<const data::WindowSample> samples,
                        std::size_t batch_size) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(samples.size()));
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    const std::size_t stop = std::min(samples.size(), start + batch_size);
    const auto f = forward(model, make_batch(samples.subspan(start, stop - start)));
    out.segment(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(stop - start)) = f.predictions;
  }
  return out;
}

adapt::LatentBatch encode(const ModelParams& model, std::span<const data::UnlabeledWindow> windows,
                          std::size_t batch_size) {
  adapt::LatentBatch out(static_cast<Eigen::Index>(windows.size()),
                         static_cast<Eigen::Index>(model.shape().hidden));
  for (std::size_t start = 0; start < windows.size(); start += batch_size) {
    const std::size_t stop = std::min(windows.size(), start + batch_size);
    const auto f = forward(model, make_batch(windows.subspan(start, stop - start)));
    out.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(stop - start)) = f.latent;
  }
  return out;
}

}  // namespace sohtl::nn
