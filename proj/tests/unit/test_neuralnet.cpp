#include <doctest.h>

#include <cmath>

#include "../common/gradcheck.hpp"
#include "sohtl/error.hpp"
#include "sohtl/neuralnet.hpp"
#include "sohtl/rng.hpp"

using namespace sohtl;
using namespace sohtl::nn;

namespace {

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct ScalarCell {
  double c = 0.0;
  double h = 0.0;
};

// One step of a hidden-size-1 LSTM. a = (input, forget, cell, output) pre-activations.
ScalarCell scalar_step(ScalarCell s, const double a[4]) {
  const double i = sig(a[0]);
  const double f = sig(a[1]);
  const double g = std::tanh(a[2]);
  const double o = sig(a[3]);
  ScalarCell n;
  n.c = f * s.c + i * g;
  n.h = o * std::tanh(n.c);
  return n;
}

std::vector<data::WindowSample> linear_toy(std::size_t count, std::size_t w) {
  std::vector<data::WindowSample> out;
  const auto v = [](std::size_t i) { return -1.0 + 2.0 * static_cast<double>(i) / 53.0; };
  for (std::size_t k = 0; k < count; ++k) {
    data::WindowSample s;
    for (std::size_t t = 0; t < w; ++t) s.window.push_back({v(k + t), 0.5, -0.5});
    s.label = v(k + w);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

TEST_CASE("zero network predicts zero") {
  const ModelShape shape{3, 5, 4};
  const ModelParams zero(shape);
  Rng rng = make_stream(1);
  const auto r = forward(zero, testutil::random_batch(rng, shape, 7));
  CHECK(r.predictions.size() == 7);
  CHECK(r.predictions.cwiseAbs().maxCoeff() == 0.0);
  CHECK(r.latent.rows() == 7);
  CHECK(r.latent.cols() == 5);
}

TEST_CASE("forward shape contract") {
  const ModelShape shape{3, 6, 4};
  Rng rng = make_stream(2);
  const auto m = ModelParams::initialized(shape, 3);
  CHECK(forward(m, testutil::random_batch(rng, shape, 11)).predictions.size() == 11);
  CHECK_THROWS_AS(forward(m, testutil::random_batch(rng, {3, 6, 5}, 2)), ContractError);
  CHECK_THROWS_AS(ModelParams(ModelShape{3, 0, 4}), ContractError);
  // Initialization: biases zero, weights inside +-1/sqrt(fan_in).
  CHECK(m.enc_b().cwiseAbs().maxCoeff() == 0.0);
  CHECK(m.enc_wx().cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(3.0));
  CHECK(m.dec_wh().cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(6.0));
  CHECK(ModelParams::initialized(shape, 3) == m);
  CHECK_FALSE(ModelParams::initialized(shape, 4) == m);
}

TEST_CASE("scalar LSTM oracle") {
  const ModelShape shape{3, 1, 2};
  ModelParams m(shape);
  Rng rng = make_stream(17);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (Eigen::Index i = 0; i < m.values().size(); ++i) m.values()(i) = u(rng);
  const double x[2][3] = {{0.3, -1.2, 0.8}, {-0.4, 0.9, 1.5}};

  SequenceBatch b;
  for (const auto& xt : x) {
    Eigen::MatrixXd col(3, 1);
    col << xt[0], xt[1], xt[2];
    b.steps.push_back(col);
  }
  const auto r = forward(m, b);

  ScalarCell enc;
  for (int t = 0; t < 2; ++t) {
    double a[4];
    for (int k = 0; k < 4; ++k) {
      a[k] = m.enc_b()(k);
      for (int f = 0; f < 3; ++f) a[k] += m.enc_wx()(k, f) * x[t][f];
      if (t > 0) a[k] += m.enc_wh()(k, 0) * enc.h;
    }
    enc = scalar_step(enc, a);
  }
  double a[4];
  for (int k = 0; k < 4; ++k) a[k] = m.dec_b()(k) + m.dec_wx()(k, 0) * enc.h;
  const ScalarCell dec = scalar_step({}, a);
  const double yhat = m.head_w()(0) * dec.h + m.head_b();

  CHECK(std::abs(r.latent(0, 0) - enc.h) <= 1e-12);
  CHECK(std::abs(r.decoded(0, 0) - dec.h) <= 1e-12);
  CHECK(std::abs(r.predictions(0) - yhat) <= 1e-12);
}

TEST_CASE("loss_source") {
  Eigen::VectorXd p(2), y(2);
  p << 0.0, 0.0;
  y << 1.0, 1.0;
  double mean = 0.0;
  CHECK(loss_source(p, y, &mean) == 2.0);
  CHECK(mean == 1.0);
  CHECK(loss_source(y, y) == 0.0);
  CHECK_THROWS_AS(loss_source(Eigen::VectorXd(0), Eigen::VectorXd(0)), ContractError);
  CHECK_THROWS_AS(loss_source(p, Eigen::VectorXd(3)), ContractError);
}

TEST_CASE("gradients match central differences") {
  for (std::uint64_t trial = 0; trial < 20; ++trial) {
    for (double lambda : {0.0, 0.5}) {
      const auto r = testutil::gradient_check(trial, lambda);
      INFO("trial " << trial << " lambda " << lambda << " abs " << r.max_abs_error);
      CHECK(r.max_rel_error < 1e-4);
    }
  }
}

TEST_CASE("gradient special cases") {
  const ModelShape shape{3, 4, 3};
  Rng rng = make_stream(8);
  const auto m = testutil::random_model(rng, shape);
  const auto bs = testutil::random_batch(rng, shape, 5);
  auto bt = testutil::random_batch(rng, shape, 5);
  for (auto& s : bt.steps) s.array() += 1.0;
  const Eigen::VectorXd ys = Eigen::VectorXd::LinSpaced(5, -1.0, 1.0);

  const auto g0 = gradients(m, bs, ys, bt, 0.0, 1.0);
  const auto g_empty = gradients(m, bs, ys, SequenceBatch{}, 0.7, 1.0);
  CHECK(g0.grads == g_empty.grads);
  CHECK(g0.loss.mmd2 == 0.0);
  CHECK(g0.loss.total == g0.loss.source);

  // The MMD term reaches only the encoder.
  const auto g1 = gradients(m, bs, ys, bt, 0.9, 1.0);
  CHECK(g1.loss.mmd2 > 0.0);
  const Eigen::VectorXd diff = g1.grads.values() - g0.grads.values();
  for (auto group : {ParamGroup::decoder, ParamGroup::head}) {
    const auto [off, len] = m.group_range(group);
    CHECK(diff.segment(static_cast<Eigen::Index>(off), static_cast<Eigen::Index>(len)).cwiseAbs().maxCoeff() == 0.0);
  }
  const auto [eo, el] = m.group_range(ParamGroup::encoder);
  CHECK(diff.segment(static_cast<Eigen::Index>(eo), static_cast<Eigen::Index>(el)).cwiseAbs().maxCoeff() > 0.0);

  CHECK_THROWS_AS(gradients(m, bs, ys, bt, -1.0, 1.0), ContractError);
  Eigen::VectorXd bad = ys;
  bad(2) = std::nan("");
  CHECK_THROWS_AS(gradients(m, bs, bad, bt, 0.0, 1.0), NumericError);
}

TEST_CASE("adam") {
  const ModelShape shape{3, 2, 2};
  ModelParams m = ModelParams::initialized(shape, 5);
  const ModelParams start = m;

  SUBCASE("zero gradient") {
    OptState opt = OptState::for_model(m);
    adam_step(m, Gradients(shape), opt);
    CHECK(m == start);
    CHECK(opt.t == 1);
  }
  SUBCASE("first step moves by lr * sign(g)") {
    OptState opt = OptState::for_model(m, {0.01, 0.9, 0.999, 1e-8});
    Gradients g(shape);
    for (Eigen::Index i = 0; i < g.values().size(); ++i) g.values()(i) = (i % 3 == 0 ? -1.0 : 1.0) * (0.5 + static_cast<double>(i));
    adam_step(m, g, opt);
    for (Eigen::Index i = 0; i < g.values().size(); ++i) {
      const double step = m.values()(i) - start.values()(i);
      CHECK(std::abs(step + 0.01 * (g.values()(i) > 0 ? 1.0 : -1.0)) < 1e-6);
    }
  }
  SUBCASE("deterministic") {
    Gradients g(shape);
    g.values().setConstant(0.3);
    ModelParams a = start, b = start;
    OptState oa = OptState::for_model(a), ob = OptState::for_model(b);
    adam_step(a, g, oa);
    adam_step(b, g, ob);
    CHECK(a == b);
    CHECK(oa.m == ob.m);
  }
  SUBCASE("clip") {
    Gradients g(shape);
    g.values().setConstant(1.0);
    const double norm = clip_global_norm(g, 1.0);
    CHECK(norm == doctest::Approx(std::sqrt(static_cast<double>(g.size()))));
    CHECK(g.values().norm() == doctest::Approx(1.0));
  }
}

TEST_CASE("training") {
  const ModelShape shape{3, 8, 3};
  const auto toy = linear_toy(50, 3);
  TrainConfig cfg;
  cfg.batch_size = 10;
  cfg.adam.learning_rate = 1e-2;

  SUBCASE("zero epochs") {
    cfg.epochs = 0;
    const auto init = ModelParams::initialized(shape, 1);
    const auto r = train_epochs(init, toy, cfg, 1);
    CHECK(r.model == init);
    CHECK(r.history.empty());
  }
  SUBCASE("fits a linear toy") {
    cfg.epochs = 200;
    const auto r = train_epochs(ModelParams::initialized(shape, 1), toy, cfg, 1);
    CHECK(r.history.size() == 200);
    const Eigen::VectorXd p = predict(r.model, toy);
    const double mse = (p - labels_of(toy)).squaredNorm() / 50.0;
    CHECK(mse < 1e-3);
    for (const auto& h : r.history) CHECK(std::isfinite(h.total));
    // Determinism.
    CHECK(train_epochs(ModelParams::initialized(shape, 1), toy, cfg, 1).history.back().total ==
          r.history.back().total);
  }
  SUBCASE("divergence reports the epoch") {
    auto bad = toy;
    bad[7].label = std::nan("");
    cfg.epochs = 3;
    try {
      train_epochs(ModelParams::initialized(shape, 1), bad, cfg, 1);
      FAIL("expected divergence");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("epoch 1") != std::string::npos);
    }
  }
  SUBCASE("cosine decay leaves the first epoch at the base rate") {
    cfg.epochs = 3;
    const auto flat = train_epochs(ModelParams::initialized(shape, 1), toy, cfg, 1);
    cfg.final_lr_fraction = 0.1;
    const auto decayed = train_epochs(ModelParams::initialized(shape, 1), toy, cfg, 1);
    CHECK(decayed.history[0].total == flat.history[0].total);
    CHECK(decayed.history[1].total != flat.history[1].total);
    CHECK_FALSE(decayed.model == flat.model);
  }
  SUBCASE("early stopping keeps the best validation model") {
    cfg.epochs = 30;
    cfg.patience = 2;
    const auto r = train_epochs(ModelParams::initialized(shape, 1), toy, cfg, 1, toy);
    double best = 1e300;
    for (const auto& h : r.history) best = std::min(best, h.validation);
    const Eigen::VectorXd p = predict(r.model, toy);
    CHECK((p - labels_of(toy)).squaredNorm() / 50.0 == doctest::Approx(best).epsilon(1e-12));
  }
}
