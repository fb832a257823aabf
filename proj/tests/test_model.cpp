#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "dcl/nn/checkpoint.hpp"
#include "dcl/nn/losses.hpp"
#include "dcl/nn/model.hpp"
#include "dcl/rng.hpp"

using namespace dcl;
using namespace dcl::nn;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.widths = {2, 3, 4, 5, 6};
  cfg.classes = 2;
  cfg.dropout = 0.0;
  return cfg;
}

Tensor random_input(int n, int h, int w, uint64_t seed) {
  Tensor t(n, 1, h, w);
  Rng rng(seed);
  for (auto& v : t.v) v = static_cast<float>(rng.uniform(-1.5, 1.5));
  return t;
}

double dot(const std::vector<float>& a, const std::vector<float>& b) {
  double s = 0;
  for (size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
  return s;
}

}  // namespace

TEST_CASE("forward shape contract at the default configuration") {
  ModelConfig cfg;  // default widths, 4 classes
  DclNet net(cfg, 1);
  Tensor t1w = random_input(1, 64, 64, 11);
  Tensor fa = random_input(1, 64, 64, 12);
  Rng rng(0);
  Tensor p1, p2;
  EncoderState state;
  net.forward(t1w, fa, false, rng, p1, p2, &state);
  CHECK(p1.n == 1);
  CHECK(p1.c == 4);
  CHECK(p1.h == 64);
  CHECK(p1.w == 64);
  CHECK(p2.same_shape(p1));
  for (float v : p1.v) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
  REQUIRE(state.s_maps.size() == 4);
  REQUIRE(state.e_maps.size() == 4);
  for (const auto& e : state.e_maps) CHECK(e.c == 1);

  // attention rows are stochastic
  REQUIRE(state.attention.size() == 2);
  const size_t p = 4 * 4;  // 64 / 16 squared
  for (const auto& dir : state.attention)
    for (const auto& a : dir) {
      REQUIRE(a.size() == p * p);
      for (size_t r = 0; r < p; ++r) {
        double s = 0;
        for (size_t c = 0; c < p; ++c) s += a[r * p + c];
        CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
      }
    }
}

TEST_CASE("eval forward is bit-deterministic; input validation rejects bad shapes") {
  DclNet net(tiny_config(), 3);
  Tensor t1w = random_input(2, 32, 32, 21);
  Tensor fa = random_input(2, 32, 32, 22);
  Rng rng(0);
  Tensor a1, a2, b1, b2;
  net.forward(t1w, fa, false, rng, a1, a2);
  net.forward(t1w, fa, false, rng, b1, b2);
  CHECK(a1.v == b1.v);
  CHECK(a2.v == b2.v);

  Tensor bad = random_input(2, 30, 32, 23);
  CHECK_THROWS_AS(net.forward(bad, bad, false, rng, a1, a2), std::runtime_error);
  Tensor mismatch = random_input(1, 32, 32, 24);
  CHECK_THROWS_AS(net.forward(t1w, mismatch, false, rng, a1, a2), std::runtime_error);
}

TEST_CASE("dropout is confined to the second decoder") {
  ModelConfig cfg = tiny_config();
  cfg.dropout = 0.5;
  DclNet net(cfg, 5);
  Tensor t1w = random_input(1, 32, 32, 31);
  Tensor fa = random_input(1, 32, 32, 32);

  Tensor p1a, p2a, p1b, p2b;
  Rng r1(100), r2(200);
  net.forward(t1w, fa, true, r1, p1a, p2a);
  net.forward(t1w, fa, true, r2, p1b, p2b);
  CHECK(p1a.v == p1b.v);   // P1 path has no dropout
  CHECK(p2a.v != p2b.v);   // P2 path differs across dropout draws
}

TEST_CASE("parameter census is deterministic and ablation-dependent") {
  ModelConfig cfg = tiny_config();
  DclNet n1(cfg, 7), n2(cfg, 8);
  CHECK(n1.param_count() == n2.param_count());
  auto p1 = n1.params();
  auto p2 = n2.params();
  REQUIRE(p1.size() == p2.size());
  bool any_diff = false;
  for (size_t i = 0; i < p1.size(); ++i) {
    CHECK(p1[i]->name == p2[i]->name);
    if (p1[i]->w.v != p2[i]->w.v) any_diff = true;
  }
  CHECK(any_diff);  // different seeds give different weights

  ModelConfig no_aem = cfg;
  no_aem.use_aem = false;
  DclNet n3(no_aem, 7);
  CHECK(n3.param_count() < n1.param_count());
  // checkpoint state still carries every array
  CHECK(n3.state_entries().size() == n1.state_entries().size());
}

TEST_CASE("ablation switches change the computation") {
  Tensor t1w = random_input(1, 32, 32, 41);
  Tensor fa = random_input(1, 32, 32, 42);
  Rng rng(0);
  Tensor base1, base2;
  {
    DclNet net(tiny_config(), 9);
    net.forward(t1w, fa, false, rng, base1, base2);
  }
  for (int which = 0; which < 2; ++which) {
    ModelConfig cfg = tiny_config();
    if (which == 0)
      cfg.use_fem = false;
    else
      cfg.use_aem = false;
    DclNet net(cfg, 9);
    Tensor q1, q2;
    net.forward(t1w, fa, false, rng, q1, q2);
    CHECK(q1.same_shape(base1));
    CHECK(q1.v != base1.v);
  }
}

TEST_CASE("want_p2=false skips the second decoder") {
  DclNet net(tiny_config(), 13);
  Tensor t1w = random_input(1, 32, 32, 51);
  Tensor fa = random_input(1, 32, 32, 52);
  Rng rng(0);
  Tensor p1, p2, q1, q2;
  net.forward(t1w, fa, false, rng, p1, p2);
  net.forward(t1w, fa, false, rng, q1, q2, nullptr, false);
  CHECK(q1.v == p1.v);
  CHECK(q2.size() == 0);
}

TEST_CASE("end-to-end gradients are finite and mostly nonzero") {
  DclNet net(tiny_config(), 17);
  Tensor t1w = random_input(2, 32, 32, 61);
  Tensor fa = random_input(2, 32, 32, 62);
  Rng rng(0);
  Tensor p1, p2;
  net.forward(t1w, fa, true, rng, p1, p2);

  Tensor gp1(p1.n, p1.c, p1.h, p1.w), gp2(p2.n, p2.c, p2.h, p2.w);
  Rng grng(63);
  for (auto& v : gp1.v) v = static_cast<float>(grng.uniform(-1, 1));
  for (auto& v : gp2.v) v = static_cast<float>(grng.uniform(-1, 1));
  net.zero_grad();
  net.backward(gp1, gp2);

  size_t nonzero = 0, total = 0;
  for (Param* p : net.params()) {
    for (float g : p->g.v) {
      CHECK(std::isfinite(g));
      nonzero += g != 0.0f;
      ++total;
    }
  }
  CHECK(nonzero > total / 2);
}

TEST_CASE("full-model directional gradient check against the training loss") {
  ModelConfig cfg = tiny_config();
  DclNet net(cfg, 19);
  const int n = 1, hw = 16;
  Tensor t1w = random_input(n, hw, hw, 71);
  Tensor fa = random_input(n, hw, hw, 72);
  Rng lrng(73);
  const size_t sz = static_cast<size_t>(n) * cfg.classes * hw * hw;
  std::vector<float> g_truth(sz), ybar(sz);
  for (auto& v : g_truth) v = lrng.bernoulli(0.4) ? 1.0f : 0.0f;
  for (auto& v : ybar) v = lrng.bernoulli(0.6) ? 1.0f : 0.0f;

  auto loss_value = [&]() {
    Rng rng(0);
    Tensor p1, p2;
    net.forward(t1w, fa, true, rng, p1, p2);
    std::vector<double> p1d(p1.v.begin(), p1.v.end());
    std::vector<double> p2d(p2.v.begin(), p2.v.end());
    std::vector<double> gd(g_truth.begin(), g_truth.end());
    std::vector<double> yd(ybar.begin(), ybar.end());
    auto lb = total_loss(p1d, p2d, gd, yd, cfg.classes);
    return lb;
  };

  // analytic gradient
  {
    Rng rng(0);
    Tensor p1, p2;
    net.forward(t1w, fa, true, rng, p1, p2);
    std::vector<double> p1d(p1.v.begin(), p1.v.end());
    std::vector<double> p2d(p2.v.begin(), p2.v.end());
    std::vector<double> gd(g_truth.begin(), g_truth.end());
    std::vector<double> yd(ybar.begin(), ybar.end());
    std::vector<double> gp1(sz, 0.0), gp2(sz, 0.0);
    total_loss(p1d, p2d, gd, yd, cfg.classes, Reduction::Mean, &gp1, &gp2);
    Tensor tg1(n, cfg.classes, hw, hw), tg2(n, cfg.classes, hw, hw);
    for (size_t i = 0; i < sz; ++i) {
      tg1.v[i] = static_cast<float>(gp1[i]);
      tg2.v[i] = static_cast<float>(gp2[i]);
    }
    net.zero_grad();
    net.backward(tg1, tg2);
  }

  // flatten parameter gradient and take a directional finite difference
  auto params = net.params();
  Rng drng(74);
  std::vector<std::vector<float>> dirs;
  double an = 0;
  for (Param* p : params) {
    std::vector<float> d(p->w.v.size());
    for (auto& v : d) v = static_cast<float>(drng.uniform(-1, 1));
    an += dot(p->g.v, d);
    dirs.push_back(std::move(d));
  }
  const double h = 2e-4;  // larger steps cross ReLU kinks and bias the FD
  auto shift = [&](double t) {
    for (size_t i = 0; i < params.size(); ++i)
      for (size_t j = 0; j < dirs[i].size(); ++j)
        params[i]->w.v[j] += static_cast<float>(t) * dirs[i][j];
  };
  shift(h);
  const double lp = loss_value().total;
  shift(-2 * h);
  const double lm = loss_value().total;
  shift(h);
  const double fd = (lp - lm) / (2 * h);
  CHECK(std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-3}) < 5e-2);
}

TEST_CASE("model config JSON round trips and rejects unknown keys") {
  ModelConfig cfg = tiny_config();
  cfg.use_aem = false;
  cfg.simam_per_channel = true;
  const std::string js = model_config_to_json(cfg);
  ModelConfig back = model_config_from_json(js);
  CHECK(back.widths == cfg.widths);
  CHECK(back.classes == cfg.classes);
  CHECK(back.use_aem == false);
  CHECK(back.simam_per_channel == true);

  CHECK_THROWS_WITH_AS(model_config_from_json(R"({"classes": 4, "wibble": 1})"),
                       doctest::Contains("wibble"), std::runtime_error);
  CHECK_THROWS_AS(model_config_from_json(R"({"classes": 0})"), std::runtime_error);
}

TEST_CASE("checkpoint round trip restores the exact forward pass") {
  const auto path = (fs::temp_directory_path() / "dcl_test_model.ckpt").string();
  ModelConfig cfg = tiny_config();
  cfg.dropout = 0.25;
  DclNet net(cfg, 23);

  // push the net off its initialization so buffers are nontrivial
  Tensor t1w = random_input(2, 32, 32, 81);
  Tensor fa = random_input(2, 32, 32, 82);
  Rng rng(0);
  Tensor p1, p2;
  net.forward(t1w, fa, true, rng, p1, p2);

  save_checkpoint(path, net, R"({"note":"rt"})");
  std::string extra;
  auto loaded = load_checkpoint(path, &extra);
  CHECK(extra.find("rt") != std::string::npos);
  CHECK(loaded->config().widths == cfg.widths);
  CHECK(loaded->config().dropout == cfg.dropout);

  Tensor q1, q2, r1, r2;
  net.forward(t1w, fa, false, rng, q1, q2);
  loaded->forward(t1w, fa, false, rng, r1, r2);
  CHECK(q1.v == r1.v);
  CHECK(q2.v == r2.v);

  fs::remove(path);
}
