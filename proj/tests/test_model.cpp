#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <set>

#include "slmfuse/error.hpp"
#include "slmfuse/frozen_lm.hpp"
#include "slmfuse/losses.hpp"
#include "slmfuse/optim.hpp"
#include "slmfuse/projector.hpp"
#include "slmfuse/rng.hpp"

using namespace slmfuse;

namespace {

Tensor random_matrix(Rng& rng, std::size_t r, std::size_t c, double scale = 1.0) {
  Tensor t = Tensor::matrix(r, c);
  for (double& v : t.values()) v = scale * rng.normal();
  return t;
}

}  // namespace

// ---------------------------------------------------------------- projector

TEST_CASE("init_projector shapes, determinism and overcompleteness") {
  ProjectorConfig cfg{8, 16};
  ParamSet a = init_projector(cfg, 1), b = init_projector(cfg, 1);
  CHECK(a.value("enc_w").shape() == std::vector<std::size_t>{16, 8});
  CHECK(a.value("dec_w").shape() == std::vector<std::size_t>{8, 16});
  CHECK(a.value("enc_b").size() == 16);
  CHECK(a.value("dec_b").size() == 8);
  CHECK(a.value("enc_w") == b.value("enc_w"));
  CHECK(a.value("dec_w") == b.value("dec_w"));
  for (double v : a.value("enc_w").values()) CHECK(std::abs(v) <= 1.0 / std::sqrt(8.0));
  for (double v : a.value("dec_w").values()) CHECK(std::abs(v) <= 1.0 / std::sqrt(16.0));
  for (double v : a.value("enc_b").values()) CHECK(v == 0.0);
  CHECK_FALSE(a.entry("enc_b").decay);
  CHECK(a.entry("enc_w").decay);
  CHECK_THROWS_AS(init_projector({16, 8}, 1), ValidationError);
  CHECK_THROWS_AS(init_projector({8, 8}, 1), ValidationError);
}

TEST_CASE("project and reconstruct on scalar cases") {
  ParamSet p;
  p.add("enc_w", Tensor::scalar(1.0));
  p.add("enc_b", Tensor::scalar(0.0), false);
  p.add("dec_w", Tensor::scalar(2.0));
  p.add("dec_b", Tensor::scalar(1.0), false);
  const std::vector<double> e{0.5};
  CHECK(project(p, e)[0] == doctest::Approx(0.46211715726000974).epsilon(1e-15));
  const std::vector<double> t{0.5};
  CHECK(reconstruct(p, t)[0] == 2.0);
}

TEST_CASE("zero inputs with zero biases give zero outputs") {
  ParamSet p = init_projector({8, 16}, 3);
  for (double v : project(p, std::vector<double>(8, 0.0))) CHECK(v == 0.0);
  auto rec = reconstruct(p, std::vector<double>(16, 0.0));
  CHECK(rec.size() == 8);
  for (double v : rec) CHECK(v == 0.0);
  CHECK_THROWS_AS(project(p, std::vector<double>(7, 0.0)), ValidationError);
  CHECK_THROWS_AS(reconstruct(p, std::vector<double>(8, 0.0)), ValidationError);
}

TEST_CASE("projected tokens stay strictly inside (-1, 1)") {
  Rng rng(4);
  ParamSet p = init_projector({6, 12}, 9);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> e(6);
    for (double& v : e) v = 5.0 * rng.normal();
    for (double v : project(p, e)) {
      CHECK(v > -1.0);
      CHECK(v < 1.0);
    }
  }
}

TEST_CASE("graph projector matches the plain forward and its gradients") {
  Rng rng(12);
  ParamSet p = init_projector({5, 9}, 2);
  for (auto& [name, e] : p.entries()) {
    for (double& v : e.value.values()) v += 0.1 * rng.normal();
  }
  const Tensor e = random_matrix(rng, 1, 5);
  Graph g(false);
  Var t = project(g, p, g.constant(e));
  const auto plain = project(p, e.values());
  for (std::size_t i = 0; i < plain.size(); ++i) CHECK(g.value(t)[i] == plain[i]);

  Computation comp = [&](Graph& gr, ParamSet& ps) {
    Var emb = gr.constant(e);
    return reconstruction_loss(emb, reconstruct(gr, ps, project(gr, ps, emb)));
  };
  CHECK(finite_diff_check(comp, p, 1e-5, 1e-6).pass);
}

TEST_CASE("reconstruction-only training decreases the loss for 10 steps") {
  Rng rng(32);
  const Tensor batch = random_matrix(rng, 32, 6);
  ParamSet p = init_projector({6, 12}, 5);
  OptimState st(p, AdamWConfig{});
  auto batch_loss = [&](bool grads) {
    double total = 0.0;
    for (std::size_t r = 0; r < 32; ++r) {
      Tensor row = Tensor::matrix(1, 6);
      for (std::size_t j = 0; j < 6; ++j) row[j] = batch.at(r, j);
      Computation comp = [&](Graph& g, ParamSet& ps) {
        Var emb = g.constant(row);
        return reconstruction_loss(emb, reconstruct(g, ps, project(g, ps, emb)));
      };
      total += grads ? eval_with_grads(comp, p, 1.0 / 32) / 32 : eval_loss(comp, p) / 32;
    }
    return total;
  };
  double prev = batch_loss(false);
  for (int step = 0; step < 10; ++step) {
    batch_loss(true);
    adamw_step(p, st);
    const double now = batch_loss(false);
    CHECK(now < prev);
    prev = now;
  }
}

// ----------------------------------------------------------------- frozen LM

TEST_CASE("frozen LM initialisation is seed-deterministic") {
  LMConfig cfg;
  CHECK(FrozenLM(cfg).hash() == FrozenLM(cfg).hash());
  LMConfig other = cfg;
  other.seed = 1;
  CHECK(FrozenLM(cfg).hash() != FrozenLM(other).hash());
  LMConfig bad = cfg;
  bad.n_heads = 3;
  CHECK_THROWS_AS(FrozenLM{bad}, ValidationError);
}

TEST_CASE("lm_forward shape and sequence limit") {
  LMConfig cfg;
  FrozenLM lm(cfg);
  Rng rng(1);
  Tensor out = lm_forward(lm, random_matrix(rng, 3, 64, 0.5));
  CHECK(out.rows() == 3);
  CHECK(out.cols() == 256);
  CHECK_THROWS_AS(lm_forward(lm, random_matrix(rng, 9, 64)), ValidationError);
  CHECK_THROWS_AS(lm_forward(lm, random_matrix(rng, 2, 32)), ValidationError);
}

TEST_CASE("causality: later inputs never change earlier logits") {
  LMConfig cfg{16, 2, 2, 32, 8, 3};
  FrozenLM lm(cfg);
  Rng rng(77);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t seq = 2 + rng.below(7);
    Tensor x = random_matrix(rng, seq, 16, 0.5);
    const Tensor base = lm.forward(x);
    const std::size_t q = 1 + rng.below(seq - 1);
    for (std::size_t j = 0; j < 16; ++j) x.at(q, j) += rng.normal();
    const Tensor moved = lm.forward(x);
    for (std::size_t p = 0; p < q; ++p)
      for (std::size_t v = 0; v < 32; ++v) REQUIRE(base.at(p, v) == moved.at(p, v));
    bool changed = false;
    for (std::size_t v = 0; v < 32; ++v) changed = changed || base.at(q, v) != moved.at(q, v);
    CHECK(changed);
  }
}

TEST_CASE("input gradients through the frozen LM match finite differences") {
  LMConfig cfg{16, 2, 2, 32, 8, 5};
  FrozenLM lm(cfg);
  Rng rng(21);
  ParamSet inputs;
  inputs.add("x", random_matrix(rng, 3, 16, 0.5));
  const Tensor weight = random_matrix(rng, 3, 32);
  Computation comp = [&](Graph& g, ParamSet& ps) {
    return ad::sum(lm.forward(g, g.param(ps, "x")) * g.constant(weight));
  };
  auto report = finite_diff_check(comp, inputs, 1e-5, 1e-5);
  CHECK(report.pass);
  MESSAGE("max relative error " << report.max_rel_error);

  // Differentiable-input route, and no gradient storage on frozen weights.
  Graph g;
  Var x = g.input(inputs.value("x"), true);
  Var loss = ad::sum(lm.forward(g, x) * g.constant(weight));
  g.backward(loss);
  CHECK(g.grad(x).size() == 48);
  std::size_t constants = 0;
  for (std::size_t id = 0; id < g.size(); ++id) {
    if (!g.requires_grad(id)) {
      CHECK_FALSE(g.has_grad_storage(id));
      ++constants;
    }
  }
  CHECK(constants > 20);
}

TEST_CASE("designated head columns reproduce the full logits") {
  LMConfig cfg;
  FrozenLM lm(cfg);
  Rng rng(2);
  const Tensor x = random_matrix(rng, 4, 64, 0.5);
  const DesignatedVocab dv = draw_designated(256, 12, 99);
  const Tensor full = lm.forward(x);
  const Tensor cols = lm.head_columns(dv.indices);
  Graph g(false);
  const Tensor part = g.value(lm.forward_columns(g, g.input(x, false), cols));
  for (std::size_t p = 0; p < 4; ++p)
    for (std::size_t k = 0; k < 12; ++k) CHECK(part.at(p, k) == full.at(p, dv.indices[k]));
}

TEST_CASE("fuse_logits averages rows") {
  CHECK(fuse_logits(Tensor::row({1.0, 2.0})) == std::vector<double>{1.0, 2.0});
  const Tensor two({2, 2}, {1, 3, 3, 5});
  CHECK(fuse_logits(two) == std::vector<double>{2, 4});
  const Tensor swapped({2, 2}, {3, 5, 1, 3});
  CHECK(fuse_logits(swapped) == fuse_logits(two));
}

TEST_CASE("designated vocabulary and confidence extraction") {
  const auto dv = draw_designated(256, 12, 7);
  CHECK(dv.indices.size() == 12);
  CHECK(std::set<std::size_t>(dv.indices.begin(), dv.indices.end()).size() == 12);
  for (auto i : dv.indices) CHECK(i < 256);
  CHECK(draw_designated(256, 12, 7).indices == dv.indices);
  CHECK_THROWS_AS(draw_designated(4, 4, 1), ValidationError);

  std::vector<double> logits(8, 0.0);
  logits[3] = std::log(3.0);
  DesignatedVocab d{{3, 0}, 0};
  auto phi = extract_confidence(logits, d);
  CHECK(phi[0] == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(phi[1] == 0.5);
  DesignatedVocab rev{{0, 3}, 0};
  auto phi_rev = extract_confidence(logits, rev);
  CHECK(phi_rev[0] == phi[1]);
  CHECK(phi_rev[1] == phi[0]);
  DesignatedVocab oob{{8}, 0};
  CHECK_THROWS_AS(extract_confidence(logits, oob), ValidationError);
}

// -------------------------------------------------------------------- losses

TEST_CASE("class weights from inverse frequencies") {
  std::vector<LabelVector> one{{1}, {0}, {0}, {0}};
  auto w = class_weights(one, 1);
  CHECK(w.pos[0] == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(w.neg[0] == doctest::Approx(4.0 / 6.0).epsilon(1e-15));

  std::vector<LabelVector> two{{1, 1}, {1, 0}, {0, 1}, {0, 0}, {0, 1},
                               {0, 0}, {0, 1}, {kUnlabeled, 0}};
  auto w2 = class_weights(two, 2);
  CHECK(w2.pos[0] == doctest::Approx(7.0 / 8.0).epsilon(1e-15));
  CHECK(w2.neg[0] == doctest::Approx(0.35).epsilon(1e-15));
  CHECK(w2.pos[1] == w2.neg[1]);  // 4 positive, 4 negative

  std::vector<LabelVector> none{{1}, {1}};
  std::vector<std::string> names{"fracture"};
  try {
    class_weights(none, 1, names);
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("fracture") != std::string::npos);
  }
}

TEST_CASE("wbce_term examples") {
  CHECK(std::abs(wbce_term(1, 0.5, 2.0, 1.0) - 1.3862943611198906) < 1e-9);
  CHECK(wbce_term(1, 1.0, 1.0, 1.0) < 1e-6);
  CHECK(std::abs(wbce_term(0, 0.5, 1.0, 1.0) - 0.6931471805599453) < 1e-9);
}

TEST_CASE("asl_term examples") {
  ASLConfig cfg;
  CHECK(asl_term(0, 0.05, cfg) == 0.0);
  CHECK(asl_term(0, 0.01, cfg) == 0.0);
  CHECK(asl_term(1, 1.0, cfg) < 1e-12);
  CHECK(std::abs(asl_term(0, 0.55, cfg) - 0.0433216987849966) < 1e-9);
}

TEST_CASE("masked loss examples") {
  LossSettings asl;
  LabelVector all_u(5, kUnlabeled);
  CHECK(masked_multilabel_loss(all_u, std::vector<double>{0.1, 0.9, 0.5, 0.2, 0.7}, asl) == 0.0);
  CHECK(masked_multilabel_loss(LabelVector{1, kUnlabeled}, std::vector<double>{1.0, 0.3}, asl) < 1e-12);
  LossSettings avg{LossKind::Avg, {}, unit_weights(2)};
  CHECK(std::abs(masked_multilabel_loss(LabelVector{1, 0}, std::vector<double>{0.5, 0.5}, avg) -
                 1.3862943611198906) < 1e-9);
}

TEST_CASE("projector_loss examples") {
  LossSettings asl;
  const std::vector<double> e{1, 0, 2}, zero{0, 0, 0};
  CHECK(projector_loss(e, e, LabelVector{kUnlabeled}, std::vector<double>{0.3}, 10, asl) == 0.0);
  CHECK(std::abs(projector_loss(e, zero, LabelVector{1}, std::vector<double>{0.3}, 0, asl) - 5.0) < 1e-9);
  // Classification term of exactly 0.3 via a unit-weight positive.
  const double phi = std::exp(-0.3);
  LossSettings avg{LossKind::Avg, {}, unit_weights(1)};
  CHECK(std::abs(projector_loss(e, e, LabelVector{1}, std::vector<double>{phi}, 10, avg) - 3.0) < 1e-9);
  CHECK_THROWS_AS(projector_loss(e, std::vector<double>{0, 0}, LabelVector{1},
                                 std::vector<double>{0.3}, 1, asl),
                  ValidationError);
}

TEST_CASE("loss properties") {
  Rng rng(31);
  ASLConfig cfg;
  double prev = 0.0;
  for (double phi = 0.0; phi <= 1.0; phi += 0.001) {
    const double v = asl_term(0, phi, cfg);
    CHECK(v >= prev);
    if (phi <= cfg.margin) CHECK(v == 0.0);
    prev = v;
  }
  ASLConfig plain{0.0, 0.0};
  for (int i = 0; i < 100; ++i) {
    const double phi = rng.uniform(0.0, 1.0);
    CHECK(asl_term(0, phi, plain) == doctest::Approx(wbce_term(0, phi, 1.0, 1.0)).epsilon(1e-12));
    const double wp = rng.uniform(0.1, 3), wn = rng.uniform(0.1, 3);
    CHECK(wbce_term(1, phi, wp, wn) == doctest::Approx(wbce_term(0, 1.0 - phi, wn, wp)).epsilon(1e-9));
    CHECK(wbce_term(0, phi, wp, wn) >= 0.0);
    CHECK(asl_term(1, phi, cfg) >= 0.0);
  }
}

TEST_CASE("graph losses agree with the scalar forms and mask gradients") {
  Rng rng(8);
  for (LossKind kind : {LossKind::Asl, LossKind::Avg}) {
    for (int trial = 0; trial < 50; ++trial) {
      const std::size_t k = 1 + rng.below(6);
      LabelVector y(k);
      std::vector<double> phi(k);
      ClassWeights w = unit_weights(k);
      for (std::size_t i = 0; i < k; ++i) {
        y[i] = static_cast<std::int8_t>(static_cast<int>(rng.below(3)) - 1);
        phi[i] = rng.uniform(0.01, 0.99);
        w.pos[i] = rng.uniform(0.2, 3);
        w.neg[i] = rng.uniform(0.2, 3);
      }
      LossSettings s{kind, {}, w};
      Graph g;
      Var p = g.input(Tensor::row(phi), true);
      Var loss = masked_multilabel_loss(g, p, y, s);
      CHECK(loss.item() == doctest::Approx(masked_multilabel_loss(y, phi, s)).epsilon(1e-12));
      g.backward(loss);
      for (std::size_t i = 0; i < k; ++i) {
        if (y[i] == kUnlabeled) CHECK(g.grad(p)[i] == 0.0);
      }
    }
  }
}
