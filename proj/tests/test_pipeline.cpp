#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <filesystem>
#include <set>

#include "slmfuse/binio.hpp"
#include "slmfuse/error.hpp"
#include "slmfuse/mmf.hpp"
#include "slmfuse/pipeline.hpp"

using namespace slmfuse;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("slmfuse_test_pipeline_" + name);
  fs::remove_all(p);
  return p;
}

std::vector<std::size_t> iota_ids(std::size_t n) {
  std::vector<std::size_t> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = i;
  return ids;
}

// Small three-source latent dataset.
Dataset small_dataset(std::size_t n, std::uint64_t seed = 0) {
  GenConfig cfg = planted_profile(n);
  cfg.sources.resize(3);
  cfg.tasks.resize(4);
  cfg.seed = seed;
  return generate(cfg);
}

TrainConfig small_train(std::size_t epochs) {
  TrainConfig tc;
  tc.epochs = epochs;
  tc.lm = LMConfig{32, 2, 2, 64, 8, 0};
  return tc;
}

}  // namespace

TEST_CASE("split_by_patient keeps patients whole") {
  const std::vector<std::uint32_t> patients{0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17};
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Split s = split_by_patient(patients, 0.75, seed);
    const bool first_in_train = std::count(s.train.begin(), s.train.end(), 0) == 1;
    for (std::size_t i : {0, 1, 2}) {
      CHECK((std::count(s.train.begin(), s.train.end(), i) == 1) == first_in_train);
    }
    CHECK(s.train.size() + s.test.size() == patients.size());
  }
}

TEST_CASE("100 single-stay patients give exactly 75 train records") {
  std::vector<std::uint32_t> patients(100);
  for (std::uint32_t i = 0; i < 100; ++i) patients[i] = i;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Split s = split_by_patient(patients, 0.75, seed);
    CHECK(s.train.size() == 75);
    CHECK(s.test.size() == 25);
    std::set<std::size_t> train(s.train.begin(), s.train.end());
    for (std::size_t i : s.test) CHECK(train.count(i) == 0);
  }
  CHECK(split_by_patient(patients, 0.75, 4).train == split_by_patient(patients, 0.75, 4).train);
  CHECK(split_by_patient(patients, 0.75, 4).train != split_by_patient(patients, 0.75, 5).train);
}

TEST_CASE("split_by_patient errors") {
  const std::vector<std::uint32_t> one{7, 7, 7};
  CHECK_THROWS_AS(split_by_patient(one, 0.75, 0), ValidationError);
  const std::vector<std::uint32_t> two{1, 2};
  CHECK_THROWS_AS(split_by_patient(two, 1.0, 0), ValidationError);
  CHECK_THROWS_AS(split_by_patient(two, 0.0, 0), ValidationError);
}

TEST_CASE("make_splits is patient-disjoint across fit, val and test") {
  const Dataset data = small_dataset(600);
  const DataSplits s = make_splits(data, 3);
  CHECK(s.fit.size() + s.val.size() + s.test.size() == data.size());
  auto patients_of = [&](const std::vector<std::size_t>& ids) {
    std::set<std::uint32_t> out;
    for (std::size_t i : ids) out.insert(data.patients[i]);
    return out;
  };
  const auto f = patients_of(s.fit), v = patients_of(s.val), t = patients_of(s.test);
  for (auto p : f) {
    CHECK(v.count(p) == 0);
    CHECK(t.count(p) == 0);
  }
  for (auto p : v) CHECK(t.count(p) == 0);
  CHECK(s.test.size() <= data.size() / 4 + 10);
}

TEST_CASE("raw records encode with fitted stats") {
  GenConfig cfg = planted_profile(80);
  cfg.mode = DataMode::Raw;
  cfg.sources = desk_sources(DataMode::Raw);
  const Dataset data = generate(cfg);
  const auto ids = iota_ids(60);
  SourceStats stats;
  const auto emb = encode_records(data, ids, stats, true);
  REQUIRE(emb.size() == 6);
  CHECK(emb[2].cols() == 22);
  CHECK(emb[3].cols() == 33);
  CHECK(emb[0].cols() == 16);
  CHECK(emb[5].cols() == 16);
  CHECK_FALSE(stats[0].has_value());
  REQUIRE(stats[2].has_value());
  // Stats are stored at f32 precision.
  Tensor rounded = stats[2]->mean;
  round_to_f32(rounded);
  CHECK(rounded == stats[2]->mean);
  for (std::size_t j = 0; j < emb[2].cols(); ++j) {
    double m = 0;
    for (std::size_t r = 0; r < 60; ++r) m += emb[2].at(r, j);
    CHECK(std::abs(m / 60) < 1e-5);
  }
  // Held-out records reuse the fitted stats; without stats they are refused.
  const std::vector<std::size_t> rest{60, 61, 62};
  CHECK(encode_records(data, rest, stats, false)[2].rows() == 3);
  SourceStats none;
  CHECK_THROWS_AS(encode_records(data, rest, none, false), ValidationError);
  // xr keeps the latest screening, axr averages; both differ in general.
  CHECK_FALSE(emb[0] == emb[1]);
}

TEST_CASE("one optimizer step decreases the batch loss") {
  const Dataset data = small_dataset(64);
  const auto ids = iota_ids(32);
  for (TrainMode mode : {TrainMode::Joint, TrainMode::Isolated}) {
    TrainConfig tc = small_train(1);
    tc.batch = 32;
    tc.lr = 1e-3;
    tc.mode = mode;
    const Checkpoint before = init_checkpoint(data, ids, tc);
    const Checkpoint after = train(data, ids, tc);
    const FrozenLM lm(tc.lm);
    SourceStats st;
    const auto emb = encode_records(data, ids, st, true);
    std::vector<LabelVector> y;
    for (std::size_t i : ids) y.push_back(data.labels[i]);
    if (mode == TrainMode::Joint) {
      CHECK(batch_loss(after, lm, emb, y) < batch_loss(before, lm, emb, y));
    } else {
      for (std::size_t s = 0; s < 3; ++s) CHECK(batch_loss(after, lm, emb, y, s) < batch_loss(before, lm, emb, y, s));
    }
    CHECK(after.lm_hash == lm.hash());
    CHECK(after.lm_hash == FrozenLM(tc.lm).hash());
  }
}

TEST_CASE("all-unlabeled batches train only the reconstruction term") {
  Dataset data = small_dataset(40);
  for (auto& y : data.labels) std::fill(y.begin(), y.end(), kUnlabeled);
  const auto ids = iota_ids(40);
  TrainConfig tc = small_train(1);
  const Checkpoint ck = init_checkpoint(data, ids, tc);
  Checkpoint no_beta = ck;
  no_beta.config.beta = 0.0;
  const FrozenLM lm(tc.lm);
  SourceStats st;
  const auto emb = encode_records(data, ids, st, true);
  CHECK(batch_loss(ck, lm, emb, data.labels) == batch_loss(no_beta, lm, emb, data.labels));

  TrainConfig tc0 = tc;
  tc0.beta = 0.0;
  const Checkpoint a = train(data, ids, tc), b = train(data, ids, tc0);
  for (const auto& [name, e] : a.params.entries()) CHECK(e.value == b.params.value(name));
}

TEST_CASE("isolated training keeps sources independent") {
  const Dataset data = small_dataset(60);
  Dataset changed = data;
  for (double& v : changed.embeddings[1].values()) v = -v + 0.5;
  const auto ids = iota_ids(60);
  TrainConfig tc = small_train(2);
  const Checkpoint a = train_isolated(data, ids, tc), b = train_isolated(changed, ids, tc);
  for (const auto& [name, e] : a.params.entries()) {
    CAPTURE(name);
    if (name.rfind("axr/", 0) == 0) CHECK_FALSE(e.value == b.params.value(name));
    else CHECK(e.value == b.params.value(name));
  }
  CHECK(a.history.size() == 3);
  CHECK(a.history[0].size() == 2);
  const Checkpoint j = train_joint(data, ids, tc);
  CHECK(j.designated.indices == a.designated.indices);
  CHECK(j.history.size() == 1);
}

TEST_CASE("prediction modes, thresholds and determinism") {
  const Dataset data = small_dataset(60);
  const auto ids = iota_ids(40);
  const std::vector<std::size_t> held{40, 41, 42, 43, 44, 45};
  TrainConfig tc = small_train(1);
  const Checkpoint joint = train_joint(data, ids, tc);
  const Checkpoint iso = train_isolated(data, ids, tc);

  const Predictions p = predict(joint, data, held, {PredictKind::Joint});
  CHECK(p.phi.rows() == 6);
  CHECK(p.phi.cols() == 4);
  CHECK(predict(joint, data, held, {PredictKind::Joint}).phi == p.phi);
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t k = 0; k < 4; ++k) {
      CHECK(p.phi.at(r, k) > 0.0);
      CHECK(p.phi.at(r, k) < 1.0);
      CHECK(p.labels[r][k] == (p.phi.at(r, k) >= 0.5 ? 1 : 0));
    }
  // Boundary is inclusive.
  const double at = p.phi.at(0, 0);
  CHECK(predict(joint, data, held, {PredictKind::Joint}, at).labels[0][0] == 1);
  CHECK(predict(joint, data, held, {PredictKind::Joint}, std::nextafter(at, 1.0)).labels[0][0] == 0);

  CHECK_THROWS_AS(predict(iso, data, held, {PredictKind::Joint}), ValidationError);
  CHECK_THROWS_AS(predict(joint, data, held, {PredictKind::IsoJoint}), ValidationError);
  CHECK_NOTHROW(predict(iso, data, held, {PredictKind::IsoJoint}));
  CHECK_NOTHROW(predict(iso, data, held, {PredictKind::Single, 2}));
  CHECK_NOTHROW(predict(joint, data, held, {PredictKind::Single, 0}));

  const PredictMode m = parse_predict_mode("single:proc", data.sources);
  CHECK(m.kind == PredictKind::Single);
  CHECK(m.source == 2);
  CHECK(to_string(m, data.sources) == "single:proc");
  CHECK_THROWS_AS(parse_predict_mode("single:nope", data.sources), ValidationError);
  CHECK_THROWS_AS(parse_predict_mode("bss", data.sources), ValidationError);
}

TEST_CASE("joint prediction with one source equals single-source prediction") {
  GenConfig cfg = planted_profile(40);
  cfg.sources.resize(1);
  cfg.tasks.resize(2);
  cfg.allow_single_source_tasks = true;
  const Dataset data = generate(cfg);
  const auto ids = iota_ids(40);
  const Checkpoint ck = train_joint(data, ids, small_train(1));
  CHECK(predict(ck, data, ids, {PredictKind::Joint}).phi == predict(ck, data, ids, {PredictKind::Single, 0}).phi);
}

TEST_CASE("best-source selection rules") {
  auto metrics = [](double p, double r, std::size_t n = 10) {
    TaskMetrics m;
    m.precision = p;
    m.recall = r;
    m.n_labeled = n;
    return m;
  };
  // Source 1 dominates on task 0; all-zero task 1 ties to source 0; task 2
  // ties on F1 and goes to higher recall.
  std::vector<std::vector<TaskMetrics>> v{
      {metrics(0.5, 0.5), metrics(0, 0), metrics(0.5, 1.0 / 3)},
      {metrics(0.6, 0.7), metrics(0, 0), metrics(1.0 / 3, 0.5)},
      {metrics(0.4, 0.4), metrics(0, 0), metrics(0.4, 0.4)},
  };
  BssSelection s = select_best_sources(v);
  CHECK(s.source == std::vector<std::size_t>{1, 0, 1});
  CHECK(s.selectable == std::vector<bool>{true, true, true});

  std::vector<std::vector<TaskMetrics>> none{{metrics(0, 0, 0)}, {metrics(0, 0, 0)}};
  s = select_best_sources(none);
  CHECK(s.source[0] == 0);
  CHECK_FALSE(s.selectable[0]);
}

TEST_CASE("BSS picks the source that carries a single-source task") {
  GenConfig cfg = planted_profile(900);
  cfg.sources.resize(3);
  cfg.tasks.resize(3);
  cfg.allow_single_source_tasks = true;
  cfg.noise_std = 0.1;
  for (std::size_t k = 0; k < 3; ++k) {
    cfg.tasks[k].sources = {(k + 1) % 3};
    cfg.tasks[k].positive_rate = 0.5;
    cfg.tasks[k].missing_rate = 0.0;
  }
  const Dataset data = generate(cfg);
  const DataSplits sp = make_splits(data, 0);
  TrainConfig tc = small_train(15);
  tc.lr = 3e-3;
  const Checkpoint iso = train_isolated(data, sp.fit, tc);
  const BssSelection sel = bss_select(iso, data, sp.val);
  CHECK(sel.source == std::vector<std::size_t>{1, 2, 0});

  const Predictions p = predict_bss(iso, data, sp.test, sel);
  const Predictions s2 = predict(iso, data, sp.test, {PredictKind::Single, 2});
  for (std::size_t r = 0; r < sp.test.size(); ++r) CHECK(p.phi.at(r, 1) == s2.phi.at(r, 1));

  const Checkpoint joint = train_joint(data, sp.fit, small_train(1));
  CHECK_THROWS_AS(bss_select(joint, data, sp.val), ValidationError);
}

TEST_CASE("checkpoints round-trip and are verified on load") {
  const Dataset data = small_dataset(50);
  const auto ids = iota_ids(40);
  const std::vector<std::size_t> held{40, 41, 42, 43};
  TrainConfig tc = small_train(2);
  tc.loss = LossKind::Avg;
  const Checkpoint ck = train_joint(data, ids, tc);
  const fs::path dir = scratch("ckpt");
  save_checkpoint(ck, dir);
  CHECK(fs::is_regular_file(dir / "designated_vocab.txt"));
  CHECK(fs::is_regular_file(dir / "proj_xr_enc_w.mmf"));
  const Checkpoint back = load_checkpoint(dir);
  CHECK(back.history == ck.history);
  CHECK(back.weights.pos == ck.weights.pos);
  CHECK(back.config.loss == LossKind::Avg);
  CHECK(back.designated.indices == ck.designated.indices);
  for (const auto& [name, e] : ck.params.entries()) CHECK(back.params.value(name) == e.value);
  CHECK(predict(back, data, held, {PredictKind::Joint}).phi == predict(ck, data, held, {PredictKind::Joint}).phi);

  // Tampered designated list.
  write_file(dir / "designated_vocab.txt", "1\n2\n3\n4\n");
  CHECK_THROWS_AS(load_checkpoint(dir), ValidationError);
  save_checkpoint(ck, dir);
  fs::remove(dir / "proj_proc_dec_b.mmf");
  CHECK_THROWS_AS(load_checkpoint(dir), ValidationError);
  // Different LM seed in the manifest fails the hash check.
  save_checkpoint(ck, dir);
  std::string manifest = read_file(dir / "manifest");
  const auto pos = manifest.find("\"max_seq\": 8,\n      \"n_heads\": 2,\n      \"n_layers\": 2,\n      \"seed\": 0");
  REQUIRE(pos != std::string::npos);
  manifest.replace(manifest.find("\"seed\": 0", pos), 9, "\"seed\": 5");
  write_file(dir / "manifest", manifest);
  try {
    load_checkpoint(dir);
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("hash") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("raw-mode checkpoints carry feature stats") {
  GenConfig cfg = planted_profile(50);
  cfg.mode = DataMode::Raw;
  cfg.sources = desk_sources(DataMode::Raw);
  const Dataset data = generate(cfg);
  const auto ids = iota_ids(40);
  TrainConfig tc = small_train(1);
  tc.lm.d_model = 48;
  const Checkpoint ck = train_joint(data, ids, tc);
  const fs::path dir = scratch("rawckpt");
  save_checkpoint(ck, dir);
  CHECK(fs::is_regular_file(dir / "stats_lab_mean.mmf"));
  const Checkpoint back = load_checkpoint(dir);
  REQUIRE(back.stats[3].has_value());
  CHECK(back.stats[3]->std == ck.stats[3]->std);
  const std::vector<std::size_t> held{40, 41, 42};
  CHECK(predict(back, data, held, {PredictKind::Joint}).phi == predict(ck, data, held, {PredictKind::Joint}).phi);
  fs::remove_all(dir);
}

TEST_CASE("end-to-end gradients match finite differences") {
  for (std::uint64_t seed : {0, 7}) {
    const GradCheckReport r = pipeline_gradcheck(seed, 1e-4);
    CHECK(r.pass);
    CHECK(r.entries.size() == 12);
    MESSAGE("seed " << seed << " max relative error " << r.max_rel_error);
  }
}
