#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "slmfuse/binio.hpp"
#include "slmfuse/datagen.hpp"
#include "slmfuse/error.hpp"

using namespace slmfuse;
namespace fs = std::filesystem;

namespace {

double std_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("slmfuse_test_datagen_" + name);
  fs::remove_all(p);
  return p;
}

std::map<std::string, std::string> dir_bytes(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = read_file(e.path());
  }
  return out;
}

}  // namespace

TEST_CASE("planted_labels thresholds") {
  const Tensor a({1, 2}, {1.0, 0.0});
  const std::vector<double> z{1.2, -3.0};
  CHECK(planted_labels(z, a, std::vector<double>{0.0})[0] == 1);
  CHECK(planted_labels(z, a, std::vector<double>{1.2})[0] == 0);

  const std::vector<double> dir{3.0, 4.0};
  CHECK(std::abs(planted_threshold(dir, 0.5)) < 1e-12);
  const std::vector<double> unit{0.6, 0.8};
  const double tau = planted_threshold(unit, 0.1587);
  CHECK(std::abs(tau - 1.0) < 1e-3);
  CHECK(std::abs(std_normal_cdf(tau) - 0.8413) < 1e-12);
  // Threshold scales with the direction norm.
  CHECK(planted_threshold(dir, 0.1587) == doctest::Approx(5.0 * tau).epsilon(1e-12));

  const Tensor zero({1, 2}, {0.0, 0.0});
  CHECK_THROWS_AS(planted_labels(z, zero, std::vector<double>{0.0}), ValidationError);
  CHECK_THROWS_AS(planted_threshold(std::vector<double>{0.0, 0.0}, 0.3), ValidationError);
  CHECK_THROWS_AS(planted_labels(std::vector<double>{1.0}, a, std::vector<double>{0.0}),
                  ValidationError);
}

TEST_CASE("table1 profile counts and ratios") {
  const GenConfig full = table1_profile();
  REQUIRE(full.tasks.size() == 12);
  CHECK(full.n_records == 90811);
  CHECK(full.tasks[0].name == "fracture");
  CHECK(full.tasks[0].exact_pos == 1527);
  CHECK(full.tasks[0].exact_neg == 85);
  CHECK(full.tasks[1].exact_pos + full.tasks[1].exact_neg == 1611);
  CHECK(full.tasks[11].exact_neg == 88581);
  const double fracture = static_cast<double>(full.tasks[0].exact_pos) / full.tasks[0].exact_neg;
  const double los = static_cast<double>(full.tasks[10].exact_pos) / full.tasks[10].exact_neg;
  CHECK(std::round(fracture * 100) / 100 == doctest::Approx(17.96));
  CHECK(std::round(los * 100) / 100 == doctest::Approx(0.10));

  const GenConfig small = table1_profile(0.01);
  CHECK(small.n_records == 908);
  for (const auto& t : small.tasks) {
    CHECK(t.exact_pos >= 1);
    CHECK(t.exact_neg >= 1);
    CHECK(t.exact_pos + t.exact_neg <= small.n_records);
  }
}

TEST_CASE("exact-count generation reproduces the requested triples") {
  const GenConfig cfg = table1_profile(0.05);
  const Dataset data = generate(cfg);
  CHECK(data.size() == cfg.n_records);
  for (std::size_t t = 0; t < cfg.tasks.size(); ++t) {
    const LabelCounts c = count_labels(data, t);
    CHECK(c.pos == cfg.tasks[t].exact_pos);
    CHECK(c.neg == cfg.tasks[t].exact_neg);
    CHECK(c.missing == cfg.n_records - c.pos - c.neg);
  }
  GenConfig bad = cfg;
  bad.tasks[0].exact_pos = cfg.n_records;
  CHECK_THROWS_AS(generate(bad), ValidationError);
}

TEST_CASE("table1 task directions span several sources") {
  GenConfig cfg = table1_profile(0.01);
  const Dataset data = generate(cfg);
  const std::size_t n_src = cfg.sources.size(), m = n_src * cfg.latent_per_source;
  CHECK(data.directions.cols() == m);
  for (std::size_t t = 0; t < data.num_tasks(); ++t) {
    CHECK(data.task_sources[t].size() >= 2);
  }
}

TEST_CASE("no missing labels when every missing rate is zero") {
  GenConfig cfg = planted_profile(500);
  for (auto& t : cfg.tasks) t.missing_rate = 0.0;
  const Dataset data = generate(cfg);
  for (std::size_t t = 0; t < data.num_tasks(); ++t) CHECK(count_labels(data, t).missing == 0);
}

TEST_CASE("sampled positive rates converge to the planted rate") {
  GenConfig cfg = planted_profile(20000);
  for (auto& t : cfg.tasks) t.missing_rate = 0.0;
  cfg.seed = 3;
  const Dataset data = generate(cfg);
  const double n = static_cast<double>(data.size());
  for (std::size_t t = 0; t < data.num_tasks(); ++t) {
    const double p = cfg.tasks[t].positive_rate;
    const double rate = count_labels(data, t).pos / n;
    CAPTURE(data.task_names[t]);
    CHECK(std::abs(rate - p) < 4.0 * std::sqrt(p * (1 - p) / n));
  }
}

TEST_CASE("missing rates are respected in sampled mode") {
  GenConfig cfg = planted_profile(20000);
  const Dataset data = generate(cfg);
  for (std::size_t t = 0; t < data.num_tasks(); ++t) {
    const double rate = count_labels(data, t).missing / static_cast<double>(data.size());
    CHECK(std::abs(rate - 0.2) < 4.0 * std::sqrt(0.2 * 0.8 / data.size()));
  }
}

TEST_CASE("task directions span at least two sources unless allowed") {
  GenConfig cfg = planted_profile(100);
  cfg.tasks[0].sources = {3};
  CHECK_THROWS_AS(generate(cfg), ValidationError);
  cfg.allow_single_source_tasks = true;
  const Dataset data = generate(cfg);
  CHECK(data.task_sources[0] == std::vector<std::size_t>{3});
  for (std::size_t j = 0; j < data.directions.cols(); ++j) {
    const bool inside = j / cfg.latent_per_source == 3;
    CHECK((data.directions.at(0, j) != 0.0) == inside);
  }
}

TEST_CASE("patients group consecutive stays") {
  GenConfig cfg = planted_profile(3000);
  const Dataset data = generate(cfg);
  std::set<std::uint32_t> seen;
  std::size_t multi = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (i > 0 && data.patients[i] == data.patients[i - 1]) {
      ++multi;
      continue;
    }
    CHECK(seen.insert(data.patients[i]).second);
  }
  CHECK(multi > 0);
  // Geometric(0.5) stays: about two per patient.
  CHECK(seen.size() > data.size() / 3);
  CHECK(seen.size() < 2 * data.size() / 3);
}

TEST_CASE("latent datasets round-trip and are byte-deterministic") {
  GenConfig cfg = planted_profile(300);
  cfg.seed = 11;
  const fs::path a = scratch("a"), b = scratch("b");
  write_dataset(generate(cfg), a);
  write_dataset(generate(cfg), b);
  CHECK(dir_bytes(a) == dir_bytes(b));

  const Dataset back = read_dataset(a);
  const Dataset orig = generate(cfg);
  CHECK(back.labels == orig.labels);
  CHECK(back.patients == orig.patients);
  CHECK(back.task_names == orig.task_names);
  CHECK(back.task_sources == orig.task_sources);
  CHECK(back.thresholds == orig.thresholds);
  CHECK(back.directions == orig.directions);
  REQUIRE(back.embeddings.size() == 6);
  for (std::size_t s = 0; s < 6; ++s) CHECK(back.embeddings[s] == orig.embeddings[s]);

  fs::remove(a / "src_lab.bin");
  try {
    read_dataset(a);
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("src_lab.bin") != std::string::npos);
  }
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("raw datasets round-trip") {
  GenConfig cfg = planted_profile(40);
  cfg.mode = DataMode::Raw;
  cfg.sources = desk_sources(DataMode::Raw);
  const Dataset orig = generate(cfg);
  REQUIRE(orig.raw.size() == 6);
  CHECK(orig.raw[2].series.size() == 40);
  CHECK(orig.raw[2].series[0].size() == 2);
  CHECK(orig.raw[0].screenings.size() == 40);
  CHECK(orig.raw[5].tokens.size() == 40);
  for (const auto& shots : orig.raw[1].screenings) {
    CHECK(!shots.empty());
    for (const auto& s : shots) {
      CHECK(s.time >= 0.0);
      CHECK(s.time <= 72.0);
      CHECK(s.embedding.size() == 32);
    }
  }
  for (const auto& toks : orig.raw[5].tokens) {
    for (auto t : toks) CHECK(t < 64);
  }

  const fs::path dir = scratch("raw");
  write_dataset(orig, dir);
  CHECK(fs::is_regular_file(dir / "raw_txt" / "payload.bin"));
  const Dataset back = read_dataset(dir);
  CHECK(back.mode == DataMode::Raw);
  CHECK(back.raw[2].series == orig.raw[2].series);
  CHECK(back.raw[5].tokens == orig.raw[5].tokens);
  for (std::size_t i = 0; i < 40; ++i) {
    REQUIRE(back.raw[0].screenings[i].size() == orig.raw[0].screenings[i].size());
    for (std::size_t j = 0; j < orig.raw[0].screenings[i].size(); ++j) {
      CHECK(back.raw[0].screenings[i][j].time == orig.raw[0].screenings[i][j].time);
      CHECK(back.raw[0].screenings[i][j].embedding == orig.raw[0].screenings[i][j].embedding);
    }
  }
  fs::remove_all(dir);
}

TEST_CASE("different seeds give different data") {
  GenConfig cfg = planted_profile(50);
  const Dataset a = generate(cfg);
  cfg.seed = 1;
  const Dataset b = generate(cfg);
  CHECK_FALSE(a.embeddings[0] == b.embeddings[0]);
}
