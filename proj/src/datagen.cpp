#include "slmfuse/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include <boost/math/distributions/normal.hpp>

#include "json.hpp"
#include "slmfuse/binio.hpp"
#include "slmfuse/error.hpp"
#include "slmfuse/mmf.hpp"
#include "slmfuse/rng.hpp"

namespace slmfuse {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(DataMode mode) { return mode == DataMode::Latent ? "latent" : "raw"; }

DataMode data_mode_from_string(const std::string& s) {
  if (s == "latent") return DataMode::Latent;
  if (s == "raw") return DataMode::Raw;
  throw ValidationError("unknown data mode '" + s + "' (expected latent or raw)");
}

LabelVector planted_labels(std::span<const double> z, const Tensor& directions,
                           std::span<const double> thresholds) {
  const std::size_t k = directions.rows(), m = directions.cols();
  if (z.size() != m || thresholds.size() != k) {
    throw ValidationError("planted_labels: latent dim " + std::to_string(z.size()) +
                          ", directions " + directions.shape_string() + ", " +
                          std::to_string(thresholds.size()) + " thresholds");
  }
  LabelVector y(k);
  for (std::size_t t = 0; t < k; ++t) {
    double dot = 0.0, norm = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      dot += directions.at(t, j) * z[j];
      norm += directions.at(t, j) * directions.at(t, j);
    }
    if (norm == 0.0) throw ValidationError("planted_labels: task " + std::to_string(t) + " has a zero direction");
    y[t] = dot > thresholds[t] ? 1 : 0;
  }
  return y;
}

double planted_threshold(std::span<const double> direction, double positive_rate) {
  if (!(positive_rate > 0.0 && positive_rate < 1.0)) {
    throw ValidationError("positive rate must be in (0, 1), got " + std::to_string(positive_rate));
  }
  double norm = 0.0;
  for (double v : direction) norm += v * v;
  if (norm == 0.0) throw ValidationError("planted_threshold: zero direction");
  boost::math::normal_distribution<double> std_normal;
  return std::sqrt(norm) * boost::math::quantile(std_normal, 1.0 - positive_rate);
}

void validate(const GenConfig& cfg) {
  validate_sources(cfg.sources, cfg.mode == DataMode::Latent);
  if (cfg.n_records < 2) throw ValidationError("gen: n_records must be at least 2");
  if (!(cfg.stay_p > 0.0 && cfg.stay_p <= 1.0)) throw ValidationError("gen: stay_p must be in (0, 1]");
  if (!(cfg.patient_corr >= 0.0 && cfg.patient_corr < 1.0)) {
    throw ValidationError("gen: patient_corr must be in [0, 1)");
  }
  if (cfg.latent_per_source == 0) throw ValidationError("gen: latent_per_source must be positive");
  if (!(cfg.noise_std >= 0.0)) throw ValidationError("gen: noise_std must be nonnegative");
  if (cfg.tasks.empty()) throw ValidationError("gen: at least one task is required");
  if (cfg.sources.size() < 2 && !cfg.allow_single_source_tasks) {
    throw ValidationError("gen: task directions must span two sources; configure at least two");
  }
  std::set<std::string> names;
  for (const auto& t : cfg.tasks) {
    if (!names.insert(t.name).second) throw ValidationError("gen: duplicate task '" + t.name + "'");
    if (!(t.missing_rate >= 0.0 && t.missing_rate < 1.0)) {
      throw ValidationError("gen: task '" + t.name + "' missing rate must be in [0, 1)");
    }
    if (cfg.exact_counts) {
      if (t.exact_pos + t.exact_neg > cfg.n_records) {
        throw ValidationError("gen: task '" + t.name + "' requests " +
                              std::to_string(t.exact_pos + t.exact_neg) +
                              " labeled records but only " + std::to_string(cfg.n_records) +
                              " exist");
      }
    } else if (!(t.positive_rate > 0.0 && t.positive_rate < 1.0)) {
      throw ValidationError("gen: task '" + t.name + "' positive rate must be in (0, 1)");
    }
    std::set<std::size_t> distinct(t.sources.begin(), t.sources.end());
    for (std::size_t s : distinct) {
      if (s >= cfg.sources.size()) {
        throw ValidationError("gen: task '" + t.name + "' refers to source " + std::to_string(s));
      }
    }
    if (!t.sources.empty() && distinct.size() < 2 && !cfg.allow_single_source_tasks) {
      throw ValidationError("gen: task '" + t.name + "' must span at least two sources");
    }
  }
}

std::vector<SourceSpec> desk_sources(DataMode mode) {
  if (mode == DataMode::Latent) {
    return {
        {"xr", Modality::Image, 16, 0},
        {"axr", Modality::Image, 16, 0, true},
        {"proc", Modality::TimeSeries, 16, 0},
        {"lab", Modality::TimeSeries, 16, 0},
        {"chart", Modality::TimeSeries, 16, 0},
        {"txt", Modality::Text, 16, 0},
    };
  }
  return {
      {"xr", Modality::Image, 16, 32},
      {"axr", Modality::Image, 16, 32, true},
      {"proc", Modality::TimeSeries, 22, 2},
      {"lab", Modality::TimeSeries, 33, 3},
      {"chart", Modality::TimeSeries, 22, 2},
      {"txt", Modality::Text, 16, 64},
  };
}

namespace {

struct CohortRow {
  const char* name;
  std::size_t pos, neg;
};

// Positive and negative counts per task, in report order.
constexpr CohortRow kCohort[] = {
    {"fracture", 1527, 85},         {"lung_lesion", 1511, 100},
    {"enlarged_cm", 4783, 1831},    {"consolidation", 8046, 1701},
    {"pneumonia", 8145, 6539},      {"atelectasis", 29466, 808},
    {"lung_opacity", 28433, 1107},  {"pneumothorax", 6365, 27806},
    {"edema", 19217, 11496},        {"cardiomegaly", 27760, 7072},
    {"length_of_stay", 8488, 82323}, {"mortality_48h", 2230, 88581},
};
constexpr std::size_t kCohortRecords = 90811;
constexpr std::size_t kCohortPatients = 14854;

std::size_t scaled(std::size_t count, double scale) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(count * scale)));
}

}  // namespace

GenConfig table1_profile(double scale) {
  if (!(scale > 0.0 && scale <= 1.0)) throw ValidationError("scale must be in (0, 1]");
  GenConfig cfg;
  cfg.sources = desk_sources(DataMode::Latent);
  cfg.exact_counts = true;
  cfg.stay_p = static_cast<double>(kCohortPatients) / kCohortRecords;
  cfg.n_records = scaled(kCohortRecords, scale);
  for (const auto& row : kCohort) {
    TaskSpec t;
    t.name = row.name;
    t.exact_pos = scaled(row.pos, scale);
    t.exact_neg = scaled(row.neg, scale);
    t.positive_rate = static_cast<double>(row.pos) / (row.pos + row.neg);
    t.missing_rate = 1.0 - static_cast<double>(row.pos + row.neg) / kCohortRecords;
    cfg.n_records = std::max(cfg.n_records, t.exact_pos + t.exact_neg);
    cfg.tasks.push_back(t);
  }
  return cfg;
}

GenConfig planted_profile(std::size_t n_records) {
  GenConfig cfg;
  cfg.sources = desk_sources(DataMode::Latent);
  cfg.n_records = n_records;
  for (const auto& row : kCohort) {
    TaskSpec t;
    t.name = row.name;
    t.positive_rate = std::clamp(static_cast<double>(row.pos) / (row.pos + row.neg), 0.15, 0.85);
    t.missing_rate = 0.2;
    cfg.tasks.push_back(t);
  }
  return cfg;
}

std::size_t Dataset::source_index(const std::string& name) const {
  for (std::size_t s = 0; s < sources.size(); ++s) {
    if (sources[s].name == name) return s;
  }
  throw ValidationError("dataset has no source named '" + name + "'");
}

LabelCounts count_labels(const Dataset& data, std::size_t task) {
  LabelCounts c;
  for (const auto& y : data.labels) {
    if (y[task] == 1) ++c.pos;
    else if (y[task] == 0) ++c.neg;
    else ++c.missing;
  }
  return c;
}

// -------------------------------------------------------------- generation

namespace {

double f32(double v) { return static_cast<double>(to_f32(v)); }

Tensor gaussian(Rng& rng, std::size_t r, std::size_t c, double sd) {
  Tensor t = Tensor::matrix(r, c);
  for (double& v : t.values()) v = sd * rng.normal();
  return t;
}

// Latent-to-payload maps for one source.
struct SourceMaps {
  Tensor embed;      // latent: dim x L
  Tensor level;      // time series: series x L
  Tensor slope;      // time series: series x L
  Tensor image;      // image: raw_dim x L
  Tensor token;      // text: vocab x L
};

double dot_row(const Tensor& m, std::size_t r, std::span<const double> z) {
  double acc = 0.0;
  for (std::size_t j = 0; j < z.size(); ++j) acc += m.at(r, j) * z[j];
  return acc;
}

std::vector<std::size_t> draw_task_sources(Rng& rng, std::size_t n_sources) {
  const std::size_t span = n_sources >= 3 ? 2 + rng.below(2) : n_sources;
  std::vector<std::size_t> idx(n_sources);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < span; ++i) std::swap(idx[i], idx[i + rng.below(n_sources - i)]);
  idx.resize(span);
  std::sort(idx.begin(), idx.end());
  return idx;
}

void synth_raw(Rng& rng, const SourceSpec& src, const SourceMaps& maps, std::span<const double> zs,
               double noise, RawSourceData& out) {
  switch (src.modality) {
    case Modality::TimeSeries: {
      SeriesSet set(src.raw_dim);
      for (std::size_t j = 0; j < src.raw_dim; ++j) {
        const std::size_t len = 3 + rng.below(22);
        const double level = dot_row(maps.level, j, zs);
        const double slope = 0.15 * dot_row(maps.slope, j, zs);
        set[j].resize(len);
        for (std::size_t t = 0; t < len; ++t) {
          set[j][t] = f32(level + slope * static_cast<double>(t) + noise * rng.normal());
        }
      }
      out.series.push_back(std::move(set));
      break;
    }
    case Modality::Image: {
      const std::size_t count = 1 + rng.below(4);
      std::vector<Screening> shots(count);
      for (auto& s : shots) {
        s.time = f32(rng.uniform(0.0, 72.0));
        s.embedding.resize(src.raw_dim);
        for (std::size_t i = 0; i < src.raw_dim; ++i) {
          s.embedding[i] = f32(dot_row(maps.image, i, zs) + noise * rng.normal());
        }
      }
      out.screenings.push_back(std::move(shots));
      break;
    }
    case Modality::Text: {
      std::vector<double> cdf(src.raw_dim);
      double total = 0.0;
      for (std::size_t v = 0; v < src.raw_dim; ++v) {
        total += std::exp(dot_row(maps.token, v, zs));
        cdf[v] = total;
      }
      const std::size_t len = 32 + rng.below(600);
      std::vector<std::uint32_t> tokens(len);
      for (auto& tok : tokens) {
        const double u = rng.uniform() * total;
        const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
        tok = static_cast<std::uint32_t>(std::min<std::size_t>(it - cdf.begin(), src.raw_dim - 1));
      }
      out.tokens.push_back(std::move(tokens));
      break;
    }
  }
}

}  // namespace

Dataset generate(const GenConfig& cfg) {
  validate(cfg);
  const std::size_t n = cfg.n_records, n_src = cfg.sources.size(), k = cfg.tasks.size();
  const std::size_t lps = cfg.latent_per_source, m = n_src * lps;

  Dataset data;
  data.mode = cfg.mode;
  data.sources = cfg.sources;
  data.encoder_seed = derive_seed(cfg.seed, "encoders");
  for (const auto& t : cfg.tasks) data.task_names.push_back(t.name);

  // Planted structure.
  Rng srng(derive_seed(cfg.seed, "structure"));
  data.directions = Tensor::matrix(k, m);
  for (std::size_t t = 0; t < k; ++t) {
    std::vector<std::size_t> srcs = cfg.tasks[t].sources;
    if (srcs.empty()) srcs = draw_task_sources(srng, n_src);
    std::sort(srcs.begin(), srcs.end());
    srcs.erase(std::unique(srcs.begin(), srcs.end()), srcs.end());
    for (std::size_t s : srcs) {
      std::vector<double> block(lps);
      double norm = 0.0;
      for (double& v : block) {
        v = srng.normal();
        norm += v * v;
      }
      norm = std::sqrt(norm);
      for (std::size_t j = 0; j < lps; ++j) data.directions.at(t, s * lps + j) = f32(block[j] / norm);
    }
    data.task_sources.push_back(srcs);
  }
  std::vector<SourceMaps> maps(n_src);
  const double lsd = 1.0 / std::sqrt(static_cast<double>(lps));
  for (std::size_t s = 0; s < n_src; ++s) {
    const SourceSpec& src = cfg.sources[s];
    if (cfg.mode == DataMode::Latent) {
      maps[s].embed = gaussian(srng, src.dim, lps, lsd);
    } else if (src.modality == Modality::TimeSeries) {
      maps[s].level = gaussian(srng, src.raw_dim, lps, lsd);
      maps[s].slope = gaussian(srng, src.raw_dim, lps, lsd);
    } else if (src.modality == Modality::Image) {
      maps[s].image = gaussian(srng, src.raw_dim, lps, lsd);
    } else {
      maps[s].token = gaussian(srng, src.raw_dim, lps, 1.5);
    }
  }

  // Patients, latents and payloads.
  Rng rng(derive_seed(cfg.seed, "records"));
  Tensor z_all = Tensor::matrix(n, m);
  if (cfg.mode == DataMode::Latent) {
    for (const auto& src : cfg.sources) data.embeddings.push_back(Tensor::matrix(n, src.dim));
  } else {
    data.raw.resize(n_src);
  }
  const double rho = cfg.patient_corr, rest = std::sqrt(1.0 - rho * rho);
  std::vector<double> base(m), z(m);
  std::uint32_t patient = 0;
  std::size_t stays_left = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (stays_left == 0) {
      ++patient;
      stays_left = 1;
      if (cfg.stay_p < 1.0) {
        const double u = 1.0 - rng.uniform();
        stays_left += static_cast<std::size_t>(std::floor(std::log(u) / std::log(1.0 - cfg.stay_p)));
      }
      for (double& v : base) v = rng.normal();
    }
    --stays_left;
    data.patients.push_back(patient - 1);
    for (std::size_t j = 0; j < m; ++j) {
      z[j] = rho * base[j] + rest * rng.normal();
      z_all.at(i, j) = z[j];
    }
    for (std::size_t s = 0; s < n_src; ++s) {
      std::span<const double> zs(z.data() + s * lps, lps);
      if (cfg.mode == DataMode::Latent) {
        Tensor& e = data.embeddings[s];
        for (std::size_t d = 0; d < cfg.sources[s].dim; ++d) {
          e.at(i, d) = f32(dot_row(maps[s].embed, d, zs) + cfg.noise_std * rng.normal());
        }
      } else {
        synth_raw(rng, cfg.sources[s], maps[s], zs, cfg.noise_std, data.raw[s]);
      }
    }
  }

  // Labels.
  Rng mrng(derive_seed(cfg.seed, "mask"));
  data.labels.assign(n, LabelVector(k, kUnlabeled));
  data.thresholds.assign(k, 0.0);
  std::vector<double> score(n);
  for (std::size_t t = 0; t < k; ++t) {
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < m; ++j) acc += data.directions.at(t, j) * z_all.at(i, j);
      score[i] = acc;
    }
    const TaskSpec& spec = cfg.tasks[t];
    if (!cfg.exact_counts) {
      const std::span<const double> dir(data.directions.data() + t * m, m);
      data.thresholds[t] = planted_threshold(dir, spec.positive_rate);
      for (std::size_t i = 0; i < n; ++i) {
        data.labels[i][t] = score[i] > data.thresholds[t] ? 1 : 0;
      }
      continue;
    }
    // Exact counts: a random subset stays unlabeled, the rest is split at the
    // score rank giving exactly exact_pos positives.
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    const std::size_t n_missing = n - spec.exact_pos - spec.exact_neg;
    for (std::size_t i = 0; i < n_missing; ++i) std::swap(idx[i], idx[i + mrng.below(n - i)]);
    std::vector<std::size_t> labeled(idx.begin() + static_cast<std::ptrdiff_t>(n_missing), idx.end());
    std::stable_sort(labeled.begin(), labeled.end(), [&](std::size_t a, std::size_t b) {
      return score[a] > score[b] || (score[a] == score[b] && a < b);
    });
    for (std::size_t r = 0; r < labeled.size(); ++r) {
      data.labels[labeled[r]][t] = r < spec.exact_pos ? 1 : 0;
    }
    if (spec.exact_pos > 0 && spec.exact_pos < labeled.size()) {
      data.thresholds[t] = 0.5 * (score[labeled[spec.exact_pos - 1]] + score[labeled[spec.exact_pos]]);
    }
  }
  if (!cfg.exact_counts) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t t = 0; t < k; ++t) {
        if (mrng.uniform() < cfg.tasks[t].missing_rate) data.labels[i][t] = kUnlabeled;
      }
    }
  }
  return data;
}

// --------------------------------------------------------------------- IO

namespace {

constexpr int kDatasetVersion = 1;
constexpr char kRawMagic[5] = "MMR1";

std::uint32_t modality_code(Modality m) {
  switch (m) {
    case Modality::TimeSeries: return 0;
    case Modality::Image: return 1;
    case Modality::Text: return 2;
  }
  return 0;
}

std::string encode_raw(const SourceSpec& src, const RawSourceData& raw, std::size_t n) {
  std::string out(kRawMagic, 4);
  put_u32(out, modality_code(src.modality));
  put_u32(out, static_cast<std::uint32_t>(n));
  put_u32(out, static_cast<std::uint32_t>(src.raw_dim));
  for (std::size_t i = 0; i < n; ++i) {
    switch (src.modality) {
      case Modality::TimeSeries:
        for (const auto& series : raw.series[i]) {
          put_u32(out, static_cast<std::uint32_t>(series.size()));
          for (double v : series) put_f32(out, v);
        }
        break;
      case Modality::Image:
        put_u32(out, static_cast<std::uint32_t>(raw.screenings[i].size()));
        for (const auto& s : raw.screenings[i]) {
          put_f32(out, s.time);
          for (double v : s.embedding) put_f32(out, v);
        }
        break;
      case Modality::Text:
        put_u32(out, static_cast<std::uint32_t>(raw.tokens[i].size()));
        for (auto tok : raw.tokens[i]) put_u32(out, tok);
        break;
    }
  }
  return out;
}

RawSourceData decode_raw(const SourceSpec& src, std::size_t n, const fs::path& path) {
  const std::string bytes = read_file(path);
  ByteReader in(bytes, path.string());
  in.expect_magic(kRawMagic);
  if (in.u32() != modality_code(src.modality)) {
    throw ValidationError(path.string() + ": modality does not match the manifest");
  }
  if (in.u32() != n) throw ValidationError(path.string() + ": record count does not match the manifest");
  if (in.u32() != src.raw_dim) throw ValidationError(path.string() + ": raw dim does not match the manifest");
  RawSourceData raw;
  for (std::size_t i = 0; i < n; ++i) {
    switch (src.modality) {
      case Modality::TimeSeries: {
        SeriesSet set(src.raw_dim);
        for (auto& series : set) {
          series.resize(in.u32());
          for (double& v : series) v = in.f32();
        }
        raw.series.push_back(std::move(set));
        break;
      }
      case Modality::Image: {
        std::vector<Screening> shots(in.u32());
        for (auto& s : shots) {
          s.time = in.f32();
          s.embedding.resize(src.raw_dim);
          for (double& v : s.embedding) v = in.f32();
        }
        raw.screenings.push_back(std::move(shots));
        break;
      }
      case Modality::Text: {
        std::vector<std::uint32_t> tokens(in.u32());
        for (auto& tok : tokens) tok = in.u32();
        raw.tokens.push_back(std::move(tokens));
        break;
      }
    }
  }
  in.expect_done();
  return raw;
}

json source_json(const SourceSpec& s) {
  return {{"name", s.name}, {"modality", to_string(s.modality)}, {"dim", s.dim},
          {"raw_dim", s.raw_dim}, {"aggregate", s.aggregate}};
}

fs::path require_file(const fs::path& path) {
  if (!fs::is_regular_file(path)) throw ValidationError("missing dataset file " + path.string());
  return path;
}

}  // namespace

void write_dataset(const Dataset& data, const fs::path& dir) {
  const std::size_t n = data.size(), k = data.num_tasks();
  fs::create_directories(dir);
  json manifest;
  manifest["format"] = "slmfuse-dataset";
  manifest["version"] = kDatasetVersion;
  manifest["n_records"] = n;
  manifest["K"] = k;
  manifest["task_names"] = data.task_names;
  manifest["mode"] = to_string(data.mode);
  manifest["encoder_seed"] = data.encoder_seed;
  manifest["sources"] = json::array();
  for (const auto& s : data.sources) manifest["sources"].push_back(source_json(s));
  manifest["task_sources"] = data.task_sources;
  manifest["thresholds"] = data.thresholds;
  write_file(dir / "manifest", manifest.dump(2) + "\n");

  std::string labels;
  labels.reserve(n * k);
  for (const auto& y : data.labels) {
    for (auto v : y) labels.push_back(static_cast<char>(v));
  }
  write_file(dir / "labels.bin", labels);
  std::string patients;
  for (auto p : data.patients) put_u32(patients, p);
  write_file(dir / "patients.bin", patients);
  write_mmf(dir / "directions.bin", data.directions);

  for (std::size_t s = 0; s < data.sources.size(); ++s) {
    const SourceSpec& src = data.sources[s];
    if (data.mode == DataMode::Latent) {
      write_mmf(dir / ("src_" + src.name + ".bin"), data.embeddings[s]);
    } else {
      const fs::path sub = dir / ("raw_" + src.name);
      fs::create_directories(sub);
      write_file(sub / "payload.bin", encode_raw(src, data.raw[s], n));
    }
  }
}

Dataset read_dataset(const fs::path& dir) {
  const fs::path manifest_path = require_file(dir / "manifest");
  json manifest;
  try {
    manifest = json::parse(read_file(manifest_path));
  } catch (const json::exception& e) {
    throw ValidationError(manifest_path.string() + ": " + e.what());
  }
  Dataset data;
  std::size_t n = 0, k = 0;
  try {
    if (manifest.at("format") != "slmfuse-dataset" || manifest.at("version") != kDatasetVersion) {
      throw ValidationError(manifest_path.string() + ": unsupported dataset format or version");
    }
    n = manifest.at("n_records").get<std::size_t>();
    k = manifest.at("K").get<std::size_t>();
    data.task_names = manifest.at("task_names").get<std::vector<std::string>>();
    data.mode = data_mode_from_string(manifest.at("mode").get<std::string>());
    data.encoder_seed = manifest.at("encoder_seed").get<std::uint64_t>();
    for (const auto& s : manifest.at("sources")) {
      data.sources.push_back({s.at("name").get<std::string>(),
                              modality_from_string(s.at("modality").get<std::string>()),
                              s.at("dim").get<std::size_t>(), s.at("raw_dim").get<std::size_t>(),
                              s.at("aggregate").get<bool>()});
    }
    data.task_sources = manifest.at("task_sources").get<std::vector<std::vector<std::size_t>>>();
    data.thresholds = manifest.at("thresholds").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw ValidationError(manifest_path.string() + ": " + e.what());
  }
  if (data.task_names.size() != k) throw ValidationError(manifest_path.string() + ": K does not match task_names");
  validate_sources(data.sources, data.mode == DataMode::Latent);

  const fs::path labels_path = require_file(dir / "labels.bin");
  const std::string labels = read_file(labels_path);
  if (labels.size() != n * k) throw ValidationError(labels_path.string() + ": expected " + std::to_string(n * k) + " bytes");
  data.labels.assign(n, LabelVector(k));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t t = 0; t < k; ++t) {
      const auto v = static_cast<std::int8_t>(labels[i * k + t]);
      if (v < -1 || v > 1) throw ValidationError(labels_path.string() + ": invalid label byte at record " + std::to_string(i));
      data.labels[i][t] = v;
    }
  }
  const fs::path patients_path = require_file(dir / "patients.bin");
  const std::string patients = read_file(patients_path);
  ByteReader pin(patients, patients_path.string());
  for (std::size_t i = 0; i < n; ++i) data.patients.push_back(pin.u32());
  pin.expect_done();
  data.directions = read_mmf(require_file(dir / "directions.bin"));

  for (const auto& src : data.sources) {
    if (data.mode == DataMode::Latent) {
      const fs::path p = require_file(dir / ("src_" + src.name + ".bin"));
      Tensor e = read_mmf(p);
      if (e.rows() != n || e.cols() != src.dim) {
        throw ValidationError(p.string() + ": expected " + std::to_string(n) + "x" +
                              std::to_string(src.dim) + ", got " + e.shape_string());
      }
      data.embeddings.push_back(std::move(e));
    } else {
      data.raw.push_back(decode_raw(src, n, require_file(dir / ("raw_" + src.name) / "payload.bin")));
    }
  }
  return data;
}

}  // namespace slmfuse
