#include "slmfuse/encoders.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "slmfuse/error.hpp"
#include "slmfuse/rng.hpp"

namespace slmfuse {

std::string to_string(Modality m) {
  switch (m) {
    case Modality::TimeSeries: return "timeseries";
    case Modality::Image: return "image";
    case Modality::Text: return "text";
  }
  return "unknown";
}

Modality modality_from_string(const std::string& s) {
  if (s == "timeseries") return Modality::TimeSeries;
  if (s == "image") return Modality::Image;
  if (s == "text") return Modality::Text;
  throw ValidationError("unknown modality '" + s + "'");
}

std::vector<SourceSpec> default_sources() {
  return {
      {"xr", Modality::Image, 1024, 64},
      {"axr", Modality::Image, 1024, 64, true},
      {"proc", Modality::TimeSeries, 110, 10},
      {"lab", Modality::TimeSeries, 242, 22},
      {"chart", Modality::TimeSeries, 99, 9},
      {"txt", Modality::Text, 768, 1000},
  };
}

void validate_sources(const std::vector<SourceSpec>& sources, bool embeddings_only) {
  if (sources.empty()) throw ValidationError("at least one source is required");
  std::set<std::string> names;
  for (const auto& s : sources) {
    if (s.name.empty()) throw ValidationError("source name must not be empty");
    if (!names.insert(s.name).second) {
      throw ValidationError("duplicate source name '" + s.name + "'");
    }
    if (s.dim == 0) throw ValidationError("source '" + s.name + "' has zero embedding dim");
    if (!embeddings_only && s.raw_dim == 0) {
      throw ValidationError("source '" + s.name + "' has zero raw dim");
    }
    if (!embeddings_only && s.modality == Modality::TimeSeries && s.raw_dim * kFeaturesPerSeries != s.dim) {
      throw ValidationError("time-series source '" + s.name + "' with " +
                            std::to_string(s.raw_dim) + " series must have dim " +
                            std::to_string(s.raw_dim * kFeaturesPerSeries));
    }
  }
}

// ------------------------------------------------------------ time series

SeriesFeatures ts_features(std::span<const double> x) {
  if (x.empty()) throw ValidationError("ts_features: empty series");
  for (double v : x) {
    if (!std::isfinite(v)) throw NumericalError("ts_features: non-finite sample");
  }
  const std::size_t n = x.size();
  const double len = static_cast<double>(n);

  double sum = 0.0;
  for (double v : x) sum += v;
  const double mean = sum / len;
  double sq = 0.0;
  for (double v : x) sq += (v - mean) * (v - mean);
  const auto [mn, mx] = std::minmax_element(x.begin(), x.end());

  SeriesFeatures f{};
  f[0] = mean;
  f[1] = sq / len;
  f[2] = *mn;
  f[3] = *mx;
  if (n == 1) return f;

  double diff_sum = 0.0, abs_sum = 0.0;
  double max_diff = x[1] - x[0];
  for (std::size_t i = 1; i < n; ++i) {
    const double d = x[i] - x[i - 1];
    diff_sum += d;
    abs_sum += std::abs(d);
    max_diff = std::max(max_diff, d);
  }
  const double steps = len - 1.0;
  f[4] = diff_sum / steps;
  f[5] = abs_sum / steps;
  f[6] = max_diff;
  f[7] = abs_sum;
  f[8] = x[n - 1] - x[0];

  std::vector<double> sorted(x.begin(), x.end());
  std::sort(sorted.begin(), sorted.end());
  const double median = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  double peaks = 0.0;
  for (std::size_t i = 1; i + 1 < n; ++i) {
    if (x[i] > x[i - 1] && x[i] > x[i + 1] && x[i] > median) peaks += 1.0;
  }
  f[9] = peaks;

  const double t_mean = (len - 1.0) / 2.0;
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dt = static_cast<double>(i) - t_mean;
    num += dt * (x[i] - mean);
    den += dt * dt;
  }
  f[10] = num / den;
  return f;
}

FeatureStats fit_feature_stats(const Tensor& features) {
  const std::size_t n = features.rows(), d = features.cols();
  FeatureStats st{Tensor::matrix(1, d), Tensor::matrix(1, d)};
  for (std::size_t j = 0; j < d; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += features.at(i, j);
    const double m = s / static_cast<double>(n);
    double v = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double dv = features.at(i, j) - m;
      v += dv * dv;
    }
    st.mean[j] = m;
    st.std[j] = std::sqrt(v / static_cast<double>(n));
  }
  return st;
}

Tensor apply_feature_stats(const Tensor& features, const FeatureStats& stats) {
  const std::size_t n = features.rows(), d = features.cols();
  if (stats.mean.size() != d || stats.std.size() != d) {
    throw ValidationError("feature stats have dim " + std::to_string(stats.mean.size()) +
                          ", features have " + std::to_string(d));
  }
  Tensor out = Tensor::matrix(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      const double sd = stats.std[j];
      out.at(i, j) = sd < 1e-12 ? 0.0 : (features.at(i, j) - stats.mean[j]) / sd;
    }
  }
  return out;
}

TimeSeriesEmbedding embed_timeseries_source(const std::vector<SeriesSet>& records,
                                            std::size_t series_count,
                                            const std::optional<FeatureStats>& stats) {
  if (records.empty()) throw ValidationError("embed_timeseries_source: no records");
  const std::size_t d = series_count * kFeaturesPerSeries;
  Tensor features = Tensor::matrix(records.size(), d);
  for (std::size_t r = 0; r < records.size(); ++r) {
    if (records[r].size() != series_count) {
      throw ValidationError("record " + std::to_string(r) + " has " +
                            std::to_string(records[r].size()) + " series, expected " +
                            std::to_string(series_count));
    }
    for (std::size_t s = 0; s < series_count; ++s) {
      const SeriesFeatures f = ts_features(records[r][s]);
      for (std::size_t k = 0; k < kFeaturesPerSeries; ++k) {
        features.at(r, s * kFeaturesPerSeries + k) = f[k];
      }
    }
  }
  FeatureStats st = stats ? *stats : fit_feature_stats(features);
  Tensor emb = apply_feature_stats(features, st);
  return {std::move(emb), std::move(st)};
}

// ---------------------------------------------------------------- images

std::vector<double> latest_image(std::span<const Screening> screenings) {
  if (screenings.empty()) throw ValidationError("latest_image: no screenings");
  std::size_t best = 0;
  for (std::size_t j = 1; j < screenings.size(); ++j) {
    if (screenings[j].time >= screenings[best].time) best = j;
  }
  return screenings[best].embedding;
}

std::vector<double> aggregate_images(std::span<const Screening> screenings, bool normalize) {
  if (screenings.empty()) throw ValidationError("aggregate_images: no screenings");
  const std::size_t dim = screenings.front().embedding.size();
  double t_min = screenings.front().time, t_max = screenings.front().time;
  for (const auto& s : screenings) {
    if (s.time < 0.0) throw ValidationError("aggregate_images: negative screening time");
    if (s.embedding.size() != dim) throw ValidationError("aggregate_images: ragged embeddings");
    t_min = std::min(t_min, s.time);
    t_max = std::max(t_max, s.time);
  }
  std::vector<double> out(dim, 0.0);
  if (t_max == 0.0) {
    return normalize ? latest_image(screenings) : out;
  }
  double w_sum = 0.0;
  for (const auto& s : screenings) {
    const double w = (s.time - t_min) / t_max;
    w_sum += w;
    for (std::size_t i = 0; i < dim; ++i) out[i] += w * s.embedding[i];
  }
  if (!normalize) return out;
  if (w_sum == 0.0) return latest_image(screenings);
  for (double& v : out) v /= w_sum;
  return out;
}

// ------------------------------------------------------------------ text

std::vector<double> aggregate_text(std::span<const std::vector<double>> chunks) {
  if (chunks.empty()) throw ValidationError("aggregate_text: no chunks");
  const std::size_t dim = chunks.front().size();
  std::vector<double> out(dim, 0.0);
  for (const auto& c : chunks) {
    if (c.size() != dim) throw ValidationError("aggregate_text: ragged chunk embeddings");
    for (std::size_t i = 0; i < dim; ++i) out[i] += c[i];
  }
  for (double& v : out) v /= static_cast<double>(chunks.size());
  return out;
}

// ----------------------------------------------------------- stub encoders

StubEncoder::StubEncoder(SourceSpec source, std::uint64_t seed) : source_(std::move(source)) {
  if (source_.dim == 0 || source_.raw_dim == 0) {
    throw ValidationError("stub encoder for '" + source_.name + "' needs positive dims");
  }
  Rng rng(derive_seed(seed, "stub/" + source_.name));
  switch (source_.modality) {
    case Modality::Image: {
      weights_ = Tensor::matrix(source_.dim, source_.raw_dim);
      const double sd = 1.0 / std::sqrt(static_cast<double>(source_.raw_dim));
      for (double& w : weights_.values()) w = sd * rng.normal();
      break;
    }
    case Modality::Text: {
      weights_ = Tensor::matrix(source_.raw_dim, source_.dim);
      for (double& w : weights_.values()) w = rng.normal();
      break;
    }
    default:
      throw ValidationError("no stub encoder for modality " + to_string(source_.modality) +
                            " (source '" + source_.name + "')");
  }
}

std::vector<double> StubEncoder::encode_image(std::span<const double> payload) const {
  if (source_.modality != Modality::Image) {
    throw ValidationError("source '" + source_.name + "' is not an image source");
  }
  if (payload.size() != source_.raw_dim) {
    throw ValidationError("image payload for '" + source_.name + "' has length " +
                          std::to_string(payload.size()) + ", expected " +
                          std::to_string(source_.raw_dim));
  }
  std::vector<double> out(source_.dim, 0.0);
  for (std::size_t i = 0; i < source_.dim; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < source_.raw_dim; ++j) acc += weights_.at(i, j) * payload[j];
    out[i] = acc;
  }
  return out;
}

std::vector<double> StubEncoder::encode_text(std::span<const std::uint32_t> tokens) const {
  if (source_.modality != Modality::Text) {
    throw ValidationError("source '" + source_.name + "' is not a text source");
  }
  if (tokens.empty()) throw ValidationError("text payload for '" + source_.name + "' is empty");
  std::vector<std::vector<double>> chunks;
  for (std::size_t start = 0; start < tokens.size(); start += kTextChunkTokens) {
    const std::size_t end = std::min(tokens.size(), start + kTextChunkTokens);
    std::vector<double> chunk(source_.dim, 0.0);
    for (std::size_t t = start; t < end; ++t) {
      if (tokens[t] >= source_.raw_dim) {
        throw ValidationError("token id " + std::to_string(tokens[t]) + " outside vocabulary of '" +
                              source_.name + "'");
      }
      const double* row = weights_.data() + tokens[t] * source_.dim;
      for (std::size_t i = 0; i < source_.dim; ++i) chunk[i] += row[i];
    }
    for (double& v : chunk) v /= static_cast<double>(end - start);
    chunks.push_back(std::move(chunk));
  }
  return aggregate_text(chunks);
}

std::vector<double> stub_encode_image(const SourceSpec& source, std::span<const double> payload,
                                      std::uint64_t seed) {
  return StubEncoder(source, seed).encode_image(payload);
}

std::vector<double> stub_encode_text(const SourceSpec& source,
                                     std::span<const std::uint32_t> tokens, std::uint64_t seed) {
  return StubEncoder(source, seed).encode_text(tokens);
}

}  // namespace slmfuse
