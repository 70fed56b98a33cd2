#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "slmfuse/tensor.hpp"

namespace slmfuse {

enum class Modality { TimeSeries, Image, Text };

std::string to_string(Modality m);
Modality modality_from_string(const std::string& s);

/// One data-producing channel of a stay.
///
/// `raw_dim` is the raw payload shape: number of series for time-series
/// sources, payload length for image sources, token vocabulary size for text.
struct SourceSpec {
  std::string name;
  Modality modality = Modality::TimeSeries;
  std::size_t dim = 0;
  std::size_t raw_dim = 0;
  // Image sources: time-weighted average of all screenings instead of the
  // latest one.
  bool aggregate = false;
};

/// xr, axr, proc, lab, chart, txt with embedding widths 1024, 1024, 110, 242,
/// 99, 768. This is also the order sources are fed to the language model.
std::vector<SourceSpec> default_sources();

/// `embeddings_only` skips the raw-payload shape rules (latent datasets carry
/// embeddings directly).
void validate_sources(const std::vector<SourceSpec>& sources, bool embeddings_only = false);

// ------------------------------------------------------------ time series

inline constexpr std::size_t kFeaturesPerSeries = 11;

using SeriesFeatures = std::array<double, kFeaturesPerSeries>;

/// mean, population variance, min, max, mean signed difference, mean absolute
/// difference, max signed difference, sum of absolute differences, last minus
/// first, peak count, least-squares slope. Length-1 series yield 0 for every
/// spread, difference, peak and slope entry.
SeriesFeatures ts_features(std::span<const double> series);

struct FeatureStats {
  Tensor mean;  // 1 x dim
  Tensor std;   // 1 x dim, population standard deviation
};

struct TimeSeriesEmbedding {
  Tensor embeddings;  // records x (11 * series count)
  FeatureStats stats;
};

/// One record's series for a single source, in fixed series order.
using SeriesSet = std::vector<std::vector<double>>;

/// Featurizes every record, then z-scores each column with `stats`, fitting
/// them on `records` when absent. Columns whose std is below 1e-12 map to 0.
TimeSeriesEmbedding embed_timeseries_source(const std::vector<SeriesSet>& records,
                                            std::size_t series_count,
                                            const std::optional<FeatureStats>& stats = std::nullopt);

FeatureStats fit_feature_stats(const Tensor& features);
Tensor apply_feature_stats(const Tensor& features, const FeatureStats& stats);

// ---------------------------------------------------------------- images

struct Screening {
  double time = 0.0;  // hours since admission
  std::vector<double> embedding;
};

/// Embedding of the screening with the largest time; ties go to the later
/// list entry.
std::vector<double> latest_image(std::span<const Screening> screenings);

/// Time-weighted average with w_j = (t_j - min t) / max t. Normalized by the
/// weight sum unless `normalize` is false (the literal unnormalized sum).
/// Normalized mode falls back to latest_image when all weights vanish.
std::vector<double> aggregate_images(std::span<const Screening> screenings,
                                     bool normalize = true);

// ------------------------------------------------------------------ text

inline constexpr std::size_t kTextChunkTokens = 512;

std::vector<double> aggregate_text(std::span<const std::vector<double>> chunk_embeddings);

// ----------------------------------------------------------- stub encoders

/// Seeded stand-in for a pretrained image or text encoder.
///
/// Image: fixed linear map raw_dim -> dim without bias.
/// Text: fixed token table raw_dim x dim; the token sequence is cut into
/// 512-token chunks, each chunk averaged, and the chunk means averaged.
class StubEncoder {
 public:
  StubEncoder(SourceSpec source, std::uint64_t seed);

  const SourceSpec& source() const noexcept { return source_; }
  std::vector<double> encode_image(std::span<const double> payload) const;
  std::vector<double> encode_text(std::span<const std::uint32_t> tokens) const;

 private:
  SourceSpec source_;
  Tensor weights_;
};

std::vector<double> stub_encode_image(const SourceSpec& source, std::span<const double> payload,
                                      std::uint64_t seed);
std::vector<double> stub_encode_text(const SourceSpec& source,
                                     std::span<const std::uint32_t> tokens, std::uint64_t seed);

}  // namespace slmfuse
