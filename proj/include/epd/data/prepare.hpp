#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "epd/data/record.hpp"
#include "epd/geo.hpp"
#include "epd/log.hpp"
#include "epd/parallel.hpp"
#include "epd/tensor.hpp"

namespace epd::data {

/// California-centred local subset; overridable in config.
inline const geo::GeoPoint kDefaultLocalCenter{36.7783, -119.4179};

struct FilterSpec {
  double max_epicentral_km = 110.0;
  /// Rows at or below this mean SNR are dropped.
  double min_snr_db = 25.0;
  std::optional<geo::GeoPoint> local_center;
  double local_radius_km = 300.0;
};

inline void validate(const FilterSpec& f) {
  if (!(f.max_epicentral_km > 0) || !(f.local_radius_km > 0)) {
    throw std::invalid_argument("filter thresholds must be positive");
  }
}

/// Keeps rows with distance <= max, mean SNR > min, an aligned orientation
/// when known, and (for the local subset) a station inside the radius.
inline std::vector<TraceMeta> apply_filters(const std::vector<TraceMeta>& rows, const FilterSpec& spec) {
  validate(spec);
  bool any_orientation = false;
  std::vector<TraceMeta> out;
  for (const auto& r : rows) {
    any_orientation = any_orientation || r.orientation_ok.has_value();
    if (!(r.epicentral_km <= spec.max_epicentral_km)) continue;
    if (!(r.mean_snr_db() > spec.min_snr_db)) continue;
    if (r.orientation_ok.has_value() && !*r.orientation_ok) continue;
    if (spec.local_center && !geo::within_radius(*spec.local_center, r.station, spec.local_radius_km)) continue;
    out.push_back(r);
  }
  if (!rows.empty() && !any_orientation) log::info("orientation filter skipped: manifest has no orientation_ok values");
  return out;
}

struct SplitSpec {
  double train_frac = 0.8;
  double test_frac = 0.2;
  double val_frac_of_train = 0.1;
  std::uint64_t seed = 0;
};

inline void validate(const SplitSpec& s) {
  auto in_unit = [](double v) { return v > 0 && v < 1; };
  if (!in_unit(s.train_frac) || !in_unit(s.test_frac) || !in_unit(s.val_frac_of_train)) {
    throw std::invalid_argument("split fractions must lie in (0, 1)");
  }
  if (std::abs(s.train_frac + s.test_frac - 1.0) > 1e-12) {
    throw std::invalid_argument("train_frac + test_frac must equal 1");
  }
}

template <class Row>
struct Splits {
  std::vector<Row> train;
  std::vector<Row> val;
  std::vector<Row> test;
};

/// Split sizes for n rows: test = round(n * test_frac), val = round(rest *
/// val_frac), each clamped so no part is empty.
struct SplitSizes {
  std::size_t train, val, test;
};

inline SplitSizes split_sizes(std::size_t n, const SplitSpec& spec) {
  if (n < 3) throw std::invalid_argument("split needs at least 3 rows, got " + std::to_string(n));
  auto test = static_cast<std::size_t>(std::llround(static_cast<double>(n) * spec.test_frac));
  test = std::clamp<std::size_t>(test, 1, n - 2);
  const std::size_t rest = n - test;
  auto val = static_cast<std::size_t>(std::llround(static_cast<double>(rest) * spec.val_frac_of_train));
  val = std::clamp<std::size_t>(val, 1, rest - 1);
  return {rest - val, val, test};
}

/// Seeded shuffle, then test | val | train carved from the permutation.
template <class Row>
Splits<Row> split(std::vector<Row> rows, const SplitSpec& spec) {
  validate(spec);
  const auto sizes = split_sizes(rows.size(), spec);
  std::mt19937_64 rng(spec.seed);
  for (std::size_t i = rows.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(rows[i - 1], rows[pick(rng)]);
  }
  Splits<Row> out;
  auto it = std::make_move_iterator(rows.begin());
  out.test.assign(it, it + static_cast<std::ptrdiff_t>(sizes.test));
  it += static_cast<std::ptrdiff_t>(sizes.test);
  out.val.assign(it, it + static_cast<std::ptrdiff_t>(sizes.val));
  it += static_cast<std::ptrdiff_t>(sizes.val);
  out.train.assign(it, std::make_move_iterator(rows.end()));
  return out;
}

/// Boxcar over [p, s): its sum is the S-P interval in samples.
inline std::vector<float> build_ps_channel(std::int64_t p, std::int64_t s, std::size_t len = kSamples) {
  if (p < 0 || s <= p || s >= static_cast<std::int64_t>(len)) {
    throw std::invalid_argument("build_ps_channel: need 0 <= p < s < " + std::to_string(len) + ", got p=" +
                                std::to_string(p) + " s=" + std::to_string(s));
  }
  std::vector<float> ch(len, 0.0f);
  std::fill(ch.begin() + p, ch.begin() + s, 1.0f);
  return ch;
}

struct InputOptions {
  bool include_ps = false;
  /// Per-trace, per-channel z-score of the waveform channels.
  bool normalize = true;
};

inline std::size_t input_channels(const InputOptions& o) { return o.include_ps ? 4 : 3; }

namespace detail {

// Writes the [C, 6000] model input for one record into dst.
inline void write_input(const TraceRecord& rec, const InputOptions& opts, float* dst) {
  if (rec.waveform.size() != kWaveChannels * kSamples) {
    throw std::invalid_argument("trace " + rec.meta.trace_id + " has " + std::to_string(rec.waveform.size()) +
                                " samples, expected 3 x 6000");
  }
  for (std::size_t c = 0; c < kWaveChannels; ++c) {
    const float* src = rec.channel(c);
    float* out = dst + c * kSamples;
    if (!opts.normalize) {
      std::copy(src, src + kSamples, out);
      continue;
    }
    double sum = 0;
    for (std::size_t t = 0; t < kSamples; ++t) sum += src[t];
    const double mean = sum / static_cast<double>(kSamples);
    double ss = 0;
    for (std::size_t t = 0; t < kSamples; ++t) ss += (src[t] - mean) * (src[t] - mean);
    const double sd = std::sqrt(ss / static_cast<double>(kSamples));
    if (!(sd > 0) || !std::isfinite(sd)) {
      std::fill(out, out + kSamples, 0.0f);
      log::warn("trace " + rec.meta.trace_id + ": channel " + std::to_string(c) +
                (std::isfinite(sd) ? " has zero variance" : " has non-finite samples") + "; left as zeros");
      continue;
    }
    for (std::size_t t = 0; t < kSamples; ++t) out[t] = static_cast<float>((src[t] - mean) / sd);
  }
  if (opts.include_ps) {
    const auto ps = build_ps_channel(rec.meta.p_arrival_sample, rec.meta.s_arrival_sample);
    std::copy(ps.begin(), ps.end(), dst + kWaveChannels * kSamples);
  }
}

}  // namespace detail

/// Model input for one record: [3, 6000], or [4, 6000] with the boxcar last.
inline Tensor<float> assemble_input(const TraceRecord& rec, bool include_ps, bool normalize) {
  const InputOptions opts{include_ps, normalize};
  auto t = Tensor<float>::zeros({input_channels(opts), kSamples});
  detail::write_input(rec, opts, t.raw());
  return t;
}

/// Stacks the selected records into [B, C, 6000].
inline Tensor<float> assemble_batch(std::span<const TraceRecord> records, std::span<const std::size_t> indices,
                                    const InputOptions& opts, int threads = 1) {
  const std::size_t c = input_channels(opts);
  auto t = Tensor<float>::zeros({indices.size(), c, kSamples});
  float* base = t.raw();
  auto fill = [&](std::size_t i) { detail::write_input(records[indices[i]], opts, base + i * c * kSamples); };
  if (threads <= 1) {
    for (std::size_t i = 0; i < indices.size(); ++i) fill(i);
  } else {
    ScopedIntraOpThreads scope(threads);
    parallel_for(indices.size(), fill);
  }
  return t;
}

}  // namespace epd::data
