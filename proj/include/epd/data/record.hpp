#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "epd/geo.hpp"

namespace epd::data {

inline constexpr std::size_t kSamples = 6000;
inline constexpr std::size_t kWaveChannels = 3;
inline constexpr double kSamplingHz = 100.0;

/// Metadata for one three-component trace (a manifest row).
struct TraceMeta {
  std::string trace_id;
  geo::GeoPoint station;
  geo::GeoPoint source;
  std::int64_t p_arrival_sample = 0;
  std::int64_t s_arrival_sample = 0;
  std::array<double, 3> snr_db{};
  double epicentral_km = 0;
  /// Horizontal components aligned to geographic axes; absent when unknown.
  std::optional<bool> orientation_ok;

  [[nodiscard]] double sp_interval_s() const {
    return static_cast<double>(s_arrival_sample - p_arrival_sample) / kSamplingHz;
  }
  [[nodiscard]] double mean_snr_db() const { return (snr_db[0] + snr_db[1] + snr_db[2]) / 3.0; }
};

/// Metadata plus the 3 x 6000 waveform (E-W, N-S, U-D; row-major).
struct TraceRecord {
  TraceMeta meta;
  std::vector<float> waveform;

  [[nodiscard]] const float* channel(std::size_t c) const { return waveform.data() + c * kSamples; }
  [[nodiscard]] float* channel(std::size_t c) { return waveform.data() + c * kSamples; }
};

}  // namespace epd::data
