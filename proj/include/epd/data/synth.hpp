#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "epd/data/record.hpp"
#include "epd/geo.hpp"

namespace epd::data {

struct Wavelet {
  double frequency_hz = 5.0;
  double decay_per_s = 2.0;
  double amplitude = 1.0;
};

/// Desk-scale stand-in for an event catalogue: straight-ray P and S arrivals
/// at constant velocities, damped-sinusoid phases over Gaussian noise.
struct SyntheticSpec {
  std::size_t n = 1000;
  double d_min_km = 5.0;
  double d_max_km = 110.0;
  double vp_kms = 6.0;
  double vs_kms = 3.5;
  std::int64_t origin_min = 100;
  std::int64_t origin_max = 1000;
  Wavelet wavelet{};
  double noise_sigma = 0.0;
  /// Scale applied to both phase wavelets; 0 leaves pure noise.
  double arrival_visibility = 1.0;
  geo::GeoPoint station{38.034, -120.38};
  std::uint64_t seed = 0;
};

inline std::int64_t p_offset_samples(double d_km, double vp) { return std::llround(kSamplingHz * d_km / vp); }

/// S-P interval in samples for a source d km away.
inline std::int64_t sp_samples(double d_km, double vp, double vs) {
  return std::llround(kSamplingHz * d_km * (1.0 / vs - 1.0 / vp));
}

/// (p, s) sample indices for a source d km away and an origin sample.
inline std::pair<std::int64_t, std::int64_t> arrivals_for(double d_km, std::int64_t origin, double vp, double vs) {
  const auto p = origin + p_offset_samples(d_km, vp);
  return {p, p + sp_samples(d_km, vp, vs)};
}

inline void validate(const SyntheticSpec& s) {
  auto bad = [](const std::string& msg) { throw std::invalid_argument("synthetic spec: " + msg); };
  if (s.n == 0) bad("n must be positive");
  if (!(s.d_min_km >= 0) || !(s.d_max_km >= s.d_min_km)) bad("need 0 <= d_min <= d_max");
  if (!(s.vs_kms > 0) || !(s.vp_kms > s.vs_kms)) bad("need vp > vs > 0");
  if (s.origin_min < 0 || s.origin_max < s.origin_min) bad("need 0 <= origin_min <= origin_max");
  if (!(s.noise_sigma >= 0)) bad("noise_sigma must be >= 0");
  if (!(s.arrival_visibility >= 0 && s.arrival_visibility <= 1)) bad("arrival_visibility must lie in [0, 1]");
  if (!(s.wavelet.frequency_hz > 0) || !(s.wavelet.decay_per_s >= 0)) bad("bad wavelet parameters");
  // The farthest source at the earliest origin must still fit in the window.
  const auto s_far = arrivals_for(s.d_max_km, s.origin_min, s.vp_kms, s.vs_kms).second;
  if (s_far >= static_cast<std::int64_t>(kSamples)) {
    bad("d_max " + std::to_string(s.d_max_km) + " km puts the S arrival at sample " + std::to_string(s_far) +
        ", beyond the 6000-sample window");
  }
}

namespace detail {

inline void add_wavelet(float* ch, std::int64_t onset, double gain, const Wavelet& w) {
  if (gain == 0) return;
  const double omega = 2.0 * std::numbers::pi * w.frequency_hz;
  for (auto t = onset; t < static_cast<std::int64_t>(kSamples); ++t) {
    const double tau = static_cast<double>(t - onset) / kSamplingHz;
    const double env = std::exp(-w.decay_per_s * tau);
    if (env < 1e-6) break;
    ch[t] += static_cast<float>(gain * env * std::sin(omega * tau));
  }
}

}  // namespace detail

/// One trace. Arrivals satisfy s - p == sp_samples(d) exactly; draws that
/// overflow the window are redrawn, up to 100 attempts.
template <class Rng>
TraceRecord synth_trace(const SyntheticSpec& spec, Rng& rng, std::size_t index = 0) {
  std::uniform_real_distribution<double> dist(spec.d_min_km, spec.d_max_km);
  std::uniform_int_distribution<std::int64_t> origin(spec.origin_min, spec.origin_max);
  std::uniform_real_distribution<double> bearing(0.0, 360.0);

  double d = 0;
  std::int64_t p = 0, s = 0;
  bool ok = false;
  for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
    d = dist(rng);
    std::tie(p, s) = arrivals_for(d, origin(rng), spec.vp_kms, spec.vs_kms);
    ok = p < s && s < static_cast<std::int64_t>(kSamples);
  }
  if (!ok) throw std::invalid_argument("synth_trace: no arrival pair fit the window after 100 attempts");

  const double az = bearing(rng);
  TraceRecord rec;
  rec.meta.trace_id = "SYN" + std::to_string(spec.seed % 100000) + "_" + std::to_string(index);
  rec.meta.station = spec.station;
  rec.meta.source = geo::destination(spec.station, az, d);
  rec.meta.p_arrival_sample = p;
  rec.meta.s_arrival_sample = s;
  rec.meta.epicentral_km = d;
  rec.waveform.assign(kWaveChannels * kSamples, 0.0f);

  if (spec.noise_sigma > 0) {
    std::normal_distribution<double> noise(0.0, spec.noise_sigma);
    for (auto& v : rec.waveform) v = static_cast<float>(noise(rng));
  }

  // P is strongest on the vertical, S on the horizontals, split by back azimuth.
  const double a = spec.wavelet.amplitude * spec.arrival_visibility;
  const double east = std::abs(std::sin(geo::radians(az)));
  const double north = std::abs(std::cos(geo::radians(az)));
  const std::array<double, 3> p_gain{0.3 * east, 0.3 * north, 1.0};
  const std::array<double, 3> s_gain{1.5 * east, 1.5 * north, 0.5};
  for (std::size_t c = 0; c < kWaveChannels; ++c) {
    detail::add_wavelet(rec.channel(c), p, a * p_gain[c], spec.wavelet);
    detail::add_wavelet(rec.channel(c), s, a * s_gain[c], spec.wavelet);
  }

  for (std::size_t c = 0; c < kWaveChannels; ++c) {
    const double peak = a * std::max(p_gain[c], s_gain[c]);
    rec.meta.snr_db[c] = spec.noise_sigma > 0 ? (peak > 0 ? 20.0 * std::log10(peak / spec.noise_sigma) : -120.0)
                                              : 120.0;
  }
  return rec;
}

/// n traces from one seeded stream.
inline std::vector<TraceRecord> synth_dataset(const SyntheticSpec& spec) {
  validate(spec);
  std::mt19937_64 rng(spec.seed);
  std::vector<TraceRecord> out;
  out.reserve(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) out.push_back(synth_trace(spec, rng, i));
  return out;
}

}  // namespace epd::data
