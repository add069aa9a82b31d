#include <gtest/gtest.h>

#include <algorithm>
#include <cstring>
#include <numeric>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "epd/data/dataset.hpp"
#include "epd/data/manifest.hpp"
#include "epd/data/prepare.hpp"
#include "epd/data/store.hpp"
#include "epd/data/synth.hpp"
#include "epd/experiments.hpp"
#include "support/temp_dir.hpp"

using namespace epd;
using namespace epd::data;

namespace {

const char* kHeader =
    "trace_name,receiver_latitude,receiver_longitude,source_latitude,source_longitude,p_arrival_sample,"
    "s_arrival_sample,snr_db,source_distance_km\n";

Manifest parse(const std::string& body) {
  std::istringstream is(std::string(kHeader) + body);
  return read_manifest(is);
}

TraceMeta meta(double km, double snr = 40.0) {
  TraceMeta m;
  m.trace_id = "T" + std::to_string(km);
  m.station = geo::GeoPoint(38.034, -120.38);
  m.source = geo::destination(m.station, 45.0, km);
  m.p_arrival_sample = 1000;
  m.s_arrival_sample = 1500;
  m.snr_db = {snr, snr, snr};
  m.epicentral_km = km;
  return m;
}

SyntheticSpec small_spec(std::size_t n, std::uint64_t seed) {
  SyntheticSpec s;
  s.n = n;
  s.seed = seed;
  s.noise_sigma = 0.5;
  return s;
}

}  // namespace

TEST(Manifest, ThreeValidRows) {
  const auto m = parse(
      "a,38.034,-120.38,38.5,-120.38,500,900,30;31;32,\n"
      "b,38.034,-120.38,38.1,-120.2,400,700,30;30;30,\n"
      "c,10,20,10.5,20,100,300,50;40;30,55.597463\n");
  EXPECT_EQ(m.rows.size(), 3u);
  EXPECT_TRUE(m.rejects.empty());
  EXPECT_NEAR(m.rows[0].epicentral_km, geo::haversine_km(geo::GeoPoint(38.034, -120.38), geo::GeoPoint(38.5, -120.38)),
              1e-12);
  EXPECT_DOUBLE_EQ(m.rows[2].snr_db[2], 30.0);
}

TEST(Manifest, LatitudeOutOfRangeIsRejected) {
  const auto m = parse("a,91,0,0,0,100,200,30;30;30,\nb,0,0,0.5,0,100,200,30;30;30,\n");
  ASSERT_EQ(m.rejects.size(), 1u);
  EXPECT_EQ(m.rejects[0].reason, "latitude range");
  EXPECT_EQ(m.rejects[0].line, 2u);
  EXPECT_EQ(m.rows.size(), 1u);
}

TEST(Manifest, OtherRejectReasons) {
  const auto m = parse(
      "a,0,0,0,0,300,200,30;30;30,\n"
      "b,0,0,0,0,100,6000,30;30;30,\n"
      "c,0,0,0,0,100,200,30;30,\n"
      "d,0,0,1,0,100,200,30;30;30,50\n"
      ",0,0,1,0,100,200,30;30;30,\n");
  std::vector<std::string> reasons;
  for (const auto& r : m.rejects) reasons.push_back(r.reason);
  EXPECT_EQ(reasons, (std::vector<std::string>{"arrival order", "arrival range",
                                               "snr_db must hold three ';'-separated values", "distance mismatch",
                                               "missing trace_name"}));
}

TEST(Manifest, DistanceToleranceScalesWithDistance) {
  // (0,0)-(1,0) is 111.19 km on the sphere
  const auto m = parse(
      "near,0,0,1,0,100,200,30;30;30,111.6\n"
      "ellipsoid,0,0,1,0,100,200,30;30;30,111.9\n"
      "far_off,0,0,1,0,100,200,30;30;30,113.5\n");
  ASSERT_EQ(m.rows.size(), 2u);
  EXPECT_EQ(m.rows[1].epicentral_km, 111.9);
  ASSERT_EQ(m.rejects.size(), 1u);
  EXPECT_EQ(m.rejects[0].trace_id, "far_off");
}

TEST(Manifest, MissingColumnIsFormatError) {
  std::istringstream is("trace_name,receiver_latitude\nx,1\n");
  EXPECT_THROW(read_manifest(is), FormatError);
}

TEST(Manifest, StationRoundTripsExactly) {
  const auto m = parse("fig1,38.034,-120.38,38.2,-120.1,700,1300,30;30;30,\n");
  ASSERT_EQ(m.rows.size(), 1u);
  std::ostringstream os;
  write_manifest(os, m.rows);
  std::istringstream is(os.str());
  const auto back = read_manifest(is);
  ASSERT_EQ(back.rows.size(), 1u);
  EXPECT_EQ(back.rows[0].station.lat(), 38.034);
  EXPECT_EQ(back.rows[0].station.lon(), -120.38);
  EXPECT_EQ(back.rows[0].epicentral_km, m.rows[0].epicentral_km);
}

TEST(Filters, DistanceBoundary) {
  const auto out = apply_filters({meta(110.0), meta(111.0), meta(5.0)}, FilterSpec{});
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0].epicentral_km, 110.0);
  EXPECT_EQ(out[1].epicentral_km, 5.0);
}

TEST(Filters, SnrExactlyThresholdExcluded) {
  auto at = meta(50.0, 25.0);
  auto mixed = meta(60.0);
  mixed.snr_db = {20.0, 25.0, 31.0};  // mean 25.33
  EXPECT_TRUE(apply_filters({at}, FilterSpec{}).empty());
  EXPECT_EQ(apply_filters({mixed}, FilterSpec{}).size(), 1u);
}

TEST(Filters, OrientationAndLocal) {
  auto bad = meta(20.0);
  bad.orientation_ok = false;
  auto good = meta(30.0);
  good.orientation_ok = true;
  EXPECT_EQ(apply_filters({bad, good}, FilterSpec{}).size(), 1u);

  FilterSpec local;
  local.local_center = kDefaultLocalCenter;
  auto far = meta(30.0);
  far.station = geo::GeoPoint(0, 0);
  EXPECT_EQ(apply_filters({good, far}, local).size(), 1u);
}

TEST(Filters, Idempotent) {
  std::vector<TraceMeta> rows;
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> km(0, 200), snr(10, 40);
  for (int i = 0; i < 200; ++i) rows.push_back(meta(km(rng), snr(rng)));
  const auto once = apply_filters(rows, FilterSpec{});
  const auto twice = apply_filters(once, FilterSpec{});
  ASSERT_EQ(once.size(), twice.size());
  for (std::size_t i = 0; i < once.size(); ++i) EXPECT_EQ(once[i].trace_id, twice[i].trace_id);
}

TEST(Split, Proportions) {
  std::vector<int> rows(100);
  std::iota(rows.begin(), rows.end(), 0);
  const auto s = split(rows, SplitSpec{});
  EXPECT_EQ(s.train.size(), 72u);
  EXPECT_EQ(s.val.size(), 8u);
  EXPECT_EQ(s.test.size(), 20u);
}

TEST(Split, SeededMembership) {
  std::vector<int> rows(1000);
  std::iota(rows.begin(), rows.end(), 0);
  SplitSpec a, b;
  a.seed = 1;
  b.seed = 2;
  EXPECT_EQ(split(rows, a).test, split(rows, a).test);
  EXPECT_NE(split(rows, a).test, split(rows, b).test);
}

TEST(Split, DisjointAndExhaustive) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::vector<int> rows(37 + seed);
    std::iota(rows.begin(), rows.end(), 0);
    SplitSpec spec;
    spec.seed = seed;
    const auto s = split(rows, spec);
    std::vector<int> all;
    for (const auto* part : {&s.train, &s.val, &s.test}) all.insert(all.end(), part->begin(), part->end());
    std::sort(all.begin(), all.end());
    EXPECT_EQ(all, rows);
  }
}

TEST(Split, RejectsBadSpec) {
  SplitSpec s;
  s.train_frac = 0.7;
  EXPECT_THROW(split(std::vector<int>(10), s), std::invalid_argument);
  EXPECT_THROW(split(std::vector<int>(2), SplitSpec{}), std::invalid_argument);
}

TEST(PsChannel, Boxcar) {
  const auto ch = build_ps_channel(1000, 1500);
  EXPECT_EQ(ch.size(), kSamples);
  EXPECT_EQ(std::accumulate(ch.begin(), ch.end(), 0.0), 500.0);
  EXPECT_EQ(ch[999], 0.0f);
  EXPECT_EQ(ch[1000], 1.0f);
  EXPECT_EQ(ch[1499], 1.0f);
  EXPECT_EQ(ch[1500], 0.0f);
  EXPECT_THROW(build_ps_channel(0, 6000), std::invalid_argument);
  EXPECT_THROW(build_ps_channel(10, 10), std::invalid_argument);
}

TEST(PsChannel, SumIsIntervalForRandomPairs) {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 300; ++i) {
    std::uniform_int_distribution<std::int64_t> pd(0, 5998);
    const auto p = pd(rng);
    const auto s = std::uniform_int_distribution<std::int64_t>(p + 1, 5999)(rng);
    const auto ch = build_ps_channel(p, s);
    double sum = 0;
    for (float v : ch) sum += v;
    EXPECT_EQ(sum, static_cast<double>(s - p));
  }
}

TEST(AssembleInput, ShapesAndNormalization) {
  auto spec = small_spec(1, 3);
  std::mt19937_64 rng(3);
  const auto rec = synth_trace(spec, rng);
  const auto x3 = assemble_input(rec, false, true);
  EXPECT_EQ(x3.shape(), (Shape{3, kSamples}));
  const auto x4 = assemble_input(rec, true, true);
  EXPECT_EQ(x4.shape(), (Shape{4, kSamples}));
  const auto ps = build_ps_channel(rec.meta.p_arrival_sample, rec.meta.s_arrival_sample);
  EXPECT_TRUE(std::equal(ps.begin(), ps.end(), x4.data().begin() + 3 * kSamples));
  for (std::size_t c = 0; c < 3; ++c) {
    double m = 0, v = 0;
    for (std::size_t t = 0; t < kSamples; ++t) m += x3.data()[c * kSamples + t];
    m /= kSamples;
    for (std::size_t t = 0; t < kSamples; ++t) v += std::pow(x3.data()[c * kSamples + t] - m, 2);
    EXPECT_LE(std::abs(m), 1e-5);
    EXPECT_NEAR(std::sqrt(v / kSamples), 1.0, 1e-3);
  }
  const auto raw = assemble_input(rec, false, false);
  EXPECT_TRUE(std::equal(rec.waveform.begin(), rec.waveform.end(), raw.data().begin()));
}

TEST(Synth, ArrivalExample) {
  EXPECT_EQ(arrivals_for(42.0, 500, 6.0, 3.5), (std::pair<std::int64_t, std::int64_t>{1200, 1700}));
}

TEST(Synth, IntervalMatchesDistanceForEveryTrace) {
  auto spec = small_spec(300, 8);
  spec.noise_sigma = 0;
  for (const auto& r : synth_dataset(spec)) {
    const auto& m = r.meta;
    EXPECT_EQ(m.s_arrival_sample - m.p_arrival_sample, std::llround(100.0 * m.epicentral_km * (1 / 3.5 - 1 / 6.0)));
    EXPECT_LT(m.p_arrival_sample, m.s_arrival_sample);
    EXPECT_LT(m.s_arrival_sample, 6000);
    EXPECT_NEAR(geo::haversine_km(m.station, m.source), m.epicentral_km, 1e-6);
  }
}

TEST(Synth, InvisibleArrivalsLeaveNoiseButKeepMetadata) {
  auto spec = small_spec(20, 5);
  spec.noise_sigma = 1.0;
  spec.arrival_visibility = 0.0;
  auto quiet = spec;
  quiet.noise_sigma = 0.0;
  quiet.n = 1;
  quiet.arrival_visibility = 0.0;
  EXPECT_THROW(validate(SyntheticSpec{.n = 0}), std::invalid_argument);
  for (const auto& r : synth_dataset(spec)) {
    double m = 0, v = 0;
    for (float x : r.waveform) m += x;
    m /= static_cast<double>(r.waveform.size());
    for (float x : r.waveform) v += (x - m) * (x - m);
    EXPECT_NEAR(std::sqrt(v / static_cast<double>(r.waveform.size())), 1.0, 0.03);
    EXPECT_EQ(r.meta.s_arrival_sample - r.meta.p_arrival_sample, sp_samples(r.meta.epicentral_km, 6.0, 3.5));
  }
  for (const auto& r : synth_dataset(quiet)) {
    EXPECT_TRUE(std::all_of(r.waveform.begin(), r.waveform.end(), [](float x) { return x == 0.0f; }));
  }
}

TEST(Synth, NoiselessSetIsNearlyPerfectlyCorrelated) {
  auto spec = small_spec(1000, 17);
  spec.noise_sigma = 0;
  std::vector<std::pair<double, double>> pairs;
  for (const auto& r : synth_dataset(spec)) pairs.emplace_back(r.meta.sp_interval_s(), r.meta.epicentral_km);
  EXPECT_GE(experiments::correlation(pairs).pearson, 0.99999);
}

TEST(Synth, SeedDeterminesOutput) {
  auto a = synth_dataset(small_spec(5, 1));
  auto b = synth_dataset(small_spec(5, 1));
  auto c = synth_dataset(small_spec(5, 2));
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(a[i].waveform, b[i].waveform);
    EXPECT_EQ(a[i].meta.epicentral_km, b[i].meta.epicentral_km);
  }
  EXPECT_NE(a[0].meta.epicentral_km, c[0].meta.epicentral_km);
}

TEST(Synth, RejectsSpecsThatCannotFit) {
  SyntheticSpec s;
  s.d_max_km = 600;
  EXPECT_THROW(validate(s), std::invalid_argument);
  s = SyntheticSpec{};
  s.vp_kms = 3.0;
  EXPECT_THROW(validate(s), std::invalid_argument);
}

TEST(Store, PackUnpackIsIdentity) {
  support::TempDir dir;
  const auto recs = synth_dataset(small_spec(10, 21));
  pack_store(recs, dir / "w.sw6k");
  std::vector<std::string> ids;
  for (auto it = recs.rbegin(); it != recs.rend(); ++it) ids.push_back(it->meta.trace_id);
  const auto back = unpack_store(dir / "w.sw6k", ids);
  ASSERT_EQ(back.size(), 10u);
  for (std::size_t i = 0; i < 10; ++i) {
    const auto& src = recs[9 - i];
    EXPECT_EQ(back[i].trace_id, src.meta.trace_id);
    EXPECT_EQ(back[i].p_arrival_sample, src.meta.p_arrival_sample);
    EXPECT_EQ(back[i].s_arrival_sample, src.meta.s_arrival_sample);
    EXPECT_EQ(std::memcmp(back[i].waveform.data(), src.waveform.data(), src.waveform.size() * sizeof(float)), 0);
  }
  EXPECT_EQ(read_store(dir / "w.sw6k").size(), 10u);
}

TEST(Store, CorruptMagicAndAbsentId) {
  support::TempDir dir;
  const auto recs = synth_dataset(small_spec(2, 22));
  pack_store(recs, dir / "w.sw6k");
  EXPECT_THROW(unpack_store(dir / "w.sw6k", {"nope"}), NotFoundError);
  {
    std::fstream f(dir / "w.sw6k", std::ios::in | std::ios::out | std::ios::binary);
    f.write("XXXX", 4);
  }
  EXPECT_THROW(read_store(dir / "w.sw6k"), FormatError);
  EXPECT_THROW(unpack_store(dir / "w.sw6k", {recs[0].meta.trace_id}), FormatError);
}

TEST(Store, TruncatedFileIsFormatError) {
  support::TempDir dir;
  pack_store(synth_dataset(small_spec(2, 23)), dir / "w.sw6k");
  std::filesystem::resize_file(dir / "w.sw6k", kStoreHeaderBytes + kStoreRecordBytes + 100);
  EXPECT_THROW(read_store(dir / "w.sw6k"), FormatError);
}

TEST(Dataset, WriteThenLoad) {
  support::TempDir dir;
  const auto recs = synth_dataset(small_spec(6, 24));
  write_dataset(dir.path(), recs);
  const auto back = load_dataset(dir.path());
  ASSERT_EQ(back.size(), 6u);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(back[i].meta.trace_id, recs[i].meta.trace_id);
    EXPECT_EQ(back[i].waveform, recs[i].waveform);
    EXPECT_NEAR(back[i].meta.epicentral_km, recs[i].meta.epicentral_km, 1e-9);
  }
  EXPECT_THROW(load_dataset(dir / "missing"), IoError);
}
