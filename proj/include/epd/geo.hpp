#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace epd::geo {

inline constexpr double kEarthRadiusKm = 6371.0;

/// Geographic coordinate in degrees; lat in [-90, 90], lon in (-180, 180].
class GeoPoint {
 public:
  GeoPoint() = default;
  GeoPoint(double lat, double lon) : lat_(lat), lon_(lon) {
    if (!(lat >= -90.0 && lat <= 90.0)) throw std::invalid_argument("latitude range: " + std::to_string(lat));
    if (!(lon > -180.0 && lon <= 180.0)) throw std::invalid_argument("longitude range: " + std::to_string(lon));
  }

  [[nodiscard]] double lat() const noexcept { return lat_; }
  [[nodiscard]] double lon() const noexcept { return lon_; }

  friend bool operator==(const GeoPoint&, const GeoPoint&) = default;

 private:
  double lat_ = 0;
  double lon_ = 0;
};

inline double radians(double deg) { return deg * std::numbers::pi / 180.0; }
inline double degrees(double rad) { return rad * 180.0 / std::numbers::pi; }

/// Great-circle distance on a sphere of radius kEarthRadiusKm.
inline double haversine_km(const GeoPoint& a, const GeoPoint& b) {
  const double p1 = radians(a.lat());
  const double p2 = radians(b.lat());
  const double dp = p2 - p1;
  const double dl = radians(b.lon() - a.lon());
  const double sp = std::sin(dp / 2);
  const double sl = std::sin(dl / 2);
  // The product terms are symmetric in (a, b), so d(a,b) == d(b,a) bitwise.
  double h = sp * sp + std::cos(p1) * std::cos(p2) * sl * sl;
  h = std::clamp(h, 0.0, 1.0);
  return 2.0 * kEarthRadiusKm * std::asin(std::sqrt(h));
}

inline bool within_radius(const GeoPoint& center, const GeoPoint& p, double r_km) {
  if (!(r_km > 0)) throw std::invalid_argument("within_radius: radius must be positive");
  return haversine_km(center, p) <= r_km;
}

/// Distance implied by an S-P interval at constant velocities: dt / (1/vs - 1/vp).
inline double sp_interval_to_distance(double dt_s, double vp_kms, double vs_kms) {
  if (!(vs_kms > 0) || !(vp_kms > vs_kms)) throw std::invalid_argument("sp_interval_to_distance: need vp > vs > 0");
  if (!(dt_s >= 0)) throw std::invalid_argument("sp_interval_to_distance: dt must be >= 0");
  return dt_s / (1.0 / vs_kms - 1.0 / vp_kms);
}

/// Point reached by travelling `distance_km` from `origin` along `bearing_deg`.
inline GeoPoint destination(const GeoPoint& origin, double bearing_deg, double distance_km) {
  const double delta = distance_km / kEarthRadiusKm;
  const double theta = radians(bearing_deg);
  const double p1 = radians(origin.lat());
  const double l1 = radians(origin.lon());
  const double sin_p2 = std::sin(p1) * std::cos(delta) + std::cos(p1) * std::sin(delta) * std::cos(theta);
  const double p2 = std::asin(std::clamp(sin_p2, -1.0, 1.0));
  const double l2 = l1 + std::atan2(std::sin(theta) * std::sin(delta) * std::cos(p1),
                                    std::cos(delta) - std::sin(p1) * std::sin(p2));
  double lon = std::remainder(degrees(l2), 360.0);
  if (lon <= -180.0) lon += 360.0;
  return {std::clamp(degrees(p2), -90.0, 90.0), lon};
}

}  // namespace epd::geo
