#pragma once

#include <cmath>

namespace mvar::geo {

constexpr double kEarthRadiusKm = 6371.0;
constexpr double kPi = 3.14159265358979323846;

inline double deg2rad(double d) { return d * (kPi / 180.0); }

/// Great-circle distance in kilometers on a 6371 km sphere.
inline double haversine_km(double lat1, double lon1, double lat2, double lon2) {
    const double phi1 = deg2rad(lat1);
    const double phi2 = deg2rad(lat2);
    const double dphi = deg2rad(lat2 - lat1);
    const double dlam = deg2rad(lon2 - lon1);
    const double sp = std::sin(dphi * 0.5);
    const double sl = std::sin(dlam * 0.5);
    const double a = sp * sp + std::cos(phi1) * std::cos(phi2) * sl * sl;
    const double clamped = a < 0.0 ? 0.0 : (a > 1.0 ? 1.0 : a);
    return 2.0 * kEarthRadiusKm * std::asin(std::sqrt(clamped));
}

}  // namespace mvar::geo
