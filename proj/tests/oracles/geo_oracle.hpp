#pragma once

// Independent geometry routines used only by tests. They deliberately avoid the
// library's code paths: rays go north instead of east, and distances use the
// spherical law of cosines instead of the haversine form.

#include <cmath>
#include <vector>

namespace oracle {

struct Pt {
    double x;  // lon
    double y;  // lat
};

/// Crossing-number test with a ray cast toward +lat.
inline bool inside_vertical_ray(const std::vector<Pt>& ring, Pt p) {
    bool in = false;
    const std::size_t n = ring.size();
    for (std::size_t i = 0; i + 1 < n; ++i) {
        const Pt a = ring[i];
        const Pt b = ring[i + 1];
        const bool straddles = (a.x <= p.x && b.x > p.x) || (b.x <= p.x && a.x > p.x);
        if (!straddles) continue;
        const double y_at = a.y + (p.x - a.x) / (b.x - a.x) * (b.y - a.y);
        if (y_at > p.y) in = !in;
    }
    return in;
}

/// For a convex ring: inside iff p lies on the same side of every edge.
inline bool inside_convex(const std::vector<Pt>& ring, Pt p) {
    int sign = 0;
    for (std::size_t i = 0; i + 1 < ring.size(); ++i) {
        const Pt a = ring[i];
        const Pt b = ring[i + 1];
        const double c = (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
        const int s = c > 0 ? 1 : (c < 0 ? -1 : 0);
        if (s == 0) continue;
        if (sign == 0) sign = s;
        else if (s != sign) return false;
    }
    return true;
}

/// Euclidean distance in degree space from p to the nearest ring edge.
inline double distance_to_boundary(const std::vector<Pt>& ring, Pt p) {
    double best = 1e300;
    for (std::size_t i = 0; i + 1 < ring.size(); ++i) {
        const Pt a = ring[i];
        const Pt b = ring[i + 1];
        const double dx = b.x - a.x;
        const double dy = b.y - a.y;
        const double len2 = dx * dx + dy * dy;
        double t = len2 > 0 ? ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2 : 0.0;
        t = std::fmax(0.0, std::fmin(1.0, t));
        const double qx = a.x + t * dx - p.x;
        const double qy = a.y + t * dy - p.y;
        best = std::fmin(best, std::sqrt(qx * qx + qy * qy));
    }
    return best;
}

/// Great-circle distance via the spherical law of cosines.
inline double great_circle_meters(Pt a, Pt b) {
    constexpr double R = 6'371'008.8;
    constexpr double rad = 3.14159265358979323846 / 180.0;
    const double c = std::sin(a.y * rad) * std::sin(b.y * rad) +
                     std::cos(a.y * rad) * std::cos(b.y * rad) * std::cos((b.x - a.x) * rad);
    return R * std::acos(std::fmin(1.0, std::fmax(-1.0, c)));
}

/// Convex polygon from sorted random angles around a centre; returns a closed ring.
template <typename Rng>
std::vector<Pt> random_convex_ring(Rng& rng, Pt centre, double max_radius) {
    std::uniform_real_distribution<double> angle(0.0, 2 * 3.14159265358979323846);
    std::uniform_int_distribution<int> count(3, 12);
    std::vector<double> angles(static_cast<std::size_t>(count(rng)));
    for (auto& a : angles) a = angle(rng);
    std::sort(angles.begin(), angles.end());
    std::uniform_real_distribution<double> radius(0.2 * max_radius, max_radius);
    const double r = radius(rng);
    std::vector<Pt> ring;
    for (double a : angles) ring.push_back({centre.x + r * std::cos(a), centre.y + r * std::sin(a)});
    ring.push_back(ring.front());
    return ring;
}

}  // namespace oracle
