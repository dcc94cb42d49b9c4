#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "opencourier/error.hpp"

namespace opencourier::geo {

/// WGS84 position in degrees.
struct LonLat {
    double lon = 0.0;
    double lat = 0.0;

    friend bool operator==(const LonLat&, const LonLat&) = default;
};

using Ring = std::vector<LonLat>;

/// GeoJSON polygon: rings[0] is the exterior, the rest are holes.
struct Polygon {
    std::vector<Ring> rings;

    friend bool operator==(const Polygon&, const Polygon&) = default;
};

/// A GeoJSON Polygon or MultiPolygon. `multi` records which one was supplied so
/// serialization reproduces the original type.
struct Area {
    std::vector<Polygon> polygons;
    bool multi = false;

    friend bool operator==(const Area&, const Area&) = default;
};

inline constexpr double kEarthRadiusMeters = 6'371'008.8;

inline bool valid_position(const LonLat& p) {
    return std::isfinite(p.lon) && std::isfinite(p.lat) && p.lon >= -180.0 && p.lon <= 180.0 && p.lat >= -90.0 &&
           p.lat <= 90.0;
}

/// Great-circle distance on a spherical earth.
inline double haversine_meters(const LonLat& a, const LonLat& b) {
    constexpr double rad = 3.14159265358979323846 / 180.0;
    const double dlat = (b.lat - a.lat) * rad;
    const double dlon = (b.lon - a.lon) * rad;
    const double s = std::sin(dlat / 2) * std::sin(dlat / 2) +
                     std::cos(a.lat * rad) * std::cos(b.lat * rad) * std::sin(dlon / 2) * std::sin(dlon / 2);
    return 2.0 * kEarthRadiusMeters * std::asin(std::min(1.0, std::sqrt(s)));
}

namespace detail {

inline double cross(const LonLat& o, const LonLat& a, const LonLat& b) {
    return (a.lon - o.lon) * (b.lat - o.lat) - (a.lat - o.lat) * (b.lon - o.lon);
}

inline bool within_box(const LonLat& a, const LonLat& b, const LonLat& p) {
    return p.lon >= std::min(a.lon, b.lon) && p.lon <= std::max(a.lon, b.lon) && p.lat >= std::min(a.lat, b.lat) &&
           p.lat <= std::max(a.lat, b.lat);
}

inline bool on_segment(const LonLat& a, const LonLat& b, const LonLat& p) {
    const double scale = std::max({std::fabs(b.lon - a.lon), std::fabs(b.lat - a.lat), 1e-300});
    return std::fabs(cross(a, b, p)) <= 1e-12 * scale && within_box(a, b, p);
}

enum class RingSide { Outside, Boundary, Inside };

inline RingSide ring_side(const Ring& ring, const LonLat& p) {
    bool inside = false;
    for (std::size_t i = 0, j = ring.size() - 1; i < ring.size(); j = i++) {
        const LonLat& a = ring[i];
        const LonLat& b = ring[j];
        if (on_segment(a, b, p)) return RingSide::Boundary;
        if ((a.lat > p.lat) != (b.lat > p.lat)) {
            const double x = a.lon + (p.lat - a.lat) * (b.lon - a.lon) / (b.lat - a.lat);
            if (p.lon < x) inside = !inside;
        }
    }
    return inside ? RingSide::Inside : RingSide::Outside;
}

inline int orientation(const LonLat& a, const LonLat& b, const LonLat& c) {
    const double v = cross(a, b, c);
    if (v > 0) return 1;
    if (v < 0) return -1;
    return 0;
}

inline bool segments_intersect(const LonLat& p1, const LonLat& p2, const LonLat& q1, const LonLat& q2) {
    const int o1 = orientation(p1, p2, q1);
    const int o2 = orientation(p1, p2, q2);
    const int o3 = orientation(q1, q2, p1);
    const int o4 = orientation(q1, q2, p2);
    if (o1 != o2 && o3 != o4) return true;
    if (o1 == 0 && within_box(p1, p2, q1)) return true;
    if (o2 == 0 && within_box(p1, p2, q2)) return true;
    if (o3 == 0 && within_box(q1, q2, p1)) return true;
    if (o4 == 0 && within_box(q1, q2, p2)) return true;
    return false;
}

}  // namespace detail

/// Ray casting; points on any ring edge count as inside the polygon.
inline bool contains(const Polygon& poly, const LonLat& p) {
    if (poly.rings.empty()) return false;
    const auto outer = detail::ring_side(poly.rings.front(), p);
    if (outer == detail::RingSide::Outside) return false;
    if (outer == detail::RingSide::Boundary) return true;
    for (std::size_t h = 1; h < poly.rings.size(); ++h) {
        if (detail::ring_side(poly.rings[h], p) == detail::RingSide::Inside) return false;
    }
    return true;
}

inline bool contains(const Area& area, const LonLat& p) {
    return std::any_of(area.polygons.begin(), area.polygons.end(),
                       [&](const Polygon& poly) { return contains(poly, p); });
}

inline bool intersects(const Polygon& a, const Polygon& b) {
    for (const auto& ra : a.rings)
        for (std::size_t i = 0; i + 1 < ra.size(); ++i)
            for (const auto& rb : b.rings)
                for (std::size_t j = 0; j + 1 < rb.size(); ++j)
                    if (detail::segments_intersect(ra[i], ra[i + 1], rb[j], rb[j + 1])) return true;
    if (!a.rings.empty() && !a.rings[0].empty() && contains(b, a.rings[0][0])) return true;
    if (!b.rings.empty() && !b.rings[0].empty() && contains(a, b.rings[0][0])) return true;
    return false;
}

inline bool intersects(const Area& a, const Area& b) {
    for (const auto& pa : a.polygons)
        for (const auto& pb : b.polygons)
            if (intersects(pa, pb)) return true;
    return false;
}

namespace detail {

inline LonLat position_from_json(const nlohmann::json& j) {
    if (!j.is_array() || j.size() < 2 || !j[0].is_number() || !j[1].is_number())
        throw Error(ErrorCode::InvalidGeometry, "position must be [lon, lat]");
    LonLat p{j[0].get<double>(), j[1].get<double>()};
    if (!valid_position(p)) throw Error(ErrorCode::InvalidGeometry, "position outside WGS84 range");
    return p;
}

inline Polygon polygon_from_coordinates(const nlohmann::json& coords) {
    if (!coords.is_array() || coords.empty()) throw Error(ErrorCode::InvalidGeometry, "polygon needs at least one ring");
    Polygon poly;
    for (const auto& ring_json : coords) {
        if (!ring_json.is_array()) throw Error(ErrorCode::InvalidGeometry, "ring must be an array of positions");
        Ring ring;
        for (const auto& pos : ring_json) ring.push_back(position_from_json(pos));
        if (ring.size() < 4) throw Error(ErrorCode::InvalidGeometry, "ring must contain at least 4 positions");
        if (!(ring.front() == ring.back())) throw Error(ErrorCode::InvalidGeometry, "ring is not closed");
        poly.rings.push_back(std::move(ring));
    }
    return poly;
}

inline nlohmann::json polygon_coordinates(const Polygon& poly) {
    nlohmann::json rings = nlohmann::json::array();
    for (const auto& ring : poly.rings) {
        nlohmann::json r = nlohmann::json::array();
        for (const auto& p : ring) r.push_back({p.lon, p.lat});
        rings.push_back(std::move(r));
    }
    return rings;
}

}  // namespace detail

/// Parses a GeoJSON Polygon or MultiPolygon. Throws INVALID_GEOMETRY.
inline Area area_from_geojson(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("type") || !j.contains("coordinates"))
        throw Error(ErrorCode::InvalidGeometry, "GeoJSON geometry needs type and coordinates");
    const auto type = j.at("type").is_string() ? j.at("type").get<std::string>() : std::string{};
    Area area;
    if (type == "Polygon") {
        area.polygons.push_back(detail::polygon_from_coordinates(j.at("coordinates")));
    } else if (type == "MultiPolygon") {
        area.multi = true;
        const auto& coords = j.at("coordinates");
        if (!coords.is_array() || coords.empty())
            throw Error(ErrorCode::InvalidGeometry, "MultiPolygon needs at least one polygon");
        for (const auto& c : coords) area.polygons.push_back(detail::polygon_from_coordinates(c));
    } else {
        throw Error(ErrorCode::InvalidGeometry, "unsupported geometry type: " + type);
    }
    return area;
}

/// Parses a GeoJSON geometry that must be a single Polygon.
inline Polygon polygon_from_geojson(const nlohmann::json& j) {
    Area a = area_from_geojson(j);
    if (a.multi) throw Error(ErrorCode::InvalidGeometry, "expected a Polygon, got MultiPolygon");
    return std::move(a.polygons.front());
}

inline nlohmann::json to_geojson(const Polygon& poly) {
    return {{"type", "Polygon"}, {"coordinates", detail::polygon_coordinates(poly)}};
}

inline nlohmann::json to_geojson(const Area& area) {
    if (!area.multi && area.polygons.size() == 1) return to_geojson(area.polygons.front());
    nlohmann::json polys = nlohmann::json::array();
    for (const auto& p : area.polygons) polys.push_back(detail::polygon_coordinates(p));
    return {{"type", "MultiPolygon"}, {"coordinates", std::move(polys)}};
}

/// Axis-aligned rectangle as a closed 5-position ring.
inline Polygon rectangle(double west, double south, double east, double north) {
    return Polygon{{Ring{{west, north}, {east, north}, {east, south}, {west, south}, {west, north}}}};
}

}  // namespace opencourier::geo
