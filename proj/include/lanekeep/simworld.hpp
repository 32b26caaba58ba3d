#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace lanekeep {

using Vec2 = Eigen::Vector2d;

enum class RouteId { A, B1, B2, B3, B4, C, D, E, F, G, H, I, J, K, L };
enum class RouteCategory { FullRoute, TrainingSection, MultiTurn, Straight, OneTurn };

inline constexpr std::array<RouteId, 15> kAllRouteIds = {
    RouteId::A, RouteId::B1, RouteId::B2, RouteId::B3, RouteId::B4, RouteId::C, RouteId::D, RouteId::E,
    RouteId::F, RouteId::G,  RouteId::H,  RouteId::I,  RouteId::J,  RouteId::K, RouteId::L,
};
inline constexpr std::array<RouteId, 4> kTrainingRouteIds = {RouteId::B1, RouteId::B2, RouteId::B3,
                                                             RouteId::B4};
/// The eleven evaluation routes.
inline constexpr std::array<RouteId, 11> kTestRouteIds = {
    RouteId::A, RouteId::C, RouteId::D, RouteId::E, RouteId::F, RouteId::G,
    RouteId::H, RouteId::I, RouteId::J, RouteId::K, RouteId::L,
};

std::string_view route_name(RouteId id);
RouteId parse_route_id(std::string_view name);
std::string_view category_name(RouteCategory c);
RouteCategory parse_category(std::string_view name);
RouteCategory category_of(RouteId id);

struct Projection {
    double arc_s;
    double lane_offset;   // positive = left of travel direction
    double angle_offset;  // heading minus tangent, wrapped to (-pi, pi]
    double goal_dist;
};

/// Waypoint polyline with cumulative arc length.
class Route {
public:
    Route() = default;
    Route(RouteId id, RouteCategory category, std::vector<Vec2> waypoints, double lane_half_width = 1.75,
          double road_half_width = 3.0);

    RouteId id() const { return id_; }
    RouteCategory category() const { return category_; }
    const std::vector<Vec2>& waypoints() const { return waypoints_; }
    const std::vector<double>& cumulative_arc() const { return arc_; }
    const Vec2& goal() const { return waypoints_.back(); }
    double length() const { return arc_.back(); }
    double lane_half_width() const { return lane_half_width_; }
    double road_half_width() const { return road_half_width_; }

    /// Point at arc length s; beyond either end the terminal segment is
    /// extended linearly.
    Vec2 point_at(double s) const;
    /// Unit tangent of the segment containing arc length s.
    Vec2 tangent_at(double s) const;

    /// Closest-point projection onto the polyline; beyond the goal the
    /// offset grows with the distance to it. Throws OffWorldError when the point is
    /// more than 50 m outside the centerline bounding box.
    Projection project(const Vec2& position, double heading) const;

private:
    std::size_t segment_for(double s) const;

    RouteId id_ = RouteId::A;
    RouteCategory category_ = RouteCategory::FullRoute;
    std::vector<Vec2> waypoints_;
    std::vector<double> arc_;
    double lane_half_width_ = 1.75;
    double road_half_width_ = 3.0;
    Vec2 box_min_ = Vec2::Zero();
    Vec2 box_max_ = Vec2::Zero();
};

inline Projection project(const Route& route, const Vec2& position, double heading) {
    return route.project(position, heading);
}

struct RouteCatalog {
    std::uint64_t seed = 0;
    std::vector<Route> routes;

    const Route& get(RouteId id) const;
};

/// Procedural catalog with the route taxonomy: A (full route), B1-B4
/// (contiguous quarters of A), C/F multi-turn, D/E/G/H straight,
/// I/J/K/L single turn. Deterministic in the seed.
RouteCatalog build_route_catalog(std::uint64_t seed);

std::string catalog_to_json(const RouteCatalog& catalog);
RouteCatalog catalog_from_json(const std::string& text);
void save_catalog(const RouteCatalog& catalog, const std::string& path);
RouteCatalog load_catalog(const std::string& path);

struct WorldConfig {
    double dt = 0.1;               // s
    double wheelbase = 2.5;        // m
    double max_wheel_angle = 0.6;  // rad, reached at steer_cmd = +-1
    double accel_gain = 40.0;      // km/h per s per unit throttle
    double drag_coeff = 0.28;      // 1/s

    void validate() const;
    double steady_speed(double throttle) const { return accel_gain * throttle / drag_coeff; }
};

struct VehicleState {
    Vec2 position = Vec2::Zero();
    double heading = 0.0;  // rad
    double speed = 0.0;    // km/h
    double steer_cmd = 0.0;
    double throttle_cmd = 0.0;
    long elapsed_steps = 0;
};

double wrap_angle(double a);

/// One kinematic-bicycle step with first-order longitudinal dynamics.
VehicleState step_vehicle(const VehicleState& state, double steer_cmd, double throttle_cmd,
                          const WorldConfig& cfg);

}  // namespace lanekeep
