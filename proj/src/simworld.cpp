#include "lanekeep/simworld.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "lanekeep/errors.hpp"
#include "lanekeep/random.hpp"

namespace lanekeep {

namespace {

constexpr double kOffWorldMargin = 50.0;
constexpr double kWaypointStep = 1.0;

constexpr std::array<std::string_view, 15> kRouteNames = {"A", "B1", "B2", "B3", "B4", "C", "D", "E",
                                                          "F", "G",  "H",  "I",  "J",  "K", "L"};
constexpr std::array<std::string_view, 5> kCategoryNames = {"FullRoute", "TrainingSection", "MultiTurn",
                                                            "Straight", "OneTurn"};

double cross(const Vec2& a, const Vec2& b) { return a.x() * b.y() - a.y() * b.x(); }

struct Segment {
    double length;
    double curvature;  // 1/m, positive turns left
};

struct Pose {
    Vec2 p;
    double heading;
};

// Samples a chain of constant-curvature segments at roughly kWaypointStep
// spacing. The start pose is emitted once.
std::vector<Vec2> integrate_segments(const std::vector<Segment>& segments, Pose pose) {
    std::vector<Vec2> pts{pose.p};
    for (const auto& seg : segments) {
        const int n = std::max(1, static_cast<int>(std::ceil(seg.length / kWaypointStep)));
        const double du = seg.length / n;
        const Pose start = pose;
        for (int k = 1; k <= n; ++k) {
            const double u = du * k;
            Vec2 p;
            double h;
            if (seg.curvature == 0.0) {
                h = start.heading;
                p = start.p + u * Vec2(std::cos(h), std::sin(h));
            } else {
                const double kappa = seg.curvature;
                h = start.heading + kappa * u;
                p = start.p + Vec2((std::sin(h) - std::sin(start.heading)) / kappa,
                                   -(std::cos(h) - std::cos(start.heading)) / kappa);
            }
            pts.push_back(p);
            pose = {p, h};
        }
    }
    return pts;
}

Segment turn(Rng& rng, double sign) {
    const double radius = rng.uniform(22.0, 35.0);
    const double angle = rng.uniform(75.0, 105.0) * std::numbers::pi / 180.0;
    return {radius * angle, sign / radius};
}

}  // namespace

std::string_view route_name(RouteId id) { return kRouteNames[static_cast<std::size_t>(id)]; }

RouteId parse_route_id(std::string_view name) {
    for (std::size_t i = 0; i < kRouteNames.size(); ++i)
        if (kRouteNames[i] == name) return static_cast<RouteId>(i);
    throw FormatError("unknown route id '" + std::string(name) + "'");
}

std::string_view category_name(RouteCategory c) { return kCategoryNames[static_cast<std::size_t>(c)]; }

RouteCategory parse_category(std::string_view name) {
    for (std::size_t i = 0; i < kCategoryNames.size(); ++i)
        if (kCategoryNames[i] == name) return static_cast<RouteCategory>(i);
    throw FormatError("unknown route category '" + std::string(name) + "'");
}

RouteCategory category_of(RouteId id) {
    switch (id) {
        case RouteId::A:
            return RouteCategory::FullRoute;
        case RouteId::B1:
        case RouteId::B2:
        case RouteId::B3:
        case RouteId::B4:
            return RouteCategory::TrainingSection;
        case RouteId::C:
        case RouteId::F:
            return RouteCategory::MultiTurn;
        case RouteId::D:
        case RouteId::E:
        case RouteId::G:
        case RouteId::H:
            return RouteCategory::Straight;
        case RouteId::I:
        case RouteId::J:
        case RouteId::K:
        case RouteId::L:
            return RouteCategory::OneTurn;
    }
    return RouteCategory::FullRoute;
}

Route::Route(RouteId id, RouteCategory category, std::vector<Vec2> waypoints, double lane_half_width,
             double road_half_width)
    : id_(id),
      category_(category),
      waypoints_(std::move(waypoints)),
      lane_half_width_(lane_half_width),
      road_half_width_(road_half_width) {
    if (waypoints_.size() < 2) throw FormatError("route needs at least two waypoints");
    arc_.resize(waypoints_.size());
    arc_[0] = 0.0;
    box_min_ = box_max_ = waypoints_[0];
    for (std::size_t i = 1; i < waypoints_.size(); ++i) {
        const double d = (waypoints_[i] - waypoints_[i - 1]).norm();
        if (!(d > 0.0)) throw FormatError("route has repeated waypoints");
        arc_[i] = arc_[i - 1] + d;
        box_min_ = box_min_.cwiseMin(waypoints_[i]);
        box_max_ = box_max_.cwiseMax(waypoints_[i]);
    }
}

std::size_t Route::segment_for(double s) const {
    if (s <= 0.0) return 0;
    const auto it = std::upper_bound(arc_.begin(), arc_.end(), s);
    const auto idx = static_cast<std::size_t>(std::distance(arc_.begin(), it));
    return std::min(idx == 0 ? 0 : idx - 1, waypoints_.size() - 2);
}

Vec2 Route::point_at(double s) const {
    const std::size_t i = segment_for(s);
    const Vec2 d = waypoints_[i + 1] - waypoints_[i];
    return waypoints_[i] + d * ((s - arc_[i]) / (arc_[i + 1] - arc_[i]));
}

Vec2 Route::tangent_at(double s) const {
    const std::size_t i = segment_for(s);
    return (waypoints_[i + 1] - waypoints_[i]).normalized();
}

Projection Route::project(const Vec2& position, double heading) const {
    if (!position.allFinite() || !std::isfinite(heading)) throw NumericError("non-finite pose");
    const Vec2 lo = box_min_.array() - kOffWorldMargin;
    const Vec2 hi = box_max_.array() + kOffWorldMargin;
    if ((position.array() < lo.array()).any() || (position.array() > hi.array()).any())
        throw OffWorldError("position outside the route envelope");

    const std::size_t last = waypoints_.size() - 2;
    double best_d2 = std::numeric_limits<double>::infinity();
    double best_s = 0.0;
    std::size_t best_i = 0;
    Vec2 best_point = waypoints_[0];
    for (std::size_t i = 0; i <= last; ++i) {
        const Vec2 d = waypoints_[i + 1] - waypoints_[i];
        const double len2 = d.squaredNorm();
        const double t = std::clamp((position - waypoints_[i]).dot(d) / len2, 0.0, 1.0);
        const Vec2 q = waypoints_[i] + t * d;
        const double d2 = (position - q).squaredNorm();
        // Later segments win ties.
        if (d2 <= best_d2) {
            best_d2 = d2;
            best_i = i;
            best_point = q;
            best_s = arc_[i] + t * std::sqrt(len2);
        }
    }
    const Vec2 tangent = (waypoints_[best_i + 1] - waypoints_[best_i]).normalized();
    const double side = cross(tangent, position - best_point);
    const double dist = std::sqrt(best_d2);
    Projection out;
    out.arc_s = best_s;
    out.lane_offset = side >= 0.0 ? dist : -dist;
    out.angle_offset = wrap_angle(heading - std::atan2(tangent.y(), tangent.x()));
    out.goal_dist = (position - goal()).norm();
    return out;
}

const Route& RouteCatalog::get(RouteId id) const {
    for (const auto& r : routes)
        if (r.id() == id) return r;
    throw InputError("catalog has no route " + std::string(route_name(id)));
}

RouteCatalog build_route_catalog(std::uint64_t seed) {
    Rng rng(derive_seed(seed, 0x7261636b));
    RouteCatalog cat;
    cat.seed = seed;

    // Full route: five straights and four alternating 90-degree-class turns,
    // total length drawn from [760, 840] m.
    {
        std::vector<Segment> turns;
        double turn_total = 0.0;
        for (int k = 0; k < 4; ++k) {
            turns.push_back(turn(rng, k % 2 == 0 ? 1.0 : -1.0));
            turn_total += turns.back().length;
        }
        const double total = rng.uniform(760.0, 840.0);
        std::array<double, 5> weights{};
        double wsum = 0.0;
        for (auto& w : weights) {
            w = rng.uniform(0.7, 1.3);
            wsum += w;
        }
        std::vector<Segment> segs;
        for (int k = 0; k < 5; ++k) {
            segs.push_back({(total - turn_total) * weights[static_cast<std::size_t>(k)] / wsum, 0.0});
            if (k < 4) segs.push_back(turns[static_cast<std::size_t>(k)]);
        }
        Route a(RouteId::A, RouteCategory::FullRoute, integrate_segments(segs, {Vec2::Zero(), 0.0}));

        const auto& pts = a.waypoints();
        const auto& arc = a.cumulative_arc();
        std::array<std::size_t, 5> cuts{0, 0, 0, 0, pts.size() - 1};
        for (int q = 1; q < 4; ++q) {
            const double target = a.length() * q / 4.0;
            const auto it = std::lower_bound(arc.begin(), arc.end(), target);
            cuts[static_cast<std::size_t>(q)] = static_cast<std::size_t>(std::distance(arc.begin(), it));
        }
        cat.routes.push_back(a);
        for (std::size_t q = 0; q < 4; ++q) {
            std::vector<Vec2> part(pts.begin() + static_cast<std::ptrdiff_t>(cuts[q]),
                                   pts.begin() + static_cast<std::ptrdiff_t>(cuts[q + 1]) + 1);
            cat.routes.emplace_back(kTrainingRouteIds[q], RouteCategory::TrainingSection, std::move(part));
        }
    }

    auto random_pose = [&rng]() {
        return Pose{Vec2::Zero(), rng.uniform(-std::numbers::pi, std::numbers::pi)};
    };

    // C and F: three to five alternating turns.
    auto multi_turn = [&](RouteId id) {
        const int n_turns = 3 + static_cast<int>(rng.below(3));
        std::vector<Segment> segs{{rng.uniform(20.0, 35.0), 0.0}};
        const double first = rng.uniform() < 0.5 ? 1.0 : -1.0;
        for (int k = 0; k < n_turns; ++k) {
            segs.push_back(turn(rng, k % 2 == 0 ? first : -first));
            segs.push_back({k + 1 < n_turns ? rng.uniform(20.0, 40.0) : rng.uniform(20.0, 35.0), 0.0});
        }
        return Route(id, RouteCategory::MultiTurn, integrate_segments(segs, random_pose()));
    };
    auto straight = [&](RouteId id) {
        return Route(id, RouteCategory::Straight,
                     integrate_segments({{rng.uniform(80.0, 150.0), 0.0}}, random_pose()));
    };
    auto one_turn = [&](RouteId id, double sign) {
        std::vector<Segment> segs{{rng.uniform(25.0, 45.0), 0.0}, turn(rng, sign),
                                  {rng.uniform(25.0, 45.0), 0.0}};
        return Route(id, RouteCategory::OneTurn, integrate_segments(segs, random_pose()));
    };

    cat.routes.push_back(multi_turn(RouteId::C));
    cat.routes.push_back(straight(RouteId::D));
    cat.routes.push_back(straight(RouteId::E));
    cat.routes.push_back(multi_turn(RouteId::F));
    cat.routes.push_back(straight(RouteId::G));
    cat.routes.push_back(straight(RouteId::H));
    cat.routes.push_back(one_turn(RouteId::I, 1.0));
    cat.routes.push_back(one_turn(RouteId::J, -1.0));
    cat.routes.push_back(one_turn(RouteId::K, 1.0));
    cat.routes.push_back(one_turn(RouteId::L, -1.0));
    return cat;
}

std::string catalog_to_json(const RouteCatalog& catalog) {
    using nlohmann::ordered_json;
    ordered_json doc;
    doc["format"] = "lanekeep-tracks";
    doc["version"] = 1;
    doc["seed"] = catalog.seed;
    ordered_json routes = ordered_json::array();
    for (const auto& r : catalog.routes) {
        ordered_json jr;
        jr["id"] = route_name(r.id());
        jr["category"] = category_name(r.category());
        ordered_json wps = ordered_json::array();
        for (const auto& p : r.waypoints()) wps.push_back({p.x(), p.y()});
        jr["waypoints"] = std::move(wps);
        jr["goal"] = {r.goal().x(), r.goal().y()};
        jr["lane_half_width"] = r.lane_half_width();
        jr["road_half_width"] = r.road_half_width();
        routes.push_back(std::move(jr));
    }
    doc["routes"] = std::move(routes);
    return doc.dump(1) + "\n";
}

RouteCatalog catalog_from_json(const std::string& text) {
    RouteCatalog cat;
    try {
        const auto doc = nlohmann::json::parse(text);
        if (doc.value("format", "") != "lanekeep-tracks") throw FormatError("not a track catalog");
        cat.seed = doc.value("seed", std::uint64_t{0});
        for (const auto& jr : doc.at("routes")) {
            std::vector<Vec2> pts;
            for (const auto& p : jr.at("waypoints")) pts.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
            cat.routes.emplace_back(parse_route_id(jr.at("id").get<std::string>()),
                                    parse_category(jr.at("category").get<std::string>()), std::move(pts),
                                    jr.at("lane_half_width").get<double>(), jr.at("road_half_width").get<double>());
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("track catalog: ") + e.what());
    }
    return cat;
}

void save_catalog(const RouteCatalog& catalog, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << catalog_to_json(catalog);
    if (!out) throw IoError("write failed for " + path);
}

RouteCatalog load_catalog(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return catalog_from_json(ss.str());
}

void WorldConfig::validate() const {
    if (!(dt > 0 && wheelbase > 0 && max_wheel_angle > 0 && accel_gain > 0 && drag_coeff > 0))
        throw ConfigError("world parameters must all be positive");
}

double wrap_angle(double a) {
    a = std::remainder(a, 2.0 * std::numbers::pi);  // [-pi, pi]
    if (a <= -std::numbers::pi) a += 2.0 * std::numbers::pi;
    return a;
}

VehicleState step_vehicle(const VehicleState& state, double steer_cmd, double throttle_cmd,
                          const WorldConfig& cfg) {
    if (!std::isfinite(steer_cmd) || !std::isfinite(throttle_cmd) || !std::isfinite(state.speed) ||
        !std::isfinite(state.heading) || !state.position.allFinite())
        throw NumericError("non-finite vehicle input");
    VehicleState next = state;
    next.speed = std::max(0.0, state.speed + (cfg.accel_gain * throttle_cmd - cfg.drag_coeff * state.speed) * cfg.dt);
    const double v = next.speed / 3.6;
    next.heading = wrap_angle(state.heading +
                              v / cfg.wheelbase * std::tan(steer_cmd * cfg.max_wheel_angle) * cfg.dt);
    next.position = state.position + v * cfg.dt * Vec2(std::cos(next.heading), std::sin(next.heading));
    next.steer_cmd = steer_cmd;
    next.throttle_cmd = throttle_cmd;
    next.elapsed_steps = state.elapsed_steps + 1;
    return next;
}

}  // namespace lanekeep
