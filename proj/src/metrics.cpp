#include "lanekeep/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "lanekeep/errors.hpp"

namespace lanekeep {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

const CategorySummary& EvalReport::category(RouteCategory c) const {
    for (const auto& s : per_category)
        if (s.category == c) return s;
    throw IndexError("no category " + std::string(category_name(c)) + " in report");
}

void EvalReport::set_step_to_target(std::optional<long> steps) {
    for (auto& s : per_category) s.efficiency = efficiency(s.stats.success_rate, steps);
}

Aggregate aggregate(const std::vector<const EpisodeOutcome*>& episodes) {
    Aggregate a;
    a.episodes = static_cast<int>(episodes.size());
    if (episodes.empty()) return a;
    long successes = 0;
    for (const auto* e : episodes) {
        a.mean_reward += e->total_reward;
        a.mean_length += static_cast<double>(e->length);
        a.mean_lane_deviation += e->mean_lane_deviation;
        successes += e->success();
    }
    const double n = static_cast<double>(episodes.size());
    a.mean_reward /= n;
    a.mean_length /= n;
    a.mean_lane_deviation /= n;
    a.success_rate = 100.0 * static_cast<double>(successes) / n;
    return a;
}

void summarize(EvalReport& report) {
    report.per_route.clear();
    report.per_category.clear();
    for (RouteId id : kTestRouteIds) {
        std::vector<const EpisodeOutcome*> eps;
        for (const auto& e : report.episodes)
            if (e.route == id) eps.push_back(&e);
        report.per_route.push_back({id, category_of(id), aggregate(eps)});
    }
    for (RouteCategory c : kTestCategories) {
        std::vector<const EpisodeOutcome*> eps;
        for (const auto& e : report.episodes)
            if (e.category == c) eps.push_back(&e);
        report.per_category.push_back({c, aggregate(eps), std::nullopt});
    }
}

EvalReport evaluate(const nn::PolicyValueNet<float>& net, ActionLabel label, const RouteCatalog& catalog,
                    int episodes_per_route, const WorldConfig& world) {
    const ActionSpaceConfig config = build_config(label);
    if (net.action_count() != config.action_count())
        throw ConfigError("network has " + std::to_string(net.action_count()) + " actions but " +
                          std::string(label_name(label)) + " needs " + std::to_string(config.action_count()));
    if (episodes_per_route <= 0) throw ConfigError("episodes_per_route must be positive");

    struct Slot {
        LaneEnv env;
        EpisodeOutcome outcome;
        double deviation_sum = 0;
        bool done = false;
    };
    std::vector<Slot> slots;
    slots.reserve(kTestRouteIds.size() * static_cast<std::size_t>(episodes_per_route));
    for (RouteId id : kTestRouteIds) {
        const Route& route = catalog.get(id);
        for (int k = 0; k < episodes_per_route; ++k) {
            slots.push_back({LaneEnv({route}, config, world, EnvOptions{}, static_cast<std::uint64_t>(k)),
                             {id, route.category(), k, 0.0, 0, TerminationReason::None, 0.0}});
        }
    }

    // All episodes advance in lockstep so the forward pass is batched.
    std::vector<std::size_t> active(slots.size());
    for (std::size_t i = 0; i < slots.size(); ++i) active[i] = i;
    nn::Matrix<float> x;
    while (!active.empty()) {
        x.resize(static_cast<Eigen::Index>(active.size()), kFeatureDim);
        for (std::size_t r = 0; r < active.size(); ++r)
            x.row(static_cast<Eigen::Index>(r)) =
                slots[active[r]].env.observation().features().transpose().cast<float>();
        const auto out = net.forward(x);
        std::vector<std::size_t> still;
        for (std::size_t r = 0; r < active.size(); ++r) {
            Slot& s = slots[active[r]];
            const nn::MaskedCategorical<float> dist(out.logits.row(static_cast<Eigen::Index>(r)).transpose(),
                                                    s.env.mask());
            const StepResult res = s.env.step(dist.argmax());
            s.outcome.total_reward += res.reward.total;
            s.outcome.length += 1;
            s.deviation_sum += std::abs(s.env.state().lane_offset);
            if (res.done()) {
                s.outcome.reason = res.reason;
                s.outcome.mean_lane_deviation = s.deviation_sum / static_cast<double>(s.outcome.length);
            } else {
                still.push_back(active[r]);
            }
        }
        active.swap(still);
    }

    EvalReport report;
    report.label = std::string(label_name(label));
    report.episodes_per_route = episodes_per_route;
    for (const auto& s : slots) report.episodes.push_back(s.outcome);
    summarize(report);
    return report;
}

namespace {

ordered_json aggregate_json(const Aggregate& a) {
    ordered_json j;
    j["episodes"] = a.episodes;
    j["mean_reward"] = a.mean_reward;
    j["success_rate"] = a.success_rate;
    j["mean_episode_length"] = a.mean_length;
    j["mean_lane_deviation"] = a.mean_lane_deviation;
    return j;
}

TerminationReason parse_reason(const std::string& name) {
    for (auto r : {TerminationReason::None, TerminationReason::GoalReached, TerminationReason::Collision,
                   TerminationReason::TimeLimit, TerminationReason::PassedGoal, TerminationReason::ProlongedLowSpeed})
        if (termination_name(r) == name) return r;
    throw FormatError("unknown termination reason " + name);
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
        out << text;
        if (!out) throw IoError("write failed for " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move " + tmp.string() + " into place: " + ec.message());
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

}  // namespace

ordered_json eval_report_to_json(const EvalReport& report) {
    ordered_json j;
    j["format"] = "lanekeep-eval";
    j["version"] = 1;
    j["label"] = report.label;
    j["episodes_per_route"] = report.episodes_per_route;
    ordered_json eps = ordered_json::array();
    for (const auto& e : report.episodes) {
        ordered_json o;
        o["route"] = route_name(e.route);
        o["category"] = category_name(e.category);
        o["episode"] = e.episode;
        o["total_reward"] = e.total_reward;
        o["length"] = e.length;
        o["reason"] = termination_name(e.reason);
        o["success"] = e.success();
        o["mean_lane_deviation"] = e.mean_lane_deviation;
        eps.push_back(o);
    }
    j["episodes"] = eps;
    ordered_json routes = ordered_json::array();
    for (const auto& r : report.per_route) {
        ordered_json o;
        o["route"] = route_name(r.route);
        o["category"] = category_name(r.category);
        o.update(aggregate_json(r.stats));
        routes.push_back(o);
    }
    j["per_route"] = routes;
    ordered_json cats = ordered_json::array();
    for (const auto& c : report.per_category) {
        ordered_json o;
        o["category"] = category_name(c.category);
        o.update(aggregate_json(c.stats));
        o["efficiency"] = c.efficiency ? ordered_json(*c.efficiency) : ordered_json(nullptr);
        cats.push_back(o);
    }
    j["per_category"] = cats;
    return j;
}

EvalReport eval_report_from_json(const json& j) {
    try {
        if (j.at("format").get<std::string>() != "lanekeep-eval") throw FormatError("not an evaluation report");
        if (j.at("version").get<int>() != 1) throw FormatError("unsupported evaluation report version");
        EvalReport report;
        report.label = j.at("label").get<std::string>();
        report.episodes_per_route = j.at("episodes_per_route").get<int>();
        for (const auto& o : j.at("episodes")) {
            report.episodes.push_back({parse_route_id(o.at("route").get<std::string>()),
                                       parse_category(o.at("category").get<std::string>()),
                                       o.at("episode").get<int>(), o.at("total_reward").get<double>(),
                                       o.at("length").get<long>(), parse_reason(o.at("reason").get<std::string>()),
                                       o.at("mean_lane_deviation").get<double>()});
        }
        summarize(report);
        if (j.contains("per_category"))
            for (const auto& o : j.at("per_category")) {
                const RouteCategory c = parse_category(o.at("category").get<std::string>());
                for (auto& s : report.per_category)
                    if (s.category == c && o.contains("efficiency") && !o.at("efficiency").is_null())
                        s.efficiency = o.at("efficiency").get<double>();
            }
        return report;
    } catch (const json::exception& e) {
        throw FormatError(std::string("evaluation report: ") + e.what());
    }
}

void save_eval_report(const EvalReport& report, const std::string& path) {
    write_file(path, eval_report_to_json(report).dump(2) + "\n");
}

EvalReport load_eval_report(const std::string& path) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw FormatError(path + ": " + e.what());
    }
    return eval_report_from_json(j);
}

double convergence_rate(std::optional<long> step) {
    if (!step) return 0.0;
    if (*step <= 0) throw InputError("step-to-target must be positive");
    return 1.0 / static_cast<double>(*step);
}

double efficiency(double success_rate_pct, std::optional<long> step) {
    return success_rate_pct / 100.0 * convergence_rate(step) * 1e7;
}

std::vector<ConvergenceResult> step_to_target(const std::vector<LearningCurve>& curves, double p,
                                              std::optional<long> t_max) {
    if (curves.empty()) throw InputError("step_to_target needs at least one curve");
    long horizon = std::numeric_limits<long>::max();
    if (t_max) {
        horizon = *t_max;
    } else {
        for (const auto& c : curves) {
            if (c.points.empty()) throw InputError("curve " + c.label + " is empty");
            horizon = std::min(horizon, c.points.back().step);
        }
    }
    double r_max = -std::numeric_limits<double>::infinity();
    for (const auto& c : curves)
        for (const auto& pt : c.points)
            if (pt.step <= horizon && std::isfinite(pt.mean_reward)) r_max = std::max(r_max, pt.mean_reward);
    if (!std::isfinite(r_max)) throw InputError("no finite curve values at or before step " + std::to_string(horizon));
    const double r_tgt = p * r_max;

    std::vector<ConvergenceResult> out;
    for (const auto& c : curves) {
        ConvergenceResult r;
        r.label = c.label;
        r.r_max = r_max;
        r.r_target = r_tgt;
        r.p = p;
        r.t_max = horizon;
        for (const auto& pt : c.points) {
            if (pt.step > horizon) break;
            if (std::isfinite(pt.mean_reward) && pt.mean_reward >= r_tgt) {
                r.step = pt.step;
                break;
            }
        }
        r.rate = convergence_rate(r.step);
        out.push_back(r);
    }
    return out;
}

namespace {

struct RunInputs {
    std::string name;
    LearningCurve curve;
    EvalReport eval;
};

std::string pad(const std::string& s, std::size_t w, bool left = false) {
    if (s.size() >= w) return s;
    return left ? s + std::string(w - s.size(), ' ') : std::string(w - s.size(), ' ') + s;
}

std::string render_svg(const std::vector<RunInputs>& runs) {
    const double width = 800, height = 480, margin = 60;
    long x_max = 1;
    double y_min = std::numeric_limits<double>::infinity(), y_max = -std::numeric_limits<double>::infinity();
    for (const auto& r : runs)
        for (const auto& p : r.curve.points) {
            x_max = std::max(x_max, p.step);
            if (std::isfinite(p.mean_reward)) {
                y_min = std::min(y_min, p.mean_reward);
                y_max = std::max(y_max, p.mean_reward);
            }
        }
    if (!std::isfinite(y_min)) y_min = 0, y_max = 1;
    if (y_max - y_min < 1e-9) y_max = y_min + 1;
    auto sx = [&](long s) { return margin + (width - 2 * margin) * static_cast<double>(s) / static_cast<double>(x_max); };
    auto sy = [&](double v) { return height - margin - (height - 2 * margin) * (v - y_min) / (y_max - y_min); };

    static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                   "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<line x1=\"" << margin << "\" y1=\"" << height - margin << "\" x2=\"" << width - margin << "\" y2=\""
       << height - margin << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << margin << "\" y1=\"" << margin << "\" x2=\"" << margin << "\" y2=\"" << height - margin
       << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << width / 2 << "\" y=\"" << height - 15 << "\" text-anchor=\"middle\">steps (max " << x_max
       << ")</text>\n";
    os << "<text x=\"15\" y=\"" << margin - 20 << "\">mean episode reward [" << fmt("%.1f", y_min) << ", "
       << fmt("%.1f", y_max) << "]</text>\n";
    for (std::size_t i = 0; i < runs.size(); ++i) {
        const char* color = colors[i % std::size(colors)];
        os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        bool first = true;
        for (const auto& p : runs[i].curve.points) {
            if (!std::isfinite(p.mean_reward)) continue;
            os << (first ? "" : " ") << fmt("%.2f", sx(p.step)) << "," << fmt("%.2f", sy(p.mean_reward));
            first = false;
        }
        os << "\"/>\n";
        os << "<text x=\"" << width - margin + 5 << "\" y=\"" << margin + 16 * static_cast<double>(i)
           << "\" font-size=\"11\" fill=\"" << color << "\">" << runs[i].name << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

}  // namespace

ReportFiles render_report(const std::vector<std::string>& run_dirs) {
    if (run_dirs.empty()) throw InputError("report needs at least one run directory");
    std::vector<RunInputs> runs;
    std::vector<std::string> missing;
    for (const auto& dir : run_dirs) {
        const fs::path d(dir);
        for (const char* f : {"curve.csv", "eval_report.json"})
            if (!fs::exists(d / f)) missing.push_back((d / f).string());
    }
    if (!missing.empty()) {
        std::string msg = "missing report inputs:";
        for (const auto& m : missing) msg += " " + m;
        throw InputError(msg);
    }
    for (const auto& dir : run_dirs) {
        const fs::path d(dir);
        RunInputs r;
        r.name = d.filename().empty() ? d.parent_path().filename().string() : d.filename().string();
        r.eval = load_eval_report((d / "eval_report.json").string());
        r.curve = load_curve((d / "curve.csv").string(), r.name);
        runs.push_back(std::move(r));
    }

    std::vector<LearningCurve> curves;
    for (const auto& r : runs) curves.push_back(r.curve);
    const auto conv = step_to_target(curves);
    for (std::size_t i = 0; i < runs.size(); ++i) runs[i].eval.set_step_to_target(conv[i].step);

    std::ostringstream csv;
    csv << "run,label,category,reward,success_rate,efficiency,episode_length,lane_deviation,step_to_target,"
           "convergence_rate\n";
    for (std::size_t i = 0; i < runs.size(); ++i)
        for (const auto& c : runs[i].eval.per_category) {
            csv << runs[i].name << "," << runs[i].eval.label << "," << category_name(c.category) << ","
                << fmt("%.4f", c.stats.mean_reward) << "," << fmt("%.2f", c.stats.success_rate) << ","
                << fmt("%.4f", c.efficiency.value_or(0.0)) << "," << fmt("%.2f", c.stats.mean_length) << ","
                << fmt("%.4f", c.stats.mean_lane_deviation) << ","
                << (conv[i].step ? std::to_string(*conv[i].step) : std::string()) << ","
                << fmt("%.6e", conv[i].rate) << "\n";
        }

    std::size_t name_w = 3;
    for (const auto& r : runs) name_w = std::max(name_w, r.name.size());
    std::ostringstream txt;
    for (RouteCategory cat : kTestCategories) {
        txt << category_name(cat) << "\n";
        txt << pad("Run", name_w, true) << "  " << pad("Label", 9, true) << pad("Reward", 14) << pad("SR (%)", 9)
            << pad("Eff", 8) << pad("Ep.Len", 10) << pad("Lane Dev", 10) << "\n";
        for (const auto& r : runs) {
            const auto& c = r.eval.category(cat);
            txt << pad(r.name, name_w, true) << "  " << pad(r.eval.label, 9, true)
                << pad(fmt("%.2f", c.stats.mean_reward), 14) << pad(fmt("%.2f", c.stats.success_rate), 9)
                << pad(fmt("%.2f", c.efficiency.value_or(0.0)), 8) << pad(fmt("%.1f", c.stats.mean_length), 10)
                << pad(fmt("%.3f", c.stats.mean_lane_deviation), 10) << "\n";
        }
        txt << "\n";
    }
    txt << "Convergence (p = " << fmt("%.2f", conv.front().p) << ", R_max = " << fmt("%.2f", conv.front().r_max)
        << ", R_tgt = " << fmt("%.2f", conv.front().r_target) << ", T_max = " << conv.front().t_max << ")\n";
    txt << pad("Run", name_w, true) << "  " << pad("Label", 9, true) << pad("T_i", 12) << pad("Rate", 14) << "\n";
    for (std::size_t i = 0; i < runs.size(); ++i)
        txt << pad(runs[i].name, name_w, true) << "  " << pad(runs[i].eval.label, 9, true)
            << pad(conv[i].step ? std::to_string(*conv[i].step) : std::string("-"), 12)
            << pad(fmt("%.4e", conv[i].rate), 14) << "\n";

    return {csv.str(), txt.str(), render_svg(runs)};
}

void write_report(const std::vector<std::string>& run_dirs, const std::string& out_dir) {
    const ReportFiles files = render_report(run_dirs);
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir + ": " + ec.message());
    write_file(fs::path(out_dir) / "report.csv", files.csv);
    write_file(fs::path(out_dir) / "report.txt", files.text);
    write_file(fs::path(out_dir) / "curves.svg", files.svg);
}

}  // namespace lanekeep
