#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lanekeep/action_space.hpp"
#include "lanekeep/env.hpp"
#include "lanekeep/learning_curve.hpp"
#include "lanekeep/nn.hpp"
#include "lanekeep/simworld.hpp"

namespace lanekeep {

/// Test categories in table order.
inline constexpr std::array<RouteCategory, 4> kTestCategories = {
    RouteCategory::MultiTurn, RouteCategory::OneTurn, RouteCategory::Straight, RouteCategory::FullRoute};

struct EpisodeOutcome {
    RouteId route;
    RouteCategory category;
    int episode;
    double total_reward;
    long length;
    TerminationReason reason;
    double mean_lane_deviation;  // m, mean |lane offset| over the episode's steps

    bool success() const { return reason == TerminationReason::GoalReached; }
};

struct Aggregate {
    int episodes = 0;
    double mean_reward = 0;
    double success_rate = 0;  // percent
    double mean_length = 0;
    double mean_lane_deviation = 0;
};

struct RouteSummary {
    RouteId route;
    RouteCategory category;
    Aggregate stats;
};

struct CategorySummary {
    RouteCategory category;
    Aggregate stats;
    std::optional<double> efficiency;  // set once a step-to-target is known
};

struct EvalReport {
    std::string label;
    int episodes_per_route = 5;
    std::vector<EpisodeOutcome> episodes;
    std::vector<RouteSummary> per_route;
    std::vector<CategorySummary> per_category;

    const CategorySummary& category(RouteCategory c) const;
    /// Fills per-category efficiency from a step-to-target (absent: zero).
    void set_step_to_target(std::optional<long> steps);
};

Aggregate aggregate(const std::vector<const EpisodeOutcome*>& episodes);
/// Rebuilds per-route and per-category summaries from the episode list.
void summarize(EvalReport& report);

/// Greedy (argmax over valid actions) episodes on every test route. Throws
/// ConfigError when the network's head does not fit the label.
EvalReport evaluate(const nn::PolicyValueNet<float>& net, ActionLabel label, const RouteCatalog& catalog,
                    int episodes_per_route = 5, const WorldConfig& world = {});

nlohmann::ordered_json eval_report_to_json(const EvalReport& report);
EvalReport eval_report_from_json(const nlohmann::json& j);
void save_eval_report(const EvalReport& report, const std::string& path);
EvalReport load_eval_report(const std::string& path);

struct ConvergenceResult {
    std::string label;
    std::optional<long> step;  // T_i
    double rate = 0;           // 1 / T_i, zero when the target is never reached
    double r_target = 0;
    double r_max = 0;
    double p = 0.6;
    long t_max = 0;
};

double convergence_rate(std::optional<long> step);
/// Success fraction over steps, in units of 1e-7 per step.
double efficiency(double success_rate_pct, std::optional<long> step);

/// R_max is the best smoothed reward over all curves at steps <= t_max;
/// each method's T_i is its first step reaching p * R_max. Without t_max
/// the shortest curve's last step is used.
std::vector<ConvergenceResult> step_to_target(const std::vector<LearningCurve>& curves, double p = 0.6,
                                              std::optional<long> t_max = std::nullopt);

struct ReportFiles {
    std::string csv;
    std::string text;
    std::string svg;
};

/// One row per run directory (each holding curve.csv and eval_report.json).
/// Throws InputError listing every missing input.
ReportFiles render_report(const std::vector<std::string>& run_dirs);
void write_report(const std::vector<std::string>& run_dirs, const std::string& out_dir);

}  // namespace lanekeep
