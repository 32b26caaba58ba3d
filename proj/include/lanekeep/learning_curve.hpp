#pragma once

#include <string>
#include <vector>

namespace lanekeep {

struct CurvePoint {
    long step;
    double mean_reward;  // NaN when no episode finished inside the window
};

/// Smoothed mean-episode-reward versus environment steps.
struct LearningCurve {
    std::string label;
    std::vector<CurvePoint> points;

    /// Strictly increasing steps.
    bool well_formed() const;
};

/// CSV with header "step,mean_reward"; rewards printed with 6 decimals.
std::string curve_to_csv(const LearningCurve& curve);
LearningCurve curve_from_csv(const std::string& text, std::string label = {});
void save_curve(const LearningCurve& curve, const std::string& path);
LearningCurve load_curve(const std::string& path, std::string label = {});

}  // namespace lanekeep
