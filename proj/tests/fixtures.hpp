#pragma once
// Step-to-target values, rates and success/efficiency tables used as
// arithmetic fixtures.

#include <array>

namespace fixtures {

struct StepRate {
    const char* label;
    long step;
    double rate;
};

inline constexpr std::array<StepRate, 5> kStepRates = {{
    {"Rel-0.5", 1'024'000, 9.7656e-7},
    {"Fix-21012", 1'409'024, 7.0971e-7},
    {"Rel-1.0", 1'662'976, 6.0133e-7},
    {"F-0.5", 1'884'160, 5.3074e-7},
    {"Dyn-0.5", 2'752'512, 3.6330e-7},
}};

struct EffRow {
    const char* label;
    long step;
    std::array<double, 4> sr;   // MultiTurn, OneTurn, Straight, FullRoute
    std::array<double, 4> eff;
};

inline constexpr std::array<EffRow, 5> kEfficiency = {{
    {"Fix-21012", 1'409'024, {50, 50, 75, 100}, {3.55, 3.55, 5.32, 7.10}},
    {"F-0.5", 1'884'160, {50, 75, 50, 100}, {2.65, 3.98, 2.65, 5.30}},
    {"Dyn-0.5", 2'752'512, {50, 25, 100, 100}, {1.81, 0.91, 3.63, 3.63}},
    {"Rel-0.5", 1'024'000, {50, 70, 100, 80}, {4.88, 6.84, 9.77, 7.81}},
    {"Rel-1.0", 1'662'976, {0, 50, 40, 40}, {0.00, 3.01, 2.41, 2.41}},
}};

}  // namespace fixtures
