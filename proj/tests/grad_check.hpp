#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

namespace gradcheck {

inline double relative_error(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

/// Worst relative error between the analytic directional derivative
/// grad . d and a central difference of f along d, over random unit
/// directions d restricted to [begin, begin + len).
inline double directional(const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& x,
                          const Eigen::VectorXd& grad, Eigen::Index begin, Eigen::Index len, int directions,
                          std::mt19937_64& gen, double h = 1e-6) {
    std::normal_distribution<double> n(0.0, 1.0);
    double worst = 0.0;
    for (int k = 0; k < directions; ++k) {
        Eigen::VectorXd d = Eigen::VectorXd::Zero(x.size());
        for (Eigen::Index i = 0; i < len; ++i) d(begin + i) = n(gen);
        d /= d.norm();
        const double fd = (f(x + h * d) - f(x - h * d)) / (2.0 * h);
        worst = std::max(worst, relative_error(fd, grad.dot(d)));
    }
    return worst;
}

}  // namespace gradcheck
