#include "lanekeep/learning_curve.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "lanekeep/errors.hpp"

namespace lanekeep {

bool LearningCurve::well_formed() const {
    for (std::size_t i = 1; i < points.size(); ++i)
        if (points[i].step <= points[i - 1].step) return false;
    return true;
}

std::string curve_to_csv(const LearningCurve& curve) {
    std::string out = "step,mean_reward\n";
    char buf[64];
    for (const auto& p : curve.points) {
        if (std::isfinite(p.mean_reward))
            std::snprintf(buf, sizeof buf, "%ld,%.6f\n", p.step, p.mean_reward);
        else
            std::snprintf(buf, sizeof buf, "%ld,nan\n", p.step);
        out += buf;
    }
    return out;
}

LearningCurve curve_from_csv(const std::string& text, std::string label) {
    LearningCurve curve;
    curve.label = std::move(label);
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != "step,mean_reward") throw FormatError("curve CSV header must be step,mean_reward");
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw FormatError("curve CSV line " + std::to_string(lineno) + " has no comma");
        CurvePoint p{};
        try {
            std::size_t used = 0;
            p.step = std::stol(line.substr(0, comma), &used);
            if (used != comma) throw std::invalid_argument("step");
            const std::string r = line.substr(comma + 1);
            if (r == "nan") {
                p.mean_reward = std::numeric_limits<double>::quiet_NaN();
            } else {
                p.mean_reward = std::stod(r, &used);
                if (used != r.size()) throw std::invalid_argument("reward");
            }
        } catch (const std::logic_error&) {
            throw FormatError("curve CSV line " + std::to_string(lineno) + " is malformed: " + line);
        }
        curve.points.push_back(p);
    }
    if (!curve.well_formed()) throw FormatError("curve CSV steps are not strictly increasing");
    return curve;
}

void save_curve(const LearningCurve& curve, const std::string& path) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + tmp + " for writing");
        out << curve_to_csv(curve);
        if (!out) throw IoError("write failed for " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) throw IoError("cannot move " + tmp + " to " + path);
}

LearningCurve load_curve(const std::string& path, std::string label) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return curve_from_csv(ss.str(), std::move(label));
}

}  // namespace lanekeep
