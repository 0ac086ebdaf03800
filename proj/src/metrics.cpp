#include "lsens/metrics.hpp"

#include <limits>

#include "lsens/common.hpp"

namespace lsens {

ConfusionCounts confusion(const std::vector<std::uint8_t>& pred,
                          const std::vector<std::uint8_t>& label,
                          const std::vector<std::uint8_t>& valid) {
    require(pred.size() == label.size() && pred.size() == valid.size(),
            "confusion: mask sizes differ");
    ConfusionCounts c;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (!valid[i]) continue;
        bool p = pred[i] != 0;
        bool y = label[i] != 0;
        if (p && y)
            ++c.tp;
        else if (p && !y)
            ++c.fp;
        else if (!p && y)
            ++c.fn;
        else
            ++c.tn;
    }
    return c;
}

SkillScores scores(const ConfusionCounts& c) {
    SkillScores s;
    double tp = static_cast<double>(c.tp);
    double pred_pos = static_cast<double>(c.tp + c.fp);
    double real_pos = static_cast<double>(c.tp + c.fn);
    s.precision = pred_pos > 0 ? tp / pred_pos : 0.0;
    s.recall = real_pos > 0 ? tp / real_pos : 0.0;
    double f1_den = 2.0 * tp + static_cast<double>(c.fp + c.fn);
    s.f1 = f1_den > 0 ? 2.0 * tp / f1_den : 0.0;
    if (real_pos > 0)
        s.frequency_bias = pred_pos / real_pos;
    else
        s.frequency_bias =
            pred_pos > 0 ? std::numeric_limits<double>::infinity() : 0.0;
    return s;
}

double improvement(double f1_single, double f1_ens) {
    require(f1_ens > 0.0, "improvement needs a positive ensemble F1");
    return 100.0 * (f1_ens - f1_single) / f1_ens;
}

DiagramSpec diagram_data(
    const std::vector<std::pair<std::string, SkillScores>>& points) {
    DiagramSpec spec;
    spec.points.reserve(points.size());
    for (const auto& [name, s] : points) spec.points.push_back({name, s});

    // y = f*x/(2x - f) stays within the unit square for x in [f/(2-f), 1];
    // the curve enters at recall 1 and exits at precision 1.
    const int kSamples = 201;
    for (int i = 1; i <= 9; ++i) {
        DiagramCurve curve;
        curve.f1 = i / 10.0;
        double lo = curve.f1 / (2.0 - curve.f1);
        curve.samples.reserve(kSamples);
        for (int k = 0; k < kSamples; ++k) {
            double x = lo + (1.0 - lo) * k / (kSamples - 1);
            double y = curve.f1 * x / (2.0 * x - curve.f1);
            curve.samples.emplace_back(x, y);
        }
        spec.isolines.push_back(std::move(curve));
    }
    spec.bias_rays = {0.3, 0.5, 0.8, 1.0, 1.3, 2.0, 3.3};
    return spec;
}

}  // namespace lsens
