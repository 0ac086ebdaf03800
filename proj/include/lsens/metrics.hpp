#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace lsens {

struct ConfusionCounts {
    std::int64_t tp = 0;
    std::int64_t fp = 0;
    std::int64_t fn = 0;
    std::int64_t tn = 0;

    ConfusionCounts& operator+=(const ConfusionCounts& o) {
        tp += o.tp;
        fp += o.fp;
        fn += o.fn;
        tn += o.tn;
        return *this;
    }
};

struct SkillScores {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double frequency_bias = 0.0;
};

// Counts over valid pixels only; nonzero mask values read as 1.
ConfusionCounts confusion(const std::vector<std::uint8_t>& pred,
                          const std::vector<std::uint8_t>& label,
                          const std::vector<std::uint8_t>& valid);

// precision tp/(tp+fp), recall tp/(tp+fn), f1 2tp/(2tp+fp+fn), frequency
// bias (tp+fp)/(tp+fn). Degenerate 0/0 denominators yield 0; a positive
// numerator over a zero denominator yields infinity for the bias.
SkillScores scores(const ConfusionCounts& c);

// Percent gain of the ensemble relative to the ensemble's own score:
// 100 * (f1_ens - f1_single) / f1_ens. Errors when f1_ens <= 0.
double improvement(double f1_single, double f1_ens);

// Performance-diagram geometry: precision on x, recall on y, F1 isolines
// y = f*x/(2x - f), and frequency-bias rays y = b*x.
struct DiagramPoint {
    std::string name;
    SkillScores s;
};

struct DiagramCurve {
    double f1 = 0.0;
    std::vector<std::pair<double, double>> samples;  // (precision, recall)
};

struct DiagramSpec {
    std::vector<DiagramPoint> points;
    std::vector<DiagramCurve> isolines;  // f in {0.1, ..., 0.9}
    std::vector<double> bias_rays;       // b in {0.3, 0.5, 0.8, 1, 1.3, 2, 3.3}
};

DiagramSpec diagram_data(
    const std::vector<std::pair<std::string, SkillScores>>& points);

}  // namespace lsens
