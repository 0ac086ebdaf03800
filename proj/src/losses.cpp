#include "lsens/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lsens/common.hpp"

namespace lsens {

using nn::Tensor;

namespace {

double sigmoid(double z) { return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

// log(sigmoid(z)) without overflow on either tail.
double log_sigmoid(double z) {
    return z >= 0.0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z));
}

void check_shapes(const Tensor& logits, const Tensor& target, const Tensor& valid) {
    require(logits.c == 1, "loss expects single-channel logits");
    require(logits.same_shape(target) && logits.same_shape(valid),
            "loss inputs must share one shape");
}

std::size_t count_valid(const Tensor& valid) {
    std::size_t n = 0;
    for (float v : valid.v) n += v != 0.0f;
    return n;
}

class LossBase : public Loss {
public:
    explicit LossBase(std::string name) : name_(std::move(name)) {}
    const std::string& name() const override { return name_; }

private:
    std::string name_;
};

class BceLoss : public LossBase {
public:
    explicit BceLoss(const LossConfig&) : LossBase("BCELoss") {}

    double value_grad(const Tensor& logits, const Tensor& target, const Tensor& valid,
                      Tensor* dlogits) const override {
        check_shapes(logits, target, valid);
        const std::size_t nvalid = count_valid(valid);
        require(nvalid > 0, "loss over zero valid pixels");
        if (dlogits) *dlogits = Tensor::zeros_like(logits);
        double sum = 0.0;
        for (std::size_t i = 0; i < logits.size(); ++i) {
            if (valid.v[i] == 0.0f) continue;
            const double z = logits.v[i], y = target.v[i];
            sum += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
            if (dlogits) dlogits->v[i] = float((sigmoid(z) - y) / double(nvalid));
        }
        return sum / double(nvalid);
    }
};

class FocalLoss : public LossBase {
public:
    explicit FocalLoss(const LossConfig& c)
        : LossBase("FocalLoss"), gamma_(c.focal_gamma), alpha_(c.focal_alpha) {}

    double value_grad(const Tensor& logits, const Tensor& target, const Tensor& valid,
                      Tensor* dlogits) const override {
        check_shapes(logits, target, valid);
        const std::size_t nvalid = count_valid(valid);
        require(nvalid > 0, "loss over zero valid pixels");
        if (dlogits) *dlogits = Tensor::zeros_like(logits);
        double sum = 0.0;
        for (std::size_t i = 0; i < logits.size(); ++i) {
            if (valid.v[i] == 0.0f) continue;
            const double z = logits.v[i];
            const double s = target.v[i] != 0.0f ? 1.0 : -1.0;
            const double pt = sigmoid(s * z);
            const double log_pt = log_sigmoid(s * z);
            const double w = std::pow(1.0 - pt, gamma_);
            sum += -alpha_ * w * log_pt;
            if (dlogits)
                dlogits->v[i] =
                    float(alpha_ * s * w * (gamma_ * pt * log_pt - (1.0 - pt)) / double(nvalid));
        }
        return sum / double(nvalid);
    }

private:
    double gamma_, alpha_;
};

// Shared overlap machinery: loss = 1 - num/den with
//   Dice:    num = 2*I + eps, den = P + Y + eps
//   Jaccard: num = I + eps,   den = P + Y - I + eps
class OverlapLoss : public LossBase {
public:
    OverlapLoss(std::string name, double eps, bool dice)
        : LossBase(std::move(name)), eps_(eps), dice_(dice) {}

    double value_grad(const Tensor& logits, const Tensor& target, const Tensor& valid,
                      Tensor* dlogits) const override {
        check_shapes(logits, target, valid);
        require(count_valid(valid) > 0, "loss over zero valid pixels");
        double inter = 0.0, psum = 0.0, ysum = 0.0;
        for (std::size_t i = 0; i < logits.size(); ++i) {
            if (valid.v[i] == 0.0f) continue;
            const double p = sigmoid(logits.v[i]);
            const double y = target.v[i];
            inter += p * y;
            psum += p;
            ysum += y;
        }
        double num, den;
        if (dice_) {
            num = 2.0 * inter + eps_;
            den = psum + ysum + eps_;
        } else {
            num = inter + eps_;
            den = psum + ysum - inter + eps_;
        }
        if (dlogits) {
            *dlogits = Tensor::zeros_like(logits);
            for (std::size_t i = 0; i < logits.size(); ++i) {
                if (valid.v[i] == 0.0f) continue;
                const double p = sigmoid(logits.v[i]);
                const double y = target.v[i];
                // d(1 - num/den)/dp, then the logistic chain rule
                const double dnum = dice_ ? 2.0 * y : y;
                const double dden = dice_ ? 1.0 : 1.0 - y;
                const double dp = -(dnum * den - num * dden) / (den * den);
                dlogits->v[i] = float(dp * p * (1.0 - p));
            }
        }
        return 1.0 - num / den;
    }

private:
    double eps_;
    bool dice_;
};

class LovaszLoss : public LossBase {
public:
    explicit LovaszLoss(const LossConfig&) : LossBase("LovaszLoss") {}

    double value_grad(const Tensor& logits, const Tensor& target, const Tensor& valid,
                      Tensor* dlogits) const override {
        check_shapes(logits, target, valid);
        require(count_valid(valid) > 0, "loss over zero valid pixels");
        if (dlogits) *dlogits = Tensor::zeros_like(logits);
        double total = 0.0;
        const std::size_t plane = std::size_t(logits.h) * std::size_t(logits.w);
        for (int n = 0; n < logits.n; ++n) {
            const float* z = logits.plane(n, 0);
            const float* y = target.plane(n, 0);
            const float* m = valid.plane(n, 0);
            float* dz = dlogits ? dlogits->plane(n, 0) : nullptr;
            total += sample_loss(z, y, m, plane, dz, logits.n);
        }
        return total / double(logits.n);
    }

private:
    // Lovász hinge on one sample's valid pixels; 0 when no positives.
    static double sample_loss(const float* z, const float* y, const float* m, std::size_t plane,
                              float* dz, int batch) {
        struct Item {
            double err;
            double sign;
            float gt;
            std::size_t pixel;
        };
        std::vector<Item> items;
        items.reserve(plane);
        std::size_t positives = 0;
        for (std::size_t p = 0; p < plane; ++p) {
            if (m[p] == 0.0f) continue;
            const double s = y[p] != 0.0f ? 1.0 : -1.0;
            items.push_back({std::max(0.0, 1.0 - double(z[p]) * s), s, y[p], p});
            positives += y[p] != 0.0f;
        }
        if (positives == 0 || items.empty()) return 0.0;
        std::stable_sort(items.begin(), items.end(),
                         [](const Item& a, const Item& b) { return a.err > b.err; });
        double inter = double(positives), uni = double(positives);
        double prev_j = 0.0, loss = 0.0;
        for (const Item& it : items) {
            inter -= it.gt != 0.0f ? 1.0 : 0.0;
            uni += it.gt != 0.0f ? 0.0 : 1.0;
            const double j = 1.0 - inter / uni;
            const double g = j - prev_j;
            prev_j = j;
            loss += it.err * g;
            // subgradient: the sort weights are locally constant, the hinge
            // gates at err > 0
            if (dz && it.err > 0.0) dz[it.pixel] += float(-it.sign * g / double(batch));
        }
        return loss;
    }
};

}  // namespace

const std::vector<std::string>& loss_names() {
    static const std::vector<std::string> names = {"BCELoss", "DiceLoss", "FocalLoss",
                                                   "JaccardLoss", "LovaszLoss"};
    return names;
}

std::unique_ptr<Loss> make_loss(const LossConfig& config) {
    require(config.smooth_eps > 0.0, "smooth_eps must be positive");
    require(config.focal_gamma >= 0.0, "focal_gamma must be non-negative");
    if (config.name == "BCELoss") return std::make_unique<BceLoss>(config);
    if (config.name == "DiceLoss")
        return std::make_unique<OverlapLoss>("DiceLoss", config.smooth_eps, true);
    if (config.name == "FocalLoss") return std::make_unique<FocalLoss>(config);
    if (config.name == "JaccardLoss")
        return std::make_unique<OverlapLoss>("JaccardLoss", config.smooth_eps, false);
    if (config.name == "LovaszLoss") return std::make_unique<LovaszLoss>(config);
    std::string all;
    for (const std::string& n : loss_names()) all += (all.empty() ? "" : ", ") + n;
    fail("unknown loss \"" + config.name + "\" (expected one of " + all + ")");
}

}  // namespace lsens
