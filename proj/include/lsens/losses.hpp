#pragma once

#include <memory>
#include <string>
#include <vector>

#include "lsens/nn/tensor.hpp"

namespace lsens {

struct LossConfig {
    std::string name;          // one of loss_names()
    double smooth_eps = 1.0;   // Dice/Jaccard smoothing
    double focal_gamma = 2.0;
    double focal_alpha = 1.0;  // 1 = no class weighting
};

// Masked scalar loss over (n, 1, H, W) logits. Pixels with valid = 0 never
// contribute to values or gradients. BCE/Focal average over valid pixels,
// Dice/Jaccard use global sums over the whole batch, Lovász is computed per
// sample and averaged; a sample with no valid positive pixel contributes 0.
class Loss {
public:
    virtual ~Loss() = default;
    virtual const std::string& name() const = 0;

    // Returns the loss; when dlogits is non-null it is resized and filled
    // with the analytic d(loss)/d(logits).
    virtual double value_grad(const nn::Tensor& logits, const nn::Tensor& target,
                              const nn::Tensor& valid, nn::Tensor* dlogits) const = 0;

    double value(const nn::Tensor& logits, const nn::Tensor& target,
                 const nn::Tensor& valid) const {
        return value_grad(logits, target, valid, nullptr);
    }
};

// The five registered losses in registry order: BCELoss, DiceLoss,
// FocalLoss, JaccardLoss, LovaszLoss.
const std::vector<std::string>& loss_names();

std::unique_ptr<Loss> make_loss(const LossConfig& config);

}  // namespace lsens
