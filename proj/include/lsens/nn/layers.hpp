#pragma once

#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "lsens/nn/graph.hpp"
#include "lsens/rng.hpp"

namespace lsens::nn {

struct Param {
    std::string name;
    Tensor value;
    Tensor grad;
};

// Owns all learnable tensors of one model. Creation order is the
// serialization order, so builders must create params deterministically.
class ParamStore {
public:
    Param& create(const std::string& name, int n, int c, int h, int w);
    Param& at(const std::string& name);
    const std::vector<std::unique_ptr<Param>>& all() const { return params_; }
    void zero_grads();
    std::size_t value_count() const;

private:
    std::vector<std::unique_ptr<Param>> params_;
    std::unordered_map<std::string, int> index_;
};

// Largest divisor of `channels` not above 8; group count for GroupNorm.
int gn_groups(int channels);

// Stride-1 convolution with reflect-101 padding, so output size equals input
// size and a constant plane stays constant. Optional dilation for atrous
// blocks. Weights are He-initialized from the provided stream.
class Conv2d {
public:
    Conv2d(ParamStore& store, const std::string& name, int in_c, int out_c,
           int k, Rng& rng, int dilation = 1);

    int operator()(Graph& g, int x) const;

    int in_channels() const { return in_c_; }
    int out_channels() const { return out_c_; }

private:
    Param* w_;  // (out_c, in_c, k, k)
    Param* b_;  // (1, out_c, 1, 1)
    int in_c_, out_c_, k_, dil_;
};

// Per-sample group normalization with learned scale and shift. Chosen over
// batch statistics so results do not depend on batch composition.
class GroupNorm {
public:
    GroupNorm(ParamStore& store, const std::string& name, int channels,
              int groups);

    int operator()(Graph& g, int x) const;

private:
    Param* gamma_;
    Param* beta_;
    int channels_, groups_;
};

// conv -> group norm -> relu
class ConvBlock {
public:
    ConvBlock(ParamStore& store, const std::string& name, int in_c, int out_c,
              int k, Rng& rng, int dilation = 1);

    int operator()(Graph& g, int x) const;

private:
    Conv2d conv_;
    GroupNorm norm_;
};

class Adam {
public:
    Adam(ParamStore& store, double lr, double beta1 = 0.9,
         double beta2 = 0.999, double eps = 1e-8);

    void step();
    double lr() const { return lr_; }

private:
    struct Slot {
        std::vector<float> m, v;
    };
    ParamStore* store_;
    std::vector<Slot> slots_;
    double lr_, beta1_, beta2_, eps_;
    long t_ = 0;
};

}  // namespace lsens::nn
