#pragma once

#include <functional>
#include <vector>

#include "lsens/nn/tensor.hpp"

namespace lsens::nn {

// Reverse-mode tape. One Graph records one forward pass; ops append nodes,
// backward() walks them in reverse creation order (a valid topological order
// because ops only consume earlier nodes). Construct with grad_enabled=false
// for inference to skip closure bookkeeping.
class Graph {
public:
    explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

    int leaf(Tensor value);

    const Tensor& val(int id) const { return nodes_[id].val; }
    Tensor& val(int id) { return nodes_[id].val; }

    // Gradient of a node; allocated on first touch.
    Tensor& grad(int id);
    bool has_grad(int id) const { return nodes_[id].has_grad; }
    bool grad_enabled() const { return grad_enabled_; }

    // Seeds d(root) and propagates to every earlier node.
    void backward(int root, const Tensor& seed);

    // --- differentiable ops -------------------------------------------------
    int relu(int x);
    int sigmoid(int x);
    int add(int a, int b);               // same shape
    int mul(int a, int b);               // elementwise, same shape
    int mul_channel(int x, int gate);    // gate is (n, c, 1, 1)
    int concat(const std::vector<int>& xs);  // along channels
    int maxpool2(int x);                 // 2x2 stride 2; h, w must be even
    int upsample_nearest(int x, int factor);
    int resize_nearest(int x, int th, int tw);
    int avgpool_to(int x, int th, int tw);   // adaptive average pool
    int global_avgpool(int x) { return avgpool_to(x, 1, 1); }
    // Scaled dot-product attention over spatial positions. q,k share channel
    // count; output has v's channels at q's spatial size.
    int attention(int q, int k, int v);

    // Used by layers to append custom nodes (conv, norm): emit the value,
    // then attach the backward closure under the returned id.
    int emit(Tensor value) { return leaf(std::move(value)); }
    void set_back(int id, std::function<void(Graph&)> back) {
        if (grad_enabled_) nodes_[id].back = std::move(back);
    }

private:
    struct Node {
        Tensor val;
        Tensor grad;
        bool has_grad = false;
        std::function<void(Graph&)> back;
    };

    int resize_nearest_impl_(int x, int th, int tw);

    std::vector<Node> nodes_;
    bool grad_enabled_ = true;
};

}  // namespace lsens::nn
