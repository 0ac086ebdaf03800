#include "lsens/nn/graph.hpp"

#include <Eigen/Core>

#include <cmath>
#include <memory>

namespace lsens::nn {

namespace {
using MatMap = Eigen::Map<Eigen::MatrixXf>;
using CMatMap = Eigen::Map<const Eigen::MatrixXf>;
}  // namespace

int Graph::leaf(Tensor value) {
    Node n;
    n.val = std::move(value);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

Tensor& Graph::grad(int id) {
    Node& n = nodes_[id];
    if (!n.has_grad) {
        n.grad = Tensor(n.val.n, n.val.c, n.val.h, n.val.w);
        n.has_grad = true;
    }
    return n.grad;
}

void Graph::backward(int root, const Tensor& seed) {
    require(grad_enabled_, "backward() on an inference graph");
    require(seed.same_shape(nodes_[root].val), "backward seed shape mismatch");
    grad(root) = seed;
    for (int id = root; id >= 0; --id) {
        Node& n = nodes_[id];
        if (n.has_grad && n.back) n.back(*this);
    }
}

int Graph::relu(int x) {
    const Tensor& in = val(x);
    Tensor out = in;
    for (float& f : out.v)
        if (f < 0.0f) f = 0.0f;
    int id = leaf(std::move(out));
    if (!grad_enabled_) return id;
    nodes_[id].back = [x, id](Graph& g) {
        const Tensor& dy = g.grad(id);
        const Tensor& xin = g.val(x);
        Tensor& dx = g.grad(x);
        for (std::size_t i = 0; i < dy.size(); ++i)
            if (xin.v[i] > 0.0f) dx.v[i] += dy.v[i];
    };
    return id;
}

int Graph::sigmoid(int x) {
    const Tensor& in = val(x);
    Tensor out = in;
    for (float& f : out.v) f = 1.0f / (1.0f + std::exp(-f));
    int id = leaf(std::move(out));
    if (!grad_enabled_) return id;
    nodes_[id].back = [x, id](Graph& g) {
        const Tensor& dy = g.grad(id);
        const Tensor& y = g.val(id);
        Tensor& dx = g.grad(x);
        for (std::size_t i = 0; i < dy.size(); ++i)
            dx.v[i] += dy.v[i] * y.v[i] * (1.0f - y.v[i]);
    };
    return id;
}

int Graph::add(int a, int b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    require(ta.same_shape(tb), "add: shape mismatch");
    Tensor out = ta;
    for (std::size_t i = 0; i < out.size(); ++i) out.v[i] += tb.v[i];
    int id = leaf(std::move(out));
    if (!grad_enabled_) return id;
    nodes_[id].back = [a, b, id](Graph& g) {
        const Tensor& dy = g.grad(id);
        Tensor& da = g.grad(a);
        Tensor& db = g.grad(b);
        for (std::size_t i = 0; i < dy.size(); ++i) {
            da.v[i] += dy.v[i];
            db.v[i] += dy.v[i];
        }
    };
    return id;
}

int Graph::mul(int a, int b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    require(ta.same_shape(tb), "mul: shape mismatch");
    Tensor out = ta;
    for (std::size_t i = 0; i < out.size(); ++i) out.v[i] *= tb.v[i];
    int id = leaf(std::move(out));
    if (!grad_enabled_) return id;
    nodes_[id].back = [a, b, id](Graph& g) {
        const Tensor& dy = g.grad(id);
        const Tensor& ta2 = g.val(a);
        const Tensor& tb2 = g.val(b);
        Tensor& da = g.grad(a);
        Tensor& db = g.grad(b);
        for (std::size_t i = 0; i < dy.size(); ++i) {
            da.v[i] += dy.v[i] * tb2.v[i];
            db.v[i] += dy.v[i] * ta2.v[i];
        }
    };
    return id;
}

int Graph::mul_channel(int x, int gate) {
    const Tensor& in = val(x);
    const Tensor& gt = val(gate);
    require(gt.n == in.n && gt.c == in.c && gt.h == 1 && gt.w == 1,
            "mul_channel: gate must be (n,c,1,1)");
    Tensor out = in;
    const int ps = in.plane_size();
    for (int i = 0; i < in.n; ++i)
        for (int ch = 0; ch < in.c; ++ch) {
            const float s = gt.at(i, ch, 0, 0);
            float* p = out.plane(i, ch);
            for (int k = 0; k < ps; ++k) p[k] *= s;
        }
    int id = leaf(std::move(out));
    if (!grad_enabled_) return id;
    nodes_[id].back = [x, gate, id](Graph& g) {
        const Tensor& dy = g.grad(id);
        const Tensor& in2 = g.val(x);
        const Tensor& gt2 = g.val(gate);
        Tensor& dx = g.grad(x);
        Tensor& dg = g.grad(gate);
        const int ps = in2.plane_size();
        for (int i = 0; i < in2.n; ++i)
            for (int ch = 0; ch < in2.c; ++ch) {
                const float s = gt2.at(i, ch, 0, 0);
                const float* dyp = dy.plane(i, ch);
                const float* xp = in2.plane(i, ch);
                float* dxp = dx.plane(i, ch);
                double acc = 0.0;
                for (int k = 0; k < ps; ++k) {
                    dxp[k] += dyp[k] * s;
                    acc += static_cast<double>(dyp[k]) * xp[k];
                }
                dg.at(i, ch, 0, 0) += static_cast<float>(acc);
            }
    };
    return id;
}

int Graph::concat(const std::vector<int>& xs) {
    require(!xs.empty(), "concat: empty input list");
    const Tensor& first = val(xs[0]);
    int total_c = 0;
    for (int x : xs) {
        const Tensor& t = val(x);
        require(t.n == first.n && t.h == first.h && t.w == first.w,
                "concat: spatial/batch mismatch");
        total_c += t.c;
    }
    Tensor out(first.n, total_c, first.h, first.w);
    const int ps = first.plane_size();
    for (int i = 0; i < first.n; ++i) {
        int co = 0;
        for (int x : xs) {
            const Tensor& t = val(x);
            std::copy(t.plane(i, 0), t.plane(i, 0) + static_cast<std::size_t>(t.c) * ps,
                      out.plane(i, co));
            co += t.c;
        }
    }
    int id = leaf(std::move(out));
    if (!grad_enabled_) return id;
    std::vector<int> parts(xs);
    nodes_[id].back = [parts, id](Graph& g) {
        const Tensor& dy = g.grad(id);
        const int ps = dy.plane_size();
        for (int i = 0; i < dy.n; ++i) {
            int co = 0;
            for (int x : parts) {
                Tensor& dx = g.grad(x);
                const float* src = dy.plane(i, co);
                float* dst = dx.plane(i, 0);
                for (std::size_t k = 0; k < static_cast<std::size_t>(dx.c) * ps; ++k)
                    dst[k] += src[k];
                co += dx.c;
            }
        }
    };
    return id;
}

int Graph::maxpool2(int x) {
    const Tensor& in = val(x);
    require(in.h % 2 == 0 && in.w % 2 == 0, "maxpool2: h and w must be even");
    const int oh = in.h / 2, ow = in.w / 2;
    Tensor out(in.n, in.c, oh, ow);
    auto arg = std::make_shared<std::vector<int>>(out.size());
    std::size_t o = 0;
    for (int i = 0; i < in.n; ++i)
        for (int ch = 0; ch < in.c; ++ch) {
            const float* p = in.plane(i, ch);
            for (int y = 0; y < oh; ++y)
                for (int xo = 0; xo < ow; ++xo) {
                    int base = 2 * y * in.w + 2 * xo;
                    int best = base;
                    float bv = p[base];
                    const int cand[3] = {base + 1, base + in.w, base + in.w + 1};
                    for (int c2 : cand)
                        if (p[c2] > bv) {
                            bv = p[c2];
                            best = c2;
                        }
                    out.v[o] = bv;
                    (*arg)[o] = best;
                    ++o;
                }
        }
    int id = leaf(std::move(out));
    if (!grad_enabled_) return id;
    nodes_[id].back = [x, id, arg](Graph& g) {
        const Tensor& dy = g.grad(id);
        Tensor& dx = g.grad(x);
        const int ps_out = dy.plane_size();
        std::size_t o = 0;
        for (int i = 0; i < dy.n; ++i)
            for (int ch = 0; ch < dy.c; ++ch) {
                float* dxp = dx.plane(i, ch);
                const std::size_t lo = (static_cast<std::size_t>(i) * dy.c + ch) * ps_out;
                for (int k = 0; k < ps_out; ++k, ++o)
                    dxp[(*arg)[lo + k]] += dy.v[o];
            }
    };
    return id;
}

int Graph::upsample_nearest(int x, int factor) {
    const Tensor& in = val(x);
    return resize_nearest_impl_(x, in.h * factor, in.w * factor);
}

int Graph::resize_nearest(int x, int th, int tw) {
    return resize_nearest_impl_(x, th, tw);
}

int Graph::resize_nearest_impl_(int x, int th, int tw) {
    const Tensor& in = val(x);
    Tensor out(in.n, in.c, th, tw);
    for (int i = 0; i < in.n; ++i)
        for (int ch = 0; ch < in.c; ++ch) {
            const float* src = in.plane(i, ch);
            float* dst = out.plane(i, ch);
            for (int y = 0; y < th; ++y) {
                const int sy = static_cast<int>(static_cast<std::int64_t>(y) * in.h / th);
                for (int xo = 0; xo < tw; ++xo) {
                    const int sx = static_cast<int>(static_cast<std::int64_t>(xo) * in.w / tw);
                    dst[y * tw + xo] = src[sy * in.w + sx];
                }
            }
        }
    int id = leaf(std::move(out));
    if (!grad_enabled_) return id;
    nodes_[id].back = [x, id, th, tw](Graph& g) {
        const Tensor& dy = g.grad(id);
        Tensor& dx = g.grad(x);
        for (int i = 0; i < dy.n; ++i)
            for (int ch = 0; ch < dy.c; ++ch) {
                const float* dyp = dy.plane(i, ch);
                float* dxp = dx.plane(i, ch);
                for (int y = 0; y < th; ++y) {
                    const int sy = static_cast<int>(static_cast<std::int64_t>(y) * dx.h / th);
                    for (int xo = 0; xo < tw; ++xo) {
                        const int sx =
                            static_cast<int>(static_cast<std::int64_t>(xo) * dx.w / tw);
                        dxp[sy * dx.w + sx] += dyp[y * tw + xo];
                    }
                }
            }
    };
    return id;
}

int Graph::avgpool_to(int x, int th, int tw) {
    const Tensor& in = val(x);
    require(th >= 1 && tw >= 1 && th <= in.h && tw <= in.w,
            "avgpool_to: invalid output size");
    Tensor out(in.n, in.c, th, tw);
    auto window = [](int o, int t, int n) {
        int lo = o * n / t;
        int hi = ((o + 1) * n + t - 1) / t;  // ceil
        return std::pair<int, int>(lo, hi);
    };
    for (int i = 0; i < in.n; ++i)
        for (int ch = 0; ch < in.c; ++ch) {
            const float* src = in.plane(i, ch);
            float* dst = out.plane(i, ch);
            for (int y = 0; y < th; ++y) {
                auto [y0, y1] = window(y, th, in.h);
                for (int xo = 0; xo < tw; ++xo) {
                    auto [x0, x1] = window(xo, tw, in.w);
                    double acc = 0.0;
                    for (int yy = y0; yy < y1; ++yy)
                        for (int xx = x0; xx < x1; ++xx) acc += src[yy * in.w + xx];
                    dst[y * tw + xo] =
                        static_cast<float>(acc / ((y1 - y0) * (x1 - x0)));
                }
            }
        }
    int id = leaf(std::move(out));
    if (!grad_enabled_) return id;
    nodes_[id].back = [x, id, th, tw](Graph& g) {
        const Tensor& dy = g.grad(id);
        Tensor& dx = g.grad(x);
        auto window = [](int o, int t, int n) {
            int lo = o * n / t;
            int hi = ((o + 1) * n + t - 1) / t;
            return std::pair<int, int>(lo, hi);
        };
        for (int i = 0; i < dy.n; ++i)
            for (int ch = 0; ch < dy.c; ++ch) {
                const float* dyp = dy.plane(i, ch);
                float* dxp = dx.plane(i, ch);
                for (int y = 0; y < th; ++y) {
                    auto [y0, y1] = window(y, th, dx.h);
                    for (int xo = 0; xo < tw; ++xo) {
                        auto [x0, x1] = window(xo, tw, dx.w);
                        const float share =
                            dyp[y * tw + xo] / static_cast<float>((y1 - y0) * (x1 - x0));
                        for (int yy = y0; yy < y1; ++yy)
                            for (int xx = x0; xx < x1; ++xx)
                                dxp[yy * dx.w + xx] += share;
                    }
                }
            }
    };
    return id;
}

// Forward is computed with one fixed op sequence per query row rather than a
// blocked GEMM, so identical query positions give bitwise identical outputs;
// the constant-input invariance of scene prediction depends on that.
int Graph::attention(int q, int k, int v) {
    const Tensor& tq = val(q);
    const Tensor& tk = val(k);
    const Tensor& tv = val(v);
    require(tq.c == tk.c, "attention: q/k channel mismatch");
    require(tq.n == tk.n && tq.n == tv.n, "attention: batch mismatch");
    require(tk.h == tv.h && tk.w == tv.w, "attention: k/v spatial mismatch");
    const int pq = tq.plane_size();
    const int pk = tk.plane_size();
    const int cq = tq.c, cv = tv.c;
    const float scale = 1.0f / std::sqrt(static_cast<float>(cq));

    Tensor out(tq.n, cv, tq.h, tq.w);
    // Row-softmaxed attention weights, row-major (pq, pk) per sample, kept
    // for the backward pass; skipped entirely on inference graphs.
    std::shared_ptr<std::vector<float>> attn;
    if (grad_enabled_)
        attn = std::make_shared<std::vector<float>>(
            static_cast<std::size_t>(tq.n) * pq * pk);

    std::vector<float> Qp(static_cast<std::size_t>(pq) * cq);
    std::vector<float> Kp(static_cast<std::size_t>(pk) * cq);
    std::vector<float> Vp(static_cast<std::size_t>(pk) * cv);
    std::vector<float> arow_local(pk);
    std::vector<float> orow(cv);
    for (int i = 0; i < tq.n; ++i) {
        // position-major copies: row r holds the channel vector at position r
        for (int ch = 0; ch < cq; ++ch) {
            const float* qp = tq.plane(i, ch);
            const float* kp = tk.plane(i, ch);
            for (int r = 0; r < pq; ++r) Qp[static_cast<std::size_t>(r) * cq + ch] = qp[r];
            for (int r = 0; r < pk; ++r) Kp[static_cast<std::size_t>(r) * cq + ch] = kp[r];
        }
        for (int ch = 0; ch < cv; ++ch) {
            const float* vp = tv.plane(i, ch);
            for (int r = 0; r < pk; ++r) Vp[static_cast<std::size_t>(r) * cv + ch] = vp[r];
        }
        for (int r = 0; r < pq; ++r) {
            float* arow = attn ? attn->data() + (static_cast<std::size_t>(i) * pq + r) * pk
                               : arow_local.data();
            const float* qrow = Qp.data() + static_cast<std::size_t>(r) * cq;
            float mx = 0.0f;
            for (int j = 0; j < pk; ++j) {
                const float* krow = Kp.data() + static_cast<std::size_t>(j) * cq;
                float dot = 0.0f;
                for (int ch = 0; ch < cq; ++ch) dot += qrow[ch] * krow[ch];
                arow[j] = dot * scale;
                if (j == 0 || arow[j] > mx) mx = arow[j];
            }
            float denom = 0.0f;
            for (int j = 0; j < pk; ++j) {
                arow[j] = std::exp(arow[j] - mx);
                denom += arow[j];
            }
            const float dinv = 1.0f / denom;
            for (int j = 0; j < pk; ++j) arow[j] *= dinv;
            std::fill(orow.begin(), orow.end(), 0.0f);
            for (int j = 0; j < pk; ++j) {
                const float aj = arow[j];
                const float* vrow = Vp.data() + static_cast<std::size_t>(j) * cv;
                for (int ch = 0; ch < cv; ++ch) orow[ch] += aj * vrow[ch];
            }
            for (int ch = 0; ch < cv; ++ch)
                out.v[(static_cast<std::size_t>(i) * cv + ch) * pq + r] = orow[ch];
        }
    }
    int id = leaf(std::move(out));
    if (!grad_enabled_) return id;
    nodes_[id].back = [q, k, v, id, attn, scale](Graph& g) {
        using RMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
        const Tensor& dy = g.grad(id);
        const Tensor& tq2 = g.val(q);
        const Tensor& tk2 = g.val(k);
        const Tensor& tv2 = g.val(v);
        Tensor& dq = g.grad(q);
        Tensor& dk = g.grad(k);
        Tensor& dv = g.grad(v);
        const int pq = tq2.plane_size();
        const int pk = tk2.plane_size();
        const int cq = tq2.c, cv = tv2.c;
        RMat Qp(pq, cq), Kp(pk, cq), Vp(pk, cv), dOp(pq, cv);
        for (int i = 0; i < tq2.n; ++i) {
            for (int ch = 0; ch < cq; ++ch) {
                const float* qp = tq2.plane(i, ch);
                const float* kp = tk2.plane(i, ch);
                for (int r = 0; r < pq; ++r) Qp(r, ch) = qp[r];
                for (int r = 0; r < pk; ++r) Kp(r, ch) = kp[r];
            }
            for (int ch = 0; ch < cv; ++ch) {
                const float* vp = tv2.plane(i, ch);
                const float* dyp = dy.plane(i, ch);
                for (int r = 0; r < pk; ++r) Vp(r, ch) = vp[r];
                for (int r = 0; r < pq; ++r) dOp(r, ch) = dyp[r];
            }
            Eigen::Map<const RMat> A(attn->data() + static_cast<std::size_t>(i) * pq * pk,
                                     pq, pk);
            RMat dV = A.transpose() * dOp;                       // (pk, cv)
            RMat dA = dOp * Vp.transpose();                      // (pq, pk)
            Eigen::VectorXf rowdot = (dA.array() * A.array()).rowwise().sum();
            RMat dE = A.array() * (dA.colwise() - rowdot).array();
            RMat dQ = (dE * Kp) * scale;                         // (pq, cq)
            RMat dK = (dE.transpose() * Qp) * scale;             // (pk, cq)
            for (int ch = 0; ch < cq; ++ch) {
                float* dqp = dq.plane(i, ch);
                float* dkp = dk.plane(i, ch);
                for (int r = 0; r < pq; ++r) dqp[r] += dQ(r, ch);
                for (int r = 0; r < pk; ++r) dkp[r] += dK(r, ch);
            }
            for (int ch = 0; ch < cv; ++ch) {
                float* dvp = dv.plane(i, ch);
                for (int r = 0; r < pk; ++r) dvp[r] += dV(r, ch);
            }
        }
    };
    return id;
}

}  // namespace lsens::nn
