#include "lsens/models.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <optional>
#include <sstream>

#include <nlohmann/json.hpp>

#include "lsens/common.hpp"
#include "lsens/rng.hpp"

namespace lsens {

namespace detail {

// One built network: layers live in the model's ParamStore, forward appends
// the computation to a caller-provided tape.
class Net {
public:
    virtual ~Net() = default;
    virtual int forward(nn::Graph& g, int x) const = 0;
};

}  // namespace detail

namespace {

using nn::Conv2d;
using nn::ConvBlock;
using nn::Graph;
using nn::ParamStore;

// Channel plan: width at full resolution, doubling per stage, capped at 8x.
int ch(int width, int stage) { return width * std::min(1 << stage, 8); }

std::string num(int i) { return std::to_string(i); }

// Shared downsampling trunk. features[i] has ch(i) channels at 1/2^i
// resolution, i = 0..depth.
struct Encoder {
    std::vector<ConvBlock> blocks;
    int depth;

    Encoder(ParamStore& ps, const std::string& pre, int in_c, int width,
            int depth_, Rng& rng)
        : depth(depth_) {
        blocks.reserve(depth + 1);
        blocks.emplace_back(ps, pre + ".stem", in_c, ch(width, 0), 3, rng);
        for (int i = 1; i <= depth; ++i)
            blocks.emplace_back(ps, pre + ".down" + num(i), ch(width, i - 1),
                                ch(width, i), 3, rng);
    }

    std::vector<int> forward(Graph& g, int x) const {
        std::vector<int> f;
        f.reserve(depth + 1);
        int cur = blocks[0](g, x);
        f.push_back(cur);
        for (int i = 1; i <= depth; ++i) {
            cur = blocks[i](g, g.maxpool2(cur));
            f.push_back(cur);
        }
        return f;
    }
};

// Encoder-decoder with skip concatenation at every stage.
class UnetNet final : public detail::Net {
public:
    UnetNet(ParamStore& ps, const ArchSpec& s, Rng& rng)
        : enc_(ps, "enc", s.in_channels, s.width, s.depth, rng) {
        for (int i = s.depth - 1; i >= 0; --i)
            dec_.emplace_back(ps, "dec" + num(i),
                              ch(s.width, i + 1) + ch(s.width, i),
                              ch(s.width, i), 3, rng);
        head_.emplace(ps, "head", ch(s.width, 0), 1, 1, rng);
    }

    int forward(Graph& g, int x) const override {
        auto f = enc_.forward(g, x);
        int cur = f.back();
        for (std::size_t d = 0; d < dec_.size(); ++d) {
            int level = enc_.depth - 1 - static_cast<int>(d);
            cur = g.upsample_nearest(cur, 2);
            cur = dec_[d](g, g.concat({cur, f[level]}));
        }
        return (*head_)(g, cur);
    }

private:
    Encoder enc_;
    std::vector<ConvBlock> dec_;
    std::optional<Conv2d> head_;
};

// Nested dense skips: node (i, j) fuses all earlier nodes on its row with an
// upsampled node from the row below; the output is the top row's last node.
class UnetPPNet final : public detail::Net {
public:
    UnetPPNet(ParamStore& ps, const ArchSpec& s, Rng& rng)
        : enc_(ps, "enc", s.in_channels, s.width, s.depth, rng),
          depth_(s.depth) {
        for (int j = 1; j <= depth_; ++j)
            for (int i = 0; i + j <= depth_; ++i)
                nodes_.emplace_back(ps, "x" + num(i) + "_" + num(j),
                                    j * ch(s.width, i) + ch(s.width, i + 1),
                                    ch(s.width, i), 3, rng);
        head_.emplace(ps, "head", ch(s.width, 0), 1, 1, rng);
    }

    int forward(Graph& g, int x) const override {
        auto f = enc_.forward(g, x);
        std::vector<std::vector<int>> grid(depth_ + 1);
        for (int i = 0; i <= depth_; ++i) grid[i].push_back(f[i]);
        std::size_t b = 0;
        for (int j = 1; j <= depth_; ++j)
            for (int i = 0; i + j <= depth_; ++i) {
                std::vector<int> ins = grid[i];
                ins.push_back(g.upsample_nearest(grid[i + 1][j - 1], 2));
                grid[i].push_back(nodes_[b++](g, g.concat(ins)));
            }
        return (*head_)(g, grid[0][depth_]);
    }

private:
    Encoder enc_;
    int depth_;
    std::vector<ConvBlock> nodes_;
    std::optional<Conv2d> head_;
};

// Position attention at the bottleneck plus a squeeze-excite channel gate
// after every decoder fusion.
class MANetNet final : public detail::Net {
public:
    MANetNet(ParamStore& ps, const ArchSpec& s, Rng& rng)
        : enc_(ps, "enc", s.in_channels, s.width, s.depth, rng) {
        int cb = ch(s.width, s.depth);
        int qk = std::max(cb / 8, 4);
        q_.emplace(ps, "pab.q", cb, qk, 1, rng);
        k_.emplace(ps, "pab.k", cb, qk, 1, rng);
        v_.emplace(ps, "pab.v", cb, cb, 1, rng);
        for (int i = s.depth - 1; i >= 0; --i) {
            int c = ch(s.width, i);
            int mid = std::max(c / 4, 4);
            dec_.emplace_back(ps, "dec" + num(i), ch(s.width, i + 1) + c, c, 3,
                              rng);
            fc1_.emplace_back(ps, "gate" + num(i) + ".squeeze", c, mid, 1, rng);
            fc2_.emplace_back(ps, "gate" + num(i) + ".excite", mid, c, 1, rng);
        }
        head_.emplace(ps, "head", ch(s.width, 0), 1, 1, rng);
    }

    int forward(Graph& g, int x) const override {
        auto f = enc_.forward(g, x);
        int cur = f.back();
        cur = g.add(cur,
                    g.attention((*q_)(g, cur), (*k_)(g, cur), (*v_)(g, cur)));
        for (std::size_t d = 0; d < dec_.size(); ++d) {
            int level = enc_.depth - 1 - static_cast<int>(d);
            cur = g.upsample_nearest(cur, 2);
            cur = dec_[d](g, g.concat({cur, f[level]}));
            int se = g.global_avgpool(cur);
            se = g.sigmoid(fc2_[d](g, g.relu(fc1_[d](g, se))));
            cur = g.mul_channel(cur, se);
        }
        return (*head_)(g, cur);
    }

private:
    Encoder enc_;
    std::optional<Conv2d> q_, k_, v_;
    std::vector<ConvBlock> dec_;
    std::vector<Conv2d> fc1_, fc2_;
    std::optional<Conv2d> head_;
};

// Decoder fuses by addition: project, upsample, add the skip, refine.
class LinknetNet final : public detail::Net {
public:
    LinknetNet(ParamStore& ps, const ArchSpec& s, Rng& rng)
        : enc_(ps, "enc", s.in_channels, s.width, s.depth, rng) {
        for (int i = s.depth - 1; i >= 0; --i) {
            reduce_.emplace_back(ps, "red" + num(i), ch(s.width, i + 1),
                                 ch(s.width, i), 1, rng);
            fuse_.emplace_back(ps, "fuse" + num(i), ch(s.width, i),
                               ch(s.width, i), 3, rng);
        }
        head_.emplace(ps, "head", ch(s.width, 0), 1, 1, rng);
    }

    int forward(Graph& g, int x) const override {
        auto f = enc_.forward(g, x);
        int cur = f.back();
        for (std::size_t d = 0; d < fuse_.size(); ++d) {
            int level = enc_.depth - 1 - static_cast<int>(d);
            cur = g.upsample_nearest(reduce_[d](g, cur), 2);
            cur = fuse_[d](g, g.add(cur, f[level]));
        }
        return (*head_)(g, cur);
    }

private:
    Encoder enc_;
    std::vector<ConvBlock> reduce_, fuse_;
    std::optional<Conv2d> head_;
};

// Top-down pyramid: 1x1 laterals, upsample-and-add, per-level smoothing,
// then all levels merged at 1/2 resolution.
class FpnNet final : public detail::Net {
public:
    FpnNet(ParamStore& ps, const ArchSpec& s, Rng& rng)
        : enc_(ps, "enc", s.in_channels, s.width, s.depth, rng) {
        int p = ch(s.width, 1);
        for (int i = 1; i <= s.depth; ++i)
            lat_.emplace_back(ps, "lat" + num(i), ch(s.width, i), p, 1, rng);
        for (int i = 1; i <= s.depth; ++i)
            smooth_.emplace_back(ps, "smooth" + num(i), p, p, 3, rng);
        fuse_.emplace(ps, "fuse", p, ch(s.width, 0), 3, rng);
        head_.emplace(ps, "head", ch(s.width, 0), 1, 1, rng);
    }

    int forward(Graph& g, int x) const override {
        auto f = enc_.forward(g, x);
        int depth = enc_.depth;
        std::vector<int> pyr(depth + 1, -1);
        pyr[depth] = lat_[depth - 1](g, f[depth]);
        for (int i = depth - 1; i >= 1; --i)
            pyr[i] = g.add(lat_[i - 1](g, f[i]),
                           g.upsample_nearest(pyr[i + 1], 2));
        int merged = smooth_[0](g, pyr[1]);
        for (int i = 2; i <= depth; ++i)
            merged = g.add(merged, g.upsample_nearest(smooth_[i - 1](g, pyr[i]),
                                                      1 << (i - 1)));
        int cur = (*fuse_)(g, g.upsample_nearest(merged, 2));
        return (*head_)(g, cur);
    }

private:
    Encoder enc_;
    std::vector<Conv2d> lat_;
    std::vector<ConvBlock> smooth_;
    std::optional<ConvBlock> fuse_;
    std::optional<Conv2d> head_;
};

// Pyramid pooling over the final stride: pooled context at several bin
// counts, projected, resized back, concatenated, then a single head.
class PspNet final : public detail::Net {
public:
    static constexpr int kBins[4] = {1, 2, 3, 6};

    PspNet(ParamStore& ps, const ArchSpec& s, Rng& rng)
        : enc_(ps, "enc", s.in_channels, s.width, s.depth, rng),
          depth_(s.depth) {
        int cb = ch(s.width, s.depth);
        int pc = std::max(cb / 4, 4);
        for (int bin : kBins)
            branches_.emplace_back(ps, "pp" + num(bin), cb, pc, 1, rng);
        bottleneck_.emplace(ps, "bottleneck", cb + 4 * pc, std::max(cb / 2, 4),
                            3, rng);
        head_.emplace(ps, "head", std::max(cb / 2, 4), 1, 1, rng);
    }

    int forward(Graph& g, int x) const override {
        auto f = enc_.forward(g, x);
        int fb = f.back();
        int fh = g.val(fb).h, fw = g.val(fb).w;
        std::vector<int> ins = {fb};
        for (std::size_t i = 0; i < branches_.size(); ++i) {
            int pooled = g.avgpool_to(fb, std::min(kBins[i], fh),
                                      std::min(kBins[i], fw));
            ins.push_back(g.resize_nearest(branches_[i](g, pooled), fh, fw));
        }
        int cur = (*head_)(g, (*bottleneck_)(g, g.concat(ins)));
        return g.upsample_nearest(cur, 1 << depth_);
    }

private:
    Encoder enc_;
    int depth_;
    std::vector<ConvBlock> branches_;
    std::optional<ConvBlock> bottleneck_;
    std::optional<Conv2d> head_;
};

// Pyramid attention at the bottleneck (multi-scale attention map over the
// features plus a global context branch), then gated skip fusion on the way
// up: each skip is scaled by a channel gate pooled from the coarser level.
class PanNet final : public detail::Net {
public:
    PanNet(ParamStore& ps, const ArchSpec& s, Rng& rng)
        : enc_(ps, "enc", s.in_channels, s.width, s.depth, rng) {
        int cb = ch(s.width, s.depth);
        fpa_mid_.emplace(ps, "fpa.mid", cb, cb, 1, rng);
        fpa_d1_.emplace(ps, "fpa.down1", cb, cb, 3, rng);
        fpa_d2_.emplace(ps, "fpa.down2", cb, cb, 3, rng);
        fpa_att_.emplace(ps, "fpa.att", cb, cb, 1, rng);
        fpa_glob_.emplace(ps, "fpa.global", cb, cb, 1, rng);
        for (int i = s.depth - 1; i >= 0; --i) {
            proj_.emplace_back(ps, "proj" + num(i), ch(s.width, i + 1),
                               ch(s.width, i), 1, rng);
            skip_.emplace_back(ps, "gau" + num(i) + ".skip", ch(s.width, i),
                               ch(s.width, i), 3, rng);
            gate_.emplace_back(ps, "gau" + num(i) + ".gate", ch(s.width, i + 1),
                               ch(s.width, i), 1, rng);
        }
        head_.emplace(ps, "head", ch(s.width, 0), 1, 1, rng);
    }

    int forward(Graph& g, int x) const override {
        auto f = enc_.forward(g, x);
        int x0 = f.back();
        int fh = g.val(x0).h, fw = g.val(x0).w;
        int mid = (*fpa_mid_)(g, x0);
        int d1 = (*fpa_d1_)(
            g, g.avgpool_to(x0, std::max(fh / 2, 1), std::max(fw / 2, 1)));
        int d2 = (*fpa_d2_)(
            g, g.avgpool_to(d1, std::max(fh / 4, 1), std::max(fw / 4, 1)));
        int att = g.sigmoid((*fpa_att_)(
            g, g.add(g.resize_nearest(d1, fh, fw), g.resize_nearest(d2, fh, fw))));
        int glob = g.resize_nearest((*fpa_glob_)(g, g.global_avgpool(x0)), fh, fw);
        int cur = g.add(g.mul(mid, att), glob);
        for (std::size_t d = 0; d < proj_.size(); ++d) {
            int level = enc_.depth - 1 - static_cast<int>(d);
            int gate = g.sigmoid(gate_[d](g, g.global_avgpool(cur)));
            int skip = g.mul_channel(skip_[d](g, f[level]), gate);
            cur = g.add(g.upsample_nearest(proj_[d](g, cur), 2), skip);
        }
        return (*head_)(g, cur);
    }

private:
    Encoder enc_;
    std::optional<Conv2d> fpa_mid_, fpa_att_, fpa_glob_;
    std::optional<ConvBlock> fpa_d1_, fpa_d2_;
    std::vector<ConvBlock> proj_, skip_;
    std::vector<Conv2d> gate_;
    std::optional<Conv2d> head_;
};

// Atrous spatial pyramid: parallel 1x1, dilated 3x3 (rates 2 and 4), and a
// pooled image branch, concatenated and projected back down.
struct Aspp {
    ConvBlock b0, b1, b2;
    Conv2d img;
    ConvBlock proj;
    int out_c;

    Aspp(ParamStore& ps, const std::string& pre, int in_c, int out,
         Rng& rng)
        : b0(ps, pre + ".b0", in_c, out, 1, rng),
          b1(ps, pre + ".b1", in_c, out, 3, rng, 2),
          b2(ps, pre + ".b2", in_c, out, 3, rng, 4),
          img(ps, pre + ".img", in_c, out, 1, rng),
          proj(ps, pre + ".proj", 4 * out, out, 1, rng),
          out_c(out) {}

    int forward(Graph& g, int x) const {
        int fh = g.val(x).h, fw = g.val(x).w;
        int pool = g.resize_nearest(g.relu(img(g, g.global_avgpool(x))), fh, fw);
        return proj(g, g.concat({b0(g, x), b1(g, x), b2(g, x), pool}));
    }
};

// Dilated final stage instead of the last pooling, ASPP head, one upsample.
class DeepLab3Net final : public detail::Net {
public:
    DeepLab3Net(ParamStore& ps, const ArchSpec& s, Rng& rng)
        : enc_(ps, "enc", s.in_channels, s.width, s.depth - 1, rng),
          depth_(s.depth) {
        int cb = ch(s.width, s.depth);
        dilated_.emplace(ps, "dilated", ch(s.width, s.depth - 1), cb, 3, rng, 2);
        aspp_.emplace(ps, "aspp", cb, std::max(cb / 2, 4), rng);
        head_.emplace(ps, "head", aspp_->out_c, 1, 1, rng);
    }

    int forward(Graph& g, int x) const override {
        auto f = enc_.forward(g, x);
        int cur = aspp_->forward(g, (*dilated_)(g, f.back()));
        cur = (*head_)(g, cur);
        return depth_ > 1 ? g.upsample_nearest(cur, 1 << (depth_ - 1)) : cur;
    }

private:
    Encoder enc_;
    int depth_;
    std::optional<ConvBlock> dilated_;
    std::optional<Aspp> aspp_;
    std::optional<Conv2d> head_;
};

// ASPP trunk plus a light decoder: upsample to stride 2, concatenate a
// projected early skip, refine, and finish with one upsample.
class DeepLab3PlusNet final : public detail::Net {
public:
    DeepLab3PlusNet(ParamStore& ps, const ArchSpec& s, Rng& rng)
        : enc_(ps, "enc", s.in_channels, s.width, s.depth - 1, rng),
          depth_(s.depth) {
        int cb = ch(s.width, s.depth);
        int lc = std::max(s.width / 2, 4);
        dilated_.emplace(ps, "dilated", ch(s.width, s.depth - 1), cb, 3, rng, 2);
        aspp_.emplace(ps, "aspp", cb, std::max(cb / 2, 4), rng);
        low_.emplace(ps, "low", ch(s.width, 1), lc, 1, rng);
        fuse_.emplace(ps, "fuse", aspp_->out_c + lc, ch(s.width, 1), 3, rng);
        head_.emplace(ps, "head", ch(s.width, 1), 1, 1, rng);
    }

    int forward(Graph& g, int x) const override {
        auto f = enc_.forward(g, x);
        int cur = aspp_->forward(g, (*dilated_)(g, f.back()));
        if (depth_ > 2) cur = g.upsample_nearest(cur, 1 << (depth_ - 2));
        cur = (*fuse_)(g, g.concat({cur, (*low_)(g, f[1])}));
        return g.upsample_nearest((*head_)(g, cur), 2);
    }

private:
    Encoder enc_;
    int depth_;
    std::optional<ConvBlock> dilated_;
    std::optional<Aspp> aspp_;
    std::optional<ConvBlock> low_, fuse_;
    std::optional<Conv2d> head_;
};

std::unique_ptr<detail::Net> build_net(const ArchSpec& s, ParamStore& ps,
                                       Rng& rng) {
    if (s.name == "Unet") return std::make_unique<UnetNet>(ps, s, rng);
    if (s.name == "UnetPP") return std::make_unique<UnetPPNet>(ps, s, rng);
    if (s.name == "MANet") return std::make_unique<MANetNet>(ps, s, rng);
    if (s.name == "Linknet") return std::make_unique<LinknetNet>(ps, s, rng);
    if (s.name == "FPN") return std::make_unique<FpnNet>(ps, s, rng);
    if (s.name == "PSPNet") return std::make_unique<PspNet>(ps, s, rng);
    if (s.name == "PAN") return std::make_unique<PanNet>(ps, s, rng);
    if (s.name == "DeepLabV3") return std::make_unique<DeepLab3Net>(ps, s, rng);
    if (s.name == "DeepLabV3Plus")
        return std::make_unique<DeepLab3PlusNet>(ps, s, rng);
    fail("unknown architecture \"" + s.name + "\"");
}

}  // namespace

const std::vector<std::string>& arch_names() {
    static const std::vector<std::string> names = {
        "Unet", "UnetPP", "MANet",     "Linknet",   "FPN",
        "PSPNet", "PAN",  "DeepLabV3", "DeepLabV3Plus"};
    return names;
}

void validate_arch(const ArchSpec& spec) {
    const auto& names = arch_names();
    if (std::find(names.begin(), names.end(), spec.name) == names.end()) {
        std::string list;
        for (const auto& n : names) list += (list.empty() ? "" : ", ") + n;
        fail("unknown architecture \"" + spec.name + "\", expected one of " +
             list);
    }
    if (spec.in_channels != 2 && spec.in_channels != 9 &&
        spec.in_channels != 11 && spec.in_channels != 15)
        fail("in_channels " + num(spec.in_channels) +
             " not one of 2, 9, 11, 15");
    require(spec.width >= 1, "width must be positive");
    require(spec.depth >= 1 && spec.depth <= 8, "depth must be in [1, 8]");
    if (spec.name == "DeepLabV3Plus")
        require(spec.depth >= 2, "DeepLabV3Plus requires depth >= 2");
}

Model::Model(const ArchSpec& spec, std::uint64_t seed)
    : spec_(spec), seed_(seed) {
    validate_arch(spec_);
    Rng rng(derive_seed(seed, "init"));
    net_ = build_net(spec_, store_, rng);
}

Model::Model(Model&&) noexcept = default;
Model& Model::operator=(Model&&) noexcept = default;
Model::~Model() = default;

int Model::forward(nn::Graph& g, int input) const {
    const Tensor& t = g.val(input);
    require(t.c == spec_.in_channels,
            "model built for " + num(spec_.in_channels) + " channels, input has " +
                num(t.c));
    int div = 1 << spec_.depth;
    require(t.h % div == 0 && t.w % div == 0,
            "input " + num(t.h) + "x" + num(t.w) +
                " not divisible by 2^depth = " + num(div));
    return net_->forward(g, input);
}

Tensor Model::forward(const Tensor& stack) const {
    nn::Graph g(false);
    int out = forward(g, g.leaf(stack));
    return g.val(out);
}

Model build_model(const ArchSpec& spec, std::uint64_t seed) {
    return Model(spec, seed);
}

namespace {

constexpr char kWeightMagic[8] = {'L', 'S', 'W', 'T', '0', '0', '0', '1'};

void append_u32(std::string& buf, std::uint32_t v) {
    buf.append(reinterpret_cast<const char*>(&v), 4);
}

void append_i32(std::string& buf, std::int32_t v) {
    buf.append(reinterpret_cast<const char*>(&v), 4);
}

struct Cursor {
    const std::string& buf;
    const std::string& path;
    std::size_t at = 0;

    const char* take(std::size_t n) {
        require(at + n <= buf.size(), "truncated weight file: " + path);
        const char* p = buf.data() + at;
        at += n;
        return p;
    }
    std::uint32_t u32() {
        std::uint32_t v;
        std::memcpy(&v, take(4), 4);
        return v;
    }
    std::int32_t i32() {
        std::int32_t v;
        std::memcpy(&v, take(4), 4);
        return v;
    }
};

}  // namespace

void save_weights(const Model& model, const std::string& path) {
    std::string buf;
    const auto& params = model.params().all();
    append_u32(buf, static_cast<std::uint32_t>(params.size()));
    for (const auto& p : params) {
        append_u32(buf, static_cast<std::uint32_t>(p->name.size()));
        buf.append(p->name);
        const Tensor& t = p->value;
        append_i32(buf, t.n);
        append_i32(buf, t.c);
        append_i32(buf, t.h);
        append_i32(buf, t.w);
        buf.append(reinterpret_cast<const char*>(t.v.data()),
                   t.v.size() * sizeof(float));
    }
    std::uint64_t sum = fnv1a64_bytes(buf.data(), buf.size());

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), "cannot open " + path);
    out.write(kWeightMagic, sizeof(kWeightMagic));
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    out.write(reinterpret_cast<const char*>(&sum), sizeof(sum));
    out.flush();
    require(out.good(), "write failed: " + path);

    nlohmann::json side = {{"arch", model.spec().name},
                           {"in_channels", model.spec().in_channels},
                           {"width", model.spec().width},
                           {"depth", model.spec().depth},
                           {"seed", model.seed()},
                           {"format_version", 1}};
    std::ofstream sout(path + ".json", std::ios::trunc);
    require(static_cast<bool>(sout), "cannot open " + path + ".json");
    sout << side.dump(2) << "\n";
    require(sout.good(), "write failed: " + path + ".json");
}

Model load_weights(const ArchSpec& spec, const std::string& path) {
    validate_arch(spec);

    std::ifstream sin(path + ".json");
    require(static_cast<bool>(sin), "cannot open weight sidecar " + path + ".json");
    nlohmann::json side;
    try {
        sin >> side;
    } catch (const nlohmann::json::exception&) {
        fail("weight sidecar is not valid JSON: " + path + ".json");
    }
    auto field = [&](const char* key) -> const nlohmann::json& {
        require(side.contains(key), std::string("weight sidecar missing \"") +
                                        key + "\": " + path + ".json");
        return side.at(key);
    };
    require(field("format_version").is_number_integer() &&
                field("format_version").get<int>() == 1,
            "unsupported weight format_version in " + path + ".json");
    std::string arch = field("arch").get<std::string>();
    int in_c = field("in_channels").get<int>();
    int width = field("width").get<int>();
    int depth = field("depth").get<int>();
    std::uint64_t seed = field("seed").get<std::uint64_t>();
    require(arch == spec.name, path + ": weights are for arch " + arch +
                                   ", requested " + spec.name);
    require(in_c == spec.in_channels,
            path + ": weights built for in_channels " + num(in_c) +
                ", requested " + num(spec.in_channels));
    require(width == spec.width, path + ": weights built for width " +
                                     num(width) + ", requested " +
                                     num(spec.width));
    require(depth == spec.depth, path + ": weights built for depth " +
                                     num(depth) + ", requested " +
                                     num(spec.depth));

    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), "cannot open " + path);
    std::ostringstream raw;
    raw << in.rdbuf();
    std::string file = std::move(raw).str();
    require(file.size() >= sizeof(kWeightMagic) + sizeof(std::uint64_t),
            "truncated weight file: " + path);
    require(std::memcmp(file.data(), kWeightMagic, sizeof(kWeightMagic)) == 0,
            "bad magic, not a weight file: " + path);

    std::string payload = file.substr(
        sizeof(kWeightMagic),
        file.size() - sizeof(kWeightMagic) - sizeof(std::uint64_t));
    std::uint64_t stored;
    std::memcpy(&stored, file.data() + file.size() - sizeof(stored),
                sizeof(stored));
    require(fnv1a64_bytes(payload.data(), payload.size()) == stored,
            "checksum mismatch, weight file is corrupted: " + path);

    Model model(spec, seed);
    auto& params = model.params().all();
    Cursor cur{payload, path};
    std::uint32_t count = cur.u32();
    require(count == params.size(),
            path + ": weight file has " + num(static_cast<int>(count)) +
                " tensors, model has " + num(static_cast<int>(params.size())));
    for (const auto& p : params) {
        std::uint32_t nlen = cur.u32();
        std::string name(cur.take(nlen), nlen);
        require(name == p->name, path + ": tensor \"" + name +
                                     "\" does not match expected \"" + p->name +
                                     "\"");
        Tensor& t = p->value;
        int n = cur.i32(), c = cur.i32(), h = cur.i32(), w = cur.i32();
        require(n == t.n && c == t.c && h == t.h && w == t.w,
                path + ": tensor \"" + name + "\" has unexpected shape");
        std::memcpy(t.v.data(), cur.take(t.v.size() * sizeof(float)),
                    t.v.size() * sizeof(float));
    }
    require(cur.at == payload.size(), "trailing bytes in weight file: " + path);
    return model;
}

ProbabilityMap predict_scene(const Model& model, const Scene& scene,
                             BandSetting setting, const NormStats& stats,
                             int tile, int stride) {
    auto idx = band_indices(setting);
    require(static_cast<int>(idx.size()) == model.spec().in_channels,
            "setting " + setting_name(setting) + " has " +
                num(static_cast<int>(idx.size())) + " bands, model expects " +
                num(model.spec().in_channels));
    require(tile >= 1, "tile must be positive");
    require(stride >= 1 && stride <= tile, "stride must be in [1, tile]");
    int div = 1 << model.spec().depth;
    require(tile % div == 0,
            "tile " + num(tile) + " not divisible by 2^depth = " + num(div));

    Tensor stack = select_bands(scene, setting);
    Tensor valid = valid_tensor(scene);
    apply_norm(stack, valid, setting, stats);

    const int C = static_cast<int>(idx.size());
    const int H = scene.height, W = scene.width;
    const int Hp = ((std::max(H, tile) + tile - 1) / tile) * tile;
    const int Wp = ((std::max(W, tile) + tile - 1) / tile) * tile;

    Tensor padded(1, C, Hp, Wp);
    for (int c = 0; c < C; ++c) {
        const float* src = stack.plane(0, c);
        float* dst = padded.plane(0, c);
        for (int y = 0; y < Hp; ++y) {
            const float* srow =
                src + static_cast<std::size_t>(nn::reflect_index(y, H)) * W;
            float* drow = dst + static_cast<std::size_t>(y) * Wp;
            for (int x = 0; x < Wp; ++x) drow[x] = srow[nn::reflect_index(x, W)];
        }
    }

    auto origins = [](int total, int tile_, int stride_) {
        std::vector<int> o;
        for (int p = 0;; p += stride_) {
            if (p + tile_ >= total) {
                o.push_back(total - tile_);
                break;
            }
            o.push_back(p);
        }
        return o;
    };

    // Overlap averaging in double: the mean of k identical tile outputs is
    // then exactly that output, so the stride cannot perturb constant regions.
    std::vector<double> acc(static_cast<std::size_t>(Hp) * Wp, 0.0);
    std::vector<int> cnt(static_cast<std::size_t>(Hp) * Wp, 0);
    Tensor in(1, C, tile, tile);
    for (int oy : origins(Hp, tile, stride)) {
        for (int ox : origins(Wp, tile, stride)) {
            for (int c = 0; c < C; ++c) {
                const float* sp = padded.plane(0, c);
                float* dp = in.plane(0, c);
                for (int y = 0; y < tile; ++y)
                    std::memcpy(dp + static_cast<std::size_t>(y) * tile,
                                sp + static_cast<std::size_t>(oy + y) * Wp + ox,
                                static_cast<std::size_t>(tile) * sizeof(float));
            }
            Tensor logits = model.forward(in);
            const float* lp = logits.plane(0, 0);
            for (int y = 0; y < tile; ++y) {
                std::size_t row = static_cast<std::size_t>(oy + y) * Wp + ox;
                for (int x = 0; x < tile; ++x) {
                    double p = 1.0 / (1.0 + std::exp(-static_cast<double>(
                                                lp[static_cast<std::size_t>(y) *
                                                       tile +
                                                   x])));
                    acc[row + x] += p;
                    cnt[row + x] += 1;
                }
            }
        }
    }

    ProbabilityMap out;
    out.scene_id = scene.id;
    out.width = W;
    out.height = H;
    out.provenance = model.spec().name;
    out.values.resize(static_cast<std::size_t>(H) * W);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            std::size_t at = static_cast<std::size_t>(y) * Wp + x;
            std::size_t o = static_cast<std::size_t>(y) * W + x;
            out.values[o] =
                scene.valid[o] ? static_cast<float>(acc[at] / cnt[at]) : 0.0f;
        }
    }
    return out;
}

}  // namespace lsens
