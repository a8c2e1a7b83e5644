#pragma once

// The ShadowMamba network: selective-scan mixers (boundary-region, global
// cross-scan, or plain local-scan ordering) and depthwise-conv feed-forward
// blocks in a pre-norm residual arrangement, assembled into a U-Net with an
// odd number of stages. Also hosts the AdamW optimizer, the cosine learning
// rate schedule, and the small-scale training loop.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "shadowmamba/image_io.hpp"
#include "shadowmamba/mask.hpp"
#include "shadowmamba/scan.hpp"
#include "shadowmamba/ssm.hpp"
#include "shadowmamba/synth.hpp"
#include "shadowmamba/tensor.hpp"

namespace sm {

enum class BlockKind { boundary_region, global, local };

std::string to_string(BlockKind k);  // "BR" | "G" | "L"
BlockKind block_kind_from_string(const std::string& s);

struct ModelConfig {
  int base_width = 32;
  std::vector<int> blocks_per_layer = {2, 2, 2, 2, 2, 2, 2};
  std::vector<BlockKind> arrangement = {
      BlockKind::boundary_region, BlockKind::boundary_region,
      BlockKind::global,          BlockKind::global,
      BlockKind::global,          BlockKind::boundary_region,
      BlockKind::boundary_region};
  int window = 8;  // one of 4, 8, 10, 16
  int ssm_state_dim = 16;
  int ffn_expansion = 2;
  uint64_t seed = 0;
  std::string precision = "f64";  // "f64" | "f32"

  int stages() const { return (int)arrangement.size(); }
  // resolution steps below full: stages == 2*depth + 1
  int depth() const { return stages() / 2; }
  int level_of(int stage) const {
    const int k = depth();
    return stage <= k ? stage : 2 * k - stage;
  }
  int width_of(int stage) const { return base_width << level_of(stage); }

  // Smallest divisor the padded height/width must satisfy: the resampling
  // ladder needs 2^depth, and each windowed stage needs its window to tile
  // the stage's resolution.
  int size_multiple() const {
    int m = 1 << depth();
    for (int s = 0; s < stages(); ++s)
      if (arrangement[s] != BlockKind::global)
        m = (int)std::lcm((int64_t)m, (int64_t)window << level_of(s));
    return m;
  }

  void validate() const;  // throws UsageError on malformed configs
};

// JSON round-trip with a versioned schema; unknown keys are rejected.
std::string to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);
ModelConfig load_model_config(const std::string& path);
void save_model_config(const std::string& path, const ModelConfig& cfg);

// ---- scan context --------------------------------------------------------

// Everything resolution- or mask-dependent that a forward pass needs:
// padded dimensions and, per resolution level, the scan orders each block
// kind uses there. Built once per (mask, H, W) and reused across steps.
struct ScanContext {
  int H = 0, W = 0;    // original input size
  int H2 = 0, W2 = 0;  // padded size (multiple of cfg.size_multiple())
  struct LevelOrders {
    bool has_br = false, has_local = false, has_cross = false;
    std::array<ScanOrder, 4> br, local, cross;
    WindowClassGrid classes;  // the grid behind the br orders
  };
  std::vector<LevelOrders> levels;  // depth()+1 entries
};

inline ScanContext build_scan_context(const BinaryMask& mask, int H, int W,
                                      const ModelConfig& cfg) {
  cfg.validate();
  if (mask.h != H || mask.w != W)
    throw UsageError("build_scan_context: mask size mismatch");
  ScanContext ctx;
  ctx.H = H;
  ctx.W = W;
  const int mult = cfg.size_multiple();
  ctx.H2 = round_up(H, mult);
  ctx.W2 = round_up(W, mult);
  const BinaryMask padded = pad_reflect(mask, ctx.H2, ctx.W2);

  const int k = cfg.depth();
  ctx.levels.resize(k + 1);
  for (int s = 0; s < cfg.stages(); ++s) {
    auto& lv = ctx.levels[cfg.level_of(s)];
    switch (cfg.arrangement[s]) {
      case BlockKind::boundary_region: lv.has_br = true; break;
      case BlockKind::local: lv.has_local = true; break;
      case BlockKind::global: lv.has_cross = true; break;
    }
  }
  for (int l = 0; l <= k; ++l) {
    auto& lv = ctx.levels[l];
    const int Hl = ctx.H2 >> l, Wl = ctx.W2 >> l;
    if (lv.has_br) {
      if (l == 0) {
        lv.classes = classify_windows(padded, cfg.window);
      } else {
        auto [any1, all1] = downsample_region(padded, 1 << l);
        lv.classes = classify_windows_region(any1, all1, cfg.window);
      }
      for (int d = 0; d < 4; ++d)
        lv.br[d] = build_boundary_region_order(lv.classes, Hl, Wl, cfg.window,
                                               kAllDirections[d]);
    }
    if (lv.has_local)
      for (int d = 0; d < 4; ++d)
        lv.local[d] = build_local_order(Hl, Wl, cfg.window, kAllDirections[d]);
    if (lv.has_cross)
      for (int d = 0; d < 4; ++d)
        lv.cross[d] = build_cross_order(Hl, Wl, kAllDirections[d]);
  }
  return ctx;
}

// ---- parameter bundles ----------------------------------------------------

template <typename T>
struct NamedParam {
  std::string name;
  Tensor<T>* tensor;
};

namespace detail {

template <typename T>
void init_uniform(Tensor<T>& t, double fan_in, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double bound = 1.0 / std::sqrt(std::max(1.0, fan_in));
  for (T& v : *t.data) v = (T)(bound * u(rng));
}

}  // namespace detail

template <typename T>
struct LinearP {  // y = w x + b on [in, L] feature maps
  Tensor<T> w, b;

  void init(int out, int in, std::mt19937_64& rng) {
    w = Tensor<T>({out, in});
    b = Tensor<T>({out});
    detail::init_uniform(w, in, rng);
  }
  void collect(const std::string& p, std::vector<NamedParam<T>>& out) {
    out.push_back({p + ".w", &w});
    out.push_back({p + ".b", &b});
  }
};

template <typename T>
struct DwConvP {  // depthwise 3x3, same padding
  Tensor<T> w, b;

  void init(int channels, std::mt19937_64& rng) {
    w = Tensor<T>({channels, 3, 3});
    b = Tensor<T>({channels});
    detail::init_uniform(w, 9, rng);
  }
  void collect(const std::string& p, std::vector<NamedParam<T>>& out) {
    out.push_back({p + ".w", &w});
    out.push_back({p + ".b", &b});
  }
};

template <typename T>
struct ConvP {  // dense conv, square kernel; w is [out, in*k*k]
  Tensor<T> w, b;
  int in = 0, out_ch = 0, k = 0, stride = 1, pad = 0;

  void init(int out, int in_ch, int kernel, int s, int p,
            std::mt19937_64& rng) {
    in = in_ch;
    out_ch = out;
    k = kernel;
    stride = s;
    pad = p;
    w = Tensor<T>({out, in_ch * kernel * kernel});
    b = Tensor<T>({out});
    detail::init_uniform(w, (double)in_ch * kernel * kernel, rng);
  }
  void collect(const std::string& p, std::vector<NamedParam<T>>& out) {
    out.push_back({p + ".w", &w});
    out.push_back({p + ".b", &b});
  }
};

template <typename T>
struct DeconvP {  // transposed conv, 4x4 kernel, stride 2, pad 1 (2x upsample)
  Tensor<T> w, b;
  int in = 0, out_ch = 0;

  void init(int out, int in_ch, std::mt19937_64& rng) {
    in = in_ch;
    out_ch = out;
    w = Tensor<T>({out, in_ch * 16});
    b = Tensor<T>({out});
    detail::init_uniform(w, (double)in_ch * 16, rng);
  }
  void collect(const std::string& p, std::vector<NamedParam<T>>& out) {
    out.push_back({p + ".w", &w});
    out.push_back({p + ".b", &b});
  }
};

template <typename T>
struct NormP {
  Tensor<T> gamma, beta;

  void init(int channels) {
    gamma = Tensor<T>({channels}, T(1));
    beta = Tensor<T>({channels});
  }
  void collect(const std::string& p, std::vector<NamedParam<T>>& out) {
    out.push_back({p + ".gamma", &gamma});
    out.push_back({p + ".beta", &beta});
  }
};

// Selective-scan mixer: embed, split into a scan stream and a gate stream,
// fuse with a Hadamard product, project back. The scan stream runs a
// depthwise-separable conv, SiLU, the four-direction SSM, and a layer norm.
template <typename T>
struct MixerP {
  LinearP<T> in_proj;   // C -> 2d
  DwConvP<T> dw;        // on d channels
  LinearP<T> pw;        // d -> d (separable conv's pointwise half)
  SSMParams<T> ssm;     // shared across the four directions
  NormP<T> norm;        // over d
  LinearP<T> out_proj;  // d -> C

  void init(int C, int state_dim, std::mt19937_64& rng) {
    const int d = 2 * C;
    in_proj.init(2 * d, C, rng);
    dw.init(d, rng);
    pw.init(d, d, rng);
    ssm = make_ssm_params<T>(d, state_dim, C, rng);
    norm.init(d);
    out_proj.init(C, d, rng);
  }
  void collect(const std::string& p, std::vector<NamedParam<T>>& out) {
    in_proj.collect(p + ".in_proj", out);
    dw.collect(p + ".dw", out);
    pw.collect(p + ".pw", out);
    out.push_back({p + ".ssm.A_log", &ssm.A_log});
    out.push_back({p + ".ssm.D", &ssm.D});
    out.push_back({p + ".ssm.x_proj", &ssm.x_proj});
    out.push_back({p + ".ssm.dt_proj", &ssm.dt_proj});
    out.push_back({p + ".ssm.dt_bias", &ssm.dt_bias});
    norm.collect(p + ".norm", out);
    out_proj.collect(p + ".out_proj", out);
  }
};

template <typename T>
struct SffnP {
  LinearP<T> fc1;  // C -> e*C
  DwConvP<T> dw;   // on e*C channels
  LinearP<T> fc2;  // e*C -> C

  void init(int C, int expansion, std::mt19937_64& rng) {
    fc1.init(expansion * C, C, rng);
    dw.init(expansion * C, rng);
    fc2.init(C, expansion * C, rng);
  }
  void collect(const std::string& p, std::vector<NamedParam<T>>& out) {
    fc1.collect(p + ".fc1", out);
    dw.collect(p + ".dw", out);
    fc2.collect(p + ".fc2", out);
  }
};

template <typename T>
struct BlockP {
  NormP<T> norm1;
  MixerP<T> mixer;
  NormP<T> norm2;
  SffnP<T> sffn;

  void init(int C, int state_dim, int expansion, std::mt19937_64& rng) {
    norm1.init(C);
    mixer.init(C, state_dim, rng);
    norm2.init(C);
    sffn.init(C, expansion, rng);
  }
  void collect(const std::string& p, std::vector<NamedParam<T>>& out) {
    norm1.collect(p + ".norm1", out);
    mixer.collect(p + ".mixer", out);
    norm2.collect(p + ".norm2", out);
    sffn.collect(p + ".sffn", out);
  }
};

// ---- the network -----------------------------------------------------------

template <typename T>
class Model {
 public:
  ModelConfig cfg;

  explicit Model(ModelConfig config) : cfg(std::move(config)) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    const int C = cfg.base_width;
    const int k = cfg.depth();
    embed_.init(C, 3, 3, 1, 1, rng);
    stages_.resize(cfg.stages());
    for (int s = 0; s < cfg.stages(); ++s) {
      stages_[s].resize(cfg.blocks_per_layer[s]);
      for (auto& blk : stages_[s])
        blk.init(cfg.width_of(s), cfg.ssm_state_dim, cfg.ffn_expansion, rng);
    }
    downs_.resize(k);
    ups_.resize(k);
    fuses_.resize(k);
    for (int l = 0; l < k; ++l) {
      const int w_in = C << l;
      downs_[l].init(2 * w_in, w_in, 3, 2, 1, rng);
    }
    for (int d = 0; d < k; ++d) {
      const int w_in = C << (k - d);  // decoder step d halves this width
      ups_[d].init(w_in / 2, w_in, rng);
      fuses_[d].init(w_in / 2, w_in, rng);  // concat(up, skip) back down
    }
    final_.init(3, C, rng);
    // zero residual head: the network is exactly the identity at init
    std::fill(final_.w.data->begin(), final_.w.data->end(), T(0));
  }

  std::vector<NamedParam<T>> named_parameters() {
    std::vector<NamedParam<T>> out;
    embed_.collect("embed", out);
    for (int s = 0; s < (int)stages_.size(); ++s)
      for (int b = 0; b < (int)stages_[s].size(); ++b)
        stages_[s][b].collect(
            "stage" + std::to_string(s) + ".block" + std::to_string(b), out);
    for (int l = 0; l < (int)downs_.size(); ++l)
      downs_[l].collect("down" + std::to_string(l), out);
    for (int d = 0; d < (int)ups_.size(); ++d) {
      ups_[d].collect("up" + std::to_string(d), out);
      fuses_[d].collect("fuse" + std::to_string(d), out);
    }
    final_.collect("final", out);
    return out;
  }

  int64_t param_count() {
    int64_t n = 0;
    for (const auto& p : named_parameters()) n += p.tensor->numel();
    return n;
  }

  // totals per top-level group (prefix before the first dot), in walk order
  std::vector<std::pair<std::string, int64_t>> param_breakdown() {
    std::vector<std::pair<std::string, int64_t>> rows;
    for (const auto& p : named_parameters()) {
      const std::string group = p.name.substr(0, p.name.find('.'));
      if (rows.empty() || rows.back().first != group)
        rows.emplace_back(group, 0);
      rows.back().second += p.tensor->numel();
    }
    return rows;
  }

  void set_requires_grad() {
    for (auto& p : named_parameters()) p.tensor->set_requires_grad();
  }
  void zero_grad() {
    for (auto& p : named_parameters()) p.tensor->zero_grad();
  }

  // Zeroes every projection that closes a residual branch (mixer out_proj,
  // SFFN fc2, final head): the whole network becomes the identity map.
  void zero_output_projections() {
    auto wipe = [](Tensor<T>& t) {
      std::fill(t.data->begin(), t.data->end(), T(0));
    };
    for (auto& stage : stages_)
      for (auto& blk : stage) {
        wipe(blk.mixer.out_proj.w);
        wipe(blk.mixer.out_proj.b);
        wipe(blk.sffn.fc2.w);
        wipe(blk.sffn.fc2.b);
      }
    wipe(final_.w);
    wipe(final_.b);
  }

  // Residual I_r for a [3, H, W] input; ctx must be built for (H, W) and
  // this config. The caller forms restored = clamp(input + residual).
  Tensor<T> forward(const Tensor<T>& x, const ScanContext& ctx) const {
    if (x.shape.size() != 3 || x.shape[0] != 3)
      throw UsageError("Model::forward: input must be [3, H, W]");
    const int H = x.shape[1], W = x.shape[2];
    if (ctx.H != H || ctx.W != W)
      throw UsageError("Model::forward: scan context built for another size");
    if ((int)ctx.levels.size() != cfg.depth() + 1)
      throw UsageError("Model::forward: scan context depth mismatch");
    const int k = cfg.depth();

    Tensor<T> f = x;
    if (ctx.H2 != H || ctx.W2 != W)
      f = gather_flat(f, pad_index(3, H, W, ctx.H2, ctx.W2),
                      {3, ctx.H2, ctx.W2});
    f = run_conv(embed_, f);

    std::vector<Tensor<T>> skips;
    for (int s = 0; s < k; ++s) {
      f = run_stage(s, f, ctx);
      skips.push_back(f);
      f = run_conv(downs_[s], f);
    }
    f = run_stage(k, f, ctx);
    for (int d = 0; d < k; ++d) {
      f = run_deconv(ups_[d], f);
      f = fuse_skip(fuses_[d], f, skips[k - 1 - d]);
      f = run_stage(k + 1 + d, f, ctx);
    }

    const int Hp = f.shape[1], Wp = f.shape[2];
    Tensor<T> r = reshape(f, {f.shape[0], Hp * Wp});
    r = add_channel_bias(matmul(final_.w, r), final_.b);
    r = reshape(r, {3, Hp, Wp});
    if (ctx.H2 != H || ctx.W2 != W)
      r = gather_flat(r, crop_index(3, ctx.H2, ctx.W2, H, W), {3, H, W});
    return r;
  }

 private:
  ConvP<T> embed_;
  std::vector<std::vector<BlockP<T>>> stages_;
  std::vector<ConvP<T>> downs_;
  std::vector<DeconvP<T>> ups_;
  std::vector<LinearP<T>> fuses_;  // 1x1 conv after skip concatenation
  LinearP<T> final_;               // 1x1 residual head, zero-initialized

  // gather indices are pure functions of geometry; cache them across calls
  // (behind a pointer so the model stays movable despite the mutex)
  struct IndexCache {
    std::map<std::array<int64_t, 8>, IndexPtr> entries;
    std::mutex mu;
  };
  std::unique_ptr<IndexCache> cache_ = std::make_unique<IndexCache>();

  IndexPtr cached(const std::array<int64_t, 8>& key,
                  const std::function<IndexPtr()>& build) const {
    std::lock_guard<std::mutex> lock(cache_->mu);
    auto it = cache_->entries.find(key);
    if (it != cache_->entries.end()) return it->second;
    IndexPtr idx = build();
    cache_->entries.emplace(key, idx);
    return idx;
  }

  IndexPtr pad_index(int C, int H, int W, int H2, int W2) const {
    return cached({0, C, H, W, H2, W2, 0, 0}, [&] {
      return reflect_pad_indices(C, H, W, H2, W2);
    });
  }
  IndexPtr crop_index(int C, int H2, int W2, int H, int W) const {
    return cached({1, C, H2, W2, H, W, 0, 0},
                  [&] { return crop_indices(C, H2, W2, H, W); });
  }

  IndexPtr im2col_index(int C, int H, int W, int kk, int stride,
                        int pad) const {
    return cached({2, C, H, W, kk, stride, pad, 0}, [&] {
      const int Ho = (H + 2 * pad - kk) / stride + 1;
      const int Wo = (W + 2 * pad - kk) / stride + 1;
      auto idx = std::make_shared<IndexVec>((size_t)C * kk * kk * Ho * Wo);
      int64_t q = 0;
      for (int c = 0; c < C; ++c)
        for (int u = 0; u < kk; ++u)
          for (int v = 0; v < kk; ++v)
            for (int oi = 0; oi < Ho; ++oi) {
              const int ii = oi * stride + u - pad;
              for (int oj = 0; oj < Wo; ++oj, ++q) {
                const int jj = oj * stride + v - pad;
                (*idx)[q] = (ii < 0 || ii >= H || jj < 0 || jj >= W)
                                ? -1
                                : (int64_t)c * H * W + (int64_t)ii * W + jj;
              }
            }
      return IndexPtr(idx);
    });
  }

  // fractionally-strided gather for the 4x4/stride-2/pad-1 transposed conv:
  // output (oi, oj) tap (u, v) reads input ((oi+1-u)/2, (oj+1-v)/2) when
  // those divisions are exact and in range
  IndexPtr deconv_index(int C, int H, int W) const {
    return cached({3, C, H, W, 0, 0, 0, 0}, [&] {
      const int Ho = 2 * H, Wo = 2 * W;
      auto idx = std::make_shared<IndexVec>((size_t)C * 16 * Ho * Wo);
      int64_t q = 0;
      for (int c = 0; c < C; ++c)
        for (int u = 0; u < 4; ++u)
          for (int v = 0; v < 4; ++v)
            for (int oi = 0; oi < Ho; ++oi) {
              const int ii2 = oi + 1 - u;
              const bool iok = ii2 >= 0 && ii2 % 2 == 0 && ii2 / 2 < H;
              for (int oj = 0; oj < Wo; ++oj, ++q) {
                const int jj2 = oj + 1 - v;
                const bool jok = jj2 >= 0 && jj2 % 2 == 0 && jj2 / 2 < W;
                (*idx)[q] = (iok && jok) ? (int64_t)c * H * W +
                                               (int64_t)(ii2 / 2) * W + jj2 / 2
                                         : -1;
              }
            }
      return IndexPtr(idx);
    });
  }

  Tensor<T> run_conv(const ConvP<T>& cp, const Tensor<T>& x) const {
    const int C = x.shape[0], H = x.shape[1], W = x.shape[2];
    if (C != cp.in) throw UsageError("conv: channel mismatch");
    const int Ho = (H + 2 * cp.pad - cp.k) / cp.stride + 1;
    const int Wo = (W + 2 * cp.pad - cp.k) / cp.stride + 1;
    Tensor<T> col = gather_flat(x, im2col_index(C, H, W, cp.k, cp.stride,
                                                cp.pad),
                                {C * cp.k * cp.k, Ho * Wo});
    Tensor<T> y = add_channel_bias(matmul(cp.w, col), cp.b);
    return reshape(y, {cp.out_ch, Ho, Wo});
  }

  Tensor<T> run_deconv(const DeconvP<T>& dp, const Tensor<T>& x) const {
    const int C = x.shape[0], H = x.shape[1], W = x.shape[2];
    if (C != dp.in) throw UsageError("deconv: channel mismatch");
    Tensor<T> col =
        gather_flat(x, deconv_index(C, H, W), {C * 16, 4 * H * W});
    Tensor<T> y = add_channel_bias(matmul(dp.w, col), dp.b);
    return reshape(y, {dp.out_ch, 2 * H, 2 * W});
  }

  Tensor<T> fuse_skip(const LinearP<T>& fuse, const Tensor<T>& up,
                      const Tensor<T>& skip) const {
    if (up.shape != skip.shape)
      throw UsageError("fuse_skip: decoder/skip shape mismatch");
    const int C = up.shape[0], H = up.shape[1], W = up.shape[2];
    Tensor<T> cat = concat_rows(reshape(up, {C, H * W}),
                                reshape(skip, {C, H * W}));
    Tensor<T> y = add_channel_bias(matmul(fuse.w, cat), fuse.b);
    return reshape(y, {C, H, W});
  }

  const std::array<ScanOrder, 4>& orders_for(
      BlockKind kind, const ScanContext::LevelOrders& lv) const {
    switch (kind) {
      case BlockKind::boundary_region:
        if (!lv.has_br) throw UsageError("forward: context lacks br orders");
        return lv.br;
      case BlockKind::local:
        if (!lv.has_local)
          throw UsageError("forward: context lacks local orders");
        return lv.local;
      default:
        if (!lv.has_cross)
          throw UsageError("forward: context lacks cross orders");
        return lv.cross;
    }
  }

  Tensor<T> mixer_forward(const MixerP<T>& m, const Tensor<T>& x,
                          const std::array<ScanOrder, 4>& orders) const {
    const int C = x.shape[0], H = x.shape[1], W = x.shape[2];
    const int L = H * W;
    const int d = m.out_proj.w.shape[1];
    Tensor<T> p = add_channel_bias(matmul(m.in_proj.w, reshape(x, {C, L})),
                                   m.in_proj.b);
    Tensor<T> s1 = reshape(narrow_rows(p, 0, d), {d, H, W});
    Tensor<T> gate = narrow_rows(p, d, 2 * d);

    s1 = add_channel_bias(conv2d_depthwise(s1, m.dw.w), m.dw.b);
    s1 = add_channel_bias(matmul(m.pw.w, reshape(s1, {d, L})), m.pw.b);
    s1 = reshape(silu(s1), {d, H, W});
    s1 = directional_ssm(s1, orders, m.ssm);
    s1 = layer_norm_channels(s1, m.norm.gamma, m.norm.beta);

    Tensor<T> fused = hadamard(reshape(s1, {d, L}), silu(gate));
    Tensor<T> y = add_channel_bias(matmul(m.out_proj.w, fused), m.out_proj.b);
    return reshape(y, {C, H, W});
  }

  Tensor<T> sffn_forward(const SffnP<T>& f, const Tensor<T>& x) const {
    const int C = x.shape[0], H = x.shape[1], W = x.shape[2];
    const int L = H * W;
    const int e = f.fc1.w.shape[0];
    Tensor<T> h = add_channel_bias(matmul(f.fc1.w, reshape(x, {C, L})),
                                   f.fc1.b);
    h = reshape(h, {e, H, W});
    h = silu(add_channel_bias(conv2d_depthwise(h, f.dw.w), f.dw.b));
    Tensor<T> y = add_channel_bias(matmul(f.fc2.w, reshape(h, {e, L})),
                                   f.fc2.b);
    return reshape(y, {C, H, W});
  }

  Tensor<T> run_stage(int s, Tensor<T> f, const ScanContext& ctx) const {
    const auto& lv = ctx.levels[cfg.level_of(s)];
    const auto& orders = orders_for(cfg.arrangement[s], lv);
    for (const BlockP<T>& blk : stages_[s]) {
      Tensor<T> n1 = layer_norm_channels(f, blk.norm1.gamma, blk.norm1.beta);
      f = add(f, mixer_forward(blk.mixer, n1, orders));
      Tensor<T> n2 = layer_norm_channels(f, blk.norm2.gamma, blk.norm2.beta);
      f = add(f, sffn_forward(blk.sffn, n2));
    }
    return f;
  }
};

// ---- image/tensor bridges --------------------------------------------------

template <typename T>
Tensor<T> tensor_from_image(const Image& img) {
  Tensor<T> t({img.c, img.h, img.w});
  for (int64_t i = 0; i < t.numel(); ++i) (*t.data)[i] = (T)img.chw[i];
  return t;
}

template <typename T>
Image image_from_tensor(const Tensor<T>& t, bool clamp01 = true) {
  if (t.shape.size() != 3) throw UsageError("image_from_tensor: need [C,H,W]");
  Image img(t.shape[0], t.shape[1], t.shape[2]);
  const T* p = t.ptr();
  for (size_t i = 0; i < img.chw.size(); ++i)
    img.chw[i] = clamp01 ? std::clamp((double)p[i], 0.0, 1.0) : (double)p[i];
  return img;
}

template <typename T>
struct ModelOutput {
  Tensor<T> residual;  // [3, H, W]
  Image restored;      // clamp(input + residual, 0, 1)
};

// Full single-image pipeline. The mask is used as given; denoise beforehand
// if it is noisy.
template <typename T>
ModelOutput<T> unet_forward(Model<T>& model, const Image& img,
                            const BinaryMask& mask) {
  if (img.c != 3) throw UsageError("unet_forward: need a 3-channel image");
  const ScanContext ctx = build_scan_context(mask, img.h, img.w, model.cfg);
  const Tensor<T> x = tensor_from_image<T>(img);
  Tensor<T> r = model.forward(x, ctx);
  Image restored = image_from_tensor(add(x, r), /*clamp01=*/true);
  return {std::move(r), std::move(restored)};
}

// ---- optimization -----------------------------------------------------------

// Decoupled weight decay Adam. State arrays are keyed by parameter order,
// which is stable for a given model.
struct AdamW {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8, weight_decay = 0.0;
  int64_t t = 0;
  std::vector<std::vector<double>> m, v;

  void step(std::vector<NamedParam<double>>& params, double lr) {
    if (m.empty()) {
      m.resize(params.size());
      v.resize(params.size());
      for (size_t i = 0; i < params.size(); ++i) {
        m[i].assign(params[i].tensor->numel(), 0.0);
        v[i].assign(params[i].tensor->numel(), 0.0);
      }
    }
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, (double)t);
    const double bc2 = 1.0 - std::pow(beta2, (double)t);
    for (size_t i = 0; i < params.size(); ++i) {
      Tensor<double>& p = *params[i].tensor;
      if (!p.tracked()) throw UsageError("AdamW: parameter lacks gradients");
      double* w = p.ptr();
      const double* g = p.gptr();
      for (int64_t j = 0; j < p.numel(); ++j) {
        m[i][j] = beta1 * m[i][j] + (1.0 - beta1) * g[j];
        v[i][j] = beta2 * v[i][j] + (1.0 - beta2) * g[j] * g[j];
        const double mhat = m[i][j] / bc1;
        const double vhat = v[i][j] / bc2;
        w[j] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * w[j]);
      }
    }
  }
};

// lr(0) = lr_start, lr(total-1) = lr_end, half-cosine in between.
inline double cosine_lr(int step, int total, double lr_start, double lr_end) {
  if (total <= 1) return lr_start;
  const double u = (double)step / (double)(total - 1);
  return lr_end + 0.5 * (lr_start - lr_end) * (1.0 + std::cos(M_PI * u));
}

// ---- training ---------------------------------------------------------------

struct TrainOptions {
  int steps = 2000;
  int batch_size = 2;
  double lr_start = 2e-4;
  double lr_end = 1e-6;
  double charbonnier_eps = 1e-3;
};

struct TraceRow {
  int step = 0;
  double lr = 0.0;
  double loss = 0.0;
};

struct TrainResult {
  std::vector<TraceRow> trace;
};

// Overfits the model on a fixed in-memory dataset: batches cycle through the
// samples round-robin, each step averages per-sample Charbonnier losses on
// the unclamped restored image. Deterministic for a fixed model seed.
inline TrainResult train_toy(Model<double>& model,
                             const std::vector<ToyTriplet>& data,
                             const TrainOptions& opt = {}) {
  if (data.empty()) throw UsageError("train_toy: empty dataset");
  if (opt.steps < 0 || opt.batch_size < 1)
    throw UsageError("train_toy: bad steps/batch size");
  for (const auto& s : data)
    if (s.shadowed.h > 128 || s.shadowed.w > 128)
      throw UsageError("train_toy: images larger than 128x128");

  std::vector<ScanContext> ctxs;
  std::vector<Tensor<double>> inputs, targets;
  for (const auto& s : data) {
    ctxs.push_back(
        build_scan_context(s.mask, s.shadowed.h, s.shadowed.w, model.cfg));
    inputs.push_back(tensor_from_image<double>(s.shadowed));
    targets.push_back(tensor_from_image<double>(s.target));
  }

  model.set_requires_grad();
  auto params = model.named_parameters();
  AdamW opt_state;
  TrainResult result;
  result.trace.reserve(opt.steps);

  int64_t cursor = 0;
  for (int step = 0; step < opt.steps; ++step) {
    model.zero_grad();
    double loss_value = 0.0;
    for (int j = 0; j < opt.batch_size; ++j) {
      const size_t idx = (size_t)(cursor++ % (int64_t)data.size());
      Tape<double> tape;
      Tensor<double> r = model.forward(inputs[idx], ctxs[idx]);
      Tensor<double> restored = add(inputs[idx], r);
      Tensor<double> loss = charbonnier_loss(restored, targets[idx],
                                             opt.charbonnier_eps);
      Tensor<double> scaled = scale(loss, 1.0 / opt.batch_size);
      tape.backward(scaled);
      loss_value += scaled.scalar();
    }
    if (!std::isfinite(loss_value))
      throw DataError("train_toy: non-finite loss at step " +
                      std::to_string(step));
    const double lr = cosine_lr(step, opt.steps, opt.lr_start, opt.lr_end);
    opt_state.step(params, lr);
    result.trace.push_back({step, lr, loss_value});
  }
  return result;
}

}  // namespace sm
