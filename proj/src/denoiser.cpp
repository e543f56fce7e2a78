#include "gazediff/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>

#include "gazediff/error.hpp"
#include "layers.hpp"

namespace gazediff {

using nn::Mat;

// ---------------------------------------------------------------------------
// ParameterSet / Gradients

std::size_t ParameterSet::add(const std::string& name, std::vector<std::size_t> shape) {
  if (index_.count(name)) throw UsageError("duplicate parameter name: " + name);
  Tensor t;
  t.name = name;
  const std::size_t n = std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  t.shape = std::move(shape);
  t.value.assign(n, 0.0);
  t.m.assign(n, 0.0);
  t.v.assign(n, 0.0);
  tensors_.push_back(std::move(t));
  index_[name] = tensors_.size() - 1;
  return tensors_.size() - 1;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.size();
  return n;
}

std::size_t ParameterSet::index(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw UsageError("unknown parameter: " + name);
  return it->second;
}

Gradients ParameterSet::zero_gradients() const {
  Gradients g;
  g.g.reserve(tensors_.size());
  for (const auto& t : tensors_) g.g.emplace_back(t.size(), 0.0);
  return g;
}

std::vector<std::size_t> ParameterSet::sorted_indices() const {
  std::vector<std::size_t> out;
  out.reserve(index_.size());
  for (const auto& [name, idx] : index_) out.push_back(idx);
  return out;
}

bool operator==(const ParameterSet& a, const ParameterSet& b) {
  if (a.step_ != b.step_ || a.tensors_.size() != b.tensors_.size()) return false;
  for (std::size_t i = 0; i < a.tensors_.size(); ++i) {
    const auto& x = a.tensors_[i];
    const auto& y = b.tensors_[i];
    if (x.name != y.name || x.shape != y.shape || x.value != y.value || x.m != y.m || x.v != y.v) return false;
  }
  return true;
}

void Gradients::zero() {
  for (auto& t : g) std::fill(t.begin(), t.end(), 0.0);
}

void Gradients::add(const Gradients& other) {
  for (std::size_t i = 0; i < g.size(); ++i)
    for (std::size_t j = 0; j < g[i].size(); ++j) g[i][j] += other.g[i][j];
}

void Gradients::scale(double s) {
  for (auto& t : g)
    for (auto& v : t) v *= s;
}

// ---------------------------------------------------------------------------
// Config and embeddings

bool DenoiserConfig::has_self_attention(std::size_t level) const {
  if (attn_levels.empty()) return level + 1 == levels();
  return std::find(attn_levels.begin(), attn_levels.end(), level) != attn_levels.end();
}

std::size_t DenoiserConfig::padded_len() const {
  const std::size_t unit = std::size_t{1} << (levels() - 1);
  return (window_len + unit - 1) / unit * unit;
}

void DenoiserConfig::validate() const {
  if (in_channels != 3) throw UsageError("denoiser input must have 3 channels (x, y, history flag)");
  if (base_width == 0 || level_mults.empty()) throw UsageError("denoiser widths must be positive");
  if (levels() > 8) throw UsageError("denoiser supports at most 8 levels");
  for (auto m : level_mults)
    if (m == 0) throw UsageError("denoiser level multipliers must be positive");
  if (window_len == 0) throw UsageError("denoiser window length must be positive");
  if (cond_dim == 0) throw UsageError("cond_dim must be positive");
  if (heads == 0) throw UsageError("heads must be positive");
  for (std::size_t l = 0; l < levels(); ++l)
    if (width(l) % heads != 0)
      throw UsageError("level width " + std::to_string(width(l)) + " not divisible by " + std::to_string(heads) +
                       " heads");
  for (auto l : attn_levels)
    if (l >= levels()) throw UsageError("attention level " + std::to_string(l) + " does not exist");
}

std::vector<double> sinusoidal_embed(double t, std::size_t dim) {
  if (dim == 0 || dim % 2 != 0) throw UsageError("sinusoidal_embed: dim must be even and positive");
  if (t < 0) throw UsageError("sinusoidal_embed: step must be non-negative");
  std::vector<double> out(dim);
  for (std::size_t i = 0; i < dim / 2; ++i) {
    const double freq = std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(dim));
    out[2 * i] = std::sin(t / freq);
    out[2 * i + 1] = std::cos(t / freq);
  }
  return out;
}

std::vector<double> token_tag(double row, double col, double time, std::size_t dim) {
  std::vector<double> out(dim);
  const double coord[3] = {row, col, time};
  for (std::size_t j = 0; j < dim; ++j) {
    const double arg = std::numbers::pi * std::ldexp(coord[j % 3], static_cast<int>(j / 6));
    out[j] = ((j / 3) % 2 == 0) ? std::sin(arg) : std::cos(arg);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Network layout

namespace {

struct ResBlock {
  nn::GroupNorm gn1, gn2;
  nn::Conv1d conv1, conv2;
  nn::Linear temb;
  std::optional<nn::Conv1d> skip;

  static ResBlock make(ParameterSet& ps, const std::string& name, std::size_t cin, std::size_t cout,
                       std::size_t time_dim) {
    ResBlock b;
    b.gn1 = nn::GroupNorm::make(ps, name + ".gn1", cin);
    b.conv1 = nn::Conv1d::make(ps, name + ".conv1", cin, cout, 3, 1, 1);
    b.temb = nn::Linear::make(ps, name + ".temb", time_dim, cout);
    b.gn2 = nn::GroupNorm::make(ps, name + ".gn2", cout);
    b.conv2 = nn::Conv1d::make(ps, name + ".conv2", cout, cout, 3, 1, 1);
    if (cin != cout) b.skip = nn::Conv1d::make(ps, name + ".skip", cin, cout, 1, 1, 0);
    return b;
  }
};

struct ResCache {
  Mat x, a1, s1, a2, s2;
  nn::GroupNorm::Cache n1, n2;
};

struct AttnBlock {
  nn::GroupNorm gn;
  nn::Attention attn;
  bool cross = false;

  static AttnBlock make(ParameterSet& ps, const std::string& name, std::size_t channels, std::size_t kv_dim,
                        std::size_t heads, bool cross) {
    AttnBlock b;
    b.gn = nn::GroupNorm::make(ps, name + ".gn", channels);
    b.attn = nn::Attention::make(ps, name + ".attn", channels, cross ? kv_dim : channels, channels, heads);
    b.cross = cross;
    return b;
  }
};

struct AttnCache {
  bool active = false;
  nn::GroupNorm::Cache norm;
  nn::Attention::Cache attn;
};

}  // namespace

struct Denoiser::Layout {
  nn::Conv1d conv_in;
  nn::Linear time1, time2;
  std::size_t lift_weight = 0, lift_bias = 0;
  std::vector<ResBlock> enc_res;
  std::vector<AttnBlock> enc_cross;
  std::vector<std::optional<AttnBlock>> enc_self;
  std::vector<nn::Conv1d> down;
  ResBlock mid1, mid2;
  std::optional<AttnBlock> mid_self;
  std::vector<ResBlock> dec_res;
  std::vector<AttnBlock> dec_cross;
  std::vector<std::optional<AttnBlock>> dec_self;
  nn::GroupNorm gn_out;
  nn::Conv1d conv_out;
};

struct ForwardCache::Impl {
  std::size_t t = 0;
  std::size_t window_len = 0;
  Mat input;  // [3][Lpad], lifted
  Mat t_embed, t_hidden, temb, temb_act;
  Mat tokens_raw;  // [Lk][4]
  Mat token_emb;   // [Lk][d]
  Mat h_in;        // conv_in input
  std::vector<ResCache> enc_res;
  std::vector<AttnCache> enc_cross, enc_self;
  std::vector<Mat> down_in;
  ResCache mid1, mid2;
  AttnCache mid_self;
  std::vector<Mat> dec_up_in;  // pre-upsample input per level (empty at the coarsest)
  std::vector<std::size_t> dec_split;
  std::vector<ResCache> dec_res;
  std::vector<AttnCache> dec_cross, dec_self;
  Mat out_in, out_norm;
  nn::GroupNorm::Cache out_cache;
  Mat out_act;
};

ForwardCache::ForwardCache() : impl_(std::make_unique<Impl>()) {}
ForwardCache::~ForwardCache() = default;
ForwardCache::ForwardCache(ForwardCache&&) noexcept = default;
ForwardCache& ForwardCache::operator=(ForwardCache&&) noexcept = default;

namespace {

void init_parameters(ParameterSet& ps, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto ends_with = [](const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  for (std::size_t i = 0; i < ps.count(); ++i) {
    auto& t = ps.at(i);
    if (t.name.rfind("conv_out.", 0) == 0 || ends_with(t.name, ".bias") || ends_with(t.name, ".beta")) {
      std::fill(t.value.begin(), t.value.end(), 0.0);
    } else if (ends_with(t.name, ".gamma")) {
      std::fill(t.value.begin(), t.value.end(), 1.0);
    } else {
      std::size_t fan_in = 1;
      for (std::size_t d = 1; d < t.shape.size(); ++d) fan_in *= t.shape[d];
      const double std = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (auto& v : t.value) v = static_cast<float>(std * normal(rng));
    }
  }
}

void check_finite(const Mat& m, const char* where, std::size_t level = static_cast<std::size_t>(-1)) {
  for (double v : m.d) {
    if (!std::isfinite(v)) {
      std::string name(where);
      if (level != static_cast<std::size_t>(-1)) name += std::to_string(level);
      throw NumericalError("non-finite activation after layer '" + name + "'");
    }
  }
}

void add_time(Mat& h, const Mat& proj) {
  for (std::size_t c = 0; c < h.rows; ++c) {
    double* r = h.row(c);
    const double v = proj.d[c];
    for (std::size_t p = 0; p < h.cols; ++p) r[p] += v;
  }
}

Mat res_forward(const ParameterSet& ps, const ResBlock& b, const Mat& x, const Mat& temb_act, ResCache& c) {
  c.x = x;
  c.a1 = b.gn1.forward(ps, x, c.n1);
  c.s1 = nn::silu(c.a1);
  Mat h = b.conv1.forward(ps, c.s1);
  add_time(h, b.temb.forward(ps, temb_act));
  c.a2 = b.gn2.forward(ps, h, c.n2);
  c.s2 = nn::silu(c.a2);
  Mat out = b.conv2.forward(ps, c.s2);
  if (b.skip)
    nn::add_inplace(out, b.skip->forward(ps, x));
  else
    nn::add_inplace(out, x);
  return out;
}

Mat res_backward(const ParameterSet& ps, const ResBlock& b, const ResCache& c, const Mat& temb_act, const Mat& dout,
                 Gradients& g, Mat& d_temb_act) {
  const Mat ds2 = b.conv2.backward(ps, c.s2, dout, g);
  const Mat da2 = nn::silu_backward(c.a2, ds2);
  const Mat dh = b.gn2.backward(ps, c.n2, da2, g);
  Mat dproj(1, dh.rows);
  for (std::size_t ch = 0; ch < dh.rows; ++ch) {
    const double* r = dh.row(ch);
    double s = 0.0;
    for (std::size_t p = 0; p < dh.cols; ++p) s += r[p];
    dproj.d[ch] = s;
  }
  nn::add_inplace(d_temb_act, b.temb.backward(ps, temb_act, dproj, g));
  const Mat ds1 = b.conv1.backward(ps, c.s1, dh, g);
  const Mat da1 = nn::silu_backward(c.a1, ds1);
  Mat dx = b.gn1.backward(ps, c.n1, da1, g);
  if (b.skip)
    nn::add_inplace(dx, b.skip->backward(ps, c.x, dout, g));
  else
    nn::add_inplace(dx, dout);
  return dx;
}

Mat attn_forward(const ParameterSet& ps, const AttnBlock& b, const Mat& h, const Mat& token_emb, AttnCache& c) {
  if (b.cross && token_emb.rows == 0) {
    c.active = false;
    return h;
  }
  c.active = true;
  const Mat a = nn::transpose(b.gn.forward(ps, h, c.norm));
  const Mat y = b.attn.forward(ps, a, b.cross ? token_emb : a, c.attn);
  Mat out = h;
  nn::add_inplace(out, nn::transpose(y));
  return out;
}

Mat attn_backward(const ParameterSet& ps, const AttnBlock& b, const AttnCache& c, const Mat& dout, Gradients& g,
                  Mat& d_token_emb) {
  if (!c.active) return dout;
  Mat dxq, dxkv;
  b.attn.backward(ps, c.attn, nn::transpose(dout), g, dxq, dxkv);
  if (b.cross)
    nn::add_inplace(d_token_emb, dxkv);
  else
    nn::add_inplace(dxq, dxkv);
  Mat dx = dout;
  nn::add_inplace(dx, b.gn.backward(ps, c.norm, nn::transpose(dxq), g));
  return dx;
}

}  // namespace

Denoiser::Denoiser(DenoiserConfig cfg, std::uint64_t init_seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  auto layout = std::make_shared<Layout>();
  auto& ps = params_;
  const std::size_t levels = cfg_.levels();
  const std::size_t tdim = cfg_.time_dim();
  const std::size_t d = cfg_.cond_dim;

  layout->conv_in = nn::Conv1d::make(ps, "conv_in", cfg_.in_channels, cfg_.width(0), 3, 1, 1);
  layout->time1 = nn::Linear::make(ps, "time.fc1", cfg_.base_width, tdim);
  layout->time2 = nn::Linear::make(ps, "time.fc2", tdim, tdim);
  layout->lift_weight = ps.add("cond.lift.weight", {d});
  layout->lift_bias = ps.add("cond.lift.bias", {d});

  std::size_t prev = cfg_.width(0);
  for (std::size_t l = 0; l < levels; ++l) {
    const std::string name = "enc" + std::to_string(l);
    const std::size_t w = cfg_.width(l);
    layout->enc_res.push_back(ResBlock::make(ps, name + ".res", prev, w, tdim));
    layout->enc_cross.push_back(AttnBlock::make(ps, name + ".cross", w, d, cfg_.heads, true));
    if (l + 1 < levels && cfg_.has_self_attention(l))
      layout->enc_self.emplace_back(AttnBlock::make(ps, name + ".self", w, w, cfg_.heads, false));
    else
      layout->enc_self.emplace_back(std::nullopt);
    if (l + 1 < levels) layout->down.push_back(nn::Conv1d::make(ps, name + ".down", w, w, 3, 2, 1));
    prev = w;
  }
  const std::size_t wmid = cfg_.width(levels - 1);
  layout->mid1 = ResBlock::make(ps, "mid.res1", wmid, wmid, tdim);
  if (cfg_.has_self_attention(levels - 1))
    layout->mid_self = AttnBlock::make(ps, "mid.self", wmid, wmid, cfg_.heads, false);
  layout->mid2 = ResBlock::make(ps, "mid.res2", wmid, wmid, tdim);

  layout->dec_res.resize(levels);
  layout->dec_cross.resize(levels);
  layout->dec_self.resize(levels);
  prev = wmid;
  for (std::size_t l = levels; l-- > 0;) {
    const std::string name = "dec" + std::to_string(l);
    const std::size_t w = cfg_.width(l);
    layout->dec_res[l] = ResBlock::make(ps, name + ".res", prev + w, w, tdim);
    layout->dec_cross[l] = AttnBlock::make(ps, name + ".cross", w, d, cfg_.heads, true);
    if (l + 1 < levels && cfg_.has_self_attention(l))
      layout->dec_self[l] = AttnBlock::make(ps, name + ".self", w, w, cfg_.heads, false);
    prev = w;
  }
  layout->gn_out = nn::GroupNorm::make(ps, "out.gn", cfg_.width(0));
  layout->conv_out = nn::Conv1d::make(ps, "conv_out", cfg_.width(0), 2, 1, 1, 0);
  layout_ = std::move(layout);
  init_parameters(ps, init_seed);
}

std::vector<double> Denoiser::forward(std::span<const double> input, std::size_t t, std::span<const CondToken> tokens,
                                      ForwardCache* cache) const {
  const std::size_t n = cfg_.window_len;
  if (input.size() != n * cfg_.in_channels)
    throw UsageError("denoiser input has " + std::to_string(input.size()) + " values, expected " +
                     std::to_string(n * cfg_.in_channels));
  const auto& L = *layout_;
  const auto& ps = params_;
  const std::size_t levels = cfg_.levels();
  const std::size_t lpad = cfg_.padded_len();

  ForwardCache local;
  auto& c = cache ? cache->impl() : local.impl();
  c = ForwardCache::Impl{};
  c.t = t;
  c.window_len = n;

  // Affine lift of coordinates from [0,1] to [-1,1]; padded tail stays zero.
  c.input = Mat(cfg_.in_channels, lpad);
  for (std::size_t p = 0; p < n; ++p) {
    c.input.at(0, p) = 2.0 * input[3 * p] - 1.0;
    c.input.at(1, p) = 2.0 * input[3 * p + 1] - 1.0;
    c.input.at(2, p) = input[3 * p + 2];
  }

  const auto emb = sinusoidal_embed(static_cast<double>(t), cfg_.base_width);
  c.t_embed = Mat(1, emb.size());
  c.t_embed.d = emb;
  c.t_hidden = L.time1.forward(ps, c.t_embed);
  c.temb = L.time2.forward(ps, nn::silu(c.t_hidden));
  c.temb_act = nn::silu(c.temb);

  const std::size_t d = cfg_.cond_dim;
  c.tokens_raw = Mat(tokens.size(), 4);
  c.token_emb = Mat(tokens.size(), d);
  const double* lw = ps.value(L.lift_weight);
  const double* lb = ps.value(L.lift_bias);
  for (std::size_t j = 0; j < tokens.size(); ++j) {
    const auto& tok = tokens[j];
    c.tokens_raw.at(j, 0) = tok.value;
    c.tokens_raw.at(j, 1) = tok.row;
    c.tokens_raw.at(j, 2) = tok.col;
    c.tokens_raw.at(j, 3) = tok.time;
    const auto tag = token_tag(tok.row, tok.col, tok.time, d);
    for (std::size_t k = 0; k < d; ++k) c.token_emb.at(j, k) = lw[k] * tok.value + lb[k] + tag[k];
  }

  Mat h = L.conv_in.forward(ps, c.input);
  check_finite(h, "conv_in");
  c.enc_res.resize(levels);
  c.enc_cross.resize(levels);
  c.enc_self.resize(levels);
  c.down_in.resize(levels);
  std::vector<Mat> skips(levels);
  for (std::size_t l = 0; l < levels; ++l) {
    h = res_forward(ps, L.enc_res[l], h, c.temb_act, c.enc_res[l]);
    h = attn_forward(ps, L.enc_cross[l], h, c.token_emb, c.enc_cross[l]);
    if (L.enc_self[l]) h = attn_forward(ps, *L.enc_self[l], h, c.token_emb, c.enc_self[l]);
    check_finite(h, "enc", l);
    skips[l] = h;
    if (l + 1 < levels) {
      c.down_in[l] = h;
      h = L.down[l].forward(ps, h);
    }
  }
  h = res_forward(ps, L.mid1, h, c.temb_act, c.mid1);
  if (L.mid_self) h = attn_forward(ps, *L.mid_self, h, c.token_emb, c.mid_self);
  h = res_forward(ps, L.mid2, h, c.temb_act, c.mid2);
  check_finite(h, "mid");

  c.dec_res.resize(levels);
  c.dec_cross.resize(levels);
  c.dec_self.resize(levels);
  c.dec_up_in.resize(levels);
  c.dec_split.resize(levels);
  for (std::size_t l = levels; l-- > 0;) {
    if (l + 1 < levels) {
      c.dec_up_in[l] = h;
      h = nn::upsample2(h);
    }
    c.dec_split[l] = h.rows;
    h = nn::concat_channels(h, skips[l]);
    h = res_forward(ps, L.dec_res[l], h, c.temb_act, c.dec_res[l]);
    h = attn_forward(ps, L.dec_cross[l], h, c.token_emb, c.dec_cross[l]);
    if (L.dec_self[l]) h = attn_forward(ps, *L.dec_self[l], h, c.token_emb, c.dec_self[l]);
    check_finite(h, "dec", l);
  }
  c.out_in = h;
  c.out_norm = L.gn_out.forward(ps, h, c.out_cache);
  c.out_act = nn::silu(c.out_norm);
  const Mat y = L.conv_out.forward(ps, c.out_act);
  check_finite(y, "conv_out");

  std::vector<double> out(n * 2);
  for (std::size_t p = 0; p < n; ++p) {
    out[2 * p] = y.at(0, p);
    out[2 * p + 1] = y.at(1, p);
  }
  return out;
}

InputGradients Denoiser::backward(const ForwardCache& cache, std::span<const double> dout, Gradients& g) const {
  const auto* cp = cache.get();
  if (cp == nullptr || cp->window_len == 0) throw UsageError("denoiser backward called without a forward cache");
  const auto& c = *cp;
  const std::size_t n = cfg_.window_len;
  if (dout.size() != n * 2) throw UsageError("denoiser backward: output gradient shape mismatch");
  if (g.g.size() != params_.count()) throw UsageError("denoiser backward: gradient buffer does not match parameters");
  const auto& L = *layout_;
  const auto& ps = params_;
  const std::size_t levels = cfg_.levels();
  const std::size_t lpad = cfg_.padded_len();

  Mat dy(2, lpad);
  for (std::size_t p = 0; p < n; ++p) {
    dy.at(0, p) = dout[2 * p];
    dy.at(1, p) = dout[2 * p + 1];
  }
  Mat d_temb_act(1, c.temb_act.cols);
  Mat d_token_emb(c.token_emb.rows, c.token_emb.cols);

  Mat dh = L.conv_out.backward(ps, c.out_act, dy, g);
  dh = nn::silu_backward(c.out_norm, dh);
  dh = L.gn_out.backward(ps, c.out_cache, dh, g);

  std::vector<Mat> d_skips(levels);
  for (std::size_t l = 0; l < levels; ++l) {
    if (L.dec_self[l]) dh = attn_backward(ps, *L.dec_self[l], c.dec_self[l], dh, g, d_token_emb);
    dh = attn_backward(ps, L.dec_cross[l], c.dec_cross[l], dh, g, d_token_emb);
    dh = res_backward(ps, L.dec_res[l], c.dec_res[l], c.temb_act, dh, g, d_temb_act);
    Mat d_up;
    nn::split_channels(dh, c.dec_split[l], d_up, d_skips[l]);
    dh = (l + 1 < levels) ? nn::upsample2_backward(d_up) : d_up;
  }

  dh = res_backward(ps, L.mid2, c.mid2, c.temb_act, dh, g, d_temb_act);
  if (L.mid_self) dh = attn_backward(ps, *L.mid_self, c.mid_self, dh, g, d_token_emb);
  dh = res_backward(ps, L.mid1, c.mid1, c.temb_act, dh, g, d_temb_act);

  for (std::size_t l = levels; l-- > 0;) {
    if (l + 1 < levels) dh = L.down[l].backward(ps, c.down_in[l], dh, g);
    nn::add_inplace(dh, d_skips[l]);
    if (L.enc_self[l]) dh = attn_backward(ps, *L.enc_self[l], c.enc_self[l], dh, g, d_token_emb);
    dh = attn_backward(ps, L.enc_cross[l], c.enc_cross[l], dh, g, d_token_emb);
    dh = res_backward(ps, L.enc_res[l], c.enc_res[l], c.temb_act, dh, g, d_temb_act);
  }
  const Mat d_input = L.conv_in.backward(ps, c.input, dh, g);

  // Time MLP.
  const Mat d_temb = nn::silu_backward(c.temb, d_temb_act);
  const Mat hidden_act = nn::silu(c.t_hidden);
  const Mat d_hidden_act = L.time2.backward(ps, hidden_act, d_temb, g);
  L.time1.backward(ps, c.t_embed, nn::silu_backward(c.t_hidden, d_hidden_act), g);

  // Token lift.
  InputGradients out;
  const std::size_t d = cfg_.cond_dim;
  const double* lw = ps.value(L.lift_weight);
  double* glw = g.g[L.lift_weight].data();
  double* glb = g.g[L.lift_bias].data();
  out.tokens.assign(c.tokens_raw.rows * 4, 0.0);
  for (std::size_t j = 0; j < c.token_emb.rows; ++j) {
    const double value = c.tokens_raw.at(j, 0);
    double dv = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      const double de = d_token_emb.at(j, k);
      glw[k] += de * value;
      glb[k] += de;
      dv += de * lw[k];
    }
    out.tokens[4 * j] = dv;
  }

  out.input.assign(n * 3, 0.0);
  for (std::size_t p = 0; p < n; ++p) {
    out.input[3 * p] = 2.0 * d_input.at(0, p);
    out.input[3 * p + 1] = 2.0 * d_input.at(1, p);
    out.input[3 * p + 2] = d_input.at(2, p);
  }
  return out;
}

void randomize_parameters(ParameterSet& params, std::uint64_t seed, double scale) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, scale);
  for (std::size_t i = 0; i < params.count(); ++i) {
    auto& t = params.at(i);
    const bool is_gamma = t.name.size() > 6 && t.name.compare(t.name.size() - 6, 6, ".gamma") == 0;
    for (auto& v : t.value) v = (is_gamma ? 1.0 : 0.0) + normal(rng);
  }
}

void adam_step(ParameterSet& params, const Gradients& grads, const AdamConfig& cfg) {
  if (grads.g.size() != params.count()) throw UsageError("adam_step: gradient count does not match parameters");
  const std::uint64_t step = params.step() + 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < params.count(); ++i) {
    auto& t = params.at(i);
    const auto& g = grads.g[i];
    if (g.size() != t.size()) throw UsageError("adam_step: gradient shape mismatch for " + t.name);
    for (std::size_t j = 0; j < t.size(); ++j) {
      const double m = cfg.beta1 * t.m[j] + (1.0 - cfg.beta1) * g[j];
      const double v = cfg.beta2 * t.v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
      const double update = cfg.lr * (m / bc1) / (std::sqrt(v / bc2) + cfg.eps);
      t.m[j] = static_cast<float>(m);
      t.v[j] = static_cast<float>(v);
      t.value[j] = static_cast<float>(t.value[j] - update);
    }
  }
  params.set_step(step);
}

}  // namespace gazediff
