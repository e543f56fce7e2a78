#include "layers.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>

#include "gazediff/error.hpp"

#define EIGEN_DONT_PARALLELIZE
#include <Eigen/Core>

namespace gazediff::nn {

Mat transpose(const Mat& m) {
  Mat t(m.cols, m.rows);
  for (std::size_t r = 0; r < m.rows; ++r)
    for (std::size_t c = 0; c < m.cols; ++c) t.at(c, r) = m.at(r, c);
  return t;
}

void add_inplace(Mat& a, const Mat& b) {
  for (std::size_t i = 0; i < a.d.size(); ++i) a.d[i] += b.d[i];
}

Mat concat_channels(const Mat& a, const Mat& b) {
  Mat out(a.rows + b.rows, a.cols);
  std::copy(a.d.begin(), a.d.end(), out.d.begin());
  std::copy(b.d.begin(), b.d.end(), out.d.begin() + static_cast<long>(a.d.size()));
  return out;
}

void split_channels(const Mat& joined, std::size_t first, Mat& a, Mat& b) {
  a = Mat(first, joined.cols);
  b = Mat(joined.rows - first, joined.cols);
  std::copy(joined.d.begin(), joined.d.begin() + static_cast<long>(a.d.size()), a.d.begin());
  std::copy(joined.d.begin() + static_cast<long>(a.d.size()), joined.d.end(), b.d.begin());
}

namespace {
inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
}  // namespace

Mat silu(const Mat& x) {
  Mat y(x.rows, x.cols);
  for (std::size_t i = 0; i < x.d.size(); ++i) y.d[i] = x.d[i] * sigmoid(x.d[i]);
  return y;
}

Mat silu_backward(const Mat& x, const Mat& dy) {
  Mat dx(x.rows, x.cols);
  for (std::size_t i = 0; i < x.d.size(); ++i) {
    const double s = sigmoid(x.d[i]);
    dx.d[i] = dy.d[i] * s * (1.0 + x.d[i] * (1.0 - s));
  }
  return dx;
}

Mat upsample2(const Mat& x) {
  Mat y(x.rows, x.cols * 2);
  for (std::size_t r = 0; r < x.rows; ++r)
    for (std::size_t c = 0; c < x.cols; ++c) y.at(r, 2 * c) = y.at(r, 2 * c + 1) = x.at(r, c);
  return y;
}

Mat upsample2_backward(const Mat& dy) {
  Mat dx(dy.rows, dy.cols / 2);
  for (std::size_t r = 0; r < dx.rows; ++r)
    for (std::size_t c = 0; c < dx.cols; ++c) dx.at(r, c) = dy.at(r, 2 * c) + dy.at(r, 2 * c + 1);
  return dx;
}

// ---------------------------------------------------------------------------

Conv1d Conv1d::make(ParameterSet& ps, const std::string& name, std::size_t cin, std::size_t cout, std::size_t kernel,
                    std::size_t stride, std::size_t pad) {
  Conv1d c;
  c.weight = ps.add(name + ".weight", {cout, cin, kernel});
  c.bias = ps.add(name + ".bias", {cout});
  c.cin = cin;
  c.cout = cout;
  c.kernel = kernel;
  c.stride = stride;
  c.pad = pad;
  return c;
}

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<RowMat>;
using CMapM = Eigen::Map<const RowMat>;

MapM map(Mat& m) { return MapM(m.d.data(), static_cast<Eigen::Index>(m.rows), static_cast<Eigen::Index>(m.cols)); }
CMapM map(const Mat& m) {
  return CMapM(m.d.data(), static_cast<Eigen::Index>(m.rows), static_cast<Eigen::Index>(m.cols));
}
CMapM map(const double* p, std::size_t rows, std::size_t cols) {
  return CMapM(p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
MapM map(double* p, std::size_t rows, std::size_t cols) {
  return MapM(p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

}  // namespace

// Destinations of the products below are freshly zeroed Mats, so products accumulate with +=.

// Column matrix [cin*kernel][out_len]: row i*kernel + k holds x[i][p*stride + k - pad], zero outside.
Mat Conv1d::im2col(const Mat& x) const {
  const std::size_t len = x.cols;
  const std::size_t out_l = out_len(len);
  Mat c(cin * kernel, out_l);
  for (std::size_t i = 0; i < cin; ++i) {
    const double* xr = x.row(i);
    for (std::size_t k = 0; k < kernel; ++k) {
      double* cr = c.row(i * kernel + k);
      for (std::size_t p = 0; p < out_l; ++p) {
        const long idx = static_cast<long>(p * stride + k) - static_cast<long>(pad);
        if (idx >= 0 && idx < static_cast<long>(len)) cr[p] = xr[idx];
      }
    }
  }
  return c;
}

bool Conv1d::pointwise() const { return kernel == 1 && stride == 1 && pad == 0; }

Mat Conv1d::forward(const ParameterSet& ps, const Mat& x) const {
  const std::size_t out_l = out_len(x.cols);
  const double* b = ps.value(bias);
  Mat y(cout, out_l);
  const auto w = map(ps.value(weight), cout, cin * kernel);
  if (pointwise())
    map(y).noalias() += w * map(x);
  else
    map(y).noalias() += w * map(im2col(x));
  for (std::size_t o = 0; o < cout; ++o) {
    double* yr = y.row(o);
    for (std::size_t p = 0; p < out_l; ++p) yr[p] += b[o];
  }
  return y;
}

Mat Conv1d::backward(const ParameterSet& ps, const Mat& x, const Mat& dy, Gradients& g) const {
  const std::size_t len = x.cols;
  const std::size_t out_l = dy.cols;
  const auto w = map(ps.value(weight), cout, cin * kernel);
  auto gw = map(g.g[weight].data(), cout, cin * kernel);
  double* gb = g.g[bias].data();
  for (std::size_t o = 0; o < cout; ++o) gb[o] += sum(dy.row(o), out_l);
  if (pointwise()) {
    gw.noalias() += map(dy) * map(x).transpose();
    Mat dx(cin, len);
    map(dx).noalias() += w.transpose() * map(dy);
    return dx;
  }
  const Mat col = im2col(x);
  gw.noalias() += map(dy) * map(col).transpose();
  Mat dcol(cin * kernel, out_l);
  map(dcol).noalias() += w.transpose() * map(dy);
  Mat dx(cin, len);
  for (std::size_t i = 0; i < cin; ++i) {
    double* dxr = dx.row(i);
    for (std::size_t k = 0; k < kernel; ++k) {
      const double* cr = dcol.row(i * kernel + k);
      for (std::size_t p = 0; p < out_l; ++p) {
        const long idx = static_cast<long>(p * stride + k) - static_cast<long>(pad);
        if (idx >= 0 && idx < static_cast<long>(len)) dxr[idx] += cr[p];
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------

Linear Linear::make(ParameterSet& ps, const std::string& name, std::size_t in, std::size_t out) {
  Linear l;
  l.weight = ps.add(name + ".weight", {out, in});
  l.bias = ps.add(name + ".bias", {out});
  l.in = in;
  l.out = out;
  return l;
}

Mat Linear::forward(const ParameterSet& ps, const Mat& x) const {
  const double* b = ps.value(bias);
  Mat y(x.rows, out);
  map(y).noalias() += map(x) * map(ps.value(weight), out, in).transpose();
  for (std::size_t r = 0; r < x.rows; ++r) {
    double* yr = y.row(r);
    for (std::size_t o = 0; o < out; ++o) yr[o] += b[o];
  }
  return y;
}

Mat Linear::backward(const ParameterSet& ps, const Mat& x, const Mat& dy, Gradients& g) const {
  double* gb = g.g[bias].data();
  for (std::size_t r = 0; r < dy.rows; ++r) {
    const double* dyr = dy.row(r);
    for (std::size_t o = 0; o < out; ++o) gb[o] += dyr[o];
  }
  map(g.g[weight].data(), out, in).noalias() += map(dy).transpose() * map(x);
  Mat dx(x.rows, in);
  map(dx).noalias() += map(dy) * map(ps.value(weight), out, in);
  return dx;
}

// ---------------------------------------------------------------------------

std::size_t group_count(std::size_t channels) {
  for (std::size_t g : {8u, 4u, 2u}) {
    if (channels % g == 0 && channels / g >= 2) return g;
  }
  return 1;
}

GroupNorm GroupNorm::make(ParameterSet& ps, const std::string& name, std::size_t channels) {
  GroupNorm n;
  n.gamma = ps.add(name + ".gamma", {channels});
  n.beta = ps.add(name + ".beta", {channels});
  n.channels = channels;
  n.groups = group_count(channels);
  return n;
}

Mat GroupNorm::forward(const ParameterSet& ps, const Mat& x, Cache& cache) const {
  const std::size_t per = channels / groups;
  const std::size_t len = x.cols;
  const double count = static_cast<double>(per * len);
  const double* gamma_v = ps.value(gamma);
  const double* beta_v = ps.value(beta);
  cache.xhat = Mat(x.rows, len);
  cache.inv_std.assign(groups, 0.0);
  Mat y(x.rows, len);
  for (std::size_t g = 0; g < groups; ++g) {
    const auto base = g * per * len;
    const double mean = sum(x.d.data() + base, per * len) / count;
    double var = 0.0;
    for (std::size_t i = 0; i < per * len; ++i) {
      const double d = x.d[base + i] - mean;
      var += d * d;
    }
    var /= count;
    const double inv = 1.0 / std::sqrt(var + kEps);
    cache.inv_std[g] = inv;
    for (std::size_t c = g * per; c < (g + 1) * per; ++c) {
      for (std::size_t p = 0; p < len; ++p) {
        const double xh = (x.at(c, p) - mean) * inv;
        cache.xhat.at(c, p) = xh;
        y.at(c, p) = xh * gamma_v[c] + beta_v[c];
      }
    }
  }
  return y;
}

Mat GroupNorm::backward(const ParameterSet& ps, const Cache& cache, const Mat& dy, Gradients& g) const {
  const std::size_t per = channels / groups;
  const std::size_t len = dy.cols;
  const double count = static_cast<double>(per * len);
  const double* gamma_v = ps.value(gamma);
  double* gg = g.g[gamma].data();
  double* gbeta = g.g[beta].data();
  Mat dx(dy.rows, len);
  for (std::size_t grp = 0; grp < groups; ++grp) {
    double sum_dxh = 0.0, sum_dxh_xh = 0.0;
    for (std::size_t c = grp * per; c < (grp + 1) * per; ++c) {
      for (std::size_t p = 0; p < len; ++p) {
        const double d = dy.at(c, p);
        const double xh = cache.xhat.at(c, p);
        gg[c] += d * xh;
        gbeta[c] += d;
        const double dxh = d * gamma_v[c];
        sum_dxh += dxh;
        sum_dxh_xh += dxh * xh;
      }
    }
    const double inv = cache.inv_std[grp];
    for (std::size_t c = grp * per; c < (grp + 1) * per; ++c) {
      for (std::size_t p = 0; p < len; ++p) {
        const double dxh = dy.at(c, p) * gamma_v[c];
        dx.at(c, p) = inv / count * (count * dxh - sum_dxh - cache.xhat.at(c, p) * sum_dxh_xh);
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------

Attention Attention::make(ParameterSet& ps, const std::string& name, std::size_t query_dim, std::size_t kv_dim,
                          std::size_t width, std::size_t heads) {
  if (heads == 0 || width % heads != 0) throw UsageError(name + ": attention width must divide into heads");
  Attention a;
  a.q = Linear::make(ps, name + ".q", query_dim, width);
  a.k = Linear::make(ps, name + ".k", kv_dim, width);
  a.v = Linear::make(ps, name + ".v", kv_dim, width);
  a.o = Linear::make(ps, name + ".o", width, query_dim);
  a.heads = heads;
  a.width = width;
  return a;
}

namespace {

// exp() that GCC can vectorize: Cody-Waite reduction plus a degree-12 Taylor polynomial,
// relative error below 3e-16 on [-708, 0].
inline double vexp(double x) {
  x = x < -708.0 ? -708.0 : x;
  const double shifter = 0x1.8p52;
  const double kd = x * 1.4426950408889634 + shifter;
  const double k = kd - shifter;
  const double r = (x - k * 6.93147180369123816490e-01) - k * 1.90821492927058770002e-10;
  double p = 1.0 / 479001600.0;
  p = p * r + 1.0 / 39916800.0;
  p = p * r + 1.0 / 3628800.0;
  p = p * r + 1.0 / 362880.0;
  p = p * r + 1.0 / 40320.0;
  p = p * r + 1.0 / 5040.0;
  p = p * r + 1.0 / 720.0;
  p = p * r + 1.0 / 120.0;
  p = p * r + 1.0 / 24.0;
  p = p * r + 1.0 / 6.0;
  p = p * r + 0.5;
  p = p * r + 1.0;
  p = p * r + 1.0;
  // the low mantissa bits of kd hold k; shifting k + 1023 into the exponent field gives 2^k
  const std::uint64_t bits = (std::bit_cast<std::uint64_t>(kd) + 1023) << 52;
  return p * std::bit_cast<double>(bits);
}

}  // namespace

Mat Attention::forward(const ParameterSet& ps, const Mat& xq, const Mat& xkv, Cache& cache) const {
  cache.xq = xq;
  cache.xkv = xkv;
  cache.qm = q.forward(ps, xq);
  cache.km = k.forward(ps, xkv);
  cache.vm = v.forward(ps, xkv);
  const std::size_t lq = xq.rows, lk = xkv.rows;
  const auto dh = static_cast<Eigen::Index>(width / heads);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  cache.attn_out = Mat(lq, width);
  cache.probs.assign(heads, Mat(lq, lk));
  const auto qm = map(cache.qm), km = map(cache.km), vm = map(cache.vm);
  auto out = map(cache.attn_out);
  for (std::size_t h = 0; h < heads; ++h) {
    const auto off = static_cast<Eigen::Index>(h) * dh;
    Mat& prob = cache.probs[h];
    map(prob).noalias() += scale * (qm.middleCols(off, dh) * km.middleCols(off, dh).transpose());
    for (std::size_t i = 0; i < lq; ++i) {
      double* pr = prob.row(i);
      const double mx = max_of(pr, lk);
      for (std::size_t j = 0; j < lk; ++j) pr[j] = vexp(pr[j] - mx);
      const double inv = 1.0 / sum(pr, lk);
      for (std::size_t j = 0; j < lk; ++j) pr[j] *= inv;
    }
    out.middleCols(off, dh).noalias() += map(prob) * vm.middleCols(off, dh);
  }
  return o.forward(ps, cache.attn_out);
}

void Attention::backward(const ParameterSet& ps, const Cache& cache, const Mat& dy, Gradients& g, Mat& dxq,
                         Mat& dxkv) const {
  const Mat d_attn = o.backward(ps, cache.attn_out, dy, g);
  const std::size_t lq = cache.qm.rows, lk = cache.km.rows;
  const auto dh = static_cast<Eigen::Index>(width / heads);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Mat dq(lq, width), dk(lk, width), dv(lk, width);
  Mat ds(lq, lk);
  const auto qm = map(cache.qm), km = map(cache.km), vm = map(cache.vm), da = map(d_attn);
  for (std::size_t h = 0; h < heads; ++h) {
    const auto off = static_cast<Eigen::Index>(h) * dh;
    const Mat& prob = cache.probs[h];
    map(dv).middleCols(off, dh).noalias() += map(prob).transpose() * da.middleCols(off, dh);
    map(ds).noalias() = da.middleCols(off, dh) * vm.middleCols(off, dh).transpose();
    for (std::size_t i = 0; i < lq; ++i) {
      const double* pr = prob.row(i);
      double* dr = ds.row(i);
      const double dpp = dot(dr, pr, lk);
      for (std::size_t j = 0; j < lk; ++j) dr[j] = pr[j] * (dr[j] - dpp) * scale;
    }
    map(dq).middleCols(off, dh).noalias() += map(ds) * km.middleCols(off, dh);
    map(dk).middleCols(off, dh).noalias() += map(ds).transpose() * qm.middleCols(off, dh);
  }
  dxq = q.backward(ps, cache.xq, dq, g);
  dxkv = k.backward(ps, cache.xkv, dk, g);
  add_inplace(dxkv, v.backward(ps, cache.xkv, dv, g));
}

}  // namespace gazediff::nn
