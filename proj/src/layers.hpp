#pragma once

// Building blocks of the denoiser. Every primitive has an exact backward pass;
// activations are double, parameters live in a ParameterSet and are addressed by index.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "gazediff/denoiser.hpp"

namespace gazediff::nn {

/// Dense row-major matrix. Convolutions use [channels][length], attention uses [length][channels].
struct Mat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> d;

  Mat() = default;
  Mat(std::size_t r, std::size_t c) : rows(r), cols(c), d(r * c, 0.0) {}

  double& at(std::size_t r, std::size_t c) { return d[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return d[r * cols + c]; }
  double* row(std::size_t r) { return d.data() + r * cols; }
  const double* row(std::size_t r) const { return d.data() + r * cols; }
};

// Reductions with eight fixed partial sums: vectorizable without reassociating flags, and the
// summation order depends only on n.
inline double dot(const double* a, const double* b, std::size_t n) {
  double acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::size_t j = 0;
  for (; j + 8 <= n; j += 8)
    for (std::size_t l = 0; l < 8; ++l) acc[l] += a[j + l] * b[j + l];
  double s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
  for (; j < n; ++j) s += a[j] * b[j];
  return s;
}

inline double sum(const double* a, std::size_t n) {
  double acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::size_t j = 0;
  for (; j + 8 <= n; j += 8)
    for (std::size_t l = 0; l < 8; ++l) acc[l] += a[j + l];
  double s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
  for (; j < n; ++j) s += a[j];
  return s;
}

inline double max_of(const double* a, std::size_t n) {
  double acc[8];
  for (std::size_t l = 0; l < 8; ++l) acc[l] = a[0];
  std::size_t j = 0;
  for (; j + 8 <= n; j += 8)
    for (std::size_t l = 0; l < 8; ++l) acc[l] = a[j + l] > acc[l] ? a[j + l] : acc[l];
  double m = acc[0];
  for (std::size_t l = 1; l < 8; ++l) m = acc[l] > m ? acc[l] : m;
  for (; j < n; ++j) m = a[j] > m ? a[j] : m;
  return m;
}

Mat transpose(const Mat& m);
void add_inplace(Mat& a, const Mat& b);
/// Stacks channels of `a` above channels of `b`; both [C][L] with equal L.
Mat concat_channels(const Mat& a, const Mat& b);
void split_channels(const Mat& joined, std::size_t first, Mat& a, Mat& b);

Mat silu(const Mat& x);
Mat silu_backward(const Mat& x, const Mat& dy);

/// Nearest-neighbour x2 along length for [C][L].
Mat upsample2(const Mat& x);
Mat upsample2_backward(const Mat& dy);

struct Conv1d {
  std::size_t weight = 0;  // [cout][cin][kernel]
  std::size_t bias = 0;    // [cout]
  std::size_t cin = 0, cout = 0, kernel = 3, stride = 1, pad = 1;

  static Conv1d make(ParameterSet& ps, const std::string& name, std::size_t cin, std::size_t cout,
                     std::size_t kernel, std::size_t stride, std::size_t pad);
  std::size_t out_len(std::size_t len) const { return (len + 2 * pad - kernel) / stride + 1; }
  Mat forward(const ParameterSet& ps, const Mat& x) const;
  Mat backward(const ParameterSet& ps, const Mat& x, const Mat& dy, Gradients& g) const;

 private:
  Mat im2col(const Mat& x) const;
  bool pointwise() const;
};

/// Applies y = x W^T + b to every row of x.
struct Linear {
  std::size_t weight = 0;  // [out][in]
  std::size_t bias = 0;    // [out]
  std::size_t in = 0, out = 0;

  static Linear make(ParameterSet& ps, const std::string& name, std::size_t in, std::size_t out);
  Mat forward(const ParameterSet& ps, const Mat& x) const;
  Mat backward(const ParameterSet& ps, const Mat& x, const Mat& dy, Gradients& g) const;
};

struct GroupNorm {
  std::size_t gamma = 0, beta = 0;
  std::size_t channels = 0, groups = 1;
  static constexpr double kEps = 1e-5;

  struct Cache {
    Mat xhat;
    std::vector<double> inv_std;
  };

  static GroupNorm make(ParameterSet& ps, const std::string& name, std::size_t channels);
  /// x is [C][L].
  Mat forward(const ParameterSet& ps, const Mat& x, Cache& cache) const;
  Mat backward(const ParameterSet& ps, const Cache& cache, const Mat& dy, Gradients& g) const;
};

/// Group count used for a channel width: largest of {8,4,2,1} dividing it with at least two channels per group.
std::size_t group_count(std::size_t channels);

/// Multi-head scaled dot-product attention with input and output projections.
struct Attention {
  Linear q, k, v, o;
  std::size_t heads = 1;
  std::size_t width = 0;

  struct Cache {
    Mat xq, xkv;        // projection inputs
    Mat qm, km, vm;     // projected, [L][width]
    Mat attn_out;       // concatenated head outputs before the output projection
    std::vector<Mat> probs;  // per head [Lq][Lk]
  };

  static Attention make(ParameterSet& ps, const std::string& name, std::size_t query_dim, std::size_t kv_dim,
                        std::size_t width, std::size_t heads);
  /// xq is [Lq][query_dim], xkv is [Lk][kv_dim]; result is [Lq][query_dim].
  Mat forward(const ParameterSet& ps, const Mat& xq, const Mat& xkv, Cache& cache) const;
  void backward(const ParameterSet& ps, const Cache& cache, const Mat& dy, Gradients& g, Mat& dxq, Mat& dxkv) const;
};

}  // namespace gazediff::nn
