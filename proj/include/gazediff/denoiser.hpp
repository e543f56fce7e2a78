#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "gazediff/conditioning.hpp"
#include "gazediff/diffusion.hpp"

namespace gazediff {

/// A named parameter tensor with its Adam moments. Values are kept float32-representable
/// between optimizer steps so checkpoints round-trip exactly.
struct Tensor {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> value;
  std::vector<double> m;
  std::vector<double> v;

  std::size_t size() const { return value.size(); }
};

struct Gradients {
  std::vector<std::vector<double>> g;

  void zero();
  void add(const Gradients& other);
  void scale(double s);
};

class ParameterSet {
 public:
  /// Registers a zero-filled tensor; names must be unique. Returns its index.
  std::size_t add(const std::string& name, std::vector<std::size_t> shape);

  std::size_t count() const { return tensors_.size(); }
  std::size_t scalar_count() const;
  Tensor& at(std::size_t i) { return tensors_[i]; }
  const Tensor& at(std::size_t i) const { return tensors_[i]; }
  std::size_t index(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const double* value(std::size_t i) const { return tensors_[i].value.data(); }

  std::uint64_t step() const { return step_; }
  void set_step(std::uint64_t s) { step_ = s; }

  Gradients zero_gradients() const;
  /// Indices sorted by tensor name (checkpoint order).
  std::vector<std::size_t> sorted_indices() const;

  friend bool operator==(const ParameterSet& a, const ParameterSet& b);

 private:
  std::vector<Tensor> tensors_;
  std::map<std::string, std::size_t> index_;
  std::uint64_t step_ = 0;
};

struct DenoiserConfig {
  std::size_t in_channels = 3;
  std::size_t base_width = 32;
  std::vector<std::size_t> level_mults{1, 2, 4};
  /// Levels carrying self-attention; empty means the coarsest level only.
  std::vector<std::size_t> attn_levels;
  std::size_t cond_dim = 16;
  std::size_t heads = 4;
  std::size_t window_len = 135;

  std::size_t levels() const { return level_mults.size(); }
  std::size_t width(std::size_t level) const { return base_width * level_mults[level]; }
  bool has_self_attention(std::size_t level) const;
  /// Internal sequence length: window_len rounded up to a multiple of 2^(levels-1).
  std::size_t padded_len() const;
  std::size_t time_dim() const { return 2 * base_width; }
  void validate() const;
};

/// Transformer-style timestep embedding: sin at even, cos at odd components.
std::vector<double> sinusoidal_embed(double t, std::size_t dim);

/// Fixed positional tag of a conditioning token (row, col, time), `dim` components in [-1,1].
std::vector<double> token_tag(double row, double col, double time, std::size_t dim);

class ForwardCache {
 public:
  ForwardCache();
  ~ForwardCache();
  ForwardCache(ForwardCache&&) noexcept;
  ForwardCache& operator=(ForwardCache&&) noexcept;

  struct Impl;
  Impl& impl() { return *impl_; }
  const Impl* get() const { return impl_.get(); }

 private:
  std::unique_ptr<Impl> impl_;
};

struct InputGradients {
  std::vector<double> input;   // window_len x in_channels, position-major
  std::vector<double> tokens;  // token count x 4 (value, row, col, time); only `value` is differentiable
};

/// 1D U-Net noise predictor: residual conv blocks with timestep injection, cross-attention to
/// conditioning tokens in every block, self-attention on configured levels, skip concatenation.
class Denoiser : public NoisePredictor {
 public:
  Denoiser(DenoiserConfig cfg, std::uint64_t init_seed);

  const DenoiserConfig& config() const { return cfg_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

  /// `input` is window_len x 3, position-major (x, y, history flag) with x, y in [0,1].
  /// Returns window_len x 2 predicted noise. Fills `cache` when given, for backward().
  std::vector<double> forward(std::span<const double> input, std::size_t t, std::span<const CondToken> tokens,
                              ForwardCache* cache = nullptr) const;

  /// Accumulates parameter gradients into `grads` and returns input gradients.
  InputGradients backward(const ForwardCache& cache, std::span<const double> dout, Gradients& grads) const;

  std::vector<double> predict_noise(std::span<const double> input, std::size_t t,
                                    std::span<const CondToken> tokens) const override {
    return forward(input, t, tokens, nullptr);
  }

  struct Layout;

 private:
  DenoiserConfig cfg_;
  ParameterSet params_;
  std::shared_ptr<const Layout> layout_;
};

/// Re-draws every parameter (including the zero-initialized output layer) from N(0, scale^2).
void randomize_parameters(ParameterSet& params, std::uint64_t seed, double scale);

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam; increments the step counter. Values and moments are rounded to float32.
void adam_step(ParameterSet& params, const Gradients& grads, const AdamConfig& cfg);

// GZDF checkpoint: "GZDF", u32 version=1, u32 tensor count, per tensor {u16 name length, name,
// u8 rank, rank x u32 dims, float32 data}, tensors by name, then u64 step counter.
// Adam moments are stored as extra tensors named "adam.m/<name>" and "adam.v/<name>".
void save_checkpoint(const ParameterSet& params, const std::filesystem::path& path);
/// Loads into `params`, whose names and shapes come from the model config. Throws DataError on
/// any mismatch or corruption, with the byte offset where it was detected.
void load_checkpoint(ParameterSet& params, const std::filesystem::path& path);

struct CheckpointTensorInfo {
  std::string name;
  std::vector<std::uint32_t> dims;
  float min = 0.0f;
  float max = 0.0f;
  bool finite = true;
};

struct CheckpointInfo {
  std::vector<CheckpointTensorInfo> tensors;
  std::uint64_t step = 0;
};

/// Structural parse without a model config, for inspection.
CheckpointInfo read_checkpoint_info(const std::filesystem::path& path);

}  // namespace gazediff
