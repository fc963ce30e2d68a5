#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace codecraid::nn {

// Channels x time, row-major.
struct Tensor {
  std::size_t channels = 0;
  std::size_t length = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::size_t c, std::size_t l, double fill = 0.0) : channels(c), length(l), data(c * l, fill) {}

  double& at(std::size_t c, std::size_t t) { return data[c * length + t]; }
  double at(std::size_t c, std::size_t t) const { return data[c * length + t]; }
  std::span<double> row(std::size_t c) { return {data.data() + c * length, length}; }
  std::span<const double> row(std::size_t c) const { return {data.data() + c * length, length}; }
};

class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor forward(const Tensor& x) const = 0;
  // Returns d(loss)/d(x) given the forward input x and d(loss)/d(output).
  // Parameter gradients are accumulated into param_grad unless it is empty.
  virtual Tensor backward(const Tensor& x, const Tensor& grad_out, std::span<double> param_grad) const = 0;
  virtual std::span<double> params() { return {}; }
  virtual std::span<const double> params() const { return {}; }
  virtual void init(std::mt19937_64& /*rng*/) {}
  virtual std::string describe() const = 0;
};

// 1-D convolution with explicit asymmetric padding.
class Conv1d final : public Layer {
 public:
  Conv1d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, std::size_t stride = 1, std::size_t pad_left = 0,
         std::size_t pad_right = 0);
  // "Same"-style padding for stride s and kernel k: output length = ceil(L / s)
  // when L is a multiple of s.
  static Conv1d strided(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, std::size_t stride);

  std::size_t output_length(std::size_t in_len) const;
  Tensor forward(const Tensor& x) const override;
  Tensor backward(const Tensor& x, const Tensor& grad_out, std::span<double> param_grad) const override;
  std::span<double> params() override { return p_; }
  std::span<const double> params() const override { return p_; }
  void init(std::mt19937_64& rng) override;
  std::string describe() const override;

 private:
  std::size_t cin_, cout_, k_, s_, pl_, pr_;
  std::vector<double> p_;  // weights [cout][cin][k] then bias [cout]
  const double* w() const { return p_.data(); }
  const double* b() const { return p_.data() + cout_ * cin_ * k_; }
};

// Transposed convolution producing exactly L * stride samples; the full
// output is cropped by (kernel - stride) / 2 on the left.
class ConvTranspose1d final : public Layer {
 public:
  ConvTranspose1d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, std::size_t stride);

  Tensor forward(const Tensor& x) const override;
  Tensor backward(const Tensor& x, const Tensor& grad_out, std::span<double> param_grad) const override;
  std::span<double> params() override { return p_; }
  std::span<const double> params() const override { return p_; }
  void init(std::mt19937_64& rng) override;
  std::string describe() const override;

 private:
  std::size_t cin_, cout_, k_, s_, crop_;
  std::vector<double> p_;  // weights [cin][cout][k] then bias [cout]
  const double* w() const { return p_.data(); }
  const double* b() const { return p_.data() + cin_ * cout_ * k_; }
};

class Elu final : public Layer {
 public:
  Tensor forward(const Tensor& x) const override;
  Tensor backward(const Tensor& x, const Tensor& grad_out, std::span<double> param_grad) const override;
  std::string describe() const override { return "elu"; }
};

class Tanh final : public Layer {
 public:
  Tensor forward(const Tensor& x) const override;
  Tensor backward(const Tensor& x, const Tensor& grad_out, std::span<double> param_grad) const override;
  std::string describe() const override { return "tanh"; }
};

// Per-call record of every layer input, needed for the backward sweep.
struct Tape {
  std::vector<Tensor> inputs;
};

// Flat gradient storage matching a Sequential's parameter layout.
using ParamGrads = std::vector<std::vector<double>>;

class Sequential {
 public:
  Sequential() = default;
  Sequential(Sequential&&) = default;
  Sequential& operator=(Sequential&&) = default;

  template <typename L, typename... Args>
  L& add(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }
  void add_layer(std::unique_ptr<Layer> layer) { layers_.push_back(std::move(layer)); }

  // tape may be null when no backward pass will follow.
  Tensor forward(const Tensor& x, Tape* tape = nullptr) const;
  // Backward over a tape recorded by forward(). grads may be null to skip
  // parameter gradients (they are then not computed at all).
  Tensor backward(const Tensor& grad_out, const Tape& tape, ParamGrads* grads = nullptr) const;

  void init(std::mt19937_64& rng);
  ParamGrads zero_grads() const;
  std::size_t num_params() const;
  std::vector<double> flat_params() const;
  void set_flat_params(std::span<const double> flat);
  std::vector<std::span<double>> param_spans();
  std::string describe() const;
  std::size_t size() const { return layers_.size(); }

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

// Adaptive-moment optimizer over one flat parameter block.
class Adam {
 public:
  struct Options {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  Adam() = default;
  Adam(std::size_t n, Options opt) : opt_(opt), m_(n, 0.0), v_(n, 0.0) {}

  // params -= lr * mhat / (sqrt(vhat) + eps). Throws on non-finite gradient.
  void step(std::span<double> params, std::span<const double> grad);

  std::size_t steps_taken() const { return t_; }
  std::span<const double> first_moment() const { return m_; }
  std::span<const double> second_moment() const { return v_; }
  const Options& options() const { return opt_; }
  void set_lr(double lr) { opt_.lr = lr; }

 private:
  Options opt_;
  std::vector<double> m_, v_;
  std::size_t t_ = 0;
};

// FNV-1a over the raw bytes of a parameter vector; used for frozen-weight
// checks and determinism fingerprints.
std::uint64_t checksum(std::span<const double> values);

}  // namespace codecraid::nn
