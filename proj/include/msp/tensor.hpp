#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace msp {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// File/format problems (bad image, malformed CSV, missing checkpoint).
struct DataError : Error {
  using Error::Error;
};

struct Shape {
  std::int64_t n = 0, c = 0, h = 0, w = 0;
  std::int64_t count() const { return n * c * h * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

// Dense 4-D double tensor with an optional gradient buffer. Copies are
// shallow: two Tensor values may share the same storage.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(const Shape& s, double fill = 0.0);
  static Tensor scalar(double v);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::int64_t size() const;

  double* data();
  const double* data() const;

  // Allocates the gradient buffer (zero-filled) on first use.
  double* grad();
  const double* grad_data() const;  // nullptr when absent
  bool has_grad() const;
  void zero_grad();

  bool requires_grad() const;
  void set_requires_grad(bool v);

  double& at(std::int64_t n, std::int64_t c, std::int64_t y, std::int64_t x);
  double at(std::int64_t n, std::int64_t c, std::int64_t y, std::int64_t x) const;
  double value() const;  // scalar tensors only

  Tensor clone() const;  // deep copy of the data (grad not copied)
  bool same_storage(const Tensor& o) const { return impl_ == o.impl_; }

 private:
  struct Impl;
  std::shared_ptr<Impl> impl_;
  friend class Tape;
};

// Records one backward closure per differentiable op, replayed in reverse.
class Tape {
 public:
  void record(std::function<void()> fn);
  // loss must be scalar (1,1,1,1); seeds its grad with 1 and replays.
  void backward(const Tensor& loss);
  void clear();
  std::size_t size() const { return ops_.size(); }
  bool empty() const { return ops_.empty(); }

 private:
  std::vector<std::function<void()>> ops_;
  bool consumed_ = false;
};

// Named map of trainable tensors.
class ModelParams {
 public:
  Tensor& add(const std::string& name, Tensor t);
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const;
  const std::map<std::string, Tensor>& all() const { return params_; }

 private:
  std::map<std::string, Tensor> params_;
};

// SGD with momentum; velocities are kept per parameter name.
class SgdOptimizer {
 public:
  // v <- momentum*v - lr*(grad + weight_decay*p); p <- p + v; grads zeroed.
  void step(ModelParams& params, double lr, double momentum,
            double weight_decay = 0.0);

 private:
  std::map<std::string, std::vector<double>> velocity_;
};

bool debug_checks();
void set_debug_checks(bool v);
void check_finite(const Tensor& t, const char* op);

// MSPT binary container: "MSPT", u32 LE rank, u32 LE dims, f64 LE payload.
void write_mspt(std::ostream& os, const Tensor& t);
Tensor read_mspt(std::istream& is);

using Rng = std::mt19937_64;
void fill_normal(Tensor& t, Rng& rng, double stddev);
void fill_uniform(Tensor& t, Rng& rng, double lo, double hi);

// MSP_THREADS env var, default hardware concurrency.
int worker_threads();
void configure_threads();

}  // namespace msp
