#include "msp/tensor.hpp"

#include <atomic>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>
#include <thread>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace msp {

std::string Shape::str() const {
  std::ostringstream os;
  os << "(" << n << "," << c << "," << h << "," << w << ")";
  return os.str();
}

struct Tensor::Impl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
};

Tensor::Tensor(const Shape& s, double fill) : impl_(std::make_shared<Impl>()) {
  if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0)
    throw Error("Tensor: negative dimension in shape " + s.str());
  impl_->shape = s;
  impl_->data.assign(static_cast<std::size_t>(s.count()), fill);
}

Tensor Tensor::scalar(double v) {
  Tensor t(Shape{1, 1, 1, 1});
  t.data()[0] = v;
  return t;
}

const Shape& Tensor::shape() const {
  if (!impl_) throw Error("Tensor: use of undefined tensor");
  return impl_->shape;
}

std::int64_t Tensor::size() const { return shape().count(); }

double* Tensor::data() {
  if (!impl_) throw Error("Tensor: use of undefined tensor");
  return impl_->data.data();
}

const double* Tensor::data() const {
  if (!impl_) throw Error("Tensor: use of undefined tensor");
  return impl_->data.data();
}

double* Tensor::grad() {
  if (!impl_) throw Error("Tensor: use of undefined tensor");
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad.data();
}

const double* Tensor::grad_data() const {
  if (!impl_ || impl_->grad.empty()) return nullptr;
  return impl_->grad.data();
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

void Tensor::zero_grad() {
  if (impl_ && !impl_->grad.empty())
    std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

void Tensor::set_requires_grad(bool v) {
  if (!impl_) throw Error("Tensor: use of undefined tensor");
  impl_->requires_grad = v;
  if (v && impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
}

static std::int64_t flat_index(const Shape& s, std::int64_t n, std::int64_t c,
                               std::int64_t y, std::int64_t x) {
  return ((n * s.c + c) * s.h + y) * s.w + x;
}

double& Tensor::at(std::int64_t n, std::int64_t c, std::int64_t y,
                   std::int64_t x) {
  return data()[flat_index(shape(), n, c, y, x)];
}

double Tensor::at(std::int64_t n, std::int64_t c, std::int64_t y,
                  std::int64_t x) const {
  return data()[flat_index(shape(), n, c, y, x)];
}

double Tensor::value() const {
  if (size() != 1) throw Error("Tensor::value: tensor is not scalar, shape " + shape().str());
  return data()[0];
}

Tensor Tensor::clone() const {
  Tensor t(shape());
  std::memcpy(t.data(), data(), sizeof(double) * static_cast<std::size_t>(size()));
  return t;
}

void Tape::record(std::function<void()> fn) { ops_.push_back(std::move(fn)); }

void Tape::backward(const Tensor& loss) {
  if (!(loss.shape() == Shape{1, 1, 1, 1}))
    throw Error("Tape::backward: loss must be scalar, got shape " + loss.shape().str());
  if (ops_.empty()) throw Error("Tape::backward: tape is empty");
  if (consumed_)
    throw Error("Tape::backward: second backward without clearing the tape");
  consumed_ = true;
  const_cast<Tensor&>(loss).grad()[0] = 1.0;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
}

void Tape::clear() {
  ops_.clear();
  consumed_ = false;
}

Tensor& ModelParams::add(const std::string& name, Tensor t) {
  if (params_.count(name)) throw Error("ModelParams: duplicate parameter name " + name);
  t.set_requires_grad(true);
  auto [it, ok] = params_.emplace(name, std::move(t));
  (void)ok;
  return it->second;
}

Tensor& ModelParams::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw Error("ModelParams: unknown parameter " + name);
  return it->second;
}

const Tensor& ModelParams::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw Error("ModelParams: unknown parameter " + name);
  return it->second;
}

bool ModelParams::contains(const std::string& name) const {
  return params_.count(name) != 0;
}

void SgdOptimizer::step(ModelParams& params, double lr, double momentum,
                        double weight_decay) {
  if (lr < 0.0) throw Error("sgd_step: negative learning rate");
  if (momentum < 0.0 || momentum >= 1.0) throw Error("sgd_step: momentum out of [0,1)");
  for (auto& [name, p] : const_cast<std::map<std::string, Tensor>&>(params.all())) {
    if (!p.has_grad()) throw Error("sgd_step: missing gradient for parameter " + name);
    auto& v = velocity_[name];
    const std::size_t sz = static_cast<std::size_t>(p.size());
    if (v.size() != sz) v.assign(sz, 0.0);
    double* pd = p.data();
    double* g = p.grad();
    for (std::size_t i = 0; i < sz; ++i) {
      v[i] = momentum * v[i] - lr * (g[i] + weight_decay * pd[i]);
      pd[i] += v[i];
      g[i] = 0.0;
    }
  }
}

static std::atomic<bool> g_debug_checks{true};

bool debug_checks() { return g_debug_checks.load(std::memory_order_relaxed); }
void set_debug_checks(bool v) { g_debug_checks.store(v, std::memory_order_relaxed); }

void check_finite(const Tensor& t, const char* op) {
  if (!debug_checks()) return;
  const double* d = t.data();
  const std::int64_t n = t.size();
  for (std::int64_t i = 0; i < n; ++i) {
    if (!std::isfinite(d[i])) {
      std::ostringstream os;
      os << op << ": non-finite value at flat index " << i << " in tensor of shape "
         << t.shape().str();
      throw Error(os.str());
    }
  }
}

static void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

static std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw DataError("MSPT: truncated header");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_mspt(std::ostream& os, const Tensor& t) {
  os.write("MSPT", 4);
  const Shape& s = t.shape();
  write_u32(os, 4);
  write_u32(os, static_cast<std::uint32_t>(s.n));
  write_u32(os, static_cast<std::uint32_t>(s.c));
  write_u32(os, static_cast<std::uint32_t>(s.h));
  write_u32(os, static_cast<std::uint32_t>(s.w));
  // Host is little-endian; payload written raw.
  os.write(reinterpret_cast<const char*>(t.data()),
           static_cast<std::streamsize>(sizeof(double) * t.size()));
}

Tensor read_mspt(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "MSPT", 4) != 0)
    throw DataError("MSPT: bad magic bytes");
  std::uint32_t rank = read_u32(is);
  if (rank == 0 || rank > 4) throw DataError("MSPT: unsupported rank");
  std::int64_t dims[4] = {1, 1, 1, 1};
  // A rank-r tensor fills the trailing r axes of (n,c,h,w).
  for (std::uint32_t i = 0; i < rank; ++i) dims[4 - rank + i] = read_u32(is);
  Tensor t(Shape{dims[0], dims[1], dims[2], dims[3]});
  is.read(reinterpret_cast<char*>(t.data()),
          static_cast<std::streamsize>(sizeof(double) * t.size()));
  if (!is) throw DataError("MSPT: truncated payload");
  return t;
}

void fill_normal(Tensor& t, Rng& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  double* d = t.data();
  for (std::int64_t i = 0; i < t.size(); ++i) d[i] = dist(rng);
}

void fill_uniform(Tensor& t, Rng& rng, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  double* d = t.data();
  for (std::int64_t i = 0; i < t.size(); ++i) d[i] = dist(rng);
}

int worker_threads() {
  if (const char* env = std::getenv("MSP_THREADS")) {
    int n = std::atoi(env);
    if (n > 0) return n;
  }
  unsigned hc = std::thread::hardware_concurrency();
  return hc > 0 ? static_cast<int>(hc) : 1;
}

void configure_threads() {
#ifdef _OPENMP
  omp_set_num_threads(worker_threads());
#endif
}

}  // namespace msp
