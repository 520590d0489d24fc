#ifndef PYRABOX_TENSOR_HPP_
#define PYRABOX_TENSOR_HPP_

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "pyrabox/errors.hpp"

namespace pyrabox {

inline std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << "]";
  return os.str();
}

template <class T>
struct TensorStorage {
  std::vector<int> shape;
  std::vector<T> value;
  std::vector<T> grad;  // allocated lazily, same length as value
  bool requires_grad = false;
};

// Shared-ownership handle over a dense N-d array. Copies alias the same
// storage; ops produce fresh storage.
template <class T>
class Tensor {
public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(std::vector<int> shape, bool requires_grad = false) {
    int64_t n = 1;
    for (int d : shape) {
      if (d <= 0) throw contract_error("tensor extent must be positive, got shape " + shape_str(shape));
      n *= d;
    }
    s_ = std::make_shared<TensorStorage<T>>();
    s_->shape = std::move(shape);
    s_->value.assign(static_cast<size_t>(n), T(0));
    s_->requires_grad = requires_grad;
  }

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
    return Tensor(std::move(shape), requires_grad);
  }

  static Tensor full(std::vector<int> shape, T v, bool requires_grad = false) {
    Tensor t(std::move(shape), requires_grad);
    std::fill(t.s_->value.begin(), t.s_->value.end(), v);
    return t;
  }

  static Tensor from(std::vector<int> shape, std::vector<T> values, bool requires_grad = false) {
    Tensor t(std::move(shape), requires_grad);
    if (values.size() != t.s_->value.size())
      throw contract_error("value count does not match shape " + shape_str(t.shape()));
    t.s_->value = std::move(values);
    return t;
  }

  static Tensor scalar(T v, bool requires_grad = false) {
    return from({1}, {v}, requires_grad);
  }

  template <class Rng>
  static Tensor randn(std::vector<int> shape, Rng& rng, T stddev = T(1), bool requires_grad = false) {
    Tensor t(std::move(shape), requires_grad);
    std::normal_distribution<double> dist(0.0, static_cast<double>(stddev));
    for (auto& v : t.s_->value) v = static_cast<T>(dist(rng));
    return t;
  }

  // Xavier fan-average uniform init for conv weights shaped (out, in, kh, kw).
  template <class Rng>
  static Tensor xavier(std::vector<int> shape, Rng& rng) {
    Tensor t(shape, true);
    int64_t fan_in = 1, fan_out = 1;
    if (shape.size() >= 2) {
      int64_t rf = 1;
      for (size_t i = 2; i < shape.size(); ++i) rf *= shape[i];
      fan_in = static_cast<int64_t>(shape[1]) * rf;
      fan_out = static_cast<int64_t>(shape[0]) * rf;
    }
    double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (auto& v : t.s_->value) v = static_cast<T>(dist(rng));
    return t;
  }

  bool defined() const { return static_cast<bool>(s_); }
  const std::vector<int>& shape() const { return s_->shape; }
  int rank() const { return static_cast<int>(s_->shape.size()); }
  int dim(int i) const { return s_->shape[static_cast<size_t>(i)]; }
  int64_t size() const { return static_cast<int64_t>(s_->value.size()); }

  T* data() { return s_->value.data(); }
  const T* data() const { return s_->value.data(); }
  std::vector<T>& values() { return s_->value; }
  const std::vector<T>& values() const { return s_->value; }

  T& operator[](int64_t i) { return s_->value[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return s_->value[static_cast<size_t>(i)]; }

  // 4-d accessor (n, c, h, w)
  T& at(int n, int c, int h, int w) {
    const auto& sh = s_->shape;
    return s_->value[((static_cast<size_t>(n) * sh[1] + c) * sh[2] + h) * sh[3] + w];
  }
  const T& at(int n, int c, int h, int w) const {
    const auto& sh = s_->shape;
    return s_->value[((static_cast<size_t>(n) * sh[1] + c) * sh[2] + h) * sh[3] + w];
  }

  bool requires_grad() const { return s_->requires_grad; }
  void set_requires_grad(bool b) { s_->requires_grad = b; }

  bool has_grad() const { return !s_->grad.empty(); }
  std::vector<T>& grad() {
    if (s_->grad.empty()) s_->grad.assign(s_->value.size(), T(0));
    return s_->grad;
  }
  void zero_grad() {
    if (!s_->grad.empty()) std::fill(s_->grad.begin(), s_->grad.end(), T(0));
  }

  bool same_storage(const Tensor& o) const { return s_ == o.s_; }

  bool all_finite() const {
    for (const T& v : s_->value)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

private:
  std::shared_ptr<TensorStorage<T>> s_;
};

// Tape of executed ops. Installs itself as the thread's active graph on
// construction; ops record their adjoint closures while one is active.
template <class T>
class Graph {
public:
  Graph() : prev_(current_) { current_ = this; }
  ~Graph() { current_ = prev_; }
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  static Graph* current() { return current_; }

  void record(std::function<void()> adjoint) { tape_.push_back(std::move(adjoint)); }
  size_t size() const { return tape_.size(); }

  // Seeds d(loss)/d(loss) = 1 and replays adjoints in reverse execution
  // order. The tape is consumed.
  void backward(Tensor<T>& loss) {
    if (loss.size() != 1) throw contract_error("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
    loss.grad()[0] = T(1);
    for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) (*it)();
    tape_.clear();
  }

private:
  std::vector<std::function<void()>> tape_;
  Graph* prev_ = nullptr;
  static thread_local Graph* current_;
};

template <class T>
thread_local Graph<T>* Graph<T>::current_ = nullptr;

// True when an op should participate in the active tape.
template <class T>
inline bool tracing(const Tensor<T>& a) {
  return Graph<T>::current() != nullptr && a.requires_grad();
}

}  // namespace pyrabox

#endif  // PYRABOX_TENSOR_HPP_
