#pragma once

// Dense 64-bit float tensors with reverse-mode automatic differentiation.
//
// A Tape records every differentiable operation executed while it is active
// on the current thread; Tape::backward replays the records in reverse to
// accumulate gradients into tracked tensors. Tensors created outside any
// active tape are plain values, which doubles as the inference path.
//
// Summation inside matmul runs left to right over the inner dimension so
// that independently written oracles can match results bit for bit.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace non {

using Shape = std::vector<std::size_t>;

class DimensionError : public std::runtime_error {
 public:
  explicit DimensionError(const std::string& what) : std::runtime_error(what) {}
};

class TapeError : public std::runtime_error {
 public:
  explicit TapeError(const std::string& what) : std::runtime_error(what) {}
};

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // same length as values when tracked
  bool tracked = false;
  int node = -1;  // id of the producing op in the active tape, -1 for leaves
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(Shape shape, std::vector<double> values) {
    if (shape_numel(shape) != values.size()) {
      throw DimensionError("tensor values length " + std::to_string(values.size()) +
                           " does not match shape " + shape_str(shape));
    }
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->shape = std::move(shape);
    impl->values = std::move(values);
    return Tensor(std::move(impl));
  }

  static Tensor zeros(Shape shape) {
    std::size_t n = shape_numel(shape);
    return constant(std::move(shape), std::vector<double>(n, 0.0));
  }

  static Tensor full(Shape shape, double v) {
    std::size_t n = shape_numel(shape);
    return constant(std::move(shape), std::vector<double>(n, v));
  }

  static Tensor scalar(double v) { return constant({1}, {v}); }

  // A tracked leaf: gradients accumulate into it during backward.
  static Tensor parameter(Shape shape, std::vector<double> values) {
    Tensor t = constant(std::move(shape), std::move(values));
    t.impl_->tracked = true;
    t.impl_->grad.assign(t.impl_->values.size(), 0.0);
    return t;
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t size() const { return impl_->values.size(); }
  bool tracked() const { return impl_ && impl_->tracked; }
  int node() const { return impl_->node; }

  std::vector<double>& values() { return impl_->values; }
  const std::vector<double>& values() const { return impl_->values; }

  std::vector<double>& grad() {
    require_tracked();
    return impl_->grad;
  }
  const std::vector<double>& grad() const {
    require_tracked();
    return impl_->grad;
  }

  double scalar_value() const {
    if (size() != 1) {
      throw DimensionError("expected scalar, got shape " + shape_str(shape()));
    }
    return impl_->values[0];
  }

  double at(std::size_t i) const { return impl_->values[i]; }
  double at(std::size_t i, std::size_t j) const {
    return impl_->values[i * impl_->shape[1] + j];
  }

  void zero_grad() {
    if (tracked()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
  }

  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

  void require_tracked() const {
    if (!tracked()) throw TapeError("tensor has no gradient buffer (not tracked)");
  }

  std::shared_ptr<detail::TensorImpl> impl_;
};

class Tape {
 public:
  Tape() { stack().push_back(this); }
  ~Tape() { stack().pop_back(); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active() { return stack().empty() ? nullptr : stack().back(); }

  // Records one op. The output becomes tracked and gets the next node id;
  // append order is the topological order.
  void record(const std::vector<Tensor>& inputs, Tensor& output,
              std::function<void()> backward) {
    Record rec;
    rec.fn = std::move(backward);
    rec.output = output.impl();
    for (const Tensor& in : inputs) {
      rec.inputs.push_back(in.impl());
      rec.input_nodes.push_back(in.impl()->node);
    }
    output.impl()->tracked = true;
    output.impl()->node = static_cast<int>(records_.size());
    output.impl()->grad.assign(output.size(), 0.0);
    records_.push_back(std::move(rec));
  }

  // Seeds d(loss)/d(loss) = 1 and visits every record exactly once in
  // reverse order. Gradients accumulate; the caller zeroes them between steps.
  void backward(const Tensor& loss) {
    if (loss.size() != 1) {
      throw TapeError("backward requires a scalar loss, got shape " +
                      shape_str(loss.shape()));
    }
    if (!loss.tracked() || loss.impl()->node < 0 ||
        static_cast<std::size_t>(loss.impl()->node) >= records_.size() ||
        records_[static_cast<std::size_t>(loss.impl()->node)].output != loss.impl()) {
      throw TapeError("backward: loss was not produced on this tape");
    }
    loss.impl()->grad[0] += 1.0;
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
      it->fn();
    }
  }

  // Clears gradients of every tensor the tape touches (outputs and tracked
  // leaves). Used by replay checks; the training loop zeroes parameters itself.
  void zero_gradients() {
    for (auto& rec : records_) {
      std::fill(rec.output->grad.begin(), rec.output->grad.end(), 0.0);
      for (auto& in : rec.inputs) {
        if (in->tracked) std::fill(in->grad.begin(), in->grad.end(), 0.0);
      }
    }
  }

  std::size_t num_ops() const { return records_.size(); }

 private:
  struct Record {
    std::vector<std::shared_ptr<detail::TensorImpl>> inputs;
    std::vector<int> input_nodes;
    std::shared_ptr<detail::TensorImpl> output;
    std::function<void()> fn;
  };

  static std::vector<Tape*>& stack() {
    thread_local std::vector<Tape*> s;
    return s;
  }

  std::vector<Record> records_;
};

namespace detail {

inline bool recording(std::initializer_list<const Tensor*> ins) {
  if (Tape::active() == nullptr) return false;
  for (const Tensor* t : ins) {
    if (t->tracked()) return true;
  }
  return false;
}

inline double stable_sigmoid(double x) {
  if (x >= 0.0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Matrix products

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
  }
  const std::size_t r = a.shape()[0], k = a.shape()[1], c = b.shape()[1];
  std::vector<double> out(r * c, 0.0);
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) acc += av[i * k + t] * bv[t * c + j];
      out[i * c + j] = acc;
    }
  }
  Tensor y = Tensor::constant({r, c}, std::move(out));
  if (detail::recording({&a, &b})) {
    auto ai = a.impl(), bi = b.impl(), yi = y.impl();
    Tape::active()->record({a, b}, y, [ai, bi, yi, r, k, c]() {
      const auto& g = yi->grad;
      if (ai->tracked) {
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t t = 0; t < k; ++t) {
            double acc = 0.0;
            for (std::size_t j = 0; j < c; ++j) acc += g[i * c + j] * bi->values[t * c + j];
            ai->grad[i * k + t] += acc;
          }
      }
      if (bi->tracked) {
        for (std::size_t t = 0; t < k; ++t)
          for (std::size_t j = 0; j < c; ++j) {
            double acc = 0.0;
            for (std::size_t i = 0; i < r; ++i) acc += ai->values[i * k + t] * g[i * c + j];
            bi->grad[t * c + j] += acc;
          }
      }
    });
  }
  return y;
}

// Independent matmul per leading-axis slice: [s,r,k] x [s,k,c] -> [s,r,c].
inline Tensor batched_matmul(const Tensor& x, const Tensor& w) {
  if (x.rank() != 3 || w.rank() != 3 || x.shape()[0] != w.shape()[0] ||
      x.shape()[2] != w.shape()[1]) {
    throw DimensionError("batched_matmul: incompatible shapes " +
                         shape_str(x.shape()) + " and " + shape_str(w.shape()));
  }
  const std::size_t s = x.shape()[0], r = x.shape()[1], k = x.shape()[2],
                    c = w.shape()[2];
  std::vector<double> out(s * r * c, 0.0);
  const auto& xv = x.values();
  const auto& wv = w.values();
  for (std::size_t q = 0; q < s; ++q) {
    const double* xs = xv.data() + q * r * k;
    const double* ws = wv.data() + q * k * c;
    double* os = out.data() + q * r * c;
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) {
        double acc = 0.0;
        for (std::size_t t = 0; t < k; ++t) acc += xs[i * k + t] * ws[t * c + j];
        os[i * c + j] = acc;
      }
  }
  Tensor y = Tensor::constant({s, r, c}, std::move(out));
  if (detail::recording({&x, &w})) {
    auto xi = x.impl(), wi = w.impl(), yi = y.impl();
    Tape::active()->record({x, w}, y, [xi, wi, yi, s, r, k, c]() {
      for (std::size_t q = 0; q < s; ++q) {
        const double* g = yi->grad.data() + q * r * c;
        const double* xs = xi->values.data() + q * r * k;
        const double* ws = wi->values.data() + q * k * c;
        if (xi->tracked) {
          double* gx = xi->grad.data() + q * r * k;
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t t = 0; t < k; ++t) {
              double acc = 0.0;
              for (std::size_t j = 0; j < c; ++j) acc += g[i * c + j] * ws[t * c + j];
              gx[i * k + t] += acc;
            }
        }
        if (wi->tracked) {
          double* gw = wi->grad.data() + q * k * c;
          for (std::size_t t = 0; t < k; ++t)
            for (std::size_t j = 0; j < c; ++j) {
              double acc = 0.0;
              for (std::size_t i = 0; i < r; ++i) acc += xs[i * k + t] * g[i * c + j];
              gw[t * c + j] += acc;
            }
        }
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic

namespace detail {

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  }
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  Tensor y = Tensor::constant(a.shape(), std::move(out));
  if (detail::recording({&a, &b})) {
    auto ai = a.impl(), bi = b.impl(), yi = y.impl();
    Tape::active()->record({a, b}, y, [ai, bi, yi]() {
      if (ai->tracked)
        for (std::size_t i = 0; i < yi->grad.size(); ++i) ai->grad[i] += yi->grad[i];
      if (bi->tracked)
        for (std::size_t i = 0; i < yi->grad.size(); ++i) bi->grad[i] += yi->grad[i];
    });
  }
  return y;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
  Tensor y = Tensor::constant(a.shape(), std::move(out));
  if (detail::recording({&a, &b})) {
    auto ai = a.impl(), bi = b.impl(), yi = y.impl();
    Tape::active()->record({a, b}, y, [ai, bi, yi]() {
      if (ai->tracked)
        for (std::size_t i = 0; i < yi->grad.size(); ++i) ai->grad[i] += yi->grad[i];
      if (bi->tracked)
        for (std::size_t i = 0; i < yi->grad.size(); ++i) bi->grad[i] -= yi->grad[i];
    });
  }
  return y;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  Tensor y = Tensor::constant(a.shape(), std::move(out));
  if (detail::recording({&a, &b})) {
    auto ai = a.impl(), bi = b.impl(), yi = y.impl();
    Tape::active()->record({a, b}, y, [ai, bi, yi]() {
      if (ai->tracked)
        for (std::size_t i = 0; i < yi->grad.size(); ++i)
          ai->grad[i] += yi->grad[i] * bi->values[i];
      if (bi->tracked)
        for (std::size_t i = 0; i < yi->grad.size(); ++i)
          bi->grad[i] += yi->grad[i] * ai->values[i];
    });
  }
  return y;
}

inline Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * c;
  Tensor y = Tensor::constant(a.shape(), std::move(out));
  if (detail::recording({&a})) {
    auto ai = a.impl(), yi = y.impl();
    Tape::active()->record({a}, y, [ai, yi, c]() {
      if (ai->tracked)
        for (std::size_t i = 0; i < yi->grad.size(); ++i) ai->grad[i] += yi->grad[i] * c;
    });
  }
  return y;
}

// x:[r,c] + bias:[c] or {1,c}; x:[s,r,c] + bias:[s,1,c] (one bias row per slice).
inline Tensor add_bias(const Tensor& x, const Tensor& bias) {
  std::size_t s = 1, r = 0, c = 0;
  if (x.rank() == 2) {
    r = x.shape()[0];
    c = x.shape()[1];
    if (bias.size() != c) {
      throw DimensionError("add_bias: bias " + shape_str(bias.shape()) +
                           " does not match " + shape_str(x.shape()));
    }
  } else if (x.rank() == 3) {
    s = x.shape()[0];
    r = x.shape()[1];
    c = x.shape()[2];
    if (bias.size() != s * c) {
      throw DimensionError("add_bias: bias " + shape_str(bias.shape()) +
                           " does not match " + shape_str(x.shape()));
    }
  } else {
    throw DimensionError("add_bias: unsupported rank " + shape_str(x.shape()));
  }
  std::vector<double> out(x.size());
  const auto& xv = x.values();
  const auto& bv = bias.values();
  for (std::size_t q = 0; q < s; ++q)
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) {
        const std::size_t idx = (q * r + i) * c + j;
        out[idx] = xv[idx] + bv[q * c + j];
      }
  Tensor y = Tensor::constant(x.shape(), std::move(out));
  if (detail::recording({&x, &bias})) {
    auto xi = x.impl(), bi = bias.impl(), yi = y.impl();
    Tape::active()->record({x, bias}, y, [xi, bi, yi, s, r, c]() {
      if (xi->tracked)
        for (std::size_t i = 0; i < yi->grad.size(); ++i) xi->grad[i] += yi->grad[i];
      if (bi->tracked) {
        for (std::size_t q = 0; q < s; ++q)
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j)
              bi->grad[q * c + j] += yi->grad[(q * r + i) * c + j];
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Pointwise nonlinearities

enum class Kernel { Relu, Sigmoid, Tanh };

inline Tensor pointwise(const Tensor& x, Kernel k) {
  std::vector<double> out(x.size());
  const auto& xv = x.values();
  switch (k) {
    case Kernel::Relu:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
      break;
    case Kernel::Sigmoid:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = detail::stable_sigmoid(xv[i]);
      break;
    case Kernel::Tanh:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(xv[i]);
      break;
  }
  Tensor y = Tensor::constant(x.shape(), std::move(out));
  if (detail::recording({&x})) {
    auto xi = x.impl(), yi = y.impl();
    Tape::active()->record({x}, y, [xi, yi, k]() {
      if (!xi->tracked) return;
      switch (k) {
        case Kernel::Relu:
          // Subgradient at 0 is taken as 0.
          for (std::size_t i = 0; i < yi->grad.size(); ++i)
            if (xi->values[i] > 0.0) xi->grad[i] += yi->grad[i];
          break;
        case Kernel::Sigmoid:
          for (std::size_t i = 0; i < yi->grad.size(); ++i) {
            const double sv = yi->values[i];
            xi->grad[i] += yi->grad[i] * sv * (1.0 - sv);
          }
          break;
        case Kernel::Tanh:
          for (std::size_t i = 0; i < yi->grad.size(); ++i) {
            const double t = yi->values[i];
            xi->grad[i] += yi->grad[i] * (1.0 - t * t);
          }
          break;
      }
    });
  }
  return y;
}

inline Tensor relu(const Tensor& x) { return pointwise(x, Kernel::Relu); }
inline Tensor sigmoid(const Tensor& x) { return pointwise(x, Kernel::Sigmoid); }
inline Tensor tanh_op(const Tensor& x) { return pointwise(x, Kernel::Tanh); }

// ln(max(x, eps)); gradient is zero on the clamped branch.
inline Tensor log_clamped(const Tensor& x, double eps) {
  std::vector<double> out(x.size());
  const auto& xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(std::max(xv[i], eps));
  Tensor y = Tensor::constant(x.shape(), std::move(out));
  if (detail::recording({&x})) {
    auto xi = x.impl(), yi = y.impl();
    Tape::active()->record({x}, y, [xi, yi, eps]() {
      if (!xi->tracked) return;
      for (std::size_t i = 0; i < yi->grad.size(); ++i)
        if (xi->values[i] > eps) xi->grad[i] += yi->grad[i] / xi->values[i];
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Softmax

inline Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) +
                         " out of range for shape " + shape_str(x.shape()));
  }
  const std::size_t len = x.shape()[axis];
  std::size_t inner = 1, outer = 1;
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.shape()[i];
  for (std::size_t i = 0; i < axis; ++i) outer *= x.shape()[i];
  std::vector<double> out(x.size());
  const auto& xv = x.values();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double mx = xv[base];
      for (std::size_t l = 1; l < len; ++l) mx = std::max(mx, xv[base + l * inner]);
      double sum = 0.0;
      for (std::size_t l = 0; l < len; ++l) {
        const double e = std::exp(xv[base + l * inner] - mx);
        out[base + l * inner] = e;
        sum += e;
      }
      for (std::size_t l = 0; l < len; ++l) out[base + l * inner] /= sum;
    }
  Tensor y = Tensor::constant(x.shape(), std::move(out));
  if (detail::recording({&x})) {
    auto xi = x.impl(), yi = y.impl();
    Tape::active()->record({x}, y, [xi, yi, len, inner, outer]() {
      if (!xi->tracked) return;
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = o * len * inner + in;
          double dot = 0.0;
          for (std::size_t l = 0; l < len; ++l)
            dot += yi->grad[base + l * inner] * yi->values[base + l * inner];
          for (std::size_t l = 0; l < len; ++l) {
            const std::size_t idx = base + l * inner;
            xi->grad[idx] += yi->values[idx] * (yi->grad[idx] - dot);
          }
        }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Structural ops

inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const std::size_t rank = parts[0].rank();
  if (axis >= rank) {
    throw DimensionError("concat: axis " + std::to_string(axis) +
                         " out of range for rank " + std::to_string(rank));
  }
  std::size_t axis_total = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != rank) throw DimensionError("concat: rank mismatch");
    for (std::size_t i = 0; i < rank; ++i) {
      if (i != axis && p.shape()[i] != parts[0].shape()[i]) {
        throw DimensionError("concat: shape mismatch " + shape_str(p.shape()) +
                             " vs " + shape_str(parts[0].shape()));
      }
    }
    axis_total += p.shape()[axis];
  }
  Shape out_shape = parts[0].shape();
  out_shape[axis] = axis_total;
  std::size_t inner = 1, outer = 1;
  for (std::size_t i = axis + 1; i < rank; ++i) inner *= out_shape[i];
  for (std::size_t i = 0; i < axis; ++i) outer *= out_shape[i];

  std::vector<double> out(shape_numel(out_shape));
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    const std::size_t block = p.shape()[axis] * inner;
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(p.values().data() + o * block, block,
                  out.data() + o * axis_total * inner + offset);
    }
    offset += block;
  }
  Tensor y = Tensor::constant(std::move(out_shape), std::move(out));
  bool track = false;
  if (Tape::active()) {
    for (const Tensor& p : parts)
      if (p.tracked()) track = true;
  }
  if (track) {
    std::vector<std::shared_ptr<detail::TensorImpl>> impls;
    std::vector<std::size_t> blocks;
    for (const Tensor& p : parts) {
      impls.push_back(p.impl());
      blocks.push_back(p.shape()[axis] * inner);
    }
    auto yi = y.impl();
    const std::size_t row = axis_total * inner;
    Tape::active()->record(parts, y, [impls, blocks, yi, outer, row]() {
      std::size_t offset = 0;
      for (std::size_t pi = 0; pi < impls.size(); ++pi) {
        if (impls[pi]->tracked) {
          for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t i = 0; i < blocks[pi]; ++i)
              impls[pi]->grad[o * blocks[pi] + i] += yi->grad[o * row + offset + i];
        }
        offset += blocks[pi];
      }
    });
  }
  return y;
}

inline Tensor reduce_sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  Tensor y = Tensor::scalar(s);
  if (detail::recording({&x})) {
    auto xi = x.impl(), yi = y.impl();
    Tape::active()->record({x}, y, [xi, yi]() {
      if (!xi->tracked) return;
      for (double& g : xi->grad) g += yi->grad[0];
    });
  }
  return y;
}

inline Tensor reduce_mean(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  const double n = static_cast<double>(x.size());
  Tensor y = Tensor::scalar(s / n);
  if (detail::recording({&x})) {
    auto xi = x.impl(), yi = y.impl();
    Tape::active()->record({x}, y, [xi, yi, n]() {
      if (!xi->tracked) return;
      for (double& g : xi->grad) g += yi->grad[0] / n;
    });
  }
  return y;
}

// Rank 2: plain transpose. Rank 3: swaps the last two axes per slice.
inline Tensor transpose(const Tensor& x) {
  if (x.rank() == 2) {
    const std::size_t r = x.shape()[0], c = x.shape()[1];
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x.values()[i * c + j];
    Tensor y = Tensor::constant({c, r}, std::move(out));
    if (detail::recording({&x})) {
      auto xi = x.impl(), yi = y.impl();
      Tape::active()->record({x}, y, [xi, yi, r, c]() {
        if (!xi->tracked) return;
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) xi->grad[i * c + j] += yi->grad[j * r + i];
      });
    }
    return y;
  }
  if (x.rank() == 3) {
    const std::size_t s = x.shape()[0], r = x.shape()[1], c = x.shape()[2];
    std::vector<double> out(x.size());
    for (std::size_t q = 0; q < s; ++q)
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j)
          out[(q * c + j) * r + i] = x.values()[(q * r + i) * c + j];
    Tensor y = Tensor::constant({s, c, r}, std::move(out));
    if (detail::recording({&x})) {
      auto xi = x.impl(), yi = y.impl();
      Tape::active()->record({x}, y, [xi, yi, s, r, c]() {
        if (!xi->tracked) return;
        for (std::size_t q = 0; q < s; ++q)
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j)
              xi->grad[(q * r + i) * c + j] += yi->grad[(q * c + j) * r + i];
      });
    }
    return y;
  }
  throw DimensionError("transpose: unsupported rank for shape " + shape_str(x.shape()));
}

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.size()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(shape));
  }
  Tensor y = Tensor::constant(std::move(shape), x.values());
  if (detail::recording({&x})) {
    auto xi = x.impl(), yi = y.impl();
    Tape::active()->record({x}, y, [xi, yi]() {
      if (!xi->tracked) return;
      for (std::size_t i = 0; i < yi->grad.size(); ++i) xi->grad[i] += yi->grad[i];
    });
  }
  return y;
}

// Gathers column idx[i] of table:[d,n] into row i of the output:[b,d].
// Gradients accumulate only into the touched columns.
inline Tensor embedding_lookup(const Tensor& table, const std::vector<std::int32_t>& idx) {
  if (table.rank() != 2) {
    throw DimensionError("embedding_lookup: table must be rank 2, got " +
                         shape_str(table.shape()));
  }
  const std::size_t d = table.shape()[0], n = table.shape()[1], b = idx.size();
  for (std::int32_t i : idx) {
    if (i < 0 || static_cast<std::size_t>(i) >= n) {
      throw DimensionError("embedding_lookup: index " + std::to_string(i) +
                           " out of range [0," + std::to_string(n) + ")");
    }
  }
  std::vector<double> out(b * d);
  const auto& tv = table.values();
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t r = 0; r < d; ++r)
      out[i * d + r] = tv[r * n + static_cast<std::size_t>(idx[i])];
  Tensor y = Tensor::constant({b, d}, std::move(out));
  if (detail::recording({&table})) {
    auto ti = table.impl(), yi = y.impl();
    Tape::active()->record({table}, y, [ti, yi, idx, d, n, b]() {
      if (!ti->tracked) return;
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t r = 0; r < d; ++r)
          ti->grad[r * n + static_cast<std::size_t>(idx[i])] += yi->grad[i * d + r];
    });
  }
  return y;
}

// Slice q of x:[s,r,c] -> [r,c].
inline Tensor slice_axis0(const Tensor& x, std::size_t q) {
  if (x.rank() != 3 || q >= x.shape()[0]) {
    throw DimensionError("slice_axis0: bad slice " + std::to_string(q) + " of " +
                         shape_str(x.shape()));
  }
  const std::size_t r = x.shape()[1], c = x.shape()[2];
  std::vector<double> out(x.values().begin() + q * r * c,
                          x.values().begin() + (q + 1) * r * c);
  Tensor y = Tensor::constant({r, c}, std::move(out));
  if (detail::recording({&x})) {
    auto xi = x.impl(), yi = y.impl();
    Tape::active()->record({x}, y, [xi, yi, q, r, c]() {
      if (!xi->tracked) return;
      for (std::size_t i = 0; i < r * c; ++i) xi->grad[q * r * c + i] += yi->grad[i];
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Gradient checking

// Central-difference check of d(loss)/d(param) for every element of every
// listed parameter. Returns the max relative error
// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
// The builder must be deterministic; call at points away from relu kinks.
inline double grad_check(const std::function<Tensor()>& build_loss,
                         std::vector<Tensor>& params, double eps) {
  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    Tensor loss = build_loss();
    for (Tensor& p : params) p.zero_grad();
    tape.backward(loss);
    for (Tensor& p : params) analytic.push_back(p.grad());
  }
  double max_rel = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& vals = params[pi].values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double saved = vals[i];
      vals[i] = saved + eps;
      const double up = build_loss().scalar_value();
      vals[i] = saved - eps;
      const double down = build_loss().scalar_value();
      vals[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[pi][i];
      const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
      max_rel = std::max(max_rel, std::fabs(a - numeric) / denom);
    }
  }
  return max_rel;
}

}  // namespace non
