// numerics.hpp - dense array engine with reverse-mode differentiation.
//
// DiffArray is a row-major array of 64-bit reals. A Tape records primitive
// operations as they execute; backward() replays them in reverse and fills
// per-node gradient buffers. There is no global state: each Tape is an
// independent computation confined to one logical thread, and detached
// DiffArray values can move freely between threads.
//
// Shapes must match exactly; the only broadcasts are the explicitly named
// structural ops (scale_rows, add_bias). Everything is double precision so
// central finite differences can verify gradients to 1e-4 and better.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "fusedet/errors.hpp"

namespace fusedet {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

class DiffArray {
 public:
  Shape shape;
  std::vector<double> data;
  // Filled for tape-resident arrays once backward() has run.
  std::optional<std::vector<double>> grad;
  int node_id = -1;

  DiffArray() = default;

  DiffArray(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
    if (shape_numel(shape) != data.size()) {
      throw DimensionError("DiffArray: shape " + shape_str(shape) + " wants " +
                           std::to_string(shape_numel(shape)) + " values, got " +
                           std::to_string(data.size()));
    }
  }

  static DiffArray zeros(Shape s) {
    const std::size_t n = shape_numel(s);
    return DiffArray(std::move(s), std::vector<double>(n, 0.0));
  }

  static DiffArray full(Shape s, double v) {
    const std::size_t n = shape_numel(s);
    return DiffArray(std::move(s), std::vector<double>(n, v));
  }

  static DiffArray scalar(double v) { return DiffArray({1}, {v}); }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  bool is_scalar() const { return data.size() == 1; }

  std::size_t dim(std::size_t axis) const {
    if (axis >= shape.size())
      throw DimensionError("DiffArray: axis " + std::to_string(axis) + " out of rank " +
                           std::to_string(shape.size()));
    return shape[axis];
  }

  double value() const {
    if (!is_scalar()) throw ContractError("DiffArray::value: array " + shape_str(shape) + " is not scalar");
    return data[0];
  }

  double& operator()(std::size_t i) { return data[i]; }
  double operator()(std::size_t i) const { return data[i]; }
  double& operator()(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }
  double& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return data[(i * shape[1] + j) * shape[2] + k];
  }
  double operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return data[(i * shape[1] + j) * shape[2] + k];
  }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

 private:
  friend class Tape;
  const void* tape_tag = nullptr;
};

class Tape {
 public:
  // Signature of a recorded primitive's reverse step: reads the node's own
  // gradient buffer and accumulates into its inputs' buffers.
  using Pull = std::function<void(Tape&, int self_id)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // ---- graph construction -------------------------------------------------

  DiffArray leaf(DiffArray value) {
    if (!value.all_finite()) throw DomainError("Tape::leaf: non-finite input value");
    return push(std::move(value), {}, nullptr);
  }

  // Extension point for other modules (bilinear sampling, scatter, losses):
  // records `value` as the result of a primitive with the given inputs and
  // reverse step.
  DiffArray record(DiffArray value, std::vector<int> inputs, Pull pull) {
    for (int id : inputs) check_id(id);
    return push(std::move(value), std::move(inputs), std::move(pull));
  }

  // Node id of a tape-resident operand; throws if it came from elsewhere.
  int id_of(const DiffArray& a) const { return on_tape(a); }

  // ---- primitive operations ------------------------------------------------

  DiffArray matmul(const DiffArray& a, const DiffArray& b) {
    const int ia = on_tape(a), ib = on_tape(b);
    if (a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0])
      throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape) + " and " +
                           shape_str(b.shape));
    const std::size_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
    DiffArray out = DiffArray::zeros({m, n});
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        const double av = a.data[i * k + p];
        if (av == 0.0) continue;
        for (std::size_t j = 0; j < n; ++j) out.data[i * n + j] += av * b.data[p * n + j];
      }
    return record(std::move(out), {ia, ib}, [ia, ib, m, k, n](Tape& t, int self) {
      const auto& g = t.grad_buffer(self);
      const auto& av = t.node_array(ia).data;
      const auto& bv = t.node_array(ib).data;
      auto& ga = t.grad_buffer(ia);
      auto& gb = t.grad_buffer(ib);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * bv[p * n + j];
          ga[i * k + p] += acc;
        }
      for (std::size_t p = 0; p < k; ++p)
        for (std::size_t j = 0; j < n; ++j) {
          double acc = 0.0;
          for (std::size_t i = 0; i < m; ++i) acc += av[i * k + p] * g[i * n + j];
          gb[p * n + j] += acc;
        }
    });
  }

  DiffArray add(const DiffArray& a, const DiffArray& b) {
    const int ia = on_tape(a), ib = on_tape(b);
    require_same_shape("add", a, b);
    DiffArray out = a;
    detach(out);
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += b.data[i];
    return record(std::move(out), {ia, ib}, [ia, ib](Tape& t, int self) {
      const auto& g = t.grad_buffer(self);
      auto& ga = t.grad_buffer(ia);
      auto& gb = t.grad_buffer(ib);
      for (std::size_t i = 0; i < g.size(); ++i) {
        ga[i] += g[i];
        gb[i] += g[i];
      }
    });
  }

  DiffArray sub(const DiffArray& a, const DiffArray& b) { return add(a, neg(b)); }

  DiffArray mul(const DiffArray& a, const DiffArray& b) {
    const int ia = on_tape(a), ib = on_tape(b);
    require_same_shape("mul", a, b);
    DiffArray out = a;
    detach(out);
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= b.data[i];
    return record(std::move(out), {ia, ib}, [ia, ib](Tape& t, int self) {
      const auto& g = t.grad_buffer(self);
      const auto& av = t.node_array(ia).data;
      const auto& bv = t.node_array(ib).data;
      auto& ga = t.grad_buffer(ia);
      auto& gb = t.grad_buffer(ib);
      for (std::size_t i = 0; i < g.size(); ++i) {
        ga[i] += g[i] * bv[i];
        gb[i] += g[i] * av[i];
      }
    });
  }

  DiffArray neg(const DiffArray& a) { return scale(a, -1.0); }

  DiffArray scale(const DiffArray& a, double k) {
    const int ia = on_tape(a);
    DiffArray out = a;
    detach(out);
    for (double& v : out.data) v *= k;
    return record(std::move(out), {ia}, [ia, k](Tape& t, int self) {
      const auto& g = t.grad_buffer(self);
      auto& ga = t.grad_buffer(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += k * g[i];
    });
  }

  DiffArray add_const(const DiffArray& a, double k) {
    const int ia = on_tape(a);
    DiffArray out = a;
    detach(out);
    for (double& v : out.data) v += k;
    return record(std::move(out), {ia}, [ia](Tape& t, int self) {
      const auto& g = t.grad_buffer(self);
      auto& ga = t.grad_buffer(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
  }

  // Subgradient at 0 is 0.
  DiffArray relu(const DiffArray& a) {
    const int ia = on_tape(a);
    DiffArray out = a;
    detach(out);
    for (double& v : out.data) v = v > 0.0 ? v : 0.0;
    return record(std::move(out), {ia}, [ia](Tape& t, int self) {
      const auto& g = t.grad_buffer(self);
      const auto& av = t.node_array(ia).data;
      auto& ga = t.grad_buffer(ia);
      for (std::size_t i = 0; i < g.size(); ++i)
        if (av[i] > 0.0) ga[i] += g[i];
    });
  }

  DiffArray log(const DiffArray& a) {
    const int ia = on_tape(a);
    DiffArray out = a;
    detach(out);
    for (double& v : out.data) {
      if (v <= 0.0) throw DomainError("log: non-positive input " + std::to_string(v));
      v = std::log(v);
    }
    return record(std::move(out), {ia}, [ia](Tape& t, int self) {
      const auto& g = t.grad_buffer(self);
      const auto& av = t.node_array(ia).data;
      auto& ga = t.grad_buffer(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / av[i];
    });
  }

  DiffArray exp(const DiffArray& a) {
    const int ia = on_tape(a);
    DiffArray out = a;
    detach(out);
    for (double& v : out.data) {
      v = std::exp(v);
      if (!std::isfinite(v)) throw DomainError("exp: overflow");
    }
    return record(std::move(out), {ia}, [ia](Tape& t, int self) {
      const auto& g = t.grad_buffer(self);
      const auto& ov = t.node_array(self).data;
      auto& ga = t.grad_buffer(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * ov[i];
    });
  }

  // x^p for strictly positive x and constant real p.
  DiffArray pow_const(const DiffArray& a, double p) {
    const int ia = on_tape(a);
    DiffArray out = a;
    detach(out);
    for (double& v : out.data) {
      if (v <= 0.0) throw DomainError("pow_const: non-positive base " + std::to_string(v));
      v = std::pow(v, p);
    }
    return record(std::move(out), {ia, }, [ia, p](Tape& t, int self) {
      if (p == 0.0) return;
      const auto& g = t.grad_buffer(self);
      const auto& av = t.node_array(ia).data;
      auto& ga = t.grad_buffer(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * p * std::pow(av[i], p - 1.0);
    });
  }

  // Gradient is 1 strictly inside (lo, hi) and 0 elsewhere.
  DiffArray clamp(const DiffArray& a, double lo, double hi) {
    const int ia = on_tape(a);
    DiffArray out = a;
    detach(out);
    for (double& v : out.data) v = std::min(hi, std::max(lo, v));
    return record(std::move(out), {ia}, [ia, lo, hi](Tape& t, int self) {
      const auto& g = t.grad_buffer(self);
      const auto& av = t.node_array(ia).data;
      auto& ga = t.grad_buffer(ia);
      for (std::size_t i = 0; i < g.size(); ++i)
        if (av[i] > lo && av[i] < hi) ga[i] += g[i];
    });
  }

  // Concatenation along the last (channel) axis; all other axes must agree.
  DiffArray concat_channels(const std::vector<DiffArray>& parts) {
    if (parts.empty()) throw ContractError("concat_channels: no inputs");
    std::vector<int> ids;
    ids.reserve(parts.size());
    const Shape& ref = parts.front().shape;
    std::size_t channels = 0;
    for (const DiffArray& p : parts) {
      ids.push_back(on_tape(p));
      if (p.rank() != ref.size() || p.rank() == 0)
        throw DimensionError("concat_channels: rank mismatch " + shape_str(p.shape) + " vs " +
                             shape_str(ref));
      for (std::size_t ax = 0; ax + 1 < ref.size(); ++ax)
        if (p.shape[ax] != ref[ax])
          throw DimensionError("concat_channels: leading dims differ " + shape_str(p.shape) +
                               " vs " + shape_str(ref));
      channels += p.shape.back();
    }
    Shape out_shape = ref;
    out_shape.back() = channels;
    DiffArray out = DiffArray::zeros(out_shape);
    const std::size_t rows = out.size() / channels;
    std::size_t base = 0;
    for (const DiffArray& p : parts) {
      const std::size_t c = p.shape.back();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < c; ++j) out.data[r * channels + j + base] = p.data[r * c + j];
      base += c;
    }
    return record(std::move(out), ids, [ids, rows, channels](Tape& t, int self) {
      const auto& g = t.grad_buffer(self);
      std::size_t base = 0;
      for (int id : ids) {
        const std::size_t c = t.node_array(id).shape.back();
        auto& gi = t.grad_buffer(id);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < c; ++j) gi[r * c + j] += g[r * channels + j + base];
        base += c;
      }
    });
  }

  // Adjoint of concat_channels: channels [begin, end) of the last axis.
  DiffArray slice_channels(const DiffArray& a, std::size_t begin, std::size_t end) {
    const int ia = on_tape(a);
    if (a.rank() == 0 || begin >= end || end > a.shape.back())
      throw DimensionError("slice_channels: range [" + std::to_string(begin) + ", " +
                           std::to_string(end) + ") invalid for " + shape_str(a.shape));
    const std::size_t c_in = a.shape.back();
    const std::size_t c_out = end - begin;
    Shape out_shape = a.shape;
    out_shape.back() = c_out;
    DiffArray out = DiffArray::zeros(out_shape);
    const std::size_t rows = out.size() / c_out;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < c_out; ++j) out.data[r * c_out + j] = a.data[r * c_in + begin + j];
    return record(std::move(out), {ia}, [ia, begin, c_in, c_out, rows](Tape& t, int self) {
      const auto& g = t.grad_buffer(self);
      auto& ga = t.grad_buffer(ia);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < c_out; ++j) ga[r * c_in + begin + j] += g[r * c_out + j];
    });
  }

  DiffArray reshape(const DiffArray& a, Shape target) {
    const int ia = on_tape(a);
    if (shape_numel(target) != a.size())
      throw DimensionError("reshape: " + shape_str(a.shape) + " to " + shape_str(target) +
                           " changes element count");
    DiffArray out = a;
    detach(out);
    out.shape = std::move(target);
    return record(std::move(out), {ia}, [ia](Tape& t, int self) {
      const auto& g = t.grad_buffer(self);
      auto& ga = t.grad_buffer(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
  }

  DiffArray sum(const DiffArray& a) {
    const int ia = on_tape(a);
    double acc = 0.0;
    for (double v : a.data) acc += v;
    return record(DiffArray::scalar(acc), {ia}, [ia](Tape& t, int self) {
      const double g = t.grad_buffer(self)[0];
      auto& ga = t.grad_buffer(ia);
      for (double& v : ga) v += g;
    });
  }

  DiffArray mean(const DiffArray& a) {
    if (a.size() == 0) throw ContractError("mean: empty array");
    return scale(sum(a), 1.0 / static_cast<double>(a.size()));
  }

  // Sum over one axis; the output drops that axis.
  DiffArray sum_axis(const DiffArray& a, std::size_t axis) {
    const int ia = on_tape(a);
    if (axis >= a.rank())
      throw DimensionError("sum_axis: axis " + std::to_string(axis) + " out of rank " +
                           std::to_string(a.rank()));
    Shape out_shape;
    for (std::size_t ax = 0; ax < a.rank(); ++ax)
      if (ax != axis) out_shape.push_back(a.shape[ax]);
    if (out_shape.empty()) out_shape = {1};
    std::size_t outer = 1, inner = 1;
    for (std::size_t ax = 0; ax < axis; ++ax) outer *= a.shape[ax];
    for (std::size_t ax = axis + 1; ax < a.rank(); ++ax) inner *= a.shape[ax];
    const std::size_t n = a.shape[axis];
    DiffArray out = DiffArray::zeros(out_shape);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t x = 0; x < n; ++x)
        for (std::size_t in = 0; in < inner; ++in)
          out.data[o * inner + in] += a.data[(o * n + x) * inner + in];
    return record(std::move(out), {ia}, [ia, outer, inner, n](Tape& t, int self) {
      const auto& g = t.grad_buffer(self);
      auto& ga = t.grad_buffer(ia);
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t x = 0; x < n; ++x)
          for (std::size_t in = 0; in < inner; ++in)
            ga[(o * n + x) * inner + in] += g[o * inner + in];
    });
  }

  // out[r, c] = m[r, c] * f[r]; f has shape [R] or [R, 1].
  DiffArray scale_rows(const DiffArray& m, const DiffArray& f) {
    const int im = on_tape(m), iff = on_tape(f);
    if (m.rank() != 2 || f.shape.front() != m.shape[0] || f.size() != m.shape[0])
      throw DimensionError("scale_rows: factors " + shape_str(f.shape) + " do not match rows of " +
                           shape_str(m.shape));
    const std::size_t rows = m.shape[0], cols = m.shape[1];
    DiffArray out = m;
    detach(out);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) out.data[r * cols + c] *= f.data[r];
    return record(std::move(out), {im, iff}, [im, iff, rows, cols](Tape& t, int self) {
      const auto& g = t.grad_buffer(self);
      const auto& mv = t.node_array(im).data;
      const auto& fv = t.node_array(iff).data;
      auto& gm = t.grad_buffer(im);
      auto& gf = t.grad_buffer(iff);
      for (std::size_t r = 0; r < rows; ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
          gm[r * cols + c] += g[r * cols + c] * fv[r];
          acc += g[r * cols + c] * mv[r * cols + c];
        }
        gf[r] += acc;
      }
    });
  }

  // out[r, c] = m[r, c] + b[c]; b has shape [C] or [1, C].
  DiffArray add_bias(const DiffArray& m, const DiffArray& b) {
    const int im = on_tape(m), ib = on_tape(b);
    if (m.rank() != 2 || b.shape.back() != m.shape[1] || b.size() != m.shape[1])
      throw DimensionError("add_bias: bias " + shape_str(b.shape) + " does not match columns of " +
                           shape_str(m.shape));
    const std::size_t rows = m.shape[0], cols = m.shape[1];
    DiffArray out = m;
    detach(out);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) out.data[r * cols + c] += b.data[c];
    return record(std::move(out), {im, ib}, [im, ib, rows, cols](Tape& t, int self) {
      const auto& g = t.grad_buffer(self);
      auto& gm = t.grad_buffer(im);
      auto& gb = t.grad_buffer(ib);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) {
          gm[r * cols + c] += g[r * cols + c];
          gb[c] += g[r * cols + c];
        }
    });
  }

  // ---- reverse pass ---------------------------------------------------------

  // Populates every node's gradient buffer with d(output)/d(node). The output
  // must be scalar. Prior gradients are reset on every call.
  void backward(const DiffArray& output) {
    const int out_id = on_tape(output);
    if (!output.is_scalar())
      throw ContractError("backward: output " + shape_str(output.shape) + " is not scalar");
    for (Node& n : nodes_) n.array.grad.emplace(n.array.size(), 0.0);
    (*nodes_[static_cast<std::size_t>(out_id)].array.grad)[0] = 1.0;
    for (int id = out_id; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (n.pull) n.pull(*this, id);
    }
    grads_valid_ = true;
  }

  // Gradient of the last backward() output with respect to x, as a detached
  // array.
  DiffArray grad(const DiffArray& x) const {
    const int id = on_tape(x);
    if (!grads_valid_) throw ContractError("grad: backward() has not been run on this tape");
    return DiffArray(x.shape, *nodes_[static_cast<std::size_t>(id)].array.grad);
  }

  const DiffArray& node_array(int id) const {
    check_id(id);
    return nodes_[static_cast<std::size_t>(id)].array;
  }

  std::vector<double>& grad_buffer(int id) {
    check_id(id);
    auto& g = nodes_[static_cast<std::size_t>(id)].array.grad;
    if (!g) throw ContractError("grad_buffer: gradients not allocated");
    return *g;
  }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    DiffArray array;
    std::vector<int> inputs;
    Pull pull;
  };

  std::vector<Node> nodes_;
  bool grads_valid_ = false;

  static void require_same_shape(const char* op, const DiffArray& a, const DiffArray& b) {
    if (a.shape != b.shape)
      throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape) + " vs " +
                           shape_str(b.shape));
  }

  void detach(DiffArray& a) const {
    a.node_id = -1;
    a.tape_tag = nullptr;
    a.grad.reset();
  }

  void check_id(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
      throw ContractError("Tape: node id " + std::to_string(id) + " out of range");
  }

  int on_tape(const DiffArray& a) const {
    if (a.node_id < 0 || a.tape_tag != this)
      throw ContractError("Tape: operand was not produced by this tape (call leaf() first)");
    check_id(a.node_id);
    return a.node_id;
  }

  DiffArray push(DiffArray value, std::vector<int> inputs, Pull pull) {
    value.node_id = static_cast<int>(nodes_.size());
    value.tape_tag = this;
    value.grad.reset();
    DiffArray handle = value;
    nodes_.push_back(Node{std::move(value), std::move(inputs), std::move(pull)});
    grads_valid_ = false;
    return handle;
  }
};

// ---- finite-difference verifier ----------------------------------------------

// Scalar-valued function of one array, evaluated on a caller-provided tape.
using ScalarFn = std::function<DiffArray(Tape&, const DiffArray&)>;

// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
inline double finite_diff_check(const ScalarFn& f, const DiffArray& x, double step) {
  Tape tape;
  DiffArray leaf = tape.leaf(x);
  DiffArray out = f(tape, leaf);
  if (!out.is_scalar())
    throw ContractError("finite_diff_check: f returned " + shape_str(out.shape) + ", want scalar");
  tape.backward(out);
  const DiffArray analytic = tape.grad(leaf);

  const auto eval = [&f](const DiffArray& point) {
    Tape t;
    DiffArray v = f(t, t.leaf(point));
    const double y = v.value();
    if (!std::isfinite(y)) throw DomainError("finite_diff_check: non-finite evaluation");
    return y;
  };

  double worst = 0.0;
  DiffArray probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = probe.data[i];
    probe.data[i] = saved + step;
    const double fp = eval(probe);
    probe.data[i] = saved - step;
    const double fm = eval(probe);
    probe.data[i] = saved;
    const double fd = (fp - fm) / (2.0 * step);
    const double err = std::abs(analytic.data[i] - fd) / std::max(1.0, std::abs(analytic.data[i]));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace fusedet
