#include "uocl/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace uocl::ad {

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

ShapeError::ShapeError(std::string_view op, const Shape& lhs, const Shape& rhs)
    : std::invalid_argument(std::string(op) + ": incompatible shapes " +
                            to_string(lhs) + " and " + to_string(rhs)) {}

// ---- Array ----------------------------------------------------------------

Array::Array(Shape shape, double fill) : shape_(std::move(shape)) {
  for (auto d : shape_) {
    if (d == 0) throw ShapeError("array extents must be positive, got " + to_string(shape_));
  }
  values_.assign(element_count(shape_), fill);
}

Array::Array(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  for (auto d : shape_) {
    if (d == 0) throw ShapeError("array extents must be positive, got " + to_string(shape_));
  }
  if (values_.size() != element_count(shape_)) {
    throw ShapeError("array: " + std::to_string(values_.size()) +
                     " values do not fill shape " + to_string(shape_));
  }
}

Array Array::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Array(Shape{rows, cols}, std::move(values));
}

std::size_t Array::rows() const {
  return shape_.size() == 2 ? shape_[0] : 1;
}

std::size_t Array::cols() const {
  if (shape_.size() == 2) return shape_[1];
  if (shape_.size() == 1) return shape_[0];
  return 1;
}

double Array::item() const {
  if (values_.size() != 1) {
    throw ShapeError("item() requires a single element, got " + to_string(shape_));
  }
  return values_[0];
}

void Array::ensure_grad() {
  if (grad_.size() != values_.size()) grad_.assign(values_.size(), 0.0);
}

// ---- Var / Tape -------------------------------------------------------------

const Array& Var::value() const { return tape_->node(id_).data; }

std::span<const double> Var::grad() const { return tape_->node(id_).data.grad(); }

bool Var::requires_grad() const { return tape_->node(id_).requires_grad; }

Var Tape::constant(Array value) {
  nodes_.push_back(Node{"constant", std::move(value), {}, {}, false});
  return Var(this, nodes_.size() - 1);
}

Var Tape::leaf(Array value, bool trainable) {
  nodes_.push_back(Node{"leaf", std::move(value), {}, {}, trainable});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(std::string_view op, Array value, std::vector<std::size_t> inputs,
                 std::function<void(Tape&, std::size_t)> backward) {
  if (backward_done_) throw GraphError("cannot extend a tape after backward()");
  bool needs = false;
  for (auto id : inputs) {
    if (id >= nodes_.size()) throw GraphError("input node does not belong to this tape");
    needs = needs || nodes_[id].requires_grad;
  }
  Node n{op, std::move(value), std::move(inputs), {}, needs};
  if (needs) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

std::span<double> Tape::grad_of(std::size_t id) {
  auto& d = nodes_[id].data;
  d.ensure_grad();
  return d.grad();
}

void Tape::backward(Var loss) {
  if (loss.tape() != this) throw GraphError("loss belongs to a different tape");
  if (backward_done_) throw GraphError("backward() already ran on this tape");
  auto& root = nodes_[loss.id()];
  if (root.data.size() != 1) {
    throw GraphError("backward() needs a scalar loss, got shape " +
                     to_string(root.data.shape()));
  }
  backward_done_ = true;
  if (!root.requires_grad) return;
  grad_of(loss.id())[0] = 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    auto& n = nodes_[i];
    if (!n.requires_grad || !n.backward || !n.data.has_grad()) continue;
    n.backward(*this, i);
  }
}

// ---- kernels ----------------------------------------------------------------

namespace {

Tape& same_tape(Var a, Var b) {
  if (!a.valid() || a.tape() != b.tape()) throw GraphError("operands live on different tapes");
  return *a.tape();
}

void require_matrix(std::string_view op, const Array& a) {
  if (a.rank() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got " + to_string(a.shape()));
}

// c (n×m) += a (n×k) · b (k×m)
void gemm_nn(const double* a, const double* b, double* c, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    double* crow = c + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = b + p * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

// c (n×m) += a (n×k) · b(m×k)ᵀ
void gemm_nt(const double* a, const double* b, double* c, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = a + i * k;
    for (std::size_t j = 0; j < m; ++j) {
      const double* brow = b + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      c[i * m + j] += s;
    }
  }
}

// c (k×m) += a(n×k)ᵀ · b (n×m)
void gemm_tn(const double* a, const double* b, double* c, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* brow = b + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      double* crow = c + p * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

template <class Fn>
Var unary(std::string_view op, Var a, Fn&& f, std::function<void(Tape&, std::size_t)> bw) {
  const Array& av = a.value();
  Array out(av.shape());
  auto in = av.values();
  auto o = out.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(in[i]);
  return a.tape()->record(op, std::move(out), {a.id()}, std::move(bw));
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const Array& av = a.value();
  const Array& bv = b.value();
  require_matrix("matmul", av);
  require_matrix("matmul", bv);
  if (av.cols() != bv.rows()) throw ShapeError("matmul", av.shape(), bv.shape());
  const std::size_t n = av.rows(), k = av.cols(), m = bv.cols();
  Array out(Shape{n, m});
  gemm_nn(av.values().data(), bv.values().data(), out.values().data(), n, k, m);
  const auto ia = a.id(), ib = b.id();
  return t.record("matmul", std::move(out), {ia, ib}, [ia, ib, n, k, m](Tape& tp, std::size_t self) {
    auto g = tp.node(self).data.grad();
    if (tp.node(ia).requires_grad) {
      auto ga = tp.grad_of(ia);
      gemm_nt(g.data(), tp.node(ib).data.values().data(), ga.data(), n, m, k);
    }
    if (tp.node(ib).requires_grad) {
      auto gb = tp.grad_of(ib);
      gemm_tn(tp.node(ia).data.values().data(), g.data(), gb.data(), n, k, m);
    }
  });
}

Var matmul_nt(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const Array& av = a.value();
  const Array& bv = b.value();
  require_matrix("matmul_nt", av);
  require_matrix("matmul_nt", bv);
  if (av.cols() != bv.cols()) throw ShapeError("matmul_nt", av.shape(), bv.shape());
  const std::size_t n = av.rows(), k = av.cols(), m = bv.rows();
  Array out(Shape{n, m});
  gemm_nt(av.values().data(), bv.values().data(), out.values().data(), n, k, m);
  const auto ia = a.id(), ib = b.id();
  return t.record("matmul_nt", std::move(out), {ia, ib}, [ia, ib, n, k, m](Tape& tp, std::size_t self) {
    auto g = tp.node(self).data.grad();
    if (tp.node(ia).requires_grad) {
      auto ga = tp.grad_of(ia);
      gemm_nn(g.data(), tp.node(ib).data.values().data(), ga.data(), n, m, k);
    }
    if (tp.node(ib).requires_grad) {
      auto gb = tp.grad_of(ib);
      gemm_tn(g.data(), tp.node(ia).data.values().data(), gb.data(), n, m, k);
    }
  });
}

Var transpose(Var a) {
  const Array& av = a.value();
  require_matrix("transpose", av);
  const std::size_t n = av.rows(), m = av.cols();
  Array out(Shape{m, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out.at(j, i) = av.at(i, j);
  const auto ia = a.id();
  return a.tape()->record("transpose", std::move(out), {ia}, [ia, n, m](Tape& tp, std::size_t self) {
    auto g = tp.node(self).data.grad();
    auto ga = tp.grad_of(ia);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) ga[i * m + j] += g[j * n + i];
  });
}

namespace {

template <class Fwd>
Var binary_same(std::string_view op, Var a, Var b, Fwd&& f, double sign_b, bool product) {
  Tape& t = same_tape(a, b);
  const Array& av = a.value();
  const Array& bv = b.value();
  if (av.shape() != bv.shape()) throw ShapeError(op, av.shape(), bv.shape());
  Array out(av.shape());
  auto x = av.values();
  auto y = bv.values();
  auto o = out.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(x[i], y[i]);
  const auto ia = a.id(), ib = b.id();
  return t.record(op, std::move(out), {ia, ib}, [ia, ib, sign_b, product](Tape& tp, std::size_t self) {
    auto g = tp.node(self).data.grad();
    if (tp.node(ia).requires_grad) {
      auto ga = tp.grad_of(ia);
      if (product) {
        auto y = tp.node(ib).data.values();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
      } else {
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
    }
    if (tp.node(ib).requires_grad) {
      auto gb = tp.grad_of(ib);
      if (product) {
        auto x = tp.node(ia).data.values();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
      } else {
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += sign_b * g[i];
      }
    }
  });
}

}  // namespace

Var add(Var a, Var b) {
  return binary_same("add", a, b, [](double x, double y) { return x + y; }, 1.0, false);
}

Var sub(Var a, Var b) {
  return binary_same("sub", a, b, [](double x, double y) { return x - y; }, -1.0, false);
}

Var mul(Var a, Var b) {
  return binary_same("mul", a, b, [](double x, double y) { return x * y; }, 1.0, true);
}

Var scale(Var a, double s) {
  const auto ia = a.id();
  return unary("scale", a, [s](double x) { return s * x; }, [ia, s](Tape& tp, std::size_t self) {
    auto g = tp.node(self).data.grad();
    auto ga = tp.grad_of(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
  });
}

Var add_bias(Var a, Var bias) {
  Tape& t = same_tape(a, bias);
  const Array& av = a.value();
  const Array& bv = bias.value();
  require_matrix("add_bias", av);
  if (bv.rank() != 1 || bv.size() != av.cols()) throw ShapeError("add_bias", av.shape(), bv.shape());
  const std::size_t n = av.rows(), m = av.cols();
  Array out(av.shape());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out.at(i, j) = av.at(i, j) + bv[j];
  const auto ia = a.id(), ib = bias.id();
  return t.record("add_bias", std::move(out), {ia, ib}, [ia, ib, n, m](Tape& tp, std::size_t self) {
    auto g = tp.node(self).data.grad();
    if (tp.node(ia).requires_grad) {
      auto ga = tp.grad_of(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (tp.node(ib).requires_grad) {
      auto gb = tp.grad_of(ib);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) gb[j] += g[i * m + j];
    }
  });
}

Var tanh(Var a) {
  const auto ia = a.id();
  return unary("tanh", a, [](double x) { return std::tanh(x); }, [ia](Tape& tp, std::size_t self) {
    auto& n = tp.node(self).data;
    auto g = n.grad();
    auto y = n.values();
    auto ga = tp.grad_of(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
  });
}

Var relu(Var a) {
  const auto ia = a.id();
  return unary("relu", a, [](double x) { return x > 0.0 ? x : 0.0; }, [ia](Tape& tp, std::size_t self) {
    auto& n = tp.node(self).data;
    auto g = n.grad();
    auto y = n.values();
    auto ga = tp.grad_of(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += y[i] > 0.0 ? g[i] : 0.0;
  });
}

Var softmax(Var a) {
  const Array& av = a.value();
  const std::size_t n = av.rows(), m = av.cols();
  Array out(av.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const double* x = av.values().data() + i * m;
    double* y = out.values().data() + i * m;
    const double mx = *std::max_element(x, x + m);
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) z += (y[j] = std::exp(x[j] - mx));
    for (std::size_t j = 0; j < m; ++j) y[j] /= z;
  }
  const auto ia = a.id();
  return a.tape()->record("softmax", std::move(out), {ia}, [ia, n, m](Tape& tp, std::size_t self) {
    auto& nd = tp.node(self).data;
    auto g = nd.grad();
    auto y = nd.values();
    auto ga = tp.grad_of(ia);
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < m; ++j) dot += g[i * m + j] * y[i * m + j];
      for (std::size_t j = 0; j < m; ++j) ga[i * m + j] += y[i * m + j] * (g[i * m + j] - dot);
    }
  });
}

Var log_softmax(Var a) {
  const Array& av = a.value();
  const std::size_t n = av.rows(), m = av.cols();
  Array out(av.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const double* x = av.values().data() + i * m;
    double* y = out.values().data() + i * m;
    const double mx = *std::max_element(x, x + m);
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) z += std::exp(x[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < m; ++j) y[j] = x[j] - lse;
  }
  const auto ia = a.id();
  return a.tape()->record("log_softmax", std::move(out), {ia}, [ia, n, m](Tape& tp, std::size_t self) {
    auto& nd = tp.node(self).data;
    auto g = nd.grad();
    auto y = nd.values();
    auto ga = tp.grad_of(ia);
    for (std::size_t i = 0; i < n; ++i) {
      double gs = 0.0;
      for (std::size_t j = 0; j < m; ++j) gs += g[i * m + j];
      for (std::size_t j = 0; j < m; ++j) ga[i * m + j] += g[i * m + j] - std::exp(y[i * m + j]) * gs;
    }
  });
}

Var embedding(Var table, std::span<const int> ids) {
  const Array& tv = table.value();
  require_matrix("embedding", tv);
  if (ids.empty()) throw ShapeError("embedding: empty id list");
  const std::size_t v = tv.rows(), h = tv.cols();
  Array out(Shape{ids.size(), h});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= v) {
      throw ShapeError("embedding: id " + std::to_string(ids[r]) + " outside table " + to_string(tv.shape()));
    }
    std::copy_n(tv.values().data() + ids[r] * h, h, out.values().data() + r * h);
  }
  const auto it = table.id();
  std::vector<int> idv(ids.begin(), ids.end());
  return table.tape()->record("embedding", std::move(out), {it}, [it, h, idv = std::move(idv)](Tape& tp, std::size_t self) {
    auto g = tp.node(self).data.grad();
    auto gt = tp.grad_of(it);
    for (std::size_t r = 0; r < idv.size(); ++r)
      for (std::size_t j = 0; j < h; ++j) gt[idv[r] * h + j] += g[r * h + j];
  });
}

Var concat_cols(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const Array& av = a.value();
  const Array& bv = b.value();
  require_matrix("concat_cols", av);
  require_matrix("concat_cols", bv);
  if (av.rows() != bv.rows()) throw ShapeError("concat_cols", av.shape(), bv.shape());
  const std::size_t n = av.rows(), p = av.cols(), q = bv.cols();
  Array out(Shape{n, p + q});
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(av.values().data() + i * p, p, out.values().data() + i * (p + q));
    std::copy_n(bv.values().data() + i * q, q, out.values().data() + i * (p + q) + p);
  }
  const auto ia = a.id(), ib = b.id();
  return t.record("concat_cols", std::move(out), {ia, ib}, [ia, ib, n, p, q](Tape& tp, std::size_t self) {
    auto g = tp.node(self).data.grad();
    if (tp.node(ia).requires_grad) {
      auto ga = tp.grad_of(ia);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < p; ++j) ga[i * p + j] += g[i * (p + q) + j];
    }
    if (tp.node(ib).requires_grad) {
      auto gb = tp.grad_of(ib);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < q; ++j) gb[i * q + j] += g[i * (p + q) + p + j];
    }
  });
}

Var mask(Var a, const Array& m) {
  const Array& av = a.value();
  if (av.shape() != m.shape()) throw ShapeError("mask", av.shape(), m.shape());
  Array out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * m[i];
  const auto ia = a.id();
  std::vector<double> mv(m.values().begin(), m.values().end());
  return a.tape()->record("mask", std::move(out), {ia}, [ia, mv = std::move(mv)](Tape& tp, std::size_t self) {
    auto g = tp.node(self).data.grad();
    auto ga = tp.grad_of(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * mv[i];
  });
}

Var sum(Var a) {
  const Array& av = a.value();
  double s = 0.0;
  for (double x : av.values()) s += x;
  const auto ia = a.id();
  return a.tape()->record("sum", Array::scalar(s), {ia}, [ia](Tape& tp, std::size_t self) {
    const double g = tp.node(self).data.grad()[0];
    auto ga = tp.grad_of(ia);
    for (double& x : ga) x += g;
  });
}

Var mean(Var a) {
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var pick_sum(Var a, std::span<const int> cols) {
  const Array& av = a.value();
  require_matrix("pick_sum", av);
  if (cols.size() != av.rows()) {
    throw ShapeError("pick_sum", av.shape(), Shape{cols.size()});
  }
  const std::size_t m = av.cols();
  double s = 0.0;
  for (std::size_t r = 0; r < cols.size(); ++r) {
    if (cols[r] < 0 || static_cast<std::size_t>(cols[r]) >= m) {
      throw ShapeError("pick_sum: column " + std::to_string(cols[r]) + " outside " + to_string(av.shape()));
    }
    s += av.at(r, cols[r]);
  }
  const auto ia = a.id();
  std::vector<int> cv(cols.begin(), cols.end());
  return a.tape()->record("pick_sum", Array::scalar(s), {ia}, [ia, m, cv = std::move(cv)](Tape& tp, std::size_t self) {
    const double g = tp.node(self).data.grad()[0];
    auto ga = tp.grad_of(ia);
    for (std::size_t r = 0; r < cv.size(); ++r) ga[r * m + cv[r]] += g;
  });
}

Var depthwise_conv1d(Var x, Var kernel) {
  Tape& t = same_tape(x, kernel);
  const Array& xv = x.value();
  const Array& kv = kernel.value();
  require_matrix("depthwise_conv1d", xv);
  require_matrix("depthwise_conv1d", kv);
  if (kv.cols() != xv.cols() || kv.rows() % 2 == 0) {
    throw ShapeError("depthwise_conv1d", xv.shape(), kv.shape());
  }
  const std::size_t T = xv.rows(), H = xv.cols(), W = kv.rows();
  const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(W / 2);
  Array out(xv.shape());
  for (std::size_t tt = 0; tt < T; ++tt) {
    for (std::size_t j = 0; j < W; ++j) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(tt + j) - half;
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(T)) continue;
      for (std::size_t h = 0; h < H; ++h) out.at(tt, h) += kv.at(j, h) * xv.at(src, h);
    }
  }
  const auto ix = x.id(), ik = kernel.id();
  return t.record("depthwise_conv1d", std::move(out), {ix, ik}, [ix, ik, T, H, W, half](Tape& tp, std::size_t self) {
    auto g = tp.node(self).data.grad();
    const bool gx = tp.node(ix).requires_grad, gk = tp.node(ik).requires_grad;
    std::span<double> dx, dk;
    if (gx) dx = tp.grad_of(ix);
    if (gk) dk = tp.grad_of(ik);
    auto xv = tp.node(ix).data.values();
    auto kv = tp.node(ik).data.values();
    for (std::size_t tt = 0; tt < T; ++tt) {
      for (std::size_t j = 0; j < W; ++j) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(tt + j) - half;
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(T)) continue;
        for (std::size_t h = 0; h < H; ++h) {
          const double gy = g[tt * H + h];
          if (gx) dx[src * H + h] += kv[j * H + h] * gy;
          if (gk) dk[j * H + h] += xv[src * H + h] * gy;
        }
      }
    }
  });
}

Var attention(Var q, Var k, Var v) {
  const double d = static_cast<double>(q.value().cols());
  Var scores = scale(matmul_nt(q, k), 1.0 / std::sqrt(d));
  return matmul(softmax(scores), v);
}

}  // namespace uocl::ad
