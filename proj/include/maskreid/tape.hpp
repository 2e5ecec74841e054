#pragma once

#include <cmath>
#include <deque>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "maskreid/tensor.hpp"

namespace maskreid {

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Eager reverse-mode tape over Tensor<T>. Ops compute values immediately
/// and register pull-back closures; backward() runs them in reverse
/// creation order (creation order is a topological order by construction).
template <typename T>
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  void set_grad_enabled(bool on) { grad_enabled_ = on; }
  bool grad_enabled() const { return grad_enabled_; }

  std::size_t size() const { return nodes_.size(); }

  const Tensor<T>& val(Var v) const { return nodes_[check(v)].value; }

  /// Gradient of the last backward() target w.r.t. v; empty tensor means
  /// the node is not on any gradient path.
  const Tensor<T>& grad(Var v) const { return nodes_[check(v)].grad; }

  Var leaf(Tensor<T> value, bool needs_grad = false) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = grad_enabled_ && needs_grad;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  void backward(Var loss) {
    Node& top = nodes_[check(loss)];
    if (top.value.size() != 1) throw std::logic_error("backward: loss must be a scalar");
    grad_ref(loss.id)[0] = T(1);
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (!n.grad.empty() && n.back) n.back(*this, i);
    }
  }

  // ---------------------------------------------------------------- ops --

  /// y = x * w + broadcast(bias); bias may be invalid for a pure matmul
  /// with weights.
  Var linear(Var x, Var w, Var bias) {
    const Tensor<T>& xv = val(x);
    const Tensor<T>& wv = val(w);
    if (xv.cols() != wv.rows()) throw std::invalid_argument("linear: inner dims");
    Tensor<T> y(xv.rows(), wv.cols());
    mm(xv, wv, y);
    if (bias.valid()) {
      const Tensor<T>& bv = val(bias);
      if (bv.rows() != 1 || bv.cols() != wv.cols())
        throw std::invalid_argument("linear: bias shape");
      for (std::size_t i = 0; i < y.rows(); ++i)
        for (std::size_t j = 0; j < y.cols(); ++j) y(i, j) += bv(0, j);
    }
    return make(std::move(y), {x, w, bias}, [](Tape& t, int id) {
      auto& n = t.nodes_[id];
      const Tensor<T>& g = n.grad;
      const Tensor<T>& xv = t.nodes_[n.parents[0]].value;
      const Tensor<T>& wv = t.nodes_[n.parents[1]].value;
      if (t.wants(n.parents[0])) mm_nt_acc(g, wv, t.grad_ref(n.parents[0]));
      if (t.wants(n.parents[1])) mm_tn_acc(xv, g, t.grad_ref(n.parents[1]));
      if (n.parents.size() > 2 && t.wants(n.parents[2])) {
        Tensor<T>& gb = t.grad_ref(n.parents[2]);
        for (std::size_t i = 0; i < g.rows(); ++i)
          for (std::size_t j = 0; j < g.cols(); ++j) gb(0, j) += g(i, j);
      }
    });
  }

  Var matmul(Var a, Var b) { return linear(a, b, Var{}); }

  /// y = a * b^T.
  Var matmul_nt(Var a, Var b) {
    const Tensor<T>& av = val(a);
    const Tensor<T>& bv = val(b);
    if (av.cols() != bv.cols()) throw std::invalid_argument("matmul_nt: inner dims");
    Tensor<T> y(av.rows(), bv.rows());
    for (std::size_t i = 0; i < av.rows(); ++i)
      for (std::size_t j = 0; j < bv.rows(); ++j) {
        T acc = T(0);
        for (std::size_t p = 0; p < av.cols(); ++p) acc += av(i, p) * bv(j, p);
        y(i, j) = acc;
      }
    return make(std::move(y), {a, b}, [](Tape& t, int id) {
      auto& n = t.nodes_[id];
      const Tensor<T>& g = n.grad;
      const Tensor<T>& av = t.nodes_[n.parents[0]].value;
      const Tensor<T>& bv = t.nodes_[n.parents[1]].value;
      if (t.wants(n.parents[0])) mm_acc(g, bv, t.grad_ref(n.parents[0]));
      if (t.wants(n.parents[1])) mm_tn_acc(g, av, t.grad_ref(n.parents[1]));
    });
  }

  Var add(Var a, Var b) {
    const Tensor<T>& av = val(a);
    const Tensor<T>& bv = val(b);
    if (!av.same_shape(bv)) throw std::invalid_argument("add: shape mismatch");
    Tensor<T> y = av;
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
    return make(std::move(y), {a, b}, [](Tape& t, int id) {
      auto& n = t.nodes_[id];
      for (int p : n.parents)
        if (t.wants(p)) acc_all(t.grad_ref(p), n.grad, T(1));
    });
  }

  Var sub(Var a, Var b) {
    const Tensor<T>& av = val(a);
    const Tensor<T>& bv = val(b);
    if (!av.same_shape(bv)) throw std::invalid_argument("sub: shape mismatch");
    Tensor<T> y = av;
    for (std::size_t i = 0; i < y.size(); ++i) y[i] -= bv[i];
    return make(std::move(y), {a, b}, [](Tape& t, int id) {
      auto& n = t.nodes_[id];
      if (t.wants(n.parents[0])) acc_all(t.grad_ref(n.parents[0]), n.grad, T(1));
      if (t.wants(n.parents[1])) acc_all(t.grad_ref(n.parents[1]), n.grad, T(-1));
    });
  }

  Var mul(Var a, Var b) {
    const Tensor<T>& av = val(a);
    const Tensor<T>& bv = val(b);
    if (!av.same_shape(bv)) throw std::invalid_argument("mul: shape mismatch");
    Tensor<T> y = av;
    for (std::size_t i = 0; i < y.size(); ++i) y[i] *= bv[i];
    return make(std::move(y), {a, b}, [](Tape& t, int id) {
      auto& n = t.nodes_[id];
      const Tensor<T>& av = t.nodes_[n.parents[0]].value;
      const Tensor<T>& bv = t.nodes_[n.parents[1]].value;
      if (t.wants(n.parents[0])) {
        Tensor<T>& ga = t.grad_ref(n.parents[0]);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += n.grad[i] * bv[i];
      }
      if (t.wants(n.parents[1])) {
        Tensor<T>& gb = t.grad_ref(n.parents[1]);
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += n.grad[i] * av[i];
      }
    });
  }

  /// y = a + broadcast row r over every row of a.
  Var add_rowvec(Var a, Var r) {
    const Tensor<T>& av = val(a);
    const Tensor<T>& rv = val(r);
    if (rv.rows() != 1 || rv.cols() != av.cols())
      throw std::invalid_argument("add_rowvec: shape mismatch");
    Tensor<T> y = av;
    for (std::size_t i = 0; i < y.rows(); ++i)
      for (std::size_t j = 0; j < y.cols(); ++j) y(i, j) += rv(0, j);
    return make(std::move(y), {a, r}, [](Tape& t, int id) {
      auto& n = t.nodes_[id];
      if (t.wants(n.parents[0])) acc_all(t.grad_ref(n.parents[0]), n.grad, T(1));
      if (t.wants(n.parents[1])) {
        Tensor<T>& gr = t.grad_ref(n.parents[1]);
        const Tensor<T>& g = n.grad;
        for (std::size_t i = 0; i < g.rows(); ++i)
          for (std::size_t j = 0; j < g.cols(); ++j) gr(0, j) += g(i, j);
      }
    });
  }

  Var mul_scalar(Var a, T c) {
    Tensor<T> y = val(a);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] *= c;
    return make(std::move(y), {a}, [c](Tape& t, int id) {
      auto& n = t.nodes_[id];
      if (t.wants(n.parents[0])) acc_all(t.grad_ref(n.parents[0]), n.grad, c);
    });
  }

  Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
    std::size_t rows = 0;
    const std::size_t cols = val(parts[0]).cols();
    for (Var p : parts) {
      if (val(p).cols() != cols) throw std::invalid_argument("concat_rows: col mismatch");
      rows += val(p).rows();
    }
    Tensor<T> y(rows, cols);
    std::size_t r = 0;
    for (Var p : parts) {
      const Tensor<T>& pv = val(p);
      for (std::size_t i = 0; i < pv.rows(); ++i, ++r)
        for (std::size_t j = 0; j < cols; ++j) y(r, j) = pv(i, j);
    }
    return make(std::move(y), parts, [](Tape& t, int id) {
      auto& n = t.nodes_[id];
      const Tensor<T>& g = n.grad;
      std::size_t r = 0;
      for (int p : n.parents) {
        const std::size_t pr = t.nodes_[p].value.rows();
        if (t.wants(p)) {
          Tensor<T>& gp = t.grad_ref(p);
          for (std::size_t i = 0; i < pr; ++i)
            for (std::size_t j = 0; j < g.cols(); ++j) gp(i, j) += g(r + i, j);
        }
        r += pr;
      }
    });
  }

  Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
    const std::size_t rows = val(parts[0]).rows();
    std::size_t cols = 0;
    for (Var p : parts) {
      if (val(p).rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
      cols += val(p).cols();
    }
    Tensor<T> y(rows, cols);
    std::size_t c = 0;
    for (Var p : parts) {
      const Tensor<T>& pv = val(p);
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < pv.cols(); ++j) y(i, c + j) = pv(i, j);
      c += pv.cols();
    }
    return make(std::move(y), parts, [](Tape& t, int id) {
      auto& n = t.nodes_[id];
      const Tensor<T>& g = n.grad;
      std::size_t c = 0;
      for (int p : n.parents) {
        const std::size_t pc = t.nodes_[p].value.cols();
        if (t.wants(p)) {
          Tensor<T>& gp = t.grad_ref(p);
          for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t j = 0; j < pc; ++j) gp(i, j) += g(i, c + j);
        }
        c += pc;
      }
    });
  }

  Var slice_rows(Var a, std::size_t r0, std::size_t nrows) {
    const Tensor<T>& av = val(a);
    if (r0 + nrows > av.rows()) throw std::invalid_argument("slice_rows: out of range");
    Tensor<T> y(nrows, av.cols());
    for (std::size_t i = 0; i < nrows; ++i)
      for (std::size_t j = 0; j < av.cols(); ++j) y(i, j) = av(r0 + i, j);
    return make(std::move(y), {a}, [r0](Tape& t, int id) {
      auto& n = t.nodes_[id];
      if (!t.wants(n.parents[0])) return;
      Tensor<T>& ga = t.grad_ref(n.parents[0]);
      const Tensor<T>& g = n.grad;
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) ga(r0 + i, j) += g(i, j);
    });
  }

  Var slice_cols(Var a, std::size_t c0, std::size_t ncols) {
    const Tensor<T>& av = val(a);
    if (c0 + ncols > av.cols()) throw std::invalid_argument("slice_cols: out of range");
    Tensor<T> y(av.rows(), ncols);
    for (std::size_t i = 0; i < av.rows(); ++i)
      for (std::size_t j = 0; j < ncols; ++j) y(i, j) = av(i, c0 + j);
    return make(std::move(y), {a}, [c0](Tape& t, int id) {
      auto& n = t.nodes_[id];
      if (!t.wants(n.parents[0])) return;
      Tensor<T>& ga = t.grad_ref(n.parents[0]);
      const Tensor<T>& g = n.grad;
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) ga(i, c0 + j) += g(i, j);
    });
  }

  Var gather_rows(Var a, std::vector<std::size_t> idx) {
    const Tensor<T>& av = val(a);
    Tensor<T> y(idx.size(), av.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (idx[i] >= av.rows()) throw std::invalid_argument("gather_rows: out of range");
      for (std::size_t j = 0; j < av.cols(); ++j) y(i, j) = av(idx[i], j);
    }
    return make(std::move(y), {a}, [idx = std::move(idx)](Tape& t, int id) {
      auto& n = t.nodes_[id];
      if (!t.wants(n.parents[0])) return;
      Tensor<T>& ga = t.grad_ref(n.parents[0]);
      const Tensor<T>& g = n.grad;
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) ga(idx[i], j) += g(i, j);
    });
  }

  Var mean_rows(Var a) {
    const Tensor<T>& av = val(a);
    Tensor<T> y(1, av.cols());
    for (std::size_t i = 0; i < av.rows(); ++i)
      for (std::size_t j = 0; j < av.cols(); ++j) y(0, j) += av(i, j);
    const T inv = T(1) / static_cast<T>(av.rows());
    for (std::size_t j = 0; j < av.cols(); ++j) y(0, j) *= inv;
    return make(std::move(y), {a}, [inv](Tape& t, int id) {
      auto& n = t.nodes_[id];
      if (!t.wants(n.parents[0])) return;
      Tensor<T>& ga = t.grad_ref(n.parents[0]);
      const Tensor<T>& g = n.grad;
      for (std::size_t i = 0; i < ga.rows(); ++i)
        for (std::size_t j = 0; j < ga.cols(); ++j) ga(i, j) += g(0, j) * inv;
    });
  }

  Var sum_all(Var a) {
    const Tensor<T>& av = val(a);
    Tensor<T> y(1, 1);
    for (std::size_t i = 0; i < av.size(); ++i) y[0] += av[i];
    return make(std::move(y), {a}, [](Tape& t, int id) {
      auto& n = t.nodes_[id];
      if (t.wants(n.parents[0])) acc_all(t.grad_ref(n.parents[0]), n.grad[0], T(1));
    });
  }

  Var mean_all(Var a) {
    const std::size_t count = val(a).size();
    return mul_scalar(sum_all(a), T(1) / static_cast<T>(count));
  }

  /// m x n -> m x 1 row sums.
  Var row_sums(Var a) {
    const Tensor<T>& av = val(a);
    Tensor<T> y(av.rows(), 1);
    for (std::size_t i = 0; i < av.rows(); ++i) {
      T acc = T(0);
      for (std::size_t j = 0; j < av.cols(); ++j) acc += av(i, j);
      y(i, 0) = acc;
    }
    return make(std::move(y), {a}, [](Tape& t, int id) {
      auto& n = t.nodes_[id];
      if (!t.wants(n.parents[0])) return;
      Tensor<T>& ga = t.grad_ref(n.parents[0]);
      const Tensor<T>& g = n.grad;
      for (std::size_t i = 0; i < ga.rows(); ++i)
        for (std::size_t j = 0; j < ga.cols(); ++j) ga(i, j) += g(i, 0);
    });
  }

  Var softmax_rows(Var a) {
    Tensor<T> y = val(a);
    for (std::size_t i = 0; i < y.rows(); ++i) {
      T mx = y(i, 0);
      for (std::size_t j = 1; j < y.cols(); ++j) mx = std::max(mx, y(i, j));
      T sum = T(0);
      for (std::size_t j = 0; j < y.cols(); ++j) {
        y(i, j) = std::exp(y(i, j) - mx);
        sum += y(i, j);
      }
      for (std::size_t j = 0; j < y.cols(); ++j) y(i, j) /= sum;
    }
    return make(std::move(y), {a}, [](Tape& t, int id) {
      auto& n = t.nodes_[id];
      if (!t.wants(n.parents[0])) return;
      Tensor<T>& ga = t.grad_ref(n.parents[0]);
      const Tensor<T>& y = n.value;
      const Tensor<T>& g = n.grad;
      for (std::size_t i = 0; i < y.rows(); ++i) {
        T dot = T(0);
        for (std::size_t j = 0; j < y.cols(); ++j) dot += g(i, j) * y(i, j);
        for (std::size_t j = 0; j < y.cols(); ++j)
          ga(i, j) += y(i, j) * (g(i, j) - dot);
      }
    });
  }

  /// Row-wise standardization with per-column affine parameters.
  Var layer_norm_rows(Var x, Var gamma, Var beta, T eps) {
    const Tensor<T>& xv = val(x);
    const Tensor<T>& gv = val(gamma);
    const Tensor<T>& bv = val(beta);
    if (gv.rows() != 1 || gv.cols() != xv.cols() || !gv.same_shape(bv))
      throw std::invalid_argument("layer_norm_rows: param shape");
    Tensor<T> y(xv.rows(), xv.cols());
    for (std::size_t i = 0; i < xv.rows(); ++i) {
      T mean = T(0), var = T(0);
      for (std::size_t j = 0; j < xv.cols(); ++j) mean += xv(i, j);
      mean /= static_cast<T>(xv.cols());
      for (std::size_t j = 0; j < xv.cols(); ++j) {
        const T d = xv(i, j) - mean;
        var += d * d;
      }
      var /= static_cast<T>(xv.cols());
      const T inv = T(1) / std::sqrt(var + eps);
      for (std::size_t j = 0; j < xv.cols(); ++j)
        y(i, j) = (xv(i, j) - mean) * inv * gv(0, j) + bv(0, j);
    }
    return make(std::move(y), {x, gamma, beta}, [eps](Tape& t, int id) {
      auto& n = t.nodes_[id];
      const Tensor<T>& xv = t.nodes_[n.parents[0]].value;
      const Tensor<T>& gv = t.nodes_[n.parents[1]].value;
      const Tensor<T>& g = n.grad;
      const std::size_t cols = xv.cols();
      const T invn = T(1) / static_cast<T>(cols);
      std::vector<T> xhat(cols);
      for (std::size_t i = 0; i < xv.rows(); ++i) {
        T mean = T(0), var = T(0);
        for (std::size_t j = 0; j < cols; ++j) mean += xv(i, j);
        mean *= invn;
        for (std::size_t j = 0; j < cols; ++j) {
          const T d = xv(i, j) - mean;
          var += d * d;
        }
        var *= invn;
        const T inv = T(1) / std::sqrt(var + eps);
        for (std::size_t j = 0; j < cols; ++j) xhat[j] = (xv(i, j) - mean) * inv;

        if (t.wants(n.parents[1])) {
          Tensor<T>& gg = t.grad_ref(n.parents[1]);
          for (std::size_t j = 0; j < cols; ++j) gg(0, j) += g(i, j) * xhat[j];
        }
        if (t.wants(n.parents[2])) {
          Tensor<T>& gb = t.grad_ref(n.parents[2]);
          for (std::size_t j = 0; j < cols; ++j) gb(0, j) += g(i, j);
        }
        if (t.wants(n.parents[0])) {
          Tensor<T>& gx = t.grad_ref(n.parents[0]);
          T sum_dy = T(0), sum_dyx = T(0);
          for (std::size_t j = 0; j < cols; ++j) {
            const T dy = g(i, j) * gv(0, j);
            sum_dy += dy;
            sum_dyx += dy * xhat[j];
          }
          for (std::size_t j = 0; j < cols; ++j) {
            const T dy = g(i, j) * gv(0, j);
            gx(i, j) += inv * (dy - invn * sum_dy - xhat[j] * invn * sum_dyx);
          }
        }
      }
    });
  }

  /// Column-wise (over-batch) standardization with affine parameters;
  /// statistics are the biased batch moments.
  Var batch_norm_cols(Var x, Var gamma, Var beta, T eps) {
    const Tensor<T>& xv = val(x);
    const Tensor<T>& gv = val(gamma);
    const Tensor<T>& bv = val(beta);
    if (gv.rows() != 1 || gv.cols() != xv.cols() || !gv.same_shape(bv))
      throw std::invalid_argument("batch_norm_cols: param shape");
    const std::size_t n = xv.rows(), cols = xv.cols();
    Tensor<T> y(n, cols);
    for (std::size_t j = 0; j < cols; ++j) {
      T mean = T(0), var = T(0);
      for (std::size_t i = 0; i < n; ++i) mean += xv(i, j);
      mean /= static_cast<T>(n);
      for (std::size_t i = 0; i < n; ++i) {
        const T d = xv(i, j) - mean;
        var += d * d;
      }
      var /= static_cast<T>(n);
      const T inv = T(1) / std::sqrt(var + eps);
      for (std::size_t i = 0; i < n; ++i)
        y(i, j) = (xv(i, j) - mean) * inv * gv(0, j) + bv(0, j);
    }
    return make(std::move(y), {x, gamma, beta}, [eps](Tape& t, int id) {
      auto& n_ = t.nodes_[id];
      const Tensor<T>& xv = t.nodes_[n_.parents[0]].value;
      const Tensor<T>& gv = t.nodes_[n_.parents[1]].value;
      const Tensor<T>& g = n_.grad;
      const std::size_t n = xv.rows(), cols = xv.cols();
      const T invn = T(1) / static_cast<T>(n);
      std::vector<T> xhat(n);
      for (std::size_t j = 0; j < cols; ++j) {
        T mean = T(0), var = T(0);
        for (std::size_t i = 0; i < n; ++i) mean += xv(i, j);
        mean *= invn;
        for (std::size_t i = 0; i < n; ++i) {
          const T d = xv(i, j) - mean;
          var += d * d;
        }
        var *= invn;
        const T inv = T(1) / std::sqrt(var + eps);
        for (std::size_t i = 0; i < n; ++i) xhat[i] = (xv(i, j) - mean) * inv;

        if (t.wants(n_.parents[1])) {
          Tensor<T>& gg = t.grad_ref(n_.parents[1]);
          for (std::size_t i = 0; i < n; ++i) gg(0, j) += g(i, j) * xhat[i];
        }
        if (t.wants(n_.parents[2])) {
          Tensor<T>& gb = t.grad_ref(n_.parents[2]);
          for (std::size_t i = 0; i < n; ++i) gb(0, j) += g(i, j);
        }
        if (t.wants(n_.parents[0])) {
          Tensor<T>& gx = t.grad_ref(n_.parents[0]);
          T sum_dy = T(0), sum_dyx = T(0);
          for (std::size_t i = 0; i < n; ++i) {
            const T dy = g(i, j) * gv(0, j);
            sum_dy += dy;
            sum_dyx += dy * xhat[i];
          }
          for (std::size_t i = 0; i < n; ++i) {
            const T dy = g(i, j) * gv(0, j);
            gx(i, j) += inv * (dy - invn * sum_dy - xhat[i] * invn * sum_dyx);
          }
        }
      }
    });
  }

  /// Normalization against fixed (running) statistics.
  Var batch_norm_eval(Var x, Var gamma, Var beta, const Tensor<T>& mean,
                      const Tensor<T>& var, T eps) {
    const Tensor<T>& xv = val(x);
    const Tensor<T>& gv = val(gamma);
    if (mean.cols() != xv.cols() || var.cols() != xv.cols())
      throw std::invalid_argument("batch_norm_eval: stat shape");
    Tensor<T> inv(1, xv.cols());
    for (std::size_t j = 0; j < xv.cols(); ++j)
      inv(0, j) = T(1) / std::sqrt(var(0, j) + eps);
    Tensor<T> y(xv.rows(), xv.cols());
    const Tensor<T>& bv = val(beta);
    for (std::size_t i = 0; i < xv.rows(); ++i)
      for (std::size_t j = 0; j < xv.cols(); ++j)
        y(i, j) = (xv(i, j) - mean(0, j)) * inv(0, j) * gv(0, j) + bv(0, j);
    return make(std::move(y), {x, gamma, beta},
                [mean, inv](Tape& t, int id) {
                  auto& n = t.nodes_[id];
                  const Tensor<T>& xv = t.nodes_[n.parents[0]].value;
                  const Tensor<T>& gv = t.nodes_[n.parents[1]].value;
                  const Tensor<T>& g = n.grad;
                  if (t.wants(n.parents[0])) {
                    Tensor<T>& gx = t.grad_ref(n.parents[0]);
                    for (std::size_t i = 0; i < g.rows(); ++i)
                      for (std::size_t j = 0; j < g.cols(); ++j)
                        gx(i, j) += g(i, j) * gv(0, j) * inv(0, j);
                  }
                  if (t.wants(n.parents[1])) {
                    Tensor<T>& gg = t.grad_ref(n.parents[1]);
                    for (std::size_t i = 0; i < g.rows(); ++i)
                      for (std::size_t j = 0; j < g.cols(); ++j)
                        gg(0, j) += g(i, j) * (xv(i, j) - mean(0, j)) * inv(0, j);
                  }
                  if (t.wants(n.parents[2])) {
                    Tensor<T>& gb = t.grad_ref(n.parents[2]);
                    for (std::size_t i = 0; i < g.rows(); ++i)
                      for (std::size_t j = 0; j < g.cols(); ++j) gb(0, j) += g(i, j);
                  }
                });
  }

  Var gelu(Var a) {
    const Tensor<T>& av = val(a);
    Tensor<T> y(av.rows(), av.cols());
    for (std::size_t i = 0; i < av.size(); ++i) {
      const T x = av[i];
      y[i] = T(0.5) * x * (T(1) + std::erf(x / std::sqrt(T(2))));
    }
    return make(std::move(y), {a}, [](Tape& t, int id) {
      auto& n = t.nodes_[id];
      if (!t.wants(n.parents[0])) return;
      Tensor<T>& ga = t.grad_ref(n.parents[0]);
      const Tensor<T>& av = t.nodes_[n.parents[0]].value;
      constexpr double inv_sqrt2pi = 0.3989422804014327;
      for (std::size_t i = 0; i < ga.size(); ++i) {
        const T x = av[i];
        const T cdf = T(0.5) * (T(1) + std::erf(x / std::sqrt(T(2))));
        const T pdf = static_cast<T>(inv_sqrt2pi * std::exp(-0.5 * double(x) * double(x)));
        ga[i] += n.grad[i] * (cdf + x * pdf);
      }
    });
  }

  Var relu(Var a) {
    Tensor<T> y = val(a);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::max(y[i], T(0));
    return make(std::move(y), {a}, [](Tape& t, int id) {
      auto& n = t.nodes_[id];
      if (!t.wants(n.parents[0])) return;
      Tensor<T>& ga = t.grad_ref(n.parents[0]);
      const Tensor<T>& av = t.nodes_[n.parents[0]].value;
      for (std::size_t i = 0; i < ga.size(); ++i)
        if (av[i] > T(0)) ga[i] += n.grad[i];
    });
  }

  /// Treats the value as a constant for differentiation.
  Var stop_gradient(Var a) {
    Tensor<T> y = val(a);
    Node n;
    n.value = std::move(y);
    n.needs_grad = false;  // no parents, no pull-back: gradients stop here
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  /// softmax(q k^T * scale) v for one attention head.
  Var attention_head(Var q, Var k, Var v, T scale) {
    const Tensor<T>& qv = val(q);
    const Tensor<T>& kv = val(k);
    const Tensor<T>& vv = val(v);
    if (qv.cols() != kv.cols() || kv.rows() != vv.rows())
      throw std::invalid_argument("attention_head: shape mismatch");
    Tensor<T> attn(qv.rows(), kv.rows());
    for (std::size_t i = 0; i < qv.rows(); ++i) {
      for (std::size_t j = 0; j < kv.rows(); ++j) {
        T acc = T(0);
        for (std::size_t p = 0; p < qv.cols(); ++p) acc += qv(i, p) * kv(j, p);
        attn(i, j) = acc * scale;
      }
      T mx = attn(i, 0);
      for (std::size_t j = 1; j < kv.rows(); ++j) mx = std::max(mx, attn(i, j));
      T sum = T(0);
      for (std::size_t j = 0; j < kv.rows(); ++j) {
        attn(i, j) = std::exp(attn(i, j) - mx);
        sum += attn(i, j);
      }
      for (std::size_t j = 0; j < kv.rows(); ++j) attn(i, j) /= sum;
    }
    Tensor<T> y(qv.rows(), vv.cols());
    mm(attn, vv, y);
    return make(std::move(y), {q, k, v},
                [attn = std::move(attn), scale](Tape& t, int id) {
                  auto& n = t.nodes_[id];
                  const Tensor<T>& g = n.grad;
                  const Tensor<T>& qv = t.nodes_[n.parents[0]].value;
                  const Tensor<T>& kv = t.nodes_[n.parents[1]].value;
                  const Tensor<T>& vv = t.nodes_[n.parents[2]].value;
                  if (t.wants(n.parents[2])) mm_tn_acc(attn, g, t.grad_ref(n.parents[2]));
                  // dS = A .* (dA - rowsum(dA .* A)), dA = g v^T
                  Tensor<T> dS(attn.rows(), attn.cols());
                  for (std::size_t i = 0; i < attn.rows(); ++i) {
                    T dot = T(0);
                    std::vector<T> da(attn.cols());
                    for (std::size_t j = 0; j < attn.cols(); ++j) {
                      T acc = T(0);
                      for (std::size_t p = 0; p < vv.cols(); ++p)
                        acc += g(i, p) * vv(j, p);
                      da[j] = acc;
                      dot += acc * attn(i, j);
                    }
                    for (std::size_t j = 0; j < attn.cols(); ++j)
                      dS(i, j) = attn(i, j) * (da[j] - dot) * scale;
                  }
                  if (t.wants(n.parents[0])) mm_acc(dS, kv, t.grad_ref(n.parents[0]));
                  if (t.wants(n.parents[1])) mm_tn_acc(dS, qv, t.grad_ref(n.parents[1]));
                });
  }

  /// Per-row -log softmax(logits)[label], max-subtraction stabilized.
  Var cross_entropy_rows(Var logits, std::vector<std::size_t> labels) {
    const Tensor<T>& lv = val(logits);
    if (labels.size() != lv.rows())
      throw std::invalid_argument("cross_entropy_rows: label count");
    for (std::size_t lab : labels)
      if (lab >= lv.cols()) throw std::invalid_argument("cross_entropy_rows: label out of range");
    Tensor<T> y(lv.rows(), 1);
    for (std::size_t i = 0; i < lv.rows(); ++i) {
      T mx = lv(i, 0);
      for (std::size_t j = 1; j < lv.cols(); ++j) mx = std::max(mx, lv(i, j));
      T sum = T(0);
      for (std::size_t j = 0; j < lv.cols(); ++j) sum += std::exp(lv(i, j) - mx);
      y(i, 0) = mx + std::log(sum) - lv(i, labels[i]);
    }
    return make(std::move(y), {logits}, [labels = std::move(labels)](Tape& t, int id) {
      auto& n = t.nodes_[id];
      if (!t.wants(n.parents[0])) return;
      Tensor<T>& gl = t.grad_ref(n.parents[0]);
      const Tensor<T>& lv = t.nodes_[n.parents[0]].value;
      const Tensor<T>& g = n.grad;
      for (std::size_t i = 0; i < lv.rows(); ++i) {
        T mx = lv(i, 0);
        for (std::size_t j = 1; j < lv.cols(); ++j) mx = std::max(mx, lv(i, j));
        T sum = T(0);
        for (std::size_t j = 0; j < lv.cols(); ++j) sum += std::exp(lv(i, j) - mx);
        for (std::size_t j = 0; j < lv.cols(); ++j) {
          T p = std::exp(lv(i, j) - mx) / sum;
          if (j == labels[i]) p -= T(1);
          gl(i, j) += g(i, 0) * p;
        }
      }
    });
  }

  /// Elementwise log(1 + exp(x)), computed as max(x,0) + log1p(exp(-|x|)).
  Var softplus(Var a) {
    const Tensor<T>& av = val(a);
    Tensor<T> y(av.rows(), av.cols());
    for (std::size_t i = 0; i < av.size(); ++i) {
      const T x = av[i];
      y[i] = std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x)));
    }
    return make(std::move(y), {a}, [](Tape& t, int id) {
      auto& n = t.nodes_[id];
      if (!t.wants(n.parents[0])) return;
      Tensor<T>& ga = t.grad_ref(n.parents[0]);
      const Tensor<T>& av = t.nodes_[n.parents[0]].value;
      for (std::size_t i = 0; i < ga.size(); ++i) {
        const T x = av[i];
        const T s = x >= T(0) ? T(1) / (T(1) + std::exp(-x))
                              : std::exp(x) / (T(1) + std::exp(x));
        ga[i] += n.grad[i] * s;
      }
    });
  }

  /// Row-wise negative cosine similarity -(p.z)/(|p||z|) -> m x 1.
  /// Rejects zero-norm rows; denominators are floored at 1e-12 in the
  /// gradient path only.
  Var neg_cosine_rows(Var p, Var z) {
    const Tensor<T>& pv = val(p);
    const Tensor<T>& zv = val(z);
    if (!pv.same_shape(zv)) throw std::invalid_argument("neg_cosine_rows: shape mismatch");
    Tensor<T> y(pv.rows(), 1);
    for (std::size_t i = 0; i < pv.rows(); ++i) {
      T dot = T(0), pp = T(0), zz = T(0);
      for (std::size_t j = 0; j < pv.cols(); ++j) {
        dot += pv(i, j) * zv(i, j);
        pp += pv(i, j) * pv(i, j);
        zz += zv(i, j) * zv(i, j);
      }
      const T np = std::sqrt(pp), nz = std::sqrt(zz);
      if (np < T(1e-12) || nz < T(1e-12))
        throw std::domain_error("neg_cosine_rows: zero-norm input");
      y(i, 0) = -dot / (np * nz);
    }
    return make(std::move(y), {p, z}, [](Tape& t, int id) {
      auto& n = t.nodes_[id];
      const Tensor<T>& pv = t.nodes_[n.parents[0]].value;
      const Tensor<T>& zv = t.nodes_[n.parents[1]].value;
      const Tensor<T>& g = n.grad;
      const Tensor<T>& y = n.value;
      const bool wp = t.wants(n.parents[0]);
      const bool wz = t.wants(n.parents[1]);
      for (std::size_t i = 0; i < pv.rows(); ++i) {
        T pp = T(0), zz = T(0);
        for (std::size_t j = 0; j < pv.cols(); ++j) {
          pp += pv(i, j) * pv(i, j);
          zz += zv(i, j) * zv(i, j);
        }
        const T np = std::max(std::sqrt(pp), T(1e-12));
        const T nz = std::max(std::sqrt(zz), T(1e-12));
        const T c = y(i, 0);  // c = -dot/(np*nz)
        if (wp) {
          Tensor<T>& gp = t.grad_ref(n.parents[0]);
          for (std::size_t j = 0; j < pv.cols(); ++j)
            gp(i, j) += g(i, 0) * (-zv(i, j) / (np * nz) - c * pv(i, j) / (np * np));
        }
        if (wz) {
          Tensor<T>& gz = t.grad_ref(n.parents[1]);
          for (std::size_t j = 0; j < pv.cols(); ++j)
            gz(i, j) += g(i, 0) * (-pv(i, j) / (np * nz) - c * zv(i, j) / (nz * nz));
        }
      }
    });
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    std::vector<int> parents;
    std::function<void(Tape&, int)> back;
    bool needs_grad = false;
  };

  std::deque<Node> nodes_;  // deque: references from val() stay valid as ops append
  bool grad_enabled_ = true;

  int check(Var v) const {
    if (!v.valid() || v.id >= static_cast<int>(nodes_.size()))
      throw std::logic_error("Tape: invalid Var");
    return v.id;
  }

  /// A node participates in backward if it, or anything upstream of it,
  /// asked for gradients.
  bool wants(int id) const { return nodes_[id].needs_grad; }

  Tensor<T>& grad_ref(int id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Tensor<T>(n.value.rows(), n.value.cols());
    return n.grad;
  }

  template <typename F>
  Var make(Tensor<T> value, std::vector<Var> parents, F&& back) {
    Node n;
    n.value = std::move(value);
    if (grad_enabled_) {
      n.parents.reserve(parents.size());
      bool any = false;
      for (Var p : parents) {
        if (!p.valid()) continue;
        n.parents.push_back(check(p));
        any = any || nodes_[p.id].needs_grad;
      }
      n.needs_grad = any;
      if (any) n.back = std::forward<F>(back);
    }
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  static void acc_all(Tensor<T>& dst, const Tensor<T>& src, T scale) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i] * scale;
  }
  static void acc_all(Tensor<T>& dst, T value, T scale) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += value * scale;
  }

  /// c = a b  (c preallocated, overwritten)
  static void mm(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& c) {
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    for (std::size_t i = 0; i < m; ++i) {
      T* crow = c.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] = T(0);
      for (std::size_t p = 0; p < k; ++p) {
        const T aip = a(i, p);
        const T* brow = b.data() + p * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
      }
    }
  }

  /// c += a b
  static void mm_acc(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& c) {
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    for (std::size_t i = 0; i < m; ++i) {
      T* crow = c.data() + i * n;
      for (std::size_t p = 0; p < k; ++p) {
        const T aip = a(i, p);
        const T* brow = b.data() + p * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
      }
    }
  }

  /// c += a b^T
  static void mm_nt_acc(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& c) {
    const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        T acc = T(0);
        const T* arow = a.data() + i * k;
        const T* brow = b.data() + j * k;
        for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
        c(i, j) += acc;
      }
  }

  /// c += a^T b  (a: m x k, b: m x n, c: k x n)
  static void mm_tn_acc(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& c) {
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    for (std::size_t i = 0; i < m; ++i) {
      const T* arow = a.data() + i * k;
      const T* brow = b.data() + i * n;
      for (std::size_t p = 0; p < k; ++p) {
        const T aip = arow[p];
        if (aip == T(0)) continue;
        T* crow = c.data() + p * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
      }
    }
  }
};

}  // namespace maskreid
