#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <vector>

#include "vtlab/matrix.hpp"
#include "vtlab/optim.hpp"

namespace vtlab {

// Reverse-mode autodiff over Matrix values.
//
// A Graph is a tape: every operation appends one node, so creation order is
// a topological order and backward() is a single reverse sweep. Graphs are
// built per forward pass and discarded; parameters live outside the graph
// (see Param) and receive gradient contributions during the sweep.
class Graph;

class Var {
 public:
  Var() = default;
  Var(Graph* g, int idx) : g_(g), idx_(idx) {}
  bool valid() const { return g_ != nullptr; }
  const Matrix& val() const;
  const Matrix& grad() const;
  Graph* graph() const { return g_; }
  int index() const { return idx_; }

 private:
  Graph* g_ = nullptr;
  int idx_ = -1;
};

class Graph {
 public:
  // Leaf holding a value owned by the graph.
  Var input(Matrix v) {
    Node n;
    n.val = std::move(v);
    return push(std::move(n));
  }

  // Leaf aliasing an external parameter; its gradient is accumulated into
  // the Param at the end of the backward sweep.
  Var param(Param& p);

  // Leaf aliasing external read-only storage. No copy, no gradient; backward
  // passes skip the (possibly large) gradient work for it entirely.
  Var const_ref(const Matrix& m) {
    Node n;
    n.alias = &m;
    n.wants_grad = false;
    return push(std::move(n));
  }

  // Same linear element order, new shape.
  Var reshape(Var a, int rows, int cols) {
    const Matrix& av = a.val();
    if (static_cast<size_t>(rows) * cols != av.size()) throw DimensionError("reshape size mismatch");
    Node n;
    n.val = Matrix(rows, cols);
    std::memcpy(n.val.data(), av.data(), av.size() * sizeof(double));
    Var out = push(std::move(n));
    node(out).back = [this, a, out]() {
      if (!node(a).wants_grad) return;
      const Matrix& dy = node(out).grad;
      Matrix da(a.val().rows(), a.val().cols());
      std::memcpy(da.data(), dy.data(), dy.size() * sizeof(double));
      accum(a, da);
    };
    return out;
  }

  Var add(Var a, Var b) {
    check_same(a, b, "add");
    Node n;
    n.val = a.val();
    add_inplace(n.val, b.val());
    Var out = push(std::move(n));
    node(out).back = [this, a, b, out]() {
      accum(a, node(out).grad);
      accum(b, node(out).grad);
    };
    return out;
  }

  Var sub(Var a, Var b) {
    check_same(a, b, "sub");
    Node n;
    n.val = a.val();
    {
      double* p = n.val.data();
      const double* q = b.val().data();
      for (size_t i = 0; i < n.val.size(); ++i) p[i] -= q[i];
    }
    Var out = push(std::move(n));
    node(out).back = [this, a, b, out]() {
      accum(a, node(out).grad);
      accum_scaled(b, node(out).grad, -1.0);
    };
    return out;
  }

  Var mul(Var a, Var b) {
    check_same(a, b, "mul");
    Node n;
    n.val = a.val();
    {
      double* p = n.val.data();
      const double* q = b.val().data();
      for (size_t i = 0; i < n.val.size(); ++i) p[i] *= q[i];
    }
    Var out = push(std::move(n));
    node(out).back = [this, a, b, out]() {
      const Matrix& dy = node(out).grad;
      Matrix da = dy;
      {
        double* p = da.data();
        const double* q = b.val().data();
        for (size_t i = 0; i < da.size(); ++i) p[i] *= q[i];
      }
      accum(a, da);
      Matrix db = dy;
      {
        double* p = db.data();
        const double* q = a.val().data();
        for (size_t i = 0; i < db.size(); ++i) p[i] *= q[i];
      }
      accum(b, db);
    };
    return out;
  }

  Var scale(Var a, double s) {
    Node n;
    n.val = a.val();
    for (size_t i = 0; i < n.val.size(); ++i) n.val.data()[i] *= s;
    Var out = push(std::move(n));
    node(out).back = [this, a, out, s]() { accum_scaled(a, node(out).grad, s); };
    return out;
  }

  // Adds a constant matrix (no gradient to the constant).
  Var add_const(Var a, const Matrix& c) {
    if (!a.val().same_shape(c)) throw DimensionError("add_const shape mismatch");
    Node n;
    n.val = a.val();
    add_inplace(n.val, c);
    Var out = push(std::move(n));
    node(out).back = [this, a, out]() { accum(a, node(out).grad); };
    return out;
  }

  // x: L x d, v: 1 x d broadcast over rows.
  Var add_rowvec(Var x, Var v) {
    if (v.val().rows() != 1 || v.val().cols() != x.val().cols())
      throw DimensionError("add_rowvec shape mismatch");
    Node n;
    n.val = x.val();
    for (int r = 0; r < n.val.rows(); ++r) {
      double* p = n.val.row(r);
      const double* q = v.val().row(0);
      for (int j = 0; j < n.val.cols(); ++j) p[j] += q[j];
    }
    Var out = push(std::move(n));
    node(out).back = [this, x, v, out]() {
      const Matrix& dy = node(out).grad;
      accum(x, dy);
      Matrix dv(1, dy.cols());
      for (int r = 0; r < dy.rows(); ++r)
        for (int j = 0; j < dy.cols(); ++j) dv(0, j) += dy(r, j);
      accum(v, dv);
    };
    return out;
  }

  Var matmul_(Var a, Var b) {
    Node n;
    n.val = matmul(a.val(), b.val());
    Var out = push(std::move(n));
    node(out).back = [this, a, b, out]() {
      const Matrix& dy = node(out).grad;
      const Matrix& av = a.val();
      const Matrix& bv = b.val();
      if (node(a).wants_grad) {
        // dA(i,k) = sum_j dy(i,j) * B(k,j), row-contiguous dot products
        Matrix da(av.rows(), av.cols());
        for (int i = 0; i < av.rows(); ++i) {
          const double* dyr = dy.row(i);
          double* dar = da.row(i);
          for (int k = 0; k < av.cols(); ++k) {
            const double* br = bv.row(k);
            double s = 0.0;
            for (int j = 0; j < bv.cols(); ++j) s += dyr[j] * br[j];
            dar[k] = s;
          }
        }
        accum(a, da);
      }
      if (node(b).wants_grad) {
        // dB(k,j) = sum_i A(i,k) * dy(i,j)
        Matrix db(bv.rows(), bv.cols());
        for (int i = 0; i < av.rows(); ++i) {
          const double* ar = av.row(i);
          const double* dyr = dy.row(i);
          for (int k = 0; k < av.cols(); ++k) {
            const double aik = ar[k];
            if (aik == 0.0) continue;
            double* dbr = db.row(k);
            for (int j = 0; j < bv.cols(); ++j) dbr[j] += aik * dyr[j];
          }
        }
        accum(b, db);
      }
    };
    return out;
  }

  Var transpose_(Var a) {
    Node n;
    n.val = transpose(a.val());
    Var out = push(std::move(n));
    node(out).back = [this, a, out]() { accum(a, transpose(node(out).grad)); };
    return out;
  }

  Var tanh_(Var a) {
    Node n;
    n.val = a.val();
    for (size_t i = 0; i < n.val.size(); ++i) n.val.data()[i] = std::tanh(n.val.data()[i]);
    Var out = push(std::move(n));
    node(out).back = [this, a, out]() {
      const Matrix& y = node(out).val;
      Matrix da = node(out).grad;
      double* p = da.data();
      const double* q = y.data();
      for (size_t i = 0; i < da.size(); ++i) p[i] *= 1.0 - q[i] * q[i];
      accum(a, da);
    };
    return out;
  }

  Var exp_(Var a) {
    Node n;
    n.val = a.val();
    for (size_t i = 0; i < n.val.size(); ++i) n.val.data()[i] = std::exp(n.val.data()[i]);
    Var out = push(std::move(n));
    node(out).back = [this, a, out]() {
      Matrix da = node(out).grad;
      double* p = da.data();
      const double* q = node(out).val.data();
      for (size_t i = 0; i < da.size(); ++i) p[i] *= q[i];
      accum(a, da);
    };
    return out;
  }

  // Row-wise softmax with max subtraction.
  Var softmax_rows(Var a) {
    Node n;
    n.val = a.val();
    for (int r = 0; r < n.val.rows(); ++r) softmax_row_inplace(n.val.row(r), n.val.cols());
    Var out = push(std::move(n));
    node(out).back = [this, a, out]() {
      const Matrix& y = node(out).val;
      const Matrix& dy = node(out).grad;
      Matrix da(y.rows(), y.cols());
      for (int r = 0; r < y.rows(); ++r) {
        double dot = 0.0;
        for (int j = 0; j < y.cols(); ++j) dot += dy(r, j) * y(r, j);
        for (int j = 0; j < y.cols(); ++j) da(r, j) = y(r, j) * (dy(r, j) - dot);
      }
      accum(a, da);
    };
    return out;
  }

  Var log_softmax_rows(Var a) {
    Node n;
    n.val = a.val();
    for (int r = 0; r < n.val.rows(); ++r) {
      double* p = n.val.row(r);
      int c = n.val.cols();
      double mx = p[0];
      for (int j = 1; j < c; ++j) mx = std::max(mx, p[j]);
      double sum = 0.0;
      for (int j = 0; j < c; ++j) sum += std::exp(p[j] - mx);
      double lse = mx + std::log(sum);
      for (int j = 0; j < c; ++j) p[j] -= lse;
    }
    Var out = push(std::move(n));
    node(out).back = [this, a, out]() {
      const Matrix& y = node(out).val;
      const Matrix& dy = node(out).grad;
      Matrix da(y.rows(), y.cols());
      for (int r = 0; r < y.rows(); ++r) {
        double s = 0.0;
        for (int j = 0; j < y.cols(); ++j) s += dy(r, j);
        for (int j = 0; j < y.cols(); ++j) da(r, j) = dy(r, j) - std::exp(y(r, j)) * s;
      }
      accum(a, da);
    };
    return out;
  }

  // out(r, 0) = a(r, cols[r]).
  Var pick_per_row(Var a, std::vector<int> cols) {
    if (static_cast<int>(cols.size()) != a.val().rows())
      throw DimensionError("pick_per_row: one column index per row required");
    Node n;
    n.val = Matrix(a.val().rows(), 1);
    for (int r = 0; r < a.val().rows(); ++r) n.val(r, 0) = a.val()(r, cols[r]);
    Var out = push(std::move(n));
    node(out).back = [this, a, out, cols = std::move(cols)]() {
      Matrix da(a.val().rows(), a.val().cols());
      for (int r = 0; r < da.rows(); ++r) da(r, cols[r]) += node(out).grad(r, 0);
      accum(a, da);
    };
    return out;
  }

  // Mean negative log likelihood of targets under row-wise softmax(logits).
  Var cross_entropy_mean(Var logits, std::vector<int> targets) {
    const Matrix& z = logits.val();
    if (static_cast<int>(targets.size()) != z.rows())
      throw DimensionError("cross_entropy_mean: one target per row required");
    Matrix probs = z;
    for (int r = 0; r < probs.rows(); ++r) softmax_row_inplace(probs.row(r), probs.cols());
    double nll = 0.0;
    for (int r = 0; r < probs.rows(); ++r) nll -= std::log(std::max(probs(r, targets[r]), 1e-300));
    Node n;
    n.val = Matrix(1, 1);
    n.val(0, 0) = nll / probs.rows();
    Var out = push(std::move(n));
    node(out).back = [this, logits, out, probs = std::move(probs), targets = std::move(targets)]() {
      double g = node(out).grad(0, 0) / probs.rows();
      Matrix dz = probs;
      for (int r = 0; r < dz.rows(); ++r) {
        dz(r, targets[r]) -= 1.0;
        for (int j = 0; j < dz.cols(); ++j) dz(r, j) *= g;
      }
      accum(logits, dz);
    };
    return out;
  }

  // Row-wise layer norm with learnable gain/bias (each 1 x d).
  Var layernorm_rows(Var x, Var gain, Var bias, double eps = 1e-5) {
    const Matrix& xv = x.val();
    const int d = xv.cols();
    if (gain.val().cols() != d || bias.val().cols() != d)
      throw DimensionError("layernorm_rows: gain/bias must be 1 x d");
    Matrix xhat(xv.rows(), d);
    Matrix inv_sd(xv.rows(), 1);
    for (int r = 0; r < xv.rows(); ++r) {
      double mu = 0.0;
      for (int j = 0; j < d; ++j) mu += xv(r, j);
      mu /= d;
      double var = 0.0;
      for (int j = 0; j < d; ++j) {
        double t = xv(r, j) - mu;
        var += t * t;
      }
      var /= d;
      double is = 1.0 / std::sqrt(var + eps);
      inv_sd(r, 0) = is;
      for (int j = 0; j < d; ++j) xhat(r, j) = (xv(r, j) - mu) * is;
    }
    Node n;
    n.val = Matrix(xv.rows(), d);
    for (int r = 0; r < xv.rows(); ++r)
      for (int j = 0; j < d; ++j) n.val(r, j) = xhat(r, j) * gain.val()(0, j) + bias.val()(0, j);
    Var out = push(std::move(n));
    node(out).back = [this, x, gain, bias, out, xhat = std::move(xhat), inv_sd = std::move(inv_sd)]() {
      const Matrix& dy = node(out).grad;
      const int rows = dy.rows(), d2 = dy.cols();
      Matrix dgain(1, d2), dbias(1, d2), dx(rows, d2);
      for (int r = 0; r < rows; ++r) {
        double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
        for (int j = 0; j < d2; ++j) {
          double dxh = dy(r, j) * gain.val()(0, j);
          mean_dxhat += dxh;
          mean_dxhat_xhat += dxh * xhat(r, j);
          dgain(0, j) += dy(r, j) * xhat(r, j);
          dbias(0, j) += dy(r, j);
        }
        mean_dxhat /= d2;
        mean_dxhat_xhat /= d2;
        for (int j = 0; j < d2; ++j) {
          double dxh = dy(r, j) * gain.val()(0, j);
          dx(r, j) = inv_sd(r, 0) * (dxh - mean_dxhat - xhat(r, j) * mean_dxhat_xhat);
        }
      }
      accum(x, dx);
      accum(gain, dgain);
      accum(bias, dbias);
    };
    return out;
  }

  Var concat_rows(Var a, Var b) {
    const Matrix& av = a.val();
    const Matrix& bv = b.val();
    if (av.rows() > 0 && bv.rows() > 0 && av.cols() != bv.cols())
      throw DimensionError("concat_rows: column mismatch");
    int cols = av.rows() > 0 ? av.cols() : bv.cols();
    Node n;
    n.val = Matrix(av.rows() + bv.rows(), cols);
    for (int r = 0; r < av.rows(); ++r)
      std::memcpy(n.val.row(r), av.row(r), sizeof(double) * cols);
    for (int r = 0; r < bv.rows(); ++r)
      std::memcpy(n.val.row(av.rows() + r), bv.row(r), sizeof(double) * cols);
    Var out = push(std::move(n));
    node(out).back = [this, a, b, out]() {
      const Matrix& dy = node(out).grad;
      int ar = a.val().rows();
      if (ar > 0) {
        Matrix da(ar, dy.cols());
        for (int r = 0; r < ar; ++r) std::memcpy(da.row(r), dy.row(r), sizeof(double) * dy.cols());
        accum(a, da);
      }
      int br = b.val().rows();
      if (br > 0) {
        Matrix db(br, dy.cols());
        for (int r = 0; r < br; ++r)
          std::memcpy(db.row(r), dy.row(ar + r), sizeof(double) * dy.cols());
        accum(b, db);
      }
    };
    return out;
  }

  Var slice_rows(Var a, int r0, int nrows) {
    const Matrix& av = a.val();
    if (r0 < 0 || nrows < 0 || r0 + nrows > av.rows()) throw DimensionError("slice_rows out of range");
    Node n;
    n.val = Matrix(nrows, av.cols());
    for (int r = 0; r < nrows; ++r)
      std::memcpy(n.val.row(r), av.row(r0 + r), sizeof(double) * av.cols());
    Var out = push(std::move(n));
    node(out).back = [this, a, out, r0]() {
      const Matrix& dy = node(out).grad;
      Matrix da(a.val().rows(), a.val().cols());
      for (int r = 0; r < dy.rows(); ++r)
        std::memcpy(da.row(r0 + r), dy.row(r), sizeof(double) * dy.cols());
      accum(a, da);
    };
    return out;
  }

  // Embedding lookup: out row r = table row ids[r]. Repeated ids accumulate
  // gradient into the same table row.
  Var gather_rows(Var table, std::vector<int> ids) {
    const Matrix& t = table.val();
    for (int id : ids)
      if (id < 0 || id >= t.rows()) throw DimensionError("gather_rows: id out of range");
    Node n;
    n.val = Matrix(static_cast<int>(ids.size()), t.cols());
    for (size_t r = 0; r < ids.size(); ++r)
      std::memcpy(n.val.row(static_cast<int>(r)), t.row(ids[r]), sizeof(double) * t.cols());
    Var out = push(std::move(n));
    node(out).back = [this, table, out, ids = std::move(ids)]() {
      if (!node(table).wants_grad) return;
      const Matrix& dy = node(out).grad;
      Matrix dt(table.val().rows(), table.val().cols());
      for (size_t r = 0; r < ids.size(); ++r) {
        double* dst = dt.row(ids[r]);
        const double* src = dy.row(static_cast<int>(r));
        for (int j = 0; j < dy.cols(); ++j) dst[j] += src[j];
      }
      accum(table, dt);
    };
    return out;
  }

  // 2D convolution with zero padding. x: in_c x (h*w), w: out_c x (in_c*k*k),
  // b: out_c x 1; output out_c x (oh*ow).
  Var conv2d(Var x, Var w, Var b, int h, int width, int k, int stride, int pad) {
    const Matrix& xv = x.val();
    const Matrix& wv = w.val();
    const int in_c = xv.rows();
    const int out_c = wv.rows();
    if (xv.cols() != h * width) throw DimensionError("conv2d: x cols != h*w");
    if (wv.cols() != in_c * k * k) throw DimensionError("conv2d: weight cols != in_c*k*k");
    if (b.val().rows() != out_c || b.val().cols() != 1) throw DimensionError("conv2d: bias shape");
    const int oh = (h + 2 * pad - k) / stride + 1;
    const int ow = (width + 2 * pad - k) / stride + 1;
    Node n;
    n.val = Matrix(out_c, oh * ow);
    for (int oc = 0; oc < out_c; ++oc) {
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          double acc = b.val()(oc, 0);
          for (int ic = 0; ic < in_c; ++ic) {
            for (int ky = 0; ky < k; ++ky) {
              const int iy = oy * stride + ky - pad;
              if (iy < 0 || iy >= h) continue;
              for (int kx = 0; kx < k; ++kx) {
                const int ix = ox * stride + kx - pad;
                if (ix < 0 || ix >= width) continue;
                acc += wv(oc, (ic * k + ky) * k + kx) * xv(ic, iy * width + ix);
              }
            }
          }
          n.val(oc, oy * ow + ox) = acc;
        }
      }
    }
    Var out = push(std::move(n));
    node(out).back = [this, x, w, b, out, h, width, k, stride, pad, oh, ow]() {
      const Matrix& dy = node(out).grad;
      const Matrix& xv = x.val();
      const Matrix& wv = w.val();
      const bool need_x = node(x).wants_grad;
      const bool need_w = node(w).wants_grad;
      Matrix dx(need_x ? xv.rows() : 0, need_x ? xv.cols() : 0);
      Matrix dw(need_w ? wv.rows() : 0, need_w ? wv.cols() : 0);
      Matrix db(need_w ? wv.rows() : 0, need_w ? 1 : 0);
      for (int oc = 0; oc < wv.rows(); ++oc) {
        for (int oy = 0; oy < oh; ++oy) {
          for (int ox = 0; ox < ow; ++ox) {
            const double g = dy(oc, oy * ow + ox);
            if (g == 0.0) continue;
            if (need_w) db(oc, 0) += g;
            for (int ic = 0; ic < xv.rows(); ++ic) {
              for (int ky = 0; ky < k; ++ky) {
                const int iy = oy * stride + ky - pad;
                if (iy < 0 || iy >= h) continue;
                for (int kx = 0; kx < k; ++kx) {
                  const int ix = ox * stride + kx - pad;
                  if (ix < 0 || ix >= width) continue;
                  if (need_w) dw(oc, (ic * k + ky) * k + kx) += g * xv(ic, iy * width + ix);
                  if (need_x) dx(ic, iy * width + ix) += g * wv(oc, (ic * k + ky) * k + kx);
                }
              }
            }
          }
        }
      }
      if (need_x) accum(x, dx);
      if (need_w) {
        accum(w, dw);
        accum(b, db);
      }
    };
    return out;
  }

  // Row-wise cosine similarity of a and b (both L x d) -> L x 1.
  Var cosine_rows(Var a, Var b) {
    check_same(a, b, "cosine_rows");
    const Matrix& av = a.val();
    const Matrix& bv = b.val();
    const int L = av.rows(), d = av.cols();
    Matrix na(L, 1), nb(L, 1);
    Node n;
    n.val = Matrix(L, 1);
    for (int r = 0; r < L; ++r) {
      double dot = 0.0, sa = 0.0, sb = 0.0;
      for (int j = 0; j < d; ++j) {
        dot += av(r, j) * bv(r, j);
        sa += av(r, j) * av(r, j);
        sb += bv(r, j) * bv(r, j);
      }
      na(r, 0) = std::sqrt(sa);
      nb(r, 0) = std::sqrt(sb);
      if (na(r, 0) == 0.0 || nb(r, 0) == 0.0)
        throw NumericalError("cosine_rows: zero-norm vector at row " + std::to_string(r));
      n.val(r, 0) = dot / (na(r, 0) * nb(r, 0));
    }
    Var out = push(std::move(n));
    node(out).back = [this, a, b, out, na = std::move(na), nb = std::move(nb)]() {
      const Matrix& av = a.val();
      const Matrix& bv = b.val();
      const Matrix& c = node(out).val;
      const Matrix& dy = node(out).grad;
      Matrix da(av.rows(), av.cols()), db(av.rows(), av.cols());
      for (int r = 0; r < av.rows(); ++r) {
        const double g = dy(r, 0);
        if (g == 0.0) continue;
        const double inv_ab = 1.0 / (na(r, 0) * nb(r, 0));
        const double ca = c(r, 0) / (na(r, 0) * na(r, 0));
        const double cb = c(r, 0) / (nb(r, 0) * nb(r, 0));
        for (int j = 0; j < av.cols(); ++j) {
          da(r, j) = g * (bv(r, j) * inv_ab - ca * av(r, j));
          db(r, j) = g * (av(r, j) * inv_ab - cb * bv(r, j));
        }
      }
      accum(a, da);
      accum(b, db);
    };
    return out;
  }

  Var mean_all(Var a) {
    const size_t sz = a.val().size();
    if (sz == 0) throw PreconditionError("mean_all: empty input");
    Node n;
    n.val = Matrix(1, 1);
    double s = 0.0;
    for (size_t i = 0; i < sz; ++i) s += a.val().data()[i];
    n.val(0, 0) = s / static_cast<double>(sz);
    Var out = push(std::move(n));
    node(out).back = [this, a, out, sz]() {
      const double g = node(out).grad(0, 0) / static_cast<double>(sz);
      Matrix da(a.val().rows(), a.val().cols(), g);
      accum(a, da);
    };
    return out;
  }

  // Population standard deviation over all entries (divisor N).
  Var std_pop_all(Var a) {
    const size_t sz = a.val().size();
    if (sz == 0) throw PreconditionError("std_pop_all: empty input");
    double mu = 0.0;
    for (size_t i = 0; i < sz; ++i) mu += a.val().data()[i];
    mu /= static_cast<double>(sz);
    double var = 0.0;
    for (size_t i = 0; i < sz; ++i) {
      double t = a.val().data()[i] - mu;
      var += t * t;
    }
    var /= static_cast<double>(sz);
    Node n;
    n.val = Matrix(1, 1);
    n.val(0, 0) = std::sqrt(var);
    Var out = push(std::move(n));
    node(out).back = [this, a, out, mu, sz]() {
      const double sd = node(out).val(0, 0);
      if (sd <= 0.0) return;  // gradient of sqrt at 0 is undefined; use 0 subgradient
      const double g = node(out).grad(0, 0) / (static_cast<double>(sz) * sd);
      Matrix da(a.val().rows(), a.val().cols());
      for (size_t i = 0; i < sz; ++i) da.data()[i] = g * (a.val().data()[i] - mu);
      accum(a, da);
    };
    return out;
  }

  // PPO clipped surrogate, elementwise over ratios with a shared advantage:
  // out_i = min(r_i * A, clamp(r_i, 1-c, 1+c) * A). Ties take the unclipped
  // branch so the gradient there is A exactly.
  Var clip_surrogate(Var ratio, double advantage, double clip) {
    const Matrix& r = ratio.val();
    Node n;
    n.val = Matrix(r.rows(), r.cols());
    for (size_t i = 0; i < r.size(); ++i) {
      const double rv = r.data()[i];
      const double clamped = std::min(std::max(rv, 1.0 - clip), 1.0 + clip);
      n.val.data()[i] = std::min(rv * advantage, clamped * advantage);
    }
    Var out = push(std::move(n));
    node(out).back = [this, ratio, out, advantage, clip]() {
      const Matrix& r = ratio.val();
      const Matrix& dy = node(out).grad;
      Matrix dr(r.rows(), r.cols());
      for (size_t i = 0; i < r.size(); ++i) {
        const double rv = r.data()[i];
        const double clamped = std::min(std::max(rv, 1.0 - clip), 1.0 + clip);
        dr.data()[i] = (rv * advantage <= clamped * advantage) ? advantage * dy.data()[i] : 0.0;
      }
      accum(ratio, dr);
    };
    return out;
  }

  Var stop_grad(Var a) {
    Node n;
    n.val = a.val();
    return push(std::move(n));  // no back fn: gradient stops here
  }

  // Backward from a 1x1 root. Runs once per graph.
  void backward(Var root) {
    if (root.val().rows() != 1 || root.val().cols() != 1)
      throw PreconditionError("backward: root must be a scalar");
    ensure_grad(root.index());
    nodes_[root.index()]->grad(0, 0) = 1.0;
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
      Node& n = *nodes_[i];
      if (n.grad.empty()) continue;  // node did not influence the root
      if (n.back) n.back();
      if (n.param_dst) {
        Matrix& pg = param_grad(n);
        if (pg.empty()) pg = Matrix(n.grad.rows(), n.grad.cols());
        add_inplace(pg, n.grad);
      }
    }
  }

  size_t node_count() const { return nodes_.size(); }

 private:
  friend class Var;

  struct Node {
    Matrix val;                 // owned value (empty when aliased)
    const Matrix* alias = nullptr;  // external value for param/const leaves
    Matrix grad;
    std::function<void()> back;
    Param* param_dst = nullptr;
    bool wants_grad = true;
    const Matrix& value() const { return alias ? *alias : val; }
  };

  static void softmax_row_inplace(double* p, int c) {
    double mx = p[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, p[j]);
    double sum = 0.0;
    for (int j = 0; j < c; ++j) {
      p[j] = std::exp(p[j] - mx);
      sum += p[j];
    }
    for (int j = 0; j < c; ++j) p[j] /= sum;
  }

  Var push(Node n) {
    nodes_.push_back(std::make_unique<Node>(std::move(n)));
    return Var(this, static_cast<int>(nodes_.size()) - 1);
  }

  Node& node(Var v) { return *nodes_[v.index()]; }

  void check_same(Var a, Var b, const char* op) {
    if (!a.val().same_shape(b.val()))
      throw DimensionError(std::string(op) + ": shape mismatch " + std::to_string(a.val().rows()) +
                           "x" + std::to_string(a.val().cols()) + " vs " +
                           std::to_string(b.val().rows()) + "x" + std::to_string(b.val().cols()));
  }

  void ensure_grad(int idx) {
    Node& n = *nodes_[idx];
    if (n.grad.empty() && n.value().size() > 0)
      n.grad = Matrix(n.value().rows(), n.value().cols());
  }

  void accum(Var v, const Matrix& g) {
    if (!node(v).wants_grad) return;
    ensure_grad(v.index());
    add_inplace(node(v).grad, g);
  }

  void accum_scaled(Var v, const Matrix& g, double s) {
    if (!node(v).wants_grad) return;
    ensure_grad(v.index());
    Matrix& dst = node(v).grad;
    const double* src = g.data();
    for (size_t i = 0; i < dst.size(); ++i) dst.data()[i] += s * src[i];
  }

  static Matrix& param_grad(Node& n);

  std::vector<std::unique_ptr<Node>> nodes_;
};

inline const Matrix& Var::val() const { return g_->nodes_[idx_]->value(); }
inline const Matrix& Var::grad() const { return g_->nodes_[idx_]->grad; }

inline Var Graph::param(Param& p) {
  Node n;
  n.alias = &p.value;
  n.param_dst = &p;
  return push(std::move(n));
}

inline Matrix& Graph::param_grad(Node& n) { return n.param_dst->grad; }

}  // namespace vtlab
