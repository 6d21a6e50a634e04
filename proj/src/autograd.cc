#include "selm/autograd.h"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>

#include "selm/errors.h"

namespace selm {

const Matrix& Var::value() const { return graph_->value(id_); }
bool Var::requires_grad() const { return graph_->requires_grad(id_); }

int Graph::add_node(Node node) {
  if (backward_done_) throw MissingGraphError("graph is consumed; record a new forward pass");
  nodes_.push_back(std::move(node));
  return static_cast<int>(nodes_.size()) - 1;
}

Var Graph::constant(Matrix value) {
  Node n;
  n.value = std::move(value);
  return Var(this, add_node(std::move(n)));
}

Var Graph::leaf(Matrix value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  return Var(this, add_node(std::move(n)));
}

Var Graph::parameter(const ParameterTree& tree, const std::string& name) {
  auto it = bound_params_.find(name);
  if (it != bound_params_.end()) return Var(this, it->second);
  const Parameter& p = tree.at(name);
  Node n;
  n.value = Matrix::from_tensor(p.value);
  n.requires_grad = !p.frozen;
  n.param_name = name;
  int id = add_node(std::move(n));
  bound_params_.emplace(name, id);
  return Var(this, id);
}

Var Graph::record(Matrix value, std::vector<Var> inputs, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  for (const Var& v : inputs) {
    if (&v.graph() != this) throw MissingGraphError("operand recorded on a different graph");
    n.inputs.push_back(v.id());
    n.requires_grad = n.requires_grad || nodes_[v.id()].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  return Var(this, add_node(std::move(n)));
}

Matrix& Graph::input_grad(int id) {
  Node& n = nodes_[id];
  if (n.grad.data.empty() && n.value.size() > 0) n.grad = Matrix(n.value.rows, n.value.cols);
  return n.grad;
}

void Graph::backward(Var loss) {
  if (!loss.valid() || &loss.graph() != this || nodes_.empty()) {
    throw MissingGraphError("backward called without a recorded forward pass");
  }
  if (backward_done_) throw MissingGraphError("backward already ran on this graph");
  const Matrix& lv = nodes_[loss.id()].value;
  if (lv.rows != 1 || lv.cols != 1) throw ShapeError("backward requires a scalar loss");
  backward_done_ = true;
  if (!nodes_[loss.id()].requires_grad) return;
  input_grad(loss.id()).data[0] = 1.0;
  for (int id = loss.id(); id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.requires_grad || !n.backward || n.grad.data.empty()) continue;
    n.backward(*this, id);
    if (!n.grad.all_finite()) throw NumericalError("non-finite gradient during backward");
  }
}

Gradients Graph::gradients() const {
  if (!backward_done_) throw MissingGraphError("gradients requested before backward");
  Gradients out;
  for (const auto& [name, id] : bound_params_) {
    const Node& n = nodes_[id];
    if (!n.requires_grad) continue;
    if (n.grad.data.empty()) {
      out.emplace(name, Matrix(n.value.rows, n.value.cols));
    } else {
      out.emplace(name, n.grad);
    }
  }
  return out;
}

const Matrix& Graph::grad(Var v) const { return nodes_[v.id()].grad; }

// ---------------------------------------------------------------------------
// Scalar helpers.

double gelu_scalar(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_derivative(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

std::vector<double> log_softmax_row(std::span<const double> logits) {
  double mx = -INFINITY;
  for (double v : logits) mx = std::max(mx, v);
  double s = 0.0;
  for (double v : logits) s += std::exp(v - mx);
  const double lse = mx + std::log(s);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows != b.rows || a.cols != b.cols) {
    throw ShapeError(std::string(op) + ": " + std::to_string(a.rows) + "x" +
                     std::to_string(a.cols) + " vs " + std::to_string(b.rows) + "x" +
                     std::to_string(b.cols));
  }
}

// out[n x m] += a[n x k] * b[k x m]. Rows go in blocks of four so each row
// of b is streamed once per block; every output element still accumulates
// over p in increasing order.
void gemm_nn(const double* a, const double* b, double* out, std::int64_t n, std::int64_t k,
             std::int64_t m) {
  std::int64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    double* o0 = out + i * m;
    double* o1 = o0 + m;
    double* o2 = o1 + m;
    double* o3 = o2 + m;
    const double* a0 = a + i * k;
    for (std::int64_t p = 0; p < k; ++p) {
      const double v0 = a0[p], v1 = a0[k + p], v2 = a0[2 * k + p], v3 = a0[3 * k + p];
      const double* brow = b + p * m;
      for (std::int64_t j = 0; j < m; ++j) {
        const double bv = brow[j];
        o0[j] += v0 * bv;
        o1[j] += v1 * bv;
        o2[j] += v2 * bv;
        o3[j] += v3 * bv;
      }
    }
  }
  for (; i < n; ++i) {
    double* orow = out + i * m;
    const double* arow = a + i * k;
    for (std::int64_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + p * m;
      for (std::int64_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
}

void gemm_nn(const Matrix& a, const Matrix& b, Matrix& out) {
  gemm_nn(a.data.data(), b.data.data(), out.data.data(), a.rows, a.cols, b.cols);
}

// out[n x k] += g[n x m] * b[k x m]^T, through a transposed copy of b.
void gemm_nt(const Matrix& g, const Matrix& b, Matrix& out) {
  const std::int64_t k = b.rows, m = b.cols;
  std::vector<double> bt(static_cast<std::size_t>(k * m));
  for (std::int64_t p = 0; p < k; ++p) {
    for (std::int64_t j = 0; j < m; ++j) bt[j * k + p] = b.data[p * m + j];
  }
  gemm_nn(g.data.data(), bt.data(), out.data.data(), g.rows, m, k);
}

// out[k x m] += a[n x k]^T * g[n x m], through a transposed copy of a.
void gemm_tn(const Matrix& a, const Matrix& g, Matrix& out) {
  const std::int64_t n = a.rows, k = a.cols;
  std::vector<double> at(static_cast<std::size_t>(k * n));
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t p = 0; p < k; ++p) at[p * n + i] = a.data[i * k + p];
  }
  gemm_nn(at.data(), g.data.data(), out.data.data(), k, n, g.cols);
}

}  // namespace

// ---------------------------------------------------------------------------
// Ops.

Var matmul(Var a, Var b) {
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols != bv.rows) throw ShapeError("matmul inner dimensions differ");
  Matrix out(av.rows, bv.cols);
  gemm_nn(av, bv, out);
  return a.graph().record(std::move(out), {a, b}, [](Graph& g, int self) {
    const int ia = g.inputs(self)[0], ib = g.inputs(self)[1];
    const Matrix& dout = g.output_grad(self);
    if (g.requires_grad(ia)) gemm_nt(dout, g.value(ib), g.input_grad(ia));
    if (g.requires_grad(ib)) gemm_tn(g.value(ia), dout, g.input_grad(ib));
  });
}

Var linear(Var x, Var weight, Var bias) {
  const Matrix& xv = x.value();
  const Matrix& wv = weight.value();
  const Matrix& bv = bias.value();
  if (xv.cols != wv.rows) {
    throw ShapeError("linear: input width " + std::to_string(xv.cols) + " vs weight rows " +
                     std::to_string(wv.rows));
  }
  if (bv.rows != 1 || bv.cols != wv.cols) throw ShapeError("linear: bias shape");
  Matrix out(xv.rows, wv.cols);
  for (std::int64_t i = 0; i < out.rows; ++i) {
    std::copy(bv.data.begin(), bv.data.end(), out.data.begin() + i * out.cols);
  }
  gemm_nn(xv, wv, out);
  return x.graph().record(std::move(out), {x, weight, bias}, [](Graph& g, int self) {
    const auto& in = g.inputs(self);
    const Matrix& dout = g.output_grad(self);
    if (g.requires_grad(in[0])) gemm_nt(dout, g.value(in[1]), g.input_grad(in[0]));
    if (g.requires_grad(in[1])) gemm_tn(g.value(in[0]), dout, g.input_grad(in[1]));
    if (g.requires_grad(in[2])) {
      Matrix& db = g.input_grad(in[2]);
      for (std::int64_t i = 0; i < dout.rows; ++i) {
        for (std::int64_t j = 0; j < dout.cols; ++j) db.data[j] += dout(i, j);
      }
    }
  });
}

Var add(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "add");
  Matrix out = a.value();
  const auto& bd = b.value().data;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += bd[i];
  return a.graph().record(std::move(out), {a, b}, [](Graph& g, int self) {
    const Matrix& dout = g.output_grad(self);
    for (int in : g.inputs(self)) {
      if (!g.requires_grad(in)) continue;
      Matrix& d = g.input_grad(in);
      for (std::size_t i = 0; i < d.data.size(); ++i) d.data[i] += dout.data[i];
    }
  });
}

Var add_row(Var x, Var row) {
  const Matrix& xv = x.value();
  const Matrix& rv = row.value();
  if (rv.rows != 1 || rv.cols != xv.cols) throw ShapeError("add_row: row shape");
  Matrix out = xv;
  for (std::int64_t i = 0; i < out.rows; ++i) {
    for (std::int64_t j = 0; j < out.cols; ++j) out(i, j) += rv.data[j];
  }
  return x.graph().record(std::move(out), {x, row}, [](Graph& g, int self) {
    const auto& in = g.inputs(self);
    const Matrix& dout = g.output_grad(self);
    if (g.requires_grad(in[0])) {
      Matrix& dx = g.input_grad(in[0]);
      for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += dout.data[i];
    }
    if (g.requires_grad(in[1])) {
      Matrix& dr = g.input_grad(in[1]);
      for (std::int64_t i = 0; i < dout.rows; ++i) {
        for (std::int64_t j = 0; j < dout.cols; ++j) dr.data[j] += dout(i, j);
      }
    }
  });
}

Var scale(Var x, double s) {
  Matrix out = x.value();
  for (double& v : out.data) v *= s;
  return x.graph().record(std::move(out), {x}, [s](Graph& g, int self) {
    Matrix& dx = g.input_grad(g.inputs(self)[0]);
    const Matrix& dout = g.output_grad(self);
    for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += s * dout.data[i];
  });
}

Var gelu(Var x) {
  const Matrix& xv = x.value();
  Matrix out(xv.rows, xv.cols);
  for (std::size_t i = 0; i < xv.data.size(); ++i) {
    if (!std::isfinite(xv.data[i])) throw InvalidValueError("gelu: non-finite input");
    out.data[i] = gelu_scalar(xv.data[i]);
  }
  return x.graph().record(std::move(out), {x}, [](Graph& g, int self) {
    const int in = g.inputs(self)[0];
    const Matrix& xv = g.value(in);
    const Matrix& dout = g.output_grad(self);
    Matrix& dx = g.input_grad(in);
    for (std::size_t i = 0; i < dx.data.size(); ++i) {
      dx.data[i] += dout.data[i] * gelu_derivative(xv.data[i]);
    }
  });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  const Matrix& xv = x.value();
  const Matrix& gv = gamma.value();
  const Matrix& bv = beta.value();
  if (gv.rows != 1 || gv.cols != xv.cols || bv.rows != 1 || bv.cols != xv.cols) {
    throw ShapeError("layer_norm: affine parameter shape");
  }
  const std::int64_t n = xv.rows, d = xv.cols;
  Matrix out(n, d);
  // normalized values and per-row inverse std are kept for backward.
  auto xhat = std::make_shared<Matrix>(n, d);
  auto rstd = std::make_shared<std::vector<double>>(n);
  for (std::int64_t i = 0; i < n; ++i) {
    auto r = xv.row(i);
    double mean = 0.0;
    for (double v : r) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : r) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    const double rs = 1.0 / std::sqrt(var + eps);
    (*rstd)[i] = rs;
    for (std::int64_t j = 0; j < d; ++j) {
      const double h = (r[j] - mean) * rs;
      (*xhat)(i, j) = h;
      out(i, j) = h * gv.data[j] + bv.data[j];
    }
  }
  return x.graph().record(std::move(out), {x, gamma, beta}, [xhat, rstd](Graph& g, int self) {
    const auto& in = g.inputs(self);
    const Matrix& dout = g.output_grad(self);
    const Matrix& gv = g.value(in[1]);
    const std::int64_t n = dout.rows, d = dout.cols;
    if (g.requires_grad(in[1])) {
      Matrix& dg = g.input_grad(in[1]);
      for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t j = 0; j < d; ++j) dg.data[j] += dout(i, j) * (*xhat)(i, j);
      }
    }
    if (g.requires_grad(in[2])) {
      Matrix& db = g.input_grad(in[2]);
      for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t j = 0; j < d; ++j) db.data[j] += dout(i, j);
      }
    }
    if (g.requires_grad(in[0])) {
      Matrix& dx = g.input_grad(in[0]);
      std::vector<double> dh(d);
      for (std::int64_t i = 0; i < n; ++i) {
        double mean_dh = 0.0, mean_dh_h = 0.0;
        for (std::int64_t j = 0; j < d; ++j) {
          dh[j] = dout(i, j) * gv.data[j];
          mean_dh += dh[j];
          mean_dh_h += dh[j] * (*xhat)(i, j);
        }
        mean_dh /= static_cast<double>(d);
        mean_dh_h /= static_cast<double>(d);
        for (std::int64_t j = 0; j < d; ++j) {
          dx(i, j) += (*rstd)[i] * (dh[j] - mean_dh - (*xhat)(i, j) * mean_dh_h);
        }
      }
    }
  });
}

Var attention(Var q, Var k, Var v, int heads, bool causal) {
  const Matrix& qv = q.value();
  const Matrix& kv = k.value();
  const Matrix& vv = v.value();
  require_same_shape(qv, kv, "attention q/k");
  require_same_shape(qv, vv, "attention q/v");
  const std::int64_t t = qv.rows, d = qv.cols;
  if (heads <= 0 || d % heads != 0) throw ShapeError("attention: width not divisible by heads");
  const std::int64_t dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  // probs[h][i * t + j]
  auto probs = std::make_shared<std::vector<double>>(static_cast<std::size_t>(heads * t * t), 0.0);
  Matrix out(t, d);
  for (int h = 0; h < heads; ++h) {
    const std::int64_t off = h * dh;
    double* ph = probs->data() + h * t * t;
    for (std::int64_t i = 0; i < t; ++i) {
      const std::int64_t last = causal ? i : t - 1;
      double* prow = ph + i * t;
      double mx = -INFINITY;
      for (std::int64_t j = 0; j <= last; ++j) {
        double s = 0.0;
        for (std::int64_t c = 0; c < dh; ++c) s += qv(i, off + c) * kv(j, off + c);
        s *= inv_sqrt;
        prow[j] = s;
        mx = std::max(mx, s);
      }
      double z = 0.0;
      for (std::int64_t j = 0; j <= last; ++j) {
        prow[j] = std::exp(prow[j] - mx);
        z += prow[j];
      }
      for (std::int64_t j = 0; j <= last; ++j) {
        prow[j] /= z;
        const double p = prow[j];
        for (std::int64_t c = 0; c < dh; ++c) out(i, off + c) += p * vv(j, off + c);
      }
    }
  }
  return q.graph().record(
      std::move(out), {q, k, v}, [probs, heads, causal, dh, inv_sqrt](Graph& g, int self) {
        const auto& in = g.inputs(self);
        const Matrix& qv = g.value(in[0]);
        const Matrix& kv = g.value(in[1]);
        const Matrix& vv = g.value(in[2]);
        const Matrix& dout = g.output_grad(self);
        const std::int64_t t = qv.rows;
        const bool need_q = g.requires_grad(in[0]);
        const bool need_k = g.requires_grad(in[1]);
        const bool need_v = g.requires_grad(in[2]);
        Matrix* dq = need_q ? &g.input_grad(in[0]) : nullptr;
        Matrix* dk = need_k ? &g.input_grad(in[1]) : nullptr;
        Matrix* dv = need_v ? &g.input_grad(in[2]) : nullptr;
        std::vector<double> dp(static_cast<std::size_t>(t));
        for (int h = 0; h < heads; ++h) {
          const std::int64_t off = h * dh;
          const double* ph = probs->data() + h * t * t;
          for (std::int64_t i = 0; i < t; ++i) {
            const std::int64_t last = causal ? i : t - 1;
            const double* prow = ph + i * t;
            double dot = 0.0;
            for (std::int64_t j = 0; j <= last; ++j) {
              double s = 0.0;
              for (std::int64_t c = 0; c < dh; ++c) s += dout(i, off + c) * vv(j, off + c);
              dp[j] = s;
              dot += s * prow[j];
              if (dv) {
                for (std::int64_t c = 0; c < dh; ++c) (*dv)(j, off + c) += prow[j] * dout(i, off + c);
              }
            }
            if (!dq && !dk) continue;
            for (std::int64_t j = 0; j <= last; ++j) {
              const double ds = prow[j] * (dp[j] - dot) * inv_sqrt;
              if (ds == 0.0) continue;
              if (dq) {
                for (std::int64_t c = 0; c < dh; ++c) (*dq)(i, off + c) += ds * kv(j, off + c);
              }
              if (dk) {
                for (std::int64_t c = 0; c < dh; ++c) (*dk)(j, off + c) += ds * qv(i, off + c);
              }
            }
          }
        }
      });
}

Var embedding(Var table, std::span<const std::int32_t> ids) {
  const Matrix& tv = table.value();
  Matrix out(static_cast<std::int64_t>(ids.size()), tv.cols);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= tv.rows) {
      throw VocabularyError("token id " + std::to_string(ids[i]) + " outside table of " +
                            std::to_string(tv.rows) + " rows");
    }
    auto src = tv.row(ids[i]);
    std::copy(src.begin(), src.end(), out.data.begin() + static_cast<std::int64_t>(i) * tv.cols);
  }
  std::vector<std::int32_t> saved(ids.begin(), ids.end());
  return table.graph().record(std::move(out), {table}, [saved](Graph& g, int self) {
    Matrix& dt = g.input_grad(g.inputs(self)[0]);
    const Matrix& dout = g.output_grad(self);
    for (std::size_t i = 0; i < saved.size(); ++i) {
      auto src = dout.row(static_cast<std::int64_t>(i));
      auto dst = dt.row(saved[i]);
      for (std::int64_t j = 0; j < dout.cols; ++j) dst[j] += src[j];
    }
  });
}

Var concat_rows(Var a, Var b) {
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols != bv.cols) throw ShapeError("concat_rows: width mismatch");
  Matrix out(av.rows + bv.rows, av.cols);
  std::copy(av.data.begin(), av.data.end(), out.data.begin());
  std::copy(bv.data.begin(), bv.data.end(), out.data.begin() + av.size());
  return a.graph().record(std::move(out), {a, b}, [](Graph& g, int self) {
    const auto& in = g.inputs(self);
    const Matrix& dout = g.output_grad(self);
    const std::int64_t na = g.value(in[0]).size();
    if (g.requires_grad(in[0])) {
      Matrix& da = g.input_grad(in[0]);
      for (std::int64_t i = 0; i < na; ++i) da.data[i] += dout.data[i];
    }
    if (g.requires_grad(in[1])) {
      Matrix& db = g.input_grad(in[1]);
      for (std::int64_t i = 0; i < db.size(); ++i) db.data[i] += dout.data[na + i];
    }
  });
}

Var slice_rows(Var x, std::int64_t begin, std::int64_t end) {
  const Matrix& xv = x.value();
  if (begin < 0 || end < begin || end > xv.rows) throw ShapeError("slice_rows: bad range");
  Matrix out(end - begin, xv.cols);
  std::copy(xv.data.begin() + begin * xv.cols, xv.data.begin() + end * xv.cols, out.data.begin());
  return x.graph().record(std::move(out), {x}, [begin](Graph& g, int self) {
    Matrix& dx = g.input_grad(g.inputs(self)[0]);
    const Matrix& dout = g.output_grad(self);
    for (std::int64_t i = 0; i < dout.size(); ++i) dx.data[begin * dx.cols + i] += dout.data[i];
  });
}

Var reshape(Var x, std::int64_t rows, std::int64_t cols) {
  const Matrix& xv = x.value();
  if (rows * cols != xv.size()) throw ShapeError("reshape: size mismatch");
  Matrix out(rows, cols, xv.data);
  return x.graph().record(std::move(out), {x}, [](Graph& g, int self) {
    Matrix& dx = g.input_grad(g.inputs(self)[0]);
    const Matrix& dout = g.output_grad(self);
    for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += dout.data[i];
  });
}

Var mean_rows(Var x) {
  const Matrix& xv = x.value();
  if (xv.rows == 0) throw ShapeError("mean_rows: no rows");
  Matrix out(1, xv.cols);
  for (std::int64_t i = 0; i < xv.rows; ++i) {
    for (std::int64_t j = 0; j < xv.cols; ++j) out.data[j] += xv(i, j);
  }
  const double inv = 1.0 / static_cast<double>(xv.rows);
  for (double& v : out.data) v *= inv;
  return x.graph().record(std::move(out), {x}, [inv](Graph& g, int self) {
    Matrix& dx = g.input_grad(g.inputs(self)[0]);
    const Matrix& dout = g.output_grad(self);
    for (std::int64_t i = 0; i < dx.rows; ++i) {
      for (std::int64_t j = 0; j < dx.cols; ++j) dx(i, j) += dout.data[j] * inv;
    }
  });
}

Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().data) s += v;
  return x.graph().record(Matrix(1, 1, {s}), {x}, [](Graph& g, int self) {
    Matrix& dx = g.input_grad(g.inputs(self)[0]);
    const double d = g.output_grad(self).data[0];
    for (double& v : dx.data) v += d;
  });
}

Var softmax_cross_entropy(Var logits, std::span<const std::int32_t> targets,
                          const std::vector<bool>& mask) {
  const Matrix& lv = logits.value();
  if (static_cast<std::int64_t>(targets.size()) != lv.rows ||
      static_cast<std::int64_t>(mask.size()) != lv.rows) {
    throw ShapeError("softmax_cross_entropy: targets/mask length must equal logit rows");
  }
  std::int64_t count = 0;
  for (std::int64_t i = 0; i < lv.rows; ++i) {
    if (!mask[i]) continue;
    ++count;
    if (targets[i] < 0 || targets[i] >= lv.cols) {
      throw OutOfVocabularyError("target id " + std::to_string(targets[i]) +
                                 " outside vocabulary of " + std::to_string(lv.cols));
    }
  }
  if (count == 0) throw EmptyLossError("mask selects no positions");
  // Softmax rows of masked positions are kept for backward.
  auto probs = std::make_shared<Matrix>(lv.rows, lv.cols);
  double total = 0.0;
  for (std::int64_t i = 0; i < lv.rows; ++i) {
    if (!mask[i]) continue;
    auto lsm = log_softmax_row(lv.row(i));
    total -= lsm[targets[i]];
    for (std::int64_t j = 0; j < lv.cols; ++j) (*probs)(i, j) = std::exp(lsm[j]);
  }
  const double inv = 1.0 / static_cast<double>(count);
  if (!std::isfinite(total)) throw NumericalError("non-finite cross-entropy");
  std::vector<std::int32_t> saved(targets.begin(), targets.end());
  return logits.graph().record(
      Matrix(1, 1, {total * inv}), {logits}, [probs, saved, mask, inv](Graph& g, int self) {
        Matrix& dl = g.input_grad(g.inputs(self)[0]);
        const double d = g.output_grad(self).data[0] * inv;
        for (std::int64_t i = 0; i < dl.rows; ++i) {
          if (!mask[i]) continue;
          for (std::int64_t j = 0; j < dl.cols; ++j) dl(i, j) += d * (*probs)(i, j);
          dl(i, saved[i]) -= d;
        }
      });
}

}  // namespace selm
