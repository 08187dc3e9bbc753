#include "unidrop/tape.hpp"

#include <cmath>

namespace unidrop {

namespace {

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

void check_rank2(const char* op, const Tensor& a) {
  if (a.rank() != 2)
    throw ShapeError(std::string(op) + ": expected rank-2 tensor, got " + shape_str(a));
}

// C += A * B, all row-major, no aliasing.
void gemm_acc(const Tensor& a, const Tensor& b, Tensor& c) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* pc = c.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t l = 0; l < k; ++l) {
      const double aik = pa[i * k + l];
      if (aik == 0.0) continue;
      const double* brow = pb + l * n;
      double* crow = pc + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
    }
  }
}

Tensor transposed(const Tensor& a) {
  Tensor t({a.cols(), a.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t.at(j, i) = a.at(i, j);
  return t;
}

constexpr double kMaskedLogit = -1e29;

}  // namespace

int Tape::check(Var v) const {
  if (v.id < 0 || v.id >= static_cast<int>(nodes_.size()))
    throw Error("tape: invalid var id " + std::to_string(v.id));
  return v.id;
}

Var Tape::push(const char* op, Tensor value, std::function<void(Tape&)> back) {
  Node n;
  n.value = std::move(value);
  n.back = std::move(back);
  n.op = op;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::input(Tensor value) { return push("input", std::move(value), nullptr); }
Var Tape::constant(Tensor value) { return push("constant", std::move(value), nullptr); }

const Tensor& Tape::adjoint(Var v) const {
  if (!adjoints_live_) throw Error("adjoint: backward() has not been run on this tape");
  return nodes_[check(v)].adjoint;
}

Var Tape::add(Var a, Var b) {
  const Tensor& ta = val(check(a));
  const Tensor& tb = val(check(b));
  check_same_shape("add", ta, tb);
  Tensor out = ta;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += tb[i];
  const int ia = a.id, ib = b.id, self = static_cast<int>(nodes_.size());
  return push("add", std::move(out), [ia, ib, self](Tape& t) {
    const Tensor& g = t.adj(self);
    Tensor& ga = t.adj(ia);
    Tensor& gb = t.adj(ib);
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i];
      gb[i] += g[i];
    }
  });
}

Var Tape::sub(Var a, Var b) {
  const Tensor& ta = val(check(a));
  const Tensor& tb = val(check(b));
  check_same_shape("sub", ta, tb);
  Tensor out = ta;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= tb[i];
  const int ia = a.id, ib = b.id, self = static_cast<int>(nodes_.size());
  return push("sub", std::move(out), [ia, ib, self](Tape& t) {
    const Tensor& g = t.adj(self);
    Tensor& ga = t.adj(ia);
    Tensor& gb = t.adj(ib);
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i];
      gb[i] -= g[i];
    }
  });
}

Var Tape::mul(Var a, Var b) {
  const Tensor& ta = val(check(a));
  const Tensor& tb = val(check(b));
  check_same_shape("mul", ta, tb);
  Tensor out = ta;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= tb[i];
  const int ia = a.id, ib = b.id, self = static_cast<int>(nodes_.size());
  return push("mul", std::move(out), [ia, ib, self](Tape& t) {
    const Tensor& g = t.adj(self);
    const Tensor& va = t.val(ia);
    const Tensor& vb = t.val(ib);
    Tensor& ga = t.adj(ia);
    Tensor& gb = t.adj(ib);
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i] * vb[i];
      gb[i] += g[i] * va[i];
    }
  });
}

Var Tape::scale(Var a, double c) {
  Tensor out = val(check(a));
  for (auto& x : out.data()) x *= c;
  const int ia = a.id, self = static_cast<int>(nodes_.size());
  return push("scale", std::move(out), [ia, self, c](Tape& t) {
    const Tensor& g = t.adj(self);
    Tensor& ga = t.adj(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
  });
}

Var Tape::matmul(Var a, Var b) {
  const Tensor& ta = val(check(a));
  const Tensor& tb = val(check(b));
  check_rank2("matmul", ta);
  check_rank2("matmul", tb);
  if (ta.cols() != tb.rows())
    throw ShapeError("matmul: inner dims disagree, " + shape_str(ta) + " x " + shape_str(tb));
  Tensor out({ta.rows(), tb.cols()});
  gemm_acc(ta, tb, out);
  const int ia = a.id, ib = b.id, self = static_cast<int>(nodes_.size());
  return push("matmul", std::move(out), [ia, ib, self](Tape& t) {
    const Tensor& g = t.adj(self);
    gemm_acc(g, transposed(t.val(ib)), t.adj(ia));
    gemm_acc(transposed(t.val(ia)), g, t.adj(ib));
  });
}

Var Tape::transpose(Var a) {
  const Tensor& ta = val(check(a));
  check_rank2("transpose", ta);
  const int ia = a.id, self = static_cast<int>(nodes_.size());
  return push("transpose", transposed(ta), [ia, self](Tape& t) {
    const Tensor& g = t.adj(self);
    Tensor& ga = t.adj(ia);
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) ga.at(j, i) += g.at(i, j);
  });
}

Var Tape::add_row(Var a, Var row) {
  const Tensor& ta = val(check(a));
  const Tensor& tr = val(check(row));
  check_rank2("add_row", ta);
  if (tr.rank() != 1 || tr.shape()[0] != ta.cols())
    throw ShapeError("add_row: row " + shape_str(tr) + " does not match matrix " + shape_str(ta));
  Tensor out = ta;
  for (std::size_t i = 0; i < ta.rows(); ++i)
    for (std::size_t j = 0; j < ta.cols(); ++j) out.at(i, j) += tr[j];
  const int ia = a.id, ir = row.id, self = static_cast<int>(nodes_.size());
  return push("add_row", std::move(out), [ia, ir, self](Tape& t) {
    const Tensor& g = t.adj(self);
    Tensor& ga = t.adj(ia);
    Tensor& gr = t.adj(ir);
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) {
        ga.at(i, j) += g.at(i, j);
        gr[j] += g.at(i, j);
      }
  });
}

Var Tape::relu(Var a) {
  Tensor out = val(check(a));
  for (auto& x : out.data()) x = x > 0.0 ? x : 0.0;
  const int ia = a.id, self = static_cast<int>(nodes_.size());
  return push("relu", std::move(out), [ia, self](Tape& t) {
    const Tensor& g = t.adj(self);
    const Tensor& va = t.val(ia);
    Tensor& ga = t.adj(ia);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (va[i] > 0.0) ga[i] += g[i];
  });
}

Var Tape::softmax_rows(Var a) {
  const Tensor& ta = val(check(a));
  check_rank2("softmax_rows", ta);
  Tensor out = ta;
  for (std::size_t i = 0; i < ta.rows(); ++i) {
    double mx = -HUGE_VAL;
    for (std::size_t j = 0; j < ta.cols(); ++j) mx = std::max(mx, ta.at(i, j));
    if (mx < kMaskedLogit)
      throw Error("softmax_rows: row " + std::to_string(i) +
                  " is fully masked (all logits below -1e29)");
    double denom = 0.0;
    for (std::size_t j = 0; j < ta.cols(); ++j) {
      double e = std::exp(ta.at(i, j) - mx);
      out.at(i, j) = e;
      denom += e;
    }
    for (std::size_t j = 0; j < ta.cols(); ++j) out.at(i, j) /= denom;
  }
  const int ia = a.id, self = static_cast<int>(nodes_.size());
  return push("softmax_rows", std::move(out), [ia, self](Tape& t) {
    const Tensor& g = t.adj(self);
    const Tensor& y = t.val(self);
    Tensor& ga = t.adj(ia);
    for (std::size_t i = 0; i < g.rows(); ++i) {
      double gy = 0.0;
      for (std::size_t j = 0; j < g.cols(); ++j) gy += g.at(i, j) * y.at(i, j);
      for (std::size_t j = 0; j < g.cols(); ++j)
        ga.at(i, j) += y.at(i, j) * (g.at(i, j) - gy);
    }
  });
}

Var Tape::log_softmax_rows(Var a) {
  const Tensor& ta = val(check(a));
  check_rank2("log_softmax_rows", ta);
  Tensor out = ta;
  for (std::size_t i = 0; i < ta.rows(); ++i) {
    double mx = -HUGE_VAL;
    for (std::size_t j = 0; j < ta.cols(); ++j) mx = std::max(mx, ta.at(i, j));
    if (mx < kMaskedLogit)
      throw Error("log_softmax_rows: row " + std::to_string(i) +
                  " is fully masked (all logits below -1e29)");
    double denom = 0.0;
    for (std::size_t j = 0; j < ta.cols(); ++j) denom += std::exp(ta.at(i, j) - mx);
    const double lse = mx + std::log(denom);
    for (std::size_t j = 0; j < ta.cols(); ++j) out.at(i, j) -= lse;
  }
  const int ia = a.id, self = static_cast<int>(nodes_.size());
  return push("log_softmax_rows", std::move(out), [ia, self](Tape& t) {
    const Tensor& g = t.adj(self);
    const Tensor& y = t.val(self);  // log-probabilities
    Tensor& ga = t.adj(ia);
    for (std::size_t i = 0; i < g.rows(); ++i) {
      double gsum = 0.0;
      for (std::size_t j = 0; j < g.cols(); ++j) gsum += g.at(i, j);
      for (std::size_t j = 0; j < g.cols(); ++j)
        ga.at(i, j) += g.at(i, j) - std::exp(y.at(i, j)) * gsum;
    }
  });
}

Var Tape::layer_norm_rows(Var x, Var gain, Var bias, double eps) {
  const Tensor& tx = val(check(x));
  const Tensor& tg = val(check(gain));
  const Tensor& tb = val(check(bias));
  check_rank2("layer_norm_rows", tx);
  const std::size_t n = tx.cols();
  if (tg.rank() != 1 || tg.shape()[0] != n || tb.rank() != 1 || tb.shape()[0] != n)
    throw ShapeError("layer_norm_rows: gain/bias " + shape_str(tg) + "/" + shape_str(tb) +
                     " do not match input " + shape_str(tx));
  Tensor out({tx.rows(), n});
  for (std::size_t i = 0; i < tx.rows(); ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += tx.at(i, j);
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      double c = tx.at(i, j) - mu;
      var += c * c;
    }
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j)
      out.at(i, j) = tg[j] * (tx.at(i, j) - mu) * inv + tb[j];
  }
  const int ix = x.id, ig = gain.id, ib = bias.id, self = static_cast<int>(nodes_.size());
  return push("layer_norm_rows", std::move(out), [ix, ig, ib, self, eps](Tape& t) {
    const Tensor& g = t.adj(self);
    const Tensor& tx = t.val(ix);
    const Tensor& tg = t.val(ig);
    Tensor& gx = t.adj(ix);
    Tensor& gg = t.adj(ig);
    Tensor& gb = t.adj(ib);
    const std::size_t n = tx.cols();
    const double dn = static_cast<double>(n);
    for (std::size_t i = 0; i < tx.rows(); ++i) {
      double mu = 0.0;
      for (std::size_t j = 0; j < n; ++j) mu += tx.at(i, j);
      mu /= dn;
      double var = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        double c = tx.at(i, j) - mu;
        var += c * c;
      }
      var /= dn;
      const double inv = 1.0 / std::sqrt(var + eps);
      // u = dL/dxhat; xhat = (x-mu)*inv
      double usum = 0.0, uxsum = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double xhat = (tx.at(i, j) - mu) * inv;
        const double u = g.at(i, j) * tg[j];
        gg[j] += g.at(i, j) * xhat;
        gb[j] += g.at(i, j);
        usum += u;
        uxsum += u * xhat;
      }
      for (std::size_t j = 0; j < n; ++j) {
        const double xhat = (tx.at(i, j) - mu) * inv;
        const double u = g.at(i, j) * tg[j];
        gx.at(i, j) += inv * (u - usum / dn - xhat * uxsum / dn);
      }
    }
  });
}

Var Tape::embed_rows(Var table, std::vector<int> ids) {
  const Tensor& tt = val(check(table));
  check_rank2("embed_rows", tt);
  const std::size_t d = tt.cols();
  Tensor out({ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= tt.rows())
      throw Error("embed_rows: id " + std::to_string(ids[i]) + " out of range for table " +
                  shape_str(tt));
    for (std::size_t j = 0; j < d; ++j) out.at(i, j) = tt.at(ids[i], j);
  }
  const int it = table.id, self = static_cast<int>(nodes_.size());
  return push("embed_rows", std::move(out), [it, self, ids = std::move(ids)](Tape& t) {
    const Tensor& g = t.adj(self);
    Tensor& gt = t.adj(it);
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) gt.at(ids[i], j) += g.at(i, j);
  });
}

Var Tape::slice_cols(Var a, std::size_t c0, std::size_t c1) {
  const Tensor& ta = val(check(a));
  check_rank2("slice_cols", ta);
  if (c0 >= c1 || c1 > ta.cols())
    throw ShapeError("slice_cols: range [" + std::to_string(c0) + "," + std::to_string(c1) +
                     ") invalid for " + shape_str(ta));
  Tensor out({ta.rows(), c1 - c0});
  for (std::size_t i = 0; i < ta.rows(); ++i)
    for (std::size_t j = c0; j < c1; ++j) out.at(i, j - c0) = ta.at(i, j);
  const int ia = a.id, self = static_cast<int>(nodes_.size());
  return push("slice_cols", std::move(out), [ia, self, c0](Tape& t) {
    const Tensor& g = t.adj(self);
    Tensor& ga = t.adj(ia);
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) ga.at(i, j + c0) += g.at(i, j);
  });
}

Var Tape::concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  std::size_t rows = val(check(parts[0])).rows(), total = 0;
  std::vector<int> ids;
  ids.reserve(parts.size());
  for (Var p : parts) {
    const Tensor& tp = val(check(p));
    check_rank2("concat_cols", tp);
    if (tp.rows() != rows)
      throw ShapeError("concat_cols: row mismatch, " + shape_str(val(parts[0].id)) + " vs " +
                       shape_str(tp));
    total += tp.cols();
    ids.push_back(p.id);
  }
  Tensor out({rows, total});
  std::size_t off = 0;
  for (Var p : parts) {
    const Tensor& tp = val(p.id);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < tp.cols(); ++j) out.at(i, off + j) = tp.at(i, j);
    off += tp.cols();
  }
  const int self = static_cast<int>(nodes_.size());
  return push("concat_cols", std::move(out), [ids = std::move(ids), self](Tape& t) {
    const Tensor& g = t.adj(self);
    std::size_t off = 0;
    for (int id : ids) {
      Tensor& gp = t.adj(id);
      for (std::size_t i = 0; i < gp.rows(); ++i)
        for (std::size_t j = 0; j < gp.cols(); ++j) gp.at(i, j) += g.at(i, off + j);
      off += gp.cols();
    }
  });
}

Var Tape::sum(Var a) {
  const Tensor& ta = val(check(a));
  double s = 0.0;
  for (double v : ta.data()) s += v;
  const int ia = a.id, self = static_cast<int>(nodes_.size());
  return push("sum", Tensor::scalar(s), [ia, self](Tape& t) {
    const double g = t.adj(self)[0];
    Tensor& ga = t.adj(ia);
    for (auto& x : ga.data()) x += g;
  });
}

void Tape::run_backward(int) {
  for (auto& n : nodes_) {
    if (n.adjoint.same_shape(n.value) && n.adjoint.size() == n.value.size()) {
      for (auto& x : n.adjoint.data()) x = 0.0;
    } else {
      n.adjoint = Tensor(n.value.shape());
    }
  }
  adjoints_live_ = true;
}

void Tape::backward(Var root) {
  const int r = check(root);
  if (nodes_[r].value.size() != 1)
    throw Error("backward: root must be scalar, got " + shape_str(nodes_[r].value));
  run_backward(r);
  nodes_[r].adjoint[0] = 1.0;
  for (int i = r; i >= 0; --i)
    if (nodes_[i].back) nodes_[i].back(*this);
}

void Tape::backward_seeded(Var node, const Tensor& seed) {
  const int r = check(node);
  if (!seed.same_shape(nodes_[r].value))
    throw ShapeError("backward_seeded: seed " + shape_str(seed) + " vs node value " +
                     shape_str(nodes_[r].value));
  run_backward(r);
  nodes_[r].adjoint = seed;
  for (int i = r; i >= 0; --i)
    if (nodes_[i].back) nodes_[i].back(*this);
}

}  // namespace unidrop
