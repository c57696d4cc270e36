// SPDX-License-Identifier: Apache-2.0
#include "cvlm/ops.hpp"

#include <Eigen/Core>
#include <cmath>
#include <cstring>
#include <string>
#include <utility>

namespace cvlm::ops {

namespace {

constexpr double kBlocked = -1e30;

using RowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using MapM = Eigen::Map<RowMat>;

std::shared_ptr<Node> grad_dst(const Tensor& t) {
  return t.tracked() ? t.node : nullptr;
}

// Attaches a backward closure when recording is on and at least one input
// feeds gradients; otherwise the output stays a plain constant.
Tensor attach(Tensor out, std::vector<std::shared_ptr<Node>> parents,
              std::function<void(Node&)> fn) {
  bool any = false;
  for (const auto& p : parents) any = any || (p != nullptr);
  if (!grad_enabled() || !any) return out;
  auto node = std::make_shared<Node>();
  for (auto& p : parents) {
    if (p) node->parents.push_back(std::move(p));
  }
  node->backward_fn = std::move(fn);
  node->out_numel = out.numel();
  out.node = std::move(node);
  return out;
}

void require_matrix(const Tensor& t, const char* op, const char* arg) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": " + arg + " must be rank-2, got " +
                     t.shape_str());
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_str() +
                     " vs " + b.shape_str());
  }
}

void require_vec(const Tensor& v, int d, const char* op, const char* arg) {
  if (static_cast<int>(v.numel()) != d) {
    throw ShapeError(std::string(op) + ": " + arg + " has shape " +
                     v.shape_str() + ", expected numel " + std::to_string(d));
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = Tensor::zeros(a.shape());
  const std::size_t n = a.numel();
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
  auto na = grad_dst(a);
  auto nb = grad_dst(b);
  return attach(std::move(out), {na, nb}, [na, nb](Node& node) {
    if (na) na->accumulate(node.grad.data(), node.grad.size());
    if (nb) nb->accumulate(node.grad.data(), node.grad.size());
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out = Tensor::zeros(a.shape());
  const std::size_t n = a.numel();
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
  auto na = grad_dst(a);
  auto nb = grad_dst(b);
  return attach(std::move(out), {na, nb}, [na, nb](Node& node) {
    if (na) na->accumulate(node.grad.data(), node.grad.size());
    if (nb) {
      nb->ensure_grad();
      for (std::size_t i = 0; i < node.grad.size(); ++i) {
        nb->grad[i] -= node.grad[i];
      }
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out = Tensor::zeros(a.shape());
  const std::size_t n = a.numel();
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
  auto na = grad_dst(a);
  auto nb = grad_dst(b);
  auto ba = a.buffer();
  auto bb = b.buffer();
  return attach(std::move(out), {na, nb}, [na, nb, ba, bb](Node& node) {
    const std::size_t n2 = node.grad.size();
    if (na) {
      na->ensure_grad();
      for (std::size_t i = 0; i < n2; ++i) {
        na->grad[i] += node.grad[i] * (*bb)[i];
      }
    }
    if (nb) {
      nb->ensure_grad();
      for (std::size_t i = 0; i < n2; ++i) {
        nb->grad[i] += node.grad[i] * (*ba)[i];
      }
    }
  });
}

Tensor scale(const Tensor& a, double s) {
  Tensor out = Tensor::zeros(a.shape());
  const std::size_t n = a.numel();
  const double* pa = a.data();
  double* po = out.data();
  for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] * s;
  auto na = grad_dst(a);
  return attach(std::move(out), {na}, [na, s](Node& node) {
    if (!na) return;
    na->ensure_grad();
    for (std::size_t i = 0; i < node.grad.size(); ++i) {
      na->grad[i] += node.grad[i] * s;
    }
  });
}

Tensor add_rowvec(const Tensor& x, const Tensor& v) {
  require_matrix(x, "add_rowvec", "x");
  const int n = x.rows();
  const int d = x.cols();
  require_vec(v, d, "add_rowvec", "v");
  Tensor out = Tensor::zeros({n, d});
  const double* px = x.data();
  const double* pv = v.data();
  double* po = out.data();
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) po[i * d + j] = px[i * d + j] + pv[j];
  }
  auto nx = grad_dst(x);
  auto nv = grad_dst(v);
  return attach(std::move(out), {nx, nv}, [nx, nv, n, d](Node& node) {
    if (nx) nx->accumulate(node.grad.data(), node.grad.size());
    if (nv) {
      nv->ensure_grad();
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) nv->grad[j] += node.grad[i * d + j];
      }
    }
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul", "a");
  require_matrix(b, "matmul", "b");
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions disagree, a " + a.shape_str() +
                     " vs b " + b.shape_str());
  }
  const int n = a.rows();
  const int k = a.cols();
  const int m = b.cols();
  Tensor out = Tensor::zeros({n, m});
  {
    MapC A(a.data(), n, k);
    MapC B(b.data(), k, m);
    MapM C(out.data(), n, m);
    C.noalias() = A * B;
  }
  auto na = grad_dst(a);
  auto nb = grad_dst(b);
  auto ba = a.buffer();
  auto bb = b.buffer();
  return attach(std::move(out), {na, nb},
                [na, nb, ba, bb, n, k, m](Node& node) {
                  MapC G(node.grad.data(), n, m);
                  if (na) {
                    na->ensure_grad();
                    MapM dA(na->grad.data(), n, k);
                    MapC B(bb->data(), k, m);
                    dA.noalias() += G * B.transpose();
                  }
                  if (nb) {
                    nb->ensure_grad();
                    MapM dB(nb->grad.data(), k, m);
                    MapC A(ba->data(), n, k);
                    dB.noalias() += A.transpose() * G;
                  }
                });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_nt", "a");
  require_matrix(b, "matmul_nt", "b");
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: inner dimensions disagree, a " +
                     a.shape_str() + " vs b " + b.shape_str());
  }
  const int n = a.rows();
  const int k = a.cols();
  const int m = b.rows();
  Tensor out = Tensor::zeros({n, m});
  {
    MapC A(a.data(), n, k);
    MapC B(b.data(), m, k);
    MapM C(out.data(), n, m);
    C.noalias() = A * B.transpose();
  }
  auto na = grad_dst(a);
  auto nb = grad_dst(b);
  auto ba = a.buffer();
  auto bb = b.buffer();
  return attach(std::move(out), {na, nb},
                [na, nb, ba, bb, n, k, m](Node& node) {
                  MapC G(node.grad.data(), n, m);
                  if (na) {
                    na->ensure_grad();
                    MapM dA(na->grad.data(), n, k);
                    MapC B(bb->data(), m, k);
                    dA.noalias() += G * B;
                  }
                  if (nb) {
                    nb->ensure_grad();
                    MapM dB(nb->grad.data(), m, k);
                    MapC A(ba->data(), n, k);
                    dB.noalias() += G.transpose() * A;
                  }
                });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_matrix(x, "linear", "x");
  require_matrix(w, "linear", "w");
  if (x.cols() != w.cols()) {
    throw ShapeError("linear: input width mismatch, x " + x.shape_str() +
                     " vs w " + w.shape_str());
  }
  const int n = x.rows();
  const int in = x.cols();
  const int out_d = w.rows();
  require_vec(b, out_d, "linear", "b");
  Tensor out = Tensor::zeros({n, out_d});
  {
    MapC X(x.data(), n, in);
    MapC W(w.data(), out_d, in);
    MapM Y(out.data(), n, out_d);
    Y.noalias() = X * W.transpose();
    const double* pb = b.data();
    double* py = out.data();
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < out_d; ++j) py[i * out_d + j] += pb[j];
    }
  }
  auto nx = grad_dst(x);
  auto nw = grad_dst(w);
  auto nb = grad_dst(b);
  auto bx = x.buffer();
  auto bw = w.buffer();
  return attach(std::move(out), {nx, nw, nb},
                [nx, nw, nb, bx, bw, n, in, out_d](Node& node) {
                  MapC G(node.grad.data(), n, out_d);
                  if (nx) {
                    nx->ensure_grad();
                    MapM dX(nx->grad.data(), n, in);
                    MapC W(bw->data(), out_d, in);
                    dX.noalias() += G * W;
                  }
                  if (nw) {
                    nw->ensure_grad();
                    MapM dW(nw->grad.data(), out_d, in);
                    MapC X(bx->data(), n, in);
                    dW.noalias() += G.transpose() * X;
                  }
                  if (nb) {
                    nb->ensure_grad();
                    for (int i = 0; i < n; ++i) {
                      for (int j = 0; j < out_d; ++j) {
                        nb->grad[j] += node.grad[i * out_d + j];
                      }
                    }
                  }
                });
}

Tensor softmax_rows(const Tensor& x) {
  require_matrix(x, "softmax_rows", "x");
  const int n = x.rows();
  const int d = x.cols();
  if (d == 0) throw ShapeError("softmax_rows: zero-width rows " + x.shape_str());
  Tensor out = Tensor::zeros({n, d});
  const double* px = x.data();
  double* po = out.data();
  for (int i = 0; i < n; ++i) {
    const double* row = px + static_cast<std::size_t>(i) * d;
    double* orow = po + static_cast<std::size_t>(i) * d;
    double m = row[0];
    for (int j = 1; j < d; ++j) m = std::max(m, row[j]);
    double z = 0.0;
    for (int j = 0; j < d; ++j) {
      orow[j] = std::exp(row[j] - m);
      z += orow[j];
    }
    const double inv = 1.0 / z;
    for (int j = 0; j < d; ++j) orow[j] *= inv;
  }
  auto nx = grad_dst(x);
  auto by = out.buffer();
  return attach(std::move(out), {nx}, [nx, by, n, d](Node& node) {
    if (!nx) return;
    nx->ensure_grad();
    for (int i = 0; i < n; ++i) {
      const double* y = by->data() + static_cast<std::size_t>(i) * d;
      const double* g = node.grad.data() + static_cast<std::size_t>(i) * d;
      double dot = 0.0;
      for (int j = 0; j < d; ++j) dot += g[j] * y[j];
      double* dx = nx->grad.data() + static_cast<std::size_t>(i) * d;
      for (int j = 0; j < d; ++j) dx[j] += y[j] * (g[j] - dot);
    }
  });
}

Tensor gelu(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  const std::size_t n = x.numel();
  const double* px = x.data();
  double* po = out.data();
  constexpr double kInvSqrt2 = 0.7071067811865475244;
  for (std::size_t i = 0; i < n; ++i) {
    po[i] = 0.5 * px[i] * (1.0 + std::erf(px[i] * kInvSqrt2));
  }
  auto nx = grad_dst(x);
  auto bx = x.buffer();
  return attach(std::move(out), {nx}, [nx, bx](Node& node) {
    if (!nx) return;
    nx->ensure_grad();
    constexpr double kInvSqrt2 = 0.7071067811865475244;
    constexpr double kInvSqrt2Pi = 0.3989422804014326779;
    for (std::size_t i = 0; i < node.grad.size(); ++i) {
      const double v = (*bx)[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
      nx->grad[i] += node.grad[i] * (cdf + v * pdf);
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps) {
  require_matrix(x, "layer_norm", "x");
  const int n = x.rows();
  const int d = x.cols();
  require_vec(gamma, d, "layer_norm", "gamma");
  require_vec(beta, d, "layer_norm", "beta");
  Tensor out = Tensor::zeros({n, d});
  auto xhat = std::make_shared<std::vector<double>>(
      static_cast<std::size_t>(n) * d);
  auto inv_std = std::make_shared<std::vector<double>>(n);
  const double* px = x.data();
  const double* pg = gamma.data();
  const double* pb = beta.data();
  double* po = out.data();
  for (int i = 0; i < n; ++i) {
    const double* row = px + static_cast<std::size_t>(i) * d;
    double mean = 0.0;
    for (int j = 0; j < d; ++j) mean += row[j];
    mean /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) {
      const double c = row[j] - mean;
      var += c * c;
    }
    var /= d;
    const double inv = 1.0 / std::sqrt(var + eps);
    (*inv_std)[i] = inv;
    double* xh = xhat->data() + static_cast<std::size_t>(i) * d;
    double* orow = po + static_cast<std::size_t>(i) * d;
    for (int j = 0; j < d; ++j) {
      xh[j] = (row[j] - mean) * inv;
      orow[j] = pg[j] * xh[j] + pb[j];
    }
  }
  auto nx = grad_dst(x);
  auto ng = grad_dst(gamma);
  auto nb = grad_dst(beta);
  auto bg = gamma.buffer();
  return attach(
      std::move(out), {nx, ng, nb},
      [nx, ng, nb, bg, xhat, inv_std, n, d](Node& node) {
        std::vector<double> dxhat(d);
        if (ng) ng->ensure_grad();
        if (nb) nb->ensure_grad();
        if (nx) nx->ensure_grad();
        for (int i = 0; i < n; ++i) {
          const double* g = node.grad.data() + static_cast<std::size_t>(i) * d;
          const double* xh = xhat->data() + static_cast<std::size_t>(i) * d;
          if (ng || nb) {
            for (int j = 0; j < d; ++j) {
              if (ng) ng->grad[j] += g[j] * xh[j];
              if (nb) nb->grad[j] += g[j];
            }
          }
          if (!nx) continue;
          double sum_dx = 0.0;
          double sum_dx_xh = 0.0;
          for (int j = 0; j < d; ++j) {
            dxhat[j] = g[j] * (*bg)[j];
            sum_dx += dxhat[j];
            sum_dx_xh += dxhat[j] * xh[j];
          }
          const double inv = (*inv_std)[i];
          double* dx = nx->grad.data() + static_cast<std::size_t>(i) * d;
          for (int j = 0; j < d; ++j) {
            dx[j] += inv / d * (d * dxhat[j] - sum_dx - xh[j] * sum_dx_xh);
          }
        }
      });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  int d = -1;
  int total = 0;
  for (const auto& p : parts) {
    require_matrix(p, "concat_rows", "part");
    if (d < 0) {
      d = p.cols();
    } else if (p.cols() != d) {
      throw ShapeError("concat_rows: column mismatch, expected " +
                       std::to_string(d) + ", got " + p.shape_str());
    }
    total += p.rows();
  }
  Tensor out = Tensor::zeros({total, d});
  std::vector<std::shared_ptr<Node>> dsts;
  std::vector<int> offs;
  std::vector<int> rws;
  double* po = out.data();
  int off = 0;
  for (const auto& p : parts) {
    const int r = p.rows();
    if (r > 0) {
      std::memcpy(po + static_cast<std::size_t>(off) * d, p.data(),
                  static_cast<std::size_t>(r) * d * sizeof(double));
    }
    dsts.push_back(grad_dst(p));
    offs.push_back(off);
    rws.push_back(r);
    off += r;
  }
  auto parents = dsts;
  return attach(std::move(out), std::move(parents),
                [dsts, offs, rws, d](Node& node) {
                  for (std::size_t i = 0; i < dsts.size(); ++i) {
                    if (!dsts[i] || rws[i] == 0) continue;
                    dsts[i]->accumulate(
                        node.grad.data() +
                            static_cast<std::size_t>(offs[i]) * d,
                        static_cast<std::size_t>(rws[i]) * d);
                  }
                });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  int n = -1;
  int total = 0;
  for (const auto& p : parts) {
    require_matrix(p, "concat_cols", "part");
    if (n < 0) {
      n = p.rows();
    } else if (p.rows() != n) {
      throw ShapeError("concat_cols: row mismatch, expected " +
                       std::to_string(n) + ", got " + p.shape_str());
    }
    total += p.cols();
  }
  Tensor out = Tensor::zeros({n, total});
  std::vector<std::shared_ptr<Node>> dsts;
  std::vector<int> offs;
  std::vector<int> widths;
  double* po = out.data();
  int off = 0;
  for (const auto& p : parts) {
    const int w = p.cols();
    const double* pp = p.data();
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < w; ++j) {
        po[static_cast<std::size_t>(i) * total + off + j] =
            pp[static_cast<std::size_t>(i) * w + j];
      }
    }
    dsts.push_back(grad_dst(p));
    offs.push_back(off);
    widths.push_back(w);
    off += w;
  }
  auto parents = dsts;
  return attach(std::move(out), std::move(parents),
                [dsts, offs, widths, n, total](Node& node) {
                  for (std::size_t i = 0; i < dsts.size(); ++i) {
                    if (!dsts[i] || widths[i] == 0) continue;
                    dsts[i]->ensure_grad();
                    const int w = widths[i];
                    for (int r = 0; r < n; ++r) {
                      for (int c = 0; c < w; ++c) {
                        dsts[i]->grad[static_cast<std::size_t>(r) * w + c] +=
                            node.grad[static_cast<std::size_t>(r) * total +
                                      offs[i] + c];
                      }
                    }
                  }
                });
}

Tensor slice_rows(const Tensor& x, int r0, int r1) {
  require_matrix(x, "slice_rows", "x");
  if (r0 < 0 || r1 < r0 || r1 > x.rows()) {
    throw BoundsError("slice_rows: range [" + std::to_string(r0) + "," +
                      std::to_string(r1) + ") outside " + x.shape_str());
  }
  const int d = x.cols();
  const int r = r1 - r0;
  Tensor out = Tensor::zeros({r, d});
  if (r > 0) {
    std::memcpy(out.data(), x.data() + static_cast<std::size_t>(r0) * d,
                static_cast<std::size_t>(r) * d * sizeof(double));
  }
  auto nx = grad_dst(x);
  return attach(std::move(out), {nx}, [nx, r0, r, d](Node& node) {
    if (!nx || r == 0) return;
    nx->ensure_grad();
    double* dst = nx->grad.data() + static_cast<std::size_t>(r0) * d;
    for (std::size_t i = 0; i < static_cast<std::size_t>(r) * d; ++i) {
      dst[i] += node.grad[i];
    }
  });
}

Tensor slice_cols(const Tensor& x, int c0, int c1) {
  require_matrix(x, "slice_cols", "x");
  if (c0 < 0 || c1 < c0 || c1 > x.cols()) {
    throw BoundsError("slice_cols: range [" + std::to_string(c0) + "," +
                      std::to_string(c1) + ") outside " + x.shape_str());
  }
  const int n = x.rows();
  const int d = x.cols();
  const int w = c1 - c0;
  Tensor out = Tensor::zeros({n, w});
  const double* px = x.data();
  double* po = out.data();
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < w; ++j) {
      po[static_cast<std::size_t>(i) * w + j] =
          px[static_cast<std::size_t>(i) * d + c0 + j];
    }
  }
  auto nx = grad_dst(x);
  return attach(std::move(out), {nx}, [nx, c0, n, d, w](Node& node) {
    if (!nx || w == 0) return;
    nx->ensure_grad();
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < w; ++j) {
        nx->grad[static_cast<std::size_t>(i) * d + c0 + j] +=
            node.grad[static_cast<std::size_t>(i) * w + j];
      }
    }
  });
}

Tensor mean_rows(const Tensor& x) {
  require_matrix(x, "mean_rows", "x");
  const int n = x.rows();
  const int d = x.cols();
  if (n == 0) throw ShapeError("mean_rows: no rows in " + x.shape_str());
  Tensor out = Tensor::zeros({1, d});
  const double* px = x.data();
  double* po = out.data();
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) po[j] += px[static_cast<std::size_t>(i) * d + j];
  }
  for (int j = 0; j < d; ++j) po[j] /= n;
  auto nx = grad_dst(x);
  return attach(std::move(out), {nx}, [nx, n, d](Node& node) {
    if (!nx) return;
    nx->ensure_grad();
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < d; ++j) {
        nx->grad[static_cast<std::size_t>(i) * d + j] += node.grad[j] / n;
      }
    }
  });
}

Tensor embed_rows(const Tensor& table, const std::vector<int>& ids) {
  require_matrix(table, "embed_rows", "table");
  const int v = table.rows();
  const int d = table.cols();
  const int n = static_cast<int>(ids.size());
  for (int id : ids) {
    if (id < 0 || id >= v) {
      throw BoundsError("embed_rows: id " + std::to_string(id) +
                        " outside table " + table.shape_str());
    }
  }
  Tensor out = Tensor::zeros({n, d});
  const double* pt = table.data();
  double* po = out.data();
  for (int i = 0; i < n; ++i) {
    std::memcpy(po + static_cast<std::size_t>(i) * d,
                pt + static_cast<std::size_t>(ids[i]) * d,
                static_cast<std::size_t>(d) * sizeof(double));
  }
  auto nt = grad_dst(table);
  return attach(std::move(out), {nt}, [nt, ids, d](Node& node) {
    if (!nt) return;
    nt->ensure_grad();
    for (std::size_t i = 0; i < ids.size(); ++i) {
      double* dst = nt->grad.data() + static_cast<std::size_t>(ids[i]) * d;
      const double* g = node.grad.data() + i * d;
      for (int j = 0; j < d; ++j) dst[j] += g[j];
    }
  });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                 const Tensor& mask) {
  require_matrix(q, "attention", "q");
  require_matrix(k, "attention", "k");
  require_matrix(v, "attention", "v");
  if (q.cols() != k.cols()) {
    throw ShapeError("attention: q/k feature dims disagree, q " +
                     q.shape_str() + " vs k " + k.shape_str());
  }
  if (k.rows() != v.rows()) {
    throw ShapeError("attention: k/v row counts disagree, k " + k.shape_str() +
                     " vs v " + v.shape_str());
  }
  Tensor scores = scale(matmul_nt(q, k), 1.0 / std::sqrt(double(q.cols())));
  if (!mask.empty_buffer()) {
    if (mask.rank() != 2 || mask.rows() != q.rows() ||
        mask.cols() != k.rows()) {
      throw ShapeError("attention: mask " + mask.shape_str() +
                       " does not cover scores [" + std::to_string(q.rows()) +
                       "," + std::to_string(k.rows()) + "]");
    }
    scores = add(scores, mask);
  }
  return matmul(softmax_rows(scores), v);
}

std::size_t count_unmasked(const std::vector<std::uint8_t>& ignore) {
  std::size_t n = 0;
  for (auto b : ignore) n += (b == 0);
  return n;
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                     const std::vector<std::uint8_t>& ignore,
                     Reduction reduction) {
  require_matrix(logits, "cross_entropy", "logits");
  const int n = logits.rows();
  const int v = logits.cols();
  if (static_cast<int>(targets.size()) != n) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) +
                     " targets for " + std::to_string(n) + " rows");
  }
  std::vector<std::uint8_t> ig = ignore;
  if (ig.empty()) ig.assign(n, 0);
  if (static_cast<int>(ig.size()) != n) {
    throw ShapeError("cross_entropy: ignore mask length " +
                     std::to_string(ig.size()) + " for " + std::to_string(n) +
                     " rows");
  }
  std::size_t live = count_unmasked(ig);
  if (live == 0) {
    throw DegenerateBatchError("cross_entropy: every position is masked out");
  }
  auto probs = std::make_shared<std::vector<double>>(
      static_cast<std::size_t>(n) * v, 0.0);
  const double* pl = logits.data();
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    if (ig[i]) continue;
    if (targets[i] < 0 || targets[i] >= v) {
      throw BoundsError("cross_entropy: target " + std::to_string(targets[i]) +
                        " outside vocab " + std::to_string(v));
    }
    const double* row = pl + static_cast<std::size_t>(i) * v;
    double m = row[0];
    for (int j = 1; j < v; ++j) m = std::max(m, row[j]);
    double z = 0.0;
    double* prow = probs->data() + static_cast<std::size_t>(i) * v;
    for (int j = 0; j < v; ++j) {
      prow[j] = std::exp(row[j] - m);
      z += prow[j];
    }
    const double inv = 1.0 / z;
    for (int j = 0; j < v; ++j) prow[j] *= inv;
    total += m + std::log(z) - row[targets[i]];
  }
  if (reduction == Reduction::kMean) total /= static_cast<double>(live);
  Tensor out = Tensor::scalar(total);
  auto nl = grad_dst(logits);
  return attach(
      std::move(out), {nl},
      [nl, probs, targets, ig, live, reduction, n, v](Node& node) {
        if (!nl) return;
        nl->ensure_grad();
        const double w =
            node.grad[0] *
            (reduction == Reduction::kMean ? 1.0 / static_cast<double>(live)
                                           : 1.0);
        for (int i = 0; i < n; ++i) {
          if (ig[i]) continue;
          const double* prow = probs->data() + static_cast<std::size_t>(i) * v;
          double* dst = nl->grad.data() + static_cast<std::size_t>(i) * v;
          for (int j = 0; j < v; ++j) dst[j] += w * prow[j];
          dst[targets[i]] -= w;
        }
      });
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                     int ignore_index, Reduction reduction) {
  std::vector<std::uint8_t> ignore(targets.size(), 0);
  std::vector<int> safe = targets;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] == ignore_index) {
      ignore[i] = 1;
      safe[i] = 0;
    }
  }
  return cross_entropy(logits, safe, ignore, reduction);
}

Tensor causal_mask(int n) {
  Tensor m = Tensor::zeros({n, n});
  double* p = m.data();
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      p[static_cast<std::size_t>(i) * n + j] = kBlocked;
    }
  }
  return m;
}

Tensor prefix_causal_mask(int n_front, int n_tail) {
  const int n = n_front + n_tail;
  Tensor m = Tensor::zeros({n, n});
  double* p = m.data();
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const bool ok = (j < n_front) || (j <= i);
      if (!ok) p[static_cast<std::size_t>(i) * n + j] = kBlocked;
    }
  }
  return m;
}

}  // namespace cvlm::ops
