#include <trolldet/autodiff.hpp>

#include <cmath>
#include <algorithm>
#include <limits>

namespace trolldet {

Var Graph::constant(Mat value) {
  nodes_.push_back(Node{std::move(value), Mat(), false, {}});
  return Var(this, nodes_.size() - 1);
}

Var Graph::param(Parameter& p) {
  if (!p.trainable) return constant(p.value);
  if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols()) p.zero_grad();
  Parameter* target = &p;
  nodes_.push_back(Node{p.value, Mat(), true, [target](Graph& g, std::size_t self) {
                          target->grad += g.grad(self);
                        }});
  return Var(this, nodes_.size() - 1);
}

Var Graph::marker() {
  nodes_.push_back(Node{Mat(), Mat(), true, {}});
  return Var(this, nodes_.size() - 1);
}

void Graph::accumulate(std::size_t i, const Mat& delta) { accumulate_expr(i, delta); }

Mat& Graph::grad_buffer(std::size_t i) {
  Node& n = nodes_[i];
  if (n.grad.size() == 0) n.grad.setZero(n.value.rows(), n.value.cols());
  return n.grad;
}

Var Graph::push(Mat value, std::initializer_list<Var> inputs, Backward back) {
  return push(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(back));
}

Var Graph::push(Mat value, std::span<const Var> inputs, Backward back) {
  bool needs = false;
  for (const Var& v : inputs) needs = needs || nodes_[v.index()].needs_grad;
  nodes_.push_back(Node{std::move(value), Mat(), needs, needs ? std::move(back) : Backward{}});
  return Var(this, nodes_.size() - 1);
}

void Graph::backward(Var root, double seed) {
  if (root.rows() != 1 || root.cols() != 1) {
    throw ShapeError("backward: root must be a 1x1 scalar");
  }
  if (!nodes_[root.index()].needs_grad) return;
  for (Node& n : nodes_) n.grad.resize(0, 0);
  nodes_[root.index()].grad = Mat::Constant(1, 1, seed);
  for (std::size_t i = root.index() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.needs_grad || n.grad.size() == 0 || !n.back) continue;
    n.back(*this, i);
  }
}

namespace ad {
namespace {

void require(bool ok, const char* what) {
  if (!ok) throw ShapeError(what);
}

}  // namespace

Var linear(Var x, Var w) {
  require(x.cols() == w.cols(), "linear: input width does not match weight columns");
  Graph& g = x.graph();
  const std::size_t xi = x.index(), wi = w.index();
  return g.push(x.value() * w.value().transpose(), {x, w}, [xi, wi](Graph& g, std::size_t self) {
    const Mat& dy = g.grad(self);
    if (g.needs_grad(xi)) g.accumulate_expr(xi, dy * g.value(wi));
    if (g.needs_grad(wi)) g.accumulate_expr(wi, dy.transpose() * g.value(xi));
  });
}

Var linear(Var x, Var w, Var b) {
  require(b.rows() == 1 && b.cols() == w.rows(), "linear: bias must be 1 x out");
  return add_row(linear(x, w), b);
}

Var matmul(Var a, Var b) {
  require(a.cols() == b.rows(), "matmul: inner dimensions differ");
  Graph& g = a.graph();
  const std::size_t ai = a.index(), bi = b.index();
  return g.push(a.value() * b.value(), {a, b}, [ai, bi](Graph& g, std::size_t self) {
    const Mat& dy = g.grad(self);
    if (g.needs_grad(ai)) g.accumulate_expr(ai, dy * g.value(bi).transpose());
    if (g.needs_grad(bi)) g.accumulate_expr(bi, g.value(ai).transpose() * dy);
  });
}

Var matmul_nt(Var a, Var b) {
  require(a.cols() == b.cols(), "matmul_nt: widths differ");
  Graph& g = a.graph();
  const std::size_t ai = a.index(), bi = b.index();
  return g.push(a.value() * b.value().transpose(), {a, b}, [ai, bi](Graph& g, std::size_t self) {
    const Mat& dy = g.grad(self);
    if (g.needs_grad(ai)) g.accumulate_expr(ai, dy * g.value(bi));
    if (g.needs_grad(bi)) g.accumulate_expr(bi, dy.transpose() * g.value(ai));
  });
}

Var add(Var a, Var b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "add: shapes differ");
  Graph& g = a.graph();
  const std::size_t ai = a.index(), bi = b.index();
  return g.push(a.value() + b.value(), {a, b}, [ai, bi](Graph& g, std::size_t self) {
    g.accumulate_expr(ai, g.grad(self));
    g.accumulate_expr(bi, g.grad(self));
  });
}

Var add_row(Var a, Var row) {
  require(row.rows() == 1 && row.cols() == a.cols(), "add_row: row width differs");
  Graph& g = a.graph();
  const std::size_t ai = a.index(), ri = row.index();
  Mat out = a.value().rowwise() + row.value().row(0);
  return g.push(std::move(out), {a, row}, [ai, ri](Graph& g, std::size_t self) {
    g.accumulate_expr(ai, g.grad(self));
    if (g.needs_grad(ri)) g.accumulate_expr(ri, g.grad(self).colwise().sum());
  });
}

Var sub(Var a, Var b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shapes differ");
  Graph& g = a.graph();
  const std::size_t ai = a.index(), bi = b.index();
  return g.push(a.value() - b.value(), {a, b}, [ai, bi](Graph& g, std::size_t self) {
    g.accumulate_expr(ai, g.grad(self));
    g.accumulate_expr(bi, -g.grad(self));
  });
}

Var mul(Var a, Var b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "mul: shapes differ");
  Graph& g = a.graph();
  const std::size_t ai = a.index(), bi = b.index();
  return g.push(a.value().cwiseProduct(b.value()), {a, b}, [ai, bi](Graph& g, std::size_t self) {
    const Mat& dy = g.grad(self);
    if (g.needs_grad(ai)) g.accumulate_expr(ai, dy.cwiseProduct(g.value(bi)));
    if (g.needs_grad(bi)) g.accumulate_expr(bi, dy.cwiseProduct(g.value(ai)));
  });
}

Var scale(Var a, double c) {
  Graph& g = a.graph();
  const std::size_t ai = a.index();
  return g.push(a.value() * c, {a}, [ai, c](Graph& g, std::size_t self) {
    g.accumulate_expr(ai, g.grad(self) * c);
  });
}

Var one_minus(Var a) {
  Graph& g = a.graph();
  const std::size_t ai = a.index();
  Mat out = (1.0 - a.value().array()).matrix();
  return g.push(std::move(out), {a}, [ai](Graph& g, std::size_t self) {
    g.accumulate_expr(ai, -g.grad(self));
  });
}

Var scalar_mul(Var s, Var a) {
  require(s.rows() == 1 && s.cols() == 1, "scalar_mul: scale must be 1x1");
  Graph& g = a.graph();
  const std::size_t si = s.index(), ai = a.index();
  return g.push(a.value() * s.scalar(), {s, a}, [si, ai](Graph& g, std::size_t self) {
    const Mat& dy = g.grad(self);
    if (g.needs_grad(si)) {
      g.accumulate_expr(si, Mat::Constant(1, 1, dy.cwiseProduct(g.value(ai)).sum()));
    }
    if (g.needs_grad(ai)) g.accumulate_expr(ai, dy * g.value(si)(0, 0));
  });
}

Var sigmoid(Var a) {
  Graph& g = a.graph();
  const std::size_t ai = a.index();
  Mat out = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
  return g.push(std::move(out), {a}, [ai](Graph& g, std::size_t self) {
    const auto y = g.value(self).array();
    g.accumulate_expr(ai, (g.grad(self).array() * y * (1.0 - y)).matrix());
  });
}

Var tanh(Var a) {
  Graph& g = a.graph();
  const std::size_t ai = a.index();
  Mat out = a.value().array().tanh().matrix();
  return g.push(std::move(out), {a}, [ai](Graph& g, std::size_t self) {
    const auto y = g.value(self).array();
    g.accumulate_expr(ai, (g.grad(self).array() * (1.0 - y * y)).matrix());
  });
}

Var relu(Var a) {
  Graph& g = a.graph();
  const std::size_t ai = a.index();
  Mat out = a.value().cwiseMax(0.0);
  return g.push(std::move(out), {a}, [ai](Graph& g, std::size_t self) {
    const auto mask = (g.value(ai).array() > 0.0).cast<double>();
    g.accumulate_expr(ai, (g.grad(self).array() * mask).matrix());
  });
}

Var concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), "concat_cols: nothing to concatenate");
  Graph& g = parts.front().graph();
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  for (const Var& p : parts) {
    require(p.rows() == rows, "concat_cols: row counts differ");
    cols += p.cols();
  }
  Mat out(rows, cols);
  std::vector<std::pair<std::size_t, Eigen::Index>> layout;
  Eigen::Index offset = 0;
  for (const Var& p : parts) {
    out.middleCols(offset, p.cols()) = p.value();
    layout.emplace_back(p.index(), offset);
    offset += p.cols();
  }
  return g.push(std::move(out), parts, [layout](Graph& g, std::size_t self) {
    for (const auto& [idx, off] : layout) {
      if (g.needs_grad(idx)) g.accumulate_expr(idx, g.grad(self).middleCols(off, g.value(idx).cols()));
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  require(!parts.empty(), "concat_rows: nothing to concatenate");
  Graph& g = parts.front().graph();
  const Eigen::Index cols = parts.front().cols();
  Eigen::Index rows = 0;
  for (const Var& p : parts) {
    require(p.cols() == cols, "concat_rows: column counts differ");
    rows += p.rows();
  }
  Mat out(rows, cols);
  std::vector<std::pair<std::size_t, Eigen::Index>> layout;
  Eigen::Index offset = 0;
  for (const Var& p : parts) {
    out.middleRows(offset, p.rows()) = p.value();
    layout.emplace_back(p.index(), offset);
    offset += p.rows();
  }
  return g.push(std::move(out), parts, [layout](Graph& g, std::size_t self) {
    for (const auto& [idx, off] : layout) {
      if (g.needs_grad(idx)) g.accumulate_expr(idx, g.grad(self).middleRows(off, g.value(idx).rows()));
    }
  });
}

Var slice_rows(Var a, Eigen::Index start, Eigen::Index count) {
  require(start >= 0 && count >= 0 && start + count <= a.rows(), "slice_rows: out of range");
  Graph& g = a.graph();
  const std::size_t ai = a.index();
  return g.push(a.value().middleRows(start, count), {a}, [ai, start, count](Graph& g, std::size_t self) {
    g.grad_buffer(ai).middleRows(start, count) += g.grad(self);
  });
}

Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  require(start >= 0 && count >= 0 && start + count <= a.cols(), "slice_cols: out of range");
  Graph& g = a.graph();
  const std::size_t ai = a.index();
  return g.push(a.value().middleCols(start, count), {a}, [ai, start, count](Graph& g, std::size_t self) {
    g.grad_buffer(ai).middleCols(start, count) += g.grad(self);
  });
}

Var masked_softmax_rows(Var scores, Eigen::Index valid_cols) {
  require(valid_cols >= 1, "masked_softmax_rows: every position is masked");
  require(valid_cols <= scores.cols(), "masked_softmax_rows: valid count exceeds width");
  Graph& g = scores.graph();
  const std::size_t si = scores.index();
  const Mat& x = scores.value();
  Mat out = Mat::Zero(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const auto row = x.row(r).head(valid_cols);
    const double m = row.maxCoeff();
    const auto e = (row.array() - m).exp();
    out.row(r).head(valid_cols) = (e / e.sum()).matrix();
  }
  return g.push(std::move(out), {scores}, [si, valid_cols](Graph& g, std::size_t self) {
    const Mat& y = g.value(self);
    const Mat& dy = g.grad(self);
    Mat dx = Mat::Zero(y.rows(), y.cols());
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      const auto yr = y.row(r).head(valid_cols).array();
      const auto dr = dy.row(r).head(valid_cols).array();
      const double dot = (yr * dr).sum();
      dx.row(r).head(valid_cols) = (yr * (dr - dot)).matrix();
    }
    g.accumulate_expr(si, dx);
  });
}

Var layer_norm_rows(Var x, Var gain, Var bias, double eps) {
  require(x.cols() >= 1, "layer_norm: empty vector");
  require(gain.rows() == 1 && gain.cols() == x.cols(), "layer_norm: gain width differs");
  require(bias.rows() == 1 && bias.cols() == x.cols(), "layer_norm: bias width differs");
  Graph& g = x.graph();
  const Eigen::Index n = x.rows(), d = x.cols();
  Mat xhat(n, d);
  Eigen::VectorXd inv_std(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const double mean = x.value().row(r).mean();
    const RowVec centered = x.value().row(r).array() - mean;
    const double var = centered.squaredNorm() / static_cast<double>(d);
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = centered * inv_std(r);
  }
  Mat out = (xhat.array().rowwise() * gain.value().row(0).array()).matrix();
  out.rowwise() += bias.value().row(0);
  const std::size_t xi = x.index(), gi = gain.index(), bi = bias.index();
  return g.push(std::move(out), {x, gain, bias},
                [xi, gi, bi, xhat = std::move(xhat), inv_std = std::move(inv_std)](Graph& g, std::size_t self) {
                  const Mat& dy = g.grad(self);
                  if (g.needs_grad(gi)) g.accumulate_expr(gi, dy.cwiseProduct(xhat).colwise().sum());
                  if (g.needs_grad(bi)) g.accumulate_expr(bi, dy.colwise().sum());
                  if (!g.needs_grad(xi)) return;
                  const double d = static_cast<double>(xhat.cols());
                  Mat dx(xhat.rows(), xhat.cols());
                  for (Eigen::Index r = 0; r < xhat.rows(); ++r) {
                    const RowVec dxhat = dy.row(r).cwiseProduct(g.value(gi).row(0));
                    const double mean_d = dxhat.sum() / d;
                    const double mean_dx = dxhat.dot(xhat.row(r)) / d;
                    dx.row(r) = inv_std(r) * (dxhat.array() - mean_d - xhat.row(r).array() * mean_dx).matrix();
                  }
                  g.accumulate_expr(xi, dx);
                });
}

Var mean_rows(Var x, Eigen::Index count) {
  require(count >= 1 && count <= x.rows(), "mean_rows: count out of range");
  Graph& g = x.graph();
  const std::size_t xi = x.index();
  Mat out = x.value().topRows(count).colwise().mean();
  return g.push(std::move(out), {x}, [xi, count](Graph& g, std::size_t self) {
    const RowVec share = g.grad(self).row(0) / static_cast<double>(count);
    g.grad_buffer(xi).topRows(count).rowwise() += share;
  });
}

Var max_rows(Var x, Eigen::Index count) {
  require(count >= 1 && count <= x.rows(), "max_rows: count out of range");
  Graph& g = x.graph();
  const std::size_t xi = x.index();
  const Eigen::Index cols = x.cols();
  Mat out(1, cols);
  std::vector<Eigen::Index> argmax(static_cast<std::size_t>(cols));
  for (Eigen::Index c = 0; c < cols; ++c) {
    Eigen::Index best = 0;
    out(0, c) = x.value().col(c).head(count).maxCoeff(&best);
    argmax[static_cast<std::size_t>(c)] = best;
  }
  return g.push(std::move(out), {x}, [xi, argmax = std::move(argmax)](Graph& g, std::size_t self) {
    Mat& dx = g.grad_buffer(xi);
    const Mat& dy = g.grad(self);
    for (std::size_t c = 0; c < argmax.size(); ++c) {
      dx(argmax[c], static_cast<Eigen::Index>(c)) += dy(0, static_cast<Eigen::Index>(c));
    }
  });
}

Var unfold(Var x, Eigen::Index k, Eigen::Index valid_rows) {
  require(k >= 1, "unfold: window must be positive");
  require(valid_rows >= 1 && valid_rows <= x.rows(), "unfold: valid row count out of range");
  Graph& g = x.graph();
  const std::size_t xi = x.index();
  const Eigen::Index d = x.cols();
  const Eigen::Index windows = std::max<Eigen::Index>(1, valid_rows - k + 1);
  Mat out = Mat::Zero(windows, k * d);
  for (Eigen::Index w = 0; w < windows; ++w) {
    for (Eigen::Index j = 0; j < k && w + j < valid_rows; ++j) {
      out.block(w, j * d, 1, d) = x.value().row(w + j);
    }
  }
  return g.push(std::move(out), {x}, [xi, k, d, windows, valid_rows](Graph& g, std::size_t self) {
    Mat& dx = g.grad_buffer(xi);
    const Mat& dy = g.grad(self);
    for (Eigen::Index w = 0; w < windows; ++w) {
      for (Eigen::Index j = 0; j < k && w + j < valid_rows; ++j) {
        dx.row(w + j) += dy.block(w, j * d, 1, d);
      }
    }
  });
}

namespace {

Mat lookup_rows(const Mat& table, std::span<const TokenId> ids, Eigen::Index valid) {
  require(valid >= 0 && valid <= static_cast<Eigen::Index>(ids.size()), "gather_rows: valid length out of range");
  const Eigen::Index vocab = table.rows();
  Mat out = Mat::Zero(static_cast<Eigen::Index>(ids.size()), table.cols());
  for (Eigen::Index t = 0; t < static_cast<Eigen::Index>(ids.size()); ++t) {
    const auto id = static_cast<Eigen::Index>(ids[static_cast<std::size_t>(t)]);
    if (id >= vocab) {
      throw InputError("token id " + std::to_string(id) + " out of range for table of " + std::to_string(vocab) +
                       " rows");
    }
    if (t < valid) out.row(t) = table.row(id);
  }
  return out;
}

}  // namespace

Var gather_rows(Graph& g, const Parameter& table, std::span<const TokenId> ids, Eigen::Index valid) {
  return g.constant(lookup_rows(table.value, ids, valid));
}

Var gather_rows(Graph& g, Parameter& table, std::span<const TokenId> ids, Eigen::Index valid) {
  Mat out = lookup_rows(table.value, ids, valid);
  if (!table.trainable) return g.constant(std::move(out));
  if (table.grad.rows() != table.value.rows() || table.grad.cols() != table.value.cols()) table.zero_grad();
  std::vector<TokenId> rows(ids.begin(), ids.begin() + valid);
  Parameter* target = &table;
  Var anchor = g.marker();
  return g.push(std::move(out), {anchor}, [target, rows = std::move(rows)](Graph& g, std::size_t self) {
    const Mat& dy = g.grad(self);
    for (std::size_t t = 0; t < rows.size(); ++t) {
      if (rows[t] == 0) continue;  // PAD row stays zero
      target->grad.row(rows[t]) += dy.row(static_cast<Eigen::Index>(t));
    }
  });
}

Var sum(Var a) {
  Graph& g = a.graph();
  const std::size_t ai = a.index();
  return g.push(Mat::Constant(1, 1, a.value().sum()), {a}, [ai](Graph& g, std::size_t self) {
    Mat& dx = g.grad_buffer(ai);
    dx.array() += g.grad(self)(0, 0);
  });
}

Var bce(Var p, int label, double eps) {
  require(p.rows() == 1 && p.cols() == 1, "bce: probability must be 1x1");
  Graph& g = p.graph();
  const std::size_t pi = p.index();
  const double raw = p.scalar();
  const double pc = std::clamp(raw, eps, 1.0 - eps);
  const double y = label ? 1.0 : 0.0;
  const double loss = -(y * std::log(pc) + (1.0 - y) * std::log(1.0 - pc));
  const bool clamped = raw < eps || raw > 1.0 - eps;
  return g.push(Mat::Constant(1, 1, loss), {p}, [pi, pc, y, clamped](Graph& g, std::size_t self) {
    if (clamped) return;
    const double d = -y / pc + (1.0 - y) / (1.0 - pc);
    g.accumulate_expr(pi, Mat::Constant(1, 1, d * g.grad(self)(0, 0)));
  });
}

Var softmax_cross_entropy(Var logits, Eigen::Index target) {
  require(logits.rows() == 1, "softmax_cross_entropy: logits must be a row");
  const Eigen::Index targets[1] = {target};
  return softmax_cross_entropy(logits, std::span<const Eigen::Index>(targets, 1));
}

Var softmax_cross_entropy(Var logits, std::span<const Eigen::Index> targets) {
  require(static_cast<Eigen::Index>(targets.size()) == logits.rows(), "softmax_cross_entropy: one target per row");
  Graph& g = logits.graph();
  const std::size_t li = logits.index();
  const Mat& z = logits.value();
  Mat probs(z.rows(), z.cols());
  double loss = 0.0;
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    const Eigen::Index target = targets[static_cast<std::size_t>(r)];
    require(target >= 0 && target < z.cols(), "softmax_cross_entropy: target out of range");
    const double m = z.row(r).maxCoeff();
    probs.row(r) = (z.row(r).array() - m).exp();
    const double total = probs.row(r).sum();
    probs.row(r) /= total;
    loss -= z(r, target) - m - std::log(total);
  }
  std::vector<Eigen::Index> rows(targets.begin(), targets.end());
  return g.push(Mat::Constant(1, 1, loss), {logits},
                [li, rows = std::move(rows), probs = std::move(probs)](Graph& g, std::size_t self) {
                  Mat d = probs;
                  for (std::size_t r = 0; r < rows.size(); ++r) d(static_cast<Eigen::Index>(r), rows[r]) -= 1.0;
                  g.accumulate_expr(li, d * g.grad(self)(0, 0));
                });
}

}  // namespace ad
}  // namespace trolldet
