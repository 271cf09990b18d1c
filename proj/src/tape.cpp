#include "ftlab/tape.hpp"

#include <cmath>
#include <numbers>

#include "ftlab/errors.hpp"

namespace ftlab {

int GradTape::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

Var GradTape::leaf(Matrix value, bool requires_grad) {
  Node n;
  n.op = Op::kLeaf;
  n.val = std::move(value);
  n.requires_grad = requires_grad;
  return {push(std::move(n))};
}

Var GradTape::matmul(Var a, Var b) {
  Node n;
  n.op = Op::kMatMul;
  n.a = a.id;
  n.b = b.id;
  n.val = ftlab::matmul(nodes_[a.id].val, nodes_[b.id].val);
  n.requires_grad = needs(a) || needs(b);
  return {push(std::move(n))};
}

Var GradTape::matmul_nt(Var a, Var b) {
  const Matrix& av = nodes_[a.id].val;
  const Matrix& bv = nodes_[b.id].val;
  if (av.cols != bv.cols) {
    throw ShapeError("matmul_nt: inner dimensions differ, " + av.shape_str() + " * " +
                     bv.shape_str() + "^T");
  }
  Node n;
  n.op = Op::kMatMulNT;
  n.a = a.id;
  n.b = b.id;
  n.val = Matrix(av.rows, bv.rows);
  matmul_nt_acc(n.val, av, bv);
  n.requires_grad = needs(a) || needs(b);
  return {push(std::move(n))};
}

Var GradTape::add(Var a, Var b) {
  const Matrix& av = nodes_[a.id].val;
  const Matrix& bv = nodes_[b.id].val;
  if (!av.same_shape(bv)) {
    throw ShapeError("add: shape mismatch " + av.shape_str() + " + " + bv.shape_str());
  }
  Node n;
  n.op = Op::kAdd;
  n.a = a.id;
  n.b = b.id;
  n.val = av;
  add_inplace(n.val, bv);
  n.requires_grad = needs(a) || needs(b);
  return {push(std::move(n))};
}

Var GradTape::add_n(const std::vector<Var>& xs) {
  if (xs.empty()) throw ShapeError("add_n: empty input list");
  Node n;
  n.op = Op::kAddN;
  n.val = nodes_[xs[0].id].val;
  n.requires_grad = needs(xs[0]);
  n.inputs.push_back(xs[0].id);
  for (std::size_t i = 1; i < xs.size(); ++i) {
    add_inplace(n.val, nodes_[xs[i].id].val);
    n.requires_grad = n.requires_grad || needs(xs[i]);
    n.inputs.push_back(xs[i].id);
  }
  return {push(std::move(n))};
}

Var GradTape::affine(Var a, double mul, double shift) {
  Node n;
  n.op = Op::kAffine;
  n.a = a.id;
  n.c0 = shift;
  n.c1 = mul;
  n.val = nodes_[a.id].val;
  for (auto& x : n.val.data) x = mul * x + shift;
  n.requires_grad = needs(a);
  return {push(std::move(n))};
}

Var GradTape::add_row(Var a, Var row) {
  const Matrix& av = nodes_[a.id].val;
  const Matrix& rv = nodes_[row.id].val;
  if (rv.rows != 1 || rv.cols != av.cols) {
    throw ShapeError("add_row: row must be 1x" + std::to_string(av.cols) + ", got " +
                     rv.shape_str());
  }
  Node n;
  n.op = Op::kAddRow;
  n.a = a.id;
  n.b = row.id;
  n.val = av;
  for (int i = 0; i < av.rows; ++i)
    for (int j = 0; j < av.cols; ++j) n.val.at(i, j) += rv.at(0, j);
  n.requires_grad = needs(a) || needs(row);
  return {push(std::move(n))};
}

Var GradTape::add_const(Var a, Matrix c) {
  const Matrix& av = nodes_[a.id].val;
  if (!av.same_shape(c)) {
    throw ShapeError("add_const: shape mismatch " + av.shape_str() + " + " +
                     c.shape_str());
  }
  Node n;
  n.op = Op::kAddConst;
  n.a = a.id;
  n.val = av;
  add_inplace(n.val, c);
  n.requires_grad = needs(a);
  return {push(std::move(n))};
}

Var GradTape::row_softmax(Var a) {
  Node n;
  n.op = Op::kRowSoftmax;
  n.a = a.id;
  n.val = softmax_rows(nodes_[a.id].val);
  n.requires_grad = needs(a);
  return {push(std::move(n))};
}

Var GradTape::row_log_softmax(Var a) {
  Node n;
  n.op = Op::kRowLogSoftmax;
  n.a = a.id;
  n.val = log_softmax_rows(nodes_[a.id].val);
  n.requires_grad = needs(a);
  return {push(std::move(n))};
}

Var GradTape::gelu(Var a) {
  Node n;
  n.op = Op::kGelu;
  n.a = a.id;
  n.val = nodes_[a.id].val;
  for (auto& x : n.val.data) x = gelu_value(x);
  n.requires_grad = needs(a);
  return {push(std::move(n))};
}

Var GradTape::rms_norm(Var x, Var gain) {
  const Matrix& xv = nodes_[x.id].val;
  const Matrix& gv = nodes_[gain.id].val;
  if (gv.rows != 1 || gv.cols != xv.cols) {
    throw ShapeError("rms_norm: gain must be 1x" + std::to_string(xv.cols) + ", got " +
                     gv.shape_str());
  }
  Node n;
  n.op = Op::kRmsNorm;
  n.a = x.id;
  n.b = gain.id;
  n.val = rms_norm_rows(xv, gv, &n.aux);  // aux holds 1/rms per row
  n.requires_grad = needs(x) || needs(gain);
  return {push(std::move(n))};
}

Var GradTape::gather_rows(Var table, std::vector<int> ids) {
  const Matrix& tv = nodes_[table.id].val;
  Node n;
  n.op = Op::kGatherRows;
  n.a = table.id;
  n.val = Matrix(static_cast<int>(ids.size()), tv.cols);
  for (std::size_t t = 0; t < ids.size(); ++t) {
    const int r = ids[t];
    if (r < 0 || r >= tv.rows) {
      throw ShapeError("gather_rows: index " + std::to_string(r) + " out of " +
                       std::to_string(tv.rows) + " rows");
    }
    for (int j = 0; j < tv.cols; ++j) n.val.at(static_cast<int>(t), j) = tv.at(r, j);
  }
  n.ids = std::move(ids);
  n.requires_grad = needs(table);
  return {push(std::move(n))};
}

Var GradTape::slice_cols(Var a, int start, int len) {
  const Matrix& av = nodes_[a.id].val;
  if (start < 0 || len <= 0 || start + len > av.cols) {
    throw ShapeError("slice_cols: [" + std::to_string(start) + ", " +
                     std::to_string(start + len) + ") out of " + av.shape_str());
  }
  Node n;
  n.op = Op::kSliceCols;
  n.a = a.id;
  n.i0 = start;
  n.i1 = len;
  n.val = Matrix(av.rows, len);
  for (int i = 0; i < av.rows; ++i)
    for (int j = 0; j < len; ++j) n.val.at(i, j) = av.at(i, start + j);
  n.requires_grad = needs(a);
  return {push(std::move(n))};
}

Var GradTape::concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: empty input list");
  int cols = 0;
  const int rows = nodes_[parts[0].id].val.rows;
  for (Var p : parts) {
    const Matrix& pv = nodes_[p.id].val;
    if (pv.rows != rows) {
      throw ShapeError("concat_cols: row mismatch " + pv.shape_str());
    }
    cols += pv.cols;
  }
  Node n;
  n.op = Op::kConcatCols;
  n.val = Matrix(rows, cols);
  int off = 0;
  for (Var p : parts) {
    const Matrix& pv = nodes_[p.id].val;
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < pv.cols; ++j) n.val.at(i, off + j) = pv.at(i, j);
    off += pv.cols;
    n.inputs.push_back(p.id);
    n.requires_grad = n.requires_grad || needs(p);
  }
  return {push(std::move(n))};
}

Var GradTape::select_sum(Var a, std::vector<std::pair<int, int>> cells) {
  const Matrix& av = nodes_[a.id].val;
  Node n;
  n.op = Op::kSelectSum;
  n.a = a.id;
  n.val = Matrix(1, 1);
  double acc = 0.0;
  for (const auto& [r, c] : cells) {
    if (r < 0 || r >= av.rows || c < 0 || c >= av.cols) {
      throw ShapeError("select_sum: cell (" + std::to_string(r) + ", " +
                       std::to_string(c) + ") out of " + av.shape_str());
    }
    acc += av.at(r, c);
  }
  n.val.at(0, 0) = acc;
  n.cells = std::move(cells);
  n.requires_grad = needs(a);
  return {push(std::move(n))};
}

Var GradTape::softplus(Var a) {
  Node n;
  n.op = Op::kSoftplus;
  n.a = a.id;
  n.val = nodes_[a.id].val;
  for (auto& x : n.val.data) x = softplus_value(x);
  n.requires_grad = needs(a);
  return {push(std::move(n))};
}

double GradTape::scalar(Var v) const {
  const Matrix& m = nodes_[v.id].val;
  if (m.rows != 1 || m.cols != 1) {
    throw ShapeError("scalar: node is " + m.shape_str() + ", expected 1x1");
  }
  return m.data[0];
}

const Matrix& GradTape::grad(Var v) const {
  const Node& n = nodes_[v.id];
  if (n.grd.size() == 0) {
    // Never touched by backward: exact zero of the right shape.
    const_cast<Node&>(n).grd = Matrix(n.val.rows, n.val.cols);
  }
  return n.grd;
}

Matrix& GradTape::grad_buf(int id) {
  Node& n = nodes_[id];
  if (n.grd.size() == 0) n.grd = Matrix(n.val.rows, n.val.cols);
  return n.grd;
}

void GradTape::backward(Var loss) {
  const Matrix& lv = nodes_[loss.id].val;
  if (lv.rows != 1 || lv.cols != 1) {
    throw ShapeError("backward: loss must be 1x1, got " + lv.shape_str());
  }
  grad_buf(loss.id).at(0, 0) = 1.0;
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.requires_grad || n.grd.size() == 0) continue;
    backward_node(id);
  }
}

void GradTape::backward_node(int id) {
  Node& n = nodes_[id];
  const Matrix& g = n.grd;
  switch (n.op) {
    case Op::kLeaf:
      break;
    case Op::kMatMul: {
      if (needs({n.a})) matmul_nt_acc(grad_buf(n.a), g, nodes_[n.b].val);
      if (needs({n.b})) matmul_tn_acc(grad_buf(n.b), nodes_[n.a].val, g);
      break;
    }
    case Op::kMatMulNT: {
      if (needs({n.a})) matmul_acc(grad_buf(n.a), g, nodes_[n.b].val);
      if (needs({n.b})) matmul_tn_acc(grad_buf(n.b), g, nodes_[n.a].val);
      break;
    }
    case Op::kAdd: {
      if (needs({n.a})) add_inplace(grad_buf(n.a), g);
      if (needs({n.b})) add_inplace(grad_buf(n.b), g);
      break;
    }
    case Op::kAddN: {
      for (int in : n.inputs) {
        if (nodes_[in].requires_grad) add_inplace(grad_buf(in), g);
      }
      break;
    }
    case Op::kAffine: {
      if (needs({n.a})) axpy(grad_buf(n.a), n.c1, g);
      break;
    }
    case Op::kAddRow: {
      if (needs({n.a})) add_inplace(grad_buf(n.a), g);
      if (needs({n.b})) {
        Matrix& rg = grad_buf(n.b);
        for (int i = 0; i < g.rows; ++i)
          for (int j = 0; j < g.cols; ++j) rg.at(0, j) += g.at(i, j);
      }
      break;
    }
    case Op::kAddConst: {
      if (needs({n.a})) add_inplace(grad_buf(n.a), g);
      break;
    }
    case Op::kRowSoftmax: {
      if (!needs({n.a})) break;
      Matrix& xg = grad_buf(n.a);
      const Matrix& y = n.val;
      for (int i = 0; i < y.rows; ++i) {
        double dot = 0.0;
        for (int j = 0; j < y.cols; ++j) dot += g.at(i, j) * y.at(i, j);
        for (int j = 0; j < y.cols; ++j)
          xg.at(i, j) += y.at(i, j) * (g.at(i, j) - dot);
      }
      break;
    }
    case Op::kRowLogSoftmax: {
      if (!needs({n.a})) break;
      Matrix& xg = grad_buf(n.a);
      const Matrix& y = n.val;
      for (int i = 0; i < y.rows; ++i) {
        double gsum = 0.0;
        for (int j = 0; j < y.cols; ++j) gsum += g.at(i, j);
        for (int j = 0; j < y.cols; ++j)
          xg.at(i, j) += g.at(i, j) - std::exp(y.at(i, j)) * gsum;
      }
      break;
    }
    case Op::kGelu: {
      if (!needs({n.a})) break;
      Matrix& xg = grad_buf(n.a);
      const Matrix& x = nodes_[n.a].val;
      for (std::size_t i = 0; i < x.data.size(); ++i)
        xg.data[i] += g.data[i] * gelu_slope(x.data[i]);
      break;
    }
    case Op::kRmsNorm: {
      const Matrix& x = nodes_[n.a].val;
      const Matrix& gain = nodes_[n.b].val;
      const int d = x.cols;
      for (int i = 0; i < x.rows; ++i) {
        const double inv = n.aux.at(i, 0);
        if (needs({n.a})) {
          Matrix& xg = grad_buf(n.a);
          double dot = 0.0;
          for (int j = 0; j < d; ++j) dot += g.at(i, j) * gain.at(0, j) * x.at(i, j);
          const double scale = dot * inv * inv * inv / d;
          for (int j = 0; j < d; ++j)
            xg.at(i, j) += g.at(i, j) * gain.at(0, j) * inv - x.at(i, j) * scale;
        }
        if (needs({n.b})) {
          Matrix& gg = grad_buf(n.b);
          for (int j = 0; j < d; ++j) gg.at(0, j) += g.at(i, j) * x.at(i, j) * inv;
        }
      }
      break;
    }
    case Op::kGatherRows: {
      if (!needs({n.a})) break;
      Matrix& tg = grad_buf(n.a);
      for (std::size_t t = 0; t < n.ids.size(); ++t)
        for (int j = 0; j < g.cols; ++j)
          tg.at(n.ids[t], j) += g.at(static_cast<int>(t), j);
      break;
    }
    case Op::kSliceCols: {
      if (!needs({n.a})) break;
      Matrix& xg = grad_buf(n.a);
      for (int i = 0; i < g.rows; ++i)
        for (int j = 0; j < g.cols; ++j) xg.at(i, n.i0 + j) += g.at(i, j);
      break;
    }
    case Op::kConcatCols: {
      int off = 0;
      for (int in : n.inputs) {
        const int w = nodes_[in].val.cols;
        if (nodes_[in].requires_grad) {
          Matrix& pg = grad_buf(in);
          for (int i = 0; i < g.rows; ++i)
            for (int j = 0; j < w; ++j) pg.at(i, j) += g.at(i, off + j);
        }
        off += w;
      }
      break;
    }
    case Op::kSelectSum: {
      if (!needs({n.a})) break;
      Matrix& xg = grad_buf(n.a);
      const double gv = g.at(0, 0);
      for (const auto& [r, c] : n.cells) xg.at(r, c) += gv;
      break;
    }
    case Op::kSoftplus: {
      if (!needs({n.a})) break;
      Matrix& xg = grad_buf(n.a);
      const Matrix& x = nodes_[n.a].val;
      for (std::size_t i = 0; i < x.data.size(); ++i)
        xg.data[i] += g.data[i] * sigmoid_value(x.data[i]);
      break;
    }
  }
}

void GradTape::clear() { nodes_.clear(); }

}  // namespace ftlab
