#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "ftlab/matrix.hpp"

namespace ftlab {

/// Handle to a node on a GradTape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Reverse-mode tape over matrix-valued primitives. A forward pass records one
/// node per primitive with the inputs it needs for the adjoint; backward()
/// replays adjoints in reverse creation order. Leaves that never participate
/// in the loss keep an exact zero gradient.
class GradTape {
 public:
  Var leaf(Matrix value, bool requires_grad);

  Var matmul(Var a, Var b);
  Var matmul_nt(Var a, Var b);  // a * b^T
  Var add(Var a, Var b);
  Var add_n(const std::vector<Var>& xs);
  Var affine(Var a, double mul, double shift);  // mul * x + shift, elementwise
  Var add_row(Var a, Var row);                  // broadcast a 1 x d row over rows
  Var add_const(Var a, Matrix c);               // constant offset (e.g. causal mask)
  Var row_softmax(Var a);
  Var row_log_softmax(Var a);
  Var gelu(Var a);
  Var rms_norm(Var x, Var gain);  // gain is 1 x d
  Var gather_rows(Var table, std::vector<int> ids);
  Var slice_cols(Var a, int start, int len);
  Var concat_cols(const std::vector<Var>& parts);
  Var select_sum(Var a, std::vector<std::pair<int, int>> cells);  // -> 1x1
  Var softplus(Var a);

  const Matrix& value(Var v) const { return nodes_[v.id].val; }
  double scalar(Var v) const;

  /// Gradient of the last backward()'s loss w.r.t. node v. Zero matrix for
  /// non-participating leaves.
  const Matrix& grad(Var v) const;

  /// Accumulate adjoints from a 1x1 loss node back to every leaf.
  void backward(Var loss);

  void clear();
  std::size_t size() const { return nodes_.size(); }

 private:
  enum class Op : std::uint8_t {
    kLeaf,
    kMatMul,
    kMatMulNT,
    kAdd,
    kAddN,
    kAffine,
    kAddRow,
    kAddConst,
    kRowSoftmax,
    kRowLogSoftmax,
    kGelu,
    kRmsNorm,
    kGatherRows,
    kSliceCols,
    kConcatCols,
    kSelectSum,
    kSoftplus,
  };

  struct Node {
    Op op;
    int a = -1;
    int b = -1;
    std::vector<int> inputs;  // kAddN / kConcatCols
    Matrix val;
    Matrix grd;
    bool requires_grad = false;
    double c0 = 0.0;
    double c1 = 0.0;
    int i0 = 0;
    int i1 = 0;
    std::vector<int> ids;
    std::vector<std::pair<int, int>> cells;
    Matrix aux;  // saved for backward (inv-rms column, mask, ...)
  };

  int push(Node n);
  bool needs(Var v) const { return nodes_[v.id].requires_grad; }
  Matrix& grad_buf(int id);
  void backward_node(int id);

  std::vector<Node> nodes_;
  Matrix zero_;  // returned for grads never touched
};

}  // namespace ftlab
