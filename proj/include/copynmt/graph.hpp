#pragma once

#include <vector>

#include "copynmt/common.hpp"

namespace copynmt {

// Tape-based reverse-mode autodiff over dense Eigen matrices. Vectors are
// n x 1 matrices. One Graph per sentence (training) or per decode step
// (evaluation); nodes are appended during the forward build and walked in
// reverse by backward(). Parameter leaves accumulate into external gradient
// storage; leaves with a null sink behave as constants, so an evaluation
// graph never allocates gradients.
class Graph {
 public:
  struct Expr {
    int i = -1;
    bool valid() const { return i >= 0; }
  };

  Expr input(Mat v);
  Expr input_scalar(double v);
  // Leaf bound to a parameter tensor, held by reference (the tensor must
  // outlive the graph); grad (may be null) receives d loss / d value.
  Expr param(const Mat& value, Mat* grad);

  Expr matmul(Expr a, Expr b);            // A * B
  Expr mat_t_vec(Expr a, Expr x);         // A^T * x
  Expr add(Expr a, Expr b);               // same shape
  Expr cmul(Expr a, Expr b);              // elementwise
  Expr scalar_mul(Expr s, Expr a);        // s: 1x1
  Expr one_minus(Expr s);                 // 1 - s, elementwise
  Expr scale(Expr a, double c);           // c * a, c constant
  Expr sigmoid(Expr a);
  Expr tanh(Expr a);
  Expr softmax(Expr a);                   // column vector
  Expr slice_rows(Expr a, int offset, int len);
  Expr vcat(Expr a, Expr b);              // [a; b]
  Expr concat_cols(const std::vector<Expr>& cols);
  Expr broadcast_add_col(Expr m, Expr v); // m + v replicated over columns
  Expr row_lookup(Expr m, int row);       // m.row(row)^T as column vector
  // out[v] = sum_{j: ids[j]==v} a[j]; out has `size` rows.
  Expr scatter_by_ids(Expr a, const std::vector<int>& ids, int size);
  // log(max(a[idx], floor)); clamped entries contribute zero gradient.
  Expr log_pick(Expr a, int idx, double floor = 1e-12);

  const Mat& value(Expr e) const { return vof(e.i); }
  double scalar(Expr e) const { return vof(e.i)(0, 0); }

  // Reverse pass from a 1x1 loss node; seed is d loss / d node.
  void backward(Expr loss, double seed = 1.0);

  std::size_t size() const { return nodes_.size(); }
  bool log_clamp_hit() const { return log_clamp_hit_; }

 private:
  enum class Op : unsigned char {
    kInput, kParam, kMatMul, kMatTVec, kAdd, kCMul, kScalarMul, kOneMinus,
    kScale, kSigmoid, kTanh, kSoftmax, kSlice, kVCat, kConcatCols,
    kBroadcastAddCol, kRowLookup, kScatter, kLogPick
  };
  struct Node {
    Op op;
    int a = -1, b = -1;
    int p0 = 0, p1 = 0;
    double c = 0.0;
    Mat val;                     // computed nodes; empty for kParam
    const Mat* pval = nullptr;   // kParam only, referenced storage
    Mat grad;                    // empty until touched by backward
    Mat* gsink = nullptr;
    bool need_grad = false;
  };

  Expr push(Node n);
  const Mat& vof(int i) const { return nodes_[std::size_t(i)].pval ? *nodes_[std::size_t(i)].pval : nodes_[std::size_t(i)].val; }
  bool needs(Expr e) const { return nodes_[e.i].need_grad; }
  Mat& grad_of(int i);

  std::vector<Node> nodes_;
  std::vector<std::vector<int>> id_lists_;
  bool log_clamp_hit_ = false;
};

}  // namespace copynmt
