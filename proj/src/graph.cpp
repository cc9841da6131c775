#include "copynmt/graph.hpp"

#include <cmath>

namespace copynmt {

Graph::Expr Graph::push(Node n) {
  nodes_.push_back(std::move(n));
  return Expr{int(nodes_.size()) - 1};
}

Mat& Graph::grad_of(int i) {
  Node& n = nodes_[i];
  if (n.grad.size() == 0) n.grad = Mat::Zero(vof(i).rows(), vof(i).cols());
  return n.grad;
}

Graph::Expr Graph::input(Mat v) {
  Node n;
  n.op = Op::kInput;
  n.val = std::move(v);
  return push(std::move(n));
}

Graph::Expr Graph::input_scalar(double v) {
  Mat m(1, 1);
  m(0, 0) = v;
  return input(std::move(m));
}

Graph::Expr Graph::param(const Mat& value, Mat* grad) {
  Node n;
  n.op = Op::kParam;
  n.pval = &value;
  n.gsink = grad;
  n.need_grad = grad != nullptr;
  return push(std::move(n));
}

Graph::Expr Graph::matmul(Expr a, Expr b) {
  Node n;
  n.op = Op::kMatMul;
  n.a = a.i;
  n.b = b.i;
  n.val = vof(a.i) * vof(b.i);
  n.need_grad = needs(a) || needs(b);
  return push(std::move(n));
}

Graph::Expr Graph::mat_t_vec(Expr a, Expr x) {
  Node n;
  n.op = Op::kMatTVec;
  n.a = a.i;
  n.b = x.i;
  n.val = vof(a.i).transpose() * vof(x.i);
  n.need_grad = needs(a) || needs(x);
  return push(std::move(n));
}

Graph::Expr Graph::add(Expr a, Expr b) {
  Node n;
  n.op = Op::kAdd;
  n.a = a.i;
  n.b = b.i;
  n.val = vof(a.i) + vof(b.i);
  n.need_grad = needs(a) || needs(b);
  return push(std::move(n));
}

Graph::Expr Graph::cmul(Expr a, Expr b) {
  Node n;
  n.op = Op::kCMul;
  n.a = a.i;
  n.b = b.i;
  n.val = vof(a.i).cwiseProduct(vof(b.i));
  n.need_grad = needs(a) || needs(b);
  return push(std::move(n));
}

Graph::Expr Graph::scalar_mul(Expr s, Expr a) {
  Node n;
  n.op = Op::kScalarMul;
  n.a = s.i;
  n.b = a.i;
  n.val = vof(s.i)(0, 0) * vof(a.i);
  n.need_grad = needs(s) || needs(a);
  return push(std::move(n));
}

Graph::Expr Graph::one_minus(Expr s) {
  Node n;
  n.op = Op::kOneMinus;
  n.a = s.i;
  n.val = (1.0 - vof(s.i).array()).matrix();
  n.need_grad = needs(s);
  return push(std::move(n));
}

Graph::Expr Graph::scale(Expr a, double c) {
  Node n;
  n.op = Op::kScale;
  n.a = a.i;
  n.c = c;
  n.val = c * vof(a.i);
  n.need_grad = needs(a);
  return push(std::move(n));
}

Graph::Expr Graph::sigmoid(Expr a) {
  Node n;
  n.op = Op::kSigmoid;
  n.a = a.i;
  n.val = (1.0 / (1.0 + (-vof(a.i).array()).exp())).matrix();
  n.need_grad = needs(a);
  return push(std::move(n));
}

Graph::Expr Graph::tanh(Expr a) {
  Node n;
  n.op = Op::kTanh;
  n.a = a.i;
  n.val = vof(a.i).array().tanh().matrix();
  n.need_grad = needs(a);
  return push(std::move(n));
}

Graph::Expr Graph::softmax(Expr a) {
  Node n;
  n.op = Op::kSoftmax;
  n.a = a.i;
  const Mat& x = vof(a.i);
  double mx = x.maxCoeff();
  Mat e = (x.array() - mx).exp().matrix();
  n.val = e / e.sum();
  n.need_grad = needs(a);
  return push(std::move(n));
}

Graph::Expr Graph::slice_rows(Expr a, int offset, int len) {
  Node n;
  n.op = Op::kSlice;
  n.a = a.i;
  n.p0 = offset;
  n.p1 = len;
  n.val = vof(a.i).middleRows(offset, len);
  n.need_grad = needs(a);
  return push(std::move(n));
}

Graph::Expr Graph::vcat(Expr a, Expr b) {
  Node n;
  n.op = Op::kVCat;
  n.a = a.i;
  n.b = b.i;
  const Mat& u = vof(a.i);
  const Mat& v = vof(b.i);
  Mat out(u.rows() + v.rows(), u.cols());
  out.topRows(u.rows()) = u;
  out.bottomRows(v.rows()) = v;
  n.val = std::move(out);
  n.need_grad = needs(a) || needs(b);
  return push(std::move(n));
}

Graph::Expr Graph::concat_cols(const std::vector<Expr>& cols) {
  Node n;
  n.op = Op::kConcatCols;
  std::vector<int> ids;
  ids.reserve(cols.size());
  for (Expr e : cols) {
    ids.push_back(e.i);
    n.need_grad = n.need_grad || needs(e);
  }
  Mat out(vof(ids[0]).rows(), Eigen::Index(ids.size()));
  for (std::size_t j = 0; j < ids.size(); ++j) out.col(Eigen::Index(j)) = vof(ids[j]);
  n.val = std::move(out);
  n.p0 = int(id_lists_.size());
  id_lists_.push_back(std::move(ids));
  return push(std::move(n));
}

Graph::Expr Graph::broadcast_add_col(Expr m, Expr v) {
  Node n;
  n.op = Op::kBroadcastAddCol;
  n.a = m.i;
  n.b = v.i;
  n.val = vof(m.i).colwise() + Vec(vof(v.i).col(0));
  n.need_grad = needs(m) || needs(v);
  return push(std::move(n));
}

Graph::Expr Graph::row_lookup(Expr m, int row) {
  Node n;
  n.op = Op::kRowLookup;
  n.a = m.i;
  n.p0 = row;
  n.val = vof(m.i).row(row).transpose();
  n.need_grad = needs(m);
  return push(std::move(n));
}

Graph::Expr Graph::scatter_by_ids(Expr a, const std::vector<int>& ids, int size) {
  Node n;
  n.op = Op::kScatter;
  n.a = a.i;
  n.p1 = size;
  Mat out = Mat::Zero(size, 1);
  const Mat& w = vof(a.i);
  for (std::size_t j = 0; j < ids.size(); ++j) out(ids[j], 0) += w(Eigen::Index(j), 0);
  n.val = std::move(out);
  n.p0 = int(id_lists_.size());
  id_lists_.push_back(ids);
  n.need_grad = needs(a);
  return push(std::move(n));
}

Graph::Expr Graph::log_pick(Expr a, int idx, double floor) {
  Node n;
  n.op = Op::kLogPick;
  n.a = a.i;
  n.p0 = idx;
  double x = vof(a.i)(idx, 0);
  if (x < floor) {
    x = floor;
    n.p1 = 1;  // clamped; gradient suppressed
    log_clamp_hit_ = true;
  }
  Mat m(1, 1);
  m(0, 0) = std::log(x);
  n.val = std::move(m);
  n.need_grad = needs(a);
  return push(std::move(n));
}

void Graph::backward(Expr loss, double seed) {
  grad_of(loss.i)(0, 0) += seed;
  for (int i = int(nodes_.size()) - 1; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.need_grad || n.grad.size() == 0) continue;
    const Mat& g = n.grad;
    switch (n.op) {
      case Op::kInput:
        break;
      case Op::kParam:
        if (n.gsink) {
          if (n.gsink->size() == 0) *n.gsink = Mat::Zero(n.pval->rows(), n.pval->cols());
          *n.gsink += g;
        }
        break;
      case Op::kMatMul:
        if (needs(Expr{n.a})) grad_of(n.a) += g * vof(n.b).transpose();
        if (needs(Expr{n.b})) grad_of(n.b) += vof(n.a).transpose() * g;
        break;
      case Op::kMatTVec:
        if (needs(Expr{n.a})) grad_of(n.a) += vof(n.b) * g.transpose();
        if (needs(Expr{n.b})) grad_of(n.b) += vof(n.a) * g;
        break;
      case Op::kAdd:
        if (needs(Expr{n.a})) grad_of(n.a) += g;
        if (needs(Expr{n.b})) grad_of(n.b) += g;
        break;
      case Op::kCMul:
        if (needs(Expr{n.a})) grad_of(n.a) += g.cwiseProduct(vof(n.b));
        if (needs(Expr{n.b})) grad_of(n.b) += g.cwiseProduct(vof(n.a));
        break;
      case Op::kScalarMul:
        if (needs(Expr{n.a})) grad_of(n.a)(0, 0) += g.cwiseProduct(vof(n.b)).sum();
        if (needs(Expr{n.b})) grad_of(n.b) += vof(n.a)(0, 0) * g;
        break;
      case Op::kOneMinus:
        if (needs(Expr{n.a})) grad_of(n.a) -= g;
        break;
      case Op::kScale:
        if (needs(Expr{n.a})) grad_of(n.a) += n.c * g;
        break;
      case Op::kSigmoid:
        if (needs(Expr{n.a}))
          grad_of(n.a) += g.cwiseProduct(n.val.cwiseProduct((1.0 - n.val.array()).matrix()));
        break;
      case Op::kTanh:
        if (needs(Expr{n.a}))
          grad_of(n.a) += g.cwiseProduct((1.0 - n.val.array().square()).matrix());
        break;
      case Op::kSoftmax:
        if (needs(Expr{n.a})) {
          double dot = g.cwiseProduct(n.val).sum();
          grad_of(n.a) += n.val.cwiseProduct((g.array() - dot).matrix());
        }
        break;
      case Op::kSlice:
        if (needs(Expr{n.a})) grad_of(n.a).middleRows(n.p0, n.p1) += g;
        break;
      case Op::kVCat:
        if (needs(Expr{n.a})) grad_of(n.a) += g.topRows(vof(n.a).rows());
        if (needs(Expr{n.b})) grad_of(n.b) += g.bottomRows(vof(n.b).rows());
        break;
      case Op::kConcatCols: {
        const auto& ids = id_lists_[n.p0];
        for (std::size_t j = 0; j < ids.size(); ++j)
          if (needs(Expr{ids[j]})) grad_of(ids[j]) += g.col(Eigen::Index(j));
        break;
      }
      case Op::kBroadcastAddCol:
        if (needs(Expr{n.a})) grad_of(n.a) += g;
        if (needs(Expr{n.b})) grad_of(n.b) += g.rowwise().sum();
        break;
      case Op::kRowLookup:
        if (needs(Expr{n.a})) grad_of(n.a).row(n.p0) += g.transpose();
        break;
      case Op::kScatter:
        if (needs(Expr{n.a})) {
          const auto& ids = id_lists_[n.p0];
          Mat& ga = grad_of(n.a);
          for (std::size_t j = 0; j < ids.size(); ++j) ga(Eigen::Index(j), 0) += g(ids[j], 0);
        }
        break;
      case Op::kLogPick:
        if (needs(Expr{n.a}) && n.p1 == 0)
          grad_of(n.a)(n.p0, 0) += g(0, 0) / vof(n.a)(n.p0, 0);
        break;
    }
  }
}

}  // namespace copynmt
