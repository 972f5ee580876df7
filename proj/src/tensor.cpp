#include "acssm/tensor.hpp"

#include <cmath>
#include <unordered_set>

namespace acssm {

namespace {

std::shared_ptr<TensorNode> make_node(MatrixXd val,
                                      std::vector<std::shared_ptr<TensorNode>> parents,
                                      std::function<void(TensorNode&)> fn) {
  auto node = std::make_shared<TensorNode>();
  node->val = std::move(val);
  node->parents = std::move(parents);
  for (const auto& p : node->parents)
    if (p->needs_grad) node->needs_grad = true;
  if (node->needs_grad) node->backward_fn = std::move(fn);
  return node;
}

// broadcast-aware gradient reduction for a (possibly 1 x m or 1 x 1) operand
MatrixXd reduce_to(const MatrixXd& g, const MatrixXd& target) {
  if (g.rows() == target.rows() && g.cols() == target.cols()) return g;
  if (target.rows() == 1 && target.cols() == 1) {
    MatrixXd out(1, 1);
    out(0, 0) = g.sum();
    return out;
  }
  if (target.rows() == 1 && target.cols() == g.cols()) return g.colwise().sum();
  throw DomainError("tensor: incompatible gradient broadcast");
}

void check_broadcast(const Tensor& a, const Tensor& b) {
  const bool same = a.rows() == b.rows() && a.cols() == b.cols();
  const bool row = b.rows() == 1 && b.cols() == a.cols();
  const bool scalar = b.rows() == 1 && b.cols() == 1;
  if (!same && !row && !scalar) throw DomainError("tensor: shape mismatch");
}

MatrixXd broadcast(const MatrixXd& b, int rows, int cols) {
  if (b.rows() == rows && b.cols() == cols) return b;
  if (b.rows() == 1 && b.cols() == 1) return MatrixXd::Constant(rows, cols, b(0, 0));
  return b.replicate(rows, 1);
}

Tensor unary(const Tensor& a, MatrixXd val, std::function<MatrixXd(const TensorNode&)> dval) {
  auto an = a.node();
  return Tensor(make_node(std::move(val), {an}, [an, dval](TensorNode& n) {
    an->accumulate(dval(n));
  }));
}

}  // namespace

void TensorNode::accumulate(const MatrixXd& g) {
  if (!needs_grad) return;
  if (grad.size() == 0) grad.setZero(val.rows(), val.cols());
  grad += g;
}

Tensor::Tensor(const MatrixXd& value, bool requires_grad) {
  node_ = std::make_shared<TensorNode>();
  node_->val = value;
  node_->requires_grad = requires_grad;
  node_->needs_grad = requires_grad;
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.rows() != 1 || loss.cols() != 1)
    throw DomainError("backward: loss must be a defined 1x1 tensor");
  // iterative post-order DFS over parents
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> visited;
  std::vector<std::pair<TensorNode*, size_t>> stack;
  stack.push_back({loss.node().get(), 0});
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorNode* p = node->parents[next++].get();
      if (p->needs_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  loss.node()->grad = MatrixXd::Ones(1, 1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* node = *it;
    if (node->backward_fn && node->grad.size() != 0) node->backward_fn(*node);
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) throw DomainError("matmul: inner dimension mismatch");
  auto an = a.node(), bn = b.node();
  return Tensor(make_node(an->val * bn->val, {an, bn}, [an, bn](TensorNode& n) {
    an->accumulate(n.grad * bn->val.transpose());
    bn->accumulate(an->val.transpose() * n.grad);
  }));
}

Tensor transpose(const Tensor& a) {
  auto an = a.node();
  return Tensor(make_node(an->val.transpose(), {an}, [an](TensorNode& n) {
    an->accumulate(n.grad.transpose());
  }));
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_broadcast(a, b);
  auto an = a.node(), bn = b.node();
  MatrixXd v = an->val + broadcast(bn->val, a.rows(), a.cols());
  return Tensor(make_node(std::move(v), {an, bn}, [an, bn](TensorNode& n) {
    an->accumulate(n.grad);
    bn->accumulate(reduce_to(n.grad, bn->val));
  }));
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_broadcast(a, b);
  auto an = a.node(), bn = b.node();
  MatrixXd v = an->val - broadcast(bn->val, a.rows(), a.cols());
  return Tensor(make_node(std::move(v), {an, bn}, [an, bn](TensorNode& n) {
    an->accumulate(n.grad);
    bn->accumulate(-reduce_to(n.grad, bn->val));
  }));
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_broadcast(a, b);
  auto an = a.node(), bn = b.node();
  MatrixXd bb = broadcast(bn->val, a.rows(), a.cols());
  return Tensor(make_node(an->val.cwiseProduct(bb), {an, bn}, [an, bn](TensorNode& n) {
    const MatrixXd bb2 = broadcast(bn->val, static_cast<int>(n.val.rows()),
                                   static_cast<int>(n.val.cols()));
    an->accumulate(n.grad.cwiseProduct(bb2));
    bn->accumulate(reduce_to(n.grad.cwiseProduct(an->val), bn->val));
  }));
}

Tensor divide(const Tensor& a, const Tensor& b) {
  check_broadcast(a, b);
  auto an = a.node(), bn = b.node();
  MatrixXd bb = broadcast(bn->val, a.rows(), a.cols());
  return Tensor(make_node(an->val.cwiseQuotient(bb), {an, bn}, [an, bn](TensorNode& n) {
    const MatrixXd bb2 = broadcast(bn->val, static_cast<int>(n.val.rows()),
                                   static_cast<int>(n.val.cols()));
    an->accumulate(n.grad.cwiseQuotient(bb2));
    bn->accumulate(reduce_to(
        -n.grad.cwiseProduct(n.val).cwiseQuotient(bb2), bn->val));
  }));
}

Tensor scale(const Tensor& a, double s) {
  return unary(a, a.val() * s, [s](const TensorNode& n) -> MatrixXd { return n.grad * s; });
}

Tensor add_const(const Tensor& a, double s) {
  return unary(a, a.val().array() + s, [](const TensorNode& n) -> MatrixXd { return n.grad; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor exp_t(const Tensor& a) {
  return unary(a, a.val().array().exp(),
               [](const TensorNode& n) -> MatrixXd { return n.grad.cwiseProduct(n.val); });
}

Tensor log_t(const Tensor& a) {
  auto an = a.node();
  return unary(a, a.val().array().log(), [an](const TensorNode& n) -> MatrixXd {
    return n.grad.cwiseQuotient(an->val);
  });
}

Tensor sqrt_t(const Tensor& a) {
  return unary(a, a.val().array().sqrt(), [](const TensorNode& n) -> MatrixXd {
    return (n.grad.array() * 0.5 / n.val.array()).matrix();
  });
}

Tensor tanh_t(const Tensor& a) {
  return unary(a, a.val().array().tanh(), [](const TensorNode& n) -> MatrixXd {
    return (n.grad.array() * (1.0 - n.val.array().square())).matrix();
  });
}

Tensor sigmoid_t(const Tensor& a) {
  MatrixXd v = (1.0 / (1.0 + (-a.val().array()).exp())).matrix();
  return unary(a, std::move(v), [](const TensorNode& n) -> MatrixXd {
    return (n.grad.array() * n.val.array() * (1.0 - n.val.array())).matrix();
  });
}

Tensor relu_t(const Tensor& a) {
  auto an = a.node();
  return unary(a, a.val().cwiseMax(0.0), [an](const TensorNode& n) -> MatrixXd {
    return (n.grad.array() * (an->val.array() > 0.0).cast<double>()).matrix();
  });
}

Tensor gelu_t(const Tensor& a) {
  auto an = a.node();
  const double inv_sqrt2 = 0.7071067811865475244;
  const double inv_sqrt2pi = 0.3989422804014326779;
  auto cdf = [inv_sqrt2](double x) { return 0.5 * (1.0 + std::erf(x * inv_sqrt2)); };
  MatrixXd v = an->val.unaryExpr([&](double x) { return x * cdf(x); });
  return unary(a, std::move(v), [an, cdf, inv_sqrt2pi](const TensorNode& n) -> MatrixXd {
    MatrixXd d = an->val.unaryExpr([&](double x) {
      return cdf(x) + x * inv_sqrt2pi * std::exp(-0.5 * x * x);
    });
    return n.grad.cwiseProduct(d);
  });
}

Tensor square_t(const Tensor& a) {
  auto an = a.node();
  return unary(a, a.val().array().square(), [an](const TensorNode& n) -> MatrixXd {
    return (2.0 * n.grad.array() * an->val.array()).matrix();
  });
}

Tensor softmax_rows(const Tensor& logits, const MatrixXd& additive_mask) {
  auto an = logits.node();
  MatrixXd z = an->val;
  if (additive_mask.size() != 0) {
    if (additive_mask.rows() != z.rows() || additive_mask.cols() != z.cols())
      throw DomainError("softmax_rows: mask shape mismatch");
    z += additive_mask;
  }
  MatrixXd y(z.rows(), z.cols());
  for (int r = 0; r < z.rows(); ++r) {
    const double m = z.row(r).maxCoeff();
    Eigen::ArrayXd e = (z.row(r).array() - m).exp();
    y.row(r) = (e / e.sum()).matrix();
  }
  return Tensor(make_node(std::move(y), {an}, [an](TensorNode& n) {
    MatrixXd g(n.val.rows(), n.val.cols());
    for (int r = 0; r < n.val.rows(); ++r) {
      const double dot = n.grad.row(r).dot(n.val.row(r));
      g.row(r) = (n.val.row(r).array() * (n.grad.row(r).array() - dot)).matrix();
    }
    an->accumulate(g);
  }));
}

Tensor layernorm_rows(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                      double eps) {
  if (gamma.rows() != 1 || gamma.cols() != x.cols() || beta.rows() != 1 ||
      beta.cols() != x.cols())
    throw DomainError("layernorm_rows: gamma/beta must be 1 x cols");
  auto xn = x.node(), gn = gamma.node(), bn = beta.node();
  const int m = x.cols();
  MatrixXd xhat(x.rows(), m);
  Eigen::ArrayXd inv_std(x.rows());
  for (int r = 0; r < x.rows(); ++r) {
    const double mu = xn->val.row(r).mean();
    const double var = (xn->val.row(r).array() - mu).square().mean();
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = ((xn->val.row(r).array() - mu) * inv_std[r]).matrix();
  }
  MatrixXd v = (xhat.array().rowwise() * gn->val.row(0).array()).matrix();
  v.rowwise() += bn->val.row(0);
  auto xh = std::make_shared<MatrixXd>(std::move(xhat));
  auto is = std::make_shared<Eigen::ArrayXd>(std::move(inv_std));
  return Tensor(make_node(std::move(v), {xn, gn, bn}, [xn, gn, bn, xh, is, m](TensorNode& n) {
    gn->accumulate(n.grad.cwiseProduct(*xh).colwise().sum());
    bn->accumulate(n.grad.colwise().sum());
    MatrixXd gx(n.val.rows(), m);
    for (int r = 0; r < n.val.rows(); ++r) {
      const Eigen::ArrayXd dy = (n.grad.row(r).array() * gn->val.row(0).array()).transpose();
      const Eigen::ArrayXd xr = xh->row(r).transpose().array();
      const double mean_dy = dy.mean();
      const double mean_dyx = (dy * xr).mean();
      gx.row(r) = (((dy - mean_dy - xr * mean_dyx) * (*is)[r]).matrix()).transpose();
    }
    xn->accumulate(gx);
  }));
}

Tensor sum(const Tensor& a) {
  auto an = a.node();
  MatrixXd v(1, 1);
  v(0, 0) = an->val.sum();
  return Tensor(make_node(std::move(v), {an}, [an](TensorNode& n) {
    an->accumulate(MatrixXd::Constant(an->val.rows(), an->val.cols(), n.grad(0, 0)));
  }));
}

Tensor sum_cols(const Tensor& a) {
  auto an = a.node();
  return Tensor(make_node(an->val.rowwise().sum(), {an}, [an](TensorNode& n) {
    an->accumulate(n.grad * Eigen::RowVectorXd::Ones(an->val.cols()));
  }));
}

Tensor gather_rows(const Tensor& a, const std::vector<int>& idx) {
  auto an = a.node();
  MatrixXd v(static_cast<int>(idx.size()), a.cols());
  for (size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < 0 || idx[r] >= a.rows()) throw DomainError("gather_rows: index out of range");
    v.row(static_cast<int>(r)) = an->val.row(idx[r]);
  }
  return Tensor(make_node(std::move(v), {an}, [an, idx](TensorNode& n) {
    MatrixXd g = MatrixXd::Zero(an->val.rows(), an->val.cols());
    for (size_t r = 0; r < idx.size(); ++r) g.row(idx[r]) += n.grad.row(static_cast<int>(r));
    an->accumulate(g);
  }));
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DomainError("concat_rows: empty input");
  const int cols = parts[0].cols();
  int rows = 0;
  std::vector<std::shared_ptr<TensorNode>> parents;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw DomainError("concat_rows: column mismatch");
    rows += p.rows();
    parents.push_back(p.node());
  }
  MatrixXd v(rows, cols);
  int at = 0;
  for (const auto& p : parts) {
    v.middleRows(at, p.rows()) = p.val();
    at += p.rows();
  }
  return Tensor(make_node(std::move(v), parents, [parents](TensorNode& n) {
    int at2 = 0;
    for (const auto& p : parents) {
      p->accumulate(n.grad.middleRows(at2, p->val.rows()));
      at2 += static_cast<int>(p->val.rows());
    }
  }));
}

}  // namespace acssm
