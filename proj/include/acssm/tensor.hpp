#pragma once

#include <functional>
#include <memory>
#include <vector>

#include <Eigen/Dense>

#include "acssm/core.hpp"

namespace acssm {

// Tape-based reverse-mode differentiation over 2D matrices. A Tensor is a
// shared handle to a graph node; ops build the graph, backward() replays it.
struct TensorNode {
  MatrixXd val;
  MatrixXd grad;  // allocated lazily, same shape as val
  bool requires_grad = false;
  bool needs_grad = false;  // requires_grad or any ancestor does
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;

  void accumulate(const MatrixXd& g);
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}
  Tensor(const MatrixXd& value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  int rows() const { return static_cast<int>(node_->val.rows()); }
  int cols() const { return static_cast<int>(node_->val.cols()); }
  const MatrixXd& val() const { return node_->val; }
  MatrixXd& val() { return node_->val; }
  const MatrixXd& grad() const { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }
  void zero_grad() { node_->grad.setZero(node_->val.rows(), node_->val.cols()); }
  std::shared_ptr<TensorNode> node() const { return node_; }

 private:
  std::shared_ptr<TensorNode> node_;
};

// Runs reverse-mode accumulation from a 1x1 loss node.
void backward(const Tensor& loss);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
// elementwise; b may be a 1 x m row broadcast over a's rows, or 1x1 scalar
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // same shape or b 1x1
Tensor divide(const Tensor& a, const Tensor& b);  // same shape or b 1x1
Tensor scale(const Tensor& a, double s);
Tensor add_const(const Tensor& a, double s);
Tensor neg(const Tensor& a);

Tensor exp_t(const Tensor& a);
Tensor log_t(const Tensor& a);
Tensor sqrt_t(const Tensor& a);
Tensor tanh_t(const Tensor& a);
Tensor sigmoid_t(const Tensor& a);
Tensor relu_t(const Tensor& a);
Tensor gelu_t(const Tensor& a);  // exact erf form
Tensor square_t(const Tensor& a);

// rowwise softmax of (logits + additive_mask); mask entries of -1e30 exclude
// a column. Pass an empty matrix for no mask.
Tensor softmax_rows(const Tensor& logits, const MatrixXd& additive_mask);
// rowwise layer normalization with learnable 1 x m gamma/beta
Tensor layernorm_rows(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                      double eps = 1e-5);

Tensor sum(const Tensor& a);                          // 1x1
Tensor sum_cols(const Tensor& a);                     // n x m -> n x 1
Tensor gather_rows(const Tensor& a, const std::vector<int>& idx);
Tensor concat_rows(const std::vector<Tensor>& parts);

// GRU cell over rows: h' = (1-z) .* n + z .* h with the standard gates; built
// from primitives, provided as a convenience wrapper in nn.

}  // namespace acssm
