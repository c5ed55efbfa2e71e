#pragma once

#include <Eigen/Dense>

#include <deque>
#include <functional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace avger::nn {

using Mat = Eigen::MatrixXd;

/// A persistent learnable tensor. Parameters are registered once in a
/// ParameterSet and referenced from forward tapes; gradients are collected
/// per-sample into GradBuffers keyed by the parameter's registry index.
struct Parameter {
  std::string name;
  Mat value;
  bool trainable{true};
  int index{-1};
};

class ParameterSet {
 public:
  Parameter& add(const std::string& name, Eigen::Index rows, Eigen::Index cols);
  Parameter* find(std::string_view name);
  const Parameter* find(std::string_view name) const;
  const std::vector<Parameter*>& ordered() const { return order_; }
  size_t count() const { return order_.size(); }
  size_t scalar_count(bool trainable_only = false) const;

 private:
  std::deque<Parameter> store_;  // stable addresses
  std::vector<Parameter*> order_;
};

/// Gradient accumulator aligned with a ParameterSet. Untouched slots stay
/// empty. Folding buffers in a fixed order keeps training reductions
/// deterministic under sample-level parallelism.
class GradBuffer {
 public:
  explicit GradBuffer(size_t n_params) : slots_(n_params) {}

  void accumulate(const Parameter& p, const Mat& g);
  const Mat* get(const Parameter& p) const;
  void add_scaled(const GradBuffer& other, double scale);
  void clear();
  size_t slot_count() const { return slots_.size(); }

 private:
  std::vector<Mat> slots_;
};

struct Node {
  Mat value;
  const Mat* extern_value{nullptr};
  Mat grad;
  bool needs_grad{false};
  bool grad_live{false};
  Parameter* param{nullptr};
  std::function<void(Node&)> back;

  const Mat& val() const { return extern_value ? *extern_value : value; }

  Mat& grad_ref() {
    if (!grad_live) {
      grad = Mat::Zero(val().rows(), val().cols());
      grad_live = true;
    }
    return grad;
  }
};

/// Lightweight handle to a tape node.
class Value {
 public:
  Value() = default;
  const Mat& val() const;
  Eigen::Index rows() const;
  Eigen::Index cols() const;
  bool valid() const { return node_ != nullptr; }

 private:
  friend class Tape;
  explicit Value(Node* n) : node_(n) {}
  Node* node_{nullptr};
};

/// Reverse-mode tape over dense double matrices. Ops compute eagerly and
/// record closures; backward() walks the tape in reverse creation order.
/// With grad_enabled=false the tape is a plain forward evaluator.
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }
  size_t node_count() const { return nodes_.size(); }

  Value constant(Mat v);
  /// Grad-tracked non-parameter leaf (probing inputs in tests).
  Value leaf(Mat v);
  Value param(Parameter& p);
  Value zeros(Eigen::Index rows, Eigen::Index cols);

  Value matmul(Value a, Value b);
  Value matmul_nt(Value a, Value b);  // a * b^T
  Value add(Value a, Value b);
  Value sub(Value a, Value b);
  Value cmul(Value a, Value b);
  Value scale(Value a, double c);
  Value add_rowvec(Value a, Value r);
  Value sub_rowvec(Value a, Value r);
  Value div_rowvec(Value a, Value r);
  Value gelu(Value a);
  Value layer_norm(Value a, Value gain, Value bias);
  Value softmax_rows(Value a);
  /// Additive pre-softmax bias (0 / -inf attention masking).
  Value softmax_rows_biased(Value a, const Mat& bias);
  Value log_softmax_rows(Value a);
  Value gather_cols(Value a, std::vector<int> ids);     // n x 1
  Value gather_rows(Value table, std::vector<int> ids); // ids.size() x d
  Value select_cols(Value a, std::vector<int> cols);
  Value concat_rows(const std::vector<Value>& parts);
  Value concat_cols(const std::vector<Value>& parts);
  Value slice_rows(Value a, Eigen::Index begin, Eigen::Index count);
  Value slice_cols(Value a, Eigen::Index begin, Eigen::Index count);
  /// 1-D convolution patch matrix over rows (time); input T x C becomes
  /// T_out x (k*C) with zero padding outside [0, T).
  Value im2col_1d(Value a, int kernel, int stride, int pad_left, int pad_right);
  Value colwise_mean(Value a);  // 1 x d
  Value colwise_min(Value a);
  Value colwise_max(Value a);
  Value cwise_pow(Value a, int k);
  Value cwise_max_scalar(Value a, double c);
  Value l2_norm(Value a);  // 1 x 1
  Value sum(Value a);      // 1 x 1

  /// Backpropagate from a 1x1 root; parameter grads land in `sink`.
  void backward(Value root, GradBuffer& sink);

  /// Gradient of a non-parameter node after backward() (test access).
  Mat grad_of(Value v) const;

 private:
  Node* make(Mat value);
  bool wants_grad(const Value& v) const;

  std::deque<Node> nodes_;
  std::unordered_map<const Parameter*, Node*> param_nodes_;
  bool grad_enabled_;
};

/// Deterministic parameter initializers.
void init_normal(Parameter& p, double stddev, uint64_t seed);
void init_zero(Parameter& p);
void init_const(Parameter& p, double v);

}  // namespace avger::nn
