#include "avger/autograd.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "avger/common.hpp"

namespace avger::nn {

namespace {
constexpr double kLnEps = 1e-5;  // layer-norm variance floor
constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;
}

// ---------------------------------------------------------------------------
// ParameterSet / GradBuffer

Parameter& ParameterSet::add(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
  if (find(name)) throw std::invalid_argument("duplicate parameter: " + name);
  store_.push_back(Parameter{name, Mat::Zero(rows, cols), true, int(order_.size())});
  order_.push_back(&store_.back());
  return store_.back();
}

Parameter* ParameterSet::find(std::string_view name) {
  for (Parameter* p : order_)
    if (p->name == name) return p;
  return nullptr;
}

const Parameter* ParameterSet::find(std::string_view name) const {
  for (const Parameter* p : order_)
    if (p->name == name) return p;
  return nullptr;
}

size_t ParameterSet::scalar_count(bool trainable_only) const {
  size_t n = 0;
  for (const Parameter* p : order_) {
    if (trainable_only && !p->trainable) continue;
    n += size_t(p->value.size());
  }
  return n;
}

void GradBuffer::accumulate(const Parameter& p, const Mat& g) {
  Mat& slot = slots_.at(size_t(p.index));
  if (slot.size() == 0) {
    slot = g;
  } else {
    slot += g;
  }
}

const Mat* GradBuffer::get(const Parameter& p) const {
  const Mat& slot = slots_.at(size_t(p.index));
  return slot.size() == 0 ? nullptr : &slot;
}

void GradBuffer::add_scaled(const GradBuffer& other, double scale) {
  if (other.slots_.size() != slots_.size())
    throw std::invalid_argument("GradBuffer size mismatch");
  for (size_t i = 0; i < slots_.size(); ++i) {
    if (other.slots_[i].size() == 0) continue;
    if (slots_[i].size() == 0) {
      slots_[i] = scale * other.slots_[i];
    } else {
      slots_[i] += scale * other.slots_[i];
    }
  }
}

void GradBuffer::clear() {
  for (Mat& m : slots_) m.resize(0, 0);
}

// ---------------------------------------------------------------------------
// Tape nodes

const Mat& Value::val() const { return node_->val(); }
Eigen::Index Value::rows() const { return node_->val().rows(); }
Eigen::Index Value::cols() const { return node_->val().cols(); }

Node* Tape::make(Mat value) {
  nodes_.push_back(Node{});
  nodes_.back().value = std::move(value);
  return &nodes_.back();
}

bool Tape::wants_grad(const Value& v) const {
  return grad_enabled_ && v.node_ && v.node_->needs_grad;
}

Value Tape::constant(Mat v) { return Value(make(std::move(v))); }

Value Tape::leaf(Mat v) {
  Node* n = make(std::move(v));
  n->needs_grad = grad_enabled_;
  return Value(n);
}

Value Tape::param(Parameter& p) {
  auto it = param_nodes_.find(&p);
  if (it != param_nodes_.end()) return Value(it->second);
  nodes_.push_back(Node{});
  Node* n = &nodes_.back();
  n->extern_value = &p.value;
  n->param = &p;
  n->needs_grad = grad_enabled_ && p.trainable;
  param_nodes_.emplace(&p, n);
  return Value(n);
}

Value Tape::zeros(Eigen::Index rows, Eigen::Index cols) {
  return constant(Mat::Zero(rows, cols));
}

// ---------------------------------------------------------------------------
// Ops

Value Tape::matmul(Value a, Value b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul shape mismatch");
  Node* n = make(a.val() * b.val());
  if (wants_grad(a) || wants_grad(b)) {
    n->needs_grad = true;
    Node *pa = a.node_, *pb = b.node_;
    n->back = [pa, pb](Node& self) {
      if (pa->needs_grad) pa->grad_ref().noalias() += self.grad * pb->val().transpose();
      if (pb->needs_grad) pb->grad_ref().noalias() += pa->val().transpose() * self.grad;
    };
  }
  return Value(n);
}

Value Tape::matmul_nt(Value a, Value b) {
  if (a.cols() != b.cols()) throw std::invalid_argument("matmul_nt shape mismatch");
  Node* n = make(a.val() * b.val().transpose());
  if (wants_grad(a) || wants_grad(b)) {
    n->needs_grad = true;
    Node *pa = a.node_, *pb = b.node_;
    n->back = [pa, pb](Node& self) {
      if (pa->needs_grad) pa->grad_ref().noalias() += self.grad * pb->val();
      if (pb->needs_grad) pb->grad_ref().noalias() += self.grad.transpose() * pa->val();
    };
  }
  return Value(n);
}

Value Tape::add(Value a, Value b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument("add shape mismatch");
  Node* n = make(a.val() + b.val());
  if (wants_grad(a) || wants_grad(b)) {
    n->needs_grad = true;
    Node *pa = a.node_, *pb = b.node_;
    n->back = [pa, pb](Node& self) {
      if (pa->needs_grad) pa->grad_ref() += self.grad;
      if (pb->needs_grad) pb->grad_ref() += self.grad;
    };
  }
  return Value(n);
}

Value Tape::sub(Value a, Value b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument("sub shape mismatch");
  Node* n = make(a.val() - b.val());
  if (wants_grad(a) || wants_grad(b)) {
    n->needs_grad = true;
    Node *pa = a.node_, *pb = b.node_;
    n->back = [pa, pb](Node& self) {
      if (pa->needs_grad) pa->grad_ref() += self.grad;
      if (pb->needs_grad) pb->grad_ref() -= self.grad;
    };
  }
  return Value(n);
}

Value Tape::cmul(Value a, Value b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument("cmul shape mismatch");
  Node* n = make(a.val().cwiseProduct(b.val()));
  if (wants_grad(a) || wants_grad(b)) {
    n->needs_grad = true;
    Node *pa = a.node_, *pb = b.node_;
    n->back = [pa, pb](Node& self) {
      if (pa->needs_grad) pa->grad_ref() += self.grad.cwiseProduct(pb->val());
      if (pb->needs_grad) pb->grad_ref() += self.grad.cwiseProduct(pa->val());
    };
  }
  return Value(n);
}

Value Tape::scale(Value a, double c) {
  Node* n = make(c * a.val());
  if (wants_grad(a)) {
    n->needs_grad = true;
    Node* pa = a.node_;
    n->back = [pa, c](Node& self) { pa->grad_ref() += c * self.grad; };
  }
  return Value(n);
}

Value Tape::add_rowvec(Value a, Value r) {
  if (r.rows() != 1 || r.cols() != a.cols())
    throw std::invalid_argument("add_rowvec shape mismatch");
  Mat v = a.val();
  v.rowwise() += r.val().row(0);
  Node* n = make(std::move(v));
  if (wants_grad(a) || wants_grad(r)) {
    n->needs_grad = true;
    Node *pa = a.node_, *pr = r.node_;
    n->back = [pa, pr](Node& self) {
      if (pa->needs_grad) pa->grad_ref() += self.grad;
      if (pr->needs_grad) pr->grad_ref() += self.grad.colwise().sum();
    };
  }
  return Value(n);
}

Value Tape::sub_rowvec(Value a, Value r) {
  if (r.rows() != 1 || r.cols() != a.cols())
    throw std::invalid_argument("sub_rowvec shape mismatch");
  Mat v = a.val();
  v.rowwise() -= r.val().row(0);
  Node* n = make(std::move(v));
  if (wants_grad(a) || wants_grad(r)) {
    n->needs_grad = true;
    Node *pa = a.node_, *pr = r.node_;
    n->back = [pa, pr](Node& self) {
      if (pa->needs_grad) pa->grad_ref() += self.grad;
      if (pr->needs_grad) pr->grad_ref() -= self.grad.colwise().sum();
    };
  }
  return Value(n);
}

Value Tape::div_rowvec(Value a, Value r) {
  if (r.rows() != 1 || r.cols() != a.cols())
    throw std::invalid_argument("div_rowvec shape mismatch");
  Mat v = a.val().array().rowwise() / r.val().row(0).array();
  Node* n = make(std::move(v));
  if (wants_grad(a) || wants_grad(r)) {
    n->needs_grad = true;
    Node *pa = a.node_, *pr = r.node_;
    n->back = [pa, pr](Node& self) {
      Eigen::ArrayXd rr = pr->val().row(0).array().transpose();
      if (pa->needs_grad)
        pa->grad_ref().array() += self.grad.array().rowwise() / rr.transpose();
      if (pr->needs_grad) {
        // dv/dr_j = -v_ij / r_j
        Eigen::RowVectorXd dr =
            -(self.grad.cwiseProduct(self.val()).colwise().sum().array() /
              rr.transpose())
                 .matrix();
        pr->grad_ref() += dr;
      }
    };
  }
  return Value(n);
}

Value Tape::gelu(Value a) {
  Mat v = a.val().unaryExpr(
      [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); });
  Node* n = make(std::move(v));
  if (wants_grad(a)) {
    n->needs_grad = true;
    Node* pa = a.node_;
    n->back = [pa](Node& self) {
      Mat d = pa->val().unaryExpr([](double x) {
        double phi = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
        double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
        return phi + x * pdf;
      });
      pa->grad_ref() += self.grad.cwiseProduct(d);
    };
  }
  return Value(n);
}

Value Tape::layer_norm(Value a, Value gain, Value bias) {
  Eigen::Index d = a.cols();
  if (gain.rows() != 1 || gain.cols() != d || bias.rows() != 1 || bias.cols() != d)
    throw std::invalid_argument("layer_norm gain/bias must be 1 x d");
  Eigen::Index nr = a.rows();
  Mat xhat(nr, d);
  Eigen::VectorXd inv_std(nr);
  for (Eigen::Index i = 0; i < nr; ++i) {
    double mu = a.val().row(i).mean();
    double var = (a.val().row(i).array() - mu).square().mean();
    double inv = 1.0 / std::sqrt(var + kLnEps);
    xhat.row(i) = (a.val().row(i).array() - mu) * inv;
    inv_std(i) = inv;
  }
  Mat v = xhat.array().rowwise() * gain.val().row(0).array();
  v.array().rowwise() += bias.val().row(0).array();
  Node* n = make(std::move(v));
  if (wants_grad(a) || wants_grad(gain) || wants_grad(bias)) {
    n->needs_grad = true;
    Node *pa = a.node_, *pg = gain.node_, *pb = bias.node_;
    n->back = [pa, pg, pb, xhat = std::move(xhat),
               inv_std = std::move(inv_std)](Node& self) {
      if (pb->needs_grad) pb->grad_ref() += self.grad.colwise().sum();
      if (pg->needs_grad)
        pg->grad_ref() += self.grad.cwiseProduct(xhat).colwise().sum();
      if (pa->needs_grad) {
        Mat dxhat = self.grad.array().rowwise() * pg->val().row(0).array();
        Mat& ga = pa->grad_ref();
        for (Eigen::Index i = 0; i < dxhat.rows(); ++i) {
          double m1 = dxhat.row(i).mean();
          double m2 = dxhat.row(i).cwiseProduct(xhat.row(i)).mean();
          ga.row(i) += inv_std(i) *
                       (dxhat.row(i).array() - m1 - xhat.row(i).array() * m2)
                           .matrix();
        }
      }
    };
  }
  return Value(n);
}

namespace {
Mat stable_softmax_rows(const Mat& x) {
  Mat p(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double m = x.row(i).maxCoeff();
    Eigen::ArrayXd e = (x.row(i).array() - m).exp().transpose();
    p.row(i) = (e / e.sum()).transpose();
  }
  return p;
}
}  // namespace

Value Tape::softmax_rows(Value a) {
  Node* n = make(stable_softmax_rows(a.val()));
  if (wants_grad(a)) {
    n->needs_grad = true;
    Node* pa = a.node_;
    n->back = [pa](Node& self) {
      const Mat& p = self.val();
      Mat& ga = pa->grad_ref();
      for (Eigen::Index i = 0; i < p.rows(); ++i) {
        double dot = self.grad.row(i).dot(p.row(i));
        ga.row(i) += (p.row(i).array() * (self.grad.row(i).array() - dot)).matrix();
      }
    };
  }
  return Value(n);
}

Value Tape::softmax_rows_biased(Value a, const Mat& bias) {
  if (bias.rows() != a.rows() || bias.cols() != a.cols())
    throw std::invalid_argument("softmax bias shape mismatch");
  Node* n = make(stable_softmax_rows(a.val() + bias));
  if (wants_grad(a)) {
    n->needs_grad = true;
    Node* pa = a.node_;
    n->back = [pa](Node& self) {
      const Mat& p = self.val();
      Mat& ga = pa->grad_ref();
      for (Eigen::Index i = 0; i < p.rows(); ++i) {
        double dot = self.grad.row(i).dot(p.row(i));
        ga.row(i) += (p.row(i).array() * (self.grad.row(i).array() - dot)).matrix();
      }
    };
  }
  return Value(n);
}

Value Tape::log_softmax_rows(Value a) {
  Mat v(a.rows(), a.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    double m = a.val().row(i).maxCoeff();
    double lse = std::log((a.val().row(i).array() - m).exp().sum()) + m;
    v.row(i) = a.val().row(i).array() - lse;
  }
  Node* n = make(std::move(v));
  if (wants_grad(a)) {
    n->needs_grad = true;
    Node* pa = a.node_;
    n->back = [pa](Node& self) {
      Mat p = self.val().array().exp();
      Eigen::VectorXd rowsum = self.grad.rowwise().sum();
      pa->grad_ref() += self.grad - (p.array().colwise() * rowsum.array()).matrix();
    };
  }
  return Value(n);
}

Value Tape::gather_cols(Value a, std::vector<int> ids) {
  if (Eigen::Index(ids.size()) != a.rows())
    throw std::invalid_argument("gather_cols: one index per row required");
  Mat v(a.rows(), 1);
  for (Eigen::Index i = 0; i < a.rows(); ++i) v(i, 0) = a.val()(i, ids[size_t(i)]);
  Node* n = make(std::move(v));
  if (wants_grad(a)) {
    n->needs_grad = true;
    Node* pa = a.node_;
    n->back = [pa, ids = std::move(ids)](Node& self) {
      Mat& ga = pa->grad_ref();
      for (Eigen::Index i = 0; i < self.grad.rows(); ++i)
        ga(i, ids[size_t(i)]) += self.grad(i, 0);
    };
  }
  return Value(n);
}

Value Tape::gather_rows(Value table, std::vector<int> ids) {
  Mat v(Eigen::Index(ids.size()), table.cols());
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= table.rows())
      throw std::out_of_range("gather_rows index");
    v.row(Eigen::Index(i)) = table.val().row(ids[i]);
  }
  Node* n = make(std::move(v));
  if (wants_grad(table)) {
    n->needs_grad = true;
    Node* pt = table.node_;
    n->back = [pt, ids = std::move(ids)](Node& self) {
      Mat& gt = pt->grad_ref();
      for (size_t i = 0; i < ids.size(); ++i)
        gt.row(ids[i]) += self.grad.row(Eigen::Index(i));
    };
  }
  return Value(n);
}

Value Tape::select_cols(Value a, std::vector<int> cols) {
  Mat v(a.rows(), Eigen::Index(cols.size()));
  for (size_t j = 0; j < cols.size(); ++j) {
    if (cols[j] < 0 || cols[j] >= a.cols()) throw std::out_of_range("select_cols index");
    v.col(Eigen::Index(j)) = a.val().col(cols[j]);
  }
  Node* n = make(std::move(v));
  if (wants_grad(a)) {
    n->needs_grad = true;
    Node* pa = a.node_;
    n->back = [pa, cols = std::move(cols)](Node& self) {
      Mat& ga = pa->grad_ref();
      for (size_t j = 0; j < cols.size(); ++j)
        ga.col(cols[j]) += self.grad.col(Eigen::Index(j));
    };
  }
  return Value(n);
}

Value Tape::concat_rows(const std::vector<Value>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
  Eigen::Index total = 0, d = parts[0].cols();
  for (const Value& p : parts) {
    if (p.cols() != d) throw std::invalid_argument("concat_rows width mismatch");
    total += p.rows();
  }
  Mat v(total, d);
  Eigen::Index off = 0;
  for (const Value& p : parts) {
    v.middleRows(off, p.rows()) = p.val();
    off += p.rows();
  }
  Node* n = make(std::move(v));
  bool any = false;
  for (const Value& p : parts) any = any || wants_grad(p);
  if (any) {
    n->needs_grad = true;
    std::vector<Node*> ps;
    ps.reserve(parts.size());
    for (const Value& p : parts) ps.push_back(p.node_);
    n->back = [ps = std::move(ps)](Node& self) {
      Eigen::Index off2 = 0;
      for (Node* p : ps) {
        Eigen::Index r = p->val().rows();
        if (p->needs_grad) p->grad_ref() += self.grad.middleRows(off2, r);
        off2 += r;
      }
    };
  }
  return Value(n);
}

Value Tape::concat_cols(const std::vector<Value>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
  Eigen::Index total = 0, r = parts[0].rows();
  for (const Value& p : parts) {
    if (p.rows() != r) throw std::invalid_argument("concat_cols height mismatch");
    total += p.cols();
  }
  Mat v(r, total);
  Eigen::Index off = 0;
  for (const Value& p : parts) {
    v.middleCols(off, p.cols()) = p.val();
    off += p.cols();
  }
  Node* n = make(std::move(v));
  bool any = false;
  for (const Value& p : parts) any = any || wants_grad(p);
  if (any) {
    n->needs_grad = true;
    std::vector<Node*> ps;
    ps.reserve(parts.size());
    for (const Value& p : parts) ps.push_back(p.node_);
    n->back = [ps = std::move(ps)](Node& self) {
      Eigen::Index off2 = 0;
      for (Node* p : ps) {
        Eigen::Index c = p->val().cols();
        if (p->needs_grad) p->grad_ref() += self.grad.middleCols(off2, c);
        off2 += c;
      }
    };
  }
  return Value(n);
}

Value Tape::slice_rows(Value a, Eigen::Index begin, Eigen::Index count) {
  if (begin < 0 || count < 0 || begin + count > a.rows())
    throw std::out_of_range("slice_rows");
  Node* n = make(a.val().middleRows(begin, count));
  if (wants_grad(a)) {
    n->needs_grad = true;
    Node* pa = a.node_;
    n->back = [pa, begin, count](Node& self) {
      pa->grad_ref().middleRows(begin, count) += self.grad;
    };
  }
  return Value(n);
}

Value Tape::slice_cols(Value a, Eigen::Index begin, Eigen::Index count) {
  if (begin < 0 || count < 0 || begin + count > a.cols())
    throw std::out_of_range("slice_cols");
  Node* n = make(a.val().middleCols(begin, count));
  if (wants_grad(a)) {
    n->needs_grad = true;
    Node* pa = a.node_;
    n->back = [pa, begin, count](Node& self) {
      pa->grad_ref().middleCols(begin, count) += self.grad;
    };
  }
  return Value(n);
}

Value Tape::im2col_1d(Value a, int kernel, int stride, int pad_left, int pad_right) {
  if (kernel < 1 || stride < 1 || pad_left < 0 || pad_right < 0)
    throw std::invalid_argument("im2col_1d: bad geometry");
  Eigen::Index t_in = a.rows(), c = a.cols();
  Eigen::Index span = t_in + pad_left + pad_right;
  if (span < kernel) throw std::invalid_argument("im2col_1d: input shorter than kernel");
  Eigen::Index t_out = (span - kernel) / stride + 1;
  Mat v = Mat::Zero(t_out, Eigen::Index(kernel) * c);
  for (Eigen::Index t = 0; t < t_out; ++t) {
    for (int j = 0; j < kernel; ++j) {
      Eigen::Index src = t * stride - pad_left + j;
      if (src >= 0 && src < t_in) v.block(t, Eigen::Index(j) * c, 1, c) = a.val().row(src);
    }
  }
  Node* n = make(std::move(v));
  if (wants_grad(a)) {
    n->needs_grad = true;
    Node* pa = a.node_;
    n->back = [pa, kernel, stride, pad_left, c, t_in](Node& self) {
      Mat& ga = pa->grad_ref();
      for (Eigen::Index t = 0; t < self.grad.rows(); ++t) {
        for (int j = 0; j < kernel; ++j) {
          Eigen::Index src = t * stride - pad_left + j;
          if (src >= 0 && src < t_in)
            ga.row(src) += self.grad.block(t, Eigen::Index(j) * c, 1, c);
        }
      }
    };
  }
  return Value(n);
}

Value Tape::colwise_mean(Value a) {
  if (a.rows() == 0) throw std::domain_error("colwise_mean of empty matrix");
  Node* n = make(a.val().colwise().mean());
  if (wants_grad(a)) {
    n->needs_grad = true;
    Node* pa = a.node_;
    n->back = [pa](Node& self) {
      double inv = 1.0 / double(pa->val().rows());
      pa->grad_ref() += inv * self.grad.replicate(pa->val().rows(), 1);
    };
  }
  return Value(n);
}

Value Tape::colwise_min(Value a) {
  if (a.rows() == 0) throw std::domain_error("colwise_min of empty matrix");
  Eigen::Index d = a.cols();
  Mat v(1, d);
  std::vector<Eigen::Index> arg(static_cast<size_t>(d));
  for (Eigen::Index j = 0; j < d; ++j) {
    Eigen::Index r;
    v(0, j) = a.val().col(j).minCoeff(&r);
    arg[size_t(j)] = r;
  }
  Node* n = make(std::move(v));
  if (wants_grad(a)) {
    n->needs_grad = true;
    Node* pa = a.node_;
    n->back = [pa, arg = std::move(arg)](Node& self) {
      Mat& ga = pa->grad_ref();
      for (Eigen::Index j = 0; j < self.grad.cols(); ++j)
        ga(arg[size_t(j)], j) += self.grad(0, j);
    };
  }
  return Value(n);
}

Value Tape::colwise_max(Value a) {
  if (a.rows() == 0) throw std::domain_error("colwise_max of empty matrix");
  Eigen::Index d = a.cols();
  Mat v(1, d);
  std::vector<Eigen::Index> arg(static_cast<size_t>(d));
  for (Eigen::Index j = 0; j < d; ++j) {
    Eigen::Index r;
    v(0, j) = a.val().col(j).maxCoeff(&r);
    arg[size_t(j)] = r;
  }
  Node* n = make(std::move(v));
  if (wants_grad(a)) {
    n->needs_grad = true;
    Node* pa = a.node_;
    n->back = [pa, arg = std::move(arg)](Node& self) {
      Mat& ga = pa->grad_ref();
      for (Eigen::Index j = 0; j < self.grad.cols(); ++j)
        ga(arg[size_t(j)], j) += self.grad(0, j);
    };
  }
  return Value(n);
}

Value Tape::cwise_pow(Value a, int k) {
  if (k < 1) throw std::invalid_argument("cwise_pow: k >= 1");
  Mat v = a.val().unaryExpr([k](double x) { return std::pow(x, double(k)); });
  Node* n = make(std::move(v));
  if (wants_grad(a)) {
    n->needs_grad = true;
    Node* pa = a.node_;
    n->back = [pa, k](Node& self) {
      Mat d = pa->val().unaryExpr(
          [k](double x) { return double(k) * std::pow(x, double(k - 1)); });
      pa->grad_ref() += self.grad.cwiseProduct(d);
    };
  }
  return Value(n);
}

Value Tape::cwise_max_scalar(Value a, double c) {
  Mat v = a.val().cwiseMax(c);
  Node* n = make(std::move(v));
  if (wants_grad(a)) {
    n->needs_grad = true;
    Node* pa = a.node_;
    n->back = [pa, c](Node& self) {
      Mat pass = (pa->val().array() > c).cast<double>();
      pa->grad_ref() += self.grad.cwiseProduct(pass);
    };
  }
  return Value(n);
}

Value Tape::l2_norm(Value a) {
  double norm = a.val().norm();
  Mat v(1, 1);
  v(0, 0) = norm;
  Node* n = make(std::move(v));
  if (wants_grad(a)) {
    n->needs_grad = true;
    Node* pa = a.node_;
    n->back = [pa](Node& self) {
      double nv = self.val()(0, 0);
      if (nv > 0.0) pa->grad_ref() += (self.grad(0, 0) / nv) * pa->val();
    };
  }
  return Value(n);
}

Value Tape::sum(Value a) {
  Mat v(1, 1);
  v(0, 0) = a.val().sum();
  Node* n = make(std::move(v));
  if (wants_grad(a)) {
    n->needs_grad = true;
    Node* pa = a.node_;
    n->back = [pa](Node& self) {
      pa->grad_ref().array() += self.grad(0, 0);
    };
  }
  return Value(n);
}

// ---------------------------------------------------------------------------

void Tape::backward(Value root, GradBuffer& sink) {
  if (!grad_enabled_) throw std::logic_error("backward on a no-grad tape");
  if (!root.valid() || root.rows() != 1 || root.cols() != 1)
    throw std::invalid_argument("backward root must be 1x1");
  root.node_->grad_ref()(0, 0) = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node& n = *it;
    if (!n.needs_grad || !n.grad_live || !n.back) continue;
    n.back(n);
  }
  for (auto& [p, node] : param_nodes_) {
    if (node->grad_live && node->needs_grad)
      sink.accumulate(*node->param, node->grad);
  }
}

Mat Tape::grad_of(Value v) const {
  if (!v.valid()) throw std::invalid_argument("grad_of: invalid value");
  if (!v.node_->grad_live) return Mat::Zero(v.rows(), v.cols());
  return v.node_->grad;
}

// ---------------------------------------------------------------------------

void init_normal(Parameter& p, double stddev, uint64_t seed) {
  avger::Rng rng(seed);
  for (Eigen::Index i = 0; i < p.value.rows(); ++i)
    for (Eigen::Index j = 0; j < p.value.cols(); ++j)
      p.value(i, j) = rng.normal(0.0, stddev);
}

void init_zero(Parameter& p) { p.value.setZero(); }

void init_const(Parameter& p, double v) { p.value.setConstant(v); }

}  // namespace avger::nn
