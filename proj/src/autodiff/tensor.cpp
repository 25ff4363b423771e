#include "densedet/autodiff/tensor.hpp"

#include <cmath>
#include <sstream>

#include "densedet/error.hpp"

namespace densedet::ad {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream ss;
  ss << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) ss << (i ? "," : "") << shape[i];
  ss << ']';
  return ss.str();
}

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
  if (ad::numel(shape) != values.size()) {
    fail(ErrorCode::kShapeMismatch, "constant: " + std::to_string(values.size()) +
                                        " values for shape " + shape_str(shape));
  }
  Tensor t;
  t.node_ = std::make_shared<Node>();
  t.node_->shape = std::move(shape);
  t.node_->value = std::move(values);
  return t;
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  const auto n = ad::numel(shape);
  return constant(std::move(shape), std::vector<double>(n, value));
}

double Tensor::item() const {
  if (numel() != 1) fail(ErrorCode::kShapeMismatch, "item() on non-scalar " + shape_str(shape()));
  return node_->value[0];
}

Parameter& ParamStore::add(const std::string& name, Shape shape, std::vector<double> init,
                           bool trainable) {
  if (params_.contains(name)) fail(ErrorCode::kInvalidConfig, "duplicate parameter " + name);
  if (numel(shape) != init.size()) {
    fail(ErrorCode::kShapeMismatch, "parameter " + name + " init size mismatch");
  }
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->shape = std::move(shape);
  p->value = std::move(init);
  p->grad.assign(p->value.size(), 0.0);
  p->trainable = trainable;
  auto* raw = p.get();
  params_.emplace(name, std::move(p));
  order_.push_back(raw);
  return *raw;
}

Parameter& ParamStore::at(const std::string& name) {
  auto* p = find(name);
  if (!p) fail(ErrorCode::kInvalidConfig, "no parameter named " + name);
  return *p;
}

const Parameter& ParamStore::at(const std::string& name) const {
  const auto it = params_.find(name);
  if (it == params_.end()) fail(ErrorCode::kInvalidConfig, "no parameter named " + name);
  return *it->second;
}

Parameter* ParamStore::find(const std::string& name) {
  const auto it = params_.find(name);
  return it == params_.end() ? nullptr : it->second.get();
}

std::vector<Parameter*> ParamStore::trainable() const {
  std::vector<Parameter*> out;
  for (auto* p : order_) {
    if (p->trainable) out.push_back(p);
  }
  return out;
}

void ParamStore::zero_grad() {
  for (auto* p : order_) std::fill(p->grad.begin(), p->grad.end(), 0.0);
}

std::size_t ParamStore::total_size() const {
  std::size_t n = 0;
  for (auto* p : order_) n += p->value.size();
  return n;
}

Tensor Tape::track(std::shared_ptr<Node> node) {
  node->requires_grad = true;
  nodes_.push_back(node);
  Tensor t;
  t.node_ = std::move(node);
  t.tape_ = this;
  return t;
}

Tensor Tape::leaf(Shape shape, std::vector<double> values) {
  auto t = Tensor::constant(std::move(shape), std::move(values));
  if (!grad_enabled_) return t;
  return track(t.node());
}

Tensor Tape::param(Parameter& p) {
  auto t = Tensor::constant(p.shape, p.value);
  if (!grad_enabled_ || !p.trainable) return t;
  auto node = t.node();
  node->backward = [target = &p](Node& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i) target->grad[i] += self.grad[i];
  };
  return track(std::move(node));
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    fail(ErrorCode::kShapeMismatch, "backward needs a scalar loss");
  }
  if (!loss.requires_grad()) return;
  if (loss.tape() != this) fail(ErrorCode::kInvalidConfig, "loss recorded on a different tape");
  loss.node()->ensure_grad()[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node& n = **it;
    if (n.backward && !n.grad.empty()) n.backward(n);
  }
}

Tensor make_op(Shape shape, std::vector<double> values, const std::vector<Tensor>& inputs,
               BackwardFn backward) {
  if (numel(shape) != values.size()) {
    fail(ErrorCode::kShapeMismatch, "op produced " + std::to_string(values.size()) +
                                        " values for shape " + shape_str(shape));
  }
  Tape* tape = nullptr;
  for (const auto& in : inputs) {
    if (!in.requires_grad()) continue;
    if (tape && in.tape() != tape) fail(ErrorCode::kInvalidConfig, "op mixes tapes");
    tape = in.tape();
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  if (!tape || !tape->grad_enabled()) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }
  node->backward = std::move(backward);
  return tape->track(std::move(node));
}

void accumulate(const Tensor& input, std::span<const double> g) {
  if (!input.requires_grad()) return;
  auto& grad = input.node()->ensure_grad();
  for (std::size_t i = 0; i < g.size(); ++i) grad[i] += g[i];
}

Tensor detach(const Tensor& t) {
  return Tensor::constant(t.shape(), std::vector<double>(t.data().begin(), t.data().end()));
}

void check_finite(const Tensor& t, const std::string& what) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) fail(ErrorCode::kNonFinite, what + " produced a non-finite value");
  }
}

}  // namespace densedet::ad
