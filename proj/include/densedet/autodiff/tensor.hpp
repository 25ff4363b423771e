#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace densedet::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct Node;
using BackwardFn = std::function<void(Node& self)>;

/// One value on (or off) a tape. `grad` is allocated lazily on the first
/// accumulation during backward.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  BackwardFn backward;

  std::vector<double>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

class Tape;

/// Handle to a node. Copies alias the same storage.
class Tensor {
 public:
  Tensor() = default;

  /// An untracked value; never receives gradient.
  static Tensor constant(Shape shape, std::vector<double> values);
  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }
  std::span<const double> data() const { return node_->value; }
  /// Empty when no gradient reached this tensor.
  std::span<const double> grad() const { return node_->grad; }
  double item() const;
  bool requires_grad() const { return node_ && node_->requires_grad; }
  Tape* tape() const { return tape_; }
  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  friend class Tape;
  friend Tensor make_op(Shape, std::vector<double>, const std::vector<Tensor>&, BackwardFn);
  std::shared_ptr<Node> node_;
  Tape* tape_ = nullptr;
};

/// Named, persistent array. Buffers (e.g. running statistics) use
/// trainable = false.
struct Parameter {
  std::string name;
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool trainable = true;
  // Optimizer moments.
  std::vector<double> m;
  std::vector<double> v;
};

class ParamStore {
 public:
  Parameter& add(const std::string& name, Shape shape, std::vector<double> init,
                 bool trainable = true);
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  Parameter* find(const std::string& name);
  bool contains(const std::string& name) const { return params_.contains(name); }

  /// Insertion order.
  const std::vector<Parameter*>& all() const { return order_; }
  std::vector<Parameter*> trainable() const;
  void zero_grad();
  std::size_t total_size() const;

 private:
  std::map<std::string, std::unique_ptr<Parameter>> params_;
  std::vector<Parameter*> order_;
};

/// Records op outputs in creation order, which is a topological order.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Input that receives gradient.
  Tensor leaf(Shape shape, std::vector<double> values);
  /// Tracked view of a parameter; backward adds into Parameter::grad.
  /// Untrainable parameters, or any parameter when gradients are disabled,
  /// come back as constants.
  Tensor param(Parameter& p);

  void set_grad_enabled(bool enabled) { grad_enabled_ = enabled; }
  bool grad_enabled() const { return grad_enabled_; }

  /// Seeds d(loss)/d(loss) = 1 and runs every recorded backward in reverse
  /// creation order, each exactly once.
  void backward(const Tensor& loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  friend Tensor make_op(Shape, std::vector<double>, const std::vector<Tensor>&, BackwardFn);
  Tensor track(std::shared_ptr<Node> node);

  std::vector<std::shared_ptr<Node>> nodes_;
  bool grad_enabled_ = true;
};

/// Builds an op result. The result is tracked (and `backward` kept) only when
/// some input requires gradient; otherwise it is a constant.
Tensor make_op(Shape shape, std::vector<double> values, const std::vector<Tensor>& inputs,
               BackwardFn backward);

/// Adds `g` into the gradient of `input` when it is tracked.
void accumulate(const Tensor& input, std::span<const double> g);

/// Untracked copy of the value.
Tensor detach(const Tensor& t);

void check_finite(const Tensor& t, const std::string& what);

}  // namespace densedet::ad
