#pragma once

#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "resnet/layers.hpp"
#include "resnet/tensor.hpp"

namespace resnet {

template <typename T>
class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while its Tape lives.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, int id) : tape_(tape), id_(id) {}

  int id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr && id_ >= 0; }
  Tape<T>& tape() const;
  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  Tape<T>* tape_ = nullptr;
  int id_ = -1;
};

/// A differentiable operation. forward() may stash whatever context backward() needs.
template <typename T>
class Op {
 public:
  virtual ~Op() = default;
  virtual const char* name() const = 0;
  virtual Tensor<T> forward(std::span<const Tensor<T>* const> inputs) = 0;
  /// Fill grads[i] for every i with needs_grad[i]; other entries are ignored.
  virtual void backward(const Tensor<T>& grad_out, std::span<const Tensor<T>* const> inputs,
                        const Tensor<T>& output, std::span<const bool> needs_grad,
                        std::span<Tensor<T>> grads) = 0;
};

/// Gradients indexed by node id.
template <typename T>
class GradMap {
 public:
  GradMap() = default;
  explicit GradMap(std::vector<Tensor<T>> grads) : grads_(std::move(grads)) {}

  bool contains(int id) const {
    return id >= 0 && id < static_cast<int>(grads_.size()) && !grads_[id].empty();
  }
  const Tensor<T>& at(int id) const;
  const Tensor<T>& operator[](const Var<T>& v) const { return at(v.id()); }
  Tensor<T> take(int id);

 private:
  std::vector<Tensor<T>> grads_;
};

/// Define-by-run record of a computation. Ops execute as they are recorded;
/// replay() re-executes the recorded graph against rebound inputs.
template <typename T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Graph input. Must be rebound on replay.
  Var<T> input(Tensor<T> value, bool requires_grad = false, std::string name = {});
  /// Trainable leaf. Keeps its recorded value on replay unless rebound.
  Var<T> parameter(Tensor<T> value, std::string name = {});
  Var<T> apply(std::unique_ptr<Op<T>> op, std::initializer_list<Var<T>> inputs);
  Var<T> apply(std::unique_ptr<Op<T>> op, std::span<const Var<T>> inputs);

  std::size_t size() const noexcept { return nodes_.size(); }
  const Tensor<T>& value(int id) const { return node(id).value; }
  bool requires_grad(int id) const { return node(id).requires_grad; }
  const std::string& name(int id) const { return node(id).name; }
  /// Ids of graph inputs (leaves created with input()), in recording order.
  std::vector<int> input_ids() const;

  /// Recomputes every node in recording order from the bound leaf values.
  void replay(const std::unordered_map<int, Tensor<T>>& bindings);
  /// replay() and return the value of every node.
  std::unordered_map<int, Tensor<T>> forward(const std::unordered_map<int, Tensor<T>>& bindings);

  /// Reverse sweep from a scalar loss. Returns gradients for every
  /// requires_grad node (leaves always; intermediates when retained).
  /// Unreached trainable leaves get zero tensors.
  GradMap<T> backward(const Var<T>& loss, bool retain_intermediate = true);

 private:
  struct Node {
    std::unique_ptr<Op<T>> op;  // null for leaves
    std::vector<int> inputs;
    Tensor<T> value;
    bool requires_grad = false;
    bool is_input = false;
    std::string name;
  };

  const Node& node(int id) const;
  Var<T> add_node(Node node);

  std::vector<Node> nodes_;
};

template <typename T>
Tape<T>& Var<T>::tape() const {
  if (!tape_) throw Error(ErrorKind::kValue, "Var: unbound handle");
  return *tape_;
}

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape().value(id_);
}

template <typename T>
bool Var<T>::requires_grad() const {
  return tape().requires_grad(id_);
}

// ---------------------------------------------------------------------------
// Differentiable operations. All inputs must live on the same tape.

namespace ad {

/// `b` may be per-channel [C] against a rank-4 `a`.
template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> scale(const Var<T>& a, T factor);
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b);
/// Sum of all elements, shape [1].
template <typename T>
Var<T> sum(const Var<T>& a);
template <typename T>
Var<T> mean(const Var<T>& a);
template <typename T>
Var<T> relu(const Var<T>& x);
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, int stride, int pad);
/// `running` supplies and (train mode) receives the running statistics.
template <typename T>
Var<T> batchnorm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, BNParams<T>& running,
                 Mode mode);
template <typename T>
Var<T> maxpool(const Var<T>& x, int k = 3, int stride = 2, int pad = 1);
template <typename T>
Var<T> global_avg_pool(const Var<T>& x);
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);
template <typename T>
Var<T> softmax_cross_entropy(const Var<T>& logits, std::vector<int> labels);

}  // namespace ad

// ---------------------------------------------------------------------------
// Finite-difference gradient checking (float64 only).

/// Records a loss on `tape` from parameter leaves bound to the current values.
using GraphBuilder = std::function<Var<double>(Tape<double>&, std::span<const Var<double>>)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t elements = 0;
};

/// Compares backward() against central differences over every element of
/// every parameter. Relative error is |a - n| / max(|a|, |n|, 1e-8).
/// eps must lie in [1e-7, 1e-3].
GradCheckResult grad_check(const GraphBuilder& build, std::vector<TensorD>& params, double eps);

}  // namespace resnet
