#include "resnet/autodiff.hpp"

#include <algorithm>

namespace resnet {

template <typename T>
const Tensor<T>& GradMap<T>::at(int id) const {
  if (!contains(id)) {
    throw Error(ErrorKind::kValue, "no gradient recorded for node " + std::to_string(id));
  }
  return grads_[id];
}

template <typename T>
Tensor<T> GradMap<T>::take(int id) {
  if (!contains(id)) {
    throw Error(ErrorKind::kValue, "no gradient recorded for node " + std::to_string(id));
  }
  return std::move(grads_[id]);
}

template <typename T>
const typename Tape<T>::Node& Tape<T>::node(int id) const {
  if (id < 0 || id >= static_cast<int>(nodes_.size())) {
    throw Error(ErrorKind::kValue, "tape: unknown node id " + std::to_string(id));
  }
  return nodes_[id];
}

template <typename T>
Var<T> Tape<T>::add_node(Node n) {
  nodes_.push_back(std::move(n));
  return Var<T>(this, static_cast<int>(nodes_.size()) - 1);
}

template <typename T>
Var<T> Tape<T>::input(Tensor<T> value, bool requires_grad, std::string name) {
  if (value.empty()) throw Error(ErrorKind::kShape, "tape input: null tensor");
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.is_input = true;
  n.name = std::move(name);
  return add_node(std::move(n));
}

template <typename T>
Var<T> Tape<T>::parameter(Tensor<T> value, std::string name) {
  if (value.empty()) throw Error(ErrorKind::kShape, "tape parameter: null tensor");
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  n.name = std::move(name);
  return add_node(std::move(n));
}

template <typename T>
Var<T> Tape<T>::apply(std::unique_ptr<Op<T>> op, std::initializer_list<Var<T>> inputs) {
  return apply(std::move(op), std::span<const Var<T>>(inputs.begin(), inputs.size()));
}

template <typename T>
Var<T> Tape<T>::apply(std::unique_ptr<Op<T>> op, std::span<const Var<T>> inputs) {
  Node n;
  std::vector<const Tensor<T>*> values;
  for (const auto& v : inputs) {
    if (&v.tape() != this) throw Error(ErrorKind::kValue, "tape: input recorded on another tape");
    n.inputs.push_back(v.id());
    values.push_back(&nodes_[v.id()].value);
    n.requires_grad = n.requires_grad || nodes_[v.id()].requires_grad;
  }
  n.value = op->forward(values);
  n.op = std::move(op);
  return add_node(std::move(n));
}

template <typename T>
std::vector<int> Tape<T>::input_ids() const {
  std::vector<int> ids;
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    if (nodes_[id].is_input) ids.push_back(static_cast<int>(id));
  }
  return ids;
}

template <typename T>
void Tape<T>::replay(const std::unordered_map<int, Tensor<T>>& bindings) {
  for (const auto& [id, value] : bindings) {
    const Node& n = node(id);
    if (n.op) throw Error(ErrorKind::kValue, "replay: node " + std::to_string(id) + " is not a leaf");
    if (value.shape() != n.value.shape()) {
      throw Error(ErrorKind::kShape, "replay: binding for node " + std::to_string(id) +
                                         " has shape " + shape_string(value.shape()) +
                                         ", recorded " + shape_string(n.value.shape()));
    }
  }
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    Node& n = nodes_[id];
    if (!n.op) {
      auto it = bindings.find(static_cast<int>(id));
      if (it != bindings.end()) {
        n.value = it->second;
      } else if (n.is_input) {
        throw Error(ErrorKind::kValue, "replay: unbound input node " + std::to_string(id));
      }
      continue;
    }
    std::vector<const Tensor<T>*> values;
    values.reserve(n.inputs.size());
    for (int in : n.inputs) values.push_back(&nodes_[in].value);
    Tensor<T> out = n.op->forward(values);
    if (out.shape() != n.value.shape()) {
      throw Error(ErrorKind::kShape, std::string("replay: ") + n.op->name() +
                                         " produced a different shape than recorded");
    }
    n.value = std::move(out);
  }
}

template <typename T>
std::unordered_map<int, Tensor<T>> Tape<T>::forward(
    const std::unordered_map<int, Tensor<T>>& bindings) {
  replay(bindings);
  std::unordered_map<int, Tensor<T>> out;
  for (std::size_t id = 0; id < nodes_.size(); ++id) out.emplace(static_cast<int>(id), nodes_[id].value);
  return out;
}

template <typename T>
GradMap<T> Tape<T>::backward(const Var<T>& loss, bool retain_intermediate) {
  const int loss_id = loss.id();
  const Node& ln = node(loss_id);
  if (ln.value.size() != 1) {
    throw Error(ErrorKind::kShape, "backward: loss must be a scalar, got shape " +
                                       shape_string(ln.value.shape()));
  }
  std::vector<Tensor<T>> grads(nodes_.size());
  if (ln.requires_grad) grads[loss_id] = Tensor<T>(ln.value.shape(), T(1));

  for (int id = loss_id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.op || !n.requires_grad || grads[id].empty()) continue;
    const std::size_t arity = n.inputs.size();
    std::vector<const Tensor<T>*> values(arity);
    std::unique_ptr<bool[]> needs(new bool[arity]);
    bool any = false;
    for (std::size_t i = 0; i < arity; ++i) {
      values[i] = &nodes_[n.inputs[i]].value;
      needs[i] = nodes_[n.inputs[i]].requires_grad;
      any = any || needs[i];
    }
    if (!any) continue;
    std::vector<Tensor<T>> input_grads(arity);
    n.op->backward(grads[id], values, n.value, std::span<const bool>(needs.get(), arity),
                   input_grads);
    for (std::size_t i = 0; i < arity; ++i) {
      if (!needs[i]) continue;
      Tensor<T>& g = input_grads[i];
      Tensor<T>& slot = grads[n.inputs[i]];
      if (g.shape() != values[i]->shape()) {
        throw Error(ErrorKind::kShape, std::string("backward: ") + n.op->name() +
                                           " returned a gradient of the wrong shape");
      }
      if (slot.empty()) {
        slot = std::move(g);
      } else {
        T* s = slot.ptr();
        const T* a = g.ptr();
        for (std::size_t j = 0; j < slot.size(); ++j) s[j] += a[j];
      }
    }
    if (!retain_intermediate) grads[id] = Tensor<T>();
  }

  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    const Node& n = nodes_[id];
    if (!n.op && n.requires_grad && grads[id].empty()) grads[id] = Tensor<T>(n.value.shape(), T(0));
  }
  return GradMap<T>(std::move(grads));
}

// ---------------------------------------------------------------------------

namespace {

template <typename T>
using Inputs = std::span<const Tensor<T>* const>;

// Sums a rank-4 gradient over (N, H, W) into a per-channel vector.
template <typename T>
Tensor<T> sum_to_channels(const Tensor<T>& g) {
  const std::int64_t n = g.dim(0), c = g.dim(1), plane = g.dim(2) * g.dim(3);
  Tensor<T> out({c}, T(0));
  for (std::int64_t ch = 0; ch < c; ++ch) {
    double s = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
      const T* p = g.ptr() + (i * c + ch) * plane;
      for (std::int64_t j = 0; j < plane; ++j) s += p[j];
    }
    out[ch] = static_cast<T>(s);
  }
  return out;
}

template <typename T>
class ZipNode final : public Op<T> {
 public:
  explicit ZipNode(ZipOp op) : op_(op) {}
  const char* name() const override {
    switch (op_) {
      case ZipOp::kAdd: return "add";
      case ZipOp::kSub: return "sub";
      case ZipOp::kMul: return "mul";
      case ZipOp::kMax: return "max";
    }
    return "zip";
  }
  Tensor<T> forward(Inputs<T> in) override { return zip_elementwise(op_, *in[0], *in[1]); }
  void backward(const Tensor<T>& g, Inputs<T> in, const Tensor<T>&, std::span<const bool> need,
                std::span<Tensor<T>> grads) override {
    const Tensor<T>& a = *in[0];
    const Tensor<T>& b = *in[1];
    const bool broadcast = a.shape() != b.shape();
    if (need[0]) {
      switch (op_) {
        case ZipOp::kAdd:
        case ZipOp::kSub: grads[0] = g; break;
        case ZipOp::kMul: grads[0] = zip_elementwise(ZipOp::kMul, g, b); break;
        default: throw Error(ErrorKind::kValue, "max is not differentiable on the tape");
      }
    }
    if (need[1]) {
      Tensor<T> gb;
      switch (op_) {
        case ZipOp::kAdd: gb = g; break;
        case ZipOp::kSub: gb = scale(g, T(-1)); break;
        case ZipOp::kMul: gb = zip_elementwise(ZipOp::kMul, g, a); break;
        default: throw Error(ErrorKind::kValue, "max is not differentiable on the tape");
      }
      grads[1] = broadcast ? sum_to_channels(gb) : std::move(gb);
    }
  }

 private:
  ZipOp op_;
};

template <typename T>
class ScaleNode final : public Op<T> {
 public:
  explicit ScaleNode(T factor) : factor_(factor) {}
  const char* name() const override { return "scale"; }
  Tensor<T> forward(Inputs<T> in) override { return resnet::scale(*in[0], factor_); }
  void backward(const Tensor<T>& g, Inputs<T>, const Tensor<T>&, std::span<const bool>,
                std::span<Tensor<T>> grads) override {
    grads[0] = resnet::scale(g, factor_);
  }

 private:
  T factor_;
};

template <typename T>
class MatmulNode final : public Op<T> {
 public:
  const char* name() const override { return "matmul"; }
  Tensor<T> forward(Inputs<T> in) override { return resnet::matmul(*in[0], *in[1]); }
  void backward(const Tensor<T>& g, Inputs<T> in, const Tensor<T>&, std::span<const bool> need,
                std::span<Tensor<T>> grads) override {
    if (need[0]) grads[0] = resnet::matmul(g, transpose2d(*in[1]));
    if (need[1]) grads[1] = resnet::matmul(transpose2d(*in[0]), g);
  }
};

template <typename T>
class SumNode final : public Op<T> {
 public:
  explicit SumNode(bool mean) : mean_(mean) {}
  const char* name() const override { return mean_ ? "mean" : "sum"; }
  Tensor<T> forward(Inputs<T> in) override {
    double s = 0.0;
    for (T v : in[0]->data()) s += v;
    if (mean_) s /= static_cast<double>(in[0]->size());
    return Tensor<T>({1}, static_cast<T>(s));
  }
  void backward(const Tensor<T>& g, Inputs<T> in, const Tensor<T>&, std::span<const bool>,
                std::span<Tensor<T>> grads) override {
    T v = g[0];
    if (mean_) v /= static_cast<T>(in[0]->size());
    grads[0] = Tensor<T>(in[0]->shape(), v);
  }

 private:
  bool mean_;
};

template <typename T>
class ReluNode final : public Op<T> {
 public:
  const char* name() const override { return "relu"; }
  Tensor<T> forward(Inputs<T> in) override { return resnet::relu(*in[0]); }
  void backward(const Tensor<T>& g, Inputs<T> in, const Tensor<T>&, std::span<const bool>,
                std::span<Tensor<T>> grads) override {
    grads[0] = relu_backward(*in[0], g);
  }
};

template <typename T>
class ConvNode final : public Op<T> {
 public:
  ConvNode(int stride, int pad) : stride_(stride), pad_(pad) {}
  const char* name() const override { return "conv2d"; }
  Tensor<T> forward(Inputs<T> in) override { return conv2d_forward(*in[0], *in[1], stride_, pad_); }
  void backward(const Tensor<T>& g, Inputs<T> in, const Tensor<T>&, std::span<const bool> need,
                std::span<Tensor<T>> grads) override {
    conv2d_backward(*in[0], *in[1], stride_, pad_, g, need[0] ? &grads[0] : nullptr,
                    need[1] ? &grads[1] : nullptr);
  }

 private:
  int stride_, pad_;
};

template <typename T>
class BatchNormNode final : public Op<T> {
 public:
  BatchNormNode(BNParams<T>& running, Mode mode) : running_(running), mode_(mode) {}
  const char* name() const override { return "batchnorm"; }
  Tensor<T> forward(Inputs<T> in) override {
    return batchnorm_forward(*in[0], *in[1], *in[2], running_, mode_, &cache_);
  }
  void backward(const Tensor<T>& g, Inputs<T> in, const Tensor<T>&, std::span<const bool> need,
                std::span<Tensor<T>> grads) override {
    batchnorm_backward(g, *in[1], cache_, need[0] ? &grads[0] : nullptr,
                       need[1] ? &grads[1] : nullptr, need[2] ? &grads[2] : nullptr);
  }

 private:
  BNParams<T>& running_;
  Mode mode_;
  BNCache<T> cache_;
};

template <typename T>
class MaxPoolNode final : public Op<T> {
 public:
  MaxPoolNode(int k, int stride, int pad) : k_(k), stride_(stride), pad_(pad) {}
  const char* name() const override { return "maxpool"; }
  Tensor<T> forward(Inputs<T> in) override {
    return resnet::maxpool(*in[0], k_, stride_, pad_, &argmax_);
  }
  void backward(const Tensor<T>& g, Inputs<T> in, const Tensor<T>&, std::span<const bool>,
                std::span<Tensor<T>> grads) override {
    grads[0] = maxpool_backward(in[0]->shape(), argmax_, g);
  }

 private:
  int k_, stride_, pad_;
  std::vector<std::int64_t> argmax_;
};

template <typename T>
class GapNode final : public Op<T> {
 public:
  const char* name() const override { return "global_avg_pool"; }
  Tensor<T> forward(Inputs<T> in) override { return resnet::global_avg_pool(*in[0]); }
  void backward(const Tensor<T>& g, Inputs<T> in, const Tensor<T>&, std::span<const bool>,
                std::span<Tensor<T>> grads) override {
    grads[0] = global_avg_pool_backward(in[0]->shape(), g);
  }
};

template <typename T>
class LinearNode final : public Op<T> {
 public:
  const char* name() const override { return "linear"; }
  Tensor<T> forward(Inputs<T> in) override { return linear_forward(*in[0], *in[1], *in[2]); }
  void backward(const Tensor<T>& g, Inputs<T> in, const Tensor<T>&, std::span<const bool> need,
                std::span<Tensor<T>> grads) override {
    linear_backward(*in[0], *in[1], g, need[0] ? &grads[0] : nullptr,
                    need[1] ? &grads[1] : nullptr, need[2] ? &grads[2] : nullptr);
  }
};

template <typename T>
class SoftmaxXentNode final : public Op<T> {
 public:
  explicit SoftmaxXentNode(std::vector<int> labels) : labels_(std::move(labels)) {}
  const char* name() const override { return "softmax_cross_entropy"; }
  Tensor<T> forward(Inputs<T> in) override {
    return Tensor<T>({1}, resnet::softmax_cross_entropy(*in[0], labels_));
  }
  void backward(const Tensor<T>& g, Inputs<T> in, const Tensor<T>&, std::span<const bool>,
                std::span<Tensor<T>> grads) override {
    grads[0] = resnet::scale(softmax_cross_entropy_backward(*in[0], labels_), g[0]);
  }

 private:
  std::vector<int> labels_;
};

}  // namespace

namespace ad {

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  return a.tape().apply(std::make_unique<ZipNode<T>>(ZipOp::kAdd), {a, b});
}
template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  return a.tape().apply(std::make_unique<ZipNode<T>>(ZipOp::kSub), {a, b});
}
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  return a.tape().apply(std::make_unique<ZipNode<T>>(ZipOp::kMul), {a, b});
}
template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
  return a.tape().apply(std::make_unique<ScaleNode<T>>(factor), {a});
}
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  return a.tape().apply(std::make_unique<MatmulNode<T>>(), {a, b});
}
template <typename T>
Var<T> sum(const Var<T>& a) {
  return a.tape().apply(std::make_unique<SumNode<T>>(false), {a});
}
template <typename T>
Var<T> mean(const Var<T>& a) {
  return a.tape().apply(std::make_unique<SumNode<T>>(true), {a});
}
template <typename T>
Var<T> relu(const Var<T>& x) {
  return x.tape().apply(std::make_unique<ReluNode<T>>(), {x});
}
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, int stride, int pad) {
  return x.tape().apply(std::make_unique<ConvNode<T>>(stride, pad), {x, weight});
}
template <typename T>
Var<T> batchnorm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, BNParams<T>& running,
                 Mode mode) {
  return x.tape().apply(std::make_unique<BatchNormNode<T>>(running, mode), {x, gamma, beta});
}
template <typename T>
Var<T> maxpool(const Var<T>& x, int k, int stride, int pad) {
  return x.tape().apply(std::make_unique<MaxPoolNode<T>>(k, stride, pad), {x});
}
template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
  return x.tape().apply(std::make_unique<GapNode<T>>(), {x});
}
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  return x.tape().apply(std::make_unique<LinearNode<T>>(), {x, weight, bias});
}
template <typename T>
Var<T> softmax_cross_entropy(const Var<T>& logits, std::vector<int> labels) {
  return logits.tape().apply(std::make_unique<SoftmaxXentNode<T>>(std::move(labels)), {logits});
}

}  // namespace ad

#define RESNET_INSTANTIATE_AUTODIFF(T)                                                       \
  template class GradMap<T>;                                                                 \
  template class Tape<T>;                                                                    \
  template Var<T> ad::add(const Var<T>&, const Var<T>&);                                     \
  template Var<T> ad::sub(const Var<T>&, const Var<T>&);                                     \
  template Var<T> ad::mul(const Var<T>&, const Var<T>&);                                     \
  template Var<T> ad::scale(const Var<T>&, T);                                               \
  template Var<T> ad::matmul(const Var<T>&, const Var<T>&);                                  \
  template Var<T> ad::sum(const Var<T>&);                                                    \
  template Var<T> ad::mean(const Var<T>&);                                                   \
  template Var<T> ad::relu(const Var<T>&);                                                   \
  template Var<T> ad::conv2d(const Var<T>&, const Var<T>&, int, int);                        \
  template Var<T> ad::batchnorm(const Var<T>&, const Var<T>&, const Var<T>&, BNParams<T>&,   \
                                Mode);                                                       \
  template Var<T> ad::maxpool(const Var<T>&, int, int, int);                                 \
  template Var<T> ad::global_avg_pool(const Var<T>&);                                        \
  template Var<T> ad::linear(const Var<T>&, const Var<T>&, const Var<T>&);                   \
  template Var<T> ad::softmax_cross_entropy(const Var<T>&, std::vector<int>);

RESNET_INSTANTIATE_AUTODIFF(float)
RESNET_INSTANTIATE_AUTODIFF(double)

}  // namespace resnet
