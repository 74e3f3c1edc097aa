#include "resnet/network.hpp"

#include <algorithm>

namespace resnet {

namespace {

template <typename... F>
struct Overload : F... {
  using F::operator()...;
};
template <typename... F>
Overload(F...) -> Overload<F...>;

}  // namespace

template <typename T>
Network<T>::Network(NetworkSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
  if (spec_.input.size() != 3) {
    throw Error(ErrorKind::kShape, "Network: spec input must be [C,H,W]");
  }
  // Resolves every shape once so a bad spec fails before any allocation.
  shape_audit(spec_, spec_.input);

  Rng rng(seed);
  std::int64_t channels = spec_.input[0];
  for (const auto& l : spec_.layers) {
    switch (l.kind) {
      case LayerKind::kConv: {
        Conv c{make_conv<T>(channels, l.out_channels, l.kernel, l.stride, rng)};
        c.params.pad = l.pad;
        layers_.push_back({l.name, std::move(c)});
        channels = l.out_channels;
        break;
      }
      case LayerKind::kBatchNorm:
        layers_.push_back({l.name, BNParams<T>::make(channels)});
        break;
      case LayerKind::kRelu:
        layers_.push_back({l.name, Relu{}});
        break;
      case LayerKind::kMaxPool:
        layers_.push_back({l.name, Pool{l.kernel, l.stride, l.pad}});
        break;
      case LayerKind::kGlobalAvgPool:
        layers_.push_back({l.name, Gap{}});
        break;
      case LayerKind::kLinear:
        layers_.push_back({l.name, make_linear<T>(channels, l.out_channels, rng)});
        channels = l.out_channels;
        break;
      case LayerKind::kBasicBlock:
        layers_.push_back(
            {l.name, BasicBlockParams<T>::make(channels, l.out_channels, l.stride, l.shortcut, rng)});
        channels = l.out_channels;
        break;
      case LayerKind::kBottleneckBlock:
        layers_.push_back(
            {l.name, BottleneckParams<T>::make(channels, l.width, l.stride, l.shortcut, rng)});
        channels = l.out_channels;
        break;
      case LayerKind::kAdd:
        throw Error(ErrorKind::kValue, "Network: add layers only appear inside blocks");
    }
  }
}

template <typename T>
Var<T> Network<T>::forward(ForwardContext<T>& ctx, const Var<T>& x) {
  const Shape& s = x.shape();
  if (s.size() != 4 || s[1] != spec_.input[0] || s[2] != spec_.input[1] ||
      s[3] != spec_.input[2]) {
    throw Error(ErrorKind::kShape, "Network " + spec_.arch + ": input " + shape_string(s) +
                                       " does not match Nx" + shape_string(spec_.input));
  }
  Var<T> y = x;
  const Conv* last_conv = nullptr;
  std::string last_conv_name;
  for (auto& layer : layers_) {
    y = std::visit(
        Overload{
            [&](Conv& c) {
              last_conv = &c;
              last_conv_name = layer.name;
              return ad::conv2d(y, ctx.params(c.params.weight), c.params.stride, c.params.pad);
            },
            [&](BNParams<T>& bn) {
              Var<T> out = ad::batchnorm(y, ctx.params(bn.gamma), ctx.params(bn.beta), bn, ctx.mode);
              if (ctx.on_response && last_conv && last_conv->params.kernel() == 3) {
                ctx.on_response(last_conv_name, out);
              }
              last_conv = nullptr;
              return out;
            },
            [&](Relu&) { return ad::relu(y); },
            [&](Pool& p) { return ad::maxpool(y, p.k, p.stride, p.pad); },
            [&](Gap&) { return ad::global_avg_pool(y); },
            [&](LinearParams<T>& p) {
              return ad::linear(y, ctx.params(p.weight), ctx.params(p.bias));
            },
            [&](BasicBlockParams<T>& b) { return basic_block_forward(ctx, y, b, layer.name); },
            [&](BottleneckParams<T>& b) { return bottleneck_block_forward(ctx, y, b, layer.name); },
        },
        layer.body);
  }
  return y;
}

template <typename T>
Tensor<T> Network<T>::logits(const Tensor<T>& x, Mode mode) {
  Tape<T> tape;
  ParamBinder<T> binder(tape);
  ForwardContext<T> ctx{binder, mode, {}};
  return forward(ctx, tape.input(x)).value();
}

template <typename T>
std::vector<ParamRef<T>> Network<T>::params() {
  std::vector<ParamRef<T>> all;
  for (auto& layer : layers_) {
    const std::string p = layer.name + ".";
    std::visit(Overload{
                   [&](Conv& c) { all.push_back({p + "weight", &c.params.weight, true, true}); },
                   [&](BNParams<T>& bn) {
                     all.push_back({p + "gamma", &bn.gamma, true, false});
                     all.push_back({p + "beta", &bn.beta, true, false});
                     all.push_back({p + "running_mean", &bn.running_mean, false, false});
                     all.push_back({p + "running_var", &bn.running_var, false, false});
                   },
                   [&](LinearParams<T>& l) {
                     all.push_back({p + "weight", &l.weight, true, true});
                     all.push_back({p + "bias", &l.bias, true, false});
                   },
                   [&](BasicBlockParams<T>& b) { b.collect(p, all); },
                   [&](BottleneckParams<T>& b) { b.collect(p, all); },
                   [](auto&) {},
               },
               layer.body);
  }
  std::stable_partition(all.begin(), all.end(), [](const ParamRef<T>& r) { return r.trainable; });
  return all;
}

template <typename T>
std::int64_t Network<T>::num_trainable() {
  const auto refs = params();
  return count_trainable<T>(refs);
}

template <typename T>
void Network<T>::zero_residuals() {
  for (auto& layer : layers_) {
    if (auto* b = std::get_if<BasicBlockParams<T>>(&layer.body)) b->zero_residual();
    if (auto* b = std::get_if<BottleneckParams<T>>(&layer.body)) b->zero_residual();
  }
}

template <typename T>
void Network<T>::set_bn_momentum(double momentum) {
  for (auto& layer : layers_) {
    std::visit(Overload{
                   [&](BNParams<T>& bn) { bn.momentum = momentum; },
                   [&](BasicBlockParams<T>& b) {
                     b.bn1.momentum = b.bn2.momentum = momentum;
                     if (b.proj) b.proj->bn.momentum = momentum;
                   },
                   [&](BottleneckParams<T>& b) {
                     b.bn1.momentum = b.bn2.momentum = b.bn3.momentum = momentum;
                     if (b.proj) b.proj->bn.momentum = momentum;
                   },
                   [](auto&) {},
               },
               layer.body);
  }
}

template class Network<float>;
template class Network<double>;

}  // namespace resnet
