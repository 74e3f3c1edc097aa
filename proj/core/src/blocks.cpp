#include "resnet/blocks.hpp"

namespace resnet {

std::string_view to_string(ShortcutKind kind) {
  switch (kind) {
    case ShortcutKind::kNone: return "none";
    case ShortcutKind::kIdentity: return "identity";
    case ShortcutKind::kZeroPadA: return "zeropad";
    case ShortcutKind::kProjectionB: return "projection";
  }
  return "unknown";
}

ShortcutKind parse_shortcut_kind(std::string_view text) {
  for (auto kind : {ShortcutKind::kNone, ShortcutKind::kIdentity, ShortcutKind::kZeroPadA,
                    ShortcutKind::kProjectionB}) {
    if (to_string(kind) == text) return kind;
  }
  throw Error(ErrorKind::kValue, "unknown shortcut kind '" + std::string(text) + "'");
}

bool shortcut_is_legal(ShortcutKind kind, std::int64_t in_channels, std::int64_t out_channels,
                       int stride) {
  const bool same = in_channels == out_channels && stride == 1;
  switch (kind) {
    case ShortcutKind::kNone: return true;
    case ShortcutKind::kIdentity: return same;
    case ShortcutKind::kZeroPadA: return !same && out_channels >= in_channels;
    case ShortcutKind::kProjectionB: return true;
  }
  return false;
}

namespace {

void require_legal(ShortcutKind kind, std::int64_t in, std::int64_t out, int stride) {
  if (!shortcut_is_legal(kind, in, out, stride)) {
    throw Error(ErrorKind::kShape, "shortcut '" + std::string(to_string(kind)) +
                                       "' cannot join " + std::to_string(in) + "->" +
                                       std::to_string(out) + " channels at stride " +
                                       std::to_string(stride));
  }
}

template <typename T>
std::optional<ProjectionParams<T>> make_projection(ShortcutKind kind, std::int64_t in,
                                                   std::int64_t out, int stride, Rng& rng) {
  if (kind != ShortcutKind::kProjectionB) return std::nullopt;
  return ProjectionParams<T>{make_conv<T>(in, out, 1, stride, rng), BNParams<T>::make(out)};
}

template <typename T>
void collect_conv_bn(const std::string& prefix, ConvParams<T>& conv, BNParams<T>& bn,
                     const std::string& conv_name, const std::string& bn_name,
                     std::vector<ParamRef<T>>& out) {
  out.push_back({prefix + conv_name + ".weight", &conv.weight, true, true});
  out.push_back({prefix + bn_name + ".gamma", &bn.gamma, true, false});
  out.push_back({prefix + bn_name + ".beta", &bn.beta, true, false});
  out.push_back({prefix + bn_name + ".running_mean", &bn.running_mean, false, false});
  out.push_back({prefix + bn_name + ".running_var", &bn.running_var, false, false});
}

template <typename T>
void collect_projection(const std::string& prefix, std::optional<ProjectionParams<T>>& proj,
                        std::vector<ParamRef<T>>& out) {
  if (proj) collect_conv_bn(prefix, proj->conv, proj->bn, "shortcut.conv", "shortcut.bn", out);
}

// Option A: subsample at indices {0, s, 2s, ...}, then append zero channels.
template <typename T>
class ZeroPadShortcut final : public Op<T> {
 public:
  ZeroPadShortcut(std::int64_t out_channels, int stride)
      : out_channels_(out_channels), stride_(stride) {}
  const char* name() const override { return "zeropad_shortcut"; }

  Tensor<T> forward(std::span<const Tensor<T>* const> in) override {
    const Tensor<T>& x = *in[0];
    const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::int64_t oh = (h + stride_ - 1) / stride_, ow = (w + stride_ - 1) / stride_;
    Tensor<T> out({n, out_channels_, oh, ow}, T(0));
    for (std::int64_t i = 0; i < n; ++i) {
      for (std::int64_t ch = 0; ch < c; ++ch) {
        const T* src = x.ptr() + (i * c + ch) * h * w;
        T* dst = out.ptr() + (i * out_channels_ + ch) * oh * ow;
        for (std::int64_t y = 0; y < oh; ++y)
          for (std::int64_t xx = 0; xx < ow; ++xx) dst[y * ow + xx] = src[y * stride_ * w + xx * stride_];
      }
    }
    return out;
  }

  void backward(const Tensor<T>& g, std::span<const Tensor<T>* const> in, const Tensor<T>&,
                std::span<const bool>, std::span<Tensor<T>> grads) override {
    const Tensor<T>& x = *in[0];
    const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::int64_t oh = g.dim(2), ow = g.dim(3);
    Tensor<T> dx(x.shape(), T(0));
    for (std::int64_t i = 0; i < n; ++i) {
      for (std::int64_t ch = 0; ch < c; ++ch) {
        const T* src = g.ptr() + (i * out_channels_ + ch) * oh * ow;
        T* dst = dx.ptr() + (i * c + ch) * h * w;
        for (std::int64_t y = 0; y < oh; ++y)
          for (std::int64_t xx = 0; xx < ow; ++xx) dst[y * stride_ * w + xx * stride_] = src[y * ow + xx];
      }
    }
    grads[0] = std::move(dx);
  }

 private:
  std::int64_t out_channels_;
  int stride_;
};

}  // namespace

template <typename T>
Var<T> ParamBinder<T>::operator()(Tensor<T>& param) {
  auto it = vars_.find(&param);
  if (it != vars_.end()) return it->second;
  Var<T> v = tape_.parameter(param);
  vars_.emplace(&param, v);
  return v;
}

template <typename T>
void ParamBinder<T>::bind(const Tensor<T>& param, const Var<T>& leaf) {
  if (&leaf.tape() != &tape_) throw Error(ErrorKind::kValue, "ParamBinder: leaf is on another tape");
  if (leaf.shape() != param.shape()) {
    throw Error(ErrorKind::kShape, "ParamBinder: leaf shape " + shape_string(leaf.shape()) +
                                       " does not match " + shape_string(param.shape()));
  }
  if (!vars_.emplace(&param, leaf).second) {
    throw Error(ErrorKind::kValue, "ParamBinder: tensor already bound");
  }
}

template <typename T>
Var<T> ParamBinder<T>::find(const Tensor<T>& param) const {
  auto it = vars_.find(&param);
  return it == vars_.end() ? Var<T>() : it->second;
}

template <typename T>
BasicBlockParams<T> BasicBlockParams<T>::make(std::int64_t in_channels, std::int64_t out_channels,
                                              int stride, ShortcutKind shortcut, Rng& rng) {
  require_legal(shortcut, in_channels, out_channels, stride);
  BasicBlockParams p;
  p.conv1 = make_conv<T>(in_channels, out_channels, 3, stride, rng);
  p.bn1 = BNParams<T>::make(out_channels);
  p.conv2 = make_conv<T>(out_channels, out_channels, 3, 1, rng);
  p.bn2 = BNParams<T>::make(out_channels);
  p.shortcut = shortcut;
  p.proj = make_projection<T>(shortcut, in_channels, out_channels, stride, rng);
  return p;
}

template <typename T>
void BasicBlockParams<T>::collect(const std::string& prefix, std::vector<ParamRef<T>>& out) {
  collect_conv_bn(prefix, conv1, bn1, "conv1", "bn1", out);
  collect_conv_bn(prefix, conv2, bn2, "conv2", "bn2", out);
  collect_projection(prefix, proj, out);
}

template <typename T>
void BasicBlockParams<T>::zero_residual() {
  conv1.weight.fill(T(0));
  conv2.weight.fill(T(0));
}

template <typename T>
BottleneckParams<T> BottleneckParams<T>::make(std::int64_t in_channels, std::int64_t width,
                                              int stride, ShortcutKind shortcut, Rng& rng) {
  const std::int64_t out_channels = 4 * width;
  require_legal(shortcut, in_channels, out_channels, stride);
  BottleneckParams p;
  p.conv1 = make_conv<T>(in_channels, width, 1, stride, rng);
  p.bn1 = BNParams<T>::make(width);
  p.conv2 = make_conv<T>(width, width, 3, 1, rng);
  p.bn2 = BNParams<T>::make(width);
  p.conv3 = make_conv<T>(width, out_channels, 1, 1, rng);
  p.bn3 = BNParams<T>::make(out_channels);
  p.shortcut = shortcut;
  p.proj = make_projection<T>(shortcut, in_channels, out_channels, stride, rng);
  return p;
}

template <typename T>
void BottleneckParams<T>::collect(const std::string& prefix, std::vector<ParamRef<T>>& out) {
  collect_conv_bn(prefix, conv1, bn1, "conv1", "bn1", out);
  collect_conv_bn(prefix, conv2, bn2, "conv2", "bn2", out);
  collect_conv_bn(prefix, conv3, bn3, "conv3", "bn3", out);
  collect_projection(prefix, proj, out);
}

template <typename T>
void BottleneckParams<T>::zero_residual() {
  conv1.weight.fill(T(0));
  conv2.weight.fill(T(0));
  conv3.weight.fill(T(0));
}

template <typename T>
std::int64_t count_trainable(std::span<const ParamRef<T>> refs) {
  std::int64_t total = 0;
  for (const auto& r : refs) {
    if (r.trainable) total += static_cast<std::int64_t>(r.tensor->size());
  }
  return total;
}

// ---------------------------------------------------------------------------

template <typename T>
Var<T> conv_bn(ForwardContext<T>& ctx, const Var<T>& x, ConvParams<T>& conv, BNParams<T>& bn,
               const std::string& name) {
  Var<T> y = ad::conv2d(x, ctx.params(conv.weight), conv.stride, conv.pad);
  y = ad::batchnorm(y, ctx.params(bn.gamma), ctx.params(bn.beta), bn, ctx.mode);
  if (ctx.on_response && conv.kernel() == 3) ctx.on_response(name, y);
  return y;
}

template <typename T>
Var<T> shortcut_forward(ForwardContext<T>& ctx, const Var<T>& x, ShortcutKind kind,
                        std::int64_t out_channels, int stride, ProjectionParams<T>* proj) {
  const std::int64_t in_channels = x.shape().at(1);
  require_legal(kind, in_channels, out_channels, stride);
  switch (kind) {
    case ShortcutKind::kNone:
      throw Error(ErrorKind::kValue, "shortcut_forward: plain blocks have no shortcut");
    case ShortcutKind::kIdentity:
      return x;
    case ShortcutKind::kZeroPadA:
      return x.tape().apply(std::make_unique<ZeroPadShortcut<T>>(out_channels, stride), {x});
    case ShortcutKind::kProjectionB:
      if (!proj) throw Error(ErrorKind::kValue, "shortcut_forward: projection parameters missing");
      if (proj->conv.out_channels() != out_channels || proj->conv.stride != stride) {
        throw Error(ErrorKind::kShape, "shortcut_forward: projection does not match the block");
      }
      return conv_bn(ctx, x, proj->conv, proj->bn, "shortcut");
  }
  return x;
}

namespace {

template <typename T>
Var<T> merge(ForwardContext<T>& ctx, const Var<T>& x, const Var<T>& residual, ShortcutKind kind,
             int stride, std::optional<ProjectionParams<T>>& proj) {
  if (kind == ShortcutKind::kNone) return ad::relu(residual);
  const Var<T> s = shortcut_forward(ctx, x, kind, residual.shape().at(1), stride,
                                    proj ? &*proj : nullptr);
  return ad::relu(ad::add(residual, s));
}

}  // namespace

template <typename T>
Var<T> basic_block_forward(ForwardContext<T>& ctx, const Var<T>& x, BasicBlockParams<T>& p,
                           const std::string& name) {
  Var<T> y = conv_bn(ctx, x, p.conv1, p.bn1, name + ".conv1");
  y = ad::relu(y);
  y = conv_bn(ctx, y, p.conv2, p.bn2, name + ".conv2");
  return merge(ctx, x, y, p.shortcut, p.stride(), p.proj);
}

template <typename T>
Var<T> bottleneck_block_forward(ForwardContext<T>& ctx, const Var<T>& x, BottleneckParams<T>& p,
                                const std::string& name) {
  Var<T> y = ad::relu(conv_bn(ctx, x, p.conv1, p.bn1, name + ".conv1"));
  y = ad::relu(conv_bn(ctx, y, p.conv2, p.bn2, name + ".conv2"));
  y = conv_bn(ctx, y, p.conv3, p.bn3, name + ".conv3");
  return merge(ctx, x, y, p.shortcut, p.stride(), p.proj);
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> shortcut_apply(const Tensor<T>& x, ShortcutKind kind, std::int64_t out_channels,
                         int stride, ProjectionParams<T>* proj, Mode mode) {
  Tape<T> tape;
  ParamBinder<T> binder(tape);
  ForwardContext<T> ctx{binder, mode, {}};
  return shortcut_forward(ctx, tape.input(x), kind, out_channels, stride, proj).value();
}

template <typename T>
Tensor<T> shortcut_apply(const Tensor<T>& x, ShortcutKind kind, std::int64_t out_channels,
                         int stride) {
  if (kind == ShortcutKind::kProjectionB) {
    throw Error(ErrorKind::kValue, "shortcut_apply: projection shortcuts need parameters");
  }
  return shortcut_apply<T>(x, kind, out_channels, stride, nullptr, Mode::kInfer);
}

template <typename T>
Tensor<T> basic_block_forward(const Tensor<T>& x, BasicBlockParams<T>& p, Mode mode) {
  Tape<T> tape;
  ParamBinder<T> binder(tape);
  ForwardContext<T> ctx{binder, mode, {}};
  return basic_block_forward(ctx, tape.input(x), p, "block").value();
}

template <typename T>
Tensor<T> bottleneck_block_forward(const Tensor<T>& x, BottleneckParams<T>& p, Mode mode) {
  Tape<T> tape;
  ParamBinder<T> binder(tape);
  ForwardContext<T> ctx{binder, mode, {}};
  return bottleneck_block_forward(ctx, tape.input(x), p, "block").value();
}

#define RESNET_INSTANTIATE_BLOCKS(T)                                                             \
  template class ParamBinder<T>;                                                                 \
  template struct BasicBlockParams<T>;                                                           \
  template struct BottleneckParams<T>;                                                           \
  template std::int64_t count_trainable(std::span<const ParamRef<T>>);                           \
  template Tensor<T> shortcut_apply(const Tensor<T>&, ShortcutKind, std::int64_t, int);          \
  template Tensor<T> shortcut_apply(const Tensor<T>&, ShortcutKind, std::int64_t, int,           \
                                    ProjectionParams<T>*, Mode);                                 \
  template Tensor<T> basic_block_forward(const Tensor<T>&, BasicBlockParams<T>&, Mode);          \
  template Tensor<T> bottleneck_block_forward(const Tensor<T>&, BottleneckParams<T>&, Mode);     \
  template Var<T> conv_bn(ForwardContext<T>&, const Var<T>&, ConvParams<T>&, BNParams<T>&,       \
                          const std::string&);                                                   \
  template Var<T> shortcut_forward(ForwardContext<T>&, const Var<T>&, ShortcutKind,              \
                                   std::int64_t, int, ProjectionParams<T>*);                     \
  template Var<T> basic_block_forward(ForwardContext<T>&, const Var<T>&, BasicBlockParams<T>&,   \
                                      const std::string&);                                       \
  template Var<T> bottleneck_block_forward(ForwardContext<T>&, const Var<T>&,                    \
                                           BottleneckParams<T>&, const std::string&);

RESNET_INSTANTIATE_BLOCKS(float)
RESNET_INSTANTIATE_BLOCKS(double)

}  // namespace resnet
