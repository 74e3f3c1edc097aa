#pragma once

#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "resnet/autodiff.hpp"
#include "resnet/layers.hpp"

namespace resnet {

/// How a block's input reaches the addition.
///  - kNone: plain block, no shortcut and no addition.
///  - kIdentity: x itself; requires equal channels and stride 1.
///  - kZeroPadA: strided spatial subsample (top-left phase) plus zero channels; no parameters.
///  - kProjectionB: 1x1 conv with the block stride followed by BN.
enum class ShortcutKind { kNone, kIdentity, kZeroPadA, kProjectionB };

std::string_view to_string(ShortcutKind kind);
ShortcutKind parse_shortcut_kind(std::string_view text);

/// Whether `kind` can join a block mapping in_channels -> out_channels at `stride`.
bool shortcut_is_legal(ShortcutKind kind, std::int64_t in_channels, std::int64_t out_channels,
                       int stride);

/// A named tensor owned by a model. Trainable tensors receive gradients and
/// optimizer updates; buffers (BN running statistics) do not.
template <typename T>
struct ParamRef {
  std::string name;
  Tensor<T>* tensor = nullptr;
  bool trainable = true;
  bool is_weight = true;  // conv/linear weight, as opposed to BN affine or bias
};

/// Lazily lifts model tensors onto a tape as parameter leaves, once each.
template <typename T>
class ParamBinder {
 public:
  explicit ParamBinder(Tape<T>& tape) : tape_(tape) {}

  Tape<T>& tape() { return tape_; }
  Var<T> operator()(Tensor<T>& param);
  /// Routes later uses of `param` to an existing leaf (for example a grad-check variable).
  void bind(const Tensor<T>& param, const Var<T>& leaf);
  /// The leaf bound for `param`, or an invalid Var if it never took part in the graph.
  Var<T> find(const Tensor<T>& param) const;

 private:
  Tape<T>& tape_;
  std::unordered_map<const Tensor<T>*, Var<T>> vars_;
};

/// Receives the post-BN, pre-nonlinearity output of every 3x3 convolution.
template <typename T>
using ResponseObserver = std::function<void(const std::string& layer, const Var<T>& response)>;

template <typename T>
struct ForwardContext {
  ParamBinder<T>& params;
  Mode mode = Mode::kTrain;
  ResponseObserver<T> on_response;
};

template <typename T>
struct ProjectionParams {
  ConvParams<T> conv;
  BNParams<T> bn;
};

template <typename T>
struct BasicBlockParams {
  ConvParams<T> conv1;  // 3x3, carries the block stride
  BNParams<T> bn1;
  ConvParams<T> conv2;  // 3x3, stride 1
  BNParams<T> bn2;
  ShortcutKind shortcut = ShortcutKind::kIdentity;
  std::optional<ProjectionParams<T>> proj;

  static BasicBlockParams make(std::int64_t in_channels, std::int64_t out_channels, int stride,
                               ShortcutKind shortcut, Rng& rng);
  std::int64_t in_channels() const { return conv1.in_channels(); }
  std::int64_t out_channels() const { return conv2.out_channels(); }
  int stride() const { return conv1.stride; }
  void collect(const std::string& prefix, std::vector<ParamRef<T>>& out);
  /// Zeros every weight of the residual branch (conv1, conv2).
  void zero_residual();
};

template <typename T>
struct BottleneckParams {
  ConvParams<T> conv1;  // 1x1 reduce, carries the block stride
  BNParams<T> bn1;
  ConvParams<T> conv2;  // 3x3
  BNParams<T> bn2;
  ConvParams<T> conv3;  // 1x1 restore to 4x the bottleneck width
  BNParams<T> bn3;
  ShortcutKind shortcut = ShortcutKind::kIdentity;
  std::optional<ProjectionParams<T>> proj;

  static BottleneckParams make(std::int64_t in_channels, std::int64_t width, int stride,
                               ShortcutKind shortcut, Rng& rng);
  std::int64_t in_channels() const { return conv1.in_channels(); }
  std::int64_t width() const { return conv2.out_channels(); }
  std::int64_t out_channels() const { return conv3.out_channels(); }
  int stride() const { return conv1.stride; }
  void collect(const std::string& prefix, std::vector<ParamRef<T>>& out);
  void zero_residual();
};

template <typename T>
std::int64_t count_trainable(std::span<const ParamRef<T>> refs);

// ---------------------------------------------------------------------------
// Tensor-level forms.

/// Identity or option-A shortcut; neither needs parameters.
template <typename T>
Tensor<T> shortcut_apply(const Tensor<T>& x, ShortcutKind kind, std::int64_t out_channels,
                         int stride);

/// Any shortcut; `proj` is required for kProjectionB.
template <typename T>
Tensor<T> shortcut_apply(const Tensor<T>& x, ShortcutKind kind, std::int64_t out_channels,
                         int stride, ProjectionParams<T>* proj, Mode mode);

template <typename T>
Tensor<T> basic_block_forward(const Tensor<T>& x, BasicBlockParams<T>& p, Mode mode);

template <typename T>
Tensor<T> bottleneck_block_forward(const Tensor<T>& x, BottleneckParams<T>& p, Mode mode);

// ---------------------------------------------------------------------------
// Tape-level forms.

template <typename T>
Var<T> conv_bn(ForwardContext<T>& ctx, const Var<T>& x, ConvParams<T>& conv, BNParams<T>& bn,
               const std::string& name);

template <typename T>
Var<T> shortcut_forward(ForwardContext<T>& ctx, const Var<T>& x, ShortcutKind kind,
                        std::int64_t out_channels, int stride, ProjectionParams<T>* proj);

/// relu(bn2(conv2(relu(bn1(conv1 x)))) + shortcut(x)); the addition is skipped for plain blocks.
template <typename T>
Var<T> basic_block_forward(ForwardContext<T>& ctx, const Var<T>& x, BasicBlockParams<T>& p,
                           const std::string& name);

template <typename T>
Var<T> bottleneck_block_forward(ForwardContext<T>& ctx, const Var<T>& x, BottleneckParams<T>& p,
                                const std::string& name);

}  // namespace resnet
