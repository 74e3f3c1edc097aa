#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "resnet/blocks.hpp"
#include "resnet/tensor.hpp"

namespace resnet {

enum class LayerKind {
  kConv,
  kBatchNorm,
  kRelu,
  kMaxPool,
  kGlobalAvgPool,
  kLinear,
  kBasicBlock,
  kBottleneckBlock,
  kAdd,
};

std::string_view to_string(LayerKind kind);

enum class Family { kCifarPlain, kCifarResnet, kImagenetPlain, kImagenetResnet };

std::string_view to_string(Family family);

/// Shortcut policy for a whole network:
///  A: identity, zero-padded where dimensions grow (parameter-free);
///  B: identity, projection where dimensions grow;
///  C: projection everywhere.
enum class ShortcutOption { kA, kB, kC };

char to_char(ShortcutOption option);
ShortcutOption parse_shortcut_option(std::string_view text);

/// Which path of a block a primitive layer sits on after expansion.
enum class Branch { kMain, kShortcut };

struct LayerSpec {
  LayerKind kind = LayerKind::kConv;
  std::string name;
  std::int64_t out_channels = 0;  // conv, linear, blocks
  int kernel = 0;                 // conv, maxpool
  int stride = 1;
  int pad = 0;
  std::int64_t width = 0;  // bottleneck inner width
  ShortcutKind shortcut = ShortcutKind::kNone;
  Branch branch = Branch::kMain;
};

struct NetworkSpec {
  Family family = Family::kCifarResnet;
  std::string arch;  // e.g. "resnet-cifar-20"
  int depth = 0;     // number of weighted layers on the main path
  ShortcutOption option = ShortcutOption::kA;
  std::vector<std::int64_t> widths;
  Shape input;  // [C, H, W]
  int classes = 10;
  std::vector<LayerSpec> layers;

  bool residual() const {
    return family == Family::kCifarResnet || family == Family::kImagenetResnet;
  }
};

/// CIFAR family: 3x3 stem, three stages of n basic blocks on 32/16/8 maps,
/// stride-2 first block in stages 2 and 3, global pooling and a linear head.
/// 6n+2 weighted layers.
NetworkSpec build_cifar(int n, bool residual, std::array<std::int64_t, 3> widths = {16, 32, 64},
                        ShortcutOption option = ShortcutOption::kA, int classes = 10);

/// ImageNet family, depth in {18, 34, 50, 101, 152}.
NetworkSpec build_imagenet(int depth, bool residual, ShortcutOption option, int classes = 1000);

/// Parses names such as "resnet-imagenet-50", "plain-cifar-56" or "resnet-cifar-110".
NetworkSpec build_named(std::string_view arch, ShortcutOption option);

/// Expands one block into its primitive layers (conv, bn, relu, add) with
/// dotted names. Non-block layers expand to themselves.
std::vector<LayerSpec> expand_layer(const LayerSpec& layer);
std::vector<LayerSpec> expand(const NetworkSpec& spec);

/// conv and linear layers on the main path (shortcut projections excluded).
int count_weighted_layers(const NetworkSpec& spec);

struct AuditRow {
  std::string name;
  LayerKind kind = LayerKind::kConv;
  Shape out_shape;
  std::int64_t params = 0;
  std::int64_t madds = 0;
};

struct AuditReport {
  std::string arch;
  Shape input;
  std::vector<AuditRow> rows;
  std::int64_t total_params = 0;
  std::int64_t total_madds = 0;

  /// name,kind,out_shape,params,madds with a trailing TOTAL row, preceded by
  /// '#' header lines stating the counting convention.
  std::string to_csv() const;
};

/// Propagates shapes through the expanded network for one input of shape
/// [N,C,H,W] (or [C,H,W], read as N=1). Parameters count conv weights (no
/// bias), BN gamma and beta, linear weight and bias. Multiply-adds count conv
/// (Ho*Wo*Cout*Cin*k*k) and linear (Cin*Cout) per image; BN, ReLU, pooling and
/// additions count zero.
AuditReport shape_audit(const NetworkSpec& spec, const Shape& input);

std::int64_t count_params(const NetworkSpec& spec);
std::int64_t count_flops(const NetworkSpec& spec, const Shape& input);

/// Stable 64-bit FNV-1a digest of the architecture's structure.
std::uint64_t fingerprint(const NetworkSpec& spec);

}  // namespace resnet
