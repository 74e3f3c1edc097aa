#include "resnet/arch.hpp"

#include <charconv>
#include <sstream>

namespace resnet {

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::kConv: return "conv";
    case LayerKind::kBatchNorm: return "bn";
    case LayerKind::kRelu: return "relu";
    case LayerKind::kMaxPool: return "maxpool";
    case LayerKind::kGlobalAvgPool: return "gap";
    case LayerKind::kLinear: return "linear";
    case LayerKind::kBasicBlock: return "block-basic";
    case LayerKind::kBottleneckBlock: return "block-bottleneck";
    case LayerKind::kAdd: return "add";
  }
  return "unknown";
}

std::string_view to_string(Family family) {
  switch (family) {
    case Family::kCifarPlain: return "cifar-plain";
    case Family::kCifarResnet: return "cifar-resnet";
    case Family::kImagenetPlain: return "imagenet-plain";
    case Family::kImagenetResnet: return "imagenet-resnet";
  }
  return "unknown";
}

char to_char(ShortcutOption option) {
  switch (option) {
    case ShortcutOption::kA: return 'A';
    case ShortcutOption::kB: return 'B';
    case ShortcutOption::kC: return 'C';
  }
  return '?';
}

ShortcutOption parse_shortcut_option(std::string_view text) {
  if (text == "A" || text == "a") return ShortcutOption::kA;
  if (text == "B" || text == "b") return ShortcutOption::kB;
  if (text == "C" || text == "c") return ShortcutOption::kC;
  throw Error(ErrorKind::kValue, "shortcut option must be A, B or C, got '" + std::string(text) + "'");
}

namespace {

LayerSpec conv(std::string name, std::int64_t out, int k, int stride) {
  LayerSpec l;
  l.kind = LayerKind::kConv;
  l.name = std::move(name);
  l.out_channels = out;
  l.kernel = k;
  l.stride = stride;
  l.pad = (k - 1) / 2;
  return l;
}

LayerSpec simple(LayerKind kind, std::string name) {
  LayerSpec l;
  l.kind = kind;
  l.name = std::move(name);
  return l;
}

ShortcutKind pick_shortcut(bool residual, ShortcutOption option, std::int64_t in,
                           std::int64_t out, int stride) {
  if (!residual) return ShortcutKind::kNone;
  const bool same = in == out && stride == 1;
  switch (option) {
    case ShortcutOption::kA: return same ? ShortcutKind::kIdentity : ShortcutKind::kZeroPadA;
    case ShortcutOption::kB: return same ? ShortcutKind::kIdentity : ShortcutKind::kProjectionB;
    case ShortcutOption::kC: return ShortcutKind::kProjectionB;
  }
  return ShortcutKind::kNone;
}

LayerSpec block(LayerKind kind, std::string name, std::int64_t out, std::int64_t width, int stride,
                ShortcutKind shortcut) {
  LayerSpec l;
  l.kind = kind;
  l.name = std::move(name);
  l.out_channels = out;
  l.width = width;
  l.stride = stride;
  l.shortcut = shortcut;
  return l;
}

void add_head(NetworkSpec& spec, std::int64_t classes) {
  spec.layers.push_back(simple(LayerKind::kGlobalAvgPool, "pool"));
  LayerSpec fc = simple(LayerKind::kLinear, "fc");
  fc.out_channels = classes;
  spec.layers.push_back(fc);
}

std::int64_t ceil_div(std::int64_t a, std::int64_t b) { return (a + b - 1) / b; }

}  // namespace

NetworkSpec build_cifar(int n, bool residual, std::array<std::int64_t, 3> widths,
                        ShortcutOption option, int classes) {
  if (n < 1) throw Error(ErrorKind::kValue, "build_cifar: n must be at least 1");
  for (auto w : widths) {
    if (w < 1) throw Error(ErrorKind::kValue, "build_cifar: widths must be positive");
  }
  NetworkSpec spec;
  spec.family = residual ? Family::kCifarResnet : Family::kCifarPlain;
  spec.depth = 6 * n + 2;
  spec.arch = std::string(residual ? "resnet" : "plain") + "-cifar-" + std::to_string(spec.depth);
  spec.option = option;
  spec.widths.assign(widths.begin(), widths.end());
  spec.input = {3, 32, 32};
  spec.classes = classes;

  spec.layers.push_back(conv("conv1", widths[0], 3, 1));
  spec.layers.push_back(simple(LayerKind::kBatchNorm, "bn1"));
  spec.layers.push_back(simple(LayerKind::kRelu, "relu1"));
  std::int64_t in = widths[0];
  for (int stage = 0; stage < 3; ++stage) {
    for (int b = 0; b < n; ++b) {
      const int stride = (stage > 0 && b == 0) ? 2 : 1;
      const std::int64_t out = widths[stage];
      spec.layers.push_back(block(LayerKind::kBasicBlock,
                                  "conv" + std::to_string(stage + 2) + "_" + std::to_string(b + 1),
                                  out, 0, stride, pick_shortcut(residual, option, in, out, stride)));
      in = out;
    }
  }
  add_head(spec, classes);
  return spec;
}

NetworkSpec build_imagenet(int depth, bool residual, ShortcutOption option, int classes) {
  std::array<int, 4> counts{};
  bool bottleneck = false;
  switch (depth) {
    case 18: counts = {2, 2, 2, 2}; break;
    case 34: counts = {3, 4, 6, 3}; break;
    case 50: counts = {3, 4, 6, 3}; bottleneck = true; break;
    case 101: counts = {3, 4, 23, 3}; bottleneck = true; break;
    case 152: counts = {3, 8, 36, 3}; bottleneck = true; break;
    default:
      throw Error(ErrorKind::kValue, "build_imagenet: unsupported depth " + std::to_string(depth) +
                                         " (expected 18, 34, 50, 101 or 152)");
  }
  NetworkSpec spec;
  spec.family = residual ? Family::kImagenetResnet : Family::kImagenetPlain;
  spec.depth = depth;
  spec.arch = std::string(residual ? "resnet" : "plain") + "-imagenet-" + std::to_string(depth);
  spec.option = option;
  spec.widths = {64, 128, 256, 512};
  spec.input = {3, 224, 224};
  spec.classes = classes;

  spec.layers.push_back(conv("conv1", 64, 7, 2));
  spec.layers.push_back(simple(LayerKind::kBatchNorm, "bn1"));
  spec.layers.push_back(simple(LayerKind::kRelu, "relu1"));
  LayerSpec pool = simple(LayerKind::kMaxPool, "pool1");
  pool.kernel = 3;
  pool.stride = 2;
  pool.pad = 1;
  spec.layers.push_back(pool);

  std::int64_t in = 64;
  for (int stage = 0; stage < 4; ++stage) {
    const std::int64_t width = spec.widths[stage];
    const std::int64_t out = bottleneck ? 4 * width : width;
    for (int b = 0; b < counts[stage]; ++b) {
      const int stride = (stage > 0 && b == 0) ? 2 : 1;
      const std::string name = "conv" + std::to_string(stage + 2) + "_" + std::to_string(b + 1);
      const ShortcutKind sc = pick_shortcut(residual, option, in, out, stride);
      spec.layers.push_back(bottleneck
                                ? block(LayerKind::kBottleneckBlock, name, out, width, stride, sc)
                                : block(LayerKind::kBasicBlock, name, out, 0, stride, sc));
      in = out;
    }
  }
  add_head(spec, classes);
  return spec;
}

NetworkSpec build_named(std::string_view arch, ShortcutOption option) {
  const auto bad = [&] {
    return Error(ErrorKind::kValue, "unknown architecture '" + std::string(arch) +
                                        "' (expected {resnet|plain}-{cifar|imagenet}-<depth>)");
  };
  const auto first = arch.find('-');
  const auto second = arch.find('-', first == std::string_view::npos ? 0 : first + 1);
  if (first == std::string_view::npos || second == std::string_view::npos) throw bad();
  const std::string_view kind = arch.substr(0, first);
  const std::string_view family = arch.substr(first + 1, second - first - 1);
  const std::string_view digits = arch.substr(second + 1);
  int depth = 0;
  const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), depth);
  if (ec != std::errc() || ptr != digits.data() + digits.size()) throw bad();
  if (kind != "resnet" && kind != "plain") throw bad();
  const bool residual = kind == "resnet";
  if (family == "imagenet") return build_imagenet(depth, residual, option);
  if (family == "cifar") {
    if (depth < 8 || (depth - 2) % 6 != 0) {
      throw Error(ErrorKind::kValue, "CIFAR depth must be 6n+2 with n >= 1, got " +
                                         std::to_string(depth));
    }
    return build_cifar((depth - 2) / 6, residual, {16, 32, 64}, option);
  }
  throw bad();
}

// ---------------------------------------------------------------------------

std::vector<LayerSpec> expand_layer(const LayerSpec& layer) {
  if (layer.kind != LayerKind::kBasicBlock && layer.kind != LayerKind::kBottleneckBlock) {
    return {layer};
  }
  const std::string& p = layer.name;
  std::vector<LayerSpec> out;
  if (layer.kind == LayerKind::kBasicBlock) {
    out.push_back(conv(p + ".conv1", layer.out_channels, 3, layer.stride));
    out.push_back(simple(LayerKind::kBatchNorm, p + ".bn1"));
    out.push_back(simple(LayerKind::kRelu, p + ".relu1"));
    out.push_back(conv(p + ".conv2", layer.out_channels, 3, 1));
    out.push_back(simple(LayerKind::kBatchNorm, p + ".bn2"));
  } else {
    out.push_back(conv(p + ".conv1", layer.width, 1, layer.stride));
    out.push_back(simple(LayerKind::kBatchNorm, p + ".bn1"));
    out.push_back(simple(LayerKind::kRelu, p + ".relu1"));
    out.push_back(conv(p + ".conv2", layer.width, 3, 1));
    out.push_back(simple(LayerKind::kBatchNorm, p + ".bn2"));
    out.push_back(simple(LayerKind::kRelu, p + ".relu2"));
    out.push_back(conv(p + ".conv3", layer.out_channels, 1, 1));
    out.push_back(simple(LayerKind::kBatchNorm, p + ".bn3"));
  }
  const std::string last_relu =
      p + (layer.kind == LayerKind::kBasicBlock ? ".relu2" : ".relu3");
  if (layer.shortcut == ShortcutKind::kNone) {
    out.push_back(simple(LayerKind::kRelu, last_relu));
    return out;
  }
  if (layer.shortcut == ShortcutKind::kProjectionB) {
    LayerSpec sc = conv(p + ".shortcut.conv", layer.out_channels, 1, layer.stride);
    sc.branch = Branch::kShortcut;
    out.push_back(sc);
    LayerSpec bn = simple(LayerKind::kBatchNorm, p + ".shortcut.bn");
    bn.branch = Branch::kShortcut;
    out.push_back(bn);
  }
  LayerSpec add = simple(LayerKind::kAdd, p + ".add");
  add.shortcut = layer.shortcut;
  add.stride = layer.stride;
  add.out_channels = layer.out_channels;
  out.push_back(add);
  out.push_back(simple(LayerKind::kRelu, last_relu));
  return out;
}

std::vector<LayerSpec> expand(const NetworkSpec& spec) {
  std::vector<LayerSpec> out;
  for (const auto& layer : spec.layers) {
    auto sub = expand_layer(layer);
    out.insert(out.end(), sub.begin(), sub.end());
  }
  return out;
}

int count_weighted_layers(const NetworkSpec& spec) {
  int n = 0;
  for (const auto& l : expand(spec)) {
    if (l.branch == Branch::kMain && (l.kind == LayerKind::kConv || l.kind == LayerKind::kLinear)) {
      ++n;
    }
  }
  return n;
}

namespace {

// Shape after one primitive layer; fills params and multiply-adds per image.
Shape step(const LayerSpec& l, const Shape& in, AuditRow& row) {
  const auto fail = [&](const std::string& why) {
    return Error(ErrorKind::kShape, "layer " + l.name + ": " + why + " (input " +
                                        shape_string(in) + ")");
  };
  switch (l.kind) {
    case LayerKind::kConv: {
      if (in.size() != 4) throw fail("convolution needs a rank-4 input");
      const std::int64_t oh = window_out_extent(in[2], l.kernel, l.stride, l.pad);
      const std::int64_t ow = window_out_extent(in[3], l.kernel, l.stride, l.pad);
      const std::int64_t per_out = in[1] * l.kernel * l.kernel;
      row.params = l.out_channels * per_out;
      row.madds = oh * ow * l.out_channels * per_out;
      return {in[0], l.out_channels, oh, ow};
    }
    case LayerKind::kBatchNorm:
      if (in.size() != 4) throw fail("batch norm needs a rank-4 input");
      row.params = 2 * in[1];
      return in;
    case LayerKind::kRelu:
      return in;
    case LayerKind::kMaxPool: {
      if (in.size() != 4) throw fail("pooling needs a rank-4 input");
      return {in[0], in[1], window_out_extent(in[2], l.kernel, l.stride, l.pad),
              window_out_extent(in[3], l.kernel, l.stride, l.pad)};
    }
    case LayerKind::kGlobalAvgPool:
      if (in.size() != 4) throw fail("global pooling needs a rank-4 input");
      return {in[0], in[1], 1, 1};
    case LayerKind::kLinear: {
      if (in.size() != 4 || in[2] != 1 || in[3] != 1) {
        throw fail("the linear head must follow global pooling");
      }
      row.params = in[1] * l.out_channels + l.out_channels;
      row.madds = in[1] * l.out_channels;
      return {in[0], l.out_channels};
    }
    default:
      throw fail("not a primitive layer");
  }
}

}  // namespace

AuditReport shape_audit(const NetworkSpec& spec, const Shape& input) {
  Shape cur = input;
  if (cur.size() == 3) cur.insert(cur.begin(), 1);
  checked_numel(cur);
  if (cur.size() != 4) throw Error(ErrorKind::kShape, "shape_audit: input must be [N,C,H,W]");
  if (!spec.input.empty() && cur[1] != spec.input[0]) {
    throw Error(ErrorKind::kShape, "shape_audit: network expects " + std::to_string(spec.input[0]) +
                                       " input channels, got " + std::to_string(cur[1]));
  }

  AuditReport report;
  report.arch = spec.arch;
  report.input = cur;
  for (const auto& layer : spec.layers) {
    const Shape block_in = cur;
    Shape shortcut = block_in;
    for (const auto& l : expand_layer(layer)) {
      AuditRow row;
      row.name = l.name;
      row.kind = l.kind;
      if (l.kind == LayerKind::kAdd) {
        if (l.shortcut == ShortcutKind::kIdentity) {
          shortcut = block_in;
        } else if (l.shortcut == ShortcutKind::kZeroPadA) {
          if (l.out_channels < block_in[1]) {
            throw Error(ErrorKind::kShape, "layer " + l.name + ": zero-pad shortcut cannot shrink channels");
          }
          shortcut = {block_in[0], l.out_channels, ceil_div(block_in[2], l.stride),
                      ceil_div(block_in[3], l.stride)};
        }
        if (shortcut != cur) {
          throw Error(ErrorKind::kShape, "layer " + l.name + ": residual " + shape_string(cur) +
                                             " and shortcut " + shape_string(shortcut) +
                                             " cannot be added");
        }
        row.out_shape = cur;
      } else if (l.branch == Branch::kShortcut) {
        shortcut = step(l, l.kind == LayerKind::kConv ? block_in : shortcut, row);
        row.out_shape = shortcut;
      } else {
        cur = step(l, cur, row);
        row.out_shape = cur;
      }
      report.total_params += row.params;
      report.total_madds += row.madds;
      report.rows.push_back(std::move(row));
    }
  }
  return report;
}

std::string AuditReport::to_csv() const {
  std::ostringstream os;
  os << "# resnet audit v1\n";
  os << "# arch=" << arch << " input=" << shape_string(input) << "\n";
  os << "# params: conv weights (no bias) + batchnorm gamma,beta + linear weight,bias\n";
  os << "# madds: multiply-adds per image in conv and linear layers; bn/relu/pool/add count 0\n";
  os << "name,kind,out_shape,params,madds\n";
  for (const auto& r : rows) {
    os << r.name << ',' << to_string(r.kind) << ',' << shape_string(r.out_shape) << ','
       << r.params << ',' << r.madds << '\n';
  }
  os << "TOTAL,,," << total_params << ',' << total_madds << '\n';
  return os.str();
}

std::int64_t count_params(const NetworkSpec& spec) {
  return shape_audit(spec, spec.input).total_params;
}

std::int64_t count_flops(const NetworkSpec& spec, const Shape& input) {
  return shape_audit(spec, input).total_madds;
}

std::uint64_t fingerprint(const NetworkSpec& spec) {
  std::ostringstream os;
  os << to_string(spec.family) << '|' << spec.classes << '|' << shape_string(spec.input) << '|';
  for (const auto& l : spec.layers) {
    os << to_string(l.kind) << ':' << l.name << ':' << l.out_channels << ':' << l.kernel << ':'
       << l.stride << ':' << l.pad << ':' << l.width << ':' << to_string(l.shortcut) << ';';
  }
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : os.str()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace resnet
