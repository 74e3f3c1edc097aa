#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "resnet/arch.hpp"
#include "resnet/blocks.hpp"

namespace resnet {

/// Executable form of a NetworkSpec: owns every weight and BN buffer.
template <typename T>
class Network {
 public:
  struct Conv {
    ConvParams<T> params;
  };
  struct Pool {
    int k = 3, stride = 2, pad = 1;
  };
  struct Relu {};
  struct Gap {};
  using Body = std::variant<Conv, BNParams<T>, Relu, Pool, Gap, LinearParams<T>,
                            BasicBlockParams<T>, BottleneckParams<T>>;
  struct Layer {
    std::string name;
    Body body;
  };

  /// He-initialized weights drawn from a generator seeded with `seed`; BN
  /// gamma 1, beta 0, running mean 0, running var 1.
  Network(NetworkSpec spec, std::uint64_t seed);

  const NetworkSpec& spec() const { return spec_; }
  std::uint64_t fingerprint() const { return resnet::fingerprint(spec_); }
  std::vector<Layer>& layers() { return layers_; }

  /// Records the forward pass on ctx's tape. x is [N,C,H,W]; returns logits [N,classes].
  Var<T> forward(ForwardContext<T>& ctx, const Var<T>& x);
  /// Tensor-level convenience on a throwaway tape.
  Tensor<T> logits(const Tensor<T>& x, Mode mode);

  /// Trainable tensors followed by BN buffers, in layer order with dotted names.
  std::vector<ParamRef<T>> params();
  std::int64_t num_trainable();

  /// Zeros the convolution weights of every residual branch.
  void zero_residuals();
  /// Sets every BN momentum (the running-average keep factor).
  void set_bn_momentum(double momentum);

 private:
  NetworkSpec spec_;
  std::vector<Layer> layers_;
};

using NetworkF = Network<float>;
using NetworkD = Network<double>;

}  // namespace resnet
