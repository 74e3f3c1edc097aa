#include "resnet/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <climits>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

namespace resnet {

namespace {

constexpr char kMagic[8] = {'R', 'E', 'S', 'N', 'E', 'T', 'C', 'K'};

class Writer {
 public:
  template <typename U>
  void put(U v) {
    unsigned char b[sizeof(U)];
    std::memcpy(b, &v, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(U));
    out_.insert(out_.end(), b, b + sizeof(U));
  }
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), c, c + n);
  }
  std::vector<std::uint8_t>& data() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  template <typename U>
  U get(const char* what) {
    need(sizeof(U), what);
    unsigned char b[sizeof(U)];
    std::memcpy(b, in_.data() + pos_, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(U));
    pos_ += sizeof(U);
    U v;
    std::memcpy(&v, b, sizeof(U));
    return v;
  }
  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    need(n, what);
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) const {
    if (in_.size() - pos_ < n) {
      throw Error(ErrorKind::kFormat, std::string("checkpoint truncated while reading ") + what);
    }
  }
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

template <typename T>
void put_tensor(Writer& w, const std::string& name, const Tensor<T>& t) {
  for (T v : t.data()) {
    if (!std::isfinite(v)) {
      throw Error(ErrorKind::kNumeric, "checkpoint: tensor " + name + " holds a non-finite value");
    }
  }
  w.put<std::uint8_t>(std::is_same_v<T, float> ? 0 : 1);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(t.rank()));
  for (auto e : t.shape()) w.put<std::uint64_t>(static_cast<std::uint64_t>(e));
  for (T v : t.data()) w.put<T>(v);
}

template <typename T>
Tensor<T> get_tensor(Reader& r, const Shape& shape) {
  const std::int64_t n = checked_numel(shape);
  if (r.remaining() / sizeof(T) < static_cast<std::size_t>(n)) {
    throw Error(ErrorKind::kFormat, "checkpoint truncated inside tensor data");
  }
  std::vector<T> data(static_cast<std::size_t>(n));
  for (auto& v : data) v = r.get<T>("tensor data");
  return Tensor<T>(shape, std::move(data));
}

}  // namespace

const AnyTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

template <typename T>
const Tensor<T>& Checkpoint::get(const std::string& name) const {
  const AnyTensor* t = find(name);
  if (!t) throw Error(ErrorKind::kFormat, "checkpoint has no tensor " + name);
  const auto* typed = std::get_if<Tensor<T>>(t);
  if (!typed) throw Error(ErrorKind::kFormat, "checkpoint tensor " + name + " has another dtype");
  return *typed;
}

template const TensorF& Checkpoint::get<float>(const std::string&) const;
template const TensorD& Checkpoint::get<double>(const std::string&) const;

std::vector<std::uint8_t> save_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint64_t>(ckpt.fingerprint);
  w.put<std::uint64_t>(ckpt.iter);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ckpt.meta.size()));
  w.bytes(ckpt.meta.data(), ckpt.meta.size());
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ckpt.tensors.size()));
  std::set<std::string> names;
  for (const auto& [name, t] : ckpt.tensors) {
    if (name.size() > 0xffff) throw Error(ErrorKind::kValue, "checkpoint: tensor name too long");
    if (!names.insert(name).second) {
      throw Error(ErrorKind::kValue, "checkpoint: duplicate tensor name " + name);
    }
    w.put<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
    w.bytes(name.data(), name.size());
    std::visit([&](const auto& tensor) { put_tensor(w, name, tensor); }, t);
  }
  return std::move(w.data());
}

Checkpoint load_checkpoint(std::span<const std::uint8_t> bytes,
                           std::optional<std::uint64_t> expected_fingerprint) {
  Reader r(bytes);
  const auto magic = r.take(sizeof kMagic, "magic");
  if (std::memcmp(magic.data(), kMagic, sizeof kMagic) != 0) {
    throw Error(ErrorKind::kFormat, "not a checkpoint file (corrupt magic)");
  }
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw Error(ErrorKind::kFormat, "unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.fingerprint = r.get<std::uint64_t>("fingerprint");
  if (expected_fingerprint && *expected_fingerprint != ckpt.fingerprint) {
    throw Error(ErrorKind::kValue, "checkpoint architecture fingerprint mismatch");
  }
  ckpt.iter = r.get<std::uint64_t>("iter");
  const auto meta_len = r.get<std::uint32_t>("metadata length");
  const auto meta = r.take(meta_len, "metadata");
  ckpt.meta.assign(meta.begin(), meta.end());
  const auto count = r.get<std::uint32_t>("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.get<std::uint16_t>("tensor name length");
    const auto name_bytes = r.take(name_len, "tensor name");
    std::string name(name_bytes.begin(), name_bytes.end());
    const auto dtype = r.get<std::uint8_t>("dtype");
    const auto rank = r.get<std::uint8_t>("rank");
    Shape shape;
    for (int d = 0; d < rank; ++d) {
      const auto e = r.get<std::uint64_t>("extent");
      if (e > static_cast<std::uint64_t>(INT64_MAX)) {
        throw Error(ErrorKind::kFormat, "checkpoint: extent out of range in " + name);
      }
      shape.push_back(static_cast<std::int64_t>(e));
    }
    if (dtype == 0) {
      ckpt.tensors.emplace_back(std::move(name), get_tensor<float>(r, shape));
    } else if (dtype == 1) {
      ckpt.tensors.emplace_back(std::move(name), get_tensor<double>(r, shape));
    } else {
      throw Error(ErrorKind::kFormat, "checkpoint: unknown dtype " + std::to_string(dtype));
    }
  }
  if (r.remaining() != 0) throw Error(ErrorKind::kFormat, "checkpoint has trailing bytes");
  return ckpt;
}

void write_checkpoint_file(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = save_checkpoint(ckpt);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::kIo, "cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorKind::kIo, "write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorKind::kIo, "cannot rename to " + path.string() + ": " + ec.message());
}

Checkpoint read_checkpoint_file(const std::filesystem::path& path,
                                std::optional<std::uint64_t> expected_fingerprint) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open checkpoint " + path.string());
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in),
                                        std::istreambuf_iterator<char>()};
  return load_checkpoint(bytes, expected_fingerprint);
}

}  // namespace resnet
