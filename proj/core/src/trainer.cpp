#include "resnet/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "json.hpp"

namespace resnet {

using nlohmann::json;

namespace {

// Stream tags for mix_seed.
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kAugmentStream = 2;
constexpr std::uint64_t kEpochStream = 3;
constexpr std::uint64_t kSubsetStream = 4;

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double error_fraction(const TensorF& logits, std::span<const int> labels) {
  const auto pred = argmax_rows(logits);
  std::int64_t wrong = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) wrong += pred[i] != labels[i];
  return static_cast<double>(wrong) / static_cast<double>(labels.size());
}

std::vector<std::int64_t> iota(std::int64_t begin, std::int64_t end) {
  std::vector<std::int64_t> v;
  for (std::int64_t i = begin; i < end; ++i) v.push_back(i);
  return v;
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

TrainData prepare_data(const TrainConfig& cfg, const std::string& dir_override) {
  const DataConfig& dc = cfg.data;
  TrainData out;
  if (dc.source == "cifar") {
    const std::string dir = dir_override.empty() ? dc.dir : dir_override;
    CifarSplit raw = load_cifar_dir(dir);
    if (dc.train_images > 0 && dc.train_images < raw.train.size()) {
      Rng rng(mix_seed(dc.data_seed, kSubsetStream));
      auto perm = permutation(raw.train.size(), rng);
      perm.resize(static_cast<std::size_t>(dc.train_images));
      out.train = subset(raw.train, perm);
    } else {
      out.train = std::move(raw.train);
    }
    if (dc.test_images > 0 && dc.test_images < raw.test.size()) {
      const auto idx = iota(0, dc.test_images);
      out.test = subset(raw.test, idx);
    } else {
      out.test = std::move(raw.test);
    }
  } else {
    const int total = dc.per_class + dc.test_per_class;
    Dataset all = synthetic_dataset(dc.classes, total, dc.data_seed, dc.noise,
                                    cfg.arch.build().input);
    // Labels cycle through the classes, so a leading slice stays balanced.
    const std::int64_t n_train = static_cast<std::int64_t>(dc.classes) * dc.per_class;
    const auto tr = iota(0, n_train);
    const auto te = iota(n_train, all.size());
    out.train = subset(all, tr);
    out.test = subset(all, te);
  }
  out.train.classes = out.test.classes = cfg.arch.classes;
  const TensorF mean = compute_mean(out.train.images, dc.mean);
  normalize(out.train, mean);
  if (out.test.size() > 0) normalize(out.test, mean);
  return out;
}

std::string TrainLog::to_csv() const {
  std::ostringstream os;
  os << "# resnet train log v1\n";
  os << "# arch=" << arch << " seed=" << seed << " train_error/train_loss: running mean over "
     << window << " iterations of minibatch values\n";
  os << "iter,lr,train_error,train_loss,test_error\n";
  for (const auto& r : rows) {
    os << r.iter << ',' << fmt17(r.lr) << ',' << fmt17(r.train_error) << ','
       << fmt17(r.train_loss) << ',' << (r.test_error ? fmt17(*r.test_error) : "") << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------

Trainer::Trainer(TrainConfig cfg, const TrainData& data)
    : cfg_(std::move(cfg)),
      data_(data),
      net_((cfg_.validate(), cfg_.arch.build()), mix_seed(cfg_.seed, kInitStream)),
      errors_(static_cast<std::size_t>(cfg_.log_window)),
      losses_(static_cast<std::size_t>(cfg_.log_window)),
      warmup_(cfg_.opt.warmup ? cfg_.opt.warmup->exit_train_error : 1.0,
              cfg_.opt.warmup.has_value()) {
  if (data_.train.size() < 2) throw Error(ErrorKind::kValue, "Trainer: training set too small");
  const Shape& s = data_.train.images.shape();
  const Shape& in = net_.spec().input;
  if (s.size() != 4 || s[1] != in[0] || s[2] != in[1] || s[3] != in[2]) {
    throw Error(ErrorKind::kShape, "Trainer: images " + shape_string(s) + " do not fit network input " +
                                       shape_string(in));
  }
  net_.set_bn_momentum(cfg_.bn_momentum);
  params_ = net_.params();
  opt_ = OptState<float>::zeros_for(params_);
  log_.arch = net_.spec().arch;
  log_.seed = cfg_.seed;
  log_.window = cfg_.log_window;
}

std::vector<std::int64_t> Trainer::batch_indices(std::int64_t iter) const {
  const std::int64_t m = data_.train.size();
  const std::int64_t b = cfg_.batch_size;
  std::vector<std::int64_t> idx;
  idx.reserve(static_cast<std::size_t>(b));
  for (std::int64_t j = 0; j < b; ++j) {
    const std::int64_t g = iter * b + j;
    const std::int64_t epoch = g / m;
    if (epoch != perm_epoch_) {
      Rng rng(mix_seed(mix_seed(cfg_.seed, kEpochStream), static_cast<std::uint64_t>(epoch)));
      perm_ = permutation(m, rng);
      perm_epoch_ = epoch;
    }
    idx.push_back(perm_[static_cast<std::size_t>(g % m)]);
  }
  return idx;
}

void Trainer::step() {
  const auto idx = batch_indices(iter_);
  Rng aug(mix_seed(mix_seed(cfg_.seed, kAugmentStream), static_cast<std::uint64_t>(iter_)));
  TensorF images = gather_images(data_.train, idx, cfg_.data.augment ? &aug : nullptr);
  std::vector<int> labels = gather_labels(data_.train, idx);

  const double lr = lr_at(cfg_.opt, iter_, warmup_.active());

  // BN running statistics are written during the forward pass; keep a copy so a
  // numeric abort can snapshot the true pre-step state.
  std::vector<TensorF> buffers;
  for (const auto& p : params_) {
    if (!p.trainable) buffers.push_back(*p.tensor);
  }
  const auto abort = [&](const std::string& what) {
    std::size_t k = 0;
    for (const auto& p : params_) {
      if (!p.trainable) *p.tensor = buffers[k++];
    }
    throw NumericAbort("iteration " + std::to_string(iter_) + " (lr " + fmt17(lr) + "): " + what,
                       checkpoint());
  };

  Tape<float> tape;
  ParamBinder<float> binder(tape);
  ForwardContext<float> ctx{binder, Mode::kTrain, {}};
  const Var<float> logits = net_.forward(ctx, tape.input(std::move(images)));
  const double err = error_fraction(logits.value(), labels);
  const Var<float> loss = ad::softmax_cross_entropy(logits, labels);
  const double loss_value = loss.value()[0];
  if (!std::isfinite(loss_value)) abort("non-finite loss");

  GradMap<float> grads = tape.backward(loss, false);
  std::vector<TensorF> g(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (!params_[i].trainable) continue;
    const Var<float> v = binder.find(*params_[i].tensor);
    g[i] = v.valid() && grads.contains(v.id()) ? grads.take(v.id()) : zeros_like(*params_[i].tensor);
    for (float x : g[i].data()) {
      if (!std::isfinite(x)) abort("non-finite gradient in " + params_[i].name);
    }
  }
  sgd_step<float>(params_, g, opt_, cfg_.opt, lr);

  errors_.push(err);
  losses_.push(loss_value);
  ++iter_;
  if (cfg_.opt.warmup) warmup_.update(errors_.mean());

  if (iter_ % cfg_.eval_every == 0 || iter_ == cfg_.total_iters) {
    LogRow row{iter_, lr, errors_.mean(), losses_.mean(), std::nullopt};
    if (data_.test.size() > 0) row.test_error = evaluate(net_, data_.test, cfg_.eval_batch);
    log_.rows.push_back(row);
  }
}

void Trainer::run(std::int64_t until, const std::function<void(const LogRow&)>& on_log) {
  if (until < 0) until = cfg_.total_iters;
  while (iter_ < until) {
    const std::size_t rows = log_.rows.size();
    step();
    if (on_log && log_.rows.size() > rows) on_log(log_.rows.back());
  }
}

Checkpoint Trainer::checkpoint() {
  Checkpoint c;
  c.fingerprint = net_.fingerprint();
  c.iter = static_cast<std::uint64_t>(iter_);
  std::size_t k = 0;
  for (const auto& p : params_) {
    c.tensors.emplace_back(p.name, *p.tensor);
    if (p.trainable) c.tensors.emplace_back("opt.velocity." + p.name, opt_.velocity[k++]);
  }
  const auto window = [](const RunningMean& r) {
    return TensorD({static_cast<std::int64_t>(r.values().size())},
                   std::vector<double>(r.values().begin(), r.values().end()));
  };
  c.tensors.emplace_back("state.error_window", window(errors_));
  c.tensors.emplace_back("state.loss_window", window(losses_));

  json rows = json::array();
  for (const auto& r : log_.rows) {
    rows.push_back({r.iter, r.lr, r.train_error, r.train_loss,
                    r.test_error ? json(*r.test_error) : json(nullptr)});
  }
  json meta;
  meta["arch"] = net_.spec().arch;
  meta["config"] = json::parse(to_json(cfg_));
  meta["warmup_active"] = warmup_.active();
  meta["log"] = rows;
  c.meta = meta.dump();
  return c;
}

void Trainer::restore(const Checkpoint& ckpt) {
  if (ckpt.fingerprint != net_.fingerprint()) {
    throw Error(ErrorKind::kValue, "checkpoint architecture fingerprint mismatch");
  }
  json meta;
  try {
    meta = json::parse(ckpt.meta);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kFormat, std::string("checkpoint metadata is not JSON: ") + e.what());
  }
  TrainConfig saved = parse_config(meta.at("config").dump());
  saved.total_iters = cfg_.total_iters;
  if (to_json(saved) != to_json(cfg_)) {
    throw Error(ErrorKind::kConfig, "checkpoint was written under a different configuration");
  }

  std::size_t k = 0;
  for (const auto& p : params_) {
    const TensorF& t = ckpt.get<float>(p.name);
    if (t.shape() != p.tensor->shape()) {
      throw Error(ErrorKind::kShape, "checkpoint tensor " + p.name + " has shape " +
                                         shape_string(t.shape()));
    }
    *p.tensor = t;
    if (p.trainable) opt_.velocity[k++] = ckpt.get<float>("opt.velocity." + p.name);
  }
  const auto window = [&](const char* name) {
    const TensorD& t = ckpt.get<double>(name);
    return std::deque<double>(t.data().begin(), t.data().end());
  };
  errors_.restore(window("state.error_window"));
  losses_.restore(window("state.loss_window"));
  warmup_.force(meta.at("warmup_active").get<bool>());
  log_.rows.clear();
  for (const auto& r : meta.at("log")) {
    LogRow row{r.at(0).get<std::int64_t>(), r.at(1).get<double>(), r.at(2).get<double>(),
               r.at(3).get<double>(), std::nullopt};
    if (!r.at(4).is_null()) row.test_error = r.at(4).get<double>();
    log_.rows.push_back(row);
  }
  iter_ = static_cast<std::int64_t>(ckpt.iter);
}

// ---------------------------------------------------------------------------

double evaluate(NetworkF& net, const Dataset& data, int batch) {
  if (data.size() == 0) throw Error(ErrorKind::kValue, "evaluate: empty dataset");
  std::int64_t wrong = 0;
  for (std::int64_t begin = 0; begin < data.size(); begin += batch) {
    const auto idx = iota(begin, std::min<std::int64_t>(begin + batch, data.size()));
    const TensorF logits = net.logits(gather_images(data, idx, nullptr), Mode::kInfer);
    const auto labels = gather_labels(data, idx);
    const auto pred = argmax_rows(logits);
    for (std::size_t i = 0; i < labels.size(); ++i) wrong += pred[i] != labels[i];
  }
  return static_cast<double>(wrong) / static_cast<double>(data.size());
}

double ResponseStats::median() const {
  if (in_order.empty()) throw Error(ErrorKind::kValue, "median of an empty response list");
  std::vector<double> v;
  for (const auto& r : in_order) v.push_back(r.std);
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string ResponseStats::to_csv() const {
  std::ostringstream os;
  os << "# resnet layer responses v1: std of each 3x3 conv output after BN, before ReLU\n";
  os << "index,layer,std,rank\n";
  for (std::size_t i = 0; i < in_order.size(); ++i) {
    const auto it = std::find_if(descending.begin(), descending.end(),
                                 [&](const LayerResponse& r) { return r.layer == in_order[i].layer; });
    os << i << ',' << in_order[i].layer << ',' << fmt17(in_order[i].std) << ','
       << (it - descending.begin()) << '\n';
  }
  return os.str();
}

ResponseStats layer_response_std(NetworkF& net, const TensorF& sample, Mode mode, int batch) {
  if (sample.rank() != 4 || sample.dim(0) == 0) {
    throw Error(ErrorKind::kShape, "layer_response_std: sample must be a nonempty [N,C,H,W]");
  }
  struct Acc {
    std::string layer;
    double sum = 0.0, sumsq = 0.0;
    std::int64_t n = 0;
  };
  std::vector<Acc> acc;
  const std::int64_t per = sample.dim(1) * sample.dim(2) * sample.dim(3);
  for (std::int64_t begin = 0; begin < sample.dim(0); begin += batch) {
    const std::int64_t end = std::min<std::int64_t>(begin + batch, sample.dim(0));
    TensorF x({end - begin, sample.dim(1), sample.dim(2), sample.dim(3)},
              std::vector<float>(sample.ptr() + begin * per, sample.ptr() + end * per));
    Tape<float> tape;
    ParamBinder<float> binder(tape);
    std::size_t slot = 0;
    ForwardContext<float> ctx{binder, mode, [&](const std::string& layer, const Var<float>& y) {
                                if (slot == acc.size()) acc.push_back({layer});
                                Acc& a = acc[slot++];
                                for (float v : y.value().data()) {
                                  a.sum += v;
                                  a.sumsq += static_cast<double>(v) * v;
                                }
                                a.n += static_cast<std::int64_t>(y.value().size());
                              }};
    net.forward(ctx, tape.input(std::move(x)));
  }
  ResponseStats stats;
  for (const auto& a : acc) {
    const double mean = a.sum / static_cast<double>(a.n);
    const double var = std::max(0.0, a.sumsq / static_cast<double>(a.n) - mean * mean);
    stats.in_order.push_back({a.layer, std::sqrt(var)});
  }
  stats.descending = stats.in_order;
  std::stable_sort(stats.descending.begin(), stats.descending.end(),
                   [](const LayerResponse& a, const LayerResponse& b) { return a.std > b.std; });
  return stats;
}

TensorF leading_images(const Dataset& d, std::int64_t count) {
  const auto idx = iota(0, std::min(count, d.size()));
  return gather_images(d, idx, nullptr);
}

LoadedModel load_model(const Checkpoint& ckpt) {
  json meta;
  try {
    meta = json::parse(ckpt.meta);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kFormat, std::string("checkpoint metadata is not JSON: ") + e.what());
  }
  if (!meta.contains("config")) throw Error(ErrorKind::kFormat, "checkpoint metadata lacks a config");
  TrainConfig cfg = parse_config(meta.at("config").dump());
  LoadedModel m{cfg, NetworkF(cfg.arch.build(), 0)};
  if (m.net.fingerprint() != ckpt.fingerprint) {
    throw Error(ErrorKind::kValue, "checkpoint architecture fingerprint mismatch");
  }
  m.net.set_bn_momentum(cfg.bn_momentum);
  for (const auto& p : m.net.params()) {
    const TensorF& t = ckpt.get<float>(p.name);
    if (t.shape() != p.tensor->shape()) {
      throw Error(ErrorKind::kShape, "checkpoint tensor " + p.name + " has the wrong shape");
    }
    *p.tensor = t;
  }
  return m;
}

}  // namespace resnet
