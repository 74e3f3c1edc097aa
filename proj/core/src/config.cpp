#include "resnet/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace resnet {

using nlohmann::json;

NetworkSpec ArchConfig::build() const {
  if (family == "cifar") return build_cifar(n, residual, widths, option, classes);
  if (family == "imagenet") return build_imagenet(depth, residual, option, classes);
  throw Error(ErrorKind::kConfig, "arch.family must be \"cifar\" or \"imagenet\"");
}

void TrainConfig::validate() const {
  const auto bad = [](const std::string& what) { return Error(ErrorKind::kConfig, what); };
  opt.validate();
  if (arch.family != "cifar" && arch.family != "imagenet") {
    throw bad("arch.family must be \"cifar\" or \"imagenet\"");
  }
  if (arch.family == "cifar" && arch.n < 1) throw bad("arch.n must be >= 1");
  if (arch.classes < 2) throw bad("arch.classes must be >= 2");
  if (!(bn_momentum >= 0.0 && bn_momentum < 1.0)) throw bad("bn_momentum must lie in [0, 1)");
  if (batch_size < 2) throw bad("batch_size must be >= 2 (batch norm needs two samples)");
  if (total_iters <= 0) throw bad("total_iters must be > 0");
  if (eval_every <= 0) throw bad("eval_every must be > 0");
  if (log_window < 1) throw bad("log_window must be >= 1");
  if (eval_batch < 1) throw bad("eval_batch must be >= 1");
  if (data.source != "cifar" && data.source != "synthetic") {
    throw bad("data.source must be \"cifar\" or \"synthetic\"");
  }
  if (data.train_images < 0 || data.test_images < 0) throw bad("data image counts must be >= 0");
  if (data.source == "synthetic") {
    if (data.classes != arch.classes) throw bad("data.classes must equal arch.classes");
    if (data.per_class < 1 || data.test_per_class < 0) throw bad("synthetic sizes must be positive");
    if (!(data.noise >= 0.0)) throw bad("data.noise must be >= 0");
  }
}

TrainConfig cifar_recipe(int n, bool residual) {
  TrainConfig c;
  c.arch.family = "cifar";
  c.arch.n = n;
  c.arch.residual = residual;
  c.opt.milestones = {32000, 48000};
  if (n >= 18) c.opt.warmup = Warmup{};
  c.total_iters = 64000;
  c.batch_size = 128;
  c.eval_every = 1000;
  c.data.source = "cifar";
  return c;
}

namespace {

std::string mean_name(MeanMode m) { return m == MeanMode::kPerPixel ? "per-pixel" : "per-channel"; }

MeanMode parse_mean(const std::string& s) {
  if (s == "per-pixel") return MeanMode::kPerPixel;
  if (s == "per-channel") return MeanMode::kPerChannel;
  throw Error(ErrorKind::kConfig, "data.mean must be \"per-pixel\" or \"per-channel\"");
}

// Reads keys from one JSON object, rejecting unknown ones on finish().
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw Error(ErrorKind::kConfig, where() + " must be an object");
  }

  template <typename V>
  void get(const char* key, V& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<V>();
    } catch (const json::exception& e) {
      throw Error(ErrorKind::kConfig, where() + "." + key + ": " + e.what());
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw Error(ErrorKind::kConfig, "unknown key " + where() + "." + k);
    }
  }

  std::string where() const { return path_; }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace

std::string to_json(const TrainConfig& c, int indent) {
  json j;
  j["version"] = 1;
  j["arch"] = {{"family", c.arch.family},
               {"n", c.arch.n},
               {"depth", c.arch.depth},
               {"residual", c.arch.residual},
               {"option", std::string(1, to_char(c.arch.option))},
               {"widths", c.arch.widths},
               {"classes", c.arch.classes}};
  json opt = {{"base_lr", c.opt.base_lr},
              {"momentum", c.opt.momentum},
              {"weight_decay", c.opt.weight_decay},
              {"milestones", c.opt.milestones},
              {"decay_all", c.opt.decay_all}};
  opt["warmup"] = c.opt.warmup ? json{{"lr", c.opt.warmup->lr},
                                      {"exit_train_error", c.opt.warmup->exit_train_error}}
                               : json(nullptr);
  j["opt"] = opt;
  j["bn_momentum"] = c.bn_momentum;
  j["batch_size"] = c.batch_size;
  j["total_iters"] = c.total_iters;
  j["seed"] = c.seed;
  j["eval_every"] = c.eval_every;
  j["log_window"] = c.log_window;
  j["eval_batch"] = c.eval_batch;
  j["data"] = {{"source", c.data.source},
               {"dir", c.data.dir},
               {"train_images", c.data.train_images},
               {"test_images", c.data.test_images},
               {"mean", mean_name(c.data.mean)},
               {"augment", c.data.augment},
               {"classes", c.data.classes},
               {"per_class", c.data.per_class},
               {"test_per_class", c.data.test_per_class},
               {"noise", c.data.noise},
               {"data_seed", c.data.data_seed}};
  return j.dump(indent);
}

TrainConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::kConfig, std::string("config is not valid JSON: ") + e.what());
  }
  TrainConfig c;
  Reader root(j, "config");
  int version = 1;
  root.get("version", version);
  if (version != 1) throw Error(ErrorKind::kConfig, "unsupported config version " + std::to_string(version));

  if (const json* a = root.child("arch")) {
    Reader r(*a, "arch");
    r.get("family", c.arch.family);
    r.get("n", c.arch.n);
    r.get("depth", c.arch.depth);
    r.get("residual", c.arch.residual);
    std::string option(1, to_char(c.arch.option));
    r.get("option", option);
    c.arch.option = parse_shortcut_option(option);
    r.get("widths", c.arch.widths);
    r.get("classes", c.arch.classes);
    r.finish();
  }
  if (const json* o = root.child("opt")) {
    Reader r(*o, "opt");
    r.get("base_lr", c.opt.base_lr);
    r.get("momentum", c.opt.momentum);
    r.get("weight_decay", c.opt.weight_decay);
    r.get("milestones", c.opt.milestones);
    r.get("decay_all", c.opt.decay_all);
    const json* w = r.child("warmup");
    if (w && !w->is_null()) {
      Reader wr(*w, "opt.warmup");
      Warmup warm;
      wr.get("lr", warm.lr);
      wr.get("exit_train_error", warm.exit_train_error);
      wr.finish();
      c.opt.warmup = warm;
    }
    r.finish();
  }
  root.get("bn_momentum", c.bn_momentum);
  root.get("batch_size", c.batch_size);
  root.get("total_iters", c.total_iters);
  root.get("seed", c.seed);
  root.get("eval_every", c.eval_every);
  root.get("log_window", c.log_window);
  root.get("eval_batch", c.eval_batch);
  if (const json* d = root.child("data")) {
    Reader r(*d, "data");
    r.get("source", c.data.source);
    r.get("dir", c.data.dir);
    r.get("train_images", c.data.train_images);
    r.get("test_images", c.data.test_images);
    std::string mean = mean_name(c.data.mean);
    r.get("mean", mean);
    c.data.mean = parse_mean(mean);
    r.get("augment", c.data.augment);
    r.get("classes", c.data.classes);
    r.get("per_class", c.data.per_class);
    r.get("test_per_class", c.data.test_per_class);
    r.get("noise", c.data.noise);
    r.get("data_seed", c.data.data_seed);
    r.finish();
  }
  root.finish();
  c.validate();
  return c;
}

TrainConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot open config " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

}  // namespace resnet
