#include "resnet/experiment.hpp"

#include <cstdio>
#include <map>
#include <sstream>

namespace resnet {

DegradationPreset desk_preset() {
  DegradationPreset p;
  p.name = "desk";
  p.depths = {20, 56};
  p.seeds = 3;
  TrainConfig& c = p.base;
  c.arch.widths = {8, 16, 32};
  c.opt.milestones = {2000, 3000};
  c.batch_size = 128;
  c.total_iters = 4000;
  c.eval_every = 500;
  c.data.source = "cifar";
  c.data.train_images = 8000;
  return p;
}

DegradationPreset full_preset() {
  DegradationPreset p;
  p.name = "full";
  p.depths = {20, 32, 44, 56};
  p.seeds = 1;
  p.base = cifar_recipe(3, true);
  return p;
}

DegradationPreset smoke_preset() {
  DegradationPreset p;
  p.name = "smoke";
  p.depths = {8, 14};
  p.seeds = 1;
  p.response_sample = 32;
  TrainConfig& c = p.base;
  c.arch.widths = {4, 8, 8};
  c.arch.classes = 4;
  c.opt.milestones = {20};
  c.batch_size = 16;
  c.total_iters = 30;
  c.eval_every = 10;
  c.data.source = "synthetic";
  c.data.classes = 4;
  c.data.per_class = 32;
  c.data.test_per_class = 8;
  return p;
}

DegradationPreset preset_by_name(const std::string& name) {
  if (name == "desk") return desk_preset();
  if (name == "full") return full_preset();
  if (name == "smoke") return smoke_preset();
  throw Error(ErrorKind::kValue, "unknown preset '" + name + "' (expected desk, full or smoke)");
}

TrainConfig cell_config(const DegradationPreset& preset, int depth, bool residual, int seed_index) {
  if (depth < 8 || (depth - 2) % 6 != 0) {
    throw Error(ErrorKind::kValue, "degradation depths must be 6n+2, got " + std::to_string(depth));
  }
  TrainConfig c = preset.base;
  c.arch.family = "cifar";
  c.arch.n = (depth - 2) / 6;
  c.arch.residual = residual;
  c.arch.option = ShortcutOption::kA;
  if (c.arch.n >= 18 && !c.opt.warmup) c.opt.warmup = Warmup{};
  c.seed = static_cast<std::uint64_t>(seed_index);
  return c;
}

DegradationReport degradation_experiment(const DegradationPreset& preset, const TrainData& data,
                                         const std::function<void(const RunResult&)>& on_run) {
  if (preset.depths.size() < 2) {
    throw Error(ErrorKind::kValue, "degradation_experiment: need at least two depths");
  }
  if (preset.seeds < 1) throw Error(ErrorKind::kValue, "degradation_experiment: need a seed");
  DegradationReport report;
  report.preset = preset.name;
  const TensorF sample = leading_images(data.test, preset.response_sample);
  for (int depth : preset.depths) {
    for (bool residual : {false, true}) {
      for (int s = 0; s < preset.seeds; ++s) {
        Trainer trainer(cell_config(preset, depth, residual, s), data);
        trainer.run();
        RunResult r;
        r.depth = depth;
        r.residual = residual;
        r.seed = trainer.config().seed;
        r.params = trainer.network().num_trainable();
        r.log = trainer.log();
        const LogRow& last = r.log.rows.back();
        r.final_train_error = last.train_error;
        r.final_test_error = last.test_error.value_or(evaluate(trainer.network(), data.test));
        r.responses = layer_response_std(trainer.network(), sample);
        if (on_run) on_run(r);
        report.runs.push_back(std::move(r));
      }
    }
  }
  return report;
}

std::vector<CellSummary> DegradationReport::cells() const {
  std::map<std::pair<int, bool>, CellSummary> by_key;
  std::vector<std::pair<int, bool>> order;
  for (const auto& r : runs) {
    const auto key = std::make_pair(r.depth, r.residual);
    auto [it, fresh] = by_key.try_emplace(key);
    if (fresh) order.push_back(key);
    CellSummary& c = it->second;
    c.depth = r.depth;
    c.residual = r.residual;
    c.params = r.params;
    ++c.runs;
    c.mean_train_error += r.final_train_error;
    c.mean_test_error += r.final_test_error;
    c.mean_response_median += r.responses.median();
  }
  std::vector<CellSummary> out;
  for (const auto& key : order) {
    CellSummary c = by_key.at(key);
    c.mean_train_error /= c.runs;
    c.mean_test_error /= c.runs;
    c.mean_response_median /= c.runs;
    out.push_back(c);
  }
  return out;
}

CellSummary DegradationReport::cell(int depth, bool residual) const {
  for (const auto& c : cells()) {
    if (c.depth == depth && c.residual == residual) return c;
  }
  throw Error(ErrorKind::kValue, "no cell for depth " + std::to_string(depth));
}

std::string DegradationReport::to_csv() const {
  const auto all = cells();
  std::ostringstream os;
  char buf[64];
  os << "# resnet degradation v1 preset=" << preset << "\n# params:";
  for (const auto& c : all) {
    os << ' ' << (c.residual ? "resnet-" : "plain-") << c.depth << '=' << c.params;
  }
  os << "\nnet,depth,runs,params,mean_final_train_error,mean_final_test_error,mean_median_response_std\n";
  for (const auto& c : all) {
    os << (c.residual ? "resnet" : "plain") << ',' << c.depth << ',' << c.runs << ',' << c.params;
    for (double v : {c.mean_train_error, c.mean_test_error, c.mean_response_median}) {
      std::snprintf(buf, sizeof buf, ",%.17g", v);
      os << buf;
    }
    os << '\n';
  }
  return os.str();
}

std::string DegradationReport::responses_csv() const {
  std::ostringstream os;
  char buf[64];
  os << "net,depth,seed,index,layer,std\n";
  for (const auto& r : runs) {
    for (std::size_t i = 0; i < r.responses.in_order.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", r.responses.in_order[i].std);
      os << (r.residual ? "resnet" : "plain") << ',' << r.depth << ',' << r.seed << ',' << i << ','
         << r.responses.in_order[i].layer << ',' << buf << '\n';
    }
  }
  return os.str();
}

}  // namespace resnet
