#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "resnet/arch.hpp"
#include "resnet/checkpoint.hpp"
#include "resnet/config.hpp"
#include "resnet/experiment.hpp"
#include "resnet/gradcheck_suite.hpp"
#include "resnet/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace resnet;

namespace {

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfig: return 3;
    case ErrorKind::kIo: return 4;
    case ErrorKind::kFormat: return 5;
    case ErrorKind::kNumeric: return 6;
    case ErrorKind::kShape:
    case ErrorKind::kValue: return 7;
  }
  return 1;
}

void emit_error(const std::string& kind, const std::string& message) {
  std::cerr << json{{"error", {{"kind", kind}, {"message", message}}}}.dump() << std::endl;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path == "-") {
    std::cout << text;
    return;
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorKind::kIo, "write failed for " + path.string());
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// --- train -----------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::string data_dir;
  std::string out = "run";
  std::string resume;
  std::int64_t checkpoint_every = 0;
};

int cmd_train(const TrainArgs& a) {
  TrainConfig cfg = load_config_file(a.config);
  const fs::path out(a.out);
  fs::create_directories(out);
  write_text(out / "config.json", to_json(cfg) + "\n");

  const TrainData data = prepare_data(cfg, a.data_dir);
  Trainer trainer(cfg, data);
  if (!a.resume.empty()) {
    trainer.restore(read_checkpoint_file(a.resume, trainer.network().fingerprint()));
    std::cerr << "resumed at iteration " << trainer.iter() << "\n";
  }
  const auto t0 = std::chrono::steady_clock::now();
  try {
    while (trainer.iter() < cfg.total_iters) {
      std::int64_t until = cfg.total_iters;
      if (a.checkpoint_every > 0) {
        until = std::min(until, (trainer.iter() / a.checkpoint_every + 1) * a.checkpoint_every);
      }
      trainer.run(until, [&](const LogRow& r) {
        std::fprintf(stderr, "iter %lld lr %.4g train_err %.4f loss %.4f test_err %s (%.0fs)\n",
                     static_cast<long long>(r.iter), r.lr, r.train_error, r.train_loss,
                     r.test_error ? std::to_string(*r.test_error).c_str() : "-", seconds_since(t0));
        write_text(out / "log.csv", trainer.log().to_csv());
      });
      if (a.checkpoint_every > 0 && trainer.iter() % a.checkpoint_every == 0 &&
          trainer.iter() < cfg.total_iters) {
        write_checkpoint_file(out / ("iter_" + std::to_string(trainer.iter()) + ".ckpt"),
                              trainer.checkpoint());
      }
    }
  } catch (const NumericAbort& e) {
    write_checkpoint_file(out / "abort.ckpt", e.snapshot());
    throw;
  }
  write_text(out / "log.csv", trainer.log().to_csv());
  write_checkpoint_file(out / "final.ckpt", trainer.checkpoint());
  const LogRow& last = trainer.log().rows.back();
  json summary{{"iter", trainer.iter()},
               {"train_error", last.train_error},
               {"train_loss", last.train_loss},
               {"seconds", seconds_since(t0)},
               {"checkpoint", (out / "final.ckpt").string()}};
  if (last.test_error) summary["test_error"] = *last.test_error;
  std::cout << summary.dump() << std::endl;
  return 0;
}

// --- eval / respstd ----------------------------------------------------------

int cmd_eval(const std::string& checkpoint, const std::string& data_dir) {
  LoadedModel m = load_model(read_checkpoint_file(checkpoint));
  const TrainData data = prepare_data(m.config, data_dir);
  if (data.test.size() == 0) throw Error(ErrorKind::kValue, "eval: the configured test set is empty");
  const double err = evaluate(m.net, data.test, m.config.eval_batch);
  std::cout << json{{"test_error", err}, {"images", data.test.size()}, {"arch", m.net.spec().arch}}.dump()
            << std::endl;
  return 0;
}

int cmd_respstd(const std::string& checkpoint, const std::string& data_dir, std::int64_t samples,
                const std::string& out) {
  LoadedModel m = load_model(read_checkpoint_file(checkpoint));
  const TrainData data = prepare_data(m.config, data_dir);
  const Dataset& source = data.test.size() > 0 ? data.test : data.train;
  const ResponseStats stats = layer_response_std(m.net, leading_images(source, samples));
  write_text(out, stats.to_csv());
  if (out != "-") {
    std::cout << json{{"layers", stats.in_order.size()}, {"median_std", stats.median()}, {"csv", out}}.dump()
              << std::endl;
  }
  return 0;
}

// --- audit / gradcheck -------------------------------------------------------

int cmd_audit(const std::string& arch, const std::string& option, const std::string& input,
              const std::string& out) {
  const NetworkSpec spec = build_named(arch, parse_shortcut_option(option));
  Shape shape = spec.input;
  if (!input.empty()) {
    shape.clear();
    std::stringstream ss(input);
    std::string part;
    while (std::getline(ss, part, 'x')) {
      try {
        shape.push_back(std::stoll(part));
      } catch (const std::exception&) {
        throw Error(ErrorKind::kValue, "--input must look like 3x224x224");
      }
    }
  }
  const AuditReport report = shape_audit(spec, shape);
  write_text(out, report.to_csv());
  if (out != "-") {
    std::cout << json{{"arch", spec.arch},
                      {"option", std::string(1, to_char(spec.option))},
                      {"params", report.total_params},
                      {"madds", report.total_madds},
                      {"csv", out}}
                     .dump()
              << std::endl;
  }
  return 0;
}

int cmd_gradcheck(double eps, double tol) {
  const auto cases = run_standard_grad_checks(eps);
  bool ok = true;
  for (const auto& c : cases) {
    const bool pass = c.result.max_rel_error <= tol;
    ok = ok && pass;
    std::printf("%-24s %s max_rel_err=%.3e elements=%zu worst=param%zu[%zu] analytic=%.6e numeric=%.6e\n",
                c.name.c_str(), pass ? "PASS" : "FAIL", c.result.max_rel_error, c.result.elements,
                c.result.worst_param, c.result.worst_index, c.result.analytic, c.result.numeric);
  }
  if (!ok) {
    emit_error("numeric", "gradient check exceeded tolerance " + std::to_string(tol));
    return exit_code(ErrorKind::kNumeric);
  }
  return 0;
}

// --- degradation -------------------------------------------------------------

int cmd_degradation(const std::string& preset_name, const std::string& data_dir,
                    const std::string& out_dir, int seeds) {
  DegradationPreset preset = preset_by_name(preset_name);
  if (seeds > 0) preset.seeds = seeds;
  const TrainData data = prepare_data(cell_config(preset, preset.depths.front(), true, 0), data_dir);
  const fs::path out(out_dir);
  fs::create_directories(out);
  const auto t0 = std::chrono::steady_clock::now();
  const DegradationReport report = degradation_experiment(preset, data, [&](const RunResult& r) {
    const std::string cell =
        std::string(r.residual ? "resnet" : "plain") + "-" + std::to_string(r.depth) + "-s" +
        std::to_string(r.seed);
    write_text(out / cell / "log.csv", r.log.to_csv());
    std::fprintf(stderr, "%s train_err %.4f test_err %.4f median_resp_std %.4f (%.0fs)\n",
                 cell.c_str(), r.final_train_error, r.final_test_error, r.responses.median(),
                 seconds_since(t0));
  });
  write_text(out / "degradation.csv", report.to_csv());
  write_text(out / "respstd.csv", report.responses_csv());
  std::cout << report.to_csv();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Residual network training, auditing and verification"};
  app.require_subcommand(1);

  TrainArgs train;
  auto* c_train = app.add_subcommand("train", "Train a network from a JSON config");
  c_train->add_option("--config", train.config, "JSON training config")->required();
  c_train->add_option("--data-dir", train.data_dir, "CIFAR-10 binary directory");
  c_train->add_option("--out", train.out, "Output directory")->capture_default_str();
  c_train->add_option("--resume", train.resume, "Checkpoint to continue from");
  c_train->add_option("--checkpoint-every", train.checkpoint_every, "Iterations between checkpoints");

  std::string checkpoint, data_dir;
  auto* c_eval = app.add_subcommand("eval", "Top-1 test error of a checkpoint");
  c_eval->add_option("--checkpoint", checkpoint)->required();
  c_eval->add_option("--data-dir", data_dir);

  std::string arch, option = "A", input, audit_out = "audit.csv";
  auto* c_audit = app.add_subcommand("audit", "Per-layer shapes, parameters and multiply-adds");
  c_audit->add_option("--arch", arch, "e.g. resnet-imagenet-50, plain-cifar-56")->required();
  c_audit->add_option("--option", option, "Shortcut option A, B or C")->capture_default_str();
  c_audit->add_option("--input", input, "Input shape CxHxW or NxCxHxW");
  c_audit->add_option("--out", audit_out, "CSV path, '-' for stdout")->capture_default_str();

  double eps = 1e-5, tol = 1e-4;
  auto* c_grad = app.add_subcommand("gradcheck", "Finite-difference check of every layer and block");
  c_grad->add_option("--eps", eps)->capture_default_str();
  c_grad->add_option("--tol", tol)->capture_default_str();

  std::int64_t samples = 500;
  std::string resp_out = "respstd.csv";
  auto* c_resp = app.add_subcommand("respstd", "Layer response standard deviations of a checkpoint");
  c_resp->add_option("--checkpoint", checkpoint)->required();
  c_resp->add_option("--data-dir", data_dir);
  c_resp->add_option("--samples", samples)->capture_default_str();
  c_resp->add_option("--out", resp_out, "CSV path, '-' for stdout")->capture_default_str();

  std::string preset = "desk", deg_out = "degradation";
  int seeds = 0;
  auto* c_deg = app.add_subcommand("degradation", "Plain vs residual depth study");
  c_deg->add_option("--preset", preset, "desk, full or smoke")->capture_default_str();
  c_deg->add_option("--data-dir", data_dir);
  c_deg->add_option("--out", deg_out)->capture_default_str();
  c_deg->add_option("--seeds", seeds, "Override the preset's seed count");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    emit_error("usage", e.what());
    return 2;
  }

  try {
    if (*c_train) return cmd_train(train);
    if (*c_eval) return cmd_eval(checkpoint, data_dir);
    if (*c_audit) return cmd_audit(arch, option, input, audit_out);
    if (*c_grad) return cmd_gradcheck(eps, tol);
    if (*c_resp) return cmd_respstd(checkpoint, data_dir, samples, resp_out);
    if (*c_deg) return cmd_degradation(preset, data_dir, deg_out, seeds);
  } catch (const Error& e) {
    emit_error(std::string(to_string(e.kind())), e.what());
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    emit_error("internal", e.what());
    return 1;
  }
  return 1;
}
