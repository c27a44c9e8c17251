// sbnet — experiment CLI: cost reports, desk-scale training/evaluation on the
// synthetic temporal-co-occurrence task, gradient checking, data generation,
// activation dumps, and side-by-side config comparison.
//
// Exit codes: 0 success, 2 configuration error (including usage errors),
// 3 data error (bad files/containers), 4 numeric failure.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <sstream>

#include "smallbig/analytics.hpp"
#include "smallbig/train.hpp"

using namespace smallbig;

namespace {

constexpr int kExitOk = 0, kExitConfig = 2, kExitData = 3, kExitNumeric = 4;

// The published inference protocol runs 10 clips x 3 crops per video; reports
// stay per-clip and this multiplier appears only in the presentation layer.
constexpr int64_t kProtocolViews = 30;

Shape5 parse_input(const std::string& text) {
  std::vector<int64_t> dims;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, 'x')) {
    try {
      size_t used = 0;
      dims.push_back(std::stoll(part, &used));
      if (used != part.size()) throw std::invalid_argument(part);
    } catch (const std::exception&) {
      throw ConfigError("--input: bad component '" + part + "' in " + text);
    }
  }
  if (dims.size() != 4)
    throw ConfigError("--input must be CxTxHxW, e.g. 3x8x224x224");
  for (int64_t d : dims)
    if (d < 1) throw ConfigError("--input dimensions must be positive");
  return Shape5{1, dims[0], dims[1], dims[2], dims[3]};
}

void emit_report(const std::string& text, const std::string& out_path) {
  if (out_path.empty())
    std::cout << text;
  else
    write_file_atomic(out_path, text);
}

SyntheticVideoSet load_dataset(const std::string& data, int64_t n,
                               uint64_t seed) {
  if (data == "synth") return gen_synth(n, seed);
  return load_synth(read_file(data));
}

/// Default ladder for `gradcheck` when no config is given: one block per
/// stage, width 4, every two-view variant plus attention represented.
NetSpec default_gradcheck_spec() {
  NetSpec spec;
  spec.stage_blocks = {1, 1, 1, 1};
  spec.width = 4;
  spec.in_channels = 1;
  spec.num_classes = 2;
  spec.block_kinds = {BlockKind::SB_Typical, BlockKind::SB_Full,
                      BlockKind::Plain2D, BlockKind::SB_TemporalPool};
  spec.nonlocal_stage = {false, false, true, false};
  spec.in_t = 4;
  spec.in_h = 16;
  spec.in_w = 16;
  return spec;
}

int cmd_count(const std::string& config, const std::string& input,
              const std::string& format, const std::string& out) {
  NetSpec spec = NetSpec::from_file(config);
  if (!input.empty()) {
    const Shape5 s = parse_input(input);
    if (s.c != spec.in_channels)
      throw ConfigError("--input channels (" + std::to_string(s.c) +
                        ") disagree with config in_channels (" +
                        std::to_string(spec.in_channels) + ")");
    spec.in_t = s.t;
    spec.in_h = s.h;
    spec.in_w = s.w;
  }
  auto net = build_net<float>(spec);
  CountReport rep = analyze(*net);
  if (format == "json") {
    nlohmann::json j = rep.to_json();
    j["full_protocol_flops"] = rep.total_flops * kProtocolViews;
    j["full_protocol_views"] = kProtocolViews;
    emit_report(j.dump(2) + "\n", out);
  } else {
    std::ostringstream os;
    os << rep.to_csv();
    os << "# full protocol (10 clips x 3 crops = x" << kProtocolViews
       << "): " << rep.total_flops * kProtocolViews << " flops\n";
    emit_report(os.str(), out);
  }
  return kExitOk;
}

int cmd_train(const std::string& config, const std::string& data, int64_t n,
              uint64_t seed, int64_t epochs, double lr, int64_t batch,
              const std::string& schedule, const std::string& out) {
  NetSpec spec = NetSpec::from_file(config);
  SyntheticVideoSet set = load_dataset(data, n, seed);
  const Shape5& cs = set.clips.shape();
  if (cs.c != spec.in_channels || cs.t != spec.in_t || cs.h != spec.in_h ||
      cs.w != spec.in_w)
    throw ConfigError("dataset clips " + cs.str() +
                      " do not match the config input shape");
  auto net = build_net<float>(spec);
  init_random_he(net->store, seed);
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.base_lr = lr;
  cfg.batch_size = batch;
  cfg.seed = seed;
  if (schedule == "step")
    cfg.schedule = LrSchedule::Step;
  else if (schedule != "cosine")
    throw ConfigError("--schedule must be cosine or step");
  std::vector<double> losses = train_epochs(*net, set, cfg);
  for (size_t e = 0; e < losses.size(); ++e)
    std::cout << "epoch " << e << " lr " << lr_at(cfg, int64_t(e)) << " loss "
              << losses[e] << "\n";
  std::cout << "train accuracy " << accuracy(*net, set) << "\n";
  if (!out.empty()) {
    write_file_atomic(out, save_weights(net->store));
    std::cout << "weights written to " << out << "\n";
  }
  return kExitOk;
}

int cmd_eval(const std::string& config, const std::string& weights,
             int64_t clips, int64_t crops, const std::string& data, int64_t n,
             uint64_t seed) {
  NetSpec spec = NetSpec::from_file(config);
  auto net = build_net<float>(spec);
  load_weights(read_file(weights), net->store);
  SyntheticVideoSet set = load_dataset(data, n, seed);
  int64_t hits = 0;
  for (int64_t i = 0; i < set.size(); ++i) {
    std::vector<double> fused = eval_protocol(*net, set.clip(i), clips, crops);
    int64_t best = 0;
    for (size_t k = 1; k < fused.size(); ++k)
      if (fused[k] > fused[size_t(best)]) best = int64_t(k);
    if (best == set.labels[size_t(i)]) ++hits;
  }
  std::cout << "eval accuracy " << double(hits) / double(set.size()) << " ("
            << hits << "/" << set.size() << ", " << clips << " clips x "
            << crops << " crops)\n";
  return kExitOk;
}

int cmd_gradcheck(const std::string& config, double tol, uint64_t seed) {
  const NetSpec spec =
      config.empty() ? default_gradcheck_spec() : NetSpec::from_file(config);
  const double worst = gradcheck(spec, seed);
  if (worst < tol) {
    std::cout << "PASS tol=" << tol << " (worst relative error " << worst
              << ")\n";
    return kExitOk;
  }
  std::cout << "FAIL tol=" << tol << " (worst relative error " << worst
            << ")\n";
  return kExitNumeric;
}

int cmd_gen_data(int64_t n, uint64_t seed, const std::string& out) {
  SyntheticVideoSet set = gen_synth(n, seed);
  write_file_atomic(out, save_synth(set));
  std::cout << "wrote " << n << " clips (seed " << seed << ") to " << out
            << "\n";
  return kExitOk;
}

int cmd_dump_activations(const std::string& config, const std::string& weights,
                         const std::string& layer, const std::string& out,
                         const std::string& data, int64_t index,
                         uint64_t seed) {
  NetSpec spec = NetSpec::from_file(config);
  auto net = build_net<float>(spec);
  if (weights.empty())
    init_random_he(net->store, seed);
  else
    load_weights(read_file(weights), net->store);
  if (!net->has_node(layer))
    throw ConfigError("--layer: no node named " + layer);
  Tensor5<float> x(net->input_shape());
  if (data.empty()) {
    Rng rng(seed);
    fill_uniform(x, rng);
  } else {
    SyntheticVideoSet set = load_dataset(data, 2, seed);
    if (index < 0 || index >= set.size())
      throw DataError("--index out of range for dataset of size " +
                      std::to_string(set.size()));
    x = set.clip(index);
  }
  net->set_capture(layer);
  net->forward(x, /*train=*/false);
  const Tensor5<float>& act = net->captured();
  const Shape5& s = act.shape();
  // channel-mean feature maps: one CSV row per (t,h) with W columns
  std::ostringstream os;
  os << "# layer " << layer << " channel-mean over " << s.c
     << " channels, maps " << s.t << "x" << s.h << "x" << s.w << "\n";
  os << "t,h,values...\n";
  for (int64_t t = 0; t < s.t; ++t)
    for (int64_t h = 0; h < s.h; ++h) {
      os << t << ',' << h;
      for (int64_t w = 0; w < s.w; ++w) {
        double mean = 0;
        for (int64_t c = 0; c < s.c; ++c) mean += double(act.at(0, c, t, h, w));
        os << ',' << mean / double(s.c);
      }
      os << '\n';
    }
  emit_report(os.str(), out);
  return kExitOk;
}

int cmd_compare(const std::string& configs_csv, const std::string& data,
                int64_t n, uint64_t seed, int64_t epochs, double lr,
                int64_t batch) {
  std::vector<std::string> paths;
  std::stringstream ss(configs_csv);
  std::string part;
  while (std::getline(ss, part, ','))
    if (!part.empty()) paths.push_back(part);
  if (paths.empty()) throw ConfigError("--configs: empty list");
  SyntheticVideoSet train_set = load_dataset(data, n, seed);
  SyntheticVideoSet val_set =
      data == "synth" ? gen_synth(std::max<int64_t>(n / 4, 2), seed + 1)
                      : train_set;
  std::cout << "config,params,flops,train_acc,val_acc\n";
  for (const auto& path : paths) {
    NetSpec spec = NetSpec::from_file(path);
    auto net = build_net<float>(spec);
    CountReport rep = analyze(*net);
    init_random_he(net->store, seed);
    TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.base_lr = lr;
    cfg.batch_size = batch;
    cfg.seed = seed;
    train_epochs(*net, train_set, cfg);
    std::cout << path << ',' << rep.total_params << ',' << rep.total_flops
              << ',' << accuracy(*net, train_set) << ','
              << accuracy(*net, val_set) << "\n";
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"spatio-temporal network cost reports and desk-scale experiments"};
  app.require_subcommand(1);

  std::string config, input, format = "csv", out, data = "synth", weights;
  std::string configs_csv, layer, schedule = "cosine", dump_data;
  int64_t n = 2000, epochs = 50, batch = 8, clips = 2, crops = 3, index = 0;
  uint64_t seed = 7;
  double lr = 0.01, tol = 1e-4;
  bool f64 = false;

  auto* count = app.add_subcommand("count", "parameter and FLOP report");
  count->add_option("--config", config)->required();
  count->add_option("--input", input, "CxTxHxW, e.g. 3x8x224x224");
  count->add_option("--format", format)->check(CLI::IsMember({"csv", "json"}));
  count->add_option("--out", out, "write the report to a file (atomic)");

  auto* train = app.add_subcommand("train", "train on synthetic data");
  train->add_option("--config", config)->required();
  train->add_option("--data", data, "'synth' or a data container path");
  train->add_option("--n", n);
  train->add_option("--seed", seed);
  train->add_option("--epochs", epochs);
  train->add_option("--lr", lr);
  train->add_option("--batch", batch);
  train->add_option("--schedule", schedule)
      ->check(CLI::IsMember({"cosine", "step"}));
  train->add_option("--out", out, "weight file to write");

  auto* eval = app.add_subcommand("eval", "multi-clip multi-crop evaluation");
  eval->add_option("--config", config)->required();
  eval->add_option("--weights", weights)->required();
  eval->add_option("--clips", clips);
  eval->add_option("--crops", crops);
  eval->add_option("--data", data, "'synth' or a data container path");
  eval->add_option("--n", n);
  eval->add_option("--seed", seed);

  auto* gc = app.add_subcommand("gradcheck",
                                "finite-difference gradient verification");
  gc->add_option("--config", config, "defaults to a built-in tiny ladder");
  gc->add_flag("--f64", f64, "run in 64-bit (always on; flag kept for scripts)");
  gc->add_option("--tol", tol);
  gc->add_option("--seed", seed);

  auto* gen = app.add_subcommand("gen-data", "write a synthetic data container");
  gen->add_option("--n", n);
  gen->add_option("--seed", seed);
  gen->add_option("--out", out)->required();

  auto* dump = app.add_subcommand("dump-activations",
                                  "channel-mean feature maps as CSV");
  dump->add_option("--config", config)->required();
  dump->add_option("--weights", weights);
  dump->add_option("--layer", layer)->required();
  dump->add_option("--out", out);
  dump->add_option("--data", dump_data,
                   "data container path (default: seeded random input)");
  dump->add_option("--index", index);
  dump->add_option("--seed", seed);

  auto* cmp = app.add_subcommand("compare", "side-by-side accuracy/count table");
  cmp->add_option("--configs", configs_csv, "comma-separated config paths")
      ->required();
  cmp->add_option("--data", data, "'synth' or a data container path");
  cmp->add_option("--n", n);
  cmp->add_option("--seed", seed);
  cmp->add_option("--epochs", epochs);
  cmp->add_option("--lr", lr);
  cmp->add_option("--batch", batch);

  if (argc < 2) {
    std::cout << app.help();
    return kExitConfig;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*count) return cmd_count(config, input, format, out);
    if (*train)
      return cmd_train(config, data, n, seed, epochs, lr, batch, schedule, out);
    if (*eval) return cmd_eval(config, weights, clips, crops, data, n, seed);
    if (*gc) return cmd_gradcheck(config, tol, seed);
    if (*gen) return cmd_gen_data(n, seed, out);
    if (*dump)
      return cmd_dump_activations(config, weights, layer, out, dump_data,
                                  index, seed);
    if (*cmp) return cmd_compare(configs_csv, data, n, seed, epochs, lr, batch);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitConfig;
}
