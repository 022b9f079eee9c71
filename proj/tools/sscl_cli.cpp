// Command-line front end for the curated contrastive pretraining pipeline:
//   pretrain  - run the gated training loop, write metrics + checkpoints
//   probe     - linear / k-NN evaluation of a frozen checkpoint
//   score     - per-batch FRD table for a checkpoint
//   export    - dump embeddings in the EMB1 format
//   ablation  - regularizer x curation grid, one CSV row per cell
//
// Exit codes: 0 success, 2 configuration error, 3 data/IO error,
// 4 numerical abort.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sscl/config.hpp"
#include "sscl/dataset.hpp"
#include "sscl/eval.hpp"
#include "sscl/manifest.hpp"
#include "sscl/trainer.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

std::string resolve_data_root(const std::string& flag_value) {
  if (!flag_value.empty()) return flag_value;
  if (const char* env = std::getenv("SSCL_DATA_ROOT")) return env;
  return ".";
}

sscl::ImageDataset load_dataset(const sscl::DatasetConfig& cfg,
                                const std::string& data_root, bool train_split) {
  sscl::ImageDataset d;
  if (cfg.name == "synthetic") {
    d = sscl::make_synthetic(cfg.synthetic_classes, cfg.synthetic_per_class,
                             cfg.synthetic_size,
                             cfg.synthetic_seed + (train_split ? 0 : 1));
  } else if (cfg.name == "mnist") {
    const std::string dir = data_root + "/mnist/";
    if (train_split)
      d = sscl::load_mnist_idx(dir + "train-images-idx3-ubyte",
                               dir + "train-labels-idx1-ubyte");
    else
      d = sscl::load_mnist_idx(dir + "t10k-images-idx3-ubyte",
                               dir + "t10k-labels-idx1-ubyte");
  } else if (cfg.name == "cifar10") {
    const std::string dir = data_root + "/cifar-10-batches-bin/";
    std::vector<std::string> paths;
    if (train_split)
      for (int i = 1; i <= 5; ++i)
        paths.push_back(dir + "data_batch_" + std::to_string(i) + ".bin");
    else
      paths.push_back(dir + "test_batch.bin");
    d = sscl::load_cifar10_binary(paths);
  } else {
    throw sscl::config_error("unknown dataset: " + cfg.name);
  }
  if (cfg.limit > 0) d = d.take(cfg.limit);
  return d;
}

int classify_error(const std::exception& e) {
  if (dynamic_cast<const sscl::config_error*>(&e)) return kExitConfig;
  if (dynamic_cast<const sscl::contract_error*>(&e)) return kExitConfig;
  if (dynamic_cast<const sscl::dim_error*>(&e)) return kExitConfig;
  if (dynamic_cast<const sscl::numeric_error*>(&e)) return kExitNumeric;
  return kExitData;  // data/format/IO
}

struct PretrainArgs {
  std::string config_path;
  std::string manifest_path;
  std::string data_root;
  std::string out_dir = "run";
};

int cmd_pretrain(const PretrainArgs& args) {
  sscl::TrainConfig config;
  if (!args.manifest_path.empty()) {
    auto m = sscl::load_manifest(args.manifest_path);
    config = sscl::parse_config_text(m.config_text);
  } else if (!args.config_path.empty()) {
    config = sscl::load_config(args.config_path);
  } else {
    config = sscl::TrainConfig::desk_profile();
    config.validate();
  }
  auto dataset =
      load_dataset(config.dataset, resolve_data_root(args.data_root), true);
  sscl::RunManifest manifest;
  manifest.config_text = sscl::serialize_config(config);
  manifest.dataset_name = dataset.name;
  manifest.dataset_fingerprint = dataset.fingerprint();
  manifest.seed = config.seed;
  manifest.output_dir = args.out_dir;
  manifest.started_at = sscl::iso_timestamp();
  auto result = sscl::pretrain(dataset, config, args.out_dir);
  manifest.finished_at = sscl::iso_timestamp();
  sscl::save_manifest(manifest, args.out_dir + "/manifest.json");
  if (result.threshold.frozen)
    std::cout << "calibrated tau_FRD = " << result.threshold.tau_frd << "\n";
  std::cout << "wrote " << args.out_dir << "/metrics.csv ("
            << result.records.size() << " steps)\n";
  return kExitOk;
}

struct ProbeArgs {
  std::string checkpoint;
  std::string data_root;
  std::string config_path;
  std::string probe = "knn";
  std::string source = "h";
  int k = 5;
  int epochs = 50;
  double lr = 0.1;
};

int cmd_probe(const ProbeArgs& args) {
  if (args.probe != "knn" && args.probe != "linear")
    throw sscl::config_error("invalid probe name: " + args.probe +
                             " (expected linear or knn)");
  auto source = sscl::parse_embedding_source(args.source);
  auto params = sscl::load_checkpoint(args.checkpoint);
  sscl::TrainConfig config = args.config_path.empty()
                                 ? sscl::TrainConfig::desk_profile()
                                 : sscl::load_config(args.config_path);
  auto train = load_dataset(config.dataset, resolve_data_root(args.data_root), true);
  auto test = load_dataset(config.dataset, resolve_data_root(args.data_root), false);
  auto stats = sscl::compute_channel_stats(train);
  auto tr = sscl::extract_embeddings(params, train, source, stats);
  auto te = sscl::extract_embeddings(params, test, source, stats);
  double acc = args.probe == "knn"
                   ? sscl::knn_probe(tr, te, args.k, train.class_count)
                   : sscl::linear_probe(tr, te, train.class_count, args.epochs,
                                        args.lr, config.seed);
  std::cout.precision(6);
  std::cout << acc << "\n";
  std::ofstream rec(args.checkpoint + "." + args.probe + "_result.txt");
  rec.precision(17);
  rec << "probe=" << args.probe << " source=" << args.source
      << " accuracy=" << acc << "\n";
  return kExitOk;
}

struct ScoreArgs {
  std::string checkpoint;
  std::string data_root;
  std::string config_path;
  int batches = 8;
  std::string corrupt;  // empty = benign
};

int cmd_score(const ScoreArgs& args) {
  auto params = sscl::load_checkpoint(args.checkpoint);
  sscl::TrainConfig config = args.config_path.empty()
                                 ? sscl::TrainConfig::desk_profile()
                                 : sscl::load_config(args.config_path);
  auto dataset = load_dataset(config.dataset, resolve_data_root(args.data_root), true);
  auto stats = sscl::compute_channel_stats(dataset);
  sscl::BatchPlan plan{config.seed, config.batch_size, true};
  auto batches = sscl::iterate_batches(dataset.count, plan, 0);
  if (args.batches < 1) throw sscl::config_error("--batches must be >= 1");
  const int n = std::min<int>(args.batches, static_cast<int>(batches.size()));
  std::cout << "batch,frd\n";
  std::cout.precision(17);
  double sum = 0;
  for (int b = 0; b < n; ++b) {
    const auto seed = sscl::derive_seed(config.seed, 1000 + b);
    auto pair = sscl::make_pair(dataset, batches[b], config.transform, seed);
    if (!args.corrupt.empty()) {
      sscl::SplitMix64 rng(sscl::derive_seed(seed, 99));
      pair = sscl::corrupt_view(pair, sscl::parse_corrupt_mode(args.corrupt), rng);
    }
    sscl::standardize(pair.view1, pair.batch(), pair.channels,
                      pair.height * pair.width, stats);
    sscl::standardize(pair.view2, pair.batch(), pair.channels,
                      pair.height * pair.width, stats);
    sscl::Tape tape;
    auto fwd = sscl::detail::forward_pair(tape, params, pair, false);
    const double score = sscl::detail::score_pair(fwd, config.curation);
    std::cout << b << "," << score << "\n";
    sum += score;
  }
  std::cout << "mean," << sum / n << "\n";
  return kExitOk;
}

struct ExportArgs {
  std::string checkpoint;
  std::string data_root;
  std::string config_path;
  std::string source = "h";
  std::string out = "embeddings.emb1";
};

int cmd_export(const ExportArgs& args) {
  auto params = sscl::load_checkpoint(args.checkpoint);
  sscl::TrainConfig config = args.config_path.empty()
                                 ? sscl::TrainConfig::desk_profile()
                                 : sscl::load_config(args.config_path);
  auto dataset = load_dataset(config.dataset, resolve_data_root(args.data_root), true);
  auto stats = sscl::compute_channel_stats(dataset);
  auto set = sscl::extract_embeddings(
      params, dataset, sscl::parse_embedding_source(args.source), stats);
  sscl::export_embeddings(set, args.out);
  std::cout << "wrote " << args.out << " (" << set.count << " x " << set.dim
            << ")\n";
  return kExitOk;
}

struct AblationArgs {
  std::string config_path;
  std::string data_root;
  std::string out_dir = "ablation";
};

int cmd_ablation(const AblationArgs& args) {
  sscl::TrainConfig config = args.config_path.empty()
                                 ? sscl::TrainConfig::desk_profile()
                                 : sscl::load_config(args.config_path);
  const std::string root = resolve_data_root(args.data_root);
  auto train = load_dataset(config.dataset, root, true);
  auto test = load_dataset(config.dataset, root, false);
  std::vector<sscl::AblationCell> grid;
  for (auto kind : {sscl::RegularizerKind::huber, sscl::RegularizerKind::l1,
                    sscl::RegularizerKind::l2})
    for (bool cur : {true, false}) grid.push_back({kind, cur});
  auto rows = sscl::run_ablation(train, train, test, grid, config);
  std::filesystem::create_directories(args.out_dir);
  const std::string table_path = args.out_dir + "/ablation.csv";
  std::ofstream os(table_path);
  os.precision(17);
  os << "frd_curation,regularizer,knn_top1,final_loss,mean_final_frd,status\n";
  for (const auto& r : rows)
    os << (r.cell.curation ? "on" : "off") << "," << to_string(r.cell.kind)
       << "," << r.knn_accuracy << "," << r.final_loss << ","
       << r.mean_final_frd << "," << (r.failed ? ("failed: " + r.error) : "ok")
       << "\n";
  sscl::RunManifest manifest;
  manifest.config_text = sscl::serialize_config(config);
  manifest.dataset_name = train.name;
  manifest.dataset_fingerprint = train.fingerprint();
  manifest.seed = config.seed;
  manifest.output_dir = args.out_dir;
  manifest.started_at = manifest.finished_at = sscl::iso_timestamp();
  sscl::save_manifest(manifest, args.out_dir + "/manifest.json");
  std::cout << "wrote " << table_path << " (" << rows.size() << " rows)\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-supervised contrastive pretraining with FRD batch curation"};
  app.require_subcommand(1);

  PretrainArgs pre;
  auto* sub_pre = app.add_subcommand("pretrain", "run the gated training loop");
  sub_pre->add_option("--config", pre.config_path, "config file");
  sub_pre->add_option("--manifest", pre.manifest_path,
                      "reproduce a previous run from its manifest");
  sub_pre->add_option("--data-root", pre.data_root, "dataset root directory");
  sub_pre->add_option("--out", pre.out_dir, "output directory");

  ProbeArgs probe;
  auto* sub_probe = app.add_subcommand("probe", "evaluate a frozen checkpoint");
  sub_probe->add_option("--checkpoint", probe.checkpoint)->required();
  sub_probe->add_option("--data-root", probe.data_root);
  sub_probe->add_option("--config", probe.config_path);
  sub_probe->add_option("--probe", probe.probe, "linear or knn");
  sub_probe->add_option("--source", probe.source, "h or z");
  sub_probe->add_option("--k", probe.k);
  sub_probe->add_option("--epochs", probe.epochs);
  sub_probe->add_option("--lr", probe.lr);

  ScoreArgs score;
  auto* sub_score = app.add_subcommand("score", "per-batch FRD table");
  sub_score->add_option("--checkpoint", score.checkpoint)->required();
  sub_score->add_option("--data-root", score.data_root);
  sub_score->add_option("--config", score.config_path);
  sub_score->add_option("--batches", score.batches);
  sub_score->add_option("--corrupt", score.corrupt,
                        "blackout | uniform_noise | extreme_darken");

  ExportArgs exp;
  auto* sub_exp = app.add_subcommand("export", "dump embeddings (EMB1)");
  sub_exp->add_option("--checkpoint", exp.checkpoint)->required();
  sub_exp->add_option("--data-root", exp.data_root);
  sub_exp->add_option("--config", exp.config_path);
  sub_exp->add_option("--source", exp.source, "h or z");
  sub_exp->add_option("--out", exp.out);

  AblationArgs abl;
  auto* sub_abl = app.add_subcommand("ablation", "regularizer x curation grid");
  sub_abl->add_option("--config", abl.config_path);
  sub_abl->add_option("--data-root", abl.data_root);
  sub_abl->add_option("--out", abl.out_dir);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (sub_pre->parsed()) return cmd_pretrain(pre);
    if (sub_probe->parsed()) return cmd_probe(probe);
    if (sub_score->parsed()) return cmd_score(score);
    if (sub_exp->parsed()) return cmd_export(exp);
    if (sub_abl->parsed()) return cmd_ablation(abl);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return classify_error(e);
  }
  return kExitConfig;
}
