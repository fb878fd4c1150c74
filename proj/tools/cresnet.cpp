// Command-line front end: list-archs, analyze, compare, export-spec, train, eval.
// Exit codes: 0 success, 2 usage or unknown-arch errors, 3 data-format errors,
// 1 anything else.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>

#include "cresnet/arch.hpp"
#include "cresnet/checkpoint.hpp"
#include "cresnet/cost.hpp"
#include "cresnet/data.hpp"
#include "cresnet/model.hpp"
#include "cresnet/train.hpp"

namespace {

cresnet::ArchSpec resolve_arch(const std::string& name, const std::string& spec_path) {
  if (name.empty() == spec_path.empty())
    throw cresnet::SpecError("pass exactly one of --arch NAME or --spec FILE");
  return name.empty() ? cresnet::spec_from_file(spec_path) : cresnet::registry_get(name);
}

void write_or_print(const std::string& text, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream out(out_path);
  if (!out) throw cresnet::DataError("cannot write " + out_path);
  out << text;
}

void cmd_list_archs() {
  std::printf("%-14s %-18s %6s  %-22s %s\n", "name", "block", "layers", "jumpers",
              "provenance");
  for (const auto& name : cresnet::registry_names()) {
    cresnet::ArchSpec spec = cresnet::registry_get(name);
    cresnet::CostReport r = cresnet::analyze(spec, 10);
    char jumpers[48];
    std::snprintf(jumpers, sizeof jumpers, "%lld (%lld solid, %lld dashed)",
                  static_cast<long long>(r.jumpers.total),
                  static_cast<long long>(r.jumpers.solid),
                  static_cast<long long>(r.jumpers.dashed));
    std::printf("%-14s %-18s %6lld  %-22s %s\n", name.c_str(),
                cresnet::to_string(spec.stages[0].block).c_str(),
                static_cast<long long>(r.weight_layers), jumpers,
                spec.provenance.c_str());
  }
}

std::string analyze_text(const cresnet::CostReport& r, const std::string& provenance,
                         bool layers) {
  std::string out;
  char buf[160];
  std::snprintf(buf, sizeof buf, "arch:    %s  (%s)\n", r.arch.c_str(),
                provenance.c_str());
  out += buf;
  std::snprintf(buf, sizeof buf, "input:   3x%lldx%lld, %lld classes\n",
                static_cast<long long>(r.input_h), static_cast<long long>(r.input_w),
                static_cast<long long>(r.classes));
  out += buf;
  std::snprintf(buf, sizeof buf, "params:  %s  (%s)\n",
                cresnet::fmt_grouped(r.params_total).c_str(),
                cresnet::fmt_millions(r.params_total).c_str());
  out += buf;
  std::snprintf(buf, sizeof buf, "flops:   %s  (%s)\n",
                cresnet::fmt_grouped(r.flops_total).c_str(),
                cresnet::fmt_gflops(r.flops_total).c_str());
  out += buf;
  std::snprintf(buf, sizeof buf, "depth:   %lld weight layers\n",
                static_cast<long long>(r.weight_layers));
  out += buf;
  std::snprintf(buf, sizeof buf, "jumpers: %lld total, %lld solid, %lld dashed\n",
                static_cast<long long>(r.jumpers.total),
                static_cast<long long>(r.jumpers.solid),
                static_cast<long long>(r.jumpers.dashed));
  out += buf;
  if (layers) {
    std::snprintf(buf, sizeof buf, "\n%-12s %-16s %3s %3s %5s %5s %4s %4s %12s %14s\n",
                  "name", "type", "k", "s", "cin", "cout", "h", "w", "params", "flops");
    out += buf;
    for (const cresnet::LayerCost& row : r.rows) {
      std::snprintf(buf, sizeof buf,
                    "%-12s %-16s %3lld %3lld %5lld %5lld %4lld %4lld %12lld %14lld\n",
                    row.name.c_str(), row.type.c_str(), static_cast<long long>(row.kernel),
                    static_cast<long long>(row.stride),
                    static_cast<long long>(row.in_channels),
                    static_cast<long long>(row.out_channels),
                    static_cast<long long>(row.out_h), static_cast<long long>(row.out_w),
                    static_cast<long long>(row.params), static_cast<long long>(row.flops));
      out += buf;
    }
  }
  return out;
}

struct DatasetChoice {
  cresnet::Dataset train, test;
  std::int64_t classes = 0;
  cresnet::AugmentConfig augment;
};

DatasetChoice load_dataset(const std::string& dataset, std::string data_dir,
                           std::int64_t train_subset, std::int64_t test_subset) {
  if (data_dir.empty()) data_dir = "data/" + dataset;
  DatasetChoice d;
  if (dataset == "mnist") {
    d.train = cresnet::load_mnist(data_dir, "train");
    d.test = cresnet::load_mnist(data_dir, "t10k");
    d.classes = 10;
    d.augment = cresnet::mnist_augment();
  } else if (dataset == "cifar10") {
    d.train = cresnet::load_cifar10(data_dir, "train");
    d.test = cresnet::load_cifar10(data_dir, "test");
    d.classes = 10;
    d.augment = cresnet::cifar_augment();
  } else if (dataset == "cifar100") {
    d.train = cresnet::load_cifar100(data_dir, "train");
    d.test = cresnet::load_cifar100(data_dir, "test");
    d.classes = 100;
    d.augment = cresnet::cifar_augment();
  } else {
    throw cresnet::SpecError("unknown dataset '" + dataset +
                             "' (known: mnist, cifar10, cifar100)");
  }
  if (train_subset > 0) d.train = cresnet::take_prefix(d.train, train_subset);
  if (test_subset > 0) d.test = cresnet::take_prefix(d.test, test_subset);
  return d;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cross-residual network toolkit"};
  app.require_subcommand(1);

  // list-archs
  app.add_subcommand("list-archs", "print the built-in architecture registry");

  // analyze
  auto* analyze = app.add_subcommand("analyze", "static parameter and flop analysis");
  std::string an_arch, an_spec, an_format = "text", an_out;
  std::int64_t an_classes = 100, an_input = 32;
  bool an_layers = false;
  analyze->add_option("--arch", an_arch, "registry architecture name");
  analyze->add_option("--spec", an_spec, "architecture spec file (json)");
  analyze->add_option("--classes", an_classes, "classifier size")->default_val(100);
  analyze->add_option("--input", an_input, "input side in pixels")->default_val(32);
  analyze->add_option("--format", an_format, "text, json, or csv")
      ->check(CLI::IsMember({"text", "json", "csv"}));
  analyze->add_option("--out", an_out, "write to a file instead of stdout");
  analyze->add_flag("--layers", an_layers, "include the per-layer table (text format)");

  // compare
  auto* compare = app.add_subcommand("compare", "cost deltas between two architectures");
  std::string cp_arch, cp_base;
  std::int64_t cp_classes = 100, cp_input = 32;
  compare->add_option("--arch", cp_arch, "architecture under test")->required();
  compare->add_option("--baseline", cp_base, "architecture to compare against")->required();
  compare->add_option("--classes", cp_classes, "classifier size")->default_val(100);
  compare->add_option("--input", cp_input, "input side in pixels")->default_val(32);

  // export-spec
  auto* exports = app.add_subcommand("export-spec", "write a registry entry as a spec file");
  std::string ex_arch, ex_out;
  exports->add_option("--arch", ex_arch, "registry architecture name")->required();
  exports->add_option("--out", ex_out, "output path (stdout when omitted)");

  // train
  auto* train = app.add_subcommand("train", "train a model and write logs + checkpoints");
  std::string tr_arch, tr_spec, tr_dataset = "mnist", tr_data_dir, tr_out_dir, tr_resume,
              tr_preset = "desk";
  std::int64_t tr_train_subset = 0, tr_test_subset = 0;
  int tr_epochs = -1, tr_ckpt_every = 0;
  std::int64_t tr_batch = -1;
  double tr_lr = -1;
  std::uint64_t tr_seed = 1;
  train->add_option("--arch", tr_arch, "registry architecture name");
  train->add_option("--spec", tr_spec, "architecture spec file (json)");
  train->add_option("--dataset", tr_dataset, "mnist, cifar10, or cifar100")
      ->check(CLI::IsMember({"mnist", "cifar10", "cifar100"}));
  train->add_option("--data-dir", tr_data_dir, "dataset directory (default data/<dataset>)");
  train->add_option("--out-dir", tr_out_dir, "run directory for log.csv, summary.json, checkpoints")
      ->required();
  train->add_option("--preset", tr_preset, "desk (3 epochs) or full (500 epochs)")
      ->check(CLI::IsMember({"desk", "full"}));
  train->add_option("--epochs", tr_epochs, "override the preset epoch count");
  train->add_option("--batch", tr_batch, "override the batch size");
  train->add_option("--lr", tr_lr, "override the initial learning rate");
  train->add_option("--seed", tr_seed, "run seed")->default_val(1);
  train->add_option("--train-subset", tr_train_subset, "use only the first N training examples");
  train->add_option("--test-subset", tr_test_subset, "use only the first N test examples");
  train->add_option("--resume", tr_resume, "checkpoint to continue from");
  train->add_option("--checkpoint-every", tr_ckpt_every, "periodic checkpoint interval in epochs");

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
  std::string ev_ckpt, ev_dataset = "mnist", ev_data_dir, ev_split = "test", ev_out;
  std::int64_t ev_batch = 100, ev_subset = 0;
  eval->add_option("--checkpoint", ev_ckpt, "checkpoint file")->required();
  eval->add_option("--dataset", ev_dataset, "mnist, cifar10, or cifar100")
      ->check(CLI::IsMember({"mnist", "cifar10", "cifar100"}));
  eval->add_option("--data-dir", ev_data_dir, "dataset directory (default data/<dataset>)");
  eval->add_option("--split", ev_split, "test or train")
      ->check(CLI::IsMember({"test", "train"}));
  eval->add_option("--batch", ev_batch, "evaluation batch size")->default_val(100);
  eval->add_option("--subset", ev_subset, "use only the first N examples");
  eval->add_option("--out", ev_out, "write a json result file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (app.got_subcommand("list-archs")) {
      cmd_list_archs();
    } else if (app.got_subcommand(analyze)) {
      cresnet::ArchSpec spec = resolve_arch(an_arch, an_spec);
      cresnet::CostReport r = cresnet::analyze(spec, an_classes, an_input, an_input);
      if (an_format == "json")
        write_or_print(cresnet::report_to_json(r).dump(2) + "\n", an_out);
      else if (an_format == "csv")
        write_or_print(cresnet::report_to_csv(r), an_out);
      else
        write_or_print(analyze_text(r, spec.provenance, an_layers), an_out);
    } else if (app.got_subcommand(compare)) {
      cresnet::ArchSpec a = cresnet::registry_get(cp_arch);
      cresnet::ArchSpec b = cresnet::registry_get(cp_base);
      cresnet::CompareResult r = cresnet::compare(a, b, cp_classes, cp_input);
      std::printf("%s vs %s  (%lld classes, %lldx%lld input)\n", r.arch_a.c_str(),
                  r.arch_b.c_str(), static_cast<long long>(cp_classes),
                  static_cast<long long>(cp_input), static_cast<long long>(cp_input));
      std::printf("flops:   %s vs %s   %s\n", cresnet::fmt_grouped(r.flops_a).c_str(),
                  cresnet::fmt_grouped(r.flops_b).c_str(),
                  cresnet::fmt_pct(r.flops_pct).c_str());
      std::printf("params:  %s vs %s   %s\n", cresnet::fmt_grouped(r.params_a).c_str(),
                  cresnet::fmt_grouped(r.params_b).c_str(),
                  cresnet::fmt_pct(r.params_pct).c_str());
    } else if (app.got_subcommand(exports)) {
      cresnet::ArchSpec spec = cresnet::registry_get(ex_arch);
      write_or_print(cresnet::to_json(spec).dump(2) + "\n", ex_out);
    } else if (app.got_subcommand(train)) {
      cresnet::TrainConfig cfg =
          tr_preset == "full" ? cresnet::full_preset() : cresnet::desk_preset();
      cfg.arch = resolve_arch(tr_arch, tr_spec);
      DatasetChoice data =
          load_dataset(tr_dataset, tr_data_dir, tr_train_subset, tr_test_subset);
      cfg.classes = data.classes;
      cfg.augment = data.augment;
      cfg.out_dir = tr_out_dir;
      cfg.seed = tr_seed;
      cfg.resume = tr_resume;
      cfg.checkpoint_every = tr_ckpt_every;
      if (tr_epochs > 0) cfg.epochs = tr_epochs;
      if (tr_batch > 0) cfg.batch_size = tr_batch;
      if (tr_lr > 0) cfg.lr0 = tr_lr;
      std::printf("training %s on %s: %lld train / %lld test, %d epochs, batch %lld, seed %llu\n",
                  cfg.arch.name.c_str(), tr_dataset.c_str(),
                  static_cast<long long>(data.train.n), static_cast<long long>(data.test.n),
                  cfg.epochs, static_cast<long long>(cfg.batch_size),
                  static_cast<unsigned long long>(cfg.seed));
      cresnet::TrainResult result =
          cresnet::train<float>(cfg, data.train, data.test, &std::cout);
      std::printf("final test error %.2f%%  (%s)\n", 100 * result.final_test_error,
                  result.final_checkpoint.c_str());
    } else if (app.got_subcommand(eval)) {
      cresnet::Checkpoint<float> ckpt = cresnet::read_checkpoint<float>(ev_ckpt);
      cresnet::Model<float> model = cresnet::model_from_checkpoint(ckpt);
      DatasetChoice data = load_dataset(ev_dataset, ev_data_dir, 0, 0);
      cresnet::Dataset& split = ev_split == "train" ? data.train : data.test;
      if (ev_subset > 0) split = cresnet::take_prefix(split, ev_subset);
      if (model.classes != data.classes)
        throw cresnet::SpecError("checkpoint has " + std::to_string(model.classes) +
                                 " classes, dataset has " + std::to_string(data.classes));
      cresnet::Loader<float> loader(split, ev_batch, false, data.augment, 0);
      const double error = cresnet::evaluate(model, loader);
      std::printf("%s on %s/%s: error %.2f%%  (%lld examples)\n", ckpt.arch.name.c_str(),
                  ev_dataset.c_str(), ev_split.c_str(), 100 * error,
                  static_cast<long long>(split.n));
      if (!ev_out.empty()) {
        nlohmann::json j;
        j["arch"] = ckpt.arch.name;
        j["dataset"] = ev_dataset;
        j["split"] = ev_split;
        j["examples"] = split.n;
        j["error"] = error;
        std::ofstream out(ev_out);
        if (!out) throw cresnet::DataError("cannot write " + ev_out);
        out << j.dump(2) << "\n";
      }
    }
    return 0;
  } catch (const cresnet::SpecError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const cresnet::DataError& e) {
    std::cerr << "error: " << e.what();
    if (e.byte_offset >= 0) std::cerr << " (byte offset " << e.byte_offset << ")";
    std::cerr << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
}
