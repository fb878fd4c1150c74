#pragma once

// Training driver: SGD with momentum and weight decay, step-decay learning
// rate, per-epoch evaluation, CSV/JSON run logs, and checkpoint resume.
//
// Determinism contract: given the same config, dataset, and binary, two runs
// produce bitwise-identical weights and logs, and a run resumed from a
// checkpoint matches the uninterrupted run exactly. Everything random is
// keyed on (seed, epoch) or (seed, epoch, batch); nothing reads a global
// generator.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cresnet/checkpoint.hpp"
#include "cresnet/data.hpp"
#include "cresnet/model.hpp"

namespace cresnet {

struct TrainConfig {
  ArchSpec arch;
  std::int64_t classes = 10;
  int epochs = 3;
  std::int64_t batch_size = 32;
  double lr0 = 0.01;
  double lr_decay = 0.1;
  int lr_step = 150;  // epochs between decays
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::uint64_t seed = 1;
  AugmentConfig augment = cifar_augment();
  std::string out_dir;       // empty: keep everything in memory
  int checkpoint_every = 0;  // extra periodic checkpoints; 0 = final only
  std::string resume;        // checkpoint path to continue from
};

// The reference recipe: 500 epochs, lr 0.01 decayed 10x every 150.
inline TrainConfig full_preset() {
  TrainConfig c;
  c.epochs = 500;
  return c;
}

// Minutes-scale run for a single core; pair with small dataset prefixes.
inline TrainConfig desk_preset() {
  TrainConfig c;
  c.epochs = 3;
  return c;
}

inline double lr_at(const TrainConfig& c, int epoch) {
  return c.lr0 * std::pow(c.lr_decay, epoch / c.lr_step);
}

// v <- momentum * v + (grad + weight_decay * p); p <- p - lr * v
template <typename T>
struct Sgd {
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::vector<std::vector<T>> velocity;

  void step(Model<T>& model, double lr) {
    size_t k = 0;
    model.for_each_parameter([&](const std::string& name, Tensor<T>& p) {
      if (velocity.size() <= k) velocity.emplace_back(static_cast<size_t>(p.size()), T(0));
      std::vector<T>& v = velocity[k];
      if (static_cast<std::int64_t>(v.size()) != p.size())
        throw Error("sgd: velocity size drifted at " + name);
      if (!p.has_grad()) throw GraphError("sgd: no gradient for " + name);
      const std::vector<T>& g = p.grad();
      T* pd = p.data();
      const T m = static_cast<T>(momentum), wd = static_cast<T>(weight_decay);
      const T rate = static_cast<T>(lr);
      for (size_t i = 0; i < v.size(); ++i) {
        v[i] = m * v[i] + (g[i] + wd * pd[i]);
        pd[i] -= rate * v[i];
      }
      ++k;
    });
  }
};

// Top-1 error over the loader's dataset; leaves the model's mode restored
// and its batchnorm state untouched.
template <typename T>
double evaluate(Model<T>& model, Loader<T>& loader) {
  NoGradGuard no_grad;
  const bool was_training = model.training;
  model.set_training(false);
  std::int64_t wrong = 0, total = 0;
  for (std::int64_t b = 0; b < loader.batches(); ++b) {
    Batch<T> batch = loader.batch(0, b);
    Tensor<T> logits = model.forward(batch.x);
    const std::int64_t n = logits.dim(0), k = logits.dim(1);
    for (std::int64_t i = 0; i < n; ++i) {
      const T* row = logits.data() + i * k;
      std::int64_t best = 0;
      for (std::int64_t j = 1; j < k; ++j)
        if (row[j] > row[best]) best = j;
      if (static_cast<int>(best) != batch.y[static_cast<size_t>(i)]) ++wrong;
    }
    total += n;
  }
  model.set_training(was_training);
  return static_cast<double>(wrong) / static_cast<double>(total);
}

struct EpochStat {
  int epoch = 0;  // 0-based
  double lr = 0;
  double train_loss = 0;
  double test_error = 0;
  double seconds = 0;
};

struct TrainResult {
  std::vector<EpochStat> history;
  double final_test_error = 1.0;
  std::string final_checkpoint;
};

namespace detail {

inline std::string csv_line(const EpochStat& s) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%d,%.10g,%.10g,%.10g\n", s.epoch, s.lr, s.train_loss,
                s.test_error);
  return buf;
}

}  // namespace detail

template <typename T>
TrainResult train(const TrainConfig& cfg, const Dataset& train_ds, const Dataset& test_ds,
                  std::ostream* log = nullptr) {
  validate(cfg.arch);
  if (cfg.epochs < 1) throw SpecError("epochs must be >= 1");
  if (train_ds.num_classes != cfg.classes || test_ds.num_classes != cfg.classes)
    throw SpecError("config says " + std::to_string(cfg.classes) +
                    " classes but the datasets carry " +
                    std::to_string(train_ds.num_classes) + "/" +
                    std::to_string(test_ds.num_classes));

  Model<T> model = build_model<T>(cfg.arch, cfg.classes, cfg.seed);
  Sgd<T> sgd;
  sgd.momentum = cfg.momentum;
  sgd.weight_decay = cfg.weight_decay;
  int start_epoch = 0;
  if (!cfg.resume.empty()) {
    Checkpoint<T> ckpt = read_checkpoint<T>(cfg.resume);
    restore_checkpoint(ckpt, model, &sgd.velocity);
    start_epoch = ckpt.epoch;
    if (start_epoch >= cfg.epochs)
      throw SpecError("checkpoint already has " + std::to_string(start_epoch) +
                      " epochs, config asks for " + std::to_string(cfg.epochs));
  }

  Loader<T> train_loader(train_ds, cfg.batch_size, true, cfg.augment, cfg.seed);
  Loader<T> test_loader(test_ds, cfg.batch_size, false, cfg.augment, cfg.seed);

  std::ofstream csv;
  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    const std::string path = cfg.out_dir + "/log.csv";
    const bool fresh = start_epoch == 0 || !std::filesystem::exists(path);
    csv.open(path, fresh ? std::ios::trunc : std::ios::app);
    if (!csv) throw DataError("cannot write " + path);
    if (fresh) csv << "epoch,lr,train_loss,test_error\n";
  }

  TrainResult result;
  model.set_training(true);
  for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = lr_at(cfg, epoch);
    double loss_sum = 0;
    std::int64_t seen = 0;
    for (std::int64_t b = 0; b < train_loader.batches(); ++b) {
      Batch<T> batch = train_loader.batch(epoch, b);
      model.zero_grad();
      Tensor<T> logits = model.forward(batch.x);
      Tensor<T> loss = softmax_cross_entropy(logits, batch.y);
      const double lv = static_cast<double>(loss.item());
      if (!std::isfinite(lv)) {
        const std::string where = model.first_nonfinite(batch.x);
        throw Error("training aborted at epoch " + std::to_string(epoch) + " batch " +
                    std::to_string(b) + ": non-finite loss, first bad activation in " +
                    (where.empty() ? std::string("loss") : where));
      }
      loss.backward();
      sgd.step(model, lr);
      loss_sum += lv * static_cast<double>(batch.y.size());
      seen += static_cast<std::int64_t>(batch.y.size());
    }

    EpochStat stat;
    stat.epoch = epoch;
    stat.lr = lr;
    stat.train_loss = loss_sum / static_cast<double>(seen);
    stat.test_error = evaluate(model, test_loader);
    stat.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.push_back(stat);
    if (csv.is_open()) {
      csv << detail::csv_line(stat);
      csv.flush();
    }
    if (log) {
      char line[160];
      std::snprintf(line, sizeof line, "epoch %d/%d  lr %.4g  loss %.4f  err %.2f%%  (%.1fs)",
                    epoch + 1, cfg.epochs, lr, stat.train_loss, 100 * stat.test_error,
                    stat.seconds);
      (*log) << line << std::endl;
    }
    if (!cfg.out_dir.empty() && cfg.checkpoint_every > 0 &&
        (epoch + 1) % cfg.checkpoint_every == 0 && epoch + 1 < cfg.epochs)
      save_checkpoint(cfg.out_dir + "/checkpoint_epoch" + std::to_string(epoch + 1) + ".ckpt",
                      model, sgd.velocity, epoch + 1, cfg.seed);
  }

  result.final_test_error = result.history.empty() ? 1.0 : result.history.back().test_error;
  if (!cfg.out_dir.empty()) {
    result.final_checkpoint = cfg.out_dir + "/checkpoint_final.ckpt";
    save_checkpoint(result.final_checkpoint, model, sgd.velocity, cfg.epochs, cfg.seed);
    nlohmann::json summary;
    summary["arch"] = cfg.arch.name;
    summary["classes"] = cfg.classes;
    summary["epochs"] = cfg.epochs;
    summary["seed"] = cfg.seed;
    summary["final_test_error"] = result.final_test_error;
    summary["train_examples"] = train_ds.n;
    summary["test_examples"] = test_ds.n;
    nlohmann::json hist = nlohmann::json::array();
    for (const EpochStat& s : result.history)
      hist.push_back({{"epoch", s.epoch},
                      {"lr", s.lr},
                      {"train_loss", s.train_loss},
                      {"test_error", s.test_error}});
    summary["history"] = std::move(hist);
    std::ofstream js(cfg.out_dir + "/summary.json");
    js << summary.dump(2) << "\n";
  }
  return result;
}

// Pooled mean and sample standard deviation over the last `last_k` test
// errors of each run.
struct RunSummary {
  double mean = 0;
  double stddev = 0;
  int pooled = 0;
};

inline RunSummary summarize_runs(const std::vector<std::vector<double>>& runs,
                                 int last_k = 20) {
  if (runs.empty() || last_k < 1) throw SpecError("summarize_runs needs runs and last_k >= 1");
  std::vector<double> pool;
  for (size_t r = 0; r < runs.size(); ++r) {
    if (static_cast<int>(runs[r].size()) < last_k)
      throw SpecError("run " + std::to_string(r) + " has " +
                      std::to_string(runs[r].size()) + " epochs, needs >= " +
                      std::to_string(last_k));
    pool.insert(pool.end(), runs[r].end() - last_k, runs[r].end());
  }
  RunSummary s;
  s.pooled = static_cast<int>(pool.size());
  for (double v : pool) s.mean += v;
  s.mean /= pool.size();
  if (pool.size() > 1) {
    double acc = 0;
    for (double v : pool) acc += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(acc / (pool.size() - 1));
  }
  return s;
}

}  // namespace cresnet
