#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "scolio/config.hpp"
#include "scolio/metrics.hpp"
#include "scolio/model.hpp"

namespace scolio {

// ---- optimizer -------------------------------------------------------------

template <typename Scalar>
struct OptimState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
  double lr = 1e-4;
  std::int64_t t = 0;
  std::vector<Tensor<Scalar>> m, v;  // allocated on the first step

  static OptimState from(const TrainConfig& cfg);
};

/// One decoupled-weight-decay Adam update of every tensor in `params`
/// (updated in place through their shared storage).
template <typename Scalar>
void adamw_step(std::span<const Tensor<Scalar>> params, std::span<const Tensor<Scalar>> grads,
                OptimState<Scalar>& state);

// ---- schedule --------------------------------------------------------------

struct Schedule {
  double lr_max = 1e-4;
  double lr_min = 1e-6;
  int total_epochs = 40;
  int warmup_epochs = 2;

  /// warmup = ceil(warmup_frac * epochs), capped at epochs - 1.
  static Schedule make(const TrainConfig& cfg);
  void validate() const;
};

/// Linear warmup to lr_max over [0, W), then cosine decay reaching lr_min at T.
double lr_at(int epoch, const Schedule& s);

// ---- training --------------------------------------------------------------

struct EpochLog {
  int epoch = 0;
  double l_general = 0.0;
  double l_fine = 0.0;
  double l_total = 0.0;
  double lr = 0.0;
};

/// Route big tensor buffers through the heap instead of fresh mmaps.
void tune_allocator();

/// One shuffled pass over `indices`. Batches smaller than two samples are
/// skipped. Returns the batch-mean losses.
template <typename Scalar>
EpochLog train_epoch(Model<Scalar>& model, const std::vector<Sample>& data,
                     std::span<const std::size_t> indices, OptimState<Scalar>& optim,
                     const Schedule& schedule, int epoch, const TrainConfig& cfg, Rng& rng);

/// Full training run; epoch e draws from Rng::derive(cfg.seed, e).
template <typename Scalar>
std::vector<EpochLog> fit(Model<Scalar>& model, const std::vector<Sample>& data,
                          std::span<const std::size_t> indices, const TrainConfig& cfg,
                          const std::function<void(const EpochLog&)>& on_epoch = {});

void write_loss_csv(const std::filesystem::path& path, const std::vector<EpochLog>& logs);

// ---- inference / evaluation -----------------------------------------------

struct Predictions {
  std::vector<int> general, fine;
  std::vector<std::vector<double>> general_scores, fine_scores;
};

template <typename Scalar>
Predictions predict(Model<Scalar>& model, const std::vector<Sample>& data,
                    std::span<const std::size_t> indices, int input_size, int batch = 32);

struct EvalReport {
  MetricsReport general;
  MetricsReport fine;
};

EvalReport evaluate_predictions(const std::vector<Sample>& data,
                                std::span<const std::size_t> indices, const Predictions& p);

template <typename Scalar>
EvalReport evaluate_model(Model<Scalar>& model, const std::vector<Sample>& data,
                          std::span<const std::size_t> indices, int input_size);

// ---- folds -----------------------------------------------------------------

/// Stratified by general level: each level's samples are shuffled and dealt
/// round-robin over the folds.
struct FoldSplit {
  std::vector<std::vector<std::size_t>> folds;

  std::vector<std::size_t> test(int fold) const;
  std::vector<std::size_t> train(int fold) const;
  int size() const { return static_cast<int>(folds.size()); }
};

FoldSplit make_folds(const std::vector<Sample>& data, int k, std::uint64_t seed);

struct CvResult {
  std::vector<EvalReport> folds;
  EvalReport average;  // mean of the fold metrics
  EvalReport pooled;   // all out-of-fold predictions scored together
};

/// k independent trainings (model seed mix_seed(seed, fold)).
CvResult five_fold(const std::vector<Sample>& data, const RunConfig& cfg,
                   const std::function<void(int fold, const EpochLog&)>& on_epoch = {});

}  // namespace scolio
