#include "scolio/train.hpp"

#include <malloc.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <stdexcept>

namespace scolio {

// ---- optimizer -------------------------------------------------------------

template <typename Scalar>
OptimState<Scalar> OptimState<Scalar>::from(const TrainConfig& cfg) {
  OptimState s;
  s.beta1 = cfg.beta1;
  s.beta2 = cfg.beta2;
  s.eps = cfg.eps;
  s.weight_decay = cfg.weight_decay;
  s.lr = cfg.lr;
  return s;
}

template <typename Scalar>
void adamw_step(std::span<const Tensor<Scalar>> params, std::span<const Tensor<Scalar>> grads,
                OptimState<Scalar>& st) {
  if (params.size() != grads.size()) {
    throw std::invalid_argument("adamw: " + std::to_string(params.size()) + " parameters vs " +
                                std::to_string(grads.size()) + " gradients");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].shape() != grads[i].shape()) {
      throw std::invalid_argument("adamw: parameter " + std::to_string(i) + " has shape " +
                                  shape_str(params[i].shape()) + " but gradient " +
                                  shape_str(grads[i].shape()));
    }
  }
  if (st.m.empty()) {
    for (const auto& p : params) {
      st.m.emplace_back(p.shape());
      st.v.emplace_back(p.shape());
    }
  }
  if (st.m.size() != params.size()) throw std::invalid_argument("adamw: state/parameter count");
  ++st.t;
  const double b1 = st.beta1, b2 = st.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(st.t));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(st.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (st.m[i].shape() != params[i].shape()) {
      throw std::invalid_argument("adamw: moment shape mismatch at parameter " + std::to_string(i));
    }
    Tensor<Scalar> p = params[i];
    auto theta = p.data();
    auto g = grads[i].data();
    auto m = st.m[i].data();
    auto v = st.v[i].data();
    for (std::size_t j = 0; j < theta.size(); ++j) {
      const double gj = g[j];
      const double mj = b1 * m[j] + (1.0 - b1) * gj;
      const double vj = b2 * v[j] + (1.0 - b2) * gj * gj;
      m[j] = static_cast<Scalar>(mj);
      v[j] = static_cast<Scalar>(vj);
      const double th = theta[j];
      const double step = (mj / bc1) / (std::sqrt(vj / bc2) + st.eps);
      theta[j] = static_cast<Scalar>(th - st.lr * step - st.lr * st.weight_decay * th);
    }
  }
}

// ---- schedule --------------------------------------------------------------

Schedule Schedule::make(const TrainConfig& cfg) {
  Schedule s;
  s.lr_max = cfg.lr;
  s.lr_min = cfg.lr_min;
  s.total_epochs = cfg.epochs;
  const int w = static_cast<int>(std::ceil(cfg.warmup_frac * cfg.epochs));
  s.warmup_epochs = std::clamp(w, 0, cfg.epochs - 1);
  s.validate();
  return s;
}

void Schedule::validate() const {
  if (total_epochs < 1 || warmup_epochs < 0 || warmup_epochs >= total_epochs) {
    throw std::invalid_argument("schedule needs 0 <= warmup < total epochs");
  }
  if (!(lr_max > 0) || !(lr_min >= 0) || lr_min > lr_max) {
    throw std::invalid_argument("schedule needs 0 <= lr_min <= lr_max");
  }
}

double lr_at(int t, const Schedule& s) {
  s.validate();
  if (t < 0 || t > s.total_epochs) {
    throw std::out_of_range("epoch " + std::to_string(t) + " outside [0, " +
                            std::to_string(s.total_epochs) + "]");
  }
  if (t < s.warmup_epochs) return s.lr_max * (t + 1) / s.warmup_epochs;
  const double phase = std::numbers::pi * (t - s.warmup_epochs) /
                       static_cast<double>(s.total_epochs - s.warmup_epochs);
  const double w = 0.5 * (1.0 + std::cos(phase));
  return w * s.lr_max + (1.0 - w) * s.lr_min;
}

// ---- training --------------------------------------------------------------

void tune_allocator() {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
}

template <typename Scalar>
EpochLog train_epoch(Model<Scalar>& model, const std::vector<Sample>& data,
                     std::span<const std::size_t> indices, OptimState<Scalar>& optim,
                     const Schedule& schedule, int epoch, const TrainConfig& cfg, Rng& rng) {
  if (indices.empty()) throw std::invalid_argument("train_epoch: empty dataset");
  std::vector<std::size_t> order(indices.begin(), indices.end());
  rng.shuffle(order.begin(), order.end());
  optim.lr = lr_at(epoch, schedule);

  std::vector<Tensor<Scalar>> trainable;
  for (const auto& p : model.parameters()) {
    if (p.trainable) trainable.push_back(p.tensor);
  }

  EpochLog log;
  log.epoch = epoch + 1;
  log.lr = optim.lr;
  int batches = 0;
  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
  for (std::size_t start = 0; start < order.size(); start += bs) {
    const std::size_t end = std::min(order.size(), start + bs);
    if (end - start < 2) break;
    std::vector<Sample> batch;
    std::vector<int> general, fine;
    for (std::size_t k = start; k < end; ++k) {
      const Sample& s = data.at(order[k]);
      batch.push_back(augment(s, rng, cfg.augment));
      general.push_back(s.general_level);
      fine.push_back(s.fine_level);
    }
    std::vector<std::size_t> all(batch.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    const Tensor<Scalar> images = make_batch<Scalar>(batch, all, cfg.input_size, cfg.input_size);

    for (auto& t : trainable) t.zero_grad();
    Tape<Scalar> tape;
    const Context<Scalar> ctx{&tape, Mode::train, &rng};
    const auto out = model.forward(images, ctx);
    const Tensor<Scalar> lg = model.branch_loss(out.general, general);
    const Tensor<Scalar> lf = model.branch_loss(out.fine, fine);
    const Tensor<Scalar> loss = joint_loss(lg, lf, cfg.lambda);
    tape.backward(loss);

    std::vector<Tensor<Scalar>> grads;
    grads.reserve(trainable.size());
    for (const auto& t : trainable) {
      grads.push_back(t.has_grad() ? t.grad_tensor() : Tensor<Scalar>(t.shape()));
    }
    adamw_step<Scalar>(trainable, grads, optim);

    log.l_general += static_cast<double>(lg.item());
    log.l_fine += static_cast<double>(lf.item());
    log.l_total += static_cast<double>(loss.item());
    ++batches;
  }
  if (batches == 0) throw std::invalid_argument("train_epoch: need at least two samples");
  log.l_general /= batches;
  log.l_fine /= batches;
  log.l_total /= batches;
  return log;
}

template <typename Scalar>
std::vector<EpochLog> fit(Model<Scalar>& model, const std::vector<Sample>& data,
                          std::span<const std::size_t> indices, const TrainConfig& cfg,
                          const std::function<void(const EpochLog&)>& on_epoch) {
  tune_allocator();
  cfg.validate();
  const Schedule schedule = Schedule::make(cfg);
  auto optim = OptimState<Scalar>::from(cfg);
  std::vector<EpochLog> logs;
  for (int e = 0; e < cfg.epochs; ++e) {
    Rng rng = Rng::derive(cfg.seed, 0x7e40000 + static_cast<std::uint64_t>(e));
    logs.push_back(train_epoch(model, data, indices, optim, schedule, e, cfg, rng));
    if (on_epoch) on_epoch(logs.back());
  }
  return logs;
}

void write_loss_csv(const std::filesystem::path& path, const std::vector<EpochLog>& logs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
  out << "epoch,l_general,l_fine,l_total,lr\n";
  char buf[160];
  for (const auto& l : logs) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g\n", l.epoch, l.l_general, l.l_fine,
                  l.l_total, l.lr);
    out << buf;
  }
  if (!out) throw std::runtime_error(path.string() + ": write failed");
}

// ---- inference -------------------------------------------------------------

template <typename Scalar>
Predictions predict(Model<Scalar>& model, const std::vector<Sample>& data,
                    std::span<const std::size_t> indices, int input_size, int batch) {
  if (batch < 1) throw std::invalid_argument("predict: batch must be >= 1");
  Predictions p;
  const Context<Scalar> ctx{nullptr, Mode::eval, nullptr};
  for (std::size_t start = 0; start < indices.size(); start += static_cast<std::size_t>(batch)) {
    const std::size_t end = std::min(indices.size(), start + static_cast<std::size_t>(batch));
    std::vector<std::size_t> idx(indices.begin() + static_cast<std::ptrdiff_t>(start),
                                 indices.begin() + static_cast<std::ptrdiff_t>(end));
    const auto out = model.forward(make_batch<Scalar>(data, idx, input_size, input_size), ctx);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const Index n = static_cast<Index>(i);
      p.general.push_back(out.general.ranks[i]);
      p.fine.push_back(out.fine.ranks[i]);
      p.general_scores.push_back(out.general.level_scores(n));
      p.fine_scores.push_back(out.fine.level_scores(n));
    }
  }
  return p;
}

EvalReport evaluate_predictions(const std::vector<Sample>& data,
                                std::span<const std::size_t> indices, const Predictions& p) {
  std::vector<int> general, fine;
  for (std::size_t i : indices) {
    general.push_back(data.at(i).general_level);
    fine.push_back(data.at(i).fine_level);
  }
  EvalReport r;
  r.general = evaluate(general, p.general, 4, p.general_scores);
  r.fine = evaluate(fine, p.fine, 10, p.fine_scores);
  return r;
}

template <typename Scalar>
EvalReport evaluate_model(Model<Scalar>& model, const std::vector<Sample>& data,
                          std::span<const std::size_t> indices, int input_size) {
  return evaluate_predictions(data, indices, predict(model, data, indices, input_size));
}

// ---- folds -----------------------------------------------------------------

std::vector<std::size_t> FoldSplit::test(int fold) const { return folds.at(static_cast<std::size_t>(fold)); }

std::vector<std::size_t> FoldSplit::train(int fold) const {
  if (fold < 0 || fold >= size()) throw std::out_of_range("fold index");
  std::vector<std::size_t> out;
  for (int f = 0; f < size(); ++f) {
    if (f == fold) continue;
    const auto& part = folds[static_cast<std::size_t>(f)];
    out.insert(out.end(), part.begin(), part.end());
  }
  std::sort(out.begin(), out.end());
  return out;
}

FoldSplit make_folds(const std::vector<Sample>& data, int k, std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("need at least two folds");
  if (data.size() < static_cast<std::size_t>(k)) {
    throw std::invalid_argument("need at least " + std::to_string(k) + " samples for " +
                                std::to_string(k) + " folds");
  }
  FoldSplit split;
  split.folds.resize(static_cast<std::size_t>(k));
  std::size_t dealt = 0;
  for (int level = 1; level <= 4; ++level) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (data[i].general_level == level) members.push_back(i);
    }
    Rng rng = Rng::derive(seed, 0xf01d0 + static_cast<std::uint64_t>(level));
    rng.shuffle(members.begin(), members.end());
    for (std::size_t i : members) split.folds[dealt++ % static_cast<std::size_t>(k)].push_back(i);
  }
  for (auto& f : split.folds) std::sort(f.begin(), f.end());
  return split;
}

CvResult five_fold(const std::vector<Sample>& data, const RunConfig& cfg,
                   const std::function<void(int, const EpochLog&)>& on_epoch) {
  cfg.validate();
  const FoldSplit split = make_folds(data, cfg.train.folds, cfg.train.seed);
  CvResult result;
  std::vector<MetricsReport> general, fine;
  std::vector<std::size_t> pooled_idx;
  Predictions pooled;
  auto append = [](auto& dst, const auto& src) { dst.insert(dst.end(), src.begin(), src.end()); };
  for (int f = 0; f < split.size(); ++f) {
    TrainConfig tc = cfg.train;
    tc.seed = mix_seed(cfg.train.seed, static_cast<std::uint64_t>(f));
    auto model = Model<double>::init(cfg.model, tc.seed);
    const auto train_idx = split.train(f);
    fit<double>(model, data, train_idx, tc, [&](const EpochLog& l) {
      if (on_epoch) on_epoch(f, l);
    });
    const auto test_idx = split.test(f);
    const Predictions p = predict(model, data, test_idx, tc.input_size);
    result.folds.push_back(evaluate_predictions(data, test_idx, p));
    append(pooled_idx, test_idx);
    append(pooled.general, p.general);
    append(pooled.fine, p.fine);
    append(pooled.general_scores, p.general_scores);
    append(pooled.fine_scores, p.fine_scores);
    general.push_back(result.folds.back().general);
    fine.push_back(result.folds.back().fine);
  }
  result.average.general = average_reports(general);
  result.average.fine = average_reports(fine);
  result.pooled = evaluate_predictions(data, pooled_idx, pooled);
  return result;
}

#define SCOLIO_INSTANTIATE_TRAIN(S)                                                          \
  template struct OptimState<S>;                                                             \
  template void adamw_step(std::span<const Tensor<S>>, std::span<const Tensor<S>>,           \
                           OptimState<S>&);                                                  \
  template EpochLog train_epoch(Model<S>&, const std::vector<Sample>&,                       \
                                std::span<const std::size_t>, OptimState<S>&,                \
                                const Schedule&, int, const TrainConfig&, Rng&);             \
  template std::vector<EpochLog> fit(Model<S>&, const std::vector<Sample>&,                  \
                                     std::span<const std::size_t>, const TrainConfig&,       \
                                     const std::function<void(const EpochLog&)>&);           \
  template Predictions predict(Model<S>&, const std::vector<Sample>&,                        \
                               std::span<const std::size_t>, int, int);                      \
  template EvalReport evaluate_model(Model<S>&, const std::vector<Sample>&,                  \
                                     std::span<const std::size_t>, int);

SCOLIO_INSTANTIATE_TRAIN(float)
SCOLIO_INSTANTIATE_TRAIN(double)

}  // namespace scolio
