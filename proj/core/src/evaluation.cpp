#include "hvit/evaluation.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

#include "hvit/rng.hpp"

namespace hvit {

namespace {

constexpr int kGrades = 6;

void require_grades(const std::vector<int>& v, const char* who) {
  for (int g : v) {
    if (g < 0 || g >= kGrades) {
      throw std::invalid_argument(std::string(who) + " has grade " + std::to_string(g) + " outside 0..5");
    }
  }
}

}  // namespace

std::vector<int> Dataset::labels() const {
  std::vector<int> out;
  out.reserve(entries.size());
  for (const SlideEntry& e : entries) out.push_back(e.isup);
  return out;
}

std::vector<std::size_t> FoldSplit::train_indices(std::size_t held_out) const {
  if (held_out >= folds.size()) throw std::invalid_argument("fold id out of range");
  std::vector<std::size_t> out;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    if (f == held_out) continue;
    out.insert(out.end(), folds[f].begin(), folds[f].end());
  }
  std::sort(out.begin(), out.end());
  return out;
}

FoldSplit stratified_kfold(const std::vector<int>& labels, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("k must be at least 2");
  require_grades(labels, "stratified_kfold labels");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  FoldSplit split;
  split.folds.assign(k, {});
  Rng rng(mix_seed(seed, 0x666f6c64ull));
  std::size_t next_fold = 0;  // round-robin pointer carries across classes
  for (auto& [label, indices] : by_class) {
    rng.shuffle(indices);
    for (std::size_t idx : indices) {
      split.folds[next_fold].push_back(idx);
      next_fold = (next_fold + 1) % k;
    }
  }
  for (auto& fold : split.folds) std::sort(fold.begin(), fold.end());
  return split;
}

double mse_loss(double pred, double target) {
  const double d = pred - target;
  return d * d;
}

int predict_isup(double score) {
  const double rounded = std::round(score);  // half away from zero
  return static_cast<int>(std::clamp(rounded, 0.0, 5.0));
}

double qwk(const std::vector<int>& labels, const std::vector<int>& preds) {
  if (labels.size() != preds.size()) {
    throw std::invalid_argument("qwk length mismatch: " + std::to_string(labels.size()) + " labels vs " +
                                std::to_string(preds.size()) + " predictions");
  }
  if (labels.empty()) throw std::invalid_argument("qwk needs at least one pair");
  require_grades(labels, "qwk labels");
  require_grades(preds, "qwk predictions");

  std::array<std::array<double, kGrades>, kGrades> observed{};
  std::array<double, kGrades> row_marginal{};
  std::array<double, kGrades> col_marginal{};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    observed[labels[i]][preds[i]] += 1.0;
    row_marginal[labels[i]] += 1.0;
    col_marginal[preds[i]] += 1.0;
  }
  const double total = static_cast<double>(labels.size());
  double num = 0.0, den = 0.0;
  for (int i = 0; i < kGrades; ++i) {
    for (int j = 0; j < kGrades; ++j) {
      const double w = static_cast<double>((i - j) * (i - j)) / 25.0;
      num += w * observed[i][j];
      den += w * row_marginal[i] * col_marginal[j] / total;
    }
  }
  if (den == 0.0) return 1.0;  // both vectors constant and equal
  return 1.0 - num / den;
}

double permutation_test(const std::vector<int>& labels, const std::vector<int>& preds_a,
                        const std::vector<int>& preds_b, std::size_t iters, std::uint64_t seed) {
  if (labels.size() != preds_a.size() || labels.size() != preds_b.size()) {
    throw std::invalid_argument("permutation_test needs equal-length labels and predictions");
  }
  if (iters == 0) throw std::invalid_argument("permutation_test needs at least one iteration");
  const double t = qwk(labels, preds_a) - qwk(labels, preds_b);
  Rng rng(mix_seed(seed, 0x7065726dull));
  std::vector<int> a = preds_a, b = preds_b;
  std::size_t hits = 0;
  for (std::size_t it = 0; it < iters; ++it) {
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (rng.uniform() < 0.5) {
        a[i] = preds_b[i];
        b[i] = preds_a[i];
      } else {
        a[i] = preds_a[i];
        b[i] = preds_b[i];
      }
    }
    const double t_null = qwk(labels, a) - qwk(labels, b);
    if (std::abs(t_null) >= std::abs(t)) ++hits;
  }
  return (1.0 + static_cast<double>(hits)) / (static_cast<double>(iters) + 1.0);
}

TrainLog train(HViTModel& model, const Dataset& data, const FoldSplit& folds, std::size_t fold_id,
               const TrainConfig& cfg) {
  if (cfg.epochs == 0 || cfg.lr <= 0.0) throw std::invalid_argument("train needs positive epochs and lr");
  if (cfg.batch_size == 0) throw std::invalid_argument("train needs a positive batch size");
  model.scheme.validate();
  std::vector<std::size_t> train_set = folds.train_indices(fold_id);
  if (train_set.empty()) throw std::invalid_argument("training fold is empty");
  for (std::size_t idx : train_set) {
    if (idx >= data.entries.size()) throw std::invalid_argument("fold index out of dataset range");
  }

  FrozenCache cache;
  FrozenCache* cache_ptr = cfg.cache_frozen ? &cache : nullptr;

  // Momentum buffers per trainable tensor, keyed by checkpoint name.
  std::map<std::string, Tensor> velocity;

  TrainLog log;
  Rng order_rng(mix_seed(cfg.seed, 0x747261696eull));
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order = train_set;
    order_rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::map<std::string, Tensor> grad_sum;
      for (std::size_t i = start; i < end; ++i) {
        const SlideEntry& entry = data.entries[order[i]];
        Graph g;
        SlideGraphResult res = build_slide_graph(g, model, entry.regions, true, false, cache_ptr);
        Value target = g.leaf(Tensor({1, 1}, {static_cast<double>(entry.isup)}));
        Value diff = g.sub(res.score, target);
        Value loss = g.mul(diff, diff);
        loss_sum += g.value(loss)[0];
        g.backward(loss);
        for (const auto& [name, leaf] : res.trainable) {
          const Tensor& grad = g.grad(leaf);
          auto it = grad_sum.find(name);
          if (it == grad_sum.end()) {
            grad_sum.emplace(name, grad);
          } else {
            for (std::size_t j = 0; j < grad.size(); ++j) it->second[j] += grad[j];
          }
        }
      }
      const double inv_batch = 1.0 / static_cast<double>(end - start);
      for (auto& [name, grad] : grad_sum) {
        Tensor* param = find_param(model, name);
        if (!param) throw std::logic_error("trainable gradient for unknown tensor '" + name + "'");
        auto [vit, inserted] = velocity.try_emplace(name, Tensor::zeros(grad.shape()));
        Tensor& vel = vit->second;
        for (std::size_t j = 0; j < grad.size(); ++j) {
          const double gj = grad[j] * inv_batch;
          vel[j] = cfg.momentum * vel[j] + gj;
          (*param)[j] -= cfg.lr * vel[j];
        }
      }
    }
    const std::size_t steps = (order.size() + cfg.batch_size - 1) / cfg.batch_size;
    log.train_loss.push_back(loss_sum / static_cast<double>(order.size()));
    (void)steps;
    log.tune_qwk.push_back(evaluate(model, data, folds.folds[fold_id], cache_ptr).qwk);
  }
  return log;
}

EvalResult evaluate(const HViTModel& model, const Dataset& data, const std::vector<std::size_t>& subset,
                    FrozenCache* cache) {
  EvalResult result;
  std::vector<int> labels, preds;
  labels.reserve(subset.size());
  preds.reserve(subset.size());
  ForwardOptions opts;
  opts.want_bundle = false;
  opts.cache = cache;
  for (std::size_t idx : subset) {
    if (idx >= data.entries.size()) throw std::invalid_argument("subset index out of dataset range");
    const SlideEntry& entry = data.entries[idx];
    const double score = forward_slide(model, entry.regions, opts).score;
    Prediction p;
    p.id = entry.id;
    p.score = score;
    p.predicted = predict_isup(score);
    p.label = entry.isup;
    result.predictions.push_back(std::move(p));
    labels.push_back(entry.isup);
    preds.push_back(result.predictions.back().predicted);
  }
  result.qwk = labels.empty() ? 0.0 : qwk(labels, preds);
  return result;
}

std::vector<Prediction> ensemble_predict(const std::vector<HViTModel>& models, const Dataset& data) {
  if (models.empty()) throw std::invalid_argument("ensemble needs at least one model");
  std::vector<Prediction> out;
  out.reserve(data.entries.size());
  ForwardOptions opts;
  opts.want_bundle = false;
  for (const SlideEntry& entry : data.entries) {
    double mean_score = 0.0;
    for (const HViTModel& m : models) {
      mean_score += forward_slide(m, entry.regions, opts).score;
    }
    mean_score /= static_cast<double>(models.size());
    Prediction p;
    p.id = entry.id;
    p.score = mean_score;
    p.predicted = predict_isup(mean_score);
    p.label = entry.isup;
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace hvit
