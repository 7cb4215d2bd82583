#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hvit/model.hpp"
#include "hvit/preprocessing.hpp"

namespace hvit {

/// Graded slides; labels are ISUP grade groups 0..5.
struct SlideEntry {
  std::string id;
  std::vector<Tensor> regions;
  int isup = 0;
  std::string site;  // optional tag
};

struct Dataset {
  std::vector<SlideEntry> entries;
  std::vector<int> labels() const;
};

/// Stratified k-fold partition: seeded shuffle within each class, then
/// round-robin assignment, so per-class counts across folds differ by at
/// most one.
struct FoldSplit {
  std::vector<std::vector<std::size_t>> folds;
  std::vector<std::size_t> train_indices(std::size_t held_out) const;
};

FoldSplit stratified_kfold(const std::vector<int>& labels, std::size_t k, std::uint64_t seed);

double mse_loss(double pred, double target);

/// Round half away from zero, clamped to the 0..5 grade range.
int predict_isup(double score);

/// Quadratic weighted kappa over grades 0..5:
/// 1 - sum(w o) / sum(w e) with w[i][j] = (i-j)^2 / 25, o the confusion
/// counts and e the outer product of marginals scaled to the same total.
/// Zero expected disagreement (both vectors constant and equal) is defined
/// as 1.0.
double qwk(const std::vector<int>& labels, const std::vector<int>& preds);

/// Paired two-sided permutation test on qwk(labels, a) - qwk(labels, b).
/// The null swaps a[i] <-> b[i] with probability 1/2 per sample; the
/// plus-one estimator (1 + hits) / (iters + 1) keeps p positive.
double permutation_test(const std::vector<int>& labels, const std::vector<int>& preds_a,
                        const std::vector<int>& preds_b, std::size_t iters, std::uint64_t seed);

struct TrainConfig {
  std::size_t epochs = 10;
  double lr = 0.05;
  double momentum = 0.0;       // plain SGD by default
  std::size_t batch_size = 8;  // slides per step
  std::uint64_t seed = 1;
  bool cache_frozen = false;   // memoize frozen-stage outputs across steps
};

struct TrainLog {
  std::vector<double> train_loss;  // mean pre-step MSE per epoch
  std::vector<double> tune_qwk;    // held-out fold QWK per epoch
};

/// SGD over MSE between the continuous score and the grade. Gradient steps
/// touch only non-frozen stages plus the head; frozen tensors stay
/// bit-identical. Deterministic for a fixed config.
TrainLog train(HViTModel& model, const Dataset& data, const FoldSplit& folds, std::size_t fold_id,
               const TrainConfig& cfg);

struct Prediction {
  std::string id;
  double score = 0.0;
  int predicted = 0;
  int label = 0;
};

struct EvalResult {
  double qwk = 0.0;
  std::vector<Prediction> predictions;
};

EvalResult evaluate(const HViTModel& model, const Dataset& data, const std::vector<std::size_t>& subset,
                    FrozenCache* cache = nullptr);

/// Mean continuous score across fold models, then the usual grade mapping.
std::vector<Prediction> ensemble_predict(const std::vector<HViTModel>& models, const Dataset& data);

}  // namespace hvit
