#pragma once

#include <string>
#include <vector>

#include "hvit/evaluation.hpp"

namespace hvit::tools {

/// One row of a labels manifest: `id grade path [site]`, paths relative to
/// the manifest file.
struct LabelRow {
  std::string id;
  int grade = 0;
  std::string path;
  std::string site;
};

std::vector<LabelRow> read_labels(const std::string& path);
void write_labels(const std::string& path, const std::vector<LabelRow>& rows);

/// Loads region sets for every labeled slide from `<data_dir>/<id>/regions.txt`.
Dataset load_dataset(const std::vector<LabelRow>& rows, const std::string& data_dir);

/// Folds file: `id fold` rows. Ids must match the labels manifest.
void write_folds(const std::string& path, const std::vector<LabelRow>& rows, const FoldSplit& split,
                 std::size_t k, std::uint64_t seed);
FoldSplit read_folds(const std::string& path, const std::vector<LabelRow>& rows);

struct PredRow {
  std::string id;
  double score = 0.0;
  int predicted = 0;
  int label = 0;
};

/// Predictions file: one `id score class label` row per slide.
void write_predictions(const std::string& path, const std::vector<Prediction>& preds);
std::vector<PredRow> read_predictions(const std::string& path);

}  // namespace hvit::tools
