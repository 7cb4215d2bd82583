#include "dataset_io.hpp"

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace hvit::tools {

namespace fs = std::filesystem;

std::vector<LabelRow> read_labels(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open labels manifest: " + path);
  std::vector<LabelRow> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    LabelRow row;
    if (!(ls >> row.id >> row.grade >> row.path)) {
      throw std::runtime_error("bad labels line in " + path + ": " + line);
    }
    ls >> row.site;  // optional
    if (row.grade < 0 || row.grade > 5) {
      throw std::runtime_error("label for slide '" + row.id + "' outside 0..5");
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw std::runtime_error("labels manifest is empty: " + path);
  return rows;
}

void write_labels(const std::string& path, const std::vector<LabelRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write labels manifest: " + path);
  out << "# hvit labels v1\n";
  for (const LabelRow& row : rows) {
    out << row.id << " " << row.grade << " " << row.path;
    if (!row.site.empty()) out << " " << row.site;
    out << "\n";
  }
  if (!out) throw std::runtime_error("labels write failed: " + path);
}

Dataset load_dataset(const std::vector<LabelRow>& rows, const std::string& data_dir) {
  Dataset data;
  for (const LabelRow& row : rows) {
    const fs::path manifest = fs::path(data_dir) / row.id / "regions.txt";
    RegionSet set = read_region_set(manifest.string());
    if (set.regions.empty()) {
      throw std::runtime_error("slide '" + row.id + "' has no retained regions in " + manifest.string());
    }
    SlideEntry entry;
    entry.id = row.id;
    entry.isup = row.grade;
    entry.site = row.site;
    entry.regions = region_tensors(set);
    data.entries.push_back(std::move(entry));
  }
  return data;
}

void write_folds(const std::string& path, const std::vector<LabelRow>& rows, const FoldSplit& split,
                 std::size_t k, std::uint64_t seed) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write folds file: " + path);
  out << "# hvit folds v1\n";
  out << "# k " << k << "\n";
  out << "# seed " << seed << "\n";
  for (std::size_t f = 0; f < split.folds.size(); ++f) {
    for (std::size_t idx : split.folds[f]) {
      out << rows[idx].id << " " << f << "\n";
    }
  }
  if (!out) throw std::runtime_error("folds write failed: " + path);
}

FoldSplit read_folds(const std::string& path, const std::vector<LabelRow>& rows) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open folds file: " + path);
  std::map<std::string, std::size_t> index_of;
  for (std::size_t i = 0; i < rows.size(); ++i) index_of[rows[i].id] = i;
  FoldSplit split;
  std::string line;
  std::size_t assigned = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string id;
    std::size_t fold = 0;
    if (!(ls >> id >> fold)) throw std::runtime_error("bad folds line in " + path + ": " + line);
    auto it = index_of.find(id);
    if (it == index_of.end()) throw std::runtime_error("folds file names unknown slide '" + id + "'");
    if (fold >= split.folds.size()) split.folds.resize(fold + 1);
    split.folds[fold].push_back(it->second);
    ++assigned;
  }
  if (assigned != rows.size()) {
    throw std::runtime_error("folds file covers " + std::to_string(assigned) + " of " +
                             std::to_string(rows.size()) + " labeled slides");
  }
  return split;
}

void write_predictions(const std::string& path, const std::vector<Prediction>& preds) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write predictions: " + path);
  out << "# hvit predictions v1\n";
  out.precision(17);
  for (const Prediction& p : preds) {
    out << p.id << " " << p.score << " " << p.predicted << " " << p.label << "\n";
  }
  if (!out) throw std::runtime_error("predictions write failed: " + path);
}

std::vector<PredRow> read_predictions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open predictions: " + path);
  std::vector<PredRow> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    PredRow row;
    if (!(ls >> row.id >> row.score >> row.predicted >> row.label)) {
      throw std::runtime_error("bad predictions line in " + path + ": " + line);
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw std::runtime_error("predictions file is empty: " + path);
  return rows;
}

}  // namespace hvit::tools
