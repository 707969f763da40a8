#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "dgcn/gcn.hpp"
#include "dgcn/graph.hpp"

namespace dgcn {

namespace fs = std::filesystem;

/// Reads a dataset directory:
///   edges.tsv     src<TAB>dst<TAB>weight, 0-based ids, each undirected edge
///                 once or in both orientations with equal weight
///   features.csv  id,f_0,...,f_{d-1}
///   labels.csv    id,label (integer class) or, with a header whose second
///                 column is not "label", id,y_0,...,y_{q-1} real targets
///   train.txt     one training node id per line
///   test.txt      optional evaluation node ids
/// A first line starting with a non-numeric token is treated as a header.
/// Malformed lines raise ValidationError with file name and line number.
/// The shift operator is left empty; call normalize_shift.
DataGraph load_dataset(const fs::path& dir);

/// Writes the format above so that load_dataset reproduces the graph.
void write_dataset(const DataGraph& graph, const fs::path& dir);

struct DatasetCounts {
  std::size_t nodes = 0;
  std::size_t edges = 0;  // undirected, self-loops excluded
  std::size_t train = 0;
  std::size_t classes = 0;
  std::size_t features = 0;
};
DatasetCounts dataset_counts(const DataGraph& graph);
std::string describe(const DatasetCounts& counts);

/// Dense CSV, 17 significant digits.
Matrix read_matrix_csv(const fs::path& path);
void write_matrix_csv(const fs::path& path, const Matrix& m);
BoolMatrix read_bool_csv(const fs::path& path);
void write_bool_csv(const fs::path& path, const BoolMatrix& m);

/// node,agent lines.
std::vector<int> read_assignment(const fs::path& path);
void write_assignment(const fs::path& path, const std::vector<int>& assign);

/// Flat parameter vector, one value per line, after a '#' header that
/// records the layer chain.
void write_checkpoint(const fs::path& path, const ModelSpec& spec, const ParamBank& params);
std::pair<ModelSpec, ParamBank> read_checkpoint(const fs::path& path);

std::string read_text(const fs::path& path);
void write_text(const fs::path& path, const std::string& text);

}  // namespace dgcn
