#include "dgcn/io.hpp"

#include <charconv>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "dgcn/error.hpp"

namespace dgcn {

namespace {

struct LineReader {
  fs::path path;
  std::ifstream in;
  std::size_t line_no = 0;

  explicit LineReader(const fs::path& p) : path(p), in(p) {
    if (!in) throw ValidationError("cannot open " + p.string());
  }

  bool next(std::string& line) {
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.find_first_not_of(" \t") != std::string::npos) return true;
    }
    return false;
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw ValidationError(path.filename().string() + " line " + std::to_string(line_no) + ": " + what);
  }
};

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, sep)) out.push_back(cell);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t");
  if (a == std::string::npos) return {};
  const auto b = s.find_last_not_of(" \t");
  return s.substr(a, b - a + 1);
}

bool parse_double(const std::string& raw, double& out) {
  const std::string s = trim(raw);
  if (s.empty()) return false;
  const char* first = s.data();
  if (*first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

bool parse_int(const std::string& raw, long long& out) {
  const std::string s = trim(raw);
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

bool looks_like_header(const std::string& line, char sep) {
  const auto cells = split(line, sep);
  double v = 0;
  return !cells.empty() && !parse_double(cells.front(), v);
}

int node_id(LineReader& r, const std::string& cell, std::size_t n) {
  long long v = 0;
  if (!parse_int(cell, v)) r.fail("'" + trim(cell) + "' is not an integer node id");
  if (v < 0 || static_cast<std::size_t>(v) >= n)
    r.fail("node id " + std::to_string(v) + " is outside [0, " + std::to_string(n) + ")");
  return static_cast<int>(v);
}

double number(LineReader& r, const std::string& cell) {
  double v = 0;
  if (!parse_double(cell, v)) r.fail("'" + trim(cell) + "' is not a number");
  return v;
}

std::vector<int> read_id_list(const fs::path& path, std::size_t n) {
  LineReader r(path);
  std::vector<int> ids;
  std::string line;
  while (r.next(line)) ids.push_back(node_id(r, line, n));
  return ids;
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << std::setprecision(17);
  return out;
}

void require(const fs::path& path) {
  if (!fs::exists(path)) throw ValidationError("missing " + path.filename().string() + " in " + path.parent_path().string());
}

}  // namespace

DataGraph load_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ValidationError("dataset directory " + dir.string() + " does not exist");
  for (const char* name : {"features.csv", "edges.tsv", "labels.csv", "train.txt"}) require(dir / name);

  DataGraph g;
  {
    LineReader r(dir / "features.csv");
    std::map<long long, std::vector<double>> rows;
    std::string line;
    std::size_t width = 0;
    bool first = true;
    while (r.next(line)) {
      if (first && looks_like_header(line, ',')) {
        first = false;
        continue;
      }
      first = false;
      const auto cells = split(line, ',');
      if (cells.size() < 2) r.fail("expected id followed by at least one feature");
      long long id = 0;
      if (!parse_int(cells[0], id) || id < 0) r.fail("'" + trim(cells[0]) + "' is not a node id");
      if (width == 0) width = cells.size() - 1;
      if (cells.size() - 1 != width)
        r.fail("expected " + std::to_string(width) + " features, found " + std::to_string(cells.size() - 1));
      if (rows.count(id)) r.fail("node " + std::to_string(id) + " listed twice");
      std::vector<double> values;
      for (std::size_t c = 1; c < cells.size(); ++c) values.push_back(number(r, cells[c]));
      rows[id] = std::move(values);
    }
    if (rows.empty()) throw ValidationError("features.csv has no rows");
    g.n = rows.size();
    if (static_cast<std::size_t>(rows.rbegin()->first) != g.n - 1)
      throw ValidationError("features.csv must list node ids 0.." + std::to_string(g.n - 1) + " exactly once");
    g.features.resize(static_cast<Eigen::Index>(g.n), static_cast<Eigen::Index>(width));
    for (const auto& [id, values] : rows)
      for (std::size_t c = 0; c < width; ++c) g.features(id, static_cast<Eigen::Index>(c)) = values[c];
  }
  {
    LineReader r(dir / "edges.tsv");
    std::vector<Edge> pairs;
    std::string line;
    while (r.next(line)) {
      const auto cells = split(line, '\t');
      if (cells.size() != 3) r.fail("expected src<TAB>dst<TAB>weight");
      Edge e{node_id(r, cells[0], g.n), node_id(r, cells[1], g.n), number(r, cells[2])};
      if (e.weight < 0) r.fail("negative edge weight");
      pairs.push_back(e);
    }
    try {
      g.edges = make_undirected_edges(g.n, pairs);
    } catch (const ValidationError& e) {
      throw ValidationError(std::string("edges.tsv: ") + e.what());
    }
  }
  {
    LineReader r(dir / "labels.csv");
    std::string line;
    bool first = true;
    bool regression = false;
    std::vector<std::pair<int, std::vector<double>>> rows;
    std::size_t width = 0;
    while (r.next(line)) {
      if (first && looks_like_header(line, ',')) {
        const auto cells = split(line, ',');
        regression = cells.size() > 2 || (cells.size() == 2 && trim(cells[1]) != "label");
        first = false;
        continue;
      }
      first = false;
      const auto cells = split(line, ',');
      if (cells.size() < 2) r.fail("expected id,label");
      const int id = node_id(r, cells[0], g.n);
      std::vector<double> values;
      for (std::size_t c = 1; c < cells.size(); ++c) values.push_back(number(r, cells[c]));
      if (width == 0) width = values.size();
      if (values.size() != width) r.fail("inconsistent label width");
      if (!regression) {
        long long cls = 0;
        if (values.size() != 1 || !parse_int(cells[1], cls) || cls < 0) regression = true;
      }
      rows.emplace_back(id, std::move(values));
    }
    if (regression) {
      g.targets = Matrix::Constant(static_cast<Eigen::Index>(g.n), static_cast<Eigen::Index>(width),
                                   std::numeric_limits<double>::quiet_NaN());
      for (const auto& [id, values] : rows)
        for (std::size_t c = 0; c < width; ++c) g.targets(id, static_cast<Eigen::Index>(c)) = values[c];
    } else {
      g.classes.assign(g.n, -1);
      for (const auto& [id, values] : rows) g.classes[static_cast<std::size_t>(id)] = static_cast<int>(values[0]);
    }
  }
  g.train_mask = read_id_list(dir / "train.txt", g.n);
  if (fs::exists(dir / "test.txt")) g.test_mask = read_id_list(dir / "test.txt", g.n);
  g.validate();
  return g;
}

void write_dataset(const DataGraph& graph, const fs::path& dir) {
  fs::create_directories(dir);
  {
    auto out = open_out(dir / "edges.tsv");
    for (const auto& e : graph.edges)
      if (e.src <= e.dst) out << e.src << '\t' << e.dst << '\t' << e.weight << '\n';
  }
  {
    auto out = open_out(dir / "features.csv");
    for (Eigen::Index i = 0; i < graph.features.rows(); ++i) {
      out << i;
      for (Eigen::Index c = 0; c < graph.features.cols(); ++c) out << ',' << graph.features(i, c);
      out << '\n';
    }
  }
  {
    auto out = open_out(dir / "labels.csv");
    if (graph.is_classification()) {
      out << "id,label\n";
      for (std::size_t i = 0; i < graph.n; ++i)
        if (graph.classes[i] >= 0) out << i << ',' << graph.classes[i] << '\n';
    } else {
      out << "id";
      for (Eigen::Index c = 0; c < graph.targets.cols(); ++c) out << ",y" << c;
      out << '\n';
      for (Eigen::Index i = 0; i < graph.targets.rows(); ++i) {
        if (!graph.targets.row(i).allFinite()) continue;
        out << i;
        for (Eigen::Index c = 0; c < graph.targets.cols(); ++c) out << ',' << graph.targets(i, c);
        out << '\n';
      }
    }
  }
  {
    auto out = open_out(dir / "train.txt");
    for (int i : graph.train_mask) out << i << '\n';
  }
  if (!graph.test_mask.empty()) {
    auto out = open_out(dir / "test.txt");
    for (int i : graph.test_mask) out << i << '\n';
  }
}

DatasetCounts dataset_counts(const DataGraph& graph) {
  DatasetCounts c;
  c.nodes = graph.n;
  for (const auto& e : graph.edges)
    if (e.src < e.dst) ++c.edges;
  c.train = graph.train_mask.size();
  c.classes = graph.is_classification() ? graph.num_classes() : 0;
  c.features = graph.feature_dim();
  return c;
}

std::string describe(const DatasetCounts& c) {
  std::ostringstream s;
  s << "nodes " << c.nodes << ", edges " << c.edges << ", train " << c.train << ", classes " << c.classes
    << ", features " << c.features;
  return s.str();
}

Matrix read_matrix_csv(const fs::path& path) {
  LineReader r(path);
  std::vector<std::vector<double>> rows;
  std::string line;
  while (r.next(line)) {
    std::vector<double> row;
    for (const auto& cell : split(line, ',')) row.push_back(number(r, cell));
    if (!rows.empty() && row.size() != rows.front().size())
      r.fail("expected " + std::to_string(rows.front().size()) + " columns, found " + std::to_string(row.size()));
    rows.push_back(std::move(row));
  }
  Matrix m(static_cast<Eigen::Index>(rows.size()), rows.empty() ? 0 : static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return m;
}

void write_matrix_csv(const fs::path& path, const Matrix& m) {
  auto out = open_out(path);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) out << (j ? "," : "") << m(i, j);
    out << '\n';
  }
}

BoolMatrix read_bool_csv(const fs::path& path) {
  LineReader r(path);
  std::vector<std::vector<bool>> rows;
  std::string line;
  while (r.next(line)) {
    std::vector<bool> row;
    for (const auto& cell : split(line, ',')) {
      const std::string t = trim(cell);
      if (t != "0" && t != "1") r.fail("expected 0 or 1, found '" + t + "'");
      row.push_back(t == "1");
    }
    if (!rows.empty() && row.size() != rows.front().size()) r.fail("ragged row");
    rows.push_back(std::move(row));
  }
  BoolMatrix m(static_cast<Eigen::Index>(rows.size()), rows.empty() ? 0 : static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return m;
}

void write_bool_csv(const fs::path& path, const BoolMatrix& m) {
  auto out = open_out(path);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) out << (j ? "," : "") << (m(i, j) ? 1 : 0);
    out << '\n';
  }
}

std::vector<int> read_assignment(const fs::path& path) {
  LineReader r(path);
  std::map<long long, int> rows;
  std::string line;
  bool first = true;
  while (r.next(line)) {
    if (first && looks_like_header(line, ',')) {
      first = false;
      continue;
    }
    first = false;
    const auto cells = split(line, ',');
    long long node = 0, agent = 0;
    if (cells.size() != 2 || !parse_int(cells[0], node) || !parse_int(cells[1], agent) || node < 0 || agent < 0)
      r.fail("expected node,agent");
    if (rows.count(node)) r.fail("node " + std::to_string(node) + " assigned twice");
    rows[node] = static_cast<int>(agent);
  }
  std::vector<int> assign;
  for (const auto& [node, agent] : rows) {
    if (static_cast<std::size_t>(node) != assign.size())
      throw ValidationError(path.filename().string() + ": node " + std::to_string(assign.size()) + " has no agent");
    assign.push_back(agent);
  }
  return assign;
}

void write_assignment(const fs::path& path, const std::vector<int>& assign) {
  auto out = open_out(path);
  out << "node,agent\n";
  for (std::size_t i = 0; i < assign.size(); ++i) out << i << ',' << assign[i] << '\n';
}

void write_checkpoint(const fs::path& path, const ModelSpec& spec, const ParamBank& params) {
  if (!params.matches(spec)) throw ValidationError("parameters do not match the model");
  auto out = open_out(path);
  out << "# layers " << spec.layers.size() << '\n';
  for (const auto& l : spec.layers)
    out << "# layer " << l.in_dim << ' ' << l.out_dim << ' ' << l.order << ' ' << to_string(l.activation) << ' '
        << to_string(l.basis) << '\n';
  const Vector flat = params.flatten();
  for (Eigen::Index i = 0; i < flat.size(); ++i) out << flat(i) << '\n';
}

std::pair<ModelSpec, ParamBank> read_checkpoint(const fs::path& path) {
  LineReader r(path);
  ModelSpec spec;
  std::vector<double> values;
  std::string line;
  std::size_t declared = 0;
  while (r.next(line)) {
    if (line.front() == '#') {
      std::istringstream ss(line.substr(1));
      std::string key;
      ss >> key;
      if (key == "layers") {
        ss >> declared;
      } else if (key == "layer") {
        LayerSpec l;
        std::string act, basis;
        if (!(ss >> l.in_dim >> l.out_dim >> l.order >> act >> basis)) r.fail("malformed layer header");
        l.activation = activation_from_string(act);
        l.basis = basis_from_string(basis);
        spec.layers.push_back(l);
      } else {
        r.fail("unknown header key '" + key + "'");
      }
      continue;
    }
    values.push_back(number(r, line));
  }
  if (spec.layers.size() != declared)
    throw ValidationError(path.filename().string() + ": header declares " + std::to_string(declared) +
                          " layers but describes " + std::to_string(spec.layers.size()));
  spec.validate();
  if (values.size() != spec.parameter_count())
    throw ValidationError(path.filename().string() + ": expected " + std::to_string(spec.parameter_count()) +
                          " parameters, found " + std::to_string(values.size()));
  const Vector flat = Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
  return {spec, ParamBank::unflatten(spec, flat)};
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  auto out = open_out(path);
  out << text;
}

}  // namespace dgcn
