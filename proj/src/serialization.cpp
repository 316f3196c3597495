#include "spectree/serialization.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "json.hpp"
#include "spectree/errors.hpp"

namespace spectree {

namespace {

using Json = nlohmann::ordered_json;

constexpr const char* kModelFormat = "spectree-model";
constexpr const char* kTreeFormat = "spectree-tree";
constexpr int kVersion = 1;
constexpr std::string_view kTextMagic = "SRGTXT1";
constexpr std::string_view kBinaryMagic = "SRGBIN1";

Json matrix_to_json(const Matrix& m) {
  Json data = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) data.push_back(m(i, j));
  }
  return Json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

[[noreturn]] void schema_error(const std::string& field, const std::string& what) {
  throw ParseError("field '" + field + "': " + what, 0, 0);
}

const Json& member(const Json& obj, const std::string& key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key)) schema_error(where + key, "missing");
  return obj.at(key);
}

template <typename T>
T read_number(const Json& obj, const std::string& key, const std::string& where) {
  const Json& v = member(obj, key, where);
  if (!v.is_number()) schema_error(where + key, "expected a number");
  if constexpr (std::is_integral_v<T>) {
    if (!v.is_number_integer()) schema_error(where + key, "expected an integer");
  }
  return v.get<T>();
}

Matrix matrix_from_json(const Json& j, const std::string& where) {
  const auto rows = read_number<long long>(j, "rows", where + ".");
  const auto cols = read_number<long long>(j, "cols", where + ".");
  if (rows < 0 || cols < 0) schema_error(where, "negative matrix shape");
  const Json& data = member(j, "data", where + ".");
  if (!data.is_array() || data.size() != static_cast<std::size_t>(rows * cols)) {
    schema_error(where + ".data", "expected " + std::to_string(rows * cols) + " numbers");
  }
  Matrix m(rows, cols);
  std::size_t idx = 0;
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index c = 0; c < cols; ++c, ++idx) {
      if (!data[idx].is_number()) {
        schema_error(where + ".data[" + std::to_string(idx) + "]", "expected a number");
      }
      m(i, c) = data[idx].get<double>();
    }
  }
  return m;
}

std::size_t line_of_offset(std::string_view text, std::size_t byte) {
  byte = std::min(byte, text.size());
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(byte), '\n'));
}

Json parse_document(std::string_view text) {
  try {
    return Json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(e.what(), line_of_offset(text, e.byte == 0 ? 0 : e.byte - 1), 0);
  }
}

Json nodes_json(const std::vector<std::pair<NodeId, bool>>& nodes) {
  Json out = Json::array();
  for (const auto& [id, observed] : nodes) {
    out.push_back(Json{{"id", id}, {"kind", observed ? "observed" : "hidden"}});
  }
  return out;
}

struct TreeSkeleton {
  std::vector<std::pair<NodeId, bool>> nodes;  // (id, observed)
  std::vector<std::pair<NodeId, NodeId>> edges;
  NodeId root = -1;
};

TreeSkeleton skeleton_from_json(const Json& doc) {
  TreeSkeleton s;
  s.root = read_number<NodeId>(doc, "root", "");
  const Json& nodes = member(doc, "nodes", "");
  if (!nodes.is_array()) schema_error("nodes", "expected an array");
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const std::string where = "nodes[" + std::to_string(i) + "].";
    const auto id = read_number<NodeId>(nodes[i], "id", where);
    const Json& kind = member(nodes[i], "kind", where);
    if (kind != "observed" && kind != "hidden") {
      schema_error(where + "kind", "expected 'observed' or 'hidden'");
    }
    s.nodes.emplace_back(id, kind == "observed");
  }
  const Json& edges = member(doc, "edges", "");
  if (!edges.is_array()) schema_error("edges", "expected an array");
  for (std::size_t i = 0; i < edges.size(); ++i) {
    const Json& e = edges[i];
    if (!e.is_array() || e.size() != 2 || !e[0].is_number_integer() || !e[1].is_number_integer()) {
      schema_error("edges[" + std::to_string(i) + "]", "expected a pair of node ids");
    }
    s.edges.emplace_back(e[0].get<NodeId>(), e[1].get<NodeId>());
  }
  return s;
}

void check_format(const Json& doc, std::initializer_list<const char*> accepted) {
  const Json& f = member(doc, "format", "");
  bool ok = false;
  for (const char* a : accepted) ok = ok || f == a;
  if (!ok) schema_error("format", "unsupported document format");
  if (read_number<int>(doc, "version", "") != kVersion) schema_error("version", "unsupported version");
}

// -------------------------------------------------------------- samples

struct SampleHeader {
  bool binary = false;
  std::size_t n = 0;
  std::uint64_t seed = 0;
  std::vector<NodeId> leaves;
  std::vector<std::size_t> dims;
};

template <typename T>
T parse_integer(std::string_view tok, std::size_t line, std::size_t field, const char* what) {
  T v{};
  const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc{} || ptr != tok.data() + tok.size()) {
    throw ParseError(std::string("invalid ") + what + " '" + std::string(tok) + "'", line, field);
  }
  return v;
}

SampleHeader parse_header(const std::string& line) {
  std::istringstream in(line);
  std::vector<std::string> tokens;
  for (std::string t; in >> t;) tokens.push_back(t);
  if (tokens.empty() || (tokens[0] != kTextMagic && tokens[0] != kBinaryMagic)) {
    throw ParseError("unrecognised sample file header", 1, 1);
  }
  if (tokens.size() < 4) throw ParseError("header needs N, seed and at least one leaf", 1, tokens.size() + 1);
  SampleHeader h;
  h.binary = tokens[0] == kBinaryMagic;
  h.n = parse_integer<std::size_t>(tokens[1], 1, 2, "sample count");
  h.seed = parse_integer<std::uint64_t>(tokens[2], 1, 3, "seed");
  for (std::size_t i = 3; i < tokens.size(); ++i) {
    const auto colon = tokens[i].find(':');
    if (colon == std::string::npos) throw ParseError("expected <leaf>:<dim>", 1, i + 1);
    const std::string_view tok(tokens[i]);
    h.leaves.push_back(parse_integer<NodeId>(tok.substr(0, colon), 1, i + 1, "leaf id"));
    const auto dim = parse_integer<std::size_t>(tok.substr(colon + 1), 1, i + 1, "dimension");
    if (dim == 0) throw ParseError("dimension must be positive", 1, i + 1);
    h.dims.push_back(dim);
  }
  if (!std::is_sorted(h.leaves.begin(), h.leaves.end()) ||
      std::adjacent_find(h.leaves.begin(), h.leaves.end()) != h.leaves.end()) {
    throw ParseError("leaf ids must be strictly increasing", 1, 4);
  }
  return h;
}

SampleBatch empty_batch(const SampleHeader& h) {
  SampleBatch b;
  b.leaves = h.leaves;
  b.n_samples = h.n;
  b.seed = h.seed;
  for (std::size_t dim : h.dims) {
    b.data.emplace_back(static_cast<Eigen::Index>(h.n), static_cast<Eigen::Index>(dim));
  }
  return b;
}

void store_row(SampleBatch& b, const SampleHeader& h, std::size_t row, const std::vector<double>& values) {
  std::size_t pos = 0;
  for (std::size_t l = 0; l < h.dims.size(); ++l) {
    for (std::size_t c = 0; c < h.dims[l]; ++c) {
      b.data[l](static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(c)) = values[pos++];
    }
  }
}

}  // namespace

// ---------------------------------------------------------------- models

std::string model_to_json(const LinearTreeModel& model) {
  const auto& tree = model.tree;
  std::vector<std::pair<NodeId, bool>> nodes;
  for (std::size_t u = 0; u < tree.size(); ++u) {
    nodes.emplace_back(static_cast<NodeId>(u), tree.is_observed(static_cast<NodeId>(u)));
  }
  Json edges = Json::array();
  for (const auto& [u, v] : tree.edges()) edges.push_back(Json::array({u, v}));

  Json maps = Json::array();
  Json noise = Json::array();
  for (std::size_t u = 0; u < tree.size(); ++u) {
    const auto id = static_cast<NodeId>(u);
    if (id == tree.root()) continue;
    maps.push_back(Json{{"node", id}, {"matrix", matrix_to_json(model.edge_map[u])}});
    if (model.family == Family::gaussian) {
      noise.push_back(Json{{"node", id}, {"matrix", matrix_to_json(model.noise_cov[u])}});
    }
  }

  Json doc;
  doc["format"] = kModelFormat;
  doc["version"] = kVersion;
  doc["family"] = to_string(model.family);
  doc["k"] = model.k;
  doc["d"] = model.d;
  doc["root"] = tree.root();
  doc["nodes"] = nodes_json(nodes);
  doc["edges"] = std::move(edges);
  doc["root_moment"] = matrix_to_json(model.root_moment);
  doc["edge_maps"] = std::move(maps);
  if (model.family == Family::gaussian) doc["noise"] = std::move(noise);
  return doc.dump(2) + "\n";
}

LinearTreeModel model_from_json(std::string_view text) {
  const Json doc = parse_document(text);
  check_format(doc, {kModelFormat});
  const auto skel = skeleton_from_json(doc);

  LinearTreeModel model;
  const Json& family = member(doc, "family", "");
  if (!family.is_string()) schema_error("family", "expected a string");
  try {
    model.family = family_from_string(family.get<std::string>());
  } catch (const ConfigError& e) {
    schema_error("family", e.what());
  }
  const auto k = read_number<long long>(doc, "k", "");
  const auto d = read_number<long long>(doc, "d", "");
  if (k < 1 || d < 1) schema_error("k", "dimensions must be positive");
  model.k = static_cast<std::size_t>(k);
  model.d = static_cast<std::size_t>(d);

  for (std::size_t i = 0; i < skel.nodes.size(); ++i) {
    if (skel.nodes[i].first != static_cast<NodeId>(i)) {
      schema_error("nodes[" + std::to_string(i) + "].id", "model node ids must be 0..n-1 in order");
    }
    model.tree.add_node(skel.nodes[i].second ? NodeKind::observed : NodeKind::hidden);
  }
  for (const auto& [u, v] : skel.edges) model.tree.add_edge(u, v);
  model.tree.set_root(skel.root);
  model.tree.validate();

  const auto n = model.tree.size();
  model.root_moment = matrix_from_json(member(doc, "root_moment", ""), "root_moment");
  model.edge_map.assign(n, Matrix());
  if (model.family == Family::gaussian) model.noise_cov.assign(n, Matrix());

  const auto read_per_node = [&](const char* key, std::vector<Matrix>& target) {
    const Json& arr = member(doc, key, "");
    if (!arr.is_array()) schema_error(key, "expected an array");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const std::string where = std::string(key) + "[" + std::to_string(i) + "]";
      const auto id = read_number<NodeId>(arr[i], "node", where + ".");
      if (id < 0 || static_cast<std::size_t>(id) >= n || id == model.tree.root()) {
        schema_error(where + ".node", "not a non-root node");
      }
      target[static_cast<std::size_t>(id)] = matrix_from_json(member(arr[i], "matrix", where + "."), where + ".matrix");
    }
  };
  read_per_node("edge_maps", model.edge_map);
  if (model.family == Family::gaussian) read_per_node("noise", model.noise_cov);
  model.validate();
  return model;
}

std::string tree_to_json(const LearnedTree& tree) {
  std::vector<std::pair<NodeId, bool>> nodes;
  for (NodeId x : tree.leaves) nodes.emplace_back(x, true);
  for (NodeId h : tree.hidden) nodes.emplace_back(h, false);
  Json edges = Json::array();
  for (const auto& [p, c] : tree.edges) edges.push_back(Json::array({p, c}));
  Json doc;
  doc["format"] = kTreeFormat;
  doc["version"] = kVersion;
  doc["root"] = tree.root;
  doc["nodes"] = nodes_json(nodes);
  doc["edges"] = std::move(edges);
  doc["newick"] = tree.to_newick();
  return doc.dump(2) + "\n";
}

LearnedTree tree_from_json(std::string_view text) {
  const Json doc = parse_document(text);
  check_format(doc, {kTreeFormat, kModelFormat});
  const auto skel = skeleton_from_json(doc);
  LearnedTree out;
  for (const auto& [id, observed] : skel.nodes) {
    if (out.leaves.count(id) || out.hidden.count(id)) schema_error("nodes", "repeated node id " + std::to_string(id));
    (observed ? out.leaves : out.hidden).insert(id);
  }
  out.root = skel.root;
  // Orient edges away from the root so that the Newick form is well defined.
  std::map<NodeId, std::vector<NodeId>> adj;
  for (const auto& [u, v] : skel.edges) {
    adj[u].push_back(v);
    adj[v].push_back(u);
  }
  std::set<NodeId> seen{out.root};
  std::vector<NodeId> stack{out.root};
  while (!stack.empty()) {
    const NodeId u = stack.back();
    stack.pop_back();
    auto nb = adj[u];
    std::sort(nb.begin(), nb.end());
    for (NodeId w : nb) {
      if (seen.insert(w).second) {
        out.edges.emplace_back(u, w);
        stack.push_back(w);
      }
    }
  }
  if (out.edges.size() != skel.edges.size() || !out.well_formed()) {
    schema_error("edges", "do not form a tree with degree-1 leaves");
  }
  return out;
}

// --------------------------------------------------------------- samples

SampleFormat sample_format_from_string(const std::string& s) {
  if (s == "text") return SampleFormat::text;
  if (s == "binary") return SampleFormat::binary;
  throw ConfigError("unknown sample format '" + s + "'");
}

void write_samples(std::ostream& out, const SampleBatch& batch, SampleFormat format) {
  batch.validate();
  out << (format == SampleFormat::text ? kTextMagic : kBinaryMagic) << ' ' << batch.n_samples << ' '
      << batch.seed;
  for (std::size_t l = 0; l < batch.leaves.size(); ++l) {
    out << ' ' << batch.leaves[l] << ':' << batch.data[l].cols();
  }
  out << '\n';
  const auto n = static_cast<Eigen::Index>(batch.n_samples);
  if (format == SampleFormat::text) {
    char buf[64];
    std::string line;
    for (Eigen::Index r = 0; r < n; ++r) {
      line.clear();
      for (const auto& m : batch.data) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
          if (!line.empty()) line.push_back(',');
          const auto res = std::to_chars(buf, buf + sizeof buf, m(r, c));
          line.append(buf, res.ptr);
        }
      }
      line.push_back('\n');
      out << line;
    }
  } else {
    std::vector<double> row;
    for (Eigen::Index r = 0; r < n; ++r) {
      row.clear();
      for (const auto& m : batch.data) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
      }
      for (double v : row) {
        auto bits = std::bit_cast<std::uint64_t>(v);
        if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
        out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
      }
    }
  }
  if (!out) throw std::runtime_error("failed to write samples");
}

SampleBatch read_samples(std::istream& in) {
  std::string header_line;
  if (!std::getline(in, header_line)) throw ParseError("empty sample file", 1, 0);
  const SampleHeader h = parse_header(header_line);
  SampleBatch batch = empty_batch(h);
  std::size_t width = 0;
  for (std::size_t d : h.dims) width += d;
  std::vector<double> values(width);

  if (h.binary) {
    for (std::size_t r = 0; r < h.n; ++r) {
      for (std::size_t c = 0; c < width; ++c) {
        std::uint64_t bits = 0;
        if (!in.read(reinterpret_cast<char*>(&bits), sizeof bits)) {
          throw ParseError("binary payload ends early at row " + std::to_string(r + 1), r + 2, c + 1);
        }
        if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
        values[c] = std::bit_cast<double>(bits);
      }
      store_row(batch, h, r, values);
    }
    if (in.peek() != std::char_traits<char>::eof()) {
      throw ParseError("trailing bytes after binary payload", h.n + 2, 0);
    }
  } else {
    std::string line;
    for (std::size_t r = 0; r < h.n; ++r) {
      const std::size_t line_no = r + 2;
      if (!std::getline(in, line)) throw ParseError("expected " + std::to_string(h.n) + " rows", line_no, 0);
      if (!line.empty() && line.back() == '\r') line.pop_back();
      std::size_t field = 0;
      std::size_t start = 0;
      while (true) {
        const std::size_t end = std::min(line.find(',', start), line.size());
        if (field >= width) throw ParseError("too many fields", line_no, field + 1);
        const char* first = line.data() + start;
        const char* last = line.data() + end;
        while (first < last && *first == ' ') ++first;
        while (last > first && last[-1] == ' ') --last;
        double v = 0.0;
        const auto [ptr, ec] = std::from_chars(first, last, v);
        if (ec != std::errc{} || ptr != last || first == last) {
          throw ParseError("invalid number '" + std::string(first, last) + "'", line_no, field + 1);
        }
        values[field++] = v;
        if (end == line.size()) break;
        start = end + 1;
      }
      if (field != width) {
        throw ParseError("expected " + std::to_string(width) + " fields, found " + std::to_string(field),
                         line_no, field + 1);
      }
      store_row(batch, h, r, values);
    }
    while (std::getline(in, line)) {
      if (line.find_first_not_of(" \r\t") != std::string::npos) {
        throw ParseError("unexpected data after the last row", h.n + 2, 1);
      }
    }
  }
  batch.validate();
  return batch;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view contents) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
}

void save_samples(const std::filesystem::path& path, const SampleBatch& batch, SampleFormat format) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  write_samples(out, batch, format);
}

SampleBatch load_samples(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path.string() + "'");
  return read_samples(in);
}

}  // namespace spectree
