#include "cellsurv/serialize.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "cellsurv/errors.hpp"
#include "cellsurv/io.hpp"
#include "cellsurv/rng.hpp"

namespace cellsurv {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace {

constexpr char kGraphMagic[4] = {'C', 'S', 'G', 'R'};
constexpr char kCheckpointMagic[4] = {'C', 'S', 'C', 'K'};

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : path_(path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    out_.open(path, std::ios::binary | std::ios::trunc);
    if (!out_) throw DataError("cannot write " + path.string());
  }
  template <class T>
  void pod(const T& v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void bytes(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  void str(const std::string& s) {
    pod<std::uint64_t>(s.size());
    bytes(s.data(), s.size());
  }
  void matrix(const Matrix& m) {
    pod<std::uint64_t>(static_cast<std::uint64_t>(m.rows()));
    pod<std::uint64_t>(static_cast<std::uint64_t>(m.cols()));
    bytes(m.data(), sizeof(double) * static_cast<std::size_t>(m.size()));
  }
  void close() {
    out_.close();
    if (!out_) throw DataError("failed writing " + path_.string());
  }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw DataError("cannot open " + path.string());
  }
  template <class T>
  T pod() {
    T v{};
    bytes(&v, sizeof(T));
    return v;
  }
  void bytes(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) fail("truncated file");
  }
  std::string str() {
    const auto n = pod<std::uint64_t>();
    if (n > (1u << 30)) fail("implausible string length");
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  Matrix matrix() {
    const auto r = pod<std::uint64_t>();
    const auto c = pod<std::uint64_t>();
    if (r > (1u << 28) || c > (1u << 28) || r * c > (1u << 30)) fail("implausible matrix shape");
    Matrix m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
    bytes(m.data(), sizeof(double) * static_cast<std::size_t>(m.size()));
    return m;
  }
  void magic(const char (&expected)[4]) {
    char got[4];
    bytes(got, 4);
    if (std::memcmp(got, expected, 4) != 0) fail("bad magic, not a " + std::string(expected, 4) + " file");
  }
  [[noreturn]] void fail(const std::string& what) const { throw DataError(path_.string() + ": " + what); }

 private:
  std::filesystem::path path_;
  std::ifstream in_;
};

}  // namespace

std::uint64_t graph_schema_hash() {
  return fnv1a(
      "image_id:str;patient_id:str;modality:str;extent:f64,f64;node_features:mat;positions:mat;edges:u64,(u32,u32)*");
}

void write_graph(const std::filesystem::path& path, const CellularGraph& g) {
  Writer w(path);
  w.bytes(kGraphMagic, 4);
  w.pod(kGraphFormatVersion);
  w.pod(graph_schema_hash());
  w.str(g.image_id);
  w.str(g.patient_id);
  w.str(g.modality);
  w.pod(g.extent.width);
  w.pod(g.extent.height);
  w.matrix(g.node_features);
  w.matrix(g.positions);
  w.pod<std::uint64_t>(g.edges.size());
  for (const auto& [u, v] : g.edges) {
    w.pod(u);
    w.pod(v);
  }
  w.close();
}

CellularGraph read_graph(const std::filesystem::path& path) {
  Reader r(path);
  r.magic(kGraphMagic);
  const auto version = r.pod<std::uint32_t>();
  if (version != kGraphFormatVersion) r.fail("unsupported graph format version " + std::to_string(version));
  if (r.pod<std::uint64_t>() != graph_schema_hash()) r.fail("schema hash mismatch");
  CellularGraph g;
  g.image_id = r.str();
  g.patient_id = r.str();
  g.modality = r.str();
  g.extent.width = r.pod<double>();
  g.extent.height = r.pod<double>();
  g.node_features = r.matrix();
  g.positions = r.matrix();
  const auto n_edges = r.pod<std::uint64_t>();
  const auto c = g.num_nodes();
  if (static_cast<std::size_t>(g.positions.rows()) != c) r.fail("positions and features disagree on node count");
  if (n_edges > c * c) r.fail("implausible edge count");
  g.edges.resize(n_edges);
  for (auto& [u, v] : g.edges) {
    u = r.pod<std::uint32_t>();
    v = r.pod<std::uint32_t>();
    if (u >= v || v >= c) r.fail("edge (" + std::to_string(u) + ", " + std::to_string(v) + ") out of range");
  }
  g.rebuild_adjacency();
  return g;
}

std::vector<std::filesystem::path> write_graph_dir(const std::filesystem::path& dir,
                                                   const std::vector<CellularGraph>& graphs) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> paths;
  for (const auto& g : graphs) {
    if (g.image_id.empty() || g.image_id.find_first_of("/\\") != std::string::npos || g.image_id == "." ||
        g.image_id == "..") {
      throw DataError("image id '" + g.image_id + "' cannot be used as a file name");
    }
    paths.push_back(dir / (g.image_id + ".csg"));
    write_graph(paths.back(), g);
  }
  return paths;
}

std::vector<CellularGraph> read_graph_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw DataError("graph directory " + dir.string() + " does not exist");
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".csg") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<CellularGraph> graphs;
  graphs.reserve(files.size());
  for (const auto& f : files) graphs.push_back(read_graph(f));
  return graphs;
}

std::string model_config_text(const ModelConfig& c) {
  std::ostringstream out;
  out << "n_layers=" << c.n_layers << '\n'
      << "hidden_dim=" << c.hidden_dim << '\n'
      << "mlp_dim=" << c.mlp_dim << '\n'
      << "pool_ratio=" << format_double(c.pool_ratio) << '\n'
      << "n_heads=" << c.n_heads << '\n'
      << "n_modalities=" << c.n_modalities << '\n'
      << "d_node=" << c.d_node << '\n'
      << "instance_norm=" << (c.instance_norm ? 1 : 0) << '\n'
      << "sharing=" << to_string(c.sharing) << '\n'
      << "shared_attention=" << (c.shared_attention ? 1 : 0) << '\n'
      << "aggregator=" << to_string(c.aggregator) << '\n';
  return out.str();
}

ModelConfig parse_model_config_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto get = [&](const char* key) -> const std::string& {
    const auto it = kv.find(key);
    if (it == kv.end()) throw DataError(std::string("checkpoint config lacks '") + key + "'");
    return it->second;
  };
  ModelConfig c;
  try {
    c.n_layers = std::stoi(get("n_layers"));
    c.hidden_dim = std::stoi(get("hidden_dim"));
    c.mlp_dim = std::stoi(get("mlp_dim"));
    c.pool_ratio = std::stod(get("pool_ratio"));
    c.n_heads = std::stoi(get("n_heads"));
    c.n_modalities = std::stoi(get("n_modalities"));
    c.d_node = std::stoi(get("d_node"));
    c.instance_norm = get("instance_norm") == "1";
    c.shared_attention = get("shared_attention") == "1";
  } catch (const std::logic_error&) {
    throw DataError("checkpoint config has a malformed number");
  }
  c.sharing = parse_weight_sharing(get("sharing"));
  c.aggregator = parse_instance_aggregator(get("aggregator"));
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params) {
  Writer w(path);
  w.bytes(kCheckpointMagic, 4);
  w.pod(kCheckpointVersion);
  w.str(model_config_text(params.config));
  const auto& store = params.store;
  w.pod<std::uint64_t>(store.size());
  for (std::size_t s = 0; s < store.size(); ++s) {
    w.str(store.name(s));
    w.matrix(store.value(s));
  }
  w.close();
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  Reader r(path);
  r.magic(kCheckpointMagic);
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion) r.fail("unsupported checkpoint version " + std::to_string(version));
  ModelConfig config;
  try {
    config = parse_model_config_text(r.str());
    config.validate();
  } catch (const ConfigError& e) {
    r.fail(std::string("invalid model config: ") + e.what());
  }
  auto params = init_model(config, 0);
  auto& store = params.store;
  const auto n = r.pod<std::uint64_t>();
  if (n != store.size()) {
    r.fail("holds " + std::to_string(n) + " tensors, model layout has " + std::to_string(store.size()));
  }
  for (std::uint64_t i = 0; i < n; ++i) {
    const auto name = r.str();
    auto value = r.matrix();
    const auto slot = store.find(name);
    if (!slot) r.fail("unknown tensor '" + name + "'");
    auto& dst = store.value(*slot);
    if (dst.rows() != value.rows() || dst.cols() != value.cols()) {
      r.fail("tensor '" + name + "' has shape " + shape_string(value) + ", expected " + shape_string(dst));
    }
    dst = std::move(value);
  }
  return params;
}

}  // namespace cellsurv
