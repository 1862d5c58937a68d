#include "cellsurv/io.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <optional>
#include <sstream>

#include "cellsurv/errors.hpp"

namespace cellsurv {

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cur += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      fields.push_back(trim(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  fields.push_back(trim(cur));
  return fields;
}

// Line-oriented CSV reader with a header row and positional error context.
class CsvReader {
 public:
  explicit CsvReader(const std::filesystem::path& path) : path_(path), in_(path) {
    if (!in_) throw DataError("cannot open " + path.string());
    std::string line;
    if (!next_line(line)) throw DataError(path.string() + ": empty file, expected a header");
    header_ = split_csv_line(line);
  }

  std::size_t column(const std::string& name) const {
    const auto it = std::find(header_.begin(), header_.end(), name);
    if (it == header_.end()) throw DataError(path_.string() + ": missing column '" + name + "'");
    return static_cast<std::size_t>(it - header_.begin());
  }

  const std::vector<std::string>& header() const { return header_; }

  bool next(std::vector<std::string>& fields) {
    std::string line;
    while (next_line(line)) {
      if (trim(line).empty()) continue;
      fields = split_csv_line(line);
      if (fields.size() != header_.size()) {
        fail("expected " + std::to_string(header_.size()) + " fields, found " + std::to_string(fields.size()));
      }
      return true;
    }
    return false;
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw DataError(path_.string() + ":" + std::to_string(line_no_) + ": " + what);
  }

  double number(const std::string& field, const char* what) const {
    double v = 0.0;
    const char* first = field.data();
    const char* last = field.data() + field.size();
    const auto res = std::from_chars(first, last, v);
    if (field.empty() || res.ec != std::errc() || res.ptr != last || !std::isfinite(v)) {
      fail(std::string("non-numeric ") + what + " '" + field + "'");
    }
    return v;
  }

 private:
  bool next_line(std::string& line) {
    if (!std::getline(in_, line)) return false;
    ++line_no_;
    if (line_no_ == 1 && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
    return true;
  }

  std::filesystem::path path_;
  std::ifstream in_;
  std::vector<std::string> header_;
  std::size_t line_no_ = 0;
};

std::optional<CellType> parse_cell_type(std::string token) {
  std::transform(token.begin(), token.end(), token.begin(), [](unsigned char c) { return std::tolower(c); });
  if (token == "positive" || token == "pos" || token == "+" || token == "1") return CellType::positive;
  if (token == "negative" || token == "neg" || token == "-" || token == "0") return CellType::negative;
  return std::nullopt;
}

std::ofstream open_for_write(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

}  // namespace

CellTable load_cell_table(const std::filesystem::path& path) {
  CsvReader csv(path);
  const auto c_image = csv.column("image_id");
  const auto c_patient = csv.column("patient_id");
  const auto c_modality = csv.column("modality");
  const auto c_x = csv.column("x");
  const auto c_y = csv.column("y");
  const auto c_type = csv.column("cell_type");
  std::vector<std::size_t> c_features;
  for (std::size_t f = 0;; ++f) {
    const auto name = "f" + std::to_string(f);
    const auto& h = csv.header();
    const auto it = std::find(h.begin(), h.end(), name);
    if (it == h.end()) break;
    c_features.push_back(static_cast<std::size_t>(it - h.begin()));
  }
  for (const auto& name : csv.header()) {
    if (name.size() > 1 && name[0] == 'f' && std::all_of(name.begin() + 1, name.end(), ::isdigit)) {
      const auto idx = std::stoul(name.substr(1));
      if (idx >= c_features.size()) {
        throw DataError(path.string() + ": feature columns must be f0..f{d-1} without gaps ('" + name + "')");
      }
    }
  }

  CellTable table;
  std::vector<std::string> row;
  while (csv.next(row)) {
    CellRecord cell;
    cell.x = csv.number(row[c_x], "coordinate x");
    cell.y = csv.number(row[c_y], "coordinate y");
    if (cell.x < 0.0 || cell.y < 0.0) csv.fail("negative coordinate (" + row[c_x] + ", " + row[c_y] + ")");
    const auto type = parse_cell_type(row[c_type]);
    if (!type) csv.fail("unknown cell_type '" + row[c_type] + "'");
    cell.type = *type;
    cell.features.reserve(c_features.size());
    for (auto col : c_features) cell.features.push_back(csv.number(row[col], "feature"));

    const auto& image_id = row[c_image];
    if (image_id.empty()) csv.fail("empty image_id");
    auto [it, inserted] = table.try_emplace(image_id);
    auto& group = it->second;
    if (inserted) {
      group.patient_id = row[c_patient];
      group.modality = row[c_modality];
    } else if (group.patient_id != row[c_patient] || group.modality != row[c_modality]) {
      csv.fail("image " + image_id + " changes patient or modality between rows");
    }
    group.cells.push_back(std::move(cell));
  }
  return table;
}

void write_cell_table(const std::filesystem::path& path, const CellTable& table) {
  auto out = open_for_write(path);
  std::size_t d_in = 0;
  if (!table.empty() && !table.begin()->second.cells.empty()) d_in = table.begin()->second.cells[0].features.size();
  out << "image_id,patient_id,modality,x,y,cell_type";
  for (std::size_t f = 0; f < d_in; ++f) out << ",f" << f;
  out << '\n';
  for (const auto& [image_id, group] : table) {
    for (const auto& cell : group.cells) {
      out << image_id << ',' << group.patient_id << ',' << group.modality << ',' << format_double(cell.x) << ','
          << format_double(cell.y) << ',' << (cell.type == CellType::positive ? "positive" : "negative");
      for (double f : cell.features) out << ',' << format_double(f);
      out << '\n';
    }
  }
}

std::vector<PatientMetadata> load_patient_metadata_rows(const std::filesystem::path& path) {
  CsvReader csv(path);
  const auto c_id = csv.column("patient_id");
  const auto c_time = csv.column("survival_time_years");
  const auto c_event = csv.column("event");
  std::vector<PatientMetadata> rows;
  std::vector<std::string> row;
  while (csv.next(row)) {
    PatientMetadata m;
    m.patient_id = row[c_id];
    if (m.patient_id.empty()) csv.fail("empty patient_id");
    m.survival_time = csv.number(row[c_time], "survival time");
    if (!(m.survival_time > 0.0)) csv.fail("survival time must be positive, got " + row[c_time]);
    if (row[c_event] == "1") {
      m.event = Event::observed;
    } else if (row[c_event] == "0") {
      m.event = Event::censored;
    } else {
      csv.fail("event must be 1 or 0, got '" + row[c_event] + "'");
    }
    rows.push_back(std::move(m));
  }
  return rows;
}

void write_patient_metadata(const std::filesystem::path& path, const std::vector<PatientMetadata>& rows) {
  auto out = open_for_write(path);
  out << "patient_id,survival_time_years,event\n";
  for (const auto& r : rows) {
    out << r.patient_id << ',' << format_double(r.survival_time) << ',' << (r.event == Event::observed ? 1 : 0)
        << '\n';
  }
}

ExtentManifest load_extent_manifest(const std::filesystem::path& path) {
  CsvReader csv(path);
  const auto c_id = csv.column("image_id");
  const auto c_w = csv.column("width_px");
  const auto c_h = csv.column("height_px");
  ExtentManifest extents;
  std::vector<std::string> row;
  while (csv.next(row)) {
    ImageExtent e{csv.number(row[c_w], "width"), csv.number(row[c_h], "height")};
    if (!(e.width > 0.0) || !(e.height > 0.0)) csv.fail("image extent must be positive");
    if (!extents.emplace(row[c_id], e).second) csv.fail("duplicate image_id '" + row[c_id] + "'");
  }
  return extents;
}

void write_extent_manifest(const std::filesystem::path& path, const ExtentManifest& extents) {
  auto out = open_for_write(path);
  out << "image_id,width_px,height_px\n";
  for (const auto& [id, e] : extents) out << id << ',' << format_double(e.width) << ',' << format_double(e.height) << '\n';
}

std::vector<CellularGraph> build_graphs(const CellTable& table, const ExtentManifest& extents,
                                        const KnnOptions& options) {
  std::vector<CellularGraph> graphs;
  graphs.reserve(table.size());
  for (const auto& [image_id, group] : table) {
    const auto it = extents.find(image_id);
    if (it == extents.end()) throw DataError("no extent for image '" + image_id + "' in the manifest");
    for (std::size_t i = 0; i < group.cells.size(); ++i) {
      const auto& cell = group.cells[i];
      if (cell.x > it->second.width || cell.y > it->second.height) {
        throw DataError("image " + image_id + ": cell " + std::to_string(i) + " lies outside the declared extent");
      }
    }
    auto g = build_knn_graph(group.cells, it->second, options);
    g.image_id = image_id;
    g.patient_id = group.patient_id;
    g.modality = group.modality;
    graphs.push_back(std::move(g));
  }
  return graphs;
}

Cohort load_patient_metadata(const std::filesystem::path& path, std::vector<CellularGraph> graphs,
                             std::vector<std::string> modality_registry) {
  return assemble_cohort(load_patient_metadata_rows(path), std::move(graphs), std::move(modality_registry));
}

}  // namespace cellsurv
