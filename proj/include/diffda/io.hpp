#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "diffda/dynamics.hpp"
#include "diffda/errors.hpp"
#include "diffda/hash.hpp"

namespace diffda {

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

struct Csv {
  std::vector<std::string> header;
  Eigen::MatrixXd values;
};

inline void write_csv(const std::string& path, const std::vector<std::string>& header,
                      const Eigen::MatrixXd& values) {
  if (static_cast<Eigen::Index>(header.size()) != values.cols())
    throw ShapeError("csv header does not match column count: " + path);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  for (std::size_t c = 0; c < header.size(); ++c)
    out << (c ? "," : "") << header[c];
  out << "\n";
  for (Eigen::Index r = 0; r < values.rows(); ++r) {
    for (Eigen::Index c = 0; c < values.cols(); ++c)
      out << (c ? "," : "") << format_double(values(r, c));
    out << "\n";
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

namespace detail {

inline std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string item;
  std::istringstream in(line);
  while (std::getline(in, item, ',')) fields.push_back(item);
  if (!line.empty() && line.back() == ',') fields.push_back("");
  return fields;
}

}  // namespace detail

// Header plus rows of raw fields, for files that mix text and numbers.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const {
    for (std::size_t c = 0; c < header.size(); ++c)
      if (header[c] == name) return static_cast<int>(c);
    throw ShapeError("csv column not found: " + name);
  }
};

inline double parse_double(const std::string& field, const std::string& context) {
  char* end = nullptr;
  const double v = std::strtod(field.c_str(), &end);
  if (field.empty() || end != field.c_str() + field.size())
    throw ShapeError("non-numeric csv value '" + field + "' in " + context);
  return v;
}

inline Table read_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingInputError("cannot open file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw EmptyInputError("empty csv file: " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  Table table;
  table.header = detail::split_fields(line);

  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields = detail::split_fields(line);
    if (fields.size() != table.header.size())
      throw ShapeError("ragged csv row " + std::to_string(table.rows.size() + 2) +
                       " in " + path);
    table.rows.push_back(std::move(fields));
  }
  if (table.rows.empty()) throw EmptyInputError("csv has no data rows: " + path);
  return table;
}

inline Csv read_csv(const std::string& path) {
  const Table table = read_table(path);
  Csv csv;
  csv.header = table.header;
  csv.values.resize(static_cast<Eigen::Index>(table.rows.size()),
                    static_cast<Eigen::Index>(table.header.size()));
  for (std::size_t r = 0; r < table.rows.size(); ++r)
    for (std::size_t c = 0; c < table.rows[r].size(); ++c)
      csv.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
          parse_double(table.rows[r][c], path);
  return csv;
}

inline std::vector<std::string> coordinate_header(const std::string& prefix,
                                                  Eigen::Index n) {
  std::vector<std::string> header(static_cast<std::size_t>(n));
  for (Eigen::Index c = 0; c < n; ++c)
    header[static_cast<std::size_t>(c)] = prefix + std::to_string(c);
  return header;
}

inline void save_twin(const std::string& dir, const TwinData& data) {
  std::filesystem::create_directories(dir);
  write_csv(dir + "/truth.csv", coordinate_header("x", data.truth.cols()), data.truth);
  write_csv(dir + "/obs.csv", coordinate_header("y", data.obs.cols()), data.obs);
}

inline TwinData load_twin(const std::string& dir) {
  TwinData data;
  data.truth = read_csv(dir + "/truth.csv").values;
  data.obs = read_csv(dir + "/obs.csv").values;
  if (data.truth.rows() != data.obs.rows() + 1)
    throw ShapeError("truth must have one more row than obs in " + dir);
  return data;
}

// Binary matrix container: u64 little-endian header length, JSON header
// describing the arrays, then the matrices' coefficients as little-endian
// f64 in column-major order. The denoiser checkpoint uses the same layout.
inline void save_matrices(const std::string& path, const std::string& format_tag,
                          const std::vector<std::pair<std::string, Eigen::MatrixXd>>&
                              arrays) {
  nlohmann::ordered_json header;
  header["format"] = format_tag;
  nlohmann::ordered_json list = nlohmann::ordered_json::array();
  for (const auto& [name, m] : arrays) {
    nlohmann::ordered_json entry;
    entry["name"] = name;
    entry["rows"] = m.rows();
    entry["cols"] = m.cols();
    list.push_back(entry);
  }
  header["arrays"] = list;
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  const std::uint64_t len = text.size();
  unsigned char lenb[8];
  for (int i = 0; i < 8; ++i) lenb[i] = static_cast<unsigned char>(len >> (8 * i));
  out.write(reinterpret_cast<const char*>(lenb), 8);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, m] : arrays)
    out.write(reinterpret_cast<const char*>(m.data()),
              static_cast<std::streamsize>(sizeof(double) * m.size()));
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline std::vector<std::pair<std::string, Eigen::MatrixXd>> load_matrices(
    const std::string& path, const std::string& format_tag) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInputError("cannot open file: " + path);
  unsigned char lenb[8];
  in.read(reinterpret_cast<char*>(lenb), 8);
  if (!in) throw ShapeError("truncated file: " + path);
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(lenb[i]) << (8 * i);
  if (len > (1ULL << 24)) throw ShapeError("implausible header length in " + path);
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw ShapeError("truncated file: " + path);
  const nlohmann::json header = nlohmann::json::parse(text, nullptr, false);
  if (header.is_discarded() || header.value("format", "") != format_tag)
    throw ShapeError("unrecognized file format: " + path);

  std::vector<std::pair<std::string, Eigen::MatrixXd>> arrays;
  for (const auto& entry : header.at("arrays")) {
    const Eigen::Index rows = entry.at("rows");
    const Eigen::Index cols = entry.at("cols");
    if (rows < 0 || cols < 0 || rows * cols > (1LL << 32))
      throw ShapeError("implausible array shape in " + path);
    Eigen::MatrixXd m(rows, cols);
    in.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double) * m.size()));
    if (!in) throw ShapeError("truncated file: " + path);
    arrays.emplace_back(entry.at("name").get<std::string>(), std::move(m));
  }
  return arrays;
}

inline std::string file_hash_hex(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInputError("cannot open file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  const std::string data = buf.str();
  char out[32];
  std::snprintf(out, sizeof(out), "fnv1a:%016llx",
                static_cast<unsigned long long>(fnv1a64(data)));
  return out;
}

// Run manifest: resolved configuration, seeds, and content hashes of every
// file the command read or wrote. A run is reproducible from this alone.
inline void write_manifest(const std::string& path, const std::string& command,
                           const std::string& config_text, std::uint64_t seed,
                           int workers, const std::vector<std::string>& inputs,
                           const std::vector<std::string>& outputs) {
  nlohmann::ordered_json doc;
  doc["command"] = command;
  doc["seed"] = seed;
  doc["workers"] = workers;
  doc["config"] = config_text;
  nlohmann::ordered_json in_map = nlohmann::ordered_json::object();
  for (const std::string& p : inputs) in_map[p] = file_hash_hex(p);
  doc["inputs"] = in_map;
  nlohmann::ordered_json out_map = nlohmann::ordered_json::object();
  for (const std::string& p : outputs) out_map[p] = file_hash_hex(p);
  doc["outputs"] = out_map;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  out << doc.dump(2) << "\n";
  if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace diffda
