#include "rspca/io.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace rspca {

namespace {

using nlohmann::json;

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw InvalidInput(path + ": " + e.what());
  }
  return j;
}

std::string sidecar_path(const std::string& payload_path) { return payload_path + ".json"; }

std::vector<std::uint8_t> load_mask_csv(const std::string& path, const std::vector<Index>& dims) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open mask " + path);
  std::vector<std::uint8_t> mask;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      const int v = std::stoi(tok);
      if (v != 0 && v != 1) throw InvalidInput("mask " + path + " must contain only 0/1");
      mask.push_back(static_cast<std::uint8_t>(v));
    }
  }
  Index expected = 1;
  for (Index d : dims) expected *= d;
  if (static_cast<Index>(mask.size()) != expected)
    throw InvalidInput("mask " + path + " has " + std::to_string(mask.size()) +
                       " entries, expected " + std::to_string(expected));
  return mask;
}

Matrix<double> load_payload_csv(const std::string& path, Index rows, Index cols) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open " + path);
  Matrix<double> m(rows, cols);
  std::string line;
  Index r = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (r >= rows) throw InvalidInput(path + ": more rows than declared n=" + std::to_string(rows));
    std::stringstream ss(line);
    std::string tok;
    Index c = 0;
    while (std::getline(ss, tok, ',')) {
      if (c >= cols)
        throw InvalidInput(path + ": row " + std::to_string(r) + " has more than l=" +
                           std::to_string(cols) + " values");
      try {
        m(r, c) = std::stod(tok);
      } catch (const std::exception&) {
        throw InvalidInput(path + ": bad number '" + tok + "' at row " + std::to_string(r));
      }
      ++c;
    }
    if (c != cols)
      throw InvalidInput(path + ": row " + std::to_string(r) + " has " + std::to_string(c) +
                         " values, expected " + std::to_string(cols));
    ++r;
  }
  if (r != rows)
    throw InvalidInput(path + ": has " + std::to_string(r) + " rows, expected " +
                       std::to_string(rows));
  return m;
}

Matrix<double> load_payload_raw(const std::string& path, Index rows, Index cols) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open " + path);
  in.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::uint64_t>(in.tellg());
  const std::uint64_t expected = std::uint64_t(rows) * std::uint64_t(cols) * sizeof(double);
  if (bytes != expected)
    throw InvalidInput(path + ": holds " + std::to_string(bytes / sizeof(double)) +
                       " doubles, expected " + std::to_string(rows * cols));
  in.seekg(0);
  Matrix<double> m(rows, cols);
  std::vector<double> row(static_cast<std::size_t>(cols));
  for (Index r = 0; r < rows; ++r) {
    in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(cols * sizeof(double)));
    for (Index c = 0; c < cols; ++c) m(r, c) = row[static_cast<std::size_t>(c)];
  }
  return m;
}

}  // namespace

FieldSeries<double> load_field_series(const std::string& payload_path, PayloadFormat format) {
  const json j = load_json_file(sidecar_path(payload_path));
  for (const char* key : {"dims", "mask", "dt", "t0", "n", "l", "units"})
    if (!j.contains(key)) throw InvalidInput(sidecar_path(payload_path) + ": missing key " + key);

  std::vector<Index> dims;
  for (const auto& d : j.at("dims")) dims.push_back(d.get<Index>());
  const Index n = j.at("n").get<Index>();
  const Index l = j.at("l").get<Index>();
  Index n_cells = 1;
  for (Index d : dims) n_cells *= d;
  if (n != n_cells)
    throw InvalidInput(sidecar_path(payload_path) + ": n=" + std::to_string(n) +
                       " does not match dims product " + std::to_string(n_cells));

  SpatialGrid grid;
  if (j.at("mask").is_string() && j.at("mask").get<std::string>() == "all") {
    grid = SpatialGrid::full(dims);
  } else {
    const auto mask_file =
        (std::filesystem::path(payload_path).parent_path() / j.at("mask").get<std::string>())
            .string();
    grid = SpatialGrid::masked(dims, load_mask_csv(mask_file, dims));
  }

  const Matrix<double> cells = format == PayloadFormat::csv ? load_payload_csv(payload_path, n, l)
                                                            : load_payload_raw(payload_path, n, l);

  FieldSeries<double> fs;
  fs.grid = grid;
  fs.dt = j.at("dt").get<double>();
  fs.t0 = j.at("t0").is_string() ? j.at("t0").get<std::string>() : j.at("t0").dump();
  fs.units = j.at("units").get<std::string>();
  fs.values.resize(grid.n_sites(), l);
  for (Index s = 0; s < grid.n_sites(); ++s) {
    const Index cell = grid.cell_of_site[static_cast<std::size_t>(s)];
    for (Index t = 0; t < l; ++t) {
      const double v = cells(cell, t);
      if (!std::isfinite(v))
        throw InvalidInput(payload_path + ": non-finite value at site " + std::to_string(s) +
                           " (cell " + std::to_string(cell) + "), time " + std::to_string(t));
      fs.values(s, t) = v;
    }
  }
  check_field_series(fs);
  return fs;
}

void save_field_series(const FieldSeries<double>& fs, const std::string& payload_path,
                       PayloadFormat format) {
  check_field_series(fs);
  const Index n_cells = fs.grid.n_cells();
  const Index l = fs.length();
  const bool full = fs.grid.n_sites() == n_cells;

  // Expand sites back onto the full cell grid; masked cells become zeros.
  if (format == PayloadFormat::csv) {
    std::ofstream out(payload_path);
    if (!out) throw InvalidInput("cannot write " + payload_path);
    for (Index cell = 0; cell < n_cells; ++cell) {
      const Index s = fs.grid.site_of_cell[static_cast<std::size_t>(cell)];
      for (Index t = 0; t < l; ++t) {
        if (t) out << ',';
        out << format_double(s >= 0 ? fs.values(s, t) : 0.0);
      }
      out << '\n';
    }
  } else {
    std::ofstream out(payload_path, std::ios::binary);
    if (!out) throw InvalidInput("cannot write " + payload_path);
    std::vector<double> row(static_cast<std::size_t>(l), 0.0);
    for (Index cell = 0; cell < n_cells; ++cell) {
      const Index s = fs.grid.site_of_cell[static_cast<std::size_t>(cell)];
      for (Index t = 0; t < l; ++t) row[static_cast<std::size_t>(t)] = s >= 0 ? fs.values(s, t) : 0.0;
      out.write(reinterpret_cast<const char*>(row.data()),
                static_cast<std::streamsize>(row.size() * sizeof(double)));
    }
  }

  nlohmann::json j;
  j["dims"] = fs.grid.dims;
  if (full) {
    j["mask"] = "all";
  } else {
    const auto mask_name = std::filesystem::path(payload_path).filename().string() + ".mask.csv";
    const auto mask_path = (std::filesystem::path(payload_path).parent_path() / mask_name).string();
    std::ofstream mout(mask_path);
    if (!mout) throw InvalidInput("cannot write " + mask_path);
    const Index nx = fs.grid.ndim() == 2 ? fs.grid.dims[1] : fs.grid.dims[0];
    for (Index cell = 0; cell < n_cells; ++cell) {
      mout << int(fs.grid.mask[static_cast<std::size_t>(cell)]);
      mout << (((cell + 1) % nx == 0) ? '\n' : ',');
    }
    j["mask"] = mask_name;
  }
  j["dt"] = fs.dt;
  j["t0"] = fs.t0;
  j["n"] = n_cells;
  j["l"] = l;
  j["units"] = fs.units;
  write_text_file(sidecar_path(payload_path), j.dump(2) + "\n");
}

void save_complex_matrix(const CMatrix<double>& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInput("cannot write " + path);
  std::vector<double> row(static_cast<std::size_t>(2 * m.cols()));
  for (Index r = 0; r < m.rows(); ++r) {
    for (Index c = 0; c < m.cols(); ++c) {
      row[static_cast<std::size_t>(2 * c)] = m(r, c).real();
      row[static_cast<std::size_t>(2 * c + 1)] = m(r, c).imag();
    }
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size() * sizeof(double)));
  }
  nlohmann::json j;
  j["rows"] = m.rows();
  j["cols"] = m.cols();
  j["format"] = "raw-c128";
  write_text_file(path + ".json", j.dump(2) + "\n");
}

CMatrix<double> load_complex_matrix(const std::string& path) {
  const nlohmann::json j = load_json_file(path + ".json");
  const Index rows = j.at("rows").get<Index>();
  const Index cols = j.at("cols").get<Index>();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open " + path);
  CMatrix<double> m(rows, cols);
  std::vector<double> row(static_cast<std::size_t>(2 * cols));
  for (Index r = 0; r < rows; ++r) {
    in.read(reinterpret_cast<char*>(row.data()),
            static_cast<std::streamsize>(row.size() * sizeof(double)));
    if (!in) throw InvalidInput(path + ": truncated at row " + std::to_string(r));
    for (Index c = 0; c < cols; ++c)
      m(r, c) = {row[static_cast<std::size_t>(2 * c)], row[static_cast<std::size_t>(2 * c + 1)]};
  }
  return m;
}

BoolRle rle_encode(const std::vector<std::uint8_t>& v) {
  BoolRle r;
  if (v.empty()) return r;
  r.first = v[0] != 0;
  std::uint8_t cur = v[0];
  Index run = 0;
  for (std::uint8_t b : v) {
    if (b == cur) {
      ++run;
    } else {
      r.runs.push_back(run);
      cur = b;
      run = 1;
    }
  }
  r.runs.push_back(run);
  return r;
}

std::vector<std::uint8_t> rle_decode(const BoolRle& r, Index size) {
  std::vector<std::uint8_t> v;
  v.reserve(static_cast<std::size_t>(size));
  std::uint8_t cur = r.first ? 1 : 0;
  for (Index run : r.runs) {
    for (Index i = 0; i < run; ++i) v.push_back(cur);
    cur = 1 - cur;
  }
  if (static_cast<Index>(v.size()) != size)
    throw InvalidInput("rle decodes to " + std::to_string(v.size()) + " entries, expected " +
                       std::to_string(size));
  return v;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) throw InvalidInput("cannot write " + path);
  out << content;
}

}  // namespace rspca
