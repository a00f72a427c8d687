#pragma once

// File formats: payload + JSON sidecar ingestion for field series, CSV and
// raw binary writers for the artifacts every command emits.  Payloads carry
// one row per grid cell (row-major over dims); the sidecar's mask selects
// which rows become active sites.

#include "rspca/grid.hpp"
#include "rspca/types.hpp"

#include <complex>
#include <string>
#include <vector>

namespace rspca {

enum class PayloadFormat { csv, raw_f64 };

// Loads a field series from a payload file and its JSON sidecar
// ("<payload>.json") with fields dims, mask, dt, t0, n, l, units.
FieldSeries<double> load_field_series(const std::string& payload_path, PayloadFormat format);

// Writes the payload (selected format), its sidecar and, when the grid is
// masked, a mask CSV next to it.  Full-grid rows are emitted for active
// sites; masked cells are written as zeros.
void save_field_series(const FieldSeries<double>& fs, const std::string& payload_path,
                       PayloadFormat format);

// Raw complex matrix as interleaved little-endian f64 (re, im) pairs,
// row-major, with a JSON sidecar describing rows/cols.
void save_complex_matrix(const CMatrix<double>& m, const std::string& path);
CMatrix<double> load_complex_matrix(const std::string& path);

// Run-length encoding of a boolean vector, alternating runs starting with
// the value `first`.
struct BoolRle {
  bool first{false};
  std::vector<Index> runs;
};
BoolRle rle_encode(const std::vector<std::uint8_t>& v);
std::vector<std::uint8_t> rle_decode(const BoolRle& r, Index size);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

}  // namespace rspca
