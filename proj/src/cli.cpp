#include "rspca/cli.hpp"

#include "rspca/grid.hpp"
#include "rspca/io.hpp"
#include "rspca/reconstruct.hpp"
#include "rspca/rotation.hpp"
#include "rspca/spectra.hpp"
#include "rspca/synth.hpp"
#include "rspca/types.hpp"
#include "rspca/wavelet.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace rspca::cli {
namespace {

using nlohmann::json;
namespace stdfs = std::filesystem;

std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  stdfs::create_directories(dir, ec);
  if (ec) throw InvalidInput("cannot create directory " + dir + ": " + ec.message());
}

json load_json(const std::string& path) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::parse_error& e) {
    throw InvalidInput(path + ": " + e.what());
  }
  return j;
}

void write_json(const std::string& path, const json& j) {
  write_text_file(path, j.dump(2) + "\n");
}

PayloadFormat parse_format(const std::string& name) {
  if (name == "raw") return PayloadFormat::raw_f64;
  if (name == "csv") return PayloadFormat::csv;
  throw InvalidInput("unknown payload format '" + name + "' (raw or csv)");
}

json grid_to_json(const SpatialGrid& g) {
  json j;
  j["dims"] = g.dims;
  if (g.n_sites() == g.n_cells()) {
    j["mask"] = "all";
  } else {
    const BoolRle rle = rle_encode(g.mask);
    j["mask"] = {{"first", rle.first}, {"runs", rle.runs}};
  }
  return j;
}

SpatialGrid grid_from_json(const json& j) {
  std::vector<Index> dims;
  for (const auto& d : j.at("dims")) dims.push_back(d.get<Index>());
  if (j.at("mask").is_string()) return SpatialGrid::full(dims);
  BoolRle rle;
  rle.first = j.at("mask").at("first").get<bool>();
  for (const auto& r : j.at("mask").at("runs")) rle.runs.push_back(r.get<Index>());
  Index n_cells = 1;
  for (Index d : dims) n_cells *= d;
  return SpatialGrid::masked(dims, rle_decode(rle, n_cells));
}

std::vector<std::string> coord_names(const SpatialGrid& g) {
  if (g.ndim() == 2) return {"row", "col"};
  if (g.ndim() == 1) return {"coord"};
  std::vector<std::string> names;
  for (Index d = 0; d < g.ndim(); ++d) names.push_back("c" + std::to_string(d));
  return names;
}

// Eigenvector field map: one row per active site, modulus and phase columns.
void write_mode_csv(const std::string& path, const SpatialGrid& g, const CVector<double>& u) {
  std::ofstream out(path);
  if (!out) throw InvalidInput("cannot write " + path);
  out << "cell";
  for (const auto& name : coord_names(g)) out << ',' << name;
  out << ",modulus,phase\n";
  for (Index s = 0; s < g.n_sites(); ++s) {
    out << g.cell_of_site[static_cast<std::size_t>(s)];
    for (Index d = 0; d < g.ndim(); ++d) out << ',' << fmt_g(g.coords(s, d));
    out << ',' << fmt_g(std::abs(u[s])) << ',' << fmt_g(std::arg(u[s])) << '\n';
  }
}

void write_value_csv(const std::string& path, const SpatialGrid& g, const Vector<double>& v) {
  std::ofstream out(path);
  if (!out) throw InvalidInput("cannot write " + path);
  out << "cell";
  for (const auto& name : coord_names(g)) out << ',' << name;
  out << ",value\n";
  for (Index s = 0; s < g.n_sites(); ++s) {
    out << g.cell_of_site[static_cast<std::size_t>(s)];
    for (Index d = 0; d < g.ndim(); ++d) out << ',' << fmt_g(g.coords(s, d));
    out << ',' << fmt_g(v[s]) << '\n';
  }
}

void write_series_csv(const std::string& path, const Vector<double>& v, double dt) {
  std::ofstream out(path);
  if (!out) throw InvalidInput("cannot write " + path);
  out << "t,value\n";
  for (Index t = 0; t < v.size(); ++t)
    out << fmt_g(static_cast<double>(t) * dt) << ',' << fmt_g(v[t]) << '\n';
}

std::string band_dir_name(Index b) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "band_%03td", static_cast<std::ptrdiff_t>(b));
  return buf;
}

// ---------------------------------------------------------------------------
// synth

template <typename T>
T get_checked(const json& j, const char* key, const T& fallback) {
  return j.contains(key) ? j.at(key).get<T>() : fallback;
}

WaveConfig wave_config_from_json(const json& j) {
  static const std::vector<std::string> keys = {
      "grid_shape", "length",        "dt",   "speed",         "origin_a", "origin_b",
      "gamma1",     "gamma2",        "decay_offset", "target_shares", "seed",     "waveform"};
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (std::find(keys.begin(), keys.end(), key) == keys.end())
      throw InvalidInput("unknown config key '" + key + "'");
  }
  WaveConfig cfg;
  if (j.contains("grid_shape")) {
    const auto& gs = j.at("grid_shape");
    if (gs.size() != 2) throw InvalidInput("grid_shape must have 2 entries");
    cfg.grid_shape = {gs.at(0).get<Index>(), gs.at(1).get<Index>()};
  }
  cfg.length = get_checked(j, "length", cfg.length);
  cfg.dt = get_checked(j, "dt", cfg.dt);
  cfg.speed = get_checked(j, "speed", cfg.speed);
  for (const char* key : {"origin_a", "origin_b"}) {
    if (!j.contains(key)) continue;
    const auto& o = j.at(key);
    if (o.size() != 2) throw InvalidInput(std::string(key) + " must have 2 entries");
    auto& dst = std::string(key) == "origin_a" ? cfg.origin_a : cfg.origin_b;
    dst = {o.at(0).get<double>(), o.at(1).get<double>()};
  }
  cfg.gamma1 = get_checked(j, "gamma1", cfg.gamma1);
  cfg.gamma2 = get_checked(j, "gamma2", cfg.gamma2);
  cfg.decay_offset = get_checked(j, "decay_offset", cfg.decay_offset);
  if (j.contains("target_shares")) {
    const auto& s = j.at("target_shares");
    if (s.size() != 3) throw InvalidInput("target_shares must have 3 entries");
    cfg.target_shares = {{s.at(0).get<double>(), s.at(1).get<double>(), s.at(2).get<double>()}};
  }
  cfg.seed = get_checked(j, "seed", cfg.seed);
  if (j.contains("waveform")) {
    const auto& w = j.at("waveform");
    static const std::vector<std::string> wkeys = {"carrier_freq", "burst_count", "burst_width",
                                                   "edge_margin_widths", "min_gap_widths"};
    for (const auto& [key, value] : w.items()) {
      (void)value;
      if (std::find(wkeys.begin(), wkeys.end(), key) == wkeys.end())
        throw InvalidInput("unknown waveform key '" + key + "'");
    }
    cfg.waveform.carrier_freq = get_checked(w, "carrier_freq", cfg.waveform.carrier_freq);
    cfg.waveform.burst_count = get_checked(w, "burst_count", cfg.waveform.burst_count);
    cfg.waveform.burst_width = get_checked(w, "burst_width", cfg.waveform.burst_width);
    cfg.waveform.edge_margin_widths =
        get_checked(w, "edge_margin_widths", cfg.waveform.edge_margin_widths);
    cfg.waveform.min_gap_widths = get_checked(w, "min_gap_widths", cfg.waveform.min_gap_widths);
  }
  return cfg;
}

struct SynthOpts {
  std::string config;
  std::string out;
  std::string format = "raw";
  std::optional<std::uint64_t> seed;
};

int cmd_synth(const SynthOpts& o) {
  WaveConfig cfg = wave_config_from_json(load_json(o.config));
  if (o.seed) cfg.seed = *o.seed;
  const PayloadFormat pf = parse_format(o.format);
  const TwoWaveSystem sys = generate_two_wave_system(cfg);

  ensure_dir(o.out);
  const std::string payload =
      o.out + (pf == PayloadFormat::raw_f64 ? "/fields.bin" : "/fields.csv");
  save_field_series(sys.fields, payload, pf);

  json truth;
  truth["seed"] = cfg.seed;
  truth["speed"] = cfg.speed;
  truth["carrier_freq"] = cfg.waveform.carrier_freq;
  truth["origin_a"] = cfg.origin_a;
  truth["origin_b"] = cfg.origin_b;
  truth["decay_offset"] = cfg.decay_offset;
  truth["gamma1"] = sys.truth.gamma1;
  truth["gamma2"] = sys.truth.gamma2;
  truth["realized_shares"] = sys.truth.realized_shares;
  truth["cross_share_residual"] = sys.truth.cross_share_residual;
  write_json(o.out + "/truth.json", truth);

  write_series_csv(o.out + "/series_a.csv", sys.truth.series_a, cfg.dt);
  write_series_csv(o.out + "/series_b.csv", sys.truth.series_b, cfg.dt);

  const SpatialGrid& g = sys.fields.grid;
  std::ofstream tf(o.out + "/truth_fields.csv");
  if (!tf) throw InvalidInput("cannot write " + o.out + "/truth_fields.csv");
  tf << "cell";
  for (const auto& name : coord_names(g)) tf << ',' << name;
  tf << ",amp_a,amp_b,delay_a,delay_b\n";
  for (Index s = 0; s < g.n_sites(); ++s) {
    tf << g.cell_of_site[static_cast<std::size_t>(s)];
    for (Index d = 0; d < g.ndim(); ++d) tf << ',' << fmt_g(g.coords(s, d));
    tf << ',' << fmt_g(sys.truth.amp_a[s]) << ',' << fmt_g(sys.truth.amp_b[s]) << ','
       << fmt_g(sys.truth.delay_a[s]) << ',' << fmt_g(sys.truth.delay_b[s]) << '\n';
  }
  std::cout << "wrote " << payload << " (" << g.n_sites() << " sites x "
            << sys.fields.length() << " samples), shares "
            << fmt_g(sys.truth.realized_shares[0]) << "/" << fmt_g(sys.truth.realized_shares[1])
            << "/" << fmt_g(sys.truth.realized_shares[2]) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// spca

struct SpcaOpts {
  std::string data;
  std::string out;
  std::string format = "raw";
  Index k = 2;
  double fmin = 0;
  double fmax = 0;
  Index voices = 8;
  double f0 = 0.849;
  int coi_mode = -1;  // -1 default heuristic, 0 off, 1 on
};

int cmd_spca(const SpcaOpts& o) {
  if (o.k < 1) throw InvalidInput("mode count k must be >= 1");
  const FieldSeries<double> data = load_field_series(o.data, parse_format(o.format));
  MorletParams<double> params;
  params.f0 = o.f0;
  const ScaleSet<double> scales = make_scales(params, o.fmin, o.fmax, static_cast<int>(o.voices));
  std::optional<bool> coi;
  if (o.coi_mode >= 0) coi = o.coi_mode > 0;
  const SpectralDecomposition<double> dec = spectral_decomposition(data, scales, o.k, params, coi);

  ensure_dir(o.out);
  json root;
  root["dt"] = dec.dt;
  root["f0"] = params.f0;
  root["voices"] = dec.scales.voices_per_octave;
  root["k"] = o.k;
  root["grid"] = grid_to_json(data.grid);
  root["bands"] = json::array();

  std::ofstream var(o.out + "/variance.csv");
  if (!var) throw InvalidInput("cannot write " + o.out + "/variance.csv");
  var << "freq,scale";
  for (Index i = 1; i <= o.k; ++i) var << ",fraction_" << i;
  var << '\n';

  for (std::size_t b = 0; b < dec.bands.size(); ++b) {
    const BandModes<double>& band = dec.bands[b];
    const std::string dir = band_dir_name(static_cast<Index>(b));
    ensure_dir(o.out + "/" + dir);

    json summary;
    summary["freq"] = band.frequency;
    summary["scale"] = band.scale;
    summary["effective_samples"] = band.effective_samples;
    summary["used_coi_only"] = band.used_coi_only;
    summary["trace"] = band.modes.trace;
    summary["eigenvalues"] = std::vector<double>(
        band.modes.eigenvalues.data(), band.modes.eigenvalues.data() + band.modes.n_modes());
    summary["fractions"] = std::vector<double>(
        band.modes.fractions.data(), band.modes.fractions.data() + band.modes.n_modes());
    const BoolRle rle = rle_encode(band.coi);
    summary["coi"] = {{"first", rle.first}, {"runs", rle.runs}};
    write_json(o.out + "/" + dir + "/summary.json", summary);

    save_complex_matrix(band.modes.eigenvectors, o.out + "/" + dir + "/modes.bin");
    save_complex_matrix(band.pc_series, o.out + "/" + dir + "/pcs.bin");
    for (Index i = 0; i < band.modes.n_modes(); ++i)
      write_mode_csv(o.out + "/" + dir + "/mode_" + std::to_string(i + 1) + ".csv", data.grid,
                     band.modes.eigenvectors.col(i));

    var << fmt_g(band.frequency) << ',' << fmt_g(band.scale);
    for (Index i = 0; i < o.k; ++i)
      var << ',' << fmt_g(i < band.modes.n_modes() ? band.modes.fractions[i] : 0.0);
    var << '\n';

    root["bands"].push_back({{"index", b},
                             {"dir", dir},
                             {"freq", band.frequency},
                             {"scale", band.scale},
                             {"effective_samples", band.effective_samples},
                             {"used_coi_only", band.used_coi_only}});
  }
  write_json(o.out + "/bands.json", root);
  std::cout << "wrote " << dec.bands.size() << " bands to " << o.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eigen-dir access shared by rotate / reconstruct / speed

struct EigenDir {
  std::string path;
  SpatialGrid grid;
  double dt{1};
  double f0{0.849};
  int voices{8};
  Index k{0};
  struct BandRef {
    std::string dir;
    double freq{0};
    double scale{0};
  };
  std::vector<BandRef> bands;

  std::string band_path(Index b) const { return path + "/" + bands[static_cast<std::size_t>(b)].dir; }

  Index nearest(double freq) const {
    Index best = 0;
    for (Index b = 1; b < static_cast<Index>(bands.size()); ++b)
      if (std::abs(bands[static_cast<std::size_t>(b)].freq - freq) <
          std::abs(bands[static_cast<std::size_t>(best)].freq - freq))
        best = b;
    return best;
  }
};

EigenDir open_eigen_dir(const std::string& path) {
  const json root = load_json(path + "/bands.json");
  EigenDir ed;
  ed.path = path;
  ed.grid = grid_from_json(root.at("grid"));
  ed.dt = root.at("dt").get<double>();
  ed.f0 = root.at("f0").get<double>();
  ed.voices = root.at("voices").get<int>();
  ed.k = root.at("k").get<Index>();
  for (const auto& b : root.at("bands"))
    ed.bands.push_back({b.at("dir").get<std::string>(), b.at("freq").get<double>(),
                        b.at("scale").get<double>()});
  if (ed.bands.empty()) throw InvalidInput(path + ": eigen directory has no bands");
  return ed;
}

// ---------------------------------------------------------------------------
// rotate

struct RotateOpts {
  std::string eigen;
  std::string weighting = "modulus-mask";
  std::optional<double> band;
  std::vector<double> range;
  Index mode_i = 1;
  Index mode_j = 2;
  bool verify = false;
};

CostOptions<double> parse_weighting(const std::string& name) {
  CostOptions<double> cost;
  if (name == "none")
    cost.weighting = CostWeighting::none;
  else if (name == "modulus-mask")
    cost.weighting = CostWeighting::modulus_mask;
  else
    throw InvalidInput("unknown weighting '" + name + "' (none or modulus-mask)");
  return cost;
}

json minima_to_json(const std::vector<RotationMinimum<double>>& minima) {
  json arr = json::array();
  for (const auto& m : minima)
    arr.push_back({{"theta", m.params.theta}, {"phi", m.params.phi}, {"cost", m.cost}});
  return arr;
}

void verify_rotation(const CVector<double>& u1, const CVector<double>& u2,
                     const CVector<double>& r1, const CVector<double>& r2) {
  const auto span_residual = [&](const CVector<double>& r) {
    return (r - u1 * u1.dot(r) - u2 * u2.dot(r)).norm();
  };
  const double norm_err = std::max(std::abs(r1.norm() - 1.0), std::abs(r2.norm() - 1.0));
  const double ortho = std::abs(r1.dot(r2));
  const double span = std::max(span_residual(r1), span_residual(r2));
  std::cout << "verify: norm error " << norm_err << ", |<r1,r2>| " << ortho
            << ", span residual " << span << "\n";
  if (norm_err > 1e-10 || ortho > 1e-10 || span > 1e-10)
    throw NumericalFailure("rotated pair fails orthonormality/span verification");
}

// Rotates one band's stored modes i, j and writes the report plus rotated
// fields next to them.  When `chained` is given, the minimum with the best
// eigenvector overlap against that already-rotated pair is applied instead
// of the lowest-cost one, keeping mode identity consistent across bands.
RotatedPair<double> rotate_band_files(const EigenDir& ed, Index b, Index mi, Index mj,
                                      const CostOptions<double>& cost, bool verify,
                                      const std::pair<CVector<double>, CVector<double>>* chained) {
  const std::string dir = ed.band_path(b);
  const CMatrix<double> modes = load_complex_matrix(dir + "/modes.bin");
  const CMatrix<double> pcs = load_complex_matrix(dir + "/pcs.bin");
  if (mi == mj) throw InvalidInput("rotation needs two distinct mode ranks");
  if (mi < 1 || mj < 1 || mi > modes.cols() || mj > modes.cols())
    throw InvalidInput("mode ranks " + std::to_string(mi) + "," + std::to_string(mj) +
                       " not found: band has " + std::to_string(modes.cols()) + " modes");
  const CVector<double> u1 = modes.col(mi - 1);
  const CVector<double> u2 = modes.col(mj - 1);

  RotatedPair<double> best = optimize_rotation(ed.grid, u1, u2, cost);
  if (chained && best.minima.size() > 1) {
    double top = -1.0;
    for (const auto& m : best.minima) {
      const auto pair = rotate_pair(u1, u2, m.params);
      const double overlap = std::norm(pair.first.dot(chained->first)) +
                             std::norm(pair.second.dot(chained->second));
      if (overlap > top) {
        top = overlap;
        best.params = m.params;
        best.u1 = pair.first;
        best.u2 = pair.second;
      }
    }
    const auto cache = [&] {
      return std::pair{phase_laplacian_cost(ed.grid, best.u1, cost),
                       phase_laplacian_cost(ed.grid, best.u2, cost)};
    }();
    best.cost1 = cache.first;
    best.cost2 = cache.second;
  }
  if (verify) verify_rotation(u1, u2, best.u1, best.u2);

  const auto rotated_pcs =
      rotate_pair<double>(pcs.row(mi - 1).transpose(), pcs.row(mj - 1).transpose(), best.params);

  json report;
  report["modes"] = {mi, mj};
  report["weighting"] = cost.weighting == CostWeighting::modulus_mask ? "modulus-mask" : "none";
  report["theta"] = best.params.theta;
  report["phi"] = best.params.phi;
  report["cost"] = best.cost1;
  report["cost1"] = best.cost1;
  report["cost2"] = best.cost2;
  report["local_minima"] = minima_to_json(best.minima);
  write_json(dir + "/rotation.json", report);

  CMatrix<double> rm(ed.grid.n_sites(), 2);
  rm.col(0) = best.u1;
  rm.col(1) = best.u2;
  save_complex_matrix(rm, dir + "/rotated_modes.bin");
  CMatrix<double> rp(2, rotated_pcs.first.size());
  rp.row(0) = rotated_pcs.first.transpose();
  rp.row(1) = rotated_pcs.second.transpose();
  save_complex_matrix(rp, dir + "/rotated_pcs.bin");
  write_mode_csv(dir + "/rotated_mode_1.csv", ed.grid, best.u1);
  write_mode_csv(dir + "/rotated_mode_2.csv", ed.grid, best.u2);
  return best;
}

int cmd_rotate(const RotateOpts& o) {
  if (o.band.has_value() == !o.range.empty())
    throw InvalidInput("give exactly one of --band or --range");
  const EigenDir ed = open_eigen_dir(o.eigen);
  const CostOptions<double> cost = parse_weighting(o.weighting);

  if (o.band) {
    const Index b = ed.nearest(*o.band);
    const RotatedPair<double> r =
        rotate_band_files(ed, b, o.mode_i, o.mode_j, cost, o.verify, nullptr);
    std::cout << "band " << ed.bands[static_cast<std::size_t>(b)].freq << ": "
              << r.minima.size() << " local minima, applied theta=" << fmt_g(r.params.theta)
              << " phi=" << fmt_g(r.params.phi) << " cost=" << fmt_g(r.cost1) << "\n";
    return 0;
  }

  if (o.range.size() != 2 || !(o.range[0] < o.range[1]))
    throw InvalidInput("--range needs fmin fmax with fmin < fmax");
  std::vector<Index> selected;
  for (Index b = 0; b < static_cast<Index>(ed.bands.size()); ++b) {
    const double f = ed.bands[static_cast<std::size_t>(b)].freq;
    if (f >= o.range[0] * (1 - 1e-9) && f <= o.range[1] * (1 + 1e-9)) selected.push_back(b);
  }
  if (selected.empty()) throw InvalidInput("no bands inside the rotation interval");

  // Anchor at the band nearest the interval midpoint, then chain outward so
  // each band's minimum is matched against its already-rotated neighbour.
  const double mid = (o.range[0] + o.range[1]) / 2;
  Index anchor_pos = 0;
  for (Index p = 1; p < static_cast<Index>(selected.size()); ++p)
    if (std::abs(ed.bands[static_cast<std::size_t>(selected[static_cast<std::size_t>(p)])].freq -
                 mid) <
        std::abs(
            ed.bands[static_cast<std::size_t>(selected[static_cast<std::size_t>(anchor_pos)])].freq -
            mid))
      anchor_pos = p;

  std::vector<std::pair<CVector<double>, CVector<double>>> rotated(selected.size());
  const auto run_one = [&](Index pos, const std::pair<CVector<double>, CVector<double>>* prev) {
    const Index b = selected[static_cast<std::size_t>(pos)];
    const RotatedPair<double> r =
        rotate_band_files(ed, b, o.mode_i, o.mode_j, cost, o.verify, prev);
    rotated[static_cast<std::size_t>(pos)] = {r.u1, r.u2};
    std::cout << "band " << ed.bands[static_cast<std::size_t>(b)].freq << ": "
              << r.minima.size() << " minima, theta=" << fmt_g(r.params.theta)
              << " phi=" << fmt_g(r.params.phi) << "\n";
  };
  run_one(anchor_pos, nullptr);
  for (Index p = anchor_pos + 1; p < static_cast<Index>(selected.size()); ++p)
    run_one(p, &rotated[static_cast<std::size_t>(p - 1)]);
  for (Index p = anchor_pos - 1; p >= 0; --p)
    run_one(p, &rotated[static_cast<std::size_t>(p + 1)]);

  json chain;
  chain["fmin"] = o.range[0];
  chain["fmax"] = o.range[1];
  chain["modes"] = {o.mode_i, o.mode_j};
  chain["weighting"] = o.weighting;
  chain["anchor_index"] = selected[static_cast<std::size_t>(anchor_pos)];
  chain["bands"] = selected;
  write_json(o.eigen + "/rotation_chain.json", chain);
  return 0;
}

// ---------------------------------------------------------------------------
// reconstruct

struct ReconstructOpts {
  std::string eigen;
  std::string out;
  double fmin = 0;
  double fmax = 0;
  Index rank = 1;
  bool rotated = false;
};

int cmd_reconstruct(const ReconstructOpts& o) {
  if (o.rank < 1) throw InvalidInput("mode rank must be >= 1");
  const EigenDir ed = open_eigen_dir(o.eigen);
  std::vector<BandComponent<double>> parts;
  for (Index b = 0; b < static_cast<Index>(ed.bands.size()); ++b) {
    const auto& ref = ed.bands[static_cast<std::size_t>(b)];
    if (ref.freq < o.fmin * (1 - 1e-9) || ref.freq > o.fmax * (1 + 1e-9)) continue;
    const std::string dir = ed.band_path(b);
    const std::string stem = o.rotated ? "/rotated_" : "/";
    if (o.rotated && !stdfs::exists(dir + "/rotated_modes.bin"))
      throw InvalidInput(dir + " has no stored rotation; run rotate first");
    const CMatrix<double> modes = load_complex_matrix(dir + stem + "modes.bin");
    const CMatrix<double> pcs = load_complex_matrix(dir + stem + "pcs.bin");
    if (o.rank > modes.cols())
      throw InvalidInput("mode rank " + std::to_string(o.rank) + " not found: band has " +
                         std::to_string(modes.cols()) + (o.rotated ? " rotated" : "") + " modes");
    parts.push_back({ref.scale, modes.col(o.rank - 1), pcs.row(o.rank - 1).transpose()});
  }
  if (parts.empty()) throw InvalidInput("no bands inside the reconstruction interval");

  MorletParams<double> params;
  params.f0 = ed.f0;
  const Vector<double> series = reconstruct_components(parts, params, ed.voices, ed.dt);
  write_series_csv(o.out, series, ed.dt);
  std::cout << "wrote " << o.out << " from " << parts.size() << " bands\n";
  return 0;
}

// ---------------------------------------------------------------------------
// speed

struct SpeedCmdOpts {
  std::string eigen;
  std::string out;
  double band = 0;
  Index rank = 1;
  bool rotated = false;
  double floor = SpeedOptions{}.modulus_floor;
};

int cmd_speed(const SpeedCmdOpts& o) {
  if (o.rank < 1) throw InvalidInput("mode rank must be >= 1");
  const EigenDir ed = open_eigen_dir(o.eigen);
  const Index b = ed.nearest(o.band);
  const std::string dir = ed.band_path(b);
  const std::string file = o.rotated ? dir + "/rotated_modes.bin" : dir + "/modes.bin";
  if (o.rotated && !stdfs::exists(file))
    throw InvalidInput(dir + " has no stored rotation; run rotate first");
  const CMatrix<double> modes = load_complex_matrix(file);
  if (o.rank > modes.cols())
    throw InvalidInput("mode rank " + std::to_string(o.rank) + " not found: band has " +
                       std::to_string(modes.cols()) + " modes");

  SpeedOptions opts;
  opts.modulus_floor = o.floor;
  const double freq = ed.bands[static_cast<std::size_t>(b)].freq;
  const SpeedEstimate<double> est =
      estimate_propagation_speed<double>(modes.col(o.rank - 1), ed.grid, freq, opts);

  json report;
  report["freq"] = freq;
  report["rank"] = o.rank;
  report["speed"] = est.speed;
  report["direction"] = std::vector<double>(est.direction.data(),
                                            est.direction.data() + est.direction.size());
  // Degrees measured from the +col axis toward +row; 2-D grids only.
  if (est.direction.size() == 2)
    report["direction_deg"] = std::atan2(est.direction[0], est.direction[1]) * 180.0 /
                              std::numbers::pi;
  report["gradient"] = std::vector<double>(est.gradient.data(),
                                           est.gradient.data() + est.gradient.size());
  report["fit_rms"] = est.fit_rms;
  report["n_sites"] = est.n_sites;
  report["stationary"] = est.stationary;
  if (o.out.empty())
    std::cout << report.dump(2) << "\n";
  else
    write_json(o.out, report);
  return 0;
}

// ---------------------------------------------------------------------------
// classical

struct ClassicalOpts {
  std::string data;
  std::string out;
  std::string format = "raw";
  Index k = 12;
  bool center = true;
};

int cmd_classical(const ClassicalOpts& o) {
  if (o.k < 1) throw InvalidInput("mode count k must be >= 1");
  FieldSeries<double> data = load_field_series(o.data, parse_format(o.format));
  if (o.center) data.values.colwise() -= data.values.rowwise().mean();
  const ClassicalPca<double> pca = classical_pca(data, o.k);

  ensure_dir(o.out);
  std::vector<double> cumulative(static_cast<std::size_t>(o.k));
  double run = 0.0;
  for (Index i = 0; i < o.k; ++i) {
    run += pca.modes.fractions[i];
    cumulative[static_cast<std::size_t>(i)] = run;
  }

  json summary;
  summary["k"] = o.k;
  summary["centered"] = o.center;
  summary["trace"] = pca.modes.trace;
  summary["eigenvalues"] =
      std::vector<double>(pca.modes.eigenvalues.data(), pca.modes.eigenvalues.data() + o.k);
  summary["fractions"] =
      std::vector<double>(pca.modes.fractions.data(), pca.modes.fractions.data() + o.k);
  summary["cumulative"] = cumulative;
  write_json(o.out + "/classical.json", summary);

  std::ofstream var(o.out + "/variance.csv");
  if (!var) throw InvalidInput("cannot write " + o.out + "/variance.csv");
  var << "rank,eigenvalue,fraction,cumulative\n";
  for (Index i = 0; i < o.k; ++i)
    var << (i + 1) << ',' << fmt_g(pca.modes.eigenvalues[i]) << ','
        << fmt_g(pca.modes.fractions[i]) << ',' << fmt_g(cumulative[static_cast<std::size_t>(i)])
        << '\n';

  for (Index i = 0; i < o.k; ++i)
    write_value_csv(o.out + "/mode_" + std::to_string(i + 1) + ".csv", data.grid,
                    pca.modes.eigenvectors.col(i).real());

  std::ofstream pcs(o.out + "/pcs.csv");
  if (!pcs) throw InvalidInput("cannot write " + o.out + "/pcs.csv");
  pcs << "t";
  for (Index i = 1; i <= o.k; ++i) pcs << ",pc_" << i;
  pcs << '\n';
  for (Index t = 0; t < pca.pc_series.cols(); ++t) {
    pcs << fmt_g(static_cast<double>(t) * data.dt);
    for (Index i = 0; i < o.k; ++i) pcs << ',' << fmt_g(pca.pc_series(i, t));
    pcs << '\n';
  }
  std::cout << "cumulative variance at rank " << std::min<Index>(9, o.k) << ": "
            << fmt_g(cumulative[static_cast<std::size_t>(std::min<Index>(9, o.k) - 1)]) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// rankexp

struct RankexpOpts {
  std::string out;
  Index sites = 32;
  Index length = 1024;
  Index reps = 5;
  Index k = 20;
  std::uint64_t seed = 1;
  double fmin = 0.03;
  double fmax = 0.05;
};

const char* window_name(TaperWindow w) {
  switch (w) {
    case TaperWindow::boxcar: return "boxcar";
    case TaperWindow::daniell: return "daniell";
    case TaperWindow::hann: return "hann";
  }
  return "?";
}

int cmd_rankexp(const RankexpOpts& o) {
  if (o.sites < 2 || o.length < 16) throw InvalidInput("rank experiment needs sites >= 2, length >= 16");
  if (o.reps < 1 || o.k < 1) throw InvalidInput("rank experiment needs reps >= 1 and k >= 1");
  ensure_dir(o.out);
  const Index k = std::min(o.k, o.sites);

  std::ofstream csv(o.out + "/rankexp.csv");
  if (!csv) throw InvalidInput("cannot write " + o.out + "/rankexp.csv");
  csv << "seed,segments,freqs,window,rank,eigenvalue,fraction,cumulative\n";

  for (Index rep = 0; rep < o.reps; ++rep) {
    const std::uint64_t rep_seed = split_seed(o.seed, static_cast<std::uint64_t>(rep));
    FieldSeries<double> noise;
    noise.grid = SpatialGrid::full({o.sites});
    noise.values.resize(o.sites, o.length);
    for (Index i = 0; i < o.sites; ++i) {
      std::mt19937_64 rng(split_seed(rep_seed, static_cast<std::uint64_t>(i)));
      std::normal_distribution<double> gauss;
      for (Index t = 0; t < o.length; ++t) noise.values(i, t) = gauss(rng);
    }

    for (Index segments : {1, 2, 4}) {
      for (Index freqs : {1, 2, 4}) {
        for (TaperWindow window : {TaperWindow::boxcar, TaperWindow::hann}) {
          PeriodogramConfig<double> cfg;
          cfg.segments = segments;
          cfg.freqs_per_band = freqs;
          cfg.window = window;
          const auto s = periodogram_cross_spectral_matrix(noise, cfg, o.fmin, o.fmax);
          const EigenModes<double> modes = hermitian_eigen(s, k);
          double cumulative = 0.0;
          for (Index r = 0; r < k; ++r) {
            cumulative += modes.fractions[r];
            csv << rep_seed << ',' << segments << ',' << freqs << ',' << window_name(window)
                << ',' << (r + 1) << ',' << fmt_g(modes.eigenvalues[r]) << ','
                << fmt_g(modes.fractions[r]) << ',' << fmt_g(cumulative) << '\n';
          }
        }
      }
    }
  }

  json meta;
  meta["sites"] = o.sites;
  meta["length"] = o.length;
  meta["reps"] = o.reps;
  meta["k"] = k;
  meta["seed"] = o.seed;
  meta["band"] = {o.fmin, o.fmax};
  meta["segments"] = {1, 2, 4};
  meta["freqs"] = {1, 2, 4};
  meta["windows"] = {"boxcar", "hann"};
  write_json(o.out + "/rankexp.json", meta);
  std::cout << "wrote " << o.out << "/rankexp.csv (" << o.reps << " seeds x 18 configs)\n";
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"rotated spectral principal component analysis toolkit"};
  app.require_subcommand(1);
  int rc = 0;

  SynthOpts so;
  CLI::App* synth = app.add_subcommand("synth", "generate the two-wave benchmark system");
  synth->add_option("--config", so.config, "WaveConfig JSON file")->required();
  synth->add_option("--out", so.out, "output directory")->required();
  synth->add_option("--format", so.format, "payload format")->check(CLI::IsMember({"raw", "csv"}));
  synth->add_option("--seed", so.seed, "override the config seed");
  synth->callback([&] { rc = cmd_synth(so); });

  SpcaOpts po;
  CLI::App* spca = app.add_subcommand("spca", "per-band cross-spectral eigendecomposition");
  spca->add_option("--data", po.data, "field payload file")->required();
  spca->add_option("--out", po.out, "eigen output directory")->required();
  spca->add_option("--format", po.format, "payload format")->check(CLI::IsMember({"raw", "csv"}));
  spca->add_option("-k,--k", po.k, "modes per band")->required();
  spca->add_option("--fmin", po.fmin, "lowest band frequency")->required();
  spca->add_option("--fmax", po.fmax, "highest band frequency")->required();
  spca->add_option("--voices", po.voices, "scales per octave");
  spca->add_option("--f0", po.f0, "Morlet center frequency");
  spca->add_flag("--coi-only{1},--no-coi-only{0}", po.coi_mode,
                 "force cone-of-influence filtering on/off (default: per-band heuristic)");
  spca->callback([&] { rc = cmd_spca(po); });

  RotateOpts ro;
  CLI::App* rotate = app.add_subcommand("rotate", "phase-regularized rotation of a mode pair");
  rotate->add_option("--eigen", ro.eigen, "eigen directory from spca")->required();
  rotate->add_option("--band", ro.band, "rotate the band nearest this frequency");
  rotate->add_option("--range", ro.range, "rotate all bands in [fmin, fmax], chained")
      ->expected(2);
  rotate->add_option("--modes", [&ro](const std::vector<std::string>& v) {
    try {
      std::size_t used_i = 0, used_j = 0;
      ro.mode_i = std::stol(v.at(0), &used_i);
      ro.mode_j = std::stol(v.at(1), &used_j);
      return used_i == v.at(0).size() && used_j == v.at(1).size();
    } catch (const std::exception&) {
      return false;
    }
  }, "mode ranks to rotate (default 1 2)")->expected(2);
  rotate->add_option("--weighting", ro.weighting, "cost weighting")
      ->check(CLI::IsMember({"none", "modulus-mask"}));
  rotate->add_flag("--verify", ro.verify, "re-check span and orthonormality");
  rotate->callback([&] { rc = cmd_rotate(ro); });

  ReconstructOpts co;
  CLI::App* recon = app.add_subcommand("reconstruct", "multi-band inverse-wavelet mode series");
  recon->add_option("--eigen", co.eigen, "eigen directory from spca")->required();
  recon->add_option("--out", co.out, "output CSV path")->required();
  recon->add_option("--fmin", co.fmin, "lowest band frequency")->required();
  recon->add_option("--fmax", co.fmax, "highest band frequency")->required();
  recon->add_option("--rank", co.rank, "mode rank (1-based)");
  recon->add_flag("--rotated", co.rotated, "use stored rotated modes");
  recon->callback([&] { rc = cmd_reconstruct(co); });

  SpeedCmdOpts veo;
  CLI::App* speed = app.add_subcommand("speed", "propagation speed from a mode's phase map");
  speed->add_option("--eigen", veo.eigen, "eigen directory from spca")->required();
  speed->add_option("--band", veo.band, "band nearest this frequency")->required();
  speed->add_option("--rank", veo.rank, "mode rank (1-based)");
  speed->add_option("--out", veo.out, "report JSON path (default: stdout)");
  speed->add_option("--floor", veo.floor, "modulus significance floor");
  speed->add_flag("--rotated", veo.rotated, "use stored rotated modes");
  speed->callback([&] { rc = cmd_speed(veo); });

  ClassicalOpts clo;
  CLI::App* classical = app.add_subcommand("classical", "time-domain covariance PCA");
  classical->add_option("--data", clo.data, "field payload file")->required();
  classical->add_option("--out", clo.out, "output directory")->required();
  classical->add_option("--format", clo.format, "payload format")
      ->check(CLI::IsMember({"raw", "csv"}));
  classical->add_option("-k,--k", clo.k, "number of modes")->required();
  classical->add_flag("--center,!--no-center", clo.center, "subtract each site's mean first");
  classical->callback([&] { rc = cmd_classical(clo); });

  RankexpOpts reo;
  CLI::App* rankexp = app.add_subcommand(
      "rankexp", "periodogram rank-bound sweep on white noise");
  rankexp->add_option("--out", reo.out, "output directory")->required();
  rankexp->add_option("--sites", reo.sites, "number of noise sites");
  rankexp->add_option("--length", reo.length, "record length");
  rankexp->add_option("--reps", reo.reps, "number of noise seeds");
  rankexp->add_option("-k,--k", reo.k, "eigenvalues kept per config");
  rankexp->add_option("--seed", reo.seed, "base seed");
  rankexp->add_option("--fmin", reo.fmin, "band lower edge");
  rankexp->add_option("--fmax", reo.fmax, "band upper edge");
  rankexp->callback([&] { rc = cmd_rankexp(reo); });

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const InvalidInput& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const NumericalFailure& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 3;
  }
  return rc;
}

int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args);
}

}  // namespace rspca::cli
