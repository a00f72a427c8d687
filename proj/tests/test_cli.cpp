#include "rspca/cli.hpp"

#include "rspca/io.hpp"

#include <doctest.h>

#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

using namespace rspca;
namespace stdfs = std::filesystem;

namespace {

struct TempDir {
  stdfs::path path;
  explicit TempDir(const std::string& tag) {
    path = stdfs::temp_directory_path() / ("rspca_cli_" + tag + "_" + std::to_string(::getpid()));
    stdfs::remove_all(path);
    stdfs::create_directories(path);
  }
  ~TempDir() { stdfs::remove_all(path); }
  std::string str(const std::string& rel = "") const {
    return rel.empty() ? path.string() : (path / rel).string();
  }
};

int run_cli(std::vector<std::string> args) { return cli::run(args); }

void write_small_config(const std::string& path, std::uint64_t seed) {
  nlohmann::json cfg;
  cfg["grid_shape"] = {12, 12};
  cfg["length"] = 512;
  cfg["origin_a"] = {2, 2};
  cfg["origin_b"] = {9, 9};
  cfg["target_shares"] = {0.06, 0.04, 0.90};
  cfg["seed"] = seed;
  cfg["waveform"] = {{"burst_count", 3}, {"burst_width", 8.0}};
  write_text_file(path, cfg.dump(2) + "\n");
}

// Every file of the pipeline run, relative path -> bytes.
std::vector<std::pair<std::string, std::string>> snapshot(const stdfs::path& root) {
  std::vector<std::pair<std::string, std::string>> files;
  for (const auto& entry : stdfs::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    std::ifstream in(entry.path(), std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    files.emplace_back(stdfs::relative(entry.path(), root).string(), std::move(bytes));
  }
  std::sort(files.begin(), files.end());
  return files;
}

void run_pipeline(const TempDir& dir, std::uint64_t seed) {
  write_small_config(dir.str("cfg.json"), seed);
  REQUIRE(run_cli({"synth", "--config", dir.str("cfg.json"), "--out", dir.str("sys")}) == 0);
  REQUIRE(run_cli({"spca", "--data", dir.str("sys/fields.bin"), "--out", dir.str("eig"), "-k",
                   "2", "--fmin", "0.035", "--fmax", "0.046"}) == 0);
  REQUIRE(run_cli({"rotate", "--eigen", dir.str("eig"), "--range", "0.035", "0.046",
                   "--verify"}) == 0);
  REQUIRE(run_cli({"reconstruct", "--eigen", dir.str("eig"), "--fmin", "0.035", "--fmax", "0.046",
                   "--rank", "1", "--rotated", "--out", dir.str("rec.csv")}) == 0);
  REQUIRE(run_cli({"classical", "--data", dir.str("sys/fields.bin"), "--out", dir.str("cls"),
                   "-k", "4"}) == 0);
  REQUIRE(run_cli({"rankexp", "--out", dir.str("rk"), "--reps", "1", "--sites", "6", "--length",
                   "512"}) == 0);
}

}  // namespace

TEST_CASE("pipeline reruns are byte-identical") {
  TempDir a("det_a"), b("det_b");
  run_pipeline(a, 11);
  run_pipeline(b, 11);
  const auto fa = snapshot(a.path), fb = snapshot(b.path);
  REQUIRE(fa.size() == fb.size());
  for (std::size_t i = 0; i < fa.size(); ++i) {
    CHECK(fa[i].first == fb[i].first);
    const bool same = fa[i].second == fb[i].second;
    CHECK_MESSAGE(same, "file differs between reruns: ", fa[i].first);
  }

  SUBCASE("a different seed changes the payload") {
    TempDir c("det_c");
    write_small_config(c.str("cfg.json"), 12);
    REQUIRE(run_cli({"synth", "--config", c.str("cfg.json"), "--out", c.str("sys")}) == 0);
    std::ifstream fa_in(a.str("sys/fields.bin"), std::ios::binary);
    std::ifstream fc_in(c.str("sys/fields.bin"), std::ios::binary);
    std::string pa_bytes((std::istreambuf_iterator<char>(fa_in)), std::istreambuf_iterator<char>());
    std::string pc_bytes((std::istreambuf_iterator<char>(fc_in)), std::istreambuf_iterator<char>());
    CHECK(pa_bytes != pc_bytes);
  }
}

TEST_CASE("pipeline outputs are well formed") {
  TempDir dir("shape");
  run_pipeline(dir, 21);

  const nlohmann::json bands = nlohmann::json::parse(read_text_file(dir.str("eig/bands.json")));
  CHECK(bands.at("bands").size() == 4);  // 0.035..0.046 at 8 voices
  CHECK(bands.at("grid").at("mask") == "all");

  // Reconstruction CSV has one row per sample plus the header.
  const std::string rec = read_text_file(dir.str("rec.csv"));
  CHECK(std::count(rec.begin(), rec.end(), '\n') == 513);
  CHECK(rec.rfind("t,value\n", 0) == 0);

  const nlohmann::json cls = nlohmann::json::parse(read_text_file(dir.str("cls/classical.json")));
  CHECK(cls.at("fractions").size() == 4);
  double cum = 0;
  for (const auto& f : cls.at("fractions")) cum += f.get<double>();
  CHECK(std::abs(cls.at("cumulative").back().get<double>() - cum) < 1e-12);

  // Rank experiment: 1 seed x 3 segments x 3 freqs x 2 windows x 6 ranks.
  const std::string rk = read_text_file(dir.str("rk/rankexp.csv"));
  CHECK(std::count(rk.begin(), rk.end(), '\n') == 1 + 18 * 6);

  SUBCASE("speed report is valid JSON with the contract keys") {
    REQUIRE(run_cli({"speed", "--eigen", dir.str("eig"), "--band", "0.04", "--rank", "1", "--out",
                     dir.str("speed.json")}) == 0);
    const nlohmann::json sp = nlohmann::json::parse(read_text_file(dir.str("speed.json")));
    for (const char* key : {"speed", "direction_deg", "fit_rms", "direction", "n_sites"})
      CHECK(sp.contains(key));
  }
}

TEST_CASE("usage and config errors exit with code 2") {
  TempDir dir("err");
  write_small_config(dir.str("cfg.json"), 5);
  REQUIRE(run_cli({"synth", "--config", dir.str("cfg.json"), "--out", dir.str("sys")}) == 0);
  REQUIRE(run_cli({"spca", "--data", dir.str("sys/fields.bin"), "--out", dir.str("eig"), "-k",
                   "2", "--fmin", "0.035", "--fmax", "0.046"}) == 0);

  CHECK(run_cli({"synth", "--config", dir.str("absent.json"), "--out", dir.str("x")}) == 2);
  CHECK(run_cli({"spca", "--data", dir.str("sys/fields.bin"), "--out", dir.str("x"), "-k", "0",
                 "--fmin", "0.035", "--fmax", "0.046"}) == 2);
  CHECK(run_cli({"spca", "--data", dir.str("sys/fields.bin"), "--out", dir.str("x"), "-k", "2",
                 "--fmin", "0.2", "--fmax", "0.01"}) == 2);
  CHECK(run_cli({"rotate", "--eigen", dir.str("eig"), "--band", "0.04", "--modes", "1", "1"}) ==
        2);
  CHECK(run_cli({"rotate", "--eigen", dir.str("eig"), "--band", "0.04", "--modes", "3", "4"}) ==
        2);
  CHECK(run_cli({"rotate", "--eigen", dir.str("eig")}) == 2);
  CHECK(run_cli({"reconstruct", "--eigen", dir.str("eig"), "--fmin", "0.2", "--fmax", "0.3",
                 "--rank", "1", "--out", dir.str("x.csv")}) == 2);
  CHECK(run_cli({"reconstruct", "--eigen", dir.str("eig"), "--fmin", "0.035", "--fmax", "0.046",
                 "--rank", "1", "--rotated", "--out", dir.str("x.csv")}) == 2);
  CHECK(run_cli({"nonsense"}) == 2);
  CHECK(run_cli({"synth", "--config", dir.str("cfg.json"), "--out", dir.str("x"),
                 "--bogus-flag"}) == 2);

  SUBCASE("config typos are named") {
    write_text_file(dir.str("typo.json"), "{\"grid_shap\": [8, 8]}\n");
    CHECK(run_cli({"synth", "--config", dir.str("typo.json"), "--out", dir.str("x")}) == 2);
  }
}

TEST_CASE("a non-planar phase map exits with code 3") {
  TempDir dir("noise");
  // Noise-only system: the leading eigenvector's phase map is unstructured.
  nlohmann::json cfg;
  cfg["grid_shape"] = {12, 12};
  cfg["length"] = 512;
  cfg["origin_a"] = {2, 2};
  cfg["origin_b"] = {9, 9};
  cfg["gamma1"] = 0.0;
  cfg["gamma2"] = 40.0;
  cfg["seed"] = 3;
  cfg["waveform"] = {{"burst_count", 3}, {"burst_width", 8.0}};
  write_text_file(dir.str("cfg.json"), cfg.dump(2) + "\n");
  REQUIRE(run_cli({"synth", "--config", dir.str("cfg.json"), "--out", dir.str("sys")}) == 0);
  REQUIRE(run_cli({"spca", "--data", dir.str("sys/fields.bin"), "--out", dir.str("eig"), "-k",
                   "1", "--fmin", "0.035", "--fmax", "0.046"}) == 0);
  CHECK(run_cli({"speed", "--eigen", dir.str("eig"), "--band", "0.04", "--rank", "1"}) == 3);
}

TEST_CASE("masked payloads round-trip through save and load") {
  TempDir dir("mask");
  std::vector<std::uint8_t> mask(6 * 5, 1);
  mask[3] = 0;
  mask[17] = 0;
  mask[29] = 0;
  FieldSeries<double> fs;
  fs.grid = SpatialGrid::masked({6, 5}, mask);
  fs.values.resize(fs.grid.n_sites(), 16);
  std::mt19937_64 rng(9);
  std::normal_distribution<double> gauss;
  for (Index s = 0; s < fs.values.rows(); ++s)
    for (Index t = 0; t < fs.values.cols(); ++t) fs.values(s, t) = gauss(rng);
  fs.units = "unitless";

  for (const PayloadFormat format : {PayloadFormat::raw_f64, PayloadFormat::csv}) {
    const std::string payload =
        dir.str(format == PayloadFormat::csv ? "masked.csv" : "masked.bin");
    save_field_series(fs, payload, format);
    const FieldSeries<double> back = load_field_series(payload, format);
    REQUIRE(back.grid.n_sites() == fs.grid.n_sites());
    CHECK(back.grid.dims == fs.grid.dims);
    CHECK(back.grid.mask == fs.grid.mask);
    CHECK((back.values - fs.values).cwiseAbs().maxCoeff() == 0.0);
  }
}
