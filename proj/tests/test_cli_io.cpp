// Tests for the command front end: config parsing, tabular serialization,
// command wiring, report rendering, SVG emission, and the installed binary's
// exit codes and byte-level determinism.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "nvac/cli_io.hpp"
#include "nvac/inversion.hpp"
#include "nvac/signal_synth.hpp"
#include "nvac/spin_core.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace nvac;
using doctest::Approx;
using nlohmann::json;

namespace {

constexpr double kPiHalf = 1.5707963267948966;

double deg(double d) { return d * 3.141592653589793238462643383279502884 / 180.0; }

const PhysicalConstants kConsts{};

fs::path temp_dir() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() /
                 ("nvac_cli_test_" + std::to_string(::getpid()));
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE_MESSAGE(f.good(), "cannot open " << p.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  REQUIRE(f.good());
  f << text;
}

// Runs the installed binary through the shell, captures stdout/stderr, and
// returns the exit code.
int run_cli(const std::string& args, const fs::path& out_file,
            const fs::path& err_file) {
  const std::string cmd = std::string(NVAC_CLI_PATH) + " " + args + " > " +
                          out_file.string() + " 2> " + err_file.string();
  const int rc = std::system(cmd.c_str());
  REQUIRE(rc != -1);
  REQUIRE(WIFEXITED(rc));
  return WEXITSTATUS(rc);
}

const std::string* find_meta(const TabularSeries& t, const std::string& key) {
  for (const auto& [k, v] : t.metadata)
    if (k == key) return &v;
  return nullptr;
}

double meta_num(const TabularSeries& t, const std::string& key) {
  const std::string* v = find_meta(t, key);
  REQUIRE_MESSAGE(v != nullptr, "missing metadata key " << key);
  return std::stod(*v);
}

int argmin_column(const TabularSeries& t, int col) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(t.rows.size()); ++i)
    if (t.rows[i][col] < t.rows[best][col]) best = i;
  return best;
}

// The published measurement document, as the CLI accepts it.
std::string reference_measurement_doc(int mc_samples) {
  std::ostringstream ss;
  ss << R"({
  "R_0plus_MHz": {"value": 3.15, "sigma": 0.01},
  "R_0minus_MHz": {"value": 2.57, "sigma": 0.01},
  "R_minusplus_MHz": {"value": 2.42, "sigma": 0.02},
  "amplitude_ratio": {"value": 0.23, "sigma": 0.005},
  "field_context": {"B_mT": 10.7, "theta_deg": 90.0},
  "options": {"mc_samples": )"
     << mc_samples << R"(, "seed": 1}
})";
  return ss.str();
}

}  // namespace

TEST_CASE("tabular series round-trips byte-identically through write/read") {
  TabularSeries t;
  t.columns = {"x_MHz", "y_norm"};
  t.rows = {{0.1, 1e-300}, {2932.0, -0.0}, {1.0 / 3.0, 5e17}, {-4.25, 1.0}};
  t.metadata = {{"command", "demo"},
                {"version", "1"},
                {"seed", "7"},
                {"config", "{\"group\":{\"value_MHz\":1.5}}"}};

  const std::string text = render_table(t);
  const TabularSeries back = parse_table(text);
  REQUIRE(back.columns == t.columns);
  REQUIRE(back.rows.size() == t.rows.size());
  for (std::size_t i = 0; i < t.rows.size(); ++i)
    for (std::size_t j = 0; j < t.columns.size(); ++j)
      CHECK(back.rows[i][j] == t.rows[i][j]);  // exact, not approximate
  REQUIRE(back.metadata == t.metadata);

  // byte identity of the full document, header included
  CHECK(render_table(back) == text);

  const fs::path file = temp_dir() / "roundtrip.csv";
  write_table_file(t, file.string());
  CHECK(slurp(file) == text);
  const TabularSeries again = read_table_file(file.string());
  CHECK(render_table(again) == text);
}

TEST_CASE("tabular parsing rejects malformed documents") {
  CHECK_THROWS_AS(parse_table(""), ConfigError);
  CHECK_THROWS_AS(parse_table("# command: x\n"), ConfigError);  // no columns
  // ragged row
  CHECK_THROWS_AS(parse_table("a_MHz,b_MHz\n1,2\n3\n"), ConfigError);
  // non-numeric cell
  CHECK_THROWS_AS(parse_table("a_MHz,b_MHz\n1,two\n"), ConfigError);
  // the writer enforces rectangularity too
  TabularSeries ragged;
  ragged.columns = {"a_MHz", "b_MHz"};
  ragged.rows = {{1.0}};
  CHECK_THROWS_AS(render_table(ragged), ConfigError);

  CHECK_THROWS_AS(read_table_file((temp_dir() / "absent.csv").string()),
                  ConfigError);
}

TEST_CASE("config documents parse with defaults, overrides, and key paths") {
  const RunConfig def = parse_config("{}");
  CHECK(def.constants.D_MHz == 2870.0);
  CHECK(def.constants.gamma_e_MHz_per_mT == 28.02495);
  CHECK(def.static_field.B_mT == 10.7);
  CHECK(def.static_field.theta_deg == 90.0);
  CHECK(def.ac_field.B_AC_G == 2.85);
  CHECK(def.ac_field.zeta_deg == 21.6);
  CHECK(def.ac_field.eta_deg == 38.8);
  CHECK(def.ac_field.rf_ratio == 0.23);
  CHECK(def.grids.eta_scan_deg.size() == 13);  // 0..180 in 15 degree steps
  CHECK(def.grids.eta_scan_deg.front() == 0.0);
  CHECK(def.grids.eta_scan_deg.back() == 180.0);
  CHECK(def.seed == 0);
  CHECK_FALSE(def.fit.enabled);

  const RunConfig over = parse_config(
      R"({"static_field": {"B_mT": 5.0},
          "seed": 9,
          "fit": {"enabled": true, "n_peaks": 3},
          "grids": {"eta_scan_deg": [0, 45, 90, 135, 180]}})");
  CHECK(over.static_field.B_mT == 5.0);
  CHECK(over.static_field.theta_deg == 90.0);  // untouched default
  CHECK(over.seed == 9);
  CHECK(over.fit.enabled);
  CHECK(over.fit.n_peaks == 3);
  CHECK(over.grids.eta_scan_deg == std::vector<double>{0, 45, 90, 135, 180});

  SUBCASE("unknown keys are reported with their full path") {
    try {
      parse_config(R"({"static_filed": {"B_mT": 1.0}})");
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("static_filed") != std::string::npos);
    }
    try {
      parse_config(R"({"grids": {"freq_strt_MHz": 1.0}})");
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("grids.freq_strt_MHz") !=
            std::string::npos);
    }
  }
  SUBCASE("type violations are reported with their full path") {
    try {
      parse_config(R"({"static_field": {"B_mT": "ten"}})");
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("static_field.B_mT") !=
            std::string::npos);
    }
    CHECK_THROWS_AS(parse_config(R"({"seed": -3})"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"fit": {"enabled": 1}})"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"fit": {"n_peaks": 2.5}})"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"grids": {"eta_scan_deg": ["a"]}})"),
                    ConfigError);
    CHECK_THROWS_AS(parse_config("not json at all"), ConfigError);
  }
  SUBCASE("the rendered echo is canonical") {
    const std::string echo = render_config(def);
    CHECK(echo.find('\n') == std::string::npos);  // single line, header-safe
    const RunConfig re = parse_config(echo);
    CHECK(render_config(re) == echo);
    CHECK(re.static_field.B_mT == def.static_field.B_mT);
  }
}

TEST_CASE("levels command emits the anti-crossing scan") {
  const RunConfig cfg = parse_config("{}");
  const TabularSeries t = cmd_levels(cfg);
  REQUIRE(t.columns == std::vector<std::string>{"theta_deg", "level_low_MHz",
                                                "level_mid_MHz",
                                                "level_high_MHz", "gap_MHz"});
  REQUIRE(t.rows.size() == 181);  // 0..180 degrees in 1 degree steps
  REQUIRE(find_meta(t, "command") != nullptr);
  CHECK(*find_meta(t, "command") == "levels");
  REQUIRE(find_meta(t, "config") != nullptr);
  CHECK(find_meta(t, "config")->find("10.7") != std::string::npos);

  // the gap between the upper two levels is smallest exactly at 90 degrees
  const int imin = argmin_column(t, 4);
  CHECK(t.rows[imin][0] == 90.0);
  const auto ref = oracle::anticrossing_ref(kConsts.D_MHz,
                                            kConsts.gamma_e_MHz_per_mT, 10.7);
  CHECK(t.rows[imin][4] ==
        Approx(ref.e_plus - ref.e_minus).epsilon(1e-9));
  CHECK(t.rows[imin][1] == Approx(ref.e_zero).epsilon(1e-9));
  CHECK(t.rows[imin][2] == Approx(ref.e_minus).epsilon(1e-9));
  CHECK(t.rows[imin][3] == Approx(ref.e_plus).epsilon(1e-9));

  SUBCASE("zero field gives two constant degenerate curves") {
    const RunConfig zero = parse_config(R"({"static_field": {"B_mT": 0.0}})");
    const TabularSeries tz = cmd_levels(zero);
    for (const auto& row : tz.rows) {
      CHECK(row[1] == Approx(0.0).scale(1.0).epsilon(1e-12));
      CHECK(row[2] == Approx(2870.0).epsilon(1e-12));
      CHECK(row[3] == Approx(2870.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("spectrum command synthesizes, adds seeded noise, and fits") {
  const RunConfig cfg = parse_config("{}");
  const TabularSeries t = cmd_spectrum(cfg);
  REQUIRE(t.columns ==
          std::vector<std::string>{"freq_MHz", "signal_norm"});
  REQUIRE(t.rows.size() == 301);  // 2850..3000 in 0.5 MHz steps

  // the dominant dip sits on the zero -> plus-like transition near 2932 MHz
  const int imin = argmin_column(t, 1);
  CHECK(t.rows[imin][0] == 2932.0);
  // far from every dip the signal is the unit baseline
  CHECK(t.rows[0][1] == Approx(1.0).epsilon(1e-9));
  for (const auto& row : t.rows) {
    CHECK(row[1] > 0.0);
    CHECK(row[1] <= 1.0);
  }

  SUBCASE("zero drive amplitude gives a flat series") {
    const RunConfig zero = parse_config(R"({"ac_field": {"B_AC_G": 0.0}})");
    const TabularSeries tz = cmd_spectrum(zero);
    for (const auto& row : tz.rows) CHECK(row[1] == 1.0);
  }
  SUBCASE("seeded noise is deterministic and seed-sensitive") {
    const RunConfig noisy =
        parse_config(R"({"noise": {"sigma_norm": 0.01}, "seed": 3})");
    const std::string a = render_table(cmd_spectrum(noisy));
    const std::string b = render_table(cmd_spectrum(noisy));
    CHECK(a == b);
    const RunConfig other =
        parse_config(R"({"noise": {"sigma_norm": 0.01}, "seed": 4})");
    CHECK(render_table(cmd_spectrum(other)) != a);
  }
  SUBCASE("the optional fit lands on the two in-window transitions") {
    const RunConfig fitted = parse_config(R"({"fit": {"enabled": true}})");
    const TabularSeries tf = cmd_spectrum(fitted);
    REQUIRE(find_meta(tf, "fit_converged") != nullptr);
    CHECK(*find_meta(tf, "fit_converged") == "true");
    const auto ref = oracle::anticrossing_ref(
        kConsts.D_MHz, kConsts.gamma_e_MHz_per_mT, 10.7);
    CHECK(meta_num(tf, "fit_center1_MHz") ==
          Approx(ref.e_minus - ref.e_zero).epsilon(1e-6));
    CHECK(meta_num(tf, "fit_center2_MHz") ==
          Approx(ref.e_plus - ref.e_zero).epsilon(1e-6));
    CHECK(meta_num(tf, "fit_baseline_norm") == Approx(1.0).epsilon(1e-6));
    CHECK(meta_num(tf, "fit_fwhm1_MHz") == Approx(8.0).epsilon(1e-4));
  }
  SUBCASE("a fit with no transition in the window is carried in metadata") {
    const RunConfig off = parse_config(
        R"({"fit": {"enabled": true},
            "grids": {"freq_start_MHz": 3200.0, "freq_stop_MHz": 3300.0}})");
    const TabularSeries tf = cmd_spectrum(off);
    REQUIRE(find_meta(tf, "fit_converged") != nullptr);
    CHECK(*find_meta(tf, "fit_converged") == "false");
    CHECK(find_meta(tf, "fit_error") != nullptr);
  }
}

TEST_CASE("rabi command wires the drive geometry into the trace") {
  const RunConfig cfg = parse_config("{}");
  const TabularSeries t = cmd_rabi(cfg);
  REQUIRE(t.columns == std::vector<std::string>{"time_us", "signal_norm"});
  REQUIRE(t.rows.size() == 401);  // 0..2 us in 5 ns steps
  CHECK(t.rows[0][1] == 1.0);     // amplitude 0.5 + baseline 0.5 at t = 0

  // reference Rabi frequency straight from the library
  const auto trs = transitions(eigensystem(kConsts, {10.7, kPiHalf}));
  const ACFieldVector ac{0.285, deg(21.6), deg(38.8), 0.0, 0.0};
  const double r_ref = rabi_frequency(trs[0], ac, kConsts);
  CHECK(meta_num(t, "model_R_MHz") == Approx(r_ref).epsilon(1e-12));
  for (std::size_t i = 0; i < t.rows.size(); i += 50) {
    const double time = t.rows[i][0];
    const double expected =
        0.5 * std::cos(2.0 * 3.141592653589793238462643383279502884 * r_ref *
                       time) *
            std::exp(-time / 100.0) +
        0.5;
    CHECK(t.rows[i][1] == Approx(expected).epsilon(1e-12));
  }

  SUBCASE("the mixed-branch transition is driven by the scaled amplitude") {
    const RunConfig low =
        parse_config(R"({"rabi": {"transition": "minus_beta"}})");
    const TabularSeries tl = cmd_rabi(low);
    const ACFieldVector rf{0.285 * 0.23, deg(21.6), deg(38.8), 0.0, 0.0};
    CHECK(meta_num(tl, "model_R_MHz") ==
          Approx(rabi_frequency(trs[2], rf, kConsts)).epsilon(1e-12));
  }
  SUBCASE("the optional fit recovers the model parameters") {
    const RunConfig fitted = parse_config(R"({"fit": {"enabled": true}})");
    const TabularSeries tf = cmd_rabi(fitted);
    REQUIRE(find_meta(tf, "fit_converged") != nullptr);
    CHECK(*find_meta(tf, "fit_converged") == "true");
    CHECK(meta_num(tf, "fit_nu_MHz") == Approx(r_ref).epsilon(1e-8));
    CHECK(meta_num(tf, "fit_T_R_us") == Approx(100.0).epsilon(1e-4));
    CHECK(meta_num(tf, "fit_amplitude_norm") == Approx(0.5).epsilon(1e-6));
    CHECK(meta_num(tf, "fit_baseline_norm") == Approx(0.5).epsilon(1e-6));
  }
  SUBCASE("seeded noise is deterministic") {
    const RunConfig noisy =
        parse_config(R"({"noise": {"sigma_norm": 0.01}, "seed": 11})");
    CHECK(render_table(cmd_rabi(noisy)) == render_table(cmd_rabi(noisy)));
    CHECK(render_table(cmd_rabi(noisy)) != render_table(cmd_rabi(cfg)));
  }
  SUBCASE("an unknown transition name is a config error naming the key") {
    try {
      cmd_rabi(parse_config(R"({"rabi": {"transition": "sideways"}})"));
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("rabi.transition") !=
            std::string::npos);
    }
  }
}

TEST_CASE("ratio command reproduces the azimuth curve and its fit") {
  const RunConfig cfg = parse_config("{}");
  const TabularSeries t = cmd_ratio(cfg);
  REQUIRE(t.columns == std::vector<std::string>{"eta_deg", "ratio_norm"});
  REQUIRE(t.rows.size() == 13);

  const auto sys = eigensystem(kConsts, {10.7, kPiHalf});
  std::vector<double> grid_rad;
  for (int d = 0; d <= 180; d += 15) grid_rad.push_back(deg(d));
  const ACFieldVector ac{0.285, deg(21.6), 0.0, 0.0, 0.0};
  const auto pts = eta_ratio_curve(sys, ac, grid_rad);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    CHECK(t.rows[i][0] == Approx(15.0 * static_cast<double>(i)));
    CHECK(t.rows[i][1] == pts[i].ratio);  // same synthesis, bit for bit
  }

  SUBCASE("the noiseless fit centers on 90 degrees") {
    const RunConfig fitted = parse_config(R"({"fit": {"enabled": true}})");
    const TabularSeries tf = cmd_ratio(fitted);
    REQUIRE(find_meta(tf, "fit_converged") != nullptr);
    CHECK(*find_meta(tf, "fit_converged") == "true");
    CHECK(meta_num(tf, "fit_center_deg") == Approx(90.0).epsilon(0.006));
  }
  SUBCASE("seeded relative noise is deterministic") {
    const RunConfig noisy =
        parse_config(R"({"noise": {"sigma_norm": 0.05}, "seed": 1})");
    CHECK(render_table(cmd_ratio(noisy)) == render_table(cmd_ratio(noisy)));
  }
}

TEST_CASE("measurement documents parse strictly and drive the inversion") {
  const InversionRequest req =
      parse_measurement_document(reference_measurement_doc(2000));
  CHECK(req.meas.R_0plus_MHz.value == 3.15);
  CHECK(req.meas.R_0plus_MHz.sigma == 0.01);
  CHECK(req.meas.field_context.B_mT == 10.7);
  CHECK(req.meas.field_context.theta_rad == Approx(kPiHalf));
  CHECK(req.options.mc_samples == 2000);
  CHECK(req.options.seed == 1);
  CHECK(req.options.model == InversionModel::single_axis);

  const ReconstructedField rec =
      invert_field(req.meas, req.consts, req.options);
  CHECK(std::abs(rec.B_MW_mT * kGaussPerMilliTesla - 2.85) <= 0.05);
  CHECK(std::abs(rec.B_RF_mT * kGaussPerMilliTesla - 0.66) <= 0.02);
  CHECK(std::abs(rec.zeta_rad - deg(21.6)) <= deg(1.0));
  CHECK(std::abs(rec.eta_rad - deg(38.8)) <= deg(1.0));

  SUBCASE("report rendering carries values in both human and machine form") {
    const std::string text = render_reconstruction(rec, req, false);
    CHECK(text.find("B_MW_G") != std::string::npos);
    CHECK(text.find("zeta_deg") != std::string::npos);
    const std::string machine = render_reconstruction(rec, req, true);
    const json j = json::parse(machine);
    CHECK(j.at("B_MW_G").get<double>() ==
          Approx(rec.B_MW_mT * kGaussPerMilliTesla).epsilon(1e-12));
    CHECK(j.at("sigma_eta_deg").get<double>() > 0.0);
    CHECK_FALSE(j.at("inconsistent").get<bool>());
  }
  SUBCASE("a vanishing in-phase response pins the azimuth to zero") {
    std::string doc = reference_measurement_doc(100);
    const auto pos = doc.find("\"R_0minus_MHz\": {\"value\": 2.57");
    REQUIRE(pos != std::string::npos);
    doc.replace(pos, std::string("\"R_0minus_MHz\": {\"value\": 2.57").size(),
                "\"R_0minus_MHz\": {\"value\": 0.0");
    InversionRequest zr = parse_measurement_document(doc);
    zr.options.uncertainty = UncertaintyMethod::none;
    const ReconstructedField z = invert_field(zr.meas, zr.consts, zr.options);
    CHECK(z.eta_rad == 0.0);
  }
  SUBCASE("schema violations are named per field") {
    try {
      parse_measurement_document(
          R"({"R_0plus_MHz": 3.15, "R_minusplus_MHz": 2.42,
              "amplitude_ratio": 0.23,
              "field_context": {"B_mT": 10.7, "theta_deg": 90}})");
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("R_0minus_MHz") != std::string::npos);
    }
    try {
      parse_measurement_document(
          R"({"R_0plus_MHz": {"value": "big"}, "R_0minus_MHz": 2.57,
              "R_minusplus_MHz": 2.42, "amplitude_ratio": 0.23,
              "field_context": {"B_mT": 10.7, "theta_deg": 90}})");
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("R_0plus_MHz.value") !=
            std::string::npos);
    }
    try {
      parse_measurement_document(reference_measurement_doc(100).insert(1,
          "\"mystery_key\": 1,"));
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("mystery_key") != std::string::npos);
    }
    try {
      std::string doc = reference_measurement_doc(100);
      const auto pos = doc.find("\"seed\": 1");
      doc.replace(pos, 9, "\"model\": \"psychic\"");
      parse_measurement_document(doc);
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("options.model") != std::string::npos);
    }
  }
  SUBCASE("bare numbers are accepted as exact measurements") {
    const InversionRequest bare = parse_measurement_document(
        R"({"R_0plus_MHz": 3.15, "R_0minus_MHz": 2.57,
            "R_minusplus_MHz": 2.42, "amplitude_ratio": 0.23,
            "field_context": {"B_mT": 10.7, "theta_deg": 90}})");
    CHECK(bare.meas.R_0plus_MHz.value == 3.15);
    CHECK(bare.meas.R_0plus_MHz.sigma == 0.0);
  }
}

TEST_CASE("plan reports render ordered steps plus a machine block") {
  const ProtocolPlan plan = single_frequency_protocol(2900.0, kConsts);
  const std::string text = render_plan(plan, 2900.0, false);
  CHECK(text.find("10.5248") != std::string::npos);
  CHECK(text.find("145.9628") != std::string::npos);
  CHECK(text.find("azimuth") != std::string::npos);
  CHECK(text.find("contrast") != std::string::npos);
  CHECK(text.find("machine-readable:") != std::string::npos);

  const std::string machine = render_plan(plan, 2900.0, true);
  const json j = json::parse(machine);
  REQUIRE(j.at("steps").size() == 3);
  CHECK(j["steps"][0]["B_mT"].get<double>() ==
        Approx(10.52482249).epsilon(1e-6));
  CHECK(j["steps"][2]["B_mT"].get<double>() ==
        Approx(145.96275741).epsilon(1e-6));
  CHECK(j["steps"][0]["theta_deg"].get<double>() == 90.0);
  CHECK(j.at("band_MHz")[0].get<double>() == Approx(2870.0));
  CHECK(j.at("band_MHz")[1].get<double>() == Approx(3645.578468).epsilon(1e-6));
  CHECK(j.at("warnings").size() >= 1);
}

TEST_CASE("synthesized traces fitted end to end reconstruct the drive") {
  // forward: three Rabi traces at a known drive vector, fit each trace
  const char* base = R"({
    "ac_field": {"B_AC_G": 2.0, "zeta_deg": 35.0, "eta_deg": 55.0,
                  "rf_ratio": 0.3},
    "rabi": {"transition": "%s", "T_R_us": 200.0},
    "grids": {"time_stop_us": 3.0, "time_step_us": 0.002},
    "fit": {"enabled": true}
  })";
  const char* names[3] = {"zero_plus", "zero_minus", "minus_beta"};
  double nu[3] = {};
  for (int i = 0; i < 3; ++i) {
    char doc[512];
    std::snprintf(doc, sizeof(doc), base, names[i]);
    const TabularSeries t = cmd_rabi(parse_config(doc));
    REQUIRE(*find_meta(t, "fit_converged") == "true");
    nu[i] = meta_num(t, "fit_nu_MHz");
    CHECK(nu[i] == Approx(meta_num(t, "model_R_MHz")).epsilon(1e-8));
  }

  // backward: the fitted frequencies invert to the configured drive vector
  std::ostringstream doc;
  doc.precision(17);
  doc << R"({"R_0plus_MHz": )" << nu[0] << R"(, "R_0minus_MHz": )" << nu[1]
      << R"(, "R_minusplus_MHz": )" << nu[2]
      << R"(, "amplitude_ratio": 0.3,
           "field_context": {"B_mT": 10.7, "theta_deg": 90.0},
           "options": {"model": "coherent_sum", "uncertainty": "none"}})";
  const InversionRequest req = parse_measurement_document(doc.str());
  const ReconstructedField rec =
      invert_field(req.meas, req.consts, req.options);
  CHECK(rec.B_MW_mT * kGaussPerMilliTesla == Approx(2.0).epsilon(1e-5));
  CHECK(rec.zeta_rad == Approx(deg(35.0)).epsilon(1e-5));
  CHECK(rec.eta_rad == Approx(deg(55.0)).epsilon(1e-5));
  CHECK(rec.B_RF_mT * kGaussPerMilliTesla == Approx(0.6).epsilon(1e-5));
}

TEST_CASE("every emitted column carries a unit suffix") {
  const std::vector<std::string> allowed = {"_MHz", "_mT", "_G",  "_deg",
                                            "_rad", "_us", "_s", "_norm"};
  const auto suffixed = [&](const std::string& name) {
    return std::any_of(allowed.begin(), allowed.end(),
                       [&](const std::string& suf) {
                         return name.size() > suf.size() &&
                                name.compare(name.size() - suf.size(),
                                             suf.size(), suf) == 0;
                       });
  };
  const RunConfig fitted = parse_config(R"({"fit": {"enabled": true}})");
  const std::vector<TabularSeries> outputs = {
      cmd_levels(fitted), cmd_spectrum(fitted), cmd_rabi(fitted),
      cmd_ratio(fitted)};
  const std::vector<std::string> exempt = {"command", "version",
                                           "seed",    "config",
                                           "transition", "fit_converged",
                                           "fit_error"};
  for (const TabularSeries& t : outputs) {
    for (const std::string& col : t.columns) {
      CAPTURE(col);
      CHECK(suffixed(col));
    }
    for (const auto& [key, value] : t.metadata) {
      if (std::find(exempt.begin(), exempt.end(), key) != exempt.end())
        continue;
      CAPTURE(key);
      CHECK(suffixed(key));
    }
  }
}

TEST_CASE("plots render deterministic standalone vector graphics") {
  const RunConfig cfg = parse_config("{}");
  const TabularSeries t = cmd_levels(cfg);
  const std::string svg = render_svg_plot(t, "level diagram");
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("polyline") != std::string::npos);
  CHECK(svg.find("level diagram") != std::string::npos);
  CHECK(render_svg_plot(t, "level diagram") == svg);

  TabularSeries narrow;
  narrow.columns = {"x_MHz"};
  narrow.rows = {{1.0}, {2.0}};
  CHECK_THROWS_AS(render_svg_plot(narrow, "too narrow"), ConfigError);
}

TEST_CASE("the binary is deterministic and reports errors by exit code") {
  const fs::path dir = temp_dir();
  const fs::path out = dir / "stdout.txt";
  const fs::path err = dir / "stderr.txt";

  SUBCASE("seeded runs are byte-identical and seed overrides apply") {
    const fs::path cfg = dir / "noisy.json";
    spit(cfg, R"({"noise": {"sigma_norm": 0.01}, "seed": 5})");
    const fs::path s1 = dir / "s1.csv";
    const fs::path s2 = dir / "s2.csv";
    REQUIRE(run_cli("spectrum --config " + cfg.string() + " --out " +
                        s1.string(), out, err) == 0);
    REQUIRE(run_cli("spectrum --config " + cfg.string() + " --out " +
                        s2.string(), out, err) == 0);
    CHECK(slurp(s1) == slurp(s2));

    const TabularSeries t = read_table_file(s1.string());
    CHECK(*find_meta(t, "command") == "spectrum");
    CHECK(*find_meta(t, "seed") == "5");

    const fs::path s3 = dir / "s3.csv";
    REQUIRE(run_cli("spectrum --config " + cfg.string() + " --seed 6 --out " +
                        s3.string(), out, err) == 0);
    CHECK(slurp(s3) != slurp(s1));
    CHECK(*find_meta(read_table_file(s3.string()), "seed") == "6");
  }
  SUBCASE("commands run on defaults and write plots on request") {
    const fs::path l = dir / "levels.csv";
    REQUIRE(run_cli("levels --out " + l.string() + " --plot", out, err) == 0);
    const TabularSeries t = read_table_file(l.string());
    CHECK(t.rows.size() == 181);
    const fs::path svg = dir / "levels.svg";
    REQUIRE(fs::exists(svg));
    CHECK(slurp(svg).rfind("<svg", 0) == 0);
  }
  SUBCASE("config problems exit with code 2") {
    const fs::path bad = dir / "bad.json";
    spit(bad, R"({"static_filed": {"B_mT": 1.0}})");
    CHECK(run_cli("levels --config " + bad.string(), out, err) == 2);
    const fs::path garbled = dir / "garbled.json";
    spit(garbled, "{{{{");
    CHECK(run_cli("levels --config " + garbled.string(), out, err) == 2);
    CHECK(run_cli("levels --config " + (dir / "absent.json").string(), out,
                  err) == 2);
    CHECK(run_cli("frobnicate", out, err) == 2);
    CHECK(run_cli("plan 0.5", out, err) == 2);
  }
  SUBCASE("computation problems exit with code 3") {
    CHECK(run_cli("plan 5000", out, err) == 3);
    CHECK(slurp(err).find("band") != std::string::npos);
    const fs::path bad_field = dir / "bad_field.json";
    spit(bad_field, R"({"static_field": {"B_mT": -4.0}})");
    CHECK(run_cli("levels --config " + bad_field.string(), out, err) == 3);
  }
  SUBCASE("fit non-convergence exits with code 4 but keeps the table") {
    const fs::path flat = dir / "flat.json";
    spit(flat, R"({"rabi": {"amplitude_norm": 0.0},
                   "fit": {"enabled": true}})");
    const fs::path f = dir / "flat.csv";
    CHECK(run_cli("rabi --config " + flat.string() + " --out " + f.string(),
                  out, err) == 4);
    const TabularSeries t = read_table_file(f.string());
    CHECK(*find_meta(t, "fit_converged") == "false");
    CHECK(find_meta(t, "fit_error") != nullptr);
  }
  SUBCASE("plan, invert, and sensitivity emit machine-readable reports") {
    const fs::path p = dir / "plan.json";
    REQUIRE(run_cli("plan 2900 --json --out " + p.string(), out, err) == 0);
    const json jp = json::parse(slurp(p));
    CHECK(jp.at("steps").size() == 3);

    const fs::path meas = dir / "meas.json";
    spit(meas, reference_measurement_doc(500));
    const fs::path r = dir / "rec.json";
    REQUIRE(run_cli("invert --in " + meas.string() + " --json --out " +
                        r.string(), out, err) == 0);
    const json jr = json::parse(slurp(r));
    CHECK(std::abs(jr.at("B_MW_G").get<double>() - 2.85) <= 0.05);
    CHECK(std::abs(jr.at("eta_deg").get<double>() - 38.8) <= 1.0);
    CHECK(run_cli("invert --in " + (dir / "nothere.json").string(), out,
                  err) == 2);

    REQUIRE(run_cli("invert --in " + meas.string(), out, err) == 0);
    CHECK(slurp(out).find("B_MW_G") != std::string::npos);

    REQUIRE(run_cli("sensitivity --delta-B-uT 1 --n 1 --T-s 1 --json --out " +
                        (dir / "sens.json").string(), out, err) == 0);
    const json js = json::parse(slurp(dir / "sens.json"));
    CHECK(js.at("sensitivity_uT_per_sqrtHz").get<double>() == 1.0);
  }
  SUBCASE("the fit subcommand refits a stored table") {
    const fs::path cfg = dir / "clean.json";
    spit(cfg, "{}");
    const fs::path s = dir / "clean_spectrum.csv";
    REQUIRE(run_cli("spectrum --config " + cfg.string() + " --out " +
                        s.string(), out, err) == 0);
    const fs::path sf = dir / "clean_spectrum_fit.csv";
    REQUIRE(run_cli("fit --in " + s.string() + " --out " + sf.string(), out,
                    err) == 0);
    const TabularSeries t = read_table_file(sf.string());
    CHECK(*find_meta(t, "fit_converged") == "true");
    const auto ref = oracle::anticrossing_ref(
        kConsts.D_MHz, kConsts.gamma_e_MHz_per_mT, 10.7);
    CHECK(meta_num(t, "fit_center2_MHz") ==
          Approx(ref.e_plus - ref.e_zero).epsilon(1e-6));
    // a table with no fit defined for it
    const fs::path l = dir / "levels_for_fit.csv";
    REQUIRE(run_cli("levels --out " + l.string(), out, err) == 0);
    CHECK(run_cli("fit --in " + l.string(), out, err) == 2);
  }
}
