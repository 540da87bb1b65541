#pragma once

// Front-end plumbing: run configuration, delimiter-separated tables with a
// commented metadata header, SVG plot emission, and the command entry points
// shared by the executable and the tests.
//
// Unit conventions at this boundary mirror common lab reporting: angles in
// degrees, AC amplitudes in Gauss, static fields in mT; keys carry their unit
// as a suffix. Everything is converted to library units (radians, mT) inside
// the command implementations.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "nvac/constants.hpp"
#include "nvac/errors.hpp"
#include "nvac/inversion.hpp"
#include "nvac/signal_synth.hpp"

namespace nvac {

// A rectangular numeric table with an ordered `# key: value` metadata header.
// The header embeds the generating command, seed, artifact version, and the
// resolved configuration, so any written file is self-describing; the whole
// document round-trips byte-identically through render -> parse -> render.
struct TabularSeries {
  std::vector<std::string> columns;  // every name carries a unit suffix
  std::vector<std::vector<double>> rows;
  std::vector<std::pair<std::string, std::string>> metadata;
};

// Serialization. render/parse work on full documents (header + data);
// malformed documents raise ConfigError. Numbers are written in the shortest
// form that parses back to the identical double.
std::string render_table(const TabularSeries& series);
TabularSeries parse_table(const std::string& text);
void write_table_file(const TabularSeries& series, const std::string& path);
TabularSeries read_table_file(const std::string& path);

// Resolved run configuration, aligned one-to-one with the JSON config
// document. Field names equal document keys (including unit suffixes).
struct RunConfig {
  struct Constants {
    double D_MHz = 2870.0;
    double gamma_e_MHz_per_mT = 28.02495;
  } constants;
  struct StaticFieldCfg {
    double B_mT = 10.7;
    double theta_deg = 90.0;
  } static_field;
  struct ACFieldCfg {
    double B_AC_G = 2.85;
    double zeta_deg = 21.6;
    double eta_deg = 38.8;
    double freq_MHz = 2932.0;  // drive frequency bookkeeping
    double rf_ratio = 0.23;    // low-frequency amplitude / B_AC
  } ac_field;
  struct Grids {
    double theta_start_deg = 0.0;
    double theta_stop_deg = 180.0;
    double theta_step_deg = 1.0;
    double freq_start_MHz = 2850.0;
    double freq_stop_MHz = 3000.0;
    double freq_step_MHz = 0.5;
    double time_start_us = 0.0;
    double time_stop_us = 2.0;
    double time_step_us = 0.005;
    std::vector<double> eta_scan_deg{0.0,   15.0,  30.0,  45.0,  60.0,
                                     75.0,  90.0,  105.0, 120.0, 135.0,
                                     150.0, 165.0, 180.0};
  } grids;
  struct Lineshape {
    double fwhm_MHz = 8.0;
    double contrast_scale = 0.15;
    double response_exponent = 2.0;
  } lineshape;
  struct RabiCfg {
    std::string transition = "zero_minus";  // zero_minus|zero_plus|minus_beta
    double T_R_us = 100.0;
    double amplitude_norm = 0.5;
    double baseline_norm = 0.5;
  } rabi;
  struct NoiseCfg {
    double sigma_norm = 0.0;  // additive on signals, relative on ratios
  } noise;
  struct FitCfg {
    bool enabled = false;
    int n_peaks = 2;
  } fit;
  std::uint64_t seed = 0;
  struct OutputCfg {
    std::string table_path;
    std::string plot_path;
  } output;
};

// Parses a JSON config document against the defaults above. Unknown keys and
// type mismatches raise ConfigError naming the full key path.
RunConfig parse_config(const std::string& json_text);
RunConfig load_config_file(const std::string& path);
// Canonical single-line echo of the resolved config; parse(render(c)) is
// stable, and the echo is embedded in every output's metadata.
std::string render_config(const RunConfig& config);

// Standalone SVG (line + scatter primitives only): column 0 is the abscissa,
// the remaining columns become one polyline each. At least two columns and
// two rows are required (ConfigError otherwise). Deterministic output.
std::string render_svg_plot(const TabularSeries& series,
                            const std::string& title);

// Command cores. Each returns a finished table (metadata header included);
// when config.fit.enabled, fit parameters are appended to the metadata, with
// failures recorded under fit_converged/fit_error rather than thrown.
TabularSeries cmd_levels(const RunConfig& config);    // theta scan of levels
TabularSeries cmd_spectrum(const RunConfig& config);  // ODMR spectrum
TabularSeries cmd_rabi(const RunConfig& config);      // Rabi trace
TabularSeries cmd_ratio(const RunConfig& config);     // azimuth ratio curve

// Refits a stored table produced by spectrum/rabi/ratio, using its embedded
// config echo to rebuild the model; `kind` overrides the table's own command
// metadata when non-empty. Tables without a defined fit raise ConfigError.
TabularSeries fit_table(const TabularSeries& table, const std::string& kind);

// A parsed measurement document: the measured set plus constants and options.
struct InversionRequest {
  RabiMeasurementSet meas;
  PhysicalConstants consts;
  InversionOptions options;
};

// Strict JSON schema: R_0plus_MHz, R_0minus_MHz, R_minusplus_MHz,
// amplitude_ratio (each {value, sigma} or a bare number), field_context
// {B_mT, theta_deg}, optional constants {D_MHz, gamma_e_MHz_per_mT} and
// options {model, uncertainty, mc_samples, seed}. Violations raise
// ConfigError naming the field path.
InversionRequest parse_measurement_document(const std::string& json_text);

// Reconstruction report in Gauss/degrees; human-readable or JSON.
std::string render_reconstruction(const ReconstructedField& rec,
                                  const InversionRequest& req, bool json_mode);

// Protocol plan as ordered human-readable steps plus a machine block, or as
// JSON alone.
std::string render_plan(const ProtocolPlan& plan, double target_MHz,
                        bool json_mode);

}  // namespace nvac
