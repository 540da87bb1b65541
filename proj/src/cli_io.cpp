#include "nvac/cli_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "nvac/fitting.hpp"
#include "nvac/spin_core.hpp"

namespace nvac {

namespace {

using nlohmann::json;

constexpr double kPi = std::numbers::pi;

double deg2rad(double d) { return d * kPi / 180.0; }
double rad2deg(double r) { return r / kPi * 180.0; }

// Shortest decimal form that parses back to the identical double.
std::string fmt_double(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view token, const char* context) {
  double value = 0.0;
  const char* begin = token.data();
  const char* end = token.data() + token.size();
  const auto res = std::from_chars(begin, end, value);
  if (res.ec != std::errc{} || res.ptr != end) {
    throw ConfigError(std::string(context) + ": '" + std::string(token) +
                      "' is not a number");
  }
  return value;
}

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

const std::string* find_meta(const TabularSeries& t, const std::string& key) {
  for (const auto& [k, v] : t.metadata)
    if (k == key) return &v;
  return nullptr;
}

std::string read_text_file(const std::string& path, const char* what) {
  std::ifstream f(path, std::ios::binary);
  if (!f.good())
    throw ConfigError(std::string("cannot open ") + what + ": " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------
// Config document
// ---------------------------------------------------------------------------

json config_to_json(const RunConfig& c) {
  return json{
      {"constants",
       {{"D_MHz", c.constants.D_MHz},
        {"gamma_e_MHz_per_mT", c.constants.gamma_e_MHz_per_mT}}},
      {"static_field",
       {{"B_mT", c.static_field.B_mT},
        {"theta_deg", c.static_field.theta_deg}}},
      {"ac_field",
       {{"B_AC_G", c.ac_field.B_AC_G},
        {"zeta_deg", c.ac_field.zeta_deg},
        {"eta_deg", c.ac_field.eta_deg},
        {"freq_MHz", c.ac_field.freq_MHz},
        {"rf_ratio", c.ac_field.rf_ratio}}},
      {"grids",
       {{"theta_start_deg", c.grids.theta_start_deg},
        {"theta_stop_deg", c.grids.theta_stop_deg},
        {"theta_step_deg", c.grids.theta_step_deg},
        {"freq_start_MHz", c.grids.freq_start_MHz},
        {"freq_stop_MHz", c.grids.freq_stop_MHz},
        {"freq_step_MHz", c.grids.freq_step_MHz},
        {"time_start_us", c.grids.time_start_us},
        {"time_stop_us", c.grids.time_stop_us},
        {"time_step_us", c.grids.time_step_us},
        {"eta_scan_deg", c.grids.eta_scan_deg}}},
      {"lineshape",
       {{"fwhm_MHz", c.lineshape.fwhm_MHz},
        {"contrast_scale", c.lineshape.contrast_scale},
        {"response_exponent", c.lineshape.response_exponent}}},
      {"rabi",
       {{"transition", c.rabi.transition},
        {"T_R_us", c.rabi.T_R_us},
        {"amplitude_norm", c.rabi.amplitude_norm},
        {"baseline_norm", c.rabi.baseline_norm}}},
      {"noise", {{"sigma_norm", c.noise.sigma_norm}}},
      {"fit", {{"enabled", c.fit.enabled}, {"n_peaks", c.fit.n_peaks}}},
      {"seed", c.seed},
      {"output",
       {{"table_path", c.output.table_path},
        {"plot_path", c.output.plot_path}}}};
}

// Overlays `in` onto the schema `base`, complaining about unknown keys and
// type mismatches with the full dotted path.
void merge_config(json& base, const json& in, const std::string& path) {
  if (!in.is_object()) {
    throw ConfigError("config group " + (path.empty() ? "(root)" : path) +
                      " must be an object");
  }
  for (auto it = in.begin(); it != in.end(); ++it) {
    const std::string p = path.empty() ? it.key() : path + "." + it.key();
    if (!base.contains(it.key()))
      throw ConfigError("unrecognized config key: " + p);
    json& slot = base[it.key()];
    const json& val = it.value();
    if (slot.is_object()) {
      merge_config(slot, val, p);
    } else if (slot.is_array()) {
      if (!val.is_array())
        throw ConfigError("config key " + p + " must be an array of numbers");
      for (const auto& e : val)
        if (!e.is_number())
          throw ConfigError("config key " + p +
                            " must contain only numbers");
      slot = val;
    } else if (slot.is_boolean()) {
      if (!val.is_boolean())
        throw ConfigError("config key " + p + " must be true or false");
      slot = val;
    } else if (slot.is_string()) {
      if (!val.is_string())
        throw ConfigError("config key " + p + " must be a string");
      slot = val;
    } else {
      if (!val.is_number())
        throw ConfigError("config key " + p + " must be a number");
      slot = val;
    }
  }
}

std::uint64_t integer_from(const json& j, const std::string& path) {
  if (j.is_number_unsigned()) return j.get<std::uint64_t>();
  if (j.is_number_integer() && j.get<long long>() >= 0)
    return static_cast<std::uint64_t>(j.get<long long>());
  throw ConfigError("config key " + path + " must be a non-negative integer");
}

// ---------------------------------------------------------------------------
// Shared command plumbing
// ---------------------------------------------------------------------------

PhysicalConstants consts_of(const RunConfig& c) {
  return {c.constants.D_MHz, c.constants.gamma_e_MHz_per_mT};
}

StaticField field_of(const RunConfig& c) {
  if (!(c.static_field.theta_deg >= 0.0 && c.static_field.theta_deg <= 180.0))
    throw ConfigError("static_field.theta_deg must lie in [0, 180]");
  return {c.static_field.B_mT,
          std::min(deg2rad(c.static_field.theta_deg), kPi)};
}

ACFieldVector drive_of(const RunConfig& c, double amplitude_G) {
  if (!(amplitude_G >= 0.0))
    throw ConfigError("ac_field.B_AC_G and ac_field.rf_ratio cannot be "
                      "negative");
  if (!(c.ac_field.zeta_deg >= 0.0 && c.ac_field.zeta_deg <= 180.0))
    throw ConfigError("ac_field.zeta_deg must lie in [0, 180]");
  double eta_deg = std::fmod(c.ac_field.eta_deg, 360.0);
  if (eta_deg < 0.0) eta_deg += 360.0;
  double eta_rad = deg2rad(eta_deg);
  if (eta_rad >= 2.0 * kPi) eta_rad = 0.0;
  return {amplitude_G / kGaussPerMilliTesla,
          std::min(deg2rad(c.ac_field.zeta_deg), kPi), eta_rad,
          2.0 * kPi * c.ac_field.freq_MHz, 0.0};
}

std::vector<double> make_grid(double start, double stop, double step,
                              const char* what) {
  if (!std::isfinite(start) || !std::isfinite(stop) || !(step > 0.0))
    throw ConfigError(std::string(what) +
                      " grid needs finite bounds and a positive step");
  if (stop < start)
    throw ConfigError(std::string(what) + " grid stop precedes its start");
  const double span = (stop - start) / step;
  if (span > 5e6)
    throw ConfigError(std::string(what) + " grid has too many points");
  const long n = static_cast<long>(std::floor(span + 1e-6)) + 1;
  std::vector<double> grid(static_cast<std::size_t>(n));
  for (long i = 0; i < n; ++i)
    grid[static_cast<std::size_t>(i)] = start + step * static_cast<double>(i);
  return grid;
}

void base_metadata(TabularSeries& t, const char* command,
                   const RunConfig& cfg) {
  t.metadata.emplace_back("command", command);
  t.metadata.emplace_back("version", "1");
  t.metadata.emplace_back("seed", std::to_string(cfg.seed));
  t.metadata.emplace_back("config", render_config(cfg));
}

void add_noise(std::vector<double>& values, double sigma, std::uint64_t seed,
               bool relative) {
  if (sigma < 0.0)
    throw ConfigError("noise.sigma_norm cannot be negative");
  if (sigma == 0.0) return;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, sigma);
  for (double& v : values) {
    const double g = gauss(rng);
    v = relative ? v * (1.0 + g) : v + g;
  }
}

// rabi transition selector: slot in the fixed transition order plus the
// amplitude scale (the low-frequency drive shares the geometry but carries
// rf_ratio times the amplitude).
std::pair<int, double> rabi_slot(const RunConfig& cfg) {
  const std::string& name = cfg.rabi.transition;
  if (name == "zero_minus") return {0, 1.0};
  if (name == "zero_plus") return {1, 1.0};
  if (name == "minus_beta") return {2, cfg.ac_field.rf_ratio};
  throw ConfigError(
      "rabi.transition must be zero_minus, zero_plus, or minus_beta (got '" +
      name + "')");
}

void record_fit_failure(TabularSeries& t, const std::string& message) {
  t.metadata.emplace_back("fit_converged", "false");
  t.metadata.emplace_back("fit_error", message);
}

void append_spectrum_fit(TabularSeries& t, const ODMRSpectrum& spec,
                         const LabeledEigensystem& sys, const RunConfig& cfg) {
  try {
    std::vector<double> centers;
    for (const Transition& tr : transitions(sys))
      if (tr.frequency_MHz >= spec.freq_MHz.front() &&
          tr.frequency_MHz <= spec.freq_MHz.back())
        centers.push_back(tr.frequency_MHz);
    if (centers.empty())
      throw FitError("no transition lies inside the frequency window");
    std::sort(centers.begin(), centers.end());
    const int n = std::min<int>(cfg.fit.n_peaks,
                                static_cast<int>(centers.size()));
    centers.resize(static_cast<std::size_t>(n));
    const FitResult fit = fit_gaussian_peaks(spec, n, centers);
    t.metadata.emplace_back("fit_converged",
                            fit.converged ? "true" : "false");
    for (int k = 0; k < n; ++k) {
      const std::string idx = std::to_string(k + 1);
      t.metadata.emplace_back("fit_center" + idx + "_MHz",
                              fmt_double(fit.params(3 * k)));
      t.metadata.emplace_back("fit_sigma_center" + idx + "_MHz",
                              fmt_double(uncertainty(fit, 3 * k)));
      t.metadata.emplace_back("fit_fwhm" + idx + "_MHz",
                              fmt_double(fit.params(3 * k + 1)));
      t.metadata.emplace_back("fit_depth" + idx + "_norm",
                              fmt_double(fit.params(3 * k + 2)));
    }
    t.metadata.emplace_back("fit_baseline_norm",
                            fmt_double(fit.params(3 * n)));
    if (!fit.converged)
      t.metadata.emplace_back("fit_error",
                              "fit did not converge within the iteration "
                              "budget");
  } catch (const FitError& e) {
    record_fit_failure(t, e.what());
  }
}

void append_rabi_fit(TabularSeries& t, const RabiTrace& trace, double model_R,
                     const RunConfig& cfg) {
  try {
    const DampedCosineParams init{cfg.rabi.amplitude_norm, model_R,
                                  cfg.rabi.T_R_us, cfg.rabi.baseline_norm};
    const FitResult fit = fit_damped_cosine(trace, init);
    t.metadata.emplace_back("fit_converged",
                            fit.converged ? "true" : "false");
    t.metadata.emplace_back("fit_amplitude_norm", fmt_double(fit.params(0)));
    t.metadata.emplace_back("fit_nu_MHz", fmt_double(fit.params(1)));
    t.metadata.emplace_back("fit_sigma_nu_MHz",
                            fmt_double(uncertainty(fit, 1)));
    t.metadata.emplace_back("fit_T_R_us", fmt_double(fit.params(2)));
    t.metadata.emplace_back("fit_baseline_norm", fmt_double(fit.params(3)));
    if (!fit.converged)
      t.metadata.emplace_back("fit_error",
                              "fit did not converge within the iteration "
                              "budget");
  } catch (const FitError& e) {
    record_fit_failure(t, e.what());
  }
}

void append_ratio_fit(TabularSeries& t,
                      const std::vector<std::pair<double, double>>& curve) {
  try {
    const FitResult fit = fit_lorentzian_ratio(curve);
    t.metadata.emplace_back("fit_converged",
                            fit.converged ? "true" : "false");
    t.metadata.emplace_back("fit_width_deg", fmt_double(fit.params(1)));
    t.metadata.emplace_back("fit_center_deg", fmt_double(fit.params(2)));
    t.metadata.emplace_back("fit_sigma_center_deg",
                            fmt_double(uncertainty(fit, 2)));
    t.metadata.emplace_back("fit_baseline_norm", fmt_double(fit.params(3)));
    if (!fit.converged)
      t.metadata.emplace_back("fit_error",
                              "fit did not converge within the iteration "
                              "budget");
  } catch (const FitError& e) {
    record_fit_failure(t, e.what());
  }
}

std::string escape_xml(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string enum_name(InversionModel m) {
  return m == InversionModel::single_axis ? "single_axis" : "coherent_sum";
}

std::string enum_name(UncertaintyMethod u) {
  switch (u) {
    case UncertaintyMethod::monte_carlo: return "monte_carlo";
    case UncertaintyMethod::linearized: return "linearized";
    case UncertaintyMethod::none: return "none";
  }
  return "unknown";
}

}  // namespace

// ---------------------------------------------------------------------------
// Tabular serialization
// ---------------------------------------------------------------------------

std::string render_table(const TabularSeries& t) {
  if (t.columns.empty())
    throw ConfigError("a table needs at least one column");
  for (const auto& [key, value] : t.metadata) {
    if (key.empty() || key.find(':') != std::string::npos ||
        key.find('\n') != std::string::npos ||
        value.find('\n') != std::string::npos)
      throw ConfigError("metadata entries must be single-line and "
                        "colon-free in the key (offending key: '" +
                        key + "')");
  }
  std::string out;
  for (const auto& [key, value] : t.metadata)
    out += "# " + key + ": " + value + "\n";
  for (std::size_t j = 0; j < t.columns.size(); ++j) {
    const std::string& name = t.columns[j];
    if (name.empty() || name.find(',') != std::string::npos ||
        name.find('\n') != std::string::npos)
      throw ConfigError("column names must be non-empty and comma-free");
    out += (j == 0 ? "" : ",") + name;
  }
  out += "\n";
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    if (t.rows[i].size() != t.columns.size())
      throw ConfigError("table is not rectangular: row " + std::to_string(i) +
                        " has " + std::to_string(t.rows[i].size()) +
                        " cells for " + std::to_string(t.columns.size()) +
                        " columns");
    for (std::size_t j = 0; j < t.rows[i].size(); ++j)
      out += (j == 0 ? "" : ",") + fmt_double(t.rows[i][j]);
    out += "\n";
  }
  return out;
}

TabularSeries parse_table(const std::string& text) {
  TabularSeries t;
  bool have_columns = false;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) eol = text.size();
    const std::string_view line(text.data() + pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (have_columns)
        throw ConfigError("metadata must precede the column header (line " +
                          std::to_string(line_no) + ")");
      if (line.size() < 2 || line[1] != ' ')
        throw ConfigError("malformed metadata line " +
                          std::to_string(line_no));
      const std::string_view body = line.substr(2);
      const std::size_t sep = body.find(": ");
      if (sep == std::string_view::npos)
        throw ConfigError("malformed metadata line " +
                          std::to_string(line_no) +
                          ": expected '# key: value'");
      t.metadata.emplace_back(std::string(body.substr(0, sep)),
                              std::string(body.substr(sep + 2)));
      continue;
    }
    if (!have_columns) {
      for (const std::string_view name : split(line, ',')) {
        if (name.empty())
          throw ConfigError("empty column name in the header line");
        t.columns.emplace_back(name);
      }
      have_columns = true;
      continue;
    }
    const auto cells = split(line, ',');
    if (cells.size() != t.columns.size())
      throw ConfigError("table row at line " + std::to_string(line_no) +
                        " has " + std::to_string(cells.size()) +
                        " cells for " + std::to_string(t.columns.size()) +
                        " columns");
    std::vector<double> row;
    row.reserve(cells.size());
    for (const std::string_view cell : cells)
      row.push_back(parse_double(cell, "table cell"));
    t.rows.push_back(std::move(row));
  }
  if (!have_columns)
    throw ConfigError("table document has no column header");
  return t;
}

void write_table_file(const TabularSeries& t, const std::string& path) {
  const std::string text = render_table(t);
  std::ofstream f(path, std::ios::binary);
  if (!f.good())
    throw ConfigError("cannot write table file: " + path);
  f << text;
  if (!f.good())
    throw ConfigError("failed while writing table file: " + path);
}

TabularSeries read_table_file(const std::string& path) {
  return parse_table(read_text_file(path, "table file"));
}

// ---------------------------------------------------------------------------
// Config parsing
// ---------------------------------------------------------------------------

RunConfig parse_config(const std::string& json_text) {
  json in;
  try {
    in = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  json base = config_to_json(RunConfig{});
  merge_config(base, in, "");

  RunConfig c;
  c.constants.D_MHz = base["constants"]["D_MHz"].get<double>();
  c.constants.gamma_e_MHz_per_mT =
      base["constants"]["gamma_e_MHz_per_mT"].get<double>();
  c.static_field.B_mT = base["static_field"]["B_mT"].get<double>();
  c.static_field.theta_deg = base["static_field"]["theta_deg"].get<double>();
  c.ac_field.B_AC_G = base["ac_field"]["B_AC_G"].get<double>();
  c.ac_field.zeta_deg = base["ac_field"]["zeta_deg"].get<double>();
  c.ac_field.eta_deg = base["ac_field"]["eta_deg"].get<double>();
  c.ac_field.freq_MHz = base["ac_field"]["freq_MHz"].get<double>();
  c.ac_field.rf_ratio = base["ac_field"]["rf_ratio"].get<double>();
  json& g = base["grids"];
  c.grids.theta_start_deg = g["theta_start_deg"].get<double>();
  c.grids.theta_stop_deg = g["theta_stop_deg"].get<double>();
  c.grids.theta_step_deg = g["theta_step_deg"].get<double>();
  c.grids.freq_start_MHz = g["freq_start_MHz"].get<double>();
  c.grids.freq_stop_MHz = g["freq_stop_MHz"].get<double>();
  c.grids.freq_step_MHz = g["freq_step_MHz"].get<double>();
  c.grids.time_start_us = g["time_start_us"].get<double>();
  c.grids.time_stop_us = g["time_stop_us"].get<double>();
  c.grids.time_step_us = g["time_step_us"].get<double>();
  c.grids.eta_scan_deg = g["eta_scan_deg"].get<std::vector<double>>();
  c.lineshape.fwhm_MHz = base["lineshape"]["fwhm_MHz"].get<double>();
  c.lineshape.contrast_scale =
      base["lineshape"]["contrast_scale"].get<double>();
  c.lineshape.response_exponent =
      base["lineshape"]["response_exponent"].get<double>();
  c.rabi.transition = base["rabi"]["transition"].get<std::string>();
  c.rabi.T_R_us = base["rabi"]["T_R_us"].get<double>();
  c.rabi.amplitude_norm = base["rabi"]["amplitude_norm"].get<double>();
  c.rabi.baseline_norm = base["rabi"]["baseline_norm"].get<double>();
  c.noise.sigma_norm = base["noise"]["sigma_norm"].get<double>();
  c.fit.enabled = base["fit"]["enabled"].get<bool>();
  if (!base["fit"]["n_peaks"].is_number_integer() &&
      !base["fit"]["n_peaks"].is_number_unsigned())
    throw ConfigError("config key fit.n_peaks must be an integer");
  c.fit.n_peaks = base["fit"]["n_peaks"].get<int>();
  if (c.fit.n_peaks < 1 || c.fit.n_peaks > 3)
    throw ConfigError("config key fit.n_peaks must lie in 1..3");
  c.seed = integer_from(base["seed"], "seed");
  c.output.table_path = base["output"]["table_path"].get<std::string>();
  c.output.plot_path = base["output"]["plot_path"].get<std::string>();
  return c;
}

RunConfig load_config_file(const std::string& path) {
  return parse_config(read_text_file(path, "config file"));
}

std::string render_config(const RunConfig& config) {
  return config_to_json(config).dump();
}

// ---------------------------------------------------------------------------
// SVG plotting
// ---------------------------------------------------------------------------

std::string render_svg_plot(const TabularSeries& t, const std::string& title) {
  if (t.columns.size() < 2 || t.rows.size() < 2)
    throw ConfigError("plotting needs at least two columns and two rows");
  const std::size_t n_series = std::min<std::size_t>(t.columns.size() - 1, 6);

  double xmin = t.rows[0][0], xmax = xmin;
  double ymin = t.rows[0][1], ymax = ymin;
  for (const auto& row : t.rows) {
    xmin = std::min(xmin, row[0]);
    xmax = std::max(xmax, row[0]);
    for (std::size_t s = 1; s <= n_series; ++s) {
      ymin = std::min(ymin, row[s]);
      ymax = std::max(ymax, row[s]);
    }
  }
  if (!(xmax > xmin)) {
    xmin -= 1.0;
    xmax += 1.0;
  }
  const double ypad = (ymax > ymin) ? 0.05 * (ymax - ymin) : 1.0;
  ymin -= ypad;
  ymax += ypad;

  const double w = 860.0, h = 540.0;
  const double left = 70.0, right = 20.0, top = 40.0, bottom = 50.0;
  const double pw = w - left - right, ph = h - top - bottom;
  const auto sx = [&](double x) {
    return left + (x - xmin) / (xmax - xmin) * pw;
  };
  const auto sy = [&](double y) {
    return top + (1.0 - (y - ymin) / (ymax - ymin)) * ph;
  };
  const auto num = [](double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return std::string(buf);
  };
  const auto label = [](double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return std::string(buf);
  };
  static const char* kPalette[6] = {"#1f77b4", "#d62728", "#2ca02c",
                                    "#9467bd", "#ff7f0e", "#8c564b"};

  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"860\" "
         "height=\"540\" viewBox=\"0 0 860 540\">\n";
  svg += "<rect width=\"860\" height=\"540\" fill=\"#ffffff\"/>\n";
  svg += "<text x=\"430\" y=\"24\" text-anchor=\"middle\" "
         "font-family=\"sans-serif\" font-size=\"16\">" +
         escape_xml(title) + "</text>\n";

  for (int i = 0; i <= 4; ++i) {
    const double fx = xmin + (xmax - xmin) * i / 4.0;
    const double fy = ymin + (ymax - ymin) * i / 4.0;
    const std::string gx = num(sx(fx));
    const std::string gy = num(sy(fy));
    svg += "<line x1=\"" + gx + "\" y1=\"" + num(top) + "\" x2=\"" + gx +
           "\" y2=\"" + num(top + ph) +
           "\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n";
    svg += "<line x1=\"" + num(left) + "\" y1=\"" + gy + "\" x2=\"" +
           num(left + pw) + "\" y2=\"" + gy +
           "\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n";
    svg += "<text x=\"" + gx + "\" y=\"" + num(top + ph + 18.0) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
           "font-size=\"11\">" +
           label(fx) + "</text>\n";
    svg += "<text x=\"" + num(left - 8.0) + "\" y=\"" + num(sy(fy) + 4.0) +
           "\" text-anchor=\"end\" font-family=\"sans-serif\" "
           "font-size=\"11\">" +
           label(fy) + "</text>\n";
  }
  svg += "<rect x=\"" + num(left) + "\" y=\"" + num(top) + "\" width=\"" +
         num(pw) + "\" height=\"" + num(ph) +
         "\" fill=\"none\" stroke=\"#333333\" stroke-width=\"1\"/>\n";
  svg += "<text x=\"" + num(left + pw / 2.0) + "\" y=\"" + num(h - 10.0) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"13\">" +
         escape_xml(t.columns[0]) + "</text>\n";

  for (std::size_t s = 1; s <= n_series; ++s) {
    const char* color = kPalette[(s - 1) % 6];
    svg += "<polyline fill=\"none\" stroke=\"";
    svg += color;
    svg += "\" stroke-width=\"1.5\" points=\"";
    for (const auto& row : t.rows)
      svg += num(sx(row[0])) + "," + num(sy(row[s])) + " ";
    svg += "\"/>\n";
    if (t.rows.size() <= 40) {
      for (const auto& row : t.rows) {
        svg += "<circle cx=\"" + num(sx(row[0])) + "\" cy=\"" +
               num(sy(row[s])) + "\" r=\"2.5\" fill=\"";
        svg += color;
        svg += "\"/>\n";
      }
    }
    svg += "<text x=\"" + num(left + pw - 8.0) + "\" y=\"" +
           num(top + 16.0 * static_cast<double>(s)) +
           "\" text-anchor=\"end\" font-family=\"sans-serif\" "
           "font-size=\"12\" fill=\"";
    svg += color;
    svg += "\">" + escape_xml(t.columns[s]) + "</text>\n";
  }
  svg += "</svg>\n";
  return svg;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

TabularSeries cmd_levels(const RunConfig& cfg) {
  const PhysicalConstants consts = consts_of(cfg);
  if (cfg.grids.theta_start_deg < 0.0 || cfg.grids.theta_stop_deg > 180.0)
    throw ConfigError("grids.theta_start_deg/theta_stop_deg must lie in "
                      "[0, 180]");
  const std::vector<double> grid_deg =
      make_grid(cfg.grids.theta_start_deg, cfg.grids.theta_stop_deg,
                cfg.grids.theta_step_deg, "theta");
  std::vector<double> grid_rad;
  grid_rad.reserve(grid_deg.size());
  for (double d : grid_deg)
    grid_rad.push_back(std::min(deg2rad(d), kPi));
  const auto scan =
      anticrossing_scan(consts, cfg.static_field.B_mT, grid_rad);

  TabularSeries t;
  t.columns = {"theta_deg", "level_low_MHz", "level_mid_MHz",
               "level_high_MHz", "gap_MHz"};
  t.rows.reserve(scan.size());
  for (std::size_t i = 0; i < scan.size(); ++i)
    t.rows.push_back({grid_deg[i], scan[i].levels_MHz[0],
                      scan[i].levels_MHz[1], scan[i].levels_MHz[2],
                      scan[i].gap_MHz});
  base_metadata(t, "levels", cfg);
  return t;
}

TabularSeries cmd_spectrum(const RunConfig& cfg) {
  const PhysicalConstants consts = consts_of(cfg);
  const LabeledEigensystem sys = eigensystem(consts, field_of(cfg));
  const ACFieldVector ac = drive_of(cfg, cfg.ac_field.B_AC_G);
  const std::vector<double> freq =
      make_grid(cfg.grids.freq_start_MHz, cfg.grids.freq_stop_MHz,
                cfg.grids.freq_step_MHz, "frequency");
  const LineShapeParams line{cfg.lineshape.fwhm_MHz,
                             cfg.lineshape.contrast_scale,
                             cfg.lineshape.response_exponent};
  ODMRSpectrum spec = odmr_spectrum(sys, ac, line, freq);
  add_noise(spec.signal, cfg.noise.sigma_norm, cfg.seed, /*relative=*/false);

  TabularSeries t;
  t.columns = {"freq_MHz", "signal_norm"};
  t.rows.reserve(freq.size());
  for (std::size_t i = 0; i < freq.size(); ++i)
    t.rows.push_back({spec.freq_MHz[i], spec.signal[i]});
  base_metadata(t, "spectrum", cfg);
  if (cfg.fit.enabled) append_spectrum_fit(t, spec, sys, cfg);
  return t;
}

TabularSeries cmd_rabi(const RunConfig& cfg) {
  const PhysicalConstants consts = consts_of(cfg);
  const LabeledEigensystem sys = eigensystem(consts, field_of(cfg));
  const auto trs = transitions(sys);
  const auto [slot, scale] = rabi_slot(cfg);
  const ACFieldVector ac = drive_of(cfg, cfg.ac_field.B_AC_G * scale);
  const double model_R = rabi_frequency(trs[static_cast<std::size_t>(slot)],
                                        ac, consts);
  const std::vector<double> times =
      make_grid(cfg.grids.time_start_us, cfg.grids.time_stop_us,
                cfg.grids.time_step_us, "time");
  if (cfg.noise.sigma_norm < 0.0)
    throw ConfigError("noise.sigma_norm cannot be negative");
  const RabiTrace trace =
      rabi_trace(model_R, cfg.rabi.T_R_us, cfg.rabi.amplitude_norm,
                 cfg.rabi.baseline_norm, times, cfg.noise.sigma_norm,
                 cfg.seed);

  TabularSeries t;
  t.columns = {"time_us", "signal_norm"};
  t.rows.reserve(times.size());
  for (std::size_t i = 0; i < times.size(); ++i)
    t.rows.push_back({trace.times_us[i], trace.signal[i]});
  base_metadata(t, "rabi", cfg);
  t.metadata.emplace_back("transition", cfg.rabi.transition);
  t.metadata.emplace_back("model_R_MHz", fmt_double(model_R));
  if (cfg.fit.enabled) append_rabi_fit(t, trace, model_R, cfg);
  return t;
}

TabularSeries cmd_ratio(const RunConfig& cfg) {
  const PhysicalConstants consts = consts_of(cfg);
  const LabeledEigensystem sys = eigensystem(consts, field_of(cfg));
  const ACFieldVector ac = drive_of(cfg, cfg.ac_field.B_AC_G);
  if (cfg.grids.eta_scan_deg.empty())
    throw ConfigError("grids.eta_scan_deg must not be empty");
  std::vector<double> grid_rad;
  grid_rad.reserve(cfg.grids.eta_scan_deg.size());
  for (double d : cfg.grids.eta_scan_deg) {
    double folded = std::fmod(d, 360.0);
    if (folded < 0.0) folded += 360.0;
    double rad = deg2rad(folded);
    if (rad >= 2.0 * kPi) rad = 0.0;
    grid_rad.push_back(rad);
  }
  const auto pts = eta_ratio_curve(sys, ac, grid_rad);
  std::vector<double> ratios(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) ratios[i] = pts[i].ratio;
  add_noise(ratios, cfg.noise.sigma_norm, cfg.seed, /*relative=*/true);

  TabularSeries t;
  t.columns = {"eta_deg", "ratio_norm"};
  t.rows.reserve(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i)
    t.rows.push_back({cfg.grids.eta_scan_deg[i], ratios[i]});
  base_metadata(t, "ratio", cfg);
  if (cfg.fit.enabled) {
    std::vector<std::pair<double, double>> curve;
    curve.reserve(t.rows.size());
    for (const auto& row : t.rows) curve.emplace_back(row[0], row[1]);
    append_ratio_fit(t, curve);
  }
  return t;
}

TabularSeries fit_table(const TabularSeries& table, const std::string& kind) {
  std::string command = kind;
  if (command.empty()) {
    const std::string* c = find_meta(table, "command");
    if (!c)
      throw ConfigError("the table carries no command metadata; pass the "
                        "kind explicitly");
    command = *c;
  }
  const std::string* cfg_text = find_meta(table, "config");
  if (!cfg_text)
    throw ConfigError("the table carries no config echo to rebuild the "
                      "model from");
  const RunConfig cfg = parse_config(*cfg_text);
  if (table.columns.size() < 2)
    throw ConfigError("the table needs at least two columns to fit");

  TabularSeries out = table;
  out.metadata.erase(
      std::remove_if(out.metadata.begin(), out.metadata.end(),
                     [](const auto& kv) {
                       return kv.first.rfind("fit_", 0) == 0;
                     }),
      out.metadata.end());

  if (command == "spectrum") {
    ODMRSpectrum spec;
    for (const auto& row : out.rows) {
      spec.freq_MHz.push_back(row[0]);
      spec.signal.push_back(row[1]);
    }
    if (spec.freq_MHz.empty())
      throw ConfigError("the spectrum table has no data rows");
    const LabeledEigensystem sys =
        eigensystem(consts_of(cfg), field_of(cfg));
    append_spectrum_fit(out, spec, sys, cfg);
  } else if (command == "rabi") {
    RabiTrace trace;
    for (const auto& row : out.rows) {
      trace.times_us.push_back(row[0]);
      trace.signal.push_back(row[1]);
    }
    const LabeledEigensystem sys =
        eigensystem(consts_of(cfg), field_of(cfg));
    const auto trs = transitions(sys);
    const auto [slot, scale] = rabi_slot(cfg);
    const double model_R =
        rabi_frequency(trs[static_cast<std::size_t>(slot)],
                       drive_of(cfg, cfg.ac_field.B_AC_G * scale),
                       consts_of(cfg));
    append_rabi_fit(out, trace, model_R, cfg);
  } else if (command == "ratio") {
    std::vector<std::pair<double, double>> curve;
    for (const auto& row : out.rows) curve.emplace_back(row[0], row[1]);
    append_ratio_fit(out, curve);
  } else {
    throw ConfigError("no fit is defined for '" + command + "' tables");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Measurement documents and reports
// ---------------------------------------------------------------------------

InversionRequest parse_measurement_document(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("measurement document is not valid JSON: ") +
                      e.what());
  }
  if (!j.is_object())
    throw ConfigError("measurement document must be a JSON object");

  static const std::vector<std::string> kTop = {
      "R_0plus_MHz",     "R_0minus_MHz", "R_minusplus_MHz",
      "amplitude_ratio", "field_context", "constants", "options"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::find(kTop.begin(), kTop.end(), it.key()) == kTop.end())
      throw ConfigError("unrecognized measurement key: " + it.key());

  const auto measured = [&](const char* name) -> MeasuredValue {
    if (!j.contains(name))
      throw ConfigError(std::string("measurement document: ") + name +
                        " is missing");
    const json& v = j.at(name);
    if (v.is_number()) return {v.get<double>(), 0.0};
    if (!v.is_object())
      throw ConfigError(std::string(name) +
                        " must be a number or a {value, sigma} object");
    MeasuredValue m;
    bool have_value = false;
    for (auto it = v.begin(); it != v.end(); ++it) {
      const std::string p = std::string(name) + "." + it.key();
      if (it.key() == "value") {
        if (!it.value().is_number())
          throw ConfigError(p + " must be a number");
        m.value = it.value().get<double>();
        have_value = true;
      } else if (it.key() == "sigma") {
        if (!it.value().is_number())
          throw ConfigError(p + " must be a number");
        m.sigma = it.value().get<double>();
      } else {
        throw ConfigError("unrecognized measurement key: " + p);
      }
    }
    if (!have_value)
      throw ConfigError(std::string(name) + ".value is missing");
    return m;
  };

  InversionRequest req;
  req.meas.R_0plus_MHz = measured("R_0plus_MHz");
  req.meas.R_0minus_MHz = measured("R_0minus_MHz");
  req.meas.R_minusplus_MHz = measured("R_minusplus_MHz");
  req.meas.amplitude_ratio = measured("amplitude_ratio");

  if (!j.contains("field_context"))
    throw ConfigError("measurement document: field_context is missing");
  const json& fc = j.at("field_context");
  if (!fc.is_object() || !fc.contains("B_mT") || !fc.contains("theta_deg"))
    throw ConfigError("field_context must carry B_mT and theta_deg");
  for (auto it = fc.begin(); it != fc.end(); ++it)
    if (it.key() != "B_mT" && it.key() != "theta_deg")
      throw ConfigError("unrecognized measurement key: field_context." +
                        it.key());
  if (!fc["B_mT"].is_number())
    throw ConfigError("field_context.B_mT must be a number");
  if (!fc["theta_deg"].is_number())
    throw ConfigError("field_context.theta_deg must be a number");
  const double theta_deg = fc["theta_deg"].get<double>();
  if (!(theta_deg >= 0.0 && theta_deg <= 180.0))
    throw ConfigError("field_context.theta_deg must lie in [0, 180]");
  req.meas.field_context = {fc["B_mT"].get<double>(),
                            std::min(deg2rad(theta_deg), kPi)};

  if (j.contains("constants")) {
    const json& c = j.at("constants");
    if (!c.is_object())
      throw ConfigError("constants must be an object");
    for (auto it = c.begin(); it != c.end(); ++it) {
      if (it.key() == "D_MHz") {
        if (!it.value().is_number())
          throw ConfigError("constants.D_MHz must be a number");
        req.consts.D_MHz = it.value().get<double>();
      } else if (it.key() == "gamma_e_MHz_per_mT") {
        if (!it.value().is_number())
          throw ConfigError("constants.gamma_e_MHz_per_mT must be a number");
        req.consts.gamma_e_MHz_per_mT = it.value().get<double>();
      } else {
        throw ConfigError("unrecognized measurement key: constants." +
                          it.key());
      }
    }
  }

  if (j.contains("options")) {
    const json& o = j.at("options");
    if (!o.is_object())
      throw ConfigError("options must be an object");
    for (auto it = o.begin(); it != o.end(); ++it) {
      if (it.key() == "model") {
        if (it.value() == "single_axis")
          req.options.model = InversionModel::single_axis;
        else if (it.value() == "coherent_sum")
          req.options.model = InversionModel::coherent_sum;
        else
          throw ConfigError(
              "options.model must be single_axis or coherent_sum");
      } else if (it.key() == "uncertainty") {
        if (it.value() == "monte_carlo")
          req.options.uncertainty = UncertaintyMethod::monte_carlo;
        else if (it.value() == "linearized")
          req.options.uncertainty = UncertaintyMethod::linearized;
        else if (it.value() == "none")
          req.options.uncertainty = UncertaintyMethod::none;
        else
          throw ConfigError(
              "options.uncertainty must be monte_carlo, linearized, or none");
      } else if (it.key() == "mc_samples") {
        if (!it.value().is_number_integer() &&
            !it.value().is_number_unsigned())
          throw ConfigError("options.mc_samples must be an integer");
        req.options.mc_samples = it.value().get<int>();
      } else if (it.key() == "seed") {
        req.options.seed = integer_from(it.value(), "options.seed");
      } else {
        throw ConfigError("unrecognized measurement key: options." +
                          it.key());
      }
    }
  }
  return req;
}

std::string render_reconstruction(const ReconstructedField& rec,
                                  const InversionRequest& req,
                                  bool json_mode) {
  const double b_mw_G = rec.B_MW_mT * kGaussPerMilliTesla;
  const double b_rf_G = rec.B_RF_mT * kGaussPerMilliTesla;
  const double s_mw_G = rec.sigma_B_MW_mT * kGaussPerMilliTesla;
  const double s_rf_G = rec.sigma_B_RF_mT * kGaussPerMilliTesla;
  const double zeta_deg = rad2deg(rec.zeta_rad);
  const double eta_deg = rad2deg(rec.eta_rad);
  const double s_zeta_deg = rad2deg(rec.sigma_zeta_rad);
  const double s_eta_deg = rad2deg(rec.sigma_eta_rad);

  if (json_mode) {
    const json out{{"B_MW_G", b_mw_G},
                   {"sigma_B_MW_G", s_mw_G},
                   {"B_RF_G", b_rf_G},
                   {"sigma_B_RF_G", s_rf_G},
                   {"zeta_deg", zeta_deg},
                   {"sigma_zeta_deg", s_zeta_deg},
                   {"eta_deg", eta_deg},
                   {"sigma_eta_deg", s_eta_deg},
                   {"misfit_sigma", rec.misfit_sigma},
                   {"inconsistent", rec.inconsistent},
                   {"eta_indeterminate", rec.eta_indeterminate},
                   {"quadrant_note", to_string(rec.quadrant_note)},
                   {"model", enum_name(req.options.model)},
                   {"uncertainty", enum_name(req.options.uncertainty)},
                   {"mc_samples", req.options.mc_samples},
                   {"seed", req.options.seed}};
    return out.dump(2) + "\n";
  }

  char buf[160];
  std::string out = "reconstructed drive field (model: " +
                    enum_name(req.options.model) + ")\n";
  const auto line = [&](const char* name, double v, double s) {
    std::snprintf(buf, sizeof(buf), "  %-10s = %12.6f +- %.6f\n", name, v, s);
    out += buf;
  };
  line("B_MW_G", b_mw_G, s_mw_G);
  line("B_RF_G", b_rf_G, s_rf_G);
  line("zeta_deg", zeta_deg, s_zeta_deg);
  line("eta_deg", eta_deg, s_eta_deg);
  std::snprintf(buf, sizeof(buf), "  misfit_sigma = %.3f\n",
                rec.misfit_sigma);
  out += buf;
  out += "  note: " + to_string(rec.quadrant_note) + "\n";
  if (rec.eta_indeterminate)
    out += "  note: both transverse responses are zero, so the azimuth "
           "carries no information\n";
  if (rec.inconsistent)
    out += "  warning: the measurements are mutually inconsistent under "
           "this coupling model (misfit above 5 sigma)\n";
  return out;
}

std::string render_plan(const ProtocolPlan& plan, double target_MHz,
                        bool json_mode) {
  json steps = json::array();
  for (const ProtocolStep& s : plan.steps)
    steps.push_back({{"B_mT", s.field.B_mT},
                     {"theta_deg", rad2deg(s.field.theta_rad)},
                     {"transition", to_string(s.transition)},
                     {"drive_MHz", s.drive_frequency_MHz},
                     {"extracts", s.extracts}});
  const json machine{{"target_MHz", target_MHz},
                     {"band_MHz", {plan.band_low_MHz, plan.band_high_MHz}},
                     {"steps", steps},
                     {"warnings", plan.warnings}};
  if (json_mode) return machine.dump(2) + "\n";

  char buf[256];
  std::string out;
  std::snprintf(buf, sizeof(buf),
                "single-frequency vector detection plan for %.3f MHz\n",
                target_MHz);
  out += buf;
  std::snprintf(buf, sizeof(buf), "reachable band: %.3f .. %.3f MHz\n",
                plan.band_low_MHz, plan.band_high_MHz);
  out += buf;
  for (std::size_t i = 0; i < plan.steps.size(); ++i) {
    const ProtocolStep& s = plan.steps[i];
    std::snprintf(buf, sizeof(buf),
                  "step %zu: B = %.4f mT, theta = %.1f deg, drive %s at "
                  "%.3f MHz\n",
                  i + 1, s.field.B_mT, rad2deg(s.field.theta_rad),
                  to_string(s.transition).c_str(), s.drive_frequency_MHz);
    out += buf;
    out += "        measures " + s.extracts + "\n";
  }
  if (!plan.warnings.empty()) {
    out += "warnings:\n";
    for (const std::string& w : plan.warnings) out += "  - " + w + "\n";
  }
  out += "machine-readable: " + machine.dump() + "\n";
  return out;
}

}  // namespace nvac
