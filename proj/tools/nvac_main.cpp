// Command-line front end: synthesis commands writing self-describing tables,
// reconstruction and planning reports, and refits of stored tables. Exit
// codes: 0 success, 2 configuration problems, 3 computation problems,
// 4 fit failures.
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "nvac/cli_io.hpp"
#include "nvac/errors.hpp"
#include "nvac/inversion.hpp"

namespace {

using nlohmann::json;
using namespace nvac;

const std::string* find_meta(const TabularSeries& t, const std::string& key) {
  for (const auto& [k, v] : t.metadata)
    if (k == key) return &v;
  return nullptr;
}

std::string slurp(const std::string& path, const char* what) {
  std::ifstream f(path, std::ios::binary);
  if (!f.good())
    throw ConfigError(std::string("cannot open ") + what + ": " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void emit(const std::string& text, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream f(out_path, std::ios::binary);
  if (!f.good())
    throw ConfigError("cannot write output file: " + out_path);
  f << text;
  if (!f.good())
    throw ConfigError("failed while writing output file: " + out_path);
}

std::string table_as_json(const TabularSeries& t) {
  json meta = json::array();
  for (const auto& [k, v] : t.metadata) meta.push_back({k, v});
  const json doc{
      {"metadata", meta}, {"columns", t.columns}, {"rows", t.rows}};
  return doc.dump(2) + "\n";
}

std::string plot_path_for(const RunConfig& cfg, const std::string& out_path) {
  if (!cfg.output.plot_path.empty()) return cfg.output.plot_path;
  if (!out_path.empty()) {
    std::filesystem::path p(out_path);
    p.replace_extension(".svg");
    return p.string();
  }
  return "nvac_plot.svg";
}

// Writes the table (and plot on request); a requested fit that did not
// converge still writes everything but turns into exit code 4.
int finish_table(const TabularSeries& t, const RunConfig& cfg,
                 const std::string& out_path, bool plot, bool json_mode,
                 const std::string& title) {
  emit(json_mode ? table_as_json(t) : render_table(t), out_path);
  if (plot) {
    const std::string svg = render_svg_plot(t, title);
    const std::string path = plot_path_for(cfg, out_path);
    std::ofstream f(path, std::ios::binary);
    if (!f.good())
      throw ConfigError("cannot write plot file: " + path);
    f << svg;
  }
  const std::string* converged = find_meta(t, "fit_converged");
  if (converged && *converged != "true") return 4;
  return 0;
}

int run(int argc, char** argv) {
  CLI::App app{"vector magnetometry with single-orientation spin ensembles"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path, out_path;
  bool do_plot = false, json_mode = false;
  std::uint64_t seed_override = 0;
  app.add_option("--config", config_path, "JSON configuration document");
  CLI::Option* seed_opt =
      app.add_option("--seed", seed_override, "override the configured seed");
  app.add_option("--out", out_path, "write the report here, not stdout");
  app.add_flag("--plot", do_plot, "also write an SVG plot of the table");
  app.add_flag("--json", json_mode, "emit machine-readable JSON");

  CLI::App* levels =
      app.add_subcommand("levels", "ground-state levels vs field angle");
  CLI::App* spectrum =
      app.add_subcommand("spectrum", "synthesize a driven resonance spectrum");
  CLI::App* rabi =
      app.add_subcommand("rabi", "synthesize a Rabi oscillation trace");
  CLI::App* ratio =
      app.add_subcommand("ratio", "dip-contrast ratio vs drive azimuth");

  CLI::App* invert = app.add_subcommand(
      "invert", "reconstruct the drive field vector from measured "
                "Rabi frequencies");
  std::string invert_in;
  invert->add_option("--in", invert_in, "measurement document (JSON)")
      ->required();

  CLI::App* plan = app.add_subcommand(
      "plan", "choose static fields that bring a target frequency onto "
              "resonance");
  double target_MHz = 0.0;
  plan->add_option("target_MHz", target_MHz, "target drive frequency (MHz)")
      ->required();

  CLI::App* sens = app.add_subcommand(
      "sensitivity", "scale a single-shot field uncertainty to the "
                     "per-root-hertz figure");
  double delta_B_uT = 0.0, T_s = 0.0;
  long n_rep = 0;
  sens->add_option("--delta-B-uT", delta_B_uT,
                   "single-measurement field uncertainty (uT)")
      ->required();
  sens->add_option("--n", n_rep, "repetitions per measurement")->required();
  sens->add_option("--T-s", T_s, "duration of one repetition (s)")
      ->required();

  CLI::App* fit = app.add_subcommand("fit", "refit a stored table");
  std::string fit_in, fit_kind;
  fit->add_option("--in", fit_in, "table file to refit")->required();
  fit->add_option("--kind", fit_kind,
                  "table kind (spectrum|rabi|ratio); defaults to the "
                  "table's own command metadata");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  RunConfig cfg =
      config_path.empty() ? parse_config("{}") : load_config_file(config_path);
  if (seed_opt->count() > 0) cfg.seed = seed_override;
  if (out_path.empty()) out_path = cfg.output.table_path;

  if (levels->parsed())
    return finish_table(cmd_levels(cfg), cfg, out_path, do_plot, json_mode,
                        "levels vs field angle");
  if (spectrum->parsed())
    return finish_table(cmd_spectrum(cfg), cfg, out_path, do_plot, json_mode,
                        "driven resonance spectrum");
  if (rabi->parsed())
    return finish_table(cmd_rabi(cfg), cfg, out_path, do_plot, json_mode,
                        "Rabi oscillation trace");
  if (ratio->parsed())
    return finish_table(cmd_ratio(cfg), cfg, out_path, do_plot, json_mode,
                        "dip ratio vs drive azimuth");
  if (invert->parsed()) {
    const InversionRequest req =
        parse_measurement_document(slurp(invert_in, "measurement document"));
    const ReconstructedField rec =
        invert_field(req.meas, req.consts, req.options);
    emit(render_reconstruction(rec, req, json_mode), out_path);
    return 0;
  }
  if (plan->parsed()) {
    const ProtocolPlan p = single_frequency_protocol(
        target_MHz, PhysicalConstants{cfg.constants.D_MHz,
                                      cfg.constants.gamma_e_MHz_per_mT});
    emit(render_plan(p, target_MHz, json_mode), out_path);
    return 0;
  }
  if (sens->parsed()) {
    const double s = sensitivity(delta_B_uT, n_rep, T_s);
    if (json_mode) {
      const json doc{{"sensitivity_uT_per_sqrtHz", s},
                     {"delta_B_uT", delta_B_uT},
                     {"n", n_rep},
                     {"T_s", T_s}};
      emit(doc.dump(2) + "\n", out_path);
    } else {
      std::ostringstream ss;
      ss << "sensitivity_uT_per_sqrtHz = " << s << "\n";
      emit(ss.str(), out_path);
    }
    return 0;
  }
  if (fit->parsed()) {
    const TabularSeries refit = fit_table(read_table_file(fit_in), fit_kind);
    return finish_table(refit, cfg, out_path, do_plot, json_mode,
                        "refitted table");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const FitError& e) {
    std::cerr << "fit error: " << e.what() << "\n";
    return 4;
  } catch (const ComputationError& e) {
    std::cerr << "computation error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
