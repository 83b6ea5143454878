#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <diffda/diffda.hpp>

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

struct Flags {
  std::string config_path;
  long long seed = -1;
  int workers = -1;
  std::string denoiser = "mlp";
  std::string baseline = "none";
  std::string out;
};

void add_common_flags(CLI::App* cmd, Flags& flags) {
  cmd->add_option("--config", flags.config_path, "configuration file");
  cmd->add_option("--seed", flags.seed, "override cli.seed");
  cmd->add_option("--workers", flags.workers, "override cli.workers");
  cmd->add_option("--out", flags.out, "override the output directory");
}

diffda::Config resolve_config(const Flags& flags, const std::string& out_key) {
  diffda::Config cfg = flags.config_path.empty()
                           ? diffda::Config::defaults()
                           : diffda::Config::from_file(flags.config_path);
  if (flags.seed >= 0) cfg.set("cli.seed", std::to_string(flags.seed));
  if (flags.workers >= 0) cfg.set("cli.workers", std::to_string(flags.workers));
  if (!flags.out.empty()) cfg.set(out_key, flags.out);
  return cfg;
}

struct MetricsRow {
  int step = 0;
  std::string group;
  double skill = kNan, spread = kNan, ess = kNan, alpha = kNan;
};

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  out << "step,group,skill,spread,ess,alpha\n";
  for (const MetricsRow& r : rows)
    out << r.step << "," << r.group << "," << diffda::format_double(r.skill) << ","
        << diffda::format_double(r.spread) << "," << diffda::format_double(r.ess)
        << "," << diffda::format_double(r.alpha) << "\n";
  if (!out) throw std::runtime_error("write failed: " + path);
}

// Skill and spread per coordinate group at every stored posterior ensemble;
// ess and alpha are taken from the trace when the run was guided.
std::vector<MetricsRow> ensemble_metrics(const diffda::FilterTrace& trace,
                                         const Eigen::MatrixXd& truth,
                                         const diffda::ObservationModel& obs,
                                         bool guided) {
  std::vector<std::pair<std::string, std::vector<int>>> groups;
  const std::vector<int> seen = diffda::observed_coordinates(obs);
  const std::vector<int> hidden = diffda::unobserved_coordinates(obs);
  if (!seen.empty()) groups.emplace_back("observed", seen);
  if (!hidden.empty()) groups.emplace_back("unobserved", hidden);

  std::vector<MetricsRow> rows;
  for (std::size_t j = 0; j < trace.snapshots.size(); ++j) {
    const int k = trace.snapshot_steps[j];
    if (k == 0) continue;
    for (const auto& [name, coords] : groups) {
      MetricsRow r;
      r.step = k;
      r.group = name;
      r.skill = diffda::skill(trace.snapshots[j], truth.row(k).transpose(), coords);
      r.spread = diffda::spread(trace.snapshots[j], coords);
      if (guided) {
        r.ess = trace.ess[static_cast<std::size_t>(k - 1)];
        r.alpha = trace.alpha[static_cast<std::size_t>(k - 1)];
      }
      rows.push_back(std::move(r));
    }
  }
  return rows;
}

int cmd_generate(const Flags& flags) {
  const diffda::Config cfg = resolve_config(flags, "cli.data_dir");
  const std::string dir = cfg.get_string("cli.data_dir");
  const diffda::SystemModel sys = cfg.build_system();
  const diffda::ObservationModel obs = cfg.build_observation();
  const diffda::TwinData data =
      diffda::generate_twin(sys, obs, cfg.cycles(), cfg.seed(), cfg.spinup_steps());
  diffda::save_twin(dir, data);
  diffda::write_manifest(dir + "/manifest_generate.json", "generate", cfg.text(),
                         cfg.seed(), cfg.resolved_workers(), {},
                         {dir + "/truth.csv", dir + "/obs.csv"});
  std::cout << "wrote " << data.obs.rows() << " cycles (" << data.truth.cols()
            << " state, " << data.obs.cols() << " observed) to " << dir << "\n";
  return 0;
}

int cmd_train(const Flags& flags) {
  const diffda::Config cfg = resolve_config(flags, "cli.out_dir");
  const std::string data_dir = cfg.get_string("cli.data_dir");
  const std::string out_dir = cfg.get_string("cli.out_dir");
  const std::string ckpt = cfg.get_string("cli.checkpoint");

  const diffda::TwinData data = diffda::load_twin(data_dir);
  const Eigen::Index dim = cfg.build_observation().state_dim();
  if (data.truth.cols() != dim)
    throw diffda::ShapeError("dataset has " + std::to_string(data.truth.cols()) +
                             " state columns, config expects " + std::to_string(dim));

  const Eigen::Index n = data.truth.rows() - 1;
  const Eigen::MatrixXd x_prev = data.truth.topRows(n);
  const Eigen::MatrixXd x_next = data.truth.bottomRows(n);
  const diffda::NoiseSchedule schedule = cfg.build_schedule();
  const diffda::TrainResult result = diffda::train_denoiser(
      x_prev, x_next, schedule, cfg.hidden_widths(), cfg.build_train());

  std::filesystem::create_directories(out_dir);
  if (std::filesystem::path(ckpt).has_parent_path())
    std::filesystem::create_directories(std::filesystem::path(ckpt).parent_path());
  result.model.save(ckpt);

  const Eigen::Index epochs = result.loss_history.rows();
  Eigen::MatrixXd loss(epochs, 4);
  for (Eigen::Index e = 0; e < epochs; ++e) {
    loss(e, 0) = static_cast<double>(e);
    loss(e, 1) = result.loss_history(e, 0);
    loss(e, 2) = result.loss_history(e, 1);
    loss(e, 3) = result.trivial_holdout_loss;
  }
  diffda::write_csv(out_dir + "/loss.csv",
                    {"epoch", "train_loss", "holdout_loss", "trivial_holdout_loss"},
                    loss);
  diffda::write_manifest(out_dir + "/manifest_train.json", "train", cfg.text(),
                         cfg.seed(), cfg.resolved_workers(),
                         {data_dir + "/truth.csv"}, {ckpt, out_dir + "/loss.csv"});
  std::cout << "trained on " << n << " pairs";
  if (epochs > 0)
    std::cout << "; holdout loss " << result.loss_history(epochs - 1, 1)
              << " (trivial predictor " << result.trivial_holdout_loss << ")";
  std::cout << "; checkpoint " << ckpt << "\n";
  return 0;
}

int cmd_assimilate(const Flags& flags) {
  const diffda::Config cfg = resolve_config(flags, "cli.out_dir");
  const std::string data_dir = cfg.get_string("cli.data_dir");
  const std::string out_dir = cfg.get_string("cli.out_dir");

  const diffda::TwinData data = diffda::load_twin(data_dir);
  const diffda::ObservationModel obs = cfg.build_observation();
  if (data.truth.cols() != obs.state_dim())
    throw diffda::ShapeError("dataset has " + std::to_string(data.truth.cols()) +
                             " state columns, config expects " +
                             std::to_string(obs.state_dim()));
  if (data.obs.cols() != obs.obs_dim())
    throw diffda::ShapeError("dataset has " + std::to_string(data.obs.cols()) +
                             " observation columns, config expects " +
                             std::to_string(obs.obs_dim()));

  const diffda::NoiseSchedule schedule = cfg.build_schedule();
  std::unique_ptr<diffda::Denoiser> den;
  std::vector<std::string> inputs{data_dir + "/truth.csv", data_dir + "/obs.csv"};
  if (flags.denoiser == "analytic") {
    const diffda::SystemModel sys = cfg.build_system();
    const auto* lg = std::get_if<diffda::LinearGaussianSSM>(&sys);
    if (lg == nullptr)
      throw diffda::ConfigError(
          "the analytic denoiser requires dynamics.kind = linear_gaussian");
    den = std::make_unique<diffda::AnalyticLGDenoiser>(*lg, schedule);
  } else if (flags.denoiser == "mlp") {
    const std::string ckpt = cfg.get_string("cli.checkpoint");
    auto model = std::make_unique<diffda::MlpDenoiser>(diffda::MlpDenoiser::load(ckpt));
    if (model->dim() != data.truth.cols())
      throw diffda::ShapeError("checkpoint dimension " + std::to_string(model->dim()) +
                               " does not match dataset columns " +
                               std::to_string(data.truth.cols()));
    if (model->schedule().hash() != schedule.hash())
      throw diffda::ShapeError(
          "checkpoint noise schedule does not match the configuration");
    inputs.push_back(ckpt);
    den = std::move(model);
  } else {
    throw diffda::ConfigError("--denoiser must be analytic or mlp, got: " +
                              flags.denoiser);
  }

  const diffda::SamplerConfig sampler_cfg = cfg.build_sampler();
  const diffda::GuidanceConfig guidance_cfg = cfg.build_guidance();
  const diffda::FilterConfig filter_cfg = cfg.build_filter();
  const Eigen::VectorXd x0 = data.truth.row(0).transpose();

  const diffda::FilterTrace trace = diffda::faapf_run(
      *den, obs, data.obs, x0, schedule, sampler_cfg, guidance_cfg, filter_cfg);

  std::filesystem::create_directories(out_dir);
  std::vector<std::string> outputs;
  const std::vector<MetricsRow> rows =
      ensemble_metrics(trace, data.truth, obs, /*guided=*/true);
  write_metrics_csv(out_dir + "/metrics.csv", rows);
  outputs.push_back(out_dir + "/metrics.csv");

  const int ppc_row = static_cast<int>(cfg.get_int("metrics.ppc_row"));
  if (filter_cfg.n_particles >= 32) {
    std::vector<std::pair<int, diffda::PpcResult>> checks;
    for (std::size_t j = 0; j < trace.snapshots.size(); ++j) {
      const int k = trace.snapshot_steps[j];
      if (k == 0) continue;
      checks.emplace_back(
          k, diffda::posterior_predictive_check(
                 trace.snapshots[j], obs, data.obs.row(k - 1).transpose(), ppc_row));
    }
    if (!checks.empty()) {
      Eigen::MatrixXd ranks(static_cast<Eigen::Index>(checks.size()), 2);
      for (std::size_t i = 0; i < checks.size(); ++i) {
        ranks(static_cast<Eigen::Index>(i), 0) = checks[i].first;
        ranks(static_cast<Eigen::Index>(i), 1) = checks[i].second.rank;
      }
      diffda::write_csv(out_dir + "/ranks.csv", {"step", "rank"}, ranks);
      outputs.push_back(out_dir + "/ranks.csv");

      const auto& [last_k, last] = checks.back();
      const double y_last = data.obs(last_k - 1, ppc_row);
      Eigen::MatrixXd ppc(last.grid.size(), 4);
      ppc.col(0) = last.grid;
      ppc.col(1) = last.density;
      ppc.col(2).setConstant(y_last);
      ppc.col(3).setConstant(last.rank);
      diffda::write_csv(out_dir + "/ppc.csv",
                        {"value", "density", "observation", "rank"}, ppc);
      outputs.push_back(out_dir + "/ppc.csv");
    }
  }

  if (filter_cfg.snapshot_every > 0) {
    std::vector<std::pair<std::string, Eigen::MatrixXd>> arrays;
    for (std::size_t j = 0; j < trace.snapshots.size(); ++j)
      arrays.emplace_back("step_" + std::to_string(trace.snapshot_steps[j]),
                          trace.snapshots[j]);
    diffda::save_matrices(out_dir + "/snapshots.bin", "diffda-ensemble-v1", arrays);
    outputs.push_back(out_dir + "/snapshots.bin");
  }

  if (flags.baseline == "unconditional") {
    const diffda::FilterTrace base = diffda::unconditional_rollout(
        *den, static_cast<int>(data.obs.rows()), x0, schedule, sampler_cfg,
        filter_cfg);
    write_metrics_csv(out_dir + "/metrics_unconditional.csv",
                      ensemble_metrics(base, data.truth, obs, /*guided=*/false));
    outputs.push_back(out_dir + "/metrics_unconditional.csv");
  } else if (flags.baseline != "none") {
    throw diffda::ConfigError("--baseline must be none or unconditional, got: " +
                              flags.baseline);
  }

  diffda::write_manifest(out_dir + "/manifest_assimilate.json", "assimilate",
                         cfg.text(), cfg.seed(), filter_cfg.workers, inputs, outputs);

  double mean_skill = 0.0;
  int count = 0;
  for (const MetricsRow& r : rows)
    if (r.group == "observed") {
      mean_skill += r.skill;
      ++count;
    }
  std::cout << "assimilated " << data.obs.rows() << " cycles; mean observed skill "
            << (count > 0 ? mean_skill / count : kNan) << "; outputs in " << out_dir
            << "\n";
  return 0;
}

// Series keyed by (file label, group) over steps, pulled from a metrics table.
std::vector<diffda::PlotSeries> metric_series(const diffda::Table& table,
                                              const std::string& label,
                                              const std::string& value_col) {
  const int c_step = table.column("step");
  const int c_group = table.column("group");
  const int c_val = table.column(value_col);
  std::vector<std::string> groups;
  for (const auto& row : table.rows)
    if (std::find(groups.begin(), groups.end(), row[c_group]) == groups.end())
      groups.push_back(row[c_group]);

  std::vector<diffda::PlotSeries> out;
  for (const std::string& g : groups) {
    std::vector<double> xs, ys;
    for (const auto& row : table.rows) {
      if (row[c_group] != g) continue;
      xs.push_back(diffda::parse_double(row[c_step], "metrics"));
      ys.push_back(diffda::parse_double(row[c_val], "metrics"));
    }
    diffda::PlotSeries s;
    s.label = label + " " + g;
    s.x = Eigen::Map<Eigen::VectorXd>(xs.data(), static_cast<Eigen::Index>(xs.size()));
    s.y = Eigen::Map<Eigen::VectorXd>(ys.data(), static_cast<Eigen::Index>(ys.size()));
    out.push_back(std::move(s));
  }
  return out;
}

int cmd_plot(const Flags& flags) {
  const diffda::Config cfg = resolve_config(flags, "cli.out_dir");
  const std::string out_dir = cfg.get_string("cli.out_dir");

  const diffda::Table metrics = diffda::read_table(out_dir + "/metrics.csv");
  std::vector<std::string> inputs{out_dir + "/metrics.csv"};
  std::vector<std::string> outputs;

  diffda::PlotSpec skill_spec;
  skill_spec.title = "Ensemble-mean skill";
  skill_spec.x_label = "assimilation cycle";
  skill_spec.y_label = "skill (rmse)";
  skill_spec.series = metric_series(metrics, "filter", "skill");

  diffda::PlotSpec spread_spec;
  spread_spec.title = "Ensemble spread";
  spread_spec.x_label = "assimilation cycle";
  spread_spec.y_label = "spread (rms std)";
  spread_spec.series = metric_series(metrics, "filter", "spread");

  const std::string base_path = out_dir + "/metrics_unconditional.csv";
  if (std::filesystem::exists(base_path)) {
    const diffda::Table base = diffda::read_table(base_path);
    for (auto& s : metric_series(base, "unconditional", "skill"))
      skill_spec.series.push_back(std::move(s));
    for (auto& s : metric_series(base, "unconditional", "spread"))
      spread_spec.series.push_back(std::move(s));
    inputs.push_back(base_path);
  }

  diffda::write_svg(out_dir + "/skill.svg", skill_spec);
  diffda::write_svg(out_dir + "/spread.svg", spread_spec);
  outputs.push_back(out_dir + "/skill.svg");
  outputs.push_back(out_dir + "/spread.svg");

  const std::string ppc_path = out_dir + "/ppc.csv";
  if (std::filesystem::exists(ppc_path)) {
    const diffda::Csv ppc = diffda::read_csv(ppc_path);
    diffda::PlotSpec spec;
    spec.title = "Posterior predictive density";
    spec.x_label = "observed value";
    spec.y_label = "density";
    diffda::PlotSeries s;
    s.label = "predictive density";
    s.x = ppc.values.col(0);
    s.y = ppc.values.col(1);
    spec.series.push_back(std::move(s));
    spec.vlines.push_back(ppc.values(0, 2));
    diffda::write_svg(out_dir + "/ppc.svg", spec);
    inputs.push_back(ppc_path);
    outputs.push_back(out_dir + "/ppc.svg");
  }

  diffda::write_manifest(out_dir + "/manifest_plot.json", "plot", cfg.text(),
                         cfg.seed(), cfg.resolved_workers(), inputs, outputs);
  std::cout << "wrote " << outputs.size() << " plots to " << out_dir << "\n";
  return 0;
}

int cmd_print_config(const Flags& flags) {
  const diffda::Config cfg = flags.config_path.empty()
                                 ? diffda::Config::defaults()
                                 : diffda::Config::from_file(flags.config_path);
  std::cout << cfg.text();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"training-free data assimilation with diffusion emulators"};
  app.require_subcommand(1);
  Flags flags;

  CLI::App* generate = app.add_subcommand("generate", "simulate a twin dataset");
  add_common_flags(generate, flags);
  CLI::App* train = app.add_subcommand("train", "fit the denoiser to a dataset");
  add_common_flags(train, flags);
  CLI::App* assimilate = app.add_subcommand("assimilate", "run the particle filter");
  add_common_flags(assimilate, flags);
  assimilate->add_option("--denoiser", flags.denoiser,
                         "denoiser backend: analytic or mlp");
  assimilate->add_option("--baseline", flags.baseline,
                         "also run a baseline: none or unconditional");
  CLI::App* plot = app.add_subcommand("plot", "render metrics to svg");
  add_common_flags(plot, flags);
  CLI::App* print_config =
      app.add_subcommand("print-config", "print the resolved configuration");
  print_config->add_option("--config", flags.config_path, "configuration file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (generate->parsed()) return cmd_generate(flags);
    if (train->parsed()) return cmd_train(flags);
    if (assimilate->parsed()) return cmd_assimilate(flags);
    if (plot->parsed()) return cmd_plot(flags);
    if (print_config->parsed()) return cmd_print_config(flags);
  } catch (const diffda::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const diffda::MissingInputError& e) {
    std::cerr << "missing input: " << e.what() << "\n";
    return 3;
  } catch (const diffda::ShapeError& e) {
    std::cerr << "shape mismatch: " << e.what() << "\n";
    return 4;
  } catch (const diffda::EmptyInputError& e) {
    std::cerr << "empty input: " << e.what() << "\n";
    return 5;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
