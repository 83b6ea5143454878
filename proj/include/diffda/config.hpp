#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "diffda/dynamics.hpp"
#include "diffda/errors.hpp"
#include "diffda/filter.hpp"
#include "diffda/guidance.hpp"
#include "diffda/sampler.hpp"
#include "diffda/schedule.hpp"
#include "diffda/train.hpp"

namespace diffda {

// Canonical configuration: every key the toolkit understands, with its
// default. Loaded files may override values but not introduce new keys.
inline const char* default_config_text() {
  return R"(# diffda run configuration (print the defaults with `diffda print-config`)

[cli]
cycles = 40
seed = 1
workers = 0                # 0 uses all hardware threads
data_dir = data
out_dir = out
checkpoint = out/denoiser.ckpt

[dynamics]
kind = lorenz96            # lorenz96 | linear_gaussian
dim = 40
forcing = 8.0              # lorenz96 forcing F
dt = 0.01
cycle_length = 10          # integrator steps per assimilation cycle
spinup_steps = 1000
a_diag = 0.9               # linear_gaussian transition: a_diag I + a_shift cyclic shift
a_shift = 0.08
q = 0.01                   # linear_gaussian process-noise variance
obs_stride = 4             # observe every obs_stride-th coordinate
obs_offset = 0
obs_noise_std = 0.1

[schedule]
kind = ve                  # ve | vp
sigma_min = 0.02
sigma_max = 100.0
beta_min = 0.1             # vp only
beta_max = 20.0

[denoiser]
hidden = 128,128
epochs = 200
batch = 256
lr = 0.001
weight_decay = 0.001
lr_decay = 0.5
lr_decay_every = 90        # 0 keeps the learning rate constant
cond_noise = 0.15
holdout_fraction = 0.1

[sampler]
steps = 40
eta = 1.0
corrections = 2
correction_scale = 0.5
warping = geometric        # linear | geometric | poly7

[guidance]
solver = bicgstab          # bicgstab | cg
max_iters = 2
tol = 1e-8
variance_model = vjp       # vjp | scalar

[filter]
particles = 256
ess_min = 60
ess_max = 70
alpha_min = 1e-4
adapt_max_iters = 60
resampling = multinomial   # multinomial | systematic
mean_draws = 1
snapshot_every = 1         # 0 disables ensemble snapshots

[metrics]
ppc_row = 0                # observation row used for the predictive check
)";
}

class Config {
 public:
  static Config defaults() {
    Config cfg;
    cfg.parse(default_config_text(), /*allow_new=*/true);
    return cfg;
  }

  static Config from_text(const std::string& text) {
    Config cfg = defaults();
    cfg.parse(text, /*allow_new=*/false);
    return cfg;
  }

  static Config from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw MissingInputError("cannot open config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return from_text(buf.str());
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  const std::string& get_string(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key: " + key);
    return it->second;
  }

  double get_double(const std::string& key) const {
    const std::string& v = get_string(key);
    std::size_t pos = 0;
    double out;
    try {
      out = std::stod(v, &pos);
    } catch (const std::exception&) {
      throw ConfigError("config key " + key + " is not a number: " + v);
    }
    if (pos != v.size())
      throw ConfigError("config key " + key + " is not a number: " + v);
    return out;
  }

  long long get_int(const std::string& key) const {
    const std::string& v = get_string(key);
    std::size_t pos = 0;
    long long out;
    try {
      out = std::stoll(v, &pos);
    } catch (const std::exception&) {
      throw ConfigError("config key " + key + " is not an integer: " + v);
    }
    if (pos != v.size())
      throw ConfigError("config key " + key + " is not an integer: " + v);
    return out;
  }

  std::uint64_t get_seed(const std::string& key) const {
    const long long v = get_int(key);
    if (v < 0) throw ConfigError("config key " + key + " must be non-negative");
    return static_cast<std::uint64_t>(v);
  }

  void set(const std::string& key, const std::string& value) {
    if (values_.count(key) == 0) throw ConfigError("unknown config key: " + key);
    values_[key] = value;
  }

  // Canonical rendering: section order and key order of the defaults, with
  // current values.
  std::string text() const {
    std::ostringstream out;
    std::string section;
    for (const std::string& key : order_) {
      const std::string sec = key.substr(0, key.find('.'));
      if (sec != section) {
        if (!section.empty()) out << "\n";
        out << "[" << sec << "]\n";
        section = sec;
      }
      out << key.substr(sec.size() + 1) << " = " << values_.at(key) << "\n";
    }
    return out.str();
  }

  NoiseSchedule build_schedule() const {
    const std::string kind = get_string("schedule.kind");
    if (kind == "ve")
      return NoiseSchedule::variance_exploding(get_double("schedule.sigma_min"),
                                               get_double("schedule.sigma_max"));
    if (kind == "vp")
      return NoiseSchedule::variance_preserving(get_double("schedule.beta_min"),
                                                get_double("schedule.beta_max"));
    throw ConfigError("schedule.kind must be ve or vp, got: " + kind);
  }

  SamplerConfig build_sampler() const {
    SamplerConfig cfg;
    cfg.n_steps = checked_int("sampler.steps", 2, 100000);
    cfg.eta = get_double("sampler.eta");
    cfg.n_corrections = checked_int("sampler.corrections", 0, 1000);
    cfg.correction_scale = get_double("sampler.correction_scale");
    const std::string w = get_string("sampler.warping");
    if (w == "linear")
      cfg.warping = Warping::linear;
    else if (w == "geometric")
      cfg.warping = Warping::geometric;
    else if (w == "poly7")
      cfg.warping = Warping::poly7;
    else
      throw ConfigError("sampler.warping must be linear, geometric or poly7, got: " + w);
    return cfg;
  }

  GuidanceConfig build_guidance() const {
    GuidanceConfig cfg;
    const std::string s = get_string("guidance.solver");
    if (s == "bicgstab")
      cfg.solver = KrylovSolver::bicgstab;
    else if (s == "cg")
      cfg.solver = KrylovSolver::conjugate_gradient;
    else
      throw ConfigError("guidance.solver must be bicgstab or cg, got: " + s);
    cfg.max_iters = checked_int("guidance.max_iters", 1, 100000);
    cfg.tol = get_double("guidance.tol");
    const std::string v = get_string("guidance.variance_model");
    if (v == "vjp")
      cfg.variance_model = VarianceModel::tweedie_vjp;
    else if (v == "scalar")
      cfg.variance_model = VarianceModel::scalar_fallback;
    else
      throw ConfigError("guidance.variance_model must be vjp or scalar, got: " + v);
    return cfg;
  }

  FilterConfig build_filter() const {
    FilterConfig cfg;
    cfg.n_particles = checked_int("filter.particles", 1, 1 << 24);
    cfg.ess_min = get_double("filter.ess_min");
    cfg.ess_max = get_double("filter.ess_max");
    cfg.alpha_min = get_double("filter.alpha_min");
    cfg.adapt_max_iters = checked_int("filter.adapt_max_iters", 1, 100000);
    const std::string r = get_string("filter.resampling");
    if (r == "multinomial")
      cfg.resampling = Resampling::multinomial;
    else if (r == "systematic")
      cfg.resampling = Resampling::systematic;
    else
      throw ConfigError("filter.resampling must be multinomial or systematic, got: " + r);
    cfg.mean_draws = checked_int("filter.mean_draws", 1, 100000);
    cfg.snapshot_every = checked_int("filter.snapshot_every", 0, 1 << 24);
    cfg.seed = get_seed("cli.seed");
    cfg.workers = resolved_workers();
    return cfg;
  }

  TrainConfig build_train() const {
    TrainConfig cfg;
    cfg.epochs = checked_int("denoiser.epochs", 0, 1 << 24);
    cfg.batch = checked_int("denoiser.batch", 1, 1 << 24);
    cfg.lr = get_double("denoiser.lr");
    cfg.weight_decay = get_double("denoiser.weight_decay");
    cfg.lr_decay = get_double("denoiser.lr_decay");
    cfg.lr_decay_every = checked_int("denoiser.lr_decay_every", 0, 1 << 24);
    cfg.cond_noise = get_double("denoiser.cond_noise");
    cfg.holdout_fraction = get_double("denoiser.holdout_fraction");
    cfg.seed = get_seed("cli.seed");
    return cfg;
  }

  std::vector<int> hidden_widths() const {
    const std::string& v = get_string("denoiser.hidden");
    std::vector<int> widths;
    std::string item;
    std::istringstream in(v);
    while (std::getline(in, item, ',')) {
      try {
        widths.push_back(std::stoi(item));
      } catch (const std::exception&) {
        throw ConfigError("denoiser.hidden must be a comma list of widths, got: " + v);
      }
      if (widths.back() < 1)
        throw ConfigError("denoiser.hidden widths must be positive, got: " + v);
    }
    if (widths.empty()) throw ConfigError("denoiser.hidden must not be empty");
    return widths;
  }

  SystemModel build_system() const {
    const std::string kind = get_string("dynamics.kind");
    const int d = checked_int("dynamics.dim", 1, 1 << 20);
    if (kind == "lorenz96") {
      Lorenz96System sys;
      sys.dim = d;
      sys.forcing = get_double("dynamics.forcing");
      sys.dt = get_double("dynamics.dt");
      sys.cycle_length = checked_int("dynamics.cycle_length", 1, 1 << 20);
      return sys;
    }
    if (kind == "linear_gaussian") {
      Eigen::MatrixXd A =
          get_double("dynamics.a_diag") * Eigen::MatrixXd::Identity(d, d);
      const double shift = get_double("dynamics.a_shift");
      for (int i = 0; i < d; ++i) A(i, (i + 1) % d) += shift;
      const Eigen::MatrixXd Q =
          get_double("dynamics.q") * Eigen::MatrixXd::Identity(d, d);
      return LinearGaussianSSM(A, Q, Eigen::VectorXd::Zero(d));
    }
    throw ConfigError("dynamics.kind must be lorenz96 or linear_gaussian, got: " + kind);
  }

  ObservationModel build_observation() const {
    return ObservationModel::stride_mask(
        checked_int("dynamics.dim", 1, 1 << 20),
        checked_int("dynamics.obs_stride", 1, 1 << 20),
        get_double("dynamics.obs_noise_std"),
        checked_int("dynamics.obs_offset", 0, 1 << 20));
  }

  int spinup_steps() const { return checked_int("dynamics.spinup_steps", 0, 1 << 30); }
  int cycles() const { return checked_int("cli.cycles", 1, 1 << 30); }
  std::uint64_t seed() const { return get_seed("cli.seed"); }

  int resolved_workers() const {
    const int w = checked_int("cli.workers", 0, 4096);
    if (w > 0) return w;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? static_cast<int>(hw) : 1;
  }

 private:
  int checked_int(const std::string& key, long long lo, long long hi) const {
    const long long v = get_int(key);
    if (v < lo || v > hi)
      throw ConfigError("config key " + key + " out of range [" +
                        std::to_string(lo) + ", " + std::to_string(hi) + "]");
    return static_cast<int>(v);
  }

  static std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
  }

  void parse(const std::string& text, bool allow_new) {
    std::istringstream in(text);
    std::string line, section;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const std::size_t cut = line.find_first_of("#;");
      if (cut != std::string::npos) line = line.substr(0, cut);
      line = trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']')
          throw ConfigError("malformed section header at line " +
                            std::to_string(line_no));
        section = trim(line.substr(1, line.size() - 2));
        if (section.empty())
          throw ConfigError("empty section name at line " + std::to_string(line_no));
        continue;
      }
      const std::size_t eq = line.find('=');
      if (eq == std::string::npos)
        throw ConfigError("expected key = value at line " + std::to_string(line_no));
      const std::string name = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      if (name.empty())
        throw ConfigError("empty key name at line " + std::to_string(line_no));
      if (section.empty())
        throw ConfigError("key outside any section at line " + std::to_string(line_no));
      const std::string key = section + "." + name;
      if (values_.count(key) == 0) {
        if (!allow_new) throw ConfigError("unknown config key: " + key);
        order_.push_back(key);
      }
      values_[key] = value;
    }
  }

  std::map<std::string, std::string> values_;
  std::vector<std::string> order_;
};

}  // namespace diffda
