#include "acssm/config.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace acssm {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config: bad numeric value for " + key + ": '" + v + "'");
  }
}

int parse_int(const std::string& key, const std::string& v) {
  const double x = parse_double(key, v);
  const int i = static_cast<int>(x);
  if (static_cast<double>(i) != x)
    throw ConfigError("config: " + key + " must be an integer, got '" + v + "'");
  return i;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const std::uint64_t x = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config: bad seed value for " + key + ": '" + v + "'");
  }
}

std::string fmt(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

}  // namespace

std::string task_name(Task t) {
  switch (t) {
    case Task::kRegress: return "regress";
    case Task::kClassify: return "classify";
    case Task::kInterpolate: return "interpolate";
    case Task::kExtrapolate: return "extrapolate";
  }
  throw ConfigError("config: unknown task enum");
}

Task task_from_name(const std::string& s) {
  if (s == "regress") return Task::kRegress;
  if (s == "classify") return Task::kClassify;
  if (s == "interpolate") return Task::kInterpolate;
  if (s == "extrapolate") return Task::kExtrapolate;
  throw ConfigError("config: unknown task '" + s + "'");
}

std::string scheme_name(Scheme s) {
  return s == Scheme::kHistory ? "history" : "full";
}

Scheme scheme_from_name(const std::string& s) {
  if (s == "history") return Scheme::kHistory;
  if (s == "full") return Scheme::kFull;
  throw ConfigError("config: unknown scheme '" + s + "'");
}

RunConfig RunConfig::parse_string(const std::string& text) {
  RunConfig rc;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("config: malformed section at line " + std::to_string(lineno));
      section = trim(line.substr(1, line.size() - 2));
      if (section != "data" && section != "model" && section != "train" &&
          section != "task")
        throw ConfigError("config: unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: expected key=value at line " + std::to_string(lineno));
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (section.empty())
      throw ConfigError("config: key '" + key + "' outside any section");
    const std::string qual = section + "." + key;

    if (section == "data") {
      auto& d = rc.data;
      if (key == "generator") {
        if (val != "lg" && val != "pendulum")
          throw ConfigError("config: unknown generator '" + val + "'");
        d.generator = val;
      } else if (key == "n_sequences") d.n_sequences = parse_int(qual, val);
      else if (key == "train_frac") d.train_frac = parse_double(qual, val);
      else if (key == "val_frac") d.val_frac = parse_double(qual, val);
      else if (key == "keep_fraction") d.keep_fraction = parse_double(qual, val);
      else if (key == "drop_fraction") d.drop_fraction = parse_double(qual, val);
      else if (key == "extrapolate_from") d.extrapolate_from = parse_double(qual, val);
      else if (key == "seed") d.seed = parse_u64(qual, val);
      else if (key == "n_timestamps") d.n_timestamps = parse_int(qual, val);
      else if (key == "lattice") d.lattice = parse_int(qual, val);
      else if (key == "horizon") d.horizon = parse_double(qual, val);
      else if (key == "noise_std") d.noise_std = parse_double(qual, val);
      else if (key == "gamma") d.gamma = parse_double(qual, val);
      else if (key == "lg_dim") d.lg_dim = parse_int(qual, val);
      else if (key == "lg_k") d.lg_k = parse_int(qual, val);
      else if (key == "lg_sigma") d.lg_sigma = parse_double(qual, val);
      else if (key == "lg_obs_noise") d.lg_obs_noise = parse_double(qual, val);
      else if (key == "lg_horizon") d.lg_horizon = parse_double(qual, val);
      else throw ConfigError("config: unknown key '" + qual + "'");
    } else if (section == "model") {
      auto& t = rc.train;
      if (key == "latent_dim") t.latent_dim = parse_int(qual, val);
      else if (key == "n_base") t.n_base = parse_int(qual, val);
      else if (key == "n_blocks") t.n_blocks = parse_int(qual, val);
      else if (key == "n_classes") t.n_classes = parse_int(qual, val);
      else if (key == "scheme") t.scheme = scheme_from_name(val);
      else if (key == "sigma_q") t.sigma_q = parse_double(qual, val);
      else if (key == "sigma_p") t.sigma_p = parse_double(qual, val);
      else if (key == "sigma_g") t.sigma_g = parse_double(qual, val);
      else if (key == "sigma") t.sigma = parse_double(qual, val);
      else if (key == "time_scale") t.time_scale = parse_double(qual, val);
      else if (key == "dropout") t.dropout = parse_double(qual, val);
      else throw ConfigError("config: unknown key '" + qual + "'");
    } else if (section == "train") {
      auto& t = rc.train;
      if (key == "learning_rate") t.learning_rate = parse_double(qual, val);
      else if (key == "final_learning_rate") t.final_learning_rate = parse_double(qual, val);
      else if (key == "epochs") t.epochs = parse_int(qual, val);
      else if (key == "batch_size") t.batch_size = parse_int(qual, val);
      else if (key == "weight_decay") t.weight_decay = parse_double(qual, val);
      else if (key == "grad_clip") t.grad_clip = parse_double(qual, val);
      else if (key == "n_elbo_samples") t.n_elbo_samples = parse_int(qual, val);
      else if (key == "seed") t.seed = parse_u64(qual, val);
      else if (key == "patience") t.patience = parse_int(qual, val);
      else throw ConfigError("config: unknown key '" + qual + "'");
    } else {  // task
      if (key == "task") rc.train.task = rc.task.task = task_from_name(val);
      else if (key == "n_paths") rc.task.n_paths = parse_int(qual, val);
      else throw ConfigError("config: unknown key '" + qual + "'");
    }
  }
  rc.validate();
  return rc;
}

RunConfig RunConfig::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_string(ss.str());
}

std::string RunConfig::serialize() const {
  std::ostringstream out;
  const auto& d = data;
  const auto& t = train;
  out << "[data]\n"
      << "generator = " << d.generator << "\n"
      << "n_sequences = " << d.n_sequences << "\n"
      << "train_frac = " << fmt(d.train_frac) << "\n"
      << "val_frac = " << fmt(d.val_frac) << "\n"
      << "keep_fraction = " << fmt(d.keep_fraction) << "\n"
      << "drop_fraction = " << fmt(d.drop_fraction) << "\n"
      << "extrapolate_from = " << fmt(d.extrapolate_from) << "\n"
      << "seed = " << d.seed << "\n"
      << "n_timestamps = " << d.n_timestamps << "\n"
      << "lattice = " << d.lattice << "\n"
      << "horizon = " << fmt(d.horizon) << "\n"
      << "noise_std = " << fmt(d.noise_std) << "\n"
      << "gamma = " << fmt(d.gamma) << "\n"
      << "lg_dim = " << d.lg_dim << "\n"
      << "lg_k = " << d.lg_k << "\n"
      << "lg_sigma = " << fmt(d.lg_sigma) << "\n"
      << "lg_obs_noise = " << fmt(d.lg_obs_noise) << "\n"
      << "lg_horizon = " << fmt(d.lg_horizon) << "\n\n"
      << "[model]\n"
      << "latent_dim = " << t.latent_dim << "\n"
      << "n_base = " << t.n_base << "\n"
      << "n_blocks = " << t.n_blocks << "\n"
      << "n_classes = " << t.n_classes << "\n"
      << "scheme = " << scheme_name(t.scheme) << "\n"
      << "sigma_q = " << fmt(t.sigma_q) << "\n"
      << "sigma_p = " << fmt(t.sigma_p) << "\n"
      << "sigma_g = " << fmt(t.sigma_g) << "\n"
      << "sigma = " << fmt(t.sigma) << "\n"
      << "time_scale = " << fmt(t.time_scale) << "\n"
      << "dropout = " << fmt(t.dropout) << "\n\n"
      << "[train]\n"
      << "learning_rate = " << fmt(t.learning_rate) << "\n"
      << "final_learning_rate = " << fmt(t.final_learning_rate) << "\n"
      << "epochs = " << t.epochs << "\n"
      << "batch_size = " << t.batch_size << "\n"
      << "weight_decay = " << fmt(t.weight_decay) << "\n"
      << "grad_clip = " << fmt(t.grad_clip) << "\n"
      << "n_elbo_samples = " << t.n_elbo_samples << "\n"
      << "seed = " << t.seed << "\n"
      << "patience = " << t.patience << "\n\n"
      << "[task]\n"
      << "task = " << task_name(task.task) << "\n"
      << "n_paths = " << task.n_paths << "\n";
  return out.str();
}

void RunConfig::validate() const {
  const auto& d = data;
  if (d.n_sequences < 1) throw ConfigError("config: data.n_sequences >= 1");
  if (!(d.train_frac > 0.0) || !(d.val_frac >= 0.0) ||
      !(d.train_frac + d.val_frac <= 1.0))
    throw ConfigError("config: invalid train/val fractions");
  if (!(d.keep_fraction > 0.0 && d.keep_fraction <= 1.0))
    throw ConfigError("config: data.keep_fraction in (0, 1]");
  if (!(d.drop_fraction >= 0.0 && d.drop_fraction < 1.0))
    throw ConfigError("config: data.drop_fraction in [0, 1)");
  if (d.generator == "pendulum") {
    if (d.n_timestamps < 1 || d.lattice < d.n_timestamps || !(d.horizon > 0.0))
      throw ConfigError("config: bad pendulum lattice parameters");
  } else {
    if (d.lg_dim < 1 || d.lg_k < 2 || !(d.lg_sigma > 0.0) ||
        !(d.lg_obs_noise > 0.0) || !(d.lg_horizon > 0.0))
      throw ConfigError("config: bad lg system parameters");
  }
  if (task.n_paths < 1) throw ConfigError("config: task.n_paths >= 1");
  try {
    train.validate();
  } catch (const DomainError& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (task.task == Task::kExtrapolate && d.generator == "lg" &&
      d.extrapolate_from < 0.0)
    throw ConfigError("config: extrapolate task needs data.extrapolate_from >= 0");
}

LinearGaussianSSM canonicalize_system_impl(const DataConfig& dc) {
  RandomStream rng(dc.seed, 0xCA);
  const int d = dc.lg_dim;
  const int k = dc.lg_k;
  std::vector<double> times(static_cast<size_t>(k));
  for (int i = 0; i < k; ++i)
    times[static_cast<size_t>(i)] = dc.lg_horizon * i / (k - 1);
  MatrixXd skew(d, d);
  for (int r = 0; r < d; ++r)
    for (int c = 0; c < d; ++c) skew(r, c) = 0.5 * rng.gaussian();
  std::vector<VectorXd> spectra(static_cast<size_t>(k - 1));
  std::vector<VectorXd> betas(static_cast<size_t>(k - 1));
  for (int i = 0; i < k - 1; ++i) {
    VectorXd sp(d), be(d);
    for (int j = 0; j < d; ++j) {
      sp[j] = -0.5 + 0.5 * rng.gaussian();  // lambda = exp(.) + eps, O(0.6)
      be[j] = 0.5 * rng.gaussian();
    }
    spectra[static_cast<size_t>(i)] = sp;
    betas[static_cast<size_t>(i)] = be;
  }
  LinearGaussianSSM ssm;
  ssm.grid = TimeGrid(times);
  ssm.op = make_spd(skew, spectra);
  ssm.betas = betas;
  ssm.sigma = dc.lg_sigma;
  ssm.init.mean = VectorXd::Zero(d);
  ssm.init.cov = MatrixXd::Identity(d, d);
  ssm.validate();
  return ssm;
}

LinearGaussianSSM canonical_lg_system(const DataConfig& dc) {
  return canonicalize_system_impl(dc);
}

}  // namespace acssm
