#include "acssm/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace acssm {

namespace {

// exact-count subset of {0..n-1} via Fisher-Yates prefix
std::vector<bool> pick_subset(int n, int count, RandomStream& rng) {
  std::vector<int> idx(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
  for (int i = 0; i < count; ++i) {
    const int j = i + static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(n - i));
    std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
  }
  std::vector<bool> keep(static_cast<size_t>(n), false);
  for (int i = 0; i < count; ++i) keep[static_cast<size_t>(idx[static_cast<size_t>(i)])] = true;
  return keep;
}

}  // namespace

std::vector<SequencePair> gen_lg(const LinearGaussianSSM& ssm, int n_sequences,
                                 double keep_fraction, double drop_fraction,
                                 RandomStream& rng, double extrapolate_from) {
  ssm.validate();
  if (n_sequences < 1) throw DomainError("gen_lg: n_sequences >= 1");
  if (!(keep_fraction > 0.0) || keep_fraction > 1.0)
    throw DomainError("gen_lg: keep_fraction in (0, 1]");
  const int n = ssm.grid.n_times();
  const int d = ssm.dim();
  const MatrixXd& E = ssm.op.basis();

  std::vector<SequencePair> out;
  out.reserve(static_cast<size_t>(n_sequences));
  for (int s = 0; s < n_sequences; ++s) {
    RandomStream stream = rng.split(static_cast<std::uint64_t>(s));
    // exact path sampling in the eigenbasis
    VectorXd x_hat = ssm.op.to_eigenbasis(sample_gaussian(ssm.init, stream));
    MatrixXd latents(n, d);
    latents.row(0) = (E * x_hat).transpose();
    for (int i = 0; i < ssm.grid.n_intervals(); ++i) {
      const VectorXd& lam = ssm.op.spectrum(i);
      const VectorXd b_hat = ssm.op.to_eigenbasis(ssm.betas[static_cast<size_t>(i)]);
      const double dt = ssm.grid.delta(i);
      for (int j = 0; j < d; ++j) {
        const double xj = lam[j] * dt;
        const double var = ssm.sigma * ssm.sigma * dt * phi1(2.0 * xj);
        x_hat[j] = std::exp(-xj) * x_hat[j] + phi1(xj) * dt * b_hat[j] +
                   std::sqrt(var) * stream.gaussian();
      }
      latents.row(i + 1) = (E * x_hat).transpose();
    }

    SequencePair pair;
    pair.targets.grid = ssm.grid;
    pair.targets.values = latents;
    pair.targets.mask.setConstant(n, d, true);
    pair.targets.obs_noise = VectorXd::Constant(d, 1e-6);

    pair.inputs.grid = ssm.grid;
    pair.inputs.obs_noise = VectorXd::Constant(d, 0.01);  // R = 0.1^2
    pair.inputs.values.resize(n, d);
    pair.inputs.mask.setConstant(n, d, false);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < d; ++j)
        pair.inputs.values(i, j) =
            latents(i, j) + std::sqrt(pair.inputs.obs_noise[j]) * stream.gaussian();

    std::vector<int> candidates;
    for (int i = 0; i < n; ++i)
      if (extrapolate_from < 0.0 || ssm.grid.time(i) <= extrapolate_from)
        candidates.push_back(i);
    const int n_keep = std::max(1, static_cast<int>(std::floor(
                               keep_fraction * static_cast<double>(candidates.size()))));
    std::vector<bool> keep = pick_subset(static_cast<int>(candidates.size()), n_keep, stream);
    for (size_t c = 0; c < candidates.size(); ++c) {
      if (!keep[c]) continue;
      const int i = candidates[c];
      for (int j = 0; j < d; ++j)
        pair.inputs.mask(i, j) = stream.uniform() >= drop_fraction;
    }
    out.push_back(std::move(pair));
  }
  return out;
}

std::vector<SequencePair> gen_pendulum(const PendulumParams& params, int n_sequences,
                                       RandomStream& rng) {
  if (n_sequences < 1) throw DomainError("gen_pendulum: n_sequences >= 1");
  if (params.n_timestamps < 1 || params.n_timestamps > params.lattice)
    throw DomainError("gen_pendulum: n_timestamps must be in [1, lattice]");
  const int fine_per_cell = 100;
  const double dt = params.horizon / (params.lattice * fine_per_cell);

  std::vector<SequencePair> out;
  out.reserve(static_cast<size_t>(n_sequences));
  for (int s = 0; s < n_sequences; ++s) {
    RandomStream stream = rng.split(static_cast<std::uint64_t>(s));
    double th = (2.0 * stream.uniform() - 1.0) * 1.5;
    double om = (2.0 * stream.uniform() - 1.0) * 1.0;

    // theta'' = -sin(theta) - gamma theta'  (g/l = 1), RK4
    auto acc = [&](double t_, double o_) { return -std::sin(t_) - params.gamma * o_; };
    MatrixXd lattice_clean(params.lattice, 2);
    for (int cell = 0; cell < params.lattice; ++cell) {
      for (int f = 0; f < fine_per_cell; ++f) {
        const double k1t = om, k1o = acc(th, om);
        const double k2t = om + 0.5 * dt * k1o, k2o = acc(th + 0.5 * dt * k1t, om + 0.5 * dt * k1o);
        const double k3t = om + 0.5 * dt * k2o, k3o = acc(th + 0.5 * dt * k2t, om + 0.5 * dt * k2o);
        const double k4t = om + dt * k3o, k4o = acc(th + dt * k3t, om + dt * k3o);
        th += dt / 6.0 * (k1t + 2.0 * k2t + 2.0 * k3t + k4t);
        om += dt / 6.0 * (k1o + 2.0 * k2o + 2.0 * k3o + k4o);
      }
      lattice_clean(cell, 0) = std::sin(th);
      lattice_clean(cell, 1) = std::cos(th);
    }

    std::vector<bool> chosen = pick_subset(params.lattice, params.n_timestamps, stream);
    std::vector<double> times;
    std::vector<int> cells;
    for (int cell = 0; cell < params.lattice; ++cell) {
      if (!chosen[static_cast<size_t>(cell)]) continue;
      times.push_back((cell + 1) * params.horizon / params.lattice);
      cells.push_back(cell);
    }
    const int n = static_cast<int>(times.size());

    SequencePair pair;
    pair.targets.grid = TimeGrid(times);
    pair.targets.values.resize(n, 2);
    pair.targets.mask.setConstant(n, 2, true);
    pair.targets.obs_noise = VectorXd::Constant(2, 1e-6);
    pair.inputs.grid = pair.targets.grid;
    pair.inputs.values.resize(n, 2);
    pair.inputs.mask.setConstant(n, 2, false);
    pair.inputs.obs_noise =
        VectorXd::Constant(2, params.noise_std * params.noise_std);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < 2; ++j) {
        pair.targets.values(i, j) = lattice_clean(cells[static_cast<size_t>(i)], j);
        pair.inputs.values(i, j) =
            pair.targets.values(i, j) + params.noise_std * stream.gaussian();
        pair.inputs.mask(i, j) = stream.uniform() >= params.drop_fraction;
      }
    }
    out.push_back(std::move(pair));
  }
  return out;
}

ObservationSeq subsample_irregular(const ObservationSeq& seq, double keep_fraction,
                                   double drop_fraction, RandomStream& rng) {
  seq.validate();
  if (!(keep_fraction > 0.0) || keep_fraction > 1.0)
    throw DomainError("subsample_irregular: keep_fraction in (0, 1]");
  const int n = seq.grid.n_times();
  const int n_keep = static_cast<int>(std::floor(keep_fraction * n));
  if (n_keep < 1) throw DomainError("subsample_irregular: all timestamps dropped");
  std::vector<bool> keep = pick_subset(n, n_keep, rng);

  std::vector<double> times;
  std::vector<int> rows;
  for (int i = 0; i < n; ++i)
    if (keep[static_cast<size_t>(i)]) {
      times.push_back(seq.grid.time(i));
      rows.push_back(i);
    }
  ObservationSeq out;
  out.grid = TimeGrid(times);
  out.obs_noise = seq.obs_noise;
  out.values.resize(n_keep, seq.obs_dim());
  out.mask.resize(n_keep, seq.obs_dim());
  for (int r = 0; r < n_keep; ++r)
    for (int j = 0; j < seq.obs_dim(); ++j) {
      out.values(r, j) = seq.values(rows[static_cast<size_t>(r)], j);
      out.mask(r, j) = seq.mask(rows[static_cast<size_t>(r)], j) &&
                       rng.uniform() >= drop_fraction;
    }
  return out;
}

Dataset split_dataset(std::vector<SequencePair> sequences, double train_frac,
                      double val_frac, const std::string& generator,
                      std::uint64_t seed) {
  const int n = static_cast<int>(sequences.size());
  if (!(train_frac > 0.0) || !(val_frac >= 0.0) || train_frac + val_frac > 1.0)
    throw DomainError("split_dataset: bad fractions");
  const int n_val = static_cast<int>(std::floor(val_frac * n));
  const int n_test = static_cast<int>(std::floor((1.0 - train_frac - val_frac) * n));
  const int n_train = n - n_val - n_test;  // rounding toward train
  Dataset ds;
  ds.generator = generator;
  ds.seed = seed;
  for (int i = 0; i < n; ++i) {
    if (i < n_train)
      ds.train.push_back(std::move(sequences[static_cast<size_t>(i)]));
    else if (i < n_train + n_val)
      ds.val.push_back(std::move(sequences[static_cast<size_t>(i)]));
    else
      ds.test.push_back(std::move(sequences[static_cast<size_t>(i)]));
  }
  return ds;
}

void save_csv(const std::string& path, const std::vector<ObservationSeq>& seqs) {
  if (seqs.empty()) throw DomainError("save_csv: no sequences");
  std::ofstream out(path);
  if (!out) throw DomainError("save_csv: cannot open " + path);
  const int m = seqs[0].obs_dim();
  out << "t";
  for (int j = 0; j < m; ++j) out << ",y" << j;
  for (int j = 0; j < m; ++j) out << ",mask" << j;
  out << "\n";
  char buf[64];
  for (size_t s = 0; s < seqs.size(); ++s) {
    const ObservationSeq& seq = seqs[s];
    if (seq.obs_dim() != m) throw DomainError("save_csv: inconsistent dimensions");
    if (s > 0) out << "\n";
    for (int i = 0; i < seq.grid.n_times(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.17g", seq.grid.time(i));
      out << buf;
      for (int j = 0; j < m; ++j) {
        std::snprintf(buf, sizeof(buf), "%.17g", seq.mask(i, j) ? seq.values(i, j) : 0.0);
        out << "," << buf;
      }
      for (int j = 0; j < m; ++j) out << "," << (seq.mask(i, j) ? 1 : 0);
      out << "\n";
    }
  }
  if (!out) throw DomainError("save_csv: write failed for " + path);
}

std::vector<ObservationSeq> load_csv(const std::string& path, double obs_noise_var) {
  std::ifstream in(path);
  if (!in) throw DomainError("load_csv: cannot open " + path);
  std::string header;
  if (!std::getline(in, header)) throw DomainError("load_csv: empty file");
  int m = 0;
  {
    std::stringstream hs(header);
    std::string col;
    std::vector<std::string> cols;
    while (std::getline(hs, col, ',')) cols.push_back(col);
    if (cols.empty() || cols[0] != "t" || (cols.size() - 1) % 2 != 0)
      throw DomainError("load_csv: malformed header");
    m = static_cast<int>((cols.size() - 1) / 2);
    for (int j = 0; j < m; ++j)
      if (cols[static_cast<size_t>(1 + j)] != "y" + std::to_string(j) ||
          cols[static_cast<size_t>(1 + m + j)] != "mask" + std::to_string(j))
        throw DomainError("load_csv: malformed header");
  }

  std::vector<ObservationSeq> out;
  std::vector<double> times;
  std::vector<std::vector<double>> vals;
  std::vector<std::vector<bool>> masks;
  auto flush = [&]() {
    if (times.empty()) return;
    ObservationSeq seq;
    seq.grid = TimeGrid(times);
    const int n = static_cast<int>(times.size());
    seq.values.resize(n, m);
    seq.mask.resize(n, m);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) {
        seq.values(i, j) = vals[static_cast<size_t>(i)][static_cast<size_t>(j)];
        seq.mask(i, j) = masks[static_cast<size_t>(i)][static_cast<size_t>(j)];
      }
    seq.obs_noise = VectorXd::Constant(m, obs_noise_var);
    seq.validate();
    out.push_back(std::move(seq));
    times.clear();
    vals.clear();
    masks.clear();
  };

  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) {
      flush();
      continue;
    }
    std::stringstream ls(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ls, field, ',')) fields.push_back(field);
    if (static_cast<int>(fields.size()) != 1 + 2 * m)
      throw DomainError("load_csv: wrong column count in row");
    size_t pos = 0;
    times.push_back(std::stod(fields[0], &pos));
    std::vector<double> v(static_cast<size_t>(m));
    std::vector<bool> mk(static_cast<size_t>(m));
    for (int j = 0; j < m; ++j) {
      v[static_cast<size_t>(j)] = std::stod(fields[static_cast<size_t>(1 + j)]);
      const std::string& ms = fields[static_cast<size_t>(1 + m + j)];
      if (ms != "0" && ms != "1") throw DomainError("load_csv: mask must be 0 or 1");
      mk[static_cast<size_t>(j)] = ms == "1";
    }
    vals.push_back(std::move(v));
    masks.push_back(std::move(mk));
  }
  flush();
  if (out.empty()) throw DomainError("load_csv: no sequences");
  return out;
}

BaselineResult baselines(const std::vector<SequencePair>& seqs) {
  if (seqs.empty()) throw DomainError("baselines: no sequences");
  double locf_sum = 0.0, mean_sum = 0.0;
  std::int64_t count = 0;
  for (const auto& pair : seqs) {
    const ObservationSeq& in = pair.inputs;
    const ObservationSeq& tg = pair.targets;
    if (in.grid.n_times() != tg.grid.n_times() || in.obs_dim() != tg.obs_dim())
      throw DomainError("baselines: input/target misalignment");
    const int n = in.grid.n_times();
    const int m = in.obs_dim();
    for (int j = 0; j < m; ++j) {
      double obs_sum = 0.0;
      int obs_n = 0;
      for (int i = 0; i < n; ++i)
        if (in.mask(i, j)) {
          obs_sum += in.values(i, j);
          ++obs_n;
        }
      const double mean_pred = obs_n > 0 ? obs_sum / obs_n : 0.0;
      for (int i = 0; i < n; ++i) {
        if (!tg.mask(i, j)) continue;
        // LOCF: last observed at or before i, else first observed after
        double locf = mean_pred;
        bool found = false;
        for (int r = i; r >= 0; --r)
          if (in.mask(r, j)) {
            locf = in.values(r, j);
            found = true;
            break;
          }
        if (!found)
          for (int r = i + 1; r < n; ++r)
            if (in.mask(r, j)) {
              locf = in.values(r, j);
              break;
            }
        const double y = tg.values(i, j);
        locf_sum += (y - locf) * (y - locf);
        mean_sum += (y - mean_pred) * (y - mean_pred);
        ++count;
      }
    }
  }
  if (count == 0) throw DomainError("baselines: no target cells");
  return {locf_sum / static_cast<double>(count), mean_sum / static_cast<double>(count)};
}

}  // namespace acssm
