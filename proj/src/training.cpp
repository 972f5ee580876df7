#include "acssm/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "acssm/pscan.hpp"

namespace acssm {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

struct ForwardContext {
  std::vector<int> observed_rows;
  std::vector<double> obs_times;
  Tensor z_obs;   // tokens after assimilation (n_obs x d)
  Tensor z_grid;  // nearest-past filled context (n_times x d)
  ControlTensors ct;
};

// shared front half of the pipeline: encode -> assimilate -> context -> control
ForwardContext run_context(const AcssmModel& model, const ObservationSeq& obs,
                           const Tensor& y_tokens, RandomStream* dropout_rng,
                           const std::vector<int>& observed_rows) {
  ForwardContext fc;
  fc.observed_rows = observed_rows;
  for (int r : observed_rows) fc.obs_times.push_back(obs.grid.time(r));
  fc.z_obs = assimilate(model, y_tokens, fc.obs_times, dropout_rng);
  fc.z_grid = gather_rows(fc.z_obs, nearest_past_map(obs.grid, observed_rows));
  fc.ct = control_from_context(model, fc.z_grid);
  return fc;
}

// differentiable per-interval moment recurrence (identity eigenbasis)
void moment_tensors(const AcssmModel& model, const TimeGrid& grid,
                    const ControlTensors& ct, Tensor& means, Tensor& vars) {
  const int d = model.cfg.latent_dim;
  const Tensor ones(MatrixXd::Ones(1, d));
  Tensor m = model.init_mean;
  Tensor v = exp_t(model.init_log_var);
  std::vector<Tensor> ms{m}, vs{v};
  const double s2 = model.cfg.sigma * model.cfg.sigma;
  for (int i = 0; i < grid.n_intervals(); ++i) {
    const double dt = grid.delta(i);
    Tensor lam = gather_rows(ct.lambda, {i});
    Tensor al = gather_rows(ct.alpha, {i});
    Tensor x = scale(lam, dt);
    Tensor a = exp_t(neg(x));
    Tensor phi = divide(sub(ones, a), x);  // (1 - e^{-x}) / x, x > 0
    m = add(mul(a, m), scale(mul(phi, al), dt));
    Tensor x2 = scale(lam, 2.0 * dt);
    Tensor a2 = exp_t(neg(x2));
    Tensor phi2 = divide(sub(ones, a2), x2);
    v = add(mul(a2, v), scale(phi2, s2 * dt));
    ms.push_back(m);
    vs.push_back(v);
  }
  means = concat_rows(ms);
  vars = concat_rows(vs);
}

MatrixXd gaussian_matrix(int rows, int cols, RandomStream& rng) {
  MatrixXd x(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) x(r, c) = rng.gaussian();
  return x;
}

GaussianState model_init_state(const AcssmModel& model) {
  GaussianState s;
  s.mean = model.init_mean.val().row(0).transpose();
  s.cov = model.init_log_var.val().row(0).array().exp().matrix().asDiagonal();
  return s;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !(final_learning_rate >= 0.0) || epochs < 1 ||
      batch_size < 1 || latent_dim < 1 || n_base < 1 || n_blocks < 1 ||
      n_elbo_samples < 1 || patience < 1)
    throw DomainError("TrainConfig: positive rates/counts required");
  if (final_learning_rate > 0.0 && !(learning_rate > 0.0))
    throw DomainError("TrainConfig: decay schedule needs learning_rate > 0");
  if (task == Task::kExtrapolate && scheme != Scheme::kHistory)
    throw DomainError("TrainConfig: extrapolation requires the history scheme");
  if (task == Task::kClassify && n_classes < 2)
    throw DomainError("TrainConfig: classify needs n_classes >= 2");
}

AssimilationConfig TrainConfig::assimilation(int obs_dim) const {
  AssimilationConfig a;
  a.scheme = scheme;
  a.obs_dim = obs_dim;
  a.latent_dim = latent_dim;
  a.n_base = n_base;
  a.n_blocks = n_blocks;
  a.n_classes = task == Task::kClassify ? n_classes : 0;
  a.sigma_q = sigma_q;
  a.sigma_p = sigma_p;
  a.sigma_g = sigma_g;
  a.sigma = sigma;
  a.time_scale = time_scale;
  a.dropout = dropout;
  return a;
}

ElboBreakdown amortized_elbo(const AcssmModel& model, const SequencePair& seq,
                             RandomStream& rng, Tensor* loss_out) {
  const ObservationSeq& obs = seq.inputs;
  const TimeGrid& grid = obs.grid;
  const int d = model.cfg.latent_dim;

  std::vector<int> observed_rows;
  const MatrixXd x_in = encoder_input(obs, observed_rows);
  Tensor y_mean = encode_mean(model, x_in);
  Tensor y = encode_sample(model, y_mean, rng);
  RandomStream drop_rng = rng.split(0xD0);
  ForwardContext fc = run_context(model, obs, y, model.cfg.dropout > 0.0 ? &drop_rng : nullptr,
                                  observed_rows);

  Tensor means, vars;
  moment_tensors(model, grid, fc.ct, means, vars);

  // latent path samples X ~ N(m, v) per timestamp (reparameterized)
  Tensor x_lat = add(means, mul(sqrt_t(vars), Tensor(gaussian_matrix(grid.n_times(), d, rng))));

  // potentials g_i = N(y_i; M m_i + z_i, sigma_g I) at observed timestamps
  const int n_obs = static_cast<int>(observed_rows.size());
  Tensor pred_y = add(matmul(gather_rows(means, observed_rows), model.M), fc.z_obs);
  Tensor nlp = scale(sum(square_t(sub(y, pred_y))), 1.0 / (2.0 * model.cfg.sigma_g));
  const double nlp_const =
      0.5 * n_obs * d * (kLog2Pi + std::log(model.cfg.sigma_g));

  // control energy sum_i dt_i / 2 ||alpha_i||^2 (exact, piecewise constant)
  Tensor cost;
  if (grid.n_intervals() > 0) {
    std::vector<int> ivals(static_cast<size_t>(grid.n_intervals()));
    MatrixXd half_dt(grid.n_intervals(), 1);
    for (int i = 0; i < grid.n_intervals(); ++i) {
      ivals[static_cast<size_t>(i)] = i;
      half_dt(i, 0) = 0.5 * grid.delta(i);
    }
    cost = sum(mul(sum_cols(square_t(gather_rows(fc.ct.alpha, ivals))), Tensor(half_dt)));
  } else {
    cost = Tensor(MatrixXd::Zero(1, 1));
  }

  // latent predictions y~ ~ g(. | X) and decoder likelihood on target cells
  Tensor y_til = add(add(matmul(x_lat, model.M), fc.z_grid),
                     Tensor(gaussian_matrix(grid.n_times(), d, rng) *
                            std::sqrt(model.cfg.sigma_g)));
  Tensor dec = decode_mean(model, y_til);

  const ObservationSeq& tgt = seq.targets;
  if (tgt.grid.n_times() != grid.n_times())
    throw DomainError("amortized_elbo: input/target grid mismatch");
  Tensor recon;
  double recon_const = 0.0;
  if (model.cfg.n_classes > 0) {
    MatrixXd onehot = MatrixXd::Zero(grid.n_times(), model.cfg.n_classes);
    for (int i = 0; i < grid.n_times(); ++i) {
      if (!tgt.mask(i, 0)) continue;
      const int label = static_cast<int>(tgt.values(i, 0));
      if (label < 0 || label >= model.cfg.n_classes)
        throw DomainError("amortized_elbo: label out of class range");
      onehot(i, label) = 1.0;
    }
    recon = neg(sum(mul(log_t(softmax_rows(dec, MatrixXd())), Tensor(onehot))));
  } else {
    MatrixXd tv = MatrixXd::Zero(grid.n_times(), tgt.obs_dim());
    MatrixXd tm = MatrixXd::Zero(grid.n_times(), tgt.obs_dim());
    int n_cells = 0;
    for (int i = 0; i < grid.n_times(); ++i)
      for (int j = 0; j < tgt.obs_dim(); ++j)
        if (tgt.mask(i, j)) {
          tv(i, j) = tgt.values(i, j);
          tm(i, j) = 1.0;
          ++n_cells;
        }
    recon = scale(sum(mul(square_t(sub(dec, Tensor(tv))), Tensor(tm))),
                  1.0 / (2.0 * model.cfg.sigma_p));
    recon_const = 0.5 * n_cells * (kLog2Pi + std::log(model.cfg.sigma_p));
  }

  Tensor loss = add_const(add(add(recon, cost), nlp), nlp_const + recon_const);
  if (!std::isfinite(loss.val()(0, 0))) throw DomainError("amortized_elbo: NaN loss");
  if (loss_out) *loss_out = loss;

  ElboBreakdown bd;
  bd.recon_nll = recon.val()(0, 0) + recon_const;
  bd.control_cost = cost.val()(0, 0);
  bd.neg_log_potential = nlp.val()(0, 0) + nlp_const;
  bd.loss = loss.val()(0, 0);
  return bd;
}

MatrixXd infer_mean(const AcssmModel& model, const ObservationSeq& obs) {
  std::vector<int> observed_rows;
  const MatrixXd x_in = encoder_input(obs, observed_rows);
  Tensor y_mean = encode_mean(model, x_in);
  ForwardContext fc = run_context(model, obs, y_mean, nullptr, observed_rows);

  MomentTrajectory traj;
  if (obs.grid.n_intervals() > 0) {
    PiecewiseControl pc = make_piecewise_control(model, fc.ct, obs.grid);
    traj = moments_via_scan(model_init_state(model), pc);
  }
  MatrixXd m_grid(obs.grid.n_times(), model.cfg.latent_dim);
  for (int i = 0; i < obs.grid.n_times(); ++i) {
    if (obs.grid.n_intervals() > 0)
      m_grid.row(i) = traj.states[static_cast<size_t>(i)].mean.transpose();
    else
      m_grid.row(i) = model.init_mean.val().row(0);
  }
  Tensor y_til = add(matmul(Tensor(m_grid), model.M), fc.z_grid);
  return decode_mean(model, y_til).val();
}

InferResult infer(const AcssmModel& model, const ObservationSeq& obs, int n_paths,
                  RandomStream& rng) {
  if (n_paths < 1) throw DomainError("infer: n_paths >= 1");
  std::vector<int> observed_rows;
  const MatrixXd x_in = encoder_input(obs, observed_rows);
  const int n = obs.grid.n_times();
  const int out_dim = model.cfg.n_classes > 0 ? model.cfg.n_classes : model.cfg.obs_dim;

  std::vector<MatrixXd> draws;
  draws.reserve(static_cast<size_t>(n_paths));
  for (int p = 0; p < n_paths; ++p) {
    RandomStream stream = rng.split(static_cast<std::uint64_t>(p));
    Tensor y = encode_sample(model, encode_mean(model, x_in), stream);
    ForwardContext fc = run_context(model, obs, y, nullptr, observed_rows);
    MatrixXd x_lat(n, model.cfg.latent_dim);
    if (obs.grid.n_intervals() > 0) {
      PiecewiseControl pc = make_piecewise_control(model, fc.ct, obs.grid);
      MomentTrajectory traj = moments_via_scan(model_init_state(model), pc);
      RandomStream draw = stream.split(1);
      x_lat = sample_marginals(traj, draw, 1)[0];
    } else {
      GaussianState s0 = model_init_state(model);
      for (int j = 0; j < model.cfg.latent_dim; ++j)
        x_lat(0, j) = s0.mean[j] + std::sqrt(s0.cov(j, j)) * stream.gaussian();
    }
    Tensor y_til =
        add(add(matmul(Tensor(x_lat), model.M), fc.z_grid),
            Tensor(gaussian_matrix(n, model.cfg.latent_dim, stream) *
                   std::sqrt(model.cfg.sigma_g)));
    draws.push_back(decode_mean(model, y_til).val());
  }

  InferResult res;
  res.mean = MatrixXd::Zero(n, out_dim);
  for (const auto& dmat : draws) res.mean += dmat;
  res.mean /= static_cast<double>(n_paths);
  res.q10.resize(n, out_dim);
  res.q90.resize(n, out_dim);
  std::vector<double> cell(static_cast<size_t>(n_paths));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < out_dim; ++j) {
      for (int p = 0; p < n_paths; ++p) cell[static_cast<size_t>(p)] = draws[static_cast<size_t>(p)](i, j);
      std::sort(cell.begin(), cell.end());
      res.q10(i, j) = cell[static_cast<size_t>((n_paths - 1) / 10)];
      res.q90(i, j) = cell[static_cast<size_t>((n_paths - 1) * 9 / 10)];
    }
  return res;
}

double metrics(const MatrixXd& predictions, const MatrixXd& targets,
               const Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>& mask,
               Task task) {
  if (task == Task::kClassify) {
    int correct = 0, total = 0;
    for (int i = 0; i < targets.rows(); ++i) {
      if (!mask.row(i).any()) continue;
      int argmax = 0;
      predictions.row(i).maxCoeff(&argmax);
      ++total;
      if (argmax == static_cast<int>(targets(i, 0))) ++correct;
    }
    if (total == 0) throw DomainError("metrics: empty mask");
    return static_cast<double>(correct) / total;
  }
  if (predictions.rows() != targets.rows() || predictions.cols() != targets.cols())
    throw DomainError("metrics: shape mismatch");
  double sum = 0.0;
  std::int64_t count = 0;
  for (int i = 0; i < targets.rows(); ++i)
    for (int j = 0; j < targets.cols(); ++j)
      if (mask(i, j)) {
        const double e = predictions(i, j) - targets(i, j);
        sum += e * e;
        ++count;
      }
  if (count == 0) throw DomainError("metrics: empty mask");
  return sum / static_cast<double>(count);
}

namespace {

double validation_score(const AcssmModel& model, const std::vector<SequencePair>& seqs,
                        Task task) {
  double acc = 0.0;
  for (const auto& seq : seqs) {
    const MatrixXd pred = infer_mean(model, seq.inputs);
    acc += metrics(pred, seq.targets.values, seq.targets.mask, task);
  }
  const double mean = acc / static_cast<double>(seqs.size());
  return task == Task::kClassify ? 1.0 - mean : mean;  // lower is better
}

}  // namespace

TrainResult train(const Dataset& ds, const TrainConfig& cfg) {
  cfg.validate();
  if (ds.train.empty()) throw DomainError("train: empty training split");
  const int obs_dim = ds.train[0].inputs.obs_dim();

  TrainResult res;
  res.model = AcssmModel::create(cfg.assimilation(obs_dim), cfg.seed);
  auto& params = res.model.ps.params();

  std::vector<MatrixXd> adam_m(params.size()), adam_v(params.size()), best(params.size());
  for (size_t i = 0; i < params.size(); ++i) {
    adam_m[i].setZero(params[i].t.rows(), params[i].t.cols());
    adam_v[i].setZero(params[i].t.rows(), params[i].t.cols());
    best[i] = params[i].t.val();
  }
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  std::int64_t step = 0;

  const int n_train = static_cast<int>(ds.train.size());
  std::vector<int> order(static_cast<size_t>(n_train));
  for (int i = 0; i < n_train; ++i) order[static_cast<size_t>(i)] = i;

  RandomStream shuffle_rng(cfg.seed, 0x5F);
  RandomStream elbo_rng(cfg.seed, 0xE1);
  res.best_val = 1e300;
  int since_best = 0;
  std::uint64_t sample_counter = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t_start = std::chrono::steady_clock::now();
    double lr = cfg.learning_rate;
    if (cfg.final_learning_rate > 0.0 && cfg.epochs > 1)
      lr *= std::pow(cfg.final_learning_rate / cfg.learning_rate,
                     static_cast<double>(epoch) / static_cast<double>(cfg.epochs - 1));
    RandomStream ep_rng = shuffle_rng.split(static_cast<std::uint64_t>(epoch));
    for (int i = n_train - 1; i > 0; --i) {
      const int j = static_cast<int>(ep_rng.next_u64() % static_cast<std::uint64_t>(i + 1));
      std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
    }

    double epoch_loss = 0.0;
    int epoch_count = 0;
    bool nan_hit = false;
    for (int at = 0; at < n_train && !nan_hit; at += cfg.batch_size) {
      const int nb = std::min(cfg.batch_size, n_train - at);
      for (auto& p : params) p.t.zero_grad();
      for (int b = 0; b < nb; ++b) {
        const SequencePair& seq = ds.train[static_cast<size_t>(order[static_cast<size_t>(at + b)])];
        for (int s = 0; s < cfg.n_elbo_samples; ++s) {
          RandomStream sr = elbo_rng.split(sample_counter++);
          Tensor loss;
          ElboBreakdown bd;
          try {
            bd = amortized_elbo(res.model, seq, sr, &loss);
          } catch (const DomainError&) {
            nan_hit = true;
            break;
          }
          backward(scale(loss, 1.0 / (nb * cfg.n_elbo_samples)));
          epoch_loss += bd.loss;
          ++epoch_count;
        }
        if (nan_hit) break;
      }
      if (nan_hit) break;

      // optional global-norm clipping, then Adam with L2 weight decay
      if (cfg.grad_clip > 0.0) {
        double norm2 = 0.0;
        for (const auto& p : params)
          if (p.t.grad().size() != 0) norm2 += p.t.grad().squaredNorm();
        const double norm = std::sqrt(norm2);
        if (norm > cfg.grad_clip) {
          const double f = cfg.grad_clip / norm;
          for (auto& p : params)
            if (p.t.grad().size() != 0) p.t.node()->grad *= f;
        }
      }
      ++step;
      const double bias1 = 1.0 - std::pow(b1, static_cast<double>(step));
      const double bias2 = 1.0 - std::pow(b2, static_cast<double>(step));
      for (size_t i = 0; i < params.size(); ++i) {
        MatrixXd g = params[i].t.grad().size() != 0
                         ? params[i].t.grad()
                         : MatrixXd::Zero(params[i].t.rows(), params[i].t.cols());
        if (cfg.weight_decay > 0.0) g += cfg.weight_decay * params[i].t.val();
        adam_m[i] = b1 * adam_m[i] + (1.0 - b1) * g;
        adam_v[i] = b2 * adam_v[i] + (1.0 - b2) * g.cwiseProduct(g);
        params[i].t.val() -=
            lr *
            (adam_m[i] / bias1)
                .cwiseQuotient(((adam_v[i] / bias2).cwiseSqrt().array() + eps).matrix());
      }
    }

    if (nan_hit || !std::isfinite(epoch_loss)) {
      for (size_t i = 0; i < params.size(); ++i) params[i].t.val() = best[i];
      res.diverged = true;
      break;
    }

    const std::vector<SequencePair>& val = ds.val.empty() ? ds.train : ds.val;
    const double score = validation_score(res.model, val, cfg.task);
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    res.history.push_back({epoch, epoch_loss / std::max(1, epoch_count), score, wall});

    if (score < res.best_val) {
      res.best_val = score;
      res.best_epoch = epoch;
      for (size_t i = 0; i < params.size(); ++i) best[i] = params[i].t.val();
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  for (size_t i = 0; i < params.size(); ++i) params[i].t.val() = best[i];
  return res;
}

void write_history_csv(const std::string& path, const std::vector<EpochLog>& history) {
  std::ofstream out(path);
  if (!out) throw DomainError("write_history_csv: cannot open " + path);
  out << "epoch,train_loss,val_metric,wall_seconds\n";
  char buf[128];
  for (const auto& h : history) {
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.3f\n", h.epoch, h.train_loss,
                  h.val_metric, h.wall_seconds);
    out << buf;
  }
}

}  // namespace acssm
