#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "acssm/config.hpp"
#include "acssm/pscan.hpp"
#include "acssm/soc.hpp"

namespace {

using namespace acssm;
namespace fs = std::filesystem;

Dataset build_dataset(const RunConfig& rc) {
  RandomStream rng(rc.data.seed, 0xDA);
  std::vector<SequencePair> seqs;
  if (rc.data.generator == "pendulum") {
    PendulumParams p;
    p.n_timestamps = rc.data.n_timestamps;
    p.lattice = rc.data.lattice;
    p.horizon = rc.data.horizon;
    p.noise_std = rc.data.noise_std;
    p.drop_fraction = rc.data.drop_fraction;
    p.gamma = rc.data.gamma;
    seqs = gen_pendulum(p, rc.data.n_sequences, rng);
  } else {
    const LinearGaussianSSM ssm = canonical_lg_system(rc.data);
    seqs = gen_lg(ssm, rc.data.n_sequences, rc.data.keep_fraction,
                  rc.data.drop_fraction, rng, rc.data.extrapolate_from);
  }
  return split_dataset(std::move(seqs), rc.data.train_frac, rc.data.val_frac,
                       rc.data.generator, rc.data.seed);
}

// for the extrapolate task, score only timestamps after the cut
void restrict_targets_after(std::vector<SequencePair>& seqs, double cut) {
  for (auto& s : seqs)
    for (int i = 0; i < s.targets.grid.n_times(); ++i)
      if (s.targets.grid.time(i) <= cut) s.targets.mask.row(i).setConstant(false);
}

std::vector<ObservationSeq> pick_inputs(const std::vector<SequencePair>& seqs) {
  std::vector<ObservationSeq> out;
  out.reserve(seqs.size());
  for (const auto& s : seqs) out.push_back(s.inputs);
  return out;
}

void write_metrics(const std::string& path, const std::string& task_key,
                   const std::string& metric_key, double metric, int n_test,
                   std::uint64_t seed, double wall) {
  std::ofstream out(path);
  if (!out) throw DomainError("cannot open " + path);
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "{\"task\": \"%s\", \"%s\": %.17g, \"n_test\": %d, \"seed\": %llu, "
                "\"wall_seconds\": %.3f}\n",
                task_key.c_str(), metric_key.c_str(), metric, n_test,
                static_cast<unsigned long long>(seed), wall);
  out << buf;
}

void write_plot_svg(const std::string& path, const TimeGrid& grid,
                    const MatrixXd& pred, const MatrixXd& target) {
  const int w = 720, h = 240, pad = 30;
  double lo = std::min(pred.minCoeff(), target.minCoeff());
  double hi = std::max(pred.maxCoeff(), target.maxCoeff());
  if (hi - lo < 1e-12) hi = lo + 1.0;
  const double t0 = grid.time(0), t1 = grid.horizon();
  auto px = [&](double t) { return pad + (w - 2 * pad) * (t - t0) / (t1 - t0); };
  auto py = [&](double v) { return h - pad - (h - 2 * pad) * (v - lo) / (hi - lo); };
  std::ofstream out(path);
  if (!out) throw DomainError("cannot open " + path);
  out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w << "' height='" << h
      << "'>\n<rect width='100%' height='100%' fill='white'/>\n";
  const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};
  for (int j = 0; j < pred.cols(); ++j) {
    const char* c = colors[j % 4];
    for (int pass = 0; pass < 2; ++pass) {
      const MatrixXd& m = pass == 0 ? target : pred;
      out << "<polyline fill='none' stroke='" << c << "'"
          << (pass == 1 ? " stroke-dasharray='5,4'" : "") << " points='";
      for (int i = 0; i < grid.n_times(); ++i)
        out << px(grid.time(i)) << "," << py(m(i, j)) << " ";
      out << "'/>\n";
    }
  }
  out << "</svg>\n";
}

int cmd_generate(const RunConfig& rc, const std::string& out_dir) {
  fs::create_directories(out_dir);
  const Dataset ds = build_dataset(rc);
  auto dump = [&](const std::vector<SequencePair>& seqs, const std::string& split) {
    std::vector<ObservationSeq> in, tg;
    for (const auto& s : seqs) {
      in.push_back(s.inputs);
      tg.push_back(s.targets);
    }
    if (!in.empty()) {
      save_csv(out_dir + "/" + split + "_inputs.csv", in);
      save_csv(out_dir + "/" + split + "_targets.csv", tg);
    }
  };
  dump(ds.train, "train");
  dump(ds.val, "val");
  dump(ds.test, "test");
  std::cout << "generated " << ds.train.size() << "/" << ds.val.size() << "/"
            << ds.test.size() << " train/val/test sequences in " << out_dir << "\n";
  return 0;
}

int cmd_train(const RunConfig& rc, const std::string& out_dir) {
  fs::create_directories(out_dir);
  const Dataset ds = build_dataset(rc);
  const TrainResult res = train(ds, rc.train);
  save_checkpoint(res.model, out_dir + "/checkpoint.txt");
  write_history_csv(out_dir + "/history.csv", res.history);
  {
    std::ofstream cfg(out_dir + "/config.resolved");
    cfg << rc.serialize();
  }
  std::cout << "trained " << res.history.size() << " epochs; best epoch "
            << res.best_epoch << ", best val metric " << res.best_val
            << (res.diverged ? " (diverged, best weights kept)" : "") << "\n";
  return res.diverged ? 1 : 0;
}

int cmd_infer(const RunConfig& rc, const std::string& checkpoint,
              const std::string& data_csv, const std::string& out_dir, bool plot) {
  const auto t_start = std::chrono::steady_clock::now();
  fs::create_directories(out_dir);

  std::vector<SequencePair> test;
  if (!data_csv.empty()) {
    for (auto& seq : load_csv(data_csv, 0.01)) {
      SequencePair p;
      p.inputs = seq;
      p.targets = seq;  // score on the observed cells of the provided data
      test.push_back(std::move(p));
    }
  } else {
    test = build_dataset(rc).test;
  }
  if (test.empty()) throw DomainError("infer: no test sequences");
  if (rc.task.task == Task::kExtrapolate && rc.data.extrapolate_from >= 0.0)
    restrict_targets_after(test, rc.data.extrapolate_from);

  AcssmModel model =
      AcssmModel::create(rc.train.assimilation(test[0].inputs.obs_dim()), rc.train.seed);
  load_checkpoint(model, checkpoint);

  RandomStream rng(rc.train.seed, 0x1F);
  std::vector<ObservationSeq> preds;
  double metric_sum = 0.0;
  for (size_t s = 0; s < test.size(); ++s) {
    MatrixXd pred;
    if (rc.task.n_paths == 1) {
      pred = infer_mean(model, test[s].inputs);
    } else {
      RandomStream sr = rng.split(static_cast<std::uint64_t>(s));
      pred = infer(model, test[s].inputs, rc.task.n_paths, sr).mean;
    }
    metric_sum += metrics(pred, test[s].targets.values, test[s].targets.mask,
                          rc.task.task);
    ObservationSeq p;
    p.grid = test[s].inputs.grid;
    p.values = pred;
    p.mask.setConstant(pred.rows(), pred.cols(), true);
    p.obs_noise = VectorXd::Ones(pred.cols());
    if (plot && s < 3 && rc.task.task != Task::kClassify)
      write_plot_svg(out_dir + "/plot_" + std::to_string(s) + ".svg",
                     test[s].inputs.grid, pred, test[s].targets.values);
    preds.push_back(std::move(p));
  }
  save_csv(out_dir + "/predictions.csv", preds);

  const double metric = metric_sum / static_cast<double>(test.size());
  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  const bool classify = rc.task.task == Task::kClassify;
  write_metrics(out_dir + "/metrics.txt", task_name(rc.task.task),
                classify ? "accuracy" : "mse", metric,
                static_cast<int>(test.size()), rc.train.seed, wall);
  std::cout << (classify ? "accuracy " : "mse ") << metric << " over " << test.size()
            << " test sequences\n";
  return 0;
}

struct Check {
  std::string name;
  bool pass;
  std::string detail;
};

// draw one observation sequence from the system's prior (exact transitions)
ObservationSeq sample_observations(const LinearGaussianSSM& ssm, double obs_var,
                                   RandomStream& rng) {
  const int d = ssm.dim();
  const int n = ssm.grid.n_times();
  ObservationSeq obs;
  obs.grid = ssm.grid;
  obs.values.resize(n, d);
  obs.mask.setConstant(n, d, true);
  obs.obs_noise = VectorXd::Constant(d, obs_var);
  VectorXd x = sample_gaussian(ssm.init, rng);
  for (int i = 0; i < n; ++i) {
    if (i > 0) {
      MatrixXd F, Q;
      VectorXd u;
      ssm.transition(i - 1, ssm.grid.delta(i - 1), F, u, Q);
      GaussianState step{F * x + u, Q};
      x = sample_gaussian(step, rng);
    }
    for (int j = 0; j < d; ++j)
      obs.values(i, j) = x[j] + std::sqrt(obs_var) * rng.gaussian();
  }
  return obs;
}

int cmd_oracle(const RunConfig& rc, bool quick, bool corrupt_h) {
  std::vector<Check> checks;
  char buf[256];
  RandomStream rng(rc.data.seed, 0x0C);

  // 1. parallel scan vs sequential fold
  {
    RandomStream sr = rng.split(1);
    bool ok = true;
    double worst = 0.0;
    for (int K : {1, 3, 64, 1000}) {
      std::vector<ScanElement> elems;
      for (int i = 0; i < K; ++i) {
        ScanElement e;
        e.scale = VectorXd::NullaryExpr(8, [&](int) { return std::exp(-sr.uniform()); });
        e.offset = VectorXd::NullaryExpr(8, [&](int) { return sr.gaussian(); });
        elems.push_back(e);
      }
      auto seq = sequential_scan(elems);
      auto par = parallel_scan(elems, 2);
      for (int i = 0; i < K; ++i) {
        worst = std::max(worst, (seq[i].offset - par[i].offset).cwiseAbs().maxCoeff());
        worst = std::max(worst, (seq[i].scale - par[i].scale).cwiseAbs().maxCoeff());
      }
    }
    ok = worst <= 1e-9;
    std::snprintf(buf, sizeof(buf), "max abs dev %.2e (tol 1e-9)", worst);
    checks.push_back({"scan-vs-fold", ok, buf});
  }

  const LinearGaussianSSM ssm = canonical_lg_system(rc.data);
  RandomStream obs_rng = rng.split(2);
  const ObservationSeq obs =
      sample_observations(ssm, rc.data.lg_obs_noise, obs_rng);
  const KalmanResult kf = kalman_filter(ssm, obs);
  const HQuadratic h = h_function(ssm, obs);

  // 2. normalized potentials: E_P[prod_i f_i] = 1 on exact prior paths
  {
    const int n_mc = quick ? 2000 : 20000;
    RandomStream sr = rng.split(3);
    double sum = 0.0, sumsq = 0.0;
    for (int p = 0; p < n_mc; ++p) {
      RandomStream pr = sr.split(static_cast<std::uint64_t>(p));
      VectorXd x = sample_gaussian(ssm.init, pr);
      double log_f = 0.0;
      for (int i = 0; i < ssm.grid.n_times(); ++i) {
        if (i > 0) {
          MatrixXd F, Q;
          VectorXd u;
          ssm.transition(i - 1, ssm.grid.delta(i - 1), F, u, Q);
          GaussianState step{F * x + u, Q};
          x = sample_gaussian(step, pr);
        }
        for (int j = 0; j < ssm.dim(); ++j) {
          const double r = obs.obs_noise[j];
          const double e = obs.values(i, j) - x[j];
          log_f += -0.5 * e * e / r - 0.5 * std::log(2.0 * M_PI * r);
        }
        log_f -= kf.log_normalizers[static_cast<size_t>(i)];
      }
      const double f = std::exp(log_f);
      sum += f;
      sumsq += f * f;
    }
    const double mean = sum / n_mc;
    const double se = std::sqrt(std::max(0.0, sumsq / n_mc - mean * mean) / n_mc);
    const double tol = quick ? 5.0 : 4.0;
    const bool ok = std::abs(mean - 1.0) <= tol * std::max(se, 1e-12);
    std::snprintf(buf, sizeof(buf), "E[prod f] = %.4f +- %.4f (want 1 within %g SE)",
                  mean, se, tol);
    checks.push_back({"potential-normalization", ok, buf});
  }

  // 3. conditioned SDE vs RTS smoother marginals
  {
    const int n_paths = quick ? 4000 : 20000;
    const int substeps = quick ? 40 : 80;
    const auto times = refine_times(ssm.grid, substeps);
    const auto rec = grid_indices(ssm.grid, substeps);
    RandomStream sr = rng.split(4);
    std::vector<MatrixXd> recs;
    if (corrupt_h) {
      auto bad = [&](double t, const VectorXd& x) {
        VectorXd v = conditioned_drift(ssm, h, t, x);
        v.array() += 0.5;  // fault injection: biased h-gradient
        return v;
      };
      recs = simulate_sde(times, bad, ssm.sigma, h.initial_law(), rec, sr, n_paths);
    } else {
      std::vector<AffineDrift> drifts;
      for (size_t nidx = 0; nidx + 1 < times.size(); ++nidx)
        drifts.push_back(conditioned_affine_drift(ssm, h, times[nidx]));
      recs = simulate_affine_sde(times, drifts, ssm.sigma, h.initial_law(), rec, sr,
                                 n_paths);
    }
    const auto smooth = rts_smoother(ssm, obs);
    double worst_mean_se = 0.0, worst_var_rel = 0.0;
    for (int i = 0; i < ssm.grid.n_times(); ++i) {
      const MatrixXd& xs = recs[static_cast<size_t>(i)];
      for (int j = 0; j < ssm.dim(); ++j) {
        const double m = xs.col(j).mean();
        const double v =
            (xs.col(j).array() - m).square().sum() / (xs.rows() - 1);
        const double se = std::sqrt(v / xs.rows());
        const auto& s = smooth[static_cast<size_t>(i)];
        worst_mean_se = std::max(worst_mean_se, std::abs(m - s.mean[j]) / se);
        worst_var_rel =
            std::max(worst_var_rel, std::abs(v - s.cov(j, j)) / s.cov(j, j));
      }
    }
    const double tol_se = quick ? 5.0 : 4.0;
    const double tol_var = quick ? 0.20 : 0.10;
    const bool ok = worst_mean_se <= tol_se && worst_var_rel <= tol_var;
    std::snprintf(buf, sizeof(buf),
                  "max mean dev %.2f SE (tol %g), max var rel dev %.1f%% (tol %g%%)",
                  worst_mean_se, tol_se, 100 * worst_var_rel, 100 * tol_var);
    checks.push_back({"bridge-vs-smoother", ok, buf});
  }

  // 4. SOC bound: gap >= 0 for a random control, ~0 for the oracle control
  {
    LinearGaussianSSM unit = ssm;
    unit.sigma = 1.0;  // unit-diffusion convention of the SOC cost
    RandomStream obs2_rng = rng.split(5);
    ObservationSeq obs2 = sample_observations(unit, rc.data.lg_obs_noise, obs2_rng);
    RandomStream sr = rng.split(6);
    PiecewiseControl ctrl = unit.prior_control();
    for (auto& a : ctrl.offsets)
      a += VectorXd::NullaryExpr(a.size(), [&](int) { return 0.5 * sr.gaussian(); });
    const int n_mc = quick ? 5000 : 50000;
    auto [gap, se] = bound_gap(unit.init, ctrl, unit, obs2, n_mc, sr);
    const bool ok1 = gap >= -3.0 * se;

    LinearGaussianSSM point = unit;
    point.init.cov.setZero();  // mu*_0 = mu_0: the bound is tight exactly
    RandomStream obs3_rng = rng.split(7);
    ObservationSeq obs3 = sample_observations(point, rc.data.lg_obs_noise, obs3_rng);
    const KalmanResult kf3 = kalman_filter(point, obs3);
    const HQuadratic h3 = h_function(point, obs3);
    RandomStream sr2 = rng.split(8);
    const ElboEstimate opt =
        elbo_oracle_control(point, h3, obs3, quick ? 2000 : 10000, quick ? 30 : 60, sr2);
    const double tight_gap = opt.value + kf3.log_evidence;
    const bool ok2 = std::abs(tight_gap) <=
                     std::max(0.02 * std::abs(kf3.log_evidence), 3.0 * opt.std_error);
    std::snprintf(buf, sizeof(buf),
                  "random-control gap %.4f +- %.4f (>= 0); optimal gap %.4f +- %.4f "
                  "(logZ %.3f)",
                  gap, se, tight_gap, opt.std_error, kf3.log_evidence);
    checks.push_back({"bound-and-tightness", ok1 && ok2, buf});
  }

  // 5. Hopf-Cole / HJB residual convergence on a 1D instance
  {
    DataConfig d1 = rc.data;
    d1.lg_dim = 1;
    d1.lg_k = std::min(d1.lg_k, 4);
    const LinearGaussianSSM ssm1 = canonical_lg_system(d1);
    RandomStream or1 = rng.split(9);
    const ObservationSeq obs1 = sample_observations(ssm1, d1.lg_obs_noise, or1);
    const double base = ssm1.grid.delta(0) / 16.0;
    const ResidualReport rep = hjb_residual_check(ssm1, obs1, base, 4);
    bool ok = true;
    std::ostringstream ratios;
    for (size_t l = 0; l + 1 < rep.h_residual.size(); ++l) {
      const double rh = rep.h_residual[l] / rep.h_residual[l + 1];
      const double rv = rep.hjb_residual[l] / rep.hjb_residual[l + 1];
      if (l + 2 == rep.h_residual.size()) {  // finest pair, least noise-limited
        ok = ok && rh > 3.0 && rh < 5.5 && rv > 3.0 && rv < 5.5;
      }
      ratios << " (" << std::round(rh * 100) / 100 << "," << std::round(rv * 100) / 100
             << ")";
    }
    checks.push_back({"hjb-residual-convergence", ok,
                      "halving ratios (h,V):" + ratios.str() + " want ~4"});
  }

  bool all = true;
  for (const auto& c : checks) {
    std::cout << (c.pass ? "[PASS] " : "[FAIL] ") << c.name << ": " << c.detail << "\n";
    all = all && c.pass;
  }
  std::cout << (all ? "oracle suite: all checks passed\n"
                    : "oracle suite: FAILURES present\n");
  return all ? 0 : 1;
}

int cmd_bench(const std::string& k_list, int d, const std::string& workers_list,
              const std::string& out_path) {
  auto parse_list = [](const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ','))
      if (!tok.empty()) out.push_back(std::stoi(tok));
    return out;
  };
  const std::vector<int> Ks = parse_list(k_list);
  const std::vector<int> Ws = parse_list(workers_list);
  std::ofstream out(out_path);
  if (!out) throw DomainError("cannot open " + out_path);
  out << "K,d,workers,sequential_ns,parallel_ns,combine_depth\n";
  RandomStream rng(42, 0xBE);
  for (int K : Ks) {
    std::vector<ScanElement> elems;
    elems.reserve(static_cast<size_t>(K));
    for (int i = 0; i < K; ++i) {
      ScanElement e;
      e.scale = VectorXd::NullaryExpr(d, [&](int) { return std::exp(-rng.uniform()); });
      e.offset = VectorXd::NullaryExpr(d, [&](int) { return rng.gaussian(); });
      elems.push_back(e);
    }
    const auto ref = sequential_scan(elems);
    for (int w : Ws) {
      int depth = 0;
      const auto par = parallel_scan(elems, w, &depth);
      for (int i = 0; i < K; ++i) {
        const double dev =
            std::max((ref[i].scale - par[i].scale).cwiseAbs().maxCoeff(),
                     (ref[i].offset - par[i].offset).cwiseAbs().maxCoeff());
        if (dev > 1e-9) throw DomainError("bench: scan/fold mismatch");
      }
      auto time_ns = [&](auto&& fn) {
        long best = -1;
        for (int rep = 0; rep < 3; ++rep) {
          const auto a = std::chrono::steady_clock::now();
          fn();
          const auto b = std::chrono::steady_clock::now();
          const long ns =
              std::chrono::duration_cast<std::chrono::nanoseconds>(b - a).count();
          if (best < 0 || ns < best) best = ns;
        }
        return best;
      };
      const long seq_ns = time_ns([&] { (void)sequential_scan(elems); });
      const long par_ns = time_ns([&] { (void)parallel_scan(elems, w); });
      out << K << "," << d << "," << w << "," << seq_ns << "," << par_ns << ","
          << depth << "\n";
    }
  }
  std::cout << "bench written to " << out_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"continuous-discrete state-space toolkit"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "out", checkpoint, data_csv;
  bool plot = false, quick = false, corrupt_h = false;
  std::uint64_t seed_override = 0;
  bool seed_set = false;

  auto* gen = app.add_subcommand("generate", "generate a dataset to CSV files");
  gen->add_option("--config", config_path, "config file")->required();
  gen->add_option("--out", out_dir, "output directory");

  auto* tr = app.add_subcommand("train", "train a model from a config");
  tr->add_option("--config", config_path, "config file")->required();
  tr->add_option("--out", out_dir, "output directory");

  auto* in = app.add_subcommand("infer", "run inference with a checkpoint");
  in->add_option("--config", config_path, "config file")->required();
  in->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  in->add_option("--data", data_csv, "optional input CSV (defaults to the test split)");
  in->add_option("--out", out_dir, "output directory");
  in->add_flag("--plot", plot, "emit SVG line plots of predictions vs targets");

  auto* orc = app.add_subcommand("oracle", "run the verification suite on an LG preset");
  orc->add_option("--config", config_path, "config file")->required();
  orc->add_flag("--quick", quick, "reduced sample counts, wider tolerances");
  orc->add_flag("--corrupt-h", corrupt_h,
                "fault-injection hook: bias the conditioned drift");

  std::string k_list = "64,1024,4096,65536", workers_list = "1,2,4";
  int bench_d = 16;
  std::string bench_out = "bench.csv";
  auto* be = app.add_subcommand("bench", "benchmark the parallel scan");
  be->add_option("--K", k_list, "comma-separated element counts");
  be->add_option("--d", bench_d, "element dimension");
  be->add_option("--workers", workers_list, "comma-separated worker counts");
  be->add_option("--out", bench_out, "output CSV path");

  for (auto* sc : {gen, tr, in, orc})
    sc->add_option("--seed", seed_override, "override both data and train seeds")
        ->each([&](const std::string&) { seed_set = true; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (be->parsed()) return cmd_bench(k_list, bench_d, workers_list, bench_out);
    RunConfig rc = RunConfig::parse_file(config_path);
    if (seed_set) {
      rc.data.seed = seed_override;
      rc.train.seed = seed_override;
    }
    if (gen->parsed()) return cmd_generate(rc, out_dir);
    if (tr->parsed()) return cmd_train(rc, out_dir);
    if (in->parsed()) return cmd_infer(rc, checkpoint, data_csv, out_dir, plot);
    if (orc->parsed()) {
      if (rc.data.generator != "lg")
        throw ConfigError("oracle: requires an lg preset");
      return cmd_oracle(rc, quick, corrupt_h);
    }
    return 2;
  } catch (const acssm::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
