#include "acssm/nn.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace acssm {

namespace {

constexpr int kTimeFeatures = 7;
constexpr double kMaskNegInf = -1e30;

Tensor linear(const Tensor& x, const Tensor& W, const Tensor& b) {
  return add(matmul(x, W), b);
}

Tensor attention_block(const AcssmModel::Block& blk, const Tensor& x,
                       const MatrixXd& mask, double dropout, RandomStream* rng) {
  const int dm = x.cols();
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(dm));
  Tensor qn = layernorm_rows(x, blk.ln1_g, blk.ln1_b);
  Tensor Q = linear(qn, blk.Wq, blk.bq);
  Tensor K = linear(qn, blk.Wk, blk.bk);
  Tensor V = linear(qn, blk.Wv, blk.bv);
  Tensor scores = scale(matmul(Q, transpose(K)), inv_sqrt_d);
  Tensor attn = softmax_rows(scores, mask);
  if (dropout > 0.0 && rng) {
    MatrixXd keep(attn.rows(), attn.cols());
    for (int r = 0; r < attn.rows(); ++r)
      for (int c = 0; c < attn.cols(); ++c)
        keep(r, c) = rng->uniform() >= dropout ? 1.0 / (1.0 - dropout) : 0.0;
    attn = mul(attn, Tensor(keep));
  }
  Tensor ctx = layernorm_rows(matmul(attn, V), blk.ln2_g, blk.ln2_b);
  Tensor out = add(linear(ctx, blk.Wo, blk.bo), x);  // residual to the block input
  // FFN with residual
  Tensor f = layernorm_rows(out, blk.ffn_ln_g, blk.ffn_ln_b);
  f = linear(f, blk.ffn_W1, blk.ffn_b1);
  f = gelu_t(f);
  f = linear(f, blk.ffn_W2, blk.ffn_b2);
  return add(f, out);
}

}  // namespace

void AssimilationConfig::validate() const {
  if (obs_dim < 1 || latent_dim < 1 || n_base < 1 || n_blocks < 1)
    throw DomainError("AssimilationConfig: positive dimensions required");
  if (!(sigma_q > 0.0) || !(sigma_p > 0.0) || !(sigma_g > 0.0) || !(sigma > 0.0))
    throw DomainError("AssimilationConfig: variances must be positive");
  if (dropout < 0.0 || dropout >= 1.0) throw DomainError("AssimilationConfig: bad dropout");
}

Tensor ParamStore::add(const std::string& name, int rows, int cols,
                       double init_scale, RandomStream& rng) {
  MatrixXd v(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) v(r, c) = (2.0 * rng.uniform() - 1.0) * init_scale;
  Tensor t(v, /*requires_grad=*/true);
  params_.push_back({name, t});
  return t;
}

Tensor ParamStore::add_zeros(const std::string& name, int rows, int cols) {
  Tensor t(MatrixXd::Zero(rows, cols), /*requires_grad=*/true);
  params_.push_back({name, t});
  return t;
}

Tensor* ParamStore::find(const std::string& name) {
  for (auto& p : params_)
    if (p.name == name) return &p.t;
  return nullptr;
}

AcssmModel AcssmModel::create(const AssimilationConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  AcssmModel m;
  m.cfg = cfg;
  RandomStream rng(seed, /*stream_id=*/0xA11);
  const int d = cfg.latent_dim;
  const int in = 2 * cfg.obs_dim;
  auto fan = [](int n) { return 1.0 / std::sqrt(static_cast<double>(n)); };

  m.enc_W1 = m.ps.add("enc.W1", in, d, fan(in), rng);
  m.enc_b1 = m.ps.add_zeros("enc.b1", 1, d);
  m.enc_W2 = m.ps.add("enc.W2", d, d, fan(d), rng);
  m.enc_b2 = m.ps.add_zeros("enc.b2", 1, d);
  m.tok_Wy = m.ps.add("tok.Wy", d, d, fan(d), rng);
  m.tok_Wt = m.ps.add("tok.Wt", kTimeFeatures, d, fan(kTimeFeatures), rng);
  m.tok_b = m.ps.add_zeros("tok.b", 1, d);
  for (int b = 0; b < cfg.n_blocks; ++b) {
    Block blk;
    const std::string p = "block" + std::to_string(b) + ".";
    blk.ln1_g = m.ps.add_zeros(p + "ln1.g", 1, d);
    blk.ln1_g.val().setOnes();
    blk.ln1_b = m.ps.add_zeros(p + "ln1.b", 1, d);
    blk.Wq = m.ps.add(p + "Wq", d, d, fan(d), rng);
    blk.bq = m.ps.add_zeros(p + "bq", 1, d);
    blk.Wk = m.ps.add(p + "Wk", d, d, fan(d), rng);
    blk.bk = m.ps.add_zeros(p + "bk", 1, d);
    blk.Wv = m.ps.add(p + "Wv", d, d, fan(d), rng);
    blk.bv = m.ps.add_zeros(p + "bv", 1, d);
    blk.ln2_g = m.ps.add_zeros(p + "ln2.g", 1, d);
    blk.ln2_g.val().setOnes();
    blk.ln2_b = m.ps.add_zeros(p + "ln2.b", 1, d);
    blk.Wo = m.ps.add(p + "Wo", d, d, fan(d), rng);
    blk.bo = m.ps.add_zeros(p + "bo", 1, d);
    blk.ffn_ln_g = m.ps.add_zeros(p + "ffn.ln.g", 1, d);
    blk.ffn_ln_g.val().setOnes();
    blk.ffn_ln_b = m.ps.add_zeros(p + "ffn.ln.b", 1, d);
    blk.ffn_W1 = m.ps.add(p + "ffn.W1", d, d, fan(d), rng);
    blk.ffn_b1 = m.ps.add_zeros(p + "ffn.b1", 1, d);
    blk.ffn_W2 = m.ps.add(p + "ffn.W2", d, d, fan(d), rng);
    blk.ffn_b2 = m.ps.add_zeros(p + "ffn.b2", 1, d);
    m.blocks.push_back(blk);
  }
  m.gru_Wr = m.ps.add("gru.Wr", d, d, fan(d), rng);
  m.gru_Ur = m.ps.add("gru.Ur", d, d, fan(d), rng);
  m.gru_br = m.ps.add_zeros("gru.br", 1, d);
  m.gru_Wz = m.ps.add("gru.Wz", d, d, fan(d), rng);
  m.gru_Uz = m.ps.add("gru.Uz", d, d, fan(d), rng);
  m.gru_bz = m.ps.add_zeros("gru.bz", 1, d);
  m.gru_Wn = m.ps.add("gru.Wn", d, d, fan(d), rng);
  m.gru_Un = m.ps.add("gru.Un", d, d, fan(d), rng);
  m.gru_bn = m.ps.add_zeros("gru.bn", 1, d);
  // zero init: initial base-matrix weights are uniform
  m.f_W = m.ps.add_zeros("f.W", d, cfg.n_base);
  m.f_b = m.ps.add_zeros("f.b", 1, cfg.n_base);
  m.B = m.ps.add("B", d, d, fan(d), rng);
  m.M = m.ps.add("M", d, d, fan(d), rng);
  m.base_log_spectra = m.ps.add_zeros("base_log_spectra", cfg.n_base, d);
  m.init_mean = m.ps.add_zeros("init.mean", 1, d);
  m.init_log_var = m.ps.add_zeros("init.log_var", 1, d);
  const int out = cfg.n_classes > 0 ? cfg.n_classes : cfg.obs_dim;
  m.dec_W1 = m.ps.add("dec.W1", d, d, fan(d), rng);
  m.dec_b1 = m.ps.add_zeros("dec.b1", 1, d);
  m.dec_W2 = m.ps.add("dec.W2", d, out, fan(d), rng);
  m.dec_b2 = m.ps.add_zeros("dec.b2", 1, out);
  return m;
}

MatrixXd time_features(const std::vector<double>& times, double time_scale) {
  MatrixXd f(static_cast<int>(times.size()), kTimeFeatures);
  for (size_t i = 0; i < times.size(); ++i) {
    const double s = times[i] * time_scale;
    const int r = static_cast<int>(i);
    f(r, 0) = s;
    f(r, 1) = std::sin(s);
    f(r, 2) = std::cos(s);
    f(r, 3) = std::sin(2.0 * s);
    f(r, 4) = std::cos(2.0 * s);
    f(r, 5) = std::sin(4.0 * s);
    f(r, 6) = std::cos(4.0 * s);
  }
  return f;
}

MatrixXd encoder_input(const ObservationSeq& obs, std::vector<int>& observed_rows) {
  obs.validate();
  observed_rows.clear();
  for (int i = 0; i < obs.grid.n_times(); ++i)
    if (obs.any_observed(i)) observed_rows.push_back(i);
  if (observed_rows.empty()) throw DomainError("encoder_input: no observed timestamps");
  const int m = obs.obs_dim();
  MatrixXd x(static_cast<int>(observed_rows.size()), 2 * m);
  for (size_t r = 0; r < observed_rows.size(); ++r) {
    const int i = observed_rows[r];
    for (int j = 0; j < m; ++j) {
      const double mk = obs.mask(i, j) ? 1.0 : 0.0;
      x(static_cast<int>(r), j) = mk * obs.values(i, j);
      x(static_cast<int>(r), m + j) = mk;
    }
  }
  return x;
}

Tensor encode_mean(const AcssmModel& model, const MatrixXd& obs_input) {
  Tensor x(obs_input);
  Tensor h = relu_t(linear(x, model.enc_W1, model.enc_b1));
  return linear(h, model.enc_W2, model.enc_b2);
}

Tensor encode_sample(const AcssmModel& model, const Tensor& mean, RandomStream& rng) {
  MatrixXd xi(mean.rows(), mean.cols());
  for (int r = 0; r < mean.rows(); ++r)
    for (int c = 0; c < mean.cols(); ++c) xi(r, c) = rng.gaussian();
  return add(mean, Tensor(xi * std::sqrt(model.cfg.sigma_q)));
}

Tensor assimilate(const AcssmModel& model, const Tensor& y_tokens,
                  const std::vector<double>& obs_times, RandomStream* dropout_rng) {
  const int n = y_tokens.rows();
  if (static_cast<int>(obs_times.size()) != n)
    throw DomainError("assimilate: token/time count mismatch");
  MatrixXd tf = time_features(obs_times, model.cfg.time_scale);
  Tensor x = add(add(matmul(y_tokens, model.tok_Wy), matmul(Tensor(tf), model.tok_Wt)),
                 model.tok_b);
  MatrixXd mask = MatrixXd::Zero(n, n);
  if (model.cfg.scheme == Scheme::kHistory)
    for (int r = 0; r < n; ++r)
      for (int c = r + 1; c < n; ++c) mask(r, c) = kMaskNegInf;
  for (const auto& blk : model.blocks)
    x = attention_block(blk, x, mask, model.cfg.dropout, dropout_rng);
  // GRU head, left to right over tokens
  const int d = model.cfg.latent_dim;
  Tensor h(MatrixXd::Zero(1, d));
  std::vector<Tensor> hs;
  hs.reserve(static_cast<size_t>(n));
  for (int t = 0; t < n; ++t) {
    Tensor xt = gather_rows(x, {t});
    Tensor r = sigmoid_t(add(add(matmul(xt, model.gru_Wr), matmul(h, model.gru_Ur)),
                             model.gru_br));
    Tensor z = sigmoid_t(add(add(matmul(xt, model.gru_Wz), matmul(h, model.gru_Uz)),
                             model.gru_bz));
    Tensor nn = tanh_t(add(matmul(xt, model.gru_Wn),
                           mul(r, add(matmul(h, model.gru_Un), model.gru_bn))));
    Tensor one_minus_z = add_const(neg(z), 1.0);
    h = add(mul(one_minus_z, nn), mul(z, h));
    hs.push_back(h);
  }
  return concat_rows(hs);
}

std::vector<int> nearest_past_map(const TimeGrid& grid,
                                  const std::vector<int>& observed_rows) {
  if (observed_rows.empty()) throw DomainError("nearest_past_map: empty observed set");
  std::vector<int> out(static_cast<size_t>(grid.n_times()));
  int cur = 0;  // earliest observed token for timestamps before the first obs
  for (int i = 0; i < grid.n_times(); ++i) {
    while (cur + 1 < static_cast<int>(observed_rows.size()) &&
           observed_rows[static_cast<size_t>(cur + 1)] <= i)
      ++cur;
    out[static_cast<size_t>(i)] = cur;
  }
  return out;
}

ControlTensors control_from_context(const AcssmModel& model, const Tensor& z) {
  ControlTensors ct;
  ct.weights = softmax_rows(add(matmul(z, model.f_W), model.f_b), MatrixXd());
  Tensor spectra = add_const(exp_t(model.base_log_spectra), 1e-6);  // L x d
  ct.lambda = matmul(ct.weights, spectra);                          // n x d
  ct.alpha = matmul(z, model.B);                                    // n x d
  return ct;
}

PiecewiseControl make_piecewise_control(const AcssmModel& model,
                                        const ControlTensors& ct, const TimeGrid& grid) {
  const int k = grid.n_intervals();
  if (ct.lambda.rows() < k + 1)
    throw DomainError("make_piecewise_control: one context row per timestamp required");
  const int d = model.cfg.latent_dim;
  std::vector<VectorXd> spectra, offsets;
  for (int i = 0; i < k; ++i) {
    spectra.push_back(ct.lambda.val().row(i).transpose());
    offsets.push_back(ct.alpha.val().row(i).transpose());
  }
  PiecewiseControl pc;
  pc.grid = grid;
  pc.op = SpdOperator(MatrixXd::Identity(d, d), spectra);
  pc.offsets = std::move(offsets);
  pc.sigma = model.cfg.sigma;
  return pc;
}

Tensor decode_mean(const AcssmModel& model, const Tensor& y) {
  Tensor h = relu_t(linear(y, model.dec_W1, model.dec_b1));
  return linear(h, model.dec_W2, model.dec_b2);
}

void save_checkpoint(const AcssmModel& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DomainError("save_checkpoint: cannot open " + path);
  char buf[64];
  for (const auto& p : model.ps.params()) {
    out << p.name << " " << p.t.rows() << " " << p.t.cols() << "\n";
    const MatrixXd& v = p.t.val();
    for (int r = 0; r < v.rows(); ++r) {
      for (int c = 0; c < v.cols(); ++c) {
        std::snprintf(buf, sizeof(buf), "%.17g", v(r, c));
        out << buf << (c + 1 == v.cols() ? "" : " ");
      }
      out << "\n";
    }
  }
  if (!out) throw DomainError("save_checkpoint: write failed for " + path);
}

void load_checkpoint(AcssmModel& model, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DomainError("load_checkpoint: cannot open " + path);
  std::string name;
  int rows, cols;
  size_t seen = 0;
  while (in >> name >> rows >> cols) {
    Tensor* t = model.ps.find(name);
    if (!t) throw DomainError("load_checkpoint: unknown tensor '" + name + "'");
    if (t->rows() != rows || t->cols() != cols)
      throw DomainError("load_checkpoint: shape mismatch for tensor '" + name + "'");
    MatrixXd& v = t->val();
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c)
        if (!(in >> v(r, c)))
          throw DomainError("load_checkpoint: truncated values for tensor '" + name + "'");
    ++seen;
  }
  if (seen != model.ps.params().size())
    throw DomainError("load_checkpoint: checkpoint is missing tensors");
}

}  // namespace acssm
