#pragma once

#include <string>
#include <vector>

#include "acssm/core.hpp"
#include "acssm/tensor.hpp"

namespace acssm {

enum class Scheme { kHistory, kFull };
enum class Task { kRegress, kClassify, kInterpolate, kExtrapolate };

struct AssimilationConfig {
  Scheme scheme = Scheme::kHistory;
  int obs_dim = 1;        // m
  int latent_dim = 8;     // d
  int n_base = 4;         // L
  int n_blocks = 2;
  int n_classes = 0;      // > 0 enables the categorical decoder head
  double sigma_q = 0.01;  // encoder variance
  double sigma_p = 0.01;  // decoder variance
  double sigma_g = 0.1;   // potential variance
  double sigma = 1.0;     // latent diffusion
  double time_scale = 0.1;
  double dropout = 0.0;

  void validate() const;
};

struct Param {
  std::string name;
  Tensor t;
};

class ParamStore {
 public:
  Tensor add(const std::string& name, int rows, int cols, double init_scale,
             RandomStream& rng);
  Tensor add_zeros(const std::string& name, int rows, int cols);
  std::vector<Param>& params() { return params_; }
  const std::vector<Param>& params() const { return params_; }
  Tensor* find(const std::string& name);

 private:
  std::vector<Param> params_;
};

// Amortized ACSSM networks. The latent frame is the standard basis (the shared
// eigenbasis is fixed at identity; base matrices are trainable diagonals).
struct AcssmModel {
  AssimilationConfig cfg;
  ParamStore ps;

  // encoder q_phi: (obs .* mask || mask) -> latent observation mean
  Tensor enc_W1, enc_b1, enc_W2, enc_b2;
  // token projection: y W_y + timefeat W_t + b
  Tensor tok_Wy, tok_Wt, tok_b;
  struct Block {
    Tensor ln1_g, ln1_b;        // Normalize(Q)
    Tensor Wq, bq, Wk, bk, Wv, bv;
    Tensor ln2_g, ln2_b, Wo, bo;  // post-attention LayerNorm -> Linear
    Tensor ffn_ln_g, ffn_ln_b, ffn_W1, ffn_b1, ffn_W2, ffn_b2;
  };
  std::vector<Block> blocks;
  Tensor gru_Wr, gru_Ur, gru_br, gru_Wz, gru_Uz, gru_bz, gru_Wn, gru_Un, gru_bn;
  Tensor f_W, f_b;           // weight network f_theta (zero init: uniform weights)
  Tensor B;                  // control map alpha = z B      (d x d)
  Tensor M;                  // potential mean map            (d x d)
  Tensor base_log_spectra;   // L x d, lambda_l = exp(.) + 1e-6
  Tensor init_mean;          // 1 x d
  Tensor init_log_var;       // 1 x d
  Tensor dec_W1, dec_b1, dec_W2, dec_b2;

  static AcssmModel create(const AssimilationConfig& cfg, std::uint64_t seed);
};

// fixed sinusoidal time features (n x 7): scaled t plus 3 sin/cos pairs
MatrixXd time_features(const std::vector<double>& times, double time_scale);

// rows of (values .* mask || mask) restricted to timestamps with any
// observation; observed_rows receives their grid indices.
MatrixXd encoder_input(const ObservationSeq& obs, std::vector<int>& observed_rows);

Tensor encode_mean(const AcssmModel& model, const MatrixXd& obs_input);
// reparameterized draw y = mean + sqrt(sigma_q) * xi
Tensor encode_sample(const AcssmModel& model, const Tensor& mean, RandomStream& rng);

// masked attention blocks + GRU over observed tokens (in timestamp order).
// history: token i attends tokens j <= i; full: all observed tokens.
Tensor assimilate(const AcssmModel& model, const Tensor& y_tokens,
                  const std::vector<double>& obs_times, RandomStream* dropout_rng);

// map each grid timestamp to the nearest past observed token (the earliest
// observed token for timestamps before the first observation)
std::vector<int> nearest_past_map(const TimeGrid& grid,
                                  const std::vector<int>& observed_rows);

struct ControlTensors {
  Tensor weights;             // n x L softmax outputs
  Tensor lambda;              // n x d convex combinations of base spectra
  Tensor alpha;               // n x d offsets z B
};
// per-timestamp control parameters from the latent context z (n x d)
ControlTensors control_from_context(const AcssmModel& model, const Tensor& z);

// non-differentiable PiecewiseControl (identity basis) for scan/inference;
// interval i uses row i of the control tensors (left endpoint).
PiecewiseControl make_piecewise_control(const AcssmModel& model,
                                        const ControlTensors& ct, const TimeGrid& grid);

Tensor decode_mean(const AcssmModel& model, const Tensor& y);

// plain-text checkpoint: per-tensor blocks of name, shape, row-major values at
// 17 significant digits; bit-stable round trip
void save_checkpoint(const AcssmModel& model, const std::string& path);
void load_checkpoint(AcssmModel& model, const std::string& path);

}  // namespace acssm
