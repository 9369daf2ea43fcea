#ifndef LIQA_MODELS_HPP
#define LIQA_MODELS_HPP

#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "liqa/metrics.hpp"
#include "liqa/nn.hpp"

// Parameterized function stacks for the regressors, the conditional generator
// and the conditional discriminator, with head registries keyed by distortion
// id and snapshot/freeze facilities.
//
// Training forwards cache activations inside the layer objects; a backward
// call must directly follow its forward on the same sub-network. Gradients
// accumulate across backward calls until an optimizer step.
namespace liqa::models {

inline constexpr int kFeatureDim = 512;
inline constexpr int kBackboneHidden = 256;
inline constexpr int kHeadHidden = 256;
inline constexpr int kNoiseDim = 512;
inline constexpr int kDiscLatentDim = 256;
// Temperature of the bounded output activations shared by the backbone and
// the generation heads.
inline constexpr Scalar kBoundTemperature = 4.0;

// Desk-scale vector backbone: d_in -> 256 (relu) -> 512 (tanh). Stands in for
// the image backbone behind the same 512-dim feature contract. The bounded
// output keeps the adversarial game over features from escaping to infinity.
struct FeatureExtractor {
  nn::Dense l1, l2;
  nn::Relu a1;
  nn::Tanh out;

  FeatureExtractor() = default;
  FeatureExtractor(const std::string& name, int input_dim);
  void init(Rng& rng);

  int input_dim() const { return static_cast<int>(l1.in_dim()); }
  Matrix forward(const Matrix& x);
  Matrix apply(const Matrix& x) const;
  // Linear output ahead of the bounding activation; generator heads are
  // initialized against these statistics.
  Matrix pre_activation(const Matrix& x) const;
  void backward(const Matrix& dfeat);
  std::vector<nn::Tensor*> params();
};

// 512 -> 256 (relu) -> 1 with a logistic squashing onto (0,1).
struct PredictionHead {
  nn::Dense l1, l2;
  nn::Relu a1;
  nn::Sigmoid sig;

  PredictionHead() = default;
  explicit PredictionHead(const std::string& name);
  void init(Rng& rng);

  Vector forward(const Matrix& feats);
  Vector apply(const Matrix& feats) const;
  Matrix backward(const Vector& dscore);
  std::vector<nn::Tensor*> params();
};

struct SingleHeadRegressor {
  FeatureExtractor extractor;  // U
  PredictionHead head;         // V

  SingleHeadRegressor() = default;
  SingleHeadRegressor(const std::string& name, int input_dim);
  void init(Rng& rng);
  Vector predict(const Matrix& inputs) const { return head.apply(extractor.apply(inputs)); }
  std::vector<nn::Tensor*> params();
};

struct MultiHeadRegressor {
  FeatureExtractor extractor;             // U-hat
  std::map<int, PredictionHead> heads;    // j -> V-hat_j

  MultiHeadRegressor() = default;
  MultiHeadRegressor(const std::string& name, int input_dim);
  bool has_head(int j) const { return heads.count(j) > 0; }
  std::vector<nn::Tensor*> params();
};

struct GenPrior {
  nn::Tensor mu;         // 512 x 1
  nn::Tensor log_sigma;  // 512 x 1; sigma = exp(log_sigma) keeps positivity
};

struct ConditionalGenerator {
  nn::Dense embed;  // E_G: 512 -> 512
  nn::Relu embed_act;
  std::map<int, GenPrior> priors;
  std::map<int, nn::Dense> heads;  // G_j: 512 -> 512, bounded like the features
  nn::Tanh out;
  Matrix cached_z;  // standard-normal draw behind the last forward

  ConditionalGenerator() = default;
  explicit ConditionalGenerator(const std::string& name);

  bool has_head(int j) const { return heads.count(j) > 0; }
  void require_head(int j) const;

  // z-tilde = mu_j + sigma_j (.) z, one condition per row of z.
  Matrix sample_noise(int j, const Matrix& z) const;

  // Pipeline: sample_noise -> shared embedding -> (latent + s broadcast) -> G_j.
  // `s` holds one quality score per row of z.
  Matrix generate(int j, const Matrix& z, const Vector& s);
  Matrix generate_const(int j, const Matrix& z, const Vector& s) const;
  // G_j's affine output ahead of the bounding activation.
  Matrix generate_pre_activation(int j, const Matrix& z, const Vector& s) const;
  void backward(int j, const Matrix& dfeat);

  std::vector<nn::Tensor*> params();
};

struct ConditionalDiscriminator {
  nn::Dense embed;  // E_D: 512 -> 256
  nn::Relu embed_act;
  std::map<int, nn::Dense> qual_heads;  // P_j: 256 -> 1, squashed to the score range
  std::map<int, nn::Dense> rf_heads;    // Q_j: 256 -> 1, squashed to (0,1)
  nn::Sigmoid qual_sig;
  nn::Sigmoid rf_sig;

  ConditionalDiscriminator() = default;
  explicit ConditionalDiscriminator(const std::string& name);

  bool has_head(int j) const { return qual_heads.count(j) > 0; }
  void require_head(int j) const;

  // Returns (quality prediction, real/fake probability) per row of h.
  std::pair<Vector, Vector> discriminate(int j, const Matrix& h);
  std::pair<Vector, Vector> discriminate_const(int j, const Matrix& h) const;
  // dqua is w.r.t. the quality output, drf_logit w.r.t. the pre-logistic
  // real/fake output (log-loss gradients stay bounded there even when one
  // player saturates). Returns dL/dh.
  Matrix backward(int j, const Vector& dqua, const Vector& drf_logit);

  std::vector<nn::Tensor*> params();
};

// Immutable copies of the previous task's single head, generator and
// discriminator, taken at the end of a task.
struct FrozenSnapshot {
  bool valid = false;
  FeatureExtractor extractor;
  PredictionHead head;
  ConditionalGenerator generator;
  ConditionalDiscriminator discriminator;
};

struct ModelBundle {
  SingleHeadRegressor reg;
  MultiHeadRegressor aux;
  ConditionalGenerator gen;
  ConditionalDiscriminator disc;
  FrozenSnapshot prev;
  std::set<std::string> frozen;  // name prefixes excluded from optimization
  int last_completed_task = -1;

  ModelBundle() = default;
  ModelBundle(int input_dim, std::uint64_t init_seed);

  int input_dim() const { return reg.extractor.input_dim(); }

  // Creates fresh V-hat_j, G_j, (mu_j, sigma_j), P_j, Q_j per new id.
  void register_task_heads(const std::vector<int>& new_distortion_ids, std::uint64_t init_seed);
  std::vector<int> registered_heads() const;

  void freeze(const std::string& selector);
  void unfreeze_all() { frozen.clear(); }
  bool is_frozen(const std::string& param_name) const;
  std::vector<nn::Tensor*> trainable(std::vector<nn::Tensor*> candidates) const;

  FrozenSnapshot snapshot() const;

  // Every parameter tensor of the live nets, keyed by name.
  std::map<std::string, nn::Tensor*> named_params();
  std::map<std::string, const nn::Tensor*> named_params() const;
};

// ---- op-level wrappers -------------------------------------------------------

Matrix extract_features(const FeatureExtractor& extractor, const Matrix& batch);
Vector predict_single(const PredictionHead& head, const Matrix& features);
Vector predict_multi(const MultiHeadRegressor& multihead, const Matrix& features, int j);
Matrix sample_noise(const ConditionalGenerator& gen, int j, const Matrix& z);
Matrix generate(const ConditionalGenerator& gen, const Matrix& z, const Vector& s, int j);
std::pair<Vector, Vector> discriminate(const ConditionalDiscriminator& disc, const Matrix& h, int j);

// ---- checkpoints ---------------------------------------------------------------

// One binary container per task: every parameter group, registry ids, the
// freezing ledger, the evaluation ledger so far and an opaque method-state
// blob. Round-trips are bit-exact.
void save_checkpoint(const std::string& path, const ModelBundle& bundle,
                     const metrics::EvalLedger& ledger, const std::string& method_state);

struct LoadedCheckpoint {
  ModelBundle bundle;
  metrics::EvalLedger ledger;
  std::string method_state;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

// Checksum of a named parameter group (prefix match over live tensors).
std::uint64_t group_checksum(const ModelBundle& bundle, const std::string& selector);

}  // namespace liqa::models

#endif  // LIQA_MODELS_HPP
