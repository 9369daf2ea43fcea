#include "liqa/models.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace liqa::models {

// ---- FeatureExtractor --------------------------------------------------------

FeatureExtractor::FeatureExtractor(const std::string& name, int input_dim)
    : l1(name + "/l1", input_dim, kBackboneHidden),
      l2(name + "/l2", kBackboneHidden, kFeatureDim),
      out(kBoundTemperature) {}

void FeatureExtractor::init(Rng& rng) {
  l1.init(rng);
  l2.init(rng);
}

Matrix FeatureExtractor::forward(const Matrix& x) {
  return out.forward(l2.forward(a1.forward(l1.forward(x))));
}

Matrix FeatureExtractor::apply(const Matrix& x) const {
  return nn::Tanh::apply(l2.apply(nn::Relu::apply(l1.apply(x))), out.inv_temp);
}

Matrix FeatureExtractor::pre_activation(const Matrix& x) const {
  return l2.apply(nn::Relu::apply(l1.apply(x)));
}

void FeatureExtractor::backward(const Matrix& dfeat) {
  l1.backward(a1.backward(l2.backward(out.backward(dfeat))));
}

std::vector<nn::Tensor*> FeatureExtractor::params() { return {&l1.W, &l1.b, &l2.W, &l2.b}; }

// ---- PredictionHead -----------------------------------------------------------

PredictionHead::PredictionHead(const std::string& name)
    : l1(name + "/l1", kFeatureDim, kHeadHidden), l2(name + "/l2", kHeadHidden, 1) {}

void PredictionHead::init(Rng& rng) {
  l1.init(rng);
  l2.init(rng);
}

Vector PredictionHead::forward(const Matrix& feats) {
  return sig.forward(l2.forward(a1.forward(l1.forward(feats)))).col(0);
}

Vector PredictionHead::apply(const Matrix& feats) const {
  return nn::Sigmoid::apply(l2.apply(nn::Relu::apply(l1.apply(feats)))).col(0);
}

Matrix PredictionHead::backward(const Vector& dscore) {
  const Matrix dz = sig.backward(dscore);
  return l1.backward(a1.backward(l2.backward(dz)));
}

std::vector<nn::Tensor*> PredictionHead::params() { return {&l1.W, &l1.b, &l2.W, &l2.b}; }

// ---- SingleHeadRegressor -------------------------------------------------------

SingleHeadRegressor::SingleHeadRegressor(const std::string& name, int input_dim)
    : extractor(name + "/U", input_dim), head(name + "/V") {}

void SingleHeadRegressor::init(Rng& rng) {
  extractor.init(rng);
  head.init(rng);
}

std::vector<nn::Tensor*> SingleHeadRegressor::params() {
  std::vector<nn::Tensor*> out = extractor.params();
  for (nn::Tensor* t : head.params()) out.push_back(t);
  return out;
}

// ---- MultiHeadRegressor ---------------------------------------------------------

MultiHeadRegressor::MultiHeadRegressor(const std::string& name, int input_dim)
    : extractor(name + "/U", input_dim) {}

std::vector<nn::Tensor*> MultiHeadRegressor::params() {
  std::vector<nn::Tensor*> out = extractor.params();
  for (auto& [j, head] : heads)
    for (nn::Tensor* t : head.params()) out.push_back(t);
  return out;
}

// ---- ConditionalGenerator --------------------------------------------------------

ConditionalGenerator::ConditionalGenerator(const std::string& name)
    : embed(name + "/embed", kNoiseDim, kNoiseDim), out(kBoundTemperature) {}

void ConditionalGenerator::require_head(int j) const {
  if (has_head(j)) return;
  std::string known;
  for (const auto& [id, _] : heads) known += (known.empty() ? "" : ", ") + std::to_string(id);
  throw std::invalid_argument("generator: no head for distortion " + std::to_string(j) +
                              " (registered: " + (known.empty() ? "none" : known) + ")");
}

Matrix ConditionalGenerator::sample_noise(int j, const Matrix& z) const {
  auto it = priors.find(j);
  if (it == priors.end())
    throw std::invalid_argument("sample_noise: no prior for distortion " + std::to_string(j));
  require(z.cols() == kNoiseDim, "sample_noise: z must have " + std::to_string(kNoiseDim) +
                                     " columns, got " + std::to_string(z.cols()));
  const Vector mu = it->second.mu.value.col(0);
  const Vector sigma = it->second.log_sigma.value.col(0).array().exp();
  return (z.array().rowwise() * sigma.transpose().array()).rowwise() +
         mu.transpose().array();
}

Matrix ConditionalGenerator::generate(int j, const Matrix& z, const Vector& s) {
  require_head(j);
  require(z.rows() == s.size(), "generate: one score per noise row required");
  require(s.size() == 0 || (s.minCoeff() >= 0.0 && s.maxCoeff() <= 1.0),
          "generate: quality scores must lie in [0,1]");
  cached_z = z;
  const Matrix latent = embed_act.forward(embed.forward(sample_noise(j, z)));
  const Matrix conditioned = latent.array().colwise() + s.array();
  return out.forward(heads.at(j).forward(conditioned));
}

Matrix ConditionalGenerator::generate_const(int j, const Matrix& z, const Vector& s) const {
  return nn::Tanh::apply(generate_pre_activation(j, z, s), out.inv_temp);
}

Matrix ConditionalGenerator::generate_pre_activation(int j, const Matrix& z, const Vector& s) const {
  require_head(j);
  require(z.rows() == s.size(), "generate: one score per noise row required");
  require(s.size() == 0 || (s.minCoeff() >= 0.0 && s.maxCoeff() <= 1.0),
          "generate: quality scores must lie in [0,1]");
  const Matrix latent = nn::Relu::apply(embed.apply(sample_noise(j, z)));
  const Matrix conditioned = latent.array().colwise() + s.array();
  return heads.at(j).apply(conditioned);
}

void ConditionalGenerator::backward(int j, const Matrix& dfeat) {
  // The s broadcast is additive, so the head's input gradient passes through
  // to the latent unchanged.
  const Matrix dlatent = heads.at(j).backward(out.backward(dfeat));
  const Matrix dz_tilde = embed.backward(embed_act.backward(dlatent));
  GenPrior& prior = priors.at(j);
  prior.mu.grad.col(0) += dz_tilde.colwise().sum().transpose();
  const Vector sigma = prior.log_sigma.value.col(0).array().exp();
  prior.log_sigma.grad.col(0) +=
      (dz_tilde.cwiseProduct(cached_z).colwise().sum().transpose().array() * sigma.array()).matrix();
}

std::vector<nn::Tensor*> ConditionalGenerator::params() {
  std::vector<nn::Tensor*> out = {&embed.W, &embed.b};
  for (auto& [j, p] : priors) {
    out.push_back(&p.mu);
    out.push_back(&p.log_sigma);
  }
  for (auto& [j, h] : heads) {
    out.push_back(&h.W);
    out.push_back(&h.b);
  }
  return out;
}

// ---- ConditionalDiscriminator -------------------------------------------------------

ConditionalDiscriminator::ConditionalDiscriminator(const std::string& name)
    : embed(name + "/embed", kFeatureDim, kDiscLatentDim) {}

void ConditionalDiscriminator::require_head(int j) const {
  if (has_head(j)) return;
  std::string known;
  for (const auto& [id, _] : qual_heads) known += (known.empty() ? "" : ", ") + std::to_string(id);
  throw std::invalid_argument("discriminator: no heads for distortion " + std::to_string(j) +
                              " (registered: " + (known.empty() ? "none" : known) + ")");
}

std::pair<Vector, Vector> ConditionalDiscriminator::discriminate(int j, const Matrix& h) {
  require_head(j);
  const Matrix latent = embed_act.forward(embed.forward(h));
  const Vector qua = qual_sig.forward(qual_heads.at(j).forward(latent)).col(0);
  const Vector rf = rf_sig.forward(rf_heads.at(j).forward(latent)).col(0);
  return {qua, rf};
}

std::pair<Vector, Vector> ConditionalDiscriminator::discriminate_const(int j, const Matrix& h) const {
  require_head(j);
  const Matrix latent = nn::Relu::apply(embed.apply(h));
  const Vector qua = nn::Sigmoid::apply(qual_heads.at(j).apply(latent)).col(0);
  const Vector rf = nn::Sigmoid::apply(rf_heads.at(j).apply(latent)).col(0);
  return {qua, rf};
}

Matrix ConditionalDiscriminator::backward(int j, const Vector& dqua, const Vector& drf_logit) {
  const Matrix dlatent = qual_heads.at(j).backward(qual_sig.backward(dqua)) +
                         rf_heads.at(j).backward(drf_logit);
  return embed.backward(embed_act.backward(dlatent));
}

std::vector<nn::Tensor*> ConditionalDiscriminator::params() {
  std::vector<nn::Tensor*> out = {&embed.W, &embed.b};
  for (auto& [j, h] : qual_heads) {
    out.push_back(&h.W);
    out.push_back(&h.b);
  }
  for (auto& [j, h] : rf_heads) {
    out.push_back(&h.W);
    out.push_back(&h.b);
  }
  return out;
}

// ---- ModelBundle ----------------------------------------------------------------------

ModelBundle::ModelBundle(int input_dim, std::uint64_t init_seed)
    : reg("reg", input_dim), aux("aux", input_dim), gen("gen"), disc("disc") {
  Rng rng(mix_seed(init_seed, 1));
  reg.init(rng);
  Rng rng_aux(mix_seed(init_seed, 2));
  aux.extractor.init(rng_aux);
  Rng rng_shared(mix_seed(init_seed, 3));
  gen.embed.init(rng_shared);
  disc.embed.init(rng_shared);
}

void ModelBundle::register_task_heads(const std::vector<int>& ids, std::uint64_t init_seed) {
  for (int j : ids)
    require(!gen.has_head(j) && !aux.has_head(j) && !disc.has_head(j),
            "register_task_heads: distortion " + std::to_string(j) + " already registered");
  for (int j : ids) {
    Rng rng(mix_seed(init_seed, 40000 + static_cast<std::uint64_t>(j)));

    PredictionHead vhat("aux/head/" + std::to_string(j));
    vhat.init(rng);
    aux.heads.emplace(j, std::move(vhat));

    GenPrior prior;
    prior.mu = nn::Tensor("gen/prior/" + std::to_string(j) + "/mu", kNoiseDim, 1);
    prior.log_sigma = nn::Tensor("gen/prior/" + std::to_string(j) + "/log_sigma", kNoiseDim, 1);
    gen.priors.emplace(j, std::move(prior));
    nn::Dense ghead("gen/head/" + std::to_string(j), kNoiseDim, kFeatureDim);
    ghead.init(rng);
    gen.heads.emplace(j, std::move(ghead));

    nn::Dense p("disc/qual/" + std::to_string(j), kDiscLatentDim, 1);
    p.init(rng);
    disc.qual_heads.emplace(j, std::move(p));
    nn::Dense q("disc/rf/" + std::to_string(j), kDiscLatentDim, 1);
    q.init(rng);
    disc.rf_heads.emplace(j, std::move(q));
  }
}

std::vector<int> ModelBundle::registered_heads() const {
  std::vector<int> out;
  for (const auto& [j, _] : gen.heads) out.push_back(j);
  return out;
}

std::map<std::string, nn::Tensor*> ModelBundle::named_params() {
  std::map<std::string, nn::Tensor*> out;
  auto absorb = [&](std::vector<nn::Tensor*> ts) {
    for (nn::Tensor* t : ts) out[t->name] = t;
  };
  absorb(reg.params());
  absorb(aux.params());
  absorb(gen.params());
  absorb(disc.params());
  return out;
}

std::map<std::string, const nn::Tensor*> ModelBundle::named_params() const {
  std::map<std::string, const nn::Tensor*> out;
  for (auto& [name, t] : const_cast<ModelBundle*>(this)->named_params()) out[name] = t;
  return out;
}

void ModelBundle::freeze(const std::string& selector) {
  bool matched = false;
  for (const auto& [name, _] : named_params())
    if (name.rfind(selector, 0) == 0) {
      matched = true;
      break;
    }
  require(matched, "freeze: selector '" + selector + "' matches no parameter group");
  frozen.insert(selector);
}

bool ModelBundle::is_frozen(const std::string& param_name) const {
  for (const std::string& sel : frozen)
    if (param_name.rfind(sel, 0) == 0) return true;
  return false;
}

std::vector<nn::Tensor*> ModelBundle::trainable(std::vector<nn::Tensor*> candidates) const {
  std::vector<nn::Tensor*> out;
  for (nn::Tensor* t : candidates)
    if (!is_frozen(t->name)) out.push_back(t);
  return out;
}

FrozenSnapshot ModelBundle::snapshot() const {
  FrozenSnapshot snap;
  snap.valid = true;
  snap.extractor = reg.extractor;
  snap.head = reg.head;
  snap.generator = gen;
  snap.discriminator = disc;
  return snap;
}

// ---- op wrappers ----------------------------------------------------------------------

Matrix extract_features(const FeatureExtractor& extractor, const Matrix& batch) {
  const Matrix feats = extractor.apply(batch);
  require(feats.allFinite(), "extract_features: non-finite features");
  return feats;
}

Vector predict_single(const PredictionHead& head, const Matrix& features) {
  require(features.cols() == kFeatureDim, "predict_single: expected " +
                                              std::to_string(kFeatureDim) + "-dim features, got " +
                                              std::to_string(features.cols()));
  return head.apply(features);
}

Vector predict_multi(const MultiHeadRegressor& multihead, const Matrix& features, int j) {
  auto it = multihead.heads.find(j);
  if (it == multihead.heads.end()) {
    std::string known;
    for (const auto& [id, _] : multihead.heads)
      known += (known.empty() ? "" : ", ") + std::to_string(id);
    throw std::invalid_argument("predict_multi: no head for distortion " + std::to_string(j) +
                                " (registered: " + (known.empty() ? "none" : known) + ")");
  }
  return it->second.apply(features);
}

Matrix sample_noise(const ConditionalGenerator& gen, int j, const Matrix& z) {
  return gen.sample_noise(j, z);
}

Matrix generate(const ConditionalGenerator& gen, const Matrix& z, const Vector& s, int j) {
  return gen.generate_const(j, z, s);
}

std::pair<Vector, Vector> discriminate(const ConditionalDiscriminator& disc, const Matrix& h,
                                       int j) {
  return disc.discriminate_const(j, h);
}

// ---- checkpoint I/O ----------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'L', 'I', 'Q', 'A', 'C', 'K', 'P', '1'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
void write_i32(std::ostream& os, std::int32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
void write_f64(std::ostream& os, double v) { os.write(reinterpret_cast<const char*>(&v), 8); }

void write_string(std::ostream& os, const std::string& s) {
  write_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void write_tensor(std::ostream& os, const nn::Tensor& t) {
  write_string(os, t.name);
  write_u32(os, static_cast<std::uint32_t>(t.value.rows()));
  write_u32(os, static_cast<std::uint32_t>(t.value.cols()));
  os.write(reinterpret_cast<const char*>(t.value.data()),
           static_cast<std::streamsize>(sizeof(Scalar) * static_cast<std::size_t>(t.value.size())));
}

std::uint32_t read_u32(std::istream& is) {
  std::uint32_t v;
  is.read(reinterpret_cast<char*>(&v), 4);
  return v;
}
std::int32_t read_i32(std::istream& is) {
  std::int32_t v;
  is.read(reinterpret_cast<char*>(&v), 4);
  return v;
}
double read_f64(std::istream& is) {
  double v;
  is.read(reinterpret_cast<char*>(&v), 8);
  return v;
}
std::string read_string(std::istream& is) {
  const std::uint32_t n = read_u32(is);
  std::string s(n, '\0');
  is.read(s.data(), n);
  return s;
}

void read_tensor_into(std::istream& is, std::map<std::string, nn::Tensor*>& by_name) {
  const std::string name = read_string(is);
  const std::uint32_t rows = read_u32(is), cols = read_u32(is);
  auto it = by_name.find(name);
  require(it != by_name.end(), "checkpoint: unknown tensor '" + name + "'");
  require(it->second->value.rows() == static_cast<Eigen::Index>(rows) &&
              it->second->value.cols() == static_cast<Eigen::Index>(cols),
          "checkpoint: shape mismatch for '" + name + "'");
  is.read(reinterpret_cast<char*>(it->second->value.data()),
          static_cast<std::streamsize>(sizeof(Scalar) * rows * cols));
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelBundle& bundle,
                     const metrics::EvalLedger& ledger, const std::string& method_state) {
  std::ofstream os(path, std::ios::binary);
  require(os.good(), "save_checkpoint: cannot write " + path);
  os.write(kMagic, 8);
  write_u32(os, kVersion);
  write_u32(os, static_cast<std::uint32_t>(bundle.input_dim()));
  write_i32(os, bundle.last_completed_task);

  const std::vector<int> ids = bundle.registered_heads();
  write_u32(os, static_cast<std::uint32_t>(ids.size()));
  for (int j : ids) write_i32(os, j);

  write_u32(os, static_cast<std::uint32_t>(bundle.frozen.size()));
  for (const std::string& sel : bundle.frozen) write_string(os, sel);

  const auto named = const_cast<ModelBundle&>(bundle).named_params();
  write_u32(os, static_cast<std::uint32_t>(named.size()));
  for (const auto& [name, t] : named) write_tensor(os, *t);

  write_u32(os, bundle.prev.valid ? 1u : 0u);
  if (bundle.prev.valid) {
    auto& prev = const_cast<FrozenSnapshot&>(bundle.prev);
    std::vector<nn::Tensor*> tensors;
    for (nn::Tensor* t : prev.extractor.params()) tensors.push_back(t);
    for (nn::Tensor* t : prev.head.params()) tensors.push_back(t);
    for (nn::Tensor* t : prev.generator.params()) tensors.push_back(t);
    for (nn::Tensor* t : prev.discriminator.params()) tensors.push_back(t);
    write_u32(os, static_cast<std::uint32_t>(tensors.size()));
    for (nn::Tensor* t : tensors) write_tensor(os, *t);
  }

  write_u32(os, static_cast<std::uint32_t>(ledger.values().size()));
  for (const auto& [key, v] : ledger.values()) {
    write_i32(os, key.first);
    write_i32(os, key.second);
    write_f64(os, v);
    write_i32(os, ledger.intro_task(key.second));
  }

  write_string(os, method_state);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require(is.good(), "load_checkpoint: cannot open " + path);
  char magic[8];
  is.read(magic, 8);
  require(std::memcmp(magic, kMagic, 8) == 0, "load_checkpoint: bad magic in " + path);
  require(read_u32(is) == kVersion, "load_checkpoint: unsupported version");

  const int input_dim = static_cast<int>(read_u32(is));
  const int last_task = read_i32(is);

  LoadedCheckpoint out;
  out.bundle = ModelBundle(input_dim, 0);
  out.bundle.last_completed_task = last_task;

  const std::uint32_t n_ids = read_u32(is);
  std::vector<int> ids(n_ids);
  for (std::uint32_t i = 0; i < n_ids; ++i) ids[i] = read_i32(is);
  out.bundle.register_task_heads(ids, 0);

  const std::uint32_t n_frozen = read_u32(is);
  for (std::uint32_t i = 0; i < n_frozen; ++i) out.bundle.frozen.insert(read_string(is));

  auto named = out.bundle.named_params();
  const std::uint32_t n_tensors = read_u32(is);
  for (std::uint32_t i = 0; i < n_tensors; ++i) read_tensor_into(is, named);

  if (read_u32(is) == 1u) {
    out.bundle.prev.valid = true;
    out.bundle.prev.extractor = out.bundle.reg.extractor;
    out.bundle.prev.head = out.bundle.reg.head;
    out.bundle.prev.generator = out.bundle.gen;
    out.bundle.prev.discriminator = out.bundle.disc;
    std::map<std::string, nn::Tensor*> prev_named;
    auto absorb = [&](std::vector<nn::Tensor*> ts) {
      for (nn::Tensor* t : ts) prev_named[t->name] = t;
    };
    absorb(out.bundle.prev.extractor.params());
    absorb(out.bundle.prev.head.params());
    absorb(out.bundle.prev.generator.params());
    absorb(out.bundle.prev.discriminator.params());
    const std::uint32_t n_prev = read_u32(is);
    for (std::uint32_t i = 0; i < n_prev; ++i) read_tensor_into(is, prev_named);
  }

  const std::uint32_t n_rows = read_u32(is);
  for (std::uint32_t i = 0; i < n_rows; ++i) {
    const int t = read_i32(is);
    const int j = read_i32(is);
    const Scalar v = read_f64(is);
    const int intro = read_i32(is);
    out.ledger.add(t, j, v, intro);
  }

  out.method_state = read_string(is);
  require(is.good(), "load_checkpoint: truncated file " + path);
  return out;
}

std::uint64_t group_checksum(const ModelBundle& bundle, const std::string& selector) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  bool matched = false;
  for (const auto& [name, t] : bundle.named_params()) {
    if (name.rfind(selector, 0) != 0) continue;
    matched = true;
    const std::uint64_t c = t->checksum();
    h ^= c;
    h *= 0x100000001b3ull;
  }
  require(matched, "group_checksum: selector '" + selector + "' matches nothing");
  return h;
}

}  // namespace liqa::models
