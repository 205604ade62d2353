#include "hpl/preference.hpp"

#include <cmath>
#include <limits>

#include "hpl/error.hpp"

namespace hpl {

using nlohmann::json;

std::string to_string(RewardKind kind) { return kind == RewardKind::Markovian ? "markovian" : "hindsight"; }

RewardKind parse_reward_kind(const std::string& name) {
  if (name == "markovian") return RewardKind::Markovian;
  if (name == "hindsight") return RewardKind::Hindsight;
  throw Error(ErrorCode::Config, "unknown reward kind '" + name + "'");
}

std::string to_string(LatentMode mode) {
  return mode == LatentMode::PosteriorSample ? "posterior-sample" : "posterior-mode";
}

LatentMode parse_latent_mode(const std::string& name) {
  if (name == "posterior-sample") return LatentMode::PosteriorSample;
  if (name == "posterior-mode") return LatentMode::PosteriorMode;
  throw Error(ErrorCode::Config, "unknown latent mode '" + name + "'");
}

void RewardConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw Error(ErrorCode::Config, std::string("reward: ") + what);
  };
  require(hidden_dim >= 1 && hidden_layers >= 0, "network sizes invalid");
  require(final_activation != Activation::Tanh, "final activation must be identity or relu");
  require(steps >= 0 && batch_size >= 1, "steps/batch_size invalid");
  require(learning_rate > 0.0, "learning_rate must be > 0");
}

json RewardConfig::to_json() const {
  return {{"hidden_dim", hidden_dim},
          {"hidden_layers", hidden_layers},
          {"activation", to_string(activation)},
          {"final_activation", to_string(final_activation)},
          {"steps", steps},
          {"batch_size", batch_size},
          {"learning_rate", learning_rate},
          {"latent_mode", to_string(latent_mode)}};
}

RewardConfig RewardConfig::from_json(const json& j) {
  RewardConfig c;
  c.hidden_dim = j.at("hidden_dim");
  c.hidden_layers = j.at("hidden_layers");
  c.activation = parse_activation(j.at("activation"));
  c.final_activation = parse_activation(j.at("final_activation"));
  c.steps = j.at("steps");
  c.batch_size = j.at("batch_size");
  c.learning_rate = j.at("learning_rate");
  c.latent_mode = parse_latent_mode(j.at("latent_mode"));
  return c;
}

RewardModel::RewardModel(RewardKind kind, FeatureSpace features, const RewardConfig& config,
                         std::uint64_t init_seed, std::shared_ptr<const VaeModel> vae)
    : kind_(kind), features_(features), config_(config), vae_(std::move(vae)) {
  config_.validate();
  if (kind_ == RewardKind::Hindsight) {
    if (!vae_) throw Error(ErrorCode::MissingVae, "hindsight reward model needs a trained VAE");
    if (!(vae_->features() == features_))
      throw Error(ErrorCode::InvalidDimension, "VAE feature space differs from reward feature space");
    num_codes_ = vae_->config().num_codes;
  }
  std::vector<int> sizes{input_dim()};
  for (int l = 0; l < config_.hidden_layers; ++l) sizes.push_back(config_.hidden_dim);
  sizes.push_back(1);
  Rng rng(init_seed);
  net_ = Mlp(store_, "reward", sizes, config_.activation, config_.final_activation, rng);
}

double RewardModel::reward(int s, int a) const {
  if (kind_ != RewardKind::Markovian)
    throw Error(ErrorCode::KindMismatch, "hindsight reward needs a latent code");
  Matrix x(1, input_dim());
  encode_input(x.row(0), s, a, 0);
  return forward(x)[0];
}

double RewardModel::reward(int s, int a, int code) const {
  if (kind_ != RewardKind::Hindsight)
    throw Error(ErrorCode::KindMismatch, "markovian reward takes no latent code");
  if (code < 0 || code >= num_codes_) throw Error(ErrorCode::IndexOutOfRange, "latent code out of range");
  Matrix x(1, input_dim());
  encode_input(x.row(0), s, a, code);
  return forward(x)[0];
}

RowVector RewardModel::reward_per_code(int s, int a) const {
  if (kind_ != RewardKind::Hindsight)
    throw Error(ErrorCode::KindMismatch, "markovian reward takes no latent code");
  Matrix x(num_codes_, input_dim());
  for (int z = 0; z < num_codes_; ++z) encode_input(x.row(z), s, a, z);
  return forward(x).transpose();
}

Vector RewardModel::forward(const Matrix& input, Mlp::Cache* cache) const {
  return net_.forward(store_, input, cache).col(0);
}

void RewardModel::backward(const Mlp::Cache& cache, const Vector& grad_out) {
  net_.backward(store_, cache, grad_out);
}

json RewardModel::hyperparameters() const {
  return {{"model", "reward"},
          {"kind", to_string(kind_)},
          {"num_states", features_.num_states},
          {"num_actions", features_.num_actions},
          {"num_codes", num_codes_},
          {"reward", config_.to_json()}};
}

void RewardModel::save(const std::filesystem::path& dir, std::uint64_t seed) const {
  const ParamStore* stores[] = {&store_};
  save_checkpoint(dir, stores, hyperparameters(), seed);
}

RewardModel RewardModel::load(const std::filesystem::path& dir, std::shared_ptr<const VaeModel> vae) {
  const json manifest = read_manifest(dir);
  const json& h = manifest.at("hyperparameters");
  if (h.value("model", "") != "reward")
    throw Error(ErrorCode::Schema, dir.string() + " is not a reward checkpoint");
  const RewardKind kind = parse_reward_kind(h.at("kind"));
  if (kind == RewardKind::Markovian) vae = nullptr;
  RewardModel model(kind, {h.at("num_states"), h.at("num_actions")}, RewardConfig::from_json(h.at("reward")),
                    0, std::move(vae));
  if (model.num_codes_ != h.at("num_codes").get<int>())
    throw Error(ErrorCode::InvalidDimension, "VAE code count differs from the checkpoint");
  ParamStore* stores[] = {&model.store_};
  load_checkpoint(dir, stores);
  return model;
}

double bt_prob(double rho0, double rho1) { return sigmoid(rho0 - rho1); }

double strength_mr(const RewardModel& model, const Segment& segment) {
  if (model.kind() != RewardKind::Markovian)
    throw Error(ErrorCode::KindMismatch, "markovian strength needs a markovian model");
  Matrix x(static_cast<Eigen::Index>(segment.length()), model.input_dim());
  for (std::size_t t = 0; t < segment.length(); ++t)
    model.encode_input(x.row(static_cast<Eigen::Index>(t)), segment.states[t], segment.actions[t], 0);
  return model.forward(x).sum();
}

namespace {

int pick_code(const RowVector& probs, LatentMode mode, Rng* rng) {
  if (mode == LatentMode::PosteriorMode) {
    Eigen::Index best;
    probs.maxCoeff(&best);
    return static_cast<int>(best);
  }
  if (!rng) throw Error(ErrorCode::ModeMismatch, "posterior sampling needs a random stream");
  return rng->categorical(std::span<const double>(probs.data(), static_cast<std::size_t>(probs.size())));
}

Matrix posterior_matrix(const VaeModel& vae, const Segment& segment) {
  const auto posts = vae.encode_all(StepView(segment));
  Matrix m(static_cast<Eigen::Index>(posts.size()), vae.config().num_codes);
  for (std::size_t t = 0; t < posts.size(); ++t) m.row(static_cast<Eigen::Index>(t)) = posts[t].probs();
  return m;
}

Matrix segment_input(const RewardModel& model, const Segment& segment, const Matrix* post, LatentMode mode,
                     Rng* rng) {
  Matrix x(static_cast<Eigen::Index>(segment.length()), model.input_dim());
  for (std::size_t t = 0; t < segment.length(); ++t) {
    const auto row = static_cast<Eigen::Index>(t);
    const int code = model.kind() == RewardKind::Hindsight ? pick_code(post->row(row), mode, rng) : 0;
    model.encode_input(x.row(row), segment.states[t], segment.actions[t], code);
  }
  return x;
}

}  // namespace

double strength_hpm(const RewardModel& model, const Segment& segment, LatentMode mode, Rng* rng) {
  if (model.kind() != RewardKind::Hindsight)
    throw Error(ErrorCode::KindMismatch, "hindsight strength needs a hindsight model");
  if (!model.vae()) throw Error(ErrorCode::MissingVae, "hindsight strength needs a VAE");
  const Matrix post = posterior_matrix(*model.vae(), segment);
  return model.forward(segment_input(model, segment, &post, mode, rng)).sum();
}

double strength(const RewardModel& model, const Segment& segment, LatentMode mode, Rng* rng) {
  return model.kind() == RewardKind::Markovian ? strength_mr(model, segment)
                                               : strength_hpm(model, segment, mode, rng);
}

PosteriorCache compute_posteriors(const VaeModel& vae, std::span<const PreferencePair> pairs) {
  PosteriorCache cache;
  for (const PreferencePair& p : pairs) {
    cache.seg0.push_back(posterior_matrix(vae, p.seg0));
    cache.seg1.push_back(posterior_matrix(vae, p.seg1));
  }
  return cache;
}

EncodedPair encode_pair(const RewardModel& model, const PreferencePair& pair, const Matrix* post0,
                        const Matrix* post1, LatentMode mode, Rng* rng) {
  if (model.kind() == RewardKind::Hindsight && (!post0 || !post1))
    throw Error(ErrorCode::MissingVae, "hindsight inputs need encoder posteriors");
  EncodedPair out;
  out.input0 = segment_input(model, pair.seg0, post0, mode, rng);
  out.input1 = segment_input(model, pair.seg1, post1, mode, rng);
  out.label = pair.label;
  return out;
}

std::vector<EncodedPair> encode_pairs(const RewardModel& model, std::span<const PreferencePair> pairs,
                                      const PosteriorCache* posteriors, LatentMode mode, Rng* rng) {
  std::vector<EncodedPair> out;
  out.reserve(pairs.size());
  const bool hindsight = model.kind() == RewardKind::Hindsight;
  if (hindsight && !posteriors) throw Error(ErrorCode::MissingVae, "hindsight inputs need encoder posteriors");
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    out.push_back(encode_pair(model, pairs[i], hindsight ? &posteriors->seg0[i] : nullptr,
                              hindsight ? &posteriors->seg1[i] : nullptr, mode, rng));
  }
  return out;
}

namespace {

struct StackedBatch {
  Matrix input;
  std::vector<Eigen::Index> offsets0, lengths0, offsets1, lengths1;
};

StackedBatch stack(std::span<const EncodedPair> batch, int dim) {
  StackedBatch s;
  Eigen::Index rows = 0;
  for (const EncodedPair& p : batch) rows += p.input0.rows() + p.input1.rows();
  s.input.resize(rows, dim);
  Eigen::Index r = 0;
  for (const EncodedPair& p : batch) {
    if (p.input0.cols() != dim || p.input1.cols() != dim)
      throw Error(ErrorCode::ShapeMismatch, "encoded pair width differs from the reward model input");
    s.offsets0.push_back(r);
    s.lengths0.push_back(p.input0.rows());
    s.input.middleRows(r, p.input0.rows()) = p.input0;
    r += p.input0.rows();
    s.offsets1.push_back(r);
    s.lengths1.push_back(p.input1.rows());
    s.input.middleRows(r, p.input1.rows()) = p.input1;
    r += p.input1.rows();
  }
  return s;
}

}  // namespace

double pref_loss(RewardModel& model, std::span<const EncodedPair> batch, bool with_grad) {
  if (batch.empty()) throw Error(ErrorCode::EmptyDataset, "empty preference batch");
  const StackedBatch s = stack(batch, model.input_dim());
  Mlp::Cache cache;
  const Vector r = model.forward(s.input, with_grad ? &cache : nullptr);
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  Vector grad = Vector::Zero(r.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const double rho0 = r.segment(s.offsets0[i], s.lengths0[i]).sum();
    const double rho1 = r.segment(s.offsets1[i], s.lengths1[i]).sum();
    const double d = rho0 - rho1;
    const double y = batch[i].label;
    loss -= (1.0 - y) * log_sigmoid(d) + y * log_sigmoid(-d);
    const double g = (sigmoid(d) - (1.0 - y)) * inv_b;
    grad.segment(s.offsets0[i], s.lengths0[i]).array() += g;
    grad.segment(s.offsets1[i], s.lengths1[i]).array() -= g;
  }
  if (with_grad) model.backward(cache, grad);
  return loss * inv_b;
}

double preference_accuracy(const RewardModel& model, std::span<const EncodedPair> pairs) {
  int decided = 0, correct = 0;
  for (const EncodedPair& p : pairs) {
    if (p.label == 0.5) continue;
    ++decided;
    const double prob0 = bt_prob(model.forward(p.input0).sum(), model.forward(p.input1).sum());
    correct += p.label < 0.5 ? prob0 > 0.5 : prob0 < 0.5;
  }
  return decided == 0 ? std::numeric_limits<double>::quiet_NaN() : static_cast<double>(correct) / decided;
}

json RewardDiagnostics::to_json() const {
  json j{{"final_loss", final_loss}, {"steps", steps}, {"seed", seed}};
  j["train_accuracy"] = std::isfinite(train_accuracy) ? json(train_accuracy) : json(nullptr);
  return j;
}

RewardTrainResult train_reward(const PreferenceDataset& dataset, RewardKind kind, FeatureSpace features,
                               std::shared_ptr<const VaeModel> vae, const RewardConfig& config,
                               std::uint64_t seed) {
  if (dataset.pairs.empty()) throw Error(ErrorCode::EmptyDataset, "preference dataset is empty");
  RewardTrainResult result{RewardModel(kind, features, config, derive_seed(seed, "reward-init"),
                                       kind == RewardKind::Hindsight ? vae : nullptr),
                           {}};
  RewardModel& model = result.model;
  const bool hindsight = kind == RewardKind::Hindsight;
  PosteriorCache posteriors;
  if (hindsight) posteriors = compute_posteriors(*model.vae(), dataset.pairs);

  Rng rng(derive_seed(seed, "reward-batches"));
  const AdamConfig adam{.learning_rate = config.learning_rate};
  const std::size_t n = dataset.pairs.size();
  const bool full_batch = static_cast<std::size_t>(config.batch_size) >= n;
  // Markovian inputs do not change between steps, so encode them once.
  const std::vector<EncodedPair> fixed =
      hindsight ? std::vector<EncodedPair>{} : encode_pairs(model, dataset.pairs, nullptr, config.latent_mode, nullptr);
  std::vector<EncodedPair> batch;
  for (int step = 0; step < config.steps; ++step) {
    batch.clear();
    for (std::size_t b = 0; b < (full_batch ? n : static_cast<std::size_t>(config.batch_size)); ++b) {
      const std::size_t i = full_batch ? b : rng.index(n);
      if (hindsight)
        batch.push_back(encode_pair(model, dataset.pairs[i], &posteriors.seg0[i], &posteriors.seg1[i],
                                    config.latent_mode, &rng));
      else
        batch.push_back(fixed[i]);
    }
    model.params().zero_grad();
    const double loss = pref_loss(model, batch, true);
    if (!std::isfinite(loss)) throw Error(ErrorCode::NonFinite, "reward loss at step " + std::to_string(step));
    try {
      adam_step(model.params(), adam, step + 1);
    } catch (const Error& e) {
      throw Error(ErrorCode::NonFinite, "reward step " + std::to_string(step) + ": " + e.detail());
    }
  }
  model.params().round_to_float();

  const std::vector<EncodedPair> eval =
      hindsight ? encode_pairs(model, dataset.pairs, &posteriors, LatentMode::PosteriorMode, nullptr) : fixed;
  result.diagnostics.final_loss = pref_loss(model, eval, false);
  result.diagnostics.train_accuracy = preference_accuracy(model, eval);
  result.diagnostics.steps = config.steps;
  result.diagnostics.seed = seed;
  return result;
}

std::vector<RewardTrainResult> train_reward_ensemble(const PreferenceDataset& dataset, FeatureSpace features,
                                                     int ensemble_size, const RewardConfig& config,
                                                     std::uint64_t seed) {
  if (ensemble_size < 1) throw Error(ErrorCode::Config, "ensemble size must be >= 1");
  std::vector<RewardTrainResult> members;
  for (int i = 0; i < ensemble_size; ++i) {
    const std::uint64_t member_seed = i == 0 ? seed : derive_seed(seed, static_cast<std::uint64_t>(i));
    members.push_back(train_reward(dataset, RewardKind::Markovian, features, nullptr, config, member_seed));
  }
  return members;
}

double ensemble_reward(std::span<const RewardModel> members, int s, int a) {
  if (members.empty()) throw Error(ErrorCode::EmptyDataset, "empty ensemble");
  double total = 0.0;
  for (const RewardModel& m : members) total += m.reward(s, a);
  return total / static_cast<double>(members.size());
}

}  // namespace hpl
