#include "hpl/hindsight_vae.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "hpl/error.hpp"
#include "hpl/hash.hpp"

namespace hpl {

using nlohmann::json;

void FeatureSpace::check(int s, int a) const {
  if (s < 0 || s >= num_states || a < 0 || a >= num_actions)
    throw Error(ErrorCode::IndexOutOfRange,
                "step (" + std::to_string(s) + ", " + std::to_string(a) + ") outside feature space");
}

void VaeConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw Error(ErrorCode::Config, std::string("vae: ") + what);
  };
  require(future_length >= 0, "future_length must be >= 0");
  require(num_codes >= 2, "num_codes must be >= 2");
  require(kl_coef >= 0.0, "kl_coef must be >= 0");
  require(embed_dim >= 1 && num_layers >= 1 && ffn_dim >= 1, "encoder sizes must be >= 1");
  require(hidden_dim >= 1 && hidden_layers >= 0, "decoder/prior sizes invalid");
  require(steps >= 0 && batch_size >= 1, "steps/batch_size invalid");
  require(learning_rate > 0.0, "learning_rate must be > 0");
  require(temperature_start > 0.0 && temperature_end > 0.0, "temperatures must be > 0");
}

json VaeConfig::to_json() const {
  return {{"future_length", future_length}, {"num_codes", num_codes},
          {"kl_coef", kl_coef},             {"embed_dim", embed_dim},
          {"num_layers", num_layers},       {"ffn_dim", ffn_dim},
          {"hidden_dim", hidden_dim},       {"hidden_layers", hidden_layers},
          {"activation", to_string(activation)},
          {"steps", steps},                 {"batch_size", batch_size},
          {"learning_rate", learning_rate}, {"temperature_start", temperature_start},
          {"temperature_end", temperature_end}};
}

VaeConfig VaeConfig::from_json(const json& j) {
  VaeConfig c;
  c.future_length = j.at("future_length");
  c.num_codes = j.at("num_codes");
  c.kl_coef = j.at("kl_coef");
  c.embed_dim = j.at("embed_dim");
  c.num_layers = j.at("num_layers");
  c.ffn_dim = j.at("ffn_dim");
  c.hidden_dim = j.at("hidden_dim");
  c.hidden_layers = j.at("hidden_layers");
  c.activation = parse_activation(j.at("activation"));
  c.steps = j.at("steps");
  c.batch_size = j.at("batch_size");
  c.learning_rate = j.at("learning_rate");
  c.temperature_start = j.at("temperature_start");
  c.temperature_end = j.at("temperature_end");
  return c;
}

namespace {

std::vector<int> mlp_sizes(int in, int hidden, int layers, int out) {
  std::vector<int> sizes{in};
  for (int l = 0; l < layers; ++l) sizes.push_back(hidden);
  sizes.push_back(out);
  return sizes;
}

}  // namespace

VaeModel::VaeModel(FeatureSpace features, VaeConfig config, std::uint64_t init_seed)
    : features_(features), config_(config) {
  config_.validate();
  if (features_.num_states < 1 || features_.num_actions < 1)
    throw Error(ErrorCode::InvalidDimension, "empty feature space");
  Rng rng(init_seed);
  const int step = features_.step_dim();
  const int K = config_.num_codes;
  encoder_ = AnticausalEncoder(store_, "encoder",
                               {.input_dim = step,
                                .embed_dim = config_.embed_dim,
                                .num_layers = config_.num_layers,
                                .ffn_dim = config_.ffn_dim,
                                .max_len = config_.future_length + 1,
                                .activation = config_.activation},
                               rng);
  head_w_ = store_.add_uniform("encoder/head/w", config_.embed_dim, K, config_.embed_dim, rng);
  head_b_ = store_.add("encoder/head/b", 1, K);
  const int decoder_in = step + K + config_.future_length + 1;
  decoder_ = Mlp(store_, "decoder", mlp_sizes(decoder_in, config_.hidden_dim, config_.hidden_layers, step),
                 config_.activation, Activation::Identity, rng);
  prior_ = Mlp(store_, "prior", mlp_sizes(step, config_.hidden_dim, config_.hidden_layers, K),
               config_.activation, Activation::Identity, rng);
}

int VaeModel::window_length(const VaeItem& item) const {
  const int len = item.sequence.length();
  if (item.t < 0 || item.t >= len)
    throw Error(ErrorCode::IndexOutOfRange,
                "position " + std::to_string(item.t) + " outside sequence of length " + std::to_string(len));
  return std::min(config_.future_length, len - 1 - item.t) + 1;
}

Matrix VaeModel::posterior_logits(std::span<const VaeItem> items, AnticausalEncoder::Cache* cache,
                                  Matrix* first_hidden) const {
  std::vector<int> lengths;
  lengths.reserve(items.size());
  Eigen::Index rows = 0;
  for (const VaeItem& it : items) {
    lengths.push_back(window_length(it));
    rows += lengths.back();
  }
  Matrix tokens = Matrix::Zero(rows, features_.step_dim());
  Eigen::Index r = 0;
  for (std::size_t i = 0; i < items.size(); ++i) {
    for (int dt = 0; dt < lengths[i]; ++dt, ++r) {
      const int s = items[i].sequence.states[items[i].t + dt];
      const int a = items[i].sequence.actions[items[i].t + dt];
      features_.check(s, a);
      features_.encode_step(tokens.row(r), s, a);
    }
  }
  // Only the window is fed in, so the output at its first position depends on
  // exactly positions t..t+k regardless of encoder depth.
  const Matrix out = encoder_.forward(store_, tokens, lengths, -1, cache);
  Matrix first(static_cast<Eigen::Index>(items.size()), config_.embed_dim);
  r = 0;
  for (std::size_t i = 0; i < items.size(); ++i) {
    first.row(static_cast<Eigen::Index>(i)) = out.row(r);
    r += lengths[i];
  }
  Matrix logits = first * store_.value(head_w_);
  logits.rowwise() += store_.value(head_b_).row(0);
  if (first_hidden) *first_hidden = std::move(first);
  return logits;
}

Matrix VaeModel::prior_input(std::span<const VaeItem> items) const {
  Matrix x = Matrix::Zero(static_cast<Eigen::Index>(items.size()), features_.step_dim());
  for (std::size_t i = 0; i < items.size(); ++i) {
    const int s = items[i].sequence.states[items[i].t];
    const int a = items[i].sequence.actions[items[i].t];
    features_.check(s, a);
    features_.encode_step(x.row(static_cast<Eigen::Index>(i)), s, a);
  }
  return x;
}

CategoricalDist VaeModel::encode(StepView sequence, int t) const {
  const VaeItem item{sequence, t};
  return CategoricalDist(posterior_logits(std::span<const VaeItem>(&item, 1), nullptr, nullptr).row(0));
}

std::vector<CategoricalDist> VaeModel::encode_all(StepView sequence) const {
  if (sequence.length() == 0) throw Error(ErrorCode::EmptySequence, "cannot encode an empty sequence");
  std::vector<VaeItem> items;
  for (int t = 0; t < sequence.length(); ++t) items.push_back({sequence, t});
  const Matrix logits = posterior_logits(items, nullptr, nullptr);
  std::vector<CategoricalDist> out;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) out.emplace_back(logits.row(i));
  return out;
}

CategoricalDist VaeModel::prior(int s, int a) const {
  features_.check(s, a);
  Matrix x = Matrix::Zero(1, features_.step_dim());
  features_.encode_step(x.row(0), s, a);
  return CategoricalDist(prior_.forward(store_, x).row(0));
}

RowVector VaeModel::enumerate_prior(int s, int a) const { return prior(s, a).probs(); }

std::vector<int> VaeModel::sample_prior(int s, int a, int n, Rng& rng) const {
  if (n < 1) throw Error(ErrorCode::InvalidDimension, "sample count must be >= 1");
  const CategoricalDist dist = prior(s, a);
  std::vector<int> codes(n);
  for (int& z : codes) z = dist.sample(rng);
  return codes;
}

std::vector<DecodedStep> VaeModel::decode_all(int s, int a, int code) const {
  features_.check(s, a);
  if (code < 0 || code >= config_.num_codes)
    throw Error(ErrorCode::IndexOutOfRange, "latent code out of range");
  const int step = features_.step_dim();
  const int offsets = config_.future_length + 1;
  Matrix x = Matrix::Zero(offsets, step + config_.num_codes + offsets);
  for (int dt = 0; dt < offsets; ++dt) {
    features_.encode_step(x.row(dt), s, a);
    x(dt, step + code) = 1.0;
    x(dt, step + config_.num_codes + dt) = 1.0;
  }
  const Matrix out = decoder_.forward(store_, x);
  std::vector<DecodedStep> result;
  for (int dt = 0; dt < offsets; ++dt) {
    result.push_back({softmax(out.row(dt).head(features_.num_states)),
                      softmax(out.row(dt).tail(features_.num_actions))});
  }
  return result;
}

DecodedStep VaeModel::decode(int s, int a, int code, int delta_t) const {
  if (delta_t < 0 || delta_t > config_.future_length)
    throw Error(ErrorCode::DeltaOutOfRange, "offset " + std::to_string(delta_t) + " outside [0, " +
                                                std::to_string(config_.future_length) + "]");
  features_.check(s, a);
  const int step = features_.step_dim();
  Matrix x = Matrix::Zero(1, step + config_.num_codes + config_.future_length + 1);
  features_.encode_step(x.row(0), s, a);
  x(0, step + code) = 1.0;
  x(0, step + config_.num_codes + delta_t) = 1.0;
  const RowVector out = decoder_.forward(store_, x).row(0);
  return {softmax(out.head(features_.num_states)), softmax(out.tail(features_.num_actions))};
}

double VaeModel::elbo_loss(std::span<const VaeItem> batch, const Matrix& gumbel_noise,
                           double temperature, bool with_grad) {
  if (batch.empty()) throw Error(ErrorCode::EmptyDataset, "empty VAE batch");
  const Eigen::Index B = static_cast<Eigen::Index>(batch.size());
  const int K = config_.num_codes;
  const int S = features_.num_states;
  const int A = features_.num_actions;
  const int step = features_.step_dim();
  const int offsets = config_.future_length + 1;
  if (gumbel_noise.rows() != B || gumbel_noise.cols() != K)
    throw Error(ErrorCode::ShapeMismatch, "noise must be batch x num_codes");

  AnticausalEncoder::Cache enc_cache;
  Matrix first_hidden;
  const Matrix q_logits = posterior_logits(batch, with_grad ? &enc_cache : nullptr, &first_hidden);
  Mlp::Cache prior_cache;
  const Matrix f_logits = prior_.forward(store_, prior_input(batch), with_grad ? &prior_cache : nullptr);

  // Relaxed one-hot codes.
  Matrix relaxed(B, K);
  for (Eigen::Index i = 0; i < B; ++i)
    relaxed.row(i) = softmax((q_logits.row(i) + gumbel_noise.row(i)) / temperature);

  // Decoder rows: one per (item, offset within the clipped window).
  std::vector<int> windows(batch.size());
  Eigen::Index rows = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    windows[i] = window_length(batch[i]);
    rows += windows[i];
  }
  Matrix dec_in = Matrix::Zero(rows, step + K + offsets);
  std::vector<int> state_targets(rows), action_targets(rows);
  Eigen::Index r = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const VaeItem& it = batch[i];
    const int s = it.sequence.states[it.t];
    const int a = it.sequence.actions[it.t];
    for (int dt = 0; dt < windows[i]; ++dt, ++r) {
      features_.encode_step(dec_in.row(r), s, a);
      dec_in.row(r).segment(step, K) = relaxed.row(static_cast<Eigen::Index>(i));
      dec_in(r, step + K + dt) = 1.0;
      state_targets[r] = it.sequence.states[it.t + dt];
      action_targets[r] = it.sequence.actions[it.t + dt];
      features_.check(state_targets[r], action_targets[r]);
    }
  }
  Mlp::Cache dec_cache;
  const Matrix dec_out = decoder_.forward(store_, dec_in, with_grad ? &dec_cache : nullptr);

  double recon = 0.0;
  Matrix d_dec_out(rows, step);
  for (Eigen::Index row = 0; row < rows; ++row) {
    const RowVector ls = log_softmax(dec_out.row(row).head(S));
    const RowVector la = log_softmax(dec_out.row(row).tail(A));
    recon -= ls[state_targets[row]] + la[action_targets[row]];
    if (with_grad) {
      d_dec_out.row(row).head(S) = ls.array().exp();
      d_dec_out(row, state_targets[row]) -= 1.0;
      d_dec_out.row(row).tail(A) = la.array().exp();
      d_dec_out(row, S + action_targets[row]) -= 1.0;
    }
  }

  double kl_total = 0.0;
  Matrix d_q = Matrix::Zero(B, K);
  Matrix d_f = Matrix::Zero(B, K);
  const double inv_b = 1.0 / static_cast<double>(B);
  for (Eigen::Index i = 0; i < B; ++i) {
    const RowVector lq = log_softmax(q_logits.row(i));
    const RowVector lf = log_softmax(f_logits.row(i));
    const RowVector q = lq.array().exp();
    const RowVector log_ratio = lq - lf;
    const double kl = q.dot(log_ratio);
    kl_total += kl;
    if (with_grad) {
      d_q.row(i) = config_.kl_coef * inv_b * (q.array() * (log_ratio.array() - kl)).matrix();
      d_f.row(i) = config_.kl_coef * inv_b * (lf.array().exp() - q.array()).matrix();
    }
  }
  const double loss = (recon + config_.kl_coef * kl_total) * inv_b;

  if (with_grad) {
    d_dec_out *= inv_b;
    const Matrix d_dec_in = decoder_.backward(store_, dec_cache, d_dec_out);
    // Gradient through the relaxed sample into the posterior logits.
    r = 0;
    for (Eigen::Index i = 0; i < B; ++i) {
      RowVector d_relaxed = RowVector::Zero(K);
      for (int dt = 0; dt < windows[i]; ++dt, ++r) d_relaxed += d_dec_in.row(r).segment(step, K);
      const RowVector y = relaxed.row(i);
      d_q.row(i) += ((y.array() * (d_relaxed.array() - d_relaxed.dot(y))) / temperature).matrix();
    }
    prior_.backward(store_, prior_cache, d_f);
    store_.grad(head_w_).noalias() += first_hidden.transpose() * d_q;
    store_.grad(head_b_).row(0) += d_q.colwise().sum();
    const Matrix d_first = d_q * store_.value(head_w_).transpose();
    Matrix d_enc = Matrix::Zero(enc_cache.tokens.rows(), config_.embed_dim);
    r = 0;
    for (Eigen::Index i = 0; i < B; ++i) {
      d_enc.row(r) = d_first.row(i);
      r += windows[i];
    }
    encoder_.backward(store_, enc_cache, d_enc);
  }
  return loss;
}

double VaeModel::mean_kl(std::span<const VaeItem> batch) const {
  if (batch.empty()) return 0.0;
  const Matrix q_logits = posterior_logits(batch, nullptr, nullptr);
  const Matrix f_logits = prior_.forward(store_, prior_input(batch));
  double total = 0.0;
  for (Eigen::Index i = 0; i < q_logits.rows(); ++i)
    total += categorical_kl(CategoricalDist(q_logits.row(i)), CategoricalDist(f_logits.row(i)));
  return total / static_cast<double>(batch.size());
}

json VaeModel::hyperparameters() const {
  return {{"model", "hindsight-vae"},
          {"num_states", features_.num_states},
          {"num_actions", features_.num_actions},
          {"vae", config_.to_json()}};
}

void VaeModel::save(const std::filesystem::path& dir, std::uint64_t seed,
                    const std::string& dataset_hash) const {
  const ParamStore* stores[] = {&store_};
  save_checkpoint(dir, stores, hyperparameters(), seed);
  std::ofstream out(dir / "vae.json", std::ios::trunc);
  out << json{{"k", config_.future_length},
              {"K", config_.num_codes},
              {"kl_coef", config_.kl_coef},
              {"dataset_hash", dataset_hash}}
             .dump(2)
      << '\n';
}

VaeModel VaeModel::load(const std::filesystem::path& dir) {
  const json manifest = read_manifest(dir);
  const json& h = manifest.at("hyperparameters");
  if (h.value("model", "") != "hindsight-vae")
    throw Error(ErrorCode::Schema, dir.string() + " is not a VAE checkpoint");
  VaeModel model({h.at("num_states"), h.at("num_actions")}, VaeConfig::from_json(h.at("vae")), 0);
  ParamStore* stores[] = {&model.store_};
  load_checkpoint(dir, stores);
  return model;
}

VaeTrainResult train_vae(const UnlabeledDataset& dataset, FeatureSpace features,
                         const VaeConfig& config, std::uint64_t seed) {
  if (dataset.trajectories.empty()) throw Error(ErrorCode::EmptyDataset, "VAE training data is empty");
  std::vector<std::pair<int, int>> positions;
  for (std::size_t i = 0; i < dataset.trajectories.size(); ++i)
    for (std::size_t t = 0; t < dataset.trajectories[i].length(); ++t)
      positions.emplace_back(static_cast<int>(i), static_cast<int>(t));
  if (positions.empty()) throw Error(ErrorCode::EmptyDataset, "VAE training data has no steps");

  VaeTrainResult result{VaeModel(features, config, derive_seed(seed, "vae-init")), {}};
  VaeModel& model = result.model;
  Rng rng(derive_seed(seed, "vae-batches"));
  const AdamConfig adam{.learning_rate = config.learning_rate};
  std::vector<VaeItem> batch;
  Matrix noise(config.batch_size, config.num_codes);
  result.losses.reserve(config.steps);
  for (int step = 0; step < config.steps; ++step) {
    batch.clear();
    for (int b = 0; b < config.batch_size; ++b) {
      const auto [ti, t] = positions[rng.index(positions.size())];
      batch.push_back({StepView(dataset.trajectories[ti]), t});
    }
    for (Eigen::Index i = 0; i < noise.size(); ++i) noise.data()[i] = rng.gumbel();
    const double frac = config.steps > 1 ? static_cast<double>(step) / (config.steps - 1) : 1.0;
    const double temperature =
        config.temperature_start + frac * (config.temperature_end - config.temperature_start);
    model.params().zero_grad();
    const double loss = model.elbo_loss(batch, noise, temperature, true);
    if (!std::isfinite(loss))
      throw Error(ErrorCode::NonFinite, "VAE loss at step " + std::to_string(step));
    try {
      adam_step(model.params(), adam, step + 1);
    } catch (const Error& e) {
      throw Error(ErrorCode::NonFinite, "VAE step " + std::to_string(step) + ": " + e.detail());
    }
    result.losses.push_back(loss);
  }
  model.params().round_to_float();
  return result;
}

std::string dataset_hash(const UnlabeledDataset& dataset) {
  std::ostringstream out;
  for (const Trajectory& t : dataset.trajectories) {
    Trajectory view = t;
    view.rewards.reset();
    out << to_json(view).dump() << '\n';
  }
  return sha256_hex(out.str());
}

}  // namespace hpl
