#include "hpl/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "hpl/error.hpp"

namespace hpl {

std::string to_string(Method method) {
  switch (method) {
    case Method::Oracle: return "oracle";
    case Method::Sft: return "sft";
    case Method::Mr: return "mr";
    case Method::MrEnsemble: return "mr-ensemble";
    case Method::Hpl: return "hpl";
  }
  return "?";
}

Method parse_method(const std::string& name) {
  for (Method m : {Method::Oracle, Method::Sft, Method::Mr, Method::MrEnsemble, Method::Hpl})
    if (to_string(m) == name) return m;
  throw Error(ErrorCode::Config, "unknown method '" + name + "'");
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
  throw Error(ErrorCode::Config, key + ": '" + value + "' is not " + expected);
}

int to_int(const std::string& key, const std::string& v) {
  int out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, "an integer");
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, "an unsigned integer");
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || !std::isfinite(out)) bad_value(key, v, "a finite number");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  bad_value(key, v, "true or false");
}

std::string fmt(double x) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

struct Field {
  const char* key;
  std::function<void(ExperimentConfig&, const std::string& key, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

#define HPL_INT(KEY, MEMBER)                                                                          \
  Field{KEY, [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.MEMBER = to_int(k, v); }, \
        [](const ExperimentConfig& c) { return std::to_string(c.MEMBER); }}
#define HPL_DOUBLE(KEY, MEMBER)                                                                       \
  Field{KEY, [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.MEMBER = to_double(k, v); }, \
        [](const ExperimentConfig& c) { return fmt(c.MEMBER); }}
#define HPL_STRING(KEY, MEMBER)                                                                       \
  Field{KEY, [](ExperimentConfig& c, const std::string&, const std::string& v) { c.MEMBER = v; },     \
        [](const ExperimentConfig& c) { return c.MEMBER; }}
#define HPL_ACT(KEY, MEMBER)                                                                          \
  Field{KEY, [](ExperimentConfig& c, const std::string&, const std::string& v) { c.MEMBER = parse_activation(v); }, \
        [](const ExperimentConfig& c) { return to_string(c.MEMBER); }}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      HPL_STRING("env.id", env.id),
      HPL_INT("env.states", env.states),
      HPL_INT("env.actions", env.actions),
      HPL_INT("env.branching", env.branching),
      HPL_DOUBLE("env.reward_sparsity", env.reward_sparsity),
      HPL_INT("env.horizon", env.horizon),
      Field{"env.seed",
            [](ExperimentConfig& c, const std::string& k, const std::string& v) {
              if (v == "auto")
                c.env.seed.reset();
              else
                c.env.seed = to_u64(k, v);
            },
            [](const ExperimentConfig& c) { return c.env.seed ? std::to_string(*c.env.seed) : std::string("auto"); }},
      HPL_STRING("data.preferences", data.preferences),
      HPL_STRING("data.pref_policy", data.pref_policy),
      HPL_INT("data.pref_trajectories", data.pref_trajectories),
      HPL_INT("data.pref_pairs", data.pref_pairs),
      HPL_INT("data.segment_length", data.segment_length),
      HPL_STRING("data.annotator", data.annotator),
      HPL_DOUBLE("data.annotator_temperature", data.annotator_temperature),
      HPL_STRING("data.unlabeled_policy", data.unlabeled_policy),
      HPL_INT("data.unlabeled_trajectories", data.unlabeled_trajectories),
      HPL_DOUBLE("data.unlabeled_fraction", data.unlabeled_fraction),
      Field{"method.name",
            [](ExperimentConfig& c, const std::string&, const std::string& v) { c.method.name = parse_method(v); },
            [](const ExperimentConfig& c) { return to_string(c.method.name); }},
      HPL_INT("method.ensemble_size", method.ensemble_size),
      HPL_INT("vae.future_length", vae.future_length),
      HPL_INT("vae.num_codes", vae.num_codes),
      HPL_DOUBLE("vae.kl_coef", vae.kl_coef),
      HPL_INT("vae.embed_dim", vae.embed_dim),
      HPL_INT("vae.num_layers", vae.num_layers),
      HPL_INT("vae.ffn_dim", vae.ffn_dim),
      HPL_INT("vae.hidden_dim", vae.hidden_dim),
      HPL_INT("vae.hidden_layers", vae.hidden_layers),
      HPL_ACT("vae.activation", vae.activation),
      HPL_INT("vae.steps", vae.steps),
      HPL_INT("vae.batch_size", vae.batch_size),
      HPL_DOUBLE("vae.learning_rate", vae.learning_rate),
      HPL_DOUBLE("vae.temperature_start", vae.temperature_start),
      HPL_DOUBLE("vae.temperature_end", vae.temperature_end),
      HPL_INT("reward.hidden_dim", reward.hidden_dim),
      HPL_INT("reward.hidden_layers", reward.hidden_layers),
      HPL_ACT("reward.activation", reward.activation),
      HPL_ACT("reward.final_activation", reward.final_activation),
      HPL_INT("reward.steps", reward.steps),
      HPL_INT("reward.batch_size", reward.batch_size),
      HPL_DOUBLE("reward.learning_rate", reward.learning_rate),
      Field{"reward.latent_mode",
            [](ExperimentConfig& c, const std::string&, const std::string& v) {
              c.reward.latent_mode = parse_latent_mode(v);
            },
            [](const ExperimentConfig& c) { return to_string(c.reward.latent_mode); }},
      HPL_STRING("label.marginal", label.marginal),
      HPL_INT("label.samples", label.samples),
      HPL_DOUBLE("rl.discount", rl.discount),
      HPL_DOUBLE("rl.expectile", rl.expectile),
      HPL_DOUBLE("rl.inverse_temperature", rl.inverse_temperature),
      HPL_DOUBLE("rl.advantage_clip", rl.advantage_clip),
      HPL_DOUBLE("rl.soft_update", rl.soft_update),
      HPL_INT("rl.steps", rl.steps),
      HPL_INT("rl.batch_size", rl.batch_size),
      HPL_DOUBLE("rl.learning_rate", rl.learning_rate),
      HPL_INT("rl.hidden_dim", rl.hidden_dim),
      HPL_INT("rl.hidden_layers", rl.hidden_layers),
      HPL_ACT("rl.activation", rl.activation),
      HPL_INT("sft.steps", sft.steps),
      HPL_INT("sft.batch_size", sft.batch_size),
      HPL_DOUBLE("sft.learning_rate", sft.learning_rate),
      HPL_INT("eval.episodes", eval.episodes),
      Field{"eval.greedy",
            [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.eval.greedy = to_bool(k, v); },
            [](const ExperimentConfig& c) { return std::string(c.eval.greedy ? "true" : "false"); }},
      Field{"run.seed", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.seed = to_u64(k, v); },
            [](const ExperimentConfig& c) { return std::to_string(c.seed); }},
  };
  return table;
}

#undef HPL_INT
#undef HPL_DOUBLE
#undef HPL_STRING
#undef HPL_ACT

}  // namespace

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  for (const Field& f : fields()) {
    if (key == f.key) {
      try {
        f.set(*this, key, value);
      } catch (const Error& e) {
        if (e.code() == ErrorCode::Config) throw;
        throw Error(ErrorCode::Config, key + ": " + e.detail());
      }
      return;
    }
  }
  throw Error(ErrorCode::Config, "unknown key '" + key + "'");
}

std::vector<std::pair<std::string, std::string>> ExperimentConfig::entries() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (const Field& f : fields()) out.emplace_back(f.key, f.get(*this));
  return out;
}

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : entries()) j[k] = v;
  return j;
}

std::string ExperimentConfig::to_text() const {
  std::string out;
  for (const auto& [k, v] : entries()) out += k + " = " + v + "\n";
  return out;
}

MarginalMode ExperimentConfig::marginal_mode() const {
  if (label.marginal == "auto")
    return vae.num_codes <= kMaxEnumerableCodes ? MarginalMode::Exact : MarginalMode::MonteCarlo;
  return parse_marginal_mode(label.marginal);
}

void ExperimentConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw Error(ErrorCode::Config, what);
  };
  require(env.id == "random" || env.id == "gambling", "env.id must be random or gambling");
  if (env.id == "random") {
    require(env.states >= 1 && env.actions >= 1, "env.states and env.actions must be >= 1");
    require(env.branching >= 1 && env.branching <= env.states, "env.branching must be in [1, env.states]");
    require(env.reward_sparsity >= 0.0 && env.reward_sparsity <= 1.0, "env.reward_sparsity must be in [0, 1]");
    require(env.horizon >= 1, "env.horizon must be >= 1");
  }
  require(data.preferences == "sampled" || data.preferences == "gambling-fixed",
          "data.preferences must be sampled or gambling-fixed");
  require(data.preferences != "gambling-fixed" || env.id == "gambling",
          "data.preferences = gambling-fixed needs env.id = gambling");
  require(data.pref_trajectories >= 1, "data.pref_trajectories must be >= 1");
  require(data.pref_pairs >= 1, "data.pref_pairs must be >= 1");
  require(data.segment_length >= 1, "data.segment_length must be >= 1");
  require(data.unlabeled_trajectories >= 1, "data.unlabeled_trajectories must be >= 1");
  require(data.unlabeled_fraction > 0.0 && data.unlabeled_fraction <= 1.0, "data.unlabeled_fraction must be in (0, 1]");
  Annotator::parse(data.annotator, data.annotator_temperature);
  require(method.ensemble_size >= 1, "method.ensemble_size must be >= 1");
  require(label.marginal == "auto" || label.marginal == "exact" || label.marginal == "monte-carlo",
          "label.marginal must be auto, exact or monte-carlo");
  require(label.samples >= 1, "label.samples must be >= 1");
  require(eval.episodes >= 1, "eval.episodes must be >= 1");
  vae.validate();
  reward.validate();
  rl.validate();
  sft.validate();
}

ExperimentConfig parse_config(const std::string& text, const std::string& source) {
  ExperimentConfig config;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = source + ":" + std::to_string(lineno) + ": ";
    if (eq == std::string::npos) throw Error(ErrorCode::Config, where + "expected 'section.key = value'");
    try {
      config.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const Error& e) {
      throw Error(ErrorCode::Config, where + e.detail());
    }
  }
  return config;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Config, "cannot read config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path.string());
}

void apply_override(ExperimentConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw Error(ErrorCode::Config, "override '" + assignment + "' needs key=value");
  config.set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

ExperimentConfig preset_config(const std::string& name) {
  ExperimentConfig c;
  if (name == "random") return c;
  if (name == "random-desk") {
    c.vae.embed_dim = 16;
    c.vae.ffn_dim = 32;
    c.vae.hidden_dim = 32;
    c.vae.hidden_layers = 1;
    c.vae.steps = 1000;
    c.vae.learning_rate = 1e-3;
    c.reward.hidden_dim = 32;
    c.reward.steps = 1000;
    c.reward.learning_rate = 1e-3;
    c.rl.hidden_dim = 32;
    c.rl.steps = 1500;
    c.rl.batch_size = 64;
    c.rl.learning_rate = 1e-3;
    return c;
  }
  if (name != "gambling") throw Error(ErrorCode::Config, "unknown preset '" + name + "'");
  c.env.id = "gambling";
  c.data.preferences = "gambling-fixed";
  c.data.unlabeled_policy = "gambling-uniform";
  c.data.unlabeled_trajectories = 1000;
  c.data.segment_length = 2;
  c.vae.future_length = 2;
  c.vae.embed_dim = 16;
  c.vae.ffn_dim = 32;
  c.vae.hidden_dim = 32;
  c.vae.hidden_layers = 1;
  c.vae.steps = 3000;
  c.vae.batch_size = 64;
  c.vae.learning_rate = 1e-3;
  c.reward.hidden_dim = 32;
  c.reward.steps = 1000;
  c.reward.learning_rate = 1e-3;
  c.rl.hidden_dim = 32;
  c.rl.steps = 2000;
  c.rl.batch_size = 64;
  c.rl.learning_rate = 1e-3;
  c.eval.episodes = 200;
  return c;
}

}  // namespace hpl
