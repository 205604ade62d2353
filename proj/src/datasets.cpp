#include "hpl/datasets.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include "hpl/error.hpp"
#include "hpl/rng.hpp"

namespace hpl {

namespace fs = std::filesystem;
using nlohmann::json;

UnlabeledDataset UnlabeledDataset::learner_view() const {
  UnlabeledDataset out = *this;
  for (auto& t : out.trajectories) t.rewards.reset();
  return out;
}

UnlabeledDataset collect_unlabeled(const MDPSpec& mdp, const TabularPolicy& behavior,
                                   int num_traj, std::uint64_t seed,
                                   const std::string& behavior_id, const std::string& env_id) {
  if (num_traj < 1) throw Error(ErrorCode::InvalidDimension, "num_traj must be >= 1");
  UnlabeledDataset ds;
  ds.trajectories = rollout(mdp, behavior, seed, num_traj);
  ds.meta = {env_id, behavior_id, seed};
  return ds;
}

std::vector<Segment> slice_segments(const UnlabeledDataset& dataset, int H, int num_segments,
                                    std::uint64_t seed) {
  if (H < 1) throw Error(ErrorCode::InvalidDimension, "segment length must be >= 1");
  std::vector<int> eligible;
  for (std::size_t i = 0; i < dataset.trajectories.size(); ++i)
    if (static_cast<int>(dataset.trajectories[i].length()) >= H) eligible.push_back(static_cast<int>(i));
  if (eligible.empty())
    throw Error(ErrorCode::NoEligibleTrajectory,
                "no trajectory has length >= " + std::to_string(H));

  Rng rng(seed);
  std::vector<Segment> out;
  out.reserve(num_segments);
  for (int n = 0; n < num_segments; ++n) {
    const int ti = eligible[rng.index(eligible.size())];
    const Trajectory& traj = dataset.trajectories[ti];
    const int start = static_cast<int>(rng.index(traj.length() - H + 1));
    Segment seg;
    seg.states.assign(traj.states.begin() + start, traj.states.begin() + start + H);
    seg.actions.assign(traj.actions.begin() + start, traj.actions.begin() + start + H);
    seg.source_traj = ti;
    seg.start_index = start;
    if (traj.rewards)
      seg.oracle_rewards.emplace(traj.rewards->begin() + start, traj.rewards->begin() + start + H);
    out.push_back(std::move(seg));
  }
  return out;
}

std::vector<std::pair<Segment, Segment>> pair_up(std::vector<Segment> segments) {
  std::vector<std::pair<Segment, Segment>> out;
  for (std::size_t i = 0; i + 1 < segments.size(); i += 2)
    out.emplace_back(std::move(segments[i]), std::move(segments[i + 1]));
  return out;
}

Annotator Annotator::parse(const std::string& name, double temperature) {
  if (name == "deterministic") return {Mode::Deterministic, temperature};
  if (name == "bt-noisy") {
    if (!(temperature > 0.0)) throw Error(ErrorCode::Config, "annotator temperature must be > 0");
    return {Mode::BtNoisy, temperature};
  }
  throw Error(ErrorCode::Config, "unknown annotator: " + name);
}

namespace {

double segment_return(const Segment& seg) {
  if (!seg.oracle_rewards)
    throw Error(ErrorCode::MissingOracleRewards, "segment has no oracle rewards to annotate");
  return std::accumulate(seg.oracle_rewards->begin(), seg.oracle_rewards->end(), 0.0);
}

Segment strip(Segment seg) {
  seg.oracle_rewards.reset();
  return seg;
}

}  // namespace

PreferenceDataset annotate(const std::vector<std::pair<Segment, Segment>>& pairs,
                           const Annotator& annotator, std::uint64_t seed) {
  Rng rng(seed);
  PreferenceDataset out;
  out.meta.seed = seed;
  out.pairs.reserve(pairs.size());
  for (const auto& [s0, s1] : pairs) {
    if (s0.length() != s1.length())
      throw Error(ErrorCode::InvalidDimension, "paired segments differ in length");
    const double diff = segment_return(s1) - segment_return(s0);
    double y;
    if (annotator.mode == Annotator::Mode::Deterministic) {
      y = diff > 0.0 ? 1.0 : (diff < 0.0 ? 0.0 : 0.5);
    } else {
      const double p1 = 1.0 / (1.0 + std::exp(-diff / annotator.temperature));
      y = rng.bernoulli(p1) ? 1.0 : 0.0;
    }
    out.pairs.push_back({strip(s0), strip(s1), y});
  }
  return out;
}

PreferenceDataset gambling_preference_dataset() {
  using namespace gambling;
  const auto seg = [](int outcome, int first_action) {
    Segment s;
    s.states = {kStart, outcome};
    s.actions = {first_action, kFinish};
    return s;
  };
  const Segment good = seg(kGood, kRisky);
  const Segment bad = seg(kBad, kRisky);
  const Segment avg = seg(kAvg, kSafe);
  PreferenceDataset ds;
  ds.pairs = {{good, avg, 0.0}, {good, avg, 0.0}, {good, bad, 0.0}, {bad, avg, 1.0}};
  ds.meta = {"gambling", "hand-written", 0};
  return ds;
}

// ---------------------------------------------------------------------------
// JSONL persistence

json to_json(const Trajectory& traj) {
  json j{{"states", traj.states}, {"actions", traj.actions}};
  if (traj.rewards) j["rewards"] = *traj.rewards;
  if (traj.final_state >= 0) j["final_state"] = traj.final_state;
  j["terminated"] = traj.terminated;
  return j;
}

namespace {

json segment_json(const Segment& seg) {
  json j{{"states", seg.states}, {"actions", seg.actions}};
  if (seg.source_traj >= 0) {
    j["source"] = seg.source_traj;
    j["start"] = seg.start_index;
  }
  if (seg.oracle_rewards) j["rewards"] = *seg.oracle_rewards;
  return j;
}

[[noreturn]] void schema_error(const fs::path& path, std::size_t line, const std::string& what) {
  throw Error(ErrorCode::Schema, path.string() + ":" + std::to_string(line) + ": " + what);
}

std::vector<int> int_array(const json& j, const char* key) {
  const json& v = j.at(key);
  if (!v.is_array()) throw std::invalid_argument(std::string(key) + " is not an array");
  std::vector<int> out;
  out.reserve(v.size());
  for (const json& x : v) {
    if (!x.is_number_integer()) throw std::invalid_argument(std::string(key) + " holds a non-integer");
    out.push_back(x.get<int>());
  }
  return out;
}

std::optional<std::vector<double>> optional_reals(const json& j, const char* key) {
  if (!j.contains(key)) return std::nullopt;
  const json& v = j.at(key);
  if (!v.is_array()) throw std::invalid_argument(std::string(key) + " is not an array");
  std::vector<double> out;
  for (const json& x : v) {
    if (!x.is_number()) throw std::invalid_argument(std::string(key) + " holds a non-number");
    out.push_back(x.get<double>());
  }
  return out;
}

Segment segment_from_json(const json& j) {
  if (!j.is_object()) throw std::invalid_argument("segment is not an object");
  Segment seg;
  seg.states = int_array(j, "states");
  seg.actions = int_array(j, "actions");
  if (seg.states.size() != seg.actions.size())
    throw std::invalid_argument("states and actions differ in length");
  if (seg.states.empty()) throw std::invalid_argument("empty segment");
  if (j.contains("source")) seg.source_traj = j.at("source").get<int>();
  if (j.contains("start")) seg.start_index = j.at("start").get<int>();
  seg.oracle_rewards = optional_reals(j, "rewards");
  return seg;
}

Trajectory trajectory_from_json(const json& j) {
  if (!j.is_object()) throw std::invalid_argument("line is not an object");
  Trajectory t;
  t.states = int_array(j, "states");
  t.actions = int_array(j, "actions");
  if (t.states.size() != t.actions.size())
    throw std::invalid_argument("states and actions differ in length");
  t.rewards = optional_reals(j, "rewards");
  if (t.rewards && t.rewards->size() != t.actions.size())
    throw std::invalid_argument("rewards length differs from actions");
  t.final_state = j.value("final_state", -1);
  t.terminated = j.value("terminated", false);
  return t;
}

json meta_json(const DatasetMeta& m) {
  return {{"env_id", m.env_id}, {"behavior_policy", m.behavior_policy}, {"seed", m.seed}};
}

fs::path meta_path(const fs::path& path) { return fs::path(path.string() + ".meta.json"); }

DatasetMeta load_meta(const fs::path& path) {
  DatasetMeta m;
  std::ifstream in(meta_path(path));
  if (!in) return m;
  try {
    const json j = json::parse(in);
    m.env_id = j.value("env_id", "");
    m.behavior_policy = j.value("behavior_policy", "");
    m.seed = j.value("seed", std::uint64_t{0});
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Schema, meta_path(path).string() + ": " + e.what());
  }
  return m;
}

template <class Items, class ToJson>
void write_jsonl(const fs::path& path, const Items& items, const DatasetMeta& meta, ToJson to) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::Io, "cannot open " + path.string() + " for writing");
    for (const auto& item : items) out << to(item).dump() << '\n';
    if (!out) throw Error(ErrorCode::Io, "write failed: " + path.string());
  }
  std::ofstream m(meta_path(path), std::ios::binary | std::ios::trunc);
  m << meta_json(meta).dump(2) << '\n';
}

template <class Parse>
auto read_jsonl(const fs::path& path, Parse parse) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  std::vector<decltype(parse(json{}))> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      schema_error(path, lineno, std::string("malformed JSON: ") + e.what());
    }
    try {
      out.push_back(parse(j));
    } catch (const Error&) {
      throw;
    } catch (const std::exception& e) {
      schema_error(path, lineno, e.what());
    }
  }
  if (out.empty()) throw Error(ErrorCode::EmptyDataset, path.string() + " holds no records");
  return out;
}

}  // namespace

json to_json(const PreferencePair& pair) {
  json j{{"seg0", segment_json(pair.seg0)}, {"seg1", segment_json(pair.seg1)}};
  // Keep integral labels integral on disk: 0 | 0.5 | 1.
  if (pair.label == 0.0 || pair.label == 1.0)
    j["label"] = static_cast<int>(pair.label);
  else
    j["label"] = pair.label;
  return j;
}

void save_dataset(const UnlabeledDataset& dataset, const fs::path& path) {
  write_jsonl(path, dataset.trajectories, dataset.meta,
              [](const Trajectory& t) { return to_json(t); });
}

void save_dataset(const PreferenceDataset& dataset, const fs::path& path) {
  write_jsonl(path, dataset.pairs, dataset.meta,
              [](const PreferencePair& p) { return to_json(p); });
}

UnlabeledDataset load_unlabeled(const fs::path& path) {
  UnlabeledDataset ds;
  ds.trajectories = read_jsonl(path, trajectory_from_json);
  ds.meta = load_meta(path);
  return ds;
}

PreferenceDataset load_preferences(const fs::path& path) {
  PreferenceDataset ds;
  ds.pairs = read_jsonl(path, [](const json& j) {
    if (!j.is_object()) throw std::invalid_argument("line is not an object");
    PreferencePair p;
    p.seg0 = segment_from_json(j.at("seg0"));
    p.seg1 = segment_from_json(j.at("seg1"));
    if (p.seg0.length() != p.seg1.length())
      throw std::invalid_argument("seg0 and seg1 differ in length");
    const json& y = j.at("label");
    if (!y.is_number()) throw std::invalid_argument("label is not a number");
    p.label = y.get<double>();
    if (p.label != 0.0 && p.label != 0.5 && p.label != 1.0)
      throw std::invalid_argument("label must be 0, 0.5 or 1");
    return p;
  });
  ds.meta = load_meta(path);
  return ds;
}

}  // namespace hpl
