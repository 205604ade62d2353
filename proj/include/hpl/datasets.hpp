#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hpl/envs.hpp"

namespace hpl {

/// Fixed-length window of (state, action) steps cut from a trajectory.
struct Segment {
  std::vector<int> states;
  std::vector<int> actions;
  /// Index of the source trajectory, or -1 when unknown.
  int source_traj = -1;
  int start_index = 0;
  /// Ground-truth rewards, visible to annotators only.
  std::optional<std::vector<double>> oracle_rewards;

  std::size_t length() const { return actions.size(); }
  bool operator==(const Segment&) const = default;
};

/// Label convention: y = 0 means seg0 is preferred, y = 1 means seg1 is
/// preferred, y = 0.5 is a neutral label.
struct PreferencePair {
  Segment seg0;
  Segment seg1;
  double label = 0.0;

  bool operator==(const PreferencePair&) const = default;
};

struct DatasetMeta {
  std::string env_id;
  std::string behavior_policy;
  std::uint64_t seed = 0;

  bool operator==(const DatasetMeta&) const = default;
};

struct UnlabeledDataset {
  std::vector<Trajectory> trajectories;
  DatasetMeta meta;

  /// Copy with every oracle reward removed.
  UnlabeledDataset learner_view() const;
  bool operator==(const UnlabeledDataset&) const = default;
};

struct PreferenceDataset {
  std::vector<PreferencePair> pairs;
  DatasetMeta meta;

  bool operator==(const PreferenceDataset&) const = default;
};

UnlabeledDataset collect_unlabeled(const MDPSpec& mdp, const TabularPolicy& behavior,
                                   int num_traj, std::uint64_t seed,
                                   const std::string& behavior_id = "custom",
                                   const std::string& env_id = "custom");

/// Uniformly sample `num_segments` windows of length H. Trajectories shorter
/// than H are skipped.
std::vector<Segment> slice_segments(const UnlabeledDataset& dataset, int H, int num_segments,
                                    std::uint64_t seed);

/// Pair consecutive segments: (segments[0], segments[1]), (segments[2], ...).
std::vector<std::pair<Segment, Segment>> pair_up(std::vector<Segment> segments);

struct Annotator {
  enum class Mode { Deterministic, BtNoisy };
  Mode mode = Mode::Deterministic;
  double temperature = 1.0;

  static Annotator parse(const std::string& name, double temperature = 1.0);
};

/// Scripted labeler that compares segment returns.
PreferenceDataset annotate(const std::vector<std::pair<Segment, Segment>>& pairs,
                           const Annotator& annotator, std::uint64_t seed);

/// The four hand-written pairs over two-step gambling trajectories.
PreferenceDataset gambling_preference_dataset();

// JSONL persistence. Metadata goes to a `<path>.meta.json` sidecar.
void save_dataset(const UnlabeledDataset& dataset, const std::filesystem::path& path);
void save_dataset(const PreferenceDataset& dataset, const std::filesystem::path& path);
UnlabeledDataset load_unlabeled(const std::filesystem::path& path);
PreferenceDataset load_preferences(const std::filesystem::path& path);

nlohmann::json to_json(const Trajectory& traj);
nlohmann::json to_json(const PreferencePair& pair);

}  // namespace hpl
