#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hpl/config.hpp"

namespace hpl {

// ---------------------------------------------------------------------------
// Gambling credit-assignment scatter

struct GamblingRow {
  int seed = 0;
  std::string method;  // mr | hpl
  double r_s1_a1 = 0.0;
  double r_s1_a2 = 0.0;
  double train_accuracy = 0.0;
  double final_loss = 0.0;
  std::string error;  // empty on success
};

struct GamblingSummary {
  int num_seeds = 0;
  int failures = 0;
  /// Every trained model fits all four pairs.
  bool all_accurate = false;
  /// Fraction of seeds with r(s1, a2) > r(s1, a1) for hpl.
  double hpl_prefers_safe = 0.0;
  /// Fraction of seeds with r(s1, a1) >= r(s1, a2) for mr.
  double mr_prefers_risky = 0.0;

  static constexpr double kMinHplSafe = 0.9;
  static constexpr double kMinMrRisky = 0.25;

  bool passed() const;
  nlohmann::json to_json() const;
};

/// One row per (seed, method). Seed i uses master seed derive_seed(base.seed, i).
/// Failures are recorded in the row and the run continues.
std::vector<GamblingRow> run_gambling(const ExperimentConfig& base, int num_seeds, int jobs = 1);
GamblingSummary summarize_gambling(const std::vector<GamblingRow>& rows);
/// Writes gambling.csv and summary.json, then re-reads and validates both.
void write_gambling(const std::vector<GamblingRow>& rows, const GamblingSummary& summary,
                    const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Distribution mismatch between preference and unlabeled data

struct MismatchRow {
  std::string method;
  int seed = 0;
  double mean_return = 0.0;
  double std_return = 0.0;
  std::string error;
};

/// Each method runs the full pipeline on the same per-seed data, with
/// preferences from data.pref_policy and unlabeled data from
/// data.unlabeled_policy. Rows are ordered by seed, then method.
std::vector<MismatchRow> run_mismatch(const ExperimentConfig& base, const std::vector<Method>& methods, int num_seeds,
                                      int jobs = 1);
nlohmann::json summarize_mismatch(const ExperimentConfig& base, const std::vector<MismatchRow>& rows);
void write_mismatch(const std::vector<MismatchRow>& rows, const nlohmann::json& summary,
                    const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// One-axis sweeps

struct SweepRow {
  std::string axis;
  std::string value;
  int seed = 0;
  std::string metric;
  double score = 0.0;
  std::string error;
};

/// Axes: k, pref_size, unlabeled_size (fraction of the unlabeled data), N
/// (prior samples; forces monte-carlo labels).
void apply_axis(ExperimentConfig& config, const std::string& axis, const std::string& value);
std::vector<SweepRow> run_sweep(const ExperimentConfig& base, const std::string& axis,
                                const std::vector<std::string>& values, int num_seeds, int jobs = 1);
void write_sweep(const std::vector<SweepRow>& rows, const std::filesystem::path& path);

/// Re-reads a CSV and checks its header, row count and numeric columns.
/// Throws Error(Schema).
void validate_csv(const std::filesystem::path& path, const std::vector<std::string>& header, std::size_t rows,
                  const std::vector<std::string>& numeric_columns);

/// Runs fn(0) .. fn(n - 1) on up to `jobs` threads.
void parallel_for(int n, int jobs, const std::function<void(int)>& fn);

}  // namespace hpl
