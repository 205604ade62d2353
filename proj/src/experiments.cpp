#include "hpl/experiments.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <thread>

#include "hpl/error.hpp"
#include "hpl/pipeline.hpp"
#include "hpl/stats.hpp"

namespace hpl {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string num(double x) {
  if (std::isnan(x)) return "nan";
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c == '\n' ? ' ' : c;
  }
  return out + "\"";
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

std::string join(const std::vector<std::string>& cols) {
  std::string out;
  for (std::size_t i = 0; i < cols.size(); ++i) out += (i ? "," : "") + csv_field(cols[i]);
  return out + "\n";
}

void write_json_checked(const fs::path& path, const json& doc, const std::vector<std::string>& keys) {
  write_text_atomic(path, doc.dump(2) + "\n");
  std::ifstream in(path);
  json back;
  try {
    back = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Schema, path.string() + ": " + e.what());
  }
  for (const auto& k : keys)
    if (!back.contains(k)) throw Error(ErrorCode::Schema, path.string() + ": missing key '" + k + "'");
  if (back != doc) throw Error(ErrorCode::Schema, path.string() + ": content differs after re-reading");
}

}  // namespace

void parallel_for(int n, int jobs, const std::function<void(int)>& fn) {
  jobs = std::max(1, std::min(jobs, n));
  if (jobs == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::mutex mu;
  int next = 0;
  std::vector<std::thread> workers;
  for (int w = 0; w < jobs; ++w) {
    workers.emplace_back([&] {
      for (;;) {
        int i;
        {
          std::lock_guard lock(mu);
          if (next >= n) return;
          i = next++;
        }
        fn(i);
      }
    });
  }
  for (auto& t : workers) t.join();
}

void validate_csv(const fs::path& path, const std::vector<std::string>& header, std::size_t rows,
                  const std::vector<std::string>& numeric_columns) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Schema, "cannot re-read " + path.string());
  std::string line;
  if (!std::getline(in, line) || split_csv_line(line) != header)
    throw Error(ErrorCode::Schema, path.string() + ": unexpected header");
  std::vector<std::size_t> numeric;
  for (const auto& c : numeric_columns) {
    const auto it = std::find(header.begin(), header.end(), c);
    if (it == header.end()) throw Error(ErrorCode::Schema, "numeric column '" + c + "' not in header");
    numeric.push_back(static_cast<std::size_t>(it - header.begin()));
  }
  std::size_t count = 0;
  while (std::getline(in, line)) {
    ++count;
    const auto cols = split_csv_line(line);
    const std::string where = path.string() + ":" + std::to_string(count + 1) + ": ";
    if (cols.size() != header.size()) throw Error(ErrorCode::Schema, where + "wrong column count");
    for (std::size_t i : numeric) {
      double v;
      const auto& f = cols[i];
      const auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (ec != std::errc() || p != f.data() + f.size())
        throw Error(ErrorCode::Schema, where + "column '" + header[i] + "' is not numeric");
    }
  }
  if (count != rows)
    throw Error(ErrorCode::Schema,
                path.string() + ": expected " + std::to_string(rows) + " rows, found " + std::to_string(count));
}

// ---------------------------------------------------------------------------

std::vector<GamblingRow> run_gambling(const ExperimentConfig& base, int num_seeds, int jobs) {
  if (num_seeds < 1) throw Error(ErrorCode::Config, "num_seeds must be >= 1");
  if (base.env.id != "gambling") throw Error(ErrorCode::Config, "the gambling experiment needs env.id = gambling");
  std::vector<GamblingRow> rows(2 * static_cast<std::size_t>(num_seeds));
  parallel_for(num_seeds, jobs, [&](int i) {
    GamblingRow& mr = rows[2 * i];
    GamblingRow& hp = rows[2 * i + 1];
    mr = {i, "mr", kNaN, kNaN, kNaN, kNaN, ""};
    hp = {i, "hpl", kNaN, kNaN, kNaN, kNaN, ""};
    ExperimentConfig cfg = base;
    cfg.method.name = Method::Hpl;
    cfg.seed = derive_seed(base.seed, static_cast<std::uint64_t>(i));
    using namespace gambling;
    try {
      const StageSeeds seeds = StageSeeds::derive(cfg);
      const RunData data = generate_data(cfg, seeds);
      const FeatureSpace features = feature_space(data.mdp);
      try {
        const auto r = train_reward(data.preferences, RewardKind::Markovian, features, nullptr, cfg.reward, seeds.reward);
        mr.r_s1_a1 = r.model.reward(kStart, kRisky);
        mr.r_s1_a2 = r.model.reward(kStart, kSafe);
        mr.train_accuracy = r.diagnostics.train_accuracy;
        mr.final_loss = r.diagnostics.final_loss;
      } catch (const std::exception& e) {
        mr.error = e.what();
      }
      try {
        const auto vae = run_vae_stage(cfg, data, seeds);
        const auto r = train_reward(data.preferences, RewardKind::Hindsight, features, vae, cfg.reward, seeds.reward);
        Rng rng(seeds.label);
        hp.r_s1_a1 = marginal_reward(r.model, kStart, kRisky, cfg.marginal_mode(), cfg.label.samples, &rng);
        hp.r_s1_a2 = marginal_reward(r.model, kStart, kSafe, cfg.marginal_mode(), cfg.label.samples, &rng);
        hp.train_accuracy = r.diagnostics.train_accuracy;
        hp.final_loss = r.diagnostics.final_loss;
      } catch (const std::exception& e) {
        hp.error = e.what();
      }
    } catch (const std::exception& e) {
      mr.error = hp.error = e.what();
    }
  });
  return rows;
}

bool GamblingSummary::passed() const {
  return failures == 0 && all_accurate && hpl_prefers_safe >= kMinHplSafe && mr_prefers_risky >= kMinMrRisky;
}

json GamblingSummary::to_json() const {
  return {{"num_seeds", num_seeds},
          {"failures", failures},
          {"all_accurate", all_accurate},
          {"hpl_prefers_safe", hpl_prefers_safe},
          {"mr_prefers_risky", mr_prefers_risky},
          {"thresholds", {{"hpl_prefers_safe", kMinHplSafe}, {"mr_prefers_risky", kMinMrRisky}}},
          {"passed", passed()}};
}

GamblingSummary summarize_gambling(const std::vector<GamblingRow>& rows) {
  GamblingSummary s;
  s.all_accurate = true;
  int hpl_safe = 0, mr_risky = 0;
  for (const GamblingRow& r : rows) {
    if (!r.error.empty()) {
      ++s.failures;
      s.all_accurate = false;
      continue;
    }
    if (r.train_accuracy != 1.0) s.all_accurate = false;
    if (r.method == "hpl")
      hpl_safe += r.r_s1_a2 > r.r_s1_a1;
    else
      mr_risky += r.r_s1_a1 >= r.r_s1_a2;
  }
  s.num_seeds = static_cast<int>(rows.size() / 2);
  // Failed seeds count against the fractions.
  s.hpl_prefers_safe = s.num_seeds ? static_cast<double>(hpl_safe) / s.num_seeds : 0.0;
  s.mr_prefers_risky = s.num_seeds ? static_cast<double>(mr_risky) / s.num_seeds : 0.0;
  return s;
}

void write_gambling(const std::vector<GamblingRow>& rows, const GamblingSummary& summary, const fs::path& dir) {
  const std::vector<std::string> header{"seed", "method", "r_s1_a1", "r_s1_a2", "train_accuracy", "final_loss", "error"};
  std::string text = join(header);
  for (const GamblingRow& r : rows)
    text += join({std::to_string(r.seed), r.method, num(r.r_s1_a1), num(r.r_s1_a2), num(r.train_accuracy),
                  num(r.final_loss), r.error});
  write_text_atomic(dir / "gambling.csv", text);
  validate_csv(dir / "gambling.csv", header, rows.size(),
               {"seed", "r_s1_a1", "r_s1_a2", "train_accuracy", "final_loss"});
  write_json_checked(dir / "summary.json", summary.to_json(),
                     {"num_seeds", "failures", "all_accurate", "hpl_prefers_safe", "mr_prefers_risky", "passed"});
}

// ---------------------------------------------------------------------------

std::vector<MismatchRow> run_mismatch(const ExperimentConfig& base, const std::vector<Method>& methods, int num_seeds,
                                      int jobs) {
  if (num_seeds < 1) throw Error(ErrorCode::Config, "num_seeds must be >= 1");
  if (methods.empty()) throw Error(ErrorCode::Config, "no methods to compare");
  std::vector<MismatchRow> rows(methods.size() * static_cast<std::size_t>(num_seeds));
  parallel_for(static_cast<int>(rows.size()), jobs, [&](int idx) {
    const int seed = idx / static_cast<int>(methods.size());
    const Method method = methods[idx % methods.size()];
    MismatchRow& row = rows[idx];
    row = {to_string(method), seed, kNaN, kNaN, ""};
    ExperimentConfig cfg = base;
    cfg.method.name = method;
    cfg.seed = derive_seed(base.seed, static_cast<std::uint64_t>(seed));
    try {
      const auto result = run_pipeline(cfg, std::nullopt);
      row.mean_return = result.eval.mean_return;
      row.std_return = result.eval.std_return;
    } catch (const std::exception& e) {
      row.error = e.what();
    }
  });
  return rows;
}

json summarize_mismatch(const ExperimentConfig& base, const std::vector<MismatchRow>& rows) {
  std::map<std::string, std::vector<double>> by_method;
  for (const auto& r : rows)
    if (r.error.empty()) by_method[r.method].push_back(r.mean_return);
  json methods = json::object();
  for (const auto& [m, v] : by_method)
    methods[m] = {{"mean", mean(v)}, {"std", stddev(v)}, {"runs", v.size()}};
  return {{"pref_policy", base.data.pref_policy},
          {"unlabeled_policy", base.data.unlabeled_policy},
          {"shift", base.data.pref_policy != base.data.unlabeled_policy},
          {"methods", methods}};
}

void write_mismatch(const std::vector<MismatchRow>& rows, const json& summary, const fs::path& dir) {
  const std::vector<std::string> header{"method", "seed", "mean_return", "std_return", "error"};
  std::string text = join(header);
  for (const auto& r : rows) text += join({r.method, std::to_string(r.seed), num(r.mean_return), num(r.std_return), r.error});
  write_text_atomic(dir / "mismatch.csv", text);
  validate_csv(dir / "mismatch.csv", header, rows.size(), {"seed", "mean_return", "std_return"});
  write_json_checked(dir / "summary.json", summary, {"pref_policy", "unlabeled_policy", "shift", "methods"});
}

// ---------------------------------------------------------------------------

void apply_axis(ExperimentConfig& config, const std::string& axis, const std::string& value) {
  if (axis == "k") {
    config.set("vae.future_length", value);
  } else if (axis == "pref_size") {
    config.set("data.pref_pairs", value);
  } else if (axis == "unlabeled_size") {
    config.set("data.unlabeled_fraction", value);
  } else if (axis == "N") {
    config.set("label.samples", value);
    config.label.marginal = "monte-carlo";
  } else {
    throw Error(ErrorCode::Config, "unknown sweep axis '" + axis + "' (k, pref_size, unlabeled_size, N)");
  }
}

std::vector<SweepRow> run_sweep(const ExperimentConfig& base, const std::string& axis,
                                const std::vector<std::string>& values, int num_seeds, int jobs) {
  if (values.empty()) throw Error(ErrorCode::Config, "sweep needs at least one value");
  if (num_seeds < 1) throw Error(ErrorCode::Config, "num_seeds must be >= 1");
  // Reject bad axes and values before any run starts.
  std::vector<ExperimentConfig> configs;
  for (const auto& v : values) {
    ExperimentConfig cfg = base;
    apply_axis(cfg, axis, v);
    cfg.validate();
    configs.push_back(cfg);
  }
  std::vector<SweepRow> rows(values.size() * static_cast<std::size_t>(num_seeds));
  parallel_for(static_cast<int>(rows.size()), jobs, [&](int idx) {
    const std::size_t vi = static_cast<std::size_t>(idx) / num_seeds;
    const int seed = idx % num_seeds;
    SweepRow& row = rows[idx];
    row = {axis, values[vi], seed, "mean_return", kNaN, ""};
    ExperimentConfig cfg = configs[vi];
    cfg.seed = derive_seed(base.seed, static_cast<std::uint64_t>(seed));
    try {
      row.score = run_pipeline(cfg, std::nullopt).eval.mean_return;
    } catch (const std::exception& e) {
      row.error = e.what();
    }
  });
  return rows;
}

void write_sweep(const std::vector<SweepRow>& rows, const fs::path& path) {
  const std::vector<std::string> header{"axis", "value", "seed", "metric", "score", "error"};
  std::string text = join(header);
  for (const auto& r : rows) text += join({r.axis, r.value, std::to_string(r.seed), r.metric, num(r.score), r.error});
  write_text_atomic(path, text);
  validate_csv(path, header, rows.size(), {"seed", "score"});
}

}  // namespace hpl
