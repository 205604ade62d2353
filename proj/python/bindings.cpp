// Python extension: JSON-in/JSON-out wrappers around the pipeline and the
// reward models. The pure-Python package decodes the JSON strings.
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "hpl/config.hpp"
#include "hpl/envs.hpp"
#include "hpl/error.hpp"
#include "hpl/experiments.hpp"
#include "hpl/pipeline.hpp"

namespace py = pybind11;
using nlohmann::json;

namespace {

hpl::ExperimentConfig make_config(const std::string& preset, const std::vector<std::string>& overrides,
                                  std::optional<std::uint64_t> seed) {
  hpl::ExperimentConfig config = hpl::preset_config(preset);
  for (const auto& o : overrides) hpl::apply_override(config, o);
  if (seed) config.seed = *seed;
  config.validate();
  return config;
}

std::string pipeline(const std::string& preset, const std::vector<std::string>& overrides,
                     std::optional<std::uint64_t> seed, std::optional<std::string> out) {
  const auto config = make_config(preset, overrides, seed);
  hpl::PipelineResult r;
  {
    py::gil_scoped_release release;
    r = hpl::run_pipeline(config, out ? std::optional<std::filesystem::path>(*out) : std::nullopt);
  }
  json doc{{"eval", r.eval.to_json()}, {"seeds", r.seeds.to_json()}};
  if (r.policy) {
    std::vector<int> greedy;
    for (int s = 0; s < r.data.mdp.num_states; ++s) greedy.push_back(r.policy->greedy_action(s));
    doc["greedy_policy"] = greedy;
  }
  if (!r.manifest.is_null()) doc["manifest"] = r.manifest;
  return doc.dump();
}

std::string gambling(int seeds, const std::vector<std::string>& overrides, std::optional<std::uint64_t> seed) {
  const auto config = make_config("gambling", overrides, seed);
  std::vector<hpl::GamblingRow> rows;
  {
    py::gil_scoped_release release;
    rows = hpl::run_gambling(config, seeds);
  }
  json out = json::array();
  for (const auto& r : rows) {
    json row{{"seed", r.seed}, {"method", r.method}, {"r_s1_a1", r.r_s1_a1}, {"r_s1_a2", r.r_s1_a2},
             {"train_accuracy", r.train_accuracy}, {"final_loss", r.final_loss}};
    if (!r.error.empty()) row["error"] = r.error;
    out.push_back(row);
  }
  return json{{"rows", out}, {"summary", hpl::summarize_gambling(rows).to_json()}}.dump();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Native core of the hpl package";

  py::register_exception<hpl::Error>(m, "HplError", PyExc_RuntimeError);

  m.def("config_text", [](const std::string& preset, const std::vector<std::string>& overrides,
                          std::optional<std::uint64_t> seed) { return make_config(preset, overrides, seed).to_text(); },
        py::arg("preset") = "random", py::arg("overrides") = std::vector<std::string>{},
        py::arg("seed") = std::nullopt);
  m.def("run_pipeline", &pipeline, py::arg("preset") = "random", py::arg("overrides") = std::vector<std::string>{},
        py::arg("seed") = std::nullopt, py::arg("out") = std::nullopt);
  m.def("run_gambling", &gambling, py::arg("seeds"), py::arg("overrides") = std::vector<std::string>{},
        py::arg("seed") = std::nullopt);

  m.def("derive_seed", py::overload_cast<std::uint64_t, std::string_view>(&hpl::derive_seed));
  m.def("derive_seed", py::overload_cast<std::uint64_t, std::uint64_t>(&hpl::derive_seed));
  m.def("gambling_mdp", [] { return hpl::to_json(hpl::gambling_mdp()).dump(); });
  m.def("random_mdp",
        [](std::uint64_t seed, int states, int actions, int branching, double sparsity, int horizon) {
          return hpl::to_json(hpl::random_mdp(seed, states, actions, branching, sparsity, horizon)).dump();
        },
        py::arg("seed"), py::arg("states") = 10, py::arg("actions") = 3, py::arg("branching") = 3,
        py::arg("sparsity") = 0.5, py::arg("horizon") = 20);
  m.def("bt_prob", &hpl::bt_prob, py::arg("r0"), py::arg("r1"));

  py::class_<hpl::RewardModel>(m, "RewardModel")
      .def_static(
          "load",
          [](const std::string& dir, std::optional<std::string> vae_dir) {
            std::shared_ptr<const hpl::VaeModel> vae;
            if (vae_dir) vae = std::make_shared<const hpl::VaeModel>(hpl::VaeModel::load(*vae_dir));
            return hpl::RewardModel::load(dir, vae);
          },
          py::arg("dir"), py::arg("vae_dir") = std::nullopt)
      .def_property_readonly("kind", [](const hpl::RewardModel& r) { return hpl::to_string(r.kind()); })
      .def_property_readonly("num_codes", &hpl::RewardModel::num_codes)
      .def("reward", py::overload_cast<int, int>(&hpl::RewardModel::reward, py::const_), py::arg("s"), py::arg("a"))
      .def("reward_with_code", py::overload_cast<int, int, int>(&hpl::RewardModel::reward, py::const_), py::arg("s"),
           py::arg("a"), py::arg("code"))
      .def(
          "marginal",
          [](const hpl::RewardModel& r, int s, int a, const std::string& mode, int samples, std::uint64_t seed) {
            hpl::Rng rng(seed);
            return hpl::marginal_reward(r, s, a, hpl::parse_marginal_mode(mode), samples, &rng);
          },
          py::arg("s"), py::arg("a"), py::arg("mode") = "exact", py::arg("samples") = 20, py::arg("seed") = 0);
}
