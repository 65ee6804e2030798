#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "fruitcomm/pipeline.hpp"

namespace py = pybind11;
using namespace fruitcomm;

namespace {

py::dict trajectory_dict(const Trajectory& t) {
  py::list turns;
  for (const TurnRecord& r : t.turns) {
    py::dict d;
    d["agent"] = std::string(1, to_char(r.agent));
    d["incoming"] = r.trace.incoming_message;
    d["choice"] = r.trace.choice;
    d["message"] = r.trace.message;
    d["heard"] = r.heard;
    d["choice_dist"] = r.trace.choice_dist;
    d["message_dist"] = r.trace.message_dist;
    turns.append(d);
  }
  py::dict out;
  out["configuration"] = static_cast<int>(t.assignment.configuration()) + 1;
  out["tool_player"] = std::string(1, to_char(t.assignment.tool_player));
  out["position1"] = std::string(1, to_char(t.assignment.position1));
  out["reward"] = t.reward;
  out["terminal_choice"] = t.terminal_choice;
  out["conversation_length"] = t.conversation_length;
  out["turns"] = turns;
  return out;
}

ExperimentConfig make_config(const py::dict& settings) {
  ExperimentConfig c;
  for (auto item : settings) {
    const std::string key = py::str(item.first);
    std::string value;
    if (py::isinstance<py::bool_>(item.second))
      value = item.second.cast<bool>() ? "true" : "false";
    else
      value = py::str(item.second);
    set_config_value(c, key, value);
  }
  c.validate();
  return c;
}

py::dict metrics_dict(const MetricValues& v) {
  py::dict d;
  for (std::size_t m = 0; m < kMetricCount; ++m) d[metric_name(static_cast<Metric>(m))] = v[m];
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Core of the fruit and tools communication workbench";

  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  m.def("derive_seed", &derive_seed, py::arg("parent"), py::arg("tag"), py::arg("index") = 0);

  py::enum_<ObjectKind>(m, "ObjectKind").value("fruit", ObjectKind::fruit).value("tool", ObjectKind::tool);

  py::class_<Instance>(m, "Instance")
      .def_readonly("kind", &Instance::kind)
      .def_readonly("values", &Instance::values)
      .def_readonly("category", &Instance::category)
      .def_readonly("category_name", &Instance::category_name);

  py::class_<GameSample>(m, "GameSample")
      .def_readonly("fruit", &GameSample::fruit)
      .def_readonly("tool1", &GameSample::tool1)
      .def_readonly("tool2", &GameSample::tool2);

  py::class_<CategoryTable>(m, "CategoryTable")
      .def("category_names",
           [](const CategoryTable& t, ObjectKind kind) {
             std::vector<std::string> names;
             for (const Category& c : t.categories(kind)) names.push_back(c.name);
             return names;
           })
      .def_readonly("fruit_feature_names", &CategoryTable::fruit_feature_names)
      .def_readonly("tool_feature_names", &CategoryTable::tool_feature_names);

  m.def("load_category_table", &load_category_table, py::arg("path"));
  m.def("default_table_path", &default_table_path);

  py::class_<UtilityMatrices>(m, "UtilityMatrices")
      .def_static("defaults", &UtilityMatrices::defaults)
      .def_readonly("tool_map", &UtilityMatrices::tool_map)
      .def_readonly("fruit_map", &UtilityMatrices::fruit_map)
      .def_readonly("affinity", &UtilityMatrices::affinity)
      .def_readonly("offset", &UtilityMatrices::offset);

  m.def(
      "utility",
      [](const std::vector<double>& tool, const std::vector<double>& fruit) {
        Instance t{ObjectKind::tool, tool, 0, ""};
        Instance f{ObjectKind::fruit, fruit, 0, ""};
        return utility(t, f, UtilityMatrices::defaults());
      },
      py::arg("tool_values"), py::arg("fruit_values"), "Utility of a tool (15 values) for a fruit (11 values).");

  m.def(
      "generate_split",
      [](const CategoryTable& table, std::uint64_t seed, std::vector<std::size_t> counts) {
        if (counts.size() != 4) throw std::invalid_argument("counts: train, test, validation, transfer");
        const DatasetSplit s = generate_split(table, seed, {counts[0], counts[1], counts[2], counts[3]});
        py::dict d;
        d["train"] = s.in_domain_train;
        d["test"] = s.in_domain_test;
        d["validation"] = s.validation;
        d["transfer"] = s.transfer;
        return d;
      },
      py::arg("table"), py::arg("seed"), py::arg("counts"));
  m.def("best_tool", [](const GameSample& s) { return best_tool(s, UtilityMatrices::defaults()); });
  m.def("read_samples", &read_samples_file, py::arg("path"), py::arg("table"));

  m.def(
      "message_effect",
      [](std::vector<double> observed, std::vector<std::vector<double>> support, bool exhaustive, std::size_t samples,
         std::size_t counterfactuals, std::uint64_t seed) {
        MEConfig c;
        c.exhaustive = exhaustive;
        c.samples = samples;
        c.counterfactuals = counterfactuals;
        Rng rng(seed);
        return message_effect(InterventionTable{std::move(observed), std::move(support)}, c, rng).value;
      },
      py::arg("observed"), py::arg("support"), py::arg("exhaustive") = true, py::arg("samples") = 10,
      py::arg("counterfactuals") = 10, py::arg("seed") = 1,
      "Message effect from p(z|m) and p(z|m') for each intervention symbol.");

  py::class_<AgentParameters>(m, "AgentParameters")
      .def_static(
          "initialize", [](std::uint64_t seed) {
            Rng rng(seed);
            return AgentParameters::initialize({}, rng);
          },
          py::arg("seed"))
      .def("size", [](const AgentParameters& p) { return p.params().size(); });

  m.def(
      "play",
      [](const AgentParameters& a, const AgentParameters& b, const GameSample& sample, int configuration,
         bool memory, bool communication, bool sample_mode, std::uint64_t seed) {
        if (configuration < 1 || configuration > 4) throw std::invalid_argument("configuration must be 1..4");
        EpisodeConfig e;
        e.memory_enabled = memory;
        e.communication_enabled = communication;
        e.mode = sample_mode ? ActionMode::sample : ActionMode::argmax;
        Rng rng(seed);
        const Assignment as = assign(static_cast<TestConfiguration>(configuration - 1), sample);
        return trajectory_dict(play_episode(a, b, as, e, UtilityMatrices::defaults(), rng));
      },
      py::arg("a"), py::arg("b"), py::arg("sample"), py::arg("configuration") = 1, py::arg("memory") = true,
      py::arg("communication") = true, py::arg("sample_mode") = false, py::arg("seed") = 1);

  m.def(
      "load_agents",
      [](const std::filesystem::path& path) {
        const auto agents = agents_from_checkpoint(load_checkpoint(path));
        return py::make_tuple(agents[0], agents[1]);
      },
      py::arg("checkpoint"));

  m.def(
      "config_text", [](const py::dict& settings) { return config_text(make_config(settings)); },
      py::arg("settings") = py::dict());
  m.def(
      "config_hash", [](const py::dict& settings) { return config_hash(make_config(settings)); },
      py::arg("settings") = py::dict());

  m.def(
      "gen_data",
      [](const std::filesystem::path& out, const py::dict& settings) {
        const ExperimentConfig c = make_config(settings);
        py::gil_scoped_release release;
        gen_data(c, out);
      },
      py::arg("out"), py::arg("settings") = py::dict());

  m.def(
      "train",
      [](const std::filesystem::path& data, const std::filesystem::path& out, const py::dict& settings, bool resume,
         std::size_t stop_after) {
        const ExperimentConfig c = make_config(settings);
        TrainOutcome o;
        {
          py::gil_scoped_release release;
          o = train_command(c, data, out, {resume, stop_after, nullptr});
        }
        py::dict d;
        d["completed"] = o.result.completed;
        d["success"] = o.result.success;
        d["final_validation"] = o.result.final_validation;
        d["batches_done"] = o.batches_done;
        d["resumed"] = o.resumed;
        return d;
      },
      py::arg("data"), py::arg("out"), py::arg("settings") = py::dict(), py::arg("resume") = false,
      py::arg("stop_after") = 0);

  m.def(
      "analyze",
      [](const std::vector<std::filesystem::path>& checkpoints, const std::filesystem::path& split,
         const std::filesystem::path& out, const py::dict& settings) {
        const ExperimentConfig c = make_config(settings);
        std::vector<MEReport> reports;
        {
          py::gil_scoped_release release;
          reports = analyze_command(c, checkpoints, split, out);
        }
        py::list l;
        for (const MEReport& r : reports) l.append(metrics_dict(r.values));
        return l;
      },
      py::arg("checkpoints"), py::arg("split"), py::arg("out"), py::arg("settings") = py::dict());

  m.def(
      "probe",
      [](const std::filesystem::path& checkpoint, const std::filesystem::path& split, const std::filesystem::path& out,
         const py::dict& settings, const std::vector<std::string>& tasks, const std::vector<std::string>& filters,
         bool inverted, bool self_play) {
        const ExperimentConfig c = make_config(settings);
        ProbeOptions o;
        o.tasks.clear();
        o.filters.clear();
        for (const auto& t : tasks) o.tasks.push_back(parse_probe_task(t));
        for (const auto& f : filters) o.filters.push_back(parse_utterance_filter(f));
        o.inverted = inverted;
        o.self_play = self_play;
        ProbeOutcome r;
        {
          py::gil_scoped_release release;
          r = probe_command(c, checkpoint, split, out, o);
        }
        py::list rows;
        for (const ProbeSummary& s : r.summaries) {
          py::dict d;
          d["task"] = to_string(s.task);
          d["filter"] = to_string(s.filter);
          d["accuracy"] = s.accuracy_pct.mean;
          d["stats"] = s.stats_pct.mean;
          rows.append(d);
        }
        py::dict d;
        d["probes"] = rows;
        if (r.self_play) {
          d["paired"] = r.self_play->paired_pct;
          d["a_with_a"] = r.self_play->a_with_a_pct;
          d["b_with_b"] = r.self_play->b_with_b_pct;
        }
        return d;
      },
      py::arg("checkpoint"), py::arg("split"), py::arg("out"), py::arg("settings") = py::dict(),
      py::arg("tasks") = std::vector<std::string>{"fruit"}, py::arg("filters") = std::vector<std::string>{"F"},
      py::arg("inverted") = false, py::arg("self_play") = false);
}
