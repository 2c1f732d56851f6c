// Python bindings: parsing, tree distance, bucketing helpers, encoder and
// retrieval lookups, prompt rendering, and the pipeline stages.

#include <pybind11/numpy.h>
#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <algorithm>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <spdlog/spdlog.h>

#include "stare/bucketing.hpp"
#include "stare/encoder.hpp"
#include "stare/error.hpp"
#include "stare/log.hpp"
#include "stare/parse_tree.hpp"
#include "stare/pipeline.hpp"
#include "stare/retrieval.hpp"
#include "stare/tree_distance.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;

namespace {

py::object to_python(const nlohmann::json& value) {
  return py::module_::import("json").attr("loads")(value.dump());
}

stare::ParseDialect dialect_of(const std::string& name) { return stare::parse_dialect_name(name); }

py::array_t<double> to_array(const std::vector<double>& v) {
  py::array_t<double> out(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

const stare::InjectionDirection* injection_of(const stare::RetrievalIndex& index) {
  const auto& inj = index.provenance().injection;
  return inj ? &*inj : nullptr;
}

using Stage = stare::StageResult (*)(const stare::PipelineConfig&);

Stage stage_named(const std::string& name) {
  if (name == "bucket") return stare::run_bucket;
  if (name == "mine") return stare::run_mine;
  if (name == "train") return stare::run_train;
  if (name == "mli") return stare::run_mli;
  if (name == "eval") return stare::run_eval;
  throw stare::Error(stare::ErrorCode::InvalidArgument,
                     "unknown stage '" + name + "' (expected bucket, mine, train, mli or eval)");
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Structure-aware exemplar retrieval for semantic parsing";

  PYBIND11_CONSTINIT static py::gil_safe_call_once_and_store<py::object> error_type;
  error_type.call_once_and_store_result(
      [&] { return py::object(py::exception<stare::Error>(m, "StareError", PyExc_ValueError)); });
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const stare::Error& e) {
      const py::object& type = error_type.get_stored();
      py::object instance = type(e.what());
      instance.attr("code") = std::string(stare::to_string(e.code()));
      PyErr_SetObject(type.ptr(), instance.ptr());
    }
  });

  stare::logger()->set_level(spdlog::level::warn);
  m.def(
      "set_log_level",
      [](const std::string& level) { stare::logger()->set_level(spdlog::level::from_str(level)); },
      py::arg("level"), "trace, debug, info, warn, err or off");

  // Trees and distance.
  py::class_<stare::ParseTree>(m, "ParseTree")
      .def_property_readonly("label", &stare::ParseTree::label)
      .def_property_readonly("children",
                             [](const stare::ParseTree& t) {
                               return std::vector<stare::ParseTree>(t.children().begin(),
                                                                    t.children().end());
                             })
      .def_property_readonly("is_leaf", &stare::ParseTree::is_leaf)
      .def("__len__", &stare::ParseTree::size)
      .def("__str__", &stare::ParseTree::to_string)
      .def("__repr__", [](const stare::ParseTree& t) { return "ParseTree(" + t.to_string() + ")"; })
      .def(py::self == py::self);

  m.def("parse", [](const std::string& text, const std::string& dialect) {
    return stare::parse(text, dialect_of(dialect));
  }, py::arg("text"), py::arg("dialect") = "bracketed");
  m.def("anonymize_leaves", &stare::anonymize_leaves, py::arg("tree"));
  m.def(
      "ted",
      [](const stare::ParseTree& a, const stare::ParseTree& b, double insertion, double deletion,
         double relabel) { return stare::ted(a, b, {insertion, deletion, relabel}); },
      py::arg("a"), py::arg("b"), py::arg("insertion") = 1.0, py::arg("deletion") = 1.0,
      py::arg("relabel") = 1.0);
  m.def("sim_struct", &stare::sim_struct, py::arg("a"), py::arg("b"));

  // Bucketing helpers.
  m.def("extract_features", [](const std::string& parse, const std::string& dialect) {
    const auto f = stare::extract_features(parse, dialect_of(dialect));
    return std::vector<std::string>(f.begin(), f.end());
  }, py::arg("parse"), py::arg("dialect") = "bracketed");
  m.def("lsh_params", [](double tau, std::size_t permutations) {
    const auto p = stare::lsh_params(tau, permutations);
    return py::make_tuple(p.bands, p.rows, p.threshold());
  }, py::arg("tau"), py::arg("permutations") = 128, "(bands, rows, threshold)");

  // Encoder and retrieval.
  py::class_<stare::Encoder>(m, "Encoder")
      .def_static("load", py::overload_cast<const fs::path&>(&stare::Encoder::load), py::arg("path"))
      .def("embed", [](const stare::Encoder& e, const std::string& text) { return to_array(e.embed(text)); },
           py::arg("text"))
      .def_property_readonly("fingerprint", &stare::Encoder::fingerprint)
      .def_property_readonly("dim", [](const stare::Encoder& e) { return e.config().dim; })
      .def_property_readonly("layers", [](const stare::Encoder& e) { return e.config().layers; })
      .def_property_readonly("vocabulary_size", [](const stare::Encoder& e) { return e.vocab().size(); });

  py::class_<stare::RetrievalIndex>(m, "RetrievalIndex")
      .def_static("load", py::overload_cast<const fs::path&>(&stare::RetrievalIndex::load),
                  py::arg("path"))
      .def("__len__", &stare::RetrievalIndex::size)
      .def_property_readonly("ids", &stare::RetrievalIndex::ids)
      .def_property_readonly("injected", [](const stare::RetrievalIndex& i) { return injection_of(i) != nullptr; })
      .def(
          "topk",
          [](const stare::RetrievalIndex& index, const stare::Encoder& encoder, const std::string& query,
             std::size_t k, std::optional<std::string> exclude) {
            std::vector<stare::Hit> hits;
            {
              py::gil_scoped_release release;
              hits = index.topk(encoder, query, k, injection_of(index),
                                exclude ? std::optional<std::string_view>(*exclude) : std::nullopt);
            }
            py::list out;
            for (const auto& h : hits) out.append(py::make_tuple(h.id, h.score));
            return out;
          },
          py::arg("encoder"), py::arg("query"), py::arg("k") = 5, py::arg("exclude") = py::none(),
          "[(id, cosine)] best first; the index's own injection is applied to the query");

  m.def(
      "bm25_topk",
      [](const std::vector<std::pair<std::string, std::string>>& bank, const std::string& query,
         std::size_t k) {
        std::vector<stare::Record> records;
        for (const auto& [id, utterance] : bank) records.push_back({id, utterance, ""});
        py::list out;
        for (const auto& h : stare::bm25_topk(records, query, k)) out.append(py::make_tuple(h.id, h.score));
        return out;
      },
      py::arg("bank"), py::arg("query"), py::arg("k") = 5, "bank: [(id, utterance)]");

  m.def(
      "build_prompt",
      [](const std::string& task, const std::vector<std::pair<std::string, std::string>>& exemplars,
         const std::string& query, const std::string& template_name, std::optional<std::string> schema) {
        stare::PromptSpec spec{task, exemplars.size(), stare::parse_prompt_template(template_name), schema};
        std::vector<stare::Exemplar> ex;
        for (const auto& [u, p] : exemplars) ex.push_back({u, p, std::nullopt});
        return stare::build_prompt(spec, ex, query);
      },
      py::arg("task"), py::arg("exemplars"), py::arg("query"), py::arg("template") = "conversational",
      py::arg("schema") = py::none(), "exemplars: [(utterance, parse)] in ascending similarity");

  // Pipeline.
  m.def(
      "write_fixture",
      [](const fs::path& dir, std::size_t clusters, std::size_t train_per_cluster,
         std::size_t dev_per_cluster, std::size_t probe_sentences, std::uint64_t seed) {
        return stare::write_fixture_bundle(
            dir, {clusters, train_per_cluster, dev_per_cluster, probe_sentences, seed});
      },
      py::arg("dir"), py::arg("clusters") = 8, py::arg("train_per_cluster") = 24,
      py::arg("dev_per_cluster") = 4, py::arg("probe_sentences") = 400, py::arg("seed") = 7,
      "Writes the synthetic fixture and returns its config.json path");

  m.def(
      "run",
      [](const fs::path& config_path, const std::vector<std::string>& stages,
         std::optional<fs::path> out) {
        std::vector<Stage> selected;
        for (const auto& name : stages) selected.push_back(stage_named(name));
        auto config = stare::load_config(config_path, stare::stare_environment());
        if (out) {
          config.out_dir = fs::absolute(*out).lexically_normal();
          config.effective["output"]["dir"] = config.out_dir.string();
        }
        nlohmann::json reports = nlohmann::json::object();
        {
          py::gil_scoped_release release;
          stare::DirectoryLock lock(config.out_dir);
          stare::archive_config(config);
          for (std::size_t i = 0; i < selected.size(); ++i) reports[stages[i]] = selected[i](config).report;
        }
        return to_python(reports);
      },
      py::arg("config"),
      py::arg("stages") = std::vector<std::string>{"bucket", "mine", "train", "mli", "eval"},
      py::arg("out") = py::none(), "Runs stages in order and returns {stage: report}");
}
