#include <pybind11/functional.h>
#include <pybind11/iostream.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <iostream>

#include "slmfuse/cli.hpp"
#include "slmfuse/error.hpp"
#include "slmfuse/pipeline.hpp"

namespace py = pybind11;
using namespace slmfuse;

namespace {

using Labels = py::array_t<std::int8_t, py::array::c_style | py::array::forcecast>;

py::array_t<double> to_numpy(const Tensor& t) {
  py::array_t<double> out({t.rows(), t.cols()});
  std::copy(t.data(), t.data() + t.size(), out.mutable_data());
  return out;
}

Labels labels_to_numpy(const std::vector<LabelVector>& labels, std::size_t k) {
  Labels out({labels.size(), k});
  auto v = out.mutable_unchecked<2>();
  for (std::size_t r = 0; r < labels.size(); ++r)
    for (std::size_t c = 0; c < k; ++c) v(r, c) = labels[r][c];
  return out;
}

std::vector<LabelVector> labels_from_numpy(const Labels& a) {
  if (a.ndim() != 2) throw ValidationError("labels must be a 2-d array (records x tasks)");
  auto v = a.unchecked<2>();
  std::vector<LabelVector> out(a.shape(0), LabelVector(a.shape(1)));
  for (py::ssize_t r = 0; r < a.shape(0); ++r)
    for (py::ssize_t c = 0; c < a.shape(1); ++c) out[r][c] = v(r, c);
  return out;
}

std::vector<std::string> source_names(const std::vector<SourceSpec>& sources) {
  std::vector<std::string> names;
  for (const auto& s : sources) names.push_back(s.name);
  return names;
}

py::dict metrics_dict(const TaskMetrics& m) {
  py::dict d;
  d["task"] = m.task;
  d["tp"] = m.tp;
  d["fp"] = m.fp;
  d["fn"] = m.fn;
  d["tn"] = m.tn;
  d["n_labeled"] = m.n_labeled;
  d["precision"] = m.precision;
  d["recall"] = m.recall;
  d["degenerate"] = m.degenerate();
  return d;
}

py::tuple predictions_tuple(const Predictions& p) {
  return py::make_tuple(to_numpy(p.phi), labels_to_numpy(p.labels, p.phi.cols()));
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Multimodal embedding fusion through a frozen language model";

  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

  // ---- data
  py::class_<Dataset>(m, "Dataset")
      .def("__len__", &Dataset::size)
      .def_property_readonly("mode", [](const Dataset& d) { return to_string(d.mode); })
      .def_readonly("task_names", &Dataset::task_names)
      .def_property_readonly("source_names", [](const Dataset& d) { return source_names(d.sources); })
      .def_readonly("task_sources", &Dataset::task_sources)
      .def_property_readonly("patients", [](const Dataset& d) {
        return py::array_t<std::uint32_t>(d.patients.size(), d.patients.data());
      })
      .def_property_readonly("labels", [](const Dataset& d) { return labels_to_numpy(d.labels, d.num_tasks()); })
      .def(
          "embeddings",
          [](const Dataset& d, const std::string& source) {
            if (d.mode != DataMode::Latent) throw ValidationError("embeddings are stored only for latent datasets");
            return to_numpy(d.embeddings.at(d.source_index(source)));
          },
          py::arg("source"));

  m.def(
      "generate_planted",
      [](std::size_t records, std::uint64_t seed, const std::string& mode) {
        GenConfig g = planted_profile(records);
        g.mode = data_mode_from_string(mode);
        g.sources = desk_sources(g.mode);
        g.seed = seed;
        return generate(g);
      },
      py::arg("records") = 2000, py::arg("seed") = 0, py::arg("mode") = "latent",
      "Planted cross-modal dataset: twelve tasks whose signal spans two or three sources.");
  m.def(
      "generate_table1",
      [](double scale, std::uint64_t seed, bool exact, const std::string& mode) {
        GenConfig g = table1_profile(scale);
        g.exact_counts = exact;
        g.mode = data_mode_from_string(mode);
        g.sources = desk_sources(g.mode);
        g.seed = seed;
        return generate(g);
      },
      py::arg("scale") = 1.0, py::arg("seed") = 0, py::arg("exact") = true, py::arg("mode") = "latent");
  m.def("read_dataset", &read_dataset, py::arg("path"));
  m.def("write_dataset", &write_dataset, py::arg("data"), py::arg("path"));
  m.def(
      "label_counts",
      [](const Dataset& d, std::size_t task) {
        const LabelCounts c = count_labels(d, task);
        return py::make_tuple(c.pos, c.neg, c.missing);
      },
      py::arg("data"), py::arg("task"), "(positive, negative, unlabeled) counts of one task.");
  m.def(
      "planted_threshold",
      [](const std::vector<double>& direction, double rate) { return planted_threshold(direction, rate); },
      py::arg("direction"), py::arg("positive_rate"));
  m.def(
      "ts_features", [](const std::vector<double>& series) { return ts_features(series); }, py::arg("series"));

  // ---- splits
  m.def(
      "split_by_patient",
      [](const std::vector<std::uint32_t>& patients, double ratio, std::uint64_t seed) {
        const Split s = split_by_patient(patients, ratio, seed);
        return py::make_tuple(s.train, s.test);
      },
      py::arg("patients"), py::arg("ratio") = 0.75, py::arg("seed") = 0);
  m.def(
      "make_splits",
      [](const Dataset& d, std::uint64_t seed) {
        const DataSplits s = make_splits(d, seed);
        py::dict out;
        out["fit"] = s.fit;
        out["val"] = s.val;
        out["test"] = s.test;
        return out;
      },
      py::arg("data"), py::arg("seed") = 0);

  // ---- losses
  m.def("wbce_term", &wbce_term, py::arg("y"), py::arg("phi"), py::arg("w_pos") = 1.0, py::arg("w_neg") = 1.0);
  m.def(
      "asl_term", [](int y, double phi, double margin, double gamma_neg) { return asl_term(y, phi, {margin, gamma_neg}); },
      py::arg("y"), py::arg("phi"), py::arg("margin") = 0.05, py::arg("gamma_neg") = 4.0);
  m.def(
      "class_weights",
      [](const Labels& labels) {
        const auto y = labels_from_numpy(labels);
        const ClassWeights w = class_weights(y, labels.shape(1));
        return py::make_tuple(w.pos, w.neg);
      },
      py::arg("labels"), "Per-task (w_pos, w_neg); -1 marks an unlabeled entry.");

  // ---- training
  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_property(
          "loss", [](const TrainConfig& c) { return to_string(c.loss); },
          [](TrainConfig& c, const std::string& s) { c.loss = loss_kind_from_string(s); })
      .def_property(
          "mode", [](const TrainConfig& c) { return to_string(c.mode); },
          [](TrainConfig& c, const std::string& s) { c.mode = train_mode_from_string(s); })
      .def_readwrite("epochs", &TrainConfig::epochs)
      .def_readwrite("batch", &TrainConfig::batch)
      .def_readwrite("lr", &TrainConfig::lr)
      .def_readwrite("wd", &TrainConfig::wd)
      .def_readwrite("beta", &TrainConfig::beta)
      .def_readwrite("threshold", &TrainConfig::threshold)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_property(
          "margin", [](const TrainConfig& c) { return c.asl.margin; }, [](TrainConfig& c, double v) { c.asl.margin = v; })
      .def_property(
          "gamma_neg", [](const TrainConfig& c) { return c.asl.gamma_neg; },
          [](TrainConfig& c, double v) { c.asl.gamma_neg = v; })
      .def_property(
          "d_model", [](const TrainConfig& c) { return c.lm.d_model; }, [](TrainConfig& c, std::size_t v) { c.lm.d_model = v; })
      .def_property(
          "n_layers", [](const TrainConfig& c) { return c.lm.n_layers; },
          [](TrainConfig& c, std::size_t v) { c.lm.n_layers = v; })
      .def_property(
          "n_heads", [](const TrainConfig& c) { return c.lm.n_heads; }, [](TrainConfig& c, std::size_t v) { c.lm.n_heads = v; })
      .def_property(
          "vocab", [](const TrainConfig& c) { return c.lm.vocab; }, [](TrainConfig& c, std::size_t v) { c.lm.vocab = v; })
      .def_property(
          "max_seq", [](const TrainConfig& c) { return c.lm.max_seq; }, [](TrainConfig& c, std::size_t v) { c.lm.max_seq = v; })
      .def_property(
          "lm_seed", [](const TrainConfig& c) { return c.lm.seed; }, [](TrainConfig& c, std::uint64_t v) { c.lm.seed = v; });

  py::class_<Checkpoint>(m, "Checkpoint")
      .def_readonly("config", &Checkpoint::config)
      .def_readonly("task_names", &Checkpoint::task_names)
      .def_property_readonly("source_names", [](const Checkpoint& c) { return source_names(c.sources); })
      .def_readonly("history", &Checkpoint::history)
      .def_readonly("lm_hash", &Checkpoint::lm_hash)
      .def_property_readonly("designated", [](const Checkpoint& c) { return c.designated.indices; })
      .def_property_readonly("param_names", [](const Checkpoint& c) {
        std::vector<std::string> names;
        for (const auto& [name, e] : c.params.entries()) names.push_back(name);
        return names;
      })
      .def(
          "param", [](const Checkpoint& c, const std::string& name) { return to_numpy(c.params.value(name)); },
          py::arg("name"));

  m.def(
      "train",
      [](const Dataset& d, const std::vector<std::size_t>& ids, const TrainConfig& cfg, const EpochCallback& on_epoch) {
        validate(cfg);
        return train(d, ids, cfg, on_epoch);
      },
      py::arg("data"), py::arg("ids"), py::arg("config"), py::arg("on_epoch") = EpochCallback{},
      "Trains projectors on the records `ids`; on_epoch(label, epoch, mean_loss) is called after every epoch.");
  m.def("lm_hash", [](const TrainConfig& cfg) { return FrozenLM(cfg.lm).hash(); }, py::arg("config"));
  m.def("save_checkpoint", &save_checkpoint, py::arg("checkpoint"), py::arg("path"));
  m.def("load_checkpoint", &load_checkpoint, py::arg("path"));

  // ---- prediction and metrics
  m.def(
      "predict",
      [](const Checkpoint& ck, const Dataset& d, const std::vector<std::size_t>& ids, const std::string& mode,
         std::optional<double> threshold) {
        return predictions_tuple(predict(ck, d, ids, parse_predict_mode(mode, ck.sources), threshold));
      },
      py::arg("checkpoint"), py::arg("data"), py::arg("ids"), py::arg("mode") = "joint",
      py::arg("threshold") = py::none(), "Returns (phi, labels) for mode joint, iso-joint or single:<source>.");
  m.def(
      "bss_select",
      [](const Checkpoint& ck, const Dataset& d, const std::vector<std::size_t>& val_ids) {
        const BssSelection s = bss_select(ck, d, val_ids);
        std::vector<std::string> chosen;
        for (std::size_t src : s.source) chosen.push_back(ck.sources[src].name);
        return py::make_tuple(chosen, s.selectable);
      },
      py::arg("checkpoint"), py::arg("data"), py::arg("val_ids"),
      "Best validation source per task and whether each task was selectable.");
  m.def(
      "predict_bss",
      [](const Checkpoint& ck, const Dataset& d, const std::vector<std::size_t>& val_ids,
         const std::vector<std::size_t>& ids) { return predictions_tuple(predict_bss(ck, d, ids, bss_select(ck, d, val_ids))); },
      py::arg("checkpoint"), py::arg("data"), py::arg("val_ids"), py::arg("ids"));
  m.def(
      "precision_recall",
      [](const Labels& predictions, const Labels& labels, std::size_t task) {
        return metrics_dict(precision_recall(labels_from_numpy(predictions), labels_from_numpy(labels), task));
      },
      py::arg("predictions"), py::arg("labels"), py::arg("task") = 0);
  m.def(
      "gradcheck",
      [](std::uint64_t seed, double tol) {
        const GradCheckReport r = pipeline_gradcheck(seed, tol);
        py::dict out;
        out["pass"] = r.pass;
        out["max_rel_error"] = r.max_rel_error;
        return out;
      },
      py::arg("seed") = 0, py::arg("tol") = 1e-4);

  m.def(
      "cli",
      [](const std::vector<std::string>& args) {
        py::scoped_ostream_redirect out_redirect(std::cout, py::module_::import("sys").attr("stdout"));
        py::scoped_ostream_redirect err_redirect(std::cerr, py::module_::import("sys").attr("stderr"));
        return dispatch(args, std::cout, std::cerr);
      },
      py::arg("args"), "Runs a command-line subcommand in-process and returns its exit code.");
}
