#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "cellsurv/config.hpp"
#include "cellsurv/datagen.hpp"
#include "cellsurv/errors.hpp"
#include "cellsurv/graph.hpp"
#include "cellsurv/metrics.hpp"
#include "cellsurv/pipeline.hpp"
#include "cellsurv/survival.hpp"
#include "cellsurv/tensor.hpp"

namespace py = pybind11;
using namespace pybind11::literals;
using namespace cellsurv;

namespace {

std::vector<Event> to_events(const std::vector<bool>& observed) {
  std::vector<Event> out;
  out.reserve(observed.size());
  for (bool o : observed) out.push_back(o ? Event::observed : Event::censored);
  return out;
}

std::vector<SurvivalOutcome> to_outcomes(const std::vector<double>& time, const std::vector<bool>& observed,
                                         const std::vector<double>& risk) {
  if (time.size() != observed.size() || (!risk.empty() && risk.size() != time.size())) {
    throw DimensionError("time, event and risk must have equal length");
  }
  std::vector<SurvivalOutcome> out(time.size());
  for (std::size_t i = 0; i < time.size(); ++i) {
    out[i] = {time[i], observed[i] ? Event::observed : Event::censored, risk.empty() ? 0.0 : risk[i]};
  }
  return out;
}

RunConfig config_from(const std::map<std::string, std::string>& overrides) {
  RunConfig cfg;
  for (const auto& [k, v] : overrides) set_config_value(cfg, k, v);
  return cfg;
}

py::dict km_dict(const KMCurve& k) {
  py::dict d;
  d["time"] = k.event_times;
  d["survival_prob"] = k.survival_prob;
  d["at_risk"] = k.at_risk;
  d["median_survival"] = k.median_survival();
  return d;
}

}  // namespace

PYBIND11_MODULE(_cellsurv, m) {
  m.doc() = "Sparse multi-modal cellular-graph survival models";

  auto base = py::register_exception<Error>(m, "CellsurvError", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<ValidationError>(m, "ValidationError", base.ptr());
  py::register_exception<DataError>(m, "DataError", base.ptr());
  py::register_exception<NumericalError>(m, "NumericalError", base.ptr());
  py::register_exception<DegenerateInputError>(m, "DegenerateInputError", base.ptr());

  m.def(
      "build_knn_graph",
      [](const Eigen::Ref<const Eigen::MatrixXd>& xy, const std::vector<bool>& positive,
         const Eigen::Ref<const Eigen::MatrixXd>& features, double width, double height, int k, double max_edge_len) {
        if (xy.cols() != 2 || xy.rows() != features.rows() || static_cast<std::size_t>(xy.rows()) != positive.size()) {
          throw DimensionError("xy must be c x 2 with one type flag and one feature row per cell");
        }
        std::vector<CellRecord> cells(static_cast<std::size_t>(xy.rows()));
        for (Eigen::Index i = 0; i < xy.rows(); ++i) {
          auto& c = cells[static_cast<std::size_t>(i)];
          c.x = xy(i, 0);
          c.y = xy(i, 1);
          c.type = positive[static_cast<std::size_t>(i)] ? CellType::positive : CellType::negative;
          c.features.resize(static_cast<std::size_t>(features.cols()));
          for (Eigen::Index f = 0; f < features.cols(); ++f) c.features[static_cast<std::size_t>(f)] = features(i, f);
        }
        const auto g = cellsurv::build_knn_graph(cells, {width, height}, {k, max_edge_len});
        py::array_t<std::uint32_t> edges({static_cast<py::ssize_t>(g.edges.size()), py::ssize_t{2}});
        auto e = edges.mutable_unchecked<2>();
        for (std::size_t i = 0; i < g.edges.size(); ++i) {
          e(static_cast<py::ssize_t>(i), 0) = g.edges[i].first;
          e(static_cast<py::ssize_t>(i), 1) = g.edges[i].second;
        }
        return py::dict("edges"_a = edges, "node_features"_a = g.node_features, "positions"_a = g.positions);
      },
      "xy"_a, "positive"_a, "features"_a, "width"_a, "height"_a, "k"_a = 5, "max_edge_len"_a = 60.0,
      "KNN cellular graph; returns edges (E x 2, first < second), node features and relative positions.");

  m.def(
      "concordance_index",
      [](const std::vector<double>& time, const std::vector<bool>& event, const std::vector<double>& risk) {
        return cellsurv::concordance_index(to_outcomes(time, event, risk));
      },
      "time"_a, "event"_a, "risk"_a, "Harrell's C-index; event is True for an observed death.");

  m.def(
      "kaplan_meier",
      [](const std::vector<double>& time, const std::vector<bool>& event) {
        return km_dict(cellsurv::kaplan_meier(to_outcomes(time, event, {})));
      },
      "time"_a, "event"_a);

  m.def(
      "logrank_test",
      [](const std::vector<double>& time_a, const std::vector<bool>& event_a, const std::vector<double>& time_b,
         const std::vector<bool>& event_b) {
        const auto r = cellsurv::logrank_test(to_outcomes(time_a, event_a, {}), to_outcomes(time_b, event_b, {}));
        return py::make_tuple(r.chi_square, r.p_value);
      },
      "time_a"_a, "event_a"_a, "time_b"_a, "event_b"_a, "Returns (chi_square, p_value).");

  m.def("chi_square_sf", &chi_square_sf, "x"_a, "dof"_a);

  m.def(
      "cox_loss",
      [](const std::vector<double>& risk, const std::vector<double>& time, const std::vector<bool>& event) {
        if (risk.size() != time.size() || risk.size() != event.size()) {
          throw DimensionError("risk, time and event must have equal length");
        }
        ParameterStore store;
        store.add("risk", Eigen::Map<const Eigen::VectorXd>(risk.data(), static_cast<Eigen::Index>(risk.size())));
        Tape tape;
        const auto events = to_events(event);
        Var loss = cox_batch_loss(tape.param(store, 0), time, events);
        const double value = loss.scalar();
        const Matrix grad = tape.backward(loss)[0];
        return py::make_tuple(value, std::vector<double>(grad.data(), grad.data() + grad.size()));
      },
      "risk"_a, "time"_a, "event"_a, "Batched Cox loss and its gradient with respect to the risks.");

  m.def(
      "bcp_sample_batch",
      [](const std::vector<bool>& event, std::size_t batch_size, std::optional<double> alpha, std::uint64_t seed) {
        Rng rng(seed);
        const auto events = to_events(event);
        return cellsurv::bcp_sample_batch(events, BatchSpec{batch_size, alpha}, rng);
      },
      "event"_a, "batch_size"_a, "alpha"_a, "seed"_a = 0,
      "Indices of one batch; alpha=None samples uniformly.");

  m.def(
      "generate_synthetic",
      [](const std::map<std::string, std::string>& overrides, std::optional<std::filesystem::path> out_dir) {
        const auto cfg = config_from(overrides);
        cfg.synth.validate();
        const auto data = cellsurv::generate_synthetic(cfg.synth);
        if (out_dir) write_synthetic(*out_dir, data);
        std::vector<std::string> ids;
        std::vector<double> times;
        std::vector<bool> events;
        for (const auto& p : data.metadata) {
          ids.push_back(p.patient_id);
          times.push_back(p.survival_time);
          events.push_back(p.event == Event::observed);
        }
        return py::dict("patient_id"_a = ids, "time"_a = times, "event"_a = events, "true_risk"_a = data.true_risk,
                        "positive_fraction"_a = data.positive_fraction, "n_images"_a = data.cells.size());
      },
      "overrides"_a = std::map<std::string, std::string>{}, "out_dir"_a = py::none(),
      "Synthetic cohort from synth_* config keys; optionally writes the CSVs.");

  m.def(
      "run_command",
      [](const std::string& command, const std::map<std::string, std::string>& overrides) {
        auto cfg = config_from(overrides);
        CommandOutput out;
        {
          py::gil_scoped_release release;
          out = cellsurv::run_command(command, cfg);
        }
        return py::make_tuple(out.run_dir, out.report_json);
      },
      "command"_a, "overrides"_a = std::map<std::string, std::string>{},
      "Runs a pipeline command; returns (run_dir, report_json).");

  m.def("commands", [] { return kCommands; });
  m.def("default_config", [] { return config_values(RunConfig{}); });
}
