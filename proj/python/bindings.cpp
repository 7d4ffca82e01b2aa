#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "avr/error.hpp"
#include "avr/pipeline.hpp"

namespace py = pybind11;

namespace {

using Box = std::tuple<double, double, double, double>;

avr::BoundingBox to_box(const Box& b) {
  return avr::BoundingBox(std::get<0>(b), std::get<1>(b), std::get<2>(b), std::get<3>(b));
}

Box from_box(const avr::BoundingBox& b) { return {b.x(), b.y(), b.w(), b.h()}; }

avr::Matrix to_matrix(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2) throw std::invalid_argument("expected a 2-d array");
  const auto rows = static_cast<std::size_t>(a.shape(0));
  const auto cols = static_cast<std::size_t>(a.shape(1));
  return avr::Matrix(rows, cols, std::vector<double>(a.data(), a.data() + rows * cols));
}

py::array_t<double> to_array(const avr::Matrix& m) {
  py::array_t<double> out({m.rows(), m.cols()});
  std::copy(m.values().begin(), m.values().end(), out.mutable_data());
  return out;
}

py::list report_rows(const avr::EvalReport& report) {
  py::list rows;
  for (const auto& r : report.rows) {
    py::dict d;
    d["task"] = avr::task_name(r.task);
    d["k"] = r.per_pair_k;
    d["n"] = r.n;
    d["recall"] = r.recall;
    d["matched"] = r.matched;
    d["total"] = r.total;
    rows.append(d);
  }
  return rows;
}

}  // namespace

PYBIND11_MODULE(_avr, m) {
  m.doc() = "Visual relationship detection with attention and a random-walk prior";

  py::register_exception<avr::DataError>(m, "DataError", PyExc_RuntimeError);
  py::register_exception<avr::NumericError>(m, "NumericError", PyExc_ArithmeticError);

  m.def("iou", [](const Box& a, const Box& b) { return avr::iou(to_box(a), to_box(b)); },
        py::arg("a"), py::arg("b"), "IoU of two (x, y, w, h) boxes");
  m.def("union_box", [](const Box& a, const Box& b) { return from_box(avr::union_box(to_box(a), to_box(b))); },
        py::arg("subject"), py::arg("object"));
  m.def("softmax", [](const std::vector<double>& v) { return avr::softmax(v); });
  m.def("normalize_attention", [](const std::vector<double>& v) { return avr::normalize_attention(v); });

  m.def(
      "walk_iterative",
      [](const py::array_t<double>& d0, const py::array_t<double>& m_dense, double lambda, std::size_t steps) {
        return to_array(avr::walk_iterative(to_matrix(d0), avr::SparseMatrix::from_dense(to_matrix(m_dense)),
                                            lambda, steps));
      },
      py::arg("d0"), py::arg("m"), py::arg("lam"), py::arg("steps"));
  m.def(
      "walk_closed_form",
      [](const py::array_t<double>& d0, const py::array_t<double>& m_dense, double lambda) {
        return to_array(
            avr::walk_closed_form(to_matrix(d0), avr::SparseMatrix::from_dense(to_matrix(m_dense)), lambda));
      },
      py::arg("d0"), py::arg("m"), py::arg("lam"));

  m.def("parse_config", [](const std::string& text) { return avr::parse_config(text).to_json(); },
        "validate a JSON config and return its canonical form");
  m.def("config_hash", [](const std::string& text) { return avr::parse_config(text).hash(); });

  // Pipeline commands take the JSON config text and return the log.
  m.def("synth", [](const std::string& config) {
    std::ostringstream log;
    avr::cmd_synth(avr::parse_config(config), log);
    return log.str();
  });
  m.def("build_prior", [](const std::string& config) {
    std::ostringstream log;
    avr::cmd_build_prior(avr::parse_config(config), log);
    return log.str();
  });
  m.def("train", [](const std::string& config) {
    std::ostringstream log;
    py::list epochs;
    for (const auto& e : avr::cmd_train(avr::parse_config(config), log)) {
      epochs.append(py::make_tuple(e.epoch, e.predicate_loss, e.attention_loss));
    }
    return py::make_tuple(epochs, log.str());
  });
  m.def(
      "evaluate",
      [](const std::string& config, std::optional<std::string> predictions_in) {
        std::ostringstream log;
        const auto report = avr::cmd_eval(avr::parse_config(config), log, predictions_in);
        return py::make_tuple(report_rows(report), log.str());
      },
      py::arg("config"), py::arg("predictions_in") = py::none());
}
