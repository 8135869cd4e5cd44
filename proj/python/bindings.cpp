// SPDX-License-Identifier: Apache-2.0
//
// Low-level extension module. Structured results cross the boundary as JSON
// text; the seqfuse package decodes them into plain Python objects.
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>
#include <sstream>

#include "seqfuse/checkpoint.hpp"
#include "seqfuse/cli.hpp"
#include "seqfuse/dataset.hpp"
#include "seqfuse/error.hpp"
#include "seqfuse/fusion.hpp"
#include "seqfuse/http_api.hpp"
#include "seqfuse/protocol.hpp"
#include "seqfuse/service.hpp"
#include "seqfuse/synthetic.hpp"
#include "seqfuse/training.hpp"

namespace py = pybind11;
using namespace seqfuse;
using json = nlohmann::json;

namespace {

using DatasetPtr = std::shared_ptr<Dataset>;

json record_json(const FeatureRecord& r) {
  json j = {{"id", r.id}, {"pid", r.pid}, {"cam", r.cam}, {"split", std::string(to_string(r.split))},
            {"feat", r.feature}};
  if (r.image) j["img"] = *r.image;
  return j;
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig cfg = j.value("full_scale", false) ? TrainConfig::full_scale() : TrainConfig{};
  cfg.iterations = j.value("iterations", cfg.iterations);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.model.hidden = j.value("hidden", cfg.model.hidden);
  cfg.lr.base = j.value("lr", cfg.lr.base);
  cfg.lr.t0 = j.value("t0", cfg.lr.t0);
  cfg.lr.t1 = j.value("t1", cfg.lr.t1);
  cfg.lambda0 = j.value("lambda0", cfg.lambda0);
  cfg.batch.identities = j.value("batch_identities", cfg.batch.identities);
  cfg.loss.use_monotonicity = j.value("mloss", cfg.loss.use_monotonicity);
  cfg.loss.soft_margin = j.value("soft_margin", cfg.loss.soft_margin);
  cfg.loss.margin = j.value("margin", cfg.loss.margin);
  if (j.contains("fc_activation")) cfg.model.fc_activation = parse_fc_activation(j["fc_activation"].get<std::string>());
  if (j.contains("gru_input")) cfg.model.gru_input = parse_gru_input(j["gru_input"].get<std::string>());
  return cfg;
}

std::vector<ProtocolPlan> plans_for(const Dataset& d, const std::string& protocol,
                                    const std::optional<std::vector<int>>& gallery) {
  const int cameras = d.camera_count();
  if (parse_protocol(protocol) == Protocol::vsp) {
    if (gallery) throw ArgumentError("gallery applies to the fsp protocol only");
    return vsp_plans(cameras, d);
  }
  std::vector<std::vector<int>> galleries;
  if (gallery) {
    galleries.push_back(*gallery);
  } else {
    for (int c = 1; c <= cameras; ++c) galleries.push_back({c});
  }
  std::vector<ProtocolPlan> plans;
  for (const auto& g : galleries) {
    for (ProtocolPlan p : fsp_plans(g, cameras, d)) {
      p.id = static_cast<int>(plans.size());
      plans.push_back(std::move(p));
    }
  }
  return plans;
}

class PyService {
 public:
  PyService(DatasetPtr d, std::optional<FusionModel> model, const std::string& mode, std::size_t top,
            std::optional<std::string> journal) {
    ServiceConfig cfg;
    cfg.mode = parse_service_mode(mode);
    cfg.default_top = top;
    if (journal) cfg.journal = *journal;
    svc_ = std::make_unique<OperatorService>(std::move(d), std::move(model), cfg);
  }

  std::string create(const std::string& query, std::optional<std::string> fuser, std::optional<std::vector<int>> scope) {
    CreateSessionRequest r{query, std::nullopt, std::move(scope)};
    if (fuser) r.fuser = parse_fuser(*fuser);
    return to_json(svc_->create_session(r)).dump();
  }
  std::string confirm(const std::string& id, int camera, const std::string& record, std::optional<double> elapsed) {
    return to_json(svc_->confirm(id, camera, record, elapsed)).dump();
  }
  std::string restart(const std::string& id) { return to_json(svc_->restart(id)).dump(); }
  std::string state(const std::string& id, std::optional<std::size_t> top) {
    return to_json(svc_->get_state(id, top)).dump();
  }
  std::string logs(std::optional<std::string> id) { return logs_document(svc_->logs(id)).dump(); }
  py::tuple handle(const std::string& method, const std::string& path, const std::map<std::string, std::string>& query,
                   const std::string& body) {
    const ApiResponse r = handle_request(*svc_, {method, path, query, body});
    return py::make_tuple(r.status, r.content_type, r.body, r.headers);
  }

 private:
  std::unique_ptr<OperatorService> svc_;
};

}  // namespace

PYBIND11_MODULE(_seqfuse, m) {
  m.doc() = "Sequential multi-camera feature fusion for person re-identification";

  auto base = py::register_exception<Error>(m, "SeqfuseError", PyExc_RuntimeError);
  py::register_exception<ArgumentError>(m, "ArgumentError", base.ptr());
  py::register_exception<DimensionError>(m, "DimensionError", base.ptr());
  py::register_exception<DataError>(m, "DataError", base.ptr());
  auto numeric = py::register_exception<NumericError>(m, "NumericError", base.ptr());
  py::register_exception<DivergenceError>(m, "DivergenceError", numeric.ptr());
  py::register_exception<NotFoundError>(m, "NotFoundError", base.ptr());
  py::register_exception<ConflictError>(m, "ConflictError", base.ptr());

  m.def("lambda_r", &lambda_r, py::arg("t"), py::arg("T"));
  m.def(
      "scheduled_value", [](double t, double base, double t0, double t1) { return scheduled_value(t, {base, t0, t1}); },
      py::arg("t"), py::arg("base"), py::arg("t0"), py::arg("t1"));
  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = run_cli(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"));

  py::class_<Dataset, DatasetPtr>(m, "Dataset")
      .def_property_readonly("size", &Dataset::size)
      .def_property_readonly("dim", &Dataset::dim)
      .def_property_readonly("camera_count", &Dataset::camera_count)
      .def("record_json", [](const Dataset& d, std::size_t i) { return record_json(d.record(i)).dump(); })
      .def("find", &Dataset::find)
      .def("identities", [](const Dataset& d, const std::string& split) { return d.identities(parse_split(split)); })
      .def("format_manifest", &format_manifest)
      .def("save", [](const Dataset& d, const std::string& path) { save_manifest(d, path); })
      .def("__len__", &Dataset::size);

  m.def("load_manifest", [](const std::string& path) { return std::make_shared<Dataset>(load_manifest(path)); });
  m.def("parse_manifest", [](const std::string& text) { return std::make_shared<Dataset>(parse_manifest(text)); });
  m.def(
      "generate_synthetic",
      [](const std::string& spec_json) {
        const SyntheticSpec spec = synthetic_spec_from_json(json::parse(spec_json));
        return std::make_shared<Dataset>(generate_synthetic(spec).dataset);
      },
      py::arg("spec_json") = "{}");
  m.def("default_spec_json", [] { return to_json(SyntheticSpec{}).dump(); });

  py::class_<FusionModel>(m, "FusionModel")
      .def_property_readonly("input_dim", [](const FusionModel& f) { return f.config.input_dim; })
      .def_property_readonly("hidden", [](const FusionModel& f) { return f.config.hidden; })
      .def_property_readonly("parameter_count", &FusionModel::parameter_count)
      .def("fuse", [](const FusionModel& f, const std::vector<Vec>& seq) { return fuse_sequence(f, seq).fused; })
      .def("save", [](const FusionModel& f, const std::string& path) { save_checkpoint(f, path); })
      .def("__eq__", [](const FusionModel& a, const FusionModel& b) { return a == b; });

  m.def(
      "init_params",
      [](std::uint64_t seed, std::size_t input_dim, std::size_t hidden) {
        FusionConfig cfg;
        cfg.input_dim = input_dim;
        cfg.hidden = hidden;
        return init_params(seed, cfg);
      },
      py::arg("seed"), py::arg("input_dim"), py::arg("hidden"));
  m.def("load_checkpoint", [](const std::string& path) { return load_checkpoint(path).model; });
  m.def(
      "train",
      [](const DatasetPtr& d, const std::string& config_json) {
        const TrainConfig cfg = train_config_from_json(json::parse(config_json));
        py::gil_scoped_release release;
        TrainResult r = train(*d, cfg);
        std::vector<std::string> lines;
        for (const LossRecord& rec : r.history) lines.push_back(format_loss_line(rec));
        return std::make_pair(std::move(r.model), std::move(lines));
      },
      py::arg("dataset"), py::arg("config_json") = "{}");
  m.def(
      "run_protocol",
      [](const DatasetPtr& d, std::optional<FusionModel> model, const std::string& protocol, const std::string& fuser,
         std::optional<std::vector<int>> gallery) {
        const auto plans = plans_for(*d, protocol, gallery);
        py::gil_scoped_release release;
        return to_json(run_protocol(model ? &*model : nullptr, *d, plans, parse_fuser(fuser))).dump();
      },
      py::arg("dataset"), py::arg("model") = py::none(), py::arg("protocol") = "vsp", py::arg("fuser") = "gru",
      py::arg("gallery") = py::none());

  py::class_<PyService>(m, "Service")
      .def(py::init<DatasetPtr, std::optional<FusionModel>, const std::string&, std::size_t,
                    std::optional<std::string>>(),
           py::arg("dataset"), py::arg("model") = py::none(), py::arg("mode") = "demo", py::arg("top") = 20,
           py::arg("journal") = py::none())
      .def("create", &PyService::create, py::arg("query_record"), py::arg("fuser") = py::none(),
           py::arg("scope") = py::none())
      .def("confirm", &PyService::confirm, py::arg("session"), py::arg("camera"), py::arg("record"),
           py::arg("elapsed_seconds") = py::none())
      .def("restart", &PyService::restart)
      .def("state", &PyService::state, py::arg("session"), py::arg("top") = py::none())
      .def("logs", &PyService::logs, py::arg("session") = py::none())
      .def("handle", &PyService::handle, py::arg("method"), py::arg("path"),
           py::arg("query") = std::map<std::string, std::string>{}, py::arg("body") = "");
}
