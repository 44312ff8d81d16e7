#include <pybind11/complex.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "kbae/checkpoint.hpp"
#include "kbae/cli.hpp"
#include "kbae/dataset.hpp"
#include "kbae/errors.hpp"
#include "kbae/pipeline.hpp"

namespace py = pybind11;
using namespace kbae;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

// (count, M, M) array of normalized phases.
std::vector<PhaseShiftMatrix> to_samples(const Array& a) {
  if (a.ndim() != 3 || a.shape(1) != a.shape(2)) {
    throw ShapeError("expected an array of shape (count, M, M)");
  }
  const std::size_t n = a.shape(0), side = a.shape(1);
  std::vector<PhaseShiftMatrix> out;
  out.reserve(n);
  const double* p = a.data();
  for (std::size_t i = 0; i < n; ++i, p += side * side) {
    out.emplace_back(side, std::vector<double>(p, p + side * side), PhaseDomain::normalized);
  }
  return out;
}

Array to_array(const std::vector<PhaseShiftMatrix>& samples) {
  const std::size_t side = samples.empty() ? 0 : samples.front().side();
  Array out({samples.size(), side, side});
  double* p = out.mutable_data();
  for (const auto& s : samples) p = std::copy(s.values().begin(), s.values().end(), p);
  return out;
}

Array matrix_array(const PhaseShiftMatrix& m) {
  Array out({m.side(), m.side()});
  std::copy(m.values().begin(), m.values().end(), out.mutable_data());
  return out;
}

py::list epoch_records(const TrainReport& r) {
  py::list out;
  for (const auto& e : r.epochs) {
    py::dict d;
    d["epoch"] = e.epoch;
    d["train_loss"] = e.train_loss;
    d["val_nmse"] = e.val_nmse;
    d["lr"] = e.lr;
    d["dead_codewords"] = e.dead_codewords;
    out.append(d);
  }
  return out;
}

ModelConfig make_config(const std::string& variant, std::size_t c, std::size_t z, std::size_t m,
                        std::size_t k0) {
  ModelConfig cfg = parse_variant(variant) == Variant::psfnet ? ModelConfig::psfnet(c, z, m)
                                                               : ModelConfig::psfnet_h(c, z, m);
  cfg.k0 = k0;
  return cfg;
}

}  // namespace

PYBIND11_MODULE(_kbae, m) {
  m.doc() = "Knowledge-base autoencoder for RIS phase-shift feedback";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<StateError>(m, "StateError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());
  py::register_exception<DomainError>(m, "DomainError", base.ptr());
  py::register_exception<RangeError>(m, "RangeError", base.ptr());
  py::register_exception<FormatError>(m, "FormatError", base.ptr());
  py::register_exception<FilesystemError>(m, "FilesystemError", base.ptr());

  m.def(
      "generate_dataset",
      [](std::size_t side, std::size_t count, std::uint64_t seed, std::size_t paths_sr,
         std::size_t paths_rd, std::uint64_t first) {
        ChannelConfig cfg;
        cfg.side = side;
        cfg.seed = seed;
        cfg.paths_sr = paths_sr;
        cfg.paths_rd = paths_rd;
        return to_array(generate_phase_dataset(cfg, first, count));
      },
      py::arg("m") = 32, py::arg("count"), py::arg("seed") = 0, py::arg("paths_sr") = 3,
      py::arg("paths_rd") = 2, py::arg("first") = 0,
      "Normalized optimal phase matrices, shape (count, M, M).");

  m.def(
      "optimal_phase",
      [](const std::vector<cdouble>& h_sr, const std::vector<cdouble>& h_rd, bool literal) {
        return matrix_array(
            optimal_phase(h_sr, h_rd, literal ? PhaseSign::literal : PhaseSign::co_phase));
      },
      py::arg("h_sr"), py::arg("h_rd"), py::arg("literal") = false, "Raw phases in [0, 2pi).");

  m.def(
      "cascaded_gain",
      [](const std::vector<cdouble>& h_sr, const std::vector<cdouble>& h_rd, const Array& phases) {
        const std::size_t side = phases.ndim() == 2 ? phases.shape(0) : 0;
        std::vector<double> v(phases.data(), phases.data() + phases.size());
        return cascaded_gain(h_sr, h_rd, PhaseShiftMatrix(side, std::move(v), PhaseDomain::raw));
      },
      py::arg("h_sr"), py::arg("h_rd"), py::arg("phases"));

  m.def(
      "channel",
      [](std::size_t side, std::uint64_t seed, std::uint64_t index) {
        ChannelConfig cfg;
        cfg.side = side;
        cfg.seed = seed;
        auto ch = gen_channel(cfg, index);
        return py::make_tuple(ch.h_sr, ch.h_rd);
      },
      py::arg("m") = 32, py::arg("seed") = 0, py::arg("index") = 0, "(h_sr, h_rd) for one sample.");

  m.def(
      "nearest_index",
      [](const std::vector<double>& query, const Array& table) {
        if (table.ndim() != 2) throw ShapeError("codebook table must be 2-D (Z, K)");
        Codebook cb(table.shape(0), table.shape(1));
        std::copy(table.data(), table.data() + table.size(), cb.param().value.data());
        return nearest_index(query, cb);
      },
      py::arg("query"), py::arg("table"));

  m.def(
      "encode_bits",
      [](const std::vector<std::uint32_t>& indices, std::uint32_t z) {
        const auto bs = encode_bits(IndexVector{indices, z});
        return py::bytes(reinterpret_cast<const char*>(bs.bytes.data()), bs.bytes.size());
      },
      py::arg("indices"), py::arg("z"));
  m.def(
      "decode_bits",
      [](const py::bytes& payload, std::uint32_t c, std::uint32_t z) {
        const std::string s = payload;
        FeedbackBitstream bs{std::vector<std::uint8_t>(s.begin(), s.end()), c, z, 0};
        bs.bit_count = std::uint64_t(c) * Codebook(z, 1).bits_per_index();
        return decode_bits(bs).indices;
      },
      py::arg("payload"), py::arg("c"), py::arg("z"));

  m.def(
      "compression_stats",
      [](std::size_t n, std::size_t c, std::size_t z) {
        const auto s = compression_stats(n, c, z);
        return py::dict(py::arg("q") = s.q, py::arg("bits") = s.bits, py::arg("ratio") = s.ratio);
      },
      py::arg("n"), py::arg("c"), py::arg("z"));

  m.def("cosine_lr", [](std::uint64_t epoch, double eta_max, double eta_min, std::uint64_t t_max) {
    return cosine_lr(epoch, CosineSchedule{eta_max, eta_min, t_max, true, true});
  }, py::arg("epoch"), py::arg("eta_max") = 0.002, py::arg("eta_min") = 0.0, py::arg("t_max") = 20);

  m.def(
      "nmse",
      [](const Array& ref, const Array& recon) { return nmse(to_samples(ref), to_samples(recon)); },
      py::arg("reference"), py::arg("reconstruction"));

  py::class_<ModelBundle>(m, "Model")
      .def(py::init([](const std::string& variant, std::size_t c, std::size_t z, std::size_t side,
                       std::size_t k0, std::uint64_t seed) {
             return build_model(make_config(variant, c, z, side, k0), seed);
           }),
           py::arg("variant") = "psfnet", py::arg("c") = 16, py::arg("z") = 256,
           py::arg("m") = 32, py::arg("k0") = 2, py::arg("seed") = 1)
      .def_static("load", &load_checkpoint, py::arg("path"))
      .def("save", [](const ModelBundle& self, const std::filesystem::path& p) { save_checkpoint(p, self); })
      .def_property_readonly("variant", [](const ModelBundle& s) { return to_string(s.config.variant); })
      .def_property_readonly("c", [](const ModelBundle& s) { return s.config.c; })
      .def_property_readonly("z", [](const ModelBundle& s) { return s.config.z; })
      .def_property_readonly("k", [](const ModelBundle& s) { return s.config.k; })
      .def_property_readonly("m", [](const ModelBundle& s) { return s.config.side; })
      .def("count_params", [](const ModelBundle& s) { return count_params(s); })
      .def("count_flops", [](const ModelBundle& s) { return count_flops(s); })
      .def(
          "compress",
          [](ModelBundle& self, const Array& theta) {
            if (theta.ndim() != 2) throw ShapeError("expected one (M, M) normalized matrix");
            std::vector<double> v(theta.data(), theta.data() + theta.size());
            const auto bs = compress(self, PhaseShiftMatrix(theta.shape(0), std::move(v), PhaseDomain::normalized));
            return py::bytes(reinterpret_cast<const char*>(bs.bytes.data()), bs.bytes.size());
          },
          py::arg("theta"), "Feedback payload bytes for one normalized matrix.")
      .def(
          "decompress",
          [](ModelBundle& self, const py::bytes& payload) {
            const std::string s = payload;
            FeedbackBitstream bs{std::vector<std::uint8_t>(s.begin(), s.end()),
                                 static_cast<std::uint32_t>(self.config.c),
                                 static_cast<std::uint32_t>(self.config.z), 0};
            bs.bit_count = std::uint64_t(bs.c) * self.codebook.bits_per_index();
            return matrix_array(decompress(self, bs));
          },
          py::arg("payload"), "Raw phases in [0, 2pi).")
      .def(
          "reconstruct",
          [](ModelBundle& self, const Array& samples) { return to_array(reconstruct(self, to_samples(samples))); },
          py::arg("samples"))
      .def(
          "evaluate",
          [](ModelBundle& self, const Array& samples) { return evaluate_nmse(self, to_samples(samples)).nmse; },
          py::arg("samples"));

  m.def(
      "train",
      [](const Array& train_set, const Array& val_set, const std::string& variant, std::size_t c,
         std::size_t z, std::size_t k0, std::size_t epochs, std::size_t batch, double lr_max,
         double lr_min, std::uint64_t t_max, py::object beta, std::uint64_t seed, bool kb_loss) {
        const auto tr = to_samples(train_set);
        const auto va = val_set.size() == 0 ? std::vector<PhaseShiftMatrix>{} : to_samples(val_set);
        TrainConfig cfg;
        cfg.model = make_config(variant, c, z, tr.empty() ? 32 : tr.front().side(), k0);
        cfg.epochs = epochs;
        cfg.batch = batch;
        cfg.schedule.eta_max = lr_max;
        cfg.schedule.eta_min = lr_min;
        cfg.schedule.t_max = t_max;
        cfg.beta = beta.is_none() ? (cfg.model.variant == Variant::psfnet ? 0.25 : 0.5)
                                  : beta.cast<double>();
        cfg.seed = seed;
        cfg.kb_loss = kb_loss;
        TrainResult result = [&] {
          py::gil_scoped_release release;
          return train(cfg, tr, va);
        }();
        return py::make_tuple(std::move(result.model), epoch_records(result.report));
      },
      py::arg("train_set"), py::arg("val_set") = Array(), py::arg("variant") = "psfnet",
      py::arg("c") = 16, py::arg("z") = 256, py::arg("k0") = 2, py::arg("epochs") = 30,
      py::arg("batch") = 100, py::arg("lr_max") = 0.002, py::arg("lr_min") = 0.0,
      py::arg("t_max") = 20, py::arg("beta") = py::none(), py::arg("seed") = 1,
      py::arg("kb_loss") = true, "Returns (model, per-epoch records).");

  m.def(
      "cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        const int code = dispatch(args, out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs a kbae subcommand; returns (exit code, stdout, stderr).");
}
