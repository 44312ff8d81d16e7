#include "kbae/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "kbae/checkpoint.hpp"
#include "kbae/dataset.hpp"
#include "kbae/errors.hpp"

namespace kbae {
namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double to_db(double v) { return 10.0 * std::log10(v); }

void check_sides(std::span<const PhaseShiftMatrix> samples, std::size_t side, const char* what) {
  for (const auto& s : samples) {
    if (s.side() != side) {
      throw ConfigError(std::string(what) + " holds " + std::to_string(s.side()) + "x" +
                        std::to_string(s.side()) + " matrices but the model expects M=" +
                        std::to_string(side));
    }
  }
}

}  // namespace

void TrainConfig::validate() const {
  model.validate();
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch < 1) throw ConfigError("batch size must be >= 1");
  if (!(beta >= 0.0)) throw ConfigError("beta must be non-negative");
  cosine_lr(0, schedule);
}

std::string TrainReport::to_text() const {
  std::ostringstream out;
  for (const auto& e : epochs) {
    out << "epoch=" << e.epoch << " train_loss=" << fmt_double(e.train_loss)
        << " val_nmse=" << fmt_double(e.val_nmse) << " val_nmse_db=" << fmt_double(to_db(e.val_nmse))
        << " lr=" << fmt_double(e.lr) << " dead_codewords=" << e.dead_codewords << "\n";
  }
  out << "optimizer_steps=" << optimizer_steps << "\n";
  if (!checkpoint.empty()) out << "checkpoint=" << checkpoint.string() << "\n";
  return out.str();
}

std::string TrainReport::to_csv() const {
  std::ostringstream out;
  out << "epoch,train_loss,val_nmse,val_nmse_db,lr,dead_codewords\n";
  for (const auto& e : epochs) {
    out << e.epoch << "," << fmt_double(e.train_loss) << "," << fmt_double(e.val_nmse) << ","
        << fmt_double(to_db(e.val_nmse)) << "," << fmt_double(e.lr) << "," << e.dead_codewords
        << "\n";
  }
  return out.str();
}

std::string EvalReport::to_text() const {
  std::ostringstream out;
  out << "samples=" << count << "\n"
      << "nmse=" << fmt_double(nmse) << "\n"
      << "nmse_db=" << fmt_double(nmse_db) << "\n"
      << "bits_per_index=" << stats.q << "\n"
      << "total_bits=" << stats.bits << "\n"
      << "compression_ratio=" << fmt_double(stats.ratio) << "\n";
  return out.str();
}

std::string EvalReport::to_csv() const {
  std::ostringstream out;
  out << "sample,squared_error\n";
  for (std::size_t i = 0; i < sample_squared_errors.size(); ++i) {
    out << i << "," << fmt_double(sample_squared_errors[i]) << "\n";
  }
  return out.str();
}

Var total_loss(Tape& tape, Var theta, Var recon, Var z, Var selected, double beta) {
  return tape.add(tape.mse(recon, theta), kb_loss(tape, z, selected, beta));
}

BatchPass forward_batch(Tape& tape, ModelBundle& model, const Tensor4& theta,
                        const PassOptions& options) {
  const ModelConfig& cfg = model.config;
  BatchPass pass;
  pass.theta = tape.input(theta);
  pass.z = encode(tape, model.encoder, cfg, pass.theta);
  pass.indices = quantize(tape.value(pass.z).values(), model.codebook).indices;
  Var table = tape.parameter(model.codebook.param());
  pass.selected = tape.gather_rows(table, pass.indices, tape.value(pass.z).dims());
  pass.decoder_in =
      options.straight_through ? tape.straight_through(pass.z, pass.selected) : pass.selected;
  pass.recon = decode(tape, model.decoder, cfg, pass.decoder_in);
  pass.recon_loss = tape.mse(pass.recon, pass.theta);
  pass.loss = options.kb_loss
                  ? tape.add(pass.recon_loss, kb_loss(tape, pass.z, pass.selected, options.beta))
                  : pass.recon_loss;
  return pass;
}

TrainResult train(const TrainConfig& cfg, std::span<const PhaseShiftMatrix> train_set,
                  std::span<const PhaseShiftMatrix> val_set) {
  cfg.validate();
  if (train_set.empty()) throw ConfigError("training set is empty");
  check_sides(train_set, cfg.model.side, "training set");
  check_sides(val_set, cfg.model.side, "validation set");

  TrainResult result{TrainReport{}, build_model(cfg.model, cfg.seed)};
  ModelBundle& model = result.model;
  auto params = model.parameters();
  std::vector<AdamState> adam;
  adam.reserve(params.size());
  for (Parameter* p : params) adam.emplace_back(p->value.dims());

  std::mt19937_64 shuffle_rng(cfg.seed ^ 0x5851F42D4C957F2DULL);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const PassOptions options{cfg.beta, cfg.kb_loss, true};
  const std::size_t side = cfg.model.side;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cosine_lr(epoch, cfg.schedule);
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[shuffle_rng() % i]);
    }
    std::vector<bool> used(cfg.model.z, false);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::size_t n = std::min(cfg.batch, order.size() - start);
      Tensor4 batch(Dims{n, 1, side, side});
      for (std::size_t b = 0; b < n; ++b) {
        const auto v = train_set[order[start + b]].values();
        std::copy(v.begin(), v.end(), batch.data() + b * side * side);
      }
      for (Parameter* p : params) p->zero_grad();
      Tape tape;
      BatchPass pass = forward_batch(tape, model, batch, options);
      tape.backward(pass.loss);
      for (std::size_t p = 0; p < params.size(); ++p) adam_step(*params[p], adam[p], lr);
      ++result.report.optimizer_steps;
      loss_sum += tape.value(pass.loss)[0] * static_cast<double>(n);
      for (std::uint32_t idx : pass.indices) used[idx] = true;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    rec.dead_codewords = static_cast<std::size_t>(std::count(used.begin(), used.end(), false));
    rec.val_nmse = val_set.empty() ? std::numeric_limits<double>::quiet_NaN()
                                   : nmse(val_set, reconstruct(model, val_set));
    result.report.epochs.push_back(rec);
  }

  if (!cfg.checkpoint_out.empty()) {
    save_checkpoint(cfg.checkpoint_out, model);
    result.report.checkpoint = cfg.checkpoint_out;
  }
  return result;
}

TrainReport train(const TrainConfig& cfg) {
  if (cfg.train_data.empty()) throw ConfigError("no training dataset given");
  const auto train_set = read_dataset(cfg.train_data);
  const auto val_set =
      cfg.val_data.empty() ? std::vector<PhaseShiftMatrix>{} : read_dataset(cfg.val_data);
  return train(cfg, train_set, val_set).report;
}

std::pair<TrainReport, TrainReport> ablate_kb_loss(const TrainConfig& cfg,
                                                   std::span<const PhaseShiftMatrix> train_set,
                                                   std::span<const PhaseShiftMatrix> val_set) {
  TrainConfig with = cfg;
  with.kb_loss = true;
  TrainConfig without = cfg;
  without.kb_loss = false;
  without.checkpoint_out.clear();
  with.checkpoint_out.clear();
  return {train(with, train_set, val_set).report, train(without, train_set, val_set).report};
}

std::vector<PhaseShiftMatrix> reconstruct(ModelBundle& model,
                                          std::span<const PhaseShiftMatrix> samples,
                                          std::size_t batch) {
  if (batch < 1) throw ConfigError("batch size must be >= 1");
  check_sides(samples, model.config.side, "dataset");
  std::vector<PhaseShiftMatrix> out;
  out.reserve(samples.size());
  const std::size_t plane = model.config.side * model.config.side;
  for (std::size_t start = 0; start < samples.size(); start += batch) {
    const std::size_t n = std::min(batch, samples.size() - start);
    Tape tape(false);
    BatchPass pass = forward_batch(tape, model, stack(samples.subspan(start, n)),
                                   PassOptions{0.0, false, true});
    const auto values = tape.value(pass.recon).values();
    for (std::size_t b = 0; b < n; ++b) {
      out.push_back(export_normalized(values.subspan(b * plane, plane), model.config.side));
    }
  }
  return out;
}

double nmse(std::span<const PhaseShiftMatrix> reference,
            std::span<const PhaseShiftMatrix> reconstruction) {
  if (reference.empty()) throw DomainError("NMSE of an empty dataset");
  if (reference.size() != reconstruction.size()) {
    throw ShapeError("NMSE over " + std::to_string(reference.size()) + " references and " +
                     std::to_string(reconstruction.size()) + " reconstructions");
  }
  double err = 0.0;
  double energy = 0.0;
  for (std::size_t s = 0; s < reference.size(); ++s) {
    const auto a = reference[s].values();
    const auto b = reconstruction[s].values();
    if (a.size() != b.size()) throw ShapeError("NMSE sample sizes differ");
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double d = b[i] - a[i];
      err += d * d;
      energy += a[i] * a[i];
    }
  }
  return err / energy;
}

EvalReport evaluate_nmse(ModelBundle& model, std::span<const PhaseShiftMatrix> dataset) {
  if (dataset.empty()) throw DomainError("cannot evaluate on an empty dataset");
  const auto recon = reconstruct(model, dataset);
  EvalReport report;
  report.count = dataset.size();
  report.sample_squared_errors.reserve(dataset.size());
  for (std::size_t s = 0; s < dataset.size(); ++s) {
    const auto a = dataset[s].values();
    const auto b = recon[s].values();
    double e = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) e += (b[i] - a[i]) * (b[i] - a[i]);
    report.sample_squared_errors.push_back(e);
  }
  report.nmse = nmse(dataset, recon);
  report.nmse_db = to_db(report.nmse);
  const ModelConfig& cfg = model.config;
  report.stats = compression_stats(cfg.side * cfg.side, cfg.c, cfg.z);
  return report;
}

EvalReport evaluate_nmse(const std::filesystem::path& checkpoint,
                         const std::filesystem::path& dataset) {
  ModelBundle model = load_checkpoint(checkpoint);
  const auto samples = read_dataset(dataset);
  check_sides(samples, model.config.side, "dataset");
  return evaluate_nmse(model, samples);
}

FeedbackBitstream compress(ModelBundle& model, const PhaseShiftMatrix& theta) {
  const PhaseShiftMatrix input = theta.domain() == PhaseDomain::raw ? normalize(theta) : theta;
  if (input.side() != model.config.side) {
    throw ShapeError("model expects M=" + std::to_string(model.config.side) + ", input has M=" +
                     std::to_string(input.side()));
  }
  const auto z = encode(model, input);
  return encode_bits(quantize(z, model.codebook));
}

PhaseShiftMatrix decompress(ModelBundle& model, const FeedbackBitstream& bs) {
  const ModelConfig& cfg = model.config;
  if (bs.c != cfg.c || bs.z != cfg.z) {
    throw FormatError("bitstream carries C=" + std::to_string(bs.c) + ", Z=" +
                          std::to_string(bs.z) + " but the model expects C=" +
                          std::to_string(cfg.c) + ", Z=" + std::to_string(cfg.z),
                      0);
  }
  const IndexVector iv = decode_bits(bs);
  return denormalize(decode(model, lookup(iv, model.codebook)));
}

PhaseShiftMatrix baseline_scalar_quant(const PhaseShiftMatrix& raw, unsigned bits) {
  if (raw.domain() != PhaseDomain::raw) throw DomainError("scalar quantizer needs raw phases");
  if (bits < 1 || bits > 52) throw ConfigError("scalar quantizer bits must be in [1, 52]");
  const double levels = std::ldexp(1.0, static_cast<int>(bits));
  const double step = kTwoPi / levels;
  std::vector<double> out(raw.values().begin(), raw.values().end());
  for (double& v : out) {
    const double cell = std::min(std::floor(v / step), levels - 1.0);
    v = (cell + 0.5) * step;
  }
  return PhaseShiftMatrix(raw.side(), std::move(out), PhaseDomain::raw);
}

}  // namespace kbae
