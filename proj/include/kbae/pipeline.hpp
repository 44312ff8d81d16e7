#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "kbae/channel.hpp"
#include "kbae/codebook.hpp"
#include "kbae/models.hpp"
#include "kbae/optim.hpp"

namespace kbae {

struct TrainConfig {
  ModelConfig model = ModelConfig::psfnet(16, 256);
  std::size_t epochs = 30;
  std::size_t batch = 100;
  CosineSchedule schedule{};
  double beta = 0.25;
  std::uint64_t seed = 1;
  // Off drops the kb term from the loss; the codebook is still used forward.
  bool kb_loss = true;
  std::filesystem::path train_data;
  std::filesystem::path val_data;
  std::filesystem::path checkpoint_out;

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;  // sample-weighted mean of batch losses
  double val_nmse = 0.0;
  double lr = 0.0;
  std::size_t dead_codewords = 0;  // never selected during the epoch
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::size_t optimizer_steps = 0;
  std::filesystem::path checkpoint;

  // One "key=value ..." line per epoch.
  std::string to_text() const;
  // Header: epoch,train_loss,val_nmse,val_nmse_db,lr,dead_codewords
  std::string to_csv() const;
};

struct EvalReport {
  double nmse = 0.0;
  double nmse_db = 0.0;
  std::vector<double> sample_squared_errors;
  CompressionStats stats{};
  std::size_t count = 0;

  std::string to_text() const;
  // Header: sample,squared_error
  std::string to_csv() const;
};

// Tape handles of one forward pass over a batch.
struct BatchPass {
  Var theta;
  Var z;          // encoder vectors, n x C x 1 x K
  Var selected;   // gathered codewords, n x C x 1 x K
  Var decoder_in;
  Var recon;      // n x 1 x M x M
  Var recon_loss;
  Var loss;
  std::vector<std::uint32_t> indices;
};

struct PassOptions {
  double beta = 0.25;
  bool kb_loss = true;
  // Off feeds the codewords to the decoder directly, so the encoder gets no
  // reconstruction gradient.
  bool straight_through = true;
};

BatchPass forward_batch(Tape& tape, ModelBundle& model, const Tensor4& theta,
                        const PassOptions& options);

// mse(theta, recon) + kb_loss(z, selected, beta).
Var total_loss(Tape& tape, Var theta, Var recon, Var z, Var selected, double beta);

struct TrainResult {
  TrainReport report;
  ModelBundle model;
};

// In-memory training; the checkpoint is written only when
// cfg.checkpoint_out is set.
TrainResult train(const TrainConfig& cfg, std::span<const PhaseShiftMatrix> train_set,
                  std::span<const PhaseShiftMatrix> val_set);
// Reads cfg.train_data / cfg.val_data and writes cfg.checkpoint_out.
TrainReport train(const TrainConfig& cfg);

// Two runs from identical initial parameters, with and without the kb term.
std::pair<TrainReport, TrainReport> ablate_kb_loss(const TrainConfig& cfg,
                                                   std::span<const PhaseShiftMatrix> train_set,
                                                   std::span<const PhaseShiftMatrix> val_set);

// Encoder -> nearest codeword -> decoder for each sample, clamped to the
// normalized domain.
std::vector<PhaseShiftMatrix> reconstruct(ModelBundle& model,
                                          std::span<const PhaseShiftMatrix> samples,
                                          std::size_t batch = 256);

// sum ||recon - ref||^2 / sum ||ref||^2 over normalized matrices.
double nmse(std::span<const PhaseShiftMatrix> reference,
            std::span<const PhaseShiftMatrix> reconstruction);

EvalReport evaluate_nmse(ModelBundle& model, std::span<const PhaseShiftMatrix> dataset);
EvalReport evaluate_nmse(const std::filesystem::path& checkpoint,
                         const std::filesystem::path& dataset);

// Raw input is normalized first.
FeedbackBitstream compress(ModelBundle& model, const PhaseShiftMatrix& theta);
PhaseShiftMatrix decompress(ModelBundle& model, const FeedbackBitstream& bs);

// Uniform 2^bits-level quantizer over [0, 2pi), reconstructing at cell centers.
PhaseShiftMatrix baseline_scalar_quant(const PhaseShiftMatrix& raw, unsigned bits);

}  // namespace kbae
