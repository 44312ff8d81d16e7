#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "kbae/channel.hpp"
#include "kbae/codebook.hpp"
#include "kbae/tape.hpp"

namespace kbae {

enum class Variant { psfnet, psfnet_h };

const char* to_string(Variant v);
Variant parse_variant(const std::string& name);

struct ModelConfig {
  Variant variant = Variant::psfnet;
  std::size_t side = 32;  // M
  std::size_t c = 64;     // feature channels = transmitted indices
  std::size_t k = 16;     // codeword length
  std::size_t z = 256;    // codebook size
  std::size_t k0 = 2;     // attention reduction factor
  // PSFNet-H only: keep the GARB between the two decoder upsampling layers.
  bool decoder_second_garb = true;

  static ModelConfig psfnet(std::size_t c, std::size_t z, std::size_t side = 32);
  static ModelConfig psfnet_h(std::size_t c, std::size_t z, std::size_t side = 32);

  // sqrt(K): side of each encoder feature map.
  std::size_t code_side() const;
  void validate() const;
};

// conv or tconv followed by an optional ReLU.
struct ConvStage {
  LayerParams layer;
  bool relu = true;
};

// x + relu(conv(relu(conv(x)))), channel count preserved.
struct ResidualStage {
  LayerParams first;
  LayerParams second;
};

// Global attention residual block: R = conv3(relu(conv3(x))),
// S = sigmoid(conv1(relu(conv1(avgpool(R))))), out = S*R + x.
struct GarbBlock {
  std::size_t channels = 0;
  std::size_t k0 = 2;
  LayerParams trunk_first;
  LayerParams trunk_second;
  LayerParams squeeze;
  LayerParams excite;
};

GarbBlock make_garb(const std::string& name, std::size_t channels, std::size_t k0);

using Stage = std::variant<ConvStage, ResidualStage, GarbBlock>;

struct Network {
  Dims input;  // per-sample dims, batch 1
  std::vector<Stage> stages;

  Var forward(Tape& tape, Var x);
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  // Per-sample output dims after every stage; throws on an inconsistent chain.
  std::vector<Dims> shape_trace() const;
  Dims output() const;
};

Var garb_forward(Tape& tape, Var x, GarbBlock& block);

struct ModelBundle {
  ModelConfig config;
  Network encoder;
  Network decoder;
  Codebook codebook;

  std::vector<Parameter*> parameters();  // encoder, decoder, codebook
};

// Architecture only; weights and biases are zero.
std::pair<Network, Network> build_psfnet(const ModelConfig& cfg);
std::pair<Network, Network> build_psfnet_h(const ModelConfig& cfg);

// Builds the networks for cfg.variant and initializes them: conv weights
// uniform in +-1/sqrt(fan_in), zero biases, codebook uniform on (0, 1/K).
ModelBundle build_model(const ModelConfig& cfg, std::uint64_t seed);

void init_network(Network& net, std::uint64_t seed);

// n x 1 x M x M -> n x C x 1 x K
Var encode(Tape& tape, Network& enc, const ModelConfig& cfg, Var theta);
// n x C x 1 x K -> n x 1 x M x M (unclamped)
Var decode(Tape& tape, Network& dec, const ModelConfig& cfg, Var codes);

// Inference helpers on single matrices.
std::vector<double> encode(ModelBundle& model, const PhaseShiftMatrix& theta);
// Output clamped to [0, 1 - 2^-24) and tagged normalized.
PhaseShiftMatrix decode(ModelBundle& model, std::span<const double> codes);

// Batches normalized matrices into an n x 1 x M x M tensor.
Tensor4 stack(std::span<const PhaseShiftMatrix> samples);
// Clamps a reconstruction into the normalized domain.
PhaseShiftMatrix export_normalized(std::span<const double> values, std::size_t side);

std::uint64_t count_params(const Network& net);
// Networks only; the codebook adds Z*K on top.
std::uint64_t count_params(const ModelBundle& model);
// One multiply-accumulate = one FLOP over conv / tconv / 1x1 attention convs,
// plus one per pooled element.
std::uint64_t count_flops(const Network& net);
std::uint64_t count_flops(const ModelBundle& model);

}  // namespace kbae
