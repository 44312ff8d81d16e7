#include "kbae/models.hpp"

#include <cmath>
#include <random>

#include "kbae/conv.hpp"
#include "kbae/errors.hpp"

namespace kbae {

const char* to_string(Variant v) { return v == Variant::psfnet ? "psfnet" : "psfnet-h"; }

Variant parse_variant(const std::string& name) {
  if (name == "psfnet") return Variant::psfnet;
  if (name == "psfnet-h" || name == "psfnet_h") return Variant::psfnet_h;
  throw ConfigError("unknown variant '" + name + "' (expected psfnet or psfnet-h)");
}

ModelConfig ModelConfig::psfnet(std::size_t c, std::size_t z, std::size_t side) {
  ModelConfig cfg;
  cfg.variant = Variant::psfnet;
  cfg.side = side;
  cfg.c = c;
  cfg.k = (side / 8) * (side / 8);
  cfg.z = z;
  return cfg;
}

ModelConfig ModelConfig::psfnet_h(std::size_t c, std::size_t z, std::size_t side) {
  ModelConfig cfg;
  cfg.variant = Variant::psfnet_h;
  cfg.side = side;
  cfg.c = c;
  cfg.k = (side / 4) * (side / 4);
  cfg.z = z;
  return cfg;
}

std::size_t ModelConfig::code_side() const {
  return variant == Variant::psfnet ? side / 8 : side / 4;
}

void ModelConfig::validate() const {
  const std::size_t divisor = variant == Variant::psfnet ? 8 : 4;
  if (side == 0 || side % divisor != 0) {
    throw ConfigError(std::string(to_string(variant)) + " needs M divisible by " +
                      std::to_string(divisor) + ", got M=" + std::to_string(side));
  }
  if (k != code_side() * code_side()) {
    throw ConfigError(std::string(to_string(variant)) + " at M=" + std::to_string(side) +
                      " needs K=" + std::to_string(code_side() * code_side()) + ", got K=" +
                      std::to_string(k));
  }
  if (c < 1) throw ConfigError("C must be positive");
  if (variant == Variant::psfnet && c % 2 != 0) {
    throw ConfigError("psfnet needs an even C, got C=" + std::to_string(c));
  }
  if (k0 < 1) throw ConfigError("k0 must be positive");
  if (variant == Variant::psfnet_h && (c % k0 != 0 || 8 % k0 != 0)) {
    throw ConfigError("psfnet-h attention needs C and 8 divisible by k0=" + std::to_string(k0));
  }
  if (!is_power_of_two(z)) {
    throw ConfigError("codebook size Z=" + std::to_string(z) + " is not a power of two");
  }
}

GarbBlock make_garb(const std::string& name, std::size_t channels, std::size_t k0) {
  if (k0 < 1 || channels % k0 != 0) {
    throw ConfigError("GARB channels " + std::to_string(channels) + " not divisible by k0=" +
                      std::to_string(k0));
  }
  const std::size_t reduced = channels / k0;
  return GarbBlock{channels,
                   k0,
                   LayerParams::conv(name + ".trunk1", channels, channels, 3, 1, 1),
                   LayerParams::conv(name + ".trunk2", channels, channels, 3, 1, 1),
                   LayerParams::conv(name + ".squeeze", channels, reduced, 1, 1, 0),
                   LayerParams::conv(name + ".excite", reduced, channels, 1, 1, 0)};
}

Var garb_forward(Tape& tape, Var x, GarbBlock& block) {
  const Dims d = tape.value(x).dims();
  if (d.c != block.channels) {
    throw ShapeError("GARB of " + std::to_string(block.channels) + " channels given input " +
                     d.str());
  }
  Var r = tape.apply(tape.relu(tape.apply(x, block.trunk_first)), block.trunk_second);
  Var s = tape.global_avg_pool(r);
  s = tape.sigmoid(tape.apply(tape.relu(tape.apply(s, block.squeeze)), block.excite));
  return tape.add(tape.channel_scale(r, s), x);
}

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

Dims layer_output(const LayerParams& layer, const Dims& in) {
  if (in.c != layer.in_channels()) {
    throw ShapeError(std::string(to_string(layer.kind)) + " of " +
                     std::to_string(layer.in_channels()) + " input channels given " + in.str());
  }
  if (layer.kind == LayerKind::conv2d) {
    return Dims{in.n, layer.out_channels(),
                conv_output_size(in.h, layer.kernel_h(), layer.stride, layer.padding),
                conv_output_size(in.w, layer.kernel_w(), layer.stride, layer.padding)};
  }
  return Dims{in.n, layer.out_channels(),
              tconv_output_size(in.h, layer.kernel_h(), layer.stride, layer.padding),
              tconv_output_size(in.w, layer.kernel_w(), layer.stride, layer.padding)};
}

std::uint64_t layer_params(const LayerParams& layer) {
  return layer.has_weights() ? layer.weight->value.size() + layer.bias->value.size() : 0;
}

// Output positions times the receptive field of one output element.
std::uint64_t layer_macs(const LayerParams& layer, const Dims& out) {
  return std::uint64_t{out.c} * out.h * out.w * layer.in_channels() * layer.kernel_h() *
         layer.kernel_w();
}

void init_layer(LayerParams& layer, std::mt19937_64& rng) {
  if (!layer.has_weights()) return;
  Tensor4& w = layer.weight->value;
  const double fan_in = static_cast<double>(w.dims().c * w.dims().h * w.dims().w);
  const double bound = 1.0 / std::sqrt(fan_in);
  std::uniform_real_distribution<double> uniform(-bound, bound);
  for (double& v : w.values()) v = uniform(rng);
  layer.bias->value.fill(0.0);
}

template <class Fn>
void for_each_layer(Stage& stage, Fn&& fn) {
  std::visit(Overloaded{[&](ConvStage& s) { fn(s.layer); },
                        [&](ResidualStage& s) {
                          fn(s.first);
                          fn(s.second);
                        },
                        [&](GarbBlock& g) {
                          fn(g.trunk_first);
                          fn(g.trunk_second);
                          fn(g.squeeze);
                          fn(g.excite);
                        }},
             stage);
}

template <class Fn>
void for_each_layer(const Stage& stage, Fn&& fn) {
  for_each_layer(const_cast<Stage&>(stage), [&](LayerParams& l) { fn(std::as_const(l)); });
}

}  // namespace

Var Network::forward(Tape& tape, Var x) {
  for (Stage& stage : stages) {
    x = std::visit(Overloaded{[&](ConvStage& s) {
                                Var y = tape.apply(x, s.layer);
                                return s.relu ? tape.relu(y) : y;
                              },
                              [&](ResidualStage& s) {
                                Var y = tape.relu(tape.apply(x, s.first));
                                y = tape.relu(tape.apply(y, s.second));
                                return tape.add(y, x);
                              },
                              [&](GarbBlock& g) { return garb_forward(tape, x, g); }},
                   stage);
  }
  return x;
}

std::vector<Parameter*> Network::parameters() {
  std::vector<Parameter*> out;
  for (Stage& stage : stages) {
    for_each_layer(stage, [&](LayerParams& l) {
      if (l.has_weights()) {
        out.push_back(&*l.weight);
        out.push_back(&*l.bias);
      }
    });
  }
  return out;
}

std::vector<const Parameter*> Network::parameters() const {
  std::vector<const Parameter*> out;
  for (Parameter* p : const_cast<Network*>(this)->parameters()) out.push_back(p);
  return out;
}

std::vector<Dims> Network::shape_trace() const {
  std::vector<Dims> trace;
  Dims d = input;
  for (const Stage& stage : stages) {
    d = std::visit(Overloaded{[&](const ConvStage& s) { return layer_output(s.layer, d); },
                              [&](const ResidualStage& s) {
                                Dims out = layer_output(s.second, layer_output(s.first, d));
                                require_same_dims(out, d, "residual stage");
                                return out;
                              },
                              [&](const GarbBlock& g) {
                                Dims r = layer_output(g.trunk_second, layer_output(g.trunk_first, d));
                                require_same_dims(r, d, "GARB");
                                Dims s = layer_output(g.excite,
                                                      layer_output(g.squeeze, Dims{d.n, d.c, 1, 1}));
                                require_same_dims(s, Dims{d.n, d.c, 1, 1}, "GARB attention");
                                return r;
                              }},
                   stage);
    trace.push_back(d);
  }
  return trace;
}

Dims Network::output() const {
  auto trace = shape_trace();
  return trace.empty() ? input : trace.back();
}

std::vector<Parameter*> ModelBundle::parameters() {
  auto out = encoder.parameters();
  for (Parameter* p : decoder.parameters()) out.push_back(p);
  out.push_back(&codebook.param());
  return out;
}

std::pair<Network, Network> build_psfnet(const ModelConfig& cfg) {
  if (cfg.variant != Variant::psfnet) throw ConfigError("build_psfnet needs variant psfnet");
  cfg.validate();
  const std::size_t c = cfg.c;
  const std::size_t half = c / 2;
  const std::size_t code = cfg.code_side();

  Network enc;
  enc.input = Dims{1, 1, cfg.side, cfg.side};
  enc.stages.emplace_back(ConvStage{LayerParams::conv("encoder.0", 1, half, 4, 2, 1), true});
  enc.stages.emplace_back(ConvStage{LayerParams::conv("encoder.1", half, half, 4, 2, 1), true});
  enc.stages.emplace_back(ConvStage{LayerParams::conv("encoder.2", half, c, 4, 2, 1), true});

  Network dec;
  dec.input = Dims{1, c, code, code};
  dec.stages.emplace_back(ResidualStage{LayerParams::conv("decoder.0.first", c, c, 3, 1, 1),
                                        LayerParams::conv("decoder.0.second", c, c, 3, 1, 1)});
  dec.stages.emplace_back(ConvStage{LayerParams::tconv("decoder.1", c, half, 4, 2, 1), true});
  dec.stages.emplace_back(ConvStage{LayerParams::tconv("decoder.2", half, half, 4, 2, 1), true});
  dec.stages.emplace_back(ConvStage{LayerParams::tconv("decoder.3", half, 1, 4, 2, 1), false});

  enc.shape_trace();
  dec.shape_trace();
  return {std::move(enc), std::move(dec)};
}

std::pair<Network, Network> build_psfnet_h(const ModelConfig& cfg) {
  if (cfg.variant != Variant::psfnet_h) throw ConfigError("build_psfnet_h needs variant psfnet-h");
  cfg.validate();
  const std::size_t c = cfg.c;
  const std::size_t code = cfg.code_side();

  Network enc;
  enc.input = Dims{1, 1, cfg.side, cfg.side};
  enc.stages.emplace_back(ConvStage{LayerParams::conv("encoder.0", 1, 8, 4, 2, 1), true});
  enc.stages.emplace_back(make_garb("encoder.1", 8, cfg.k0));
  enc.stages.emplace_back(ConvStage{LayerParams::conv("encoder.2", 8, 8, 4, 2, 1), true});
  enc.stages.emplace_back(make_garb("encoder.3", 8, cfg.k0));
  enc.stages.emplace_back(ConvStage{LayerParams::conv("encoder.4", 8, c, 3, 1, 1), true});

  Network dec;
  dec.input = Dims{1, c, code, code};
  dec.stages.emplace_back(make_garb("decoder.0", c, cfg.k0));
  dec.stages.emplace_back(ConvStage{LayerParams::tconv("decoder.1", c, 8, 4, 2, 1), true});
  if (cfg.decoder_second_garb) dec.stages.emplace_back(make_garb("decoder.2", 8, cfg.k0));
  dec.stages.emplace_back(ConvStage{LayerParams::tconv("decoder.3", 8, 1, 4, 2, 1), false});

  enc.shape_trace();
  dec.shape_trace();
  return {std::move(enc), std::move(dec)};
}

void init_network(Network& net, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (Stage& stage : net.stages) for_each_layer(stage, [&](LayerParams& l) { init_layer(l, rng); });
}

ModelBundle build_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  auto [enc, dec] = cfg.variant == Variant::psfnet ? build_psfnet(cfg) : build_psfnet_h(cfg);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  std::array<std::uint64_t, 3> seeds{};
  std::vector<std::uint32_t> words(6);
  seq.generate(words.begin(), words.end());
  for (std::size_t i = 0; i < 3; ++i) seeds[i] = (std::uint64_t{words[2 * i]} << 32) | words[2 * i + 1];
  init_network(enc, seeds[0]);
  init_network(dec, seeds[1]);
  return ModelBundle{cfg, std::move(enc), std::move(dec), init_codebook(cfg.z, cfg.k, seeds[2])};
}

Var encode(Tape& tape, Network& enc, const ModelConfig& cfg, Var theta) {
  const Dims in = tape.value(theta).dims();
  require_same_dims(Dims{1, in.c, in.h, in.w}, enc.input, "encoder input");
  Var features = enc.forward(tape, theta);
  const Dims f = tape.value(features).dims();
  if (f.c != cfg.c || f.h * f.w != cfg.k) {
    throw ShapeError("encoder output " + f.str() + " does not flatten to C=" +
                     std::to_string(cfg.c) + " vectors of length K=" + std::to_string(cfg.k));
  }
  return tape.reshape(features, Dims{f.n, f.c, 1, f.h * f.w});
}

Var decode(Tape& tape, Network& dec, const ModelConfig& cfg, Var codes) {
  const Dims d = tape.value(codes).dims();
  if (d.c != cfg.c || d.h * d.w != cfg.k) {
    throw ShapeError("decoder input " + d.str() + " is not C=" + std::to_string(cfg.c) +
                     " vectors of length K=" + std::to_string(cfg.k));
  }
  const std::size_t code = cfg.code_side();
  return dec.forward(tape, tape.reshape(codes, Dims{d.n, d.c, code, code}));
}

Tensor4 stack(std::span<const PhaseShiftMatrix> samples) {
  if (samples.empty()) throw ShapeError("cannot stack an empty batch");
  const std::size_t side = samples.front().side();
  Tensor4 out(Dims{samples.size(), 1, side, side});
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].domain() != PhaseDomain::normalized) {
      throw DomainError("network input must be a normalized phase matrix");
    }
    if (samples[i].side() != side) throw ShapeError("batch mixes matrix sides");
    std::copy(samples[i].values().begin(), samples[i].values().end(),
              out.data() + i * side * side);
  }
  return out;
}

PhaseShiftMatrix export_normalized(std::span<const double> values, std::size_t side) {
  const double upper = std::nextafter(1.0 - std::ldexp(1.0, -24), 0.0);
  std::vector<double> out(values.begin(), values.end());
  for (double& v : out) v = std::isfinite(v) ? std::clamp(v, 0.0, upper) : 0.0;
  return PhaseShiftMatrix(side, std::move(out), PhaseDomain::normalized);
}

std::vector<double> encode(ModelBundle& model, const PhaseShiftMatrix& theta) {
  if (theta.domain() != PhaseDomain::normalized) {
    throw DomainError("encode needs a normalized phase matrix");
  }
  Tape tape(false);
  Var z = encode(tape, model.encoder, model.config, tape.input(stack(std::span(&theta, 1))));
  auto v = tape.value(z).values();
  return {v.begin(), v.end()};
}

PhaseShiftMatrix decode(ModelBundle& model, std::span<const double> codes) {
  const ModelConfig& cfg = model.config;
  if (codes.size() != cfg.c * cfg.k) {
    throw ShapeError("decode given " + std::to_string(codes.size()) + " values, expected C*K=" +
                     std::to_string(cfg.c * cfg.k));
  }
  Tape tape(false);
  Var in = tape.input(Tensor4(Dims{1, cfg.c, 1, cfg.k}, {codes.begin(), codes.end()}));
  Var out = decode(tape, model.decoder, cfg, in);
  return export_normalized(tape.value(out).values(), cfg.side);
}

std::uint64_t count_params(const Network& net) {
  std::uint64_t total = 0;
  for (const Stage& stage : net.stages) {
    for_each_layer(stage, [&](const LayerParams& l) { total += layer_params(l); });
  }
  return total;
}

std::uint64_t count_params(const ModelBundle& model) {
  return count_params(model.encoder) + count_params(model.decoder);
}

std::uint64_t count_flops(const Network& net) {
  std::uint64_t total = 0;
  Dims d = net.input;
  for (const Stage& stage : net.stages) {
    std::visit(Overloaded{[&](const ConvStage& s) {
                            d = layer_output(s.layer, d);
                            total += layer_macs(s.layer, d);
                          },
                          [&](const ResidualStage& s) {
                            total += layer_macs(s.first, layer_output(s.first, d));
                            total += layer_macs(s.second, layer_output(s.second, d));
                          },
                          [&](const GarbBlock& g) {
                            total += layer_macs(g.trunk_first, layer_output(g.trunk_first, d));
                            total += layer_macs(g.trunk_second, layer_output(g.trunk_second, d));
                            total += std::uint64_t{d.c} * d.h * d.w;  // pooling
                            const Dims pooled{d.n, d.c, 1, 1};
                            const Dims squeezed = layer_output(g.squeeze, pooled);
                            total += layer_macs(g.squeeze, squeezed);
                            total += layer_macs(g.excite, layer_output(g.excite, squeezed));
                          }},
               stage);
  }
  return total;
}

std::uint64_t count_flops(const ModelBundle& model) {
  return count_flops(model.encoder) + count_flops(model.decoder);
}

}  // namespace kbae
