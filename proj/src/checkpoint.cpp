#include "kbae/checkpoint.hpp"

#include <map>

#include "kbae/binary_io.hpp"
#include "kbae/errors.hpp"

namespace kbae {
namespace {

std::vector<const Parameter*> all_parameters(const ModelBundle& model) {
  auto params = model.encoder.parameters();
  for (const Parameter* p : model.decoder.parameters()) params.push_back(p);
  params.push_back(&model.codebook.param());
  return params;
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const ModelBundle& model) {
  const ModelConfig& cfg = model.config;
  ByteWriter w;
  w.tag("KBCK");
  w.u32(1);
  w.u32(cfg.variant == Variant::psfnet ? 0 : 1);
  w.u32(static_cast<std::uint32_t>(cfg.side));
  w.u32(static_cast<std::uint32_t>(cfg.c));
  w.u32(static_cast<std::uint32_t>(cfg.k));
  w.u32(static_cast<std::uint32_t>(cfg.z));
  w.u32(static_cast<std::uint32_t>(cfg.k0));
  w.u32(cfg.decoder_second_garb ? 1u : 0u);

  const auto params = all_parameters(model);
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const Parameter* p : params) {
    w.u32(static_cast<std::uint32_t>(p->name.size()));
    w.tag(p->name);
    const Dims& d = p->value.dims();
    for (std::size_t v : {d.n, d.c, d.h, d.w}) w.u32(static_cast<std::uint32_t>(v));
    for (double v : p->value.values()) w.f32(static_cast<float>(v));
  }
  return w.take();
}

ModelBundle parse_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_tag("KBCK", "checkpoint");
  const std::size_t version_at = r.offset();
  if (r.u32() != 1) throw FormatError("unsupported checkpoint version", version_at);

  const std::size_t config_at = r.offset();
  ModelConfig cfg;
  const std::uint32_t variant = r.u32();
  if (variant > 1) throw FormatError("unknown model variant " + std::to_string(variant), config_at);
  cfg.variant = variant == 0 ? Variant::psfnet : Variant::psfnet_h;
  cfg.side = r.u32();
  cfg.c = r.u32();
  cfg.k = r.u32();
  cfg.z = r.u32();
  cfg.k0 = r.u32();
  cfg.decoder_second_garb = (r.u32() & 1u) != 0;
  ModelBundle model;
  try {
    model = build_model(cfg, 0);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("invalid model configuration: ") + e.what(), config_at);
  }

  std::map<std::string, Parameter*> by_name;
  for (Parameter* p : model.parameters()) by_name[p->name] = p;

  const std::uint32_t count = r.u32();
  if (count != by_name.size()) {
    throw FormatError("checkpoint holds " + std::to_string(count) + " tensors, model needs " +
                          std::to_string(by_name.size()),
                      r.offset() - 4);
  }
  for (std::uint32_t t = 0; t < count; ++t) {
    const std::size_t at = r.offset();
    const std::uint32_t name_len = r.u32();
    auto name_bytes = r.raw(name_len);
    const std::string name(name_bytes.begin(), name_bytes.end());
    auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError("unexpected tensor '" + name + "'", at);
    Dims d;
    d.n = r.u32();
    d.c = r.u32();
    d.h = r.u32();
    d.w = r.u32();
    Parameter& p = *it->second;
    if (!(d == p.value.dims())) {
      throw FormatError("tensor '" + name + "' has dims " + d.str() + ", model expects " +
                            p.value.dims().str(),
                        at);
    }
    for (double& v : p.value.values()) v = r.f32();
    if (!p.value.all_finite()) throw FormatError("tensor '" + name + "' holds non-finite values", at);
    by_name.erase(it);
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after checkpoint", r.offset());
  return model;
}

void save_checkpoint(const std::filesystem::path& path, const ModelBundle& model) {
  write_file_atomic(path, serialize_checkpoint(model));
}

ModelBundle load_checkpoint(const std::filesystem::path& path) {
  return parse_checkpoint(read_file(path));
}

}  // namespace kbae
