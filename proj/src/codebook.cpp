#include "kbae/codebook.hpp"

#include <cmath>

#include <bit>
#include <limits>
#include <random>

#include "kbae/binary_io.hpp"
#include "kbae/errors.hpp"

namespace kbae {

bool is_power_of_two(std::uint64_t v) noexcept { return std::has_single_bit(v); }

Codebook::Codebook(std::size_t z, std::size_t k)
    : z_(z), k_(k), param_("codebook", Tensor4(Dims{1, 1, z, k})) {
  if (!is_power_of_two(z)) {
    throw ConfigError("codebook size Z=" + std::to_string(z) + " is not a power of two");
  }
  if (k < 1) throw ConfigError("codebook vector length K must be >= 1");
}

unsigned Codebook::bits_per_index() const noexcept {
  return static_cast<unsigned>(std::countr_zero(static_cast<std::uint64_t>(z_)));
}

std::span<const double> Codebook::row(std::size_t i) const {
  if (i >= z_) {
    throw RangeError("codeword " + std::to_string(i) + " out of range for Z=" + std::to_string(z_));
  }
  return param_.value.values().subspan(i * k_, k_);
}

Codebook init_codebook(std::size_t z, std::size_t k, std::uint64_t seed) {
  Codebook cb(z, k);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uniform(0.0, 1.0 / static_cast<double>(k));
  for (double& v : cb.param().value.values()) {
    do {
      v = uniform(rng);
    } while (v <= 0.0);
  }
  return cb;
}

std::uint32_t nearest_index(std::span<const double> query, const Codebook& cb) {
  if (query.size() != cb.k()) {
    throw ShapeError("query of length " + std::to_string(query.size()) +
                     " against codebook vectors of length " + std::to_string(cb.k()));
  }
  const double* table = cb.param().value.data();
  const std::size_t k = cb.k();
  std::uint32_t best = 0;
  double best_dist = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < cb.z(); ++i) {
    const double* e = table + i * k;
    double d = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const double diff = query[j] - e[j];
      d += diff * diff;
    }
    if (d < best_dist) {
      best_dist = d;
      best = static_cast<std::uint32_t>(i);
    }
  }
  return best;
}

IndexVector quantize(std::span<const double> vectors, const Codebook& cb) {
  if (vectors.size() % cb.k() != 0) {
    throw ShapeError(std::to_string(vectors.size()) + " values do not split into vectors of length " +
                     std::to_string(cb.k()));
  }
  IndexVector iv;
  iv.z = static_cast<std::uint32_t>(cb.z());
  const std::size_t count = vectors.size() / cb.k();
  iv.indices.reserve(count);
  for (std::size_t l = 0; l < count; ++l) {
    iv.indices.push_back(nearest_index(vectors.subspan(l * cb.k(), cb.k()), cb));
  }
  return iv;
}

std::vector<double> lookup(const IndexVector& iv, const Codebook& cb) {
  std::vector<double> out;
  out.reserve(iv.indices.size() * cb.k());
  for (std::uint32_t i : iv.indices) {
    const auto row = cb.row(i);
    out.insert(out.end(), row.begin(), row.end());
  }
  return out;
}

FeedbackBitstream encode_bits(const IndexVector& iv) {
  if (!is_power_of_two(iv.z)) {
    throw ConfigError("codebook size Z=" + std::to_string(iv.z) + " is not a power of two");
  }
  const unsigned q = static_cast<unsigned>(std::countr_zero(iv.z));
  FeedbackBitstream bs;
  bs.c = static_cast<std::uint32_t>(iv.indices.size());
  bs.z = iv.z;
  bs.bit_count = std::uint64_t{q} * bs.c;
  bs.bytes.assign((bs.bit_count + 7) / 8, 0);
  std::uint64_t pos = 0;
  for (std::uint32_t index : iv.indices) {
    if (index >= iv.z) {
      throw RangeError("index " + std::to_string(index) + " out of range for Z=" +
                       std::to_string(iv.z));
    }
    for (unsigned b = q; b-- > 0; ++pos) {
      if ((index >> b) & 1u) bs.bytes[pos / 8] |= static_cast<std::uint8_t>(0x80u >> (pos % 8));
    }
  }
  return bs;
}

IndexVector decode_bits(const FeedbackBitstream& bs) {
  if (!is_power_of_two(bs.z)) {
    throw FormatError("codebook size Z=" + std::to_string(bs.z) + " is not a power of two", 0);
  }
  const unsigned q = static_cast<unsigned>(std::countr_zero(bs.z));
  const std::uint64_t expected = std::uint64_t{q} * bs.c;
  if (bs.bit_count != expected || bs.bytes.size() != (expected + 7) / 8) {
    throw FormatError("bitstream of " + std::to_string(bs.bytes.size()) + " bytes / " +
                          std::to_string(bs.bit_count) + " bits does not match C=" +
                          std::to_string(bs.c) + ", Z=" + std::to_string(bs.z),
                      0);
  }
  IndexVector iv;
  iv.z = bs.z;
  iv.indices.reserve(bs.c);
  std::uint64_t pos = 0;
  for (std::uint32_t l = 0; l < bs.c; ++l) {
    std::uint32_t index = 0;
    for (unsigned b = 0; b < q; ++b, ++pos) {
      index = (index << 1) | ((bs.bytes[pos / 8] >> (7 - pos % 8)) & 1u);
    }
    iv.indices.push_back(index);
  }
  return iv;
}

std::vector<std::uint8_t> serialize_bitstream(const FeedbackBitstream& bs) {
  ByteWriter w;
  w.tag("KBFB");
  w.u32(1);
  w.u32(bs.c);
  w.u32(bs.z);
  w.raw(bs.bytes);
  return w.take();
}

FeedbackBitstream parse_bitstream(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_tag("KBFB", "feedback bitstream");
  const std::size_t version_at = r.offset();
  if (r.u32() != 1) throw FormatError("unsupported bitstream version", version_at);
  FeedbackBitstream bs;
  bs.c = r.u32();
  const std::size_t z_at = r.offset();
  bs.z = r.u32();
  if (!is_power_of_two(bs.z)) {
    throw FormatError("codebook size Z=" + std::to_string(bs.z) + " is not a power of two", z_at);
  }
  bs.bit_count = std::uint64_t{static_cast<unsigned>(std::countr_zero(bs.z))} * bs.c;
  const std::uint64_t payload = (bs.bit_count + 7) / 8;
  if (r.remaining() != payload) {
    throw FormatError("payload of " + std::to_string(r.remaining()) + " bytes, expected " +
                          std::to_string(payload),
                      r.offset());
  }
  auto data = r.raw(payload);
  bs.bytes.assign(data.begin(), data.end());
  const unsigned pad = static_cast<unsigned>(payload * 8 - bs.bit_count);
  if (pad != 0 && (bs.bytes.back() & ((1u << pad) - 1u)) != 0) {
    throw FormatError("non-zero padding bits", bytes.size() - 1);
  }
  return bs;
}

void write_bitstream(const std::filesystem::path& path, const FeedbackBitstream& bs) {
  write_file_atomic(path, serialize_bitstream(bs));
}

FeedbackBitstream read_bitstream(const std::filesystem::path& path) {
  return parse_bitstream(read_file(path));
}

CompressionStats compression_stats(std::size_t n, std::size_t c, std::size_t z) {
  if (!is_power_of_two(z)) {
    throw ConfigError("codebook size Z=" + std::to_string(z) + " is not a power of two");
  }
  if (c == 0) throw ConfigError("index count C must be positive");
  CompressionStats s;
  s.q = static_cast<unsigned>(std::countr_zero(static_cast<std::uint64_t>(z)));
  s.bits = std::uint64_t{s.q} * c;
  s.ratio = static_cast<double>(n) / static_cast<double>(c);
  return s;
}

Var kb_codebook_term(Tape& tape, Var z, Var selected) {
  return tape.mse(tape.stop_gradient(z), selected);
}

Var kb_commitment_term(Tape& tape, Var z, Var selected) {
  return tape.mse(z, tape.stop_gradient(selected));
}

Var kb_loss(Tape& tape, Var z, Var selected, double beta) {
  if (!(beta >= 0.0) || !std::isfinite(beta)) {
    throw ConfigError("commitment weight beta must be finite and >= 0");
  }
  return tape.add(kb_codebook_term(tape, z, selected),
                  tape.scale(kb_commitment_term(tape, z, selected), beta));
}

}  // namespace kbae
