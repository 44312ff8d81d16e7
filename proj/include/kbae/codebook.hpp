#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "kbae/tape.hpp"

namespace kbae {

// The shared knowledge base: Z learnable vectors of length K, stored as a
// 1 x 1 x Z x K parameter so it trains through the same tape as the networks.
class Codebook {
 public:
  Codebook() = default;
  Codebook(std::size_t z, std::size_t k);

  std::size_t z() const noexcept { return z_; }
  std::size_t k() const noexcept { return k_; }
  unsigned bits_per_index() const noexcept;

  std::span<const double> row(std::size_t i) const;
  Parameter& param() noexcept { return param_; }
  const Parameter& param() const noexcept { return param_; }

 private:
  std::size_t z_ = 0;
  std::size_t k_ = 0;
  Parameter param_;
};

bool is_power_of_two(std::uint64_t v) noexcept;

// Entries i.i.d. uniform on the open interval (0, 1/K).
Codebook init_codebook(std::size_t z, std::size_t k, std::uint64_t seed);

// argmin_i ||query - e_i||^2, lowest index on ties.
std::uint32_t nearest_index(std::span<const double> query, const Codebook& cb);

struct IndexVector {
  std::vector<std::uint32_t> indices;
  std::uint32_t z = 0;
};

// Nearest codeword for each consecutive length-K slice of `vectors`.
IndexVector quantize(std::span<const double> vectors, const Codebook& cb);

// Codewords for each index, concatenated in order (C*K values).
std::vector<double> lookup(const IndexVector& iv, const Codebook& cb);

struct FeedbackBitstream {
  std::vector<std::uint8_t> bytes;
  std::uint32_t c = 0;
  std::uint32_t z = 0;
  std::uint64_t bit_count = 0;
};

// Each index as a log2(Z)-bit field, MSB first, zero-padded to a byte.
FeedbackBitstream encode_bits(const IndexVector& iv);
IndexVector decode_bits(const FeedbackBitstream& bs);

// File form: "KBFB" | u32 version=1 | u32 C | u32 Z | ceil(B/8) payload bytes.
std::vector<std::uint8_t> serialize_bitstream(const FeedbackBitstream& bs);
FeedbackBitstream parse_bitstream(std::span<const std::uint8_t> bytes);
void write_bitstream(const std::filesystem::path& path, const FeedbackBitstream& bs);
FeedbackBitstream read_bitstream(const std::filesystem::path& path);

struct CompressionStats {
  unsigned q = 0;          // bits per index
  std::uint64_t bits = 0;  // B = q * C
  double ratio = 0.0;      // gamma = N / C
};

CompressionStats compression_stats(std::size_t n, std::size_t c, std::size_t z);

// mean(sg[z] - e)^2 + beta * mean(z - sg[e])^2 over every element. The first
// term only reaches `selected` (and through it the codebook), the second only
// reaches `z`.
Var kb_loss(Tape& tape, Var z, Var selected, double beta);

// The two halves of kb_loss, exposed separately for gradient-routing checks.
Var kb_codebook_term(Tape& tape, Var z, Var selected);
Var kb_commitment_term(Tape& tape, Var z, Var selected);

}  // namespace kbae
