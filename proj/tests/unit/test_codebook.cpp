#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "kbae/codebook.hpp"
#include "kbae/errors.hpp"
#include "oracles.hpp"

using namespace kbae;

namespace {

void set_rows(Codebook& cb, const std::vector<double>& values) {
  auto& v = cb.param().value;
  std::copy(values.begin(), values.end(), v.data());
}

std::vector<double> table_of(const Codebook& cb) {
  const auto v = cb.param().value.values();
  return {v.begin(), v.end()};
}

}  // namespace

TEST_CASE("codebook construction") {
  Codebook cb(16, 4);
  CHECK(cb.bits_per_index() == 4);
  CHECK(cb.param().value.dims() == Dims{1, 1, 16, 4});
  CHECK(Codebook(1, 3).bits_per_index() == 0);
  CHECK_THROWS_AS(Codebook(12, 4), ConfigError);
  CHECK_THROWS_AS(Codebook(0, 4), ConfigError);
  CHECK_THROWS_AS(Codebook(16, 0), ConfigError);
  CHECK_THROWS_AS(cb.row(16), RangeError);
  CHECK(is_power_of_two(1024));
  CHECK_FALSE(is_power_of_two(0));
  CHECK_FALSE(is_power_of_two(96));
}

TEST_CASE("initialization is uniform on (0, 1/K) and seeded") {
  const auto a = init_codebook(256, 16, 42);
  const auto b = init_codebook(256, 16, 42);
  const auto c = init_codebook(256, 16, 43);
  CHECK(table_of(a) == table_of(b));
  CHECK(table_of(a) != table_of(c));
  double sum = 0.0;
  for (double v : table_of(a)) {
    CHECK(v > 0.0);
    CHECK(v < 0.0625);
    sum += v;
  }
  // Uniform(0, 1/16): mean 1/32, sd 1/(16 sqrt 12); allow three standard errors.
  const double n = 256.0 * 16.0;
  const double se = (1.0 / (16.0 * std::sqrt(12.0))) / std::sqrt(n);
  CHECK(std::abs(sum / n - 0.03125) <= 3.0 * se);
}

TEST_CASE("nearest_index") {
  Codebook cb(4, 2);
  set_rows(cb, {0.0, 0.0, 1.0, 1.0, 2.0, 0.0, 2.0, 0.0});
  SUBCASE("exact codeword") {
    const std::vector<double> q{1.0, 1.0};
    CHECK(nearest_index(q, cb) == 1);
  }
  SUBCASE("duplicate codewords resolve to the lowest index") {
    const std::vector<double> q{2.0, 0.1};
    CHECK(nearest_index(q, cb) == 2);
  }
  SUBCASE("equidistant codewords resolve to the lowest index") {
    const std::vector<double> q{0.5, 0.5};
    CHECK(nearest_index(q, cb) == 0);
  }
  SUBCASE("length mismatch") {
    const std::vector<double> q{1.0};
    CHECK_THROWS_AS(nearest_index(q, cb), ShapeError);
  }
}

TEST_CASE("nearest_index agrees with an independent reverse scan") {
  std::mt19937_64 rng(8);
  for (std::size_t z : {16u, 256u}) {
    const auto cb = init_codebook(z, 16, z);
    const auto table = table_of(cb);
    std::uniform_real_distribution<double> u(0.0, 0.07);
    for (int i = 0; i < 2000; ++i) {
      std::vector<double> q(16);
      for (double& v : q) v = u(rng);
      CHECK(nearest_index(q, cb) == oracle::reverse_scan_nearest(q, table, 16));
    }
  }
}

TEST_CASE("quantize and lookup") {
  Codebook cb(2, 2);
  set_rows(cb, {0.0, 0.0, 1.0, 1.0});
  const std::vector<double> vectors{0.9, 0.8, 0.1, 0.0, 0.6, 0.6};
  const auto iv = quantize(vectors, cb);
  CHECK(iv.z == 2);
  CHECK(iv.indices == std::vector<std::uint32_t>{1, 0, 1});
  CHECK(lookup(iv, cb) == std::vector<double>{1, 1, 0, 0, 1, 1});
  CHECK_THROWS_AS(quantize(std::vector<double>{1.0, 2.0, 3.0}, cb), ShapeError);
  IndexVector bad{{2}, 2};
  CHECK_THROWS_AS(lookup(bad, cb), RangeError);
}

TEST_CASE("bit packing") {
  SUBCASE("sizes") {
    IndexVector iv{std::vector<std::uint32_t>(64, 3), 16};
    const auto bs = encode_bits(iv);
    CHECK(bs.bit_count == 256);
    CHECK(bs.bytes.size() == 32);
    IndexVector wide{std::vector<std::uint32_t>(64, 200), 256};
    CHECK(encode_bits(wide).bytes.size() == 64);
  }
  SUBCASE("MSB first with zero padding") {
    IndexVector iv{{5, 1, 7}, 8};  // 101 001 111 -> 10100111 1(0000000)
    const auto bs = encode_bits(iv);
    CHECK(bs.bit_count == 9);
    REQUIRE(bs.bytes.size() == 2);
    CHECK(bs.bytes[0] == 0xA7);
    CHECK(bs.bytes[1] == 0x80);
  }
  SUBCASE("round trips") {
    std::mt19937_64 rng(4);
    for (std::uint32_t z = 1; z <= 4096; z *= 2) {
      for (std::uint32_t c : {1u, 3u, 7u, 64u}) {
        IndexVector iv{std::vector<std::uint32_t>(c), z};
        for (auto& i : iv.indices) i = static_cast<std::uint32_t>(rng() % z);
        const auto bs = encode_bits(iv);
        CHECK(bs.bit_count == std::uint64_t(c) * Codebook(z, 1).bits_per_index());
        const auto back = decode_bits(bs);
        CHECK(back.indices == iv.indices);
        CHECK(back.z == z);
      }
    }
  }
  SUBCASE("invalid input") {
    CHECK_THROWS_AS(encode_bits(IndexVector{{16}, 16}), RangeError);
    CHECK_THROWS_AS(encode_bits(IndexVector{{1}, 12}), ConfigError);
    auto bs = encode_bits(IndexVector{{1, 2}, 16});
    bs.bytes.push_back(0);
    CHECK_THROWS_AS(decode_bits(bs), FormatError);
  }
}

TEST_CASE("bitstream file round trip and tamper checks") {
  const auto bs = encode_bits(IndexVector{{1, 2, 3}, 8});
  const auto path = std::filesystem::temp_directory_path() / "kbae_test_codebook.kbfb";
  write_bitstream(path, bs);
  const auto back = read_bitstream(path);
  CHECK(back.bytes == bs.bytes);
  CHECK(back.c == 3);
  CHECK(back.z == 8);
  CHECK(back.bit_count == 9);
  std::filesystem::remove(path);

  auto bytes = serialize_bitstream(bs);
  auto padded = bytes;
  padded.back() |= 0x01;
  CHECK_THROWS_AS(parse_bitstream(padded), FormatError);
  auto short_payload = bytes;
  short_payload.pop_back();
  CHECK_THROWS_AS(parse_bitstream(short_payload), FormatError);
  auto bad_magic = bytes;
  bad_magic[1] = 'X';
  CHECK_THROWS_AS(parse_bitstream(bad_magic), FormatError);
}

TEST_CASE("compression stats") {
  const auto a = compression_stats(1024, 64, 16);
  CHECK(a.q == 4);
  CHECK(a.bits == 256);
  CHECK(a.ratio == 16.0);
  const auto b = compression_stats(1024, 8, 1024);
  CHECK(b.q == 10);
  CHECK(b.bits == 80);
  CHECK(b.ratio == 128.0);
  CHECK_THROWS_AS(compression_stats(1024, 0, 16), ConfigError);
  CHECK_THROWS_AS(compression_stats(1024, 4, 10), ConfigError);
}

TEST_CASE("kb loss value and gradient routing") {
  const Tensor4 z(Dims{1, 1, 1, 2}, {1.0, 0.0});
  const Tensor4 e(Dims{1, 1, 1, 2}, {0.0, 0.0});
  {
    Tape t(false);
    CHECK(t.value(kb_loss(t, t.input(z), t.input(e), 0.25))[0] == doctest::Approx(0.625));
  }
  {
    Tape t;
    Var zv = t.input(z, true), ev = t.input(e, true);
    t.backward(kb_codebook_term(t, zv, ev));
    CHECK(t.grad(zv)[0] == 0.0);
    CHECK(t.grad(ev)[0] == -1.0);
  }
  {
    Tape t;
    Var zv = t.input(z, true), ev = t.input(e, true);
    t.backward(kb_commitment_term(t, zv, ev));
    CHECK(t.grad(ev)[0] == 0.0);
    CHECK(t.grad(zv)[0] == 1.0);
  }
  {
    Tape t(false);
    CHECK_THROWS_AS(kb_loss(t, t.input(z), t.input(Tensor4(Dims{1, 1, 1, 3})), 0.25), ShapeError);
    CHECK_THROWS_AS(kb_loss(t, t.input(z), t.input(e), -1.0), ConfigError);
  }
}

TEST_CASE("straight-through reaches the encoder and gather reaches the codebook") {
  Codebook cb(2, 2);
  set_rows(cb, {0.0, 0.0, 1.0, 1.0});
  Tape t;
  Var table = t.parameter(cb.param());
  Var z = t.input(Tensor4(Dims{1, 1, 1, 2}, {0.9, 0.9}), true);
  const std::vector<std::uint32_t> rows{1};
  Var sel = t.gather_rows(table, rows, Dims{1, 1, 1, 2});
  CHECK(t.value(sel)[0] == 1.0);
  Var st = t.straight_through(z, sel);
  Var loss = t.add(t.mse(st, t.input(Tensor4(Dims{1, 1, 1, 2}, 0.0))), kb_codebook_term(t, z, sel));
  t.backward(loss);
  // Reconstruction: d/dz mean(st^2) = st = 1.0 per entry. Only the kb term reaches the codebook.
  CHECK(t.grad(z)[0] == doctest::Approx(1.0));
  CHECK(cb.param().grad.at(0, 0, 0, 0) == 0.0);
  CHECK(cb.param().grad.at(0, 0, 1, 0) == doctest::Approx(0.1));
}
