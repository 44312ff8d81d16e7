#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "kbae/binary_io.hpp"
#include "kbae/cli.hpp"
#include "kbae/dataset.hpp"
#include "kbae/heatmap.hpp"

using namespace kbae;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = dispatch(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch() {
  const fs::path dir = fs::temp_directory_path() / "kbae_test_cli";
  fs::create_directories(dir);
  return dir;
}

std::string s(const fs::path& p) { return p.string(); }

}  // namespace

TEST_CASE("gen-data is deterministic and splits") {
  const auto dir = scratch();
  const auto a = dir / "a.kbps", b = dir / "b.kbps";
  REQUIRE(run({"gen-data", "--m", "8", "--count", "12", "--seed", "4", "--out", s(a)}).code == 0);
  REQUIRE(run({"gen-data", "--m", "8", "--count", "12", "--seed", "4", "--out", s(b)}).code == 0);
  CHECK(read_file(a) == read_file(b));
  CHECK(read_dataset(a).size() == 12);

  const auto r = run({"gen-data", "--m", "8", "--count", "12", "--out", s(dir / "s.kbps"), "--split",
                      "10:1:1"});
  CHECK(r.code == 0);
  CHECK(r.out.find("split 10/1/1") != std::string::npos);
  CHECK(read_dataset(dir / "s.kbps.val").size() == 1);
}

TEST_CASE("report prints counts") {
  const auto r = run({"report", "--c", "32"});
  CHECK(r.code == 0);
  CHECK(r.out.find("43,681") != std::string::npos);
  CHECK(r.out.find("2,588,672") != std::string::npos);
  const auto h = run({"report", "--variant", "psfnet-h", "--c", "8"});
  CHECK(h.code == 0);
  CHECK(h.out.find("2+2 GARB") != std::string::npos);
  CHECK(h.out.find("2+1 GARB") != std::string::npos);
}

TEST_CASE("usage errors exit 2 with one line") {
  auto r = run({"train", "--epochs", "1"});
  CHECK(r.code == 2);
  CHECK(r.err.starts_with("usage error: "));
  CHECK(run({"report", "--c", "32", "--bogus"}).code == 2);
  CHECK(run({"frobnicate"}).code == 2);
  CHECK(run({}).code == 2);
}

TEST_CASE("runtime errors exit 1 and leave no partial output") {
  const auto dir = scratch();
  const auto out = dir / "never.kbck";
  fs::remove(out);
  const auto r = run({"train", "--data", s(dir / "missing.kbps"), "--out", s(out)});
  CHECK(r.code == 1);
  CHECK(r.err.starts_with("error: "));
  CHECK_FALSE(fs::exists(out));
  CHECK_FALSE(fs::exists(dir / "never.kbck.csv"));
  CHECK(run({"report", "--c", "7"}).code == 1);
}

TEST_CASE("config files fill in missing flags") {
  const auto dir = scratch();
  const auto cfg = dir / "run.cfg";
  std::ofstream(cfg) << "# defaults\nm = 8\ncount=5\n";
  const auto out = dir / "cfg.kbps";
  CHECK(run({"gen-data", "--config", s(cfg), "--out", s(out), "--count", "3"}).code == 0);
  const auto data = read_dataset(out);
  CHECK(data.size() == 3);
  CHECK(data[0].side() == 8);
}

TEST_CASE("train, eval, compress, decompress and viz end to end") {
  const auto dir = scratch();
  const auto data = dir / "e2e.kbps";
  REQUIRE(run({"gen-data", "--m", "16", "--count", "10", "--out", s(data)}).code == 0);
  const auto ckpt = dir / "e2e.kbck";
  const auto tr = run({"train", "--data", s(data), "--val", s(data), "--m", "16", "--c", "4", "--z",
                       "16", "--epochs", "2", "--batch", "5", "--out", s(ckpt)});
  REQUIRE(tr.code == 0);
  CHECK(fs::exists(ckpt));
  CHECK(fs::exists(dir / "e2e.kbck.csv"));
  CHECK(tr.out.find("epoch=1") != std::string::npos);

  const auto ev = run({"eval", "--ckpt", s(ckpt), "--data", s(data)});
  CHECK(ev.code == 0);
  CHECK(ev.out.find("nmse=") != std::string::npos);

  const auto bits = dir / "e2e.kbfb";
  CHECK(run({"compress", "--ckpt", s(ckpt), "--in", s(data), "--index", "2", "--out", s(bits)}).code == 0);
  CHECK(read_file(bits).size() == 16 + 2);  // header + 4 indices * 4 bits
  CHECK(run({"compress", "--ckpt", s(ckpt), "--in", s(data), "--index", "10", "--out", s(bits)}).code == 1);

  const auto recon = dir / "e2e.recon.kbps";
  CHECK(run({"decompress", "--ckpt", s(ckpt), "--in", s(bits), "--out", s(recon)}).code == 0);
  CHECK(read_dataset(recon).size() == 1);

  const auto pgm = dir / "e2e.pgm";
  CHECK(run({"viz", "--in", s(data), "--index", "2", "--pair", s(recon), "--out", s(pgm)}).code == 1);
  CHECK(run({"viz", "--in", s(recon), "--pair", s(recon), "--out", s(pgm)}).code == 0);
  const auto bytes = read_file(pgm);
  const std::string header(bytes.begin(), bytes.begin() + 2);
  CHECK(header == "P5");
}

TEST_CASE("heatmap pixels") {
  const PhaseShiftMatrix black(2, {0.0, 0.0, 0.0, 0.0}, PhaseDomain::normalized);
  for (auto p : heatmap(black).pixels) CHECK(p == 0);
  const PhaseShiftMatrix mid(1, {0.5}, PhaseDomain::normalized);
  CHECK(heatmap(mid).pixels[0] == 128);
  const PhaseShiftMatrix top(1, {std::nextafter(1.0, 0.0)}, PhaseDomain::normalized);
  CHECK(heatmap(top).pixels[0] == 255);
  const PhaseShiftMatrix raw(1, {kTwoPi * 0.25}, PhaseDomain::raw);
  CHECK(heatmap(raw).pixels[0] == 64);

  std::vector<double> ramp(32 * 32);
  for (std::size_t i = 0; i < ramp.size(); ++i) ramp[i] = double(i) / double(ramp.size());
  const PhaseShiftMatrix m(32, ramp, PhaseDomain::normalized);
  const auto img = heatmap(m);
  for (std::size_t i = 1; i < img.pixels.size(); ++i) CHECK(img.pixels[i] >= img.pixels[i - 1]);
  const auto pair = heatmap_pair(m, m);
  CHECK(pair.width == 66);
  CHECK(pair.height == 32);
  CHECK(pair.pixels[32] == 255);
  CHECK(pair.pixels[33] == 255);
  const auto pgm = encode_pgm(img);
  CHECK(pgm.size() == std::string("P5\n32 32\n255\n").size() + 1024);
}
