#include "kbae/binary_io.hpp"

#include <bit>
#include <fstream>
#include <iterator>

#include "kbae/errors.hpp"

namespace kbae {

void ByteWriter::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

void ByteWriter::tag(std::string_view magic) {
  for (char c : magic) bytes_.push_back(static_cast<std::uint8_t>(c));
}

void ByteReader::need(std::size_t n) {
  if (remaining() < n) {
    throw FormatError("truncated input: need " + std::to_string(n) + " bytes, have " +
                          std::to_string(remaining()),
                      offset_);
  }
}

std::uint8_t ByteReader::u8() {
  need(1);
  return data_[offset_++];
}

std::uint32_t ByteReader::u32() {
  need(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t{data_[offset_ + i]} << (8 * i);
  offset_ += 4;
  return v;
}

std::uint64_t ByteReader::u64() {
  need(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t{data_[offset_ + i]} << (8 * i);
  offset_ += 8;
  return v;
}

float ByteReader::f32() { return std::bit_cast<float>(u32()); }

std::span<const std::uint8_t> ByteReader::raw(std::size_t n) {
  need(n);
  auto out = data_.subspan(offset_, n);
  offset_ += n;
  return out;
}

void ByteReader::expect_tag(std::string_view magic, std::string_view what) {
  const std::size_t at = offset_;
  auto got = raw(magic.size());
  for (std::size_t i = 0; i < magic.size(); ++i) {
    if (got[i] != static_cast<std::uint8_t>(magic[i])) {
      throw FormatError("bad magic for " + std::string(what) + ", expected \"" +
                            std::string(magic) + "\"",
                        at);
    }
  }
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FilesystemError("cannot open " + path.string() + " for reading");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in),
                                   std::istreambuf_iterator<char>());
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FilesystemError("cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      out.close();
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw FilesystemError("failed writing " + tmp.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw FilesystemError("cannot move " + tmp.string() + " to " + path.string());
  }
}

}  // namespace kbae
