#include "promptseg/archive.hpp"

#include <bit>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace promptseg {

namespace {

constexpr char kTensorMagic[4] = {'P', 'S', 'T', 'N'};
constexpr char kArchiveMagic[4] = {'P', 'S', 'A', 'R'};
constexpr std::uint32_t kArchiveVersion = 1;
constexpr std::uint64_t kMaxExtent = 1ull << 32;

template <typename U>
void put_le(std::ostream& os, U value) {
  char bytes[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((value >> (8 * i)) & 0xff);
  os.write(bytes, sizeof(U));
}

template <typename U>
U get_le(std::istream& is) {
  unsigned char bytes[sizeof(U)];
  if (!is.read(reinterpret_cast<char*>(bytes), sizeof(U))) throw FormatError("truncated record");
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
  return value;
}

void expect_magic(std::istream& is, const char (&magic)[4], const char* what) {
  char got[4];
  if (!is.read(got, 4) || std::string(got, 4) != std::string(magic, 4)) {
    throw FormatError(std::string("bad magic for ") + what);
  }
}

std::string read_bytes(std::istream& is, std::uint64_t n) {
  std::string s(n, '\0');
  if (n && !is.read(s.data(), static_cast<std::streamsize>(n))) throw FormatError("truncated string");
  return s;
}

}  // namespace

void write_tensor(std::ostream& os, const Tensor& t) {
  os.write(kTensorMagic, 4);
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
  for (auto e : t.shape()) put_le<std::uint64_t>(os, e);
  for (double v : t.data()) put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(v));
}

Tensor read_tensor(std::istream& is) {
  expect_magic(is, kTensorMagic, "tensor record");
  const auto rank = get_le<std::uint32_t>(is);
  if (rank == 0 || rank > 8) throw FormatError("unsupported tensor rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& e : shape) {
    e = get_le<std::uint64_t>(is);
    if (e > kMaxExtent) throw FormatError("implausible tensor extent");
  }
  std::vector<double> values(shape_numel(shape));
  for (auto& v : values) v = std::bit_cast<double>(get_le<std::uint64_t>(is));
  return Tensor::from(std::move(shape), std::move(values));
}

const std::string& TensorArchive::get(const std::string& key) const {
  auto it = manifest_.find(key);
  if (it == manifest_.end()) throw FormatError("archive manifest has no key '" + key + "'");
  return it->second;
}

std::string TensorArchive::get_or(const std::string& key, const std::string& fallback) const {
  auto it = manifest_.find(key);
  return it == manifest_.end() ? fallback : it->second;
}

void TensorArchive::put(const std::string& name, const Tensor& t) {
  auto it = index_.find(name);
  if (it != index_.end()) {
    tensors_[it->second].second = t;
    return;
  }
  index_[name] = tensors_.size();
  tensors_.emplace_back(name, t);
}

const Tensor& TensorArchive::tensor(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw FormatError("archive has no tensor '" + name + "'");
  return tensors_[it->second].second;
}

void TensorArchive::write(std::ostream& os) const {
  os.write(kArchiveMagic, 4);
  put_le<std::uint32_t>(os, kArchiveVersion);
  std::ostringstream text;
  for (const auto& [k, v] : manifest_) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw FormatError("manifest entry '" + k + "' is not a single key=value line");
    }
    text << k << '=' << v << '\n';
  }
  const auto body = text.str();
  put_le<std::uint64_t>(os, body.size());
  os.write(body.data(), static_cast<std::streamsize>(body.size()));
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(tensors_.size()));
  for (const auto& [name, t] : tensors_) {
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_tensor(os, t);
  }
}

TensorArchive TensorArchive::read(std::istream& is) {
  expect_magic(is, kArchiveMagic, "archive");
  const auto version = get_le<std::uint32_t>(is);
  if (version != kArchiveVersion) throw FormatError("unsupported archive version " + std::to_string(version));
  TensorArchive ar;
  const auto len = get_le<std::uint64_t>(is);
  std::istringstream text(read_bytes(is, len));
  for (std::string line; std::getline(text, line);) {
    auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("malformed manifest line '" + line + "'");
    ar.manifest_[line.substr(0, eq)] = line.substr(eq + 1);
  }
  const auto count = get_le<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = get_le<std::uint32_t>(is);
    auto name = read_bytes(is, name_len);
    ar.put(name, read_tensor(is));
  }
  return ar;
}

void TensorArchive::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open '" + path + "' for writing");
  write(os);
  if (!os) throw FormatError("write to '" + path + "' failed");
}

TensorArchive TensorArchive::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open '" + path + "'");
  return read(is);
}

}  // namespace promptseg
