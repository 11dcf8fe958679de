#pragma once

// Binary tensor records and named-tensor archives.
//
// Tensor record (all integers little-endian):
//   4 bytes  magic "PSTN"
//   u32      rank
//   u64      extent, repeated rank times
//   f64      values in row-major order, IEEE-754 little-endian
//
// Archive:
//   4 bytes  magic "PSAR"
//   u32      format version (1)
//   u64      manifest byte length, then UTF-8 "key=value\n" lines
//   u32      tensor count
//   per tensor: u32 name length, name bytes, tensor record

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "promptseg/tensor.hpp"

namespace promptseg {

struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);

class TensorArchive {
 public:
  void set(const std::string& key, const std::string& value) { manifest_[key] = value; }
  const std::string& get(const std::string& key) const;
  std::string get_or(const std::string& key, const std::string& fallback) const;
  bool has(const std::string& key) const { return manifest_.count(key) != 0; }
  const std::map<std::string, std::string>& manifest() const { return manifest_; }

  void put(const std::string& name, const Tensor& t);
  const Tensor& tensor(const std::string& name) const;
  bool has_tensor(const std::string& name) const { return index_.count(name) != 0; }
  const std::vector<std::pair<std::string, Tensor>>& tensors() const { return tensors_; }

  void write(std::ostream& os) const;
  static TensorArchive read(std::istream& is);
  void save(const std::string& path) const;
  static TensorArchive load(const std::string& path);

 private:
  std::map<std::string, std::string> manifest_;
  std::vector<std::pair<std::string, Tensor>> tensors_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace promptseg
