#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "qisicgm/common.hpp"

namespace qisicgm::artifact {

/// One named payload: a shaped block of f64 or i64 values. Values travel
/// base64-encoded (native little-endian words) inside the JSON envelope, so
/// round trips are bit-exact.
struct TensorEntry {
  std::vector<int> shape;
  std::vector<double> f64;
  std::vector<std::int64_t> i64;
  bool is_int = false;

  std::int64_t element_count() const {
    std::int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
  }
};

class TensorStore {
 public:
  void put(const std::string& name, std::vector<int> shape, const double* data, std::size_t n);
  void put(const std::string& name, std::vector<int> shape, const std::vector<double>& data);
  void put_scalar(const std::string& name, double value);
  void put(const std::string& name, const Mat& m);
  void put(const std::string& name, const Vec& v);
  void put_ints(const std::string& name, std::vector<int> shape,
                const std::vector<std::int64_t>& data);

  bool contains(const std::string& name) const { return entries_.count(name) > 0; }
  const TensorEntry& get(const std::string& name) const;
  double get_scalar(const std::string& name) const;
  Mat get_matrix(const std::string& name) const;          // requires 2-d shape
  Vec get_vector(const std::string& name) const;          // requires 1-d shape
  std::vector<std::int64_t> get_ints(const std::string& name) const;

  const std::map<std::string, TensorEntry>& entries() const { return entries_; }

 private:
  std::map<std::string, TensorEntry> entries_;  // ordered: deterministic dumps
};

std::string base64_encode(const unsigned char* data, std::size_t n);
std::vector<unsigned char> base64_decode(const std::string& text);

/// Writes {format_version, kind, meta, tensors} as deterministic JSON.
void save_envelope(const std::string& path, int format_version, const nlohmann::json& meta,
                   const TensorStore& tensors);

struct Envelope {
  int format_version = 0;
  nlohmann::json meta;
  TensorStore tensors;
};

/// Loads and validates the envelope; a version other than `expected_version`
/// raises an artifact-version InputError.
Envelope load_envelope(const std::string& path, int expected_version);

}  // namespace qisicgm::artifact
