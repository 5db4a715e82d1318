#include "qisicgm/artifact.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace qisicgm::artifact {

namespace {

constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
constexpr char kKind[] = "qisicgm-stack-artifact";

void check_shape(const TensorEntry& e, const std::string& name) {
  std::size_t expected = static_cast<std::size_t>(e.element_count());
  const std::size_t actual = e.is_int ? e.i64.size() : e.f64.size();
  if (expected != actual) {
    throw std::runtime_error("tensor \"" + name + "\": shape/data mismatch");
  }
}

}  // namespace

void TensorStore::put(const std::string& name, std::vector<int> shape, const double* data,
                      std::size_t n) {
  TensorEntry e;
  e.shape = std::move(shape);
  e.f64.assign(data, data + n);
  check_shape(e, name);
  entries_[name] = std::move(e);
}

void TensorStore::put(const std::string& name, std::vector<int> shape,
                      const std::vector<double>& data) {
  put(name, std::move(shape), data.data(), data.size());
}

void TensorStore::put_scalar(const std::string& name, double value) {
  put(name, {1}, &value, 1);
}

void TensorStore::put(const std::string& name, const Mat& m) {
  put(name, {static_cast<int>(m.rows()), static_cast<int>(m.cols())}, m.data(),
      static_cast<std::size_t>(m.size()));
}

void TensorStore::put(const std::string& name, const Vec& v) {
  put(name, {static_cast<int>(v.size())}, v.data(), static_cast<std::size_t>(v.size()));
}

void TensorStore::put_ints(const std::string& name, std::vector<int> shape,
                           const std::vector<std::int64_t>& data) {
  TensorEntry e;
  e.shape = std::move(shape);
  e.i64 = data;
  e.is_int = true;
  check_shape(e, name);
  entries_[name] = std::move(e);
}

const TensorEntry& TensorStore::get(const std::string& name) const {
  const auto it = entries_.find(name);
  if (it == entries_.end()) {
    throw InputError("artifact is missing tensor \"" + name + "\"");
  }
  return it->second;
}

double TensorStore::get_scalar(const std::string& name) const {
  const auto& e = get(name);
  if (e.is_int || e.f64.size() != 1) throw InputError("tensor \"" + name + "\" is not a scalar");
  return e.f64[0];
}

Mat TensorStore::get_matrix(const std::string& name) const {
  const auto& e = get(name);
  if (e.is_int || e.shape.size() != 2) throw InputError("tensor \"" + name + "\" is not a matrix");
  Mat m(e.shape[0], e.shape[1]);
  std::memcpy(m.data(), e.f64.data(), e.f64.size() * sizeof(double));
  return m;
}

Vec TensorStore::get_vector(const std::string& name) const {
  const auto& e = get(name);
  if (e.is_int || e.shape.size() != 1) throw InputError("tensor \"" + name + "\" is not a vector");
  Vec v(e.shape[0]);
  std::memcpy(v.data(), e.f64.data(), e.f64.size() * sizeof(double));
  return v;
}

std::vector<std::int64_t> TensorStore::get_ints(const std::string& name) const {
  const auto& e = get(name);
  if (!e.is_int) throw InputError("tensor \"" + name + "\" is not integer-typed");
  return e.i64;
}

std::string base64_encode(const unsigned char* data, std::size_t n) {
  std::string out;
  out.reserve((n + 2) / 3 * 4);
  for (std::size_t i = 0; i < n; i += 3) {
    const unsigned b0 = data[i];
    const unsigned b1 = i + 1 < n ? data[i + 1] : 0;
    const unsigned b2 = i + 2 < n ? data[i + 2] : 0;
    out.push_back(kAlphabet[b0 >> 2]);
    out.push_back(kAlphabet[((b0 & 0x3) << 4) | (b1 >> 4)]);
    out.push_back(i + 1 < n ? kAlphabet[((b1 & 0xF) << 2) | (b2 >> 6)] : '=');
    out.push_back(i + 2 < n ? kAlphabet[b2 & 0x3F] : '=');
  }
  return out;
}

std::vector<unsigned char> base64_decode(const std::string& text) {
  static const auto value_of = [] {
    std::array<int, 256> table{};
    table.fill(-1);
    for (int i = 0; i < 64; ++i) table[static_cast<unsigned char>(kAlphabet[i])] = i;
    return table;
  }();
  std::vector<unsigned char> out;
  out.reserve(text.size() / 4 * 3);
  int acc = 0, bits = 0;
  for (char c : text) {
    if (c == '=' || c == '\n' || c == '\r') continue;
    const int v = value_of[static_cast<unsigned char>(c)];
    if (v < 0) throw InputError("artifact: invalid base64 payload");
    acc = (acc << 6) | v;
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<unsigned char>((acc >> bits) & 0xFF));
    }
  }
  return out;
}

void save_envelope(const std::string& path, int format_version, const nlohmann::json& meta,
                   const TensorStore& tensors) {
  nlohmann::json root;
  root["kind"] = kKind;
  root["format_version"] = format_version;
  root["meta"] = meta;
  nlohmann::json tj = nlohmann::json::object();
  for (const auto& [name, entry] : tensors.entries()) {
    nlohmann::json t;
    t["shape"] = entry.shape;
    t["dtype"] = entry.is_int ? "i64" : "f64";
    if (entry.is_int) {
      t["data"] = base64_encode(reinterpret_cast<const unsigned char*>(entry.i64.data()),
                                entry.i64.size() * sizeof(std::int64_t));
    } else {
      t["data"] = base64_encode(reinterpret_cast<const unsigned char*>(entry.f64.data()),
                                entry.f64.size() * sizeof(double));
    }
    tj[name] = std::move(t);
  }
  root["tensors"] = std::move(tj);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write artifact: " + path);
  out << root.dump(1, '\t') << "\n";
  if (!out) throw std::runtime_error("artifact write failed: " + path);
}

Envelope load_envelope(const std::string& path, int expected_version) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open artifact: " + path);
  nlohmann::json root;
  try {
    in >> root;
  } catch (const nlohmann::json::exception& e) {
    throw InputError("artifact is not valid JSON: " + std::string(e.what()));
  }
  if (!root.is_object() || root.value("kind", "") != kKind) {
    throw InputError("file is not a model artifact: " + path);
  }
  Envelope env;
  env.format_version = root.value("format_version", -1);
  if (env.format_version != expected_version) {
    throw InputError("artifact format_version " + std::to_string(env.format_version) +
                     " is not supported (expected " + std::to_string(expected_version) + ")");
  }
  env.meta = root.value("meta", nlohmann::json::object());
  for (const auto& [name, t] : root.at("tensors").items()) {
    const std::string dtype = t.at("dtype").get<std::string>();
    const auto shape = t.at("shape").get<std::vector<int>>();
    const auto bytes = base64_decode(t.at("data").get<std::string>());
    if (dtype == "i64") {
      std::vector<std::int64_t> data(bytes.size() / sizeof(std::int64_t));
      std::memcpy(data.data(), bytes.data(), bytes.size());
      env.tensors.put_ints(name, shape, data);
    } else if (dtype == "f64") {
      std::vector<double> data(bytes.size() / sizeof(double));
      std::memcpy(data.data(), bytes.data(), bytes.size());
      env.tensors.put(name, shape, data);
    } else {
      throw InputError("artifact tensor \"" + name + "\" has unknown dtype " + dtype);
    }
  }
  return env;
}

}  // namespace qisicgm::artifact
