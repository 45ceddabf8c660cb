#ifndef WIDTHRED_INSTANCE_IO_HPP
#define WIDTHRED_INSTANCE_IO_HPP

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "widthred/core.hpp"
#include "widthred/linalg_oracle.hpp"
#include "widthred/losses.hpp"

namespace widthred {

// ---------------------------------------------------------------------------
// base64 of little-endian float64 payloads

namespace b64 {

inline constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

inline std::string encode(const std::vector<std::uint8_t>& bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += kAlphabet[(v >> 6) & 63];
    out += kAlphabet[v & 63];
  }
  const std::size_t rest = bytes.size() - i;
  if (rest == 1) {
    const std::uint32_t v = bytes[i] << 16;
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += "==";
  } else if (rest == 2) {
    const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8);
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += kAlphabet[(v >> 6) & 63];
    out += '=';
  }
  return out;
}

inline std::vector<std::uint8_t> decode(const std::string& text) {
  auto value = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  if (text.size() % 4 != 0) throw Error(ErrorKind::ParseError, "base64 length is not a multiple of 4");
  std::vector<std::uint8_t> out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    int v[4];
    int pad = 0;
    for (int k = 0; k < 4; ++k) {
      const char c = text[i + k];
      if (c == '=') {
        if (i + 4 != text.size() || k < 2) throw Error(ErrorKind::ParseError, "misplaced base64 padding");
        v[k] = 0;
        ++pad;
      } else {
        if (pad) throw Error(ErrorKind::ParseError, "misplaced base64 padding");
        v[k] = value(c);
        if (v[k] < 0) throw Error(ErrorKind::ParseError, "invalid base64 character");
      }
    }
    const std::uint32_t w = (v[0] << 18) | (v[1] << 12) | (v[2] << 6) | v[3];
    out.push_back(static_cast<std::uint8_t>(w >> 16));
    if (pad < 2) out.push_back(static_cast<std::uint8_t>(w >> 8));
    if (pad < 1) out.push_back(static_cast<std::uint8_t>(w));
  }
  return out;
}

inline std::string encode_doubles(const double* data, std::size_t count) {
  std::vector<std::uint8_t> bytes(count * 8);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(data[i]);
    for (int k = 0; k < 8; ++k) bytes[i * 8 + k] = static_cast<std::uint8_t>(bits >> (8 * k));
  }
  return encode(bytes);
}

inline std::vector<double> decode_doubles(const std::string& text) {
  const auto bytes = decode(text);
  if (bytes.size() % 8 != 0) throw Error(ErrorKind::ParseError, "payload is not a whole number of float64");
  std::vector<double> out(bytes.size() / 8);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint64_t bits = 0;
    for (int k = 0; k < 8; ++k) bits |= static_cast<std::uint64_t>(bytes[i * 8 + k]) << (8 * k);
    out[i] = std::bit_cast<double>(bits);
  }
  return out;
}

}  // namespace b64

// ---------------------------------------------------------------------------
// Portable RNG: mt19937_64 words, 53-bit uniforms, Box-Muller normals.
// std::*_distribution output differs between standard libraries.

class PortableRng {
 public:
  explicit PortableRng(std::uint64_t seed) : eng_(seed) {}

  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double normal() {
    if (spare_) {
      const double v = *spare_;
      spare_.reset();
      return v;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double th = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(th);
    return r * std::cos(th);
  }

  std::uint64_t next() { return eng_(); }

 private:
  std::mt19937_64 eng_;
  std::optional<double> spare_;
};

// ---------------------------------------------------------------------------
// Instance files

struct LossSpec {
  std::string key = "logistic";  // exp | sym-exp | lp | logistic
  double nu = 1.0;
  double p = 3.0;
  double mu = 1.0;
};

struct InstanceFile {
  int schema_version = 1;
  Matrix A;
  Vector b;
  Matrix P;
  LossSpec loss;
  std::optional<double> R;
  nlohmann::json meta = nlohmann::json::object();

  ProblemInstance instance() const { return {A, b, P}; }
};

inline constexpr int kSchemaVersion = 1;

/// Loss plus the matrix it acts on (sym-exp runs the exp loss on [P; -P]).
inline QscLoss resolve_loss(const LossSpec& spec) {
  if (spec.key == "exp" || spec.key == "sym-exp") return make_exp_loss(spec.nu);
  if (spec.key == "lp") return make_lp_loss(spec.p, spec.mu);
  if (spec.key == "logistic") return make_logistic_loss();
  throw Error(ErrorKind::InvalidParameter, "unknown loss key '" + spec.key + "'");
}

inline ProblemInstance effective_instance(const ProblemInstance& inst, const LossSpec& spec) {
  if (spec.key == "sym-exp") return {inst.A, inst.b, stack_symmetric(inst.P)};
  return inst;
}

namespace detail {

inline nlohmann::json matrix_to_json(const Matrix& M) {
  return {{"rows", M.rows()}, {"cols", M.cols()}, {"data_b64", b64::encode_doubles(M.data(), M.size())}};
}

inline nlohmann::json vector_to_json(const Vector& v) {
  return {{"size", v.size()}, {"data_b64", b64::encode_doubles(v.data(), v.size())}};
}

inline std::vector<double> read_payload(const nlohmann::json& j, const std::string& what) {
  std::vector<double> vals;
  if (j.contains("data_b64")) {
    if (!j["data_b64"].is_string()) throw Error(ErrorKind::ParseError, what + ".data_b64 must be a string");
    vals = b64::decode_doubles(j["data_b64"].get<std::string>());
  } else if (j.contains("data")) {
    const auto& d = j["data"];
    if (!d.is_array()) throw Error(ErrorKind::ParseError, what + ".data must be an array");
    for (const auto& e : d) {
      if (e.is_array()) {
        for (const auto& ee : e) {
          if (!ee.is_number()) throw Error(ErrorKind::ParseError, what + ": non-numeric entry");
          vals.push_back(ee.get<double>());
        }
      } else {
        if (!e.is_number()) throw Error(ErrorKind::ParseError, what + ": non-numeric entry");
        vals.push_back(e.get<double>());
      }
    }
  } else {
    throw Error(ErrorKind::ParseError, what + " needs data_b64 or data");
  }
  for (double v : vals)
    if (!std::isfinite(v)) throw Error(ErrorKind::ParseError, what + " has a non-finite entry");
  return vals;
}

inline Index read_dim(const nlohmann::json& j, const char* key, const std::string& what) {
  if (!j.contains(key) || !j[key].is_number_integer() || j[key].get<long long>() < 0)
    throw Error(ErrorKind::ParseError, what + "." + key + " must be a nonnegative integer");
  return static_cast<Index>(j[key].get<long long>());
}

inline Matrix matrix_from_json(const nlohmann::json& j, const std::string& what) {
  if (!j.is_object()) throw Error(ErrorKind::ParseError, what + " must be an object");
  const Index r = read_dim(j, "rows", what), c = read_dim(j, "cols", what);
  const auto vals = read_payload(j, what);
  if (static_cast<Index>(vals.size()) != r * c)
    throw Error(ErrorKind::DimensionError, what + ": " + std::to_string(vals.size()) + " entries for a " +
                                               std::to_string(r) + "x" + std::to_string(c) + " matrix");
  Matrix M(r, c);
  if (!vals.empty()) std::memcpy(M.data(), vals.data(), vals.size() * sizeof(double));
  return M;
}

inline Vector vector_from_json(const nlohmann::json& j, const std::string& what) {
  std::vector<double> vals;
  if (j.is_array()) {
    for (const auto& e : j) {
      if (!e.is_number()) throw Error(ErrorKind::ParseError, what + ": non-numeric entry");
      vals.push_back(e.get<double>());
    }
    for (double v : vals)
      if (!std::isfinite(v)) throw Error(ErrorKind::ParseError, what + " has a non-finite entry");
  } else if (j.is_object()) {
    vals = read_payload(j, what);
    if (j.contains("size") && static_cast<Index>(vals.size()) != read_dim(j, "size", what))
      throw Error(ErrorKind::DimensionError, what + ": size does not match payload");
  } else {
    throw Error(ErrorKind::ParseError, what + " must be an array or object");
  }
  Vector v(static_cast<Index>(vals.size()));
  for (std::size_t i = 0; i < vals.size(); ++i) v(static_cast<Index>(i)) = vals[i];
  return v;
}

}  // namespace detail

inline nlohmann::json to_json(const InstanceFile& f) {
  nlohmann::json params = nlohmann::json::object();
  if (f.loss.key == "exp" || f.loss.key == "sym-exp") params["nu"] = f.loss.nu;
  if (f.loss.key == "lp") {
    params["p"] = f.loss.p;
    params["mu"] = f.loss.mu;
  }
  nlohmann::json j = {{"schema_version", f.schema_version},
                      {"A", detail::matrix_to_json(f.A)},
                      {"b", detail::vector_to_json(f.b)},
                      {"P", detail::matrix_to_json(f.P)},
                      {"loss", {{"key", f.loss.key}, {"params", params}}}};
  if (f.R) j["R"] = *f.R;
  if (!f.meta.empty()) j["meta"] = f.meta;
  return j;
}

struct LoadResult {
  InstanceFile file;
  std::vector<std::string> warnings;  // "RankWarning: ..." entries
  Index dropped_rows = 0;
};

/// Parses and validates an instance document; dependent rows of A are dropped
/// with a RankWarning.
inline LoadResult parse_instance(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::ParseError, std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw Error(ErrorKind::ParseError, "top level must be an object");
  for (const char* key : {"schema_version", "A", "b", "P", "loss"})
    if (!j.contains(key)) throw Error(ErrorKind::ParseError, std::string("missing field '") + key + "'");
  if (!j["schema_version"].is_number_integer() || j["schema_version"].get<int>() != kSchemaVersion)
    throw Error(ErrorKind::ParseError, "unsupported schema_version");

  LoadResult out;
  InstanceFile& f = out.file;
  f.A = detail::matrix_from_json(j["A"], "A");
  f.b = detail::vector_from_json(j["b"], "b");
  f.P = detail::matrix_from_json(j["P"], "P");

  const auto& L = j["loss"];
  if (!L.is_object() || !L.contains("key") || !L["key"].is_string())
    throw Error(ErrorKind::ParseError, "loss.key must be a string");
  f.loss.key = L["key"].get<std::string>();
  if (L.contains("params")) {
    const auto& p = L["params"];
    if (!p.is_object()) throw Error(ErrorKind::ParseError, "loss.params must be an object");
    auto num = [&](const char* k, double& dst) {
      if (!p.contains(k)) return;
      if (!p[k].is_number()) throw Error(ErrorKind::ParseError, std::string("loss.params.") + k + " must be numeric");
      dst = p[k].get<double>();
    };
    num("nu", f.loss.nu);
    num("p", f.loss.p);
    num("mu", f.loss.mu);
  }
  try {
    (void)resolve_loss(f.loss);
  } catch (const Error& e) {
    throw Error(ErrorKind::ParseError, std::string("loss: ") + e.what());
  }
  if (j.contains("R")) {
    if (!j["R"].is_number() || !(j["R"].get<double>() > 0))
      throw Error(ErrorKind::ParseError, "R must be a positive number");
    f.R = j["R"].get<double>();
  }
  if (j.contains("meta")) f.meta = j["meta"];

  const Index d = f.A.rows(), n = f.A.cols(), m = f.P.rows();
  if (f.P.cols() != n)
    throw Error(ErrorKind::DimensionError, "cols(A) = " + std::to_string(n) + " but cols(P) = " +
                                               std::to_string(f.P.cols()));
  if (f.b.size() != d) throw Error(ErrorKind::DimensionError, "len(b) != rows(A)");
  if (!(d <= n && n <= m))
    throw Error(ErrorKind::DimensionError, "need d <= n <= m, got d=" + std::to_string(d) +
                                               " n=" + std::to_string(n) + " m=" + std::to_string(m));

  auto red = preprocess_constraints(f.A, f.b);
  if (!red.consistent) throw Error(ErrorKind::DimensionError, "A x = b is inconsistent");
  if (red.dropped > 0) {
    out.dropped_rows = red.dropped;
    out.warnings.push_back("RankWarning: dropped " + std::to_string(red.dropped) + " dependent row(s) of A");
    f.A = red.A;
    f.b = red.b;
  }
  return out;
}

inline LoadResult load_instance(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::ParseError, "cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_instance(ss.str());
}

inline std::string dump_instance(const InstanceFile& f) { return to_json(f).dump(2) + "\n"; }

inline void save_instance(const InstanceFile& f, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::ParseError, "cannot write '" + path + "'");
  out << dump_instance(f);
}

// ---------------------------------------------------------------------------
// Synthetic instances

struct GenerateParams {
  double nu = 0.5;
  double p = 3.0;
  double mu = 1.0;
};

/// Gaussian A and P, b = A x_planted with ||P x_planted||_inf = 1 (R hint 1).
inline InstanceFile generate(const std::string& kind, std::uint64_t seed, Index d, Index n, Index m,
                             const GenerateParams& params = {}) {
  if (!(d >= 0 && d <= n && n <= m && n > 0))
    throw Error(ErrorKind::InvalidParameter, "generate needs 0 <= d <= n <= m and n > 0");
  InstanceFile f;
  f.loss.key = kind;
  f.loss.nu = params.nu;
  f.loss.p = params.p;
  f.loss.mu = params.mu;
  (void)resolve_loss(f.loss);

  PortableRng rng(seed);
  f.A.resize(d, n);
  f.P.resize(m, n);
  for (Index i = 0; i < d; ++i)
    for (Index j = 0; j < n; ++j) f.A(i, j) = rng.normal();
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < n; ++j) f.P(i, j) = rng.normal();
  Vector x(n);
  for (Index j = 0; j < n; ++j) x(j) = rng.normal();
  const double scale = (f.P * x).lpNorm<Eigen::Infinity>();
  if (scale > 0) x /= scale;
  f.b = f.A * x;
  f.R = 1.0;
  f.meta = {{"generator", kind}, {"seed", seed}, {"x_planted", std::vector<double>(x.data(), x.data() + n)}};
  return f;
}

}  // namespace widthred

#endif  // WIDTHRED_INSTANCE_IO_HPP
