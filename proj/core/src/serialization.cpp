#include "idlora/serialization.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <unistd.h>

namespace idlora {

namespace {

// Sanity cap against corrupt headers allocating absurd buffers.
constexpr std::uint64_t kMaxDim = 1ull << 32;

void put_bytes(std::ostream& out, const void* data, std::size_t size) {
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
}

void get_bytes(std::istream& in, void* data, std::size_t size, const char* what) {
  in.read(static_cast<char*>(data), static_cast<std::streamsize>(size));
  if (static_cast<std::size_t>(in.gcount()) != size) {
    throw FormatError(std::string(what) + ": truncated data");
  }
}

template <typename T>
void put_le(std::ostream& out, T value) {
  static_assert(std::is_unsigned_v<T>);
  unsigned char bytes[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    bytes[i] = static_cast<unsigned char>((value >> (8 * i)) & 0xff);
  }
  put_bytes(out, bytes, sizeof(T));
}

template <typename T>
T get_le(std::istream& in, const char* what) {
  static_assert(std::is_unsigned_v<T>);
  unsigned char bytes[sizeof(T)];
  get_bytes(in, bytes, sizeof(T), what);
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    value |= static_cast<T>(bytes[i]) << (8 * i);
  }
  return value;
}

void put_f64(std::ostream& out, double value) {
  put_le(out, std::bit_cast<std::uint64_t>(value));
}

double get_f64(std::istream& in, const char* what) {
  return std::bit_cast<double>(get_le<std::uint64_t>(in, what));
}

void put_magic(std::ostream& out, const char (&magic)[4]) {
  put_bytes(out, magic, 4);
}

void expect_magic(std::istream& in, const char (&magic)[4], const char* what) {
  char got[4];
  get_bytes(in, got, 4, what);
  if (std::memcmp(got, magic, 4) != 0) {
    throw FormatError(std::string(what) + ": bad magic");
  }
}

void expect_version(std::istream& in, const char* what) {
  const auto version = get_le<std::uint32_t>(in, what);
  if (version != kFormatVersion) {
    throw FormatError(std::string(what) + ": unsupported version " + std::to_string(version));
  }
}

std::uint64_t get_dim(std::istream& in, const char* what) {
  const auto value = get_le<std::uint64_t>(in, what);
  if (value == 0 || value > kMaxDim) {
    throw FormatError(std::string(what) + ": implausible dimension " + std::to_string(value));
  }
  return value;
}

void put_values(std::ostream& out, const Matrix& m) {
  for (std::size_t i = 0; i < m.size(); ++i) put_f64(out, m.data()[i]);
}

Matrix get_matrix_values(std::istream& in, std::size_t rows, std::size_t cols, const char* what) {
  std::vector<double> values(rows * cols);
  for (double& v : values) v = get_f64(in, what);
  try {
    return Matrix::from_data(rows, cols, std::move(values));
  } catch (const ParameterError& e) {
    throw FormatError(std::string(what) + ": " + e.what());
  }
}

}  // namespace

void write_matrix(std::ostream& out, const Matrix& m) {
  put_magic(out, kMatrixMagic);
  put_le<std::uint32_t>(out, kFormatVersion);
  put_le<std::uint64_t>(out, m.rows());
  put_le<std::uint64_t>(out, m.cols());
  put_values(out, m);
}

Matrix read_matrix(std::istream& in) {
  expect_magic(in, kMatrixMagic, "matrix");
  expect_version(in, "matrix");
  const auto rows = get_dim(in, "matrix");
  const auto cols = get_dim(in, "matrix");
  return get_matrix_values(in, rows, cols, "matrix");
}

void write_basis_set(std::ostream& out, const BasisSet& basis) {
  put_magic(out, kBasisMagic);
  put_le<std::uint32_t>(out, kFormatVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(basis.k));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(basis.r));
  put_le<std::uint64_t>(out, basis.source_cols);
  for (std::size_t c = 0; c < basis.k; ++c) {
    for (std::size_t idx : basis.row_indices[c]) put_le<std::uint64_t>(out, idx);
    put_values(out, basis.bases[c]);
  }
}

BasisSet read_basis_set(std::istream& in) {
  expect_magic(in, kBasisMagic, "basis");
  expect_version(in, "basis");
  BasisSet basis;
  basis.k = get_le<std::uint32_t>(in, "basis");
  basis.r = get_le<std::uint32_t>(in, "basis");
  if (basis.k == 0 || basis.r == 0) throw FormatError("basis: zero k or r");
  basis.source_cols = get_dim(in, "basis");
  basis.row_indices.resize(basis.k);
  basis.bases.reserve(basis.k);
  for (std::size_t c = 0; c < basis.k; ++c) {
    basis.row_indices[c].resize(basis.r);
    for (std::size_t i = 0; i < basis.r; ++i) {
      basis.row_indices[c][i] = get_le<std::uint64_t>(in, "basis");
    }
    basis.bases.push_back(get_matrix_values(in, basis.r, basis.source_cols, "basis"));
  }
  return basis;
}

namespace {

void write_adapter_header(std::ostream& out, const AdapterConfig& config) {
  put_magic(out, kAdapterMagic);
  put_le<std::uint32_t>(out, kFormatVersion);
  put_le<std::uint8_t>(out, static_cast<std::uint8_t>(config.method));
  put_le<std::uint64_t>(out, config.d_in);
  put_le<std::uint64_t>(out, config.d_out);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(config.r));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(config.k));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(config.s));
  put_f64(out, config.alpha);
}

std::vector<double> get_vector(std::istream& in, std::size_t size, const char* what) {
  std::vector<double> values(size);
  for (double& v : values) v = get_f64(in, what);
  check_finite(std::span<const double>(values), what);
  return values;
}

}  // namespace

void write_adapter(std::ostream& out, const Adapter& adapter) {
  const AdapterConfig& config = adapter_config(adapter);
  write_adapter_header(out, config);
  if (const auto* lora = std::get_if<LoraLayer>(&adapter)) {
    put_values(out, lora->a);
    put_values(out, lora->b);
  } else if (const auto* moe = std::get_if<MoeLoraLayer>(&adapter)) {
    put_values(out, moe->gate);
    for (std::size_t i = 0; i < config.k; ++i) {
      put_values(out, moe->expert_a[i]);
      put_values(out, moe->expert_b[i]);
    }
  } else {
    const auto& id = std::get<IdLoraLayer>(adapter);
    for (std::size_t c = 0; c < config.k; ++c) {
      for (std::size_t idx : id.bases.row_indices[c]) put_le<std::uint64_t>(out, idx);
    }
    put_values(out, id.b);
    for (double v : id.router_t) put_f64(out, v);
  }
}

Adapter read_adapter(std::istream& in, Matrix w) {
  expect_magic(in, kAdapterMagic, "adapter");
  expect_version(in, "adapter");
  AdapterConfig config;
  const auto method = get_le<std::uint8_t>(in, "adapter");
  if (method < 1 || method > 3) {
    throw FormatError("adapter: invalid method byte " + std::to_string(method));
  }
  config.method = static_cast<AdapterMethod>(method);
  config.d_in = get_dim(in, "adapter");
  config.d_out = get_dim(in, "adapter");
  config.r = get_le<std::uint32_t>(in, "adapter");
  config.k = get_le<std::uint32_t>(in, "adapter");
  config.s = get_le<std::uint32_t>(in, "adapter");
  config.alpha = get_f64(in, "adapter");
  try {
    validate(config);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("adapter: invalid stored config: ") + e.what());
  }
  if (w.rows() != config.d_out || w.cols() != config.d_in) {
    throw FormatError("adapter: stored shape " + std::to_string(config.d_out) + "x" +
                      std::to_string(config.d_in) + " does not match supplied w " +
                      std::to_string(w.rows()) + "x" + std::to_string(w.cols()));
  }

  if (config.method == AdapterMethod::lora) {
    LoraLayer layer;
    layer.config = config;
    layer.a = get_matrix_values(in, config.r, config.d_in, "adapter");
    layer.b = get_matrix_values(in, config.d_out, config.r, "adapter");
    layer.w = std::move(w);
    return layer;
  }
  if (config.method == AdapterMethod::moelora) {
    MoeLoraLayer layer;
    layer.config = config;
    layer.gate = get_matrix_values(in, config.k, config.d_in, "adapter");
    for (std::size_t i = 0; i < config.k; ++i) {
      layer.expert_a.push_back(get_matrix_values(in, config.r, config.d_in, "adapter"));
      layer.expert_b.push_back(get_matrix_values(in, config.d_out, config.r, "adapter"));
    }
    layer.w = std::move(w);
    return layer;
  }

  IdLoraLayer layer;
  layer.config = config;
  layer.bases.k = config.k;
  layer.bases.r = config.r;
  layer.bases.source_cols = config.d_in;
  layer.bases.row_indices.resize(config.k);
  for (std::size_t c = 0; c < config.k; ++c) {
    layer.bases.row_indices[c].resize(config.r);
    for (std::size_t i = 0; i < config.r; ++i) {
      const auto idx = get_le<std::uint64_t>(in, "adapter");
      if (idx >= config.d_out) {
        throw FormatError("adapter: basis row " + std::to_string(idx) + " out of " +
                          std::to_string(config.d_out));
      }
      layer.bases.row_indices[c][i] = idx;
    }
  }
  layer.b = get_matrix_values(in, config.d_out / config.s, config.r / config.s, "adapter");
  layer.router_t = get_vector(in, config.r, "adapter");
  // Bases are not stored: re-extract the recorded rows from w verbatim.
  for (std::size_t c = 0; c < config.k; ++c) {
    layer.bases.bases.push_back(take_rows(w, layer.bases.row_indices[c]));
  }
  layer.w = std::move(w);
  return layer;
}

void write_file_atomic(const std::string& path, const std::string& bytes) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  fs::path tmp = target;
  tmp += ".tmp" + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      fs::remove(tmp, ec);
      throw IoError("failed writing '" + tmp.string() + "'");
    }
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError("failed to move temp file into '" + path + "'");
  }
}

namespace {

template <typename WriteFn>
void save_via(const std::string& path, WriteFn&& fn) {
  std::ostringstream buffer(std::ios::binary);
  fn(buffer);
  write_file_atomic(path, buffer.str());
}

std::ifstream open_input(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  return in;
}

}  // namespace

void save_matrix(const std::string& path, const Matrix& m) {
  save_via(path, [&](std::ostream& out) { write_matrix(out, m); });
}

Matrix load_matrix(const std::string& path) {
  auto in = open_input(path);
  return read_matrix(in);
}

void save_basis_set(const std::string& path, const BasisSet& basis) {
  save_via(path, [&](std::ostream& out) { write_basis_set(out, basis); });
}

BasisSet load_basis_set(const std::string& path) {
  auto in = open_input(path);
  return read_basis_set(in);
}

void save_adapter(const std::string& path, const Adapter& adapter) {
  save_via(path, [&](std::ostream& out) { write_adapter(out, adapter); });
}

Adapter load_adapter(const std::string& path, Matrix w) {
  auto in = open_input(path);
  return read_adapter(in, std::move(w));
}

}  // namespace idlora
