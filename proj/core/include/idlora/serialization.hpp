#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

#include "idlora/adapters.hpp"
#include "idlora/clustering.hpp"
#include "idlora/matrix.hpp"

namespace idlora {

// All three binary formats are little-endian with a 4-byte magic and a u32
// version. Readers reject unknown magics and versions with FormatError.
inline constexpr std::uint32_t kFormatVersion = 1;
inline constexpr char kMatrixMagic[4] = {'I', 'D', 'L', 'M'};
inline constexpr char kBasisMagic[4] = {'I', 'D', 'L', 'B'};
inline constexpr char kAdapterMagic[4] = {'I', 'D', 'L', 'A'};

// Matrix: magic, version, rows u64, cols u64, row-major f64 payload.
void write_matrix(std::ostream& out, const Matrix& m);
Matrix read_matrix(std::istream& in);

// BasisSet: magic, version, k u32, r u32, d_in u64, then per basis r u64 row
// indices followed by r*d_in f64 values.
void write_basis_set(std::ostream& out, const BasisSet& basis);
BasisSet read_basis_set(std::istream& in);

// Adapter: magic, version, method u8, d_in u64, d_out u64, r u32, k u32,
// s u32, alpha f64, then the method payload. idlora stores k*r u64 row
// indices, B and T (the bases are re-extracted from w on load); lora stores
// A then B; moelora stores the gate then each expert's A and B.
void write_adapter(std::ostream& out, const Adapter& adapter);
// w must match the stored d_out x d_in shape; frozen weights live with the
// caller, not in the file.
Adapter read_adapter(std::istream& in, Matrix w);

// File helpers. Writes go to a temp file in the target directory first and
// are renamed into place. Failures throw IoError; malformed content throws
// FormatError.
void save_matrix(const std::string& path, const Matrix& m);
Matrix load_matrix(const std::string& path);
void save_basis_set(const std::string& path, const BasisSet& basis);
BasisSet load_basis_set(const std::string& path);
void save_adapter(const std::string& path, const Adapter& adapter);
Adapter load_adapter(const std::string& path, Matrix w);

void write_file_atomic(const std::string& path, const std::string& bytes);

}  // namespace idlora
