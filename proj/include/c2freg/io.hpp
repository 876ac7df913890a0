#pragma once

// On-disk formats.
//
// Volumes: a JSON sidecar (dims, spacing, dtype, byte order, kind, payload
// file name) next to a raw little-endian payload. Affines: a JSON document
// with the 16 row-major entries and optional decoupled parameters.
// Checkpoints: a magic line, a one-line JSON header and raw little-endian
// doubles.

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>

#include "c2freg/affine.hpp"
#include "c2freg/optim.hpp"
#include "c2freg/volume.hpp"

namespace c2freg {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class PayloadLengthError : public FormatError {
 public:
  using FormatError::FormatError;
};
class UnknownDTypeError : public FormatError {
 public:
  using FormatError::FormatError;
};
class MalformedSidecarError : public FormatError {
 public:
  using FormatError::FormatError;
};
class KindMismatchError : public FormatError {
 public:
  using FormatError::FormatError;
};

enum class DType { F32, F64, U16 };
enum class VolumeKind { Image, Labels };

std::string dtype_name(DType t);
/// Throws UnknownDTypeError.
DType parse_dtype(const std::string& s);
std::size_t dtype_size(DType t);

struct VolumeHeader {
  Dims dims;
  Spacing spacing{1.0, 1.0, 1.0};
  DType dtype = DType::F64;
  VolumeKind kind = VolumeKind::Image;
  std::string payload;  // file name relative to the sidecar
  std::size_t num_structures = 0;  // labels only
};

/// `path` names the sidecar (conventionally *.json); the payload is written
/// beside it with the extension replaced by .raw.
void write_volume(const std::filesystem::path& path, const Volume3D& v, DType dtype = DType::F64);
void write_labels(const std::filesystem::path& path, const LabelVolume& lv);

VolumeHeader read_volume_header(const std::filesystem::path& path);
/// Throws KindMismatchError if the sidecar describes labels.
Volume3D read_volume(const std::filesystem::path& path);
/// Throws KindMismatchError if the sidecar describes an image.
LabelVolume read_labels(const std::filesystem::path& path);

struct AffineFile {
  AffineMatrix matrix;
  std::optional<GeometricParams> params;
  std::optional<Vec3> pivot;  // centre the params are composed about
  std::string convention = "normalized-align-corners; moving(A*x) for fixed x";
  std::string note;
};

void write_affine(const std::filesystem::path& path, const AffineFile& a);
/// Validates the last row and, when params are present, that they
/// re-compose to the matrix within 1e-9.
AffineFile read_affine(const std::filesystem::path& path);

void save_checkpoint(const std::filesystem::path& path, const TrainingState& state);
TrainingState load_checkpoint(const std::filesystem::path& path);

}  // namespace c2freg
