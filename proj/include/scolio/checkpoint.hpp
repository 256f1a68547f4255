#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>

#include "scolio/layers.hpp"

namespace scolio {

/// Binary layout: "SPODR1\n", u32 tensor count, then per tensor in name
/// order: u16 name length, name bytes, u8 dtype (1 = f32, 2 = f64), u8 rank,
/// rank x u32 dims, little-endian values.
inline constexpr char kCheckpointMagic[] = "SPODR1\n";

class CheckpointError : public std::runtime_error {
 public:
  enum class Kind { io, bad_magic, truncated, duplicate_name, bad_dtype, mismatch };
  CheckpointError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

template <typename Scalar>
void save_checkpoint(const ParamList<Scalar>& params, const std::filesystem::path& path);

/// Values are converted to Scalar if the file stores the other precision.
template <typename Scalar>
std::map<std::string, Tensor<Scalar>> load_checkpoint(const std::filesystem::path& path);

/// Copy a loaded checkpoint into `params` in place. Every name must be present
/// with a matching shape, and the file may not hold extra tensors.
template <typename Scalar>
void assign_checkpoint(const std::map<std::string, Tensor<Scalar>>& loaded,
                       const ParamList<Scalar>& params);

}  // namespace scolio
