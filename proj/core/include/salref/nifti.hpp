#pragma once

#include <filesystem>

#include "salref/volume.hpp"

namespace salref {

// Uncompressed single-file NIfTI-1, little-endian only: 348-byte header,
// magic "n+1\0", vox_offset >= 352. Supported datatypes: uint8, int16,
// int32, float32, float64. Big-endian and .nii.gz inputs are rejected.

Volume3D read_volume(const std::filesystem::path& path);
// Requires voxel values in {0, 1}.
BinaryMask read_mask(const std::filesystem::path& path);
// Requires non-negative integer voxel values.
LabelMap read_labels(const std::filesystem::path& path);

// Volumes are written as float32, masks as uint8, label maps as int32.
void write_nifti(const Volume3D& vol, const std::filesystem::path& path);
void write_nifti(const BinaryMask& mask, const std::filesystem::path& path);
void write_nifti(const LabelMap& labels, const std::filesystem::path& path);

}  // namespace salref
