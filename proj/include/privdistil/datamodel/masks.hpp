#pragma once

#include <array>
#include <string>

#include "privdistil/common/image.hpp"
#include "privdistil/datamodel/procgen.hpp"

namespace privdistil::datamodel {

/// binary: 1-channel {0,1} nucleus mask. typed: RGB, one palette colour per nucleus type.
/// masked_image: the primary image with every non-nucleus pixel set to 0.
enum class MaskMode { binary, typed, masked_image };

std::string to_string(MaskMode mode);
MaskMode parse_mask_mode(const std::string& s);  // throws ConfigError on unknown names

/// Fixed, maximally separated RGB corners used for typed masks.
inline constexpr std::array<Rgb, kNucleusTypeCount> kTypePalette{{
    {1.0, 0.0, 0.0},
    {0.0, 1.0, 0.0},
    {0.0, 0.0, 1.0},
    {1.0, 1.0, 0.0},
    {0.0, 1.0, 1.0},
}};

/// Privileged view synthesised from ground truth. `primary` is only read for masked_image.
/// Foreground pixels of masked_image are floored at 1/255 so that the mask can always be
/// recovered as "any channel > 0".
ImageTensor oracle_mask(const GroundTruth& truth, const ImageTensor& primary, MaskMode mode);

/// Output channel count of a mask mode.
int64_t mask_channels(MaskMode mode);

}  // namespace privdistil::datamodel
