#pragma once

namespace floweval {

inline constexpr const char* kVersion = "1.0.0";
inline constexpr int kIndexFormatVersion = 1;
inline constexpr const char* kIndexMagic = "floweval-index";

}  // namespace floweval
