#pragma once

namespace dhl {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace dhl
