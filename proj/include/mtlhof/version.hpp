#pragma once

namespace mtlhof {

inline constexpr const char* kVersionString = "0.1.0";

}  // namespace mtlhof
