#pragma once

namespace matadapt {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace matadapt
