// SPDX-License-Identifier: Apache-2.0
#pragma once

namespace rvmb {

inline constexpr const char* version_string = "0.1.0";

} // namespace rvmb
