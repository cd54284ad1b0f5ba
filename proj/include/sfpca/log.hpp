#pragma once

#include <string_view>

namespace sfpca {

// Warnings go to stderr unless silenced; tests and the acceptance suite
// silence them to keep output readable.
void warn(std::string_view message);
void set_quiet(bool quiet);
bool quiet();

} // namespace sfpca
