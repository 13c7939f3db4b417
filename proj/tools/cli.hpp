// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace shiftadd::cli {

/// Runs one `shiftadd` invocation. `args` excludes the program name.
/// Returns 0 on success, 2 on usage errors, 1 on any other failure. The
/// JSON result document goes to `out`, structured errors to `err`.
int run_command(const std::vector<std::string> &args, std::ostream &out, std::ostream &err);

}  // namespace shiftadd::cli
