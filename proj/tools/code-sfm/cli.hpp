#pragma once

namespace codesfm {

/// Entry point of the code-sfm tool. Returns 0 on success, 1 on usage errors, 2 on data errors
/// and 3 on solver failures.
int cli_main(int argc, const char* const* argv);

}  // namespace codesfm
