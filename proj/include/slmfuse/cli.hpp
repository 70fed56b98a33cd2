#pragma once

#include <iosfwd>
#include <span>
#include <string>

namespace slmfuse {

/// Runs one subcommand (gen, train, eval, gradcheck, report). `args`
/// excludes the program name. Returns 0 on success, 1 for validation and
/// configuration errors, 2 for numerical failures.
int dispatch(std::span<const std::string> args, std::ostream& out, std::ostream& err);
int dispatch(int argc, const char* const* argv);

}  // namespace slmfuse
