#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace bytenmt::cli {

/// Entry point for the command-line surface. Streams are injected so the
/// commands can be driven in-process by tests. Returns the process exit
/// code (0 iff no errors).
int run(const std::vector<std::string>& args, std::istream& in,
        std::ostream& out, std::ostream& err);

}  // namespace bytenmt::cli
