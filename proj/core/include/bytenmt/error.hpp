#pragma once

#include <stdexcept>
#include <string>

namespace bytenmt {

/// Error type thrown across the toolkit. Messages name the failing
/// operation and the offending value (byte offset, shape, config key, ...).
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace bytenmt
