#pragma once

#include <stdexcept>

namespace speed {

/// File missing, unreadable or unwritable.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace speed
