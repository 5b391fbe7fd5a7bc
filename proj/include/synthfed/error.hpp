#pragma once

#include <stdexcept>
#include <string>

namespace synthfed {

/// Invalid or inconsistent data: bad manifests, shape mismatches, tampered
/// bundles. The CLI maps this to exit code 2.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad invocation or configuration. The CLI maps this to exit code 1.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace synthfed
