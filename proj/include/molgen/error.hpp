// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace molgen {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define MOLGEN_DEFINE_ERROR(Name)           \
  class Name : public ::molgen::Error {     \
   public:                                  \
    using ::molgen::Error::Error;           \
  }

}  // namespace molgen
