#pragma once

#include <optional>
#include <vector>

#include "dflex/error.hpp"
#include "dflex/types.hpp"

namespace dflex::test {

/// Runs f and returns the code of the dflex::Error it throws, if any.
template <class F>
std::optional<ErrorCode> code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return std::nullopt;
}

inline ReferenceSignal flat_reference(const Scenario& sc, double value) {
  return ReferenceSignal{std::vector<double>(sc.num_steps(), value)};
}

}  // namespace dflex::test
