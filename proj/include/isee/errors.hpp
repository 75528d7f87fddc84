#pragma once

#include <stdexcept>
#include <string>

namespace isee {

// A caller broke an operation's precondition.
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

// Bad or unknown configuration key/value.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Inconsistent environment specification.
struct SpecError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Act not present in the relevant vocabulary.
struct VocabularyError : std::out_of_range {
  using std::out_of_range::out_of_range;
};

struct NumericError : std::domain_error {
  using std::domain_error::domain_error;
};

// Malformed dump or checkpoint.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace isee
