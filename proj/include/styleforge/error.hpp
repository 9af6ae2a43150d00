#pragma once

#include <stdexcept>
#include <string>

namespace styleforge {

enum class ErrorKind {
  kNoContent,          // clean_text found nothing between boundary markers
  kMissingAuthor,      // build_corpus: an author has no documents
  kTagHygiene,         // a scheme tag leaked into sentence text
  kTagNotSingleToken,  // tokenizer extension collision
  kContextOverflow,    // sequence longer than the model context
  kDivergence,         // non-finite loss during training
  kNumericalFailure,   // non-finite gradient during attribution
  kMalformedTree,      // bracketed parse could not be read
  kEmptySentence,      // classifier input was empty
  kEmptyQuerySet,      // no query tokens after a tag span
  kInvalidArgument,
  kIo,
  kConfig,
};

const char* to_string(ErrorKind kind);

// Every recoverable failure in the library is thrown as an Error. The kind
// lets the CLI map failures onto exit codes and lets tests assert on the
// reason without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace styleforge
