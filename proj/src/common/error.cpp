#include "styleforge/error.hpp"

namespace styleforge {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kNoContent: return "no content between markers";
    case ErrorKind::kMissingAuthor: return "author without documents";
    case ErrorKind::kTagHygiene: return "tag in sentence text";
    case ErrorKind::kTagNotSingleToken: return "tag not single-token";
    case ErrorKind::kContextOverflow: return "context overflow";
    case ErrorKind::kDivergence: return "divergence";
    case ErrorKind::kNumericalFailure: return "numerical failure";
    case ErrorKind::kMalformedTree: return "malformed tree";
    case ErrorKind::kEmptySentence: return "empty sentence";
    case ErrorKind::kEmptyQuerySet: return "empty query set";
    case ErrorKind::kInvalidArgument: return "invalid argument";
    case ErrorKind::kIo: return "io error";
    case ErrorKind::kConfig: return "config error";
  }
  return "unknown";
}

}  // namespace styleforge
