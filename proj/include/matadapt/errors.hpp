#pragma once
// Exception types shared across the library. Each names one failure mode a
// caller can reasonably distinguish; all derive from matadapt::Error.

#include <stdexcept>

namespace matadapt {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class FormatError : public Error { public: using Error::Error; };
class IoError : public Error { public: using Error::Error; };
class DimMismatch : public Error { public: using Error::Error; };
class DuplicateId : public Error { public: using Error::Error; };
class DuplicatePair : public Error { public: using Error::Error; };
class DuplicateDoc : public Error { public: using Error::Error; };
class NegativeGrade : public Error { public: using Error::Error; };
class TooFewQueries : public Error { public: using Error::Error; };
class PrefixOutOfRange : public Error { public: using Error::Error; };
class CorpusTooSmall : public Error { public: using Error::Error; };
class BatchTooSmall : public Error { public: using Error::Error; };
class InvalidNeighborIndex : public Error { public: using Error::Error; };
class NoPositivePairs : public Error { public: using Error::Error; };
class UnknownId : public Error { public: using Error::Error; };
class UnknownMethod : public Error { public: using Error::Error; };
class RemoteError : public Error { public: using Error::Error; };
class EmptyInput : public Error { public: using Error::Error; };

}  // namespace matadapt
