#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mtm {

// Every library failure derives from Error so callers can catch one type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define MTM_DEFINE_ERROR(Name)          \
  class Name : public Error {           \
   public:                              \
    using Error::Error;                 \
  };

MTM_DEFINE_ERROR(EmptyVocabulary)
MTM_DEFINE_ERROR(DegenerateDocument)
MTM_DEFINE_ERROR(ZeroMass)
MTM_DEFINE_ERROR(DomainError)
MTM_DEFINE_ERROR(RankDeficient)
MTM_DEFINE_ERROR(ShapeMismatch)
MTM_DEFINE_ERROR(EnvOutOfRange)
MTM_DEFINE_ERROR(VariantMismatch)
MTM_DEFINE_ERROR(VocabMismatch)
MTM_DEFINE_ERROR(NoGammaVariant)
MTM_DEFINE_ERROR(IndexOutOfRange)
MTM_DEFINE_ERROR(RequiresTwoEnvironments)
MTM_DEFINE_ERROR(NoOverlap)
MTM_DEFINE_ERROR(InsufficientDocs)
MTM_DEFINE_ERROR(ConfigError)
MTM_DEFINE_ERROR(IoError)

#undef MTM_DEFINE_ERROR

class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class NonFiniteLoss : public Error {
 public:
  explicit NonFiniteLoss(std::size_t step)
      : Error("non-finite ELBO at training step " + std::to_string(step)), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

class ChecksumError : public Error {
 public:
  ChecksumError(std::size_t offset, const std::string& what)
      : Error(what + " (byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace mtm
