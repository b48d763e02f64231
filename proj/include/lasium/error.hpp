#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace lasium {

// Every library failure derives from Error so callers can map the category to
// an exit code without knowing the concrete type.
class Error : public std::runtime_error {
 public:
  enum class Category { config, numerics, io };

  Error(Category category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  Category category() const noexcept { return category_; }

 private:
  Category category_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(Category::config, what) {}
};

class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& what) : Error(Category::config, what) {}
};

class UnsupportedOperation : public Error {
 public:
  explicit UnsupportedOperation(const std::string& what) : Error(Category::config, what) {}
};

class NumericsError : public Error {
 public:
  explicit NumericsError(const std::string& what) : Error(Category::numerics, what) {}
};

class TrainingDiverged : public Error {
 public:
  explicit TrainingDiverged(const std::string& what) : Error(Category::numerics, what) {}
};

class AnchorRejectionExhausted : public Error {
 public:
  explicit AnchorRejectionExhausted(std::size_t attempts)
      : Error(Category::config,
              "anchor rejection sampling exhausted after " + std::to_string(attempts) +
                  " attempts"),
        attempts_(attempts) {}

  std::size_t attempts() const noexcept { return attempts_; }

 private:
  std::size_t attempts_;
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(Category::io, what) {}
};

class BadMagic : public IoError {
 public:
  explicit BadMagic(const std::string& what) : IoError(what) {}
};

class TruncatedFile : public IoError {
 public:
  explicit TruncatedFile(const std::string& what) : IoError(what) {}
};

class BadShape : public IoError {
 public:
  explicit BadShape(const std::string& what) : IoError(what) {}
};

}  // namespace lasium
