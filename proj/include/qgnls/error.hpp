#pragma once

#include <stdexcept>
#include <string>

namespace qgnls {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class GraphError : public Error {
 public:
  enum class Kind {
    parse,
    negative_length,
    unknown_vertex,
    duplicate_id,
    bad_halfline,
    disconnected,
    empty_core,
    no_halfline,
    kappa_on_halfline,
  };

  GraphError(Kind kind, std::string element, const std::string& what)
      : Error(what + (element.empty() ? "" : " ('" + element + "')")),
        kind_(kind),
        element_(std::move(element)) {}

  Kind kind() const noexcept { return kind_; }
  const std::string& element() const noexcept { return element_; }

 private:
  Kind kind_;
  std::string element_;
};

class MeshError : public Error {
 public:
  using Error::Error;
};

class OdeError : public Error {
 public:
  using Error::Error;
};

class SolverError : public Error {
 public:
  enum class Kind {
    degenerate,
    no_convergence,
    supercritical_escape,
    continuation_breakdown,
    no_new_solution,
    bad_input,
  };

  SolverError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

class AnalysisError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace qgnls
