#pragma once

#include <stdexcept>
#include <string>

namespace geta {

/// Error categories; the CLI maps these onto its exit codes.
enum class ErrorKind {
    Config,      // invalid configuration or input document
    Graph,       // trace-graph schema/structure violation
    Shape,       // tensor shape mismatch
    State,       // operation called in the wrong order
    Numeric,     // non-finite values or diverging iteration
    Constraint,  // a hard sparsity/bit-width constraint was not met
};

class Error : public std::runtime_error {
  public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const { return kind_; }

  private:
    ErrorKind kind_;
};

inline const char* to_string(ErrorKind k) {
    switch (k) {
        case ErrorKind::Config: return "config";
        case ErrorKind::Graph: return "graph";
        case ErrorKind::Shape: return "shape";
        case ErrorKind::State: return "state";
        case ErrorKind::Numeric: return "numeric";
        case ErrorKind::Constraint: return "constraint";
    }
    return "unknown";
}

}  // namespace geta
