#pragma once

#include <stdexcept>
#include <string>

namespace poserank {

// Failure categories carried by every exception the library throws.  The CLI
// maps them onto process exit codes; tests match on them to pin error
// behavior without parsing message text.
enum class ErrKind {
  invalid_pose,        // pose invariant violated (non-unit/non-perpendicular normals, s <= 0)
  degenerate_normals,  // normals too short or parallel to span a rotation
  parse,               // malformed input file / record
  version,             // unknown format version tag
  shape,               // graph node dimension mismatch
  state,               // API called out of order (e.g. gradients before evaluate)
  io,                  // file open/read/write failure
  config,              // unknown key, bad value, or bad override
  numeric,             // NaN/Inf detected, or a numeric self-check failed
};

inline const char* to_string(ErrKind k) {
  switch (k) {
    case ErrKind::invalid_pose: return "invalid_pose";
    case ErrKind::degenerate_normals: return "degenerate_normals";
    case ErrKind::parse: return "parse";
    case ErrKind::version: return "version";
    case ErrKind::shape: return "shape";
    case ErrKind::state: return "state";
    case ErrKind::io: return "io";
    case ErrKind::config: return "config";
    case ErrKind::numeric: return "numeric";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrKind kind() const noexcept { return kind_; }

 private:
  ErrKind kind_;
};

}  // namespace poserank
