#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cfdml {

// Error categories raised across the toolkit. Every failure surfaces as a
// cfdml::Error carrying one of these codes so callers (and the CLI) can map
// them to exit statuses without string matching.
enum class Errc {
  schema,
  duplicate,
  parse,
  lookup,
  domain,
  shape,
  numeric,
  convergence,
  degenerate,
  size,
  span,
  no_match,
  no_variation,
  training,
  render,
  usage,
  io,
};

inline std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::schema: return "schema";
    case Errc::duplicate: return "duplicate";
    case Errc::parse: return "parse";
    case Errc::lookup: return "lookup";
    case Errc::domain: return "domain";
    case Errc::shape: return "shape";
    case Errc::numeric: return "numeric";
    case Errc::convergence: return "convergence";
    case Errc::degenerate: return "degenerate";
    case Errc::size: return "size";
    case Errc::span: return "span";
    case Errc::no_match: return "no_match";
    case Errc::no_variation: return "no_variation";
    case Errc::training: return "training";
    case Errc::render: return "render";
    case Errc::usage: return "usage";
    case Errc::io: return "io";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + " error: " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, Errc code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace cfdml
