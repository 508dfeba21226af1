#ifndef TUBELOC_ERRORS_HPP
#define TUBELOC_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace tubeloc {

// Base class for everything this library throws on purpose.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed input data: bad magic bytes, truncated streams, unparsable text.
class ParseError : public Error {
public:
    using Error::Error;
};

// Input is well-formed but a variant we refuse (e.g. color P6/PF rasters).
class UnsupportedError : public Error {
public:
    using Error::Error;
};

// A processing stage failed on valid inputs (no contour found, missing
// disparity, ...). Carries the stage name so chained pipelines can report
// where they broke.
class PipelineError : public Error {
public:
    PipelineError(std::string stage, const std::string& message)
        : Error("[" + stage + "] " + message), stage_(std::move(stage)) {}

    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

} // namespace tubeloc

#endif
