#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace silasso {

enum class ErrorKind {
    InvalidArgument,
    SingularMatrix,
    DegenerateSupport,
    NoConvergence,
    ZeroLambda,
    StalledPath,
    EmptyRegion,
    RankDeficient,
    BracketFailure,
    SelectionMismatch,
    TooManySigns,
    NonConvergentQuadrature,
};

constexpr std::string_view error_name(ErrorKind kind)
{
    switch (kind) {
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::SingularMatrix: return "SingularMatrix";
    case ErrorKind::DegenerateSupport: return "DegenerateSupport";
    case ErrorKind::NoConvergence: return "NoConvergence";
    case ErrorKind::ZeroLambda: return "ZeroLambda";
    case ErrorKind::StalledPath: return "StalledPath";
    case ErrorKind::EmptyRegion: return "EmptyRegion";
    case ErrorKind::RankDeficient: return "RankDeficient";
    case ErrorKind::BracketFailure: return "BracketFailure";
    case ErrorKind::SelectionMismatch: return "SelectionMismatch";
    case ErrorKind::TooManySigns: return "TooManySigns";
    case ErrorKind::NonConvergentQuadrature: return "NonConvergentQuadrature";
    }
    return "Unknown";
}

/// Numerical or contract failure raised by any silasso routine. The kind is
/// what callers dispatch on; the message carries the detail.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(error_name(kind)) + ": " + what), kind_(kind)
    {
    }

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

} // namespace silasso
