#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace robust_ai {

enum class ErrorCode {
    // data
    MissingColumn,
    ParseError,
    EmptyDataset,
    BurnInTooLarge,
    EmptyBurnIn,
    BurnInTooSmall,
    DimensionMismatch,
    MissingBurnInLabels,
    MissingLabelAtSampledUnit,
    // configuration / arguments
    InvalidArgument,
    ConfigError,
    RhoOutOfRange,
    KTooLarge,
    InfeasibleBudget,
    AllZeroWeights,
    // numerics
    SingularHessian,
    SingularSystem,
    NoConvergence,
    NonpositiveVariance,
    // environment
    IoError,
};

/// Coarse grouping used by the CLI to pick an exit code.
enum class ErrorCategory { Config, Data, Numeric, MissingLabels, Io };

constexpr std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
    case ErrorCode::MissingColumn: return "MissingColumn";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::BurnInTooLarge: return "BurnInTooLarge";
    case ErrorCode::EmptyBurnIn: return "EmptyBurnIn";
    case ErrorCode::BurnInTooSmall: return "BurnInTooSmall";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::MissingBurnInLabels: return "MissingBurnInLabels";
    case ErrorCode::MissingLabelAtSampledUnit: return "MissingLabelAtSampledUnit";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::RhoOutOfRange: return "RhoOutOfRange";
    case ErrorCode::KTooLarge: return "KTooLarge";
    case ErrorCode::InfeasibleBudget: return "InfeasibleBudget";
    case ErrorCode::AllZeroWeights: return "AllZeroWeights";
    case ErrorCode::SingularHessian: return "SingularHessian";
    case ErrorCode::SingularSystem: return "SingularSystem";
    case ErrorCode::NoConvergence: return "NoConvergence";
    case ErrorCode::NonpositiveVariance: return "NonpositiveVariance";
    case ErrorCode::IoError: return "IoError";
    }
    return "Unknown";
}

constexpr ErrorCategory category_of(ErrorCode code) noexcept {
    switch (code) {
    case ErrorCode::MissingColumn:
    case ErrorCode::ParseError:
    case ErrorCode::EmptyDataset:
    case ErrorCode::BurnInTooLarge:
    case ErrorCode::EmptyBurnIn:
    case ErrorCode::BurnInTooSmall:
    case ErrorCode::DimensionMismatch:
    case ErrorCode::MissingBurnInLabels:
        return ErrorCategory::Data;
    case ErrorCode::MissingLabelAtSampledUnit:
        return ErrorCategory::MissingLabels;
    case ErrorCode::SingularHessian:
    case ErrorCode::SingularSystem:
    case ErrorCode::NoConvergence:
    case ErrorCode::NonpositiveVariance:
        return ErrorCategory::Numeric;
    case ErrorCode::IoError:
        return ErrorCategory::Io;
    default:
        return ErrorCategory::Config;
    }
}

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }
    ErrorCategory category() const noexcept { return category_of(code_); }

private:
    ErrorCode code_;
};

} // namespace robust_ai
