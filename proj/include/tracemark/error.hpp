#pragma once

#include <stdexcept>
#include <string>

namespace tracemark {

enum class ErrorKind {
    MissingFile,
    MalformedRecord,
    MissingImage,
    DimensionMismatch,
    EmptyMatrix,
    EmptyManifest,
    InsufficientCandidates,
    ExhaustedAttempts,
    PoolTooSmall,
    InvalidBounds,
    InvalidArgument,
    EmptyTokenSet,
    MTooLarge,
    DuplicateUser,
    CorruptLedger,
    LengthMismatch,
    SingleClassTrainingSet,
    NonFiniteLoss,
    NonDistinctLedger,
    CodecFailure,
    OutputExists,
    Io,
};

inline const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::MissingFile: return "MissingFile";
        case ErrorKind::MalformedRecord: return "MalformedRecord";
        case ErrorKind::MissingImage: return "MissingImage";
        case ErrorKind::DimensionMismatch: return "DimensionMismatch";
        case ErrorKind::EmptyMatrix: return "EmptyMatrix";
        case ErrorKind::EmptyManifest: return "EmptyManifest";
        case ErrorKind::InsufficientCandidates: return "InsufficientCandidates";
        case ErrorKind::ExhaustedAttempts: return "ExhaustedAttempts";
        case ErrorKind::PoolTooSmall: return "PoolTooSmall";
        case ErrorKind::InvalidBounds: return "InvalidBounds";
        case ErrorKind::InvalidArgument: return "InvalidArgument";
        case ErrorKind::EmptyTokenSet: return "EmptyTokenSet";
        case ErrorKind::MTooLarge: return "MTooLarge";
        case ErrorKind::DuplicateUser: return "DuplicateUser";
        case ErrorKind::CorruptLedger: return "CorruptLedger";
        case ErrorKind::LengthMismatch: return "LengthMismatch";
        case ErrorKind::SingleClassTrainingSet: return "SingleClassTrainingSet";
        case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
        case ErrorKind::NonDistinctLedger: return "NonDistinctLedger";
        case ErrorKind::CodecFailure: return "CodecFailure";
        case ErrorKind::OutputExists: return "OutputExists";
        case ErrorKind::Io: return "Io";
    }
    return "Unknown";
}

/// Every failure raised by the library carries a machine-readable kind; the
/// message is prefixed with the kind name so it reads well when printed.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& detail)
        : std::runtime_error(std::string(to_string(kind)) + (detail.empty() ? "" : ": " + detail)),
          kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

/// Raised by load_manifest; carries the 1-based line number of the bad record.
class MalformedRecordError : public Error {
public:
    MalformedRecordError(std::size_t line, const std::string& detail)
        : Error(ErrorKind::MalformedRecord, "line " + std::to_string(line) + ": " + detail),
          line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Raised when a pool cannot hold the requested number of distinct sets.
class PoolTooSmallError : public Error {
public:
    PoolTooSmallError(double capacity, std::size_t requested)
        : Error(ErrorKind::PoolTooSmall,
                "capacity " + std::to_string(static_cast<unsigned long long>(capacity)) +
                    " < requested " + std::to_string(requested)),
          capacity_(capacity), requested_(requested) {}

    double capacity() const noexcept { return capacity_; }
    std::size_t requested() const noexcept { return requested_; }

private:
    double capacity_;
    std::size_t requested_;
};

class InsufficientCandidatesError : public Error {
public:
    InsufficientCandidatesError(std::size_t found, std::size_t wanted)
        : Error(ErrorKind::InsufficientCandidates,
                "found " + std::to_string(found) + ", need " + std::to_string(wanted)),
          found_(found), wanted_(wanted) {}

    std::size_t found() const noexcept { return found_; }
    std::size_t wanted() const noexcept { return wanted_; }

private:
    std::size_t found_;
    std::size_t wanted_;
};

} // namespace tracemark
