#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace phasefold {

enum class ErrorCode : std::uint8_t {
    InvalidArgument,
    Io,
    MalformedHeader,
    NonNumericCell,
    NonFiniteValue,
    EmptyDataset,
    RaggedRow,
    BadMagic,
    UnsupportedVersion,
    Truncated,
    OutOfMemoryBudget,
    TrainingDiverged,
    IndexOutOfRange,
    PartitionFailed,
};

constexpr const char* to_string(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::InvalidArgument: return "InvalidArgument";
        case ErrorCode::Io: return "Io";
        case ErrorCode::MalformedHeader: return "MalformedHeader";
        case ErrorCode::NonNumericCell: return "NonNumericCell";
        case ErrorCode::NonFiniteValue: return "NonFiniteValue";
        case ErrorCode::EmptyDataset: return "EmptyDataset";
        case ErrorCode::RaggedRow: return "RaggedRow";
        case ErrorCode::BadMagic: return "BadMagic";
        case ErrorCode::UnsupportedVersion: return "UnsupportedVersion";
        case ErrorCode::Truncated: return "Truncated";
        case ErrorCode::OutOfMemoryBudget: return "OutOfMemoryBudget";
        case ErrorCode::TrainingDiverged: return "TrainingDiverged";
        case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
        case ErrorCode::PartitionFailed: return "PartitionFailed";
    }
    return "Unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

/// Raised by training when the loss becomes non-finite.
class TrainingDiverged : public Error {
public:
    TrainingDiverged(std::size_t step, const std::string& what)
        : Error(ErrorCode::TrainingDiverged, what + " at step " + std::to_string(step)), step_(step) {}

    std::size_t step() const noexcept { return step_; }

private:
    std::size_t step_;
};

/// Raised by the parallel runtime; carries the lowest failing partition id.
class PartitionFailed : public Error {
public:
    PartitionFailed(std::size_t partition, const std::string& what)
        : Error(ErrorCode::PartitionFailed, "partition " + std::to_string(partition) + ": " + what),
          partition_(partition) {}

    std::size_t partition() const noexcept { return partition_; }

private:
    std::size_t partition_;
};

/// CLI exit code for an error class: 3 I/O, 4 numeric, 5 memory budget, 2 usage.
constexpr int exit_code(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::Io:
        case ErrorCode::MalformedHeader:
        case ErrorCode::NonNumericCell:
        case ErrorCode::NonFiniteValue:
        case ErrorCode::EmptyDataset:
        case ErrorCode::RaggedRow:
        case ErrorCode::BadMagic:
        case ErrorCode::UnsupportedVersion:
        case ErrorCode::Truncated:
        case ErrorCode::IndexOutOfRange:
            return 3;
        case ErrorCode::TrainingDiverged:
        case ErrorCode::PartitionFailed:
            return 4;
        case ErrorCode::OutOfMemoryBudget:
            return 5;
        case ErrorCode::InvalidArgument:
            return 2;
    }
    return 1;
}

}  // namespace phasefold
