#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace lvinv {

enum class ErrorKind {
    DenominatorZero,
    InvalidParam,
    TooManyModes,
    GridMismatch,
    NonFiniteState,
    NegativeData,
    IllConditionedStencil,
    MissingLowerOrder,
    SignLoss,
    DegenerateData,
    RankDeficient,
    InconsistentTable,
    UnsupportedCoupling,
    ConfigError,
    IoError,
};

std::string_view to_string(ErrorKind kind);

/// Every failure raised by the library. The kind is the machine-readable
/// classification; `stage` is filled in by orchestration code so a failure can
/// be traced to the pipeline step that produced it.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

    const std::string& stage() const noexcept { return stage_; }
    void set_stage(std::string stage) { stage_ = std::move(stage); }

    /// Coefficient labels (e.g. "F11") that a RankDeficient failure could not
    /// identify. Empty for every other kind.
    const std::vector<std::string>& unidentifiable() const noexcept { return unidentifiable_; }
    void set_unidentifiable(std::vector<std::string> names) { unidentifiable_ = std::move(names); }

private:
    ErrorKind kind_;
    std::string stage_;
    std::vector<std::string> unidentifiable_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

}  // namespace lvinv
