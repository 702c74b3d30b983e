#pragma once

#include <stdexcept>
#include <string>

namespace carm {

// Every recoverable failure in the framework carries one of these codes.
// The HTTP layer maps them onto status classes; tests match on them.
enum class Err {
    UnknownScope,
    NonPositiveQuota,
    EmptyTarget,
    UnknownField,
    UnknownTarget,
    MalformedScenario,
    UnknownDeployment,
    UnknownNode,
    InsufficientCapacity,
    ScaleBelowOne,
    UnknownMetric,
    IoFailure,
    NoBaseline,
    MissingFeature,
    EmptyDataset,
    EmptyWindow,
    CorruptModel,
    UnknownAgent,
    UnknownExperiment,
    ConnectionFailure,
    IllegalTransition,
};

const char* to_string(Err code);

class Error : public std::runtime_error {
public:
    Error(Err code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

    Err code() const { return code_; }

private:
    Err code_;
};

} // namespace carm
