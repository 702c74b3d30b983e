#include "carm/error.hpp"

namespace carm {

const char* to_string(Err code) {
    switch (code) {
        case Err::UnknownScope: return "UnknownScope";
        case Err::NonPositiveQuota: return "NonPositiveQuota";
        case Err::EmptyTarget: return "EmptyTarget";
        case Err::UnknownField: return "UnknownField";
        case Err::UnknownTarget: return "UnknownTarget";
        case Err::MalformedScenario: return "MalformedScenario";
        case Err::UnknownDeployment: return "UnknownDeployment";
        case Err::UnknownNode: return "UnknownNode";
        case Err::InsufficientCapacity: return "InsufficientCapacity";
        case Err::ScaleBelowOne: return "ScaleBelowOne";
        case Err::UnknownMetric: return "UnknownMetric";
        case Err::IoFailure: return "IoFailure";
        case Err::NoBaseline: return "NoBaseline";
        case Err::MissingFeature: return "MissingFeature";
        case Err::EmptyDataset: return "EmptyDataset";
        case Err::EmptyWindow: return "EmptyWindow";
        case Err::CorruptModel: return "CorruptModel";
        case Err::UnknownAgent: return "UnknownAgent";
        case Err::UnknownExperiment: return "UnknownExperiment";
        case Err::ConnectionFailure: return "ConnectionFailure";
        case Err::IllegalTransition: return "IllegalTransition";
    }
    return "UnknownError";
}

} // namespace carm
