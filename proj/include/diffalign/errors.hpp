#pragma once

#include <stdexcept>
#include <string>

namespace diffalign {

struct DegenerateProjection : std::runtime_error {
    explicit DegenerateProjection(const std::string& msg) : std::runtime_error(msg) {}
};

struct SingularHomography : std::runtime_error {
    explicit SingularHomography(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeMismatch : std::runtime_error {
    explicit ShapeMismatch(const std::string& msg) : std::runtime_error(msg) {}
};

struct DegenerateRegion : std::runtime_error {
    explicit DegenerateRegion(const std::string& msg) : std::runtime_error(msg) {}
};

struct InvalidParameter : std::runtime_error {
    explicit InvalidParameter(const std::string& msg) : std::runtime_error(msg) {}
};

struct InsufficientOverlap : std::runtime_error {
    explicit InsufficientOverlap(const std::string& msg) : std::runtime_error(msg) {}
};

struct DivergedTraining : std::runtime_error {
    explicit DivergedTraining(const std::string& msg) : std::runtime_error(msg) {}
};

struct NoRecordedForward : std::runtime_error {
    explicit NoRecordedForward(const std::string& msg) : std::runtime_error(msg) {}
};

struct GradCheckFailure : std::runtime_error {
    explicit GradCheckFailure(const std::string& msg) : std::runtime_error(msg) {}
};

struct EmptyOverlap : std::runtime_error {
    explicit EmptyOverlap(const std::string& msg) : std::runtime_error(msg) {}
};

struct EmptyInput : std::runtime_error {
    explicit EmptyInput(const std::string& msg) : std::runtime_error(msg) {}
};

struct MismatchedPairs : std::runtime_error {
    explicit MismatchedPairs(const std::string& msg) : std::runtime_error(msg) {}
};

struct IOError : std::runtime_error {
    explicit IOError(const std::string& msg) : std::runtime_error(msg) {}
};

struct InvalidConfig : std::runtime_error {
    explicit InvalidConfig(const std::string& msg) : std::runtime_error(msg) {}
};

struct MissingCheckpoint : std::runtime_error {
    explicit MissingCheckpoint(const std::string& msg) : std::runtime_error(msg) {}
};

struct MissingGroundTruth : std::runtime_error {
    explicit MissingGroundTruth(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace diffalign
