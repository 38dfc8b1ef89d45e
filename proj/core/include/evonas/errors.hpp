#pragma once

#include <stdexcept>
#include <string>

namespace evonas {

// Base class for all engine errors. Subcommands map these to exit code 2
// (runtime) except where noted.
struct EvonasError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct InvalidGenotype : EvonasError { using EvonasError::EvonasError; };
struct NotInSearchSpace : EvonasError { using EvonasError::EvonasError; };
struct SpaceMismatch : EvonasError { using EvonasError::EvonasError; };

struct InvalidObjective : EvonasError { using EvonasError::EvonasError; };
struct InsufficientPopulation : EvonasError { using EvonasError::EvonasError; };

struct ConfigTooLarge : EvonasError { using EvonasError::EvonasError; };
struct ShapeError : EvonasError { using EvonasError::EvonasError; };
struct MissingShape : EvonasError { using EvonasError::EvonasError; };
struct DivergenceError : EvonasError { using EvonasError::EvonasError; };
struct InvalidWeights : EvonasError { using EvonasError::EvonasError; };

struct InvalidConfig : EvonasError { using EvonasError::EvonasError; };
struct IsolationViolation : EvonasError { using EvonasError::EvonasError; };
struct MeasurementError : EvonasError { using EvonasError::EvonasError; };
struct IncompleteEvaluation : EvonasError { using EvonasError::EvonasError; };

struct UnsupportedCheckpoint : EvonasError { using EvonasError::EvonasError; };
struct ChecksumError : EvonasError { using EvonasError::EvonasError; };
struct InvalidInput : EvonasError { using EvonasError::EvonasError; };

} // namespace evonas
