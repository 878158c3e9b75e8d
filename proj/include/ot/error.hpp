#pragma once

#include <stdexcept>
#include <string>

namespace ot {

/// Base class for all otkit domain errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// measures
class AllZeroDensity : public Error { public: using Error::Error; };
class NegativeDensity : public Error { public: using Error::Error; };
class UnnormalizedInput : public Error { public: using Error::Error; };
class PointOutOfBounds : public Error { public: using Error::Error; };
class MissingDensityValues : public Error { public: using Error::Error; };
class DegenerateEnsemble : public Error { public: using Error::Error; };
class NonPsdCovariance : public Error { public: using Error::Error; };

// discrete transport
class InfeasibleMarginals : public Error { public: using Error::Error; };
class SolverStall : public Error { public: using Error::Error; };
class TooLarge : public Error { public: using Error::Error; };
class UnequalWeights : public Error { public: using Error::Error; };

// gaussian transport
class NonPsdInput : public Error { public: using Error::Error; };
class SingularCovariance : public Error { public: using Error::Error; };
class SOutOfRange : public Error { public: using Error::Error; };

// shared plumbing
class DimensionMismatch : public Error { public: using Error::Error; };
class GeometryMismatch : public Error { public: using Error::Error; };

// vector fields / propagation
class OutOfDomain : public Error { public: using Error::Error; };
class BlowUp : public Error { public: using Error::Error; };

// file I/O
class ParseError : public Error { public: using Error::Error; };

} // namespace ot
