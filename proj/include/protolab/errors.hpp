#pragma once

#include <stdexcept>
#include <string>

namespace protolab {

// Base class for every failure the library reports.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DegenerateVector : public Error { public: using Error::Error; };
class DimensionMismatch : public Error { public: using Error::Error; };
class SingletonBatch : public Error { public: using Error::Error; };
class NumericalRange : public Error { public: using Error::Error; };
class NonFinite : public Error { public: using Error::Error; };
class DuplicateVectors : public Error { public: using Error::Error; };
class InfinitePenalty : public Error { public: using Error::Error; };
class EpsilonNegative : public Error { public: using Error::Error; };
class StaleReport : public Error { public: using Error::Error; };
class ShapeMismatch : public Error { public: using Error::Error; };
class NonFiniteLoss : public Error { public: using Error::Error; };
class ConfigInvalid : public Error { public: using Error::Error; };
class FormatError : public Error { public: using Error::Error; };
class IoError : public Error { public: using Error::Error; };

}  // namespace protolab
