#pragma once

#include <stdexcept>
#include <string>

namespace resetlab {

// Base for every error raised by the library. Subclasses map one-to-one onto
// the failure modes callers are expected to distinguish.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define RESETLAB_DEFINE_ERROR(Name)                       \
    class Name : public Error {                           \
    public:                                               \
        explicit Name(const std::string& what)            \
            : Error(std::string(#Name ": ") + what) {}    \
    }

RESETLAB_DEFINE_ERROR(InvalidConfig);
RESETLAB_DEFINE_ERROR(DimensionMismatch);
RESETLAB_DEFINE_ERROR(TuningFailed);
RESETLAB_DEFINE_ERROR(SingularResolvent);
RESETLAB_DEFINE_ERROR(NoCrossover);
RESETLAB_DEFINE_ERROR(MultipleCrossovers);
RESETLAB_DEFINE_ERROR(EventStorm);
RESETLAB_DEFINE_ERROR(NonFiniteState);
RESETLAB_DEFINE_ERROR(Divergence);
RESETLAB_DEFINE_ERROR(TooShort);
RESETLAB_DEFINE_ERROR(NonCommensurateWindow);
RESETLAB_DEFINE_ERROR(BaseLinearUnstable);

#undef RESETLAB_DEFINE_ERROR

// Raised when Lambda(w) or Delta_r(w) cannot be inverted reliably.
class NearSingularFrequency : public Error {
public:
    enum class Which { Lambda, DeltaR };

    NearSingularFrequency(Which which, double omega, double condition)
        : Error("NearSingularFrequency: " + std::string(which == Which::Lambda ? "Lambda" : "Delta_r") +
                " is singular at omega=" + std::to_string(omega) + " rad/s (cond=" + std::to_string(condition) + ")"),
          which_(which), omega_(omega), condition_(condition) {}

    [[nodiscard]] Which which() const noexcept { return which_; }
    [[nodiscard]] double omega() const noexcept { return omega_; }
    [[nodiscard]] double condition() const noexcept { return condition_; }

private:
    Which which_;
    double omega_;
    double condition_;
};

} // namespace resetlab
