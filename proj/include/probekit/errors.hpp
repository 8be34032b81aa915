#pragma once

#include <stdexcept>
#include <string>

namespace probekit {

// Base class for all toolkit errors so callers can catch categorically.
struct Error : std::runtime_error {
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Point classification requested within the mesh tolerance band of a surface.
struct AmbiguousPoint : Error { using Error::Error; };
// Kernel evaluation at the singular point y = 0.
struct SingularPoint : Error { using Error::Error; };
// Evaluation or quadrature requested closer to a surface than the exclusion radius.
struct NearSurface : Error { using Error::Error; };
// Direct solver reports an unusable condition estimate.
struct IllConditioned : Error { using Error::Error; };
// Needle exterior continuation could not be placed outside the domain.
struct PolePlacementFailure : Error { using Error::Error; };
// Stage fits stopped improving (raised only by strict sequence builds).
struct FitStagnation : Error { using Error::Error; };
// A staged limit failed the convergence criterion.
struct NotConverged : Error { using Error::Error; };
// Sequence/solution objects built for different domains were mixed.
struct DomainMismatch : Error { using Error::Error; };
// Trace vector length does not match the operator basis.
struct BasisMismatch : Error { using Error::Error; };
// Monotone domain pair violates the required nesting.
struct NestingViolation : Error { using Error::Error; };
// Stored data does not match the mesh it is being used with.
struct FingerprintMismatch : Error { using Error::Error; };
// Truncated series tail exceeds the requested tolerance.
struct TailTooLarge : Error { using Error::Error; };
// File parse / format violations.
struct FormatError : Error { using Error::Error; };

} // namespace probekit
