#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace ocs {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bad input: shapes, invariants, config fields.  CLI exit code 2.
class ValidationError : public Error {
public:
    using Error::Error;
};

// A guard or numerical precondition failed.  CLI exit code 3.
class NumericalError : public Error {
public:
    using Error::Error;
};

class ZTooCloseToSpectrum : public NumericalError {
public:
    ZTooCloseToSpectrum(double eig, long shell)
        : NumericalError("energy within guard of eigenvalue " + std::to_string(eig) +
                         " of shell " + std::to_string(shell)),
          eigenvalue(eig), shell(shell) {}
    double eigenvalue;
    long shell;
};

class ChannelSingular : public NumericalError {
public:
    ChannelSingular(std::string kind, long shell)
        : NumericalError("transfer matrix undefined at shell " + std::to_string(shell) +
                         " (" + kind + ")"),
          kind(std::move(kind)), shell(shell) {}
    std::string kind;
    long shell;
};

class ExtensionDiverged : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class NotSingularHere : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class ColinearityFailed : public NumericalError {
public:
    ColinearityFailed(double cross, long l, long m)
        : NumericalError("no eigenfunction between shells " + std::to_string(l) + " and " +
                         std::to_string(m + 1) + ", cross product " + std::to_string(cross)),
          cross(cross) {}
    double cross;
};

class NotOneChannel : public NumericalError {
public:
    explicit NotOneChannel(double ratio)
        : NumericalError("coupling block has rank > 1, singular value ratio " +
                         std::to_string(ratio)),
          ratio(ratio) {}
    double ratio;
};

class DanglingComponent : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class DomainViolation : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class SupportViolation : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class I0Violation : public NumericalError {
public:
    I0Violation(std::string msg, std::vector<double> witness)
        : NumericalError(std::move(msg)), witness(std::move(witness)) {}
    std::vector<double> witness;
};

class DenominatorBlowup : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class NotElliptic : public NumericalError {
public:
    using NumericalError::NumericalError;
};

}  // namespace ocs
