#pragma once

#include <stdexcept>
#include <string>

namespace tilab {

// Error taxonomy mirrors the CLI exit codes: ConfigError -> 2,
// NumericError -> 3, MissingArtifact -> 4. Everything else is a bug.

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

struct MissingArtifact : std::runtime_error {
    explicit MissingArtifact(const std::string& what) : std::runtime_error(what) {}
};

struct DimMismatch : ConfigError {
    explicit DimMismatch(const std::string& what) : ConfigError(what) {}
};

struct NotSymmetric : NumericError {
    explicit NotSymmetric(const std::string& what) : NumericError(what) {}
};

struct NotPSD : NumericError {
    explicit NotPSD(const std::string& what) : NumericError(what) {}
};

struct ZeroNorm : NumericError {
    explicit ZeroNorm(const std::string& what) : NumericError(what) {}
};

struct FrozenRequired : ConfigError {
    explicit FrozenRequired(const std::string& what) : ConfigError(what) {}
};

struct AlreadyFrozen : ConfigError {
    explicit AlreadyFrozen(const std::string& what) : ConfigError(what) {}
};

struct UnknownToken : ConfigError {
    std::string token;
    explicit UnknownToken(const std::string& tok)
        : ConfigError("unknown token: " + tok), token(tok) {}
};

struct MissingPseudoword : ConfigError {
    explicit MissingPseudoword(const std::string& what) : ConfigError(what) {}
};

struct MissingPlaceholder : ConfigError {
    explicit MissingPlaceholder(const std::string& what) : ConfigError(what) {}
};

struct MissingTrigger : ConfigError {
    explicit MissingTrigger(const std::string& what) : ConfigError(what) {}
};

struct EmptyPrompt : ConfigError {
    explicit EmptyPrompt(const std::string& what) : ConfigError(what) {}
};

struct EmptySet : ConfigError {
    explicit EmptySet(const std::string& what) : ConfigError(what) {}
};

struct EmptyBlacklist : ConfigError {
    explicit EmptyBlacklist(const std::string& what) : ConfigError(what) {}
};

struct EmptyKeepSet : ConfigError {
    explicit EmptyKeepSet(const std::string& what) : ConfigError(what) {}
};

struct SingleVector : ConfigError {
    explicit SingleVector(const std::string& what) : ConfigError(what) {}
};

struct UnknownConcept : ConfigError {
    explicit UnknownConcept(const std::string& what) : ConfigError(what) {}
};

struct UnknownAttribute : ConfigError {
    explicit UnknownAttribute(const std::string& what) : ConfigError(what) {}
};

struct BadRange : ConfigError {
    explicit BadRange(const std::string& what) : ConfigError(what) {}
};

}  // namespace tilab
