#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace stamp {

enum class ErrorCode {
    // configuration and CLI
    ConfigFileNotFound,
    ConfigParseError,
    MissingKeys,
    TypeMismatch,
    UnknownCommand,
    InvalidValue,
    // slides
    UnsupportedFormat,
    MissingResolution,
    CorruptFile,
    UpscaleRequested,
    InsufficientTissue,
    InvalidDevice,
    // features
    BackendFailure,
    DimensionMismatch,
    MalformedFeatureFile,
    // cohort
    KeyError,
    DuplicatePatient,
    NoFeaturesFound,
    EmptyCohort,
    TooFewClassMembers,
    TooManySplits,
    StaleFolds,
    // model
    DimMismatch,
    EmptyBatch,
    ExtractorMismatch,
    MissingFeatures,
    MalformedBundle,
    // statistics
    SingleClass,
    NoPositives,
    SchemaError,
    // explainability
    MissingThumbnail,
    SlideUnavailable,
    // synthetic cohort
    CohortMismatch,
    IoError,
};

std::string_view to_string(ErrorCode code);

/// Default remediation line for an error code, following the troubleshooting
/// table shipped with the protocol.
std::string_view default_remediation(ErrorCode code);

/// All recoverable failures in the pipeline are reported through this type.
/// `subject` names the failing config key (section.key) or file path.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, std::string message, std::string subject = {},
          std::string remediation = {});

    ErrorCode code() const noexcept { return code_; }
    const std::string& subject() const noexcept { return subject_; }
    const std::string& remediation() const noexcept { return remediation_; }

    /// One-line summary: "<message> [<subject>]".
    std::string summary() const;

private:
    ErrorCode code_;
    std::string subject_;
    std::string remediation_;
};

} // namespace stamp
