#include "stamp/error.hpp"

namespace stamp {

std::string_view to_string(ErrorCode code)
{
    switch (code) {
    case ErrorCode::ConfigFileNotFound: return "ConfigFileNotFound";
    case ErrorCode::ConfigParseError: return "ConfigParseError";
    case ErrorCode::MissingKeys: return "MissingKeys";
    case ErrorCode::TypeMismatch: return "TypeMismatch";
    case ErrorCode::UnknownCommand: return "UnknownCommand";
    case ErrorCode::InvalidValue: return "InvalidValue";
    case ErrorCode::UnsupportedFormat: return "UnsupportedFormat";
    case ErrorCode::MissingResolution: return "MissingResolution";
    case ErrorCode::CorruptFile: return "CorruptFile";
    case ErrorCode::UpscaleRequested: return "UpscaleRequested";
    case ErrorCode::InsufficientTissue: return "InsufficientTissue";
    case ErrorCode::InvalidDevice: return "InvalidDevice";
    case ErrorCode::BackendFailure: return "BackendFailure";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::MalformedFeatureFile: return "MalformedFeatureFile";
    case ErrorCode::KeyError: return "KeyError";
    case ErrorCode::DuplicatePatient: return "DuplicatePatient";
    case ErrorCode::NoFeaturesFound: return "NoFeaturesFound";
    case ErrorCode::EmptyCohort: return "EmptyCohort";
    case ErrorCode::TooFewClassMembers: return "TooFewClassMembers";
    case ErrorCode::TooManySplits: return "TooManySplits";
    case ErrorCode::StaleFolds: return "StaleFolds";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::EmptyBatch: return "EmptyBatch";
    case ErrorCode::ExtractorMismatch: return "ExtractorMismatch";
    case ErrorCode::MissingFeatures: return "MissingFeatures";
    case ErrorCode::MalformedBundle: return "MalformedBundle";
    case ErrorCode::SingleClass: return "SingleClass";
    case ErrorCode::NoPositives: return "NoPositives";
    case ErrorCode::SchemaError: return "SchemaError";
    case ErrorCode::MissingThumbnail: return "MissingThumbnail";
    case ErrorCode::SlideUnavailable: return "SlideUnavailable";
    case ErrorCode::CohortMismatch: return "CohortMismatch";
    case ErrorCode::IoError: return "IoError";
    }
    return "Unknown";
}

std::string_view default_remediation(ErrorCode code)
{
    switch (code) {
    case ErrorCode::ConfigFileNotFound:
        return "Use the --config flag to specify an absolute path to the configuration file.";
    case ErrorCode::ConfigParseError:
        return "Fix the syntax of the configuration file at the reported line and column.";
    case ErrorCode::MissingKeys:
        return "Fill in the required arguments in the section that is indicated in the error message.";
    case ErrorCode::TypeMismatch:
        return "Change the value of the indicated argument to the expected type.";
    case ErrorCode::UnknownCommand:
        return "Run one of: setup, config, preprocess, crossval, train, deploy, statistics, heatmaps.";
    case ErrorCode::InvalidValue:
        return "Change the value of the indicated argument to a permitted value.";
    case ErrorCode::UnsupportedFormat:
        return "Rescan the slides into .tiff, or convert the file to .ome.tiff using conversion tools "
               "(https://github.com/ome/bioformats).";
    case ErrorCode::MissingResolution:
        return "Rescan the slide ensuring resolution info is present, otherwise the slide cannot be "
               "processed and should be skipped. Estimating resolution is considered bad practice.";
    case ErrorCode::CorruptFile:
        return "Re-download the file and try again. Otherwise the scan needs to be redone.";
    case ErrorCode::UpscaleRequested:
        return "Increase microns so that the tile resolution does not exceed the highest resolution "
               "stored in the slide.";
    case ErrorCode::InsufficientTissue:
        return "Stain normalization is skipped for this slide; check the slide for tissue content.";
    case ErrorCode::InvalidDevice:
        return "Run nvidia-smi to list the available GPUs and choose a valid device (e.g. cuda:0), "
               "or use device: cpu.";
    case ErrorCode::BackendFailure:
        return "Check the feature extractor model file and backend, or run `stamp setup`.";
    case ErrorCode::DimensionMismatch:
        return "Use a feature extractor export whose output dimension matches its descriptor.";
    case ErrorCode::MalformedFeatureFile:
        return "Delete the feature file and rerun `stamp preprocess` for this slide.";
    case ErrorCode::KeyError:
        return "The PATIENT, FILENAME or target_label column name must be exactly the same as in "
               "the table; the key error indicates which name is inconsistent.";
    case ErrorCode::DuplicatePatient:
        return "Ensure each patient identifier appears only once in the clinical table.";
    case ErrorCode::NoFeaturesFound:
        return "Manually check the feature directory if there are .h5 files present with names that "
               "are put in the slide table (without file extensions).";
    case ErrorCode::EmptyCohort:
        return "Check that patient identifiers match between the slide table and the clinical table "
               "and that target_label has values within categories.";
    case ErrorCode::TooFewClassMembers:
        return "Ensure that you manually specify the categories in the categories argument of the "
               "modeling section, so that no table artifacts (\"None\", \"NA\", or \"-\") are counted "
               "as classes.";
    case ErrorCode::TooManySplits:
        return "Reduce the number of splits through the n_splits argument.";
    case ErrorCode::StaleFolds:
        return "Remove the output of previous runs which failed or were abruptly stopped, so that a "
               "new folds.json file is generated.";
    case ErrorCode::DimMismatch:
        return "The bag's feature dimension must match the model's input dimension.";
    case ErrorCode::EmptyBatch:
        return "Gather more data; the cohort does not contain any patients to batch.";
    case ErrorCode::ExtractorMismatch:
        return "Deploy the model on features produced by the same extractor it was trained on.";
    case ErrorCode::MissingFeatures:
        return "Manually check the feature directory if there are .h5 files present with names that "
               "are put in the slide table (without file extensions).";
    case ErrorCode::MalformedBundle:
        return "Retrain or re-export the model bundle.";
    case ErrorCode::SingleClass:
        return "The evaluated predictions must contain both positive and negative patients.";
    case ErrorCode::NoPositives:
        return "The evaluated predictions must contain at least one patient of true_class.";
    case ErrorCode::SchemaError:
        return "Point pred_csvs at patient-preds.csv files and make sure target_label and "
               "true_class match the trained model.";
    case ErrorCode::MissingThumbnail:
        return "Set cache_dir to the preprocessing cache so the slide thumbnail can be found.";
    case ErrorCode::SlideUnavailable:
        return "Make sure wsi_dir contains the slide the heatmap is requested for.";
    case ErrorCode::CohortMismatch:
        return "Use the truth file generated together with this cohort.";
    case ErrorCode::IoError:
        return "Check that the path exists and is writable.";
    }
    return {};
}

Error::Error(ErrorCode code, std::string message, std::string subject, std::string remediation)
    : std::runtime_error(std::move(message))
    , code_(code)
    , subject_(std::move(subject))
    , remediation_(remediation.empty() ? std::string(default_remediation(code))
                                       : std::move(remediation))
{
}

std::string Error::summary() const
{
    std::string s = what();
    if (!subject_.empty()) {
        s += " [";
        s += subject_;
        s += "]";
    }
    return s;
}

} // namespace stamp
