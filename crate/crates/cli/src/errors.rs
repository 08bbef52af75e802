use std::fmt;

use influence_audit::AuditError;

pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_CONVERGENCE: u8 = 4;
pub const EXIT_UNDEFINED_METRIC: u8 = 5;

macro_rules! marker_error {
    ($name:ident, $ctor:ident, $doc:literal) => {
        #[doc = $doc]
        #[derive(Debug)]
        pub struct $name(pub String);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl std::error::Error for $name {}

        pub fn $ctor(msg: impl Into<String>) -> anyhow::Error {
            $name(msg.into()).into()
        }
    };
}

marker_error!(
    ConfigError,
    config_error,
    "Invalid flags or config file contents."
);
marker_error!(
    DataError,
    data_error,
    "Unreadable or inconsistent input data."
);
marker_error!(
    BreachError,
    breach_error,
    "A checked invariant did not hold."
);

/// Maps the first recognised cause in the chain to a process exit code.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return EXIT_CONFIG;
        }
        if cause.is::<DataError>() {
            return EXIT_DATA;
        }
        if cause.is::<BreachError>() {
            return EXIT_FAILURE;
        }
        if let Some(e) = cause.downcast_ref::<AuditError>() {
            return match e {
                AuditError::Domain(_) | AuditError::UnknownMethod(_) | AuditError::Json(_) => {
                    EXIT_CONFIG
                }
                AuditError::Schema(_)
                | AuditError::Parse { .. }
                | AuditError::Size(_)
                | AuditError::DimensionMismatch { .. }
                | AuditError::Io(_)
                | AuditError::Csv(_) => EXIT_DATA,
                AuditError::Convergence { .. } | AuditError::NotPositiveDefinite(_) => {
                    EXIT_CONVERGENCE
                }
                AuditError::UndefinedMetric(_) => EXIT_UNDEFINED_METRIC,
            };
        }
    }
    EXIT_FAILURE
}
