//! Batch commands around the forecasting library: dataset generation,
//! training, evaluation, forecasting and plotting.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod plot;

use camul_core::CamulError;

/// A failure caused by the caller's input rather than by the program.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UserError(pub String);

pub const EXIT_OK: i32 = 0;
pub const EXIT_USER: i32 = 1;
pub const EXIT_INTERNAL: i32 = 2;

/// Process exit code for an error: 1 for bad input, 2 for everything else.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<UserError>() {
            return EXIT_USER;
        }
        if let Some(e) = cause.downcast_ref::<CamulError>() {
            return match e {
                CamulError::Validation(_)
                | CamulError::SeriesTooShort { .. }
                | CamulError::OutOfVocabulary { .. }
                | CamulError::Empty(_)
                | CamulError::InvalidConfig(_)
                | CamulError::ConfigMismatch(_)
                | CamulError::Checkpoint(_)
                | CamulError::InvalidLevel(_)
                | CamulError::UnknownSeries(_)
                | CamulError::Io(_)
                | CamulError::Json(_)
                | CamulError::Csv(_) => EXIT_USER,
                CamulError::Shape { .. } | CamulError::Divergence { .. } => EXIT_INTERNAL,
            };
        }
    }
    EXIT_INTERNAL
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_error_kind() {
        assert_eq!(exit_code(&anyhow::Error::new(UserError("bad".into()))), EXIT_USER);
        let wrapped = anyhow::Error::new(CamulError::UnknownSeries("x".into())).context("forecast");
        assert_eq!(exit_code(&wrapped), EXIT_USER);
        let diverged = anyhow::Error::new(CamulError::Divergence { epoch: 3, detail: "nan".into() });
        assert_eq!(exit_code(&diverged), EXIT_INTERNAL);
        assert_eq!(exit_code(&anyhow::anyhow!("boom")), EXIT_INTERNAL);
    }
}
