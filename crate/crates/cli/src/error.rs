use sasvr::SvrError;

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: EXIT_USAGE, message: message.into() }
    }
}

impl From<SvrError> for CliError {
    fn from(e: SvrError) -> Self {
        let code = match e {
            SvrError::Divergence { .. } | SvrError::Numeric(_) => EXIT_NUMERIC,
            _ => EXIT_USAGE,
        };
        Self { code, message: e.to_string() }
    }
}
