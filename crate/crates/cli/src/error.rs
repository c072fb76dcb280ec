use serde_json::{json, Value};

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug)]
pub enum CliError {
    Core(nldae::Error),
    Validation(String),
    MissingArtifacts(Vec<String>),
}

impl From<nldae::Error> for CliError {
    fn from(e: nldae::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    /// 2 for bad input, 3 for numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if !e.is_validation() => 3,
            _ => 2,
        }
    }

    pub fn to_json(&self) -> Value {
        let (kind, message, extra) = match self {
            CliError::Core(e) => (e.kind().to_string(), e.to_string(), Value::Null),
            CliError::Validation(m) => ("Validation".into(), m.clone(), Value::Null),
            CliError::MissingArtifacts(files) => (
                "MissingArtifacts".into(),
                format!("missing artifacts: {}", files.join(", ")),
                json!(files),
            ),
        };
        let mut v = json!({"error": kind, "message": message, "exit_code": self.exit_code()});
        if !extra.is_null() {
            v["missing"] = extra;
        }
        v
    }
}
