use std::fmt;

/// A failed command. `class` is a stable dotted identifier printed as
/// `error[<class>]: <detail>` on stderr.
#[derive(Debug)]
pub struct CliError {
    pub class: &'static str,
    pub detail: String,
}

impl CliError {
    pub fn new(class: &'static str, detail: impl Into<String>) -> Self {
        Self { class, detail: detail.into() }
    }

    pub fn config(detail: impl Into<String>) -> Self {
        Self::new("config", detail)
    }

    pub fn io(path: &std::path::Path, err: std::io::Error) -> Self {
        Self::new("io", format!("{}: {err}", path.display()))
    }

    /// Exit status for this class.
    pub fn exit_code(&self) -> i32 {
        match self.class {
            "usage" => 2,
            "config" => 3,
            "io" => 4,
            c if c.starts_with("checkpoint") => 5,
            "corpus" | "annotation" => 6,
            "training" => 7,
            _ => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let detail = self.detail.replace('\n', " ");
        write!(f, "error[{}]: {detail}", self.class)
    }
}

impl std::error::Error for CliError {}

impl From<vec2gloss::Error> for CliError {
    fn from(e: vec2gloss::Error) -> Self {
        use vec2gloss::Error as E;
        let class = match &e {
            E::Io { .. } => "io",
            E::Records(_) | E::SpanMismatch { .. } => "corpus",
            E::Annotation { .. } => "annotation",
            E::NonFiniteLoss { .. } => "training",
            E::NoCandidate(_) | E::InsufficientDistractors { .. } => "analysis",
            E::EmptySplit { .. } => "config",
            _ => "input",
        };
        Self::new(class, e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
