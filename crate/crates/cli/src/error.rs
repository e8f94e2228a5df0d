use std::fmt;
use std::path::Path;

/// Failure classes; each has its own process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Usage,
    Io,
    Parse,
    Config,
    Runtime,
}

impl Kind {
    pub fn code(self) -> i32 {
        match self {
            Kind::Usage => 2,
            Kind::Io => 3,
            Kind::Parse => 4,
            Kind::Config => 5,
            Kind::Runtime => 6,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Usage => "usage",
            Kind::Io => "io",
            Kind::Parse => "parse",
            Kind::Config => "config",
            Kind::Runtime => "runtime",
        }
    }
}

#[derive(Debug, Clone)]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn new(kind: Kind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(Kind::Usage, message)
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(Kind::Config, message)
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        Self::new(Kind::Io, format!("{}: {err}", path.display()))
    }

    /// Prefix the message with the file it concerns.
    pub fn in_file(mut self, path: &Path) -> Self {
        self.message = format!("{}: {}", path.display(), self.message);
        self
    }

    /// The single line printed on stderr.
    pub fn report_line(&self) -> String {
        serde_json::json!({
            "error": self.kind.as_str(),
            "code": self.kind.code(),
            "message": self.message.replace('\n', " "),
        })
        .to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind.as_str(), self.message)
    }
}

impl From<dream_core::Error> for CliError {
    fn from(e: dream_core::Error) -> Self {
        use dream_core::Error as E;
        let kind = match &e {
            E::Io(_) => Kind::Io,
            E::Parse { .. } => Kind::Parse,
            E::Parameter(_) | E::Dimension { .. } => Kind::Config,
            E::EmptyArchive
            | E::InvalidOutcome
            | E::Degenerate(_)
            | E::NoValidCandidates(_)
            | E::ModeCollapse(_)
            | E::Divergence(_) => Kind::Runtime,
        };
        Self::new(kind, e.to_string())
    }
}

/// Attach a file name to core errors raised while reading it.
pub trait FileContext<T> {
    fn in_file(self, path: &Path) -> CliResult<T>;
}

impl<T> FileContext<T> for dream_core::Result<T> {
    fn in_file(self, path: &Path) -> CliResult<T> {
        self.map_err(|e| CliError::from(e).in_file(path))
    }
}
