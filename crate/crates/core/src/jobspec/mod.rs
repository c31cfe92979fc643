//! Job-script parsing for the PBS and SLURM directive dialects.
//!
//! A script goes through three stages: [`detect_dialect`] picks the directive
//! family, [`parse_directives`] splits directive lines from the shell body, and
//! [`normalize`] folds the directives into a dialect-independent [`JobSpec`].
//! [`parse_script`] chains the three.

mod directive;
mod normalize;
mod output;
mod walltime;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use directive::{detect_dialect, parse_directives, split_lines, Directive};
pub use normalize::{normalize, NormalizeOptions, Normalized};
pub use output::{expand_output_template, job_environment, validate_template, JobEnvironment};
pub use walltime::{format_hms, parse_walltime, Walltime};

/// Maximum length of a job or session name, in characters.
pub const MAX_NAME_LEN: usize = 64;

/// Directive family a script is written in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dialect {
    Pbs,
    Slurm,
}

impl Dialect {
    /// Column-0 prefix marking a directive line.
    pub fn prefix(self) -> &'static str {
        match self {
            Dialect::Pbs => "#PBS ",
            Dialect::Slurm => "#SBATCH ",
        }
    }
}

impl fmt::Display for Dialect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dialect::Pbs => "PBS",
            Dialect::Slurm => "SLURM",
        })
    }
}

impl std::str::FromStr for Dialect {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "pbs" => Ok(Dialect::Pbs),
            "slurm" => Ok(Dialect::Slurm),
            other => Err(format!("unknown dialect {other:?} (expected pbs or slurm)")),
        }
    }
}

/// Nodes, slots per node and required node features.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ResourceRequest {
    pub nodes: u32,
    pub slots_per_node: u32,
    #[serde(default)]
    pub features: BTreeSet<String>,
}

impl ResourceRequest {
    pub fn new(nodes: u32, slots_per_node: u32) -> Self {
        Self {
            nodes,
            slots_per_node,
            features: BTreeSet::new(),
        }
    }

    pub fn with_feature(mut self, tag: impl Into<String>) -> Self {
        self.features.insert(tag.into());
        self
    }
}

/// Where a job's stdout and stderr go. Templates may contain `%j` (job id)
/// and `%x` (job name).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OutputPolicy {
    pub stdout_template: String,
    pub stderr_template: Option<String>,
    pub merge_stderr: bool,
}

impl OutputPolicy {
    pub fn merged(stdout_template: impl Into<String>) -> Self {
        Self {
            stdout_template: stdout_template.into(),
            stderr_template: None,
            merge_stderr: true,
        }
    }

    pub fn split(stdout_template: impl Into<String>, stderr_template: impl Into<String>) -> Self {
        Self {
            stdout_template: stdout_template.into(),
            stderr_template: Some(stderr_template.into()),
            merge_stderr: false,
        }
    }
}

/// A normalized, dialect-independent job description.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct JobSpec {
    pub name: String,
    pub resources: ResourceRequest,
    pub walltime: Walltime,
    pub output: OutputPolicy,
    /// Non-directive script lines in their original order, shebang included.
    pub body: Vec<String>,
    pub dialect: Dialect,
}

impl JobSpec {
    /// The body as shell text, one line per entry.
    pub fn script_text(&self) -> String {
        let mut text = self.body.join("\n");
        text.push('\n');
        text
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("script mixes #PBS and #SBATCH directives")]
    MixedDialects,
    #[error("script has no #PBS or #SBATCH directives; pass the dialect explicitly")]
    NoDirectives,
    #[error("line {line}: malformed directive")]
    MalformedDirective { line: usize },
    #[error("bad time format {0:?}")]
    BadTimeFormat(String),
    #[error("line {line}: bad time format {value:?}")]
    BadWalltime { line: usize, value: String },
    #[error("line {line}: walltime must be greater than zero")]
    ZeroWalltime { line: usize },
    #[error("walltime is required in strict mode")]
    MissingWalltime,
    #[error("line {line}: invalid resource request: {reason}")]
    InvalidResource { line: usize, reason: String },
    #[error("invalid job name {name:?}: {reason}")]
    BadName { name: String, reason: String },
    #[error("line {line}: invalid output template {template:?}")]
    BadOutputTemplate { line: usize, template: String },
    #[error("line {line}: unsupported directive {key:?}")]
    UnknownDirective { line: usize, key: String },
}

impl ParseError {
    /// The 1-based script line the error refers to, if any.
    pub fn line(&self) -> Option<usize> {
        match self {
            ParseError::MalformedDirective { line }
            | ParseError::BadWalltime { line, .. }
            | ParseError::ZeroWalltime { line }
            | ParseError::InvalidResource { line, .. }
            | ParseError::BadOutputTemplate { line, .. }
            | ParseError::UnknownDirective { line, .. } => Some(*line),
            _ => None,
        }
    }
}

/// Checks the naming rules shared by jobs and sessions.
pub fn validate_name(name: &str) -> Result<(), ParseError> {
    let bad = |reason: &str| ParseError::BadName {
        name: name.to_string(),
        reason: reason.to_string(),
    };
    if name.is_empty() {
        return Err(bad("name is empty"));
    }
    if name.contains('/') || name.contains('\\') {
        return Err(bad("name contains a path separator"));
    }
    if name.chars().count() > MAX_NAME_LEN {
        return Err(bad("name is longer than 64 characters"));
    }
    if name.chars().any(|c| c.is_control()) {
        return Err(bad("name contains control characters"));
    }
    Ok(())
}

/// Detects (unless forced), parses and normalizes a whole script.
pub fn parse_script(
    text: &str,
    forced: Option<Dialect>,
    options: &NormalizeOptions,
) -> Result<Normalized, ParseError> {
    let dialect = match forced {
        Some(d) => d,
        None => detect_dialect(text)?,
    };
    let (directives, body) = parse_directives(text, dialect)?;
    normalize(&directives, body, dialect, options)
}

/// Name for a job when the script does not set one: the file stem, cut to
/// [`MAX_NAME_LEN`] characters.
pub fn default_name_from_path(path: &std::path::Path) -> Option<String> {
    let stem = path.file_stem()?.to_str()?;
    let name: String = stem.chars().take(MAX_NAME_LEN).collect();
    (!name.is_empty()).then_some(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn name_rules() {
        assert!(validate_name("automl_job").is_ok());
        assert!(validate_name("").is_err());
        assert!(validate_name("a/b").is_err());
        assert!(validate_name(&"x".repeat(64)).is_ok());
        assert!(validate_name(&"x".repeat(65)).is_err());
    }

    #[test]
    fn default_name_truncates_stem() {
        let long = format!("/tmp/{}.pbs", "y".repeat(80));
        let name = default_name_from_path(std::path::Path::new(&long)).unwrap();
        assert_eq!(name.len(), 64);
        assert_eq!(
            default_name_from_path(std::path::Path::new("automl_job.slurm")).as_deref(),
            Some("automl_job")
        );
    }
}
