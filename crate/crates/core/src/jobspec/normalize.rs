use std::collections::BTreeSet;

use super::{
    parse_walltime, validate_name, validate_template, Dialect, Directive, JobSpec, OutputPolicy,
    ParseError, ResourceRequest, Walltime,
};

pub const DEFAULT_WALLTIME: Walltime = Walltime(3600);
pub const DEFAULT_NAME: &str = "job";
pub const PBS_STDOUT_TEMPLATE: &str = "%x.o%j";
pub const PBS_STDERR_TEMPLATE: &str = "%x.e%j";
pub const SLURM_STDOUT_TEMPLATE: &str = "slurm-%j.out";

#[derive(Debug, Clone, Default)]
pub struct NormalizeOptions {
    /// Reject unknown directives and a missing walltime instead of warning.
    pub strict: bool,
    /// Name used when the script sets none, usually the script's file stem.
    pub default_name: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Normalized {
    pub spec: JobSpec,
    pub warnings: Vec<String>,
}

/// Fields collected from directives before defaults are applied.
#[derive(Default)]
struct Collected {
    name: Option<(String, usize)>,
    nodes: Option<u32>,
    slots: Option<u32>,
    features: BTreeSet<String>,
    walltime: Option<Walltime>,
    stdout: Option<String>,
    stderr: Option<String>,
    merge: Option<bool>,
    warnings: Vec<String>,
}

impl Collected {
    fn unknown(&mut self, strict: bool, d: &Directive, what: String) -> Result<(), ParseError> {
        if strict {
            return Err(ParseError::UnknownDirective {
                line: d.line_no,
                key: what,
            });
        }
        self.warnings
            .push(format!("line {}: ignoring unsupported directive {what}", d.line_no));
        Ok(())
    }
}

fn count(value: &str, line: usize, what: &str) -> Result<u32, ParseError> {
    let n: u32 = value.trim().parse().map_err(|_| ParseError::InvalidResource {
        line,
        reason: format!("{what} must be a positive integer, got {value:?}"),
    })?;
    if n < 1 {
        return Err(ParseError::InvalidResource {
            line,
            reason: format!("{what} must be at least 1"),
        });
    }
    Ok(n)
}

fn feature(tag: &str, line: usize) -> Result<String, ParseError> {
    let tag = tag.trim().to_ascii_lowercase();
    if tag.is_empty() || !tag.chars().all(|c| c.is_ascii_alphanumeric()) {
        return Err(ParseError::InvalidResource {
            line,
            reason: format!("feature tag {tag:?} must be alphanumeric"),
        });
    }
    Ok(tag)
}

fn walltime_at(value: &str, line: usize) -> Result<Walltime, ParseError> {
    let w = parse_walltime(value).map_err(|_| ParseError::BadWalltime {
        line,
        value: value.to_string(),
    })?;
    if w.secs() == 0 {
        return Err(ParseError::ZeroWalltime { line });
    }
    Ok(w)
}

fn template(value: &str, line: usize) -> Result<String, ParseError> {
    if !validate_template(value) {
        return Err(ParseError::BadOutputTemplate {
            line,
            template: value.to_string(),
        });
    }
    Ok(value.to_string())
}

/// Handles one `-l` item such as `nodes=1:ppn=8` or `walltime=4:00:00`.
fn pbs_resource(c: &mut Collected, d: &Directive, strict: bool) -> Result<(), ParseError> {
    let line = d.line_no;
    let (resource, value) = d.value.split_once('=').unwrap_or((d.value.as_str(), ""));
    match resource {
        "nodes" | "select" => {
            let mut parts = value.split(':');
            c.nodes = Some(count(parts.next().unwrap_or(""), line, "node count")?);
            for part in parts {
                match part.split_once('=') {
                    Some(("ppn" | "ncpus", n)) => c.slots = Some(count(n, line, "ppn")?),
                    Some((other, _)) => {
                        c.unknown(strict, d, format!("-l {resource} property {other}"))?
                    }
                    None => {
                        c.features.insert(feature(part, line)?);
                    }
                }
            }
        }
        "ppn" | "ncpus" => c.slots = Some(count(value, line, "ppn")?),
        "walltime" => c.walltime = Some(walltime_at(value, line)?),
        other => c.unknown(strict, d, format!("-l {other}"))?,
    }
    Ok(())
}

fn collect_pbs(c: &mut Collected, d: &Directive, strict: bool) -> Result<(), ParseError> {
    let line = d.line_no;
    match d.key.as_str() {
        "N" => c.name = Some((d.value.clone(), line)),
        "l" => pbs_resource(c, d, strict)?,
        "j" => match d.value.as_str() {
            "oe" | "eo" => c.merge = Some(true),
            "n" => c.merge = Some(false),
            other => c.unknown(strict, d, format!("-j {other}"))?,
        },
        "o" => c.stdout = Some(template(&d.value, line)?),
        "e" => c.stderr = Some(template(&d.value, line)?),
        other => c.unknown(strict, d, format!("-{other}"))?,
    }
    Ok(())
}

fn collect_slurm(c: &mut Collected, d: &Directive, strict: bool) -> Result<(), ParseError> {
    let line = d.line_no;
    match d.key.as_str() {
        "job-name" | "J" => c.name = Some((d.value.clone(), line)),
        "nodes" | "N" => c.nodes = Some(count(&d.value, line, "node count")?),
        "ntasks-per-node" => c.slots = Some(count(&d.value, line, "ntasks-per-node")?),
        "time" | "t" => c.walltime = Some(walltime_at(&d.value, line)?),
        "output" | "o" => c.stdout = Some(template(&d.value, line)?),
        "error" | "e" => c.stderr = Some(template(&d.value, line)?),
        "constraint" | "C" => {
            for tag in d.value.split(['&', ',']) {
                c.features.insert(feature(tag, line)?);
            }
        }
        other => {
            let shown = if other.len() == 1 {
                format!("-{other}")
            } else {
                format!("--{other}")
            };
            c.unknown(strict, d, shown)?
        }
    }
    Ok(())
}

/// Folds parsed directives into a [`JobSpec`], filling defaults for anything
/// the script leaves unset.
pub fn normalize(
    directives: &[Directive],
    body: Vec<String>,
    dialect: Dialect,
    options: &NormalizeOptions,
) -> Result<Normalized, ParseError> {
    let mut c = Collected::default();
    for d in directives {
        match dialect {
            Dialect::Pbs => collect_pbs(&mut c, d, options.strict)?,
            Dialect::Slurm => collect_slurm(&mut c, d, options.strict)?,
        }
    }

    let name = match c.name {
        Some((name, _)) => name,
        None => options
            .default_name
            .clone()
            .unwrap_or_else(|| DEFAULT_NAME.to_string()),
    };
    validate_name(&name)?;

    let walltime = match c.walltime {
        Some(w) => w,
        None if options.strict => return Err(ParseError::MissingWalltime),
        None => DEFAULT_WALLTIME,
    };

    let output = match dialect {
        Dialect::Pbs => {
            let stdout = c.stdout.unwrap_or_else(|| PBS_STDOUT_TEMPLATE.to_string());
            if c.merge == Some(true) {
                OutputPolicy::merged(stdout)
            } else {
                OutputPolicy::split(stdout, c.stderr.unwrap_or_else(|| PBS_STDERR_TEMPLATE.to_string()))
            }
        }
        // Without --error SLURM writes both streams to the --output file.
        Dialect::Slurm => {
            let stdout = c.stdout.unwrap_or_else(|| SLURM_STDOUT_TEMPLATE.to_string());
            match c.stderr {
                Some(stderr) => OutputPolicy::split(stdout, stderr),
                None => OutputPolicy::merged(stdout),
            }
        }
    };

    Ok(Normalized {
        spec: JobSpec {
            name,
            resources: ResourceRequest {
                nodes: c.nodes.unwrap_or(1),
                slots_per_node: c.slots.unwrap_or(1),
                features: c.features,
            },
            walltime,
            output,
            body,
            dialect,
        },
        warnings: c.warnings,
    })
}
