use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::JobSpec;

/// Accepts templates whose only `%` sequences are `%j` and `%x`.
pub fn validate_template(template: &str) -> bool {
    let mut chars = template.chars();
    while let Some(c) = chars.next() {
        if c == '%' && !matches!(chars.next(), Some('j' | 'x')) {
            return false;
        }
    }
    !template.is_empty()
}

/// Substitutes `%j` with the job id and `%x` with the job name.
pub fn expand_output_template(template: &str, job_id: u64, job_name: &str) -> String {
    let mut out = String::with_capacity(template.len() + 16);
    let mut chars = template.chars();
    while let Some(c) = chars.next() {
        if c != '%' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('j') => out.push_str(&job_id.to_string()),
            Some('x') => out.push_str(job_name),
            Some(other) => {
                out.push('%');
                out.push(other);
            }
            None => out.push('%'),
        }
    }
    out
}

/// Variables injected into every job, in both the PBS and SLURM spellings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobEnvironment {
    pub variables: BTreeMap<String, String>,
}

impl JobEnvironment {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.variables.get(key).map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &String)> {
        self.variables.iter()
    }
}

pub fn job_environment(spec: &JobSpec, job_id: u64, submit_dir: &Path) -> JobEnvironment {
    let dir = submit_dir.to_string_lossy().into_owned();
    let id = job_id.to_string();
    let mut variables = BTreeMap::new();
    for (pbs, slurm, value) in [
        ("PBS_O_WORKDIR", "SLURM_SUBMIT_DIR", &dir),
        ("PBS_JOBID", "SLURM_JOB_ID", &id),
        ("PBS_JOBNAME", "SLURM_JOB_NAME", &spec.name),
    ] {
        variables.insert(pbs.to_string(), value.clone());
        variables.insert(slurm.to_string(), value.clone());
    }
    variables.insert("SLURM_JOBID".to_string(), id);
    JobEnvironment { variables }
}
