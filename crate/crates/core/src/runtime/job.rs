use std::fs::{File, OpenOptions};
use std::os::unix::process::CommandExt;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;

use crate::clock::Timestamp;
use crate::jobspec::{expand_output_template, job_environment, JobSpec};
use crate::sched::{Allocation, JobId};

use super::{exit_code, terminate_group, RuntimeError, KILL_GRACE};

/// How a job process ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JobExit {
    pub job_id: JobId,
    pub code: i32,
}

/// A job process under supervision.
#[derive(Debug)]
pub struct RunningJob {
    pub job_id: JobId,
    pub pid: u32,
    pub deadline: Timestamp,
    pub stdout_path: PathBuf,
    /// `None` when stderr is merged into stdout.
    pub stderr_path: Option<PathBuf>,
    exited: Arc<AtomicBool>,
    terminating: bool,
}

impl RunningJob {
    pub fn has_exited(&self) -> bool {
        self.exited.load(Ordering::SeqCst)
    }

    pub fn is_terminating(&self) -> bool {
        self.terminating
    }

    /// Starts the SIGTERM, grace, SIGKILL sequence. Idempotent.
    pub fn terminate(&mut self) {
        if !self.terminating {
            self.terminating = true;
            terminate_group(self.pid, self.exited.clone(), KILL_GRACE);
        }
    }
}

fn resolve(submit_dir: &Path, template: &str, job_id: JobId, name: &str) -> PathBuf {
    let expanded = PathBuf::from(expand_output_template(template, job_id.0, name));
    if expanded.is_absolute() {
        expanded
    } else {
        submit_dir.join(expanded)
    }
}

fn open_sink(path: &Path) -> Result<File, RuntimeError> {
    OpenOptions::new()
        .create(true)
        .write(true)
        .truncate(true)
        .open(path)
        .map_err(|e| RuntimeError::SpawnFailed(format!("cannot open {}: {e}", path.display())))
}

/// Runs the job body under `/bin/sh` in `submit_dir`.
///
/// Output files are created before the process starts. The shell does not
/// stop at a failing line, and its exit status (that of the last command) is
/// passed to `on_exit` from a supervisor thread once the process is reaped.
pub fn launch_job(
    spec: &JobSpec,
    allocation: &Allocation,
    job_id: JobId,
    submit_dir: &Path,
    started_at: Timestamp,
    on_exit: impl FnOnce(JobExit) + Send + 'static,
) -> Result<RunningJob, RuntimeError> {
    if !submit_dir.is_dir() {
        return Err(RuntimeError::SpawnFailed(format!(
            "submit directory {} does not exist",
            submit_dir.display()
        )));
    }
    let stdout_path = resolve(submit_dir, &spec.output.stdout_template, job_id, &spec.name);
    let stdout = open_sink(&stdout_path)?;
    let (stderr, stderr_path) = match (&spec.output.stderr_template, spec.output.merge_stderr) {
        (Some(template), false) => {
            let path = resolve(submit_dir, template, job_id, &spec.name);
            (open_sink(&path)?, Some(path))
        }
        _ => (
            stdout
                .try_clone()
                .map_err(|e| RuntimeError::SpawnFailed(e.to_string()))?,
            None,
        ),
    };

    let nodelist: Vec<&str> = allocation.bindings.iter().map(|b| b.node.as_str()).collect();
    let mut command = Command::new("/bin/sh");
    command
        .arg("-c")
        .arg(spec.script_text())
        .arg(&spec.name)
        .current_dir(submit_dir)
        .envs(job_environment(spec, job_id.0, submit_dir).iter())
        .env("SLURM_JOB_NODELIST", nodelist.join(","))
        .env("SLURM_NTASKS_PER_NODE", spec.resources.slots_per_node.to_string())
        .stdin(Stdio::null())
        .stdout(stdout)
        .stderr(stderr)
        .process_group(0);
    let mut child = command
        .spawn()
        .map_err(|e| RuntimeError::SpawnFailed(e.to_string()))?;
    drop(command);

    let pid = child.id();
    let exited = Arc::new(AtomicBool::new(false));
    let flag = exited.clone();
    thread::Builder::new()
        .name(format!("job-{job_id}"))
        .spawn(move || {
            let code = child.wait().map(exit_code).unwrap_or(-1);
            flag.store(true, Ordering::SeqCst);
            on_exit(JobExit { job_id, code });
        })
        .map_err(|e| RuntimeError::SpawnFailed(e.to_string()))?;

    Ok(RunningJob {
        job_id,
        pid,
        deadline: started_at.plus(spec.walltime),
        stdout_path,
        stderr_path,
        exited,
        terminating: false,
    })
}

/// Starts termination of every job whose deadline has strictly passed and
/// returns their ids. Jobs already being terminated are not reported again.
pub fn poll_walltime<'a>(
    jobs: impl IntoIterator<Item = &'a mut RunningJob>,
    now: Timestamp,
) -> Vec<JobId> {
    let mut timed_out = Vec::new();
    for job in jobs {
        if now > job.deadline && !job.is_terminating() && !job.has_exited() {
            job.terminate();
            timed_out.push(job.job_id);
        }
    }
    timed_out.sort();
    timed_out
}
