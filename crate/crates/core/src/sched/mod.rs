//! Cluster and queue state, FIFO + EASY backfill, and the job lifecycle.
//!
//! [`ClusterState`] is a plain value with a single owner. Every mutation goes
//! through [`ClusterState::submit`], [`ClusterState::tick`] or
//! [`ClusterState::transition`], each of which leaves the slot-conservation
//! invariant intact.

mod fit;
pub mod sim;
mod snapshot;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::clock::Timestamp;
use crate::jobspec::{JobSpec, ResourceRequest};

pub use fit::{first_fit, shadow_time, Reservation};
pub use snapshot::{StatusFilter, StatusRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JobId(pub u64);

impl fmt::Display for JobId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A modeled compute node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub id: String,
    pub slots_total: u32,
    pub features: BTreeSet<String>,
    pub slots_free: u32,
}

impl Node {
    pub fn new(id: impl Into<String>, slots: u32) -> Self {
        Self {
            id: id.into(),
            slots_total: slots,
            features: BTreeSet::new(),
            slots_free: slots,
        }
    }

    pub fn with_feature(mut self, tag: impl Into<String>) -> Self {
        self.features.insert(tag.into());
        self
    }

    fn has_features(&self, wanted: &BTreeSet<String>) -> bool {
        wanted.iter().all(|f| self.features.contains(f))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Binding {
    pub node: String,
    pub slots: u32,
}

/// Slots bound to a job, one entry per node, in node configuration order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Allocation {
    pub bindings: Vec<Binding>,
}

impl Allocation {
    pub fn uses_node(&self, node: &str) -> bool {
        self.bindings.iter().any(|b| b.node == node)
    }

    pub fn node_count(&self) -> usize {
        self.bindings.len()
    }
}

impl fmt::Display for Allocation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .bindings
            .iter()
            .map(|b| format!("{}:{}", b.node, b.slots))
            .collect();
        f.write_str(&parts.join(","))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JobState {
    Pending,
    Running,
    Completed { exit_code: i32 },
    Failed { reason: String },
    TimedOut,
    Cancelled,
}

impl JobState {
    pub fn code(&self) -> StateCode {
        match self {
            JobState::Pending => StateCode::Pending,
            JobState::Running => StateCode::Running,
            JobState::Completed { .. } => StateCode::Completed,
            JobState::Failed { .. } => StateCode::Failed,
            JobState::TimedOut => StateCode::TimedOut,
            JobState::Cancelled => StateCode::Cancelled,
        }
    }

    pub fn is_terminal(&self) -> bool {
        !matches!(self, JobState::Pending | JobState::Running)
    }
}

/// Two-letter state codes shown by `stat`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StateCode {
    #[serde(rename = "PD")]
    Pending,
    #[serde(rename = "R")]
    Running,
    #[serde(rename = "CD")]
    Completed,
    #[serde(rename = "F")]
    Failed,
    #[serde(rename = "TO")]
    TimedOut,
    #[serde(rename = "CA")]
    Cancelled,
}

impl StateCode {
    pub fn as_str(self) -> &'static str {
        match self {
            StateCode::Pending => "PD",
            StateCode::Running => "R",
            StateCode::Completed => "CD",
            StateCode::Failed => "F",
            StateCode::TimedOut => "TO",
            StateCode::Cancelled => "CA",
        }
    }
}

impl fmt::Display for StateCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StateCode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.to_ascii_uppercase().as_str() {
            "PD" | "PENDING" => StateCode::Pending,
            "R" | "RUNNING" => StateCode::Running,
            "CD" | "COMPLETED" => StateCode::Completed,
            "F" | "FAILED" => StateCode::Failed,
            "TO" | "TIMEOUT" | "TIMEDOUT" => StateCode::TimedOut,
            "CA" | "CANCELLED" => StateCode::Cancelled,
            _ => return Err(format!("unknown job state {s:?}")),
        })
    }
}

/// What happened to a job, fed to [`ClusterState::transition`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Exit(i32),
    Timeout,
    Cancel,
    DaemonFailure(String),
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Exit(code) => write!(f, "exit({code})"),
            Outcome::Timeout => f.write_str("timeout"),
            Outcome::Cancel => f.write_str("cancel"),
            Outcome::DaemonFailure(reason) => write!(f, "failure({reason})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobRecord {
    pub id: JobId,
    pub spec: JobSpec,
    pub state: JobState,
    pub submit_time: Timestamp,
    pub start_time: Option<Timestamp>,
    pub end_time: Option<Timestamp>,
    pub allocation: Option<Allocation>,
    pub submit_dir: PathBuf,
}

impl JobRecord {
    /// When the job's walltime runs out, if it has started.
    pub fn deadline(&self) -> Option<Timestamp> {
        self.start_time.map(|s| s.plus(self.spec.walltime))
    }
}

/// A job that [`ClusterState::tick`] just started.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StartEvent {
    pub job_id: JobId,
    pub allocation: Allocation,
    pub at: Timestamp,
    /// Started out of order under the backfill rule.
    pub backfilled: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Policy {
    pub backfill: bool,
}

impl Default for Policy {
    fn default() -> Self {
        Self { backfill: true }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SchedError {
    #[error("request can never be satisfied: {0}")]
    Unsatisfiable(String),
    #[error("no such job {0}")]
    NoSuchJob(JobId),
    #[error("job {job} cannot take {outcome} while {from}")]
    InvalidTransition {
        job: JobId,
        from: StateCode,
        outcome: String,
    },
    #[error("inconsistent restore: {0}")]
    Restore(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub id: JobId,
    pub spec: JobSpec,
    pub state: JobState,
    pub submit_dir: PathBuf,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ledger {
    pub jobs: Vec<LedgerEntry>,
    pub queue: Vec<JobId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterState {
    nodes: Vec<Node>,
    queue: VecDeque<JobId>,
    jobs: BTreeMap<JobId, JobRecord>,
    clock: Timestamp,
    next_id: u64,
    policy: Policy,
}

impl ClusterState {
    pub fn new(nodes: Vec<Node>, policy: Policy) -> Self {
        let nodes = nodes
            .into_iter()
            .map(|mut n| {
                n.slots_free = n.slots_total;
                n
            })
            .collect();
        Self {
            nodes,
            queue: VecDeque::new(),
            jobs: BTreeMap::new(),
            clock: Timestamp::default(),
            next_id: 1,
            policy,
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn queue(&self) -> impl Iterator<Item = JobId> + '_ {
        self.queue.iter().copied()
    }

    pub fn jobs(&self) -> impl Iterator<Item = &JobRecord> {
        self.jobs.values()
    }

    pub fn job(&self, id: JobId) -> Option<&JobRecord> {
        self.jobs.get(&id)
    }

    pub fn running(&self) -> impl Iterator<Item = &JobRecord> {
        self.jobs.values().filter(|j| j.state == JobState::Running)
    }

    pub fn clock(&self) -> Timestamp {
        self.clock
    }

    pub fn policy(&self) -> Policy {
        self.policy
    }

    /// The id the next accepted submission will receive.
    pub fn next_id(&self) -> JobId {
        JobId(self.next_id)
    }

    fn advance(&mut self, now: Timestamp) -> Timestamp {
        self.clock = self.clock.max(now);
        self.clock
    }

    /// Rejects requests that could not run even on an idle cluster.
    pub fn check_satisfiable(&self, request: &ResourceRequest) -> Result<(), SchedError> {
        let wanted = request.nodes as usize;
        if wanted > self.nodes.len() {
            return Err(SchedError::Unsatisfiable(format!(
                "{} nodes requested, {} configured",
                request.nodes,
                self.nodes.len()
            )));
        }
        if let Some(missing) = request
            .features
            .iter()
            .find(|f| !self.nodes.iter().any(|n| n.features.contains(*f)))
        {
            return Err(SchedError::Unsatisfiable(format!(
                "no node has feature {missing:?}"
            )));
        }
        let qualifying = self
            .nodes
            .iter()
            .filter(|n| n.slots_total >= request.slots_per_node && n.has_features(&request.features))
            .count();
        if qualifying < wanted {
            return Err(SchedError::Unsatisfiable(format!(
                "{} nodes with {} slots{} requested, {} qualify",
                request.nodes,
                request.slots_per_node,
                if request.features.is_empty() {
                    String::new()
                } else {
                    format!(" and features {:?}", request.features)
                },
                qualifying
            )));
        }
        Ok(())
    }

    pub fn submit(
        &mut self,
        spec: JobSpec,
        submit_dir: impl Into<PathBuf>,
        now: Timestamp,
    ) -> Result<JobId, SchedError> {
        self.check_satisfiable(&spec.resources)?;
        let now = self.advance(now);
        let id = JobId(self.next_id);
        self.next_id += 1;
        self.jobs.insert(
            id,
            JobRecord {
                id,
                spec,
                state: JobState::Pending,
                submit_time: now,
                start_time: None,
                end_time: None,
                allocation: None,
                submit_dir: submit_dir.into(),
            },
        );
        self.queue.push_back(id);
        Ok(id)
    }

    fn bind(&mut self, allocation: &Allocation) {
        for b in &allocation.bindings {
            let node = self
                .nodes
                .iter_mut()
                .find(|n| n.id == b.node)
                .expect("allocation names a configured node");
            node.slots_free = node
                .slots_free
                .checked_sub(b.slots)
                .expect("allocation fits free slots");
        }
    }

    fn release(&mut self, allocation: &Allocation) {
        for b in &allocation.bindings {
            if let Some(node) = self.nodes.iter_mut().find(|n| n.id == b.node) {
                node.slots_free = (node.slots_free + b.slots).min(node.slots_total);
            }
        }
    }

    fn start(&mut self, id: JobId, allocation: Allocation, now: Timestamp) {
        self.bind(&allocation);
        let job = self.jobs.get_mut(&id).expect("queued job exists");
        job.state = JobState::Running;
        job.start_time = Some(now);
        job.allocation = Some(allocation);
        self.queue.retain(|q| *q != id);
    }

    /// One scheduling pass at `now`.
    ///
    /// Starts queue heads in order while they fit. If the head is blocked and
    /// backfill is on, computes the head's reservation and starts later jobs
    /// that fit now and either finish by the shadow time or avoid every
    /// reserved node. Backfill passes repeat until one starts nothing, so a
    /// second call at the same instant never starts more jobs.
    pub fn tick(&mut self, now: Timestamp) -> Vec<StartEvent> {
        let now = self.advance(now);
        let mut events = Vec::new();

        while let Some(&head) = self.queue.front() {
            let request = &self.jobs[&head].spec.resources;
            match first_fit(request, &self.nodes) {
                Some(allocation) => {
                    self.start(head, allocation.clone(), now);
                    events.push(StartEvent {
                        job_id: head,
                        allocation,
                        at: now,
                        backfilled: false,
                    });
                }
                None => break,
            }
        }

        if !self.policy.backfill || self.queue.len() < 2 {
            return events;
        }
        let head = self.queue[0];
        let reservation = shadow_time(&self.jobs[&head].spec.resources, self);
        loop {
            let before = events.len();
            let candidates: Vec<JobId> = self.queue.iter().skip(1).copied().collect();
            for id in candidates {
                let job = &self.jobs[&id];
                let Some(allocation) = first_fit(&job.spec.resources, &self.nodes) else {
                    continue;
                };
                let allowed = match &reservation {
                    Some(r) => {
                        now.plus(job.spec.walltime) <= r.at
                            || !allocation.bindings.iter().any(|b| r.allocation.uses_node(&b.node))
                    }
                    // The head can never start; it blocks nothing.
                    None => true,
                };
                if allowed {
                    self.start(id, allocation.clone(), now);
                    events.push(StartEvent {
                        job_id: id,
                        allocation,
                        at: now,
                        backfilled: true,
                    });
                }
            }
            // A start can move a later job's first fit off the reserved nodes.
            if events.len() == before {
                return events;
            }
        }
    }

    /// Applies `outcome` to a job, following the lifecycle table:
    /// Pending may only be cancelled; Running may exit, time out, be
    /// cancelled or fail; terminal states accept nothing.
    pub fn transition(
        &mut self,
        id: JobId,
        outcome: Outcome,
        now: Timestamp,
    ) -> Result<JobRecord, SchedError> {
        let job = self.jobs.get(&id).ok_or(SchedError::NoSuchJob(id))?;
        let next = match (&job.state, &outcome) {
            (JobState::Pending, Outcome::Cancel) => JobState::Cancelled,
            (JobState::Running, Outcome::Exit(code)) => JobState::Completed { exit_code: *code },
            (JobState::Running, Outcome::Timeout) => JobState::TimedOut,
            (JobState::Running, Outcome::Cancel) => JobState::Cancelled,
            (JobState::Running, Outcome::DaemonFailure(reason)) => JobState::Failed {
                reason: reason.clone(),
            },
            (state, _) => {
                return Err(SchedError::InvalidTransition {
                    job: id,
                    from: state.code(),
                    outcome: outcome.to_string(),
                })
            }
        };
        let held = (job.state == JobState::Running).then(|| job.allocation.clone());
        let now = self.advance(now);
        if let Some(allocation) = held {
            self.release(&allocation.expect("running job has allocation"));
        } else {
            self.queue.retain(|q| *q != id);
        }
        let job = self.jobs.get_mut(&id).expect("checked above");
        job.state = next;
        job.end_time = Some(now);
        Ok(job.clone())
    }

    /// Re-inserts a journaled submission. Ids must arrive in ascending order.
    pub fn restore_submitted(
        &mut self,
        id: JobId,
        spec: JobSpec,
        submit_dir: PathBuf,
        at: Timestamp,
    ) -> Result<(), SchedError> {
        if id.0 < self.next_id {
            return Err(SchedError::Restore(format!("job id {id} is not increasing")));
        }
        self.advance(at);
        self.next_id = id.0 + 1;
        self.jobs.insert(
            id,
            JobRecord {
                id,
                spec,
                state: JobState::Pending,
                submit_time: at,
                start_time: None,
                end_time: None,
                allocation: None,
                submit_dir,
            },
        );
        self.queue.push_back(id);
        Ok(())
    }

    /// Re-applies a journaled start with its recorded allocation.
    pub fn restore_started(
        &mut self,
        id: JobId,
        allocation: Allocation,
        at: Timestamp,
    ) -> Result<(), SchedError> {
        let job = self.jobs.get(&id).ok_or(SchedError::NoSuchJob(id))?;
        if job.state != JobState::Pending {
            return Err(SchedError::Restore(format!("job {id} started twice")));
        }
        for b in &allocation.bindings {
            let node = self
                .nodes
                .iter()
                .find(|n| n.id == b.node)
                .ok_or_else(|| SchedError::Restore(format!("unknown node {:?}", b.node)))?;
            if node.slots_free < b.slots {
                return Err(SchedError::Restore(format!(
                    "node {:?} over-allocated by job {id}",
                    b.node
                )));
            }
        }
        let now = self.advance(at);
        self.start(id, allocation, now);
        Ok(())
    }

    /// Re-applies a journaled terminal state.
    pub fn restore_ended(
        &mut self,
        id: JobId,
        state: JobState,
        at: Timestamp,
    ) -> Result<(), SchedError> {
        if !state.is_terminal() {
            return Err(SchedError::Restore(format!("job {id} ended in {state:?}")));
        }
        let job = self.jobs.get(&id).ok_or(SchedError::NoSuchJob(id))?;
        match job.state {
            JobState::Running => {
                let allocation = job.allocation.clone().expect("running job has allocation");
                self.release(&allocation);
            }
            JobState::Pending => self.queue.retain(|q| *q != id),
            _ => return Err(SchedError::Restore(format!("job {id} ended twice"))),
        }
        let now = self.advance(at);
        let job = self.jobs.get_mut(&id).expect("checked above");
        job.state = state;
        job.end_time = Some(now);
        Ok(())
    }

    /// The job ledger: every record's identity, spec and state, plus the
    /// pending queue order. Timestamps are left out.
    pub fn ledger(&self) -> Ledger {
        Ledger {
            jobs: self
                .jobs
                .values()
                .map(|j| LedgerEntry {
                    id: j.id,
                    spec: j.spec.clone(),
                    state: j.state.clone(),
                    submit_dir: j.submit_dir.clone(),
                })
                .collect(),
            queue: self.queue.iter().copied().collect(),
        }
    }

    /// Verifies slot conservation, queue consistency and allocation presence.
    pub fn check_invariants(&self) -> Result<(), String> {
        for node in &self.nodes {
            if node.slots_free > node.slots_total {
                return Err(format!("node {} has more free slots than total", node.id));
            }
            let bound: u32 = self
                .running()
                .filter_map(|j| j.allocation.as_ref())
                .flat_map(|a| a.bindings.iter())
                .filter(|b| b.node == node.id)
                .map(|b| b.slots)
                .sum();
            if node.slots_total - node.slots_free != bound {
                return Err(format!(
                    "node {}: {} slots in use but running jobs hold {}",
                    node.id,
                    node.slots_total - node.slots_free,
                    bound
                ));
            }
        }
        let pending: Vec<JobId> = self
            .jobs
            .values()
            .filter(|j| j.state == JobState::Pending)
            .map(|j| j.id)
            .collect();
        if !self.queue.iter().copied().eq(pending.iter().copied()) {
            return Err(format!(
                "queue {:?} does not match pending jobs {:?}",
                self.queue, pending
            ));
        }
        for job in self.jobs.values() {
            let ran = job.start_time.is_some();
            if job.allocation.is_some() != ran {
                return Err(format!("job {} allocation does not match its history", job.id));
            }
            if let Some(a) = &job.allocation {
                if a.node_count() != job.spec.resources.nodes as usize
                    || a.bindings.iter().any(|b| b.slots != job.spec.resources.slots_per_node)
                {
                    return Err(format!("job {} allocation does not match its request", job.id));
                }
            }
            if let (Some(s), Some(e)) = (job.start_time, job.end_time) {
                if s < job.submit_time || e < s {
                    return Err(format!("job {} timestamps out of order", job.id));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
