//! Event-driven replay of a workload through the real scheduler.
//!
//! Jobs are submitted at fixed instants and run for a fixed duration (or until
//! their walltime, whichever comes first). The scheduler is only consulted at
//! event instants: submissions and job ends.

use std::collections::BTreeMap;

use crate::clock::Timestamp;
use crate::jobspec::JobSpec;

use super::{ClusterState, JobId, Node, Outcome, Policy, StartEvent};

#[derive(Debug, Clone)]
pub struct SimJob {
    pub spec: JobSpec,
    pub submit_at: Timestamp,
    /// How long the job would run if no walltime applied, in milliseconds.
    pub duration_ms: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SimResult {
    /// Per workload entry: the id assigned, or `None` when submit rejected it.
    pub ids: Vec<Option<JobId>>,
    pub starts: Vec<Option<Timestamp>>,
    pub ends: Vec<Option<Timestamp>>,
}

/// Runs `jobs` to completion and reports when each started and ended.
pub fn simulate(nodes: Vec<Node>, jobs: &[SimJob], policy: Policy) -> SimResult {
    simulate_observed(nodes, jobs, policy, |_, _| {})
}

/// Like [`simulate`], calling `observe` after every submission, start and end.
pub fn simulate_observed(
    nodes: Vec<Node>,
    jobs: &[SimJob],
    policy: Policy,
    mut observe: impl FnMut(&ClusterState, &[StartEvent]),
) -> SimResult {
    let mut state = ClusterState::new(nodes, policy);
    let mut result = SimResult {
        ids: vec![None; jobs.len()],
        starts: vec![None; jobs.len()],
        ends: vec![None; jobs.len()],
    };
    let mut order: Vec<usize> = (0..jobs.len()).collect();
    order.sort_by_key(|&i| (jobs[i].submit_at, i));
    let mut next_submit = 0;
    let mut index_of: BTreeMap<JobId, usize> = BTreeMap::new();
    // (end instant, job) -> timed out?
    let mut finishing: BTreeMap<(Timestamp, JobId), bool> = BTreeMap::new();

    loop {
        let submit_at = order.get(next_submit).map(|&i| jobs[i].submit_at);
        let end_at = finishing.keys().next().map(|(t, _)| *t);
        let now = match (submit_at, end_at) {
            (Some(a), Some(b)) => a.min(b),
            (Some(a), None) => a,
            (None, Some(b)) => b,
            (None, None) => break,
        };

        while let Some((&(t, id), &timed_out)) = finishing.iter().next() {
            if t != now {
                break;
            }
            finishing.remove(&(t, id));
            let outcome = if timed_out { Outcome::Timeout } else { Outcome::Exit(0) };
            state
                .transition(id, outcome, now)
                .expect("running job accepts its end");
            result.ends[index_of[&id]] = Some(now);
            observe(&state, &[]);
        }

        while let Some(&i) = order.get(next_submit) {
            if jobs[i].submit_at != now {
                break;
            }
            next_submit += 1;
            if let Ok(id) = state.submit(jobs[i].spec.clone(), "/", now) {
                result.ids[i] = Some(id);
                index_of.insert(id, i);
            }
            observe(&state, &[]);
        }

        let started = state.tick(now);
        for ev in &started {
            let i = index_of[&ev.job_id];
            result.starts[i] = Some(ev.at);
            let wall = jobs[i].spec.walltime.millis();
            let run = jobs[i].duration_ms.min(wall);
            finishing.insert((ev.at.plus_millis(run), ev.job_id), jobs[i].duration_ms > wall);
        }
        if !started.is_empty() {
            observe(&state, &started);
        }
    }
    result
}
