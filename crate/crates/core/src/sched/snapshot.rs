use serde::{Deserialize, Serialize};

use crate::clock::Timestamp;
use crate::jobspec::format_hms;

use super::{ClusterState, JobId, JobState, StateCode};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusFilter {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<StateCode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub job_id: Option<JobId>,
}

/// One line of `stat` output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusRow {
    pub id: JobId,
    pub name: String,
    pub state: JobState,
    pub nodes: u32,
    pub slots_per_node: u32,
    /// Seconds run so far, or total run time once finished; absent if never started.
    pub elapsed_secs: Option<u64>,
    pub limit_secs: u64,
}

impl StatusRow {
    pub fn elapsed_text(&self) -> String {
        self.elapsed_secs.map(format_hms).unwrap_or_default()
    }

    pub fn limit_text(&self) -> String {
        format_hms(self.limit_secs)
    }

    pub fn node_slots(&self) -> String {
        format!("{}x{}", self.nodes, self.slots_per_node)
    }
}

impl ClusterState {
    /// Rows for every job matching `filter`, ascending by id.
    pub fn snapshot(&self, filter: &StatusFilter, now: Timestamp) -> Vec<StatusRow> {
        let now = now.max(self.clock());
        self.jobs()
            .filter(|j| filter.state.is_none_or(|s| j.state.code() == s))
            .filter(|j| filter.name.as_deref().is_none_or(|n| j.spec.name == n))
            .filter(|j| filter.job_id.is_none_or(|id| j.id == id))
            .map(|j| {
                let elapsed_ms = match (&j.state, j.start_time, j.end_time) {
                    (JobState::Running, Some(start), _) => Some(now.millis_since(start)),
                    (_, Some(start), Some(end)) => Some(end.millis_since(start)),
                    _ => None,
                };
                StatusRow {
                    id: j.id,
                    name: j.spec.name.clone(),
                    state: j.state.clone(),
                    nodes: j.spec.resources.nodes,
                    slots_per_node: j.spec.resources.slots_per_node,
                    elapsed_secs: elapsed_ms.map(|ms| ms / 1000),
                    limit_secs: j.spec.walltime.secs(),
                }
            })
            .collect()
    }
}
