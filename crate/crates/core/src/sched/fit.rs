use crate::clock::Timestamp;
use crate::jobspec::ResourceRequest;

use super::{Allocation, Binding, ClusterState, Node};

/// Takes the first `request.nodes` nodes, in configuration order, that each
/// have `slots_per_node` free slots and every requested feature. Slots are
/// never pooled across nodes.
pub fn first_fit(request: &ResourceRequest, nodes: &[Node]) -> Option<Allocation> {
    let wanted = request.nodes as usize;
    let bindings: Vec<Binding> = nodes
        .iter()
        .filter(|n| n.slots_free >= request.slots_per_node && n.has_features(&request.features))
        .take(wanted)
        .map(|n| Binding {
            node: n.id.clone(),
            slots: request.slots_per_node,
        })
        .collect();
    (bindings.len() == wanted).then_some(Allocation { bindings })
}

/// The head job's guaranteed start: when and where.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reservation {
    pub at: Timestamp,
    pub allocation: Allocation,
}

/// Earliest instant at which `head_request` fits, assuming every running job
/// holds its slots until exactly `start_time + walltime`.
///
/// Returns the current instant when the request fits already, and `None`
/// when it would not fit even after every running job ends.
pub fn shadow_time(head_request: &ResourceRequest, state: &ClusterState) -> Option<Reservation> {
    let now = state.clock();
    if let Some(allocation) = first_fit(head_request, state.nodes()) {
        return Some(Reservation { at: now, allocation });
    }

    let mut releases: Vec<(Timestamp, &Allocation)> = state
        .running()
        .filter_map(|j| Some((j.deadline()?.max(now), j.allocation.as_ref()?)))
        .collect();
    releases.sort_by_key(|(at, _)| *at);

    let mut nodes = state.nodes().to_vec();
    let mut i = 0;
    while i < releases.len() {
        let at = releases[i].0;
        while i < releases.len() && releases[i].0 == at {
            for b in &releases[i].1.bindings {
                if let Some(n) = nodes.iter_mut().find(|n| n.id == b.node) {
                    n.slots_free = (n.slots_free + b.slots).min(n.slots_total);
                }
            }
            i += 1;
        }
        if let Some(allocation) = first_fit(head_request, &nodes) {
            return Some(Reservation { at, allocation });
        }
    }
    None
}
