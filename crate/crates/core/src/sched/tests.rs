use std::path::PathBuf;

use proptest::prelude::*;

use super::*;
use crate::jobspec::{Dialect, OutputPolicy, Walltime};

fn spec(nodes: u32, slots: u32, wall: u64) -> JobSpec {
    JobSpec {
        name: "j".into(),
        resources: ResourceRequest::new(nodes, slots),
        walltime: Walltime(wall),
        output: OutputPolicy::merged("out"),
        body: vec!["true".into()],
        dialect: Dialect::Slurm,
    }
}

fn two_single_slot_nodes() -> ClusterState {
    ClusterState::new(vec![Node::new("n1", 1), Node::new("n2", 1)], Policy::default())
}

fn secs(s: u64) -> Timestamp {
    Timestamp::from_secs(s)
}

#[test]
fn submit_assigns_increasing_ids() {
    let mut s = two_single_slot_nodes();
    let a = s.submit(spec(1, 1, 10), "/w", secs(0)).unwrap();
    let b = s.submit(spec(1, 1, 10), "/w", secs(0)).unwrap();
    assert_eq!((a, b), (JobId(1), JobId(2)));
    assert_eq!(s.job(a).unwrap().state, JobState::Pending);
    assert_eq!(s.queue().collect::<Vec<_>>(), vec![a, b]);
}

#[test]
fn submit_rejects_impossible_requests() {
    let mut s = ClusterState::new(vec![Node::new("n1", 8)], Policy::default());
    assert!(matches!(
        s.submit(spec(2, 1, 10), "/w", secs(0)),
        Err(SchedError::Unsatisfiable(_))
    ));
    assert!(matches!(
        s.submit(spec(1, 16, 10), "/w", secs(0)),
        Err(SchedError::Unsatisfiable(_))
    ));
    let mut tpu = spec(1, 1, 10);
    tpu.resources.features.insert("tpu".into());
    assert!(matches!(
        s.submit(tpu, "/w", secs(0)),
        Err(SchedError::Unsatisfiable(_))
    ));
    // A rejected submission does not consume an id.
    assert_eq!(s.submit(spec(1, 1, 10), "/w", secs(0)).unwrap(), JobId(1));
}

#[test]
fn features_and_slots_must_meet_on_one_node() {
    let mut s = ClusterState::new(
        vec![Node::new("n1", 8), Node::new("g1", 2).with_feature("gpu")],
        Policy::default(),
    );
    let mut req = spec(1, 4, 10);
    req.resources.features.insert("gpu".into());
    assert!(matches!(
        s.submit(req, "/w", secs(0)),
        Err(SchedError::Unsatisfiable(_))
    ));
}

#[test]
fn idle_cluster_starts_fitting_job() {
    let mut s = two_single_slot_nodes();
    let id = s.submit(spec(1, 1, 10), "/w", secs(0)).unwrap();
    let events = s.tick(secs(0));
    assert_eq!(events.len(), 1);
    assert_eq!(events[0].job_id, id);
    assert!(!events[0].backfilled);
    assert_eq!(s.job(id).unwrap().state, JobState::Running);
    assert_eq!(s.nodes()[0].slots_free, 0);
    s.check_invariants().unwrap();
}

/// n1 busy until 100 s, head wants both nodes, a third job arrives at 40 s.
fn blocked_head_with_candidate(candidate_wall: u64) -> (ClusterState, JobId) {
    let mut s = two_single_slot_nodes();
    s.submit(spec(1, 1, 100), "/w", secs(0)).unwrap();
    s.tick(secs(0));
    s.submit(spec(2, 1, 10), "/w", secs(10)).unwrap();
    assert!(s.tick(secs(10)).is_empty());
    let c = s.submit(spec(1, 1, candidate_wall), "/w", secs(40)).unwrap();
    (s, c)
}

#[test]
fn backfills_job_that_ends_before_shadow() {
    let (mut s, c) = blocked_head_with_candidate(50);
    let events = s.tick(secs(40));
    assert_eq!(events.len(), 1);
    assert_eq!(events[0].job_id, c);
    assert!(events[0].backfilled);
    s.check_invariants().unwrap();
}

#[test]
fn refuses_backfill_that_would_delay_head() {
    let (mut s, c) = blocked_head_with_candidate(70);
    assert!(s.tick(secs(40)).is_empty());
    assert_eq!(s.job(c).unwrap().state, JobState::Pending);
}

#[test]
fn backfills_long_job_on_unreserved_node() {
    // Head needs one 2-slot node; only n1 qualifies, so n2 is never reserved.
    let mut s = ClusterState::new(vec![Node::new("n1", 2), Node::new("n2", 1)], Policy::default());
    s.submit(spec(1, 2, 100), "/w", secs(0)).unwrap();
    s.tick(secs(0));
    let head = s.submit(spec(1, 2, 10), "/w", secs(0)).unwrap();
    let long = s.submit(spec(1, 1, 1000), "/w", secs(0)).unwrap();
    let events = s.tick(secs(1));
    assert_eq!(events.iter().map(|e| e.job_id).collect::<Vec<_>>(), vec![long]);
    assert_eq!(s.job(head).unwrap().state, JobState::Pending);
}

#[test]
fn backfill_repeats_until_nothing_starts() {
    // n1 holds the head's reservation. The 3 s job first fits on n1 and is
    // refused; once the short job fills n1 its first fit moves to n2.
    let mut s = ClusterState::new(vec![Node::new("n1", 2), Node::new("n2", 1)], Policy::default());
    s.submit(spec(1, 1, 2), "/w", secs(0)).unwrap();
    let head = s.submit(spec(1, 2, 1), "/w", secs(0)).unwrap();
    let long = s.submit(spec(1, 1, 3), "/w", secs(0)).unwrap();
    let short = s.submit(spec(1, 1, 2), "/w", secs(0)).unwrap();
    let started: Vec<JobId> = s.tick(secs(0)).iter().map(|e| e.job_id).collect();
    assert_eq!(started, vec![JobId(1), short, long]);
    assert_eq!(s.job(long).unwrap().allocation.as_ref().unwrap().bindings[0].node, "n2");
    assert_eq!(s.job(head).unwrap().state, JobState::Pending);
}

#[test]
fn no_backfill_when_disabled() {
    let mut s = two_single_slot_nodes();
    s = ClusterState::new(s.nodes().to_vec(), Policy { backfill: false });
    s.submit(spec(1, 1, 100), "/w", secs(0)).unwrap();
    s.tick(secs(0));
    s.submit(spec(2, 1, 10), "/w", secs(10)).unwrap();
    s.submit(spec(1, 1, 5), "/w", secs(10)).unwrap();
    assert!(s.tick(secs(10)).is_empty());
}

#[test]
fn transition_table() {
    let mut s = two_single_slot_nodes();
    let a = s.submit(spec(1, 1, 10), "/w", secs(0)).unwrap();
    s.tick(secs(0));
    let rec = s.transition(a, Outcome::Exit(0), secs(3)).unwrap();
    assert_eq!(rec.state, JobState::Completed { exit_code: 0 });
    assert_eq!(rec.end_time, Some(secs(3)));
    assert_eq!(s.nodes()[0].slots_free, 1);
    assert!(matches!(
        s.transition(a, Outcome::Cancel, secs(4)),
        Err(SchedError::InvalidTransition { .. })
    ));

    let b = s.submit(spec(1, 1, 10), "/w", secs(5)).unwrap();
    s.tick(secs(5));
    assert_eq!(
        s.transition(b, Outcome::Timeout, secs(16)).unwrap().state,
        JobState::TimedOut
    );

    let c = s.submit(spec(1, 1, 10), "/w", secs(20)).unwrap();
    assert!(matches!(
        s.transition(c, Outcome::Exit(0), secs(20)),
        Err(SchedError::InvalidTransition { .. })
    ));
    assert_eq!(
        s.transition(c, Outcome::Cancel, secs(21)).unwrap().state,
        JobState::Cancelled
    );
    assert_eq!(s.queue().count(), 0);
    assert_eq!(
        s.transition(JobId(99), Outcome::Cancel, secs(22)),
        Err(SchedError::NoSuchJob(JobId(99)))
    );
    s.check_invariants().unwrap();
}

#[test]
fn restore_replays_lifecycle() {
    let mut live = two_single_slot_nodes();
    let a = live.submit(spec(1, 1, 10), "/w", secs(0)).unwrap();
    let b = live.submit(spec(2, 1, 10), "/w", secs(0)).unwrap();
    let events = live.tick(secs(1));
    live.transition(a, Outcome::Exit(0), secs(2)).unwrap();

    let mut restored = two_single_slot_nodes();
    restored
        .restore_submitted(a, spec(1, 1, 10), PathBuf::from("/w"), secs(0))
        .unwrap();
    restored
        .restore_submitted(b, spec(2, 1, 10), PathBuf::from("/w"), secs(0))
        .unwrap();
    restored
        .restore_started(a, events[0].allocation.clone(), secs(1))
        .unwrap();
    restored
        .restore_ended(a, JobState::Completed { exit_code: 0 }, secs(2))
        .unwrap();
    assert_eq!(restored, live);
    assert!(restored
        .restore_submitted(a, spec(1, 1, 10), PathBuf::from("/w"), secs(3))
        .is_err());
}

#[derive(Debug, Clone)]
enum Op {
    Submit { nodes: u32, slots: u32, wall: u64 },
    Tick,
    Advance(u64),
    Apply { pick: usize, outcome: Outcome },
}

fn op() -> impl Strategy<Value = Op> {
    let outcome = prop_oneof![
        (-2i32..3).prop_map(Outcome::Exit),
        Just(Outcome::Timeout),
        Just(Outcome::Cancel),
        Just(Outcome::DaemonFailure("boom".into())),
    ];
    prop_oneof![
        (1u32..=3, 1u32..=4, 1u64..=20).prop_map(|(nodes, slots, wall)| Op::Submit {
            nodes,
            slots,
            wall
        }),
        Just(Op::Tick),
        (0u64..5_000).prop_map(Op::Advance),
        (0usize..40, outcome).prop_map(|(pick, outcome)| Op::Apply { pick, outcome }),
    ]
}

fn legal(from: &JobState, outcome: &Outcome) -> bool {
    matches!(
        (from, outcome),
        (JobState::Pending, Outcome::Cancel) | (JobState::Running, _)
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    /// Illegal transitions are refused without touching state; legal ones
    /// keep every invariant.
    #[test]
    fn random_operation_sequences(ops in prop::collection::vec(op(), 1..120), backfill in any::<bool>()) {
        let mut s = ClusterState::new(
            vec![Node::new("a", 4), Node::new("b", 2), Node::new("c", 4)],
            Policy { backfill },
        );
        let mut now = Timestamp(0);
        for op in ops {
            match op {
                Op::Submit { nodes, slots, wall } => {
                    let r = s.submit(spec(nodes, slots, wall), "/w", now);
                    prop_assert_eq!(r.is_ok(), !(nodes == 3 && slots > 2));
                }
                Op::Tick => {
                    for ev in s.tick(now) {
                        prop_assert_eq!(&s.job(ev.job_id).unwrap().state, &JobState::Running);
                    }
                }
                Op::Advance(ms) => now = now.plus_millis(ms),
                Op::Apply { pick, outcome } => {
                    let id = JobId(pick as u64);
                    let before = s.clone();
                    match s.job(id).map(|j| j.state.clone()) {
                        None => prop_assert_eq!(s.transition(id, outcome, now), Err(SchedError::NoSuchJob(id))),
                        Some(from) => {
                            let r = s.transition(id, outcome.clone(), now);
                            if legal(&from, &outcome) {
                                prop_assert!(r.unwrap().state.is_terminal());
                            } else {
                                let is_invalid = matches!(r, Err(SchedError::InvalidTransition { .. }));
                                prop_assert!(is_invalid);
                                prop_assert_eq!(&s, &before);
                            }
                        }
                    }
                }
            }
            if let Err(e) = s.check_invariants() {
                return Err(TestCaseError::fail(e));
            }
        }
    }

    #[test]
    fn tick_is_idempotent(
        jobs in prop::collection::vec((1u32..=2, 1u32..=2, 1u64..=6), 1..10),
        first in 0usize..10,
    ) {
        let mut s = ClusterState::new(vec![Node::new("n1", 2), Node::new("n2", 1)], Policy::default());
        for (i, &(n, sl, w)) in jobs.iter().enumerate() {
            let _ = s.submit(spec(n, sl, w), "/w", Timestamp(0));
            if i == first {
                s.tick(Timestamp(0));
            }
        }
        s.tick(Timestamp(0));
        let settled = s.clone();
        prop_assert!(s.tick(Timestamp(0)).is_empty());
        prop_assert_eq!(s, settled);
    }

    #[test]
    fn scheduling_is_deterministic(
        jobs in prop::collection::vec((1u32..=2, 1u32..=2, 1u64..=6, 0u64..8), 1..12)
    ) {
        let workload: Vec<sim::SimJob> = jobs
            .iter()
            .map(|&(n, sl, w, at)| sim::SimJob {
                spec: spec(n, sl, w),
                submit_at: secs(at),
                duration_ms: w * 1000,
            })
            .collect();
        let nodes = vec![Node::new("n1", 2), Node::new("n2", 2)];
        let a = sim::simulate(nodes.clone(), &workload, Policy::default());
        let b = sim::simulate(nodes, &workload, Policy::default());
        prop_assert_eq!(a, b);
    }
}
