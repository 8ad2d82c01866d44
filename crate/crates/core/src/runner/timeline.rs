//! Turning scripted timeline actions into sink commands and operator updates.

use std::collections::{BTreeMap, BTreeSet};

use super::sink::SinkCommand;
use crate::control::{Fixed16, PolicyUpdateMsg};
use crate::ids::{ProcessId, StreamId};
use crate::qoc::Requirement;
use crate::scenario::{Scenario, TimelineAction};

#[derive(Debug, Clone)]
pub(crate) enum Step {
    /// A process (re)registers or leaves.
    Sink(ProcessId, SinkCommand),
    /// An operator override sent straight to the edge.
    Operator(PolicyUpdateMsg),
}

/// What each process currently asks for and whether it is registered.
#[derive(Debug, Clone)]
pub(crate) struct ProcessBook {
    requirements: BTreeMap<ProcessId, BTreeMap<StreamId, Requirement>>,
    registered: BTreeSet<ProcessId>,
}

impl ProcessBook {
    pub(crate) fn new(scenario: &Scenario) -> Self {
        ProcessBook {
            requirements: scenario
                .processes
                .iter()
                .map(|p| {
                    let reqs = p
                        .requirements
                        .iter()
                        .map(|r| (r.stream_id, Requirement::new(r.threshold, r.strategy)))
                        .collect();
                    (p.process_id, reqs)
                })
                .collect(),
            registered: BTreeSet::new(),
        }
    }

    /// Registrations for processes that start registered.
    pub(crate) fn initial(&mut self, scenario: &Scenario) -> Vec<Step> {
        scenario
            .processes
            .iter()
            .filter(|p| p.start_registered)
            .flat_map(|p| {
                self.apply(&TimelineAction::Register {
                    process_id: p.process_id,
                })
            })
            .collect()
    }

    pub(crate) fn apply(&mut self, action: &TimelineAction) -> Vec<Step> {
        match *action {
            TimelineAction::Register { process_id } => {
                self.registered.insert(process_id);
                vec![self.register(process_id)]
            }
            TimelineAction::Deregister { process_id } => {
                self.registered.remove(&process_id);
                vec![Step::Sink(process_id, SinkCommand::Deregister)]
            }
            TimelineAction::SetRequirement {
                process_id,
                stream_id,
                threshold,
                strategy,
            } => {
                self.requirements
                    .entry(process_id)
                    .or_default()
                    .insert(stream_id, Requirement::new(threshold, strategy));
                self.reregister(process_id)
            }
            TimelineAction::RemoveRequirement { process_id, stream_id } => {
                if let Some(r) = self.requirements.get_mut(&process_id) {
                    r.remove(&stream_id);
                }
                self.reregister(process_id)
            }
            TimelineAction::SetDelta {
                stream_id,
                process_id,
                delta,
            } => vec![Step::Operator(PolicyUpdateMsg {
                stream: stream_id,
                egresses: vec![(process_id.into(), Fixed16::from_f64(delta))],
            })],
            TimelineAction::ClearDeltas { stream_id } => vec![Step::Operator(PolicyUpdateMsg {
                stream: stream_id,
                egresses: Vec::new(),
            })],
        }
    }

    fn register(&self, process: ProcessId) -> Step {
        let reqs = self.requirements.get(&process).cloned().unwrap_or_default();
        Step::Sink(process, SinkCommand::Register(reqs))
    }

    /// A registered process whose requirements changed registers again; one
    /// left with no requirements leaves.
    fn reregister(&mut self, process: ProcessId) -> Vec<Step> {
        if !self.registered.contains(&process) {
            return Vec::new();
        }
        if self.requirements.get(&process).is_none_or(|r| r.is_empty()) {
            self.registered.remove(&process);
            return vec![Step::Sink(process, SinkCommand::Deregister)];
        }
        vec![self.register(process)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qoc::Strategy;

    fn scenario() -> Scenario {
        serde_json::from_str(
            r#"{
                "duration_s": 1,
                "sensors": [],
                "processes": [
                    {"process_id": 1, "egress_addr": "127.0.0.1:0",
                     "requirements": [{"stream_id": 1, "threshold": 0.96, "strategy": "differential"}]},
                    {"process_id": 2, "egress_addr": "127.0.0.1:0", "start_registered": false,
                     "requirements": [{"stream_id": 1, "threshold": 0.74, "strategy": "differential"}]}
                ]
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn only_starting_processes_register() {
        let s = scenario();
        let mut book = ProcessBook::new(&s);
        let steps = book.initial(&s);
        assert_eq!(steps.len(), 1);
        assert!(matches!(&steps[0], Step::Sink(ProcessId(1), SinkCommand::Register(r)) if r.len() == 1));
    }

    #[test]
    fn requirement_changes_reregister_only_live_processes() {
        let s = scenario();
        let mut book = ProcessBook::new(&s);
        book.initial(&s);
        let set = |p| TimelineAction::SetRequirement {
            process_id: ProcessId(p),
            stream_id: StreamId(1),
            threshold: 0.99,
            strategy: Strategy::Differential,
        };
        match &book.apply(&set(1))[..] {
            [Step::Sink(_, SinkCommand::Register(r))] => assert_eq!(r[&StreamId(1)].threshold, 0.99),
            other => panic!("{other:?}"),
        }
        assert!(book.apply(&set(2)).is_empty());
        let remove = TimelineAction::RemoveRequirement {
            process_id: ProcessId(1),
            stream_id: StreamId(1),
        };
        assert!(matches!(
            &book.apply(&remove)[..],
            [Step::Sink(_, SinkCommand::Deregister)]
        ));
    }

    #[test]
    fn clearing_deltas_sends_an_empty_update() {
        let s = scenario();
        let mut book = ProcessBook::new(&s);
        match &book.apply(&TimelineAction::ClearDeltas { stream_id: StreamId(1) })[..] {
            [Step::Operator(m)] => assert!(m.egresses.is_empty()),
            other => panic!("{other:?}"),
        }
    }
}
