//! Per-packet clone-or-suppress decisions.

use serde::Serialize;

use super::policy::PolicyEntry;
use super::suppress::SuppressionState;
use crate::dpi::FrameClass;
use crate::ids::EgressId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Action {
    Forward,
    Suppress,
}

/// What happens to one packet at each egress of its stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EgressDecision {
    pub class: FrameClass,
    pub actions: Vec<(EgressId, Action)>,
}

impl EgressDecision {
    pub fn forwards(&self) -> usize {
        self.actions.iter().filter(|(_, a)| *a == Action::Forward).count()
    }
}

/// Decide per egress whether a packet of `class` is cloned toward it.
///
/// Only differential packets are ever suppressed; each egress drops them at
/// its delta by error diffusion.
pub fn decide(class: FrameClass, entry: &PolicyEntry, state: &mut SuppressionState) -> EgressDecision {
    let actions = entry
        .egresses
        .iter()
        .map(|e| {
            let counter = state.counter_mut(entry.stream, e.egress);
            let suppress = class.is_suppressible() && counter.diffuser.offer(e.delta);
            if suppress {
                counter.dropped += 1;
                (e.egress, Action::Suppress)
            } else {
                counter.forwarded += 1;
                (e.egress, Action::Forward)
            }
        })
        .collect();
    EgressDecision { class, actions }
}
