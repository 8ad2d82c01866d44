//! Decodable-frame ratio: the media-free quality proxy.
//!
//! A frame is delivered when every one of its packets arrived, and decodable
//! when it is delivered and so is every frame back to its GOP's reference.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dpi::FrameClass;
use crate::sensor::SyntheticSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FrameRecord {
    pub class: FrameClass,
    pub expected: u32,
    pub received: u32,
}

impl FrameRecord {
    pub fn delivered(&self) -> bool {
        self.received >= self.expected
    }
}

/// Per-egress record of which frames arrived whole.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct FrameLedger {
    frames: BTreeMap<u64, FrameRecord>,
}

impl FrameLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Declare a frame and how many packets make it whole.
    pub fn expect(&mut self, index: u64, class: FrameClass, expected: u32) {
        self.frames.entry(index).or_insert(FrameRecord {
            class,
            expected,
            received: 0,
        });
    }

    /// Count one received packet of a declared frame.
    pub fn receive(&mut self, index: u64) {
        if let Some(f) = self.frames.get_mut(&index) {
            f.received += 1;
        }
    }

    /// Declare every frame of a synthetic stream up to and including `last`.
    pub fn expect_synthetic(&mut self, spec: &SyntheticSpec, first: u64, last: u64) {
        for i in first..=last {
            let class = spec.class_of_frame(i);
            self.expect(i, class, spec.frame_packets(class));
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> impl Iterator<Item = (&u64, &FrameRecord)> {
        self.frames.iter()
    }

    /// Decodability of each frame in index order.
    pub fn decodable(&self) -> Vec<bool> {
        let mut chain_ok = false;
        self.frames
            .values()
            .map(|f| {
                chain_ok = f.delivered() && (f.class == FrameClass::Reference || chain_ok);
                chain_ok
            })
            .collect()
    }
}

/// Fraction of ledger frames that are decodable; `None` for an empty ledger.
pub fn decodable_ratio(ledger: &FrameLedger) -> Option<f64> {
    if ledger.is_empty() {
        return None;
    }
    let ok = ledger.decodable().into_iter().filter(|&d| d).count();
    Some(ok as f64 / ledger.len() as f64)
}

/// Decodable ratio of a frame sequence after dropping the given packets.
///
/// `frames` lists (class, packet count); `dropped` holds global packet
/// indices in stream order.
pub fn ratio_after_drops(frames: &[(FrameClass, u32)], dropped: &[usize]) -> f64 {
    let mut ledger = FrameLedger::new();
    let mut owner = Vec::new();
    for (i, &(class, n)) in frames.iter().enumerate() {
        ledger.expect(i as u64, class, n);
        owner.extend(std::iter::repeat_n(i as u64, n as usize));
    }
    let mut lost = vec![false; owner.len()];
    for &d in dropped {
        lost[d] = true;
    }
    for (p, &frame) in owner.iter().enumerate() {
        if !lost[p] {
            ledger.receive(frame);
        }
    }
    decodable_ratio(&ledger).unwrap_or(1.0)
}

/// Frame layout of `gops` GOPs of a synthetic stream.
pub fn synthetic_frames(spec: &SyntheticSpec, gops: u32) -> Vec<(FrameClass, u32)> {
    (0..u64::from(gops) * u64::from(spec.gop_length))
        .map(|i| {
            let class = spec.class_of_frame(i);
            (class, spec.frame_packets(class))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StrategyComparison {
    pub loss: f64,
    pub uniform: f64,
    pub selective: f64,
}

/// Mean decodable ratio of uniform and selective dropping at equal total loss.
///
/// For each seed, `round(loss * packets)` video packets are dropped: uniformly
/// at random over all packets, or at random over differential packets first
/// (spilling into reference packets only once none are left).
pub fn compare_strategies(spec: &SyntheticSpec, gops: u32, loss: f64, seeds: &[u64]) -> StrategyComparison {
    assert!((0.0..=1.0).contains(&loss), "loss fraction in [0, 1]");
    assert!(!seeds.is_empty(), "at least one seed");
    let frames = synthetic_frames(spec, gops);
    let mut reference = Vec::new();
    let mut differential = Vec::new();
    let mut p = 0usize;
    for &(class, n) in &frames {
        let bucket = if class == FrameClass::Differential {
            &mut differential
        } else {
            &mut reference
        };
        bucket.extend(p..p + n as usize);
        p += n as usize;
    }
    let total = p;
    let k = (loss * total as f64).round() as usize;

    let (mut uniform, mut selective) = (0.0, 0.0);
    for &seed in seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let drops: Vec<usize> = sample(&mut rng, total, k).into_iter().collect();
        uniform += ratio_after_drops(&frames, &drops);

        let mut drops: Vec<usize> = if k <= differential.len() {
            sample(&mut rng, differential.len(), k)
                .into_iter()
                .map(|i| differential[i])
                .collect()
        } else {
            differential.clone()
        };
        let spill = k.saturating_sub(differential.len());
        drops.extend(
            sample(&mut rng, reference.len(), spill.min(reference.len()))
                .into_iter()
                .map(|i| reference[i]),
        );
        selective += ratio_after_drops(&frames, &drops);
    }
    let n = seeds.len() as f64;
    StrategyComparison {
        loss,
        uniform: uniform / n,
        selective: selective / n,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gop(len: usize) -> Vec<(FrameClass, u32)> {
        (0..len)
            .map(|i| {
                let c = if i == 0 {
                    FrameClass::Reference
                } else {
                    FrameClass::Differential
                };
                (c, 1)
            })
            .collect()
    }

    #[test]
    fn zero_loss_is_fully_decodable() {
        assert_eq!(ratio_after_drops(&gop(12), &[]), 1.0);
        assert_eq!(decodable_ratio(&FrameLedger::new()), None);
    }

    #[test]
    fn lost_reference_kills_its_gop() {
        let mut frames = gop(12);
        frames.extend(gop(12));
        // Drop the first GOP's reference: 0/12 from it, 12/12 from the second.
        assert_eq!(ratio_after_drops(&frames, &[0]), 12.0 / 24.0);
    }

    #[test]
    fn lost_differential_breaks_the_rest_of_its_gop() {
        // Frame 5 lost: frames 0..=4 decodable, 5..=11 not.
        assert_eq!(ratio_after_drops(&gop(12), &[5]), 5.0 / 12.0);
    }

    #[test]
    fn partial_frame_is_not_delivered() {
        let frames = vec![(FrameClass::Reference, 3), (FrameClass::Differential, 3)];
        assert_eq!(ratio_after_drops(&frames, &[4]), 0.5);
        assert_eq!(ratio_after_drops(&frames, &[1]), 0.0);
    }

    #[test]
    fn losing_every_differential_leaves_references_only() {
        let spec = SyntheticSpec::new(12, 4, 25.0);
        let share = 11.0 / 12.0;
        let c = compare_strategies(&spec, 30, share, &[1, 2, 3]);
        assert!((c.selective - 1.0 / 12.0).abs() < 1e-12);
    }

    #[test]
    fn no_loss_gives_one_for_both() {
        let spec = SyntheticSpec::new(12, 4, 25.0);
        let c = compare_strategies(&spec, 5, 0.0, &[7]);
        assert_eq!((c.uniform, c.selective), (1.0, 1.0));
    }

    #[test]
    fn ledger_from_received_tags() {
        let spec = SyntheticSpec::new(3, 2, 25.0);
        let mut l = FrameLedger::new();
        l.expect_synthetic(&spec, 0, 5);
        for f in [0, 0, 1, 1, 2, 3, 3, 4, 4, 5, 5] {
            l.receive(f);
        }
        // Frame 2 is one packet short.
        assert_eq!(l.decodable(), vec![true, true, false, true, true, true]);
        l.receive(99);
        assert_eq!(l.len(), 6);
    }

    proptest! {
        #[test]
        fn more_loss_never_helps(drops in proptest::collection::btree_set(0usize..24, 0..6), extra in 0usize..24) {
            let mut frames = gop(12);
            frames.extend(gop(12));
            let base: Vec<usize> = drops.iter().copied().collect();
            let mut more = base.clone();
            more.push(extra);
            prop_assert!(ratio_after_drops(&frames, &more) <= ratio_after_drops(&frames, &base));
        }
    }
}
