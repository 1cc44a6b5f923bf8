use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::apportion::largest_remainder;
use crate::corpus::{VideoBank, VideoId};
use crate::error::{Error, Result};
use crate::metrics::ClassDistribution;

/// A materialized recommendation list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Repopulation {
    pub videos: Vec<VideoId>,
    /// Class each slot was filled for.
    pub slot_classes: Vec<usize>,
    /// Largest-remainder allocation before spill.
    pub allocation: Vec<usize>,
    /// Share of slots per class after spill.
    pub achieved: ClassDistribution,
    pub tv_gap: f64,
    /// `(from, to, slots)` moved because a class ran out of bank videos.
    pub spills: Vec<(usize, usize, usize)>,
}

/// Allocates `count` slots to classes by largest remainder on `target`, then
/// fills each class with its most popular unused bank videos. Slots a class
/// cannot fill move to the class with the next-highest target mass that still
/// has videos.
pub fn repopulate(
    bank: &VideoBank,
    target: &ClassDistribution,
    count: usize,
) -> Result<Repopulation> {
    if count == 0 {
        return Err(Error::config("repopulation count must be at least 1"));
    }
    let k = bank.n_classes();
    if target.len() != k {
        return Err(Error::Dimension {
            expected: k,
            got: target.len(),
        });
    }
    let allocation = largest_remainder(target.as_slice(), count);
    let mut by_mass: Vec<usize> = (0..k).collect();
    by_mass.sort_by(|&a, &b| target[b].total_cmp(&target[a]).then(a.cmp(&b)));

    let mut used: HashSet<VideoId> = HashSet::new();
    let mut cursor = vec![0usize; k];
    let mut videos = Vec::with_capacity(count);
    let mut slot_classes = Vec::with_capacity(count);
    let mut spills: Vec<(usize, usize, usize)> = Vec::new();

    let take =
        |class: usize, used: &mut HashSet<VideoId>, cursor: &mut [usize]| -> Option<VideoId> {
            let list = bank.class(class);
            while cursor[class] < list.len() {
                let v = list[cursor[class]];
                cursor[class] += 1;
                if used.insert(v) {
                    return Some(v);
                }
            }
            None
        };

    // own allocations first, so an early shortfall cannot eat into the
    // capacity later classes need for themselves
    let mut short = vec![0usize; k];
    for &class in &by_mass {
        for _ in 0..allocation[class] {
            match take(class, &mut used, &mut cursor) {
                Some(v) => {
                    videos.push(v);
                    slot_classes.push(class);
                }
                None => short[class] += 1,
            }
        }
    }
    for &class in &by_mass {
        for _ in 0..short[class] {
            let placed = by_mass
                .iter()
                .find_map(|&other| take(other, &mut used, &mut cursor).map(|v| (v, other)));
            let (v, to) = placed.ok_or(Error::Empty("video bank"))?;
            match spills.iter_mut().find(|s| s.0 == class && s.1 == to) {
                Some(s) => s.2 += 1,
                None => spills.push((class, to, 1)),
            }
            videos.push(v);
            slot_classes.push(to);
        }
    }

    let mut counts = vec![0.0; k];
    for &c in &slot_classes {
        counts[c] += 1.0;
    }
    let achieved = ClassDistribution::from_counts(&counts)?;
    let tv_gap = achieved.tv_distance(target);
    Ok(Repopulation {
        videos,
        slot_classes,
        allocation,
        achieved,
        tv_gap,
        spills,
    })
}
