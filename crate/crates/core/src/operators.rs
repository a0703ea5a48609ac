//! Random line edits and the local-search neighbourhood.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::source_model::{Edit, EditKind, LinePos, Patch, SourceRoster};

/// Seeded random stream. All search randomness goes through one of these.
#[derive(Debug, Clone)]
pub struct RngHandle {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RngHandle {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform in `0..n`. Draws through u64 so results do not depend on the
    /// platform's pointer width.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        self.rng.random_range(0..n as u64) as usize
    }

    /// Uniform in `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        self.rng.random::<f64>()
    }
}

/// Relative weights of Deletion, Insertion and Replacement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct OperatorWeights {
    pub deletion: f64,
    pub insertion: f64,
    pub replacement: f64,
}

impl Default for OperatorWeights {
    fn default() -> Self {
        Self {
            deletion: 1.0,
            insertion: 1.0,
            replacement: 1.0,
        }
    }
}

impl From<[f64; 3]> for OperatorWeights {
    fn from([deletion, insertion, replacement]: [f64; 3]) -> Self {
        Self {
            deletion,
            insertion,
            replacement,
        }
    }
}

impl From<OperatorWeights> for [f64; 3] {
    fn from(w: OperatorWeights) -> Self {
        [w.deletion, w.insertion, w.replacement]
    }
}

impl OperatorWeights {
    pub fn is_valid(&self) -> bool {
        let all = [self.deletion, self.insertion, self.replacement];
        all.iter().all(|w| w.is_finite() && *w >= 0.0) && all.iter().sum::<f64>() > 0.0
    }

    fn pick(&self, rng: &mut RngHandle, allow_replacement: bool) -> EditKind {
        let replacement = if allow_replacement { self.replacement } else { 0.0 };
        let total = self.deletion + self.insertion + replacement;
        if total <= 0.0 {
            return EditKind::Deletion;
        }
        // Equal weights reduce to an exact uniform choice.
        if self.deletion == self.insertion && (!allow_replacement || self.insertion == replacement) {
            let n = if allow_replacement { 3 } else { 2 };
            return [EditKind::Deletion, EditKind::Insertion, EditKind::Replacement][rng.below(n)];
        }
        let x = rng.unit() * total;
        if x < self.deletion {
            EditKind::Deletion
        } else if x < self.deletion + self.insertion || replacement == 0.0 {
            EditKind::Insertion
        } else {
            EditKind::Replacement
        }
    }
}

/// Draws one edit: kind by `weights`, target and source uniformly from the
/// roster's mutable points. A Replacement of a line by itself is a no-op, so
/// its source is redrawn; on a one-line roster Replacement is never chosen.
pub fn sample_edit(roster: &SourceRoster, weights: &OperatorWeights, rng: &mut RngHandle) -> Edit {
    let points = roster.mutable_points();
    let n = points.len();
    let pick = |rng: &mut RngHandle| -> LinePos { points[rng.below(n)] };
    match weights.pick(rng, n > 1) {
        EditKind::Deletion => Edit::Deletion { target: pick(rng) },
        EditKind::Insertion => {
            let target = pick(rng);
            Edit::Insertion {
                target,
                source: pick(rng),
            }
        }
        EditKind::Replacement => {
            let target = pick(rng);
            let mut source = pick(rng);
            while source == target {
                source = pick(rng);
            }
            Edit::Replacement { target, source }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Move {
    Append,
    Remove(usize),
    Swap(usize),
}

/// One local-search move, uniform among the applicable ones: append a fresh
/// edit, drop an existing edit, or replace an existing edit with a fresh one.
pub fn neighbor(patch: &Patch, roster: &SourceRoster, weights: &OperatorWeights, rng: &mut RngHandle) -> Patch {
    neighbor_with_move(patch, roster, weights, rng).0
}

pub fn neighbor_with_move(
    patch: &Patch,
    roster: &SourceRoster,
    weights: &OperatorWeights,
    rng: &mut RngHandle,
) -> (Patch, Move) {
    let mv = if patch.is_empty() {
        Move::Append
    } else {
        match rng.below(3) {
            0 => Move::Append,
            1 => Move::Remove(rng.below(patch.len())),
            _ => Move::Swap(rng.below(patch.len())),
        }
    };
    (apply_move(patch, mv, roster, weights, rng), mv)
}

pub fn apply_move(
    patch: &Patch,
    mv: Move,
    roster: &SourceRoster,
    weights: &OperatorWeights,
    rng: &mut RngHandle,
) -> Patch {
    let mut edits = patch.edits.clone();
    match mv {
        Move::Append => edits.push(sample_edit(roster, weights, rng)),
        Move::Remove(i) => {
            edits.remove(i);
        }
        Move::Swap(i) => edits[i] = sample_edit(roster, weights, rng),
    }
    Patch::new(edits)
}
