//! Levenshtein alignment counts and error rates.

use alloc::vec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ErrorBreakdown {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub ref_len: usize,
}

impl ErrorBreakdown {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    /// `(S + D + I) / max(ref_len, 1)`.
    pub fn rate(&self) -> f64 {
        self.errors() as f64 / self.ref_len.max(1) as f64
    }
}

impl core::ops::Add for ErrorBreakdown {
    type Output = ErrorBreakdown;

    fn add(self, o: ErrorBreakdown) -> ErrorBreakdown {
        ErrorBreakdown {
            substitutions: self.substitutions + o.substitutions,
            deletions: self.deletions + o.deletions,
            insertions: self.insertions + o.insertions,
            ref_len: self.ref_len + o.ref_len,
        }
    }
}

impl core::iter::Sum for ErrorBreakdown {
    fn sum<I: Iterator<Item = ErrorBreakdown>>(iter: I) -> Self {
        iter.fold(ErrorBreakdown::default(), |a, b| a + b)
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
struct Cell {
    cost: usize,
    subs: usize,
    dels: usize,
    ins: usize,
}

impl Cell {
    /// Lower cost wins; among equal costs, more substitutions win.
    fn better_than(&self, o: &Cell) -> bool {
        self.cost < o.cost || (self.cost == o.cost && self.subs > o.subs)
    }
}

/// Unit-cost Levenshtein alignment of `hyp` against `reference`.
///
/// Among minimum-cost alignments the one with the most substitutions is
/// reported (a substitution is preferred to a deletion plus an insertion).
pub fn edit_distance(reference: &[u32], hyp: &[u32]) -> ErrorBreakdown {
    let (n, m) = (reference.len(), hyp.len());
    let zero = Cell { cost: 0, subs: 0, dels: 0, ins: 0 };
    let mut prev = vec![zero; m + 1];
    for j in 1..=m {
        prev[j] = Cell { cost: j, ins: j, ..zero };
    }
    let mut cur = vec![zero; m + 1];
    for i in 1..=n {
        cur[0] = Cell { cost: i, dels: i, ..zero };
        for j in 1..=m {
            let diag = prev[j - 1];
            let mut best = if reference[i - 1] == hyp[j - 1] {
                diag
            } else {
                Cell { cost: diag.cost + 1, subs: diag.subs + 1, ..diag }
            };
            let up = prev[j];
            let del = Cell { cost: up.cost + 1, dels: up.dels + 1, ..up };
            if del.better_than(&best) {
                best = del;
            }
            let left = cur[j - 1];
            let ins = Cell { cost: left.cost + 1, ins: left.ins + 1, ..left };
            if ins.better_than(&best) {
                best = ins;
            }
            cur[j] = best;
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    let c = prev[m];
    ErrorBreakdown { substitutions: c.subs, deletions: c.dels, insertions: c.ins, ref_len: n }
}
