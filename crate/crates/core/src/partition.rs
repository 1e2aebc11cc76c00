//! Ordered partitions of the state range `[1, S]`.
//!
//! A partition starts from `X0` contiguous base cells and is refined by a
//! split vector `rho`: step `k` halves cell `rho[k]`, the lower half keeps
//! the parent's index and the upper half becomes cell `X0 + k`. For every
//! cell we also keep its *bar set*, the interval the cell covered when it
//! was created; those are the sets whose visit frequencies the adaptive
//! layer estimates.
//!
//! States and cell indices are 1-based in this module's public API. The
//! `lookup` fast path used by the learning loop is 0-based on both sides.

use std::fmt;

use crate::error::{Error, Result};

/// Inclusive range of 1-based state indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Interval {
    lo: usize,
    hi: usize,
}

impl Interval {
    pub fn new(lo: usize, hi: usize) -> Result<Self> {
        if lo == 0 || lo > hi {
            return Err(Error::invalid(format!("interval [{lo},{hi}] is not 1 <= lo <= hi")));
        }
        Ok(Interval { lo, hi })
    }

    pub fn lo(&self) -> usize {
        self.lo
    }

    pub fn hi(&self) -> usize {
        self.hi
    }

    pub fn len(&self) -> usize {
        self.hi - self.lo + 1
    }

    pub fn is_singleton(&self) -> bool {
        self.lo == self.hi
    }

    pub fn contains(&self, state: usize) -> bool {
        self.lo <= state && state <= self.hi
    }

    pub fn overlaps(&self, other: &Interval) -> bool {
        self.lo <= other.hi && other.lo <= self.hi
    }

    pub fn contains_interval(&self, other: &Interval) -> bool {
        self.lo <= other.lo && other.hi <= self.hi
    }

    /// Halve the interval: `[L, L + floor((U-L-1)/2)]` and the rest.
    /// Singletons cannot be split.
    pub fn split(&self) -> Option<(Interval, Interval)> {
        if self.is_singleton() {
            return None;
        }
        let mid = self.lo + (self.hi - self.lo - 1) / 2;
        Some((
            Interval { lo: self.lo, hi: mid },
            Interval {
                lo: mid + 1,
                hi: self.hi,
            },
        ))
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.lo, self.hi)
    }
}

/// The fixed sequence `(1, 1, 2, 1, 2, 3, 4, 1, 2, ..., 8, ...)` used to
/// carve base cells out of `[1, S]`.
pub fn base_split_sequence() -> impl Iterator<Item = usize> {
    (0u32..usize::BITS - 1).flat_map(|block| 1..=(1usize << block))
}

#[derive(Clone, Copy, Debug)]
enum Node {
    Leaf { cell: u32 },
    Branch { upper_start: usize, lower: u32, upper: u32 },
}

/// Binary tree over the split history. Base cells sit under a balanced
/// top section; each split turns a leaf into a branch with two leaves.
#[derive(Clone, Debug)]
pub struct CellIndexTree {
    nodes: Vec<Node>,
    root: u32,
    leaf_of: Vec<u32>,
}

impl CellIndexTree {
    fn from_base(base: &[Interval]) -> Self {
        let mut tree = CellIndexTree {
            nodes: Vec::with_capacity(2 * base.len()),
            root: 0,
            leaf_of: vec![0; base.len()],
        };
        tree.root = tree.build(base, 0, base.len());
        tree
    }

    fn build(&mut self, base: &[Interval], from: usize, to: usize) -> u32 {
        if to - from == 1 {
            let id = self.nodes.len() as u32;
            self.nodes.push(Node::Leaf { cell: from as u32 });
            self.leaf_of[from] = id;
            return id;
        }
        let mid = (from + to) / 2;
        let lower = self.build(base, from, mid);
        let upper = self.build(base, mid, to);
        let id = self.nodes.len() as u32;
        self.nodes.push(Node::Branch {
            upper_start: base[mid].lo,
            lower,
            upper,
        });
        id
    }

    fn split(&mut self, cell: usize, upper_start: usize, new_cell: usize) {
        let at = self.leaf_of[cell] as usize;
        let lower = self.nodes.len() as u32;
        self.nodes.push(Node::Leaf { cell: cell as u32 });
        let upper = lower + 1;
        self.nodes.push(Node::Leaf {
            cell: new_cell as u32,
        });
        self.nodes[at] = Node::Branch {
            upper_start,
            lower,
            upper,
        };
        self.leaf_of[cell] = lower;
        debug_assert_eq!(self.leaf_of.len(), new_cell);
        self.leaf_of.push(upper);
    }

    /// 0-based cell holding the 1-based `state`. The caller checks range.
    pub fn locate(&self, state: usize) -> usize {
        let mut at = self.root as usize;
        loop {
            match self.nodes[at] {
                Node::Leaf { cell } => return cell as usize,
                Node::Branch {
                    upper_start,
                    lower,
                    upper,
                } => {
                    at = if state >= upper_start { upper } else { lower } as usize;
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Branch { lower, upper, .. } => {
                    1 + walk(nodes, lower as usize).max(walk(nodes, upper as usize))
                }
            }
        }
        walk(&self.nodes, self.root as usize)
    }
}

/// Sorted cell start points for branch-free lookup in the learning loop.
#[derive(Clone, Debug, Default)]
struct FlatIndex {
    starts: Vec<u32>,
    ids: Vec<u32>,
}

impl FlatIndex {
    fn rebuild(&mut self, cells: &[Interval]) {
        let mut order: Vec<usize> = (0..cells.len()).collect();
        order.sort_unstable_by_key(|&j| cells[j].lo);
        self.starts.clear();
        self.ids.clear();
        self.starts.extend(order.iter().map(|&j| (cells[j].lo - 1) as u32));
        self.ids.extend(order.iter().map(|&j| j as u32));
    }

    #[inline]
    fn find(&self, state0: usize) -> usize {
        let s = state0 as u32;
        let mut base = 0usize;
        let mut len = self.starts.len();
        while len > 1 {
            let half = len / 2;
            if self.starts[base + half] <= s {
                base += half;
            }
            len -= half;
        }
        self.ids[base] as usize
    }
}

/// An ordered partition `Xi` together with its base cells, the split vector
/// applied so far, the bar sets and the singleton flags.
#[derive(Clone, Debug)]
pub struct OrderedPartition {
    states: usize,
    base: Vec<Interval>,
    rho: Vec<usize>,
    cells: Vec<Interval>,
    bars: Vec<Interval>,
    sigma: Vec<bool>,
    tree: CellIndexTree,
    flat: FlatIndex,
}

impl PartialEq for OrderedPartition {
    fn eq(&self, other: &Self) -> bool {
        self.states == other.states
            && self.base == other.base
            && self.rho == other.rho
            && self.cells == other.cells
            && self.bars == other.bars
    }
}

impl OrderedPartition {
    /// Partition made of the given base cells, which must be contiguous,
    /// in increasing order and cover `[1, states]`.
    pub fn from_base_cells(states: usize, base: Vec<Interval>) -> Result<Self> {
        if states == 0 {
            return Err(Error::invalid("state count must be positive"));
        }
        if base.is_empty() {
            return Err(Error::invalid("at least one base cell is required"));
        }
        let mut next = 1;
        for (j, cell) in base.iter().enumerate() {
            if cell.lo != next {
                return Err(Error::invalid(format!(
                    "base cell {} starts at {} but {} was expected",
                    j + 1,
                    cell.lo,
                    next
                )));
            }
            next = cell.hi + 1;
        }
        if next != states + 1 {
            return Err(Error::invalid(format!(
                "base cells cover [1,{}] instead of [1,{states}]",
                next - 1
            )));
        }
        let sigma = base.iter().map(Interval::is_singleton).collect();
        let tree = CellIndexTree::from_base(&base);
        let mut flat = FlatIndex::default();
        flat.rebuild(&base);
        Ok(OrderedPartition {
            states,
            cells: base.clone(),
            bars: base.clone(),
            base,
            rho: Vec::new(),
            sigma,
            tree,
            flat,
        })
    }

    /// `x0` base cells carved out of `[1, states]` by following
    /// [`base_split_sequence`]. Cells come back renumbered in index order.
    ///
    /// When the sequence points at a singleton (only possible when `x0` is
    /// close to `states`) the largest cell is split instead.
    pub fn base(states: usize, x0: usize) -> Result<Self> {
        if states == 0 || x0 == 0 {
            return Err(Error::invalid("state count and base cell count must be positive"));
        }
        if x0 > states {
            return Err(Error::invalid(format!(
                "cannot make {x0} non-empty cells out of {states} states"
            )));
        }
        let mut cells = vec![Interval { lo: 1, hi: states }];
        for target in base_split_sequence().take(x0 - 1) {
            let j = if target <= cells.len() && !cells[target - 1].is_singleton() {
                target - 1
            } else {
                largest_cell(&cells)
            };
            let (lower, upper) = cells[j].split().expect("non-singleton");
            cells[j] = lower;
            cells.push(upper);
        }
        cells.sort_unstable();
        Self::from_base_cells(states, cells)
    }

    /// `count` contiguous cells whose sizes differ by at most one (larger
    /// cells first).
    pub fn equal(states: usize, count: usize) -> Result<Self> {
        if count == 0 || count > states {
            return Err(Error::invalid(format!(
                "cannot make {count} non-empty cells out of {states} states"
            )));
        }
        let size = states / count;
        let extra = states % count;
        let mut lo = 1;
        let cells = (0..count)
            .map(|j| {
                let len = size + usize::from(j < extra);
                let cell = Interval { lo, hi: lo + len - 1 };
                lo += len;
                cell
            })
            .collect();
        Self::from_base_cells(states, cells)
    }

    /// A fresh partition with the same base cells and the given split vector.
    pub fn with_split_vector(&self, rho: &[usize]) -> Result<Self> {
        let mut out = self.base_only();
        for (k, &target) in rho.iter().enumerate() {
            let limit = out.base.len() + k;
            if target == 0 || target > limit {
                return Err(Error::InvalidSplitVector {
                    position: k + 1,
                    reason: format!("entry {target} outside 1..={limit}"),
                });
            }
            if out.sigma[target - 1] {
                return Err(Error::InvalidSplitVector {
                    position: k + 1,
                    reason: format!("entry {target} targets a singleton cell"),
                });
            }
            out.split_unindexed(target - 1);
        }
        out.flat.rebuild(&out.cells);
        Ok(out)
    }

    /// Same base cells, no splits applied.
    pub fn base_only(&self) -> Self {
        let mut out = self.clone();
        out.reset_to_base();
        out
    }

    pub(crate) fn reset_to_base(&mut self) {
        self.rho.clear();
        self.cells.clear();
        self.cells.extend_from_slice(&self.base);
        self.bars.clear();
        self.bars.extend_from_slice(&self.base);
        self.sigma.clear();
        self.sigma.extend(self.base.iter().map(Interval::is_singleton));
        self.tree = CellIndexTree::from_base(&self.base);
        self.flat.rebuild(&self.cells);
    }

    /// Apply the next split step to 1-based cell `target` and return the
    /// index of the newly created cell.
    pub fn split_cell(&mut self, target: usize) -> Result<usize> {
        let step = self.rho.len() + 1;
        if target == 0 || target > self.cells.len() {
            return Err(Error::InvalidSplit {
                step,
                cell: target,
                reason: "does not exist",
            });
        }
        if self.sigma[target - 1] {
            return Err(Error::InvalidSplit {
                step,
                cell: target,
                reason: "is a singleton",
            });
        }
        let new = self.split_unindexed(target - 1);
        self.flat.rebuild(&self.cells);
        Ok(new + 1)
    }

    /// Split 0-based `cell`, leaving the flat lookup stale. Returns the
    /// 0-based index of the new cell.
    pub(crate) fn split_unindexed(&mut self, cell: usize) -> usize {
        let (lower, upper) = self.cells[cell].split().expect("caller checked for singleton");
        let new = self.cells.len();
        self.cells[cell] = lower;
        self.cells.push(upper);
        self.bars.push(upper);
        self.sigma[cell] = lower.is_singleton();
        self.sigma.push(upper.is_singleton());
        self.rho.push(cell + 1);
        self.tree.split(cell, upper.lo, new);
        new
    }

    pub(crate) fn reindex(&mut self) {
        self.flat.rebuild(&self.cells);
    }

    /// 1-based cell containing the 1-based `state`, found through the
    /// split-history tree.
    pub fn cell_of(&self, state: usize) -> Result<usize> {
        self.check_state(state)?;
        Ok(self.tree.locate(state) + 1)
    }

    /// Same as [`cell_of`](Self::cell_of) by linear scan over the cells.
    pub fn cell_of_scan(&self, state: usize) -> Result<usize> {
        self.check_state(state)?;
        Ok(self.cells.iter().position(|c| c.contains(state)).expect("cells cover") + 1)
    }

    /// 0-based cell of the 0-based `state0`. No range check.
    #[inline]
    pub fn lookup(&self, state0: usize) -> usize {
        self.flat.find(state0)
    }

    /// All 1-based bar-set indices whose interval contains `state`, in
    /// decreasing index order. Walks the chain cell -> split parent -> ...
    pub fn bar_membership(&self, state: usize) -> Result<Vec<usize>> {
        let cell = self.cell_of(state)? - 1;
        let mut out = Vec::new();
        self.for_each_bar_of_cell(cell, |j| out.push(j + 1));
        Ok(out)
    }

    /// Brute-force containment scan, ascending order.
    pub fn bar_membership_scan(&self, state: usize) -> Result<Vec<usize>> {
        self.check_state(state)?;
        Ok((0..self.bars.len())
            .filter(|&j| self.bars[j].contains(state))
            .map(|j| j + 1)
            .collect())
    }

    /// Visit every 0-based bar-set index containing the states of 0-based
    /// `cell`: the cell itself and then the cells it was split from.
    #[inline]
    pub fn for_each_bar_of_cell(&self, cell: usize, mut f: impl FnMut(usize)) {
        let x0 = self.base.len();
        let mut j = cell;
        loop {
            f(j);
            if j < x0 {
                break;
            }
            j = self.rho[j - x0] - 1;
        }
    }

    /// 0-based cell that 0-based cell `cell` was split from, if any.
    pub fn split_parent(&self, cell: usize) -> Option<usize> {
        let x0 = self.base.len();
        (cell >= x0).then(|| self.rho[cell - x0] - 1)
    }

    fn check_state(&self, state: usize) -> Result<()> {
        if state == 0 || state > self.states {
            return Err(Error::invalid(format!(
                "state {state} outside 1..={}",
                self.states
            )));
        }
        Ok(())
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn base_count(&self) -> usize {
        self.base.len()
    }

    /// Current number of cells `X`.
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn base_cells(&self) -> &[Interval] {
        &self.base
    }

    pub fn rho(&self) -> &[usize] {
        &self.rho
    }

    pub fn cells(&self) -> &[Interval] {
        &self.cells
    }

    pub fn bar_sets(&self) -> &[Interval] {
        &self.bars
    }

    pub fn sigma(&self) -> &[bool] {
        &self.sigma
    }

    pub fn tree(&self) -> &CellIndexTree {
        &self.tree
    }

    /// Line-oriented dump, one `lo-hi:cell` record per cell in state order.
    pub fn debug_text(&self) -> String {
        let mut order: Vec<usize> = (0..self.cells.len()).collect();
        order.sort_unstable_by_key(|&j| self.cells[j].lo);
        let mut out = String::new();
        for j in order {
            out.push_str(&format!("{}:{}\n", self.cells[j], j + 1));
        }
        out
    }
}

fn largest_cell(cells: &[Interval]) -> usize {
    let mut best = 0;
    for (j, c) in cells.iter().enumerate() {
        if c.len() > cells[best].len() {
            best = j;
        }
    }
    best
}

/// Starting split vector of length `n` for `base`: keep following the base
/// sequence after the entries used to build the base cells, replacing any
/// entry that would hit a singleton with the largest current cell.
pub fn initial_split_vector(base: &OrderedPartition, n: usize) -> Result<Vec<usize>> {
    let x0 = base.base_count();
    if x0 + n > base.states() {
        return Err(Error::invalid(format!(
            "{} cells requested but only {} states",
            x0 + n,
            base.states()
        )));
    }
    let mut work = base.base_only();
    let mut rho = Vec::with_capacity(n);
    for target in base_split_sequence().skip(x0.saturating_sub(1)).take(n) {
        let j = if target <= work.len() && !work.sigma[target - 1] {
            target - 1
        } else {
            largest_cell(&work.cells)
        };
        work.split_unindexed(j);
        rho.push(j + 1);
    }
    Ok(rho)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iv(lo: usize, hi: usize) -> Interval {
        Interval::new(lo, hi).unwrap()
    }

    #[test]
    fn sequence_prefix() {
        let seq: Vec<usize> = base_split_sequence().take(15).collect();
        assert_eq!(seq, vec![1, 1, 2, 1, 2, 3, 4, 1, 2, 3, 4, 5, 6, 7, 8]);
    }

    #[test]
    fn split_arithmetic() {
        assert_eq!(iv(1, 12).split(), Some((iv(1, 6), iv(7, 12))));
        assert_eq!(iv(1, 2).split(), Some((iv(1, 1), iv(2, 2))));
        // L=5, U=9: L + floor((U-L-1)/2) = 5 + 1 = 6
        assert_eq!(iv(5, 9).split(), Some((iv(5, 6), iv(7, 9))));
        assert_eq!(iv(4, 4).split(), None);
    }

    #[test]
    fn base_partition_examples() {
        let p = OrderedPartition::base(5, 1).unwrap();
        assert_eq!(p.cells(), &[iv(1, 5)]);

        // [1,7] -> [1,3],[4,7]; [1,3] -> [1,1],[2,3]; [4,7] -> [4,5],[6,7]
        let p = OrderedPartition::base(7, 4).unwrap();
        assert_eq!(p.cells(), &[iv(1, 1), iv(2, 3), iv(4, 5), iv(6, 7)]);
        let mut sizes: Vec<usize> = p.cells().iter().map(Interval::len).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![1, 2, 2, 2]);
        assert_eq!(p.sigma(), &[true, false, false, false]);

        assert!(OrderedPartition::base(3, 4).is_err());
        // sequence would hit the singleton [1,1] at its second entry
        let p = OrderedPartition::base(3, 3).unwrap();
        assert_eq!(p.cells(), &[iv(1, 1), iv(2, 2), iv(3, 3)]);
    }

    #[test]
    fn equal_partition_matches_three_base_cells_of_twelve() {
        let p = OrderedPartition::equal(36, 3).unwrap();
        assert_eq!(p.cells(), &[iv(1, 12), iv(13, 24), iv(25, 36)]);
        let p = OrderedPartition::equal(10, 4).unwrap();
        assert_eq!(p.cells(), &[iv(1, 3), iv(4, 6), iv(7, 8), iv(9, 10)]);
    }

    fn figure_partition() -> OrderedPartition {
        OrderedPartition::equal(36, 3)
            .unwrap()
            .with_split_vector(&[1, 2, 5])
            .unwrap()
    }

    #[test]
    fn split_vector_example_from_walkthrough() {
        let p = figure_partition();
        assert_eq!(
            p.cells(),
            &[iv(1, 6), iv(13, 18), iv(25, 36), iv(7, 12), iv(19, 21), iv(22, 24)]
        );
        assert_eq!(
            p.bar_sets(),
            &[iv(1, 12), iv(13, 24), iv(25, 36), iv(7, 12), iv(19, 24), iv(22, 24)]
        );
        assert_eq!(p.cell_of(13).unwrap(), 2);
        assert_eq!(p.debug_text(), "1-6:1\n7-12:4\n13-18:2\n19-21:5\n22-24:6\n25-36:3\n");

        let q = OrderedPartition::equal(36, 3).unwrap().with_split_vector(&[1, 3, 3]).unwrap();
        assert_eq!(
            q.cells(),
            &[iv(1, 6), iv(13, 24), iv(25, 27), iv(7, 12), iv(31, 36), iv(28, 30)]
        );
    }

    #[test]
    fn split_vector_hand_trace() {
        // [1,8] -> [1,4],[5,8]; [1,4] -> [1,2],[3,4]; cell 2 = [5,8] -> [5,6],[7,8]
        let p = OrderedPartition::equal(8, 1).unwrap().with_split_vector(&[1, 1, 2]).unwrap();
        assert_eq!(p.cells(), &[iv(1, 2), iv(5, 6), iv(3, 4), iv(7, 8)]);
        let empty = OrderedPartition::base(9, 2).unwrap().with_split_vector(&[]).unwrap();
        assert_eq!(empty.cells(), OrderedPartition::base(9, 2).unwrap().cells());
    }

    #[test]
    fn split_vector_errors() {
        let base = OrderedPartition::equal(4, 2).unwrap();
        assert!(matches!(
            base.with_split_vector(&[3]),
            Err(Error::InvalidSplitVector { position: 1, .. })
        ));
        assert!(matches!(
            base.with_split_vector(&[1, 1]),
            Err(Error::InvalidSplitVector { position: 2, .. })
        ));
        let mut p = OrderedPartition::equal(2, 1).unwrap();
        assert_eq!(p.split_cell(1).unwrap(), 2);
        assert_eq!(p.sigma(), &[true, true]);
        assert!(matches!(p.split_cell(1), Err(Error::InvalidSplit { step: 2, .. })));
    }

    #[test]
    fn lookups_reject_out_of_range() {
        let p = OrderedPartition::base(5, 1).unwrap();
        assert_eq!(p.cell_of(3).unwrap(), 1);
        assert!(p.cell_of(0).is_err());
        assert!(p.cell_of(6).is_err());
    }

    #[test]
    fn bar_membership_walkthrough() {
        let p = figure_partition();
        // a state of [7,12] lies in the first base cell and in bar set 4
        assert_eq!(p.bar_membership_scan(9).unwrap(), vec![1, 4]);
        assert_eq!(p.bar_membership(9).unwrap(), vec![4, 1]);
        assert_eq!(p.bar_membership(23).unwrap(), vec![6, 5, 2]);
        assert_eq!(p.bar_membership(30).unwrap(), vec![3]);
    }

    #[test]
    fn initial_vector_avoids_singletons() {
        let base = OrderedPartition::base(6, 4).unwrap();
        let rho = initial_split_vector(&base, 2).unwrap();
        let p = base.with_split_vector(&rho).unwrap();
        assert_eq!(p.len(), 6);
        assert!(p.sigma().iter().all(|&s| s));
        assert!(initial_split_vector(&base, 3).is_err());
    }

    #[test]
    fn tree_depth_is_logarithmic() {
        let base = OrderedPartition::base(8000, 190).unwrap();
        let rho = initial_split_vector(&base, 190).unwrap();
        let p = base.with_split_vector(&rho).unwrap();
        let max_base = base.cells().iter().map(Interval::len).max().unwrap();
        let bound = (190f64).log2().ceil() as usize + (max_base as f64).log2().ceil() as usize;
        assert!(p.tree().depth() <= bound, "{} > {bound}", p.tree().depth());
    }
}
