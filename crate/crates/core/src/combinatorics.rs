//! Set partitions of measurement sets.
//!
//! Partitions are enumerated through restricted-growth strings in
//! lexicographic order, which yields canonical output directly: labels inside
//! a cell ascend and cells are ordered by their smallest label.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest label index a [`LabelSet`] can hold, plus one.
pub const MAX_LABELS: usize = 32;

/// A set of measurement labels stored as a bitmask.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(into = "Vec<usize>", try_from = "Vec<usize>")]
pub struct LabelSet(u32);

impl LabelSet {
    pub const EMPTY: LabelSet = LabelSet(0);

    pub fn from_bits(bits: u32) -> Self {
        LabelSet(bits)
    }

    pub fn bits(self) -> u32 {
        self.0
    }

    /// `{0, 1, ..., n-1}`.
    pub fn first(n: usize) -> Self {
        assert!(n <= MAX_LABELS, "label sets hold at most {MAX_LABELS} labels");
        if n == MAX_LABELS {
            LabelSet(u32::MAX)
        } else {
            LabelSet((1u32 << n) - 1)
        }
    }

    pub fn singleton(label: usize) -> Self {
        assert!(label < MAX_LABELS);
        LabelSet(1 << label)
    }

    pub fn from_labels<I: IntoIterator<Item = usize>>(labels: I) -> Result<Self> {
        let mut bits = 0u32;
        for l in labels {
            if l >= MAX_LABELS {
                return Err(Error::OutOfRange {
                    what: "measurement label",
                    value: l,
                    min: 0,
                    max: MAX_LABELS - 1,
                });
            }
            bits |= 1 << l;
        }
        Ok(LabelSet(bits))
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn contains(self, label: usize) -> bool {
        label < MAX_LABELS && self.0 & (1 << label) != 0
    }

    pub fn is_subset_of(self, other: LabelSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn union(self, other: LabelSet) -> LabelSet {
        LabelSet(self.0 | other.0)
    }

    pub fn min_label(self) -> Option<usize> {
        (self.0 != 0).then(|| self.0.trailing_zeros() as usize)
    }

    /// Labels in ascending order.
    pub fn iter(self) -> impl Iterator<Item = usize> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            if bits == 0 {
                None
            } else {
                let l = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                Some(l)
            }
        })
    }
}

impl From<LabelSet> for Vec<usize> {
    fn from(s: LabelSet) -> Self {
        s.iter().collect()
    }
}

impl TryFrom<Vec<usize>> for LabelSet {
    type Error = Error;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        LabelSet::from_labels(v)
    }
}

impl fmt::Debug for LabelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for LabelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, l) in self.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{l}")?;
        }
        f.write_str("}")
    }
}

/// A partition of a label set into non-empty disjoint cells, in canonical form.
#[derive(Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Partition {
    cells: Vec<LabelSet>,
}

impl Partition {
    /// Builds a partition from cells, putting it into canonical order.
    pub fn new(mut cells: Vec<LabelSet>) -> Self {
        cells.sort_by_key(|c| c.min_label());
        Partition { cells }
    }

    pub fn cells(&self) -> &[LabelSet] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Union of all cells.
    pub fn ground(&self) -> LabelSet {
        self.cells.iter().fold(LabelSet::EMPTY, |a, &c| a.union(c))
    }

    /// True when the cells are non-empty, pairwise disjoint, cover `ground`
    /// exactly and appear in canonical order.
    pub fn is_partition_of(&self, ground: LabelSet) -> bool {
        let mut seen = 0u32;
        for c in &self.cells {
            if c.is_empty() || c.0 & seen != 0 {
                return false;
            }
            seen |= c.0;
        }
        seen == ground.0 && self.cells.windows(2).all(|w| w[0].min_label() < w[1].min_label())
    }
}

impl fmt::Debug for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.cells.is_empty() {
            return f.write_str("{}");
        }
        for (i, c) in self.cells.iter().enumerate() {
            if i > 0 {
                f.write_str("|")?;
            }
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

/// Upper bound on the number of labels that may be partitioned exhaustively.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnumerationCap {
    max: usize,
}

impl EnumerationCap {
    pub const DEFAULT_MAX: usize = 8;
    pub const HARD_MAX: usize = 20;

    /// Caps above the default must be acknowledged explicitly because the
    /// work grows with the Bell number of the cap.
    pub fn new(max: usize, acknowledge_cost: bool) -> Result<Self> {
        if max > Self::HARD_MAX {
            return Err(Error::OutOfRange {
                what: "measurement cap",
                value: max,
                min: 0,
                max: Self::HARD_MAX,
            });
        }
        if max > Self::DEFAULT_MAX && !acknowledge_cost {
            return Err(Error::SizeLimit {
                size: max,
                cap: Self::DEFAULT_MAX,
                bell: bell_number(max)?,
            });
        }
        Ok(EnumerationCap { max })
    }

    pub fn max(self) -> usize {
        self.max
    }

    fn check(self, size: usize) -> Result<()> {
        if size > self.max {
            let bell = bell_number(size.min(Self::HARD_MAX)).unwrap_or(u64::MAX);
            return Err(Error::SizeLimit {
                size,
                cap: self.max,
                bell,
            });
        }
        Ok(())
    }
}

impl Default for EnumerationCap {
    fn default() -> Self {
        EnumerationCap { max: Self::DEFAULT_MAX }
    }
}

/// Exact Bell number via the Bell triangle, for `0 <= n <= 20`.
pub fn bell_number(n: usize) -> Result<u64> {
    if n > EnumerationCap::HARD_MAX {
        return Err(Error::OutOfRange {
            what: "Bell number index",
            value: n,
            min: 0,
            max: EnumerationCap::HARD_MAX,
        });
    }
    let mut row = vec![1u64];
    for _ in 0..n {
        let mut next = Vec::with_capacity(row.len() + 1);
        next.push(*row.last().expect("rows are never empty"));
        for &v in &row {
            let last = *next.last().expect("seeded above");
            next.push(last + v);
        }
        row = next;
    }
    Ok(row[0])
}

/// Restricted-growth strings of length `n` in lexicographic order.
fn restricted_growth_strings(n: usize) -> Vec<Vec<u8>> {
    // `blocks` counts the distinct symbols used so far; the next symbol may
    // reuse any of them or open exactly one new block
    fn extend(prefix: &mut Vec<u8>, blocks: u8, n: usize, out: &mut Vec<Vec<u8>>) {
        if prefix.len() == n {
            out.push(prefix.clone());
            return;
        }
        for b in 0..=blocks {
            prefix.push(b);
            extend(prefix, blocks.max(b + 1), n, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    extend(&mut Vec::with_capacity(n), 0, n, &mut out);
    out
}

fn partition_from_rgs(rgs: &[u8], labels: &[usize]) -> Partition {
    let blocks = rgs.iter().map(|&b| b as usize + 1).max().unwrap_or(0);
    let mut cells = vec![0u32; blocks];
    for (&b, &l) in rgs.iter().zip(labels) {
        cells[b as usize] |= 1 << l;
    }
    Partition {
        cells: cells.into_iter().map(LabelSet).collect(),
    }
}

/// Every partition of `ground`, in canonical order.
///
/// The empty set has exactly one partition, the empty one.
pub fn partitions_of(ground: LabelSet, cap: EnumerationCap) -> Result<Vec<Partition>> {
    cap.check(ground.len())?;
    let labels: Vec<usize> = ground.iter().collect();
    Ok(restricted_growth_strings(labels.len())
        .iter()
        .map(|rgs| partition_from_rgs(rgs, &labels))
        .collect())
}

/// Every partition of a non-empty cell; same ordering as [`partitions_of`].
pub fn subpartitions_of(cell: LabelSet) -> Result<Vec<Partition>> {
    if cell.is_empty() {
        return Err(Error::OutOfRange {
            what: "cell size",
            value: 0,
            min: 1,
            max: MAX_LABELS,
        });
    }
    partitions_of(
        cell,
        EnumerationCap {
            max: EnumerationCap::HARD_MAX,
        },
    )
}

/// Outer partitions of `{0..n-1}` together with the sub-partitions of every
/// non-empty cell, built once per corrector step.
#[derive(Debug, Clone)]
pub struct PartitionTable {
    size: usize,
    partitions: Vec<Partition>,
    // indexed by cell bitmask; entry 0 (the empty cell) stays empty
    subpartitions: Vec<Vec<Partition>>,
}

impl PartitionTable {
    pub fn new(size: usize, cap: EnumerationCap) -> Result<Self> {
        cap.check(size)?;
        let ground = LabelSet::first(size);
        let partitions = partitions_of(ground, cap)?;

        // one RGS list per cell size, relabelled per cell
        let rgs_by_size: Vec<Vec<Vec<u8>>> = (0..=size).map(restricted_growth_strings).collect();
        let mut subpartitions = vec![Vec::new(); 1usize << size];
        for (bits, slot) in subpartitions.iter_mut().enumerate().skip(1) {
            let cell = LabelSet(bits as u32);
            let labels: Vec<usize> = cell.iter().collect();
            *slot = rgs_by_size[labels.len()]
                .iter()
                .map(|rgs| partition_from_rgs(rgs, &labels))
                .collect();
        }
        Ok(PartitionTable {
            size,
            partitions,
            subpartitions,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn ground(&self) -> LabelSet {
        LabelSet::first(self.size)
    }

    pub fn partitions(&self) -> &[Partition] {
        &self.partitions
    }

    pub fn subpartitions(&self, cell: LabelSet) -> &[Partition] {
        &self.subpartitions[cell.bits() as usize]
    }

    /// All non-empty cells of the ground set, ordered by bitmask.
    pub fn cells(&self) -> impl Iterator<Item = LabelSet> {
        (1u32..(1u32 << self.size)).map(LabelSet)
    }

    pub fn cell_count(&self) -> usize {
        (1usize << self.size) - 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cells(p: &Partition) -> Vec<Vec<usize>> {
        p.cells().iter().map(|c| c.iter().collect()).collect()
    }

    #[test]
    fn empty_set_has_one_empty_partition() {
        let ps = partitions_of(LabelSet::EMPTY, EnumerationCap::default()).unwrap();
        assert_eq!(ps.len(), 1);
        assert!(ps[0].is_empty());
        assert!(ps[0].is_partition_of(LabelSet::EMPTY));
    }

    #[test]
    fn two_labels_in_canonical_order() {
        let ps = partitions_of(LabelSet::first(2), EnumerationCap::default()).unwrap();
        let got: Vec<_> = ps.iter().map(cells).collect();
        assert_eq!(got, vec![vec![vec![0, 1]], vec![vec![0], vec![1]]]);
    }

    #[test]
    fn counts_match_hand_values() {
        let cap = EnumerationCap::default();
        assert_eq!(partitions_of(LabelSet::first(4), cap).unwrap().len(), 15);
        let cell = LabelSet::from_labels([2]).unwrap();
        let sub = subpartitions_of(cell).unwrap();
        assert_eq!(sub.len(), 1);
        assert_eq!(cells(&sub[0]), vec![vec![2]]);
        assert_eq!(subpartitions_of(LabelSet::first(3)).unwrap().len(), 5);
        assert_eq!(subpartitions_of(LabelSet::first(5)).unwrap().len(), 52);
    }

    #[test]
    fn bell_triangle_values() {
        assert_eq!(bell_number(0).unwrap(), 1);
        assert_eq!(bell_number(6).unwrap(), 203);
        assert_eq!(bell_number(8).unwrap(), 4140);
        assert_eq!(bell_number(20).unwrap(), 51_724_158_235_372);
        assert!(matches!(bell_number(21), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn cap_is_enforced_with_bell_cost() {
        let err = partitions_of(LabelSet::first(9), EnumerationCap::default()).unwrap_err();
        assert_eq!(
            err,
            Error::SizeLimit {
                size: 9,
                cap: 8,
                bell: 21147
            }
        );
        assert!(EnumerationCap::new(9, false).is_err());
        let cap = EnumerationCap::new(9, true).unwrap();
        assert_eq!(partitions_of(LabelSet::first(9), cap).unwrap().len(), 21147);
        assert!(EnumerationCap::new(21, true).is_err());
    }

    #[test]
    fn empty_cell_rejected() {
        assert!(subpartitions_of(LabelSet::EMPTY).is_err());
    }

    #[test]
    fn non_contiguous_ground_keeps_labels() {
        let ground = LabelSet::from_labels([1, 4, 6]).unwrap();
        let ps = partitions_of(ground, EnumerationCap::default()).unwrap();
        assert_eq!(ps.len(), 5);
        assert_eq!(cells(&ps[4]), vec![vec![1], vec![4], vec![6]]);
        assert!(ps.iter().all(|p| p.is_partition_of(ground)));
    }

    #[test]
    fn table_memoizes_subpartitions_for_every_cell() {
        let table = PartitionTable::new(4, EnumerationCap::default()).unwrap();
        assert_eq!(table.partitions().len(), 15);
        assert_eq!(table.cell_count(), 15);
        for cell in table.cells() {
            let direct = subpartitions_of(cell).unwrap();
            assert_eq!(table.subpartitions(cell), direct.as_slice());
        }
    }

    #[test]
    fn display_and_serde() {
        let p = Partition::new(vec![
            LabelSet::from_labels([2]).unwrap(),
            LabelSet::from_labels([0, 1]).unwrap(),
        ]);
        assert_eq!(p.to_string(), "{0,1}|{2}");
        let json = serde_json::to_string(&p).unwrap();
        assert_eq!(json, "[[0,1],[2]]");
        let back: Partition = serde_json::from_str(&json).unwrap();
        assert_eq!(back, p);
    }
}
