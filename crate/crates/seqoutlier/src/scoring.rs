//! Grouping functionals on distribution tuples, scores on observation
//! matrices, and the two threshold schedules used by the sequential tests.
//!
//! For a tuple `Q = (Q_1, .., Q_M)` and a candidate outlier set `B`:
//!
//! * `g_set(Q, B) = sum_{j not in B} D(Q_j || mean of Q outside B) + sum_{i in B} D(Q_i || mean of Q inside B)`
//! * `g_li_set(Q, B)` keeps only the first (nominal-group) sum.
//! * `g_i(Q, i) = g_set(Q, {i})`.
//!
//! Each term compares a member with the arithmetic mean of its own group, so
//! the mean dominates the member and every value is finite.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{out_of_range, Error, Result};
use crate::prob::{kl_raw, symbol_counts, type_from_counts, Distribution};

/// Largest number of streams a [`Subset`] can index.
pub const MAX_STREAMS: usize = 64;

/// A subset of stream indices `{0, .., M-1}` stored as a bitmask.
///
/// Indices are zero-based in the API. [`fmt::Display`] and serde use the
/// one-based convention, e.g. `{1,2}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Subset(u64);

impl Subset {
    pub const EMPTY: Subset = Subset(0);

    pub fn from_indices(indices: &[usize]) -> Result<Self> {
        let mut mask = 0u64;
        for &i in indices {
            if i >= MAX_STREAMS {
                return Err(Error::InvalidSubset(format!("index {i} too large")));
            }
            if mask & (1 << i) != 0 {
                return Err(Error::InvalidSubset(format!("duplicate index {i}")));
            }
            mask |= 1 << i;
        }
        Ok(Subset(mask))
    }

    pub fn singleton(i: usize) -> Self {
        assert!(i < MAX_STREAMS, "stream index {i} out of range");
        Subset(1 << i)
    }

    /// `{0, .., len-1}`.
    pub fn first(len: usize) -> Self {
        assert!(len <= MAX_STREAMS);
        if len == MAX_STREAMS {
            Subset(u64::MAX)
        } else {
            Subset((1u64 << len) - 1)
        }
    }

    pub fn from_mask(mask: u64) -> Self {
        Subset(mask)
    }

    pub fn mask(self) -> u64 {
        self.0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn contains(self, i: usize) -> bool {
        i < MAX_STREAMS && self.0 & (1 << i) != 0
    }

    /// Sorted member indices.
    pub fn members(self) -> Vec<usize> {
        (0..MAX_STREAMS).filter(|&i| self.contains(i)).collect()
    }

    /// Sorted indices in `{0, .., m-1}` outside the subset.
    pub fn complement(self, m: usize) -> Vec<usize> {
        (0..m).filter(|&i| !self.contains(i)).collect()
    }

    pub fn max_index(self) -> Option<usize> {
        (self.0 != 0).then(|| 63 - self.0.leading_zeros() as usize)
    }

    pub(crate) fn check_within(self, m: usize) -> Result<()> {
        match self.max_index() {
            Some(i) if i >= m => Err(Error::InvalidSubset(format!(
                "index {} outside 1..={m}",
                i + 1
            ))),
            _ => Ok(()),
        }
    }
}

/// Size first, then lexicographic on the sorted member list.
impl Ord for Subset {
    fn cmp(&self, other: &Self) -> Ordering {
        self.len()
            .cmp(&other.len())
            .then_with(|| self.members().cmp(&other.members()))
    }
}

impl PartialOrd for Subset {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.members().iter().map(|i| (i + 1).to_string()).collect();
        write!(f, "{{{}}}", parts.join(","))
    }
}

impl Serialize for Subset {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let one_based: Vec<usize> = self.members().iter().map(|i| i + 1).collect();
        one_based.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Subset {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let one_based = Vec::<usize>::deserialize(d)?;
        if one_based.contains(&0) {
            return Err(serde::de::Error::custom("stream indices are 1-based"));
        }
        let zero_based: Vec<usize> = one_based.iter().map(|i| i - 1).collect();
        Subset::from_indices(&zero_based).map_err(serde::de::Error::custom)
    }
}

/// All `k`-element subsets of `{0, .., m-1}` in lexicographic order.
pub fn combinations(m: usize, k: usize) -> Vec<Subset> {
    fn rec(start: usize, m: usize, k: usize, mask: u64, out: &mut Vec<Subset>) {
        if k == 0 {
            out.push(Subset(mask));
            return;
        }
        for i in start..=(m - k) {
            rec(i + 1, m, k - 1, mask | (1 << i), out);
        }
    }
    let mut out = Vec::new();
    if k <= m {
        rec(0, m, k, 0, &mut out);
    }
    out
}

/// Whether candidates have size exactly `T` or any size in `1..=T`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CandidateMode {
    Exact,
    AtMost,
}

/// Enumerated candidate outlier sets in deterministic order.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    m: usize,
    t: usize,
    mode: CandidateMode,
    members: Vec<Subset>,
}

impl CandidateSet {
    pub fn new(m: usize, t: usize, mode: CandidateMode) -> Result<Self> {
        if m > MAX_STREAMS {
            return Err(out_of_range(format!("M = {m} exceeds {MAX_STREAMS}")));
        }
        if t == 0 || t >= m {
            return Err(out_of_range(format!(
                "T = {t} must lie in 1..M for M = {m}"
            )));
        }
        let sizes = match mode {
            CandidateMode::Exact => t..=t,
            CandidateMode::AtMost => 1..=t,
        };
        let members = sizes.flat_map(|s| combinations(m, s)).collect();
        Ok(Self {
            m,
            t,
            mode,
            members,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn mode(&self) -> CandidateMode {
        self.mode
    }

    pub fn members(&self) -> &[Subset] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Largest admissible outlier count for `m` streams: `ceil(m/2 - 1)`.
pub fn max_outliers(m: usize) -> usize {
    // ceil(m/2 - 1) = ceil((m - 2) / 2) for m >= 2
    m.saturating_sub(1) / 2
}

/// An ordered family of `M >= 3` distributions over a common alphabet.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionTuple {
    entries: Vec<Distribution>,
}

impl DistributionTuple {
    pub fn new(entries: Vec<Distribution>) -> Result<Self> {
        if entries.len() < 3 {
            return Err(out_of_range(format!(
                "need at least 3 entries, got {}",
                entries.len()
            )));
        }
        if entries.len() > MAX_STREAMS {
            return Err(out_of_range(format!("at most {MAX_STREAMS} entries")));
        }
        let a = entries[0].alphabet_size();
        if let Some(d) = entries.iter().find(|d| d.alphabet_size() != a) {
            return Err(Error::AlphabetMismatch(a, d.alphabet_size()));
        }
        Ok(Self { entries })
    }

    /// `pa` on the members of `outliers`, `pn` elsewhere.
    pub fn plug_in(
        pn: &Distribution,
        pa: &Distribution,
        m: usize,
        outliers: Subset,
    ) -> Result<Self> {
        crate::prob::check_same_alphabet(pn, pa)?;
        outliers.check_within(m)?;
        Self::new(
            (0..m)
                .map(|i| {
                    if outliers.contains(i) {
                        pa.clone()
                    } else {
                        pn.clone()
                    }
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Distribution] {
        &self.entries
    }

    pub fn alphabet_size(&self) -> usize {
        self.entries[0].alphabet_size()
    }

    fn check_proper(&self, b: Subset) -> Result<()> {
        b.check_within(self.len())?;
        if b.is_empty() || b.len() >= self.len() {
            return Err(Error::InvalidSubset(format!(
                "candidate {b} must be non-empty and proper"
            )));
        }
        Ok(())
    }
}

/// `sum_j D(Q_j || mean of the family)` over raw probability vectors.
pub(crate) fn group_spread(members: &[&[f64]]) -> f64 {
    match members.len() {
        0 | 1 => 0.0,
        n => {
            let a = members[0].len();
            let mut mean = vec![0.0; a];
            for q in members {
                for (m, p) in mean.iter_mut().zip(q.iter()) {
                    *m += p;
                }
            }
            mean.iter_mut().for_each(|m| *m /= n as f64);
            members.iter().map(|q| kl_raw(q, &mean)).sum()
        }
    }
}

fn spread_of(tuple: &DistributionTuple, indices: &[usize]) -> f64 {
    let rows: Vec<&[f64]> = indices.iter().map(|&i| tuple.entries[i].probs()).collect();
    group_spread(&rows)
}

/// `sum_{j != i} D(Q_j || mean_{l != i} Q_l)`.
pub fn g_i(tuple: &DistributionTuple, i: usize) -> Result<f64> {
    if i >= tuple.len() {
        return Err(out_of_range(format!(
            "index {i} outside 0..{}",
            tuple.len()
        )));
    }
    g_set(tuple, Subset::singleton(i))
}

/// Nominal-group spread plus outlier-group spread for candidate `b`.
pub fn g_set(tuple: &DistributionTuple, b: Subset) -> Result<f64> {
    tuple.check_proper(b)?;
    Ok(spread_of(tuple, &b.complement(tuple.len())) + spread_of(tuple, &b.members()))
}

/// Nominal-group spread only for candidate `b`.
pub fn g_li_set(tuple: &DistributionTuple, b: Subset) -> Result<f64> {
    tuple.check_proper(b)?;
    Ok(spread_of(tuple, &b.complement(tuple.len())))
}

/// Running per-row symbol counts for `M` streams.
#[derive(Debug, Clone, PartialEq)]
pub struct TypeCounts {
    m: usize,
    alphabet_size: usize,
    k: u64,
    counts: Vec<u64>,
}

impl TypeCounts {
    pub fn new(m: usize, alphabet_size: usize) -> Self {
        Self {
            m,
            alphabet_size,
            k: 0,
            counts: vec![0; m * alphabet_size],
        }
    }

    pub fn num_rows(&self) -> usize {
        self.m
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet_size
    }

    /// Number of columns absorbed so far.
    pub fn len(&self) -> u64 {
        self.k
    }

    pub fn is_empty(&self) -> bool {
        self.k == 0
    }

    pub fn row_counts(&self, row: usize) -> &[u64] {
        &self.counts[row * self.alphabet_size..(row + 1) * self.alphabet_size]
    }

    pub fn push(&mut self, column: &[usize]) -> Result<()> {
        if column.len() != self.m {
            return Err(out_of_range(format!(
                "column has {} symbols, expected {}",
                column.len(),
                self.m
            )));
        }
        if let Some(&s) = column.iter().find(|&&s| s >= self.alphabet_size) {
            return Err(out_of_range(format!("symbol {s} outside alphabet")));
        }
        for (row, &s) in column.iter().enumerate() {
            self.counts[row * self.alphabet_size + s] += 1;
        }
        self.k += 1;
        Ok(())
    }

    /// Spread of the given rows' types, computed directly from counts.
    fn spread(&self, rows: impl Iterator<Item = usize> + Clone) -> f64 {
        let size = rows.clone().count();
        if size < 2 {
            return 0.0;
        }
        let a = self.alphabet_size;
        let mut acc = 0.0;
        for x in 0..a {
            let total: u64 = rows.clone().map(|r| self.counts[r * a + x]).sum();
            if total == 0 {
                continue;
            }
            for r in rows.clone() {
                let c = self.counts[r * a + x];
                if c > 0 {
                    acc += c as f64 * ((c * size as u64) as f64 / total as f64).ln();
                }
            }
        }
        (acc / self.k as f64).max(0.0)
    }

    /// Score of candidate `b`: [`g_set`] applied to the row types.
    pub fn score(&self, b: Subset) -> f64 {
        let m = self.m;
        let out = (0..m).filter(move |&i| !b.contains(i));
        let inside = (0..m).filter(move |&i| b.contains(i));
        self.spread(out) + self.spread(inside)
    }

    /// Nominal-group part of [`TypeCounts::score`].
    pub fn score_li(&self, b: Subset) -> f64 {
        let m = self.m;
        self.spread((0..m).filter(move |&i| !b.contains(i)))
    }

    pub fn types(&self) -> Result<DistributionTuple> {
        DistributionTuple::new(
            (0..self.m)
                .map(|r| type_from_counts(self.row_counts(r)))
                .collect::<Result<_>>()?,
        )
    }
}

/// `M` equal-length symbol sequences, grown one column at a time.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationMatrix {
    rows: Vec<Vec<usize>>,
    counts: TypeCounts,
}

impl ObservationMatrix {
    pub fn new(m: usize, alphabet_size: usize) -> Self {
        Self {
            rows: vec![Vec::new(); m],
            counts: TypeCounts::new(m, alphabet_size),
        }
    }

    /// Builds a matrix from complete rows of equal length.
    pub fn from_rows(rows: Vec<Vec<usize>>, alphabet_size: usize) -> Result<Self> {
        let len = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != len) {
            return Err(out_of_range("rows have different lengths"));
        }
        let mut obs = Self::new(rows.len(), alphabet_size);
        for r in &rows {
            symbol_counts(r, alphabet_size)?;
        }
        let mut column = vec![0; rows.len()];
        for k in 0..len {
            for (c, r) in column.iter_mut().zip(&rows) {
                *c = r[k];
            }
            obs.push_column(&column)?;
        }
        Ok(obs)
    }

    pub fn push_column(&mut self, column: &[usize]) -> Result<()> {
        self.counts.push(column)?;
        for (row, &s) in self.rows.iter_mut().zip(column) {
            row.push(s);
        }
        Ok(())
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn alphabet_size(&self) -> usize {
        self.counts.alphabet_size()
    }

    /// Current column count `k`.
    pub fn len(&self) -> usize {
        self.counts.len() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn rows(&self) -> &[Vec<usize>] {
        &self.rows
    }

    pub fn column(&self, k: usize) -> Vec<usize> {
        self.rows.iter().map(|r| r[k]).collect()
    }

    pub fn counts(&self) -> &TypeCounts {
        &self.counts
    }

    pub fn types(&self) -> Result<DistributionTuple> {
        self.counts.types()
    }
}

/// Score of candidate `b` on the row types of `obs`.
pub fn score(obs: &ObservationMatrix, b: Subset) -> Result<f64> {
    if obs.is_empty() {
        return Err(out_of_range("score of an empty observation matrix"));
    }
    b.check_within(obs.num_rows())?;
    if b.is_empty() || b.len() >= obs.num_rows() {
        return Err(Error::InvalidSubset(format!(
            "candidate {b} must be non-empty and proper"
        )));
    }
    Ok(obs.counts.score(b))
}

/// `f(k) = (M+1) |X| ln(k+1) / k`.
pub fn threshold_f(k: u64, m: usize, alphabet_size: usize) -> f64 {
    let k = k.max(1) as f64;
    (m + 1) as f64 * alphabet_size as f64 * (k + 1.0).ln() / k
}

/// `g(beta, k) = -ln(beta (|X|-1)) / k + f(k)`.
pub fn threshold_g(beta: f64, k: u64, m: usize, alphabet_size: usize) -> Result<f64> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(out_of_range(format!("beta = {beta} must lie in (0,1)")));
    }
    if k == 0 || alphabet_size < 2 {
        return Err(out_of_range("threshold_g needs k >= 1 and |X| >= 2"));
    }
    let first = -(beta * (alphabet_size - 1) as f64).ln() / k as f64;
    Ok(first + threshold_f(k, m, alphabet_size))
}
