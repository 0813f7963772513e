//! Constrained minimisation of weighted KL sums over tuples of distributions.
//!
//! A [`TupleProblem`] minimises
//! `sum_{i in B} D(Q_i || P_A) + sum_{j not in B} D(Q_j || P_N)` over
//! `M`-tuples subject to constraints on grouping functionals. Streams that
//! share their membership pattern across every set mentioned by the problem
//! are interchangeable, so the problem is reduced to one distribution per
//! pattern ([`GroupedProblem`]). For constraints of the form `G <= lambda`
//! the reduction is exact because every term is jointly convex.
//!
//! The grouped problem is solved by a coarse simplex grid followed by a
//! pattern search whose step shrinks geometrically each round. Constraints
//! are enforced by rejection.

use serde::{Deserialize, Serialize};

use crate::error::{out_of_range, Error, Result};
use crate::prob::{kl_raw, Distribution};
use crate::scoring::{g_li_set, g_set, DistributionTuple, Subset};

/// Absolute slack allowed when testing a constraint, absorbing rounding in
/// group means (for instance `(q + 2q) / 3 != q` in floating point).
pub const FEASIBILITY_SLACK: f64 = 1e-12;

/// Tuning of the grid-and-refine optimiser.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimplexOptimizerSettings {
    /// Target spacing of the coarse grid on each simplex coordinate.
    pub coarse_step: f64,
    /// Number of refinement rounds after the coarse grid.
    pub refine_rounds: usize,
    /// Step multiplier between consecutive rounds.
    pub shrink: f64,
    /// Cap on coarse grid size; the step is widened until the grid fits.
    pub max_grid_points: u64,
    /// Number of best coarse points refined independently.
    pub seeds: usize,
    /// Minimum decrease accepted as an improving move.
    pub tolerance: f64,
}

impl Default for SimplexOptimizerSettings {
    fn default() -> Self {
        Self {
            coarse_step: 0.02,
            refine_rounds: 4,
            shrink: 0.1,
            max_grid_points: 8_000_000,
            seeds: 4,
            tolerance: 1e-15,
        }
    }
}

impl SimplexOptimizerSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.coarse_step > 0.0 && self.coarse_step <= 0.5) {
            return Err(out_of_range(format!(
                "coarse step {} not in (0, 0.5]",
                self.coarse_step
            )));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(out_of_range(format!(
                "shrink {} not in (0, 1)",
                self.shrink
            )));
        }
        if !(self.tolerance > 0.0) {
            return Err(out_of_range("tolerance must be positive"));
        }
        if self.seeds == 0 || self.max_grid_points == 0 {
            return Err(out_of_range("seeds and max_grid_points must be positive"));
        }
        Ok(())
    }
}

/// One objective term `weight * D(Q_g || target)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub weight: f64,
    pub target: Vec<f64>,
}

/// A group of `size` interchangeable streams sharing one distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub size: usize,
    pub terms: Vec<Term>,
}

/// Sum over blocks of `sum_{g in block} size_g D(Q_g || block mean)`, where
/// the block mean weights each group by its size.
#[derive(Debug, Clone, PartialEq)]
pub struct SpreadFunctional {
    pub blocks: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum GroupConstraint {
    /// `functional <= bound`
    AtMost(SpreadFunctional, f64),
    /// `lhs >= rhs`
    AtLeast(SpreadFunctional, SpreadFunctional),
}

/// A reduced problem over one distribution per group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedProblem {
    pub alphabet_size: usize,
    pub groups: Vec<Group>,
    pub constraints: Vec<GroupConstraint>,
}

/// Minimiser returned by [`minimize_kl_sum`].
#[derive(Debug, Clone, PartialEq)]
pub struct Optimum {
    pub value: f64,
    /// Probability vector of each group at the minimiser.
    pub groups: Vec<Vec<f64>>,
    /// Coarse grid spacing actually used.
    pub coarse_step: f64,
    pub evaluations: u64,
}

impl GroupedProblem {
    fn validate(&self) -> Result<()> {
        if self.alphabet_size < 2 {
            return Err(out_of_range("alphabet size must be at least 2"));
        }
        if self.groups.is_empty() {
            return Err(out_of_range("problem has no groups"));
        }
        for g in &self.groups {
            if g.size == 0 {
                return Err(out_of_range("empty group"));
            }
            for t in &g.terms {
                if t.target.len() != self.alphabet_size {
                    return Err(Error::AlphabetMismatch(t.target.len(), self.alphabet_size));
                }
                if !(t.weight >= 0.0) {
                    return Err(out_of_range("negative term weight"));
                }
            }
        }
        let functionals = self.constraints.iter().flat_map(|c| match c {
            GroupConstraint::AtMost(f, _) => vec![f],
            GroupConstraint::AtLeast(a, b) => vec![a, b],
        });
        for f in functionals {
            if f.blocks.iter().flatten().any(|&g| g >= self.groups.len()) {
                return Err(out_of_range("functional refers to a missing group"));
            }
        }
        Ok(())
    }

    fn group_objective(&self, g: usize, q: &[f64]) -> f64 {
        self.groups[g]
            .terms
            .iter()
            .filter(|t| t.weight > 0.0)
            .map(|t| t.weight * kl_raw(q, &t.target))
            .sum()
    }

    fn spread(&self, f: &SpreadFunctional, point: &[Vec<f64>], mean: &mut [f64]) -> f64 {
        let mut total = 0.0;
        for block in &f.blocks {
            if block.len() < 2 {
                continue;
            }
            let weight: usize = block.iter().map(|&g| self.groups[g].size).sum();
            mean.iter_mut().for_each(|m| *m = 0.0);
            for &g in block {
                let s = self.groups[g].size as f64;
                for (m, p) in mean.iter_mut().zip(&point[g]) {
                    *m += s * p;
                }
            }
            mean.iter_mut().for_each(|m| *m /= weight as f64);
            for &g in block {
                total += self.groups[g].size as f64 * kl_raw(&point[g], mean);
            }
        }
        total
    }

    fn feasible(&self, point: &[Vec<f64>], mean: &mut [f64]) -> bool {
        self.constraints.iter().all(|c| match c {
            GroupConstraint::AtMost(f, bound) => {
                self.spread(f, point, mean) <= bound + FEASIBILITY_SLACK
            }
            GroupConstraint::AtLeast(a, b) => {
                self.spread(a, point, mean) + FEASIBILITY_SLACK >= self.spread(b, point, mean)
            }
        })
    }

    /// Smallest constraint margin; positive means strictly feasible.
    fn slack(&self, point: &[Vec<f64>], mean: &mut [f64]) -> f64 {
        self.constraints
            .iter()
            .map(|c| match c {
                GroupConstraint::AtMost(f, bound) => bound - self.spread(f, point, mean),
                GroupConstraint::AtLeast(a, b) => {
                    self.spread(a, point, mean) - self.spread(b, point, mean)
                }
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Objective and feasibility of an explicit point; `None` if infeasible.
    pub fn evaluate(&self, point: &[Vec<f64>]) -> Option<f64> {
        let mut mean = vec![0.0; self.alphabet_size];
        if !self.feasible(point, &mut mean) {
            return None;
        }
        Some(
            (0..self.groups.len())
                .map(|g| self.group_objective(g, &point[g]))
                .sum(),
        )
    }
}

fn binomial(n: u64, k: u64) -> u64 {
    (0..k).fold(1u64, |acc, i| acc.saturating_mul(n - i) / (i + 1))
}

/// All points of the simplex over `a` symbols with coordinates in `{0, 1/n, .., 1}`.
fn simplex_grid(a: usize, n: usize) -> Vec<Vec<f64>> {
    fn rec(a: usize, n: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<f64>>) {
        if cur.len() == a - 1 {
            cur.push(left);
            out.push(cur.iter().map(|&c| c as f64 / n as f64).collect());
            cur.pop();
            return;
        }
        for c in 0..=left {
            cur.push(c);
            rec(a, n, left - c, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(a, n, n, &mut Vec::with_capacity(a), &mut out);
    out
}

/// Chooses the number of grid divisions so that the product grid fits the budget.
fn coarse_divisions(settings: &SimplexOptimizerSettings, a: usize, groups: usize) -> usize {
    let mut n = (1.0 / settings.coarse_step).round().max(1.0) as usize;
    while n > 1 {
        let per_group = binomial((n + a - 1) as u64, (a - 1) as u64) as f64;
        if per_group.powi(groups as i32) <= settings.max_grid_points as f64 {
            break;
        }
        n -= 1;
    }
    n
}

struct Search<'a> {
    problem: &'a GroupedProblem,
    mean: Vec<f64>,
    point: Vec<Vec<f64>>,
    evaluations: u64,
}

impl<'a> Search<'a> {
    fn new(problem: &'a GroupedProblem) -> Self {
        let a = problem.alphabet_size;
        Self {
            problem,
            mean: vec![0.0; a],
            point: vec![vec![0.0; a]; problem.groups.len()],
            evaluations: 0,
        }
    }

    /// Evaluates free coordinates `y` (first `a-1` probabilities per group).
    fn eval_coords(&mut self, y: &[f64]) -> Option<f64> {
        let a = self.problem.alphabet_size;
        for (g, chunk) in y.chunks(a - 1).enumerate() {
            let mut rest = 1.0;
            for (dst, &v) in self.point[g].iter_mut().zip(chunk) {
                if v < 0.0 {
                    return None;
                }
                *dst = v;
                rest -= v;
            }
            if rest < -1e-15 {
                return None;
            }
            self.point[g][a - 1] = rest.max(0.0);
        }
        self.evaluations += 1;
        if !self.problem.feasible(&self.point, &mut self.mean) {
            return None;
        }
        Some(
            (0..self.problem.groups.len())
                .map(|g| self.problem.group_objective(g, &self.point[g]))
                .sum(),
        )
    }
}

fn coords_of(point: &[Vec<f64>]) -> Vec<f64> {
    point
        .iter()
        .flat_map(|q| q[..q.len() - 1].iter().copied())
        .collect()
}

fn point_of(y: &[f64], a: usize) -> Vec<Vec<f64>> {
    y.chunks(a - 1)
        .map(|c| {
            let mut q = c.to_vec();
            q.push((1.0 - c.iter().sum::<f64>()).max(0.0));
            q
        })
        .collect()
}

/// Move directions: the full `{-1,0,1}^d` stencil when small, otherwise all
/// single and paired coordinate moves.
fn stencil(d: usize) -> Vec<Vec<i8>> {
    let mut out = Vec::new();
    if d <= 8 {
        let total = 3usize.pow(d as u32);
        for code in 0..total {
            let mut c = code;
            let dir: Vec<i8> = (0..d)
                .map(|_| {
                    let v = (c % 3) as i8 - 1;
                    c /= 3;
                    v
                })
                .collect();
            if dir.iter().any(|&v| v != 0) {
                out.push(dir);
            }
        }
    } else {
        for i in 0..d {
            for s in [-1i8, 1] {
                let mut dir = vec![0; d];
                dir[i] = s;
                out.push(dir);
            }
        }
        for i in 0..d {
            for j in (i + 1)..d {
                for (si, sj) in [(-1i8, -1i8), (-1, 1), (1, -1), (1, 1)] {
                    let mut dir = vec![0; d];
                    dir[i] = si;
                    dir[j] = sj;
                    out.push(dir);
                }
            }
        }
    }
    out
}

/// Bisection steps used to pull an infeasible trial point back to the
/// constraint boundary along the segment from the search center.
const PROJECTION_STEPS: usize = 40;

impl Search<'_> {
    /// Constraint margin at free coordinates `y`; `None` outside the simplex.
    fn margin(&mut self, y: &[f64]) -> Option<f64> {
        let a = self.problem.alphabet_size;
        for chunk in y.chunks(a - 1) {
            if chunk.iter().any(|&v| v < 0.0) || chunk.iter().sum::<f64>() > 1.0 + 1e-15 {
                return None;
            }
        }
        let point = point_of(y, a);
        self.evaluations += 1;
        Some(self.problem.slack(&point, &mut self.mean))
    }

    /// A strictly feasible point a short step from `y` along the numerical
    /// gradient of the constraint margin, i.e. into the feasible set.
    fn inward_center(&mut self, y: &[f64], h: f64) -> Option<Vec<f64>> {
        const EPS: f64 = 1e-7;
        let mut grad = vec![0.0; y.len()];
        let mut probe = y.to_vec();
        for i in 0..y.len() {
            probe[i] = y[i] + EPS;
            let up = self.margin(&probe);
            probe[i] = y[i] - EPS;
            let down = self.margin(&probe);
            probe[i] = y[i];
            let here = self.margin(y)?;
            grad[i] = match (up, down) {
                (Some(u), Some(d)) => (u - d) / (2.0 * EPS),
                (Some(u), None) => (u - here) / EPS,
                (None, Some(d)) => (here - d) / EPS,
                (None, None) => 0.0,
            };
        }
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return None;
        }
        let mut delta = h;
        for _ in 0..30 {
            let c: Vec<f64> = y
                .iter()
                .zip(&grad)
                .map(|(v, g)| v + delta * g / norm)
                .collect();
            if self.margin(&c).is_some_and(|m| m > 0.0) {
                return Some(c);
            }
            delta *= 0.5;
        }
        None
    }

    /// Farthest feasible point on the segment from `center` to `target`.
    fn project(&mut self, center: &[f64], target: &[f64], buf: &mut Vec<f64>) -> Option<f64> {
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        let mut best = None;
        for _ in 0..PROJECTION_STEPS {
            let mid = 0.5 * (lo + hi);
            buf.clear();
            buf.extend(center.iter().zip(target).map(|(c, t)| c + mid * (t - c)));
            match self.eval_coords(buf) {
                Some(v) => {
                    lo = mid;
                    best = Some(v);
                }
                None => hi = mid,
            }
        }
        buf.clear();
        buf.extend(center.iter().zip(target).map(|(c, t)| c + lo * (t - c)));
        best
    }
}

/// Stencil pattern search with shrinking step. When no stencil move improves,
/// infeasible moves are pulled back to the boundary toward a strictly
/// feasible point just inside it (or toward `center` if none is found), which
/// lets the search slide along a curved constraint boundary.
fn pattern_search(
    search: &mut Search<'_>,
    start: (f64, Vec<f64>),
    center: Option<&[f64]>,
    base_step: f64,
    settings: &SimplexOptimizerSettings,
) -> (f64, Vec<f64>) {
    let (mut best, mut y) = start;
    let dirs = stencil(y.len());
    let mut trial = y.clone();
    let mut projected = Vec::with_capacity(y.len());
    let max_moves = (4.0 / settings.shrink).ceil() as usize * 50;
    let mut h = base_step;
    for _ in 0..settings.refine_rounds {
        h *= settings.shrink;
        for _ in 0..max_moves {
            let mut improved: Option<(f64, usize)> = None;
            for (k, dir) in dirs.iter().enumerate() {
                for ((t, &base), &s) in trial.iter_mut().zip(&y).zip(dir) {
                    *t = base + h * s as f64;
                }
                if let Some(v) = search.eval_coords(&trial) {
                    let bar = improved.map_or(best - settings.tolerance, |(b, _)| b);
                    if v < bar {
                        improved = Some((v, k));
                    }
                }
            }
            if let Some((v, k)) = improved {
                for (t, &s) in y.iter_mut().zip(&dirs[k]) {
                    *t += h * s as f64;
                }
                best = v;
                continue;
            }
            let local = search.inward_center(&y, h);
            let Some(c) = local.as_deref().or(center) else {
                break;
            };
            let mut improved: Option<(f64, Vec<f64>)> = None;
            for dir in &dirs {
                for ((t, &base), &s) in trial.iter_mut().zip(&y).zip(dir) {
                    *t = base + h * s as f64;
                }
                if search.eval_coords(&trial).is_some() {
                    continue;
                }
                if let Some(v) = search.project(c, &trial, &mut projected) {
                    let bar = improved
                        .as_ref()
                        .map_or(best - settings.tolerance, |(b, _)| *b);
                    if v < bar {
                        improved = Some((v, projected.clone()));
                    }
                }
            }
            match improved {
                Some((v, p)) => {
                    y = p;
                    best = v;
                }
                None => break,
            }
        }
    }
    (best, y)
}

/// Minimises the grouped objective under its constraints.
///
/// The point where every group sits at its first term's target is tried
/// first; if feasible with value zero it is returned immediately.
pub fn minimize_kl_sum(
    problem: &GroupedProblem,
    settings: &SimplexOptimizerSettings,
) -> Result<Optimum> {
    problem.validate()?;
    settings.validate()?;
    let a = problem.alphabet_size;
    let n_groups = problem.groups.len();
    let mut search = Search::new(problem);

    let anchor: Option<Vec<Vec<f64>>> = problem
        .groups
        .iter()
        .map(|g| g.terms.first().map(|t| t.target.clone()))
        .collect();
    let mut seeds: Vec<(f64, Vec<f64>)> = Vec::new();
    if let Some(anchor) = anchor {
        let y = coords_of(&anchor);
        if let Some(v) = search.eval_coords(&y) {
            if v == 0.0 {
                return Ok(Optimum {
                    value: 0.0,
                    groups: anchor,
                    coarse_step: 0.0,
                    evaluations: search.evaluations,
                });
            }
            seeds.push((v, y));
        }
    }

    let divisions = coarse_divisions(settings, a, n_groups);
    let grid = simplex_grid(a, divisions);
    let table: Vec<Vec<f64>> = (0..n_groups)
        .map(|g| grid.iter().map(|q| problem.group_objective(g, q)).collect())
        .collect();
    let keep = settings.seeds;
    // Best feasible grid points, sorted ascending by value then index order.
    let mut best: Vec<(f64, Vec<usize>)> = Vec::with_capacity(keep + 1);
    let mut idx = vec![0usize; n_groups];
    let mut point: Vec<Vec<f64>> = vec![grid[0].clone(); n_groups];
    let mut mean = vec![0.0; a];
    'grid: loop {
        let value: f64 = idx.iter().enumerate().map(|(g, &i)| table[g][i]).sum();
        let bar = if best.len() < keep {
            f64::INFINITY
        } else {
            best[keep - 1].0
        };
        if value < bar {
            for (g, &i) in idx.iter().enumerate() {
                point[g].copy_from_slice(&grid[i]);
            }
            search.evaluations += 1;
            if problem.feasible(&point, &mut mean) {
                let pos = best.partition_point(|(v, _)| *v <= value);
                best.insert(pos, (value, idx.clone()));
                best.truncate(keep);
            }
        }
        for g in (0..n_groups).rev() {
            idx[g] += 1;
            if idx[g] < grid.len() {
                continue 'grid;
            }
            idx[g] = 0;
        }
        break;
    }
    for (v, ix) in best {
        let pt: Vec<Vec<f64>> = ix.iter().map(|&i| grid[i].clone()).collect();
        seeds.push((v, coords_of(&pt)));
    }
    if seeds.is_empty() {
        return Err(Error::Infeasible);
    }

    // Strictly feasible center for boundary projection: the best-margin point
    // among the seeds and the points with every group equal.
    let mut candidates: Vec<Vec<f64>> = seeds.iter().map(|(_, y)| y.clone()).collect();
    let uniform = vec![1.0 / a as f64; a];
    let equal_points = problem
        .groups
        .iter()
        .flat_map(|g| g.terms.iter().map(|t| t.target.clone()))
        .chain(std::iter::once(uniform));
    for q in equal_points {
        candidates.push(coords_of(&vec![q; n_groups]));
    }
    let center = candidates
        .into_iter()
        .map(|y| {
            let margin = problem.slack(&point_of(&y, a), &mut mean);
            (margin, y)
        })
        .filter(|(m, _)| *m > 0.0)
        .fold(None::<(f64, Vec<f64>)>, |acc, c| match acc {
            Some(b) if b.0 >= c.0 => Some(b),
            _ => Some(c),
        })
        .map(|(_, y)| y);

    let base_step = 1.0 / divisions as f64;
    let mut winner: Option<(f64, Vec<f64>)> = None;
    for seed in seeds {
        let refined = pattern_search(&mut search, seed, center.as_deref(), base_step, settings);
        if winner.as_ref().map_or(true, |(w, _)| refined.0 < *w) {
            winner = Some(refined);
        }
    }
    let (value, y) = winner.expect("at least one seed");
    Ok(Optimum {
        value: value.max(0.0),
        groups: point_of(&y, a),
        coarse_step: base_step,
        evaluations: search.evaluations,
    })
}

/// A grouping functional on a full tuple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Functional {
    /// Nominal-group plus outlier-group spread of the candidate (`g_set`).
    Score(Subset),
    /// Nominal-group spread of the candidate only (`g_li_set`).
    NominalSpread(Subset),
}

impl Functional {
    fn subset(self) -> Subset {
        match self {
            Functional::Score(s) | Functional::NominalSpread(s) => s,
        }
    }

    fn evaluate(self, tuple: &DistributionTuple) -> Result<f64> {
        match self {
            Functional::Score(s) => g_set(tuple, s),
            Functional::NominalSpread(s) => g_li_set(tuple, s),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Constraint {
    /// `functional <= bound`
    AtMost(Functional, f64),
    /// `lhs >= rhs`
    AtLeast(Functional, Functional),
}

/// Minimise `sum_{i in outliers} D(Q_i || anomalous) + sum_{j else} D(Q_j || nominal)`
/// over `M`-tuples subject to `constraints`.
#[derive(Debug, Clone, PartialEq)]
pub struct TupleProblem {
    pub m: usize,
    pub nominal: Distribution,
    pub anomalous: Distribution,
    pub outliers: Subset,
    pub constraints: Vec<Constraint>,
}

/// Grouped form of a [`TupleProblem`] with the stream-to-group map.
#[derive(Debug, Clone, PartialEq)]
pub struct Reduction {
    pub problem: GroupedProblem,
    pub group_of: Vec<usize>,
}

/// Minimiser of a [`TupleProblem`], expanded back to a full tuple.
#[derive(Debug, Clone, PartialEq)]
pub struct TupleOptimum {
    pub value: f64,
    pub tuple: Vec<Vec<f64>>,
}

impl TupleProblem {
    fn functionals(&self) -> impl Iterator<Item = Functional> + '_ {
        self.constraints.iter().flat_map(|c| match *c {
            Constraint::AtMost(f, _) => vec![f],
            Constraint::AtLeast(a, b) => vec![a, b],
        })
    }

    fn validate(&self) -> Result<()> {
        crate::prob::check_same_alphabet(&self.nominal, &self.anomalous)?;
        if self.m < 3 || self.m > crate::scoring::MAX_STREAMS {
            return Err(out_of_range(format!("M = {} out of range", self.m)));
        }
        self.outliers.check_within(self.m)?;
        for f in self.functionals() {
            let s = f.subset();
            s.check_within(self.m)?;
            if s.is_empty() || s.len() >= self.m {
                return Err(Error::InvalidSubset(format!(
                    "constraint set {s} must be proper"
                )));
            }
        }
        Ok(())
    }

    /// Objective at an explicit tuple.
    pub fn objective(&self, tuple: &DistributionTuple) -> f64 {
        tuple
            .entries()
            .iter()
            .enumerate()
            .map(|(i, q)| {
                let target = if self.outliers.contains(i) {
                    &self.anomalous
                } else {
                    &self.nominal
                };
                kl_raw(q.probs(), target.probs())
            })
            .sum()
    }

    /// Constraint check at an explicit tuple, via the scoring functions.
    pub fn is_feasible(&self, tuple: &DistributionTuple) -> Result<bool> {
        for c in &self.constraints {
            let ok = match *c {
                Constraint::AtMost(f, bound) => f.evaluate(tuple)? <= bound + FEASIBILITY_SLACK,
                Constraint::AtLeast(a, b) => {
                    a.evaluate(tuple)? + FEASIBILITY_SLACK >= b.evaluate(tuple)?
                }
            };
            if !ok {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Groups streams by their membership in the outlier set and every
    /// constraint set.
    pub fn reduce(&self) -> Result<Reduction> {
        self.validate()?;
        let mut sets = vec![self.outliers];
        for f in self.functionals() {
            if !sets.contains(&f.subset()) {
                sets.push(f.subset());
            }
        }
        let signature = |i: usize| -> u64 {
            sets.iter()
                .enumerate()
                .fold(0u64, |acc, (k, s)| acc | ((s.contains(i) as u64) << k))
        };
        let mut signatures: Vec<u64> = Vec::new();
        let mut group_of = Vec::with_capacity(self.m);
        let mut sizes: Vec<usize> = Vec::new();
        let mut representative: Vec<usize> = Vec::new();
        for i in 0..self.m {
            let sig = signature(i);
            let g = match signatures.iter().position(|&s| s == sig) {
                Some(g) => g,
                None => {
                    signatures.push(sig);
                    sizes.push(0);
                    representative.push(i);
                    signatures.len() - 1
                }
            };
            sizes[g] += 1;
            group_of.push(g);
        }
        let groups = sizes
            .iter()
            .zip(&representative)
            .map(|(&size, &i)| {
                let target = if self.outliers.contains(i) {
                    &self.anomalous
                } else {
                    &self.nominal
                };
                Group {
                    size,
                    terms: vec![Term {
                        weight: size as f64,
                        target: target.probs().to_vec(),
                    }],
                }
            })
            .collect::<Vec<_>>();
        let in_set = |s: Subset, g: usize| s.contains(representative[g]);
        let to_group = |f: Functional| -> SpreadFunctional {
            let s = f.subset();
            let outside: Vec<usize> = (0..groups.len()).filter(|&g| !in_set(s, g)).collect();
            let inside: Vec<usize> = (0..groups.len()).filter(|&g| in_set(s, g)).collect();
            let blocks = match f {
                Functional::Score(_) => vec![outside, inside],
                Functional::NominalSpread(_) => vec![outside],
            };
            SpreadFunctional {
                blocks: blocks.into_iter().filter(|b| !b.is_empty()).collect(),
            }
        };
        let constraints = self
            .constraints
            .iter()
            .map(|c| match *c {
                Constraint::AtMost(f, bound) => GroupConstraint::AtMost(to_group(f), bound),
                Constraint::AtLeast(a, b) => GroupConstraint::AtLeast(to_group(a), to_group(b)),
            })
            .collect();
        Ok(Reduction {
            problem: GroupedProblem {
                alphabet_size: self.nominal.alphabet_size(),
                groups,
                constraints,
            },
            group_of,
        })
    }

    /// Solves the reduced problem and expands the minimiser to a full tuple.
    pub fn solve(&self, settings: &SimplexOptimizerSettings) -> Result<TupleOptimum> {
        let reduction = self.reduce()?;
        let opt = minimize_kl_sum(&reduction.problem, settings)?;
        Ok(TupleOptimum {
            value: opt.value,
            tuple: reduction
                .group_of
                .iter()
                .map(|&g| opt.groups[g].clone())
                .collect(),
        })
    }
}

/// Largest full-tuple grid the brute-force oracle will enumerate.
pub const ORACLE_MAX_POINTS: u64 = 1_000_000_000;

/// Zoom levels of the oracle after the initial grid.
const ORACLE_ZOOM_LEVELS: usize = 2;
/// Best points of each level that seed the next one.
const ORACLE_ZOOM_SEEDS: usize = 4;
/// Half-width of a zoom box, in units of the previous spacing.
const ORACLE_ZOOM_HALF_WIDTH: f64 = 1.5;
/// Ratio of consecutive spacings.
const ORACLE_ZOOM_FACTOR: usize = 10;

/// Exhaustive scan of the product of per-stream value lists (probability of
/// symbol 1); returns the best feasible points, best first.
fn oracle_scan(
    problem: &TupleProblem,
    axes: &[Vec<f64>],
    keep: usize,
) -> Result<Vec<(f64, Vec<f64>)>> {
    let m = problem.m;
    let table: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            let target = if problem.outliers.contains(i) {
                &problem.anomalous
            } else {
                &problem.nominal
            };
            axes[i]
                .iter()
                .map(|&x| kl_raw(&[1.0 - x, x], target.probs()))
                .collect()
        })
        .collect();
    let mut best: Vec<(f64, Vec<f64>)> = Vec::with_capacity(keep + 1);
    let mut idx = vec![0usize; m];
    'grid: loop {
        let value: f64 = idx.iter().enumerate().map(|(i, &k)| table[i][k]).sum();
        let bar = if best.len() < keep {
            f64::INFINITY
        } else {
            best[keep - 1].0
        };
        if value < bar {
            let xs: Vec<f64> = idx.iter().enumerate().map(|(i, &k)| axes[i][k]).collect();
            let tuple = DistributionTuple::new(
                xs.iter()
                    .map(|&x| Distribution::bernoulli(x))
                    .collect::<Result<_>>()?,
            )?;
            if problem.is_feasible(&tuple)? {
                let pos = best.partition_point(|(v, _)| *v <= value);
                best.insert(pos, (value, xs));
                best.truncate(keep);
            }
        }
        for i in (0..m).rev() {
            idx[i] += 1;
            if idx[i] < axes[i].len() {
                continue 'grid;
            }
            idx[i] = 0;
        }
        break;
    }
    Ok(best)
}

/// Exhaustive minimisation over the full binary `M`-tuple grid, without any
/// symmetry reduction. Validation oracle for [`TupleProblem::solve`].
///
/// After the grid of spacing `grid_step`, the best few points are re-scanned
/// exhaustively on finer grids over small boxes around them, so the result
/// is the best of several nested exhaustive grids.
pub fn brute_force_tuple_oracle(problem: &TupleProblem, grid_step: f64) -> Result<f64> {
    problem.validate()?;
    if problem.nominal.alphabet_size() != 2 {
        return Err(out_of_range(
            "the brute-force oracle needs a binary alphabet",
        ));
    }
    if problem.m > 4 {
        return Err(out_of_range("the brute-force oracle supports M <= 4"));
    }
    if !(grid_step >= 0.005 && grid_step <= 0.5) {
        return Err(out_of_range(format!(
            "grid step {grid_step} outside [0.005, 0.5]"
        )));
    }
    let n = (1.0 / grid_step).round() as usize;
    let points = ((n + 1) as u64).saturating_pow(problem.m as u32);
    if points > ORACLE_MAX_POINTS {
        return Err(Error::ResourceGuard(format!("{points} grid points")));
    }
    let full: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
    let mut seeds = oracle_scan(problem, &vec![full; problem.m], ORACLE_ZOOM_SEEDS)?;
    let Some(mut best) = seeds.first().map(|s| s.0) else {
        return Err(Error::Infeasible);
    };
    let mut spacing = 1.0 / n as f64;
    let half = (ORACLE_ZOOM_HALF_WIDTH * ORACLE_ZOOM_FACTOR as f64).round() as i64;
    for _ in 0..ORACLE_ZOOM_LEVELS {
        let fine = spacing / ORACLE_ZOOM_FACTOR as f64;
        let mut next = Vec::new();
        for (_, center) in &seeds {
            let axes: Vec<Vec<f64>> = center
                .iter()
                .map(|&c| {
                    (-half..=half)
                        .map(|k| c + k as f64 * fine)
                        .filter(|x| (0.0..=1.0).contains(x))
                        .collect()
                })
                .collect();
            next.extend(oracle_scan(problem, &axes, ORACLE_ZOOM_SEEDS)?);
        }
        next.sort_by(|a, b| a.0.total_cmp(&b.0));
        next.truncate(ORACLE_ZOOM_SEEDS);
        if let Some(first) = next.first() {
            best = best.min(first.0);
        }
        seeds = next;
        spacing = fine;
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prob::renyi_raw;

    fn b(p: f64) -> Distribution {
        Distribution::bernoulli(p).unwrap()
    }

    #[test]
    fn simplex_grid_sizes() {
        assert_eq!(simplex_grid(2, 10).len(), 11);
        assert_eq!(simplex_grid(3, 4).len(), 15);
        assert!(simplex_grid(3, 4)
            .iter()
            .all(|q| (q.iter().sum::<f64>() - 1.0).abs() < 1e-12));
        assert_eq!(binomial(6, 2), 15);
    }

    #[test]
    fn coarse_step_widens_to_fit_budget() {
        let s = SimplexOptimizerSettings::default();
        assert_eq!(coarse_divisions(&s, 2, 4), 50);
        assert!(coarse_divisions(&s, 2, 5) < 50);
        assert!((coarse_divisions(&s, 2, 5) as f64 + 1.0).powi(5) <= 8e6);
    }

    #[test]
    fn unconstrained_single_group_matches_renyi() {
        for &(p, r, alpha) in &[(0.2, 0.4, 1.0), (0.3, 0.1, 2.0), (0.15, 0.6, 0.5)] {
            let problem = GroupedProblem {
                alphabet_size: 2,
                groups: vec![Group {
                    size: 1,
                    terms: vec![
                        Term {
                            weight: alpha,
                            target: b(p).probs().to_vec(),
                        },
                        Term {
                            weight: 1.0,
                            target: b(r).probs().to_vec(),
                        },
                    ],
                }],
                constraints: vec![],
            };
            let opt = minimize_kl_sum(&problem, &SimplexOptimizerSettings::default()).unwrap();
            let expected = renyi_raw(b(p).probs(), b(r).probs(), alpha / (1.0 + alpha));
            assert!(
                (opt.value - expected).abs() < 1e-5,
                "{} vs {}",
                opt.value,
                expected
            );
        }
    }

    #[test]
    fn ternary_unconstrained_matches_renyi() {
        let p = Distribution::new(vec![0.2, 0.3, 0.5]).unwrap();
        let r = Distribution::new(vec![0.6, 0.1, 0.3]).unwrap();
        let problem = GroupedProblem {
            alphabet_size: 3,
            groups: vec![Group {
                size: 1,
                terms: vec![
                    Term {
                        weight: 2.0,
                        target: p.probs().to_vec(),
                    },
                    Term {
                        weight: 1.0,
                        target: r.probs().to_vec(),
                    },
                ],
            }],
            constraints: vec![],
        };
        let opt = minimize_kl_sum(&problem, &SimplexOptimizerSettings::default()).unwrap();
        let expected = renyi_raw(p.probs(), r.probs(), 2.0 / 3.0);
        assert!((opt.value - expected).abs() < 1e-5);
    }

    #[test]
    fn zero_threshold_forces_equality() {
        // G_{1}(Q) <= 0 forces Q_2 = .. = Q_M; the minimum is a Renyi divergence.
        let (pn, pa, m) = (b(0.3), b(0.1), 4);
        let problem = TupleProblem {
            m,
            nominal: pn.clone(),
            anomalous: pa.clone(),
            outliers: Subset::singleton(0),
            constraints: vec![Constraint::AtMost(
                Functional::Score(Subset::singleton(1)),
                0.0,
            )],
        };
        let opt = problem.solve(&SimplexOptimizerSettings::default()).unwrap();
        let expected = renyi_raw(pn.probs(), pa.probs(), 2.0 / 3.0);
        assert!(
            (opt.value - expected).abs() < 1e-4,
            "{} vs {}",
            opt.value,
            expected
        );
    }

    #[test]
    fn reduction_groups_by_membership() {
        let problem = TupleProblem {
            m: 5,
            nominal: b(0.3),
            anomalous: b(0.1),
            outliers: Subset::from_indices(&[0, 1]).unwrap(),
            constraints: vec![Constraint::AtMost(
                Functional::Score(Subset::from_indices(&[1, 2]).unwrap()),
                0.01,
            )],
        };
        let r = problem.reduce().unwrap();
        assert_eq!(r.group_of, vec![0, 1, 2, 3, 3]);
        let sizes: Vec<usize> = r.problem.groups.iter().map(|g| g.size).collect();
        assert_eq!(sizes, vec![1, 1, 1, 2]);
    }

    #[test]
    fn infeasible_is_reported() {
        // Nominal spread of {1} at least ln 2 + something impossible for binary
        // tuples is emulated with an AtMost bound below zero.
        let problem = TupleProblem {
            m: 3,
            nominal: b(0.3),
            anomalous: b(0.1),
            outliers: Subset::singleton(0),
            constraints: vec![Constraint::AtMost(
                Functional::Score(Subset::singleton(1)),
                -1.0,
            )],
        };
        assert_eq!(
            problem.solve(&SimplexOptimizerSettings::default()),
            Err(Error::Infeasible)
        );
        assert_eq!(
            brute_force_tuple_oracle(&problem, 0.05),
            Err(Error::Infeasible)
        );
    }

    #[test]
    fn oracle_guards() {
        let mut problem = TupleProblem {
            m: 3,
            nominal: b(0.3),
            anomalous: b(0.1),
            outliers: Subset::singleton(0),
            constraints: vec![],
        };
        assert_eq!(brute_force_tuple_oracle(&problem, 0.01).unwrap(), 0.0);
        assert!(brute_force_tuple_oracle(&problem, 0.001).is_err());
        problem.m = 5;
        assert!(brute_force_tuple_oracle(&problem, 0.1).is_err());
    }

    #[test]
    fn infinite_bound_equals_unconstrained() {
        let base = TupleProblem {
            m: 3,
            nominal: b(0.3),
            anomalous: b(0.1),
            outliers: Subset::singleton(0),
            constraints: vec![],
        };
        let constrained = TupleProblem {
            constraints: vec![Constraint::AtMost(
                Functional::Score(Subset::singleton(1)),
                f64::INFINITY,
            )],
            ..base.clone()
        };
        assert_eq!(
            brute_force_tuple_oracle(&base, 0.02).unwrap(),
            brute_force_tuple_oracle(&constrained, 0.02).unwrap()
        );
    }
}
