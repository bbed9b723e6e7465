//! Schedule-driven estimates of the homogenized density and numerical probes
//! of its structural properties.
//!
//! [`estimate`] sweeps `(n, k, m)`: for every cell size and mesh it runs a
//! warm-started penalty sweep over the truncation levels (estimating
//! `W̄_n^(k)` and, at the largest `n`, the lower-bound integrand) and one
//! constrained solve (estimating `W_hom`). The probes test rank-one
//! convexity, the growth bound and quasiconvexity on cached single-cell
//! estimates; they can falsify, never prove.

use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cell::{Boundary, CellProblem, Grid, Mesh, Split, SIGMA_TOLERANCE};
use crate::density::{sample_sigma, EnergySpec, TruncationLevel};
use crate::error::{Error, Result};
use crate::par;
use crate::solve::{
    continue_from, multistart_from, solve_constrained, solve_constrained_from, tiled,
    Diagnostic, SolveResult, SolverConfig,
};
use crate::tensor::{perp, vnorm, Mat};

/// Relative tolerance of the monotonicity and subadditivity flags.
pub const SWEEP_TOLERANCE: f64 = 1e-8;
/// Relative tolerance of the penalty/constrained agreement.
pub const COMMUTATION_TOLERANCE: f64 = 0.02;

/// The `(n, k, m)` sweep plus solver settings.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub n_values: Vec<f64>,
    pub k_values: Vec<usize>,
    pub m_values: Vec<usize>,
    pub starts: usize,
    pub perturbation: f64,
    pub seed: u64,
    pub split: Split,
    pub boundary: Boundary,
    pub solver: SolverConfig,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            n_values: vec![1.0, 4.0, 16.0, 64.0, 256.0, 1024.0],
            k_values: vec![1, 2, 3],
            m_values: vec![16, 32],
            starts: 5,
            perturbation: 0.1,
            seed: 0,
            split: Split::Crossed,
            boundary: Boundary::Dirichlet,
            solver: SolverConfig::default(),
        }
    }
}

fn strictly_increasing<T: PartialOrd>(v: &[T]) -> bool {
    v.windows(2).all(|w| w[0] < w[1])
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if self.n_values.is_empty() || self.k_values.is_empty() || self.m_values.is_empty() {
            return Err(Error::invalid("schedule", "n_values, k_values and m_values must be non-empty"));
        }
        if !strictly_increasing(&self.n_values) || !(self.n_values[0] > 0.0) || !self.n_values.iter().all(|n| n.is_finite()) {
            return Err(Error::invalid("schedule.n_values", "must be finite, positive and increasing"));
        }
        if !strictly_increasing(&self.k_values) || self.k_values[0] == 0 {
            return Err(Error::invalid("schedule.k_values", "must be positive and increasing"));
        }
        if !strictly_increasing(&self.m_values) || self.m_values[0] == 0 {
            return Err(Error::invalid("schedule.m_values", "must be positive and increasing"));
        }
        if self.starts == 0 {
            return Err(Error::invalid("schedule.starts", "need at least one start"));
        }
        if !(self.perturbation >= 0.0) {
            return Err(Error::invalid("schedule.perturbation", "must be >= 0"));
        }
        self.solver.validate()
    }

    fn grid(&self, k: usize, m: usize) -> Result<Grid> {
        Ok(Grid::with_split(k, m, self.split)?.with_boundary(self.boundary))
    }

    /// The single-cell settings probes use: smallest `k`, largest `m`.
    pub fn probe_cell(&self) -> ProbeCell {
        ProbeCell {
            k: self.k_values[0],
            m: *self.m_values.last().expect("validated"),
            split: self.split,
            boundary: self.boundary,
            solver: self.solver,
        }
    }
}

/// One solve of the sweep. `n` is `None` for the constrained solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomogEntry {
    pub n: Option<f64>,
    pub k: usize,
    pub m: usize,
    pub value: f64,
    pub grad_norm: f64,
    pub constraint_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub diagnostic: Option<Diagnostic>,
}

impl HomogEntry {
    fn new(n: Option<f64>, k: usize, m: usize, r: &SolveResult) -> Self {
        HomogEntry {
            n,
            k,
            m,
            value: r.value,
            grad_norm: r.grad_norm,
            constraint_residual: r.constraint_residual,
            iterations: r.iterations,
            converged: r.converged,
            diagnostic: r.diagnostic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NkEstimate {
    pub n: f64,
    pub k: usize,
    pub value: f64,
}

/// Diagnostics computed from the sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Flags {
    /// Penalty values non-decreasing along every n-sweep.
    pub n_monotone: bool,
    /// Largest relative decrease between consecutive truncation levels.
    pub n_monotone_worst: f64,
    /// Values at `k = r·k₀` not above those at `k₀` (same `n`, `m`).
    pub k_subadditive: bool,
    pub k_subadditive_worst: f64,
    /// All values above `c⁻¹|F| − c`.
    pub growth: bool,
    /// Penalty estimate not above the constrained one beyond the
    /// commutation tolerance.
    pub bound_ordering: Option<bool>,
    /// Off `Σ`: values at the largest `n` at least `0.5·n·|det F − 1|`.
    pub off_sigma_divergence: Option<bool>,
    pub all_converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomogReport {
    #[serde(rename = "F")]
    pub f: Mat,
    pub det_f: f64,
    /// Penalty entries in sweep order, then the constrained entries.
    pub entries: Vec<HomogEntry>,
    /// Best (over `m`) penalty value per `(n, k)`.
    pub estimate_w_n_k: Vec<NkEstimate>,
    /// Largest `n`, minimum over `k`, finest `m`.
    pub estimate_underbar_w: f64,
    /// Constrained value, minimum over `k`, finest `m`; `None` off `Σ`.
    pub estimate_w_hom: Option<f64>,
    /// `estimate_w_hom − estimate_underbar_w`.
    pub commutation_gap: Option<f64>,
    pub growth_bound: f64,
    pub flags: Flags,
}

/// `c⁻¹|F| − c`.
pub fn growth_bound(spec: &EnergySpec, f: &Mat) -> f64 {
    f.norm() / spec.c - spec.c
}

fn off_sigma(f: &Mat) -> bool {
    (f.det() - 1.0).abs() > SIGMA_TOLERANCE
}

fn tn(n: f64) -> Result<TruncationLevel> {
    TruncationLevel::new(n)
}

fn sweep_seed(seed: u64, k: usize, m: usize) -> u64 {
    seed ^ ((k as u64) << 40) ^ ((m as u64) << 20)
}

/// Runs the full schedule at `F`. Off-`Σ` matrices need `allow_off_sigma`
/// and skip the constrained solves.
pub fn estimate(spec: &EnergySpec, f: &Mat, schedule: &Schedule, allow_off_sigma: bool) -> Result<HomogReport> {
    spec.validate()?;
    schedule.validate()?;
    if !f.is_finite() {
        return Err(Error::invalid("F", "entries must be finite"));
    }
    let off = off_sigma(f);
    if off && !allow_off_sigma {
        return Err(Error::OffSigma { det: f.det() });
    }
    let solver = &schedule.solver;
    let mut sweeps: HashMap<(usize, usize), Vec<SolveResult>> = HashMap::new();
    let mut entries = Vec::new();
    let mut constrained = Vec::new();

    for &m in &schedule.m_values {
        for &k in &schedule.k_values {
            let grid = schedule.grid(k, m)?;
            let mesh = Arc::new(Mesh::new(grid));
            let base = CellProblem::with_mesh(*spec, *f, tn(schedule.n_values[0])?, Arc::clone(&mesh));
            let tile_source = schedule
                .k_values
                .iter()
                .rev()
                .find(|&&k0| k0 < k && k % k0 == 0)
                .and_then(|&k0| sweeps.get(&(k0, m)).map(|r| (k0, r)));
            let coarse = schedule
                .m_values
                .iter()
                .rev()
                .find(|&&m0| m0 < m && m % m0 == 0)
                .and_then(|&m0| sweeps.get(&(k, m0)));

            let mut results: Vec<SolveResult> = Vec::with_capacity(schedule.n_values.len());
            for (j, &n) in schedule.n_values.iter().enumerate() {
                let problem = base.with_n(tn(n)?);
                let mut r = match results.last() {
                    Some(prev) => continue_from(&problem, prev, solver)?,
                    None => {
                        let start = match coarse {
                            Some(c) => {
                                let src = &c[0].phi;
                                src.prolongate(&Mesh::new(src.grid), grid)?
                            }
                            None => problem.zero_field(),
                        };
                        multistart_from(
                            &problem,
                            &start,
                            solver,
                            schedule.starts,
                            schedule.perturbation,
                            sweep_seed(schedule.seed, k, m),
                        )?
                    }
                };
                if let Some((k0, src)) = tile_source {
                    let start = tiled(&src[j], k / k0)?;
                    let t = continue_from(&problem, &start, solver)?;
                    if t.value < r.value {
                        r = t;
                    }
                }
                entries.push(HomogEntry::new(Some(n), k, m, &r));
                results.push(r);
            }
            if !off {
                let start = &results.last().expect("n_values non-empty").phi;
                let r = solve_constrained_from(&base, start, solver)?;
                constrained.push(HomogEntry::new(None, k, m, &r));
            }
            sweeps.insert((k, m), results);
        }
    }

    let n_max = *schedule.n_values.last().expect("validated");
    let m_max = *schedule.m_values.last().expect("validated");
    let mut estimate_w_n_k = Vec::new();
    for &n in &schedule.n_values {
        for &k in &schedule.k_values {
            let value = entries
                .iter()
                .filter(|e| e.n == Some(n) && e.k == k)
                .map(|e| e.value)
                .fold(f64::INFINITY, f64::min);
            estimate_w_n_k.push(NkEstimate { n, k, value });
        }
    }
    let estimate_underbar_w = entries
        .iter()
        .filter(|e| e.n == Some(n_max) && e.m == m_max)
        .map(|e| e.value)
        .fold(f64::INFINITY, f64::min);
    let estimate_w_hom = (!off).then(|| {
        constrained
            .iter()
            .filter(|e| e.m == m_max)
            .map(|e| e.value)
            .fold(f64::INFINITY, f64::min)
    });

    let mut n_worst = 0.0_f64;
    for w in entries.windows(2) {
        if w[0].k == w[1].k && w[0].m == w[1].m {
            n_worst = n_worst.max((w[0].value - w[1].value) / (1.0 + w[0].value.abs()));
        }
    }
    let mut k_worst = 0.0_f64;
    for e in &entries {
        for k0 in schedule.k_values.iter().filter(|&&k0| k0 < e.k && e.k % k0 == 0) {
            if let Some(b) = entries.iter().find(|b| b.k == *k0 && b.m == e.m && b.n == e.n) {
                k_worst = k_worst.max((e.value - b.value) / (1.0 + b.value.abs()));
            }
        }
    }
    let bound = growth_bound(spec, f);
    entries.extend(constrained);
    let growth = entries.iter().all(|e| e.value >= bound);
    let all_converged = entries.iter().all(|e| e.converged);
    let commutation_gap = estimate_w_hom.map(|w| w - estimate_underbar_w);
    let bound_ordering =
        estimate_w_hom.map(|w| estimate_underbar_w <= w + COMMUTATION_TOLERANCE * w.abs().max(f64::MIN_POSITIVE));
    let off_sigma_divergence = off.then(|| {
        let floor = 0.5 * n_max * (f.det() - 1.0).abs();
        entries.iter().filter(|e| e.n == Some(n_max)).all(|e| e.value >= floor)
    });

    Ok(HomogReport {
        f: *f,
        det_f: f.det(),
        entries,
        estimate_w_n_k,
        estimate_underbar_w,
        estimate_w_hom,
        commutation_gap,
        growth_bound: bound,
        flags: Flags {
            n_monotone: n_worst <= SWEEP_TOLERANCE,
            n_monotone_worst: n_worst,
            k_subadditive: k_worst <= SWEEP_TOLERANCE,
            k_subadditive_worst: k_worst,
            growth,
            bound_ordering,
            off_sigma_divergence,
            all_converged,
        },
    })
}

/// Gap between the constrained value and warm-started penalty values on one
/// cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommutationReport {
    pub k: usize,
    pub m: usize,
    pub constrained: HomogEntry,
    pub penalty: Vec<HomogEntry>,
    /// `constrained − penalty(n)` per level.
    pub gaps: Vec<f64>,
    /// `|gap(max n)| / constrained`.
    pub relative_gap: f64,
    pub tolerance: f64,
    pub passed: bool,
    /// Gaps non-increasing in `n` up to `1e-6`.
    pub gap_monotone: bool,
}

/// Single-cell solver settings for checks and probes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeCell {
    pub k: usize,
    pub m: usize,
    pub split: Split,
    pub boundary: Boundary,
    pub solver: SolverConfig,
}

impl ProbeCell {
    pub fn new(k: usize, m: usize) -> Self {
        ProbeCell {
            k,
            m,
            split: Split::Crossed,
            boundary: Boundary::Dirichlet,
            solver: SolverConfig::default(),
        }
    }

    pub fn grid(&self) -> Result<Grid> {
        Ok(Grid::with_split(self.k, self.m, self.split)?.with_boundary(self.boundary))
    }

    fn problem(&self, spec: &EnergySpec, f: &Mat, n: f64) -> Result<CellProblem> {
        CellProblem::new(*spec, *f, tn(n)?, self.grid()?)
    }
}

/// Compares the constrained value with penalty values along `n_values` on
/// one cell. Each level keeps the lower of a cold solve and a solve warm
/// started from the previous level.
pub fn commutation_check(spec: &EnergySpec, f: &Mat, cell: &ProbeCell, n_values: &[f64]) -> Result<CommutationReport> {
    let problem = cell.problem(spec, f, 1.0)?;
    let (constrained, report) = par::join(
        || solve_constrained(&problem, &cell.solver),
        || penalty_levels(spec, f, cell, n_values),
    );
    commutation_report(cell, constrained?, report?, n_values)
}

/// [`commutation_check`] against an already computed constrained solve on
/// the same cell.
pub fn commutation_with(
    spec: &EnergySpec,
    f: &Mat,
    cell: &ProbeCell,
    n_values: &[f64],
    constrained: SolveResult,
) -> Result<CommutationReport> {
    if constrained.phi.grid != cell.grid()? {
        return Err(Error::invalid("constrained", "solve lives on a different cell"));
    }
    let penalty = penalty_levels(spec, f, cell, n_values)?;
    commutation_report(cell, constrained, penalty, n_values)
}

fn penalty_levels(spec: &EnergySpec, f: &Mat, cell: &ProbeCell, n_values: &[f64]) -> Result<Vec<SolveResult>> {
    if n_values.is_empty() || !strictly_increasing(n_values) {
        return Err(Error::invalid("n_values", "must be non-empty and increasing"));
    }
    let mut out: Vec<SolveResult> = Vec::new();
    for &n in n_values {
        let p = cell.problem(spec, f, n)?;
        let (cold, warm) = par::join(
            || crate::solve::minimize(&p, &p.zero_field(), &cell.solver),
            || out.last().map(|prev| continue_from(&p, prev, &cell.solver)),
        );
        let mut r = cold?;
        if let Some(w) = warm.transpose()? {
            if w.value < r.value {
                r = w;
            }
        }
        out.push(r);
    }
    Ok(out)
}

fn commutation_report(
    cell: &ProbeCell,
    constrained: SolveResult,
    penalty: Vec<SolveResult>,
    n_values: &[f64],
) -> Result<CommutationReport> {
    let gaps: Vec<f64> = penalty.iter().map(|r| constrained.value - r.value).collect();
    let last = *gaps.last().expect("non-empty");
    let scale = constrained.value.abs();
    let relative_gap = if scale > 0.0 { last.abs() / scale } else { last.abs() };
    let gap_monotone = gaps.windows(2).all(|w| w[1] <= w[0] + 1e-6);
    Ok(CommutationReport {
        k: cell.k,
        m: cell.m,
        constrained: HomogEntry::new(None, cell.k, cell.m, &constrained),
        penalty: penalty
            .iter()
            .zip(n_values)
            .map(|(r, &n)| HomogEntry::new(Some(n), cell.k, cell.m, r))
            .collect(),
        gaps,
        relative_gap,
        tolerance: COMMUTATION_TOLERANCE,
        passed: relative_gap <= COMMUTATION_TOLERANCE || last.abs() <= 1e-12,
        gap_monotone,
    })
}

/// Constrained single-cell estimates of `W_hom` for a batch of matrices
/// (solved in parallel, returned in input order).
pub fn cell_estimates(spec: &EnergySpec, matrices: &[Mat], cell: &ProbeCell) -> Result<Vec<SolveResult>> {
    par::map_tasks(matrices.len(), |i| {
        let problem = cell.problem(spec, &matrices[i], 1.0)?;
        solve_constrained(&problem, &cell.solver)
    })
    .into_iter()
    .collect()
}

/// Solves every distinct matrix once and returns values in input order.
fn cached_values(spec: &EnergySpec, matrices: &[Mat], cell: &ProbeCell) -> Result<Vec<f64>> {
    let key = |m: &Mat| m.0.map(|row| row.map(f64::to_bits));
    let mut distinct: Vec<Mat> = Vec::new();
    let mut index: HashMap<[[u64; 2]; 2], usize> = HashMap::new();
    for m in matrices {
        index.entry(key(m)).or_insert_with(|| {
            distinct.push(*m);
            distinct.len() - 1
        });
    }
    let values: Vec<f64> = cell_estimates(spec, &distinct, cell)?.iter().map(|r| r.value).collect();
    Ok(matrices.iter().map(|m| values[index[&key(m)]]).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankOneSample {
    pub a: Mat,
    pub b: Mat,
    pub value_a: f64,
    pub value_b: f64,
    pub value_mid: f64,
    /// `½(W(A) + W(B)) − W(½(A + B))`; negative means a violation.
    pub margin: f64,
    pub violated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankOneReport {
    pub samples: Vec<RankOneSample>,
    pub tolerance: f64,
    pub violations: usize,
}

/// Random volume-preserving rank-one segment `[A, A + a⊗b]`: `b` is a unit
/// vector and `a ⊥ adj(A)ᵀb`, so `det` stays 1 along the segment.
pub fn rank_one_segment<R: Rng + ?Sized>(rng: &mut R) -> (Mat, Mat) {
    let a_mat = sample_sigma(rng);
    let angle = rng.gen_range(0.0..std::f64::consts::TAU);
    let b = [angle.cos(), angle.sin()];
    let w = a_mat.adjugate().transpose().apply(b);
    let t = perp(w);
    let len = rng.gen_range(0.25..1.0) / vnorm(t);
    let a = [t[0] * len, t[1] * len];
    (a_mat, a_mat + Mat::outer(a, b))
}

/// Midpoint test of rank-one convexity on `samples` random segments, with
/// tolerance `relative_tolerance·(1 + max value)`.
pub fn rank_one_probe(
    spec: &EnergySpec,
    samples: usize,
    cell: &ProbeCell,
    seed: u64,
    relative_tolerance: f64,
) -> Result<RankOneReport> {
    if samples == 0 {
        return Err(Error::invalid("samples", "need at least one sample"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let segments: Vec<(Mat, Mat)> = (0..samples).map(|_| rank_one_segment(&mut rng)).collect();
    let matrices: Vec<Mat> = segments
        .iter()
        .flat_map(|&(a, b)| [a, b, (a + b).scale(0.5)])
        .collect();
    let values = cached_values(spec, &matrices, cell)?;
    let max_value = values.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let tolerance = relative_tolerance * (1.0 + max_value);
    let samples: Vec<RankOneSample> = segments
        .iter()
        .zip(values.chunks_exact(3))
        .map(|(&(a, b), v)| {
            let margin = 0.5 * (v[0] + v[1]) - v[2];
            RankOneSample {
                a,
                b,
                value_a: v[0],
                value_b: v[1],
                value_mid: v[2],
                margin,
                violated: margin < -tolerance,
            }
        })
        .collect();
    let violations = samples.iter().filter(|s| s.violated).count();
    Ok(RankOneReport {
        samples,
        tolerance,
        violations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthSample {
    #[serde(rename = "F")]
    pub f: Mat,
    pub bound: f64,
    pub value: f64,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    pub samples: Vec<GrowthSample>,
    pub violations: usize,
}

/// Largest `|F|` drawn by [`growth_probe`].
pub const GROWTH_MAX_NORM: f64 = 10.0;

/// Checks `W_hom(F) ≥ c⁻¹|F| − c` on random volume-preserving `F` with
/// `|F| ≤ 10`.
pub fn growth_probe(spec: &EnergySpec, samples: usize, cell: &ProbeCell, seed: u64) -> Result<GrowthReport> {
    if samples == 0 {
        return Err(Error::invalid("samples", "need at least one sample"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut matrices = Vec::with_capacity(samples);
    while matrices.len() < samples {
        let f = sample_sigma(&mut rng);
        if f.norm() <= GROWTH_MAX_NORM {
            matrices.push(f);
        }
    }
    let values = cached_values(spec, &matrices, cell)?;
    let samples: Vec<GrowthSample> = matrices
        .iter()
        .zip(values)
        .map(|(f, value)| {
            let bound = growth_bound(spec, f);
            GrowthSample {
                f: *f,
                bound,
                value,
                margin: value - bound,
            }
        })
        .collect();
    let violations = samples.iter().filter(|s| s.margin < 0.0).count();
    Ok(GrowthReport { samples, violations })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuasiconvexitySample {
    /// Slopes of the shear profile along `x₂` (first shear).
    pub s: [f64; TEST_PARTITION],
    /// Slopes of the shear profile along `x₁` (second shear).
    pub t: [f64; TEST_PARTITION],
    /// `W_hom(F)`.
    pub lhs: f64,
    /// `⨏ W_hom(F + ∇φ)`.
    pub rhs: f64,
    pub violated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuasiconvexityReport {
    pub samples: Vec<QuasiconvexitySample>,
    pub violations: usize,
    pub tolerance: f64,
}

/// Bands per direction of the test-field partition.
pub const TEST_PARTITION: usize = 4;

/// Gradients and weights of the shear-composition test field with slopes
/// `s`, `t` (each summing to zero).
///
/// With `g₁` piecewise linear on quarters of `[0, 1]` with slopes `s_j` and
/// `g₂` likewise with slopes `t_i`, both 1-periodic, the map
/// `x ↦ F S₂(S₁(x))`, `S₁(x) = x + g₁(x₂) e₁`, `S₂(x) = x + g₂(x₁) e₂`, has
/// gradient `F (I + t_i e₂⊗e₁)(I + s_j e₁⊗e₂)` on the piece where `x₂` is in
/// quarter `j` and `x₁ + g₁(x₂)` in quarter `i`. Each factor has determinant
/// one, and since `x₁ ↦ x₁ + g₁(x₂)` is a translation modulo 1 every piece
/// has area exactly `1/16`.
pub fn shear_composition(
    f: &Mat,
    s: &[f64; TEST_PARTITION],
    t: &[f64; TEST_PARTITION],
) -> Vec<(Mat, f64)> {
    let w = 1.0 / (TEST_PARTITION * TEST_PARTITION) as f64;
    let mut out = Vec::with_capacity(TEST_PARTITION * TEST_PARTITION);
    for &ti in t {
        for &sj in s {
            let g = *f * Mat::new(1.0, 0.0, ti, 1.0) * Mat::new(1.0, sj, 0.0, 1.0);
            out.push((g, w));
        }
    }
    out
}

fn zero_mean_slopes<R: Rng + ?Sized>(rng: &mut R, amplitude: f64) -> [f64; TEST_PARTITION] {
    let mut v = [0.0; TEST_PARTITION];
    for x in v.iter_mut() {
        *x = rng.gen_range(-amplitude..amplitude);
    }
    let mean = v.iter().sum::<f64>() / TEST_PARTITION as f64;
    v.map(|x| x - mean)
}

/// Jensen-type test `W_hom(F) ≤ ⨏ W_hom(F + ∇φ)` against exactly
/// volume-preserving, piecewise-affine, periodic test deformations built by
/// composing two lattice shears on a 4×4 partition (see
/// [`shear_composition`]). The first field is `φ = 0`, where the inequality
/// is an equality. Slopes are drawn in `±0.5`.
pub fn quasiconvexity_probe(
    spec: &EnergySpec,
    f: &Mat,
    test_fields: usize,
    cell: &ProbeCell,
    seed: u64,
    relative_tolerance: f64,
) -> Result<QuasiconvexityReport> {
    if test_fields == 0 {
        return Err(Error::invalid("test_fields", "need at least one test field"));
    }
    if off_sigma(f) {
        return Err(Error::OffSigma { det: f.det() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut slopes = vec![([0.0; TEST_PARTITION], [0.0; TEST_PARTITION])];
    for _ in 1..test_fields {
        let s = zero_mean_slopes(&mut rng, 0.5);
        let t = zero_mean_slopes(&mut rng, 0.5);
        slopes.push((s, t));
    }
    let mut matrices = vec![*f];
    let mut weights = Vec::new();
    for (s, t) in &slopes {
        let pieces = shear_composition(f, s, t);
        weights.push(pieces.iter().map(|p| p.1).collect::<Vec<_>>());
        matrices.extend(pieces.iter().map(|p| p.0));
    }
    let values = cached_values(spec, &matrices, cell)?;
    let lhs = values[0];
    let mut cursor = 1;
    let mut samples = Vec::with_capacity(slopes.len());
    let mut max_value = lhs.abs();
    for ((s, t), w) in slopes.iter().zip(&weights) {
        let rhs: f64 = w.iter().zip(&values[cursor..cursor + w.len()]).map(|(a, v)| a * v).sum();
        cursor += w.len();
        max_value = max_value.max(rhs.abs());
        samples.push(QuasiconvexitySample {
            s: *s,
            t: *t,
            lhs,
            rhs,
            violated: false,
        });
    }
    let tolerance = relative_tolerance * (1.0 + max_value);
    for sample in samples.iter_mut() {
        sample.violated = sample.lhs > sample.rhs + tolerance;
    }
    Ok(QuasiconvexityReport {
        violations: samples.iter().filter(|s| s.violated).count(),
        samples,
        tolerance,
    })
}

/// Off-`Σ` check: minimized penalty values against `0.5·n·|det F − 1|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    #[serde(rename = "F")]
    pub f: Mat,
    pub entries: Vec<HomogEntry>,
    pub floors: Vec<f64>,
    pub passed: bool,
}

pub fn divergence_check(spec: &EnergySpec, f: &Mat, cell: &ProbeCell, n_values: &[f64]) -> Result<DivergenceReport> {
    if n_values.is_empty() {
        return Err(Error::invalid("n_values", "must be non-empty"));
    }
    let results = par::map_tasks(n_values.len(), |i| {
        let problem = cell.problem(spec, f, n_values[i])?;
        crate::solve::minimize(&problem, &problem.zero_field(), &cell.solver)
    });
    let mut entries = Vec::new();
    let mut floors = Vec::new();
    for (r, &n) in results.into_iter().zip(n_values) {
        let r = r?;
        entries.push(HomogEntry::new(Some(n), cell.k, cell.m, &r));
        floors.push(0.5 * n * (f.det() - 1.0).abs());
    }
    let passed = entries.iter().zip(&floors).all(|(e, fl)| e.value >= *fl);
    Ok(DivergenceReport {
        f: *f,
        entries,
        floors,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::PhaseField;

    fn small_schedule() -> Schedule {
        Schedule {
            n_values: vec![1.0, 4.0, 16.0],
            k_values: vec![1, 2],
            m_values: vec![4],
            starts: 2,
            ..Schedule::default()
        }
    }

    #[test]
    fn schedule_validation() {
        assert!(Schedule::default().validate().is_ok());
        let bad = Schedule {
            n_values: vec![4.0, 1.0],
            ..Schedule::default()
        };
        assert!(bad.validate().is_err());
        let bad = Schedule {
            k_values: vec![],
            ..Schedule::default()
        };
        assert!(bad.validate().is_err());
        let bad = Schedule {
            m_values: vec![0, 4],
            ..Schedule::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn identity_has_zero_estimates() {
        let spec = EnergySpec::neo_hookean(PhaseField::laminate(1, 0.5, 1.0, 10.0));
        let report = estimate(&spec, &Mat::IDENTITY, &small_schedule(), false).unwrap();
        assert!(report.entries.iter().all(|e| e.value.abs() <= 1e-10));
        assert_eq!(report.estimate_w_hom, Some(0.0));
        assert!(report.flags.n_monotone && report.flags.k_subadditive && report.flags.growth);
    }

    #[test]
    fn off_sigma_needs_flag() {
        let spec = EnergySpec::neo_hookean(PhaseField::constant(1.0));
        let f = Mat::diag(2.0, 1.0);
        assert!(matches!(estimate(&spec, &f, &small_schedule(), false), Err(Error::OffSigma { .. })));
        let report = estimate(&spec, &f, &small_schedule(), true).unwrap();
        assert_eq!(report.estimate_w_hom, None);
        assert_eq!(report.flags.off_sigma_divergence, Some(true));
    }

    #[test]
    fn rank_one_segments_stay_in_sigma() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let (a, b) = rank_one_segment(&mut rng);
            for t in [0.0, 0.3, 0.5, 1.0] {
                let m = a + (b - a).scale(t);
                assert!((m.det() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_test_field_is_equality() {
        let spec = EnergySpec::neo_hookean(PhaseField::constant(1.0));
        let f = Mat::diag(2.0, 0.5);
        let report = quasiconvexity_probe(&spec, &f, 1, &ProbeCell::new(1, 4), 0, 1e-3).unwrap();
        let s = &report.samples[0];
        assert!((s.lhs - s.rhs).abs() <= 1e-12 * s.lhs);
        assert_eq!(report.violations, 0);
    }

    #[test]
    fn shear_compositions_are_incompressible_and_average_to_f() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = Mat::new(1.2, 0.3, -0.4, (1.0 - 0.3 * 0.4) / 1.2);
        for _ in 0..20 {
            let s = zero_mean_slopes(&mut rng, 0.5);
            let t = zero_mean_slopes(&mut rng, 0.5);
            let pieces = shear_composition(&f, &s, &t);
            let mut mean = Mat::ZERO;
            for (g, w) in &pieces {
                assert!((g.det() - f.det()).abs() < 1e-12);
                mean += g.scale(*w);
            }
            // Zero mean of the periodic displacement gradient.
            assert!((mean - f).max_abs() < 1e-12);
        }
    }
}
