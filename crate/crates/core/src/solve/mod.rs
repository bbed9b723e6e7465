//! Minimizers for the discrete cell problem.
//!
//! * [`minimize`]: L-BFGS on the penalty objective `⨏ W_n(y, F + ∇φ)`.
//! * [`multistart`]: the same from several seeded starting fields.
//! * [`solve_constrained`]: augmented Lagrangian on `⨏ W̃(y, F + ∇φ)` with one
//!   equality constraint `det(F + ∇φ_e) = 1` per element.

pub mod lbfgs;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use lbfgs::Diagnostic;

use crate::cell::{tile, tile_elements, CellProblem, ConstraintMode, FluctuationField};
use crate::density::Eval;
use crate::tensor::Mat;
use crate::error::{Error, Result};
use crate::par;
use crate::tensor::Vec2;

/// Smoothing at which penalty continuation starts.
const CONTINUATION_START: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    /// Reported cell value: the exact (unsmoothed) penalty objective in
    /// penalty mode, `⨏ W̃` in exact mode.
    pub value: f64,
    pub phi: FluctuationField,
    pub iterations: usize,
    pub converged: bool,
    pub grad_norm: f64,
    /// `max_e |det(F + G_e) − 1|`.
    pub constraint_residual: f64,
    pub diagnostic: Option<Diagnostic>,
    /// Index of the winning start in [`multistart`], 0 otherwise.
    pub start: usize,
    /// Objective after each accepted step of the final stage.
    #[serde(skip)]
    pub history: Vec<f64>,
    /// Final multipliers of an augmented-Lagrangian solve, for continuation.
    #[serde(skip)]
    pub state: Option<MultiplierState>,
}

/// Per-element multipliers and the augmented-Lagrangian parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiplierState {
    pub multipliers: Vec<f64>,
    pub rho: f64,
}

/// How the penalty `n|det − 1|` is handled by the minimizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PenaltyMethod {
    /// Exact: a proximal augmented Lagrangian on the per-element residuals,
    /// with multipliers confined to `[−n, n]`. The nonsmooth term enters only
    /// through its Moreau envelope, so the subproblems stay well conditioned.
    #[default]
    Splitting,
    /// L-BFGS on `sqrt(r² + δ²) − δ`, with `δ` decreased by factors of ten
    /// from `1e-2` down to the problem's smoothing.
    Smoothing,
}

/// Solver settings shared by all cell minimizations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// L-BFGS iteration cap per (sub)problem.
    pub max_iterations: usize,
    /// Converged when the scaled gradient norm is below
    /// `gradient_tolerance · (1 + |value|)`.
    pub gradient_tolerance: f64,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    pub memory: usize,
    pub max_line_search: usize,
    /// Consecutive iterations with relative decrease below `1e-15` before
    /// giving up.
    pub stall_iterations: usize,
    pub penalty_method: PenaltyMethod,
    /// Augmented-Lagrangian parameter at the first outer iteration.
    pub initial_penalty: f64,
    /// Growth of the parameter when the residual fails to drop fourfold.
    pub penalty_growth: f64,
    pub max_penalty: f64,
    /// Multipliers of the exact constraints are clipped to `±multiplier_cap`.
    pub multiplier_cap: f64,
    pub outer_iterations: usize,
    /// Target for the outer loop: `max |det − 1|` in constrained solves, the
    /// largest multiplier update divided by the parameter in penalty solves.
    pub residual_tolerance: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iterations: 3000,
            gradient_tolerance: 1e-7,
            c1: 1e-4,
            c2: 0.9,
            memory: 10,
            max_line_search: 40,
            stall_iterations: 20,
            penalty_method: PenaltyMethod::Splitting,
            initial_penalty: 10.0,
            penalty_growth: 4.0,
            max_penalty: 1e7,
            multiplier_cap: 1e6,
            outer_iterations: 40,
            residual_tolerance: 1e-7,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gradient_tolerance > 0.0) {
            return Err(Error::invalid("solver.gradient_tolerance", "must be > 0"));
        }
        if self.memory == 0 {
            return Err(Error::invalid("solver.memory", "must be at least 1"));
        }
        if !(0.0 < self.c1 && self.c1 < self.c2 && self.c2 < 1.0) {
            return Err(Error::invalid("solver.c1", "need 0 < c1 < c2 < 1"));
        }
        if !(self.initial_penalty > 0.0 && self.max_penalty >= self.initial_penalty) {
            return Err(Error::invalid("solver.initial_penalty", "need 0 < initial_penalty <= max_penalty"));
        }
        if !(self.penalty_growth >= 1.0) {
            return Err(Error::invalid("solver.penalty_growth", "must be >= 1"));
        }
        if !(self.multiplier_cap > 0.0) {
            return Err(Error::invalid("solver.multiplier_cap", "must be > 0"));
        }
        if self.outer_iterations == 0 {
            return Err(Error::invalid("solver.outer_iterations", "must be at least 1"));
        }
        if !(self.residual_tolerance > 0.0) {
            return Err(Error::invalid("solver.residual_tolerance", "must be > 0"));
        }
        Ok(())
    }
}

fn grad_scale(problem: &CellProblem) -> f64 {
    let grid = problem.grid();
    grid.volume() * (grid.m * grid.m) as f64
}

fn check_start(problem: &CellProblem, phi0: &FluctuationField) -> Result<()> {
    if phi0.grid != problem.grid() {
        return Err(Error::invalid("phi0", "start field lives on a different grid"));
    }
    phi0.check_boundary()
}

/// Minimizes the penalty objective `⨏ W_n(y, F + ∇φ)` from `phi0`.
pub fn minimize(problem: &CellProblem, phi0: &FluctuationField, config: &SolverConfig) -> Result<SolveResult> {
    minimize_with(problem, phi0, None, config)
}

/// Continues from an earlier solve on the same grid (typically at a smaller
/// `n`): starts from its field and, with [`PenaltyMethod::Splitting`], from
/// its multipliers (clipped to the new `±n`) and parameter.
pub fn continue_from(problem: &CellProblem, previous: &SolveResult, config: &SolverConfig) -> Result<SolveResult> {
    minimize_with(problem, &previous.phi, previous.state.as_ref(), config)
}

fn minimize_with(
    problem: &CellProblem,
    phi0: &FluctuationField,
    state: Option<&MultiplierState>,
    config: &SolverConfig,
) -> Result<SolveResult> {
    config.validate()?;
    check_start(problem, phi0)?;
    let (x, out, iterations, met, state) = match config.penalty_method {
        PenaltyMethod::Splitting => {
            let n = problem.n;
            let exact = |x: &[f64]| {
                let mut g = vec![0.0; x.len()];
                problem.penalty_objective_with(x, &mut g, 0.0)
            };
            let al = augmented_lagrangian(
                problem,
                phi0.as_flat().to_vec(),
                config,
                n.value(),
                Some(&exact),
                state,
                |e, fe| problem.spec.w_n_elastic_mu(problem.mu(e), n, fe),
            );
            let met = al.residual <= config.residual_tolerance;
            (al.x, al.last, al.iterations, met, Some(al.state))
        }
        PenaltyMethod::Smoothing => {
            let target = problem.smoothing;
            let mut stages = Vec::new();
            let mut delta = CONTINUATION_START;
            while delta > target * 1.000_001 {
                stages.push(delta);
                delta *= 0.1;
            }
            stages.push(target);
            let scale = grad_scale(problem);
            let mut x = phi0.as_flat().to_vec();
            let mut iterations = 0;
            let mut outcome = None;
            for delta in stages {
                let out = lbfgs::minimize(|x, g| problem.penalty_objective_with(x, g, delta), x, config, scale);
                iterations += out.iterations;
                x = out.x.clone();
                outcome = Some(out);
            }
            (x, outcome.expect("at least one stage"), iterations, true, None)
        }
    };
    let phi = FluctuationField::from_flat(problem.grid(), &x)?;
    let value = problem.penalty_value(&phi)?;
    Ok(SolveResult {
        value,
        constraint_residual: problem.constraint_residual(&phi),
        phi,
        iterations,
        converged: met && out.converged,
        grad_norm: out.grad_norm,
        diagnostic: if met { out.diagnostic } else { Some(Diagnostic::ConstraintUnmet) },
        start: 0,
        history: out.history,
        state,
    })
}

struct AlOutcome {
    x: Vec<f64>,
    last: lbfgs::Outcome,
    iterations: usize,
    residual: f64,
    state: MultiplierState,
}

/// Outer loop shared by the penalty (`cap = n`, `splitting`) and exact
/// (`cap = multiplier_cap`) solves. Per element the subproblem carries
/// `env(det − 1 − λ/ρ) − λ²/2ρ`, where `env` is the Moreau envelope of
/// `cap·|·|` with parameter `ρ` (quadratic for `|ρz| ≤ cap`, linear beyond),
/// and multipliers update as `λ ← clamp(λ − ρ(det − 1), ±cap)`.
///
/// In penalty solves (`exact` given) the reported residual is the largest
/// multiplier update over `ρ`, which vanishes exactly at a minimizer of the
/// `cap·|·|` penalty, and the returned point is the best of the start and the
/// outer iterates under `exact`. In constrained solves the residual is
/// `max |det − 1|` and the last iterate is returned.
fn augmented_lagrangian<B>(
    problem: &CellProblem,
    x0: Vec<f64>,
    config: &SolverConfig,
    cap: f64,
    exact: Option<&dyn Fn(&[f64]) -> f64>,
    state: Option<&MultiplierState>,
    base: B,
) -> AlOutcome
where
    B: Fn(usize, &Mat) -> Eval + Sync + Send,
{
    let mut best = exact.map(|f| (f(&x0), x0.clone()));
    let scale = grad_scale(problem);
    let elements = problem.mesh().elements.len();
    let (mut multipliers, mut rho) = match state {
        Some(st) if st.multipliers.len() == elements => (
            st.multipliers.iter().map(|l| l.clamp(-cap, cap)).collect(),
            st.rho.clamp(config.initial_penalty, config.max_penalty),
        ),
        _ => (vec![0.0; elements], config.initial_penalty),
    };
    let mut x = x0;
    let mut iterations = 0;
    let mut last = None;
    let mut residual = f64::INFINITY;
    let mut previous = f64::INFINITY;

    for _ in 0..config.outer_iterations {
        let lambda = &multipliers;
        let out = lbfgs::minimize(
            |x, g| {
                problem.assemble(x, g, |e, fe| {
                    let mut ev = base(e, fe);
                    let z = fe.det() - 1.0 - lambda[e] / rho;
                    let (env, denv) = if (rho * z).abs() <= cap {
                        (0.5 * rho * z * z, rho * z)
                    } else {
                        (cap * z.abs() - 0.5 * cap * cap / rho, cap * z.signum())
                    };
                    ev.value += env - 0.5 * lambda[e] * lambda[e] / rho;
                    ev.grad += fe.cofactor().scale(denv);
                    ev
                })
            },
            x,
            config,
            scale,
        );
        iterations += out.iterations;
        x = out.x.clone();
        let constraints = problem.constraint_values(&x);
        let mut step = 0.0_f64;
        for (l, c) in multipliers.iter_mut().zip(&constraints) {
            let updated = (*l - rho * c).clamp(-cap, cap);
            step = step.max((updated - *l).abs());
            *l = updated;
        }
        residual = match exact {
            Some(f) => {
                let value = f(&x);
                if let Some(b) = best.as_mut().filter(|b| value <= b.0) {
                    *b = (value, x.clone());
                }
                step / rho
            }
            None => constraints.iter().fold(0.0_f64, |acc, c| acc.max(c.abs())),
        };
        last = Some(out);
        if residual <= config.residual_tolerance {
            break;
        }
        if residual > 0.25 * previous {
            rho = (rho * config.penalty_growth).min(config.max_penalty);
        }
        previous = residual;
    }
    if let Some((_, b)) = best {
        x = b;
    }
    AlOutcome {
        x,
        last: last.expect("at least one outer iteration"),
        iterations,
        residual,
        state: MultiplierState { multipliers, rho },
    }
}

/// The `r × r` periodic tiling of a result (field and multipliers), as a
/// start for [`continue_from`] on the `r`-times larger cell. The objective is
/// unchanged by tiling, so the reported value carries over.
pub fn tiled(previous: &SolveResult, factor: usize) -> Result<SolveResult> {
    let phi = tile(&previous.phi, factor)?;
    let state = match &previous.state {
        Some(st) => Some(MultiplierState {
            multipliers: tile_elements(previous.phi.grid, &st.multipliers, factor)?,
            rho: st.rho,
        }),
        None => None,
    };
    Ok(SolveResult {
        phi,
        state,
        history: Vec::new(),
        ..previous.clone()
    })
}

/// Seeded random zero-boundary field with entries in `±scale·h`.
pub fn perturbation(problem: &CellProblem, scale: f64, rng: &mut impl Rng) -> FluctuationField {
    let grid = problem.grid();
    let amp = scale * grid.h();
    let mut values: Vec<Vec2> = (0..grid.node_count())
        .map(|v| {
            if grid.is_fixed(v) || amp == 0.0 {
                [0.0, 0.0]
            } else {
                [rng.gen_range(-amp..amp), rng.gen_range(-amp..amp)]
            }
        })
        .collect();
    for v in 0..values.len() {
        values[v] = values[grid.master(v)];
    }
    FluctuationField { grid, values }
}

fn start_rng(seed: u64, start: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(start as u64);
    rng
}

/// Minimizes from zero and from `starts − 1` seeded perturbations; returns
/// the lowest value (ties broken by start index).
pub fn multistart(
    problem: &CellProblem,
    config: &SolverConfig,
    starts: usize,
    perturbation_scale: f64,
    seed: u64,
) -> Result<SolveResult> {
    multistart_from(problem, &problem.zero_field(), config, starts, perturbation_scale, seed)
}

/// [`multistart`] around a given base field (start 0 is the base itself).
pub fn multistart_from(
    problem: &CellProblem,
    base: &FluctuationField,
    config: &SolverConfig,
    starts: usize,
    perturbation_scale: f64,
    seed: u64,
) -> Result<SolveResult> {
    if starts == 0 {
        return Err(Error::invalid("starts", "need at least one start"));
    }
    check_start(problem, base)?;
    let results = par::map_tasks(starts, |s| {
        let mut phi0 = base.clone();
        if s > 0 {
            let noise = perturbation(problem, perturbation_scale, &mut start_rng(seed, s));
            for (v, d) in phi0.values.iter_mut().zip(&noise.values) {
                v[0] += d[0];
                v[1] += d[1];
            }
        }
        minimize(problem, &phi0, config).map(|mut r| {
            r.start = s;
            r
        })
    });
    best_of(results)
}

fn best_of(results: Vec<Result<SolveResult>>) -> Result<SolveResult> {
    let mut best: Option<SolveResult> = None;
    for r in results {
        let r = r?;
        let better = match &best {
            None => true,
            Some(b) => r.value < b.value || (r.value == b.value && r.start < b.start),
        };
        if better {
            best = Some(r);
        }
    }
    Ok(best.expect("starts >= 1"))
}

/// Augmented Lagrangian for `min ⨏ W̃(y, F + ∇φ)` subject to
/// `det(F + ∇φ_e) = 1` on every element, started from zero.
pub fn solve_constrained(problem: &CellProblem, config: &SolverConfig) -> Result<SolveResult> {
    solve_constrained_from(problem, &problem.zero_field(), config)
}

/// [`solve_constrained`] from a given start field.
pub fn solve_constrained_from(
    problem: &CellProblem,
    phi0: &FluctuationField,
    config: &SolverConfig,
) -> Result<SolveResult> {
    config.validate()?;
    check_start(problem, phi0)?;
    if problem.is_off_sigma() {
        return Err(Error::OffSigma { det: problem.f.det() });
    }
    let problem = problem.with_mode(ConstraintMode::Exact);
    let al = augmented_lagrangian(
        &problem,
        phi0.as_flat().to_vec(),
        config,
        config.multiplier_cap,
        None,
        None,
        |e, fe| problem.spec.w_tilde_mu(problem.mu(e), fe),
    );
    let phi = FluctuationField::from_flat(problem.grid(), &al.x)?;
    let value = problem.tilde_value(&phi)?;
    let met = al.residual <= config.residual_tolerance;
    Ok(SolveResult {
        value,
        phi,
        iterations: al.iterations,
        converged: met && al.last.converged,
        grad_norm: al.last.grad_norm,
        constraint_residual: al.residual,
        diagnostic: if met { al.last.diagnostic } else { Some(Diagnostic::ConstraintUnmet) },
        start: 0,
        history: al.last.history,
        state: Some(al.state),
    })
}

/// Gauss–Newton projection onto `{det(F + G_e) = 1 for all e}`: repeated
/// minimum-norm corrections `δ = −Jᵀ(JJᵀ)⁻¹ c`, with `JJᵀ` inverted by
/// conjugate gradients. Returns the projected field and its residual.
pub fn project_to_constraints(
    problem: &CellProblem,
    phi: &FluctuationField,
    tolerance: f64,
    max_newton: usize,
) -> Result<(FluctuationField, f64)> {
    check_start(problem, phi)?;
    let mesh = problem.mesh();
    let fixed = mesh.fixed_mask();
    let mut x = phi.as_flat().to_vec();
    let mut c = problem.constraint_values(&x);
    let mut residual = c.iter().fold(0.0_f64, |a, v| a.max(v.abs()));

    // Jᵀ μ: nodal vector.
    let jt = |x: &[f64], mu: &[f64], out: &mut [f64]| {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (e, el) in mesh.elements.iter().enumerate() {
            let cof = problem.deformation(x, e).cofactor().0;
            for (a, &node) in el.nodes.iter().enumerate() {
                if fixed[node] {
                    continue;
                }
                let dn = el.shape_grad[a];
                out[2 * node] += mu[e] * (cof[0][0] * dn[0] + cof[0][1] * dn[1]);
                out[2 * node + 1] += mu[e] * (cof[1][0] * dn[0] + cof[1][1] * dn[1]);
            }
        }
        mesh.fold_gradient(out);
    };
    // J v: per-element linearized constraint.
    let jv = |x: &[f64], v: &[f64]| -> Vec<f64> {
        mesh.elements
            .iter()
            .enumerate()
            .map(|(e, el)| {
                let cof = problem.deformation(x, e).cofactor().0;
                let mut s = 0.0;
                for (a, &node) in el.nodes.iter().enumerate() {
                    let dn = el.shape_grad[a];
                    s += v[2 * node] * (cof[0][0] * dn[0] + cof[0][1] * dn[1]);
                    s += v[2 * node + 1] * (cof[1][0] * dn[0] + cof[1][1] * dn[1]);
                }
                s
            })
            .collect()
    };

    let mut tmp = vec![0.0; x.len()];
    for _ in 0..max_newton {
        if residual <= tolerance {
            break;
        }
        // CG on (J Jᵀ) μ = c.
        let ne = c.len();
        let mut mu = vec![0.0; ne];
        let mut r = c.clone();
        let mut p = r.clone();
        let mut rr: f64 = r.iter().map(|v| v * v).sum();
        let rr0 = rr;
        for _ in 0..2000 {
            if rr <= 1e-28 * rr0.max(1e-300) {
                break;
            }
            jt(&x, &p, &mut tmp);
            let ap = jv(&x, &tmp);
            let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
            if pap <= 0.0 {
                break;
            }
            let alpha = rr / pap;
            mu.iter_mut().zip(&p).for_each(|(m, pi)| *m += alpha * pi);
            r.iter_mut().zip(&ap).for_each(|(ri, a)| *ri -= alpha * a);
            let rr_new: f64 = r.iter().map(|v| v * v).sum();
            let beta = rr_new / rr;
            rr = rr_new;
            p.iter_mut().zip(&r).for_each(|(pi, ri)| *pi = ri + beta * *pi);
        }
        jt(&x, &mu, &mut tmp);
        // Backtrack on the Euclidean residual; degenerate directions of the
        // constraint set can make the full linearized step overshoot.
        let merit = |c: &[f64]| c.iter().map(|v| v * v).sum::<f64>();
        let current = merit(&c);
        let mut step = 1.0;
        let mut accepted = None;
        while step >= 1.0 / 1024.0 {
            let trial: Vec<f64> = x.iter().zip(&tmp).map(|(a, d)| a - step * d).collect();
            let c_trial = problem.constraint_values(&trial);
            if merit(&c_trial) < current {
                accepted = Some((trial, c_trial));
                break;
            }
            step *= 0.5;
        }
        let Some((trial, c_trial)) = accepted else {
            break;
        };
        x = trial;
        c = c_trial;
        residual = c.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    }
    Ok((FluctuationField::from_flat(problem.grid(), &x)?, residual))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell::Grid;
    use crate::density::{EnergySpec, PhaseField, TruncationLevel};
    use crate::tensor::Mat;

    fn homogeneous(f: Mat, m: usize) -> CellProblem {
        let spec = EnergySpec::neo_hookean(PhaseField::constant(1.0));
        CellProblem::new(spec, f, TruncationLevel::new(64.0).unwrap(), Grid::new(1, m).unwrap()).unwrap()
    }

    #[test]
    fn homogeneous_case_keeps_zero_fluctuation() {
        let problem = homogeneous(Mat::diag(2.0, 0.5), 8);
        let r = minimize(&problem, &problem.zero_field(), &SolverConfig::default()).unwrap();
        assert!((r.value - 1.125).abs() <= 1e-4 * 1.125);
        assert!(r.phi.max_abs() <= 1e-4);
    }

    #[test]
    fn identity_is_converged_at_start() {
        let problem = homogeneous(Mat::IDENTITY, 8);
        let r = minimize(&problem, &problem.zero_field(), &SolverConfig::default()).unwrap();
        assert_eq!(r.value, 0.0);
        assert_eq!(r.iterations, 0);
        assert!(r.converged);
    }

    #[test]
    fn constrained_rejects_off_sigma() {
        let problem = homogeneous(Mat::diag(2.0, 1.0), 4);
        let err = solve_constrained(&problem, &SolverConfig::default());
        assert!(matches!(err, Err(Error::OffSigma { .. })));
    }

    #[test]
    fn multistart_rejects_zero_starts() {
        let problem = homogeneous(Mat::IDENTITY, 4);
        assert!(multistart(&problem, &SolverConfig::default(), 0, 0.1, 0).is_err());
    }
}
