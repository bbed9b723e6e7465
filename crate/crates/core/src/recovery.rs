//! Composition-based recovery sequences and the limsup experiment.
//!
//! For a macroscopic deformation `u` that is affine on convex pieces of the
//! unit square, each gradient `F_i` gets a cell corrector `φ_η` whose energy
//! is within `η` of the best homogenized estimate. On every `εk`-cell fully
//! inside a piece the fluctuation is composed into the argument of `u`:
//!
//! ```text
//! v_ε(x) = x + ε F⁻¹ φ_η(x/ε),   z_ε = u ∘ v_ε,   ∇z_ε = F + ∇φ_η(x/ε),
//! ```
//!
//! so `det ∇z_ε = det(F + ∇φ_η)` and incompressibility is inherited exactly
//! from the corrector. Elsewhere `z_ε = u`.

use serde::{Deserialize, Serialize};

use crate::cell::{Boundary, CellProblem, FluctuationField, Grid, Mesh, Split, SIGMA_TOLERANCE};
use crate::density::{EnergySpec, TruncationLevel};
use crate::error::{Error, Result};
use crate::par;
use crate::solve::{project_to_constraints, solve_constrained_from, SolverConfig};
use crate::tensor::{dot, vnorm, Mat, Vec2};

/// Tolerance on `det F_i = 1` for macroscopic gradients.
pub const MACRO_DET_TOLERANCE: f64 = 1e-12;
/// Geometric tolerance for polygons and edges.
const GEOMETRY_TOLERANCE: f64 = 1e-12;
/// Largest number of pieces of a piecewise-affine deformation.
pub const MAX_PIECES: usize = 8;

/// One affine piece `x ↦ F x + b` on a convex polygon (counter-clockwise).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    pub vertices: Vec<Vec2>,
    #[serde(rename = "F")]
    pub f: Mat,
    pub offset: Vec2,
}

impl Piece {
    pub fn apply(&self, x: Vec2) -> Vec2 {
        let y = self.f.apply(x);
        [y[0] + self.offset[0], y[1] + self.offset[1]]
    }

    pub fn area(&self) -> f64 {
        polygon_area(&self.vertices)
    }

    /// Whether `x` lies in the closed polygon (up to `tol`).
    pub fn contains(&self, x: Vec2, tol: f64) -> bool {
        let v = &self.vertices;
        (0..v.len()).all(|i| {
            let a = v[i];
            let b = v[(i + 1) % v.len()];
            cross(sub(b, a), sub(x, a)) >= -tol * vnorm(sub(b, a))
        })
    }
}

fn sub(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] - b[0], a[1] - b[1]]
}

fn cross(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

fn polygon_area(v: &[Vec2]) -> f64 {
    0.5 * (0..v.len()).map(|i| cross(v[i], v[(i + 1) % v.len()])).sum::<f64>()
}

/// Macroscopic deformation on the unit square.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MacroDeformation {
    Affine {
        #[serde(rename = "F")]
        f: Mat,
    },
    PiecewiseAffine { pieces: Vec<Piece> },
}

impl MacroDeformation {
    pub fn affine(f: Mat) -> Self {
        MacroDeformation::Affine { f }
    }

    /// Two-piece laminate `u(x) = F x` for `x·ν < s`, `(F + a⊗ν) x − s a`
    /// beyond, with `ν ∈ {e₁, e₂}` (`axis` 1 or 2) and `a ⊥ adj(F)ᵀν`
    /// scaled to `amplitude`, so both gradients stay in `Σ`.
    pub fn two_piece_laminate(f: Mat, axis: usize, s: f64, amplitude: f64) -> Result<Self> {
        if axis != 1 && axis != 2 {
            return Err(Error::invalid("axis", "must be 1 or 2"));
        }
        if !(s > 0.0 && s < 1.0) {
            return Err(Error::invalid("s", "interface must cut the unit square"));
        }
        let nu = if axis == 1 { [1.0, 0.0] } else { [0.0, 1.0] };
        let t = crate::tensor::perp(f.adjugate().transpose().apply(nu));
        let a = [amplitude * t[0] / vnorm(t), amplitude * t[1] / vnorm(t)];
        let (lower, upper) = if axis == 1 {
            (
                vec![[0.0, 0.0], [s, 0.0], [s, 1.0], [0.0, 1.0]],
                vec![[s, 0.0], [1.0, 0.0], [1.0, 1.0], [s, 1.0]],
            )
        } else {
            (
                vec![[0.0, 0.0], [1.0, 0.0], [1.0, s], [0.0, s]],
                vec![[0.0, s], [1.0, s], [1.0, 1.0], [0.0, 1.0]],
            )
        };
        let u = MacroDeformation::PiecewiseAffine {
            pieces: vec![
                Piece {
                    vertices: lower,
                    f,
                    offset: [0.0, 0.0],
                },
                Piece {
                    vertices: upper,
                    f: f + Mat::outer(a, nu),
                    offset: [-s * a[0], -s * a[1]],
                },
            ],
        };
        u.validate()?;
        Ok(u)
    }

    /// The pieces, with an affine map as one piece covering the square.
    pub fn pieces(&self) -> Vec<Piece> {
        match self {
            MacroDeformation::Affine { f } => vec![Piece {
                vertices: vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
                f: *f,
                offset: [0.0, 0.0],
            }],
            MacroDeformation::PiecewiseAffine { pieces } => pieces.clone(),
        }
    }

    /// Checks `det F_i = 1`, convexity, that the pieces tile the unit square,
    /// and continuity plus rank-one compatibility across shared edges.
    pub fn validate(&self) -> Result<()> {
        let pieces = self.pieces();
        if pieces.is_empty() || pieces.len() > MAX_PIECES {
            return Err(Error::invalid("u.pieces", format!("need 1 to {MAX_PIECES} pieces")));
        }
        let mut total = 0.0;
        for (i, p) in pieces.iter().enumerate() {
            let field = format!("u.pieces[{i}]");
            if !p.f.is_finite() || (p.f.det() - 1.0).abs() > MACRO_DET_TOLERANCE {
                return Err(Error::invalid(field, format!("det F = {} is not 1", p.f.det())));
            }
            let v = &p.vertices;
            if v.len() < 3 || v.iter().any(|x| !x.iter().all(|c| c.is_finite())) {
                return Err(Error::invalid(field, "a piece needs at least three finite vertices"));
            }
            for i in 0..v.len() {
                let turn = cross(sub(v[(i + 1) % v.len()], v[i]), sub(v[(i + 2) % v.len()], v[(i + 1) % v.len()]));
                if turn < -GEOMETRY_TOLERANCE {
                    return Err(Error::invalid(field, "vertices must form a convex counter-clockwise polygon"));
                }
            }
            if v.iter().any(|x| x.iter().any(|&c| !(-GEOMETRY_TOLERANCE..=1.0 + GEOMETRY_TOLERANCE).contains(&c))) {
                return Err(Error::invalid(field, "piece leaves the unit square"));
            }
            if !(p.area() > GEOMETRY_TOLERANCE) {
                return Err(Error::invalid(field, "degenerate piece"));
            }
            total += p.area();
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("u.pieces", format!("pieces cover area {total}, not 1")));
        }
        for i in 0..pieces.len() {
            for j in i + 1..pieces.len() {
                for (a, b) in shared_segments(&pieces[i], &pieces[j]) {
                    let (pi, pj) = (&pieces[i], &pieces[j]);
                    for x in [a, b] {
                        let gap = vnorm(sub(pi.apply(x), pj.apply(x)));
                        if gap > 1e-9 {
                            return Err(Error::invalid(
                                "u.pieces",
                                format!("pieces {i} and {j} disagree by {gap} on their shared edge"),
                            ));
                        }
                    }
                    let t = sub(b, a);
                    let jump = (pi.f - pj.f).apply([t[0] / vnorm(t), t[1] / vnorm(t)]);
                    if vnorm(jump) > 1e-9 {
                        return Err(Error::invalid(
                            "u.pieces",
                            format!("gradients of pieces {i} and {j} are not rank-one connected along their edge"),
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Overlapping parts of collinear edges of two polygons.
fn shared_segments(p: &Piece, q: &Piece) -> Vec<(Vec2, Vec2)> {
    let edges = |v: &[Vec2]| (0..v.len()).map(|i| (v[i], v[(i + 1) % v.len()])).collect::<Vec<_>>();
    let mut out = Vec::new();
    for (a, b) in edges(&p.vertices) {
        let d = sub(b, a);
        let len = vnorm(d);
        let t = [d[0] / len, d[1] / len];
        for (c, e) in edges(&q.vertices) {
            if cross(t, sub(c, a)).abs() > GEOMETRY_TOLERANCE || cross(t, sub(e, a)).abs() > GEOMETRY_TOLERANCE {
                continue;
            }
            let (s0, s1) = (dot(sub(c, a), t), dot(sub(e, a), t));
            let lo = s0.min(s1).max(0.0);
            let hi = s0.max(s1).min(len);
            if hi - lo > GEOMETRY_TOLERANCE {
                out.push(([a[0] + lo * t[0], a[1] + lo * t[1]], [a[0] + hi * t[0], a[1] + hi * t[1]]));
            }
        }
    }
    out
}

/// How the corrector slack is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Slack {
    Absolute(f64),
    /// Fraction of the best homogenized estimate.
    Relative(f64),
}

impl Slack {
    fn resolve(self, best: f64) -> f64 {
        match self {
            Slack::Absolute(eta) => eta,
            Slack::Relative(r) => r * best.abs(),
        }
    }

    fn validate(self) -> Result<()> {
        let v = match self {
            Slack::Absolute(v) | Slack::Relative(v) => v,
        };
        if v > 0.0 && v.is_finite() {
            Ok(())
        } else {
            Err(Error::invalid("eta", "slack must be positive"))
        }
    }
}

/// Cell settings for corrector construction.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoverySettings {
    /// Cell sizes tried in order.
    pub k_values: Vec<usize>,
    pub m: usize,
    pub split: Split,
    pub solver: SolverConfig,
    /// Target of the post-solve projection onto `det = 1`.
    pub projection_tolerance: f64,
    pub projection_iterations: usize,
}

impl Default for RecoverySettings {
    fn default() -> Self {
        RecoverySettings {
            k_values: vec![1, 2],
            m: 8,
            split: Split::Crossed,
            solver: SolverConfig::default(),
            projection_tolerance: 1e-10,
            projection_iterations: 50,
        }
    }
}

impl RecoverySettings {
    pub fn validate(&self) -> Result<()> {
        if self.k_values.is_empty() || self.k_values.contains(&0) || !self.k_values.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::invalid("recovery.k_values", "must be positive and increasing"));
        }
        if self.m == 0 {
            return Err(Error::invalid("recovery.m", "must be positive"));
        }
        if !(self.projection_tolerance > 0.0) {
            return Err(Error::invalid("recovery.projection_tolerance", "must be positive"));
        }
        self.solver.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Corrector {
    #[serde(rename = "F")]
    pub f: Mat,
    pub eta: f64,
    pub k_eta: usize,
    #[serde(skip)]
    pub phi_eta: FluctuationField,
    /// `⨏ W̃(y, F + ∇φ_η)` over `[0, k_η]²`.
    pub cell_value: f64,
    /// Lowest constrained value over the tried cell sizes.
    pub best_estimate: f64,
    /// Constrained value per tried `k`.
    pub values: Vec<(usize, f64)>,
    /// `max_e |det(F + ∇φ_η) − 1|` after projection.
    pub residual: f64,
    /// Whether `cell_value ≤ best_estimate + η`.
    pub met: bool,
}

impl Corrector {
    /// The zero corrector at `k = 1`.
    pub fn trivial(spec: &EnergySpec, f: Mat, m: usize) -> Result<Self> {
        let grid = Grid::new(1, m)?;
        let value = CellProblem::new(*spec, f, TruncationLevel::new(1.0)?, grid)?.tilde_value(&FluctuationField::zeros(grid))?;
        Ok(Corrector {
            f,
            eta: 0.0,
            k_eta: 1,
            phi_eta: FluctuationField::zeros(grid),
            cell_value: value,
            best_estimate: value,
            values: vec![(1, value)],
            residual: (f.det() - 1.0).abs(),
            met: true,
        })
    }
}

/// Solves the constrained cell problem over `settings.k_values` (each
/// warm-started from the tiled result of a divisor) and returns the smallest
/// `k` whose value is within `η` of the best one, projected onto `det = 1`.
pub fn build_corrector(spec: &EnergySpec, f: &Mat, eta: Slack, settings: &RecoverySettings) -> Result<Corrector> {
    spec.validate()?;
    settings.validate()?;
    eta.validate()?;
    if (f.det() - 1.0).abs() > SIGMA_TOLERANCE {
        return Err(Error::OffSigma { det: f.det() });
    }
    let n = TruncationLevel::new(1.0)?;
    let mut solved: Vec<(usize, CellProblem, FluctuationField, f64)> = Vec::new();
    for &k in &settings.k_values {
        let grid = Grid::with_split(k, settings.m, settings.split)?.with_boundary(Boundary::Dirichlet);
        let problem = CellProblem::new(*spec, *f, n, grid)?;
        let start = match solved.iter().rev().find(|(k0, ..)| k % k0 == 0) {
            Some((k0, _, phi, _)) => crate::cell::tile(phi, k / k0)?,
            None => problem.zero_field(),
        };
        let r = solve_constrained_from(&problem, &start, &settings.solver)?;
        solved.push((k, problem, r.phi, r.value));
    }
    let best = solved.iter().map(|s| s.3).fold(f64::INFINITY, f64::min);
    let eta_value = eta.resolve(best);
    let chosen = solved
        .iter()
        .position(|s| s.3 <= best + eta_value + 1e-12)
        .expect("the best value is always within slack");
    let values = solved.iter().map(|s| (s.0, s.3)).collect();
    let (k_eta, problem, phi, _) = solved.swap_remove(chosen);
    let (phi_eta, residual) = project_to_constraints(
        &problem,
        &phi,
        settings.projection_tolerance,
        settings.projection_iterations,
    )?;
    let cell_value = problem.tilde_value(&phi_eta)?;
    Ok(Corrector {
        f: *f,
        eta: eta_value,
        k_eta,
        phi_eta,
        cell_value,
        best_estimate: best,
        values,
        residual,
        met: cell_value <= best + eta_value + 1e-12,
    })
}

/// `z_ε` and `∇z_ε` at one point, with whether the point was in the mask.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub z: Vec2,
    pub grad: Mat,
    pub masked: bool,
}

/// A macroscopic deformation with one corrector per piece.
pub struct Recovery {
    pieces: Vec<Piece>,
    correctors: Vec<Corrector>,
    meshes: Vec<Mesh>,
}

impl Recovery {
    pub fn new(u: &MacroDeformation, correctors: Vec<Corrector>) -> Result<Self> {
        u.validate()?;
        let pieces = u.pieces();
        if correctors.len() != pieces.len() {
            return Err(Error::SizeMismatch {
                expected: pieces.len(),
                found: correctors.len(),
            });
        }
        for (p, c) in pieces.iter().zip(&correctors) {
            if (p.f - c.f).max_abs() > MACRO_DET_TOLERANCE {
                return Err(Error::invalid("corrector", "corrector was built for a different gradient"));
            }
            if c.phi_eta.grid.boundary != Boundary::Dirichlet || c.phi_eta.grid.k != c.k_eta {
                return Err(Error::invalid("corrector", "needs a zero-boundary field on [0, k_eta]²"));
            }
        }
        let meshes = correctors.iter().map(|c| Mesh::new(c.phi_eta.grid)).collect();
        Ok(Recovery {
            pieces,
            correctors,
            meshes,
        })
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    pub fn correctors(&self) -> &[Corrector] {
        &self.correctors
    }

    fn piece_of(&self, x: Vec2) -> usize {
        self.pieces
            .iter()
            .position(|p| p.contains(x, 1e-12))
            .unwrap_or_else(|| {
                // Round-off at a boundary: the piece with the least violation.
                let worst = |p: &Piece| {
                    let v = &p.vertices;
                    (0..v.len())
                        .map(|i| -cross(sub(v[(i + 1) % v.len()], v[i]), sub(x, v[i])))
                        .fold(f64::NEG_INFINITY, f64::max)
                };
                (0..self.pieces.len())
                    .min_by(|&a, &b| worst(&self.pieces[a]).total_cmp(&worst(&self.pieces[b])))
                    .expect("at least one piece")
            })
    }

    /// Origin of the `εk`-cell of piece `i` containing `x`, when that cell
    /// lies inside the piece.
    fn mask_cell(&self, i: usize, eps: f64, x: Vec2) -> Option<Vec2> {
        let side = eps * self.correctors[i].k_eta as f64;
        let q = [(x[0] / side).floor() * side, (x[1] / side).floor() * side];
        let p = &self.pieces[i];
        let tol = 1e-12;
        let inside = [[0.0, 0.0], [side, 0.0], [side, side], [0.0, side]]
            .iter()
            .all(|c| p.contains([q[0] + c[0], q[1] + c[1]], tol));
        inside.then_some(q)
    }

    /// `z_ε(x)` and `∇z_ε(x)` for `x` in the unit square.
    pub fn evaluate(&self, eps: f64, x: Vec2) -> Result<Sample> {
        if !(eps > 0.0) {
            return Err(Error::invalid("eps", "must be positive"));
        }
        if !x.iter().all(|c| (0.0..=1.0).contains(c)) {
            return Err(Error::invalid("x", format!("{x:?} is outside the unit square")));
        }
        Ok(self.evaluate_unchecked(eps, x))
    }

    fn evaluate_unchecked(&self, eps: f64, x: Vec2) -> Sample {
        let i = self.piece_of(x);
        let piece = &self.pieces[i];
        let Some(q) = self.mask_cell(i, eps, x) else {
            return Sample {
                z: piece.apply(x),
                grad: piece.f,
                masked: false,
            };
        };
        let c = &self.correctors[i];
        let mesh = &self.meshes[i];
        let k = c.k_eta as f64;
        let y = [
            ((x[0] - q[0]) / eps).clamp(0.0, k),
            ((x[1] - q[1]) / eps).clamp(0.0, k),
        ];
        let phi = c.phi_eta.evaluate(mesh, y);
        let g = mesh.elements[mesh.locate(y)].gradient(&c.phi_eta.values);
        let finv = piece.f.inverse().expect("det F = 1");
        let shift = finv.apply(phi);
        let v = [x[0] + eps * shift[0], x[1] + eps * shift[1]];
        Sample {
            z: piece.apply(v),
            grad: piece.f * (Mat::IDENTITY + finv * g),
            masked: true,
        }
    }
}

/// `z_ε(x)` and `∇z_ε(x)` for an affine or piecewise-affine `u` with one
/// corrector per piece.
pub fn evaluate_z_eps(u: &MacroDeformation, correctors: &[Corrector], eps: f64, x: Vec2) -> Result<Sample> {
    Recovery::new(u, correctors.to_vec())?.evaluate(eps, x)
}

/// Quadrature points per side needed at `ε`: step `≤ ε/(4 m k)`.
pub fn required_points(eps: f64, m: usize, k: usize) -> usize {
    (4.0 * (m * k) as f64 / eps - 1e-9).ceil() as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryRow {
    pub eps: f64,
    /// `∫ W̃(x/ε, ∇z_ε)` by the midpoint rule.
    pub energy: f64,
    pub bound: f64,
    /// `max |det ∇z_ε − 1|` over quadrature points.
    pub det_residual: f64,
    /// `‖z_ε − u‖_{L¹}`.
    pub l1_distance: f64,
    /// Area outside the mask.
    pub uncovered_fraction: f64,
    pub points_per_side: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoveryReport {
    pub u: MacroDeformation,
    pub correctors: Vec<Corrector>,
    /// `Σ_i |Ω_i| · best estimate(F_i)`.
    pub bound: f64,
    /// `Σ_i |Ω_i| · η_i`.
    pub slack: f64,
    pub rows: Vec<RecoveryRow>,
    /// `max uncovered_fraction / ε`.
    pub coverage_constant: f64,
    pub max_det_residual: f64,
    pub max_corrector_residual: f64,
    /// Every energy within `bound + slack + 2 %·bound`.
    pub energy_ok: bool,
    /// L¹ distances non-increasing in the schedule within 5 %.
    pub l1_monotone: bool,
    /// `max_det_residual ≤ 1e-10 + max_corrector_residual`.
    pub det_ok: bool,
    pub passed: bool,
}

/// Relative slack on the energy bound for quadrature and mesh effects.
pub const ENERGY_SLACK: f64 = 0.02;
/// Relative tolerance on the decrease of the L¹ distances.
pub const L1_SLACK: f64 = 0.05;

/// Builds one corrector per piece and evaluates the recovery energies on
/// the `ε` schedule. `points_per_side` overrides the default midpoint grid
/// and must still resolve every corrector element.
pub fn limsup_experiment(
    spec: &EnergySpec,
    u: &MacroDeformation,
    eta: Slack,
    eps_values: &[f64],
    points_per_side: Option<usize>,
    settings: &RecoverySettings,
) -> Result<RecoveryReport> {
    u.validate()?;
    if eps_values.is_empty() || !eps_values.iter().all(|e| *e > 0.0 && e.is_finite()) {
        return Err(Error::invalid("eps_values", "need positive ε values"));
    }
    if !eps_values.windows(2).all(|w| w[1] < w[0]) {
        return Err(Error::invalid("eps_values", "must be decreasing"));
    }
    settings.validate()?;
    let k_max = *settings.k_values.last().expect("validated");
    for &eps in eps_values {
        let needed = required_points(eps, settings.m, k_max);
        if let Some(p) = points_per_side {
            if p < needed {
                return Err(Error::invalid(
                    "quadrature",
                    format!(
                        "{p} points per side cannot resolve ε = {eps}: a {}-element cell needs at least {needed} (step ≤ ε/(4·m·k))",
                        settings.m
                    ),
                ));
            }
        }
    }

    let pieces = u.pieces();
    let mut correctors: Vec<Corrector> = Vec::with_capacity(pieces.len());
    for p in &pieces {
        let reuse = correctors.iter().find(|c| (c.f - p.f).max_abs() == 0.0).cloned();
        correctors.push(match reuse {
            Some(c) => c,
            None => build_corrector(spec, &p.f, eta, settings)?,
        });
    }
    let bound: f64 = pieces.iter().zip(&correctors).map(|(p, c)| p.area() * c.best_estimate).sum();
    let slack: f64 = pieces.iter().zip(&correctors).map(|(p, c)| p.area() * c.eta).sum();
    let recovery = Recovery::new(u, correctors)?;

    let mut rows = Vec::with_capacity(eps_values.len());
    for &eps in eps_values {
        let k = recovery.correctors.iter().map(|c| c.k_eta).max().expect("one piece");
        let n = points_per_side.unwrap_or_else(|| required_points(eps, settings.m, k));
        rows.push(quadrature(spec, &recovery, eps, n, bound));
    }

    let max_det_residual = rows.iter().map(|r| r.det_residual).fold(0.0, f64::max);
    let max_corrector_residual = recovery.correctors.iter().map(|c| c.residual).fold(0.0, f64::max);
    let coverage_constant = rows.iter().map(|r| r.uncovered_fraction / r.eps).fold(0.0, f64::max);
    let energy_ok = rows
        .iter()
        .all(|r| r.energy.is_finite() && r.energy <= bound + slack + ENERGY_SLACK * bound.abs());
    let l1_monotone = rows
        .windows(2)
        .all(|w| w[1].l1_distance <= (1.0 + L1_SLACK) * w[0].l1_distance);
    let det_ok = max_det_residual <= 1e-10 + max_corrector_residual;
    Ok(RecoveryReport {
        u: u.clone(),
        correctors: recovery.correctors,
        bound,
        slack,
        rows,
        coverage_constant,
        max_det_residual,
        max_corrector_residual,
        energy_ok,
        l1_monotone,
        det_ok,
        passed: energy_ok && l1_monotone && det_ok,
    })
}

/// Midpoint rule on an `n × n` grid; rows are summed in parallel and the
/// row sums reduced in order.
fn quadrature(spec: &EnergySpec, recovery: &Recovery, eps: f64, n: usize, bound: f64) -> RecoveryRow {
    let h = 1.0 / n as f64;
    let rows = par::map_tasks(n, |j| {
        let x1 = (j as f64 + 0.5) * h;
        let (mut energy, mut l1, mut uncovered, mut det) = (0.0, 0.0, 0.0, 0.0_f64);
        for i in 0..n {
            let x = [(i as f64 + 0.5) * h, x1];
            let s = recovery.evaluate_unchecked(eps, x);
            let y = [x[0] / eps, x[1] / eps];
            energy += spec.w_tilde_mu(spec.mu_at(y), &s.grad).value;
            let ux = recovery.pieces[recovery.piece_of(x)].apply(x);
            l1 += vnorm(sub(s.z, ux));
            if !s.masked {
                uncovered += 1.0;
            }
            det = det.max((s.grad.det() - 1.0).abs());
        }
        (energy, l1, uncovered, det)
    });
    let area = h * h;
    let mut row = RecoveryRow {
        eps,
        energy: 0.0,
        bound,
        det_residual: 0.0,
        l1_distance: 0.0,
        uncovered_fraction: 0.0,
        points_per_side: n,
    };
    for (e, l, u, d) in rows {
        row.energy += e * area;
        row.l1_distance += l * area;
        row.uncovered_fraction += u * area;
        row.det_residual = row.det_residual.max(d);
    }
    row
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::PhaseField;

    fn shear() -> Mat {
        Mat::IDENTITY + Mat::outer([1.0, 0.0], [0.0, 1.0]).scale(0.5)
    }

    #[test]
    fn two_piece_laminate_is_valid() {
        for axis in [1, 2] {
            let u = MacroDeformation::two_piece_laminate(shear(), axis, 0.5, 0.3).unwrap();
            let pieces = u.pieces();
            assert!((pieces[1].f.det() - 1.0).abs() < 1e-12);
            assert!((pieces[0].area() + pieces[1].area() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_incompatible_pieces() {
        let mut u = MacroDeformation::two_piece_laminate(shear(), 1, 0.5, 0.3).unwrap();
        if let MacroDeformation::PiecewiseAffine { pieces } = &mut u {
            pieces[1].offset[0] += 0.1;
        }
        assert!(u.validate().is_err());
        let u = MacroDeformation::affine(Mat::diag(2.0, 1.0));
        assert!(u.validate().is_err());
    }

    #[test]
    fn trivial_corrector_reproduces_u() {
        let spec = EnergySpec::neo_hookean(PhaseField::constant(1.0));
        let u = MacroDeformation::two_piece_laminate(shear(), 2, 0.25, 0.4).unwrap();
        let correctors: Vec<Corrector> = u
            .pieces()
            .iter()
            .map(|p| Corrector::trivial(&spec, p.f, 4).unwrap())
            .collect();
        let r = Recovery::new(&u, correctors).unwrap();
        for x in [[0.1, 0.1], [0.7, 0.9], [0.5, 0.25], [1.0, 1.0]] {
            let s = r.evaluate(0.125, x).unwrap();
            let p = &r.pieces()[r.piece_of(x)];
            assert!(vnorm(sub(s.z, p.apply(x))) < 1e-14);
            assert_eq!(s.grad, p.f);
        }
        assert!(r.evaluate(0.125, [1.5, 0.0]).is_err());
    }

    #[test]
    fn coarse_quadrature_is_refused() {
        let spec = EnergySpec::neo_hookean(PhaseField::constant(1.0));
        let err = limsup_experiment(
            &spec,
            &MacroDeformation::affine(Mat::IDENTITY),
            Slack::Relative(0.05),
            &[0.25, 0.125],
            Some(16),
            &RecoverySettings::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("cannot resolve"));
    }
}
