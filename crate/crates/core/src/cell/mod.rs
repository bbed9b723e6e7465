//! Discrete `k`-cell problem.
//!
//! Fluctuations are continuous piecewise-affine fields on a [`Mesh`] of the
//! cell, vanishing on its boundary. The averaged energy of `F + ∇φ` is
//! evaluated with one-point (barycentre) quadrature, which is exact for the
//! piecewise-constant gradients and samples the phase coefficient once per
//! element.

mod io;
mod mesh;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use io::{read_field_binary, read_field_csv, write_field_binary, write_field_csv};
pub use mesh::{Boundary, Element, Grid, Mesh, NodeKind, Split};

use crate::density::{EnergySpec, Eval, TruncationLevel, DEFAULT_SMOOTHING};
use crate::error::{Error, Result};
use crate::par;
use crate::tensor::{Mat, Vec2};

/// Tolerance on `det F − 1` below which `F` counts as volume preserving.
pub const SIGMA_TOLERANCE: f64 = 1e-10;

/// Nodal values of a fluctuation on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluctuationField {
    pub grid: Grid,
    pub values: Vec<Vec2>,
}

impl FluctuationField {
    pub fn zeros(grid: Grid) -> Self {
        FluctuationField {
            grid,
            values: vec![[0.0; 2]; grid.node_count()],
        }
    }

    pub fn from_values(grid: Grid, values: Vec<Vec2>) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(Error::SizeMismatch {
                expected: grid.node_count(),
                found: values.len(),
            });
        }
        Ok(FluctuationField { grid, values })
    }

    pub fn from_flat(grid: Grid, flat: &[f64]) -> Result<Self> {
        if flat.len() != 2 * grid.node_count() {
            return Err(Error::SizeMismatch {
                expected: grid.node_count(),
                found: flat.len() / 2,
            });
        }
        let values = flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
        Ok(FluctuationField { grid, values })
    }

    pub fn as_flat(&self) -> &[f64] {
        self.values.as_flattened()
    }

    /// First node violating the admissibility condition of the grid (nonzero
    /// fixed node, or a periodic image differing from its master), if any.
    pub fn boundary_violation(&self) -> Option<usize> {
        (0..self.values.len()).find(|&v| {
            let val = self.values[v];
            (self.grid.is_fixed(v) && (val[0] != 0.0 || val[1] != 0.0))
                || val != self.values[self.grid.master(v)]
        })
    }

    pub fn check_boundary(&self) -> Result<()> {
        match self.boundary_violation() {
            Some(node) => Err(Error::NonzeroBoundary { node }),
            None => Ok(()),
        }
    }

    /// Sup norm over nodes and components.
    pub fn max_abs(&self) -> f64 {
        self.as_flat().iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }

    /// Euclidean norm of the nodal vector.
    pub fn norm(&self) -> f64 {
        self.as_flat().iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Value of the interpolant at `x ∈ [0, k]²`.
    pub fn evaluate(&self, mesh: &Mesh, x: Vec2) -> Vec2 {
        let e = mesh.locate(x);
        let lambda = mesh.barycentric(e, x);
        let nodes = mesh.elements[e].nodes;
        let mut out = [0.0; 2];
        for (a, &node) in nodes.iter().enumerate() {
            out[0] += lambda[a] * self.values[node][0];
            out[1] += lambda[a] * self.values[node][1];
        }
        out
    }

    /// Interpolates onto a nested finer grid of the same cell. Exact for the
    /// uniform refinements produced by [`Grid::refined`].
    pub fn prolongate(&self, mesh: &Mesh, fine: Grid) -> Result<FluctuationField> {
        if fine.k != self.grid.k || fine.m % self.grid.m != 0 || fine.split != self.grid.split {
            return Err(Error::invalid(
                "grid",
                "prolongation needs a nested refinement of the same cell",
            ));
        }
        let mut values: Vec<Vec2> = (0..fine.node_count())
            .map(|v| self.evaluate(mesh, fine.node_position(v)))
            .collect();
        for v in 0..values.len() {
            values[v] = if fine.is_fixed(v) { [0.0, 0.0] } else { values[fine.master(v)] };
        }
        FluctuationField::from_values(fine, values)
    }
}

/// How `det(F + ∇φ) = 1` is imposed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstraintMode {
    /// Minimize the truncated density `W_n` (penalty `n|det − 1|`).
    #[default]
    Penalty,
    /// Per-element equality constraints on the untruncated extension.
    Exact,
}

/// One discretized cell minimization instance.
#[derive(Debug, Clone)]
pub struct CellProblem {
    pub spec: EnergySpec,
    pub f: Mat,
    pub n: TruncationLevel,
    pub smoothing: f64,
    pub mode: ConstraintMode,
    mesh: Arc<Mesh>,
    mu: Arc<Vec<f64>>,
}

impl CellProblem {
    pub fn new(spec: EnergySpec, f: Mat, n: TruncationLevel, grid: Grid) -> Result<Self> {
        spec.validate()?;
        if !f.is_finite() {
            return Err(Error::invalid("F", "entries must be finite"));
        }
        Ok(Self::with_mesh(spec, f, n, Arc::new(Mesh::new(grid))))
    }

    /// Builds a problem on an existing mesh (avoids rebuilding the element
    /// table across sweeps).
    pub fn with_mesh(spec: EnergySpec, f: Mat, n: TruncationLevel, mesh: Arc<Mesh>) -> Self {
        let mu = mesh
            .elements
            .iter()
            .map(|e| spec.mu_at(e.barycenter))
            .collect();
        CellProblem {
            spec,
            f,
            n,
            smoothing: DEFAULT_SMOOTHING,
            mode: ConstraintMode::Penalty,
            mesh,
            mu: Arc::new(mu),
        }
    }

    pub fn with_n(&self, n: TruncationLevel) -> Self {
        CellProblem { n, ..self.clone() }
    }

    pub fn with_smoothing(&self, smoothing: f64) -> Self {
        CellProblem {
            smoothing,
            ..self.clone()
        }
    }

    pub fn with_mode(&self, mode: ConstraintMode) -> Self {
        CellProblem { mode, ..self.clone() }
    }

    pub fn grid(&self) -> Grid {
        self.mesh.grid
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn mesh_arc(&self) -> Arc<Mesh> {
        Arc::clone(&self.mesh)
    }

    /// Coefficient on element `e`.
    pub fn mu(&self, e: usize) -> f64 {
        self.mu[e]
    }

    pub fn is_off_sigma(&self) -> bool {
        (self.f.det() - 1.0).abs() > SIGMA_TOLERANCE
    }

    pub fn zero_field(&self) -> FluctuationField {
        FluctuationField::zeros(self.grid())
    }

    fn check_field(&self, phi: &FluctuationField) -> Result<()> {
        if phi.grid != self.grid() {
            return Err(Error::invalid("phi", "field lives on a different grid"));
        }
        phi.check_boundary()
    }

    /// Total gradient `F + G_e` on element `e` for flat nodal values `x`.
    pub fn deformation(&self, x: &[f64], e: usize) -> Mat {
        self.f + self.element_gradient(x, e)
    }

    fn element_gradient(&self, x: &[f64], e: usize) -> Mat {
        let el = &self.mesh.elements[e];
        let mut g = Mat::ZERO;
        for (a, &node) in el.nodes.iter().enumerate() {
            let (u, v) = (x[2 * node], x[2 * node + 1]);
            let dn = el.shape_grad[a];
            g.0[0][0] += u * dn[0];
            g.0[0][1] += u * dn[1];
            g.0[1][0] += v * dn[0];
            g.0[1][1] += v * dn[1];
        }
        g
    }

    /// Averaged energy `(1/k²) Σ_e |e| w(e, F + G_e)` and its exact nodal
    /// gradient, boundary entries zeroed. `density` receives the element index
    /// and the total deformation gradient.
    ///
    /// Element evaluations may run in parallel; the reduction is sequential
    /// in element order, so results do not depend on the thread count.
    pub fn assemble<D>(&self, x: &[f64], grad: &mut [f64], density: D) -> f64
    where
        D: Fn(usize, &Mat) -> Eval + Sync + Send,
    {
        let evals = par::map_indexed(self.mesh.elements.len(), |e| density(e, &self.deformation(x, e)));
        self.reduce(&evals, grad)
    }

    /// Sequential twin of [`CellProblem::assemble`].
    pub fn assemble_seq<D>(&self, x: &[f64], grad: &mut [f64], density: D) -> f64
    where
        D: Fn(usize, &Mat) -> Eval,
    {
        let evals = par::map_indexed_seq(self.mesh.elements.len(), |e| density(e, &self.deformation(x, e)));
        self.reduce(&evals, grad)
    }

    fn reduce(&self, evals: &[Eval], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let inv_vol = 1.0 / self.grid().volume();
        let mut value = 0.0;
        for (el, ev) in self.mesh.elements.iter().zip(evals) {
            let w = el.area * inv_vol;
            value += w * ev.value;
            let p = &ev.grad.0;
            for (a, &node) in el.nodes.iter().enumerate() {
                let dn = el.shape_grad[a];
                grad[2 * node] += w * (p[0][0] * dn[0] + p[0][1] * dn[1]);
                grad[2 * node + 1] += w * (p[1][0] * dn[0] + p[1][1] * dn[1]);
            }
        }
        self.mesh.fold_gradient(grad);
        value
    }

    /// Penalty objective `⨏ W_n(y, F + ∇φ)` on flat nodal values.
    pub fn penalty_objective(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        self.penalty_objective_with(x, grad, self.smoothing)
    }

    pub(crate) fn penalty_objective_with(&self, x: &[f64], grad: &mut [f64], smoothing: f64) -> f64 {
        self.assemble(x, grad, |e, fe| self.spec.w_n_mu(self.mu[e], self.n, fe, smoothing))
    }

    /// Averaged `W̃` without truncation or penalty.
    pub fn tilde_objective(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        self.assemble(x, grad, |e, fe| self.spec.w_tilde_mu(self.mu[e], fe))
    }

    /// Penalty objective and gradient of a zero-boundary field.
    pub fn objective_and_gradient(&self, phi: &FluctuationField) -> Result<(f64, FluctuationField)> {
        self.check_field(phi)?;
        let mut grad = vec![0.0; phi.as_flat().len()];
        let value = self.penalty_objective(phi.as_flat(), &mut grad);
        Ok((value, FluctuationField::from_flat(self.grid(), &grad)?))
    }

    /// Reported cell value: penalty objective with the exact `|det − 1|`.
    pub fn penalty_value(&self, phi: &FluctuationField) -> Result<f64> {
        self.check_field(phi)?;
        let mut grad = vec![0.0; phi.as_flat().len()];
        Ok(self.penalty_objective_with(phi.as_flat(), &mut grad, 0.0))
    }

    /// `⨏ W̃(y, F + ∇φ)`.
    pub fn tilde_value(&self, phi: &FluctuationField) -> Result<f64> {
        self.check_field(phi)?;
        let mut grad = vec![0.0; phi.as_flat().len()];
        Ok(self.tilde_objective(phi.as_flat(), &mut grad))
    }

    /// Per-element `det(F + G_e) − 1`.
    pub fn constraint_values(&self, x: &[f64]) -> Vec<f64> {
        par::map_indexed(self.mesh.elements.len(), |e| self.deformation(x, e).det() - 1.0)
    }

    /// `max_e |det(F + G_e) − 1|`.
    pub fn constraint_residual(&self, phi: &FluctuationField) -> f64 {
        self.constraint_values(phi.as_flat())
            .into_iter()
            .fold(0.0_f64, |acc, r| acc.max(r.abs()))
    }

    /// `|⨏ det(F + ∇φ) − det F|`, zero up to rounding for any zero-boundary
    /// piecewise-affine field.
    pub fn null_lagrangian_residual(&self, phi: &FluctuationField) -> Result<f64> {
        self.check_field(phi)?;
        let x = phi.as_flat();
        let inv_vol = 1.0 / self.grid().volume();
        let mean: f64 = self
            .mesh
            .elements
            .iter()
            .enumerate()
            .map(|(e, el)| el.area * inv_vol * self.deformation(x, e).det())
            .sum();
        Ok((mean - self.f.det()).abs())
    }
}

/// Periodic `r × r` tiling of an admissible field on the `k`-cell onto the
/// `r·k`-cell with the same `m`.
pub fn tile(phi: &FluctuationField, factor: usize) -> Result<FluctuationField> {
    if factor == 0 {
        return Err(Error::invalid("factor", "tiling factor must be a positive integer"));
    }
    phi.check_boundary()?;
    let small = phi.grid;
    let big = Grid {
        k: small.k * factor,
        ..small
    };
    let side = small.side();
    let values = (0..big.node_count())
        .map(|v| {
            let src = match big.node_kind(v) {
                NodeKind::Corner { i, j } => small.corner_index(i % side, j % side),
                NodeKind::Centre { i, j } => small.centre_index(i % side, j % side),
            };
            phi.values[src]
        })
        .collect();
    FluctuationField::from_values(big, values)
}

/// Periodic `r × r` tiling of per-element data on `grid` (elements are
/// numbered square by square, row-major, with a fixed number per square).
pub fn tile_elements<T: Clone>(grid: Grid, values: &[T], factor: usize) -> Result<Vec<T>> {
    let side = grid.side();
    let squares = side * side;
    if factor == 0 || values.len() % squares != 0 || values.is_empty() {
        return Err(Error::invalid("values", "need one entry per element and a positive factor"));
    }
    let per = values.len() / squares;
    let big = side * factor;
    let mut out = Vec::with_capacity(values.len() * factor * factor);
    for j in 0..big {
        for i in 0..big {
            let base = ((j % side) * side + i % side) * per;
            out.extend_from_slice(&values[base..base + per]);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::PhaseField;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(grid: Grid, scale: f64, rng: &mut ChaCha8Rng) -> FluctuationField {
        let values = (0..grid.node_count())
            .map(|v| {
                if grid.is_fixed(v) {
                    [0.0, 0.0]
                } else {
                    [rng.gen_range(-scale..scale), rng.gen_range(-scale..scale)]
                }
            })
            .collect();
        FluctuationField::from_values(grid, values).unwrap()
    }

    fn laminate_problem(grid: Grid) -> CellProblem {
        let spec = EnergySpec::neo_hookean(PhaseField::laminate(1, 0.5, 1.0, 10.0));
        let f = Mat::IDENTITY + Mat::outer([1.0, 0.0], [0.0, 1.0]).scale(0.5);
        CellProblem::new(spec, f, TruncationLevel::new(64.0).unwrap(), grid).unwrap()
    }

    #[test]
    fn zero_field_value_is_energy_average() {
        let spec = EnergySpec::neo_hookean(PhaseField::constant(1.0));
        let f = Mat::diag(2.0, 0.5);
        let n = TruncationLevel::new(64.0).unwrap();
        let problem = CellProblem::new(spec, f, n, Grid::new(2, 4).unwrap()).unwrap();
        let (value, grad) = problem.objective_and_gradient(&problem.zero_field()).unwrap();
        assert!((value - 1.125).abs() < 1e-14);
        assert!(grad.max_abs() < 1e-12);

        let lam = laminate_problem(Grid::new(1, 8).unwrap());
        let (_, grad) = lam.objective_and_gradient(&lam.zero_field()).unwrap();
        assert!(grad.max_abs() > 1e-3);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for split in [Split::Diagonal, Split::Crossed] {
            let problem = laminate_problem(Grid::with_split(1, 6, split).unwrap()).with_smoothing(1e-2);
            let phi = random_field(problem.grid(), 0.05, &mut rng);
            let (_, grad) = problem.objective_and_gradient(&phi).unwrap();
            let interior: Vec<usize> = (0..problem.grid().node_count())
                .filter(|&v| !problem.grid().is_boundary(v))
                .collect();
            for _ in 0..10 {
                let node = interior[rng.gen_range(0..interior.len())];
                let comp = rng.gen_range(0..2);
                let h = 1e-6;
                let mut plus = phi.clone();
                let mut minus = phi.clone();
                plus.values[node][comp] += h;
                minus.values[node][comp] -= h;
                let fd = (problem.objective_and_gradient(&plus).unwrap().0
                    - problem.objective_and_gradient(&minus).unwrap().0)
                    / (2.0 * h);
                let exact = grad.values[node][comp];
                assert!((fd - exact).abs() <= 1e-5 * exact.abs().max(1e-3), "{fd} vs {exact}");
            }
        }
    }

    #[test]
    fn rejects_nonzero_boundary() {
        let problem = laminate_problem(Grid::new(1, 4).unwrap());
        let mut phi = problem.zero_field();
        phi.values[0] = [1e-3, 0.0];
        assert!(matches!(
            problem.objective_and_gradient(&phi),
            Err(Error::NonzeroBoundary { node: 0 })
        ));
        assert!(problem.null_lagrangian_residual(&phi).is_err());
    }

    #[test]
    fn null_lagrangian_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for split in [Split::Diagonal, Split::Crossed] {
            let spec = EnergySpec::neo_hookean(PhaseField::constant(1.0));
            let problem = CellProblem::new(
                spec,
                Mat::diag(2.0, 0.5),
                TruncationLevel::new(1.0).unwrap(),
                Grid::with_split(1, 16, split).unwrap(),
            )
            .unwrap();
            assert_eq!(problem.null_lagrangian_residual(&problem.zero_field()).unwrap(), 0.0);
            for _ in 0..20 {
                let phi = random_field(problem.grid(), 0.2, &mut rng);
                assert!(problem.null_lagrangian_residual(&phi).unwrap() <= 1e-10);
            }
        }
    }

    #[test]
    fn tiling_preserves_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for split in [Split::Diagonal, Split::Crossed] {
            let problem = laminate_problem(Grid::with_split(1, 8, split).unwrap());
            assert_eq!(tile(&problem.zero_field(), 2).unwrap().max_abs(), 0.0);
            let phi = random_field(problem.grid(), 0.1, &mut rng);
            let base = problem.objective_and_gradient(&phi).unwrap().0;
            for r in [2, 3] {
                let tiled = tile(&phi, r).unwrap();
                assert!(tiled.boundary_violation().is_none());
                let big = CellProblem::new(problem.spec, problem.f, problem.n, tiled.grid).unwrap();
                let value = big.objective_and_gradient(&tiled).unwrap().0;
                assert!((value - base).abs() <= 1e-12 * base.abs());
            }
        }
        let phi = FluctuationField::zeros(Grid::new(1, 4).unwrap());
        assert!(tile(&phi, 0).is_err());
    }

    #[test]
    fn element_tiling_matches_field_tiling() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for split in [Split::Diagonal, Split::Crossed] {
            let problem = laminate_problem(Grid::with_split(1, 4, split).unwrap());
            let phi = random_field(problem.grid(), 0.1, &mut rng);
            let c = problem.constraint_values(phi.as_flat());
            let tiled = tile(&phi, 3).unwrap();
            let big = CellProblem::new(problem.spec, problem.f, problem.n, tiled.grid).unwrap();
            let expected = tile_elements(problem.grid(), &c, 3).unwrap();
            let found = big.constraint_values(tiled.as_flat());
            assert_eq!(expected.len(), found.len());
            for (a, b) in expected.iter().zip(&found) {
                assert!((a - b).abs() <= 1e-13);
            }
        }
        assert!(tile_elements(Grid::new(1, 2).unwrap(), &[0.0; 5], 2).is_err());
    }

    #[test]
    fn periodic_fields_fold_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let grid = Grid::with_split(1, 4, Split::Crossed).unwrap().with_boundary(Boundary::Periodic);
        let problem = laminate_problem(grid);
        let mut phi = random_field(grid, 0.1, &mut rng);
        for v in 0..phi.values.len() {
            phi.values[v] = if grid.is_fixed(v) { [0.0; 2] } else { phi.values[grid.master(v)] };
        }
        assert!(phi.boundary_violation().is_none());
        let (value, grad) = problem.objective_and_gradient(&phi).unwrap();
        assert!(grad.boundary_violation().is_none());
        // Directional derivative along a periodic direction.
        let mut dir = random_field(grid, 1.0, &mut rng);
        for v in 0..dir.values.len() {
            dir.values[v] = if grid.is_fixed(v) { [0.0; 2] } else { dir.values[grid.master(v)] };
        }
        let t = 1e-6;
        let shifted = |s: f64| {
            let values = phi.values.iter().zip(&dir.values).map(|(a, d)| [a[0] + s * d[0], a[1] + s * d[1]]).collect();
            FluctuationField::from_values(grid, values).unwrap()
        };
        let fd = (problem.objective_and_gradient(&shifted(t)).unwrap().0
            - problem.objective_and_gradient(&shifted(-t)).unwrap().0)
            / (2.0 * t);
        let analytic: f64 = grad.as_flat().iter().zip(dir.as_flat()).map(|(a, b)| a * b).sum();
        assert!((fd - analytic).abs() <= 1e-6 * (1.0 + analytic.abs()), "{fd} {analytic} {value}");
        let mut bad = phi.clone();
        bad.values[grid.corner_index(4, 1)][0] += 1.0;
        assert!(bad.boundary_violation().is_some());
    }

    #[test]
    fn prolongation_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for split in [Split::Diagonal, Split::Crossed] {
            let problem = laminate_problem(Grid::with_split(1, 4, split).unwrap());
            let phi = random_field(problem.grid(), 0.1, &mut rng);
            let fine = phi.prolongate(problem.mesh(), problem.grid().refined(2)).unwrap();
            let fine_problem = CellProblem::new(problem.spec, problem.f, problem.n, fine.grid).unwrap();
            let a = problem.objective_and_gradient(&phi).unwrap().0;
            let b = fine_problem.objective_and_gradient(&fine).unwrap().0;
            assert!((a - b).abs() <= 1e-12 * a.abs());
        }
    }

    #[test]
    fn parallel_and_sequential_assembly_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let problem = laminate_problem(Grid::new(2, 16).unwrap());
        let phi = random_field(problem.grid(), 0.05, &mut rng);
        let x = phi.as_flat();
        let mut g1 = vec![0.0; x.len()];
        let mut g2 = vec![0.0; x.len()];
        let density = |e: usize, fe: &Mat| problem.spec.w_n_mu(problem.mu(e), problem.n, fe, 1e-8);
        let a = problem.assemble(x, &mut g1, density);
        let b = problem.assemble_seq(x, &mut g2, density);
        assert_eq!(a.to_bits(), b.to_bits());
        assert_eq!(g1, g2);
    }
}
