use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Mat, Vec2};

/// How each mesh square is cut into triangles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    /// Two triangles per square, cut along the main diagonal.
    Diagonal,
    /// Four triangles per square meeting at an added centre node.
    #[default]
    Crossed,
}

/// Admissibility condition on cell fluctuations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Boundary {
    /// Zero on the cell boundary.
    #[default]
    Dirichlet,
    /// Periodic across opposite edges, pinned to zero at the corners.
    /// Experimental: not a competitor class of the multi-cell formula.
    Periodic,
}

/// Uniform simplicial mesh of the `k`-cell with `m` squares per unit length.
///
/// The cell occupies `[0, k]²`, so its corners sit on the integer lattice and
/// the sub-cells of a tiled `r·k` grid are integer translates of it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Grid {
    pub k: usize,
    pub m: usize,
    #[serde(default)]
    pub split: Split,
    #[serde(default)]
    pub boundary: Boundary,
}

impl Grid {
    pub fn new(k: usize, m: usize) -> Result<Self> {
        Self::with_split(k, m, Split::default())
    }

    pub fn with_split(k: usize, m: usize, split: Split) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("k", "cell multiplier must be positive"));
        }
        if m == 0 {
            return Err(Error::invalid("m", "subdivisions must be positive"));
        }
        Ok(Grid {
            k,
            m,
            split,
            boundary: Boundary::Dirichlet,
        })
    }

    /// Squares per cell edge.
    pub fn side(&self) -> usize {
        self.k * self.m
    }

    pub fn h(&self) -> f64 {
        1.0 / self.m as f64
    }

    pub fn corner_count(&self) -> usize {
        (self.side() + 1) * (self.side() + 1)
    }

    pub fn node_count(&self) -> usize {
        match self.split {
            Split::Diagonal => self.corner_count(),
            Split::Crossed => self.corner_count() + self.side() * self.side(),
        }
    }

    pub fn element_count(&self) -> usize {
        let squares = self.side() * self.side();
        match self.split {
            Split::Diagonal => 2 * squares,
            Split::Crossed => 4 * squares,
        }
    }

    /// Cell area `k²`.
    pub fn volume(&self) -> f64 {
        (self.k * self.k) as f64
    }

    pub fn corner_index(&self, i: usize, j: usize) -> usize {
        j * (self.side() + 1) + i
    }

    pub fn centre_index(&self, i: usize, j: usize) -> usize {
        self.corner_count() + j * self.side() + i
    }

    /// Lattice description of node `node`.
    pub fn node_kind(&self, node: usize) -> NodeKind {
        let n = self.side();
        if node < self.corner_count() {
            NodeKind::Corner {
                i: node % (n + 1),
                j: node / (n + 1),
            }
        } else {
            let c = node - self.corner_count();
            NodeKind::Centre { i: c % n, j: c / n }
        }
    }

    pub fn node_position(&self, node: usize) -> Vec2 {
        let h = self.h();
        match self.node_kind(node) {
            NodeKind::Corner { i, j } => [i as f64 * h, j as f64 * h],
            NodeKind::Centre { i, j } => [(i as f64 + 0.5) * h, (j as f64 + 0.5) * h],
        }
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        match self.node_kind(node) {
            NodeKind::Corner { i, j } => {
                let n = self.side();
                i == 0 || j == 0 || i == n || j == n
            }
            NodeKind::Centre { .. } => false,
        }
    }

    pub fn with_boundary(self, boundary: Boundary) -> Grid {
        Grid { boundary, ..self }
    }

    /// Node whose value node `node` carries: itself, or its periodic image on
    /// the left/bottom edges.
    pub fn master(&self, node: usize) -> usize {
        match (self.boundary, self.node_kind(node)) {
            (Boundary::Periodic, NodeKind::Corner { i, j }) => {
                let n = self.side();
                self.corner_index(i % n, j % n)
            }
            _ => node,
        }
    }

    /// Nodes held at zero: the boundary (Dirichlet) or the cell corners
    /// (periodic).
    pub fn is_fixed(&self, node: usize) -> bool {
        match (self.boundary, self.node_kind(node)) {
            (Boundary::Dirichlet, _) => self.is_boundary(node),
            (Boundary::Periodic, NodeKind::Corner { i, j }) => {
                let n = self.side();
                i % n == 0 && j % n == 0
            }
            (Boundary::Periodic, NodeKind::Centre { .. }) => false,
        }
    }

    /// The same cell refined by `factor` in `m`.
    pub fn refined(&self, factor: usize) -> Grid {
        Grid {
            m: self.m * factor,
            ..*self
        }
    }

    /// Whether laminate or checkerboard interfaces at `fraction` fall on
    /// mesh lines.
    pub fn aligns_with(&self, fraction: f64) -> bool {
        let s = fraction * self.m as f64;
        (s - s.round()).abs() < 1e-9
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Corner { i: usize, j: usize },
    Centre { i: usize, j: usize },
}

/// A linear triangle with its constant shape-function gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Element {
    pub nodes: [usize; 3],
    pub area: f64,
    pub shape_grad: [Vec2; 3],
    pub barycenter: Vec2,
}

impl Element {
    fn from_points(nodes: [usize; 3], p: [Vec2; 3]) -> Self {
        let twice_area = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1])
            - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
        let mut shape_grad = [[0.0; 2]; 3];
        for (a, g) in shape_grad.iter_mut().enumerate() {
            let b = p[(a + 1) % 3];
            let c = p[(a + 2) % 3];
            *g = [(b[1] - c[1]) / twice_area, (c[0] - b[0]) / twice_area];
        }
        Element {
            nodes,
            area: 0.5 * twice_area,
            shape_grad,
            barycenter: [
                (p[0][0] + p[1][0] + p[2][0]) / 3.0,
                (p[0][1] + p[1][1] + p[2][1]) / 3.0,
            ],
        }
    }

    /// Constant gradient `Σ_a φ_a ⊗ ∇N_a` of a nodal field on this element.
    pub fn gradient(&self, values: &[Vec2]) -> Mat {
        let mut g = Mat::ZERO;
        for (a, &node) in self.nodes.iter().enumerate() {
            let v = values[node];
            let dn = self.shape_grad[a];
            g.0[0][0] += v[0] * dn[0];
            g.0[0][1] += v[0] * dn[1];
            g.0[1][0] += v[1] * dn[0];
            g.0[1][1] += v[1] * dn[1];
        }
        g
    }
}

/// Grid plus its element table.
#[derive(Debug, Clone)]
pub struct Mesh {
    pub grid: Grid,
    pub elements: Vec<Element>,
    fixed: Vec<bool>,
    master: Vec<usize>,
    multiplicity: Vec<f64>,
}

impl Mesh {
    pub fn new(grid: Grid) -> Self {
        let n = grid.side();
        let pos = |node| grid.node_position(node);
        let mut elements = Vec::with_capacity(grid.element_count());
        for j in 0..n {
            for i in 0..n {
                let c00 = grid.corner_index(i, j);
                let c10 = grid.corner_index(i + 1, j);
                let c11 = grid.corner_index(i + 1, j + 1);
                let c01 = grid.corner_index(i, j + 1);
                let tris: Vec<[usize; 3]> = match grid.split {
                    Split::Diagonal => vec![[c00, c10, c11], [c00, c11, c01]],
                    Split::Crossed => {
                        let z = grid.centre_index(i, j);
                        vec![[c00, c10, z], [c10, c11, z], [c11, c01, z], [c01, c00, z]]
                    }
                };
                for t in tris {
                    elements.push(Element::from_points(t, [pos(t[0]), pos(t[1]), pos(t[2])]));
                }
            }
        }
        let count = grid.node_count();
        let fixed = (0..count).map(|v| grid.is_fixed(v)).collect();
        let master: Vec<usize> = (0..count).map(|v| grid.master(v)).collect();
        let mut multiplicity = vec![0.0; count];
        for &m in &master {
            multiplicity[m] += 1.0;
        }
        Mesh {
            grid,
            elements,
            fixed,
            master,
            multiplicity,
        }
    }

    pub fn node_count(&self) -> usize {
        self.fixed.len()
    }

    /// Whether node `node` is held at zero.
    pub fn is_fixed(&self, node: usize) -> bool {
        self.fixed[node]
    }

    pub fn fixed_mask(&self) -> &[bool] {
        &self.fixed
    }

    pub fn is_periodic(&self) -> bool {
        self.grid.boundary == Boundary::Periodic
    }

    pub fn master(&self, node: usize) -> usize {
        self.master[node]
    }

    /// Folds a raw nodal gradient onto the admissible space: zero on fixed
    /// nodes, and for periodic grids every copy of a node carries the summed
    /// derivative divided by the number of copies (so `⟨g, d⟩` is the exact
    /// directional derivative along periodic directions `d`).
    pub fn fold_gradient(&self, grad: &mut [f64]) {
        if self.is_periodic() {
            for v in 0..self.node_count() {
                let m = self.master[v];
                if m != v {
                    grad[2 * m] += grad[2 * v];
                    grad[2 * m + 1] += grad[2 * v + 1];
                }
            }
            for v in 0..self.node_count() {
                let m = self.master[v];
                let share = 1.0 / self.multiplicity[m];
                if m == v {
                    grad[2 * v] *= share;
                    grad[2 * v + 1] *= share;
                }
            }
            for v in 0..self.node_count() {
                let m = self.master[v];
                if m != v {
                    grad[2 * v] = grad[2 * m];
                    grad[2 * v + 1] = grad[2 * m + 1];
                }
            }
        }
        for (v, &fixed) in self.fixed.iter().enumerate() {
            if fixed {
                grad[2 * v] = 0.0;
                grad[2 * v + 1] = 0.0;
            }
        }
    }

    /// Element containing `x ∈ [0, k]²` (points on shared edges resolve to
    /// one of the neighbours).
    pub fn locate(&self, x: Vec2) -> usize {
        let n = self.grid.side();
        let scaled = [x[0] * self.grid.m as f64, x[1] * self.grid.m as f64];
        let i = (scaled[0].floor().max(0.0) as usize).min(n - 1);
        let j = (scaled[1].floor().max(0.0) as usize).min(n - 1);
        let u = scaled[0] - i as f64;
        let v = scaled[1] - j as f64;
        let square = j * n + i;
        match self.grid.split {
            Split::Diagonal => 2 * square + usize::from(v > u),
            Split::Crossed => {
                let below_main = v <= u;
                let below_anti = v <= 1.0 - u;
                let local = match (below_main, below_anti) {
                    (true, true) => 0,
                    (true, false) => 1,
                    (false, false) => 2,
                    (false, true) => 3,
                };
                4 * square + local
            }
        }
    }

    /// Barycentric coordinates of `x` in element `e`.
    pub fn barycentric(&self, e: usize, x: Vec2) -> [f64; 3] {
        let el = &self.elements[e];
        let mut lambda = [0.0; 3];
        for (a, l) in lambda.iter_mut().enumerate() {
            let g = el.shape_grad[a];
            *l = 1.0 / 3.0 + g[0] * (x[0] - el.barycenter[0]) + g[1] * (x[1] - el.barycenter[1]);
        }
        lambda
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_areas() {
        for split in [Split::Diagonal, Split::Crossed] {
            for (k, m) in [(1, 4), (2, 3), (3, 8)] {
                let grid = Grid::with_split(k, m, split).unwrap();
                let mesh = Mesh::new(grid);
                assert_eq!(mesh.elements.len(), grid.element_count());
                let total: f64 = mesh.elements.iter().map(|e| e.area).sum();
                assert!((total - grid.volume()).abs() <= 1e-12 * grid.volume());
                assert!(mesh.elements.iter().all(|e| e.area > 0.0));
            }
        }
        let g = Grid::with_split(2, 4, Split::Diagonal).unwrap();
        assert_eq!(g.node_count(), 81);
        assert_eq!(g.element_count(), 128);
        assert!(Grid::new(0, 4).is_err());
        assert!(Grid::new(1, 0).is_err());
    }

    #[test]
    fn shape_gradients_reproduce_affine_fields() {
        for split in [Split::Diagonal, Split::Crossed] {
            let grid = Grid::with_split(1, 3, split).unwrap();
            let mesh = Mesh::new(grid);
            let a = Mat::new(0.3, -1.1, 2.0, 0.7);
            let values: Vec<Vec2> = (0..grid.node_count())
                .map(|v| a.apply(grid.node_position(v)))
                .collect();
            for e in &mesh.elements {
                assert!((e.gradient(&values) - a).max_abs() < 1e-13);
            }
        }
    }

    #[test]
    fn locate_finds_containing_element() {
        for split in [Split::Diagonal, Split::Crossed] {
            let mesh = Mesh::new(Grid::with_split(2, 5, split).unwrap());
            for t in 0..200 {
                let x = [
                    (t as f64 * 0.618_033_988_7).fract() * 2.0,
                    (t as f64 * 0.414_213_562_3).fract() * 2.0,
                ];
                let e = mesh.locate(x);
                let l = mesh.barycentric(e, x);
                assert!(l.iter().all(|&v| v >= -1e-12), "{x:?} {l:?}");
            }
        }
    }

    #[test]
    fn periodic_identification() {
        let grid = Grid::with_split(1, 3, Split::Diagonal).unwrap().with_boundary(Boundary::Periodic);
        assert_eq!(grid.master(grid.corner_index(3, 1)), grid.corner_index(0, 1));
        assert_eq!(grid.master(grid.corner_index(3, 3)), grid.corner_index(0, 0));
        assert!(grid.is_fixed(grid.corner_index(3, 0)));
        assert!(!grid.is_fixed(grid.corner_index(0, 1)));
        let mesh = Mesh::new(grid);
        let mut g = vec![1.0; 2 * grid.node_count()];
        mesh.fold_gradient(&mut g);
        // Edge node (0, 1) and its image (3, 1) each carry (1 + 1) / 2.
        assert_eq!(g[2 * grid.corner_index(0, 1)], 1.0);
        assert_eq!(g[2 * grid.corner_index(3, 1)], 1.0);
        assert_eq!(g[2 * grid.corner_index(0, 0)], 0.0);
    }

    #[test]
    fn boundary_nodes() {
        let grid = Grid::with_split(1, 2, Split::Crossed).unwrap();
        let boundary: Vec<usize> = (0..grid.node_count()).filter(|&v| grid.is_boundary(v)).collect();
        assert_eq!(boundary.len(), 8);
        assert!(!grid.is_boundary(grid.corner_index(1, 1)));
    }
}
