//! P1 simplicial discretization of the cube `(0, k)ⁿ` (Kuhn triangulation)
//! and assembly of the averaged cell energy and its nodal gradient.

use alloc::vec;
use alloc::vec::Vec;

use crate::density::{fd_gradient, Density};
use crate::mat::{Mat, MAX_DIM};
use crate::sum::pairwise;
use crate::{Error, Result};

/// Default cap on the number of grid nodes.
pub const DEFAULT_MAX_NODES: usize = 4_000_000;

/// Vertex offsets and barycentric gradients shared by every simplex of one
/// Kuhn permutation.
#[derive(Debug, Clone)]
struct Reference {
    /// Lattice offsets of the `n + 1` vertices relative to the cell corner.
    offsets: [[usize; MAX_DIM]; MAX_DIM + 1],
    /// `∇λ_j` for each vertex `j`.
    grads: [[f64; MAX_DIM]; MAX_DIM + 1],
    /// Barycenter offset in units of `h`.
    bary: [f64; MAX_DIM],
}

#[derive(Debug, Clone)]
pub struct Grid {
    n: usize,
    k: usize,
    res: usize,
    /// Nodes per axis, `k·res + 1`.
    side: usize,
    h: f64,
    refs: Vec<Reference>,
    /// Vertex node ids of every element.
    elements: Vec<[usize; MAX_DIM + 1]>,
    /// Index into `refs` for every element.
    kinds: Vec<u8>,
    corners: Vec<[usize; MAX_DIM]>,
    volume: f64,
    mask: Vec<bool>,
}

fn permutations(n: usize) -> Vec<[usize; MAX_DIM]> {
    let mut out = Vec::new();
    let mut perm = [0usize, 1, 2];
    fn rec(i: usize, n: usize, perm: &mut [usize; MAX_DIM], out: &mut Vec<[usize; MAX_DIM]>) {
        if i == n {
            out.push(*perm);
            return;
        }
        for j in i..n {
            perm.swap(i, j);
            rec(i + 1, n, perm, out);
            perm.swap(i, j);
        }
    }
    rec(0, n, &mut perm, &mut out);
    out.sort();
    out
}

fn reference(n: usize, perm: &[usize; MAX_DIM], h: f64) -> Reference {
    let mut offsets = [[0usize; MAX_DIM]; MAX_DIM + 1];
    for j in 1..=n {
        offsets[j] = offsets[j - 1];
        offsets[j][perm[j - 1]] += 1;
    }
    // Edge matrix E with columns p_j − p_0; ∇λ_j (j ≥ 1) are the rows of E⁻¹.
    let mut e = Mat::zeros(n);
    for j in 1..=n {
        for a in 0..n {
            e[(a, j - 1)] = offsets[j][a] as f64 * h;
        }
    }
    let inv = invert(&e);
    let mut grads = [[0.0; MAX_DIM]; MAX_DIM + 1];
    for j in 1..=n {
        for b in 0..n {
            grads[j][b] = inv[(j - 1, b)];
            grads[0][b] -= inv[(j - 1, b)];
        }
    }
    let mut bary = [0.0; MAX_DIM];
    for off in offsets.iter().take(n + 1) {
        for a in 0..n {
            bary[a] += off[a] as f64 / (n + 1) as f64;
        }
    }
    Reference { offsets, grads, bary }
}

fn invert(m: &Mat) -> Mat {
    let n = m.dim();
    let det = m.det();
    let mut inv = Mat::zeros(n);
    match n {
        1 => inv[(0, 0)] = 1.0 / det,
        2 => {
            inv[(0, 0)] = m[(1, 1)] / det;
            inv[(0, 1)] = -m[(0, 1)] / det;
            inv[(1, 0)] = -m[(1, 0)] / det;
            inv[(1, 1)] = m[(0, 0)] / det;
        }
        _ => {
            for i in 0..3 {
                for j in 0..3 {
                    let (r0, r1) = ((j + 1) % 3, (j + 2) % 3);
                    let (c0, c1) = ((i + 1) % 3, (i + 2) % 3);
                    inv[(i, j)] = (m[(r0, c0)] * m[(r1, c1)] - m[(r0, c1)] * m[(r1, c0)]) / det;
                }
            }
        }
    }
    inv
}

impl Grid {
    /// Builds the Kuhn triangulation of `(0, k)ⁿ` with `res` subdivisions per
    /// unit length and zero-Dirichlet mask on the boundary.
    pub fn new(n: usize, k: usize, res: usize) -> Result<Self> {
        Self::with_cap(n, k, res, DEFAULT_MAX_NODES)
    }

    pub fn with_cap(n: usize, k: usize, res: usize, max_nodes: usize) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&n) {
            return Err(Error::invalid(alloc::format!("grid dimension {n} not in 1..=3")));
        }
        if k < 1 {
            return Err(Error::invalid("cube side k must be at least 1"));
        }
        if res < 2 {
            return Err(Error::invalid("res must be at least 2"));
        }
        let cells = k.checked_mul(res).ok_or(Error::GridTooLarge {
            nodes: usize::MAX,
            cap: max_nodes,
        })?;
        let side = cells + 1;
        let nodes = side.checked_pow(n as u32).unwrap_or(usize::MAX);
        if nodes > max_nodes {
            return Err(Error::GridTooLarge { nodes, cap: max_nodes });
        }
        let h = 1.0 / res as f64;
        let refs: Vec<Reference> = permutations(n).iter().map(|p| reference(n, p, h)).collect();
        let n_cells = cells.pow(n as u32);
        let mut elements = Vec::with_capacity(n_cells * refs.len());
        let mut kinds = Vec::with_capacity(n_cells * refs.len());
        let mut corners = Vec::with_capacity(n_cells * refs.len());
        let stride = |c: &[usize; MAX_DIM]| -> usize {
            let mut id = 0;
            for a in (0..n).rev() {
                id = id * side + c[a];
            }
            id
        };
        for cell in 0..n_cells {
            let mut corner = [0usize; MAX_DIM];
            let mut rem = cell;
            for c in corner.iter_mut().take(n) {
                *c = rem % cells;
                rem /= cells;
            }
            for (ri, r) in refs.iter().enumerate() {
                let mut verts = [0usize; MAX_DIM + 1];
                for (j, v) in verts.iter_mut().enumerate().take(n + 1) {
                    let mut c = corner;
                    for a in 0..n {
                        c[a] += r.offsets[j][a];
                    }
                    *v = stride(&c);
                }
                elements.push(verts);
                kinds.push(ri as u8);
                corners.push(corner);
            }
        }
        let mut mask = vec![false; nodes];
        for (id, m) in mask.iter_mut().enumerate() {
            let mut rem = id;
            for _ in 0..n {
                let c = rem % side;
                rem /= side;
                if c == 0 || c == cells {
                    *m = true;
                }
            }
        }
        let fact: f64 = (1..=n).map(|i| i as f64).product();
        Ok(Grid {
            n,
            k,
            res,
            side,
            h,
            refs,
            elements,
            kinds,
            corners,
            volume: libm::pow(h, n as f64) / fact,
            mask,
        })
    }

    /// The same triangulation with no Dirichlet constraint.
    pub fn unconstrained(&self) -> Self {
        let mut g = self.clone();
        g.mask.iter_mut().for_each(|m| *m = false);
        g
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn side_length(&self) -> usize {
        self.k
    }

    pub fn res(&self) -> usize {
        self.res
    }

    /// Mesh size `1/res`.
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn num_nodes(&self) -> usize {
        self.mask.len()
    }

    pub fn num_elements(&self) -> usize {
        self.elements.len()
    }

    /// Length of a nodal vector field (`n` components per node).
    pub fn num_dofs(&self) -> usize {
        self.mask.len() * self.n
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn masked_count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    /// Volume of every simplex, `hⁿ/n!`.
    pub fn element_volume(&self) -> f64 {
        self.volume
    }

    /// `|(0, k)ⁿ|`.
    pub fn domain_volume(&self) -> f64 {
        libm::pow(self.k as f64, self.n as f64)
    }

    pub fn element_vertices(&self, e: usize) -> &[usize] {
        &self.elements[e][..=self.n]
    }

    /// Gradients of the barycentric coordinates of element `e`'s vertices.
    pub fn shape_gradients(&self, e: usize) -> &[[f64; MAX_DIM]] {
        &self.refs[self.kinds[e] as usize].grads[..=self.n]
    }

    pub fn node_coords(&self, id: usize) -> [f64; MAX_DIM] {
        let mut c = [0.0; MAX_DIM];
        let mut rem = id;
        for x in c.iter_mut().take(self.n) {
            *x = (rem % self.side) as f64 * self.h;
            rem /= self.side;
        }
        c
    }

    pub fn barycenter(&self, e: usize) -> [f64; MAX_DIM] {
        let r = &self.refs[self.kinds[e] as usize];
        let mut c = [0.0; MAX_DIM];
        for a in 0..self.n {
            c[a] = (self.corners[e][a] as f64 + r.bary[a]) * self.h;
        }
        c
    }

    /// Zero field on this grid.
    pub fn zero_field(&self) -> Field {
        Field {
            n: self.n,
            k: self.k,
            res: self.res,
            values: vec![0.0; self.num_dofs()],
        }
    }

    /// Nodal interpolant of `x ↦ A x`, with masked nodes set to zero when
    /// `respect_mask`.
    pub fn affine_field(&self, a: &Mat, respect_mask: bool) -> Field {
        let mut f = self.zero_field();
        for id in 0..self.num_nodes() {
            if respect_mask && self.mask[id] {
                continue;
            }
            let x = self.node_coords(id);
            for i in 0..self.n {
                f.values[id * self.n + i] = (0..self.n).map(|j| a[(i, j)] * x[j]).sum();
            }
        }
        f
    }

    /// Wraps raw node-major values, enforcing the length and zeroing masked
    /// entries.
    pub fn field_from_values(&self, mut values: Vec<f64>) -> Result<Field> {
        if values.len() != self.num_dofs() {
            return Err(Error::DimensionMismatch {
                expected: self.num_dofs(),
                found: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("field"));
        }
        self.apply_mask(&mut values);
        Ok(Field {
            n: self.n,
            k: self.k,
            res: self.res,
            values,
        })
    }

    /// Zeros the masked entries of a node-major vector.
    pub fn apply_mask(&self, values: &mut [f64]) {
        for (id, m) in self.mask.iter().enumerate() {
            if *m {
                values[id * self.n..(id + 1) * self.n].fill(0.0);
            }
        }
    }

    /// Constant gradient of the P1 interpolant of `values` on element `e`.
    pub fn element_gradient(&self, values: &[f64], e: usize) -> Mat {
        let n = self.n;
        let grads = self.shape_gradients(e);
        let mut g = Mat::zeros(n);
        for (j, &v) in self.element_vertices(e).iter().enumerate() {
            let u = &values[v * n..(v + 1) * n];
            for a in 0..n {
                for b in 0..n {
                    g[(a, b)] += u[a] * grads[j][b];
                }
            }
        }
        g
    }

    fn check_args<D: Density + ?Sized>(&self, d: &D, x: &Mat, values: &[f64]) -> Result<()> {
        if d.dim() != self.n || x.dim() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                found: if d.dim() != self.n { d.dim() } else { x.dim() },
            });
        }
        if values.len() != self.num_dofs() {
            return Err(Error::DimensionMismatch {
                expected: self.num_dofs(),
                found: values.len(),
            });
        }
        if !x.is_finite() {
            return Err(Error::NonFinite("macroscopic gradient"));
        }
        Ok(())
    }

    #[inline]
    fn local_gradient(&self, x: &Mat, values: &[f64], e: usize, symmetrized: bool) -> Mat {
        let g = *x + self.element_gradient(values, e);
        if symmetrized {
            g.sym()
        } else {
            g
        }
    }

    /// Average cell energy `k⁻ⁿ Σ_T |T| f(b_T, G_T)` with
    /// `G_T = X + ∇φ|_T` (symmetrized when requested) and `b_T` the barycenter.
    pub fn assemble_energy<D: Density + ?Sized>(
        &self,
        d: &D,
        x: &Mat,
        field: &[f64],
        symmetrized: bool,
    ) -> Result<f64> {
        self.check_args(d, x, field)?;
        let e = self.energy_unchecked(d, x, field, symmetrized);
        if e.is_finite() {
            Ok(e)
        } else {
            Err(Error::NonFinite("cell energy"))
        }
    }

    pub(crate) fn energy_unchecked<D: Density + ?Sized>(
        &self,
        d: &D,
        x: &Mat,
        field: &[f64],
        symmetrized: bool,
    ) -> f64 {
        let n = self.n;
        let w = self.volume / self.domain_volume();
        let term = |e: usize| {
            let g = self.local_gradient(x, field, e, symmetrized);
            let b = self.barycenter(e);
            w * d.value(&b[..n], &g)
        };
        pairwise(0, self.elements.len(), &term)
    }

    /// Gradient of [`Grid::assemble_energy`] with respect to the nodal
    /// values; masked entries are zero.
    pub fn assemble_gradient<D: Density + ?Sized>(
        &self,
        d: &D,
        x: &Mat,
        field: &[f64],
        symmetrized: bool,
    ) -> Result<Vec<f64>> {
        self.check_args(d, x, field)?;
        let mut out = vec![0.0; field.len()];
        self.energy_and_gradient_unchecked(d, x, field, symmetrized, &mut out);
        if out.iter().all(|v| v.is_finite()) {
            Ok(out)
        } else {
            Err(Error::NonFinite("cell energy gradient"))
        }
    }

    /// Energy and gradient in one sweep; `out` is overwritten.
    pub(crate) fn energy_and_gradient_unchecked<D: Density + ?Sized>(
        &self,
        d: &D,
        x: &Mat,
        field: &[f64],
        symmetrized: bool,
        out: &mut [f64],
    ) -> f64 {
        let mut terms = vec![0.0; self.elements.len()];
        self.energy_gradient_terms(d, x, field, symmetrized, out, &mut terms)
    }

    /// As [`Grid::energy_and_gradient_unchecked`], also writing the weighted
    /// per-element energies into `terms` (one per element).
    pub(crate) fn energy_gradient_terms<D: Density + ?Sized>(
        &self,
        d: &D,
        x: &Mat,
        field: &[f64],
        symmetrized: bool,
        out: &mut [f64],
        terms: &mut [f64],
    ) -> f64 {
        let n = self.n;
        out.fill(0.0);
        let w = self.volume / self.domain_volume();
        for e in 0..self.elements.len() {
            let g = self.local_gradient(x, field, e, symmetrized);
            let b = self.barycenter(e);
            let xs = &b[..n];
            terms[e] = w * d.value(xs, &g);
            let mut dg = d.gradient(xs, &g).unwrap_or_else(|| fd_gradient(d, xs, &g));
            if symmetrized {
                dg = dg.sym();
            }
            let grads = self.shape_gradients(e);
            for (j, &v) in self.element_vertices(e).iter().enumerate() {
                for a in 0..n {
                    let mut acc = 0.0;
                    for bb in 0..n {
                        acc += dg[(a, bb)] * grads[j][bb];
                    }
                    out[v * n + a] += w * acc;
                }
            }
        }
        self.apply_mask(out);
        pairwise(0, terms.len(), &|i| terms[i])
    }

    /// Periodically tiles a field from a `k`-cube grid onto this grid, whose
    /// side must be a multiple of `k` at the same resolution. Both fields
    /// vanish on the sub-cube boundaries, so the result is admissible.
    pub fn tile_from(&self, small: &Grid, field: &[f64]) -> Result<Field> {
        if small.n != self.n || small.res != self.res || !self.k.is_multiple_of(small.k) {
            return Err(Error::invalid("tiling needs equal dim/res and a side multiple"));
        }
        if field.len() != small.num_dofs() {
            return Err(Error::DimensionMismatch {
                expected: small.num_dofs(),
                found: field.len(),
            });
        }
        let n = self.n;
        let period = small.side - 1;
        let mut out = self.zero_field();
        for id in 0..self.num_nodes() {
            let mut rem = id;
            let mut src = 0;
            let mut mult = 1;
            for _ in 0..n {
                let c = rem % self.side;
                rem /= self.side;
                src += (c % period) * mult;
                mult *= small.side;
            }
            out.values[id * n..(id + 1) * n].copy_from_slice(&field[src * n..(src + 1) * n]);
        }
        self.apply_mask(&mut out.values);
        Ok(out)
    }
}

/// Nodal displacement field on a [`Grid`], node-major
/// (`values[node·n + component]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub n: usize,
    pub k: usize,
    pub res: usize,
    pub values: Vec<f64>,
}

impl Field {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Whether the field was built for `grid`.
    pub fn fits(&self, grid: &Grid) -> bool {
        self.n == grid.n && self.k == grid.k && self.res == grid.res && self.values.len() == grid.num_dofs()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::DensitySpec;

    #[test]
    fn element_and_node_counts() {
        let g = Grid::new(1, 1, 4).unwrap();
        assert_eq!((g.num_nodes(), g.num_elements(), g.masked_count()), (5, 4, 2));
        let g = Grid::new(2, 1, 2).unwrap();
        assert_eq!((g.num_nodes(), g.num_elements()), (9, 8));
        let g = Grid::new(2, 2, 2).unwrap();
        assert_eq!((g.num_nodes(), g.num_elements()), (25, 32));
        let g = Grid::new(3, 1, 2).unwrap();
        assert_eq!((g.num_nodes(), g.num_elements()), (27, 48));
    }

    #[test]
    fn volumes_sum_to_cube() {
        for (n, k, res) in [(1, 3, 5), (2, 2, 3), (3, 2, 2)] {
            let g = Grid::new(n, k, res).unwrap();
            let total = g.element_volume() * g.num_elements() as f64;
            let cube = g.domain_volume();
            assert!((total - cube).abs() <= 1e-12 * cube);
        }
    }

    #[test]
    fn shape_gradients_sum_to_zero() {
        let g = Grid::new(3, 1, 2).unwrap();
        for e in 0..g.num_elements() {
            for b in 0..3 {
                let s: f64 = g.shape_gradients(e).iter().map(|gr| gr[b]).sum();
                assert!(s.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn boundary_nodes_masked() {
        let g = Grid::new(2, 1, 4).unwrap();
        for id in 0..g.num_nodes() {
            let c = g.node_coords(id);
            let on_boundary = c[..2].iter().any(|v| *v == 0.0 || (*v - 1.0).abs() < 1e-12);
            assert_eq!(g.mask()[id], on_boundary);
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(Grid::new(4, 1, 2).is_err());
        assert!(Grid::new(2, 0, 2).is_err());
        assert!(Grid::new(2, 1, 1).is_err());
        assert!(matches!(Grid::with_cap(2, 4, 64, 1000), Err(Error::GridTooLarge { .. })));
    }

    #[test]
    fn affine_reproduction() {
        let a = Mat::from_row_major(3, &[0.3, -1.0, 2.0, 0.5, 0.1, -0.7, 1.2, 0.4, 0.9]).unwrap();
        let g = Grid::new(3, 1, 2).unwrap();
        let f = g.affine_field(&a, false);
        for e in 0..g.num_elements() {
            assert!((g.element_gradient(&f.values, e) - a).norm() < 1e-12);
        }
    }

    #[test]
    fn zero_field_energy_is_cell_average() {
        let g = Grid::new(1, 1, 8).unwrap();
        let d = DensitySpec::two_phase_p_norm(1, 2.0, 1.0, 4.0);
        let e = g.assemble_energy(&d, &Mat::diag(&[1.0]), &g.zero_field().values, false).unwrap();
        assert!((e - 2.5).abs() < 1e-14);
        let g2 = Grid::new(2, 2, 4).unwrap();
        let c = DensitySpec::constant_p_norm(2, 2.0);
        let e2 = g2
            .assemble_energy(&c, &Mat::identity(2), &g2.zero_field().values, false)
            .unwrap();
        assert!((e2 - 2.0).abs() < 1e-14);
    }

    #[test]
    fn masked_gradient_entries_vanish() {
        let g = Grid::new(2, 1, 4).unwrap();
        let d = DensitySpec::single_well(2, 2.0);
        let mut vals = g.zero_field().values;
        for (i, v) in vals.iter_mut().enumerate() {
            *v = 0.01 * (i as f64).sin();
        }
        g.apply_mask(&mut vals);
        let grad = g.assemble_gradient(&d, &Mat::diag(&[0.2, -0.1]), &vals, false).unwrap();
        for (id, m) in g.mask().iter().enumerate() {
            if *m {
                assert_eq!(&grad[id * 2..id * 2 + 2], &[0.0, 0.0]);
            }
        }
    }

    #[test]
    fn tiling_preserves_energy() {
        let small = Grid::new(2, 1, 4).unwrap();
        let big = Grid::new(2, 2, 4).unwrap();
        let d = DensitySpec::single_well(2, 2.0).with_layers(1.0, 4.0);
        let mut vals = small.zero_field().values;
        for (i, v) in vals.iter_mut().enumerate() {
            *v = 0.05 * ((i * 7 % 11) as f64 - 5.0);
        }
        small.apply_mask(&mut vals);
        let x = Mat::diag(&[0.1, 0.0]);
        let tiled = big.tile_from(&small, &vals).unwrap();
        let e_small = small.assemble_energy(&d, &x, &vals, false).unwrap();
        let e_big = big.assemble_energy(&d, &x, &tiled.values, false).unwrap();
        assert!((e_small - e_big).abs() < 1e-13 * (1.0 + e_small));
    }
}
