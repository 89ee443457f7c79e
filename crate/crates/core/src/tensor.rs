//! Dense tensors over a small coordinate dimension, sampled fields on
//! rectangular grids, and the finite-difference machinery shared by every
//! module that differentiates a sampled field.

use crate::error::{Error, Result};

/// Dense tensor with `rank` axes, each of length `n`. Storage is row major
/// with the last index fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    n: usize,
    rank: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(n: usize, rank: usize) -> Self {
        Tensor {
            n,
            rank,
            data: vec![0.0; n.pow(rank as u32)],
        }
    }

    pub fn from_fn(n: usize, rank: usize, mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let mut t = Tensor::zeros(n, rank);
        let mut ix = vec![0usize; rank];
        for flat in 0..t.data.len() {
            t.unflatten(flat, &mut ix);
            t.data[flat] = f(&ix);
        }
        t
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    fn offset(&self, ix: &[usize]) -> usize {
        debug_assert_eq!(ix.len(), self.rank);
        ix.iter().fold(0, |acc, &i| acc * self.n + i)
    }

    fn unflatten(&self, mut flat: usize, ix: &mut [usize]) {
        for slot in (0..self.rank).rev() {
            ix[slot] = flat % self.n;
            flat /= self.n;
        }
    }

    pub fn get(&self, ix: &[usize]) -> f64 {
        self.data[self.offset(ix)]
    }

    pub fn set(&mut self, ix: &[usize], v: f64) {
        let o = self.offset(ix);
        self.data[o] = v;
    }

    pub fn add_assign(&mut self, ix: &[usize], v: f64) {
        let o = self.offset(ix);
        self.data[o] += v;
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, c: f64) -> Tensor {
        let mut out = self.clone();
        for v in &mut out.data {
            *v *= c;
        }
        out
    }

    pub fn sub(&self, other: &Tensor) -> Tensor {
        debug_assert_eq!(self.data.len(), other.data.len());
        let mut out = self.clone();
        for (v, w) in out.data.iter_mut().zip(&other.data) {
            *v -= w;
        }
        out
    }

    pub fn add(&self, other: &Tensor) -> Tensor {
        debug_assert_eq!(self.data.len(), other.data.len());
        let mut out = self.clone();
        for (v, w) in out.data.iter_mut().zip(&other.data) {
            *v += w;
        }
        out
    }

    /// Replace slot `slot` by its contraction with the matrix `m`:
    /// `out[..., i, ...] = sum_j m[i][j] t[..., j, ...]`. Used to raise and
    /// lower indices with the metric.
    pub fn apply_matrix(&self, slot: usize, m: &Tensor) -> Tensor {
        debug_assert_eq!(m.rank, 2);
        debug_assert!(slot < self.rank);
        let mut out = Tensor::zeros(self.n, self.rank);
        let mut ix = vec![0usize; self.rank];
        for flat in 0..out.data.len() {
            out.unflatten(flat, &mut ix);
            let i = ix[slot];
            let mut acc = 0.0;
            for j in 0..self.n {
                ix[slot] = j;
                acc += m.get(&[i, j]) * self.get(&ix);
            }
            ix[slot] = i;
            out.data[flat] = acc;
        }
        out
    }

    /// Visit every multi-index.
    pub fn for_each_index(&self, mut f: impl FnMut(&[usize], f64)) {
        let mut ix = vec![0usize; self.rank];
        for flat in 0..self.data.len() {
            self.unflatten(flat, &mut ix);
            f(&ix, self.data[flat]);
        }
    }
}

/// Variance of one tensor slot, used by the covariant finite-difference
/// engine to pick the sign and contraction pattern of the connection term.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Upper,
    Lower,
}

/// Rectangular grid of sample nodes, axis-aligned, uniform per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    min: Vec<f64>,
    max: Vec<f64>,
    nodes: Vec<usize>,
}

impl Grid {
    pub fn new(min: Vec<f64>, max: Vec<f64>, nodes: Vec<usize>) -> Result<Self> {
        if min.len() != max.len() || min.len() != nodes.len() {
            return Err(Error::DimensionMismatch {
                expected: min.len(),
                got: nodes.len(),
            });
        }
        if nodes.iter().any(|&k| k < 2) {
            return Err(Error::Precondition(
                "grid needs at least two nodes per axis".into(),
            ));
        }
        for a in 0..min.len() {
            if !(max[a] - min[a]).is_finite() || max[a] <= min[a] {
                return Err(Error::Precondition(format!(
                    "grid axis {a} has empty extent"
                )));
            }
        }
        Ok(Grid { min, max, nodes })
    }

    /// Symmetric box `[-half, half]^dim` with `per_axis` nodes on each axis.
    pub fn symmetric(dim: usize, half: f64, per_axis: usize) -> Result<Self> {
        Grid::new(vec![-half; dim], vec![half; dim], vec![per_axis; dim])
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn total_nodes(&self) -> usize {
        self.nodes.iter().product()
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        (self.max[axis] - self.min[axis]) / (self.nodes[axis] - 1) as f64
    }

    pub fn min(&self) -> &[f64] {
        &self.min
    }

    pub fn max(&self) -> &[f64] {
        &self.max
    }

    pub fn coords(&self, node: &[usize]) -> Vec<f64> {
        node.iter()
            .enumerate()
            .map(|(a, &i)| self.min[a] + self.spacing(a) * i as f64)
            .collect()
    }

    pub fn flat_index(&self, node: &[usize]) -> usize {
        node.iter()
            .zip(&self.nodes)
            .fold(0, |acc, (&i, &k)| acc * k + i)
    }

    /// Node whose coordinates are closest to the origin (ties break toward
    /// lower indices). Grid constructions start integration here.
    pub fn base_node(&self) -> Vec<usize> {
        (0..self.dim())
            .map(|a| {
                let mut best = 0usize;
                let mut best_d = f64::INFINITY;
                for i in 0..self.nodes[a] {
                    let d = (self.min[a] + self.spacing(a) * i as f64).abs();
                    if d < best_d - 1e-15 {
                        best_d = d;
                        best = i;
                    }
                }
                best
            })
            .collect()
    }

    /// All node multi-indices in lexicographic order.
    pub fn all_nodes(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::with_capacity(self.total_nodes());
        let mut ix = vec![0usize; self.dim()];
        loop {
            out.push(ix.clone());
            let mut axis = self.dim();
            loop {
                if axis == 0 {
                    return out;
                }
                axis -= 1;
                ix[axis] += 1;
                if ix[axis] < self.nodes[axis] {
                    break;
                }
                ix[axis] = 0;
            }
        }
    }

    /// Nodes at least `margin` away from every boundary.
    pub fn interior_nodes(&self, margin: usize) -> Vec<Vec<usize>> {
        self.all_nodes()
            .into_iter()
            .filter(|ix| {
                ix.iter()
                    .zip(&self.nodes)
                    .all(|(&i, &k)| i >= margin && i + margin < k)
            })
            .collect()
    }

    pub fn is_interior(&self, node: &[usize], margin: usize) -> bool {
        node.iter()
            .zip(&self.nodes)
            .all(|(&i, &k)| i >= margin && i + margin < k)
    }
}

/// A tensor field sampled at grid nodes. `margin` tracks how many boundary
/// layers hold no meaningful data (finite differencing shrinks the valid
/// region by one layer per derivative).
#[derive(Debug, Clone)]
pub struct GridField {
    pub grid: Grid,
    pub rank: usize,
    pub margin: usize,
    data: Vec<f64>,
}

impl GridField {
    pub fn zeros(grid: Grid, rank: usize) -> Self {
        let len = grid.total_nodes() * grid.dim().pow(rank as u32);
        GridField {
            grid,
            rank,
            margin: 0,
            data: vec![0.0; len],
        }
    }

    pub fn n(&self) -> usize {
        self.grid.dim()
    }

    fn comps(&self) -> usize {
        self.n().pow(self.rank as u32)
    }

    pub fn tensor_at(&self, node: &[usize]) -> Tensor {
        let c = self.comps();
        let start = self.grid.flat_index(node) * c;
        Tensor {
            n: self.n(),
            rank: self.rank,
            data: self.data[start..start + c].to_vec(),
        }
    }

    pub fn slice_at(&self, node: &[usize]) -> &[f64] {
        let c = self.comps();
        let start = self.grid.flat_index(node) * c;
        &self.data[start..start + c]
    }

    pub fn set_tensor_at(&mut self, node: &[usize], t: &Tensor) {
        debug_assert_eq!(t.rank, self.rank);
        let c = self.comps();
        let start = self.grid.flat_index(node) * c;
        self.data[start..start + c].copy_from_slice(&t.data);
    }

    pub fn raw_data(&self) -> &[f64] {
        &self.data
    }

    pub fn raw_data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Maximum absolute component over valid (interior to `margin`) nodes.
    pub fn max_abs(&self) -> f64 {
        let mut m = 0.0f64;
        for node in self.grid.interior_nodes(self.margin) {
            for v in self.slice_at(&node) {
                m = m.max(v.abs());
            }
        }
        m
    }

    /// Pointwise difference; margins combine to the larger one.
    pub fn sub(&self, other: &GridField) -> GridField {
        debug_assert_eq!(self.data.len(), other.data.len());
        let mut out = self.clone();
        for (v, w) in out.data.iter_mut().zip(&other.data) {
            *v -= w;
        }
        out.margin = self.margin.max(other.margin);
        out
    }
}

/// Covariant derivative of a sampled tensor field at one interior node by
/// second-order central differences. The result has the derivative index
/// first: `out[k, ...] = D_k T[...]`. `gamma` supplies the connection
/// coefficients `G[a][k][l]` at the node; slot variance picks the correction
/// term `+G^i_{ka} T[..a..]` (upper) or `-G^a_{ki} T[..a..]` (lower).
pub fn covariant_derivative_at(
    field: &GridField,
    slots: &[Slot],
    node: &[usize],
    gamma: &Tensor,
) -> Result<Tensor> {
    let n = field.n();
    debug_assert_eq!(slots.len(), field.rank);
    if !field.grid.is_interior(node, field.margin + 1) {
        return Err(Error::Precondition(format!(
            "finite-difference stencil leaves the valid region at node {node:?}"
        )));
    }
    let mut out = Tensor::zeros(n, field.rank + 1);
    let mut nb = node.to_vec();
    let center = field.tensor_at(node);
    for k in 0..n {
        nb[k] = node[k] + 1;
        let plus = field.slice_at(&nb);
        nb[k] = node[k] - 1;
        let minus = field.slice_at(&nb);
        nb[k] = node[k];
        let inv2h = 0.5 / field.grid.spacing(k);
        let c = plus.len();
        for flat in 0..c {
            out.data[k * c + flat] = (plus[flat] - minus[flat]) * inv2h;
        }
    }
    // Connection corrections, one per slot.
    let mut ix = vec![0usize; field.rank];
    for (slot, &var) in slots.iter().enumerate() {
        let mut corr = Tensor::zeros(n, field.rank + 1);
        let mut out_ix = vec![0usize; field.rank + 1];
        center.for_each_index(|t_ix, v| {
            if v == 0.0 {
                return;
            }
            let a = t_ix[slot];
            ix.copy_from_slice(t_ix);
            for k in 0..n {
                out_ix[0] = k;
                match var {
                    Slot::Upper => {
                        for i in 0..n {
                            ix[slot] = i;
                            out_ix[1..].copy_from_slice(&ix);
                            out_ix[1 + slot] = i;
                            corr.add_assign(&out_ix, gamma.get(&[i, k, a]) * v);
                        }
                    }
                    Slot::Lower => {
                        // Sign absorbed below; here accumulate G^a_{k i} T[..a..]
                        // into position i for every i.
                        for i in 0..n {
                            out_ix[1..].copy_from_slice(t_ix);
                            out_ix[1 + slot] = i;
                            corr.add_assign(&out_ix, gamma.get(&[a, k, i]) * v);
                        }
                    }
                }
                ix[slot] = a;
            }
        });
        match var {
            Slot::Upper => out = out.add(&corr),
            Slot::Lower => out = out.sub(&corr),
        }
    }
    Ok(out)
}

/// Covariant derivative over every node that still has a full stencil,
/// producing a field with `margin` one larger. `gamma_at` supplies the
/// connection at a node.
pub fn covariant_derivative_field(
    field: &GridField,
    slots: &[Slot],
    gamma_at: &(dyn Fn(&[usize]) -> Tensor + Sync),
) -> GridField {
    let mut out = GridField::zeros(field.grid.clone(), field.rank + 1);
    out.margin = field.margin + 1;
    let nodes = field.grid.interior_nodes(out.margin);
    let results: Vec<(Vec<usize>, Tensor)> = {
        use rayon::prelude::*;
        nodes
            .par_iter()
            .map(|node| {
                let g = gamma_at(node);
                let t = covariant_derivative_at(field, slots, node, &g)
                    .expect("interior node has a full stencil");
                (node.clone(), t)
            })
            .collect()
    };
    for (node, t) in results {
        out.set_tensor_at(&node, &t);
    }
    out
}

/// Plain central-difference partial derivative of an analytic function,
/// used by the oracles that cross-check closed-form derivatives.
pub fn central_diff(f: &dyn Fn(&[f64]) -> f64, x: &[f64], axis: usize, h: f64) -> f64 {
    let mut xp = x.to_vec();
    let mut xm = x.to_vec();
    xp[axis] += h;
    xm[axis] -= h;
    (f(&xp) - f(&xm)) / (2.0 * h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_indexing_round_trips() {
        let t = Tensor::from_fn(3, 3, |ix| (ix[0] * 100 + ix[1] * 10 + ix[2]) as f64);
        assert_eq!(t.get(&[2, 1, 0]), 210.0);
        assert_eq!(t.get(&[0, 0, 2]), 2.0);
    }

    #[test]
    fn apply_matrix_scales_one_slot() {
        let t = Tensor::from_fn(2, 2, |ix| if ix == [0, 1] { 3.0 } else { 0.0 });
        let m = Tensor::from_fn(2, 2, |ix| if ix[0] == ix[1] { 2.0 } else { 0.0 });
        let u = t.apply_matrix(1, &m);
        assert_eq!(u.get(&[0, 1]), 6.0);
        assert_eq!(u.get(&[0, 0]), 0.0);
    }

    #[test]
    fn grid_base_node_hits_origin_for_symmetric_box() {
        let g = Grid::symmetric(2, 0.4, 21).unwrap();
        assert_eq!(g.base_node(), vec![10, 10]);
        assert_eq!(g.coords(&[10, 10]), vec![0.0, 0.0]);
        assert!((g.spacing(0) - 0.04).abs() < 1e-15);
    }

    #[test]
    fn grid_rejects_degenerate_axes() {
        assert!(Grid::new(vec![0.0], vec![0.0], vec![5]).is_err());
        assert!(Grid::new(vec![0.0], vec![1.0], vec![1]).is_err());
    }

    #[test]
    fn flat_second_difference_of_quadratic_is_exact() {
        // f = x0^2 on a 1d-in-2d grid; with zero connection the derivative
        // field is the plain gradient, and differencing twice gives the
        // constant Hessian diag(2, 0) up to rounding.
        let grid = Grid::symmetric(2, 0.5, 11).unwrap();
        let mut f = GridField::zeros(grid.clone(), 0);
        for node in grid.all_nodes() {
            let x = grid.coords(&node);
            f.set_tensor_at(&node, &Tensor::from_fn(2, 0, |_| x[0] * x[0]));
        }
        let zero_conn = |_: &[usize]| Tensor::zeros(2, 3);
        let df = covariant_derivative_field(&f, &[], &zero_conn);
        let ddf = covariant_derivative_field(&df, &[Slot::Lower], &zero_conn);
        let center = ddf.tensor_at(&[5, 5]);
        assert!((center.get(&[0, 0]) - 2.0).abs() < 1e-12);
        assert!(center.get(&[0, 1]).abs() < 1e-12);
        assert!(center.get(&[1, 1]).abs() < 1e-12);
    }

    #[test]
    fn stencil_error_at_boundary() {
        let grid = Grid::symmetric(2, 0.5, 5).unwrap();
        let mut f = GridField::zeros(grid, 0);
        f.margin = 1;
        let g = Tensor::zeros(2, 3);
        assert!(covariant_derivative_at(&f, &[], &[0, 2], &g).is_err());
        assert!(covariant_derivative_at(&f, &[], &[2, 2], &g).is_ok());
    }
}
