//! The connection pair attached to a product field, its curvature, affine
//! coordinates by parallel transport, potentials by double line integration,
//! and the potential consistency checks.

use crate::error::{Error, Result};
use crate::geometry::Chart;
use crate::prolongation::{covariant_rhs, ProductField};
use crate::tensor::{
    covariant_derivative_at, covariant_derivative_field, Grid, GridField, Slot, Tensor,
};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Maximum tolerated disagreement between sweep orders in affine-chart and
/// potential integration.
pub const AFFINE_PATH_TOL: f64 = 1e-6;
/// Curvature level below which a connection is accepted as flat for the
/// purpose of building affine coordinates.
pub const AFFINE_FLATNESS_TOL: f64 = 0.1;
/// Closedness level for the metric under the connection, required before
/// attempting a potential.
pub const CLOSEDNESS_TOL: f64 = 1e-8;
/// Substeps per grid cell in transport and potential integration.
pub const TRANSPORT_SUBSTEPS: usize = 8;

/// Sampled coefficients of a connection on a chart, laid out `[a][k][l]`
/// with `a` the output index.
#[derive(Debug, Clone)]
pub struct ConnectionField {
    pub chart: Chart,
    pub grid: Grid,
    pub coeffs: GridField,
}

impl ConnectionField {
    /// Max deviation of the coefficients from symmetry in the lower pair.
    pub fn torsion_residual(&self) -> f64 {
        let n = self.chart.dim();
        let mut worst = 0.0f64;
        for node in self.grid.all_nodes() {
            let c = self.coeffs.tensor_at(&node);
            for a in 0..n {
                for k in 0..n {
                    for l in k + 1..n {
                        worst = worst.max((c.get(&[a, k, l]) - c.get(&[a, l, k])).abs());
                    }
                }
            }
        }
        worst
    }
}

/// Build the connection `nabla - sign * star` on the field's grid. With
/// `sign = +1` this is the connection whose flatness characterizes the
/// fields coming out of the prolongation; `sign = -1` gives its g-dual
/// when the lowered product is totally symmetric.
pub fn d_connection(field: &ProductField, sign: i8) -> Result<ConnectionField> {
    if sign != 1 && sign != -1 {
        return Err(Error::Precondition("connection sign must be +1 or -1".into()));
    }
    let chart = &field.chart;
    let n = chart.dim();
    let s = sign as f64;
    let nodes = field.grid.all_nodes();
    let values: Result<Vec<(Vec<usize>, Tensor)>> = nodes
        .par_iter()
        .map(|node| {
            let x = field.grid.coords(node);
            let gamma = chart.christoffel_at(&x)?;
            let star = field.star.tensor_at(node);
            let c = Tensor::from_fn(n, 3, |ix| {
                let (a, k, l) = (ix[0], ix[1], ix[2]);
                gamma.get(&[a, k, l]) - s * star.get(&[k, l, a])
            });
            Ok((node.clone(), c))
        })
        .collect();
    let mut coeffs = GridField::zeros(field.grid.clone(), 3);
    coeffs.margin = field.star.margin;
    for (node, t) in values? {
        coeffs.set_tensor_at(&node, &t);
    }
    Ok(ConnectionField {
        chart: chart.clone(),
        grid: field.grid.clone(),
        coeffs,
    })
}

/// Max residual of the duality identity
/// `d_k g_ij = D_ki^a g_aj + D*_kj^a g_ia`
/// for the pair `nabla -/+ sign * star`, using the exact metric derivative.
pub fn duality_residual(field: &ProductField, sign: i8) -> Result<f64> {
    let conn = d_connection(field, sign)?;
    let dual = d_connection(field, -sign)?;
    let chart = &field.chart;
    let n = chart.dim();
    let mut worst = 0.0f64;
    for node in field.grid.all_nodes() {
        let x = field.grid.coords(&node);
        let g = chart.metric_at(&x)?.g;
        let dg = chart.dmetric_at(&x)?;
        let c = conn.coeffs.tensor_at(&node);
        let d = dual.coeffs.tensor_at(&node);
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let mut v = dg.get(&[k, i, j]);
                    for a in 0..n {
                        v -= c.get(&[a, k, i]) * g.get(&[a, j]);
                        v -= d.get(&[a, k, j]) * g.get(&[i, a]);
                    }
                    worst = worst.max(v.abs());
                }
            }
        }
    }
    Ok(worst)
}

/// Finite-difference curvature of a sampled connection, laid out
/// `[a][j][k][l]`, valid on nodes one layer inside the input's margin.
pub fn connection_curvature(conn: &ConnectionField) -> GridField {
    let n = conn.chart.dim();
    let zero = Tensor::zeros(n, 3);
    let d = covariant_derivative_field(
        &conn.coeffs,
        &[Slot::Lower, Slot::Lower, Slot::Lower],
        &|_| zero.clone(),
    );
    let mut out = GridField::zeros(conn.grid.clone(), 4);
    out.margin = d.margin;
    let nodes = conn.grid.interior_nodes(out.margin);
    let values: Vec<(Vec<usize>, Tensor)> = nodes
        .par_iter()
        .map(|node| {
            let dc = d.tensor_at(node);
            let c = conn.coeffs.tensor_at(node);
            let r = Tensor::from_fn(n, 4, |ix| {
                let (a, j, k, l) = (ix[0], ix[1], ix[2], ix[3]);
                let mut v = dc.get(&[k, a, l, j]) - dc.get(&[l, a, k, j]);
                for b in 0..n {
                    v += c.get(&[a, k, b]) * c.get(&[b, l, j]);
                    v -= c.get(&[a, l, b]) * c.get(&[b, k, j]);
                }
                v
            });
            (node.clone(), r)
        })
        .collect();
    for (node, t) in values {
        out.set_tensor_at(&node, &t);
    }
    out
}

/// Diagnostic for the twice-curvature property of the pair
/// `nabla + star`, `nabla - star`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SkewHessianReport {
    pub torsion: f64,
    pub dual_torsion: f64,
    /// Max norm of `R^D - 2 R^g` over interior nodes.
    pub twice_curvature_residual: f64,
    /// Max norm of `R^D` itself.
    pub curvature_norm: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Default constant for grid-level curvature tolerances, scaled by the
/// squared spacing.
const SKEW_TOL_FACTOR: f64 = 40.0;

pub fn check_skew_hessian(field: &ProductField) -> Result<SkewHessianReport> {
    let conn = d_connection(field, -1)?;
    let dual = d_connection(field, 1)?;
    let torsion = conn.torsion_residual();
    let dual_torsion = dual.torsion_residual();
    let rd = connection_curvature(&conn);
    let chart = &field.chart;
    let nodes = field.grid.interior_nodes(rd.margin);
    let mut twice = 0.0f64;
    let mut norm = 0.0f64;
    for node in &nodes {
        let x = field.grid.coords(node);
        let rg = chart.riemann_at(&x)?;
        let r = rd.tensor_at(node);
        twice = twice.max(r.sub(&rg.scaled(2.0)).max_abs());
        norm = norm.max(r.max_abs());
    }
    let h = (0..field.grid.dim())
        .map(|a| field.grid.spacing(a))
        .fold(0.0f64, f64::max);
    let tolerance = SKEW_TOL_FACTOR * h * h;
    let pass = torsion <= 1e-12
        && dual_torsion <= 1e-12
        && twice <= tolerance
        && norm >= 10.0 * tolerance;
    Ok(SkewHessianReport {
        torsion,
        dual_torsion,
        twice_curvature_residual: twice,
        curvature_norm: norm,
        tolerance,
        pass,
    })
}

/// Affine coordinates of a flat connection: per-node coframe samples
/// `theta[p][i]` and coordinate samples `xi[p]`, with `theta = I`,
/// `xi = 0` at the base node.
#[derive(Debug, Clone)]
pub struct AffineChart {
    pub grid: Grid,
    pub theta: GridField,
    pub xi: GridField,
    pub base: Vec<usize>,
}

/// Cubic interpolation window for connection coefficients along one axis.
struct AxisInterp {
    coords: [f64; 4],
    tensors: Vec<Tensor>,
}

impl AxisInterp {
    fn new(coeffs: &GridField, node: &[usize], axis: usize, cell_lo: usize) -> Result<Self> {
        let count = coeffs.grid.nodes()[axis];
        if count < 4 {
            return Err(Error::Precondition(
                "affine integration needs at least 4 nodes per axis".into(),
            ));
        }
        let w = cell_lo.saturating_sub(1).min(count - 4);
        let mut nb = node.to_vec();
        let mut coords = [0.0; 4];
        let mut tensors = Vec::with_capacity(4);
        for r in 0..4 {
            nb[axis] = w + r;
            coords[r] = coeffs.grid.coords(&nb)[axis];
            tensors.push(coeffs.tensor_at(&nb));
        }
        Ok(AxisInterp { coords, tensors })
    }

    fn at(&self, s: f64) -> Tensor {
        let mut out = self.tensors[0].scaled(0.0);
        for r in 0..4 {
            let mut w = 1.0;
            for m in 0..4 {
                if m != r {
                    w *= (s - self.coords[m]) / (self.coords[r] - self.coords[m]);
                }
            }
            out = out.add(&self.tensors[r].scaled(w));
        }
        out
    }
}

/// State advanced by the transport integrators; potential quantities are
/// carried only when requested.
#[derive(Clone)]
struct TransportState {
    theta: Tensor,
    xi: Tensor,
    w: Tensor,
    phi: f64,
}

impl TransportState {
    fn base(n: usize) -> Self {
        TransportState {
            theta: Tensor::from_fn(n, 2, |ix| if ix[0] == ix[1] { 1.0 } else { 0.0 }),
            xi: Tensor::zeros(n, 1),
            w: Tensor::zeros(n, 1),
            phi: 0.0,
        }
    }
}

/// Advance the transport state through one grid cell along `axis`.
/// `with_potential` also integrates the potential pair `(w, phi)`, which
/// needs the metric and an invertible coframe.
fn advance_cell(
    conn: &ConnectionField,
    state: &mut TransportState,
    node_from: &[usize],
    axis: usize,
    dir: i64,
    with_potential: bool,
) -> Result<()> {
    let n = conn.chart.dim();
    let from = conn.grid.coords(node_from);
    let cell_lo = if dir > 0 {
        node_from[axis]
    } else {
        node_from[axis] - 1
    };
    let interp = AxisInterp::new(&conn.coeffs, node_from, axis, cell_lo)?;
    let h_cell = conn.grid.spacing(axis) * dir as f64;
    let sub = TRANSPORT_SUBSTEPS;
    let h = h_cell / sub as f64;
    let mut x = from.clone();

    // Derivative of the state at axis position s.
    let deriv = |s: f64,
                 st: &TransportState,
                 x: &mut Vec<f64>|
     -> Result<(Tensor, Tensor, Tensor, f64)> {
        let c = interp.at(s);
        let dtheta = Tensor::from_fn(n, 2, |ix| {
            let (p, i) = (ix[0], ix[1]);
            (0..n)
                .map(|a| c.get(&[a, axis, i]) * st.theta.get(&[p, a]))
                .sum()
        });
        let dxi = Tensor::from_fn(n, 1, |ix| st.theta.get(&[ix[0], axis]));
        if !with_potential {
            return Ok((dtheta, dxi, Tensor::zeros(n, 1), 0.0));
        }
        x[axis] = s;
        let metric = conn.chart.metric_at(x)?;
        let m = DMatrix::from_fn(n, n, |p, i| st.theta.get(&[p, i]));
        let b = m.try_inverse().ok_or_else(|| {
            Error::Numerical("coframe degenerated during potential integration".into())
        })?;
        let dw = Tensor::from_fn(n, 1, |ix| {
            let p = ix[0];
            (0..n).map(|i| b[(i, p)] * metric.g.get(&[i, axis])).sum()
        });
        let dphi = (0..n)
            .map(|p| st.w.get(&[p]) * st.theta.get(&[p, axis]))
            .sum();
        Ok((dtheta, dxi, dw, dphi))
    };

    let apply = |st: &TransportState, k: &(Tensor, Tensor, Tensor, f64), c: f64| TransportState {
        theta: st.theta.add(&k.0.scaled(c)),
        xi: st.xi.add(&k.1.scaled(c)),
        w: st.w.add(&k.2.scaled(c)),
        phi: st.phi + c * k.3,
    };

    for stp in 0..sub {
        let s0 = from[axis] + stp as f64 * h;
        let k1 = deriv(s0, state, &mut x)?;
        let k2 = deriv(s0 + 0.5 * h, &apply(state, &k1, 0.5 * h), &mut x)?;
        let k3 = deriv(s0 + 0.5 * h, &apply(state, &k2, 0.5 * h), &mut x)?;
        let k4 = deriv(s0 + h, &apply(state, &k3, h), &mut x)?;
        state.theta = state.theta.add(
            &k1.0
                .add(&k2.0.scaled(2.0))
                .add(&k3.0.scaled(2.0))
                .add(&k4.0)
                .scaled(h / 6.0),
        );
        state.xi = state.xi.add(
            &k1.1
                .add(&k2.1.scaled(2.0))
                .add(&k3.1.scaled(2.0))
                .add(&k4.1)
                .scaled(h / 6.0),
        );
        state.w = state.w.add(
            &k1.2
                .add(&k2.2.scaled(2.0))
                .add(&k3.2.scaled(2.0))
                .add(&k4.2)
                .scaled(h / 6.0),
        );
        state.phi += h / 6.0 * (k1.3 + 2.0 * k2.3 + 2.0 * k3.3 + k4.3);
    }
    Ok(())
}

struct TransportResult {
    theta: GridField,
    xi: GridField,
    phi: GridField,
}

/// States produced along one leg of a sweep: node index paired with the
/// transported state there.
type TransportLeg = Vec<(Vec<usize>, TransportState)>;

/// Staircase transport sweep over the grid in the given axis order.
fn transport_sweep(
    conn: &ConnectionField,
    base: &[usize],
    order: &[usize],
    with_potential: bool,
) -> Result<TransportResult> {
    let n = conn.chart.dim();
    let grid = &conn.grid;
    let mut theta = GridField::zeros(grid.clone(), 2);
    let mut xi = GridField::zeros(grid.clone(), 1);
    let mut w = GridField::zeros(grid.clone(), 1);
    let mut phi = GridField::zeros(grid.clone(), 0);
    let start = TransportState::base(n);
    theta.set_tensor_at(base, &start.theta);

    for (t, &axis) in order.iter().enumerate() {
        let mut starts: Vec<Vec<usize>> = vec![base.to_vec()];
        for &done in &order[..t] {
            let mut next = Vec::with_capacity(starts.len() * grid.nodes()[done]);
            for s in &starts {
                for i in 0..grid.nodes()[done] {
                    let mut v = s.clone();
                    v[done] = i;
                    next.push(v);
                }
            }
            starts = next;
        }
        let legs: Result<Vec<TransportLeg>> = starts
            .par_iter()
            .map(|s| {
                let mut out = Vec::new();
                for dir in [1i64, -1i64] {
                    let mut node = s.clone();
                    let mut state = TransportState {
                        theta: theta.tensor_at(s),
                        xi: xi.tensor_at(s),
                        w: w.tensor_at(s),
                        phi: phi.tensor_at(s).get(&[]),
                    };
                    loop {
                        let next_i = node[axis] as i64 + dir;
                        if next_i < 0 || next_i >= grid.nodes()[axis] as i64 {
                            break;
                        }
                        advance_cell(conn, &mut state, &node, axis, dir, with_potential)?;
                        node[axis] = next_i as usize;
                        out.push((node.clone(), state.clone()));
                    }
                }
                Ok(out)
            })
            .collect();
        for leg in legs? {
            for (node, st) in leg {
                theta.set_tensor_at(&node, &st.theta);
                xi.set_tensor_at(&node, &st.xi);
                w.set_tensor_at(&node, &st.w);
                let mut t0 = Tensor::zeros(n, 0);
                t0.set(&[], st.phi);
                phi.set_tensor_at(&node, &t0);
            }
        }
    }
    Ok(TransportResult { theta, xi, phi })
}

fn locate_node(grid: &Grid, x: &[f64]) -> Result<Vec<usize>> {
    if x.len() != grid.dim() {
        return Err(Error::DimensionMismatch {
            expected: grid.dim(),
            got: x.len(),
        });
    }
    let mut node = Vec::with_capacity(x.len());
    for a in 0..x.len() {
        let h = grid.spacing(a);
        let rel = (x[a] - grid.min()[a]) / h;
        let i = rel.round();
        if (rel - i).abs() > 1e-9 || i < 0.0 || i as usize >= grid.nodes()[a] {
            return Err(Error::Precondition(format!(
                "base point {x:?} is not a grid node"
            )));
        }
        node.push(i as usize);
    }
    Ok(node)
}

fn field_disagreement(a: &GridField, b: &GridField, grid: &Grid) -> f64 {
    let mut worst = 0.0f64;
    for node in grid.all_nodes() {
        worst = worst.max(a.tensor_at(&node).sub(&b.tensor_at(&node)).max_abs());
    }
    worst
}

/// Build affine coordinates for a flat connection by parallel transport of
/// the coframe and line integration of the coordinates, starting at `base`
/// (which must be a grid node). Two sweep orders are integrated and
/// compared; disagreement beyond `AFFINE_PATH_TOL` is an error.
pub fn build_affine_chart(conn: &ConnectionField, base: &[f64]) -> Result<AffineChart> {
    let base_node = locate_node(&conn.grid, base)?;
    let rd = connection_curvature(conn);
    let curv = rd.max_abs();
    if curv > AFFINE_FLATNESS_TOL {
        return Err(Error::Precondition(format!(
            "connection is not flat: curvature {curv:.3e} exceeds {AFFINE_FLATNESS_TOL:.1e}"
        )));
    }
    let order: Vec<usize> = (0..conn.chart.dim()).collect();
    let rev: Vec<usize> = order.iter().rev().copied().collect();
    let fwd = transport_sweep(conn, &base_node, &order, false)?;
    let bwd = transport_sweep(conn, &base_node, &rev, false)?;
    let disagreement = field_disagreement(&fwd.theta, &bwd.theta, &conn.grid)
        .max(field_disagreement(&fwd.xi, &bwd.xi, &conn.grid));
    if disagreement > AFFINE_PATH_TOL {
        return Err(Error::PathDisagreement {
            disagreement,
            tolerance: AFFINE_PATH_TOL,
        });
    }
    Ok(AffineChart {
        grid: conn.grid.clone(),
        theta: fwd.theta,
        xi: fwd.xi,
        base: base_node,
    })
}

/// Residuals of the transport equations on the finished chart: the coframe
/// against its defining derivative and the coordinates against the coframe.
pub fn affine_pullback_residual(conn: &ConnectionField, chart_map: &AffineChart) -> f64 {
    let n = conn.chart.dim();
    let zero = Tensor::zeros(n, 3);
    let dtheta = covariant_derivative_field(
        &chart_map.theta,
        &[Slot::Lower, Slot::Lower],
        &|_| zero.clone(),
    );
    let dxi = covariant_derivative_field(&chart_map.xi, &[Slot::Lower], &|_| zero.clone());
    let mut worst = 0.0f64;
    for node in conn.grid.interior_nodes(dtheta.margin) {
        let c = conn.coeffs.tensor_at(&node);
        let th = chart_map.theta.tensor_at(&node);
        let dt = dtheta.tensor_at(&node);
        let dx = dxi.tensor_at(&node);
        for p in 0..n {
            for d in 0..n {
                worst = worst.max((dx.get(&[d, p]) - th.get(&[p, d])).abs());
                for i in 0..n {
                    let mut v = dt.get(&[d, p, i]);
                    for a in 0..n {
                        v -= c.get(&[a, d, i]) * th.get(&[p, a]);
                    }
                    worst = worst.max(v.abs());
                }
            }
        }
    }
    worst
}

/// What a sampled scalar on a chart is meant to be.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PotentialRole {
    HessianPotential,
    FrobeniusPotential,
}

/// Scalar samples on a grid with their intended role.
#[derive(Debug, Clone)]
pub struct PotentialField {
    pub chart: Chart,
    pub grid: Grid,
    pub phi: GridField,
    pub role: PotentialRole,
}

/// Max residual of closedness of the metric under the connection:
/// `(D_k g)_ij` must be symmetric under swapping `k` with `i`.
pub fn closedness_residual(conn: &ConnectionField) -> Result<f64> {
    let chart = &conn.chart;
    let n = chart.dim();
    let mut worst = 0.0f64;
    for node in conn.grid.all_nodes() {
        let x = conn.grid.coords(&node);
        let g = chart.metric_at(&x)?.g;
        let dg = chart.dmetric_at(&x)?;
        let c = conn.coeffs.tensor_at(&node);
        let dkg = Tensor::from_fn(n, 3, |ix| {
            let (k, i, j) = (ix[0], ix[1], ix[2]);
            let mut v = dg.get(&[k, i, j]);
            for a in 0..n {
                v -= c.get(&[a, k, i]) * g.get(&[a, j]);
                v -= c.get(&[a, k, j]) * g.get(&[i, a]);
            }
            v
        });
        for k in 0..n {
            for i in k + 1..n {
                for j in 0..n {
                    worst = worst.max((dkg.get(&[k, i, j]) - dkg.get(&[i, k, j])).abs());
                }
            }
        }
    }
    Ok(worst)
}

/// Integrate a potential for the connection: a scalar whose second
/// D-derivative is the metric, gauge-fixed by zero value and zero gradient
/// at the chart's base node. Both sweep orders are integrated and compared.
pub fn solve_hessian_potential(
    conn: &ConnectionField,
    affine: &AffineChart,
) -> Result<PotentialField> {
    if affine.grid.nodes() != conn.grid.nodes()
        || affine.grid.min() != conn.grid.min()
        || affine.grid.max() != conn.grid.max()
    {
        return Err(Error::Precondition(
            "affine chart grid does not match the connection grid".into(),
        ));
    }
    let closed = closedness_residual(conn)?;
    if closed > CLOSEDNESS_TOL {
        return Err(Error::Precondition(format!(
            "metric is not closed under the connection (residual {closed:.3e}); \
             no potential exists"
        )));
    }
    let order: Vec<usize> = (0..conn.chart.dim()).collect();
    let rev: Vec<usize> = order.iter().rev().copied().collect();
    let fwd = transport_sweep(conn, &affine.base, &order, true)?;
    let bwd = transport_sweep(conn, &affine.base, &rev, true)?;
    let disagreement = field_disagreement(&fwd.phi, &bwd.phi, &conn.grid);
    if disagreement > AFFINE_PATH_TOL {
        return Err(Error::PathDisagreement {
            disagreement,
            tolerance: AFFINE_PATH_TOL,
        });
    }
    Ok(PotentialField {
        chart: conn.chart.clone(),
        grid: conn.grid.clone(),
        phi: fwd.phi,
        role: PotentialRole::HessianPotential,
    })
}

/// Max norm of `D d phi - g` over interior nodes: the defining property of
/// a Hessian potential, evaluated by finite differences.
pub fn potential_metric_residual(conn: &ConnectionField, potential: &PotentialField) -> Result<f64> {
    let chart = &conn.chart;
    let n = chart.dim();
    let grid = &conn.grid;
    let phi = &potential.phi;
    let nodes = grid.interior_nodes(phi.margin + 1);
    if nodes.is_empty() {
        return Err(Error::Precondition("no interior nodes to check".into()));
    }
    let worst = nodes
        .par_iter()
        .map(|node| {
            let x = grid.coords(node);
            let g = chart.metric_at(&x).expect("interior node inside chart").g;
            let c = conn.coeffs.tensor_at(node);
            let mut local = 0.0f64;
            let mut nb = node.clone();
            let phi_at = |nb: &[usize]| phi.slice_at(nb)[0];
            // First derivatives.
            let mut grad = vec![0.0; n];
            for k in 0..n {
                nb[k] = node[k] + 1;
                let p = phi_at(&nb);
                nb[k] = node[k] - 1;
                let m = phi_at(&nb);
                nb[k] = node[k];
                grad[k] = (p - m) * 0.5 / grid.spacing(k);
            }
            let center = phi_at(node);
            for k in 0..n {
                for i in 0..n {
                    let second = if k == i {
                        nb[k] = node[k] + 1;
                        let p = phi_at(&nb);
                        nb[k] = node[k] - 1;
                        let m = phi_at(&nb);
                        nb[k] = node[k];
                        (p - 2.0 * center + m) / (grid.spacing(k) * grid.spacing(k))
                    } else {
                        nb[k] = node[k] + 1;
                        nb[i] = node[i] + 1;
                        let pp = phi_at(&nb);
                        nb[i] = node[i] - 1;
                        let pm = phi_at(&nb);
                        nb[k] = node[k] - 1;
                        let mm = phi_at(&nb);
                        nb[i] = node[i] + 1;
                        let mp = phi_at(&nb);
                        nb[k] = node[k];
                        nb[i] = node[i];
                        (pp - pm - mp + mm) / (4.0 * grid.spacing(k) * grid.spacing(i))
                    };
                    let mut v = second - g.get(&[k, i]);
                    for a in 0..n {
                        v -= c.get(&[a, k, i]) * grad[a];
                    }
                    local = local.max(v.abs());
                }
            }
            local
        })
        .reduce(|| 0.0, f64::max);
    Ok(worst)
}

/// Nested covariant gradient stack of a scalar field: returns the first,
/// second, and third derivative fields for the supplied connection, each one
/// margin layer deeper.
fn derivative_stack(
    phi: &GridField,
    gamma_at: &(dyn Fn(&[usize]) -> Tensor + Sync),
) -> (GridField, GridField, GridField) {
    let d1 = covariant_derivative_field(phi, &[], gamma_at);
    let d2 = covariant_derivative_field(&d1, &[Slot::Lower], gamma_at);
    let d3 = covariant_derivative_field(&d2, &[Slot::Lower, Slot::Lower], gamma_at);
    (d1, d2, d3)
}

/// Both third-derivative residuals of the potential against the lowered
/// product: `(max |D3 phi - P|, max |D3 phi - 2P|)`.
pub fn d3_phi_residuals(
    field: &ProductField,
    conn: &ConnectionField,
    potential: &PotentialField,
) -> Result<(f64, f64)> {
    let n = field.chart.dim();
    let coeffs = &conn.coeffs;
    let (_, _, d3) = derivative_stack(&potential.phi, &|node| coeffs.tensor_at(node));
    let nodes = field.grid.interior_nodes(d3.margin);
    if nodes.is_empty() {
        return Err(Error::Precondition("no interior nodes to check".into()));
    }
    let mut r1 = 0.0f64;
    let mut r2 = 0.0f64;
    for node in &nodes {
        let x = field.grid.coords(node);
        let g = field.chart.metric_at(&x)?.g;
        let p = field.star.tensor_at(node).apply_matrix(2, &g);
        let t = d3.tensor_at(node);
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    let v = t.get(&[k, j, i]);
                    let pv = p.get(&[i, j, k]);
                    r1 = r1.max((v - pv).abs());
                    r2 = r2.max((v - 2.0 * pv).abs());
                }
            }
        }
    }
    Ok((r1, r2))
}

/// Max residual of the potential consistency identity: the lowered product
/// plus the third covariant gradient of the potential plus the curvature
/// correction terms.
pub fn verify_hesse_frobenius_consistency(
    field: &ProductField,
    potential: &PotentialField,
) -> Result<f64> {
    let chart = &field.chart;
    let n = chart.dim();
    let grid = &field.grid;
    let kappa = chart.kappa();
    let gamma_of = |node: &[usize]| {
        let x = grid.coords(node);
        chart.christoffel_at(&x).expect("grid node inside chart")
    };
    let (d1, _, d3) = derivative_stack(&potential.phi, &gamma_of);
    let nodes = grid.interior_nodes(d3.margin);
    if nodes.is_empty() {
        return Err(Error::Precondition("no interior nodes to check".into()));
    }
    let mut worst = 0.0f64;
    for node in &nodes {
        let x = grid.coords(node);
        let g = chart.metric_at(&x)?.g;
        let p = field.star.tensor_at(node).apply_matrix(2, &g);
        let t3 = d3.tensor_at(node);
        let grad = d1.tensor_at(node);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let v = p.get(&[i, j, k])
                        + t3.get(&[k, j, i])
                        + kappa
                            * (2.0 * g.get(&[i, j]) * grad.get(&[k])
                                + g.get(&[i, k]) * grad.get(&[j])
                                + g.get(&[j, k]) * grad.get(&[i]));
                    worst = worst.max(v.abs());
                }
            }
        }
    }
    Ok(worst)
}

/// Shift a potential by an affine function of the affine coordinates:
/// `phi + c0 + sum_p c[p] xi^p`. Such shifts must leave every consistency
/// residual unchanged up to discretization error.
pub fn shifted_potential(
    potential: &PotentialField,
    affine: &AffineChart,
    c0: f64,
    c: &[f64],
) -> Result<PotentialField> {
    let n = potential.chart.dim();
    if c.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: c.len(),
        });
    }
    let mut phi = potential.phi.clone();
    for node in potential.grid.all_nodes() {
        let xi = affine.xi.tensor_at(&node);
        let mut t = phi.tensor_at(&node);
        let shift: f64 = c0 + (0..n).map(|p| c[p] * xi.get(&[p])).sum::<f64>();
        t.set(&[], t.get(&[]) + shift);
        phi.set_tensor_at(&node, &t);
    }
    Ok(PotentialField {
        chart: potential.chart.clone(),
        grid: potential.grid.clone(),
        phi,
        role: potential.role,
    })
}

/// Contract the finite-difference derivative defect of the field with a
/// candidate potential differential; max norm over usable nodes.
pub fn check_weak_condition(field: &ProductField, dphi: &GridField) -> Result<f64> {
    let chart = &field.chart;
    let n = chart.dim();
    if dphi.rank != 1 {
        return Err(Error::Precondition("dphi must be a one-form field".into()));
    }
    let margin = (field.star.margin + 1).max(dphi.margin);
    let nodes = field.grid.interior_nodes(margin);
    if nodes.is_empty() {
        return Err(Error::Precondition("no interior nodes to check".into()));
    }
    let worst: Result<Vec<f64>> = nodes
        .par_iter()
        .map(|node| {
            let x = field.grid.coords(node);
            let metric = chart.metric_at(&x)?;
            let gamma = chart.christoffel_at(&x)?;
            let star = field.star.tensor_at(node);
            let grad = covariant_derivative_at(
                &field.star,
                &[Slot::Lower, Slot::Lower, Slot::Upper],
                node,
                &gamma,
            )?;
            let defect = grad.sub(&covariant_rhs(&metric, chart.kappa(), &star));
            let d = dphi.tensor_at(node);
            let mut local = 0.0f64;
            for k in 0..n {
                for i in 0..n {
                    for j in 0..n {
                        let v: f64 = (0..n)
                            .map(|l| defect.get(&[k, i, j, l]) * d.get(&[l]))
                            .sum();
                        local = local.max(v.abs());
                    }
                }
            }
            Ok(local)
        })
        .collect();
    Ok(worst?.into_iter().fold(0.0, f64::max))
}

/// Max residual of the second-order relation between two potentials for the
/// same field: the third gradient of their sum balanced against derivative
/// and quadratic terms of the product contracted with the first potential's
/// gradient, plus curvature terms in the second.
pub fn difference_of_potentials_residual(
    field: &ProductField,
    phi: &PotentialField,
    psi: &PotentialField,
) -> Result<f64> {
    let chart = &field.chart;
    let n = chart.dim();
    let grid = &field.grid;
    let kappa = chart.kappa();
    // Scalar sum field.
    let mut sum = GridField::zeros(grid.clone(), 0);
    sum.margin = phi.phi.margin.max(psi.phi.margin);
    for node in grid.all_nodes() {
        let mut t = Tensor::zeros(n, 0);
        t.set(
            &[],
            phi.phi.tensor_at(&node).get(&[]) + psi.phi.tensor_at(&node).get(&[]),
        );
        sum.set_tensor_at(&node, &t);
    }
    let gamma_of = |node: &[usize]| {
        let x = grid.coords(node);
        chart.christoffel_at(&x).expect("grid node inside chart")
    };
    let (_, _, d3sum) = derivative_stack(&sum, &gamma_of);
    let dphi = covariant_derivative_field(&phi.phi, &[], &gamma_of);
    let dpsi = covariant_derivative_field(&psi.phi, &[], &gamma_of);
    let nodes = grid.interior_nodes(d3sum.margin.max(field.star.margin + 1));
    if nodes.is_empty() {
        return Err(Error::Precondition("no interior nodes to check".into()));
    }
    let worst: Result<Vec<f64>> = nodes
        .par_iter()
        .map(|node| {
            let x = grid.coords(node);
            let metric = chart.metric_at(&x)?;
            let gamma = chart.christoffel_at(&x)?;
            let star = field.star.tensor_at(node);
            let dstar = covariant_derivative_at(
                &field.star,
                &[Slot::Lower, Slot::Lower, Slot::Upper],
                node,
                &gamma,
            )?;
            let t3 = d3sum.tensor_at(node);
            let gphi = dphi.tensor_at(node);
            let gpsi = dpsi.tensor_at(node);
            let mut local = 0.0f64;
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        let mut v = t3.get(&[k, j, i]);
                        for a in 0..n {
                            v += dstar.get(&[k, i, j, a]) * gphi.get(&[a]);
                        }
                        for b in 0..n {
                            for a in 0..n {
                                v -= star.get(&[i, j, b])
                                    * star.get(&[b, k, a])
                                    * gphi.get(&[a]);
                            }
                        }
                        v += kappa
                            * (2.0 * metric.g.get(&[i, j]) * gpsi.get(&[k])
                                + metric.g.get(&[i, k]) * gpsi.get(&[j])
                                + metric.g.get(&[j, k]) * gpsi.get(&[i]));
                        local = local.max(v.abs());
                    }
                }
            }
            Ok(local)
        })
        .collect();
    Ok(worst?.into_iter().fold(0.0, f64::max))
}
