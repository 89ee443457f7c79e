//! Constant-curvature model charts: the conformal metric, its Levi-Civita
//! connection, and the curvature tensor in both analytic and
//! finite-difference form.

use crate::error::{Error, Result};
use crate::tensor::{central_diff, Tensor};

/// Threshold below which a chart counts as flat.
pub const FLAT_KAPPA_TOL: f64 = 1e-12;

/// One coordinate chart of a constant-curvature space: the metric is
/// `g_ij = delta_ij / u^2` with `u = 1 + kappa |x|^2 / 4`, valid on the
/// Euclidean ball of the given radius.
#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    n: usize,
    kappa: f64,
    domain_radius: f64,
}

/// Metric and its inverse evaluated at one point.
#[derive(Debug, Clone)]
pub struct MetricAtPoint {
    pub g: Tensor,
    pub g_inv: Tensor,
}

impl MetricAtPoint {
    pub fn euclidean(n: usize) -> Self {
        let id = Tensor::from_fn(n, 2, |ix| if ix[0] == ix[1] { 1.0 } else { 0.0 });
        MetricAtPoint {
            g: id.clone(),
            g_inv: id,
        }
    }

    pub fn n(&self) -> usize {
        self.g.n()
    }

    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        let n = self.n();
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                acc += self.g.get(&[i, j]) * u[i] * v[j];
            }
        }
        acc
    }
}

impl Chart {
    pub fn new(n: usize, kappa: f64, domain_radius: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::Precondition(format!(
                "chart dimension must be at least 2, got {n}"
            )));
        }
        if !domain_radius.is_finite() || domain_radius <= 0.0 {
            return Err(Error::Precondition(
                "chart domain radius must be positive and finite".into(),
            ));
        }
        if !kappa.is_finite() {
            return Err(Error::Precondition("curvature must be finite".into()));
        }
        if kappa > 0.0 {
            let limit = 2.0 / kappa.sqrt();
            if domain_radius >= limit {
                return Err(Error::Precondition(format!(
                    "domain radius {domain_radius} reaches the conformal boundary {limit:.6} \
                     for curvature {kappa}"
                )));
            }
        }
        Ok(Chart {
            n,
            kappa,
            domain_radius,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn domain_radius(&self) -> f64 {
        self.domain_radius
    }

    pub fn is_flat(&self) -> bool {
        self.kappa.abs() <= FLAT_KAPPA_TOL
    }

    pub fn check_inside(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: x.len(),
            });
        }
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if r > self.domain_radius * (1.0 + 1e-12) {
            return Err(Error::OutsideDomain {
                radius: r,
                limit: self.domain_radius,
            });
        }
        Ok(())
    }

    /// Conformal factor `u = 1 + kappa |x|^2 / 4`.
    pub fn conformal_factor(&self, x: &[f64]) -> f64 {
        1.0 + 0.25 * self.kappa * x.iter().map(|v| v * v).sum::<f64>()
    }

    pub fn metric_at(&self, x: &[f64]) -> Result<MetricAtPoint> {
        self.check_inside(x)?;
        let u = self.conformal_factor(x);
        let (s, si) = (1.0 / (u * u), u * u);
        let g = Tensor::from_fn(self.n, 2, |ix| if ix[0] == ix[1] { s } else { 0.0 });
        let g_inv = Tensor::from_fn(self.n, 2, |ix| if ix[0] == ix[1] { si } else { 0.0 });
        Ok(MetricAtPoint { g, g_inv })
    }

    /// Analytic metric derivative `d_k g_ij = -kappa x_k delta_ij / u^3`,
    /// laid out `[k][i][j]`.
    pub fn dmetric_at(&self, x: &[f64]) -> Result<Tensor> {
        self.check_inside(x)?;
        let u = self.conformal_factor(x);
        let c = -self.kappa / (u * u * u);
        Ok(Tensor::from_fn(self.n, 3, |ix| {
            if ix[1] == ix[2] {
                c * x[ix[0]]
            } else {
                0.0
            }
        }))
    }

    /// Christoffel symbols `G^a_{kl}`, laid out `[a][k][l]`.
    pub fn christoffel_at(&self, x: &[f64]) -> Result<Tensor> {
        self.check_inside(x)?;
        let u = self.conformal_factor(x);
        let c = -self.kappa / (2.0 * u);
        Ok(Tensor::from_fn(self.n, 3, |ix| {
            let (a, k, l) = (ix[0], ix[1], ix[2]);
            let mut v = 0.0;
            if a == k {
                v += x[l];
            }
            if a == l {
                v += x[k];
            }
            if k == l {
                v -= x[a];
            }
            c * v
        }))
    }

    /// Curvature tensor `R^a_{jkl} = kappa (g_jl delta^a_k - g_jk delta^a_l)`,
    /// laid out `[a][j][k][l]`.
    pub fn riemann_at(&self, x: &[f64]) -> Result<Tensor> {
        let m = self.metric_at(x)?;
        let kappa = self.kappa;
        Ok(Tensor::from_fn(self.n, 4, |ix| {
            let (a, j, k, l) = (ix[0], ix[1], ix[2], ix[3]);
            let mut v = 0.0;
            if a == k {
                v += m.g.get(&[j, l]);
            }
            if a == l {
                v -= m.g.get(&[j, k]);
            }
            kappa * v
        }))
    }

    /// Fully lowered curvature `R_ijkl = kappa (g_ik g_jl - g_il g_jk)`.
    pub fn riemann_lowered_at(&self, x: &[f64]) -> Result<Tensor> {
        let m = self.metric_at(x)?;
        let kappa = self.kappa;
        Ok(Tensor::from_fn(self.n, 4, |ix| {
            let (i, j, k, l) = (ix[0], ix[1], ix[2], ix[3]);
            kappa * (m.g.get(&[i, k]) * m.g.get(&[j, l]) - m.g.get(&[i, l]) * m.g.get(&[j, k]))
        }))
    }

    /// Curvature from finite differences of the Christoffel symbols,
    /// `R^a_{jkl} = d_k G^a_{lj} - d_l G^a_{kj} + G^a_{kb} G^b_{lj} - G^a_{lb} G^b_{kj}`.
    /// Serves as the independent cross-check of `riemann_at`.
    pub fn riemann_fd_at(&self, x: &[f64], h: f64) -> Result<Tensor> {
        self.check_inside(x)?;
        let n = self.n;
        let gamma = self.christoffel_at(x)?;
        let mut dgamma = Tensor::zeros(n, 4); // [k][a][l][j] as d_k G^a_{lj}
        for k in 0..n {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[k] += h;
            xm[k] -= h;
            let gp = self.christoffel_at(&xp)?;
            let gm = self.christoffel_at(&xm)?;
            for a in 0..n {
                for l in 0..n {
                    for j in 0..n {
                        dgamma.set(
                            &[k, a, l, j],
                            (gp.get(&[a, l, j]) - gm.get(&[a, l, j])) / (2.0 * h),
                        );
                    }
                }
            }
        }
        Ok(Tensor::from_fn(n, 4, |ix| {
            let (a, j, k, l) = (ix[0], ix[1], ix[2], ix[3]);
            let mut v = dgamma.get(&[k, a, l, j]) - dgamma.get(&[l, a, k, j]);
            for b in 0..n {
                v += gamma.get(&[a, k, b]) * gamma.get(&[b, l, j]);
                v -= gamma.get(&[a, l, b]) * gamma.get(&[b, k, j]);
            }
            v
        }))
    }

    /// Default step for point-based finite-difference checks.
    pub fn default_fd_step(&self) -> f64 {
        1e-3 * self.domain_radius
    }

    pub fn scalar_curvature(&self) -> f64 {
        (self.n * (self.n - 1)) as f64 * self.kappa
    }
}

/// Christoffel symbols assembled from finite differences of the metric,
/// an oracle path independent of the closed form.
pub fn christoffel_from_metric_fd(chart: &Chart, x: &[f64], h: f64) -> Result<Tensor> {
    let n = chart.dim();
    let m = chart.metric_at(x)?;
    let mut dg = Tensor::zeros(n, 3); // [k][i][j]
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let f = |y: &[f64]| {
                    let mm = chart.metric_at(y).expect("stencil stays inside the chart");
                    mm.g.get(&[i, j])
                };
                dg.set(&[k, i, j], central_diff(&f, x, k, h));
            }
        }
    }
    Ok(Tensor::from_fn(n, 3, |ix| {
        let (a, k, l) = (ix[0], ix[1], ix[2]);
        let mut v = 0.0;
        for b in 0..n {
            v += 0.5
                * m.g_inv.get(&[a, b])
                * (dg.get(&[k, b, l]) + dg.get(&[l, b, k]) - dg.get(&[b, k, l]));
        }
        v
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max_diff(a: &Tensor, b: &Tensor) -> f64 {
        a.sub(b).max_abs()
    }

    #[test]
    fn conformal_factor_and_metric_values() {
        let chart = Chart::new(2, 1.0, 0.8).unwrap();
        let x = [0.1, 0.2];
        let u = chart.conformal_factor(&x);
        assert!((u - 1.0125).abs() < 1e-15);
        let m = chart.metric_at(&x).unwrap();
        assert!((m.g.get(&[0, 0]) - 1.0 / (1.0125f64 * 1.0125)).abs() < 1e-15);
        assert_eq!(m.g.get(&[0, 1]), 0.0);
    }

    #[test]
    fn metric_inverse_is_exact_to_rounding() {
        for kappa in [1.0, -1.0, 0.0] {
            let chart = Chart::new(3, kappa, 0.8).unwrap();
            let m = chart.metric_at(&[0.1, -0.2, 0.3]).unwrap();
            for i in 0..3 {
                for j in 0..3 {
                    let mut acc = 0.0;
                    for k in 0..3 {
                        acc += m.g.get(&[i, k]) * m.g_inv.get(&[k, j]);
                    }
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((acc - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn christoffel_matches_metric_fd_oracle() {
        for (n, kappa) in [(2, 1.0), (2, -1.0), (3, 1.0), (3, -0.7)] {
            let chart = Chart::new(n, kappa, 0.8).unwrap();
            let x: Vec<f64> = (0..n).map(|i| 0.1 + 0.07 * i as f64).collect();
            let analytic = chart.christoffel_at(&x).unwrap();
            let fd = christoffel_from_metric_fd(&chart, &x, 1e-5).unwrap();
            assert!(max_diff(&analytic, &fd) < 1e-9, "n={n} kappa={kappa}");
        }
    }

    #[test]
    fn dmetric_matches_fd() {
        let chart = Chart::new(3, -0.7, 0.8).unwrap();
        let x = [0.1, 0.17, 0.24];
        let analytic = chart.dmetric_at(&x).unwrap();
        let mut fd = Tensor::zeros(3, 3);
        for k in 0..3 {
            for i in 0..3 {
                for j in 0..3 {
                    let f = |y: &[f64]| chart.metric_at(y).unwrap().g.get(&[i, j]);
                    fd.set(&[k, i, j], central_diff(&f, &x, k, 1e-5));
                }
            }
        }
        assert!(max_diff(&analytic, &fd) < 1e-9);
    }

    #[test]
    fn riemann_analytic_matches_fd() {
        for (n, kappa) in [(2, 1.0), (3, -1.0)] {
            let chart = Chart::new(n, kappa, 0.8).unwrap();
            let x: Vec<f64> = (0..n).map(|i| 0.1 + 0.1 * i as f64).collect();
            let analytic = chart.riemann_at(&x).unwrap();
            let fd = chart.riemann_fd_at(&x, 1e-4).unwrap();
            assert!(max_diff(&analytic, &fd) < 1e-7, "n={n} kappa={kappa}");
        }
    }

    #[test]
    fn lowered_riemann_agrees_with_index_lowering() {
        let chart = Chart::new(3, 1.0, 0.8).unwrap();
        let x = [0.1, -0.15, 0.2];
        let m = chart.metric_at(&x).unwrap();
        let upper = chart.riemann_at(&x).unwrap();
        let lowered = upper.apply_matrix(0, &m.g);
        let direct = chart.riemann_lowered_at(&x).unwrap();
        assert!(max_diff(&lowered, &direct) < 1e-14);
    }

    #[test]
    fn lowered_riemann_symmetries_and_bianchi() {
        let chart = Chart::new(3, -0.8, 0.8).unwrap();
        let x = [0.2, 0.1, -0.05];
        let r = chart.riemann_lowered_at(&x).unwrap();
        let n = 3;
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        let v = r.get(&[i, j, k, l]);
                        worst = worst.max((v + r.get(&[j, i, k, l])).abs());
                        worst = worst.max((v + r.get(&[i, j, l, k])).abs());
                        worst = worst.max((v - r.get(&[k, l, i, j])).abs());
                        let bianchi = v + r.get(&[i, k, l, j]) + r.get(&[i, l, j, k]);
                        worst = worst.max(bianchi.abs());
                    }
                }
            }
        }
        assert!(worst < 1e-13);
    }

    #[test]
    fn scalar_curvature_from_double_trace() {
        let chart = Chart::new(3, 0.9, 0.8).unwrap();
        let x = [0.1, 0.2, -0.1];
        let m = chart.metric_at(&x).unwrap();
        let r = chart.riemann_lowered_at(&x).unwrap();
        let mut scal = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    for l in 0..3 {
                        scal += m.g_inv.get(&[i, k]) * m.g_inv.get(&[j, l]) * r.get(&[i, j, k, l]);
                    }
                }
            }
        }
        assert!((scal - chart.scalar_curvature()).abs() < 1e-10);
        assert!((chart.scalar_curvature() - 5.4).abs() < 1e-12);
    }

    #[test]
    fn flat_chart_has_zero_connection_and_curvature() {
        let chart = Chart::new(2, 0.0, 1.5).unwrap();
        let x = [0.3, -0.4];
        assert_eq!(chart.christoffel_at(&x).unwrap().max_abs(), 0.0);
        assert_eq!(chart.riemann_at(&x).unwrap().max_abs(), 0.0);
        assert!(chart.is_flat());
        assert!(Chart::new(2, 1e-13, 1.0).unwrap().is_flat());
        assert!(!Chart::new(2, 1e-11, 1.0).unwrap().is_flat());
    }

    #[test]
    fn domain_checks() {
        assert!(Chart::new(2, 1.0, 2.1).is_err());
        assert!(Chart::new(2, 1.0, 1.9).is_ok());
        assert!(Chart::new(1, 0.0, 1.0).is_err());
        let chart = Chart::new(2, 1.0, 0.4).unwrap();
        assert!(chart.metric_at(&[0.3, 0.3]).is_err());
        assert!(chart.metric_at(&[0.2, 0.2]).is_ok());
        assert!(matches!(
            chart.metric_at(&[0.5, 0.0]).unwrap_err(),
            Error::OutsideDomain { .. }
        ));
    }
}
