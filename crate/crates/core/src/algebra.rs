//! Pointwise commutative products, their associator structure, the curvature
//! signature fit, and the classification of a structure at a point.

use crate::error::{Error, Result};
use crate::geometry::MetricAtPoint;
use crate::tensor::Tensor;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Relative residual above which a curvature-signature fit is rejected.
pub const MU_FIT_REL_TOL: f64 = 1e-8;
/// Fitted values of `mu` below this count as zero.
pub const MU_ZERO_TOL: f64 = 1e-8;
/// Commutator norm below which endomorphisms count as commuting.
pub const COMMUTING_TOL: f64 = 1e-10;
/// Associator norm below which a product counts as associative.
pub const ASSOCIATIVE_TOL: f64 = 1e-8;

/// A product on the tangent space at one point, stored as `star[i][j][^l]`
/// (two lower slots, one upper), together with the metric there.
#[derive(Debug, Clone)]
pub struct ProductAtPoint {
    pub star: Tensor,
    pub metric: MetricAtPoint,
}

impl ProductAtPoint {
    pub fn new(star: Tensor, metric: MetricAtPoint) -> Result<Self> {
        if star.rank() != 3 {
            return Err(Error::Precondition(
                "product tensor must have rank 3".into(),
            ));
        }
        if star.n() != metric.n() {
            return Err(Error::DimensionMismatch {
                expected: metric.n(),
                got: star.n(),
            });
        }
        Ok(ProductAtPoint { star, metric })
    }

    /// Build from the fully lowered coefficients by raising the last slot.
    pub fn from_lowered(p: &Tensor, metric: MetricAtPoint) -> Result<Self> {
        let star = p.apply_matrix(2, &metric.g_inv);
        ProductAtPoint::new(star, metric)
    }

    pub fn n(&self) -> usize {
        self.star.n()
    }

    pub fn zero(metric: MetricAtPoint) -> Self {
        let n = metric.n();
        ProductAtPoint {
            star: Tensor::zeros(n, 3),
            metric,
        }
    }

    /// Fully lowered coefficients `P_ijk`.
    pub fn lowered(&self) -> Tensor {
        self.star.apply_matrix(2, &self.metric.g)
    }

    pub fn multiply(&self, u: &[f64], v: &[f64]) -> Vec<f64> {
        let n = self.n();
        let mut out = vec![0.0; n];
        for i in 0..n {
            if u[i] == 0.0 {
                continue;
            }
            for j in 0..n {
                if v[j] == 0.0 {
                    continue;
                }
                for l in 0..n {
                    out[l] += self.star.get(&[i, j, l]) * u[i] * v[j];
                }
            }
        }
        out
    }

    /// Multiplication endomorphism of `u` as a matrix `M[l][j]`, so that
    /// `M v = u * v`.
    pub fn endo(&self, u: &[f64]) -> Tensor {
        let n = self.n();
        Tensor::from_fn(n, 2, |ix| {
            let (l, j) = (ix[0], ix[1]);
            (0..n).map(|i| u[i] * self.star.get(&[i, j, l])).sum()
        })
    }

    fn basis_endo(&self, i: usize) -> Tensor {
        let n = self.n();
        Tensor::from_fn(n, 2, |ix| self.star.get(&[i, ix[1], ix[0]]))
    }

    pub fn commutativity_residual(&self) -> f64 {
        let n = self.n();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                for l in 0..n {
                    worst = worst
                        .max((self.star.get(&[i, j, l]) - self.star.get(&[j, i, l])).abs());
                }
            }
        }
        worst
    }

    /// Deviation of the lowered coefficients from total symmetry.
    pub fn compatibility_residual(&self) -> f64 {
        let p = self.lowered();
        let n = self.n();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let v = p.get(&[i, j, k]);
                    worst = worst.max((v - p.get(&[j, i, k])).abs());
                    worst = worst.max((v - p.get(&[i, k, j])).abs());
                }
            }
        }
        worst
    }

    pub fn associator(&self, u: &[f64], v: &[f64], w: &[f64]) -> Vec<f64> {
        let uv_w = self.multiply(&self.multiply(u, v), w);
        let u_vw = self.multiply(u, &self.multiply(v, w));
        uv_w.iter().zip(&u_vw).map(|(a, b)| a - b).collect()
    }

    /// Associator components over the coordinate basis, laid out
    /// `assoc[i][k][j][l] = Assoc(e_i, e_k, e_j)^l`.
    pub fn associator_tensor(&self) -> Tensor {
        let n = self.n();
        let mut out = Tensor::zeros(n, 4);
        let basis: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        for i in 0..n {
            for k in 0..n {
                for j in 0..n {
                    let a = self.associator(&basis[i], &basis[k], &basis[j]);
                    for (l, v) in a.iter().enumerate() {
                        out.set(&[i, k, j, l], *v);
                    }
                }
            }
        }
        out
    }

    /// Max norm of all basis endomorphism commutators.
    pub fn commutator_norm(&self) -> f64 {
        let n = self.n();
        let endos: Vec<Tensor> = (0..n).map(|i| self.basis_endo(i)).collect();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in i + 1..n {
                worst = worst.max(commutator(&endos[i], &endos[j]).max_abs());
            }
        }
        worst
    }
}

fn commutator(a: &Tensor, b: &Tensor) -> Tensor {
    let n = a.n();
    Tensor::from_fn(n, 2, |ix| {
        let (i, j) = (ix[0], ix[1]);
        (0..n)
            .map(|k| a.get(&[i, k]) * b.get(&[k, j]) - b.get(&[i, k]) * a.get(&[k, j]))
            .sum()
    })
}

/// Curvature signature of a product: the coefficient `mu` in the fit of
/// endomorphism commutators against the curvature operator, and its sign.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Signature {
    pub mu: Option<f64>,
    pub epsilon: i8,
    pub indeterminate: bool,
    pub fit_residual: f64,
}

/// Raw least-squares fit of `[star(e_i), star(e_j)] = mu R(e_i, e_j)`,
/// with no acceptance thresholds applied.
#[derive(Debug, Clone, Copy)]
pub struct MuFit {
    pub mu: Option<f64>,
    pub rel_residual: f64,
    pub comm_norm: f64,
    pub r_norm: f64,
}

pub fn fit_mu_raw(prod: &ProductAtPoint, riemann: &Tensor) -> MuFit {
    let n = prod.n();
    let endos: Vec<Tensor> = (0..n).map(|i| prod.basis_endo(i)).collect();
    let mut dot_cr = 0.0;
    let mut dot_rr = 0.0;
    let mut comm_norm = 0.0f64;
    let mut r_norm = 0.0f64;
    let mut pairs = Vec::new();
    for k in 0..n {
        for l in k + 1..n {
            let c = commutator(&endos[k], &endos[l]);
            let r = Tensor::from_fn(n, 2, |ix| riemann.get(&[ix[0], ix[1], k, l]));
            comm_norm = comm_norm.max(c.max_abs());
            r_norm = r_norm.max(r.max_abs());
            for (cv, rv) in c.data().iter().zip(r.data()) {
                dot_cr += cv * rv;
                dot_rr += rv * rv;
            }
            pairs.push((c, r));
        }
    }
    if r_norm <= 1e-14 {
        return MuFit {
            mu: None,
            rel_residual: comm_norm,
            comm_norm,
            r_norm,
        };
    }
    let mu = dot_cr / dot_rr;
    let mut resid = 0.0f64;
    for (c, r) in &pairs {
        resid = resid.max(c.sub(&r.scaled(mu)).max_abs());
    }
    MuFit {
        mu: Some(mu),
        rel_residual: resid / r_norm.max(1.0),
        comm_norm,
        r_norm,
    }
}

/// Fit `[star(e_i), star(e_j)] = mu R(e_i, e_j)` by least squares over all
/// index pairs. `riemann` is the `[a][j][k][l]` curvature tensor at the
/// point, so `R(e_k, e_l)` has matrix entries `riemann[a][b][k][l]`.
///
/// On a flat chart the curvature vanishes and `mu` is indeterminate; the
/// commutators must then vanish for the product to qualify at all.
pub fn estimate_mu(prod: &ProductAtPoint, riemann: &Tensor) -> Result<Signature> {
    let fit = fit_mu_raw(prod, riemann);
    if fit.r_norm <= 1e-14 {
        let comm_norm = fit.comm_norm;
        if comm_norm > COMMUTING_TOL {
            return Err(Error::Numerical(format!(
                "not a curved Frobenius product: curvature vanishes but endomorphism \
                 commutators have norm {comm_norm:.3e}"
            )));
        }
        return Ok(Signature {
            mu: None,
            epsilon: 0,
            indeterminate: true,
            fit_residual: comm_norm,
        });
    }
    let mu = fit.mu.expect("curvature is nonzero, so the fit is determinate");
    let rel = fit.rel_residual;
    if rel > MU_FIT_REL_TOL {
        return Err(Error::Numerical(format!(
            "not a curved Frobenius product: commutator fit residual {rel:.3e} \
             exceeds {MU_FIT_REL_TOL:.1e}"
        )));
    }
    let epsilon = if mu.abs() <= MU_ZERO_TOL {
        0
    } else if mu > 0.0 {
        1
    } else {
        -1
    };
    Ok(Signature {
        mu: Some(mu),
        epsilon,
        indeterminate: false,
        fit_residual: rel,
    })
}

/// Rescale a product to unit curvature coefficient: the zero product when
/// `mu` is zero, `star / sqrt(|mu|)` otherwise. Indeterminate signatures
/// (flat charts) skip the division; a non-commuting product with an
/// indeterminate signature is rejected.
pub fn normalize(prod: &ProductAtPoint, sig: &Signature) -> Result<ProductAtPoint> {
    if sig.indeterminate {
        if prod.commutator_norm() > COMMUTING_TOL {
            return Err(Error::Precondition(
                "cannot normalize: signature is indeterminate and endomorphisms do not commute"
                    .into(),
            ));
        }
        return Ok(prod.clone());
    }
    let mu = sig.mu.ok_or_else(|| {
        Error::Precondition("determinate signature is missing its mu value".into())
    })?;
    if mu.abs() <= MU_ZERO_TOL {
        return Ok(ProductAtPoint::zero(prod.metric.clone()));
    }
    Ok(ProductAtPoint {
        star: prod.star.scaled(1.0 / mu.abs().sqrt()),
        metric: prod.metric.clone(),
    })
}

/// Associator diagnostics at one point.
#[derive(Debug, Clone)]
pub struct AssociatorReport {
    pub assoc: Tensor,
    pub cyclic_residual: f64,
    pub lie_triple_residual: f64,
    pub jordan_residual: f64,
}

fn triple(prod: &ProductAtPoint, x: &[f64], y: &[f64], z: &[f64]) -> Vec<f64> {
    // C(X, Y, Z) = Assoc(X, Z, Y), the curvature-shaped arrangement of the
    // associator; the five-term identity below is stated for this bracket.
    prod.associator(x, z, y)
}

/// Evaluate the associator structure: cyclic sum, five-term triple identity,
/// and the Jordan defect on deterministic sample vectors.
pub fn check_lie_triple(prod: &ProductAtPoint) -> AssociatorReport {
    let n = prod.n();
    let assoc = prod.associator_tensor();
    let mut cyclic = 0.0f64;
    for i in 0..n {
        for k in 0..n {
            for j in 0..n {
                for l in 0..n {
                    let s = assoc.get(&[i, k, j, l])
                        + assoc.get(&[k, j, i, l])
                        + assoc.get(&[j, i, k, l]);
                    cyclic = cyclic.max(s.abs());
                }
            }
        }
    }

    let basis: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let mut five = 0.0f64;
    for u in 0..n {
        for v in 0..n {
            for w1 in 0..n {
                for w2 in 0..n {
                    for w3 in 0..n {
                        let inner = triple(prod, &basis[w1], &basis[w2], &basis[w3]);
                        let lhs = triple(prod, &basis[u], &basis[v], &inner);
                        let t1 = triple(prod, &basis[u], &basis[v], &basis[w1]);
                        let r1 = triple(prod, &t1, &basis[w2], &basis[w3]);
                        let t2 = triple(prod, &basis[u], &basis[v], &basis[w2]);
                        let r2 = triple(prod, &basis[w1], &t2, &basis[w3]);
                        let t3 = triple(prod, &basis[u], &basis[v], &basis[w3]);
                        let r3 = triple(prod, &basis[w1], &basis[w2], &t3);
                        for l in 0..n {
                            five = five.max((lhs[l] - r1[l] - r2[l] - r3[l]).abs());
                        }
                    }
                }
            }
        }
    }

    AssociatorReport {
        assoc,
        cyclic_residual: cyclic,
        lie_triple_residual: five,
        jordan_residual: jordan_defect(prod),
    }
}

fn jordan_defect(prod: &ProductAtPoint) -> f64 {
    let n = prod.n();
    let mut rng = ChaCha8Rng::seed_from_u64(0x6a6f7264);
    let mut worst = 0.0f64;
    for _ in 0..24 {
        let x: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        let xx = prod.multiply(&x, &x);
        let lhs = prod.multiply(&xx, &prod.multiply(&x, &y));
        let rhs = prod.multiply(&x, &prod.multiply(&xx, &y));
        for l in 0..n {
            worst = worst.max((lhs[l] - rhs[l]).abs());
        }
    }
    worst
}

/// Jordan identity residual for a product on a flat chart. Requires the
/// endomorphisms to commute, which is the flat compatibility condition.
pub fn check_jordan_flat(prod: &ProductAtPoint) -> Result<f64> {
    let comm = prod.commutator_norm();
    if comm > COMMUTING_TOL {
        return Err(Error::Precondition(format!(
            "Jordan check requires commuting endomorphisms; commutator norm is {comm:.3e}"
        )));
    }
    Ok(jordan_defect(prod))
}

/// Fit the antisymmetrized associator against the metric curvature shape
/// `Psi(X ^ Y) Z = g(X,Z) Y - g(Y,Z) X`, returning the coefficient and the
/// fit residual. For a curved Frobenius product the coefficient is
/// `mu * kappa`.
pub fn curvature_form_fit(prod: &ProductAtPoint) -> (f64, f64) {
    let n = prod.n();
    let assoc = prod.associator_tensor();
    let g = &prod.metric.g;
    // a[i][j][z][l] = Assoc(e_i, e_z, e_j)^l versus psi[i][j][z][l].
    let mut dot_ap = 0.0;
    let mut dot_pp = 0.0;
    let mut psi = Tensor::zeros(n, 4);
    for i in 0..n {
        for j in 0..n {
            for z in 0..n {
                for l in 0..n {
                    let mut p = 0.0;
                    if l == j {
                        p += g.get(&[i, z]);
                    }
                    if l == i {
                        p -= g.get(&[j, z]);
                    }
                    psi.set(&[i, j, z, l], p);
                    let a = assoc.get(&[i, z, j, l]);
                    dot_ap += a * p;
                    dot_pp += p * p;
                }
            }
        }
    }
    if dot_pp == 0.0 {
        return (0.0, assoc.max_abs());
    }
    let c = dot_ap / dot_pp;
    let mut resid = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            for z in 0..n {
                for l in 0..n {
                    let a = assoc.get(&[i, z, j, l]);
                    resid = resid.max((a - c * psi.get(&[i, j, z, l])).abs());
                }
            }
        }
    }
    (c, resid)
}

/// Structure classes a point can fall into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Class {
    Hessian,
    SkewHessian,
    NonflatAssociative,
    ManinFrobenius,
}

impl std::fmt::Display for Class {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Class::Hessian => "hessian",
            Class::SkewHessian => "skew_hessian",
            Class::NonflatAssociative => "nonflat_associative",
            Class::ManinFrobenius => "manin_frobenius",
        };
        f.write_str(s)
    }
}

/// Classify a structure from its signature, the flatness of the chart, and
/// the associator residual. Inconsistent combinations are rejected rather
/// than forced into a class.
pub fn classify(sig: &Signature, flat: bool, assoc_residual: f64) -> Result<Class> {
    if flat {
        if !sig.indeterminate {
            if let Some(mu) = sig.mu {
                if mu.abs() > MU_ZERO_TOL {
                    return Err(Error::Precondition(format!(
                        "inconsistent input: flat chart with nonzero mu = {mu:.3e}"
                    )));
                }
            }
        }
        return Ok(Class::ManinFrobenius);
    }
    if sig.indeterminate {
        return Err(Error::Precondition(
            "inconsistent input: curved chart with indeterminate signature".into(),
        ));
    }
    match sig.epsilon {
        -1 => Ok(Class::Hessian),
        1 => Ok(Class::SkewHessian),
        _ => {
            if assoc_residual <= ASSOCIATIVE_TOL {
                Ok(Class::NonflatAssociative)
            } else {
                Err(Error::Precondition(format!(
                    "inconsistent input: mu = 0 on a curved chart requires associativity, \
                     but the associator residual is {assoc_residual:.3e}"
                )))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Chart;

    /// Explicit seed product at the origin of the curvature-1 chart in
    /// dimension 2: lowered coefficients have the single symmetric orbit
    /// `P_122 = 1`.
    fn seed_n2() -> ProductAtPoint {
        let mut star = Tensor::zeros(2, 3);
        star.set(&[0, 1, 1], 1.0);
        star.set(&[1, 0, 1], 1.0);
        star.set(&[1, 1, 0], 1.0);
        ProductAtPoint::new(star, MetricAtPoint::euclidean(2)).unwrap()
    }

    fn riemann_origin(n: usize, kappa: f64) -> Tensor {
        Chart::new(n, kappa, 0.8)
            .unwrap()
            .riemann_at(&vec![0.0; n])
            .unwrap()
    }

    #[test]
    fn seed_multiplication_table() {
        let p = seed_n2();
        assert_eq!(p.multiply(&[0.0, 1.0], &[0.0, 1.0]), vec![1.0, 0.0]);
        assert_eq!(p.multiply(&[1.0, 0.0], &[0.0, 1.0]), vec![0.0, 1.0]);
        assert_eq!(p.multiply(&[1.0, 0.0], &[1.0, 0.0]), vec![0.0, 0.0]);
        assert_eq!(p.commutativity_residual(), 0.0);
        assert_eq!(p.compatibility_residual(), 0.0);
    }

    #[test]
    fn endo_matches_multiplication() {
        let p = seed_n2();
        let u = [0.3, -0.7];
        let v = [0.9, 0.4];
        let m = p.endo(&u);
        let direct = p.multiply(&u, &v);
        for l in 0..2 {
            let applied: f64 = (0..2).map(|j| m.get(&[l, j]) * v[j]).sum();
            assert!((applied - direct[l]).abs() < 1e-15);
        }
    }

    #[test]
    fn seed_signature_is_minus_one() {
        let p = seed_n2();
        let sig = estimate_mu(&p, &riemann_origin(2, 1.0)).unwrap();
        assert!((sig.mu.unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(sig.epsilon, -1);
        assert!(!sig.indeterminate);
        assert!(sig.fit_residual < 1e-12);
    }

    #[test]
    fn associator_equals_commutator_arrangement() {
        // For commutative products Assoc(u, v, w) = [star(w), star(u)] v.
        let p = seed_n2();
        let u = [0.4, 0.8];
        let v = [-0.3, 0.5];
        let w = [0.7, 0.2];
        let a = p.associator(&u, &v, &w);
        let cm = commutator(&p.endo(&w), &p.endo(&u));
        for l in 0..2 {
            let via: f64 = (0..2).map(|j| cm.get(&[l, j]) * v[j]).sum();
            assert!((a[l] - via).abs() < 1e-12);
        }
    }

    #[test]
    fn cyclic_associator_sum_vanishes_for_commutative_products() {
        let p = seed_n2();
        let rep = check_lie_triple(&p);
        assert!(rep.cyclic_residual < 1e-13);
    }

    #[test]
    fn seed_satisfies_five_term_identity() {
        let p = seed_n2();
        let rep = check_lie_triple(&p);
        assert!(rep.lie_triple_residual < 1e-10);
    }

    #[test]
    fn curvature_form_coefficient_is_mu_kappa_on_seed() {
        let p = seed_n2();
        let (c, resid) = curvature_form_fit(&p);
        assert!((c + 1.0).abs() < 1e-11, "c = {c}");
        assert!(resid < 1e-11);
    }

    #[test]
    fn rank_one_flat_product_is_jordan_and_associative() {
        let n = 2;
        let mut star = Tensor::zeros(n, 3);
        star.set(&[1, 1, 1], 1.0);
        let p = ProductAtPoint::new(star, MetricAtPoint::euclidean(n)).unwrap();
        assert!(p.compatibility_residual() < 1e-15);
        let j = check_jordan_flat(&p).unwrap();
        assert!(j < 1e-12);
        let rep = check_lie_triple(&p);
        assert!(rep.assoc.max_abs() < 1e-13);
    }

    #[test]
    fn jordan_check_rejects_noncommuting_product() {
        let mut star = Tensor::zeros(2, 3);
        star.set(&[0, 1, 0], 1.0);
        star.set(&[1, 0, 0], 1.0);
        let p = ProductAtPoint::new(star, MetricAtPoint::euclidean(2)).unwrap();
        assert!(p.commutator_norm() > 0.5);
        assert!(check_jordan_flat(&p).is_err());
    }

    #[test]
    fn estimate_mu_flat_branch() {
        let r = Tensor::zeros(2, 4);
        let p = seed_n2();
        // The seed product has noncommuting endomorphisms, so it cannot live
        // over a flat chart.
        assert!(estimate_mu(&p, &r).is_err());
        let z = ProductAtPoint::zero(MetricAtPoint::euclidean(2));
        let sig = estimate_mu(&z, &r).unwrap();
        assert!(sig.indeterminate);
        assert_eq!(sig.epsilon, 0);
        assert!(sig.mu.is_none());
    }

    #[test]
    fn estimate_mu_rejects_bad_fit() {
        let chart = Chart::new(2, 1.0, 0.8).unwrap();
        let x = [0.1, 0.2];
        let mut star = Tensor::zeros(2, 3);
        star.set(&[0, 1, 0], 1.0);
        star.set(&[1, 0, 0], 1.0);
        let p = ProductAtPoint::new(star, chart.metric_at(&x).unwrap()).unwrap();
        let r = chart.riemann_at(&x).unwrap();
        assert!(estimate_mu(&p, &r).is_err());
    }

    #[test]
    fn commuting_product_on_curved_chart_has_mu_zero() {
        let chart = Chart::new(2, 1.0, 0.8).unwrap();
        let x = [0.1, -0.2];
        let m = chart.metric_at(&x).unwrap();
        let u2 = chart.conformal_factor(&x).powi(2);
        // Rank-one product u (x) u (x) u-sharp with u = e_1: lowered
        // coefficients (1/u^2) u (x) u (x) u are totally symmetric and the
        // endomorphisms commute, so the signature has mu = 0.
        let mut star = Tensor::zeros(2, 3);
        star.set(&[1, 1, 1], u2);
        let p = ProductAtPoint::new(star, m).unwrap();
        assert!(p.compatibility_residual() < 1e-14);
        let sig = estimate_mu(&p, &chart.riemann_at(&x).unwrap()).unwrap();
        assert_eq!(sig.epsilon, 0);
        assert!(sig.mu.unwrap().abs() < 1e-14);
        let norm = normalize(&p, &sig).unwrap();
        assert_eq!(norm.star.max_abs(), 0.0);
        let rep = check_lie_triple(&p);
        let class = classify(&sig, chart.is_flat(), rep.assoc.max_abs()).unwrap();
        assert_eq!(class, Class::NonflatAssociative);
    }

    #[test]
    fn normalize_rescales_to_unit_mu() {
        let p = seed_n2();
        let scaled = ProductAtPoint {
            star: p.star.scaled(2.0),
            metric: p.metric.clone(),
        };
        let r = riemann_origin(2, 1.0);
        let sig = estimate_mu(&scaled, &r).unwrap();
        assert!((sig.mu.unwrap() + 4.0).abs() < 1e-12);
        let norm = normalize(&scaled, &sig).unwrap();
        assert!(norm.star.sub(&p.star).max_abs() < 1e-12);
        // Idempotence.
        let sig2 = estimate_mu(&norm, &r).unwrap();
        let norm2 = normalize(&norm, &sig2).unwrap();
        assert!(norm2.star.sub(&norm.star).max_abs() < 1e-12);
    }

    #[test]
    fn normalize_indeterminate_branch() {
        let z = ProductAtPoint::zero(MetricAtPoint::euclidean(2));
        let sig = Signature {
            mu: None,
            epsilon: 0,
            indeterminate: true,
            fit_residual: 0.0,
        };
        assert!(normalize(&z, &sig).is_ok());
        let mut star = Tensor::zeros(2, 3);
        star.set(&[0, 1, 0], 1.0);
        star.set(&[1, 0, 0], 1.0);
        let bad = ProductAtPoint::new(star, MetricAtPoint::euclidean(2)).unwrap();
        assert!(normalize(&bad, &sig).is_err());
    }

    #[test]
    fn classify_table() {
        let det = |mu: f64| Signature {
            mu: Some(mu),
            epsilon: if mu.abs() <= MU_ZERO_TOL {
                0
            } else if mu > 0.0 {
                1
            } else {
                -1
            },
            indeterminate: false,
            fit_residual: 0.0,
        };
        let indet = Signature {
            mu: None,
            epsilon: 0,
            indeterminate: true,
            fit_residual: 0.0,
        };
        assert_eq!(classify(&indet, true, 0.0).unwrap(), Class::ManinFrobenius);
        assert_eq!(classify(&det(0.0), true, 0.0).unwrap(), Class::ManinFrobenius);
        assert_eq!(classify(&det(-1.0), false, 1.0).unwrap(), Class::Hessian);
        assert_eq!(classify(&det(1.0), false, 1.0).unwrap(), Class::SkewHessian);
        assert_eq!(
            classify(&det(0.0), false, 1e-9).unwrap(),
            Class::NonflatAssociative
        );
        assert!(classify(&det(0.0), false, 1e-3).is_err());
        assert!(classify(&det(-1.0), true, 0.0).is_err());
        assert!(classify(&indet, false, 0.0).is_err());
    }

    #[test]
    fn associator_tensor_layout() {
        let p = seed_n2();
        let a = p.associator_tensor();
        let e0 = [1.0, 0.0];
        let e1 = [0.0, 1.0];
        let direct = p.associator(&e0, &e1, &e1);
        for l in 0..2 {
            assert_eq!(a.get(&[0, 1, 1, l]), direct[l]);
        }
    }
}
