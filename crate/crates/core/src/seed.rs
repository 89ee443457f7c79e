//! Seed products: pointwise validation of the defining curvature condition
//! and a numerical solver that finds a seed for a given metric and curvature.

use crate::algebra::ProductAtPoint;
use crate::error::{Error, Result};
use crate::geometry::{MetricAtPoint, FLAT_KAPPA_TOL};
use crate::tensor::Tensor;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Residual bound for a valid seed.
pub const SEED_TOL: f64 = 1e-10;
/// Random restarts the seed solver may spend.
pub const SOLVER_RESTART_BUDGET: usize = 100;

#[derive(Debug, Clone)]
pub struct SeedReport {
    pub commutativity: f64,
    pub compatibility: f64,
    pub curvature_residual: f64,
    pub pass: bool,
}

/// Residual of the curvature condition
/// `[star(e_i), star(e_j)] = -R(e_i, e_j)` for the metric carried by the
/// product and the given curvature constant, together with commutativity
/// and compatibility of the product itself.
pub fn validate_seed(prod: &ProductAtPoint, kappa: f64) -> SeedReport {
    let commutativity = prod.commutativity_residual();
    let compatibility = prod.compatibility_residual();
    let curvature_residual = curvature_condition_residual(prod, kappa);
    let pass = commutativity <= SEED_TOL
        && compatibility <= SEED_TOL
        && curvature_residual <= SEED_TOL;
    SeedReport {
        commutativity,
        compatibility,
        curvature_residual,
        pass,
    }
}

/// Max-norm residual of `[star(e_i), star(e_j)] + R(e_i, e_j)` over all
/// index pairs, with `R` built from the product's metric and `kappa`.
pub fn curvature_condition_residual(prod: &ProductAtPoint, kappa: f64) -> f64 {
    let n = prod.n();
    let g = &prod.metric.g;
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i + 1..n {
            for a in 0..n {
                for b in 0..n {
                    let mut comm = 0.0;
                    for c in 0..n {
                        comm += prod.star.get(&[i, b, c]) * prod.star.get(&[j, c, a])
                            - prod.star.get(&[j, b, c]) * prod.star.get(&[i, c, a]);
                    }
                    // R(e_i, e_j)^a_b = kappa (g_bj delta_ai - g_bi delta_aj);
                    // the commutator above is [star(e_j), star(e_i)]^a_b, so the
                    // condition reads comm = R(e_i, e_j)^a_b.
                    let mut r = 0.0;
                    if a == i {
                        r += g.get(&[b, j]);
                    }
                    if a == j {
                        r -= g.get(&[b, i]);
                    }
                    worst = worst.max((comm - kappa * r).abs());
                }
            }
        }
    }
    worst
}

fn sym_orbits(n: usize) -> Vec<[usize; 3]> {
    let mut orbits = Vec::new();
    for i in 0..n {
        for j in i..n {
            for k in j..n {
                orbits.push([i, j, k]);
            }
        }
    }
    orbits
}

fn star_from_params(n: usize, orbits: &[[usize; 3]], params: &[f64], g_inv: &Tensor) -> Tensor {
    let mut p = Tensor::zeros(n, 3);
    for (o, &[i, j, k]) in orbits.iter().enumerate() {
        let v = params[o];
        for perm in [[i, j, k], [i, k, j], [j, i, k], [j, k, i], [k, i, j], [k, j, i]] {
            p.set(&perm, v);
        }
    }
    p.apply_matrix(2, g_inv)
}

fn residual_vector(
    n: usize,
    orbits: &[[usize; 3]],
    params: &[f64],
    metric: &MetricAtPoint,
    kappa: f64,
) -> DVector<f64> {
    let star = star_from_params(n, orbits, params, &metric.g_inv);
    let g = &metric.g;
    let mut rows = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            for a in 0..n {
                for b in 0..n {
                    let mut comm = 0.0;
                    for c in 0..n {
                        comm += star.get(&[i, b, c]) * star.get(&[j, c, a])
                            - star.get(&[j, b, c]) * star.get(&[i, c, a]);
                    }
                    let mut r = 0.0;
                    if a == i {
                        r += g.get(&[b, j]);
                    }
                    if a == j {
                        r -= g.get(&[b, i]);
                    }
                    rows.push(comm - kappa * r);
                }
            }
        }
    }
    DVector::from_vec(rows)
}

/// Solve the pointwise seed equations for a totally symmetric product by
/// Gauss-Newton iteration with random restarts. Deterministic for a fixed
/// `rng_seed`. A flat chart admits only the zero product, which is returned
/// directly.
pub fn solve_seed_algebra(
    n: usize,
    metric: &MetricAtPoint,
    kappa: f64,
    rng_seed: u64,
) -> Result<ProductAtPoint> {
    if n != metric.n() {
        return Err(Error::DimensionMismatch {
            expected: metric.n(),
            got: n,
        });
    }
    if kappa.abs() <= FLAT_KAPPA_TOL {
        return Ok(ProductAtPoint::zero(metric.clone()));
    }
    let orbits = sym_orbits(n);
    let m = orbits.len();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let scale = kappa.abs().sqrt();
    for _restart in 0..SOLVER_RESTART_BUDGET {
        let mut params: Vec<f64> = (0..m)
            .map(|_| (rng.gen::<f64>() * 3.0 - 1.5) * scale)
            .collect();
        let mut r = residual_vector(n, &orbits, &params, metric, kappa);
        let mut norm = r.amax();
        for _iter in 0..60 {
            if norm <= 1e-13 {
                let star = star_from_params(n, &orbits, &params, &metric.g_inv);
                return ProductAtPoint::new(star, metric.clone());
            }
            // The residual is quadratic in the parameters, so central
            // differences give the Jacobian exactly up to rounding.
            let h = 1e-4;
            let mut jac = DMatrix::zeros(r.len(), m);
            for t in 0..m {
                let mut pp = params.clone();
                let mut pm = params.clone();
                pp[t] += h;
                pm[t] -= h;
                let rp = residual_vector(n, &orbits, &pp, metric, kappa);
                let rm = residual_vector(n, &orbits, &pm, metric, kappa);
                for e in 0..r.len() {
                    jac[(e, t)] = (rp[e] - rm[e]) / (2.0 * h);
                }
            }
            let svd = jac.svd(true, true);
            let step = match svd.solve(&r, 1e-12) {
                Ok(s) => s,
                Err(_) => break,
            };
            // Backtracking keeps the quadratic system from overshooting.
            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..12 {
                let trial: Vec<f64> = params
                    .iter()
                    .zip(step.iter())
                    .map(|(p, s)| p - alpha * s)
                    .collect();
                let rt = residual_vector(n, &orbits, &trial, metric, kappa);
                let nt = rt.amax();
                if nt < norm {
                    params = trial;
                    r = rt;
                    norm = nt;
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        if norm <= 1e-13 {
            let star = star_from_params(n, &orbits, &params, &metric.g_inv);
            return ProductAtPoint::new(star, metric.clone());
        }
    }
    Err(Error::SolverFailure(format!(
        "seed equations not solved within {SOLVER_RESTART_BUDGET} restarts"
    )))
}
