//! Property-based invariants of the algebra, tensor, and structural-split
//! layers, over randomized inputs rather than the calibrated fixtures the
//! unit tests pin down.

use frobenius_core::algebra::{estimate_mu, normalize};
use frobenius_core::superint::tracefree_sym_projector;
use frobenius_core::{p_from_t_tensor, t_from_p, Chart, Check, GridField, ProductAtPoint, Report};
use frobenius_core::{Grid, Tensor};
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn random_tensor(n: usize, rank: usize, rng: &mut StdRng) -> Tensor {
    Tensor::from_fn(n, rank, |_| rng.gen_range(-1.0..1.0))
}

fn symmetrized3(t: &Tensor) -> Tensor {
    let n = t.n();
    Tensor::from_fn(n, 3, |ix| {
        let (i, j, k) = (ix[0], ix[1], ix[2]);
        let s: f64 = [
            [i, j, k],
            [i, k, j],
            [j, i, k],
            [j, k, i],
            [k, i, j],
            [k, j, i],
        ]
        .iter()
        .map(|p| t.get(p))
        .sum();
        s / 6.0
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    /// The trace-free symmetric projector is idempotent and annihilates
    /// pure-trace inputs `g_(ij v_k)` at any chart point.
    #[test]
    fn projector_is_idempotent_and_kills_traces(
        n in 2usize..5,
        kappa in prop_oneof![Just(-1.0), Just(0.0), Just(1.0)],
        seed in 0u64..1000,
    ) {
        let chart = Chart::new(n, kappa, 0.8).unwrap();
        let mut rng = StdRng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.3..0.3)).collect();
        let metric = chart.metric_at(&x).unwrap();

        let t = symmetrized3(&random_tensor(n, 3, &mut rng));
        let once = tracefree_sym_projector(&t, &metric);
        let twice = tracefree_sym_projector(&once, &metric);
        prop_assert!(twice.sub(&once).max_abs() <= 1e-12);

        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g = &metric.g;
        let pure_trace = Tensor::from_fn(n, 3, |ix| {
            let (i, j, k) = (ix[0], ix[1], ix[2]);
            (g.get(&[i, j]) * v[k] + g.get(&[j, k]) * v[i] + g.get(&[k, i]) * v[j]) / 3.0
        });
        let killed = tracefree_sym_projector(&pure_trace, &metric);
        prop_assert!(killed.max_abs() <= 1e-12);
    }

    /// Splitting a symmetric cubic field into structural data and
    /// reassembling it is the identity.
    #[test]
    fn structural_split_round_trips(
        kappa in prop_oneof![Just(-1.0), Just(0.7), Just(1.0)],
        seed in 0u64..1000,
    ) {
        let n = 3;
        let chart = Chart::new(n, kappa, 0.8).unwrap();
        let grid = Grid::symmetric(n, 0.2, 3).unwrap();
        let mut rng = StdRng::seed_from_u64(seed);
        let mut p = GridField::zeros(grid.clone(), 3);
        for node in grid.all_nodes() {
            let t = symmetrized3(&random_tensor(n, 3, &mut rng));
            p.set_tensor_at(&node, &t);
        }
        let (tensor, trace) = t_from_p(&chart, &p).unwrap();
        let back = p_from_t_tensor(&chart, &tensor, &trace).unwrap();
        prop_assert!(back.sub(&p).max_abs() <= 1e-12);
    }

    /// Normalization is invariant under positive rescaling of the product.
    #[test]
    fn normalize_ignores_positive_rescaling(
        c in 0.1f64..10.0,
        seed in 0u64..1000,
    ) {
        let chart = Chart::new(2, 1.0, 1.2).unwrap();
        let metric = chart.metric_at(&[0.1, -0.05]).unwrap();
        let riemann = chart.riemann_at(&[0.1, -0.05]).unwrap();
        let prod =
            frobenius_core::solve_seed_algebra(2, &metric, 1.0, seed.wrapping_add(1)).unwrap();

        let sig = estimate_mu(&prod, &riemann).unwrap();
        let reference = normalize(&prod, &sig).unwrap();

        let scaled = ProductAtPoint::new(prod.star.scaled(c), metric).unwrap();
        let sig_scaled = estimate_mu(&scaled, &riemann).unwrap();
        let renormalized = normalize(&scaled, &sig_scaled).unwrap();
        prop_assert!(renormalized.star.sub(&reference.star).max_abs() <= 1e-12);
    }

    /// Reports survive a JSON round trip with checks, findings, and the
    /// pass flag intact.
    #[test]
    fn report_round_trips_through_json(
        residuals in prop::collection::vec(0.0f64..10.0, 1..6),
        tolerance in 0.5f64..2.0,
    ) {
        let mut report = Report::new("verify", serde_json::json!({"n": 2}));
        for (i, r) in residuals.iter().enumerate() {
            report.push_check(Check::new(format!("check_{i}"), *r, tolerance));
        }
        let text = serde_json::to_string(&report).unwrap();
        let back: Report = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(back.checks.len(), report.checks.len());
        prop_assert_eq!(back.pass, report.pass);
        prop_assert_eq!(back.pass, residuals.iter().all(|r| *r <= tolerance));
        for (a, b) in back.checks.iter().zip(&report.checks) {
            prop_assert_eq!(a.residual.to_bits(), b.residual.to_bits());
        }
    }

    /// Lowering a slot with the metric and raising it again is the
    /// identity on any tensor.
    #[test]
    fn metric_raise_lower_is_involutive(
        rank in 1usize..4,
        slot_choice in 0usize..4,
        seed in 0u64..1000,
    ) {
        let slot = slot_choice % rank;
        let chart = Chart::new(3, -1.0, 2.0).unwrap();
        let mut rng = StdRng::seed_from_u64(seed);
        let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-0.4..0.4)).collect();
        let metric = chart.metric_at(&x).unwrap();
        let t = random_tensor(3, rank, &mut rng);
        let back = t.apply_matrix(slot, &metric.g).apply_matrix(slot, &metric.g_inv);
        prop_assert!(back.sub(&t).max_abs() <= 1e-12);
    }

    /// Grid node enumeration and flat indexing agree, and node coordinates
    /// stay inside the box.
    #[test]
    fn grid_enumeration_is_consistent(
        dim in 1usize..4,
        per_axis in 2usize..6,
        half in 0.1f64..0.5,
    ) {
        let grid = Grid::symmetric(dim, half, per_axis).unwrap();
        let nodes = grid.all_nodes();
        prop_assert_eq!(nodes.len(), grid.total_nodes());
        for (flat, node) in nodes.iter().enumerate() {
            prop_assert_eq!(grid.flat_index(node), flat);
            let x = grid.coords(node);
            for (axis, xi) in x.iter().enumerate() {
                prop_assert!(*xi >= grid.min()[axis] - 1e-14);
                prop_assert!(*xi <= grid.max()[axis] + 1e-14);
            }
        }
    }
}
