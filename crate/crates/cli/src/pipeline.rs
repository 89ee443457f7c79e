//! Pipelines behind `frobenius run` and `frobenius diff`.

use crate::scenario::{Mode, Scenario};
use frobenius_core::algebra::{classify, estimate_mu, fit_mu_raw};
use frobenius_core::hessian::{
    affine_pullback_residual, closedness_residual, connection_curvature, d3_phi_residuals,
    duality_residual, potential_metric_residual, verify_hesse_frobenius_consistency,
    CLOSEDNESS_TOL,
};
use frobenius_core::io::{atomic_write_json, read_product_field, write_potential_field, write_product_field};
use frobenius_core::seed::{validate_seed, SEED_TOL};
use frobenius_core::{
    bridge_report, build_affine_chart, construct_field, d_connection, solve_hessian_potential,
    tolerances, verify_hmf_field, Chart, Check, Error, Finding, Grid, ProductAtPoint,
    ProductField, Report, Result, Tensor,
};
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Debug, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub grid_h: Option<f64>,
    pub rng_seed: Option<u64>,
    pub quiet: bool,
}

pub fn run(scenario_path: &Path, opts: &RunOptions) -> Result<Report> {
    let start = Instant::now();
    let mut scenario = Scenario::load(scenario_path)?;
    apply_cli_overrides(&mut scenario, opts)?;
    let chart = scenario.chart.build()?;

    let echo = serde_json::to_value(&scenario)
        .map_err(|e| Error::Numerical(format!("cannot echo scenario: {e}")))?;
    let mut report = Report::new(scenario.mode.to_string(), echo);
    let mut checks = Vec::new();
    let mut findings = Vec::new();

    match scenario.mode {
        Mode::Verify => {
            let field = obtain_field(&scenario, scenario_path, &chart, &mut checks, &mut findings)?;
            verify_checks(&chart, &field, &mut checks)?;
        }
        Mode::Construct => {
            let field = obtain_field(&scenario, scenario_path, &chart, &mut checks, &mut findings)?;
            if let Some(rel) = &scenario.output_field {
                let path = Scenario::resolve(scenario_path, rel);
                write_product_field(&path, &field)?;
                findings.push(Finding::new("field_written", path.display().to_string()));
            }
            verify_checks(&chart, &field, &mut checks)?;
        }
        Mode::Classify => {
            let field = obtain_field(&scenario, scenario_path, &chart, &mut checks, &mut findings)?;
            let label = classify_checks(&chart, &field, &mut checks, &mut findings)?;
            report.classification = Some(label);
        }
        Mode::Hessian => {
            let field = obtain_field(&scenario, scenario_path, &chart, &mut checks, &mut findings)?;
            hessian_checks(&scenario, scenario_path, &field, &mut checks, &mut findings)?;
        }
        Mode::Bridge => {
            let field = obtain_field(&scenario, scenario_path, &chart, &mut checks, &mut findings)?;
            let bridge = bridge_report(&field)?;
            checks.extend(bridge.checks);
            findings.extend(bridge.findings);
        }
    }

    apply_tolerance_overrides(&scenario, &mut checks, &mut findings);
    for check in checks {
        report.push_check(check);
    }
    for finding in findings {
        report.push_finding(finding);
    }
    report.timing_ms = start.elapsed().as_millis() as u64;

    let destination = opts
        .out
        .clone()
        .or_else(|| {
            scenario
                .output
                .as_ref()
                .map(|rel| Scenario::resolve(scenario_path, rel))
        });
    if let Some(path) = &destination {
        atomic_write_json(path, &report)?;
    }
    if !opts.quiet {
        print_report(&report, destination.as_deref());
    }
    Ok(report)
}

fn apply_cli_overrides(scenario: &mut Scenario, opts: &RunOptions) -> Result<()> {
    if let Some(h) = opts.grid_h {
        if scenario.field.is_some() {
            return Err(Error::Precondition(
                "--grid-h rebuilds scenario grids and cannot apply to a stored field payload"
                    .into(),
            ));
        }
        scenario.chart.grid.with_spacing(h)?;
    }
    if let Some(rng_seed) = opts.rng_seed {
        match scenario.seed.as_mut().and_then(|s| s.solver.as_mut()) {
            Some(solver) => solver.rng_seed = rng_seed,
            None => {
                return Err(Error::Precondition(
                    "--seed overrides a solver seed request, and this scenario has none".into(),
                ));
            }
        }
    }
    Ok(())
}

/// Load the input field payload, or construct one from the seed spec. Seed
/// construction contributes validation checks; loaded fields are checked
/// against the scenario chart and grid instead.
fn obtain_field(
    scenario: &Scenario,
    scenario_path: &Path,
    chart: &Chart,
    checks: &mut Vec<Check>,
    findings: &mut Vec<Finding>,
) -> Result<ProductField> {
    let grid = scenario.chart.grid.build(chart.dim())?;
    if let Some(rel) = &scenario.field {
        let path = Scenario::resolve(scenario_path, rel);
        let field = read_product_field(&path)?;
        ensure_field_matches(chart, &grid, &field)?;
        findings.push(Finding::new("field_source", path.display().to_string()));
        return Ok(field);
    }

    let seed = scenario
        .seed
        .as_ref()
        .expect("validated: a seed is present when no field is given");
    let base = grid.coords(&grid.base_node());
    let metric = chart.metric_at(&base)?;
    let n = chart.dim();
    let prod = if let Some(values) = &seed.inline {
        let star = Tensor::from_fn(n, 3, |ix| values[(ix[0] * n + ix[1]) * n + ix[2]]);
        findings.push(Finding::new("seed_source", "inline"));
        ProductAtPoint::new(star, metric)?
    } else {
        let rng_seed = seed.solver.as_ref().expect("validated: solver present").rng_seed;
        findings.push(Finding::new("seed_source", format!("solver rng_seed {rng_seed}")));
        frobenius_core::solve_seed_algebra(n, &metric, chart.kappa(), rng_seed)?
    };

    let seed_report = validate_seed(&prod, chart.kappa());
    checks.push(Check::new("seed_commutativity", seed_report.commutativity, SEED_TOL));
    checks.push(Check::new("seed_compatibility", seed_report.compatibility, SEED_TOL));
    checks.push(Check::new(
        "seed_curvature_condition",
        seed_report.curvature_residual,
        SEED_TOL,
    ));
    construct_field(chart, &prod, &grid)
}

fn ensure_field_matches(chart: &Chart, grid: &Grid, field: &ProductField) -> Result<()> {
    let stored = &field.chart;
    if stored.dim() != chart.dim()
        || stored.kappa() != chart.kappa()
        || stored.domain_radius() != chart.domain_radius()
    {
        return Err(Error::Precondition(
            "field payload chart does not match the scenario chart".into(),
        ));
    }
    if field.grid.nodes() != grid.nodes()
        || field.grid.min() != grid.min()
        || field.grid.max() != grid.max()
    {
        return Err(Error::Precondition(
            "field payload grid does not match the scenario grid".into(),
        ));
    }
    Ok(())
}

fn max_spacing(grid: &Grid) -> f64 {
    (0..grid.dim()).map(|a| grid.spacing(a)).fold(0.0, f64::max)
}

fn verify_checks(chart: &Chart, field: &ProductField, checks: &mut Vec<Check>) -> Result<()> {
    let axioms: Result<Vec<(f64, f64)>> = field
        .grid
        .all_nodes()
        .par_iter()
        .map(|node| {
            let prod = field.product_at_node(node)?;
            Ok((prod.commutativity_residual(), prod.compatibility_residual()))
        })
        .collect();
    let (commutativity, compatibility) = axioms?
        .into_iter()
        .fold((0.0f64, 0.0f64), |a, b| (a.0.max(b.0), a.1.max(b.1)));
    checks.push(Check::new("commutativity", commutativity, tolerances::ALGEBRAIC));
    checks.push(Check::new("compatibility", compatibility, tolerances::ALGEBRAIC));

    let rep = verify_hmf_field(field)?;
    let h = max_spacing(&field.grid);
    checks.push(Check::new("hmf", rep.hmf_residual, tolerances::hmf(h)));
    checks.push(Check::new("hmf_lowered", rep.hmf_residual_lowered, tolerances::hmf(h)));
    checks.push(Check::new("nabla_sym", rep.nabla_sym_residual, tolerances::nabla_sym(h)));
    checks.push(Check::new("commutator", rep.commutator_residual, tolerances::ALGEBRAIC));
    if !chart.is_flat() {
        let mu_deviation = (rep.mu_min + 1.0).abs().max((rep.mu_max + 1.0).abs());
        checks.push(Check::new("mu_deviation", mu_deviation, tolerances::MU));
    }
    Ok(())
}

fn classify_checks(
    chart: &Chart,
    field: &ProductField,
    checks: &mut Vec<Check>,
    findings: &mut Vec<Finding>,
) -> Result<String> {
    struct NodeInfo {
        commutativity: f64,
        compatibility: f64,
        associator: f64,
        comm_norm: f64,
    }
    let nodes = field.grid.all_nodes();
    let infos: Result<Vec<NodeInfo>> = nodes
        .par_iter()
        .map(|node| {
            let x = field.grid.coords(node);
            let prod = field.product_at_node(node)?;
            let fit = fit_mu_raw(&prod, &chart.riemann_at(&x)?);
            Ok(NodeInfo {
                commutativity: prod.commutativity_residual(),
                compatibility: prod.compatibility_residual(),
                associator: prod.associator_tensor().max_abs(),
                comm_norm: fit.comm_norm,
            })
        })
        .collect();
    let infos = infos?;

    let mut commutativity = 0.0f64;
    let mut compatibility = 0.0f64;
    let mut associator = 0.0f64;
    let mut witness = 0usize;
    for (i, info) in infos.iter().enumerate() {
        commutativity = commutativity.max(info.commutativity);
        compatibility = compatibility.max(info.compatibility);
        associator = associator.max(info.associator);
        if info.comm_norm > infos[witness].comm_norm {
            witness = i;
        }
    }
    checks.push(Check::new("commutativity", commutativity, tolerances::ALGEBRAIC));
    checks.push(Check::new("compatibility", compatibility, tolerances::ALGEBRAIC));

    let node = &nodes[witness];
    let x = field.grid.coords(node);
    let prod = field.product_at_node(node)?;
    let sig = estimate_mu(&prod, &chart.riemann_at(&x)?)?;
    checks.push(Check::new("mu_fit", sig.fit_residual, tolerances::MU));
    findings.push(Finding::new(
        "signature",
        match sig.mu {
            Some(mu) => format!("mu {mu:.6e}, epsilon {}, fit residual {:.3e}", sig.epsilon, sig.fit_residual),
            None => "mu indeterminate (curvature vanishes)".to_string(),
        },
    ));
    findings.push(Finding::new("associator", format!("max residual {associator:.3e}")));

    let class = classify(&sig, chart.is_flat(), associator)?;
    Ok(class.to_string())
}

fn hessian_checks(
    scenario: &Scenario,
    scenario_path: &Path,
    field: &ProductField,
    checks: &mut Vec<Check>,
    findings: &mut Vec<Finding>,
) -> Result<()> {
    let h = max_spacing(&field.grid);
    checks.push(Check::new("duality", duality_residual(field, 1)?, tolerances::DUALITY));
    let conn = d_connection(field, 1)?;
    checks.push(Check::new("torsion", conn.torsion_residual(), tolerances::ALGEBRAIC));
    checks.push(Check::new(
        "connection_flatness",
        connection_curvature(&conn).max_abs(),
        tolerances::flatness(h),
    ));
    checks.push(Check::new("closedness", closedness_residual(&conn)?, CLOSEDNESS_TOL));

    let base = field.grid.coords(&field.grid.base_node());
    let affine = build_affine_chart(&conn, &base)?;
    checks.push(Check::new(
        "affine_pullback",
        affine_pullback_residual(&conn, &affine),
        tolerances::affine_pullback(h),
    ));

    let potential = solve_hessian_potential(&conn, &affine)?;
    checks.push(Check::new(
        "potential_metric",
        potential_metric_residual(&conn, &potential)?,
        tolerances::potential_metric(h),
    ));
    checks.push(Check::new(
        "consistency",
        verify_hesse_frobenius_consistency(field, &potential)?,
        tolerances::consistency(h),
    ));

    let (r1, r2) = d3_phi_residuals(field, &conn, &potential)?;
    checks.push(Check::new("d3_phi_vs_2p", r2, tolerances::d3_phi(h)));
    findings.push(Finding::new(
        "d3_phi_residuals",
        format!("vs P {r1:.3e}, vs 2P {r2:.3e}"),
    ));
    if r1 > 5.0 * r2 && r1 > tolerances::d3_phi(h) {
        findings.push(Finding::new(
            "potential_factor_two",
            "third derivative of the potential matches twice the lowered product, not the product itself",
        ));
    }

    if let Some(rel) = &scenario.output_field {
        let path = Scenario::resolve(scenario_path, rel);
        write_potential_field(&path, &potential)?;
        findings.push(Finding::new("potential_written", path.display().to_string()));
    }
    Ok(())
}

fn apply_tolerance_overrides(
    scenario: &Scenario,
    checks: &mut [Check],
    findings: &mut Vec<Finding>,
) {
    let Some(overrides) = &scenario.tolerances else {
        return;
    };
    let mut unused: Vec<&str> = Vec::new();
    for (name, tolerance) in overrides {
        let mut touched = false;
        for check in checks.iter_mut() {
            if &check.name == name {
                *check = Check::new(check.name.clone(), check.residual, *tolerance);
                touched = true;
            }
        }
        if !touched {
            unused.push(name);
        }
    }
    if !unused.is_empty() {
        findings.push(Finding::new(
            "unused_tolerance_overrides",
            unused.join(", "),
        ));
    }
}

fn print_report(report: &Report, written: Option<&Path>) {
    for check in &report.checks {
        let status = if check.pass { "ok  " } else { "FAIL" };
        println!(
            "{status}  {:<26} residual {:>13.6e}  tolerance {:>10.3e}",
            check.name, check.residual, check.tolerance
        );
    }
    for finding in &report.findings {
        println!("note  {}: {}", finding.name, finding.detail);
    }
    if let Some(label) = &report.classification {
        println!("classification: {label}");
    }
    println!(
        "{} ({} checks, {} ms)",
        if report.pass { "PASS" } else { "FAIL" },
        report.checks.len(),
        report.timing_ms
    );
    if let Some(path) = written {
        println!("report written to {}", path.display());
    }
}

pub fn diff(a_path: &Path, b_path: &Path) -> Result<()> {
    let a = load_report(a_path)?;
    let b = load_report(b_path)?;
    if a.schema != b.schema {
        return Err(Error::Parse(format!(
            "schema mismatch: {} vs {}",
            a.schema, b.schema
        )));
    }
    if a.mode != b.mode {
        return Err(Error::Precondition(format!(
            "mode mismatch: {} vs {}",
            a.mode, b.mode
        )));
    }

    let b_by_name: BTreeMap<&str, &Check> =
        b.checks.iter().map(|c| (c.name.as_str(), c)).collect();
    let a_names: std::collections::BTreeSet<&str> =
        a.checks.iter().map(|c| c.name.as_str()).collect();
    let mut differences = 0usize;
    for check in &a.checks {
        match b_by_name.get(check.name.as_str()) {
            Some(other) => {
                if check.residual != other.residual {
                    differences += 1;
                    let ratio = check.residual / other.residual;
                    println!(
                        "{:<26} first {:>13.6e}  second {:>13.6e}  ratio {ratio:.3}",
                        check.name, check.residual, other.residual
                    );
                }
            }
            None => {
                differences += 1;
                println!("{:<26} only in first report", check.name);
            }
        }
    }
    for check in &b.checks {
        if !a_names.contains(check.name.as_str()) {
            differences += 1;
            println!("{:<26} only in second report", check.name);
        }
    }
    if a.classification != b.classification {
        differences += 1;
        println!(
            "classification: {} vs {}",
            a.classification.as_deref().unwrap_or("none"),
            b.classification.as_deref().unwrap_or("none")
        );
    }
    if differences == 0 {
        println!("no differences");
    }
    Ok(())
}

fn load_report(path: &Path) -> Result<Report> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}
