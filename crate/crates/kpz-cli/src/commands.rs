//! Subcommand bodies. Each returns the record to emit and the final outcome;
//! configuration errors abort before anything is written.

use kpz_stationary::asep::{
    self, build_generator, current_exact, laplace_exact, limiting_current, model_from_uv, phase_point,
    product_bernoulli, rho_of, stationary_exact, AsepModel, BoundaryParams, Configuration, Coupling, Phase, SimOptions,
};
use kpz_stationary::askey_wilson::{
    self, aw_marginal, aw_measure, aw_transition, phi_n_spec, AwParams, AwProcessParams,
};
use kpz_stationary::cdh::{self, check_consistency, structural_zeros, wilson_measure, CdhProcessParams};
use kpz_stationary::kpz::{self, range_tag, single_point_formula, LaplaceQuery, RangeTag};
use kpz_stationary::measure::{chain, self_converge, Converged, MixedMeasure, QuadratureSpec};
use kpz_stationary::specfun::{asymptotic_error_slope, theta_identity_residual, Sign};
use kpz_stationary::Complex64;
use rayon::prelude::*;

use crate::error::CliError;
use crate::record::{Cell, ResultRecord};
use crate::Common;

type Outcome = Result<(ResultRecord, Result<(), CliError>), CliError>;

fn need<T: Copy>(v: Option<T>, key: &str) -> Result<T, CliError> {
    v.ok_or_else(|| CliError::Config(format!("missing required --{key}")))
}

fn boundary(c: &Common) -> Result<BoundaryParams, CliError> {
    Ok(BoundaryParams::new(need(c.u, "u")?, need(c.v, "v")?))
}

fn tol(c: &Common, default: f64) -> Result<f64, CliError> {
    match c.tol {
        None => Ok(default),
        Some(t) if t > 0.0 && t.is_finite() => Ok(t),
        Some(t) => Err(CliError::Config(format!("--tol must be positive, got {t}"))),
    }
}

fn query(c: &Common) -> Result<LaplaceQuery, CliError> {
    if c.x.is_empty() {
        return Err(CliError::Config("missing required --x".into()));
    }
    if c.c.is_empty() {
        return Err(CliError::Config("missing required --c".into()));
    }
    if let Some(d) = c.d {
        if d != c.x.len() || d != c.c.len() {
            return Err(CliError::Config(format!(
                "--d {d} does not match {} locations and {} c values",
                c.x.len(),
                c.c.len()
            )));
        }
    }
    Ok(LaplaceQuery::new(c.x.clone(), c.c.clone())?)
}

fn echo_common(rec: &mut ResultRecord, c: &Common) {
    if let Some(u) = c.u {
        rec.input("u", u);
    }
    if let Some(v) = c.v {
        rec.input("v", v);
    }
    if let Some(n) = c.n_sites {
        rec.input("n_sites", n);
    }
    if !c.x.is_empty() {
        rec.input("x", &c.x);
    }
    if !c.c.is_empty() {
        rec.input("c", &c.c);
    }
    if let Some(t) = c.tol {
        rec.input("tol", t);
    }
}

/// Panel doubling until `spec.rel_tol` is met; a numeric failure otherwise.
fn converged(
    f: impl Fn(&QuadratureSpec) -> kpz_stationary::Result<f64>,
    spec: &QuadratureSpec,
) -> Result<Converged, CliError> {
    Ok(self_converge(f, spec, MAX_DOUBLINGS)?)
}

const MAX_DOUBLINGS: usize = 4;

pub fn stationary(c: &Common) -> Outcome {
    let bp = boundary(c)?;
    let n = need(c.n_sites, "n-sites")?;
    let model = model_from_uv(n, bp)?;
    let dist = stationary_exact(&model)?;
    let mut rec = ResultRecord::new("stationary", &["index", "configuration", "probability"]);
    echo_common(&mut rec, c);
    for (i, &p) in dist.probs.iter().enumerate() {
        let conf: String =
            Configuration::from_index(n, i).occupation.iter().map(|&b| if b { '1' } else { '0' }).collect();
        rec.row(vec![Cell::from(i), conf.into(), p.into()]);
    }
    rec.residuals.insert("generator".into(), dist.residual);
    rec.residuals.insert("normalisation".into(), (dist.probs.iter().sum::<f64>() - 1.0).abs());
    rec.summary.insert("current".into(), current_exact(&dist));
    rec.summary.insert("current_tol".into(), asep::RESIDUAL_TOL);
    for (k, v) in
        [("q", model.q), ("alpha", model.alpha), ("beta", model.beta), ("gamma", model.gamma), ("delta", model.delta)]
    {
        rec.summary.insert(k.into(), v);
    }
    if !c.x.is_empty() || !c.c.is_empty() {
        let q = query(c)?;
        rec.summary.insert("laplace".into(), laplace_exact(&dist, &q));
        rec.summary.insert("laplace_tol".into(), asep::RESIDUAL_TOL);
    }
    let ok = if dist.residual <= asep::RESIDUAL_TOL {
        Ok(())
    } else {
        Err(CliError::Invariant(format!("generator residual {}", dist.residual)))
    };
    Ok((rec, ok))
}

pub fn simulate(c: &Common, a: &crate::SimulateArgs) -> Outcome {
    let n = need(c.n_sites, "n-sites")?;
    let model = match (a.rho_l, a.rho_r) {
        (Some(l), Some(r)) => AsepModel::from_densities(n, a.q, l, r)?,
        _ => model_from_uv(n, boundary(c)?)?,
    };
    let seed = c.seed.unwrap_or(0);
    let burn = a.burn_in.unwrap_or(0.1 * a.t_max);
    let s = asep::simulate(&model, SimOptions::time(a.t_max).with_burn_in(burn), seed, &Configuration::empty(n))?;
    let mut rec = ResultRecord::new("simulate", &["site", "mean_occupation"]);
    echo_common(&mut rec, c);
    rec.seed = Some(seed);
    rec.input("t_max", a.t_max).input("burn_in", burn);
    if let (Some(l), Some(r)) = (a.rho_l, a.rho_r) {
        rec.input("rho_l", l).input("rho_r", r).input("q", a.q);
    }
    for (i, m) in s.mean_occupation.iter().enumerate() {
        rec.row(vec![Cell::from(i + 1), (*m).into()]);
    }
    rec.summary.insert("current".into(), s.current);
    rec.summary.insert("current_std_error".into(), s.current_std_error());
    rec.summary.insert("events".into(), s.events as f64);
    rec.summary.insert("time".into(), s.time);
    if n <= 12 {
        let exact = current_exact(&stationary_exact(&model)?);
        rec.summary.insert("current_exact".into(), exact);
        rec.residuals.insert("current_z_score".into(), (s.current - exact).abs() / s.current_std_error());
    }
    Ok((rec, Ok(())))
}

pub fn coupled(c: &Common, a: &crate::CoupledArgs) -> Outcome {
    let (u, v) = (need(c.u, "u")?, need(c.v, "v")?);
    let n = need(c.n_sites, "n-sites")?;
    if u + v < 0.0 {
        return Err(CliError::Config(format!("the coupling needs u + v ≥ 0, got {}", u + v)));
    }
    let models = [(-v, v), (u, v), (u, -u)]
        .iter()
        .map(|&(a, b)| model_from_uv(n, BoundaryParams::new(a, b)))
        .collect::<kpz_stationary::Result<Vec<_>>>()?;
    let coupling = Coupling::new(models)?;
    let seed = c.seed.unwrap_or(0);
    let init = vec![Configuration::empty(n); 3];
    let s = coupling.simulate(&init, a.events, seed)?;
    let mut rec = ResultRecord::new("coupled", &["site", "tau1", "tau2", "tau3"]);
    echo_common(&mut rec, c);
    rec.seed = Some(seed);
    rec.input("events", a.events);
    for x in 0..n {
        rec.row(vec![
            Cell::from(x + 1),
            s.mean_occupation[0][x].into(),
            s.mean_occupation[1][x].into(),
            s.mean_occupation[2][x].into(),
        ]);
    }
    rec.summary.insert("events".into(), s.events as f64);
    rec.summary.insert("time".into(), s.time);
    rec.residuals.insert("ordering_violations".into(), s.ordering_violations as f64);
    let ok = if s.ordering_violations == 0 {
        Ok(())
    } else {
        Err(CliError::Invariant(format!("{} ordering violations", s.ordering_violations)))
    };
    Ok((rec, ok))
}

pub fn phase_scan(c: &Common, a: &crate::PhaseScanArgs) -> Outcome {
    let n = c.n_sites.unwrap_or(50);
    let seed = c.seed.unwrap_or(0);
    let mut rec = ResultRecord::new(
        "phase-scan",
        &["rho_l", "rho_r", "phase", "fan", "j_predicted", "j_simulated", "j_std_error"],
    );
    echo_common(&mut rec, c);
    rec.seed = Some(seed);
    rec.input("n_sites", n).input("q", a.q).input("events", a.events).input("rho_l", &a.rho_l).input("rho_r", &a.rho_r);
    let grid: Vec<(f64, f64)> = a.rho_l.iter().flat_map(|&l| a.rho_r.iter().map(move |&r| (l, r))).collect();
    for &(l, r) in &grid {
        if !(l > 0.0 && l < 1.0 && r > 0.0 && r < 1.0) {
            return Err(CliError::Config(format!("densities must lie in (0, 1), got ({l}, {r})")));
        }
    }
    let rows = grid
        .par_iter()
        .enumerate()
        .map(|(k, &(l, r))| {
            let model = AsepModel::from_densities(n, a.q, l, r)?;
            let s = asep::simulate(
                &model,
                SimOptions::events(a.events).with_burn_in(10.0 * n as f64),
                seed + k as u64,
                &Configuration::empty(n),
            )?;
            Ok((l, r, s.current, s.current_std_error()))
        })
        .collect::<kpz_stationary::Result<Vec<_>>>()?;
    for (l, r, j, se) in rows {
        let (phase, fan) = match phase_point(l, r) {
            Ok(p) => (
                match p.phase {
                    Phase::MaximalCurrent => "maximal-current",
                    Phase::LowDensity => "low-density",
                    Phase::HighDensity => "high-density",
                },
                p.fan,
            ),
            Err(_) => ("boundary", l > r),
        };
        rec.row(vec![l.into(), r.into(), phase.into(), fan.into(), limiting_current(l, r).into(), j.into(), se.into()]);
    }
    Ok((rec, Ok(())))
}

pub fn phi_n(c: &Common) -> Outcome {
    let bp = boundary(c)?;
    let n = need(c.n_sites, "n-sites")?;
    let q = query(c)?;
    let mut spec = phi_n_spec(n, &q);
    spec.rel_tol = tol(c, 1e-8)?;
    let r = converged(|s| askey_wilson::phi_n(bp, n, &q, s), &spec)?;
    let v = r.value;
    let mut rec = ResultRecord::new("phi-n", &["n_sites", "phi_n", "quadrature_error"]);
    echo_common(&mut rec, c);
    rec.quadrature(&r.spec);
    rec.row(vec![Cell::from(n), v.into(), r.gap.into()]);
    if n <= 12 {
        let exact = laplace_exact(&stationary_exact(&model_from_uv(n, bp)?)?, &q);
        rec.summary.insert("laplace_exact".into(), exact);
        rec.residuals.insert("phi_n_vs_exact".into(), (v - exact).abs());
    }
    Ok((rec, Ok(())))
}

fn limit_spec(c: &Common) -> Result<QuadratureSpec, CliError> {
    Ok(QuadratureSpec { panels: 2, nodes_per_panel: 32, cutoff: 900.0, rel_tol: tol(c, 1e-8)? })
}

pub fn phi_limit(c: &Common) -> Outcome {
    let (u, v) = (need(c.u, "u")?, need(c.v, "v")?);
    let pp = CdhProcessParams::new(u, v)?;
    let q = query(c)?;
    let tag = range_tag(&pp, &q)?;
    let spec = limit_spec(c)?;
    let r = converged(|s| kpz::phi_limit(&pp, &q, s), &spec)?;
    let val = r.value;
    let mut rec = ResultRecord::new("phi-limit", &["phi", "quadrature_error", "range"]);
    echo_common(&mut rec, c);
    rec.quadrature(&r.spec);
    let tag = match tag {
        RangeTag::FiniteN => "finite-n",
        RangeTag::LimitOnly => "limit-only",
    };
    rec.row(vec![val.into(), r.gap.into(), tag.into()]);
    if q.d() == 1 && q.x[0] == 1.0 && u > 0.0 && v > 0.0 && q.c[0] > 0.0 && q.c[0] < 2.0 * u {
        let sp = single_point_formula(u, v, q.c[0], &spec)?;
        rec.summary.insert("single_point_formula".into(), sp);
        rec.residuals.insert("phi_vs_single_point".into(), (val - sp).abs());
    }
    Ok((rec, Ok(())))
}

pub fn convergence(c: &Common, a: &crate::ConvergenceArgs) -> Outcome {
    let bp = boundary(c)?;
    let pp = CdhProcessParams::new(bp.u, bp.v)?;
    let q = query(c)?;
    range_tag(&pp, &q)?;
    if a.ladder.is_empty() || a.ladder.contains(&0) {
        return Err(CliError::Config("--ladder needs positive site counts".into()));
    }
    let spec = limit_spec(c)?;
    let limit = converged(|s| kpz::phi_limit(&pp, &q, s), &spec)?.value;
    let vals = a
        .ladder
        .par_iter()
        .map(|&n| {
            let mut s = phi_n_spec(n, &q);
            s.rel_tol = spec.rel_tol;
            self_converge(|s| askey_wilson::phi_n(bp, n, &q, s), &s, MAX_DOUBLINGS).map(|r| r.value)
        })
        .collect::<kpz_stationary::Result<Vec<_>>>()?;
    let mut rec = ResultRecord::new("convergence", &["n_sites", "phi_n", "phi", "abs_diff"]);
    echo_common(&mut rec, c);
    rec.input("ladder", &a.ladder);
    rec.quadrature(&spec);
    let diffs: Vec<f64> = vals.iter().map(|v| (v - limit).abs()).collect();
    for ((&n, &v), &d) in a.ladder.iter().zip(&vals).zip(&diffs) {
        rec.row(vec![Cell::from(n), v.into(), limit.into(), d.into()]);
    }
    let monotone = diffs.windows(2).all(|w| w[1] < w[0]);
    rec.summary.insert("monotone".into(), if monotone { 1.0 } else { 0.0 });
    let ok = if monotone { Ok(()) } else { Err(CliError::Invariant("|φ^(N) − φ| is not decreasing".into())) };
    Ok((rec, ok))
}

pub fn cdh_table(c: &Common, a: &crate::CdhTableArgs) -> Outcome {
    let (u, v) = (need(c.u, "u")?, need(c.v, "v")?);
    let pp = CdhProcessParams::new(u, v)?;
    if a.r_max.is_nan() || a.r_max <= 0.0 || a.points < 2 {
        return Err(CliError::Config("need --r-max > 0 and --points ≥ 2".into()));
    }
    let grid = pp.atom_grid(a.s)?;
    let mut rec = ResultRecord::new("cdh-table", &["kind", "location", "value"]);
    echo_common(&mut rec, c);
    rec.input("s", a.s).input("r_max", a.r_max).input("points", a.points);
    for (x, m) in grid.locations.iter().zip(&grid.masses) {
        rec.row(vec!["atom".into(), (*x).into(), (*m).into()]);
    }
    for k in 1..=a.points {
        let r = a.r_max * k as f64 / a.points as f64;
        rec.row(vec!["density".into(), r.into(), pp.marginal_density(a.s, r)?.into()]);
    }
    rec.summary.insert("c_uv".into(), pp.c_uv());
    Ok((rec, Ok(())))
}

/// Scale the continuous part of `mu` by `1 + eps`.
fn perturbed(mu: MixedMeasure, eps: f64) -> MixedMeasure {
    if eps == 0.0 {
        return mu;
    }
    let Some(cont) = mu.continuous else { return mu };
    let lw = cont.log_weight.clone();
    let shift = (1.0 + eps).ln();
    MixedMeasure::from_log_weight(cont.chart, std::sync::Arc::new(move |t| lw(t) + shift), mu.atoms, true)
}

struct Check {
    name: &'static str,
    value: f64,
    threshold: f64,
    /// `true` if the check passes when `value ≥ threshold`.
    at_least: bool,
}

impl Check {
    fn at_most(name: &'static str, value: f64, threshold: f64) -> Self {
        Check { name, value, threshold, at_least: false }
    }
    fn passed(&self) -> bool {
        if self.at_least {
            self.value >= self.threshold
        } else {
            self.value <= self.threshold
        }
    }
}

pub fn verify(c: &Common, a: &crate::VerifyArgs) -> Outcome {
    let t = tol(c, 1e-6)?;
    let spec = QuadratureSpec { panels: 2, nodes_per_panel: 32, cutoff: 1600.0, rel_tol: 1e-10 };
    let cx = |re: f64, im: f64| Complex64::new(re, im);
    let mut checks = Vec::new();

    let mut theta = 0.0f64;
    for kappa in [0.25, 0.5, 1.0] {
        for z in [cx(0.3, 0.0), cx(0.7, 0.4), cx(1.2, -0.1)] {
            for sign in [Sign::Plus, Sign::Minus] {
                theta = theta.max(theta_identity_residual(kappa, z, sign)?);
            }
        }
    }
    checks.push(Check::at_most("theta_identities", theta, 1e-9));

    let kappas: Vec<f64> = (3..=10).map(|k| 2f64.powi(-k)).collect();
    let mut slope = f64::INFINITY;
    for z in [cx(1.3, 0.0), cx(0.4, 0.7), cx(-0.2, 0.1)] {
        for sign in [Sign::Plus, Sign::Minus] {
            slope = slope.min(asymptotic_error_slope(z, sign, 1, &kappas)?);
        }
    }
    checks.push(Check { name: "q_asymptotic_min_slope", value: slope, threshold: 0.9, at_least: true });

    let eps = a.perturb;
    let mut norm = 0.0f64;
    for p in [AwParams::real(0.5, -0.3, 0.4, -0.2, 0.5), AwParams::real(1.4, -0.3, 0.4, -0.2, 0.5)] {
        norm = norm.max((perturbed(aw_measure(&p)?, eps).total_mass(&spec)? - 1.0).abs());
    }
    for mu in [
        cdh::cdh(0.5, cx(0.7, 0.3), cx(0.7, -0.3))?,
        cdh::cdh(-1.3, cx(0.7, 0.3), cx(0.7, -0.3))?,
        wilson_measure(cx(0.3, 0.0), cx(0.5, 0.0), cx(0.6, 0.2), cx(0.6, -0.2), None)?,
    ] {
        norm = norm.max((perturbed(mu, eps).total_mass(&spec)? - 1.0).abs());
    }
    checks.push(Check::at_most("normalisation", norm, t));

    let bp = BoundaryParams::new(1.0, 0.5);
    let q = LaplaceQuery::single(0.5, 0.3)?;
    let exact = laplace_exact(&stationary_exact(&model_from_uv(4, bp)?)?, &q);
    let aw = askey_wilson::phi_n(bp, 4, &q, &phi_n_spec(4, &q))?;
    checks.push(Check::at_most("key_identity_n4", (aw - exact).abs(), t));

    let m = model_from_uv(8, BoundaryParams::new(1.0, -1.0))?;
    let g = build_generator(&m)?;
    checks.push(Check::at_most(
        "brownian_product_residual",
        g.residual(&product_bernoulli(8, rho_of(m.q, 1.0))),
        1e-12,
    ));
    checks.push(Check::at_most("generator_row_sums", g.row_sums().iter().fold(0.0, |x, y| x.max(y.abs())), 1e-13));

    let pp = AwProcessParams::new(1.3, -0.4, 0.5, -0.2, 0.6)?;
    let via = chain(&aw_marginal(&pp, 0.7)?, |x| aw_transition(&pp, 0.7, 0.95, x), &spec)?;
    let direct = aw_marginal(&pp, 0.95)?;
    let mut ck = 0.0f64;
    for x in [-0.9, -0.3, 0.1, 0.6, 0.95] {
        ck = ck.max((via.density(x) / direct.density(x) - 1.0).abs());
    }
    for (p, d) in via.atoms.iter().zip(&direct.atoms) {
        ck = ck.max((p.mass() / d.mass() - 1.0).abs());
    }
    checks.push(Check::at_most("aw_chapman_kolmogorov", ck, 1e-5));

    let cpp = CdhProcessParams::new(2.0, -0.6)?;
    let cspec = QuadratureSpec { panels: 2, nodes_per_panel: 32, cutoff: 900.0, rel_tol: 1e-8 };
    let rep = check_consistency(&cpp, 0.0, 0.4, 0.9, &[0.3, 1.0, 4.0, 12.0], &[-1.44, 2.0], &cspec)?;
    checks.push(Check::at_most("cdh_chapman_kolmogorov", rep.max(), 1e-5));
    checks.push(Check::at_most("cdh_structural_zeros", structural_zeros(&cpp, 0.0, 0.4, &cspec)?, 0.0));

    let models = [(-0.5, 0.5), (1.0, 0.5), (1.0, -1.0)]
        .iter()
        .map(|&(u, v)| model_from_uv(20, BoundaryParams::new(u, v)))
        .collect::<kpz_stationary::Result<Vec<_>>>()?;
    let coupling = Coupling::new(models)?;
    let s = coupling.simulate(&vec![Configuration::empty(20); 3], 20_000, c.seed.unwrap_or(0))?;
    checks.push(Check::at_most("coupling_violations", s.ordering_violations as f64, 0.0));
    let small = Coupling::new(
        [(-0.5, 0.5), (1.0, 0.5)]
            .iter()
            .map(|&(u, v)| model_from_uv(2, BoundaryParams::new(u, v)))
            .collect::<kpz_stationary::Result<Vec<_>>>()?,
    )?;
    checks.push(Check::at_most(
        "coupling_projection",
        small.projection_defect(1)?.max(small.projection_defect(2)?),
        0.0,
    ));

    let mut rec = ResultRecord::new("verify", &["check", "value", "threshold", "passed"]);
    echo_common(&mut rec, c);
    rec.seed = Some(c.seed.unwrap_or(0));
    rec.input("perturb", a.perturb);
    rec.quadrature(&spec);
    for ch in &checks {
        rec.row(vec![ch.name.into(), ch.value.into(), ch.threshold.into(), ch.passed().into()]);
        rec.residuals.insert(ch.name.into(), ch.value);
    }
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed()).map(|c| c.name).collect();
    rec.passed = Some(failed.is_empty());
    let ok =
        if failed.is_empty() { Ok(()) } else { Err(CliError::Invariant(format!("failed: {}", failed.join(", ")))) };
    Ok((rec, ok))
}
