//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits nonzero if any fails.

use std::process::ExitCode;
use std::time::Instant;

use kpz_stationary::asep::{
    self, build_generator, laplace_exact, model_from_uv, product_bernoulli, rho_of, stationary_exact, AsepModel,
    BoundaryParams, Configuration, Coupling, SimOptions, StationaryDistribution,
};
use kpz_stationary::askey_wilson::{
    aw_marginal, aw_measure, aw_transition, phi_n, phi_n_spec, scaled_atoms, scaled_marginal_density, AwParams,
    AwProcessParams,
};
use kpz_stationary::cdh::{self, check_consistency, structural_zeros, wilson_measure, x_u, x_v, CdhProcessParams};
use kpz_stationary::kpz::{brownian_case, phi_limit, single_point_formula, LaplaceQuery};
use kpz_stationary::measure::{chain, self_converge, MixedMeasure, QuadratureSpec};
use kpz_stationary::specfun::{asymptotic_error_slope, log_gamma_real, logsumexp, theta_identity_residual, Sign};
use kpz_stationary::{Complex64, Result};

type Outcome = Result<(bool, String)>;
type Criterion = (&'static str, fn() -> Outcome);

fn cx(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn fine() -> QuadratureSpec {
    QuadratureSpec { panels: 2, nodes_per_panel: 32, cutoff: 1600.0, rel_tol: 1e-10 }
}

fn key_identity() -> Outcome {
    let queries = [
        LaplaceQuery::single(0.5, 0.3)?,
        LaplaceQuery::single(1.0, 0.7)?,
        LaplaceQuery::new(vec![0.25, 0.75], vec![0.3, 0.4])?,
        LaplaceQuery::new(vec![0.5, 1.0], vec![0.2, 0.5])?,
    ];
    let mut worst = 0.0f64;
    for (n, u, v) in [(4, 1.0, 0.5), (6, 0.8, 0.8), (8, 1.5, -0.3)] {
        let bp = BoundaryParams::new(u, v);
        let dist = stationary_exact(&model_from_uv(n, bp)?)?;
        for q in &queries {
            let aw = self_converge(|s| phi_n(bp, n, q, s), &phi_n_spec(n, q), 4)?.value;
            worst = worst.max((aw - laplace_exact(&dist, q)).abs());
        }
    }
    Ok((worst <= 1e-6, format!("max |phi_n - laplace_exact| = {worst:.2e} (tol 1e-6)")))
}

fn brownian() -> Outcome {
    let queries = [LaplaceQuery::single(0.5, 0.7)?, LaplaceQuery::new(vec![0.25, 1.0], vec![0.4, 0.9])?];
    let (mut res, mut lap) = (0.0f64, 0.0f64);
    for u in [0.5, 1.0] {
        for n in [4, 8, 12] {
            let model = model_from_uv(n, BoundaryParams::new(u, -u))?;
            let pi = product_bernoulli(n, rho_of(model.q, u));
            res = res.max(build_generator(&model)?.residual(&pi));
            let dist = StationaryDistribution { probs: pi, model, residual: 0.0 };
            for q in &queries {
                lap = lap.max((laplace_exact(&dist, q) - brownian_case(u, n, q)).abs());
            }
        }
    }
    let ok = res <= 1e-12 && lap <= 1e-12;
    Ok((ok, format!("generator residual {res:.2e}, closed-form gap {lap:.2e} (tol 1e-12)")))
}

fn normalisation() -> Outcome {
    let s = fine();
    let pp = CdhProcessParams::new(2.0, -0.6)?;
    let fixtures: Vec<(&str, MixedMeasure)> = vec![
        ("cdh P", cdh::cdh(0.5, cx(0.7, 0.3), cx(0.7, -0.3))?),
        ("cdh N1 complex", cdh::cdh(-0.4, cx(0.7, 0.3), cx(0.7, -0.3))?),
        ("cdh N1 real", cdh::cdh(-1.3, cx(1.5, 0.0), cx(2.0, 0.0))?),
        ("cdh N2", cdh::cdh(-2.5, cx(0.5, 0.0), cx(1.0, 0.0))?),
        ("wilson P1", wilson_measure(cx(0.3, 0.0), cx(0.5, 0.0), cx(0.6, 0.2), cx(0.6, -0.2), None)?),
        ("wilson P2", wilson_measure(cx(0.3, 0.4), cx(0.3, -0.4), cx(0.6, 0.2), cx(0.6, -0.2), None)?),
        ("wilson N1", wilson_measure(cx(-0.4, 0.0), cx(0.7, 0.0), cx(1.6, 0.2), cx(1.6, -0.2), None)?),
        ("wilson N2", wilson_measure(cx(-2.2, 0.0), cx(0.2, 0.0), cx(0.5, 0.0), cx(2.5, 0.0), None)?),
        ("cdh transition from atom", pp.transition_from(0.0, 0.4, x_v(-0.6, 0, 0.0))?),
        ("aw atomic marginal", aw_measure(&AwParams::real(1.4, -0.3, 0.4, -0.2, 0.5))?),
        ("aw three atoms", aw_measure(&AwParams::real(3.0, -0.5, 0.2, 0.1, 0.6))?),
    ];
    let mut worst = 0.0f64;
    let mut positive = true;
    let mut atoms = 0;
    for (name, mu) in &fixtures {
        let m = mu.total_mass(&s)?;
        if (m - 1.0).abs() > 1e-6 || m.is_nan() {
            eprintln!("  {name}: mass {m}");
        }
        worst = worst.max((m - 1.0).abs());
        positive &= mu.atoms.iter().all(|a| a.mass() > 0.0);
        atoms += mu.atoms.len();
    }
    Ok((
        worst <= 1e-6 && positive,
        format!(
            "{} fixtures, {atoms} atoms, max |mass - 1| = {worst:.2e} (tol 1e-6), atoms positive: {positive}",
            fixtures.len()
        ),
    ))
}

fn chapman_kolmogorov() -> Outcome {
    let spec = QuadratureSpec { panels: 2, nodes_per_panel: 32, cutoff: 900.0, rel_tol: 1e-10 };
    let probes = [0.3, 1.0, 4.0, 12.0, 40.0];
    let mut cdh_worst = 0.0f64;
    let cases: [(f64, f64, f64, f64, f64, Vec<f64>); 4] = [
        (1.0, 0.5, 0.1, 0.4, 0.9, vec![0.7, 3.0]),
        (2.0, -0.6, 0.0, 0.4, 0.9, vec![x_v(-0.6, 0, 0.0), 2.0]),
        (2.0, -0.6, 0.2, 0.8, 1.5, vec![x_v(-0.6, 0, 0.2), 1.0]),
        (-0.6, 2.0, 0.3, 0.9, 1.6, vec![x_u(-0.6, 0, 0.3), 2.5]),
    ];
    for (u, v, s, t, w, sources) in &cases {
        let pp = CdhProcessParams::new(*u, *v)?;
        cdh_worst = cdh_worst.max(check_consistency(&pp, *s, *t, *w, &probes, sources, &spec)?.max());
    }

    let mut aw_worst = 0.0f64;
    for (pp, s, t) in [
        (AwProcessParams::new(1.3, -0.4, 0.5, -0.2, 0.6)?, 0.7, 0.95),
        (AwProcessParams::new(0.5, -0.3, 0.4, -0.1, 0.5)?, 0.5, 0.9),
        (AwProcessParams::new(3.0, -0.3, 0.2, -0.1, 0.5)?, 0.8, 0.95),
    ] {
        let via = chain(&aw_marginal(&pp, s)?, |x| aw_transition(&pp, s, t, x), &fine())?;
        let direct = aw_marginal(&pp, t)?;
        for x in [-0.9, -0.3, 0.1, 0.6, 0.95] {
            aw_worst = aw_worst.max((via.density(x) / direct.density(x) - 1.0).abs());
        }
        if via.atoms.len() != direct.atoms.len() {
            aw_worst = f64::INFINITY;
        }
        for (a, b) in via.atoms.iter().zip(&direct.atoms) {
            aw_worst = aw_worst.max((a.mass() / b.mass() - 1.0).abs());
        }
    }

    let mut zeros = 0.0f64;
    for (u, v, s, t) in [(2.0, -0.6, 0.0, 0.8), (-0.6, 2.0, 0.3, 1.6), (-0.6, 2.0, 0.9, 1.7), (1.0, 0.5, 0.2, 0.8)] {
        zeros = zeros.max(structural_zeros(&CdhProcessParams::new(u, v)?, s, t, &spec)?);
    }
    let ok = cdh_worst <= 1e-5 && aw_worst <= 1e-5 && zeros == 0.0;
    Ok((ok, format!("cdh residual {cdh_worst:.2e}, aw residual {aw_worst:.2e} (tol 1e-5), structural zeros {zeros:e}")))
}

fn convergence() -> Outcome {
    let bp = BoundaryParams::new(1.0, 0.5);
    let q = LaplaceQuery::single(0.5, 0.3)?;
    let limit = phi_limit(
        &CdhProcessParams::new(1.0, 0.5)?,
        &q,
        &QuadratureSpec { panels: 2, nodes_per_panel: 32, cutoff: 900.0, rel_tol: 1e-10 },
    )?;
    let mut gaps = Vec::new();
    for n in [16, 64, 256, 1024] {
        let v = self_converge(|s| phi_n(bp, n, &q, s), &phi_n_spec(n, &q), 4)?.value;
        gaps.push((v - limit).abs());
    }
    let decreasing = gaps.windows(2).all(|w| w[1] < w[0]);
    let last = *gaps.last().unwrap();
    let shown: Vec<String> = gaps.iter().map(|g| format!("{g:.2e}")).collect();
    Ok((decreasing && last <= 1e-2, format!("gaps [{}] (final tol 1e-2)", shown.join(", "))))
}

fn single_point() -> Outcome {
    let spec = QuadratureSpec { panels: 2, nodes_per_panel: 32, cutoff: 900.0, rel_tol: 1e-10 };
    let mut worst = 0.0f64;
    for (u, v, c) in [(1.0, 1.0, 0.5), (1.0, 0.8, 0.3)] {
        let a = phi_limit(&CdhProcessParams::new(u, v)?, &LaplaceQuery::single(1.0, c)?, &spec)?;
        let b = single_point_formula(u, v, c, &spec)?;
        worst = worst.max((a - b).abs());
    }
    Ok((worst <= 1e-7, format!("max gap {worst:.2e} (tol 1e-7)")))
}

fn scaled_measures() -> Outcome {
    let ladder = [100usize, 1_000, 10_000];
    let probes = [0.5, 2.0, 5.0, 10.0, 20.0];
    let mut monotone = true;
    let mut final_rel = 0.0f64;
    for (u, v, t) in [(1.0, 0.5, 0.5), (2.0, -0.6, 0.0)] {
        let bp = BoundaryParams::new(u, v);
        let pp = CdhProcessParams::new(u, v)?;
        for r in probes {
            let target = pp.marginal_density(t, r)?;
            let mut prev = f64::INFINITY;
            for n in ladder {
                let e = (scaled_marginal_density(bp, n, t, r)? - target).abs();
                monotone &= e < prev;
                prev = e;
            }
            final_rel = final_rel.max(prev / target);
        }
    }
    let bp = BoundaryParams::new(2.0, -0.6);
    let grid = CdhProcessParams::new(2.0, -0.6)?.atom_grid(0.0)?;
    let mut atom_rel = 0.0f64;
    let mut prev = f64::INFINITY;
    for n in ladder {
        let atoms = scaled_atoms(bp, n, 0.0)?;
        if atoms.len() != grid.locations.len() {
            return Ok((false, format!("N = {n}: {} atoms, expected {}", atoms.len(), grid.locations.len())));
        }
        let mut e = 0.0f64;
        for ((y, m), (x, w)) in atoms.iter().zip(grid.locations.iter().zip(&grid.masses)) {
            e = e.max(((y - x) / x).abs()).max(((m - w) / w).abs());
        }
        monotone &= e < prev;
        prev = e;
        atom_rel = e;
    }
    Ok((
        monotone && atom_rel <= 1e-2,
        format!("errors decrease: {monotone}, final density rel err {final_rel:.2e}, final atom rel err {atom_rel:.2e} (tol 1e-2)"),
    ))
}

fn q_asymptotics() -> Outcome {
    let kappas: Vec<f64> = (3..=10).map(|k| 2f64.powi(-k)).collect();
    let mut slope = f64::INFINITY;
    let mut theta = 0.0f64;
    for z in [cx(1.3, 0.0), cx(0.4, 0.7), cx(-0.2, 0.1)] {
        for sign in [Sign::Plus, Sign::Minus] {
            slope = slope.min(asymptotic_error_slope(z, sign, 1, &kappas)?);
            for &k in &kappas {
                theta = theta.max(theta_identity_residual(k, z, sign)?);
            }
        }
    }
    Ok((
        slope >= 0.9 && theta <= 1e-9,
        format!("min error slope {slope:.3} (need 0.9), theta residual {theta:.2e} (tol 1e-9)"),
    ))
}

fn coupling() -> Outcome {
    let (u, v) = (1.0, 0.5);
    let models = |n: usize| -> Result<Vec<AsepModel>> {
        [(-v, v), (u, v), (u, -u)].iter().map(|&(a, b)| model_from_uv(n, BoundaryParams::new(a, b))).collect()
    };
    let big = Coupling::new(models(50)?)?;
    let s = big.simulate(&vec![Configuration::empty(50); 3], 100_000, 7)?;
    let small = Coupling::new(models(2)?)?;
    let mut defect = 0.0f64;
    for i in 1..=small.m() {
        defect = defect.max(small.projection_defect(i)?);
    }
    let ok = s.ordering_violations == 0 && s.events == 100_000 && defect <= 1e-12;
    Ok((
        ok,
        format!(
            "{} events, {} ordering violations, projection defect {defect:.1e} (tol 1e-12)",
            s.events, s.ordering_violations
        ),
    ))
}

/// Exact TASEP current for `α = β = a`: `Z_{N−1}/Z_N` with
/// `Z_N = Σ_p p (2N−p−1)! / (N! (N−p)!) (p+1) a^{−p}`.
fn tasep_current_equal_rates(n: usize, a: f64) -> Result<f64> {
    let log_z = |n: usize| -> Result<f64> {
        let lf = |k: usize| log_gamma_real(k as f64 + 1.0).map(|v| v.0);
        let mut terms = Vec::with_capacity(n);
        for p in 1..=n {
            terms.push(
                (p as f64).ln() + lf(2 * n - p - 1)? - lf(n)? - lf(n - p)? + ((p + 1) as f64).ln() - p as f64 * a.ln(),
            );
        }
        Ok(logsumexp(&terms))
    };
    Ok((log_z(n - 1)? - log_z(n)?).exp())
}

fn phase_diagram() -> Outcome {
    let n = 200;
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, l, r, target) in [("MC", 0.75, 0.25, 0.25), ("LD", 0.2, 0.3, 0.2 * 0.8), ("HD", 0.6, 0.75, 0.75 * 0.25)]
    {
        let model = AsepModel::from_densities(n, 0.0, l, r)?;
        let (mut sum, mut var) = (0.0, 0.0);
        for seed in 1..=3u64 {
            let opts = SimOptions::events(1_000_000).with_burn_in(10.0 * n as f64);
            let s = asep::simulate(&model, opts, seed, &Configuration::empty(n))?;
            sum += s.current;
            var += s.current_std_error().powi(2);
        }
        let (mean, se) = (sum / 3.0, var.sqrt() / 3.0);
        let z = (mean - target) / se;
        ok &= z.abs() <= 3.0;
        let mut part = format!("{name} J = {mean:.5} +- {se:.1e}, z = {z:.2}");
        if name == "MC" {
            let exact = tasep_current_equal_rates(n, model.alpha)?;
            part += &format!(" (exact J_N = {exact:.5}, z = {:.2})", (mean - exact) / se);
        }
        parts.push(part);
    }
    Ok((ok, format!("{} (tol |z| <= 3)", parts.join("; "))))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("key identity", key_identity),
        ("brownian case", brownian),
        ("normalisation", normalisation),
        ("chapman-kolmogorov", chapman_kolmogorov),
        ("finite-N convergence", convergence),
        ("single-point formula", single_point),
        ("scaled measures", scaled_measures),
        ("q-pochhammer asymptotics", q_asymptotics),
        ("coupling", coupling),
        ("phase diagram", phase_diagram),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let start = Instant::now();
        let (ok, detail) = match f() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        failed += usize::from(!ok);
        let tag = if ok { "PASS" } else { "FAIL" };
        println!("{tag} {:>2} {name}: {detail} [{:.1} s]", k + 1, start.elapsed().as_secs_f64());
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
