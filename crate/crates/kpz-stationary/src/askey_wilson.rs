//! Askey-Wilson measures, the Askey-Wilson process and the finite-N Laplace
//! transform of the open ASEP height function.
//!
//! Continuous parts live on [`Chart::Angle`]: the log weight is taken with
//! respect to `θ`, where `x = cos θ`.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::asep::{q_of, BoundaryParams};
use crate::kpz::LaplaceQuery;
use crate::measure::{chain, Atom, Chart, LogFn, MixedMeasure, QuadratureSpec};
use crate::specfun::log_abs_qpoch_polar;
use crate::{Complex64, Error, Result};

/// Factors `1 − x q^k` smaller than this in modulus are treated as exact zeros.
pub const SNAP_TOL: f64 = 1e-10;

const TRUNC: f64 = 1e-18;
const IMAG_TOL: f64 = 1e-9;

/// Parameters `(a, b, c, d; q)` of an Askey-Wilson law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AwParams {
    pub a: Complex64,
    pub b: Complex64,
    pub c: Complex64,
    pub d: Complex64,
    pub q: f64,
}

impl AwParams {
    pub fn new(a: Complex64, b: Complex64, c: Complex64, d: Complex64, q: f64) -> Self {
        AwParams { a, b, c, d, q }
    }

    pub fn real(a: f64, b: f64, c: f64, d: f64, q: f64) -> Self {
        let r = |x: f64| Complex64::new(x, 0.0);
        AwParams { a: r(a), b: r(b), c: r(c), d: r(d), q }
    }

    fn list(&self) -> [Complex64; 4] {
        [self.a, self.b, self.c, self.d]
    }

    /// Checks `q ∈ (−1, 1)`, the conjugate-pair structure and that none of
    /// `ac, ad, bc, bd, abcd` (and their `q` multiples) lies in `[1, ∞)`.
    ///
    /// If one of `ac, ad, bc, bd` equals `q^{−j}`, the law degenerates to
    /// finitely many atoms and the remaining checks are skipped.
    pub fn validate(&self) -> Result<()> {
        let q = self.q;
        if !(q > -1.0 && q < 1.0) {
            return Err(Error::Admissibility(format!("q = {q} outside (−1, 1)")));
        }
        let ps = self.list();
        if ps.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Admissibility("non-finite parameter".into()));
        }
        // Real coefficients of ∏(X − z) is the same as closure under conjugation.
        let e1: Complex64 = ps.iter().sum();
        let e4: Complex64 = ps.iter().product();
        let mut e2 = Complex64::new(0.0, 0.0);
        let mut e3 = Complex64::new(0.0, 0.0);
        for i in 0..4 {
            for j in i + 1..4 {
                e2 += ps[i] * ps[j];
                for k in j + 1..4 {
                    e3 += ps[i] * ps[j] * ps[k];
                }
            }
        }
        let scale = 1.0 + ps.iter().map(|z| z.norm()).fold(0.0, f64::max).powi(4);
        if [e1, e2, e3, e4].iter().any(|e| e.im.abs() > IMAG_TOL * scale) {
            return Err(Error::Admissibility(format!("parameters {ps:?} are not closed under conjugation")));
        }
        let (a, b, c, d) = (self.a, self.b, self.c, self.d);
        let products = [("ac", a * c), ("ad", a * d), ("bc", b * c), ("bd", b * d), ("abcd", a * b * c * d)];
        let is_real = |p: Complex64| p.im.abs() <= 1e-14 * p.norm();
        if products[..4].iter().any(|&(_, p)| is_real(p) && p.re > 0.0 && is_inverse_power(p.re, q)) {
            return Ok(());
        }
        for (name, p) in products {
            for (m, pm) in [(1.0, p), (q, p * q)] {
                if is_real(pm) && pm.re >= 1.0 {
                    let label = if m == 1.0 { name.to_string() } else { format!("q{name}") };
                    return Err(Error::Admissibility(format!("{label} = {} lies in [1, ∞)", pm.re)));
                }
            }
        }
        Ok(())
    }
}

fn is_inverse_power(p: f64, q: f64) -> bool {
    if q <= 0.0 {
        return (p - 1.0).abs() < SNAP_TOL;
    }
    let j = (-(p.ln()) / q.ln()).round();
    j >= 0.0 && (p * q.powf(j) - 1.0).abs() < SNAP_TOL
}

/// `log (x; q)_n` (or `n = ∞` when `n` is `None`); `None` if a factor vanishes.
fn lq(x: Complex64, q: f64, n: Option<usize>) -> Option<Complex64> {
    let mut sum = Complex64::new(0.0, 0.0);
    let mut xk = x;
    let mut k = 0;
    loop {
        match n {
            Some(n) if k >= n => break,
            None if xk.norm() < TRUNC => break,
            _ => {}
        }
        let f = Complex64::new(1.0, 0.0) - xk;
        if f.norm() < SNAP_TOL {
            return None;
        }
        sum += f.ln();
        xk *= q;
        k += 1;
    }
    Some(sum)
}

fn lq_all(xs: &[Complex64], q: f64) -> Option<Complex64> {
    xs.iter().map(|&x| lq(x, q, None)).sum()
}

/// Log of a positive quantity given as a complex logarithm; errors if the
/// quantity is negative.
fn positive_part(z: Complex64, what: &str) -> Result<f64> {
    if z.im.cos() > 0.0 {
        Ok(z.re)
    } else {
        Err(Error::Admissibility(format!("{what} is negative")))
    }
}

/// `(r, φ-offset)` such that `|(z e^{iθ}; q)_∞| = |(r e^{i(θ + offset)}; q)_∞|`.
fn polar(z: Complex64) -> (f64, f64) {
    if z.im == 0.0 {
        (z.re, 0.0)
    } else {
        (z.norm(), z.arg())
    }
}

/// Log normaliser `(q, ab, ac, ad, bc, bd, cd)_∞ / (2π (abcd)_∞)`, or `None`
/// when the continuous part vanishes.
fn log_normaliser(p: &AwParams) -> Result<Option<f64>> {
    let (a, b, c, d, q) = (p.a, p.b, p.c, p.d, p.q);
    let den = lq(a * b * c * d, q, None).ok_or_else(|| Error::Domain(format!("(abcd; q)_∞ vanishes for {p:?}")))?;
    let qc = Complex64::new(q, 0.0);
    match lq_all(&[qc, a * b, a * c, a * d, b * c, b * d, c * d], q) {
        None => Ok(None),
        Some(num) => Ok(Some(positive_part(num - den, "continuous normaliser")? - (2.0 * PI).ln())),
    }
}

/// Atoms generated by the real parameter `chi` with `|chi| > 1`.
fn atoms_from(chi: f64, others: [Complex64; 3], q: f64) -> Result<Vec<Atom>> {
    let mut out = Vec::new();
    if chi.abs() <= 1.0 {
        return Ok(out);
    }
    let x = Complex64::new(chi, 0.0);
    let [o1, o2, o3] = others;
    let num0 = lq_all(&[1.0 / (x * x), o1 * o2, o1 * o3, o2 * o3], q);
    let den0 = lq_all(&[o1 / x, o2 / x, o3 / x, x * o1 * o2 * o3], q)
        .ok_or_else(|| Error::Domain(format!("pole in the atom masses for chi = {chi}")))?;
    let Some(num0) = num0 else {
        return Ok(out);
    };
    let log_m0 = num0 - den0;
    // Step j−1 → j multiplies by (x², xo₁, xo₂, xo₃; q)-factors over
    // (1 − q^j) Π(o_i − xq^j) times q/x, which stays finite as o_i → 0.
    let step = (Complex64::new(q, 0.0) / x).ln();
    let up = [x * x, x * o1, x * o2, x * o3];
    let one = Complex64::new(1.0, 0.0);
    let mut acc = Complex64::new(0.0, 0.0);
    let mut dead = false;
    let mut j = 0usize;
    let mut chi_qj = chi;
    while chi_qj.abs() >= 1.0 {
        if j > 0 {
            let qk = q.powi(j as i32 - 1);
            for u in up {
                let f = one - u * qk;
                if f.norm() < SNAP_TOL {
                    dead = true;
                } else {
                    acc += f.ln();
                }
            }
            let xqj = x * (qk * q);
            acc -= Complex64::new(1.0 - qk * q, 0.0).ln();
            for o in others {
                let f = o - xqj;
                if f.norm() < SNAP_TOL * o.norm() {
                    return Err(Error::Domain(format!("pole in the atom masses for chi = {chi}, j = {j}")));
                }
                acc -= f.ln();
            }
            acc += step;
        }
        if dead {
            break;
        }
        let edge = 1.0 - chi_qj * chi_qj;
        if edge.abs() >= SNAP_TOL {
            let log_mass = log_m0 + acc + Complex64::new(edge.abs().ln() - (chi * chi - 1.0).ln(), 0.0);
            let lm = positive_part(
                log_mass + if edge < 0.0 { Complex64::new(0.0, 0.0) } else { Complex64::new(0.0, PI) },
                "atom mass",
            )?;
            let y = 0.5 * (chi_qj + 1.0 / chi_qj);
            out.push(Atom { location: y, log_mass: lm });
        }
        j += 1;
        chi_qj *= q;
        if j > 100_000 {
            return Err(Error::Domain("too many atoms".into()));
        }
    }
    Ok(out)
}

/// All atoms of the law with parameters `p`.
pub fn aw_atoms(p: &AwParams) -> Result<Vec<Atom>> {
    let ps = p.list();
    let mut atoms = Vec::new();
    for i in 0..4 {
        let z = ps[i];
        if z.im.abs() > 0.0 || z.re.abs() <= 1.0 {
            continue;
        }
        let others: Vec<Complex64> = (0..4).filter(|&k| k != i).map(|k| ps[k]).collect();
        atoms.extend(atoms_from(z.re, [others[0], others[1], others[2]], p.q)?);
    }
    Ok(atoms)
}

/// Askey-Wilson law on `[−1, 1]` plus atoms, with continuous quadrature
/// resolution `scale` near `x = 1` (see [`Chart::Angle`]).
pub fn aw_measure_scaled(p: &AwParams, scale: f64) -> Result<MixedMeasure> {
    p.validate()?;
    let atoms = aw_atoms(p)?;
    let chart = Chart::Angle { scale };
    let Some(log_k) = log_normaliser(p)? else {
        return Ok(MixedMeasure::from_atoms(atoms, true));
    };
    let q = p.q;
    let factors: Vec<(f64, f64)> = p.list().iter().map(|&z| polar(z)).collect();
    let lw: LogFn = Arc::new(move |theta: f64| {
        let mut v = log_k + 2.0 * log_abs_qpoch_polar(1.0, theta.sin().powi(2), q);
        for &(r, off) in &factors {
            v -= 2.0 * log_abs_qpoch_polar(r, (0.5 * (theta + off)).sin().powi(2), q);
        }
        v
    });
    Ok(MixedMeasure::from_log_weight(chart, lw, atoms, true))
}

/// Askey-Wilson law with unit chart scale.
pub fn aw_measure(p: &AwParams) -> Result<MixedMeasure> {
    aw_measure_scaled(p, 1.0)
}

/// Parameters `(A, B, C, D; q)` of an Askey-Wilson process.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AwProcessParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub q: f64,
    /// Chart scale used for every measure the process produces.
    pub scale: f64,
}

impl AwProcessParams {
    pub fn new(a: f64, b: f64, c: f64, d: f64, q: f64) -> Result<Self> {
        if !(a > 0.0 && c > 0.0) {
            return Err(Error::Admissibility(format!("need A, C > 0, got A = {a}, C = {c}")));
        }
        if !(b > -1.0 && b <= 0.0 && d > -1.0 && d <= 0.0) {
            return Err(Error::Admissibility(format!("need B, D ∈ (−1, 0], got B = {b}, D = {d}")));
        }
        if a * c >= 1.0 {
            return Err(Error::Admissibility(format!("need AC < 1, got {}", a * c)));
        }
        if !(q > -1.0 && q < 1.0) {
            return Err(Error::Admissibility(format!("q = {q} outside (−1, 1)")));
        }
        Ok(AwProcessParams { a, b, c, d, q, scale: 1.0 })
    }

    /// `A = q^v, B = −q, C = q^u, D = −q` with `q = e^{−2/√N}`, chart scale `N`.
    pub fn from_uv(bp: BoundaryParams, n_sites: usize) -> Result<Self> {
        if bp.u + bp.v <= 0.0 {
            return Err(Error::Domain(format!("need u + v > 0, got {}", bp.u + bp.v)));
        }
        let q = q_of(n_sites);
        let mut pp = Self::new(q.powf(bp.v), -q, q.powf(bp.u), -q, q)?;
        pp.scale = n_sites as f64;
        Ok(pp)
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }

    pub fn marginal_params(&self, s: f64) -> AwParams {
        let r = s.sqrt();
        AwParams::real(self.a * r, self.b * r, self.c / r, self.d / r, self.q)
    }

    /// Transition parameters from `x` at time `s` to time `t`.
    pub fn transition_params(&self, s: f64, t: f64, x: f64) -> Result<AwParams> {
        if !(s > 0.0 && t > s) {
            return Err(Error::Domain(format!("need 0 < s < t, got s = {s}, t = {t}")));
        }
        let rho = (s / t).sqrt();
        let rt = t.sqrt();
        let (c, d) = if x.abs() <= 1.0 {
            let e = Complex64::from_polar(rho, x.acos());
            (e, e.conj())
        } else {
            let marg = aw_atoms(&self.marginal_params(s))?;
            let atom = marg
                .iter()
                .find(|a| (a.location - x).abs() <= 1e-9 * x.abs())
                .ok_or_else(|| Error::Domain(format!("x = {x} is outside the support of the time-{s} marginal")))?;
            let x = atom.location;
            let root = (x * x - 1.0).sqrt() * x.signum();
            (Complex64::new(rho * (x + root), 0.0), Complex64::new(rho * (x - root), 0.0))
        };
        let r = |v: f64| Complex64::new(v, 0.0);
        Ok(AwParams::new(r(self.a * rt), r(self.b * rt), c, d, self.q))
    }
}

/// Marginal law `π_s`.
pub fn aw_marginal(pp: &AwProcessParams, s: f64) -> Result<MixedMeasure> {
    if !(s > 0.0) {
        return Err(Error::Domain(format!("need s > 0, got {s}")));
    }
    aw_measure_scaled(&pp.marginal_params(s), pp.scale)
}

/// Transition law `P_{s,t}(x, ·)`.
pub fn aw_transition(pp: &AwProcessParams, s: f64, t: f64, x: f64) -> Result<MixedMeasure> {
    aw_measure_scaled(&pp.transition_params(s, t, x)?, pp.scale)
}

/// Largest supported number of Laplace variables in [`phi_n`].
pub const MAX_D: usize = 2;

/// Quadrature defaults for [`phi_n`] at `N` sites: the cutoff in
/// `r = 2N(1 − x)` is `min(4N, 200/ΔX_min)`.
pub fn phi_n_spec(n_sites: usize, query: &LaplaceQuery) -> QuadratureSpec {
    let dx_min = query.dx().into_iter().filter(|&d| d > 0.0).fold(1.0, f64::min);
    QuadratureSpec { panels: 2, nodes_per_panel: 16, cutoff: (4.0 * n_sites as f64).min(200.0 / dx_min), rel_tol: 1e-8 }
}

/// `φ^(N)(c, X) = E[exp(−Σ c_k H^(N)(X_k))]` under the stationary open ASEP,
/// computed from the Askey-Wilson process.
pub fn phi_n(bp: BoundaryParams, n_sites: usize, query: &LaplaceQuery, spec: &QuadratureSpec) -> Result<f64> {
    if query.d() > MAX_D {
        return Err(Error::Invalid(format!("d = {} exceeds the nesting limit {MAX_D}", query.d())));
    }
    if n_sites == 0 {
        return Err(Error::Invalid("need N ≥ 1".into()));
    }
    spec.validate()?;
    let pp = AwProcessParams::from_uv(bp, n_sites)?;
    if query.is_trivial() {
        return Ok(1.0);
    }
    let nf = n_sites as f64;
    let sq = nf.sqrt();
    let s = query.s();
    let mut n: Vec<usize> = vec![0];
    n.extend(query.x.iter().map(|&x| ((nf * x + 1e-9).floor() as usize).min(n_sites)));
    n.push(n_sites);

    // (time, [(s_k, exponent)]) with equal times merged.
    let mut groups: Vec<(f64, Vec<(f64, f64)>)> = Vec::new();
    for k in 0..s.len() {
        let t = pp.q.powf(s[k]);
        let e = (n[k + 1] - n[k]) as f64;
        match groups.last_mut() {
            Some((tl, v)) if *tl == t => v.push((s[k], e)),
            _ => groups.push((t, vec![(s[k], e)])),
        }
    }
    let log_f = |fs: Vec<(f64, f64)>| {
        let fs: Vec<(f64, f64)> = fs.into_iter().filter(|p| p.1 > 0.0).map(|(s, e)| ((s / sq).cosh(), e)).collect();
        move |y: f64| fs.iter().map(|&(ch, e)| e * (0.5 * (ch + y)).ln()).sum::<f64>()
    };

    let mut iter = groups.into_iter();
    let (mut t_prev, fs) = iter.next().expect("at least one time");
    let mut nu = aw_marginal(&pp, t_prev)?.reweighted(log_f(fs));
    for (t, fs) in iter {
        let tp = t_prev;
        nu = chain(&nu, |x| aw_transition(&pp, tp, t, x), spec)?.reweighted(log_f(fs));
        t_prev = t;
    }
    let num = nu.integrate_log(|_| 0.0, spec)?;
    let den = aw_marginal(&pp, 1.0)?.integrate_log(move |y| nf * (0.5 * (1.0 + y)).ln(), spec)?;
    let v = (num - den).exp();
    if !v.is_finite() || v <= 0.0 {
        return Err(Error::NonFinite(v));
    }
    Ok(v)
}

/// Parameters of the marginal at time `q^t` in the `(u, v)` chart.
fn scaled_params(bp: BoundaryParams, n_sites: usize, t: f64) -> Result<AwParams> {
    let pp = AwProcessParams::from_uv(bp, n_sites)?;
    Ok(pp.marginal_params(pp.q.powf(t)))
}

/// `N^{u+v} π̂_t(r)`, the rescaled continuous density of the marginal at time
/// `q^t` in the variable `r = 2N(1 − x)`.
pub fn scaled_marginal_density(bp: BoundaryParams, n_sites: usize, t: f64, r: f64) -> Result<f64> {
    let nf = n_sites as f64;
    if !(0.0..=4.0 * nf).contains(&r) {
        return Err(Error::Domain(format!("r = {r} outside [0, 4N]")));
    }
    if !(t > -2.0 && t < 2.0) {
        return Err(Error::Domain(format!("t = {t} outside (−2, 2)")));
    }
    let p = scaled_params(bp, n_sites, t)?;
    let m = aw_measure_scaled(&p, nf)?;
    let Some(c) = &m.continuous else {
        return Ok(0.0);
    };
    if r == 0.0 {
        return Err(Error::Domain("the density in r is singular at r = 0 only through 1/√r; use r > 0".into()));
    }
    let theta = 2.0 * (r / (4.0 * nf)).sqrt().asin();
    let log_dens_x = (c.log_weight)(theta) - theta.sin().ln();
    Ok(((bp.u + bp.v) * nf.ln() + log_dens_x - (2.0 * nf).ln()).exp())
}

/// Rescaled atoms `(ŷ, N^{u+v} mass)` of the marginal at time `q^t`, with
/// `ŷ = −2N(y − 1)`, sorted by location `y` descending.
pub fn scaled_atoms(bp: BoundaryParams, n_sites: usize, t: f64) -> Result<Vec<(f64, f64)>> {
    let nf = n_sites as f64;
    let p = scaled_params(bp, n_sites, t)?;
    let mut atoms = aw_atoms(&p)?;
    atoms.sort_by(|a, b| b.location.total_cmp(&a.location));
    Ok(atoms
        .into_iter()
        .map(|a| (-2.0 * nf * (a.location - 1.0), ((bp.u + bp.v) * nf.ln() + a.log_mass).exp()))
        .collect())
}
