//! Mixed measures (a continuous density plus finitely many atoms), panel
//! Gauss-Legendre quadrature, and chaining of Markov kernels.
//!
//! A continuous part lives on a [`Chart`]: a map `x = x(t)` from a quadrature
//! variable `t`. The stored log-weight is the log density with respect to `t`
//! (Jacobian included), so quadrature never divides by a vanishing Jacobian.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::num::NonZeroUsize;
use std::sync::Arc;

use gauss_quad::legendre::GaussLegendre;
use rayon::prelude::*;

use crate::specfun::logsumexp;
use crate::{Error, Result};

/// Log density as a function of the chart variable.
pub type LogFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A point mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Atom {
    pub location: f64,
    pub log_mass: f64,
}

impl Atom {
    pub fn new(location: f64, mass: f64) -> Self {
        Atom { location, log_mass: mass.ln() }
    }

    pub fn mass(&self) -> f64 {
        self.log_mass.exp()
    }
}

/// Coordinate map used to place quadrature panels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Chart {
    /// `x = t` on `[lo, hi]`.
    Linear { lo: f64, hi: f64 },
    /// `x = t²` on `(0, ∞)`; removes `x^{-1/2}` endpoint behaviour.
    Square,
    /// `x = cos θ` on `(−1, 1)`. Near `x = 1` panels are uniform in
    /// `w = √(2·scale·(1 − x))`, so `scale` sets the resolution there.
    Angle { scale: f64 },
}

impl Chart {
    pub fn x(&self, t: f64) -> f64 {
        match *self {
            Chart::Linear { .. } => t,
            Chart::Square => t * t,
            Chart::Angle { .. } => t.cos(),
        }
    }

    /// `t` with `x(t) = x`, or `None` outside the support.
    pub fn t(&self, x: f64) -> Option<f64> {
        match *self {
            Chart::Linear { lo, hi } => (lo..=hi).contains(&x).then_some(x),
            Chart::Square => (x >= 0.0).then(|| x.sqrt()),
            Chart::Angle { .. } => (-1.0..=1.0).contains(&x).then(|| x.acos()),
        }
    }

    /// `|dx/dt|`.
    pub fn jacobian(&self, t: f64) -> f64 {
        match *self {
            Chart::Linear { .. } => 1.0,
            Chart::Square => 2.0 * t,
            Chart::Angle { .. } => t.sin(),
        }
    }

    /// Continuous support `(lo, hi)` in the natural variable.
    pub fn support(&self) -> (f64, f64) {
        match *self {
            Chart::Linear { lo, hi } => (lo, hi),
            Chart::Square => (0.0, f64::INFINITY),
            Chart::Angle { .. } => (-1.0, 1.0),
        }
    }

    /// Panel endpoints in the chart variable.
    pub fn breaks(&self, spec: &QuadratureSpec) -> Vec<f64> {
        let p = spec.panels as f64;
        match *self {
            Chart::Linear { lo, hi } => {
                let n = ((hi - lo) * p).ceil().max(1.0) as usize;
                (0..=n).map(|k| lo + (hi - lo) * k as f64 / n as f64).collect()
            }
            Chart::Square => {
                let top = spec.cutoff.sqrt();
                uniform_breaks(0.0, top, 1.0 / p)
            }
            Chart::Angle { scale } => {
                let s = scale.max(1.0);
                let w_half = (2.0 * s).sqrt();
                let w_top = spec.cutoff.sqrt().min(w_half);
                let theta = |w: f64| 2.0 * (w / (2.0 * s.sqrt())).min(1.0).asin();
                let mut b: Vec<f64> = uniform_breaks(0.0, w_top, 1.0 / p).into_iter().map(theta).collect();
                if w_top >= w_half {
                    let n = (p * FRAC_PI_2 * (0.75 * s.sqrt()).max(1.0)).ceil() as usize;
                    b.extend((1..=n).map(|k| FRAC_PI_2 + FRAC_PI_2 * k as f64 / n as f64));
                }
                b
            }
        }
    }

    /// Quadrature nodes `(t, weight)` in the chart variable.
    pub fn nodes(&self, spec: &QuadratureSpec) -> Vec<(f64, f64)> {
        let rule = GaussLegendre::new(NonZeroUsize::new(spec.nodes_per_panel.max(1)).unwrap());
        let pairs: Vec<(f64, f64)> = rule.nodes().cloned().zip(rule.weights().cloned()).collect();
        let b = self.breaks(spec);
        let mut out = Vec::with_capacity((b.len().saturating_sub(1)) * pairs.len());
        for w in b.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            let (mid, half) = (0.5 * (lo + hi), 0.5 * (hi - lo));
            for &(x, wt) in &pairs {
                out.push((mid + half * x, half * wt));
            }
        }
        out
    }
}

fn uniform_breaks(lo: f64, hi: f64, width: f64) -> Vec<f64> {
    let n = ((hi - lo) / width).ceil().max(1.0) as usize;
    (0..=n).map(|k| lo + (hi - lo) * k as f64 / n as f64).collect()
}

/// Quadrature resolution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureSpec {
    /// Panels per unit length of the (resolution) chart variable.
    pub panels: usize,
    /// Gauss-Legendre order per panel.
    pub nodes_per_panel: usize,
    /// Upper truncation in the natural variable (or in `r = 2·scale·(1−x)`
    /// for [`Chart::Angle`]).
    pub cutoff: f64,
    pub rel_tol: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec { panels: 2, nodes_per_panel: 32, cutoff: 900.0, rel_tol: 1e-8 }
    }
}

impl QuadratureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.panels < 1 || self.nodes_per_panel < 2 || !(self.cutoff > 0.0) || !(self.rel_tol > 0.0) {
            return Err(Error::Invalid(format!("bad quadrature spec {self:?}")));
        }
        Ok(())
    }

    /// Same spec with twice as many panels.
    pub fn refined(&self) -> Self {
        QuadratureSpec { panels: 2 * self.panels, ..*self }
    }
}

/// Value of a quadrature-dependent computation after panel doubling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Converged {
    pub value: f64,
    /// `|value − previous|` at the last doubling.
    pub gap: f64,
    /// Spec that produced `value`.
    pub spec: QuadratureSpec,
}

/// Double the panels of `spec` until two successive values of `f` agree to
/// `spec.rel_tol` (relative), at most `max_doublings` times.
pub fn self_converge(
    f: impl Fn(&QuadratureSpec) -> Result<f64>,
    spec: &QuadratureSpec,
    max_doublings: usize,
) -> Result<Converged> {
    spec.validate()?;
    let mut prev = f(spec)?;
    let mut cur_spec = *spec;
    for _ in 0..max_doublings.max(1) {
        cur_spec = cur_spec.refined();
        let value = f(&cur_spec)?;
        let gap = (value - prev).abs();
        if gap <= spec.rel_tol * value.abs() {
            return Ok(Converged { value, gap, spec: cur_spec });
        }
        prev = value;
    }
    Err(Error::Unconverged { value: prev, tol: spec.rel_tol })
}

/// Continuous part of a [`MixedMeasure`].
#[derive(Clone)]
pub struct Continuous {
    pub chart: Chart,
    /// Log density with respect to the chart variable.
    pub log_weight: LogFn,
}

impl fmt::Debug for Continuous {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Continuous").field("chart", &self.chart).finish_non_exhaustive()
    }
}

/// A measure with an optional continuous density and a list of atoms.
#[derive(Clone, Debug)]
pub struct MixedMeasure {
    pub continuous: Option<Continuous>,
    pub atoms: Vec<Atom>,
    pub is_probability: bool,
}

impl MixedMeasure {
    /// Measure with no mass at all.
    pub fn zero() -> Self {
        MixedMeasure { continuous: None, atoms: Vec::new(), is_probability: false }
    }

    pub fn from_atoms(atoms: Vec<Atom>, is_probability: bool) -> Self {
        MixedMeasure { continuous: None, atoms: merge_atoms(atoms), is_probability }
    }

    /// Measure with density `exp(log_density(x))` in the natural variable.
    pub fn from_log_density(
        chart: Chart,
        log_density: impl Fn(f64) -> f64 + Send + Sync + 'static,
        atoms: Vec<Atom>,
        is_probability: bool,
    ) -> Self {
        let lw: LogFn = Arc::new(move |t| log_density(chart.x(t)) + chart.jacobian(t).ln());
        MixedMeasure {
            continuous: Some(Continuous { chart, log_weight: lw }),
            atoms: merge_atoms(atoms),
            is_probability,
        }
    }

    /// Measure from a log weight already expressed in the chart variable.
    pub fn from_log_weight(chart: Chart, log_weight: LogFn, atoms: Vec<Atom>, is_probability: bool) -> Self {
        MixedMeasure { continuous: Some(Continuous { chart, log_weight }), atoms: merge_atoms(atoms), is_probability }
    }

    pub fn support(&self) -> Option<(f64, f64)> {
        self.continuous.as_ref().map(|c| c.chart.support())
    }

    /// Log density in the natural variable; `−∞` off the support.
    pub fn log_density(&self, x: f64) -> f64 {
        match &self.continuous {
            None => f64::NEG_INFINITY,
            Some(c) => match c.chart.t(x) {
                None => f64::NEG_INFINITY,
                Some(t) => (c.log_weight)(t) - c.chart.jacobian(t).ln(),
            },
        }
    }

    pub fn density(&self, x: f64) -> f64 {
        self.log_density(x).exp()
    }

    /// Log masses of the quadrature nodes and atoms, as `(x, log mass)`.
    pub fn points(&self, spec: &QuadratureSpec) -> Vec<(f64, f64)> {
        let mut pts: Vec<(f64, f64)> = match &self.continuous {
            None => Vec::new(),
            Some(c) => {
                c.chart.nodes(spec).par_iter().map(|&(t, w)| (c.chart.x(t), w.ln() + (c.log_weight)(t))).collect()
            }
        };
        pts.extend(self.atoms.iter().map(|a| (a.location, a.log_mass)));
        pts
    }

    /// `∫ f dμ`.
    pub fn integrate(&self, f: impl Fn(f64) -> f64 + Sync, spec: &QuadratureSpec) -> Result<f64> {
        spec.validate()?;
        let pts = self.points(spec);
        let shift = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        if shift == f64::NEG_INFINITY {
            return Ok(0.0);
        }
        let terms: Vec<(f64, f64)> = pts.par_iter().map(|&(x, lm)| (x, (lm - shift).exp() * f(x))).collect();
        let mut sum = 0.0;
        for (x, v) in terms {
            if !v.is_finite() {
                return Err(Error::NonFinite(x));
            }
            sum += v;
        }
        Ok(sum * shift.exp())
    }

    /// `log ∫ exp(log_f) dμ` for a positive integrand given by its logarithm.
    pub fn integrate_log(&self, log_f: impl Fn(f64) -> f64 + Sync, spec: &QuadratureSpec) -> Result<f64> {
        spec.validate()?;
        let pts = self.points(spec);
        let terms: Vec<(f64, f64)> = pts.par_iter().map(|&(x, lm)| (x, lm + log_f(x))).collect();
        if let Some(&(x, _)) = terms.iter().find(|p| p.1.is_nan() || p.1 == f64::INFINITY) {
            return Err(Error::NonFinite(x));
        }
        let logs: Vec<f64> = terms.into_iter().map(|p| p.1).collect();
        Ok(logsumexp(&logs))
    }

    pub fn total_mass(&self, spec: &QuadratureSpec) -> Result<f64> {
        self.integrate(|_| 1.0, spec)
    }

    pub fn atom_mass_total(&self) -> f64 {
        self.atoms.iter().map(Atom::mass).sum()
    }

    /// The measure `exp(log_g(x)) μ(dx)`.
    pub fn reweighted(&self, log_g: impl Fn(f64) -> f64 + Send + Sync + 'static) -> MixedMeasure {
        let log_g: Arc<dyn Fn(f64) -> f64 + Send + Sync> = Arc::new(log_g);
        let atoms = self
            .atoms
            .iter()
            .map(|a| Atom { location: a.location, log_mass: a.log_mass + log_g(a.location) })
            .collect();
        let continuous = self.continuous.as_ref().map(|c| {
            let (chart, lw, g) = (c.chart, c.log_weight.clone(), log_g.clone());
            Continuous { chart, log_weight: Arc::new(move |t| lw(t) + g(chart.x(t))) as LogFn }
        });
        MixedMeasure { continuous, atoms, is_probability: false }
    }

    /// Atom with location within relative tolerance `1e−9` of `x`.
    pub fn atom_near(&self, x: f64) -> Option<&Atom> {
        self.atoms.iter().find(|a| same_location(a.location, x))
    }
}

const MERGE_TOL: f64 = 1e-9;

fn same_location(a: f64, b: f64) -> bool {
    (a - b).abs() <= MERGE_TOL * a.abs().max(b.abs()).max(1.0)
}

/// Sort atoms by location, merge coincident ones and drop zero masses.
pub fn merge_atoms(mut atoms: Vec<Atom>) -> Vec<Atom> {
    atoms.retain(|a| a.log_mass > f64::NEG_INFINITY);
    atoms.sort_by(|a, b| a.location.total_cmp(&b.location));
    let mut out: Vec<Atom> = Vec::with_capacity(atoms.len());
    for a in atoms {
        match out.last_mut() {
            Some(last) if same_location(last.location, a.location) => {
                last.log_mass = logsumexp(&[last.log_mass, a.log_mass]);
            }
            _ => out.push(a),
        }
    }
    out
}

/// `ν(dy) = ∫ μ(dx) K(x)(dy)`, with `μ` discretised by its quadrature nodes
/// and atoms.
pub fn chain<K>(mu: &MixedMeasure, kernel: K, spec: &QuadratureSpec) -> Result<MixedMeasure>
where
    K: Fn(f64) -> Result<MixedMeasure> + Sync,
{
    spec.validate()?;
    let pts: Vec<(f64, f64)> = mu.points(spec).into_iter().filter(|p| p.1 > f64::NEG_INFINITY).collect();
    let kernels: Vec<(f64, MixedMeasure)> =
        pts.par_iter().map(|&(x, lm)| kernel(x).map(|k| (lm, k))).collect::<Result<_>>()?;

    let mut chart: Option<Chart> = None;
    let mut parts: Vec<(f64, LogFn)> = Vec::new();
    let mut atoms = Vec::new();
    for (lm, k) in &kernels {
        if let Some(c) = &k.continuous {
            match chart {
                None => chart = Some(c.chart),
                Some(ch) if ch != c.chart => {
                    return Err(Error::MismatchedSupport(format!("{:?} vs {:?}", ch, c.chart)));
                }
                _ => {}
            }
            parts.push((*lm, c.log_weight.clone()));
        }
        atoms.extend(k.atoms.iter().map(|a| Atom { location: a.location, log_mass: a.log_mass + lm }));
    }
    let continuous = chart.map(|chart| {
        let lw: LogFn = Arc::new(move |t| {
            let logs: Vec<f64> = parts.iter().map(|(lm, f)| lm + f(t)).collect();
            logsumexp(&logs)
        });
        Continuous { chart, log_weight: lw }
    });
    Ok(MixedMeasure {
        continuous,
        atoms: merge_atoms(atoms),
        is_probability: mu.is_probability && kernels.iter().all(|(_, k)| k.is_probability),
    })
}

/// Cache the continuous log weight on the quadrature grid of `spec`.
///
/// Off-grid points fall back to the original closure.
pub fn materialize(mu: &MixedMeasure, spec: &QuadratureSpec) -> MixedMeasure {
    let continuous = mu.continuous.as_ref().map(|c| {
        let nodes = c.chart.nodes(spec);
        let vals: Vec<(f64, f64)> = nodes.par_iter().map(|&(t, _)| (t, (c.log_weight)(t))).collect();
        let lw_fallback = c.log_weight.clone();
        let lw: LogFn = Arc::new(move |t| match vals.binary_search_by(|p| p.0.total_cmp(&t)) {
            Ok(i) => vals[i].1,
            Err(_) => lw_fallback(t),
        });
        Continuous { chart: c.chart, log_weight: lw }
    });
    MixedMeasure { continuous, atoms: mu.atoms.clone(), is_probability: mu.is_probability }
}
