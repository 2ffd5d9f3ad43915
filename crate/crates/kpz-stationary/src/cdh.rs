//! Continuous dual Hahn (CDH) and Wilson orthogonality measures, and the
//! continuous dual Hahn process with marginals `𝔭_s` and transitions
//! `𝔭_{s,t}`.
//!
//! Densities live on `(0, ∞)` and are stored on the [`Chart::Square`] chart.
//! Atoms sit at negative locations `−4(a+j)²`.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;

use crate::measure::{chain, Atom, Chart, LogFn, MixedMeasure, QuadratureSpec};
use crate::specfun::{log_gamma, log_gamma_real, pochhammer_rising, pochhammer_rising_c};
use crate::{Error, Result};

/// Integer-snap tolerance for `a + b = −k`.
pub const SNAP_TOL: f64 = 1e-9;
/// Above [`SNAP_TOL`] and below this, an integer condition is ambiguous.
pub const AMBIGUOUS_TOL: f64 = 1e-6;

fn cx(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// `log sinh(x)` for `x > 0`.
fn ln_sinh(x: f64) -> f64 {
    if x > 20.0 {
        x - std::f64::consts::LN_2 + (-2.0 * x).exp().ln_1p()
    } else {
        x.sinh().ln()
    }
}

/// `log(1/(√x |Γ(i√x)|²)) = log(sinh(π√x)/π)`.
pub(crate) fn ln_inv_sqrt_gamma_i(sqrt_x: f64) -> f64 {
    ln_sinh(PI * sqrt_x) - PI.ln()
}

fn is_conj_pair(b: Complex64, c: Complex64) -> bool {
    b.im != 0.0 && (b - c.conj()).norm() <= 1e-14 * b.norm().max(1.0)
}

fn is_real(z: Complex64) -> bool {
    z.im == 0.0
}

/// Default atom frame `{−4(a+j)² : j = 0..⌊−a⌋}`.
pub fn default_frame(a: f64) -> Vec<f64> {
    if a >= 0.0 {
        return Vec::new();
    }
    (0..=(-a).floor() as usize).map(|j| -4.0 * (a + j as f64).powi(2)).collect()
}

/// Snap `x` to the integer `−k` (`k ≥ 0`) if it is that close.
fn snap_nonpositive_integer(x: f64) -> Result<Option<usize>> {
    let k = (-x).round();
    if k < 0.0 {
        return Ok(None);
    }
    let gap = (x + k).abs();
    if gap <= SNAP_TOL {
        Ok(Some(k as usize))
    } else if gap < AMBIGUOUS_TOL {
        Err(Error::Domain(format!("a + b = {x} is within {gap:e} of an integer: ambiguous case")))
    } else {
        Ok(None)
    }
}

/// Case of the CDH measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CdhTag {
    P,
    N1,
    /// Pure atoms; `a + b = −k`.
    N2 {
        k: usize,
    },
}

/// Classified parameters of a CDH measure.
#[derive(Debug, Clone, PartialEq)]
pub struct CdhCase {
    pub tag: CdhTag,
    pub a: f64,
    pub b: Complex64,
    pub c: Complex64,
    pub atom_frame: Vec<f64>,
}

impl CdhCase {
    /// Determine the case for `(a, b, c)`. In case N2 the roles of `b` and
    /// `c` are swapped if needed so that `a + b = −k`.
    pub fn classify(a: f64, b: Complex64, c: Complex64) -> Result<CdhCase> {
        let frame = default_frame(a);
        if is_conj_pair(b, c) {
            if b.re <= 0.0 {
                return Err(Error::Admissibility(format!("Re(b) = {} must be > 0", b.re)));
            }
            let tag = if a >= 0.0 { CdhTag::P } else { CdhTag::N1 };
            return Ok(CdhCase { tag, a, b, c, atom_frame: frame });
        }
        if !(is_real(b) && is_real(c)) {
            return Err(Error::Admissibility(format!("b = {b}, c = {c} are neither real nor conjugate")));
        }
        let (br, cr) = (b.re, c.re);
        if a >= 0.0 {
            if br > 0.0 && cr > 0.0 {
                return Ok(CdhCase { tag: CdhTag::P, a, b, c, atom_frame: frame });
            }
            return Err(Error::Admissibility(format!("case P needs b, c > 0 (b = {br}, c = {cr})")));
        }
        for (x, y) in [(br, cr), (cr, br)] {
            if let Some(k) = snap_nonpositive_integer(a + x)? {
                if x > 0.0 && x + y > 0.0 && y - a > 0.0 {
                    return Ok(CdhCase { tag: CdhTag::N2 { k }, a, b: cx(x), c: cx(y), atom_frame: frame });
                }
                return Err(Error::Admissibility(format!(
                    "case N2 needs b > 0, b + c > 0, c − a > 0 (a = {a}, b = {x}, c = {y})"
                )));
            }
        }
        if a + br > 0.0 && a + cr > 0.0 {
            return Ok(CdhCase { tag: CdhTag::N1, a, b, c, atom_frame: frame });
        }
        Err(Error::Admissibility(format!("a = {a} < 0 needs a + b, a + c > 0 or a + b ∈ −ℕ (b = {br}, c = {cr})")))
    }

    /// Replace the atom frame; it must have `⌊−a⌋ + 1` increasing entries.
    pub fn with_frame(mut self, frame: Vec<f64>) -> Result<CdhCase> {
        if frame.len() != default_frame(self.a).len() || frame.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Admissibility(format!(
                "frame must be increasing with {} entries",
                default_frame(self.a).len()
            )));
        }
        self.atom_frame = frame;
        Ok(self)
    }

    fn log_norm(&self) -> Result<f64> {
        let (a, b, c) = (cx(self.a), self.b, self.c);
        Ok((log_gamma(a + b)? + log_gamma(a + c)? + log_gamma(b + c)?).re)
    }

    /// `log CDH^c(x)`.
    pub fn log_density(&self, x: f64) -> Result<f64> {
        if x <= 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        let sx = x.sqrt();
        let iy = Complex64::new(0.0, 0.5 * sx);
        let g = log_gamma(self.a + iy)? + log_gamma(self.b + iy)? + log_gamma(self.c + iy)?;
        Ok(2.0 * g.re - self.log_norm()? + ln_inv_sqrt_gamma_i(sx) - (8.0 * PI).ln())
    }

    /// Mass `CDH^d(x_j)`.
    pub fn atom_mass(&self, j: usize) -> Result<f64> {
        let (a, b, c) = (self.a, self.b, self.c);
        let ac = cx(a);
        let num = pochhammer_rising(2.0 * a, j)
            * pochhammer_rising_c(ac + b, j)
            * pochhammer_rising_c(ac + c, j)
            * (a + j as f64);
        let den =
            pochhammer_rising(1.0, j) * pochhammer_rising_c(ac - b + 1.0, j) * pochhammer_rising_c(ac - c + 1.0, j) * a;
        if num.norm() == 0.0 {
            return Ok(0.0);
        }
        let g = (log_gamma(b - ac)? + log_gamma(c - ac)? - log_gamma(cx(-2.0 * a))? - log_gamma(b + c)?).exp();
        let sign = if j.is_multiple_of(2) { 1.0 } else { -1.0 };
        let v = sign * num * g / den;
        Ok(v.re)
    }

    /// Indices of atoms that can carry mass.
    fn atom_range(&self) -> usize {
        match self.tag {
            CdhTag::P => 0,
            CdhTag::N1 => self.atom_frame.len(),
            CdhTag::N2 { k } => (k + 1).min(self.atom_frame.len()),
        }
    }

    pub fn atoms(&self) -> Result<Vec<Atom>> {
        let mut out = Vec::new();
        for j in 0..self.atom_range() {
            let m = self.atom_mass(j)?;
            if m < 0.0 || !m.is_finite() {
                return Err(Error::Admissibility(format!("atom {j} of CDH({:?}) has mass {m}", self)));
            }
            if m > 0.0 {
                out.push(Atom::new(self.atom_frame[j], m));
            }
        }
        Ok(out)
    }
}

fn square_measure(
    log_density: impl Fn(f64) -> f64 + Send + Sync + 'static,
    atoms: Vec<Atom>,
    prob: bool,
) -> MixedMeasure {
    let lw: LogFn =
        Arc::new(move |t: f64| if t <= 0.0 { f64::NEG_INFINITY } else { log_density(t * t) + (2.0 * t).ln() });
    MixedMeasure::from_log_weight(Chart::Square, lw, atoms, prob)
}

/// The CDH probability measure of a classified case.
pub fn cdh_measure(case: &CdhCase) -> Result<MixedMeasure> {
    let atoms = case.atoms()?;
    if let CdhTag::N2 { .. } = case.tag {
        return Ok(MixedMeasure::from_atoms(atoms, true));
    }
    let norm = case.log_norm()?;
    let (a, b, c) = (case.a, case.b, case.c);
    let lw = move |x: f64| {
        let sx = x.sqrt();
        let iy = Complex64::new(0.0, 0.5 * sx);
        match (log_gamma(a + iy), log_gamma(b + iy), log_gamma(c + iy)) {
            (Ok(ga), Ok(gb), Ok(gc)) => 2.0 * (ga + gb + gc).re - norm + ln_inv_sqrt_gamma_i(sx) - (8.0 * PI).ln(),
            _ => f64::INFINITY,
        }
    };
    Ok(square_measure(lw, atoms, true))
}

/// Convenience: classify and build.
pub fn cdh(a: f64, b: Complex64, c: Complex64) -> Result<MixedMeasure> {
    cdh_measure(&CdhCase::classify(a, b, c)?)
}

/// Case of the Wilson measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WilsonTag {
    P1,
    P2,
    N1,
    N2 { k: usize },
}

fn cd_ok(c: Complex64, d: Complex64) -> bool {
    (is_conj_pair(c, d) && c.re > 0.0) || (is_real(c) && is_real(d) && c.re > 0.0 && d.re > 0.0)
}

fn classify_wilson(a: Complex64, b: Complex64, c: Complex64, d: Complex64) -> Result<WilsonTag> {
    if is_conj_pair(a, b) {
        if a.re > 0.0 && cd_ok(c, d) {
            return Ok(WilsonTag::P2);
        }
        return Err(Error::Admissibility("case P2 needs Re(a) > 0 and admissible (c, d)".into()));
    }
    if !(is_real(a) && is_real(b)) || b.re <= 0.0 {
        return Err(Error::Admissibility(format!("a = {a}, b = {b}: need real a and b > 0, or a = conj(b)")));
    }
    let (ar, br) = (a.re, b.re);
    if ar >= 0.0 {
        if cd_ok(c, d) {
            return Ok(WilsonTag::P1);
        }
        return Err(Error::Admissibility("case P1 needs admissible (c, d)".into()));
    }
    if let Some(k) = snap_nonpositive_integer(ar + br)? {
        let (cr, dr) = (c.re, d.re);
        if is_real(c) && is_real(d) && br + cr > 0.0 && br + dr > 0.0 && cr - ar > 0.0 && dr - ar > 0.0 {
            return Ok(WilsonTag::N2 { k });
        }
        return Err(Error::Admissibility("case N2 needs b + c, b + d, c − a, d − a > 0".into()));
    }
    if ar + br > 0.0 {
        let cd = (is_conj_pair(c, d) && c.re > 0.0) || (is_real(c) && is_real(d) && ar + c.re > 0.0 && ar + d.re > 0.0);
        if cd {
            return Ok(WilsonTag::N1);
        }
        return Err(Error::Admissibility("case N1 needs a + c, a + d > 0 or c = conj(d)".into()));
    }
    Err(Error::Admissibility(format!("a = {ar} < 0 needs a + b > 0 or a + b ∈ −ℕ")))
}

/// The Wilson probability measure. `frame` defaults to `−4(a+j)²`.
pub fn wilson_measure(
    a: Complex64,
    b: Complex64,
    c: Complex64,
    d: Complex64,
    frame: Option<Vec<f64>>,
) -> Result<MixedMeasure> {
    let tag = classify_wilson(a, b, c, d)?;
    let mut atoms = Vec::new();
    if matches!(tag, WilsonTag::N1 | WilsonTag::N2 { .. }) {
        let ar = a.re;
        let frame = frame.unwrap_or_else(|| default_frame(ar));
        if frame.len() != default_frame(ar).len() {
            return Err(Error::Admissibility("frame size must be ⌊−a⌋ + 1".into()));
        }
        let top = match tag {
            WilsonTag::N2 { k } => (k + 1).min(frame.len()),
            _ => frame.len(),
        };
        let g = (log_gamma(a + b + c + d)? + log_gamma(b - a)? + log_gamma(c - a)? + log_gamma(d - a)?
            - log_gamma(-2.0 * a)?
            - log_gamma(b + c)?
            - log_gamma(c + d)?
            - log_gamma(b + d)?)
        .exp();
        for (j, &loc) in frame.iter().enumerate().take(top) {
            let num = pochhammer_rising(2.0 * ar, j)
                * pochhammer_rising_c(a + b, j)
                * pochhammer_rising_c(a + c, j)
                * pochhammer_rising_c(a + d, j)
                * (ar + j as f64);
            let den = pochhammer_rising(1.0, j)
                * pochhammer_rising_c(a - b + 1.0, j)
                * pochhammer_rising_c(a - c + 1.0, j)
                * pochhammer_rising_c(a - d + 1.0, j)
                * ar;
            let m = (num * g / den).re;
            if m < 0.0 || !m.is_finite() {
                return Err(Error::Admissibility(format!("Wilson atom {j} has mass {m}")));
            }
            if m > 0.0 {
                atoms.push(Atom::new(loc, m));
            }
        }
    }
    if let WilsonTag::N2 { .. } = tag {
        return Ok(MixedMeasure::from_atoms(atoms, true));
    }
    let lk = (log_gamma(a + b + c + d)?
        - log_gamma(a + b)?
        - log_gamma(a + c)?
        - log_gamma(b + c)?
        - log_gamma(a + d)?
        - log_gamma(b + d)?
        - log_gamma(c + d)?)
    .re - (8.0 * PI).ln();
    let lw = move |x: f64| {
        let sx = x.sqrt();
        let iy = Complex64::new(0.0, 0.5 * sx);
        let g = [a, b, c, d].iter().map(|&p| log_gamma(p + iy)).collect::<Result<Vec<_>>>();
        match g {
            Ok(g) => 2.0 * g.iter().sum::<Complex64>().re + lk + ln_inv_sqrt_gamma_i(sx),
            Err(_) => f64::INFINITY,
        }
    };
    Ok(square_measure(lw, atoms, true))
}

/// Which boundary parameter generates the atoms of `𝔭_s`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AtomFlavor {
    U,
    V,
    None,
}

/// Atoms of the marginal `𝔭_s`.
#[derive(Debug, Clone, PartialEq)]
pub struct CdhAtomGrid {
    pub flavor: AtomFlavor,
    pub locations: Vec<f64>,
    pub masses: Vec<f64>,
}

/// Source point of a transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Source {
    Continuous(f64),
    UAtom(usize),
    VAtom(usize),
}

/// Parameters of the continuous dual Hahn process.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CdhProcessParams {
    pub u: f64,
    pub v: f64,
}

/// `x^u_j(s) = −4(u + j − s/2)²`.
pub fn x_u(u: f64, j: usize, s: f64) -> f64 {
    -4.0 * (u + j as f64 - 0.5 * s).powi(2)
}

/// `x^v_j(s) = −4(v + j + s/2)²`.
pub fn x_v(v: f64, j: usize, s: f64) -> f64 {
    -4.0 * (v + j as f64 + 0.5 * s).powi(2)
}

fn log_abs_signed(x: f64) -> (f64, f64) {
    (x.abs().ln(), x.signum())
}

impl CdhProcessParams {
    pub fn new(u: f64, v: f64) -> Result<Self> {
        if !(u + v > 0.0) {
            return Err(Error::Domain(format!("need u + v > 0, got u = {u}, v = {v}")));
        }
        Ok(CdhProcessParams { u, v })
    }

    /// Time horizon `𝖢_{u,v}`.
    pub fn c_uv(&self) -> f64 {
        if self.u <= 0.0 || self.u >= 1.0 {
            2.0
        } else {
            2.0 * self.u
        }
    }

    fn check_time(&self, s: f64) -> Result<()> {
        if !(s >= 0.0 && s < self.c_uv()) {
            return Err(Error::Domain(format!("time {s} outside [0, {})", self.c_uv())));
        }
        Ok(())
    }

    /// Atom locations and masses of `𝔭_s`.
    pub fn atom_grid(&self, s: f64) -> Result<CdhAtomGrid> {
        self.check_time(s)?;
        let (u, v) = (self.u, self.v);
        if u - 0.5 * s < 0.0 {
            let n = (-u + 0.5 * s).floor() as usize;
            let (lg1, s1) = log_gamma_real(v - u + s)?;
            let (lg2, s2) = log_gamma_real(v + u + 2.0)?;
            let (lg3, s3) = log_gamma_real(-2.0 * u + s)?;
            let mut locations = Vec::new();
            let mut masses = Vec::new();
            for j in 0..=n {
                let r = (u + j as f64 - 0.5 * s) * pochhammer_rising(2.0 * u - s, j) * pochhammer_rising(v + u, j)
                    / ((u - 0.5 * s) * pochhammer_rising(1.0, j) * pochhammer_rising(1.0 - v + u - s, j));
                let (lr, sr) = log_abs_signed(r);
                locations.push(x_u(u, j, s));
                masses.push(s1 * s2 * s3 * sr * (lg1 + lg2 - lg3 + lr).exp());
            }
            return Ok(CdhAtomGrid { flavor: AtomFlavor::U, locations, masses });
        }
        if v + 0.5 * s < 0.0 {
            let n = (-v - 0.5 * s).floor() as usize;
            let (lg1, s1) = log_gamma_real(u - v - s)?;
            let (lg2, s2) = log_gamma_real(2.0 + v + u)?;
            let (lg3, s3) = log_gamma_real(-2.0 * v - s)?;
            let mut locations = Vec::new();
            let mut masses = Vec::new();
            for j in 0..=n {
                let r = (v + j as f64 + 0.5 * s) * pochhammer_rising(2.0 * v + s, j) * pochhammer_rising(v + u, j)
                    / ((v + 0.5 * s) * pochhammer_rising(1.0, j) * pochhammer_rising(1.0 - u + v + s, j));
                let (lr, sr) = log_abs_signed(r);
                locations.push(x_v(v, j, s));
                masses.push(s1 * s2 * s3 * sr * (lg1 + lg2 - lg3 + lr).exp());
            }
            return Ok(CdhAtomGrid { flavor: AtomFlavor::V, locations, masses });
        }
        Ok(CdhAtomGrid { flavor: AtomFlavor::None, locations: Vec::new(), masses: Vec::new() })
    }

    /// `log 𝔭^c_s(r)`.
    pub fn log_marginal_density(&self, s: f64, r: f64) -> Result<f64> {
        self.check_time(s)?;
        if r <= 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        Ok(self.log_density_unchecked(s, r))
    }

    fn log_density_unchecked(&self, s: f64, r: f64) -> f64 {
        let (u, v) = (self.u, self.v);
        let sr = r.sqrt();
        let iy = Complex64::new(0.0, 0.5 * sr);
        let pre = ((v + u) * (v + u + 1.0) / (8.0 * PI)).ln();
        match (log_gamma(0.5 * s + v + iy), log_gamma(-0.5 * s + u + iy)) {
            (Ok(g1), Ok(g2)) => pre + 2.0 * (g1 + g2).re + ln_inv_sqrt_gamma_i(sr),
            _ => f64::INFINITY,
        }
    }

    /// `𝔭^c_s(r)`.
    pub fn marginal_density(&self, s: f64, r: f64) -> Result<f64> {
        Ok(self.log_marginal_density(s, r)?.exp())
    }

    /// The infinite-mass marginal `𝔭_s` as a measure.
    pub fn marginal(&self, s: f64) -> Result<MixedMeasure> {
        let grid = self.atom_grid(s)?;
        let mut atoms = Vec::new();
        for (&x, &m) in grid.locations.iter().zip(&grid.masses) {
            if !(m > 0.0) {
                return Err(Error::Admissibility(format!("marginal atom at {x} has mass {m}")));
            }
            atoms.push(Atom::new(x, m));
        }
        let me = *self;
        Ok(square_measure(move |r| me.log_density_unchecked(s, r), atoms, false))
    }

    /// CDH case of the transition `𝔭_{s,t}` from `source`.
    pub fn transition_case(&self, s: f64, t: f64, source: Source) -> Result<CdhCase> {
        self.check_time(s)?;
        self.check_time(t)?;
        if !(s < t) {
            return Err(Error::Domain(format!("transition needs s < t, got s = {s}, t = {t}")));
        }
        let (u, v) = (self.u, self.v);
        let grid = self.atom_grid(s)?;
        match source {
            Source::Continuous(m) => {
                if !(m > 0.0) {
                    return Err(Error::Domain(format!("continuous source {m} not in (0, ∞)")));
                }
                let b = Complex64::new(0.5 * (t - s), 0.5 * m.sqrt());
                CdhCase::classify(u - 0.5 * t, b, b.conj())
            }
            Source::UAtom(j) => {
                if grid.flavor != AtomFlavor::U || j >= grid.locations.len() {
                    return Err(Error::Domain(format!("u-atom {j} not in the support at time {s}")));
                }
                let jf = j as f64;
                CdhCase::classify(u - 0.5 * t, cx(-u + 0.5 * t - jf), cx(u + 0.5 * t - s + jf))
            }
            Source::VAtom(j) => {
                if grid.flavor != AtomFlavor::V || j >= grid.locations.len() {
                    return Err(Error::Domain(format!("v-atom {j} not in the support at time {s}")));
                }
                let jf = j as f64;
                CdhCase::classify(v + jf + 0.5 * t, cx(0.5 * t - s - v - jf), cx(u - 0.5 * t))
            }
        }
    }

    /// Transition probability `𝔭_{s,t}(source, ·)`.
    pub fn transition(&self, s: f64, t: f64, source: Source) -> Result<MixedMeasure> {
        cdh_measure(&self.transition_case(s, t, source)?)
    }

    /// Identify a point of the support of `𝔭_s`.
    pub fn source_at(&self, s: f64, x: f64) -> Result<Source> {
        if x > 0.0 {
            return Ok(Source::Continuous(x));
        }
        let grid = self.atom_grid(s)?;
        for (j, &loc) in grid.locations.iter().enumerate() {
            if (loc - x).abs() <= 1e-9 * loc.abs().max(1.0) {
                return Ok(match grid.flavor {
                    AtomFlavor::U => Source::UAtom(j),
                    _ => Source::VAtom(j),
                });
            }
        }
        Err(Error::Domain(format!("{x} is not in the support at time {s}")))
    }

    /// `𝔭_{s,t}(x, ·)` for a point `x` of the support of `𝔭_s`.
    pub fn transition_from(&self, s: f64, t: f64, x: f64) -> Result<MixedMeasure> {
        self.transition(s, t, self.source_at(s, x)?)
    }
}

fn rel_residual(lhs: f64, rhs: f64, floor: f64) -> f64 {
    (lhs - rhs).abs() / rhs.abs().max(floor)
}

/// Residuals of the two Chapman-Kolmogorov identities.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyReport {
    /// `∫𝔭_s(dm)𝔭_{s,t}(m,·)` vs `𝔭_t`: densities at probes, atom masses,
    /// and the `e^{−r/4}` functional.
    pub marginal: f64,
    /// `∫𝔭_{s,t}(m,dr)𝔭_{t,w}(r,·)` vs `𝔭_{s,w}(m,·)` for each source probe.
    pub transition: f64,
}

impl ConsistencyReport {
    pub fn max(&self) -> f64 {
        self.marginal.max(self.transition)
    }
}

fn compare_measures(lhs: &MixedMeasure, rhs: &MixedMeasure, probes: &[f64], spec: &QuadratureSpec) -> Result<f64> {
    const FLOOR: f64 = 1e-8;
    let mut worst: f64 = 0.0;
    for &r in probes.iter().filter(|&&r| r > 0.0) {
        worst = worst.max(rel_residual(lhs.density(r), rhs.density(r), FLOOR));
    }
    let locs: Vec<f64> = lhs.atoms.iter().chain(&rhs.atoms).map(|a| a.location).collect();
    for x in locs {
        let ml = lhs.atom_near(x).map_or(0.0, Atom::mass);
        let mr = rhs.atom_near(x).map_or(0.0, Atom::mass);
        worst = worst.max(rel_residual(ml, mr, FLOOR));
    }
    let fl = lhs.integrate(|r| (-0.25 * r).exp(), spec)?;
    let fr = rhs.integrate(|r| (-0.25 * r).exp(), spec)?;
    Ok(worst.max(rel_residual(fl, fr, FLOOR)))
}

/// Check both Chapman-Kolmogorov identities at times `s < t < w`.
///
/// `probes` are density probe points `r > 0`; `sources` are points of the
/// support of `𝔭_s` used as starting points for the second identity.
pub fn check_consistency(
    pp: &CdhProcessParams,
    s: f64,
    t: f64,
    w: f64,
    probes: &[f64],
    sources: &[f64],
    spec: &QuadratureSpec,
) -> Result<ConsistencyReport> {
    if !(s < t && t < w) {
        return Err(Error::Domain(format!("need s < t < w, got {s}, {t}, {w}")));
    }
    let lhs = chain(&pp.marginal(s)?, |m| pp.transition_from(s, t, m), spec)?;
    let marginal = compare_measures(&lhs, &pp.marginal(t)?, probes, spec)?;
    let mut transition: f64 = 0.0;
    for &m in sources {
        let first = pp.transition_from(s, t, m)?;
        let lhs = chain(&first, |r| pp.transition_from(t, w, r), spec)?;
        let rhs = pp.transition_from(s, w, m)?;
        transition = transition.max(compare_measures(&lhs, &rhs, probes, spec)?);
        transition = transition.max((lhs.total_mass(spec)? - 1.0).abs());
    }
    Ok(ConsistencyReport { marginal, transition })
}

/// The five structural zeros of the transition kernels: returns the largest
/// mass or density found where the kernel must vanish.
pub fn structural_zeros(pp: &CdhProcessParams, s: f64, t: f64, spec: &QuadratureSpec) -> Result<f64> {
    let gs = pp.atom_grid(s)?;
    let gt = pp.atom_grid(t)?;
    let mut worst: f64 = 0.0;
    let mass_at = |mu: &MixedMeasure, x: f64| mu.atom_near(x).map_or(0.0, Atom::mass);
    // (1) continuous source, v-atom target.
    if gt.flavor == AtomFlavor::V {
        for &m in &[0.5, 2.0, 7.0] {
            let k = pp.transition(s, t, Source::Continuous(m))?;
            for &y in &gt.locations {
                worst = worst.max(mass_at(&k, y));
            }
        }
    }
    for (j, _) in gs.locations.iter().enumerate() {
        let src = match gs.flavor {
            AtomFlavor::U => Source::UAtom(j),
            _ => Source::VAtom(j),
        };
        let k = pp.transition(s, t, src)?;
        match gs.flavor {
            AtomFlavor::U => {
                // (3) no continuous part; (4) no v-atom targets; (5) no u-atom k > j.
                if let Some(c) = &k.continuous {
                    let probe =
                        c.chart.nodes(spec).iter().map(|&(tt, _)| (c.log_weight)(tt)).fold(f64::NEG_INFINITY, f64::max);
                    worst = worst.max(probe.exp());
                }
                for (kk, &y) in gt.locations.iter().enumerate() {
                    let bad = gt.flavor == AtomFlavor::V || (gt.flavor == AtomFlavor::U && kk > j);
                    if bad {
                        worst = worst.max(mass_at(&k, y));
                    }
                }
                // Atoms outside the u-grid at time t would also violate the support claim.
                for a in &k.atoms {
                    if !gt.locations.iter().any(|&y| (y - a.location).abs() <= 1e-9 * y.abs().max(1.0)) {
                        worst = worst.max(a.mass());
                    }
                }
            }
            AtomFlavor::V => {
                // (2) v-atom source, u-atom target.
                if gt.flavor == AtomFlavor::U {
                    for &y in &gt.locations {
                        worst = worst.max(mass_at(&k, y));
                    }
                }
            }
            AtomFlavor::None => {}
        }
    }
    Ok(worst)
}
