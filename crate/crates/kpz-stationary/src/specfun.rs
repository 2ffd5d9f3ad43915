//! Special functions: complex log-gamma, Bernoulli polynomials, Hurwitz zeta,
//! q-Pochhammer symbols, Jacobi theta functions and the κ → 0 expansions of
//! `log(±e^{-κz}; e^{-κ})_∞`.
//!
//! Everything here is pure. Products of many factors are accumulated as
//! logarithms.

use std::f64::consts::PI;
use std::sync::OnceLock;

use num_complex::Complex64;

use crate::{Error, Result};

/// Complex number type used throughout the crate.
pub type ComplexVal = Complex64;

const LANCZOS_G: f64 = 607.0 / 128.0;
const LANCZOS: [f64; 15] = [
    0.999_999_999_999_997_1,
    57.156_235_665_862_92,
    -59.597_960_355_475_49,
    14.136_097_974_741_746,
    -0.491_913_816_097_620_2,
    0.339_946_499_848_118_9e-4,
    0.465_236_289_270_485_8e-4,
    -0.983_744_753_048_795_6e-4,
    0.158_088_703_224_912_5e-3,
    -0.210_264_441_724_104_9e-3,
    0.217_439_618_115_212_65e-3,
    -0.164_318_106_536_763_9e-3,
    0.844_182_239_838_527_4e-4,
    -0.261_908_384_015_814_1e-4,
    0.368_991_826_595_316_2e-5,
];
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;
const POLE_TOL: f64 = 1e-12;
/// Largest argument of `exp` that stays finite.
pub const LN_MAX: f64 = 709.78;

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

fn lanczos(z: Complex64) -> Complex64 {
    let zm = z - 1.0;
    let mut acc = c(LANCZOS[0]);
    for (k, &ck) in LANCZOS.iter().enumerate().skip(1) {
        acc += ck / (zm + k as f64);
    }
    let t = zm + LANCZOS_G + 0.5;
    HALF_LN_2PI + (zm + 0.5) * t.ln() - t + acc.ln()
}

/// Principal branch of `log Γ(z)`.
///
/// For `Re z < 1/2` the argument is shifted upward with the recurrence
/// `log Γ(z) = log Γ(z+n) − Σ log(z+k)`, which keeps the branch continuous
/// off the negative real axis.
pub fn log_gamma(z: ComplexVal) -> Result<ComplexVal> {
    if !z.re.is_finite() || !z.im.is_finite() {
        return Err(Error::Domain(format!("log_gamma({z})")));
    }
    let nearest = z.re.round();
    if nearest <= 0.0 && (z - nearest).norm() < POLE_TOL {
        return Err(Error::Pole(nearest));
    }
    if z.re >= 0.5 {
        return Ok(lanczos(z));
    }
    let n = (0.5 - z.re).ceil();
    if n > 1e7 {
        return Err(Error::Domain(format!("log_gamma argument too negative: {z}")));
    }
    let n = n as usize;
    let mut shift = Complex64::new(0.0, 0.0);
    for k in 0..n {
        shift += (z + k as f64).ln();
    }
    Ok(lanczos(z + n as f64) - shift)
}

/// `log|Γ(x)|` and the sign of `Γ(x)` for real `x`.
pub fn log_gamma_real(x: f64) -> Result<(f64, f64)> {
    let lg = log_gamma(c(x))?;
    let sign = if lg.im.cos() >= 0.0 { 1.0 } else { -1.0 };
    Ok((lg.re, sign))
}

/// `|Γ(z)|²`.
pub fn abs_gamma_sq(z: ComplexVal) -> Result<f64> {
    let l = 2.0 * log_gamma(z)?.re;
    if l > LN_MAX {
        return Err(Error::Overflow(l));
    }
    Ok(l.exp())
}

const BERNOULLI_MAX: usize = 64;

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    let mut b = 1.0;
    for i in 0..k {
        b = b * (n - i) as f64 / (i + 1) as f64;
    }
    b
}

fn bernoulli_table() -> &'static [f64] {
    // B_2, B_4 exact; higher even indices from B_{2n} = (−1)^{n+1} 2 (2n)! ζ(2n) / (2π)^{2n}.
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut b = vec![0.0; BERNOULLI_MAX + 1];
        b[0] = 1.0;
        b[1] = -0.5;
        b[2] = 1.0 / 6.0;
        b[4] = -1.0 / 30.0;
        for n in (6..=BERNOULLI_MAX).step_by(2) {
            let zeta: f64 = (1..=2000).rev().map(|k| (k as f64).powi(-(n as i32))).sum();
            let mag = 2.0 * factorial(n) * zeta / (2.0 * PI).powi(n as i32);
            b[n] = if (n / 2) % 2 == 1 { mag } else { -mag };
        }
        b
    })
}

/// Bernoulli number `B_n` with the convention `B_1 = −1/2`.
pub fn bernoulli_number(n: usize) -> f64 {
    assert!(n <= BERNOULLI_MAX, "Bernoulli index {n} exceeds table size");
    bernoulli_table()[n]
}

/// Bernoulli polynomial `B_n(x)`.
pub fn bernoulli_poly(n: usize, x: f64) -> f64 {
    bernoulli_poly_c(n, c(x)).re
}

/// Bernoulli polynomial `B_n(z)` at complex argument.
pub fn bernoulli_poly_c(n: usize, z: ComplexVal) -> ComplexVal {
    // Horner form of Σ_k C(n,k) B_k z^{n-k}.
    let mut acc = Complex64::new(0.0, 0.0);
    for k in 0..=n {
        acc = acc * z + binomial(n, k) * bernoulli_number(k);
    }
    acc
}

/// Hurwitz zeta `ζ(s, z)`.
///
/// Supported: `Re s > 1` with `Re z > 0` (Euler-Maclaurin), and `s` a
/// nonpositive integer, where `ζ(−n, z) = −B_{n+1}(z)/(n+1)`.
pub fn hurwitz_zeta(s: ComplexVal, z: ComplexVal) -> Result<ComplexVal> {
    let sr = s.re.round();
    if s.im == 0.0 && sr <= 0.0 && (s.re - sr).abs() < POLE_TOL {
        let n = (-sr) as usize;
        if n + 1 > BERNOULLI_MAX {
            return Err(Error::Domain(format!("hurwitz_zeta at s = {sr} too negative")));
        }
        return Ok(-bernoulli_poly_c(n + 1, z) / (n as f64 + 1.0));
    }
    if s.re <= 1.0 || z.re <= 0.0 {
        return Err(Error::Domain(format!("hurwitz_zeta(s = {s}, z = {z})")));
    }
    const HEAD: usize = 24;
    const TAIL: usize = 12;
    let mut sum = Complex64::new(0.0, 0.0);
    for k in 0..HEAD {
        sum += (z + k as f64).powc(-s);
    }
    let w = z + HEAD as f64;
    sum += w.powc(1.0 - s) / (s - 1.0) + 0.5 * w.powc(-s);
    // Σ_j B_{2j}/(2j)! · s(s+1)…(s+2j−2) · w^{−s−2j+1}
    let mut rising = s;
    let mut fact = 2.0;
    let mut wp = w.powc(-s - 1.0);
    let winv2 = 1.0 / (w * w);
    for j in 1..=TAIL {
        sum += bernoulli_number(2 * j) / fact * rising * wp;
        let m = 2 * j as u32;
        rising = rising * (s + (m - 1) as f64) * (s + m as f64);
        fact *= ((m + 1) * (m + 2)) as f64;
        wp *= winv2;
    }
    Ok(sum)
}

/// Finite q-Pochhammer symbol `(a; q)_j = ∏_{k<j}(1 − a q^k)`.
pub fn qpoch_finite(a: ComplexVal, q: f64, j: usize) -> ComplexVal {
    let mut p = Complex64::new(1.0, 0.0);
    let mut aq = a;
    for _ in 0..j {
        p *= 1.0 - aq;
        aq *= q;
    }
    p
}

/// Rising factorial `[x]_j = x(x+1)⋯(x+j−1)`.
pub fn pochhammer_rising(x: f64, j: usize) -> f64 {
    (0..j).map(|k| x + k as f64).product()
}

/// Rising factorial at complex argument.
pub fn pochhammer_rising_c(z: ComplexVal, j: usize) -> ComplexVal {
    (0..j).fold(Complex64::new(1.0, 0.0), |p, k| p * (z + k as f64))
}

const QPOCH_TRUNC: f64 = 1e-18;
const ZERO_FACTOR: f64 = 1e-300;

fn check_q(q: f64) -> Result<()> {
    if !(q.abs() < 1.0) {
        return Err(Error::Domain(format!("|q| must be < 1, got {q}")));
    }
    Ok(())
}

/// `log (a; q)_∞` as a sum of principal logarithms of the factors.
///
/// The product is truncated once `|a q^k| < 1e−18`.
pub fn log_qpoch_inf(a: ComplexVal, q: f64) -> Result<ComplexVal> {
    check_q(q)?;
    let mut sum = Complex64::new(0.0, 0.0);
    let mut aq = a;
    let mut k = 0;
    while aq.norm() >= QPOCH_TRUNC {
        let f = 1.0 - aq;
        if f.norm() < ZERO_FACTOR {
            return Err(Error::ZeroFactor { index: k });
        }
        sum += f.ln();
        aq *= q;
        k += 1;
    }
    Ok(sum)
}

/// `log|(a; q)_∞|`, accumulating squared moduli in blocks.
pub fn log_abs_qpoch_inf(a: ComplexVal, q: f64) -> Result<f64> {
    check_q(q)?;
    let mut sum = 0.0;
    let mut block = 1.0;
    let mut aq = a;
    let mut k = 0;
    while aq.norm_sqr() >= QPOCH_TRUNC * QPOCH_TRUNC {
        let f = (1.0 - aq).norm_sqr();
        if f < ZERO_FACTOR * ZERO_FACTOR {
            return Err(Error::ZeroFactor { index: k });
        }
        block *= f;
        if !(1e-100..=1e100).contains(&block) || k % 32 == 31 {
            sum += block.ln();
            block = 1.0;
        }
        aq *= q;
        k += 1;
    }
    Ok(0.5 * (sum + block.ln()))
}

/// `log|(r e^{iφ}; q)_∞|` for real `r`, given `sin²(φ/2)`.
///
/// Each factor is `|1 − ρ e^{iφ}|² = (1 − ρ)² + 4ρ sin²(φ/2)` with `ρ = r q^k`,
/// which stays accurate when `ρ → 1` and `φ → 0`.
pub fn log_abs_qpoch_polar(r: f64, sin2_half_phi: f64, q: f64) -> f64 {
    let mut sum = 0.0;
    let mut block = 1.0;
    let mut rk = r;
    let mut k = 0u32;
    while rk.abs() >= QPOCH_TRUNC {
        let one_minus = 1.0 - rk;
        block *= one_minus * one_minus + 4.0 * rk * sin2_half_phi;
        k += 1;
        if k.is_multiple_of(32) {
            if block == 0.0 {
                return f64::NEG_INFINITY;
            }
            sum += block.ln();
            block = 1.0;
        }
        rk *= q;
    }
    0.5 * (sum + block.ln())
}

/// `log (a; q)_∞` from the series `−Σ_{n≥1} aⁿ/(n(1−qⁿ))`, valid for `|a| < 1`.
pub fn log_qpoch_inf_series(a: ComplexVal, q: f64) -> Result<ComplexVal> {
    check_q(q)?;
    if a.norm() >= 1.0 {
        return Err(Error::Domain(format!("series needs |a| < 1, got {a}")));
    }
    let mut sum = Complex64::new(0.0, 0.0);
    let mut an = a;
    let mut qn = q;
    let mut n = 1.0;
    while an.norm() > 1e-18 * (1.0 - a.norm()) {
        sum -= an / (n * (1.0 - qn));
        an *= a;
        qn *= q;
        n += 1.0;
    }
    Ok(sum)
}

/// `log Σ_k (−1)^k exp(−π ρ̃ (k+shift)² + 2πiν(k+shift))`, times `−i` if
/// `odd`. Terms are scaled by the largest one, so tiny nomes do not underflow.
fn log_theta_sum(rho_imag: f64, shift: f64, nu: ComplexVal, odd: bool) -> ComplexVal {
    // The real exponent peaks at k + shift = −Im ν / ρ̃.
    let centre = -nu.im / rho_imag - shift;
    let width = (50.0 / (PI * rho_imag)).sqrt() + 1.0;
    let lo = (centre - width).floor() as i64;
    let hi = (centre + width).ceil() as i64;
    let exps: Vec<(i64, ComplexVal)> = (lo..=hi)
        .map(|k| {
            let x = k as f64 + shift;
            (k, Complex64::new(-PI * rho_imag * x * x, 0.0) + Complex64::new(0.0, 2.0 * PI * x) * nu)
        })
        .collect();
    let top = exps.iter().map(|(_, e)| e.re).fold(f64::NEG_INFINITY, f64::max);
    let mut sum = Complex64::new(0.0, 0.0);
    for (k, e) in &exps {
        let term = (e - top).exp();
        if k.rem_euclid(2) == 1 {
            sum -= term;
        } else {
            sum += term;
        }
    }
    let phase = if odd { Complex64::new(0.0, -PI / 2.0) } else { Complex64::new(0.0, 0.0) };
    top + sum.ln() + phase
}

/// Jacobi `θ₁(ν | iρ̃)`.
pub fn theta1(nu: ComplexVal, rho_imag: f64) -> ComplexVal {
    log_theta1(nu, rho_imag).exp()
}

/// Jacobi `θ₄(ν | iρ̃)`.
pub fn theta4(nu: ComplexVal, rho_imag: f64) -> ComplexVal {
    log_theta4(nu, rho_imag).exp()
}

/// `log θ₁(ν | iρ̃)`; `−∞` real part at the zeros.
pub fn log_theta1(nu: ComplexVal, rho_imag: f64) -> ComplexVal {
    assert!(rho_imag > 0.0, "theta1 needs rho_imag > 0");
    log_theta_sum(rho_imag, 0.5, nu, true)
}

/// `log θ₄(ν | iρ̃)`.
pub fn log_theta4(nu: ComplexVal, rho_imag: f64) -> ComplexVal {
    assert!(rho_imag > 0.0, "theta4 needs rho_imag > 0");
    log_theta_sum(rho_imag, 0.0, nu, false)
}

/// Right-hand side of the theta representation of `log(±e^{−κz}; e^{−κ})_∞`,
/// which expresses the product through `θ₁` (sign `+`) or `θ₄` (sign `−`)
/// and two further q-Pochhammer symbols.
pub fn log_qpoch_via_theta(kappa: f64, z: ComplexVal, sign: Sign) -> Result<ComplexVal> {
    let q = (-kappa).exp();
    let rho = 2.0 * PI / kappa;
    let pre = 0.5 * (2.0 * PI / kappa).ln() + kappa / 8.0 - kappa * z / 2.0 + kappa * z * z / 2.0;
    let (th, a2) = match sign {
        Sign::Plus => (log_theta1(z, rho), (-kappa * (1.0 - z)).exp()),
        Sign::Minus => (log_theta4(z, rho), -(-kappa * (1.0 - z)).exp()),
    };
    if !th.re.is_finite() {
        return Err(Error::ZeroFactor { index: 0 });
    }
    Ok(pre + th - log_qpoch_inf(c(q), q)? - log_qpoch_inf(a2, q)?)
}

/// Choice of sign in `(±e^{−κz}; e^{−κ})_∞`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Plus,
    Minus,
}

/// `𝒜⁺[κ, z] = −π²/(6κ) − (z − ½) log κ − log(Γ(z)/√(2π))`.
pub fn a_plus(kappa: f64, z: ComplexVal) -> Result<ComplexVal> {
    Ok(-PI * PI / (6.0 * kappa) - (z - 0.5) * kappa.ln() - log_gamma(z)? + HALF_LN_2PI)
}

/// `𝒜⁻[κ, z] = π²/(12κ) − (z − ½) log 2`.
pub fn a_minus(kappa: f64, z: ComplexVal) -> ComplexVal {
    PI * PI / (12.0 * kappa) - (z - 0.5) * std::f64::consts::LN_2
}

/// Outcome of [`qpoch_asymptotic`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QExpansionResult {
    /// `log(±e^{−κz}; e^{−κ})_∞` computed directly.
    pub value: ComplexVal,
    /// `𝒜^±[κ, z]`.
    pub leading: ComplexVal,
    /// Bernoulli correction up to order `κ^{m−1}`.
    pub correction: ComplexVal,
    /// `|value − leading − correction|`, imaginary part reduced modulo 2π.
    pub error_measured: f64,
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Compare `log(±e^{−κz}; e^{−κ})_∞` with its small-κ expansion truncated
/// after `m − 1` Bernoulli terms.
pub fn qpoch_asymptotic(kappa: f64, z: ComplexVal, sign: Sign, m: usize) -> Result<QExpansionResult> {
    if !(kappa > 0.0 && kappa < 1.0) {
        return Err(Error::Domain(format!("kappa must lie in (0,1), got {kappa}")));
    }
    if m == 0 {
        return Err(Error::Domain("expansion order m must be >= 1".into()));
    }
    if z.im.abs() >= 5.0 / kappa {
        return Err(Error::Domain(format!("|Im z| = {} >= 5/kappa", z.im.abs())));
    }
    let q = (-kappa).exp();
    let base = (-kappa * z).exp();
    let (value, leading) = match sign {
        Sign::Plus => (log_qpoch_inf(base, q)?, a_plus(kappa, z)?),
        Sign::Minus => (log_qpoch_inf(-base, q)?, a_minus(kappa, z)),
    };
    let mut correction = Complex64::new(0.0, 0.0);
    for n in 1..m {
        let w = match sign {
            Sign::Plus => 1.0,
            Sign::Minus => 2f64.powi(n as i32) - 1.0,
        };
        correction -=
            w * bernoulli_poly_c(n + 1, z) * bernoulli_number(n) / (n as f64 * factorial(n + 1)) * kappa.powi(n as i32);
    }
    let mut diff = value - leading - correction;
    diff.im = (diff.im + PI).rem_euclid(2.0 * PI) - PI;
    Ok(QExpansionResult { value, leading, correction, error_measured: diff.norm() })
}

/// Gap between `log(±e^{−κz}; e^{−κ})_∞` computed as a product and through
/// [`log_qpoch_via_theta`], imaginary part reduced modulo 2π. For small gaps
/// this is the relative error of the product.
pub fn theta_identity_residual(kappa: f64, z: ComplexVal, sign: Sign) -> Result<f64> {
    let q = (-kappa).exp();
    let a = match sign {
        Sign::Plus => (-kappa * z).exp(),
        Sign::Minus => -(-kappa * z).exp(),
    };
    let mut d = log_qpoch_inf(a, q)? - log_qpoch_via_theta(kappa, z, sign)?;
    d.im = (d.im + PI).rem_euclid(2.0 * PI) - PI;
    Ok(d.norm())
}

/// Least-squares slope of `log error` against `log κ` for the expansion of
/// order `m`.
pub fn asymptotic_error_slope(z: ComplexVal, sign: Sign, m: usize, kappas: &[f64]) -> Result<f64> {
    if kappas.len() < 2 {
        return Err(Error::Domain("need at least two values of kappa".into()));
    }
    let pts: Vec<(f64, f64)> = kappas
        .iter()
        .map(|&k| qpoch_asymptotic(k, z, sign, m).map(|r| (k.ln(), r.error_measured.ln())))
        .collect::<Result<_>>()?;
    let n = pts.len() as f64;
    let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

/// Natural log of `Σ exp(x_i)`, stable for large or `−∞` entries.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}
