//! Limiting Laplace transform of the stationary open KPZ height increments:
//! the continuous dual Hahn process representation, the closed one-point
//! formula, the Brownian case and the comparison with finite-N values.

use std::sync::Arc;

use crate::asep::{increment_laplace_exact, model_from_uv, site_counts, stationary_exact, BoundaryParams};
use crate::cdh::CdhProcessParams;
use crate::measure::{chain, Chart, MixedMeasure, QuadratureSpec};
use crate::specfun::log_gamma;
use crate::{Complex64, Error, Result};

/// Locations `0 < X_1 < … < X_d ≤ 1` and Laplace variables `c_1, …, c_d ≥ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplaceQuery {
    pub x: Vec<f64>,
    pub c: Vec<f64>,
}

impl LaplaceQuery {
    pub fn new(x: Vec<f64>, c: Vec<f64>) -> Result<Self> {
        if x.is_empty() || x.len() != c.len() {
            return Err(Error::Invalid(format!(
                "need d ≥ 1 locations and as many c values, got {} and {}",
                x.len(),
                c.len()
            )));
        }
        let mut prev = 0.0;
        for &xi in &x {
            if !(xi > prev && xi <= 1.0) {
                return Err(Error::Invalid(format!("locations must satisfy 0 < X_1 < … < X_d ≤ 1, got {x:?}")));
            }
            prev = xi;
        }
        if c.iter().any(|&ci| !(ci >= 0.0 && ci.is_finite())) {
            return Err(Error::Invalid(format!("c values must be finite and nonnegative, got {c:?}")));
        }
        Ok(LaplaceQuery { x, c })
    }

    pub fn single(x: f64, c: f64) -> Result<Self> {
        Self::new(vec![x], vec![c])
    }

    pub fn d(&self) -> usize {
        self.x.len()
    }

    /// `s_k = c_k + … + c_d` for `k = 1..=d+1`, with `s_{d+1} = 0`.
    pub fn s(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.d() + 1];
        for k in (0..self.d()).rev() {
            s[k] = s[k + 1] + self.c[k];
        }
        s
    }

    /// `X_0 = 0, X_1, …, X_d, X_{d+1} = 1`.
    pub fn x_full(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.d() + 2);
        v.push(0.0);
        v.extend_from_slice(&self.x);
        v.push(1.0);
        v
    }

    /// `ΔX_k = X_k − X_{k−1}` for `k = 1..=d+1`.
    pub fn dx(&self) -> Vec<f64> {
        self.x_full().windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn is_trivial(&self) -> bool {
        self.c.iter().all(|&c| c == 0.0)
    }
}

/// `𝒢(r) = exp(¼ Σ_k (s_k² − r_k) ΔX_k)` for `r = (r_1, …, r_{d+1})`.
pub fn g_value(query: &LaplaceQuery, r: &[f64]) -> Result<f64> {
    if r.len() != query.d() + 1 {
        return Err(Error::Invalid(format!("need {} values of r, got {}", query.d() + 1, r.len())));
    }
    let e: f64 = query.s().iter().zip(query.dx()).zip(r).map(|((s, dx), r)| (s * s - r) * dx).sum();
    Ok((0.25 * e).exp())
}

/// Where a query sits relative to the two time horizons.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RangeTag {
    /// Every `c_k < 𝖢_{u,v}/d`: finite-N convergence is covered.
    FiniteN,
    /// `s_1 < 𝖢_{u,v}` but some `c_k ≥ 𝖢_{u,v}/d`.
    LimitOnly,
}

/// Range tag of a query; errors when `s_1 ≥ 𝖢_{u,v}`.
pub fn range_tag(pp: &CdhProcessParams, query: &LaplaceQuery) -> Result<RangeTag> {
    let cuv = pp.c_uv();
    let s1 = query.s()[0];
    if s1 >= cuv {
        return Err(Error::Domain(format!("s_1 = c_1 + … + c_d = {s1} must be below 𝖢_(u,v) = {cuv}")));
    }
    let gate = cuv / query.d() as f64;
    Ok(if query.c.iter().all(|&c| c < gate) { RangeTag::FiniteN } else { RangeTag::LimitOnly })
}

/// Largest supported number of Laplace variables.
pub const MAX_D: usize = 2;

/// `φ_{u,v}(c, X)`: the ratio of `∫𝒢 dP` over the continuous dual Hahn
/// process (chained from time `s_{d+1} = 0` up to `s_1`) to `∫e^{−r/4} d𝔭_0`.
pub fn phi_limit(pp: &CdhProcessParams, query: &LaplaceQuery, spec: &QuadratureSpec) -> Result<f64> {
    if query.d() > MAX_D {
        return Err(Error::Invalid(format!("d = {} exceeds the nesting limit {MAX_D}", query.d())));
    }
    range_tag(pp, query)?;
    if query.is_trivial() {
        return Ok(1.0);
    }
    let s = query.s();
    let dx = query.dx();
    // Walk k = d+1 down to 1, merging equal times.
    let mut nu: Option<(f64, MixedMeasure)> = None;
    for k in (0..s.len()).rev() {
        let (sk, dxk) = (s[k], dx[k]);
        let log_g = move |r: f64| 0.25 * (sk * sk - r) * dxk;
        nu = Some(match nu {
            None => (sk, pp.marginal(sk)?.reweighted(log_g)),
            Some((t, m)) if t == sk => (sk, m.reweighted(log_g)),
            Some((t, m)) => (sk, chain(&m, |x| pp.transition_from(t, sk, x), spec)?.reweighted(log_g)),
        });
    }
    let (_, nu) = nu.expect("d ≥ 1");
    let num = nu.integrate_log(|_| 0.0, spec)?;
    let den = pp.marginal(0.0)?.integrate_log(|r| -0.25 * r, spec)?;
    let v = (num - den).exp();
    if !(v.is_finite() && v > 0.0) {
        return Err(Error::NonFinite(v));
    }
    Ok(v)
}

/// `E e^{−c H_{u,v}(1)}` from the closed one-point formula, for `u, v > 0`
/// and `0 < c < 2u`.
pub fn single_point_formula(u: f64, v: f64, c: f64, spec: &QuadratureSpec) -> Result<f64> {
    if !(u > 0.0 && v > 0.0) {
        return Err(Error::Domain(format!("need u, v > 0, got u = {u}, v = {v}")));
    }
    if !(c > 0.0 && c < 2.0 * u) {
        return Err(Error::Domain(format!("need 0 < c < 2u, got c = {c}")));
    }
    // Weight in y = √r: e^{−y²/4} |Γ(a + iy/2) Γ(b + iy/2)|² / |Γ(iy)|², up to a
    // common factor; 1/|Γ(iy)|² = y sinh(πy)/π.
    let log_w = move |a: f64, b: f64, y: f64| -> f64 {
        let iy = Complex64::new(0.0, 0.5 * y);
        match (log_gamma(a + iy), log_gamma(b + iy)) {
            (Ok(g1), Ok(g2)) => -0.25 * y * y + 2.0 * (g1 + g2).re + crate::cdh::ln_inv_sqrt_gamma_i(y) + y.ln(),
            _ => f64::NEG_INFINITY,
        }
    };
    let num = MixedMeasure::from_log_weight(
        Chart::Square,
        Arc::new(move |y| log_w(0.5 * c + v, -0.5 * c + u, y)),
        vec![],
        false,
    );
    let den = MixedMeasure::from_log_weight(Chart::Square, Arc::new(move |y| log_w(v, u, y)), vec![], false);
    let ln = num.integrate_log(|_| 0.0, spec)?;
    let ld = den.integrate_log(|_| 0.0, spec)?;
    Ok((0.25 * c * c + ln - ld).exp())
}

/// Exact finite-N Laplace transform on the line `v = −u`, where the
/// stationary law is product Bernoulli(`ρ(u)`).
pub fn brownian_case(u: f64, n_sites: usize, query: &LaplaceQuery) -> f64 {
    let sq = (n_sites as f64).sqrt();
    // 2ρ(u) − 1 = tanh(u/√N); each factor is written as 1 + small for large N.
    let drift = (u / sq).tanh();
    let mut n = vec![0];
    n.extend(site_counts(n_sites, query));
    n.push(n_sites);
    let s = query.s();
    let mut log_v = 0.0;
    for k in 0..s.len() {
        let e = (n[k + 1] - n[k]) as f64;
        let a = s[k] / sq;
        log_v += e * (2.0 * (0.5 * a).sinh().powi(2) - drift * a.sinh()).ln_1p();
    }
    log_v.exp()
}

/// `N → ∞` limit of [`brownian_case`]: `∏ exp(ΔX_k (s_k²/2 − u s_k))`.
pub fn brownian_limit(u: f64, query: &LaplaceQuery) -> f64 {
    query.s().iter().zip(query.dx()).map(|(s, dx)| dx * (0.5 * s * s - u * s)).sum::<f64>().exp()
}

/// Increment Laplace values `E e^{−c(H(X₂) − H(X₁))}` for the models
/// `(−v, v)`, `(u, v)` and `(u, −u)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sandwich {
    pub lower_model: f64,
    pub middle: f64,
    pub upper_model: f64,
}

impl Sandwich {
    /// For `c > 0`: `value(−v, v) ≥ value(u, v) ≥ value(u, −u)`.
    pub fn is_ordered(&self, tol: f64) -> bool {
        self.lower_model + tol >= self.middle && self.middle + tol >= self.upper_model
    }
}

/// Exact-solve sandwich of the increment Laplace transform between the two
/// Brownian models, for `u + v ≥ 0` and `N ≤ 12`.
pub fn sandwich_check(u: f64, v: f64, n_sites: usize, x1: f64, x2: f64, c: f64) -> Result<Sandwich> {
    if u + v < 0.0 {
        return Err(Error::Domain(format!("need u + v ≥ 0, got {}", u + v)));
    }
    if n_sites > 12 {
        return Err(Error::SizeGuard { n: n_sites, max: 12 });
    }
    if !(0.0 <= x1 && x1 < x2 && x2 <= 1.0) {
        return Err(Error::Invalid(format!("need 0 ≤ X < X' ≤ 1, got {x1}, {x2}")));
    }
    let value = |bp: BoundaryParams| -> Result<f64> {
        let pi = stationary_exact(&model_from_uv(n_sites, bp)?)?;
        Ok(increment_laplace_exact(&pi, x1, x2, c))
    };
    Ok(Sandwich {
        lower_model: value(BoundaryParams::new(-v, v))?,
        middle: value(BoundaryParams::new(u, v))?,
        upper_model: value(BoundaryParams::new(u, -u))?,
    })
}

#[cfg(test)]
mod kpz_works {
    use super::*;
    use crate::asep::{laplace_exact, product_bernoulli, rho_of, StationaryDistribution};
    use approx::assert_relative_eq;

    fn spec() -> QuadratureSpec {
        QuadratureSpec { panels: 2, nodes_per_panel: 32, cutoff: 900.0, rel_tol: 1e-8 }
    }

    #[test]
    fn query_validation() {
        assert!(LaplaceQuery::new(vec![0.5, 0.4], vec![0.1, 0.1]).is_err());
        assert!(LaplaceQuery::new(vec![0.5], vec![-0.1]).is_err());
        assert!(LaplaceQuery::new(vec![], vec![]).is_err());
        let q = LaplaceQuery::new(vec![0.25, 0.75], vec![0.4, 0.3]).unwrap();
        assert_eq!(q.s(), vec![0.3 + 0.4, 0.3, 0.0]);
        assert_eq!(q.dx(), vec![0.25, 0.5, 0.25]);
    }

    #[test]
    fn g_value_examples() {
        let q = LaplaceQuery::single(0.5, 0.6).unwrap();
        let s = q.s();
        assert_relative_eq!(g_value(&q, &[s[0] * s[0], 0.0]).unwrap(), 1.0, epsilon = 1e-15);
        assert_relative_eq!(g_value(&q, &[0.0, 0.0]).unwrap(), (0.36f64 / 8.0).exp(), epsilon = 1e-15);
        assert!(g_value(&q, &[0.0]).is_err());
    }

    #[test]
    fn range_tags() {
        let pp = CdhProcessParams::new(1.0, 0.5).unwrap();
        let q = LaplaceQuery::new(vec![0.3, 0.6], vec![0.5, 0.4]).unwrap();
        assert_eq!(range_tag(&pp, &q).unwrap(), RangeTag::FiniteN);
        let q = LaplaceQuery::new(vec![0.3, 0.6], vec![1.2, 0.4]).unwrap();
        assert_eq!(range_tag(&pp, &q).unwrap(), RangeTag::LimitOnly);
        let q = LaplaceQuery::single(0.5, 2.0).unwrap();
        assert!(range_tag(&pp, &q).is_err());
    }

    #[test]
    fn phi_limit_matches_single_point() {
        let pp = CdhProcessParams::new(1.0, 1.0).unwrap();
        let q = LaplaceQuery::single(1.0, 0.5).unwrap();
        let a = phi_limit(&pp, &q, &spec()).unwrap();
        let b = single_point_formula(1.0, 1.0, 0.5, &spec()).unwrap();
        assert_relative_eq!(a, b, max_relative = 1e-9);
        assert_eq!(phi_limit(&pp, &LaplaceQuery::single(0.5, 0.0).unwrap(), &spec()).unwrap(), 1.0);
    }

    #[test]
    fn brownian_case_matches_exact_and_limit() {
        let n = 6;
        let q = LaplaceQuery::new(vec![0.5, 1.0], vec![0.3, 0.2]).unwrap();
        let m = model_from_uv(n, BoundaryParams::new(1.0, -1.0)).unwrap();
        let dist = StationaryDistribution { probs: product_bernoulli(n, rho_of(m.q, 1.0)), model: m, residual: 0.0 };
        assert_relative_eq!(brownian_case(1.0, n, &q), laplace_exact(&dist, &q), epsilon = 1e-13);
        let big = brownian_case(0.7, 1 << 40, &LaplaceQuery::single(1.0, 0.4).unwrap());
        assert_relative_eq!(big, (0.08f64 - 0.28).exp(), max_relative = 1e-9);
        assert_relative_eq!(
            brownian_limit(0.7, &LaplaceQuery::single(1.0, 0.4).unwrap()),
            (0.08f64 - 0.28).exp(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn sandwich_orders_for_symmetric_boundaries() {
        let sw = sandwich_check(0.5, 0.5, 6, 0.0, 1.0, 0.4).unwrap();
        assert!(sw.is_ordered(0.0));
        let flat = sandwich_check(0.5, -0.5, 6, 0.0, 1.0, 0.4).unwrap();
        assert_relative_eq!(flat.lower_model, flat.middle, epsilon = 1e-12);
        assert_relative_eq!(flat.middle, flat.upper_model, epsilon = 1e-12);
        let zero = sandwich_check(0.5, 0.5, 6, 0.0, 1.0, 0.0).unwrap();
        assert_relative_eq!(zero.middle, 1.0, epsilon = 1e-12);
    }
}
