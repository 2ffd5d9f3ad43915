//! Open ASEP on `N` sites: parameter charts, exact stationary law, Laplace
//! functionals of the height function, Gillespie simulation, the attractive
//! multi-species coupling and the phase diagram.
//!
//! Configurations on `N ≤ 14` sites are indexed by bitmasks, site `i`
//! (1-based) being bit `i − 1`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::kpz::LaplaceQuery;
use crate::{Error, Result};

/// Largest `N` accepted by the exact solver.
pub const MAX_EXACT_SITES: usize = 14;
/// Largest state space solved by dense LU; larger ones use Gauss-Seidel.
const DENSE_LIMIT: usize = 1 << 10;
/// Required `‖πL‖∞` of an exact stationary solve.
pub const RESIDUAL_TOL: f64 = 1e-10;

/// Boundary parameters `(u, v)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryParams {
    pub u: f64,
    pub v: f64,
}

impl BoundaryParams {
    pub fn new(u: f64, v: f64) -> Self {
        BoundaryParams { u, v }
    }

    /// `(v, u)`: particle-hole duality swaps the roles of the two boundaries.
    pub fn dual(self) -> Self {
        BoundaryParams { u: self.v, v: self.u }
    }
}

/// `q = e^{−2/√N}`.
pub fn q_of(n_sites: usize) -> f64 {
    (-2.0 / (n_sites as f64).sqrt()).exp()
}

/// `ρ(u) = 1/(1 + q^u)`.
pub fn rho_of(q: f64, u: f64) -> f64 {
    1.0 / (1.0 + q.powf(u))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KappaSign {
    Plus,
    Minus,
}

/// `κ^±(q, x, y) = (1 − q − x + y ± √((1 − q − x + y)² + 4xy)) / (2x)`.
pub fn kappa_pm(q: f64, x: f64, y: f64, sign: KappaSign) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::Domain(format!("κ needs x > 0, got {x}")));
    }
    let b = 1.0 - q - x + y;
    let disc = b * b + 4.0 * x * y;
    if disc < 0.0 {
        return Err(Error::Domain(format!("negative discriminant {disc}")));
    }
    let r = disc.sqrt();
    Ok(match sign {
        KappaSign::Plus => (b + r) / (2.0 * x),
        KappaSign::Minus => (b - r) / (2.0 * x),
    })
}

/// Open ASEP with bulk rates `1` (right) and `q` (left), entry/exit rates
/// `α, γ` at site 1 and `δ, β` at site `N`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AsepModel {
    pub n_sites: usize,
    pub q: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
}

impl AsepModel {
    pub fn new(n_sites: usize, q: f64, alpha: f64, beta: f64, gamma: f64, delta: f64) -> Result<Self> {
        if n_sites == 0 {
            return Err(Error::Invalid("need N ≥ 1".into()));
        }
        if !(0.0..1.0).contains(&q) {
            return Err(Error::Invalid(format!("q = {q} outside [0, 1)")));
        }
        if !(alpha > 0.0 && beta > 0.0) || !(gamma >= 0.0 && delta >= 0.0) {
            return Err(Error::Invalid(format!("need α, β > 0 and γ, δ ≥ 0, got {alpha}, {beta}, {gamma}, {delta}")));
        }
        if ![alpha, beta, gamma, delta].iter().all(|r| r.is_finite()) {
            return Err(Error::Invalid("non-finite rate".into()));
        }
        Ok(AsepModel { n_sites, q, alpha, beta, gamma, delta })
    }

    /// Model with `γ = δ = 0` and effective densities `ρ_ℓ`, `ρ_r`.
    pub fn from_densities(n_sites: usize, q: f64, rho_l: f64, rho_r: f64) -> Result<Self> {
        Self::new(n_sites, q, rho_l * (1.0 - q), (1.0 - rho_r) * (1.0 - q), 0.0, 0.0)
    }

    /// `A = κ⁺(q, β, δ)`.
    pub fn a(&self) -> f64 {
        kappa_pm(self.q, self.beta, self.delta, KappaSign::Plus).expect("valid model")
    }
    /// `B = κ⁻(q, β, δ)`.
    pub fn b(&self) -> f64 {
        kappa_pm(self.q, self.beta, self.delta, KappaSign::Minus).expect("valid model")
    }
    /// `C = κ⁺(q, α, γ)`.
    pub fn c(&self) -> f64 {
        kappa_pm(self.q, self.alpha, self.gamma, KappaSign::Plus).expect("valid model")
    }
    /// `D = κ⁻(q, α, γ)`.
    pub fn d(&self) -> f64 {
        kappa_pm(self.q, self.alpha, self.gamma, KappaSign::Minus).expect("valid model")
    }

    pub fn rho_left(&self) -> f64 {
        1.0 / (1.0 + self.c())
    }

    pub fn rho_right(&self) -> f64 {
        let a = self.a();
        a / (1.0 + a)
    }

    /// Hole-reversed model: `α ↔ β`, `γ ↔ δ`.
    pub fn dual(&self) -> Self {
        AsepModel { alpha: self.beta, beta: self.alpha, gamma: self.delta, delta: self.gamma, ..*self }
    }

    pub fn n_states(&self) -> usize {
        1usize << self.n_sites
    }
}

/// Model in the `(u, v)` chart at `N` sites.
pub fn model_from_uv(n_sites: usize, bp: BoundaryParams) -> Result<AsepModel> {
    let q = q_of(n_sites);
    let (qu, qv) = (q.powf(bp.u), q.powf(bp.v));
    AsepModel::new(n_sites, q, 1.0 / (1.0 + qu), 1.0 / (1.0 + qv), q * qu / (1.0 + qu), q * qv / (1.0 + qv))
}

/// Occupation vector `τ ∈ {0, 1}^N`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Configuration {
    pub occupation: Vec<bool>,
}

impl Configuration {
    pub fn empty(n: usize) -> Self {
        Configuration { occupation: vec![false; n] }
    }

    pub fn from_index(n: usize, index: usize) -> Self {
        Configuration { occupation: (0..n).map(|i| index >> i & 1 == 1).collect() }
    }

    pub fn index(&self) -> usize {
        self.occupation.iter().enumerate().map(|(i, &b)| (b as usize) << i).sum()
    }

    /// `h(x) = Σ_{i ≤ x} (2τ_i − 1)` for `x = 0..=N`.
    pub fn height(&self) -> HeightProfile {
        let mut values = Vec::with_capacity(self.occupation.len() + 1);
        let mut h = 0i64;
        values.push(0);
        for &b in &self.occupation {
            h += if b { 1 } else { -1 };
            values.push(h);
        }
        HeightProfile { values }
    }

    /// `τ'_i = 1 − τ_{N+1−i}`.
    pub fn hole_reversed(&self) -> Self {
        Configuration { occupation: self.occupation.iter().rev().map(|&b| !b).collect() }
    }
}

/// Height function `h(0..=N)` with `h(0) = 0` and `±1` increments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeightProfile {
    pub values: Vec<i64>,
}

fn hole_reverse_index(n: usize, idx: usize) -> usize {
    let mut out = 0;
    for i in 0..n {
        if idx >> i & 1 == 0 {
            out |= 1 << (n - 1 - i);
        }
    }
    out
}

/// Off-diagonal rates of the generator, `(from, to, rate)`.
#[derive(Debug, Clone)]
pub struct Generator {
    pub n_states: usize,
    pub transitions: Vec<(usize, usize, f64)>,
}

impl Generator {
    /// Exit rate of each state.
    pub fn exit_rates(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_states];
        for &(i, _, r) in &self.transitions {
            out[i] += r;
        }
        out
    }

    /// Row sums of the full generator (zero up to rounding).
    pub fn row_sums(&self) -> Vec<f64> {
        let mut sums = self.exit_rates().iter().map(|r| -r).collect::<Vec<_>>();
        for &(i, _, r) in &self.transitions {
            sums[i] += r;
        }
        sums
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n_states, self.n_states);
        for &(i, j, r) in &self.transitions {
            m[(i, j)] += r;
            m[(i, i)] -= r;
        }
        m
    }

    /// `‖πL‖∞`.
    pub fn residual(&self, pi: &[f64]) -> f64 {
        let mut out = vec![0.0; self.n_states];
        for &(i, j, r) in &self.transitions {
            out[j] += pi[i] * r;
            out[i] -= pi[i] * r;
        }
        out.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

/// Moves available from a configuration, as `(new configuration, rate)`.
fn moves(model: &AsepModel, idx: usize, out: &mut Vec<(usize, f64)>) {
    out.clear();
    let n = model.n_sites;
    let occ = |i: usize| idx >> i & 1 == 1;
    let flip = |i: usize| idx ^ (1 << i);
    if occ(0) {
        if model.gamma > 0.0 {
            out.push((flip(0), model.gamma));
        }
    } else {
        out.push((flip(0), model.alpha));
    }
    if occ(n - 1) {
        out.push((flip(n - 1), model.beta));
    } else if model.delta > 0.0 {
        out.push((flip(n - 1), model.delta));
    }
    for i in 0..n.saturating_sub(1) {
        match (occ(i), occ(i + 1)) {
            (true, false) => out.push((idx ^ (0b11 << i), 1.0)),
            (false, true) if model.q > 0.0 => out.push((idx ^ (0b11 << i), model.q)),
            _ => {}
        }
    }
}

/// Generator of the model on `{0, 1}^N`.
pub fn build_generator(model: &AsepModel) -> Result<Generator> {
    if model.n_sites > MAX_EXACT_SITES {
        return Err(Error::SizeGuard { n: model.n_sites, max: MAX_EXACT_SITES });
    }
    let n_states = model.n_states();
    let mut transitions = Vec::new();
    let mut buf = Vec::new();
    for idx in 0..n_states {
        moves(model, idx, &mut buf);
        transitions.extend(buf.iter().map(|&(j, r)| (idx, j, r)));
    }
    Ok(Generator { n_states, transitions })
}

/// Stationary law of the model.
#[derive(Debug, Clone)]
pub struct StationaryDistribution {
    pub probs: Vec<f64>,
    pub model: AsepModel,
    /// `‖πL‖∞` of the solution.
    pub residual: f64,
}

impl StationaryDistribution {
    /// `E f(τ)`.
    pub fn expect(&self, f: impl Fn(&Configuration) -> f64) -> f64 {
        let n = self.model.n_sites;
        self.probs.iter().enumerate().map(|(i, &p)| p * f(&Configuration::from_index(n, i))).sum()
    }

    /// `⟨τ_i⟩` for `i = 1..=N`.
    pub fn densities(&self) -> Vec<f64> {
        let n = self.model.n_sites;
        (0..n).map(|s| self.probs.iter().enumerate().filter(|(i, _)| i >> s & 1 == 1).map(|(_, p)| p).sum()).collect()
    }
}

fn solve_dense(gen: &Generator) -> Result<Vec<f64>> {
    let n = gen.n_states;
    let mut m = gen.to_dense().transpose();
    for j in 0..n {
        m[(n - 1, j)] = 1.0;
    }
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    let sol = m.lu().solve(&rhs).ok_or_else(|| Error::Singular("generator LU has a zero pivot".into()))?;
    Ok(sol.iter().copied().collect())
}

fn solve_gauss_seidel(gen: &Generator) -> Result<Vec<f64>> {
    let n = gen.n_states;
    let exit = gen.exit_rates();
    let mut incoming: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for &(i, j, r) in &gen.transitions {
        incoming[j].push((i, r));
    }
    let mut pi = vec![1.0 / n as f64; n];
    for sweep in 1..=200_000 {
        for j in 0..n {
            let s: f64 = incoming[j].iter().map(|&(i, r)| pi[i] * r).sum();
            pi[j] = s / exit[j];
        }
        let total: f64 = pi.iter().sum();
        pi.iter_mut().for_each(|p| *p /= total);
        if sweep % 20 == 0 && gen.residual(&pi) <= 1e-3 * RESIDUAL_TOL {
            return Ok(pi);
        }
    }
    Err(Error::Singular("Gauss-Seidel did not converge".into()))
}

/// Solves `πL = 0`, `Σπ = 1`.
pub fn stationary_exact(model: &AsepModel) -> Result<StationaryDistribution> {
    let gen = build_generator(model)?;
    let mut probs = if gen.n_states <= DENSE_LIMIT { solve_dense(&gen)? } else { solve_gauss_seidel(&gen)? };
    if probs.iter().any(|p| !p.is_finite() || *p < -1e-12) {
        return Err(Error::Singular("stationary solve returned negative or non-finite mass".into()));
    }
    probs.iter_mut().for_each(|p| *p = p.max(0.0));
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);
    let residual = gen.residual(&probs);
    if residual > RESIDUAL_TOL {
        return Err(Error::Singular(format!("stationary residual {residual:e} above {RESIDUAL_TOL:e}")));
    }
    Ok(StationaryDistribution { probs, model: *model, residual })
}

/// Product Bernoulli(`ρ`) law on `N` sites.
pub fn product_bernoulli(n: usize, rho: f64) -> Vec<f64> {
    (0..1usize << n)
        .map(|i| {
            let k = i.count_ones() as i32;
            rho.powi(k) * (1.0 - rho).powi(n as i32 - k)
        })
        .collect()
}

/// `n_k = ⌊N X_k⌋`, with a small guard against `N X_k` landing just below an
/// integer.
pub fn site_counts(n_sites: usize, query: &LaplaceQuery) -> Vec<usize> {
    let nf = n_sites as f64;
    query.x.iter().map(|&x| ((nf * x + 1e-9).floor() as usize).min(n_sites)).collect()
}

/// `E exp(−Σ c_k H^(N)(X_k))` with `H^(N)(X) = N^{−1/2} Σ_{i ≤ NX} (2τ_i − 1)`.
pub fn laplace_exact(dist: &StationaryDistribution, query: &LaplaceQuery) -> f64 {
    let n = dist.model.n_sites;
    let ns = site_counts(n, query);
    let scale = 1.0 / (n as f64).sqrt();
    dist.probs
        .iter()
        .enumerate()
        .map(|(idx, &p)| {
            let mut e = 0.0;
            for (&nk, &ck) in ns.iter().zip(&query.c) {
                let ones = (idx & ((1usize << nk) - 1)).count_ones() as f64;
                e += ck * (2.0 * ones - nk as f64) * scale;
            }
            p * (-e).exp()
        })
        .sum()
}

/// `E exp(−c (H^(N)(X') − H^(N)(X)))` for `X < X'`.
pub fn increment_laplace_exact(dist: &StationaryDistribution, x: f64, x2: f64, c: f64) -> f64 {
    let n = dist.model.n_sites;
    let nf = n as f64;
    let lo = ((nf * x + 1e-9).floor() as usize).min(n);
    let hi = ((nf * x2 + 1e-9).floor() as usize).min(n);
    let mask = ((1usize << hi) - 1) & !((1usize << lo) - 1);
    let scale = 1.0 / nf.sqrt();
    dist.probs
        .iter()
        .enumerate()
        .map(|(idx, &p)| {
            let ones = (idx & mask).count_ones() as f64;
            p * (-c * (2.0 * ones - (hi - lo) as f64) * scale).exp()
        })
        .sum()
}

/// Stationary current `⟨α(1 − τ_1) − γτ_1⟩ / (1 − q)`.
pub fn current_exact(dist: &StationaryDistribution) -> f64 {
    let m = &dist.model;
    let t1: f64 = dist.probs.iter().enumerate().filter(|(i, _)| i & 1 == 1).map(|(_, p)| p).sum();
    (m.alpha * (1.0 - t1) - m.gamma * t1) / (1.0 - m.q)
}

/// Stationary law of the dual model, read back through `τ ↦ hole-reversed τ`.
pub fn dual_probs(dist: &StationaryDistribution) -> Vec<f64> {
    let n = dist.model.n_sites;
    let mut out = vec![0.0; dist.probs.len()];
    for (i, &p) in dist.probs.iter().enumerate() {
        out[hole_reverse_index(n, i)] = p;
    }
    out
}

/// Summary of a Gillespie run.
#[derive(Debug, Clone)]
pub struct SimSummary {
    pub final_config: Configuration,
    /// Events after burn-in.
    pub events: u64,
    /// Simulated time after burn-in.
    pub time: f64,
    /// Time-averaged `⟨τ_i⟩` after burn-in.
    pub mean_occupation: Vec<f64>,
    /// Net particles entered at site 1 per unit time, divided by `1 − q`.
    pub current: f64,
    /// The same estimator over consecutive batches of equal event count.
    pub batch_currents: Vec<f64>,
}

impl SimSummary {
    /// Batch-means standard error of [`SimSummary::current`].
    pub fn current_std_error(&self) -> f64 {
        batch_std_error(&self.batch_currents)
    }
}

/// Standard error of the mean of (approximately independent) batch values.
pub fn batch_std_error(batches: &[f64]) -> f64 {
    let n = batches.len() as f64;
    if n < 2.0 {
        return f64::NAN;
    }
    let mean = batches.iter().sum::<f64>() / n;
    let var = batches.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (var / n).sqrt()
}

/// When a run stops.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopRule {
    /// Stop at this time, counted from the end of burn-in.
    Time(f64),
    /// Stop after this many events past burn-in.
    Events(u64),
}

/// Options of a Gillespie run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    pub stop: StopRule,
    /// Time discarded before statistics start.
    pub burn_in_time: f64,
    pub batches: usize,
}

impl SimOptions {
    pub fn time(t_max: f64) -> Self {
        SimOptions { stop: StopRule::Time(t_max), burn_in_time: 0.0, batches: 20 }
    }

    pub fn events(n: u64) -> Self {
        SimOptions { stop: StopRule::Events(n), burn_in_time: 0.0, batches: 20 }
    }

    pub fn with_burn_in(mut self, t: f64) -> Self {
        self.burn_in_time = t;
        self
    }
}

/// Indexable set of bond positions with O(1) insert and remove.
struct BondSet {
    items: Vec<usize>,
    pos: Vec<usize>,
}

impl BondSet {
    fn new(n: usize) -> Self {
        BondSet { items: Vec::new(), pos: vec![usize::MAX; n] }
    }
    fn insert(&mut self, i: usize) {
        if self.pos[i] == usize::MAX {
            self.pos[i] = self.items.len();
            self.items.push(i);
        }
    }
    fn remove(&mut self, i: usize) {
        let p = self.pos[i];
        if p != usize::MAX {
            let last = self.items.pop().expect("nonempty");
            if last != i {
                self.items[p] = last;
                self.pos[last] = p;
            }
            self.pos[i] = usize::MAX;
        }
    }
    fn len(&self) -> usize {
        self.items.len()
    }
}

/// Exact event-driven simulation started from `init`.
pub fn simulate(model: &AsepModel, opts: SimOptions, seed: u64, init: &Configuration) -> Result<SimSummary> {
    let n = model.n_sites;
    if init.occupation.len() != n {
        return Err(Error::Invalid(format!(
            "initial configuration has {} sites, model has {n}",
            init.occupation.len()
        )));
    }
    match opts.stop {
        StopRule::Time(t) if !(t > 0.0) => return Err(Error::Invalid(format!("t_max = {t} must be positive"))),
        StopRule::Events(0) => return Err(Error::Invalid("need at least one event".into())),
        _ => {}
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut tau = init.occupation.clone();
    // Bond i joins sites i and i + 1 (0-based).
    let mut right = BondSet::new(n.max(1));
    let mut left = BondSet::new(n.max(1));
    let refresh = |tau: &[bool], i: usize, right: &mut BondSet, left: &mut BondSet| {
        if i + 1 >= tau.len() {
            return;
        }
        right.remove(i);
        left.remove(i);
        match (tau[i], tau[i + 1]) {
            (true, false) => right.insert(i),
            (false, true) => left.insert(i),
            _ => {}
        }
    };
    for i in 0..n.saturating_sub(1) {
        refresh(&tau, i, &mut right, &mut left);
    }

    let mut t = 0.0;
    let mut recording = opts.burn_in_time <= 0.0;
    let mut t0 = if recording { 0.0 } else { f64::NAN };
    let mut occ_time = vec![0.0; n];
    let mut last_change = vec![0.0; n];
    let mut events = 0u64;
    let mut net_in = 0i64;
    let mut batch_marks: Vec<(f64, i64)> = Vec::new();
    let events_per_batch = match opts.stop {
        StopRule::Events(e) => (e / opts.batches.max(1) as u64).max(1),
        StopRule::Time(_) => 0,
    };
    let time_per_batch = match opts.stop {
        StopRule::Time(tm) => tm / opts.batches.max(1) as f64,
        StopRule::Events(_) => 0.0,
    };

    loop {
        let r_left_in = if tau[0] { 0.0 } else { model.alpha };
        let r_left_out = if tau[0] { model.gamma } else { 0.0 };
        let r_right_out = if tau[n - 1] { model.beta } else { 0.0 };
        let r_right_in = if tau[n - 1] { 0.0 } else { model.delta };
        let r_bulk_r = right.len() as f64;
        let r_bulk_l = model.q * left.len() as f64;
        let total = r_left_in + r_left_out + r_right_out + r_right_in + r_bulk_r + r_bulk_l;
        let dt = -(1.0 - rng.random::<f64>()).ln() / total;

        if !recording && t + dt >= opts.burn_in_time {
            recording = true;
            t0 = opts.burn_in_time;
            last_change.iter_mut().for_each(|l| *l = t0);
        }
        if recording {
            if let StopRule::Time(tm) = opts.stop {
                if t + dt >= t0 + tm {
                    t = t0 + tm;
                    break;
                }
            }
        }
        t += dt;

        let mut changed: [usize; 2] = [usize::MAX; 2];
        let mut u = rng.random::<f64>() * total;
        let mut pick = |w: f64| {
            if u < w {
                true
            } else {
                u -= w;
                false
            }
        };
        if pick(r_left_in) {
            changed[0] = 0;
            if recording {
                net_in += 1;
            }
        } else if pick(r_left_out) {
            changed[0] = 0;
            if recording {
                net_in -= 1;
            }
        } else if pick(r_right_out) || pick(r_right_in) {
            changed[0] = n - 1;
        } else if pick(r_bulk_r) {
            let k = ((u / r_bulk_r.max(f64::MIN_POSITIVE)) * right.len() as f64) as usize;
            let i = right.items[k.min(right.len() - 1)];
            changed = [i, i + 1];
        } else {
            let k = ((u / r_bulk_l.max(f64::MIN_POSITIVE)) * left.len() as f64) as usize;
            let i = left.items[k.min(left.len().saturating_sub(1))];
            changed = [i, i + 1];
        }
        for &s in changed.iter().filter(|&&s| s != usize::MAX) {
            if recording && tau[s] {
                occ_time[s] += t - last_change[s];
            }
            last_change[s] = t;
            tau[s] = !tau[s];
            if s > 0 {
                refresh(&tau, s - 1, &mut right, &mut left);
            }
            refresh(&tau, s, &mut right, &mut left);
        }
        if recording {
            events += 1;
            let boundary = match opts.stop {
                StopRule::Events(_) => events.is_multiple_of(events_per_batch),
                StopRule::Time(_) => t >= t0 + time_per_batch * (batch_marks.len() + 1) as f64,
            };
            if boundary && batch_marks.len() < opts.batches {
                batch_marks.push((t, net_in));
            }
            if let StopRule::Events(e) = opts.stop {
                if events >= e {
                    break;
                }
            }
        }
    }
    let span = t - t0;
    for s in 0..n {
        if tau[s] {
            occ_time[s] += t - last_change[s];
        }
    }
    let scale = 1.0 / (1.0 - model.q);
    let mut batch_currents = Vec::with_capacity(batch_marks.len());
    let mut prev = (t0, 0i64);
    for &(tb, nb) in &batch_marks {
        if tb > prev.0 {
            batch_currents.push((nb - prev.1) as f64 / (tb - prev.0) * scale);
        }
        prev = (tb, nb);
    }
    Ok(SimSummary {
        final_config: Configuration { occupation: tau },
        events,
        time: span,
        mean_occupation: occ_time.iter().map(|o| o / span).collect(),
        current: net_in as f64 / span * scale,
        batch_currents,
    })
}

/// Result of a coupled run.
#[derive(Debug, Clone)]
pub struct CoupledSummary {
    /// Final `τ^1, …, τ^M`.
    pub final_configs: Vec<Configuration>,
    pub events: u64,
    pub time: f64,
    /// Events after which some `τ^i ≤ τ^{i+1}` failed (always zero for a
    /// correct coupling).
    pub ordering_violations: u64,
    /// Time-averaged `⟨τ^i_x⟩`.
    pub mean_occupation: Vec<Vec<f64>>,
}

/// Multi-species attractive coupling of `M` models sharing `N` and `q`.
///
/// A site carries a class `h ∈ {1, …, M + 1}` (`M + 1` is a hole) and
/// `τ^i_x = 1` iff `h_x ≤ i`.
#[derive(Debug, Clone)]
pub struct Coupling {
    pub models: Vec<AsepModel>,
}

impl Coupling {
    pub fn new(models: Vec<AsepModel>) -> Result<Self> {
        let first = models.first().ok_or_else(|| Error::Invalid("need at least one model".into()))?;
        if models.iter().any(|m| m.n_sites != first.n_sites || m.q != first.q) {
            return Err(Error::Invalid("coupled models must share N and q".into()));
        }
        for w in models.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            if !(a.alpha <= b.alpha && a.beta >= b.beta && a.gamma >= b.gamma && a.delta <= b.delta) {
                return Err(Error::Invalid(format!(
                    "rates must satisfy α↑, β↓, γ↓, δ↑ along the species, got {a:?} then {b:?}"
                )));
            }
        }
        Ok(Coupling { models })
    }

    pub fn m(&self) -> usize {
        self.models.len()
    }

    pub fn n_sites(&self) -> usize {
        self.models[0].n_sites
    }

    // Species-indexed rates with α⁰ = δ⁰ = 0 and β^{M+1} = γ^{M+1} = 0.
    fn alpha(&self, k: usize) -> f64 {
        if k == 0 {
            0.0
        } else {
            self.models[k - 1].alpha
        }
    }
    fn delta(&self, k: usize) -> f64 {
        if k == 0 {
            0.0
        } else {
            self.models[k - 1].delta
        }
    }
    fn beta(&self, k: usize) -> f64 {
        if k > self.m() {
            0.0
        } else {
            self.models[k - 1].beta
        }
    }
    fn gamma(&self, k: usize) -> f64 {
        if k > self.m() {
            0.0
        } else {
            self.models[k - 1].gamma
        }
    }

    /// Moves from a class vector, as `(site or bond, new classes, rate)`.
    pub fn moves(&self, h: &[usize], out: &mut Vec<(Vec<usize>, f64)>) {
        out.clear();
        let n = h.len();
        let m1 = self.m() + 1;
        let q = self.models[0].q;
        for (site, lower_in, raise_out) in [(0usize, true, true), (n - 1, false, false)] {
            let a = h[site];
            for b in 1..=m1 {
                if b == a {
                    continue;
                }
                let rate = if a < b {
                    if raise_out {
                        self.gamma(b - 1) - self.gamma(b)
                    } else {
                        self.beta(b - 1) - self.beta(b)
                    }
                } else if lower_in {
                    self.alpha(b) - self.alpha(b - 1)
                } else {
                    self.delta(b) - self.delta(b - 1)
                };
                if rate > 0.0 {
                    let mut g = h.to_vec();
                    g[site] = b;
                    out.push((g, rate));
                }
            }
        }
        for i in 0..n.saturating_sub(1) {
            let (a, b) = (h[i], h[i + 1]);
            let rate = if a < b {
                1.0
            } else if a > b {
                q
            } else {
                0.0
            };
            if rate > 0.0 {
                let mut g = h.to_vec();
                g.swap(i, i + 1);
                out.push((g, rate));
            }
        }
    }

    /// `τ^i` of a class vector.
    pub fn project(&self, h: &[usize], i: usize) -> Configuration {
        Configuration { occupation: h.iter().map(|&c| c <= i).collect() }
    }

    /// `τ^1 ≤ … ≤ τ^M` sitewise.
    pub fn is_ordered(&self, h: &[usize]) -> bool {
        let taus: Vec<Configuration> = (1..=self.m()).map(|i| self.project(h, i)).collect();
        taus.windows(2).all(|w| w[0].occupation.iter().zip(&w[1].occupation).all(|(&a, &b)| !a || b))
    }

    /// Class vector with `τ^i` given for each species; errors unless ordered.
    pub fn classes_from(&self, taus: &[Configuration]) -> Result<Vec<usize>> {
        let n = self.n_sites();
        if taus.len() != self.m() || taus.iter().any(|t| t.occupation.len() != n) {
            return Err(Error::Invalid("need M configurations of length N".into()));
        }
        let mut h = vec![self.m() + 1; n];
        for (x, hx) in h.iter_mut().enumerate() {
            for i in (0..self.m()).rev() {
                if taus[i].occupation[x] {
                    *hx = i + 1;
                }
            }
            for i in 1..self.m() {
                if taus[i - 1].occupation[x] && !taus[i].occupation[x] {
                    return Err(Error::Invalid("initial configurations are not ordered".into()));
                }
            }
        }
        Ok(h)
    }

    /// Gillespie run for `n_events` events.
    pub fn simulate(&self, init: &[Configuration], n_events: u64, seed: u64) -> Result<CoupledSummary> {
        let mut h = self.classes_from(init)?;
        let n = self.n_sites();
        let m = self.m();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut buf = Vec::new();
        let mut t = 0.0;
        let mut violations = 0;
        let mut occ = vec![vec![0.0; n]; m];
        for _ in 0..n_events {
            self.moves(&h, &mut buf);
            let total: f64 = buf.iter().map(|b| b.1).sum();
            let dt = -(1.0 - rng.random::<f64>()).ln() / total;
            for (x, &hx) in h.iter().enumerate() {
                for row in &mut occ[(hx.max(1) - 1)..m] {
                    row[x] += dt;
                }
            }
            t += dt;
            let mut u = rng.random::<f64>() * total;
            let mut chosen = buf.len() - 1;
            for (k, b) in buf.iter().enumerate() {
                if u < b.1 {
                    chosen = k;
                    break;
                }
                u -= b.1;
            }
            h = std::mem::take(&mut buf[chosen].0);
            if !self.is_ordered(&h) {
                violations += 1;
            }
        }
        let taus: Vec<Configuration> = (1..=m).map(|i| self.project(&h, i)).collect();
        Ok(CoupledSummary {
            final_configs: taus,
            events: n_events,
            time: t,
            ordering_violations: violations,
            mean_occupation: occ.into_iter().map(|row| row.into_iter().map(|o| o / t).collect()).collect(),
        })
    }

    /// Largest entrywise gap between the generator of `τ^i` obtained by
    /// projecting the multi-species generator and [`build_generator`] of
    /// species `i` (1-based). Also checks the projection is well defined.
    pub fn projection_defect(&self, i: usize) -> Result<f64> {
        let n = self.n_sites();
        if n > 8 {
            return Err(Error::SizeGuard { n, max: 8 });
        }
        let m1 = self.m() + 1;
        let own = build_generator(&self.models[i - 1])?.to_dense();
        let n_states = 1usize << n;
        let total_states = m1.pow(n as u32);
        let mut defect: f64 = 0.0;
        let mut buf = Vec::new();
        for code in 0..total_states {
            let mut h = Vec::with_capacity(n);
            let mut c = code;
            for _ in 0..n {
                h.push(c % m1 + 1);
                c /= m1;
            }
            let from = self.project(&h, i).index();
            let mut row = vec![0.0; n_states];
            self.moves(&h, &mut buf);
            for (g, r) in &buf {
                let to = self.project(g, i).index();
                if to != from {
                    row[to] += r;
                    row[from] -= r;
                }
            }
            for (to, val) in row.iter().enumerate() {
                defect = defect.max((val - own[(from, to)]).abs());
            }
        }
        Ok(defect)
    }
}

/// Phase of the open ASEP current.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    MaximalCurrent,
    LowDensity,
    HighDensity,
}

/// Classification of `(ρ_ℓ, ρ_r)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhasePoint {
    pub phase: Phase,
    pub current: f64,
    /// `ρ_ℓ > ρ_r`.
    pub fan: bool,
}

/// Phase and limiting current at effective densities `(ρ_ℓ, ρ_r)`.
pub fn phase_point(rho_l: f64, rho_r: f64) -> Result<PhasePoint> {
    if !(rho_l > 0.0 && rho_l < 1.0 && rho_r > 0.0 && rho_r < 1.0) {
        return Err(Error::Domain(format!("densities must lie in (0, 1), got ({rho_l}, {rho_r})")));
    }
    let (phase, current) = if rho_l > 0.5 && rho_r < 0.5 {
        (Phase::MaximalCurrent, 0.25)
    } else if rho_l < 0.5 && rho_l + rho_r < 1.0 {
        (Phase::LowDensity, rho_l * (1.0 - rho_l))
    } else if rho_r > 0.5 && rho_l + rho_r > 1.0 {
        (Phase::HighDensity, rho_r * (1.0 - rho_r))
    } else {
        return Err(Error::Domain(format!("({rho_l}, {rho_r}) lies on a phase boundary")));
    };
    Ok(PhasePoint { phase, current, fan: rho_l > rho_r })
}

/// Limiting current, continuous across phase boundaries:
/// `1/4`, `ρ_ℓ(1 − ρ_ℓ)` or `ρ_r(1 − ρ_r)`.
pub fn limiting_current(rho_l: f64, rho_r: f64) -> f64 {
    if rho_l >= 0.5 && rho_r <= 0.5 {
        0.25
    } else if rho_l <= 0.5 && rho_l + rho_r <= 1.0 {
        rho_l * (1.0 - rho_l)
    } else {
        rho_r * (1.0 - rho_r)
    }
}

#[cfg(test)]
mod asep_works {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn kappa_examples() {
        assert_relative_eq!(kappa_pm(0.25, 0.8, 0.05, KappaSign::Plus).unwrap(), 0.25, epsilon = 1e-15);
        let p =
            kappa_pm(0.25, 0.8, 0.05, KappaSign::Plus).unwrap() * kappa_pm(0.25, 0.8, 0.05, KappaSign::Minus).unwrap();
        assert_relative_eq!(p, -0.0625, epsilon = 1e-15);
        assert_relative_eq!(kappa_pm(0.3, 0.5, 0.0, KappaSign::Plus).unwrap(), 0.4, epsilon = 1e-15);
        assert!(kappa_pm(0.3, 0.0, 0.1, KappaSign::Plus).is_err());
        assert!(kappa_pm(0.0, 1.0, -1.0, KappaSign::Plus).is_err());
    }

    #[test]
    fn uv_chart_round_trip() {
        let m = model_from_uv(16, BoundaryParams::new(1.0, 0.5)).unwrap();
        assert_relative_eq!(m.q, (-0.5f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(m.alpha, 0.622_459_331_201_854_6, epsilon = 1e-12);
        assert_relative_eq!(m.a(), m.q.powf(0.5), epsilon = 1e-12);
        assert_relative_eq!(m.b(), -m.q, epsilon = 1e-12);
        assert_relative_eq!(m.c(), m.q, epsilon = 1e-12);
        assert_relative_eq!(m.d(), -m.q, epsilon = 1e-12);
        let z = model_from_uv(9, BoundaryParams::new(0.0, 0.0)).unwrap();
        assert_eq!(z.alpha, 0.5);
        assert_relative_eq!(z.gamma, z.q / 2.0, epsilon = 1e-15);
    }

    #[test]
    fn generator_rows_sum_to_zero() {
        let m = model_from_uv(5, BoundaryParams::new(0.7, -0.2)).unwrap();
        let g = build_generator(&m).unwrap();
        assert!(g.row_sums().iter().all(|s| s.abs() < 1e-14));
        let big = AsepModel { n_sites: 15, ..m };
        assert_eq!(build_generator(&big).unwrap_err(), Error::SizeGuard { n: 15, max: 14 });
    }

    #[test]
    fn tasep_bulk_is_one_way() {
        let m = AsepModel::new(2, 0.0, 0.3, 0.4, 0.0, 0.0).unwrap();
        let d = build_generator(&m).unwrap().to_dense();
        // 10 (site 1 occupied) is index 1, 01 is index 2.
        assert_eq!(d[(1, 2)], 1.0);
        assert_eq!(d[(2, 1)], 0.0);
    }

    #[test]
    fn single_site_balance() {
        let m = AsepModel::new(1, 0.3, 0.4, 0.7, 0.1, 0.2).unwrap();
        let d = build_generator(&m).unwrap().to_dense();
        assert_relative_eq!(d[(0, 1)], 0.6, epsilon = 1e-15);
        assert_relative_eq!(d[(1, 0)], 0.8, epsilon = 1e-15);
        let pi = stationary_exact(&m).unwrap();
        let p1 = 0.6 / 1.4;
        assert_relative_eq!(pi.probs[1], p1, epsilon = 1e-14);
        assert_relative_eq!(current_exact(&pi), (0.4 - 0.5 * p1) / 0.7, epsilon = 1e-14);
    }

    #[test]
    fn brownian_line_is_product_bernoulli() {
        for n in [4, 6] {
            let m = model_from_uv(n, BoundaryParams::new(1.0, -1.0)).unwrap();
            let g = build_generator(&m).unwrap();
            let rho = rho_of(m.q, 1.0);
            assert!(g.residual(&product_bernoulli(n, rho)) < 1e-14);
            let pi = stationary_exact(&m).unwrap();
            assert_relative_eq!(current_exact(&pi), rho * (1.0 - rho), epsilon = 1e-13);
        }
    }

    #[test]
    fn gauss_seidel_matches_dense() {
        let m = model_from_uv(8, BoundaryParams::new(0.8, 0.3)).unwrap();
        let g = build_generator(&m).unwrap();
        let a = solve_dense(&g).unwrap();
        let b = solve_gauss_seidel(&g).unwrap();
        let gap = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(gap < 1e-11, "{gap}");
    }

    #[test]
    fn duality_on_solved_law() {
        let bp = BoundaryParams::new(0.9, 0.2);
        let p = stationary_exact(&model_from_uv(5, bp).unwrap()).unwrap();
        let d = stationary_exact(&model_from_uv(5, bp.dual()).unwrap()).unwrap();
        let back = dual_probs(&d);
        for (x, y) in p.probs.iter().zip(&back) {
            assert_relative_eq!(x, y, epsilon = 1e-13);
        }
    }

    #[test]
    fn configuration_helpers() {
        let c = Configuration::from_index(4, 0b0101);
        assert_eq!(c.occupation, vec![true, false, true, false]);
        assert_eq!(c.index(), 5);
        assert_eq!(c.height().values, vec![0, 1, 0, 1, 0]);
        assert_eq!(c.hole_reversed().occupation, vec![true, false, true, false]);
        assert_eq!(hole_reverse_index(4, 0b0011), 0b0011);
    }

    #[test]
    fn phase_examples() {
        let p = phase_point(0.7, 0.3).unwrap();
        assert_eq!((p.phase, p.current, p.fan), (Phase::MaximalCurrent, 0.25, true));
        let p = phase_point(0.2, 0.3).unwrap();
        assert_eq!(p.phase, Phase::LowDensity);
        assert_relative_eq!(p.current, 0.16, epsilon = 1e-15);
        let p = phase_point(0.6, 0.7).unwrap();
        assert_eq!(p.phase, Phase::HighDensity);
        assert_relative_eq!(p.current, 0.21, epsilon = 1e-15);
        assert!(phase_point(0.5, 0.3).is_err());
        assert!(phase_point(0.3, 0.7).is_err());
    }

    #[test]
    fn first_event_is_an_insertion() {
        let m = AsepModel::new(3, 0.5, 0.3, 0.4, 0.1, 0.2).unwrap();
        let mut left = 0;
        for seed in 0..400 {
            let s = simulate(&m, SimOptions::events(1), seed, &Configuration::empty(3)).unwrap();
            let o = &s.final_config.occupation;
            assert_eq!(o.iter().filter(|&&b| b).count(), 1);
            assert!(o[0] || o[2]);
            left += o[0] as usize;
        }
        // P(left) = α/(α+δ) = 0.6.
        assert!((left as f64 / 400.0 - 0.6).abs() < 0.08, "{left}");
    }

    #[test]
    fn coupling_projection_is_exact() {
        let q = q_of(2);
        let ms =
            vec![AsepModel::new(2, q, 0.2, 0.9, 0.3, 0.05).unwrap(), AsepModel::new(2, q, 0.6, 0.5, 0.1, 0.4).unwrap()];
        let c = Coupling::new(ms).unwrap();
        assert!(c.projection_defect(1).unwrap() < 1e-15);
        assert!(c.projection_defect(2).unwrap() < 1e-15);
    }

    #[test]
    fn coupling_rejects_unordered_rates() {
        let q = 0.5;
        let ms =
            vec![AsepModel::new(3, q, 0.6, 0.5, 0.1, 0.4).unwrap(), AsepModel::new(3, q, 0.2, 0.9, 0.3, 0.05).unwrap()];
        assert!(Coupling::new(ms).is_err());
    }
}
