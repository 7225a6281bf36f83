//! Lyapunov spectra, finite-time Oseledets splittings, induced first-return cocycles
//! and the dichotomy they produce.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dynamics::{BaseDriver, Cocycle, State};
use crate::error::{Error, Result};
use crate::green::{DichotomyData, DichotomyDefects, GreenTable};
use crate::linalg::{op_norm, sorted_svd};
use crate::weighted::temperedness_estimate;

#[derive(Clone, Debug, PartialEq)]
pub struct LyapunovReport {
    /// Exponents in descending order, nats per step.
    pub exponents: Vec<f64>,
    pub n_steps: u64,
    /// `(step, sorted estimates)` at the checkpoints.
    pub history: Vec<(u64, Vec<f64>)>,
}

impl LyapunovReport {
    /// Rows `checkpoint, exponent_1, ..., exponent_d`.
    pub fn to_csv(&self) -> String {
        let d = self.exponents.len();
        let mut out = String::from("checkpoint");
        for i in 1..=d {
            out.push_str(&format!(",exponent_{i}"));
        }
        out.push('\n');
        for (n, ex) in &self.history {
            out.push_str(&n.to_string());
            for e in ex {
                out.push_str(&format!(",{e:?}"));
            }
            out.push('\n');
        }
        out
    }
}

fn checkpoints(n_steps: u64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut base = 100u64;
    while base < n_steps {
        for m in [1, 2, 5] {
            if base * m < n_steps {
                out.push(base * m);
            }
        }
        base *= 10;
    }
    out.push(n_steps);
    out
}

fn sorted_desc(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Discrete QR method: `A_k Q_k = Q_{k+1} R_k`, `lambda_i = (1/n) sum_k ln |R_k[i,i]|`.
pub fn lyapunov_qr(cocycle: &Cocycle, omega: &State, n_steps: u64) -> Result<LyapunovReport> {
    if n_steps < 100 {
        return Err(Error::InvalidInput(format!("need at least 100 steps, got {n_steps}")));
    }
    let d = cocycle.dim();
    let marks = checkpoints(n_steps);
    let mut next_mark = 0;
    let mut q = DMatrix::<f64>::identity(d, d);
    let mut sums = vec![0.0; d];
    let mut history = Vec::with_capacity(marks.len());
    let mut s = *omega;
    for step in 1..=n_steps {
        let qr = (cocycle.matrix(&s) * &q).qr();
        let r = qr.r();
        for (i, acc) in sums.iter_mut().enumerate() {
            let rii = r[(i, i)].abs();
            if !(rii > 0.0) || !rii.is_finite() {
                return Err(Error::Degenerate { step, column: i });
            }
            *acc += rii.ln();
        }
        q = qr.q();
        s = cocycle.driver().forward(&s);
        if step == marks[next_mark] {
            let est: Vec<f64> = sums.iter().map(|x| x / step as f64).collect();
            history.push((step, sorted_desc(&est)));
            next_mark += 1;
        }
    }
    let exponents = history.last().expect("final checkpoint").1.clone();
    Ok(LyapunovReport {
        exponents,
        n_steps,
        history,
    })
}

#[derive(Clone, Debug)]
pub struct SplittingEstimate {
    /// Orthonormal basis of the stable subspace (columns).
    pub stable: DMatrix<f64>,
    /// Orthonormal basis of the unstable subspace (columns).
    pub unstable: DMatrix<f64>,
    /// `min |lambda_i|`.
    pub gap: f64,
    pub exponents: Vec<f64>,
}

impl SplittingEstimate {
    /// Projection onto the stable subspace along the unstable one.
    pub fn projector(&self) -> Result<DMatrix<f64>> {
        let d = self.stable.nrows();
        let ks = self.stable.ncols();
        if ks == 0 {
            return Ok(DMatrix::zeros(d, d));
        }
        if ks == d {
            return Ok(DMatrix::identity(d, d));
        }
        let mut basis = DMatrix::zeros(d, d);
        basis.columns_mut(0, ks).copy_from(&self.stable);
        basis.columns_mut(ks, d - ks).copy_from(&self.unstable);
        let inv = basis.clone().try_inverse().ok_or_else(|| Error::NoGap {
            min_abs: self.gap,
            tolerance: 0.0,
        })?;
        let mut sel = DMatrix::zeros(d, d);
        for i in 0..ks {
            sel[(i, i)] = 1.0;
        }
        Ok(basis * sel * inv)
    }
}

/// Number of steps used for the singular-vector split: long enough to resolve the gap,
/// short enough that the scaled product keeps every direction above underflow.
fn split_length(exponents: &[f64], n_steps: u64) -> u64 {
    let spread = exponents[0] - exponents[exponents.len() - 1];
    let cap = if spread > 0.0 { (600.0 / spread).floor() as u64 } else { n_steps };
    cap.clamp(1, n_steps.max(1))
}

/// Splitting at `omega` given how many exponents are negative.
pub fn split_with(cocycle: &Cocycle, omega: &State, n_stable: usize, n_split: u64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let d = cocycle.dim();
    let nu = d - n_stable;
    let n = n_split as i64;
    let stable = if n_stable == 0 {
        DMatrix::zeros(d, 0)
    } else {
        let (m, _) = cocycle.evolve_log_scaled(omega, n)?;
        let (_, _, v) = sorted_svd(&m);
        v.columns(nu, n_stable).into_owned()
    };
    let unstable = if nu == 0 {
        DMatrix::zeros(d, 0)
    } else {
        let past = cocycle.driver().step(omega, -n);
        let (m, _) = cocycle.evolve_log_scaled(&past, n)?;
        let (u, _, _) = sorted_svd(&m);
        u.columns(0, nu).into_owned()
    };
    Ok((stable, unstable))
}

/// Finite-time Oseledets splitting at zero exponent.
pub fn oseledets_split(cocycle: &Cocycle, omega: &State, n_steps: u64, gap_tolerance: f64) -> Result<SplittingEstimate> {
    let lyap = lyapunov_qr(cocycle, omega, n_steps)?;
    split_from_exponents(cocycle, omega, &lyap.exponents, n_steps, gap_tolerance)
}

fn split_from_exponents(
    cocycle: &Cocycle,
    omega: &State,
    exponents: &[f64],
    n_steps: u64,
    gap_tolerance: f64,
) -> Result<SplittingEstimate> {
    let gap = exponents.iter().map(|x| x.abs()).fold(f64::INFINITY, f64::min);
    if !(gap >= gap_tolerance) {
        return Err(Error::NoGap {
            min_abs: gap,
            tolerance: gap_tolerance,
        });
    }
    let n_stable = exponents.iter().filter(|x| **x < 0.0).count();
    let (stable, unstable) = split_with(cocycle, omega, n_stable, split_length(exponents, n_steps))?;
    Ok(SplittingEstimate {
        stable,
        unstable,
        gap,
        exponents: exponents.to_vec(),
    })
}

/// Set `F` of the base space used for first returns.
#[derive(Clone, Debug, PartialEq)]
pub enum ReturnSet {
    Whole,
    /// `[lo, hi)` for rotation phases.
    Interval { lo: f64, hi: f64 },
    /// States whose zeroth symbol equals `symbol`.
    Symbol(u32),
}

impl ReturnSet {
    pub fn contains(&self, driver: &BaseDriver, state: &State) -> bool {
        match self {
            ReturnSet::Whole => true,
            ReturnSet::Interval { lo, hi } => state.phase().is_some_and(|x| x >= *lo && x < *hi),
            ReturnSet::Symbol(s) => driver.symbol(state) == Some(*s),
        }
    }

    /// Monte Carlo estimate of the invariant measure of the set.
    pub fn estimate_measure(&self, driver: &BaseDriver, samples: usize, seed: u64) -> Result<f64> {
        if *self == ReturnSet::Whole {
            return Ok(1.0);
        }
        if samples == 0 {
            return Err(Error::InvalidInput("measure estimate needs samples".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut hits = 0usize;
        for _ in 0..samples {
            if self.contains(driver, &driver.sample(&mut rng)?) {
                hits += 1;
            }
        }
        Ok(hits as f64 / samples as f64)
    }
}

/// First returns of one orbit to `F` and the induced matrices.
#[derive(Clone, Debug)]
pub struct ReturnCocycle {
    pub set: ReturnSet,
    /// `theta_bar^j omega` for `j = 0..=n`.
    pub visits: Vec<State>,
    /// `tau_1, ..., tau_n` (cumulative return times, strictly increasing).
    pub return_times: Vec<u64>,
    /// One-step induced matrices `Phi(tau_1(theta_bar^j omega), theta_bar^j omega)`.
    pub induced: Vec<DMatrix<f64>>,
    pub p_hat: f64,
}

impl ReturnCocycle {
    pub fn n_returns(&self) -> usize {
        self.return_times.len()
    }

    /// `Phi_bar(n, theta_bar^m omega)`.
    pub fn induced_product(&self, m: usize, n: usize) -> DMatrix<f64> {
        let d = self.induced.first().map_or(0, |a| a.nrows());
        let mut p = DMatrix::identity(d, d);
        for a in &self.induced[m..m + n] {
            p = a * p;
        }
        p
    }

    /// First-return gaps `tau_1(theta_bar^j omega)`.
    pub fn gaps(&self) -> Vec<u64> {
        let mut prev = 0;
        self.return_times
            .iter()
            .map(|&t| {
                let g = t - prev;
                prev = t;
                g
            })
            .collect()
    }
}

/// Default number of samples behind `P_hat(F)`.
pub const MEASURE_SAMPLES: usize = 1_000_000;

/// Follows the orbit of `omega` (which must lie in `F`) until `n_returns` returns.
pub fn build_return_cocycle(
    cocycle: &Cocycle,
    set: &ReturnSet,
    omega: &State,
    n_returns: usize,
    step_cap: u64,
    p_hat: f64,
) -> Result<ReturnCocycle> {
    let driver = cocycle.driver();
    if !set.contains(driver, omega) {
        return Err(Error::InvalidInput(format!("base point {omega} is not in the return set")));
    }
    let d = cocycle.dim();
    let mut visits = vec![*omega];
    let mut return_times = Vec::with_capacity(n_returns);
    let mut induced = Vec::with_capacity(n_returns);
    let mut s = *omega;
    let mut acc = DMatrix::identity(d, d);
    let mut t = 0u64;
    while return_times.len() < n_returns {
        if t >= step_cap {
            return Err(Error::NoReturn {
                found: return_times.len(),
                wanted: n_returns,
                cap: step_cap,
            });
        }
        acc = cocycle.matrix(&s) * acc;
        s = driver.forward(&s);
        t += 1;
        if set.contains(driver, &s) {
            return_times.push(t);
            induced.push(std::mem::replace(&mut acc, DMatrix::identity(d, d)));
            visits.push(s);
        }
    }
    Ok(ReturnCocycle {
        set: set.clone(),
        visits,
        return_times,
        induced,
        p_hat,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct KacReport {
    /// `tau_n / n`.
    pub mean_return: f64,
    /// `mean_return * P_hat(F)`.
    pub kac_ratio: f64,
    /// `(n, tau_n / n * P_hat(F))` at decades of `n`.
    pub history: Vec<(usize, f64)>,
}

impl KacReport {
    pub fn pass(&self, tolerance: f64) -> bool {
        (self.kac_ratio - 1.0).abs() <= tolerance
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("returns,kac_ratio\n");
        for (n, r) in &self.history {
            out.push_str(&format!("{n},{r:?}\n"));
        }
        out
    }
}

pub fn kac_check(rc: &ReturnCocycle) -> KacReport {
    let n = rc.n_returns();
    let ratio_at = |m: usize| rc.return_times[m - 1] as f64 / m as f64 * rc.p_hat;
    let mut history = Vec::new();
    let mut m = 10usize;
    while m < n {
        history.push((m, ratio_at(m)));
        m *= 10;
    }
    if n > 0 {
        history.push((n, ratio_at(n)));
    }
    let mean_return = if n > 0 { rc.return_times[n - 1] as f64 / n as f64 } else { f64::NAN };
    KacReport {
        mean_return,
        kac_ratio: mean_return * rc.p_hat,
        history,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReturnConstants {
    pub l: f64,
    pub h1: f64,
    pub h2: f64,
    /// Integer valued; stored as a float because it overflows integers for large `L`.
    pub n0: f64,
    pub nu: f64,
    pub q: f64,
    pub n0_prime: f64,
    pub nu_prime: f64,
    pub q_prime: f64,
}

/// Smallest `n >= 1` with `h^2 / (n + 1) <= 1/e`.
fn first_n(h: f64) -> f64 {
    let e = std::f64::consts::E;
    let target = h * h * e;
    if target > 2f64.powi(52) {
        // unit steps are below the float spacing here
        return target.ceil() - 1.0;
    }
    let mut n = (target.ceil() - 1.0).max(1.0);
    while n > 1.0 && h * h / n <= 1.0 / e {
        n -= 1.0;
    }
    while h * h / (n + 1.0) > 1.0 / e {
        n += 1.0;
    }
    n
}

/// Constants of the induced-cocycle decay estimates for a bound `L >= 1` on `F`.
pub fn return_constants(l: f64) -> Result<ReturnConstants> {
    if !(l >= 1.0 && l.is_finite()) {
        return Err(Error::InvalidInput(format!("L must be a finite number >= 1, got {l}")));
    }
    let e = std::f64::consts::E;
    let h1 = 1.0 + l * l + l.powi(4);
    let h2 = l.powi(3) * (1.0 + l * l) + l * l;
    let n0 = first_n(h1);
    let n0_prime = first_n(h2);
    Ok(ReturnConstants {
        l,
        h1,
        h2,
        n0,
        nu: 1.0 / n0,
        q: h1 * e,
        n0_prime,
        nu_prime: 1.0 / n0_prime,
        q_prime: h2 * e,
    })
}

/// `L = max(1, zeta, eta, zeta_theta, sup |A|)` with the supremum over visited points of `F`.
pub fn return_bound(cocycle: &Cocycle, rc: &ReturnCocycle, zeta: f64, eta: f64, zeta_theta: f64) -> f64 {
    rc.visits
        .iter()
        .map(|s| op_norm(&cocycle.matrix(s)))
        .fold(1.0f64.max(zeta).max(eta).max(zeta_theta), f64::max)
}

#[derive(Clone, Debug, PartialEq)]
pub struct InducedDecayReport {
    /// `max |Phi_bar(n) v| e^{nu n} / (Q |v|)` over the vectors and `n <= n_returns`.
    pub max_ratio: f64,
    pub per_vector: Vec<f64>,
    pub pass: bool,
}

/// Checks `|Phi_bar(n, omega) v| <= Q e^{-nu n} |v|` for each column `v` of `vectors`.
pub fn induced_decay_check(rc: &ReturnCocycle, vectors: &DMatrix<f64>, consts: &ReturnConstants, slack: f64) -> InducedDecayReport {
    let ln_q = consts.q.ln();
    let per_vector: Vec<f64> = vectors
        .column_iter()
        .map(|col| {
            let v: DVector<f64> = col.into_owned();
            let mut u = v.normalize();
            let mut log_norm = 0.0;
            let mut worst = -ln_q;
            for (n, a) in rc.induced.iter().enumerate() {
                let w = a * &u;
                let r = w.norm();
                if !(r > 0.0) {
                    break;
                }
                log_norm += r.ln();
                u = w / r;
                worst = worst.max(log_norm + consts.nu * (n + 1) as f64 - ln_q);
            }
            worst.exp()
        })
        .collect();
    let max_ratio = per_vector.iter().copied().fold(0.0, f64::max);
    InducedDecayReport {
        max_ratio,
        per_vector,
        pass: max_ratio <= 1.0 + slack,
    }
}

#[derive(Clone, Debug)]
pub struct MetConfig {
    pub n_steps: u64,
    pub gap_tolerance: f64,
    /// Half width `M` of the data window.
    pub half_width: i64,
    /// Fraction of the gap subtracted from it to obtain `alpha`.
    pub margin: f64,
}

impl MetConfig {
    pub fn new(n_steps: u64, half_width: i64) -> Self {
        MetConfig {
            n_steps,
            gap_tolerance: 1e-3,
            half_width,
            margin: 0.1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct MetDichotomy {
    pub data: DichotomyData,
    pub lyapunov: LyapunovReport,
    pub defects: DichotomyDefects,
    pub temperedness: Option<f64>,
}

/// Dichotomy from the Lyapunov spectrum: splittings at every `theta^n omega`, `|n| <= M`,
/// `alpha = (1 - margin) min |lambda|` and the smallest bounds `K` consistent with the window.
pub fn met_dichotomy(cocycle: &Cocycle, omega: &State, cfg: &MetConfig) -> Result<MetDichotomy> {
    if cfg.half_width < 1 {
        return Err(Error::InvalidInput("data window needs M >= 1".into()));
    }
    if !(cfg.margin >= 0.0 && cfg.margin < 1.0) {
        return Err(Error::InvalidInput(format!("margin {} outside [0, 1)", cfg.margin)));
    }
    let lyapunov = lyapunov_qr(cocycle, omega, cfg.n_steps)?;
    let ex = &lyapunov.exponents;
    let gap = ex.iter().map(|x| x.abs()).fold(f64::INFINITY, f64::min);
    if !(gap >= cfg.gap_tolerance) {
        return Err(Error::NoGap {
            min_abs: gap,
            tolerance: cfg.gap_tolerance,
        });
    }
    let n_stable = ex.iter().filter(|x| **x < 0.0).count();
    let n_split = split_length(ex, cfg.n_steps);
    let m = cfg.half_width;
    let states = cocycle.driver().orbit(omega, -m, m);
    let proj: Vec<DMatrix<f64>> = states
        .par_iter()
        .map(|s| {
            let (stable, unstable) = split_with(cocycle, s, n_stable, n_split)?;
            SplittingEstimate {
                stable,
                unstable,
                gap,
                exponents: ex.clone(),
            }
            .projector()
        })
        .collect::<Result<_>>()?;
    let alpha = (1.0 - cfg.margin) * gap;
    let len = (2 * m + 1) as usize;
    let unit = DichotomyData::new(cocycle.clone(), *omega, m, proj, alpha, vec![1.0; len])?;
    let table = GreenTable::build(&unit)?;
    let k: Vec<f64> = (-m..=m)
        .map(|kk| {
            (-m..=m)
                .map(|n| op_norm(table.get(n, kk)) * (alpha * (n - kk).abs() as f64).exp())
                .fold(0.0, f64::max)
        })
        .collect();
    let data = unit.with_bounds(alpha, k)?;
    let defects = data.defects()?;
    let temperedness = if m >= 2 { temperedness_estimate(data.k_samples(), 1).ok() } else { None };
    Ok(MetDichotomy {
        data,
        lyapunov,
        defects,
        temperedness,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{staircase_piece, Generator};
    use crate::linalg::rotation2;
    use approx::assert_relative_eq;

    fn diag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_row_slice(v))
    }

    fn golden(g: Generator) -> Cocycle {
        Cocycle::new(BaseDriver::golden_rotation(), g).unwrap()
    }

    #[test]
    fn diagonal_exponents_exact() {
        let r = lyapunov_qr(&golden(Generator::constant_diag(&[0.5, 2.0])), &State::Phase(0.0), 100).unwrap();
        assert!((r.exponents[0] - 2f64.ln()).abs() < 1e-12);
        assert!((r.exponents[1] + 2f64.ln()).abs() < 1e-12);
        assert_eq!(r.history.last().unwrap().0, 100);
    }

    #[test]
    fn jordan_block_exponents() {
        let j = DMatrix::from_row_slice(2, 2, &[0.5, 1.0, 0.0, 0.5]);
        let n = 20_000;
        let r = lyapunov_qr(&golden(Generator::Constant(j)), &State::Phase(0.0), n).unwrap();
        let tol = 3.0 * (n as f64).ln() / n as f64;
        for e in &r.exponents {
            assert!((e + 2f64.ln()).abs() < tol, "{e}");
        }
    }

    #[test]
    fn staircase_exponents_match_birkhoff_averages() {
        let c = golden(Generator::staircase());
        let w = State::Phase(0.1);
        let n = 100_000u64;
        let r = lyapunov_qr(&c, &w, n).unwrap();
        let mut avg = 0.0;
        let mut s = w;
        for _ in 0..n {
            avg += f64::from(2 * staircase_piece(s.phase().unwrap(), 20) + 1);
            s = c.driver().forward(&s);
        }
        avg /= n as f64;
        assert!((r.exponents[0] - avg).abs() < 1e-6);
        assert!((r.exponents[1] + 2f64.ln()).abs() < 1e-10);
        assert!((r.exponents[2] + avg).abs() < 1e-6);
    }

    #[test]
    fn degenerate_generator() {
        let r = lyapunov_qr(&golden(Generator::constant_diag(&[1.0, 0.0])), &State::Phase(0.0), 100);
        assert!(matches!(r, Err(Error::Degenerate { step: 1, .. })));
    }

    #[test]
    fn splits() {
        let s = oseledets_split(&golden(Generator::constant_diag(&[0.5, 2.0])), &State::Phase(0.3), 200, 1e-3).unwrap();
        assert!((s.stable[(0, 0)].abs() - 1.0).abs() < 1e-12 && (s.unstable[(1, 0)].abs() - 1.0).abs() < 1e-12);
        assert!((s.projector().unwrap() - diag(&[1.0, 0.0])).norm() < 1e-12);
        let s = oseledets_split(&golden(Generator::staircase()), &State::Phase(0.3), 2000, 1e-3).unwrap();
        assert_eq!((s.stable.ncols(), s.unstable.ncols()), (2, 1));
        assert!((s.projector().unwrap() - diag(&[1.0, 1.0, 0.0])).norm() < 1e-12);
        let rot = golden(Generator::Constant(rotation2(1.0)));
        assert!(matches!(oseledets_split(&rot, &State::Phase(0.3), 1000, 1e-3), Err(Error::NoGap { .. })));
    }

    #[test]
    fn oblique_split() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 0.5]);
        let a = &s * diag(&[0.5, 3.0]) * s.clone().try_inverse().unwrap();
        let split = oseledets_split(&golden(Generator::Constant(a)), &State::Phase(0.3), 500, 1e-3).unwrap();
        let want = &s * diag(&[1.0, 0.0]) * s.clone().try_inverse().unwrap();
        assert!((split.projector().unwrap() - want).norm() < 1e-10);
    }

    #[test]
    fn golden_return_times_match_scan() {
        let c = golden(Generator::constant_diag(&[1.0]));
        let set = ReturnSet::Interval { lo: 0.0, hi: 0.5 };
        let rc = build_return_cocycle(&c, &set, &State::Phase(0.1), 2000, 100_000, 0.5).unwrap();
        let mut s = State::Phase(0.1);
        let mut t = 0u64;
        for &tau in &rc.return_times {
            loop {
                s = c.driver().forward(&s);
                t += 1;
                if s.phase().unwrap() < 0.5 {
                    break;
                }
            }
            assert_eq!(tau, t);
        }
        let gaps = rc.gaps();
        assert!(gaps.iter().all(|g| (1..=3).contains(g)));
        assert!(gaps.contains(&3));
    }

    #[test]
    fn whole_space_returns_every_step() {
        let c = golden(Generator::constant_diag(&[0.5, 2.0]));
        let rc = build_return_cocycle(&c, &ReturnSet::Whole, &State::Phase(0.2), 50, 100, 1.0).unwrap();
        assert_eq!(rc.return_times, (1..=50).collect::<Vec<u64>>());
        assert_relative_eq!(rc.induced_product(0, 7), c.evolve(&State::Phase(0.2), 7).unwrap());
        let k = kac_check(&rc);
        assert_eq!(k.kac_ratio, 1.0);
    }

    #[test]
    fn no_return_within_cap() {
        let c = golden(Generator::constant_diag(&[1.0]));
        let set = ReturnSet::Interval { lo: 0.0, hi: 1e-9 };
        let r = build_return_cocycle(&c, &set, &State::Phase(0.0), 10, 1000, 1e-9);
        assert!(matches!(r, Err(Error::NoReturn { .. })));
    }

    #[test]
    fn bernoulli_mean_return() {
        let drv = BaseDriver::Bernoulli { seed: 11, symbol_count: 2 };
        let c = Cocycle::new(drv.clone(), Generator::constant_diag(&[1.0])).unwrap();
        let set = ReturnSet::Symbol(0);
        let start = (0..).map(State::Index).find(|s| set.contains(&drv, s)).unwrap();
        let p = set.estimate_measure(&drv, 200_000, 5).unwrap();
        let rc = build_return_cocycle(&c, &set, &start, 20_000, 1_000_000, p).unwrap();
        let k = kac_check(&rc);
        assert!((k.mean_return - 2.0).abs() < 0.05, "{}", k.mean_return);
        assert!(k.pass(0.05));
    }

    #[test]
    fn return_constants_at_one() {
        let c = return_constants(1.0).unwrap();
        assert_eq!((c.h1, c.h2, c.n0, c.n0_prime), (3.0, 3.0, 24.0, 24.0));
        assert_eq!(c.nu, 1.0 / 24.0);
        assert_relative_eq!(c.q, 8.154845485377136, max_relative = 1e-15);
        assert_eq!(c.q_prime, c.q);
        assert!(9.0 / 25.0 <= (-1f64).exp() && 9.0 / 24.0 > (-1f64).exp());
        assert!(return_constants(0.5).is_err());
        let big = return_constants(1e8).unwrap();
        assert!(big.n0.is_finite() && big.n0 >= big.h1 * big.h1 * std::f64::consts::E - 1.0);
        let a = return_constants(1.5).unwrap();
        let b = return_constants(2.0).unwrap();
        assert!(a.h1 < b.h1 && a.n0 <= b.n0);
    }

    #[test]
    fn induced_decay_for_constant_system() {
        let c = golden(Generator::constant_diag(&[0.5, 2.0]));
        let rc = build_return_cocycle(&c, &ReturnSet::Whole, &State::Phase(0.2), 200, 1000, 1.0).unwrap();
        let l = return_bound(&c, &rc, 1.0, 3.0, 1.0);
        assert_eq!(l, 3.0);
        let consts = return_constants(l).unwrap();
        let stable = induced_decay_check(&rc, &diag(&[1.0, 0.0]).columns(0, 1).into_owned(), &consts, 0.0);
        assert!(stable.pass);
        let unstable = induced_decay_check(&rc, &diag(&[0.0, 1.0]).columns(1, 1).into_owned(), &consts, 0.0);
        assert!(!unstable.pass);
    }

    #[test]
    fn met_for_constant_and_zero_exponent() {
        let c = golden(Generator::constant_diag(&[0.5, 2.0]));
        let m = met_dichotomy(&c, &State::Phase(0.2), &MetConfig::new(1000, 5)).unwrap();
        assert!((m.data.proj(0) - diag(&[1.0, 0.0])).norm() < 1e-12);
        assert_relative_eq!(m.data.alpha, 0.9 * 2f64.ln(), max_relative = 1e-12);
        assert!(m.defects.passes(1e-10, 1e-9));
        let z = golden(Generator::constant_diag(&[1.0, 2.0]));
        assert!(matches!(met_dichotomy(&z, &State::Phase(0.2), &MetConfig::new(1000, 5)), Err(Error::NoGap { .. })));
    }

    #[test]
    fn lyapunov_csv() {
        let r = lyapunov_qr(&golden(Generator::constant_diag(&[0.5, 2.0])), &State::Phase(0.0), 1000).unwrap();
        let csv = r.to_csv();
        assert!(csv.starts_with("checkpoint,exponent_1,exponent_2\n100,"));
        assert_eq!(csv.lines().count(), 1 + r.history.len());
    }
}
