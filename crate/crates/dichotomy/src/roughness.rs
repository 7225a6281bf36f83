//! Persistence of a dichotomy under small perturbations of the generator.
//!
//! The perturbed Green function is the fixed point of
//! `X = G (S_C X + delta_k I)` with `(S_C X)(j) = C(j - 1) X(j - 1)`, iterated column by
//! column on the data window of the unperturbed dichotomy.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::admissibility::{detect_dichotomy, DetectConfig, Detection};
use crate::dynamics::{BaseDriver, Cocycle, Generator};
use crate::error::{Error, Result};
use crate::green::{gamma_sharp, gamma_tilde, green_bound_check, DichotomyData, GreenBoundReport, GreenTable};
use crate::linalg::op_norm;
use crate::weighted::{WeightSpec, WeightVariant};

/// Denominators below this are reported as a domain error.
const DENOMINATOR_FLOOR: f64 = 1e-8;

/// `B_xi = A + sum_j xi_j E_j` with smallness level `rho` and Hölder data `(upsilon, sigma)`.
#[derive(Clone, Debug)]
pub struct PerturbationSpec {
    pub directions: Vec<DMatrix<f64>>,
    pub rho: f64,
    pub upsilon: f64,
    pub sigma: f64,
}

impl PerturbationSpec {
    pub fn new(directions: Vec<DMatrix<f64>>, rho: f64, upsilon: f64, sigma: f64) -> Result<Self> {
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::InvalidInput(format!("rho must be positive, got {rho}")));
        }
        if !(upsilon > 0.0 && upsilon.is_finite()) {
            return Err(Error::InvalidInput(format!("upsilon must be positive, got {upsilon}")));
        }
        if !(sigma > 0.0 && sigma <= 1.0) {
            return Err(Error::InvalidInput(format!("sigma must lie in (0, 1], got {sigma}")));
        }
        if let Some(first) = directions.first() {
            if directions.iter().any(|e| e.shape() != first.shape() || e.nrows() != e.ncols()) {
                return Err(Error::InvalidInput("perturbation directions differ in shape".into()));
            }
        }
        Ok(PerturbationSpec {
            directions,
            rho,
            upsilon,
            sigma,
        })
    }

    /// `C_xi = B_xi - A`.
    pub fn delta(&self, xi: &[f64], dim: usize) -> Result<DMatrix<f64>> {
        if xi.len() != self.directions.len() {
            return Err(Error::InvalidInput(format!(
                "parameter has {} components, family has {}",
                xi.len(),
                self.directions.len()
            )));
        }
        let mut c = DMatrix::zeros(dim, dim);
        for (x, e) in xi.iter().zip(&self.directions) {
            if e.nrows() != dim {
                return Err(Error::InvalidInput("perturbation direction has the wrong dimension".into()));
            }
            c += e * *x;
        }
        Ok(c)
    }

    /// The cocycle generated by `B_xi` over the same driver.
    pub fn cocycle(&self, a: &Cocycle, xi: &[f64]) -> Result<Cocycle> {
        self.delta(xi, a.dim())?;
        Cocycle::new(
            a.driver().clone(),
            Generator::Perturbed {
                base: Box::new(a.generator().clone()),
                directions: self.directions.clone(),
                xi: xi.to_vec(),
            },
        )
    }
}

/// `(1 - e^{-alpha}) / (1 + e^{-alpha})`, the admissible range of `rho`.
pub fn smallness_threshold(alpha: f64) -> f64 {
    (alpha / 2.0).tanh()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SmallnessReport {
    /// `max_n |C(theta^n omega)| K(theta^{n+1} omega)` over the data window.
    pub max_weighted_perturbation: f64,
    pub rho: f64,
    pub threshold: f64,
    /// `rho - max_weighted_perturbation`.
    pub slack: f64,
    /// `threshold - rho`.
    pub threshold_margin: f64,
    pub pass: bool,
}

pub fn check_smallness(dich: &DichotomyData, pert: &PerturbationSpec, xi: &[f64]) -> Result<SmallnessReport> {
    let c = pert.delta(xi, dich.dim())?;
    let cn = op_norm(&c);
    let m = dich.half_width();
    let max_weighted_perturbation = (-m..m).map(|n| cn * dich.k(n + 1)).fold(0.0, f64::max);
    let threshold = smallness_threshold(dich.alpha);
    let slack = pert.rho - max_weighted_perturbation;
    let threshold_margin = threshold - pert.rho;
    Ok(SmallnessReport {
        max_weighted_perturbation,
        rho: pert.rho,
        threshold,
        slack,
        threshold_margin,
        pass: slack >= 0.0 && threshold_margin > 0.0,
    })
}

fn check_rho(alpha: f64, rho: f64, allow_zero: bool) -> Result<()> {
    let ok_rho = if allow_zero { rho >= 0.0 } else { rho > 0.0 };
    if !(alpha > 0.0 && alpha.is_finite()) || !ok_rho || !(rho < smallness_threshold(alpha)) {
        return Err(Error::Domain(format!(
            "need alpha > 0 and 0 < rho < tanh(alpha/2), got alpha = {alpha}, rho = {rho}"
        )));
    }
    Ok(())
}

/// `rho (1 + e^{-alpha}) / (1 - e^{-alpha})`.
fn varrho(alpha: f64, rho: f64) -> f64 {
    rho / (alpha / 2.0).tanh()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BetaStar {
    pub beta_star: f64,
    pub contraction: f64,
    pub t: f64,
    pub delta: f64,
}

/// `beta* = ln[(sqrt(Delta) - T) / (4 rho e^{-alpha})]`, evaluated as
/// `ln[2 (1 + varrho) / (T + sqrt(Delta))]` to avoid cancellation for small `rho`.
pub fn beta_star(alpha: f64, rho: f64) -> Result<BetaStar> {
    check_rho(alpha, rho, false)?;
    let q = (-alpha).exp();
    let one_plus = 1.0 + varrho(alpha, rho);
    let t = 2.0 * rho + q * one_plus;
    let delta = t * t + 8.0 * rho * q * one_plus;
    Ok(BetaStar {
        beta_star: (2.0 * one_plus / (t + delta.sqrt())).ln(),
        contraction: one_plus / 2.0,
        t,
        delta,
    })
}

/// `-ln(cosh alpha - sqrt(cosh^2 alpha - 1 - 2 rho sinh alpha))`, in the form
/// `alpha - ln(1 + 2 rho e^alpha / (1 + sqrt(1 - 2 rho / sinh alpha)))`.
pub fn new_exponent(alpha: f64, rho: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha.is_finite()) || !(rho >= 0.0) {
        return Err(Error::Domain(format!("need alpha > 0 and rho >= 0, got ({alpha}, {rho})")));
    }
    let radicand = 1.0 - 2.0 * rho / alpha.sinh();
    if !(radicand > 0.0) {
        return Err(Error::Domain(format!(
            "radicand cosh^2 alpha - 1 - 2 rho sinh alpha is not positive at alpha = {alpha}, rho = {rho}"
        )));
    }
    let at = alpha - (2.0 * rho * alpha.exp() / (1.0 + radicand.sqrt())).ln_1p();
    if !(at > 0.0) {
        return Err(Error::Domain(format!("perturbed exponent {at} is not positive")));
    }
    Ok(at)
}

#[derive(Clone, Debug, PartialEq)]
pub struct NewBound {
    pub kappa: f64,
    pub varrho: f64,
    pub d1: f64,
    pub d2: f64,
    pub beta_tilde: f64,
    /// `kappa K(n)`.
    pub k_tilde: Vec<f64>,
}

fn inverse_gap(x: f64, what: &str) -> Result<f64> {
    if !(x > DENOMINATOR_FLOOR) {
        return Err(Error::Domain(format!("denominator of {what} is {x}")));
    }
    Ok(1.0 / x)
}

pub fn new_bound(alpha: f64, rho: f64, alpha_tilde: f64, k_samples: &[f64]) -> Result<NewBound> {
    check_rho(alpha, rho, true)?;
    if !(alpha_tilde > 0.0 && alpha_tilde <= alpha) {
        return Err(Error::Domain(format!("alpha_tilde {alpha_tilde} outside (0, {alpha}]")));
    }
    let vr = varrho(alpha, rho);
    let beta_tilde = alpha_tilde + (2.0 * rho * alpha.sinh()).ln_1p();
    let d1 = inverse_gap(1.0 - rho * (-alpha).exp() / -(-(alpha + alpha_tilde)).exp_m1(), "D1")?;
    let d2 = inverse_gap(1.0 - rho * (-beta_tilde).exp() / -(-(alpha + beta_tilde)).exp_m1(), "D2")?;
    let lead = 1.0 + rho * inverse_gap((1.0 - vr) * -(-alpha).exp_m1(), "kappa")?;
    let kappa = lead * d1.max(d2);
    Ok(NewBound {
        kappa,
        varrho: vr,
        d1,
        d2,
        beta_tilde,
        k_tilde: k_samples.iter().map(|k| kappa * k).collect(),
    })
}

/// `kappa^2 upsilon K0 (1 + e^{-2 alpha_tilde}) / (1 - e^{-2 alpha_tilde})`.
pub fn holder_bound(kappa: f64, upsilon: f64, k0: f64, alpha_tilde: f64, sigma: f64) -> Result<f64> {
    if !(kappa > 0.0 && upsilon > 0.0 && k0 > 0.0 && alpha_tilde > 0.0) || !(sigma > 0.0 && sigma <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "holder bound needs positive inputs and sigma in (0, 1], got ({kappa}, {upsilon}, {k0}, {alpha_tilde}, {sigma})"
        )));
    }
    Ok(kappa * kappa * upsilon * k0 / alpha_tilde.tanh())
}

/// Every constant of the roughness estimate at `(alpha, rho)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RoughnessConstants {
    pub alpha: f64,
    pub rho: f64,
    pub beta_star: f64,
    pub contraction: f64,
    pub alpha_tilde: f64,
    pub kappa: f64,
    pub varrho: f64,
    pub d1: f64,
    pub d2: f64,
    pub beta_tilde: f64,
}

pub fn roughness_constants(alpha: f64, rho: f64) -> Result<RoughnessConstants> {
    let b = beta_star(alpha, rho)?;
    let alpha_tilde = new_exponent(alpha, rho)?;
    let nb = new_bound(alpha, rho, alpha_tilde, &[])?;
    Ok(RoughnessConstants {
        alpha,
        rho,
        beta_star: b.beta_star,
        contraction: b.contraction,
        alpha_tilde,
        kappa: nb.kappa,
        varrho: nb.varrho,
        d1: nb.d1,
        d2: nb.d2,
        beta_tilde: nb.beta_tilde,
    })
}

/// Lipschitz constant of the fixed-point map in the weight `e^{-lambda (n - k)}` (signed)
/// or `e^{-lambda |n - k|}` (absolute).
pub fn analytic_rate(alpha: f64, rho: f64, lambda: f64, variant: WeightVariant) -> Result<f64> {
    Ok(match variant {
        WeightVariant::Signed => rho * (-lambda).exp() * gamma_sharp(alpha, lambda)?,
        WeightVariant::Absolute => rho * lambda.abs().exp() * gamma_tilde(alpha, lambda)?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationConfig {
    pub lambda: f64,
    pub variant: WeightVariant,
    pub tolerance: f64,
}

impl IterationConfig {
    /// `lambda = beta*` with the signed weight and tolerance `1e-12`.
    pub fn at_beta_star(alpha: f64, rho: f64) -> Result<Self> {
        Ok(IterationConfig {
            lambda: beta_star(alpha, rho)?.beta_star,
            variant: WeightVariant::Signed,
            tolerance: 1e-12,
        })
    }
}

#[derive(Clone, Debug)]
struct ColumnRun {
    column: Vec<DMatrix<f64>>,
    iterations: usize,
    max_ratio: f64,
}

const RATE_CAP_ITERATIONS: usize = 1000;

fn max_iterations(rate: f64, tol: f64) -> usize {
    if rate > 0.0 && rate < 1.0 {
        (tol.ln() / rate.ln()).ceil() as usize + 10
    } else if rate == 0.0 {
        10
    } else {
        RATE_CAP_ITERATIONS
    }
}

fn weighted_column_norm(d: &[DMatrix<f64>], m: i64, k: i64, lambda: f64, variant: WeightVariant) -> f64 {
    (-m..=m)
        .map(|n| {
            let r = op_norm(&d[(n + m) as usize]);
            if r == 0.0 {
                return 0.0;
            }
            let e = match variant {
                WeightVariant::Signed => -lambda * (n - k) as f64,
                WeightVariant::Absolute => -lambda * (n - k).abs() as f64,
            };
            (r.ln() + e).exp()
        })
        .fold(0.0, f64::max)
}

fn iterate_column(
    table: &GreenTable,
    c: &DMatrix<f64>,
    m: i64,
    k: i64,
    cfg: &IterationConfig,
    max_iters: usize,
) -> Result<ColumnRun> {
    let len = (2 * m + 1) as usize;
    let d = c.nrows();
    let mut x = vec![DMatrix::zeros(d, d); len];
    let mut prev_diff: Option<f64> = None;
    let mut max_ratio = 0.0f64;
    for it in 0..=max_iters {
        let mut src: Vec<DMatrix<f64>> = vec![DMatrix::zeros(d, d); len];
        for j in (-m + 1)..=m {
            src[(j + m) as usize] = c * &x[(j - 1 + m) as usize];
        }
        src[(k + m) as usize] += DMatrix::identity(d, d);
        let next: Vec<DMatrix<f64>> = (-m..=m)
            .map(|n| {
                let mut acc = DMatrix::zeros(d, d);
                for j in -m..=m {
                    let s = &src[(j + m) as usize];
                    if s.iter().any(|v| *v != 0.0) {
                        acc += table.get(n, j) * s;
                    }
                }
                acc
            })
            .collect();
        let diff: Vec<DMatrix<f64>> = next.iter().zip(&x).map(|(a, b)| a - b).collect();
        let dn = weighted_column_norm(&diff, m, k, cfg.lambda, cfg.variant);
        if !dn.is_finite() {
            return Err(Error::NoConvergence {
                iterations: it,
                last_step: dn,
            });
        }
        if let Some(p) = prev_diff {
            if p > 0.0 {
                max_ratio = max_ratio.max(dn / p);
            }
        }
        x = next;
        if dn < cfg.tolerance && it > 0 {
            return Ok(ColumnRun {
                column: x,
                iterations: it,
                max_ratio,
            });
        }
        prev_diff = Some(dn);
        if it == max_iters {
            return Err(Error::NoConvergence {
                iterations: it,
                last_step: dn,
            });
        }
    }
    unreachable!("loop returns on its last pass")
}

#[derive(Clone, Debug)]
pub struct PerturbedGreen {
    /// `G_tilde(n, k)` on the data window, certified against `(alpha_tilde, kappa K)`.
    pub table: GreenTable,
    /// `G_tilde(0, 0)`.
    pub projector: DMatrix<f64>,
    /// Largest iteration count over the columns; 1 means the first iterate was already fixed.
    pub iterations: usize,
    /// Largest measured ratio of successive weighted corrections.
    pub measured_rate: f64,
    pub analytic_rate: f64,
    pub constants: RoughnessConstants,
    pub bound_check: GreenBoundReport,
}

fn prepare(dich: &DichotomyData, pert: &PerturbationSpec, xi: &[f64], cfg: &IterationConfig) -> Result<(DMatrix<f64>, f64, usize)> {
    let c = pert.delta(xi, dich.dim())?;
    if !(cfg.tolerance > 0.0) {
        return Err(Error::InvalidInput("iteration tolerance must be positive".into()));
    }
    let rate = analytic_rate(dich.alpha, pert.rho, cfg.lambda, cfg.variant)?;
    Ok((c, rate, max_iterations(rate, cfg.tolerance)))
}

/// The Green function of `B_xi` on the data window of `dich`.
pub fn perturbed_green(
    dich: &DichotomyData,
    pert: &PerturbationSpec,
    xi: &[f64],
    cfg: &IterationConfig,
    slack_tolerance: f64,
) -> Result<PerturbedGreen> {
    let constants = roughness_constants(dich.alpha, pert.rho)?;
    let (c, rate, max_iters) = prepare(dich, pert, xi, cfg)?;
    let table = GreenTable::build(dich)?;
    let m = dich.half_width();
    let runs: Vec<ColumnRun> = (-m..=m)
        .into_par_iter()
        .map(|k| iterate_column(&table, &c, m, k, cfg, max_iters))
        .collect::<Result<_>>()?;
    let len = (2 * m + 1) as usize;
    let mut entries = Vec::with_capacity(len * len);
    for n in 0..len {
        for run in &runs {
            entries.push(run.column[n].clone());
        }
    }
    let k_tilde: Vec<f64> = dich.k_samples().iter().map(|k| constants.kappa * k).collect();
    let ptable = GreenTable::from_entries(-m, m, entries, constants.alpha_tilde, k_tilde)?;
    let bound_check = green_bound_check(&ptable, slack_tolerance);
    Ok(PerturbedGreen {
        projector: ptable.get(0, 0).clone(),
        table: ptable,
        iterations: runs.iter().map(|r| r.iterations).max().unwrap_or(0),
        measured_rate: runs.iter().map(|r| r.max_ratio).fold(0.0, f64::max),
        analytic_rate: rate,
        constants,
        bound_check,
    })
}

/// `Pi_tilde_xi` at the base point, iterating only the column of index 0.
pub fn perturbed_projector(
    dich: &DichotomyData,
    pert: &PerturbationSpec,
    xi: &[f64],
    cfg: &IterationConfig,
) -> Result<DMatrix<f64>> {
    let (c, _, max_iters) = prepare(dich, pert, xi, cfg)?;
    let table = GreenTable::build(dich)?;
    let m = dich.half_width();
    let run = iterate_column(&table, &c, m, 0, cfg, max_iters)?;
    Ok(run.column[m as usize].clone())
}

#[derive(Clone, Debug, PartialEq)]
pub struct HolderReport {
    /// `(i, j, |Pi_j - Pi_i| / |xi_j - xi_i|^sigma)` for each distinct pair.
    pub ratios: Vec<(usize, usize, f64)>,
    pub max_ratio: f64,
    pub bound: f64,
    /// Pairs with equal parameters carry no information and are skipped.
    pub skipped: usize,
    pub pass: bool,
}

/// Hölder quotients of the perturbed projector over every pair of `xis`.
pub fn holder_empirical(
    dich: &DichotomyData,
    pert: &PerturbationSpec,
    xis: &[Vec<f64>],
    cfg: &IterationConfig,
    slack: f64,
) -> Result<HolderReport> {
    let consts = roughness_constants(dich.alpha, pert.rho)?;
    let bound = holder_bound(consts.kappa, pert.upsilon, dich.k(0), consts.alpha_tilde, pert.sigma)?;
    let projs: Vec<DMatrix<f64>> = xis
        .par_iter()
        .map(|xi| perturbed_projector(dich, pert, xi, cfg))
        .collect::<Result<_>>()?;
    let mut ratios = Vec::new();
    let mut skipped = 0;
    for i in 0..xis.len() {
        for j in i + 1..xis.len() {
            let dist = xis[i].iter().zip(&xis[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            if dist == 0.0 {
                skipped += 1;
                continue;
            }
            ratios.push((i, j, op_norm(&(&projs[j] - &projs[i])) / dist.powf(pert.sigma)));
        }
    }
    let max_ratio = ratios.iter().map(|r| r.2).fold(0.0, f64::max);
    Ok(HolderReport {
        pass: max_ratio <= bound * (1.0 + slack),
        ratios,
        max_ratio,
        bound,
        skipped,
    })
}

#[derive(Clone, Debug)]
pub struct DeterministicReport {
    pub detection: Detection,
    pub kappa: f64,
    pub epsilon: f64,
    /// `max_n K_hat(n) e^{-epsilon |n|}`.
    pub kappa_tilde: f64,
}

/// Detection for a deterministic sequence `A(n)` with the envelope `kappa e^{epsilon |n|}`.
pub fn deterministic_mode(cocycle: &Cocycle, kappa: f64, epsilon: f64, cfg: &DetectConfig) -> Result<DeterministicReport> {
    if *cocycle.driver() != BaseDriver::IntegerShift {
        return Err(Error::InvalidInput("deterministic mode needs the integer shift driver".into()));
    }
    if !(kappa > 0.0 && epsilon >= 0.0 && cfg.beta > 0.0) {
        return Err(Error::InvalidInput(format!(
            "need kappa > 0, epsilon >= 0 and beta > 0, got ({kappa}, {epsilon}, {})",
            cfg.beta
        )));
    }
    let m = cfg.half_width();
    let mut cfg = cfg.clone();
    cfg.weight = Some(WeightSpec::envelope(kappa, epsilon, -m, m, cfg.beta, WeightVariant::Absolute)?);
    let origin = crate::dynamics::State::Index(0);
    let detection = detect_dichotomy(cocycle, &origin, &cfg)?;
    let kappa_tilde = (-m..=m)
        .map(|n| detection.data.k(n) * (-epsilon * n.abs() as f64).exp())
        .fold(0.0, f64::max);
    Ok(DeterministicReport {
        detection,
        kappa,
        epsilon,
        kappa_tilde,
    })
}
