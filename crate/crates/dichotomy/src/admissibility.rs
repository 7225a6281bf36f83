//! Reconstruction of a dichotomy from the solution operator of the inhomogeneous
//! equation `x(n+1) = A(theta^n omega) x(n) + f(n+1)`.
//!
//! The bi-infinite inverse is realized on a window `[-N, N]`: among all solutions of
//! the `2N` block constraints, [`solve_window`] returns the one with least weighted
//! boundary energy `w_-^2 |x(-N)|^2 + w_+^2 |x(N)|^2`. The constraint matrix is
//! factored once by an orthogonal (QR) decomposition of its transpose, giving an
//! orthonormal null-space basis `Z` and a minimum-norm particular solution; the boundary
//! energy is then minimized over the `d`-dimensional null space. No normal equations
//! are formed.
//!
//! With exponential boundary weights `w(n) = e^{-lambda n}` the minimizer approximates
//! the unique solution bounded in the `lambda`-weighted norm. Comparing `lambda = beta`
//! with `lambda = -beta` separates hyperbolic systems (both agree) from systems with
//! non-unique bounded solutions (they differ at order one).

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::dynamics::{Cocycle, State};
use crate::error::{Error, Result};
use crate::green::{DichotomyData, DichotomyDefects};
use crate::linalg::{line_fit, op_norm, pinv, singular_values_desc};
use crate::weighted::{temperedness_estimate, WeightSpec, WindowedSequence};

/// Boundary weights of the minimal-energy solve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BoundaryPenalty {
    /// `w(-N) = w(N) = 1`.
    Uniform,
    /// `w(n) = e^{-lambda n}` at `n = +-N`, normalized so the larger weight is 1.
    Exponential(f64),
}

impl BoundaryPenalty {
    fn weights(&self, n: i64) -> (f64, f64) {
        match *self {
            BoundaryPenalty::Uniform => (1.0, 1.0),
            BoundaryPenalty::Exponential(lambda) => {
                let t = 2.0 * lambda.abs() * n as f64;
                if lambda >= 0.0 {
                    (1.0, (-t).exp())
                } else {
                    ((-t).exp(), 1.0)
                }
            }
        }
    }
}

/// Input data of one windowed solve.
#[derive(Clone, Debug)]
pub struct WindowProblem {
    /// `A(theta^n omega)` for `n` in `[-N, N-1]`.
    pub matrices: Vec<DMatrix<f64>>,
    /// Input on `[-N, N]`.
    pub f: WindowedSequence,
    pub weight: Option<WeightSpec>,
    pub penalty: BoundaryPenalty,
}

impl WindowProblem {
    pub fn from_cocycle(
        cocycle: &Cocycle,
        omega: &State,
        f: WindowedSequence,
        penalty: BoundaryPenalty,
    ) -> Result<Self> {
        let n = f.n_hi();
        if f.n_lo() != -n {
            return Err(Error::InvalidInput("window problems use a symmetric window".into()));
        }
        Ok(WindowProblem {
            matrices: window_matrices(cocycle, omega, n),
            f,
            weight: None,
            penalty,
        })
    }

    pub fn half_width(&self) -> i64 {
        self.matrices.len() as i64 / 2
    }
}

fn window_matrices(cocycle: &Cocycle, omega: &State, n: i64) -> Vec<DMatrix<f64>> {
    if n == 0 {
        return Vec::new();
    }
    cocycle.orbit(omega, -n, n - 1).matrices
}

/// Factored constraint system of one window, reusable across inputs and penalties.
#[derive(Clone, Debug)]
pub struct WindowSolver {
    half_width: i64,
    dim: usize,
    row_scale: Vec<f64>,
    q1: DMatrix<f64>,
    r11: DMatrix<f64>,
    z: DMatrix<f64>,
}

/// QR factors of the column-equilibrated boundary least-squares matrix.
struct BoundaryFactor {
    w_lo: f64,
    w_hi: f64,
    col_scale: Vec<f64>,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
}

const BOUNDARY_RANK_TOL: f64 = 1e-12;

impl WindowSolver {
    /// Factors the constraints `x(n+1) - A_n x(n) = f(n+1)`, `A_n = matrices[n + N]`.
    pub fn new(matrices: &[DMatrix<f64>]) -> Result<Self> {
        if matrices.len() % 2 != 0 {
            return Err(Error::InvalidInput("need matrices on [-N, N-1]".into()));
        }
        let half_width = matrices.len() as i64 / 2;
        let d = matrices.first().map_or(0, |a| a.nrows());
        if half_width == 0 {
            return Ok(WindowSolver {
                half_width,
                dim: d,
                row_scale: Vec::new(),
                q1: DMatrix::zeros(0, 0),
                r11: DMatrix::zeros(0, 0),
                z: DMatrix::zeros(0, 0),
            });
        }
        if matrices.iter().any(|a| a.nrows() != d || a.ncols() != d) {
            return Err(Error::InvalidInput("window matrices differ in shape".into()));
        }
        if matrices.iter().any(|a| a.iter().any(|x| !x.is_finite())) {
            return Err(Error::InvalidInput("window matrices are not finite".into()));
        }
        let m = 2 * half_width as usize * d;
        let p = m + d;
        // transpose of the constraint matrix, padded with zero columns to p x p
        let mut mt = DMatrix::zeros(p, p);
        let mut row_scale = Vec::with_capacity(m);
        for (blk, a) in matrices.iter().enumerate() {
            for i in 0..d {
                let r = blk * d + i;
                let s = 1.0 / (1.0 + a.row(i).norm_squared()).sqrt();
                row_scale.push(s);
                mt[((blk + 1) * d + i, r)] = s;
                for j in 0..d {
                    mt[(blk * d + j, r)] = -a[(i, j)] * s;
                }
            }
        }
        let qr = mt.qr();
        let q = qr.q();
        let r = qr.r();
        let r11 = r.view((0, 0), (m, m)).into_owned();
        let diag_max = (0..m).map(|i| r11[(i, i)].abs()).fold(0.0, f64::max);
        let diag_min = (0..m).map(|i| r11[(i, i)].abs()).fold(f64::INFINITY, f64::min);
        if !(diag_min > 1e-14 * diag_max) {
            return Err(Error::RankDeficient {
                ratio: diag_min / diag_max,
            });
        }
        Ok(WindowSolver {
            half_width,
            dim: d,
            row_scale,
            q1: q.columns(0, m).into_owned(),
            r11,
            z: q.columns(m, d).into_owned(),
        })
    }

    pub fn from_cocycle(cocycle: &Cocycle, omega: &State, half_width: i64) -> Result<Self> {
        if half_width < 0 {
            return Err(Error::InvalidInput(format!("negative window {half_width}")));
        }
        let mats = window_matrices(cocycle, omega, half_width);
        if mats.is_empty() {
            let mut s = Self::new(&[])?;
            s.dim = cocycle.dim();
            return Ok(s);
        }
        Self::new(&mats)
    }

    pub fn half_width(&self) -> i64 {
        self.half_width
    }

    fn boundary_factor(&self, penalty: BoundaryPenalty) -> Result<BoundaryFactor> {
        let d = self.dim;
        let (w_lo, w_hi) = penalty.weights(self.half_width);
        let last = 2 * self.half_width as usize * d;
        let mut b = DMatrix::zeros(2 * d, d);
        for i in 0..d {
            for c in 0..d {
                b[(i, c)] = w_lo * self.z[(i, c)];
                b[(d + i, c)] = w_hi * self.z[(last + i, c)];
            }
        }
        // boundary data on the sides that carry weight must pin down the null component
        let mut mask = DMatrix::zeros(2 * d, d);
        for i in 0..d {
            for c in 0..d {
                if w_lo > 0.0 {
                    mask[(i, c)] = self.z[(i, c)];
                }
                if w_hi > 0.0 {
                    mask[(d + i, c)] = self.z[(last + i, c)];
                }
            }
        }
        let sv = singular_values_desc(&mask);
        let ratio = sv[d - 1] / sv[0].max(f64::MIN_POSITIVE);
        if !(ratio > BOUNDARY_RANK_TOL) {
            return Err(Error::RankDeficient { ratio });
        }
        let col_norms: Vec<f64> = (0..d).map(|c| b.column(c).norm()).collect();
        let cmax = col_norms.iter().copied().fold(0.0, f64::max);
        let cmin = col_norms.iter().copied().fold(f64::INFINITY, f64::min);
        if !(cmin > 0.0) || !(cmax > 0.0) || !(cmin.is_finite()) {
            return Err(Error::RankDeficient { ratio: 0.0 });
        }
        let col_scale: Vec<f64> = col_norms.iter().map(|c| 1.0 / c).collect();
        for (c, s) in col_scale.iter().enumerate() {
            b.column_mut(c).scale_mut(*s);
        }
        let qr = b.qr();
        let r = qr.r();
        let diag: Vec<f64> = (0..d).map(|i| r[(i, i)].abs()).collect();
        let dmax = diag.iter().copied().fold(0.0, f64::max);
        let dmin = diag.iter().copied().fold(f64::INFINITY, f64::min);
        if !(dmin > BOUNDARY_RANK_TOL * dmax) {
            return Err(Error::RankDeficient { ratio: dmin / dmax });
        }
        Ok(BoundaryFactor {
            w_lo,
            w_hi,
            col_scale,
            q: qr.q(),
            r,
        })
    }

    /// Minimum-norm particular solution for the scaled right-hand side `b`.
    fn particular(&self, b: &DVector<f64>) -> DVector<f64> {
        let y = self
            .r11
            .tr_solve_upper_triangular(b)
            .expect("R11 has a nonzero diagonal");
        &self.q1 * y
    }

    fn finish(&self, bf: &BoundaryFactor, xp: DVector<f64>) -> DVector<f64> {
        let d = self.dim;
        let last = 2 * self.half_width as usize * d;
        let mut c = DVector::zeros(2 * d);
        for i in 0..d {
            c[i] = -bf.w_lo * xp[i];
            c[d + i] = -bf.w_hi * xp[last + i];
        }
        let qtc = bf.q.transpose() * c;
        let mut y = bf
            .r
            .solve_upper_triangular(&qtc)
            .expect("boundary factor has full rank");
        for (yi, s) in y.iter_mut().zip(&bf.col_scale) {
            *yi *= s;
        }
        xp + &self.z * y
    }

    fn rhs(&self, f: &WindowedSequence) -> DVector<f64> {
        let d = self.dim;
        let mut b = DVector::zeros(self.row_scale.len());
        for n in -self.half_width..self.half_width {
            let v = f.get(n + 1);
            for i in 0..d {
                let r = (n + self.half_width) as usize * d + i;
                b[r] = v[i] * self.row_scale[r];
            }
        }
        b
    }

    fn split(&self, x: &DVector<f64>) -> WindowedSequence {
        let d = self.dim;
        WindowedSequence::from_fn(-self.half_width, self.half_width, |n| {
            let off = (n + self.half_width) as usize * d;
            x.rows(off, d).into_owned()
        })
        .expect("window is nonempty")
    }

    /// Minimal-boundary-energy solution for input `f` on `[-N, N]`.
    pub fn solve(&self, f: &WindowedSequence, penalty: BoundaryPenalty) -> Result<WindowedSequence> {
        self.check_input(f)?;
        if self.half_width == 0 {
            return Ok(WindowedSequence::zeros(0, 0, self.dim));
        }
        let bf = self.boundary_factor(penalty)?;
        Ok(self.split(&self.finish(&bf, self.particular(&self.rhs(f)))))
    }

    fn check_input(&self, f: &WindowedSequence) -> Result<()> {
        if f.n_lo() != -self.half_width || f.n_hi() != self.half_width {
            return Err(Error::WindowMismatch {
                expected_lo: -self.half_width,
                expected_hi: self.half_width,
                got_lo: f.n_lo(),
                got_hi: f.n_hi(),
            });
        }
        if f.dim() != self.dim {
            return Err(Error::InvalidInput("input dimension differs from the system".into()));
        }
        Ok(())
    }

    /// `G_lambda(n, k)` for every `n` in the window: column `j` is the solution for the
    /// input `e_j` placed at `k`. An input at `k = -N` enters no constraint and yields zero.
    pub fn green_column(&self, k: i64, penalty: BoundaryPenalty) -> Result<Vec<DMatrix<f64>>> {
        let nw = self.half_width;
        if k.abs() > nw {
            return Err(Error::InvalidInput(format!("source {k} outside [-{nw}, {nw}]")));
        }
        let d = self.dim;
        let len = (2 * nw + 1) as usize;
        let mut out = vec![DMatrix::zeros(d, d); len];
        if nw == 0 || k == -nw {
            return Ok(out);
        }
        let bf = self.boundary_factor(penalty)?;
        for j in 0..d {
            let mut b = DVector::zeros(self.row_scale.len());
            let r = (k - 1 + nw) as usize * d + j;
            b[r] = self.row_scale[r];
            let x = self.finish(&bf, self.particular(&b));
            for (idx, g) in out.iter_mut().enumerate() {
                for i in 0..d {
                    g[(i, j)] = x[idx * d + i];
                }
            }
        }
        Ok(out)
    }

    /// Single entry `G_lambda(n, k)`.
    pub fn green_entry(&self, n: i64, k: i64, penalty: BoundaryPenalty) -> Result<DMatrix<f64>> {
        if n.abs() > self.half_width {
            return Err(Error::InvalidInput(format!("index {n} outside the window")));
        }
        Ok(self.green_column(k, penalty)?.swap_remove((n + self.half_width) as usize))
    }
}

/// Minimal-boundary-energy solution of the windowed inhomogeneous equation.
pub fn solve_window(p: &WindowProblem) -> Result<WindowedSequence> {
    let n = p.half_width();
    if p.f.n_lo() != -n || p.f.n_hi() != n {
        return Err(Error::WindowMismatch {
            expected_lo: -n,
            expected_hi: n,
            got_lo: p.f.n_lo(),
            got_hi: p.f.n_hi(),
        });
    }
    if let Some(w) = &p.weight {
        if w.n_lo() != -n || w.n_hi() != n {
            return Err(Error::WindowMismatch {
                expected_lo: -n,
                expected_hi: n,
                got_lo: w.n_lo(),
                got_hi: w.n_hi(),
            });
        }
    }
    if n == 0 {
        return Ok(WindowedSequence::zeros(0, 0, p.f.dim()));
    }
    WindowSolver::new(&p.matrices)?.solve(&p.f, p.penalty)
}

/// `G_lambda(n, k)` reconstructed from delta inputs on the window `[-N, N]` around `omega`.
pub fn green_from_deltas(
    cocycle: &Cocycle,
    omega: &State,
    half_width: i64,
    lambda: f64,
    n: i64,
    k: i64,
) -> Result<DMatrix<f64>> {
    WindowSolver::from_cocycle(cocycle, omega, half_width)?.green_entry(
        n,
        k,
        BoundaryPenalty::Exponential(lambda),
    )
}

/// Default `(n, k)` pairs compared between the `+beta` and `-beta` reconstructions.
pub fn default_sample_pairs(half_width: i64) -> Vec<(i64, i64)> {
    let q = (half_width / 8).max(1).min(half_width);
    let mut pairs = Vec::new();
    for k in [-q, 0, q] {
        for dn in [-q, -1, 0, 1, q] {
            let n = k + dn;
            if n.abs() <= half_width && k.abs() < half_width {
                pairs.push((n, k));
            }
        }
    }
    pairs.sort_unstable();
    pairs.dedup();
    pairs
}

fn agreement(solver: &WindowSolver, beta: f64, pairs: &[(i64, i64)]) -> Result<f64> {
    let nw = solver.half_width();
    let mut ks: Vec<i64> = pairs.iter().map(|p| p.1).collect();
    ks.sort_unstable();
    ks.dedup();
    let mut worst = 0.0f64;
    for k in ks {
        let plus = solver.green_column(k, BoundaryPenalty::Exponential(beta))?;
        let minus = solver.green_column(k, BoundaryPenalty::Exponential(-beta))?;
        for &(n, _) in pairs.iter().filter(|p| p.1 == k) {
            let i = (n + nw) as usize;
            worst = worst.max(op_norm(&(&plus[i] - &minus[i])));
        }
    }
    Ok(worst)
}

/// `max |G_{+beta}(n, k) - G_{-beta}(n, k)|` over the sampled pairs.
pub fn check_pm_agreement(
    cocycle: &Cocycle,
    omega: &State,
    half_width: i64,
    beta: f64,
    sample_pairs: &[(i64, i64)],
) -> Result<f64> {
    if !(beta.abs() > 0.0) {
        return Err(Error::InvalidInput("agreement check needs beta != 0".into()));
    }
    if sample_pairs
        .iter()
        .any(|(n, k)| n.abs() > half_width || k.abs() > half_width)
    {
        return Err(Error::InvalidInput("sample pair outside the window".into()));
    }
    let solver = WindowSolver::from_cocycle(cocycle, omega, half_width)?;
    agreement(&solver, beta, sample_pairs)
}

/// Thresholds for accepting reconstructed projections.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerances {
    pub idempotence: f64,
    pub equivariance: f64,
    pub agreement: f64,
    /// Allowed excess of `|G(n,k)| e^{alpha |n-k|} / K(k)` over 1.
    pub decay_slack: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            idempotence: 1e-8,
            equivariance: 1e-8,
            agreement: 1e-6,
            decay_slack: 0.05,
        }
    }
}

/// Exponential fit `|G(n, 0)| <= K e^{-alpha |n|}` of a reconstructed Green column.
#[derive(Clone, Debug, PartialEq)]
pub struct DecayFit {
    pub alpha_stable: Option<f64>,
    pub alpha_unstable: Option<f64>,
    pub alpha: f64,
    pub k: f64,
}

#[derive(Clone, Debug)]
pub struct ProjectorCertificate {
    pub base: State,
    pub half_width: i64,
    pub beta: f64,
    /// `G_beta(0, 0)`.
    pub p: DMatrix<f64>,
    pub idempotence_defect: f64,
    pub equivariance_defect: f64,
    pub decay_fit: DecayFit,
    pub agreement_defect: f64,
    /// Empirical `sup |x|_{1,beta} / |f|_{1/K,beta}` over unit delta inputs at 0.
    pub gamma_hat: f64,
    /// `|G_beta(n, 0)|` for `n` in `[-N, N]`.
    pub green_norms: Vec<f64>,
}

const NOISE_FLOOR: f64 = 1e-13;

fn fit_side(norms: &[f64], idx: impl Iterator<Item = i64>, nw: i64, floor: f64) -> Option<f64> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for n in idx {
        let g = norms[(n + nw) as usize];
        if g > floor {
            xs.push(n.unsigned_abs() as f64);
            ys.push(g.ln());
        }
    }
    if xs.len() < 2 {
        return None;
    }
    Some(-line_fit(&xs, &ys).0)
}

/// Log-linear fit of `|G(n, 0)|` on `N/4 <= |n| <= 3N/4`; the bound `K` is the smallest
/// constant covering the whole window at the fitted rate.
pub fn fit_decay(norms: &[f64], half_width: i64) -> DecayFit {
    let nw = half_width;
    let gmax = norms.iter().copied().fold(0.0, f64::max);
    let floor = NOISE_FLOOR * gmax;
    let lo = (nw / 4).max(1);
    let hi = (3 * nw / 4).max(lo + 1).min(nw);
    let alpha_stable = fit_side(norms, lo..=hi, nw, floor);
    let alpha_unstable = fit_side(norms, (-hi..=-lo).rev(), nw, floor);
    let fallback = (1.0 / NOISE_FLOOR).ln() / lo as f64;
    let alpha = match (alpha_stable, alpha_unstable) {
        (Some(a), Some(b)) => a.min(b),
        (Some(a), None) | (None, Some(a)) => a,
        (None, None) => fallback,
    };
    DecayFit {
        alpha_stable,
        alpha_unstable,
        alpha,
        k: bound_at_rate(norms, nw, alpha),
    }
}

fn bound_at_rate(norms: &[f64], nw: i64, alpha: f64) -> f64 {
    (-nw..=nw)
        .map(|n| {
            let g = norms[(n + nw) as usize];
            if g == 0.0 {
                0.0
            } else {
                (g.ln() + alpha * n.unsigned_abs() as f64).exp()
            }
        })
        .fold(0.0, f64::max)
}

/// Reconstructs `Pi^s(omega)` as `G_beta(0, 0)` and certifies it.
///
/// Raises [`Error::NotAProjection`] when the result is not idempotent or when the
/// `+beta` and `-beta` reconstructions disagree (bounded solutions not unique).
pub fn extract_projector(
    cocycle: &Cocycle,
    omega: &State,
    half_width: i64,
    beta: f64,
    weight: Option<&WeightSpec>,
    tol: &Tolerances,
) -> Result<ProjectorCertificate> {
    let cert = projector_certificate(cocycle, omega, half_width, beta, weight)?;
    if !(cert.idempotence_defect <= tol.idempotence) {
        return Err(Error::NotAProjection {
            defect: "idempotence",
            value: cert.idempotence_defect,
            tolerance: tol.idempotence,
        });
    }
    if !(cert.agreement_defect <= tol.agreement) {
        return Err(Error::NotAProjection {
            defect: "agreement",
            value: cert.agreement_defect,
            tolerance: tol.agreement,
        });
    }
    Ok(cert)
}

/// All certificate quantities without any acceptance decision.
pub fn projector_certificate(
    cocycle: &Cocycle,
    omega: &State,
    half_width: i64,
    beta: f64,
    weight: Option<&WeightSpec>,
) -> Result<ProjectorCertificate> {
    if half_width < 4 {
        return Err(Error::InvalidInput(format!(
            "projector extraction needs N >= 4, got {half_width}"
        )));
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidInput(format!("beta must be positive, got {beta}")));
    }
    let nw = half_width;
    let solver = WindowSolver::from_cocycle(cocycle, omega, nw)?;
    let plus = BoundaryPenalty::Exponential(beta);
    let col0 = solver.green_column(0, plus)?;
    let p = col0[nw as usize].clone();
    let idempotence_defect = op_norm(&(&p * &p - &p));

    let q = (nw / 4).max(1);
    let diag_p: Vec<DMatrix<f64>> = (-q..=q)
        .map(|m| {
            if m == 0 {
                Ok(p.clone())
            } else {
                solver.green_entry(m, m, plus)
            }
        })
        .collect::<Result<_>>()?;
    let seg = cocycle.orbit(omega, -q, q);
    let equivariance_defect = (-q..q)
        .map(|m| {
            let a = seg.matrix(m);
            let pm = &diag_p[(m + q) as usize];
            let pn = &diag_p[(m + 1 + q) as usize];
            op_norm(&(pn * a - a * pm)) / (op_norm(a) * op_norm(pm).max(1.0)).max(f64::MIN_POSITIVE)
        })
        .fold(0.0, f64::max);

    let green_norms: Vec<f64> = col0.iter().map(op_norm).collect();
    let decay_fit = fit_decay(&green_norms, nw);
    let agreement_defect = agreement(&solver, beta, &default_sample_pairs(nw))?;

    let k0 = weight.map_or(1.0, |w| if w.n_lo() <= 0 && w.n_hi() >= 0 { w.k(0) } else { 1.0 });
    let gamma_hat = (-nw..=nw)
        .map(|n| (-beta * n as f64).exp() * green_norms[(n + nw) as usize])
        .fold(0.0, f64::max)
        / k0;

    Ok(ProjectorCertificate {
        base: *omega,
        half_width: nw,
        beta,
        p,
        idempotence_defect,
        equivariance_defect,
        decay_fit,
        agreement_defect,
        gamma_hat,
        green_norms,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VectorClass {
    Stable,
    Unstable,
    Neither,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Classification {
    pub class: VectorClass,
    /// Fitted slope of `ln |Phi(n) v|` on `[0, N]`.
    pub forward_slope: f64,
    /// Fitted slope of `ln |Phi(-n) v|` against `n` on `[0, N]`; negative means decay into the past.
    pub backward_slope: f64,
}

/// Condition number above which a backward step is refused.
pub const DEFAULT_CONDITION_CAP: f64 = 1e40;

/// Classifies `v` by its forward growth and the growth of its least-squares preimages.
pub fn classify_vector(
    cocycle: &Cocycle,
    omega: &State,
    v: &DVector<f64>,
    half_width: i64,
    tau_slope: f64,
    condition_cap: f64,
) -> Result<Classification> {
    if v.len() != cocycle.dim() || !(v.norm() > 0.0) {
        return Err(Error::InvalidInput("classification needs a nonzero vector of the right size".into()));
    }
    if half_width < 2 {
        return Err(Error::InvalidInput("classification needs N >= 2".into()));
    }
    let seg = cocycle.orbit(omega, -half_width, half_width - 1);
    let log_path = |steps: &mut dyn FnMut(i64, &DVector<f64>) -> Result<DVector<f64>>| -> Result<Vec<f64>> {
        let mut u = v.normalize();
        let mut acc = v.norm().ln();
        let mut out = vec![acc];
        for s in 0..half_width {
            let w = steps(s, &u)?;
            let r = w.norm();
            if !(r > 0.0 && r.is_finite()) {
                out.push(f64::NEG_INFINITY);
                break;
            }
            acc += r.ln();
            out.push(acc);
            u = w / r;
        }
        Ok(out)
    };
    let fwd = log_path(&mut |s, u| Ok(seg.matrix(s) * u))?;
    let bwd = log_path(&mut |s, u| {
        let a = seg.matrix(-s - 1);
        let sv = singular_values_desc(a);
        let cond = sv[0] / sv[sv.len() - 1];
        if !(cond <= condition_cap) {
            return Err(Error::IllConditionedBackward {
                step: -s - 1,
                condition: cond,
            });
        }
        Ok(pinv(a, 0.0) * u)
    })?;
    let slope = |ys: &[f64]| -> f64 {
        if ys.iter().any(|y| !y.is_finite()) {
            return f64::NEG_INFINITY;
        }
        let xs: Vec<f64> = (0..ys.len()).map(|i| i as f64).collect();
        line_fit(&xs, ys).0
    };
    let forward_slope = slope(&fwd);
    let backward_slope = slope(&bwd);
    let class = if forward_slope <= -tau_slope {
        VectorClass::Stable
    } else if forward_slope >= tau_slope && backward_slope <= -tau_slope {
        VectorClass::Unstable
    } else {
        VectorClass::Neither
    };
    Ok(Classification {
        class,
        forward_slope,
        backward_slope,
    })
}

/// Configuration of [`detect_dichotomy`].
#[derive(Clone, Debug)]
pub struct DetectConfig {
    /// Half width `N` of every windowed solve.
    pub window: i64,
    /// Half width `M` of the assembled data window; defaults to `N / 2`.
    pub data_half_width: Option<i64>,
    pub beta: f64,
    /// Input-space weight `K` on `[-M, M]`, used for diagnostics only.
    pub weight: Option<WeightSpec>,
    pub tolerances: Tolerances,
}

impl DetectConfig {
    pub fn new(window: i64, beta: f64) -> Self {
        DetectConfig {
            window,
            data_half_width: None,
            beta,
            weight: None,
            tolerances: Tolerances::default(),
        }
    }

    pub fn half_width(&self) -> i64 {
        self.data_half_width.unwrap_or(self.window / 2)
    }
}

/// Output of [`detect_dichotomy`]: the data and the evidence behind it.
#[derive(Clone, Debug)]
pub struct Detection {
    pub data: DichotomyData,
    pub certificates: Vec<ProjectorCertificate>,
    pub defects: DichotomyDefects,
    /// Slope estimate of `ln K` along the data window.
    pub temperedness: Option<f64>,
}

/// Runs [`extract_projector`] at every base point `theta^n omega`, `|n| <= M`, fits one
/// exponent for the whole window and validates the assembled [`DichotomyData`].
pub fn detect_dichotomy(cocycle: &Cocycle, omega: &State, cfg: &DetectConfig) -> Result<Detection> {
    let m = cfg.half_width();
    if m < 1 || cfg.window < 4 {
        return Err(Error::InvalidInput(format!(
            "detection needs N >= 4 and M >= 1, got N = {}, M = {m}",
            cfg.window
        )));
    }
    if let Some(w) = &cfg.weight {
        if w.n_lo() != -m || w.n_hi() != m {
            return Err(Error::WindowMismatch {
                expected_lo: -m,
                expected_hi: m,
                got_lo: w.n_lo(),
                got_hi: w.n_hi(),
            });
        }
    }
    let tol = cfg.tolerances;
    let states = cocycle.driver().orbit(omega, -m, m);
    let certificates: Vec<ProjectorCertificate> = states
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let n = i as i64 - m;
            let shifted = cfg.weight.as_ref().map(|w| {
                let k = w.k(n);
                WeightSpec::envelope(k, 0.0, -1, 1, w.beta, w.variant).expect("positive weight")
            });
            projector_certificate(cocycle, s, cfg.window, cfg.beta, shifted.as_ref())
        })
        .collect::<Result<_>>()?;

    for (i, c) in certificates.iter().enumerate() {
        let index = i as i64 - m;
        for (name, value, limit) in [
            ("idempotence", c.idempotence_defect, tol.idempotence),
            ("agreement", c.agreement_defect, tol.agreement),
            ("equivariance", c.equivariance_defect, tol.equivariance),
        ] {
            if !(value <= limit) {
                return Err(Error::DetectionFailure {
                    index,
                    defect: name.into(),
                    value,
                    tolerance: limit,
                });
            }
        }
    }

    let alpha = certificates
        .iter()
        .map(|c| c.decay_fit.alpha)
        .fold(f64::INFINITY, f64::min);
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::DetectionFailure {
            index: 0,
            defect: "decay rate".into(),
            value: alpha,
            tolerance: 0.0,
        });
    }
    let k_samples: Vec<f64> = certificates
        .iter()
        .map(|c| bound_at_rate(&c.green_norms, cfg.window, alpha))
        .collect();
    let proj = certificates.iter().map(|c| c.p.clone()).collect();
    let data = DichotomyData::new(cocycle.clone(), *omega, m, proj, alpha, k_samples)?;
    let defects = data.defects().map_err(|e| match e {
        Error::SingularRestriction { index, ratio } => Error::DetectionFailure {
            index,
            defect: "unstable restriction".into(),
            value: ratio,
            tolerance: crate::green::SINGULAR_RESTRICTION_TOL,
        },
        other => other,
    })?;
    for (name, value, limit) in [
        ("assembled idempotence", defects.idempotence, tol.idempotence),
        ("assembled equivariance", defects.equivariance, tol.equivariance),
        ("decay bound", defects.decay_slack, 1.0 + tol.decay_slack),
    ] {
        if !(value <= limit) {
            return Err(Error::DetectionFailure {
                index: 0,
                defect: name.into(),
                value,
                tolerance: limit,
            });
        }
    }
    let temperedness = if m >= 2 {
        temperedness_estimate(data.k_samples(), 1).ok()
    } else {
        None
    };
    Ok(Detection {
        data,
        certificates,
        defects,
        temperedness,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{BaseDriver, Generator};
    use crate::linalg::rotation2;
    use approx::assert_relative_eq;

    fn diag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_row_slice(v))
    }

    fn hyperbolic() -> Cocycle {
        Cocycle::new(BaseDriver::golden_rotation(), Generator::constant_diag(&[0.5, 2.0])).unwrap()
    }

    fn e(d: usize, j: usize) -> DVector<f64> {
        let mut v = DVector::zeros(d);
        v[j] = 1.0;
        v
    }

    #[test]
    fn homogeneous_solution_is_zero() {
        let f = WindowedSequence::zeros(-8, 8, 2);
        let p = WindowProblem::from_cocycle(&hyperbolic(), &State::Phase(0.0), f, BoundaryPenalty::Uniform).unwrap();
        let x = solve_window(&p).unwrap();
        assert!(x.values().iter().all(|v| v.norm() < 1e-300));
    }

    #[test]
    fn delta_input_solution() {
        let f = WindowedSequence::delta(-8, 8, 0, e(2, 0));
        let p = WindowProblem::from_cocycle(&hyperbolic(), &State::Phase(0.0), f, BoundaryPenalty::Uniform).unwrap();
        let x = solve_window(&p).unwrap();
        for n in -8..=8 {
            if n >= 0 {
                assert!((x.get(n) - e(2, 0) * 0.5f64.powi(n as i32)).norm() < 2f64.powi(-16));
            } else {
                assert!(x.get(n).norm() <= 2f64.powi(-8));
            }
        }
    }

    #[test]
    fn degenerate_window_returns_zero() {
        let f = WindowedSequence::delta(0, 0, 0, e(2, 1));
        let p = WindowProblem::from_cocycle(&hyperbolic(), &State::Phase(0.0), f, BoundaryPenalty::Uniform).unwrap();
        assert_eq!(solve_window(&p).unwrap(), WindowedSequence::zeros(0, 0, 2));
    }

    #[test]
    fn rank_deficiency_reported() {
        let c = Cocycle::new(BaseDriver::IntegerShift, Generator::constant_diag(&[0.0, 1.0])).unwrap();
        let f = WindowedSequence::delta(-6, 6, 0, e(2, 0));
        let p = WindowProblem::from_cocycle(&c, &State::Index(0), f, BoundaryPenalty::Exponential(-1000.0)).unwrap();
        assert!(matches!(solve_window(&p), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn window_mismatch() {
        let solver = WindowSolver::from_cocycle(&hyperbolic(), &State::Phase(0.0), 5).unwrap();
        let f = WindowedSequence::zeros(-4, 4, 2);
        assert!(matches!(solver.solve(&f, BoundaryPenalty::Uniform), Err(Error::WindowMismatch { .. })));
    }

    #[test]
    fn green_entries_of_constant_system() {
        let c = hyperbolic();
        let w = State::Phase(0.3);
        let n = 12;
        let tol = 2f64.powi(-2 * n as i32);
        let g00 = green_from_deltas(&c, &w, n, 0.3, 0, 0).unwrap();
        assert!((g00 - diag(&[1.0, 0.0])).norm() <= tol);
        let g20 = green_from_deltas(&c, &w, n, 0.3, 2, 0).unwrap();
        assert!((g20 - diag(&[0.25, 0.0])).norm() <= tol);
        let gm10 = green_from_deltas(&c, &w, n, 0.3, -1, 0).unwrap();
        assert!((gm10 - diag(&[0.0, -0.5])).norm() <= tol);
    }

    #[test]
    fn agreement_examples() {
        let w = State::Phase(0.1);
        let pairs = default_sample_pairs(16);
        let pairs24 = default_sample_pairs(24);
        assert!(check_pm_agreement(&hyperbolic(), &w, 24, 0.3, &pairs24).unwrap() <= 1e-10);
        let scalar = Cocycle::new(BaseDriver::golden_rotation(), Generator::constant_diag(&[0.5])).unwrap();
        assert!(check_pm_agreement(&scalar, &w, 40, 0.3, &default_sample_pairs(40)).unwrap() <= 1e-15);
        let rot = Cocycle::new(BaseDriver::golden_rotation(), Generator::Constant(rotation2(std::f64::consts::FRAC_PI_2)))
            .unwrap();
        assert!(check_pm_agreement(&rot, &w, 16, 0.3, &pairs).unwrap() > 0.5);
        assert!(check_pm_agreement(&rot, &w, 16, 0.0, &pairs).is_err());
    }

    #[test]
    fn projector_of_constant_system() {
        let cert = extract_projector(&hyperbolic(), &State::Phase(0.4), 20, 0.3, None, &Tolerances::default()).unwrap();
        assert!((&cert.p - diag(&[1.0, 0.0])).norm() <= 2f64.powi(-40) + 1e-12);
        assert!(cert.idempotence_defect < 1e-12 && cert.equivariance_defect < 1e-12);
        assert_relative_eq!(cert.decay_fit.alpha, 2f64.ln(), epsilon = 1e-9);
        assert_relative_eq!(cert.decay_fit.k, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn identity_cocycle_is_not_a_projection() {
        let c = Cocycle::new(BaseDriver::golden_rotation(), Generator::constant_diag(&[1.0, 1.0])).unwrap();
        let r = extract_projector(&c, &State::Phase(0.4), 16, 0.3, None, &Tolerances::default());
        assert!(matches!(r, Err(Error::NotAProjection { .. })), "{r:?}");
    }

    #[test]
    fn classification_of_basis_vectors() {
        let c = hyperbolic();
        let w = State::Phase(0.0);
        let s = classify_vector(&c, &w, &e(2, 0), 20, 0.05, DEFAULT_CONDITION_CAP).unwrap();
        assert_eq!(s.class, VectorClass::Stable);
        assert_relative_eq!(s.forward_slope, -2f64.ln(), epsilon = 1e-12);
        let u = classify_vector(&c, &w, &e(2, 1), 20, 0.05, DEFAULT_CONDITION_CAP).unwrap();
        assert_eq!(u.class, VectorClass::Unstable);
        assert_relative_eq!(u.forward_slope, 2f64.ln(), epsilon = 1e-12);
        let v = DVector::from_vec(vec![1.0, 1.0]);
        let n = classify_vector(&c, &w, &v, 20, 0.05, DEFAULT_CONDITION_CAP).unwrap();
        assert_eq!(n.class, VectorClass::Neither);
        assert!(n.forward_slope > 0.6 && n.backward_slope > 0.6);
    }

    #[test]
    fn ill_conditioned_backward_flagged() {
        let c = Cocycle::new(BaseDriver::IntegerShift, Generator::constant_diag(&[1e-30, 2.0])).unwrap();
        let r = classify_vector(&c, &State::Index(0), &e(2, 1), 10, 0.05, 1e20);
        assert!(matches!(r, Err(Error::IllConditionedBackward { .. })));
    }

    #[test]
    fn detection_of_constant_system() {
        let det = detect_dichotomy(&hyperbolic(), &State::Phase(0.2), &DetectConfig::new(24, 0.3)).unwrap();
        assert_eq!(det.data.half_width(), 12);
        for p in det.data.projections() {
            assert!((p - diag(&[1.0, 0.0])).norm() < 1e-12);
        }
        assert_relative_eq!(det.data.alpha, 2f64.ln(), epsilon = 1e-9);
        assert!(det.defects.passes(1e-10, 1e-6));
    }

    #[test]
    fn detection_fails_for_rotation() {
        let rot = Cocycle::new(
            BaseDriver::golden_rotation(),
            Generator::Constant(rotation2(std::f64::consts::PI * (5f64.sqrt() - 1.0))),
        )
        .unwrap();
        let r = detect_dichotomy(&rot, &State::Phase(0.2), &DetectConfig::new(24, 0.3));
        assert!(matches!(r, Err(Error::DetectionFailure { .. })), "{r:?}");
    }
}
