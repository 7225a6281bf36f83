//! Green functions of a given dichotomy, the convolution solution operator and the
//! admissibility constants.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::dynamics::{Cocycle, OrbitSegment, State};
use crate::error::{Error, Result};
use crate::linalg::{op_norm, pinv, range_basis, singular_values_desc};
use crate::weighted::WindowedSequence;

/// Smallest admissible `sigma_min(A U) / |A|` on an unstable fibre.
pub const SINGULAR_RESTRICTION_TOL: f64 = 1e-14;

/// Projection field, exponent and bound samples of a dichotomy on the window `[-M, M]`
/// of the orbit through `base`.
#[derive(Clone, Debug)]
pub struct DichotomyData {
    cocycle: Cocycle,
    segment: OrbitSegment,
    half_width: i64,
    proj: Vec<DMatrix<f64>>,
    pub alpha: f64,
    k_samples: Vec<f64>,
}

/// Worst invariant violations of a [`DichotomyData`].
#[derive(Clone, Debug, PartialEq)]
pub struct DichotomyDefects {
    pub idempotence: f64,
    pub equivariance: f64,
    pub decay_slack: f64,
}

impl DichotomyDefects {
    pub fn passes(&self, tol: f64, slack: f64) -> bool {
        self.idempotence <= tol && self.equivariance <= tol && self.decay_slack <= 1.0 + slack
    }
}

impl DichotomyData {
    pub fn new(
        cocycle: Cocycle,
        base: State,
        half_width: i64,
        proj: Vec<DMatrix<f64>>,
        alpha: f64,
        k_samples: Vec<f64>,
    ) -> Result<Self> {
        cocycle.driver().check_state(&base)?;
        if half_width < 0 {
            return Err(Error::InvalidInput(format!("negative half width {half_width}")));
        }
        let len = (2 * half_width + 1) as usize;
        if proj.len() != len || k_samples.len() != len {
            return Err(Error::InvalidInput(format!(
                "dichotomy data needs {len} projections and bounds, got {} and {}",
                proj.len(),
                k_samples.len()
            )));
        }
        let d = cocycle.dim();
        if proj.iter().any(|p| p.nrows() != d || p.ncols() != d) {
            return Err(Error::InvalidInput("projection has the wrong shape".into()));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidInput(format!("alpha must be positive, got {alpha}")));
        }
        if k_samples.iter().any(|k| !(*k > 0.0 && k.is_finite())) {
            return Err(Error::InvalidInput("bound samples must be positive".into()));
        }
        let segment = cocycle.orbit(&base, -half_width, half_width);
        Ok(DichotomyData {
            cocycle,
            segment,
            half_width,
            proj,
            alpha,
            k_samples,
        })
    }

    /// The same projection and bound at every index.
    pub fn uniform(
        cocycle: Cocycle,
        base: State,
        half_width: i64,
        proj: DMatrix<f64>,
        alpha: f64,
        k: f64,
    ) -> Result<Self> {
        let len = (2 * half_width.max(0) + 1) as usize;
        Self::new(cocycle, base, half_width, vec![proj; len], alpha, vec![k; len])
    }

    pub fn cocycle(&self) -> &Cocycle {
        &self.cocycle
    }

    pub fn base(&self) -> &State {
        &self.segment.base
    }

    pub fn half_width(&self) -> i64 {
        self.half_width
    }

    pub fn dim(&self) -> usize {
        self.cocycle.dim()
    }

    pub fn segment(&self) -> &OrbitSegment {
        &self.segment
    }

    fn idx(&self, n: i64) -> usize {
        debug_assert!(n.abs() <= self.half_width, "index {n} outside window");
        (n + self.half_width) as usize
    }

    /// `Pi^s(theta^n omega)`.
    pub fn proj(&self, n: i64) -> &DMatrix<f64> {
        &self.proj[self.idx(n)]
    }

    /// `Pi^u(theta^n omega) = Id - Pi^s(theta^n omega)`.
    pub fn proj_u(&self, n: i64) -> DMatrix<f64> {
        DMatrix::identity(self.dim(), self.dim()) - self.proj(n)
    }

    pub fn k(&self, n: i64) -> f64 {
        self.k_samples[self.idx(n)]
    }

    pub fn k_samples(&self) -> &[f64] {
        &self.k_samples
    }

    pub fn projections(&self) -> &[DMatrix<f64>] {
        &self.proj
    }

    /// `A(theta^n omega)`.
    pub fn matrix(&self, n: i64) -> &DMatrix<f64> {
        self.segment.matrix(n)
    }

    /// Replaces exponent and bounds, keeping the projection field.
    pub fn with_bounds(&self, alpha: f64, k_samples: Vec<f64>) -> Result<Self> {
        Self::new(
            self.cocycle.clone(),
            *self.base(),
            self.half_width,
            self.proj.clone(),
            alpha,
            k_samples,
        )
    }

    /// Inverse of `A(theta^j omega)` restricted to the unstable fibre at `j`, as a map
    /// from the unstable fibre at `j + 1`.
    fn backward_step(&self, j: i64) -> Result<DMatrix<f64>> {
        let u = range_basis(&self.proj_u(j), 0.5);
        let d = self.dim();
        if u.ncols() == 0 {
            return Ok(DMatrix::zeros(d, d));
        }
        let a = self.matrix(j);
        let au = a * &u;
        let s = singular_values_desc(&au);
        let ratio = s.last().copied().unwrap_or(0.0) / op_norm(a).max(f64::MIN_POSITIVE);
        if !(ratio > SINGULAR_RESTRICTION_TOL) {
            return Err(Error::SingularRestriction { index: j, ratio });
        }
        Ok(&u * pinv(&au, 0.0))
    }

    fn backward_steps(&self) -> Result<Vec<DMatrix<f64>>> {
        (-self.half_width..self.half_width)
            .map(|j| self.backward_step(j))
            .collect()
    }

    /// `Phi(n, theta^m omega) Pi^u(theta^m omega)` for `n <= 0`.
    pub fn unstable_backward(&self, m: i64, n: i64) -> Result<DMatrix<f64>> {
        if n > 0 || m + n < -self.half_width || m > self.half_width {
            return Err(Error::InvalidInput(format!(
                "backward step ({m}, {n}) leaves the window [-{0}, {0}]",
                self.half_width
            )));
        }
        let mut x = self.proj_u(m);
        for j in ((m + n)..m).rev() {
            x = self.backward_step(j)? * x;
        }
        Ok(x)
    }

    /// `Phi(n, theta^m omega) Pi^s(theta^m omega)` for `n >= 0`, re-projected every step.
    pub fn stable_forward(&self, m: i64, n: i64) -> Result<DMatrix<f64>> {
        if n < 0 || m < -self.half_width || m + n > self.half_width {
            return Err(Error::InvalidInput(format!(
                "forward step ({m}, {n}) leaves the window [-{0}, {0}]",
                self.half_width
            )));
        }
        let mut x = self.proj(m).clone();
        for j in m..(m + n) {
            x = self.proj(j + 1) * (self.matrix(j) * x);
        }
        Ok(x)
    }

    /// Largest `|P^2 - P|` over the window.
    pub fn idempotence_defect(&self) -> f64 {
        self.proj
            .iter()
            .map(|p| op_norm(&(p * p - p)))
            .fold(0.0, f64::max)
    }

    /// Largest `|P(n+1) A(n) - A(n) P(n)| / (|A(n)| max(1, |P(n)|))` over the window.
    pub fn equivariance_defect(&self) -> f64 {
        (-self.half_width..self.half_width)
            .map(|n| {
                let a = self.matrix(n);
                let p = self.proj(n);
                let num = op_norm(&(self.proj(n + 1) * a - a * p));
                num / (op_norm(a) * op_norm(p).max(1.0)).max(f64::MIN_POSITIVE)
            })
            .fold(0.0, f64::max)
    }

    pub fn defects(&self) -> Result<DichotomyDefects> {
        let table = GreenTable::build(self)?;
        Ok(DichotomyDefects {
            idempotence: self.idempotence_defect(),
            equivariance: self.equivariance_defect(),
            decay_slack: green_bound_check(&table, 0.0).max_slack,
        })
    }
}

/// `G(n, omega)` at the base point: `Phi(n) Pi^s` for `n >= 0`, `-Phi(n) Pi^u` for `n < 0`.
pub fn green(dich: &DichotomyData, n: i64) -> Result<DMatrix<f64>> {
    if n.abs() > dich.half_width {
        return Err(Error::InvalidInput(format!(
            "index {n} outside the window [-{0}, {0}]",
            dich.half_width
        )));
    }
    if n >= 0 {
        dich.stable_forward(0, n)
    } else {
        Ok(-dich.unstable_backward(0, n)?)
    }
}

/// `G(n - k, theta^k omega)` for all `n, k` in `[-M, M]`, with the bound used to certify it.
#[derive(Clone, Debug)]
pub struct GreenTable {
    n_lo: i64,
    n_hi: i64,
    dim: usize,
    data: Vec<DMatrix<f64>>,
    pub alpha: f64,
    pub k_samples: Vec<f64>,
}

impl GreenTable {
    pub fn build(dich: &DichotomyData) -> Result<Self> {
        let m = dich.half_width;
        let back = dich.backward_steps()?;
        let len = (2 * m + 1) as usize;
        let columns: Vec<Vec<DMatrix<f64>>> = (-m..=m)
            .into_par_iter()
            .map(|k| {
                let mut col = vec![DMatrix::zeros(dich.dim(), dich.dim()); len];
                let mut x = dich.proj(k).clone();
                col[(k + m) as usize] = x.clone();
                for j in k..m {
                    x = dich.proj(j + 1) * (dich.matrix(j) * x);
                    col[(j + 1 + m) as usize] = x.clone();
                }
                let mut x = dich.proj_u(k);
                for j in (-m..k).rev() {
                    x = &back[(j + m) as usize] * x;
                    col[(j + m) as usize] = -&x;
                }
                col
            })
            .collect();
        let mut data = Vec::with_capacity(len * len);
        for n in 0..len {
            for col in &columns {
                data.push(col[n].clone());
            }
        }
        Ok(GreenTable {
            n_lo: -m,
            n_hi: m,
            dim: dich.dim(),
            data,
            alpha: dich.alpha,
            k_samples: dich.k_samples.clone(),
        })
    }

    /// Table from explicit entries, `entries[(n - n_lo) * len + (k - n_lo)]`.
    pub fn from_entries(
        n_lo: i64,
        n_hi: i64,
        entries: Vec<DMatrix<f64>>,
        alpha: f64,
        k_samples: Vec<f64>,
    ) -> Result<Self> {
        let len = (n_hi - n_lo + 1) as usize;
        if n_hi < n_lo || entries.len() != len * len || k_samples.len() != len {
            return Err(Error::InvalidInput("green table entries do not match window".into()));
        }
        let dim = entries[0].nrows();
        Ok(GreenTable {
            n_lo,
            n_hi,
            dim,
            data: entries,
            alpha,
            k_samples,
        })
    }

    pub fn n_lo(&self) -> i64 {
        self.n_lo
    }

    pub fn n_hi(&self) -> i64 {
        self.n_hi
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn len(&self) -> usize {
        (self.n_hi - self.n_lo + 1) as usize
    }

    /// `G(n - k, theta^k omega)`.
    pub fn get(&self, n: i64, k: i64) -> &DMatrix<f64> {
        &self.data[(n - self.n_lo) as usize * self.len() + (k - self.n_lo) as usize]
    }

    pub fn k(&self, k: i64) -> f64 {
        self.k_samples[(k - self.n_lo) as usize]
    }

    /// Same entries certified against another exponent and bound.
    pub fn with_bound(&self, alpha: f64, k_samples: Vec<f64>) -> Self {
        GreenTable {
            alpha,
            k_samples,
            ..self.clone()
        }
    }

    /// Rows `(n, k, row, col, value)` in row-major order.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,k,row,col,value\n");
        for n in self.n_lo..=self.n_hi {
            for k in self.n_lo..=self.n_hi {
                let g = self.get(n, k);
                for r in 0..self.dim {
                    for c in 0..self.dim {
                        out.push_str(&format!("{n},{k},{r},{c},{:?}\n", g[(r, c)]));
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GreenBoundReport {
    /// `max |G(n, k)| e^{alpha |n - k|} / K(k)`.
    pub max_slack: f64,
    pub argmax: (i64, i64),
    pub pass: bool,
}

/// Checks `|G(n - k, theta^k omega)| <= K(theta^k omega) e^{-alpha |n - k|}` over the table.
pub fn green_bound_check(table: &GreenTable, slack_tolerance: f64) -> GreenBoundReport {
    let mut best = (0.0f64, (0, 0));
    for n in table.n_lo..=table.n_hi {
        for k in table.n_lo..=table.n_hi {
            let g = op_norm(table.get(n, k));
            if g == 0.0 {
                continue;
            }
            let r = (g.ln() + table.alpha * (n - k).abs() as f64 - table.k(k).ln()).exp();
            if r > best.0 {
                best = (r, (n, k));
            }
        }
    }
    GreenBoundReport {
        max_slack: best.0,
        argmax: best.1,
        pass: best.0 <= 1.0 + slack_tolerance,
    }
}

#[derive(Clone, Debug)]
pub struct ConvolutionSolution {
    pub x: WindowedSequence,
    /// Bound on the contribution of inputs beyond the window with the same sup norm.
    pub tail_bound: Vec<f64>,
    /// `max |x(n+1) - A(n) x(n) - f(n+1)|` over the window.
    pub residual: f64,
}

/// `x(n) = sum_k G(n - k, theta^k omega) f(k)` over the data window.
pub fn solve_convolution(dich: &DichotomyData, f: &WindowedSequence) -> Result<ConvolutionSolution> {
    let table = GreenTable::build(dich)?;
    convolve(dich, &table, f)
}

/// As [`solve_convolution`] with a prebuilt table.
pub fn convolve(dich: &DichotomyData, table: &GreenTable, f: &WindowedSequence) -> Result<ConvolutionSolution> {
    let m = dich.half_width;
    if f.n_lo() != -m || f.n_hi() != m {
        return Err(Error::WindowMismatch {
            expected_lo: -m,
            expected_hi: m,
            got_lo: f.n_lo(),
            got_hi: f.n_hi(),
        });
    }
    if f.dim() != dich.dim() {
        return Err(Error::InvalidInput("input dimension differs from the cocycle".into()));
    }
    if f.values().iter().any(|v| v.iter().any(|x| !x.is_finite())) {
        return Err(Error::InvalidInput("input is not finite".into()));
    }
    let values: Vec<DVector<f64>> = (-m..=m)
        .map(|n| {
            let mut acc = DVector::zeros(dich.dim());
            for (k, v) in f.iter() {
                acc += table.get(n, k) * v;
            }
            acc
        })
        .collect();
    let x = WindowedSequence::new(-m, values)?;
    let residual = (-m..m)
        .map(|n| (x.get(n + 1) - dich.matrix(n) * x.get(n) - f.get(n + 1)).norm())
        .fold(0.0, f64::max);
    let sup_f = f.values().iter().map(|v| v.norm()).fold(0.0, f64::max);
    let k_max = dich.k_samples.iter().copied().fold(0.0, f64::max);
    let q = (-dich.alpha).exp();
    let tail_bound = (-m..=m)
        .map(|n| {
            let near = (-dich.alpha * (m + 1 - n) as f64).exp();
            let far = (-dich.alpha * (m + 1 + n) as f64).exp();
            k_max * sup_f * (near + far) / (1.0 - q)
        })
        .collect();
    Ok(ConvolutionSolution {
        x,
        tail_bound,
        residual,
    })
}

fn check_exponents(alpha: f64, beta: f64) -> Result<()> {
    if !(alpha > 0.0) || !(beta.abs() < alpha) {
        return Err(Error::Domain(format!(
            "need alpha > 0 and |beta| < alpha, got alpha = {alpha}, beta = {beta}"
        )));
    }
    Ok(())
}

/// `(1 + e^{-(alpha - beta)}) / (1 - e^{-(alpha - |beta|)})`.
pub fn gamma(alpha: f64, beta: f64) -> Result<f64> {
    check_exponents(alpha, beta)?;
    Ok((1.0 + (-(alpha - beta)).exp()) / -(-(alpha - beta.abs())).exp_m1())
}

/// `(1 + e^{-(alpha - |beta|)}) / (1 - e^{-(alpha - |beta|)})`, the bound for the
/// absolute-exponent weights.
pub fn gamma_tilde(alpha: f64, beta: f64) -> Result<f64> {
    check_exponents(alpha, beta)?;
    let gap = alpha - beta.abs();
    Ok((1.0 + (-gap).exp()) / -(-gap).exp_m1())
}

/// The geometric sum `1/(1 - e^{-(alpha+beta)}) + e^{-(alpha-beta)}/(1 - e^{-(alpha-beta)})`
/// that [`gamma`] majorizes; attained by aligned inputs when the Green bound is tight.
pub fn gamma_sharp(alpha: f64, beta: f64) -> Result<f64> {
    check_exponents(alpha, beta)?;
    Ok(1.0 / -(-(alpha + beta)).exp_m1() + (-(alpha - beta)).exp() / -(-(alpha - beta)).exp_m1())
}

/// `max(gamma_plus, gamma_minus)`.
pub fn rho_beta(gamma_plus: f64, gamma_minus: f64) -> f64 {
    gamma_plus.max(gamma_minus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{BaseDriver, Generator};
    use approx::assert_relative_eq;

    fn diag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_row_slice(v))
    }

    fn hyperbolic(m: i64) -> DichotomyData {
        let c = Cocycle::new(BaseDriver::golden_rotation(), Generator::constant_diag(&[0.5, 2.0])).unwrap();
        DichotomyData::uniform(c, State::Phase(0.2), m, diag(&[1.0, 0.0]), 2f64.ln(), 1.0).unwrap()
    }

    #[test]
    fn green_values() {
        let d = hyperbolic(5);
        assert_relative_eq!(green(&d, 2).unwrap(), diag(&[0.25, 0.0]), epsilon = 1e-15);
        assert_relative_eq!(green(&d, -1).unwrap(), diag(&[0.0, -0.5]), epsilon = 1e-15);
        assert_eq!(green(&d, 0).unwrap(), diag(&[1.0, 0.0]));
    }

    #[test]
    fn backward_unstable_values() {
        let d = hyperbolic(5);
        assert_relative_eq!(d.unstable_backward(0, -2).unwrap(), diag(&[0.0, 0.25]), epsilon = 1e-15);
        assert_eq!(d.unstable_backward(0, 0).unwrap(), diag(&[0.0, 1.0]));
    }

    #[test]
    fn staircase_backward_third_rate() {
        let c = Cocycle::new(BaseDriver::golden_rotation(), Generator::staircase()).unwrap();
        let d = DichotomyData::uniform(c.clone(), State::Phase(0.0), 3, diag(&[1.0, 1.0, 0.0]), 2f64.ln(), 1.0)
            .unwrap();
        let prev = c.driver().backward(&State::Phase(0.0));
        let rate = c.matrix(&prev)[(2, 2)];
        let g = d.unstable_backward(0, -1).unwrap();
        assert_relative_eq!(g, diag(&[0.0, 0.0, 1.0 / rate]), max_relative = 1e-14);
    }

    #[test]
    fn singular_restriction_detected() {
        let c = Cocycle::new(BaseDriver::IntegerShift, Generator::constant_diag(&[0.5, 0.0])).unwrap();
        let d = DichotomyData::uniform(c, State::Index(0), 3, diag(&[1.0, 0.0]), 0.5, 1.0).unwrap();
        assert!(matches!(d.unstable_backward(0, -1), Err(Error::SingularRestriction { .. })));
    }

    #[test]
    fn bound_check_equality_and_violation() {
        let d = hyperbolic(6);
        let t = GreenTable::build(&d).unwrap();
        let r = green_bound_check(&t, 1e-12);
        assert!(r.pass);
        assert_relative_eq!(r.max_slack, 1.0, epsilon = 1e-12);
        let bad = t.with_bound(2.0 * 2f64.ln(), t.k_samples.clone());
        let r = green_bound_check(&bad, 1e-12);
        assert!(!r.pass);
        assert_relative_eq!(r.max_slack, 2f64.powi(12), max_relative = 1e-12);
    }

    #[test]
    fn convolution_of_delta() {
        let d = hyperbolic(6);
        let f = WindowedSequence::delta(-6, 6, 0, DVector::from_vec(vec![1.0, 0.0]));
        let sol = solve_convolution(&d, &f).unwrap();
        for n in -6..=6 {
            let want = if n >= 0 { 0.5f64.powi(n as i32) } else { 0.0 };
            assert!((sol.x.get(n)[0] - want).abs() < 1e-15 && sol.x.get(n)[1] == 0.0);
        }
        assert!(sol.residual < 1e-15);
        let zero = solve_convolution(&d, &WindowedSequence::zeros(-6, 6, 2)).unwrap();
        assert!(zero.x.values().iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn convolution_window_mismatch() {
        let d = hyperbolic(4);
        let f = WindowedSequence::zeros(-3, 3, 2);
        assert!(matches!(solve_convolution(&d, &f), Err(Error::WindowMismatch { .. })));
    }

    #[test]
    fn gamma_values() {
        let ln2 = 2f64.ln();
        assert_relative_eq!(gamma(ln2, 0.0).unwrap(), 3.0, max_relative = 1e-15);
        assert_relative_eq!(gamma(1.0, 0.5).unwrap(), 4.082988165073597, max_relative = 1e-14);
        assert_relative_eq!(gamma(40.0, 0.1).unwrap(), 1.0, epsilon = 1e-15);
        assert_relative_eq!(gamma(ln2, 0.2).unwrap(), 4.137444348695578, max_relative = 1e-14);
        assert_relative_eq!(gamma(ln2, -0.2).unwrap(), 3.620268094473727, max_relative = 1e-14);
        assert!(matches!(gamma(ln2, 0.7), Err(Error::Domain(_))));
    }

    #[test]
    fn gamma_tilde_values() {
        let ln2 = 2f64.ln();
        let at0 = (1.0 + 0.5) / (1.0 - 0.5);
        assert_relative_eq!(gamma_tilde(ln2, 0.0).unwrap(), at0, max_relative = 1e-15);
        assert_relative_eq!(gamma_tilde(ln2, 0.3).unwrap(), 5.152509711138800, max_relative = 1e-14);
        assert_eq!(gamma_tilde(ln2, 0.3).unwrap(), gamma_tilde(ln2, -0.3).unwrap());
        assert!(gamma_tilde(1.0, -1.0).is_err());
    }

    #[test]
    fn rho_beta_is_max() {
        assert_eq!(rho_beta(3.0, 5.0), 5.0);
        assert_eq!(rho_beta(2.5, 2.5), 2.5);
        let ln2 = 2f64.ln();
        let r = rho_beta(gamma(ln2, 0.2).unwrap(), gamma(ln2, -0.2).unwrap());
        assert_relative_eq!(r, 4.137444348695578, max_relative = 1e-14);
    }

    #[test]
    fn sharp_constant_below_gamma() {
        for (a, b) in [(2f64.ln(), 0.3), (2f64.ln(), -0.3), (1.0, 0.5), (1.0, -0.5)] {
            assert!(gamma_sharp(a, b).unwrap() < gamma(a, b).unwrap());
        }
        assert_relative_eq!(gamma_sharp(2f64.ln(), 0.0).unwrap(), 3.0, max_relative = 1e-15);
    }

    #[test]
    fn csv_layout() {
        let d = hyperbolic(1);
        let csv = GreenTable::build(&d).unwrap().to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "n,k,row,col,value");
        assert_eq!(lines.len(), 1 + 9 * 4);
        assert_eq!(lines[1], "-1,-1,0,0,1.0");
    }
}
