//! Weighted sup-norms of sequences on finite windows and the temperedness slope.

use nalgebra::DVector;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightVariant {
    /// `sup_n K(n) e^{-beta n} |f(n)|`
    Signed,
    /// `sup_n K(n) e^{-beta |n|} |f(n)|`
    Absolute,
}

/// Weight `K` sampled on a window together with the exponent `beta`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightSpec {
    n_lo: i64,
    k_samples: Vec<f64>,
    pub beta: f64,
    pub variant: WeightVariant,
    envelope: Option<(f64, f64)>,
}

impl WeightSpec {
    pub fn from_samples(n_lo: i64, k_samples: Vec<f64>, beta: f64, variant: WeightVariant) -> Result<Self> {
        if k_samples.is_empty() {
            return Err(Error::InvalidInput("weight has no samples".into()));
        }
        if let Some(bad) = k_samples.iter().find(|k| !(**k > 0.0 && k.is_finite())) {
            return Err(Error::InvalidInput(format!("weight sample {bad} is not positive")));
        }
        if !beta.is_finite() {
            return Err(Error::InvalidInput("beta is not finite".into()));
        }
        Ok(WeightSpec {
            n_lo,
            k_samples,
            beta,
            variant,
            envelope: None,
        })
    }

    /// `K == 1` on `[n_lo, n_hi]`.
    pub fn unit(n_lo: i64, n_hi: i64, beta: f64, variant: WeightVariant) -> Self {
        Self::envelope(1.0, 0.0, n_lo, n_hi, beta, variant).expect("unit weight is valid")
    }

    /// `K(n) = kappa e^{epsilon |n|}` on `[n_lo, n_hi]`.
    pub fn envelope(
        kappa: f64,
        epsilon: f64,
        n_lo: i64,
        n_hi: i64,
        beta: f64,
        variant: WeightVariant,
    ) -> Result<Self> {
        if !(kappa > 0.0) || !(epsilon >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "envelope needs kappa > 0 and epsilon >= 0, got ({kappa}, {epsilon})"
            )));
        }
        if n_lo > n_hi {
            return Err(Error::InvalidInput("empty weight window".into()));
        }
        let k_samples = (n_lo..=n_hi)
            .map(|n| kappa * (epsilon * n.unsigned_abs() as f64).exp())
            .collect();
        let mut w = Self::from_samples(n_lo, k_samples, beta, variant)?;
        w.envelope = Some((kappa, epsilon));
        Ok(w)
    }

    pub fn n_lo(&self) -> i64 {
        self.n_lo
    }

    pub fn n_hi(&self) -> i64 {
        self.n_lo + self.k_samples.len() as i64 - 1
    }

    pub fn k(&self, n: i64) -> f64 {
        self.k_samples[(n - self.n_lo) as usize]
    }

    pub fn samples(&self) -> &[f64] {
        &self.k_samples
    }

    pub fn deterministic_envelope(&self) -> Option<(f64, f64)> {
        self.envelope
    }

    /// Same weight multiplied by `c > 0`.
    pub fn scaled(&self, c: f64) -> Self {
        let mut w = self.clone();
        for k in &mut w.k_samples {
            *k *= c;
        }
        w.envelope = w.envelope.map(|(kappa, eps)| (kappa * c, eps));
        w
    }

    /// Same samples with another exponent.
    pub fn with_beta(&self, beta: f64) -> Self {
        let mut w = self.clone();
        w.beta = beta;
        w
    }

    fn exponent(&self, n: i64) -> f64 {
        match self.variant {
            WeightVariant::Signed => -self.beta * n as f64,
            WeightVariant::Absolute => -self.beta * n.unsigned_abs() as f64,
        }
    }
}

/// Vectors `f(n)` for `n` in `[n_lo, n_hi]`.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowedSequence {
    n_lo: i64,
    values: Vec<DVector<f64>>,
}

impl WindowedSequence {
    pub fn new(n_lo: i64, values: Vec<DVector<f64>>) -> Result<Self> {
        let Some(first) = values.first() else {
            return Err(Error::InvalidInput("sequence window is empty".into()));
        };
        let d = first.len();
        if values.iter().any(|v| v.len() != d) {
            return Err(Error::InvalidInput("sequence entries differ in dimension".into()));
        }
        Ok(WindowedSequence { n_lo, values })
    }

    pub fn zeros(n_lo: i64, n_hi: i64, d: usize) -> Self {
        WindowedSequence {
            n_lo,
            values: vec![DVector::zeros(d); (n_hi - n_lo + 1) as usize],
        }
    }

    /// `value` at index `k`, zero elsewhere.
    pub fn delta(n_lo: i64, n_hi: i64, k: i64, value: DVector<f64>) -> Self {
        let mut s = Self::zeros(n_lo, n_hi, value.len());
        s.values[(k - n_lo) as usize] = value;
        s
    }

    pub fn from_fn(n_lo: i64, n_hi: i64, f: impl FnMut(i64) -> DVector<f64>) -> Result<Self> {
        Self::new(n_lo, (n_lo..=n_hi).map(f).collect())
    }

    pub fn n_lo(&self) -> i64 {
        self.n_lo
    }

    pub fn n_hi(&self) -> i64 {
        self.n_lo + self.values.len() as i64 - 1
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    pub fn get(&self, n: i64) -> &DVector<f64> {
        &self.values[(n - self.n_lo) as usize]
    }

    pub fn get_mut(&mut self, n: i64) -> &mut DVector<f64> {
        &mut self.values[(n - self.n_lo) as usize]
    }

    pub fn values(&self) -> &[DVector<f64>] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, &DVector<f64>)> {
        self.values.iter().enumerate().map(|(i, v)| (self.n_lo + i as i64, v))
    }

    pub fn scaled(&self, c: f64) -> Self {
        WindowedSequence {
            n_lo: self.n_lo,
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }

    /// Restriction to `[lo, hi]`, which must lie inside the window.
    pub fn restrict(&self, lo: i64, hi: i64) -> Self {
        WindowedSequence {
            n_lo: lo,
            values: (lo..=hi).map(|n| self.get(n).clone()).collect(),
        }
    }

    /// Extension by zeros to `[lo, hi]`, which must contain the window.
    pub fn pad(&self, lo: i64, hi: i64) -> Self {
        let mut s = Self::zeros(lo, hi, self.dim());
        for (n, v) in self.iter() {
            *s.get_mut(n) = v.clone();
        }
        s
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

/// `sup_n K(n) e^{-beta n} |f(n)|` or its absolute-exponent variant.
pub fn weighted_norm(f: &WindowedSequence, w: &WeightSpec) -> Result<f64> {
    if f.n_lo() != w.n_lo() || f.n_hi() != w.n_hi() {
        return Err(Error::WindowMismatch {
            expected_lo: w.n_lo(),
            expected_hi: w.n_hi(),
            got_lo: f.n_lo(),
            got_hi: f.n_hi(),
        });
    }
    Ok(f.iter()
        .map(|(n, v)| {
            let r = v.norm();
            if r == 0.0 {
                0.0
            } else {
                (w.k(n).ln() + w.exponent(n) + r.ln()).exp()
            }
        })
        .fold(0.0, f64::max))
}

/// `max_{n_min <= |n| <= N} |ln K(n)| / |n|` for samples on `[-N, N]`.
pub fn temperedness_estimate(k_samples: &[f64], n_min: i64) -> Result<f64> {
    if k_samples.len() % 2 == 0 {
        return Err(Error::InvalidInput("samples must cover a symmetric window [-N, N]".into()));
    }
    let big_n = (k_samples.len() / 2) as i64;
    if !(n_min >= 1 && big_n > n_min) {
        return Err(Error::InvalidInput(format!(
            "temperedness needs N > n_min >= 1, got N = {big_n}, n_min = {n_min}"
        )));
    }
    let mut best = 0.0f64;
    for n in (-big_n..=-n_min).chain(n_min..=big_n) {
        let k = k_samples[(n + big_n) as usize];
        best = best.max(k.ln().abs() / n.unsigned_abs() as f64);
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn e1(d: usize) -> DVector<f64> {
        let mut v = DVector::zeros(d);
        v[0] = 1.0;
        v
    }

    #[test]
    fn constant_sequence_norm() {
        let f = WindowedSequence::from_fn(-4, 4, |_| DVector::from_vec(vec![1.0, 0.0])).unwrap();
        let w = WeightSpec::unit(-4, 4, 0.0, WeightVariant::Signed);
        assert_eq!(weighted_norm(&f, &w).unwrap(), 1.0);
    }

    #[test]
    fn weight_cancels_growth() {
        let f = WindowedSequence::from_fn(-3, 3, |n| e1(2) * 2f64.powi(n as i32)).unwrap();
        let w = WeightSpec::unit(-3, 3, 2f64.ln(), WeightVariant::Signed);
        assert!((weighted_norm(&f, &w).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn exponential_weight_norm() {
        let f = WindowedSequence::from_fn(-10, 10, |_| e1(2)).unwrap();
        let w = WeightSpec::envelope(1.0, 0.1, -10, 10, 0.0, WeightVariant::Signed).unwrap();
        assert!((weighted_norm(&f, &w).unwrap() - 1f64.exp()).abs() < 1e-14);
    }

    #[test]
    fn mismatched_window() {
        let f = WindowedSequence::zeros(-2, 2, 1);
        let w = WeightSpec::unit(-3, 3, 0.0, WeightVariant::Signed);
        assert!(matches!(weighted_norm(&f, &w), Err(Error::WindowMismatch { .. })));
    }

    #[test]
    fn nonpositive_weight_rejected() {
        assert!(WeightSpec::from_samples(0, vec![1.0, 0.0], 0.0, WeightVariant::Signed).is_err());
    }

    #[test]
    fn temperedness_examples() {
        let ones = vec![1.0; 41];
        assert_eq!(temperedness_estimate(&ones, 5).unwrap(), 0.0);
        let expo: Vec<f64> = (-30i64..=30).map(|n| (0.05 * n.abs() as f64).exp()).collect();
        assert!((temperedness_estimate(&expo, 3).unwrap() - 0.05).abs() < 1e-15);
        let poly: Vec<f64> = (-100i64..=100).map(|n| ((1 + n.abs()) as f64).powi(2)).collect();
        let est = temperedness_estimate(&poly, 50).unwrap();
        // frozen: 2 ln(51) / 50, the maximum sits at |n| = 50
        assert!((est - 0.15727302530897303).abs() < 1e-15);
        assert!(est <= 2.0 * 101f64.ln() / 50.0);
    }

    #[test]
    fn temperedness_decreases_with_n_min_for_polynomial() {
        let est = |big_n: i64, n_min: i64| {
            let poly: Vec<f64> = (-big_n..=big_n).map(|n| ((1 + n.abs()) as f64).powi(2)).collect();
            temperedness_estimate(&poly, n_min).unwrap()
        };
        assert!(est(400, 200) < est(200, 100));
        assert!(est(200, 100) < est(100, 50));
    }

    proptest! {
        #[test]
        fn homogeneity(c in -50.0f64..50.0, beta in -0.5f64..0.5, seed in 0u64..1000) {
            let f = WindowedSequence::from_fn(-6, 6, |n| {
                DVector::from_vec(vec![((n as f64) * 1.3 + seed as f64).sin(), (n as f64 * 0.7).cos()])
            }).unwrap();
            let w = WeightSpec::envelope(1.5, 0.05, -6, 6, beta, WeightVariant::Signed).unwrap();
            let a = weighted_norm(&f.scaled(c), &w).unwrap();
            let b = c.abs() * weighted_norm(&f, &w).unwrap();
            prop_assert!((a - b).abs() <= 1e-13 * b.max(1e-300));
        }

        #[test]
        fn zero_padding_is_invisible(beta in -0.5f64..0.5, pad in 1i64..10) {
            let f = WindowedSequence::from_fn(-4, 4, |n| e1(2) * (1.0 + n as f64)).unwrap();
            let w = WeightSpec::unit(-4, 4, beta, WeightVariant::Absolute);
            let g = f.pad(-4 - pad, 4 + pad);
            let wg = WeightSpec::unit(-4 - pad, 4 + pad, beta, WeightVariant::Absolute);
            prop_assert_eq!(weighted_norm(&f, &w).unwrap(), weighted_norm(&g, &wg).unwrap());
        }

        #[test]
        fn variants_agree_on_forward_support(beta in 0.0f64..0.7, len in 1i64..12) {
            let f = WindowedSequence::from_fn(-5, len, |n| {
                if n < 0 { DVector::zeros(2) } else { e1(2) * (n as f64 + 0.5).ln().abs() }
            }).unwrap();
            let ws = WeightSpec::envelope(2.0, 0.01, -5, len, beta, WeightVariant::Signed).unwrap();
            let wa = WeightSpec::envelope(2.0, 0.01, -5, len, beta, WeightVariant::Absolute).unwrap();
            prop_assert_eq!(weighted_norm(&f, &ws).unwrap(), weighted_norm(&f, &wa).unwrap());
        }

        #[test]
        fn exponential_weight_slope(c in 0.01f64..1.0) {
            let k: Vec<f64> = (-200i64..=200).map(|n| (c * n.abs() as f64).exp()).collect();
            prop_assert!((temperedness_estimate(&k, 20).unwrap() - c).abs() < 1e-12);
        }
    }
}
