//! Base dynamical systems and the matrix cocycles they drive.
//!
//! A [`BaseDriver`] is an invertible measure-preserving map `theta` on a state
//! space; a [`Cocycle`] attaches a generator `omega -> A(omega)` to it and
//! evaluates the products `Phi(n, omega) = A(theta^{n-1} omega) ... A(omega)`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::green::DichotomyData;

/// A point of the base space.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum State {
    /// Phase in `[0, 1)` for rotations.
    Phase(f64),
    /// Integer position: the time for the integer shift, the offset into the
    /// symbol stream for the Bernoulli shift.
    Index(i64),
}

impl State {
    pub fn phase(&self) -> Option<f64> {
        match *self {
            State::Phase(x) => Some(x),
            State::Index(_) => None,
        }
    }

    pub fn index(&self) -> Option<i64> {
        match *self {
            State::Index(k) => Some(k),
            State::Phase(_) => None,
        }
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            State::Phase(x) => write!(f, "{x}"),
            State::Index(k) => write!(f, "#{k}"),
        }
    }
}

/// Invertible measure-preserving base map.
#[derive(Clone, Debug, PartialEq)]
pub enum BaseDriver {
    /// `omega -> omega + q mod 1`.
    Rotation { q: f64 },
    /// Two-sided shift on i.i.d. uniform symbols in `0..symbol_count`.
    Bernoulli { seed: u64, symbol_count: u32 },
    /// `n -> n + 1` on the integers; used for deterministic (nonautonomous) systems.
    IntegerShift,
}

impl BaseDriver {
    /// Rotation by the inverse golden ratio `(sqrt 5 - 1)/2`.
    pub fn golden_rotation() -> Self {
        BaseDriver::Rotation {
            q: (5f64.sqrt() - 1.0) / 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            BaseDriver::Rotation { q } if !(q > 0.0 && q < 1.0) => {
                Err(Error::InvalidInput(format!("rotation number {q} outside (0, 1)")))
            }
            BaseDriver::Bernoulli { symbol_count, .. } if symbol_count < 2 => Err(
                Error::InvalidInput(format!("symbol_count {symbol_count} must be at least 2")),
            ),
            _ => Ok(()),
        }
    }

    /// Checks that `state` lives in this driver's state space.
    pub fn check_state(&self, state: &State) -> Result<()> {
        match (self, state) {
            (BaseDriver::Rotation { .. }, State::Phase(x)) if (0.0..1.0).contains(x) => Ok(()),
            (BaseDriver::Bernoulli { .. } | BaseDriver::IntegerShift, State::Index(_)) => Ok(()),
            _ => Err(Error::InvalidInput(format!(
                "state {state} does not belong to driver {self:?}"
            ))),
        }
    }

    pub fn forward(&self, state: &State) -> State {
        match (self, *state) {
            (BaseDriver::Rotation { q }, State::Phase(x)) => {
                let mut y = x + q;
                if y >= 1.0 {
                    y -= 1.0;
                }
                State::Phase(y)
            }
            (_, State::Index(k)) => State::Index(k + 1),
            (_, s) => s,
        }
    }

    pub fn backward(&self, state: &State) -> State {
        match (self, *state) {
            (BaseDriver::Rotation { q }, State::Phase(x)) => {
                let mut y = x - q;
                if y < 0.0 {
                    y += 1.0;
                    if y >= 1.0 {
                        y = 0.0;
                    }
                }
                State::Phase(y)
            }
            (_, State::Index(k)) => State::Index(k - 1),
            (_, s) => s,
        }
    }

    /// `theta^n(state)`, composed one step at a time.
    pub fn step(&self, state: &State, n: i64) -> State {
        let mut s = *state;
        if n >= 0 {
            for _ in 0..n {
                s = self.forward(&s);
            }
        } else {
            for _ in 0..(-n) {
                s = self.backward(&s);
            }
        }
        s
    }

    /// The states `theta^n(state)` for `n` in `[n_lo, n_hi]`.
    pub fn orbit(&self, state: &State, n_lo: i64, n_hi: i64) -> Vec<State> {
        assert!(n_lo <= n_hi, "empty orbit range");
        let len = (n_hi - n_lo + 1) as usize;
        let mut out = vec![*state; len];
        let zero = -n_lo;
        let mut s = *state;
        for n in 1..=n_hi {
            s = self.forward(&s);
            if n >= n_lo {
                out[(n + zero) as usize] = s;
            }
        }
        let mut s = *state;
        for n in (n_lo..0).rev() {
            s = self.backward(&s);
            if n <= n_hi {
                out[(n + zero) as usize] = s;
            }
        }
        out
    }

    /// Symbol at absolute position `k` of the stream; a pure function of `(seed, k)`.
    pub fn symbol_at(seed: u64, symbol_count: u32, k: i64) -> u32 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        rng.random_range(0..symbol_count)
    }

    /// Zeroth symbol of a Bernoulli state.
    pub fn symbol(&self, state: &State) -> Option<u32> {
        match (self, state) {
            (
                BaseDriver::Bernoulli {
                    seed,
                    symbol_count,
                },
                State::Index(k),
            ) => Some(Self::symbol_at(*seed, *symbol_count, *k)),
            _ => None,
        }
    }

    /// Draws a state from the invariant probability measure.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<State> {
        match self {
            BaseDriver::Rotation { .. } => Ok(State::Phase(rng.random::<f64>())),
            BaseDriver::Bernoulli { .. } => Ok(State::Index(rng.random_range(-(1i64 << 40)..(1i64 << 40)))),
            BaseDriver::IntegerShift => Err(Error::InvalidInput(
                "the integer shift has no invariant probability measure".into(),
            )),
        }
    }
}

/// Piece index of the staircase partition `[1 - 1/i, 1 - 1/(i+1))`, capped at `i_max`.
pub fn staircase_piece(omega: f64, i_max: u32) -> u32 {
    let i = (1.0 / (1.0 - omega)).floor();
    if i.is_finite() && i < f64::from(i_max) {
        (i as u32).max(1)
    } else {
        i_max
    }
}

pub type GeneratorFn = Arc<dyn Fn(&State) -> DMatrix<f64> + Send + Sync>;

/// The one-step matrix `A(omega)` as a function of the base state.
#[derive(Clone)]
pub enum Generator {
    /// The same matrix at every state.
    Constant(DMatrix<f64>),
    /// `diag(e^{-(2i+1)}, 1/2, e^{2i+1})` on the `i`-th piece of the staircase partition
    /// of `[0, 1)`, with pieces beyond `i_max` sharing the `i_max` rates.
    Staircase { i_max: u32 },
    /// `base + sum_j xi_j * directions_j`.
    Perturbed {
        base: Box<Generator>,
        directions: Vec<DMatrix<f64>>,
        xi: Vec<f64>,
    },
    /// `blocks[(n - start) mod len]` for the integer shift.
    Table { start: i64, blocks: Vec<DMatrix<f64>> },
    /// One matrix per current symbol of a Bernoulli state.
    SymbolTable(Vec<DMatrix<f64>>),
    /// `diag(e^{-(rate + delta cos n)}, e^{rate + delta cos n})` for the integer shift.
    ModulatedDiag { rate: f64, delta: f64 },
    /// Arbitrary user function of the state.
    Custom { dim: usize, f: GeneratorFn },
}

impl fmt::Debug for Generator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Generator::Constant(m) => f.debug_tuple("Constant").field(m).finish(),
            Generator::Staircase { i_max } => {
                f.debug_struct("Staircase").field("i_max", i_max).finish()
            }
            Generator::Perturbed { base, directions, xi } => f
                .debug_struct("Perturbed")
                .field("base", base)
                .field("directions", directions)
                .field("xi", xi)
                .finish(),
            Generator::Table { start, blocks } => f
                .debug_struct("Table")
                .field("start", start)
                .field("len", &blocks.len())
                .finish(),
            Generator::SymbolTable(b) => f.debug_tuple("SymbolTable").field(&b.len()).finish(),
            Generator::ModulatedDiag { rate, delta } => f
                .debug_struct("ModulatedDiag")
                .field("rate", rate)
                .field("delta", delta)
                .finish(),
            Generator::Custom { dim, .. } => f.debug_struct("Custom").field("dim", dim).finish(),
        }
    }
}

impl Generator {
    pub const DEFAULT_I_MAX: u32 = 20;

    pub fn staircase() -> Self {
        Generator::Staircase {
            i_max: Self::DEFAULT_I_MAX,
        }
    }

    pub fn constant_diag(diag: &[f64]) -> Self {
        Generator::Constant(DMatrix::from_diagonal(&DVector::from_row_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        match self {
            Generator::Constant(m) => m.nrows(),
            Generator::Staircase { .. } => 3,
            Generator::Perturbed { base, .. } => base.dim(),
            Generator::Table { blocks, .. } | Generator::SymbolTable(blocks) => {
                blocks.first().map_or(0, |b| b.nrows())
            }
            Generator::ModulatedDiag { .. } => 2,
            Generator::Custom { dim, .. } => *dim,
        }
    }

    fn validate(&self, driver: &BaseDriver) -> Result<()> {
        let square = |m: &DMatrix<f64>, d: usize| -> Result<()> {
            if m.nrows() != d || m.ncols() != d {
                return Err(Error::InvalidInput(format!(
                    "matrix is {}x{}, expected {d}x{d}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            if m.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidInput("matrix has non-finite entries".into()));
            }
            Ok(())
        };
        let d = self.dim();
        if d == 0 {
            return Err(Error::InvalidInput("generator has dimension 0".into()));
        }
        match self {
            Generator::Constant(m) => square(m, d),
            Generator::Staircase { i_max } => match driver {
                BaseDriver::Rotation { .. } if (1..=350).contains(i_max) => Ok(()),
                BaseDriver::Rotation { .. } => Err(Error::InvalidInput(format!(
                    "staircase i_max {i_max} outside 1..=350"
                ))),
                _ => Err(Error::InvalidInput(
                    "staircase generator needs a rotation driver".into(),
                )),
            },
            Generator::Perturbed {
                base,
                directions,
                xi,
            } => {
                base.validate(driver)?;
                if directions.len() != xi.len() {
                    return Err(Error::InvalidInput(format!(
                        "{} perturbation directions but {} parameters",
                        directions.len(),
                        xi.len()
                    )));
                }
                directions.iter().try_for_each(|e| square(e, d))
            }
            Generator::Table { blocks, .. } => {
                if *driver != BaseDriver::IntegerShift {
                    return Err(Error::InvalidInput(
                        "matrix tables need the integer shift driver".into(),
                    ));
                }
                blocks.iter().try_for_each(|b| square(b, d))
            }
            Generator::SymbolTable(blocks) => match driver {
                BaseDriver::Bernoulli { symbol_count, .. } if *symbol_count as usize == blocks.len() => {
                    blocks.iter().try_for_each(|b| square(b, d))
                }
                _ => Err(Error::InvalidInput(
                    "symbol tables need a Bernoulli driver with one block per symbol".into(),
                )),
            },
            Generator::ModulatedDiag { rate, delta } => {
                if *driver != BaseDriver::IntegerShift {
                    return Err(Error::InvalidInput(
                        "modulated diagonal generator needs the integer shift driver".into(),
                    ));
                }
                if !rate.is_finite() || !delta.is_finite() {
                    return Err(Error::InvalidInput("non-finite modulation parameters".into()));
                }
                Ok(())
            }
            Generator::Custom { .. } => Ok(()),
        }
    }

    pub fn matrix(&self, driver: &BaseDriver, state: &State) -> DMatrix<f64> {
        match self {
            Generator::Constant(m) => m.clone(),
            Generator::Staircase { i_max } => {
                let i = staircase_piece(state.phase().unwrap_or(0.0), *i_max);
                let r = f64::from(2 * i + 1);
                DMatrix::from_diagonal(&DVector::from_vec(vec![(-r).exp(), 0.5, r.exp()]))
            }
            Generator::Perturbed {
                base,
                directions,
                xi,
            } => {
                let mut m = base.matrix(driver, state);
                for (e, x) in directions.iter().zip(xi) {
                    m += e * *x;
                }
                m
            }
            Generator::Table { start, blocks } => {
                let k = state.index().unwrap_or(0) - start;
                blocks[k.rem_euclid(blocks.len() as i64) as usize].clone()
            }
            Generator::SymbolTable(blocks) => {
                let s = driver.symbol(state).unwrap_or(0);
                blocks[s as usize].clone()
            }
            Generator::ModulatedDiag { rate, delta } => {
                let n = state.index().unwrap_or(0) as f64;
                let r = rate + delta * n.cos();
                DMatrix::from_diagonal(&DVector::from_vec(vec![(-r).exp(), r.exp()]))
            }
            Generator::Custom { f, .. } => f(state),
        }
    }
}

/// A linear cocycle over a base driver. Cheap to clone; immutable after construction.
#[derive(Clone, Debug)]
pub struct Cocycle {
    driver: BaseDriver,
    generator: Arc<Generator>,
    dim: usize,
}

/// Cached states and one-step matrices along a stretch of orbit.
#[derive(Clone, Debug)]
pub struct OrbitSegment {
    pub base: State,
    pub n_lo: i64,
    pub n_hi: i64,
    pub states: Vec<State>,
    pub matrices: Vec<DMatrix<f64>>,
}

impl OrbitSegment {
    pub fn state(&self, n: i64) -> &State {
        &self.states[(n - self.n_lo) as usize]
    }

    /// `A(theta^n omega)`.
    pub fn matrix(&self, n: i64) -> &DMatrix<f64> {
        &self.matrices[(n - self.n_lo) as usize]
    }

    /// `Phi(to - from, theta^from omega)` for `n_lo <= from <= to <= n_hi + 1`.
    pub fn product(&self, from: i64, to: i64) -> DMatrix<f64> {
        let d = self.matrices[0].nrows();
        let mut p = DMatrix::identity(d, d);
        for j in from..to {
            p = self.matrix(j) * p;
        }
        p
    }
}

const OVERFLOW_NORM: f64 = 1e300;

impl Cocycle {
    pub fn new(driver: BaseDriver, generator: Generator) -> Result<Self> {
        driver.validate()?;
        generator.validate(&driver)?;
        let dim = generator.dim();
        Ok(Cocycle {
            driver,
            generator: Arc::new(generator),
            dim,
        })
    }

    pub fn driver(&self) -> &BaseDriver {
        &self.driver
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `A(omega)`.
    pub fn matrix(&self, state: &State) -> DMatrix<f64> {
        self.generator.matrix(&self.driver, state)
    }

    pub fn orbit(&self, state: &State, n_lo: i64, n_hi: i64) -> OrbitSegment {
        let states = self.driver.orbit(state, n_lo, n_hi);
        let matrices = states.iter().map(|s| self.matrix(s)).collect();
        OrbitSegment {
            base: *state,
            n_lo,
            n_hi,
            states,
            matrices,
        }
    }

    /// `Phi(n, omega)` accumulated left to right without rescaling.
    pub fn evolve(&self, state: &State, n: i64) -> Result<DMatrix<f64>> {
        if n < 0 {
            return Err(Error::InvalidInput(format!("evolve needs n >= 0, got {n}")));
        }
        let mut p = DMatrix::identity(self.dim, self.dim);
        let mut s = *state;
        for step in 0..n {
            p = self.matrix(&s) * p;
            let mag = p.amax();
            if !mag.is_finite() || mag > OVERFLOW_NORM {
                return Err(Error::Overflow { steps: step + 1 });
            }
            s = self.driver.forward(&s);
        }
        Ok(p)
    }

    /// `Phi(n, omega)` as `(M, s)` with `Phi = e^s M` and `max |M_ij| = 1`.
    pub fn evolve_log_scaled(&self, state: &State, n: i64) -> Result<(DMatrix<f64>, f64)> {
        if n < 0 {
            return Err(Error::InvalidInput(format!("evolve needs n >= 0, got {n}")));
        }
        let mut p = DMatrix::identity(self.dim, self.dim);
        let mut log_scale = 0.0;
        let mut s = *state;
        for step in 0..n {
            p = self.matrix(&s) * p;
            let mag = p.amax();
            if mag == 0.0 || !mag.is_finite() {
                return Err(Error::Overflow { steps: step + 1 });
            }
            p /= mag;
            log_scale += mag.ln();
            s = self.driver.forward(&s);
        }
        Ok((p, log_scale))
    }
}

/// `Phi(n, omega) Pi^u(omega)` for `n <= 0`, by inverting the forward map on the
/// unstable fibres supplied by `dichotomy` (base point = its index 0).
pub fn evolve_unstable_backward(dichotomy: &DichotomyData, n: i64) -> Result<DMatrix<f64>> {
    if n > 0 {
        return Err(Error::InvalidInput(format!(
            "backward evolution needs n <= 0, got {n}"
        )));
    }
    dichotomy.unstable_backward(0, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn diag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_row_slice(v))
    }

    #[test]
    fn rotation_orbit_small_q() {
        let drv = BaseDriver::Rotation { q: 0.3 };
        let orb = drv.orbit(&State::Phase(0.0), 0, 4);
        let want = [0.0, 0.3, 0.6, 0.9, 0.2];
        for (s, w) in orb.iter().zip(want) {
            assert!((s.phase().unwrap() - w).abs() < 1e-15);
        }
    }

    #[test]
    fn single_point_orbit() {
        let drv = BaseDriver::golden_rotation();
        let orb = drv.orbit(&State::Phase(0.25), 0, 0);
        assert_eq!(orb, vec![State::Phase(0.25)]);
    }

    #[test]
    fn golden_orbit_matches_modular_arithmetic() {
        // frozen from a 40-digit evaluation of 10^4 * (sqrt 5 - 1)/2 mod 1
        let oracle = 0.33988749894848204586_f64;
        let drv = BaseDriver::golden_rotation();
        let s = drv.step(&State::Phase(0.0), 10_000).phase().unwrap();
        assert!((s - oracle).abs() <= 1e4 * f64::EPSILON, "{s} vs {oracle}");
    }

    #[test]
    fn orbit_agrees_with_step() {
        let drv = BaseDriver::golden_rotation();
        let w = State::Phase(0.7);
        let orb = drv.orbit(&w, -5, 7);
        for n in -5..=7 {
            assert_eq!(orb[(n + 5) as usize], drv.step(&w, n));
        }
    }

    #[test]
    fn bernoulli_symbols_are_pure() {
        let a: Vec<u32> = (-50..50).map(|k| BaseDriver::symbol_at(7, 3, k)).collect();
        let b: Vec<u32> = (-50..50).rev().map(|k| BaseDriver::symbol_at(7, 3, k)).collect();
        let b: Vec<u32> = b.into_iter().rev().collect();
        assert_eq!(a, b);
        assert!(a.iter().all(|&s| s < 3));
        assert!(a.iter().any(|&s| s == 0) && a.iter().any(|&s| s == 2));
    }

    #[test]
    fn evolve_constant_diag() {
        let c = Cocycle::new(BaseDriver::golden_rotation(), Generator::constant_diag(&[0.5, 2.0]))
            .unwrap();
        let p = c.evolve(&State::Phase(0.1), 3).unwrap();
        assert_relative_eq!(p, diag(&[0.125, 8.0]), epsilon = 1e-15);
        let id = c.evolve(&State::Phase(0.1), 0).unwrap();
        assert_eq!(id, DMatrix::identity(2, 2));
    }

    #[test]
    fn staircase_first_piece() {
        let c = Cocycle::new(BaseDriver::golden_rotation(), Generator::staircase()).unwrap();
        let p = c.evolve(&State::Phase(0.0), 1).unwrap();
        let e3 = 3f64.exp();
        assert_relative_eq!(p, diag(&[1.0 / e3, 0.5, e3]), max_relative = 1e-15);
    }

    #[test]
    fn staircase_pieces() {
        assert_eq!(staircase_piece(0.0, 20), 1);
        assert_eq!(staircase_piece(0.49, 20), 1);
        assert_eq!(staircase_piece(0.5, 20), 2);
        assert_eq!(staircase_piece(0.7, 20), 3);
        assert_eq!(staircase_piece(0.999, 20), 20);
        assert_eq!(staircase_piece(0.96, 20), 20);
    }

    #[test]
    fn overflow_is_flagged() {
        let c = Cocycle::new(BaseDriver::IntegerShift, Generator::constant_diag(&[1e10])).unwrap();
        assert!(matches!(c.evolve(&State::Index(0), 40), Err(Error::Overflow { .. })));
        let (m, s) = c.evolve_log_scaled(&State::Index(0), 40).unwrap();
        assert_relative_eq!(m[(0, 0)], 1.0);
        assert_relative_eq!(s, 400.0 * 10f64.ln(), max_relative = 1e-12);
    }

    #[test]
    fn incompatible_generators_rejected() {
        assert!(Cocycle::new(BaseDriver::IntegerShift, Generator::staircase()).is_err());
        assert!(Cocycle::new(
            BaseDriver::golden_rotation(),
            Generator::ModulatedDiag { rate: 1.0, delta: 0.1 }
        )
        .is_err());
        assert!(Cocycle::new(BaseDriver::Rotation { q: 1.5 }, Generator::staircase()).is_err());
    }

    #[test]
    fn table_and_symbol_generators() {
        let blocks = vec![diag(&[1.0]), diag(&[2.0]), diag(&[3.0])];
        let c = Cocycle::new(
            BaseDriver::IntegerShift,
            Generator::Table {
                start: -1,
                blocks: blocks.clone(),
            },
        )
        .unwrap();
        assert_eq!(c.matrix(&State::Index(-1))[(0, 0)], 1.0);
        assert_eq!(c.matrix(&State::Index(3))[(0, 0)], 2.0);
        assert_eq!(c.matrix(&State::Index(-2))[(0, 0)], 3.0);
        let drv = BaseDriver::Bernoulli {
            seed: 1,
            symbol_count: 3,
        };
        let c = Cocycle::new(drv.clone(), Generator::SymbolTable(blocks)).unwrap();
        for k in -5..5 {
            let s = BaseDriver::symbol_at(1, 3, k);
            assert_eq!(c.matrix(&State::Index(k))[(0, 0)], f64::from(s + 1));
        }
    }

    fn golden_cocycle_2d() -> Cocycle {
        let m = DMatrix::from_row_slice(2, 2, &[0.9, 0.4, -0.3, 1.1]);
        Cocycle::new(
            BaseDriver::golden_rotation(),
            Generator::Custom {
                dim: 2,
                f: Arc::new(move |s: &State| {
                    let t = s.phase().unwrap() * std::f64::consts::TAU;
                    &m + DMatrix::from_row_slice(2, 2, &[t.cos(), 0.2, 0.0, t.sin()]) * 0.3
                }),
            },
        )
        .unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn cocycle_law(w in 0.0f64..1.0, n in 0i64..=20, m in 0i64..=20) {
            let c = golden_cocycle_2d();
            let s = State::Phase(w);
            let lhs = c.evolve(&s, n + m).unwrap();
            let rhs = c.evolve(&c.driver().step(&s, n), m).unwrap() * c.evolve(&s, n).unwrap();
            let scale = lhs.norm().max(1.0);
            prop_assert!((lhs - rhs).norm() <= 1e-10 * scale);
        }

        #[test]
        fn rotation_invertible(w in 0.0f64..1.0) {
            let drv = BaseDriver::golden_rotation();
            let s = State::Phase(w);
            let back = drv.backward(&drv.forward(&s)).phase().unwrap();
            let fwd = drv.forward(&drv.backward(&s)).phase().unwrap();
            let tol = 2.0 * f64::EPSILON;
            let dist = |a: f64| { let d = (a - w).abs(); d.min(1.0 - d) };
            prop_assert!(dist(back) <= tol && dist(fwd) <= tol);
        }

        #[test]
        fn index_drivers_invertible(k in -1_000_000i64..1_000_000) {
            let s = State::Index(k);
            for drv in [BaseDriver::IntegerShift, BaseDriver::Bernoulli { seed: 3, symbol_count: 2 }] {
                prop_assert_eq!(drv.backward(&drv.forward(&s)), s);
                prop_assert_eq!(drv.forward(&drv.backward(&s)), s);
            }
        }
    }
}
