//! Scenario files: a flat TOML schema, parsed with field paths in every error.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use dichotomy::admissibility::Tolerances;
use dichotomy::dynamics::{BaseDriver, Cocycle, Generator, State};
use dichotomy::weighted::WeightVariant;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{0}")]
    Syntax(String),
    #[error("field `{path}`: {message}")]
    Field { path: String, message: String },
    #[error("unknown scenario `{0}` (see `dichotomy list`)")]
    UnknownScenario(String),
}

fn field(path: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Field {
        path: path.into(),
        message: message.into(),
    }
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    Forward,
    Detect,
    Met,
    Roughness,
    Deterministic,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DriverSpec {
    /// Golden-mean rotation unless `q` is given.
    Rotation { q: Option<f64> },
    Bernoulli { seed: u64, symbols: u32 },
    IntegerShift,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorSpec {
    Constant { matrix: Vec<Vec<f64>> },
    #[serde(alias = "diagonal")]
    ConstantDiag { entries: Vec<f64> },
    /// The three-dimensional staircase example on the golden rotation.
    #[serde(alias = "staircase")]
    Remark42 { i_max: Option<u32> },
    /// `base + sum_i xi_i E_i` with constant directions `E_i`.
    Perturbed {
        base: Box<GeneratorSpec>,
        directions: Vec<Vec<Vec<f64>>>,
        xi: Vec<f64>,
    },
    /// One row-major `d x d` block per CSV line, used periodically from `start`.
    CustomTable {
        #[serde(default)]
        start: i64,
        path: String,
        #[serde(skip)]
        loaded: Vec<Vec<Vec<f64>>>,
    },
    /// Planar rotation by `angle` radians, an isometry at every step.
    Rotation { angle: f64 },
    Table { start: i64, blocks: Vec<Vec<Vec<f64>>> },
    SymbolTable { blocks: Vec<Vec<Vec<f64>>> },
    ModulatedDiag { rate: f64, delta: f64 },
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSpec {
    /// Half width `N` of each windowed solve.
    pub n: i64,
    /// Half width `M` of the data window.
    pub m: Option<i64>,
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum VariantSpec {
    Signed,
    Absolute,
}

impl From<VariantSpec> for WeightVariant {
    fn from(v: VariantSpec) -> Self {
        match v {
            VariantSpec::Signed => WeightVariant::Signed,
            VariantSpec::Absolute => WeightVariant::Absolute,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct WeightConfig {
    pub beta: f64,
    #[serde(default = "default_variant")]
    pub variant: VariantSpec,
    #[serde(default = "one")]
    pub kappa: f64,
    #[serde(default)]
    pub epsilon: f64,
}

fn default_variant() -> VariantSpec {
    VariantSpec::Signed
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceConfig {
    pub idempotence: Option<f64>,
    pub equivariance: Option<f64>,
    pub agreement: Option<f64>,
    pub decay_slack: Option<f64>,
    /// Allowed distance to `expect.projection`.
    pub projection: Option<f64>,
}

impl ToleranceConfig {
    pub fn detection(&self) -> Tolerances {
        let d = Tolerances::default();
        Tolerances {
            idempotence: self.idempotence.unwrap_or(d.idempotence),
            equivariance: self.equivariance.unwrap_or(d.equivariance),
            agreement: self.agreement.unwrap_or(d.agreement),
            decay_slack: self.decay_slack.unwrap_or(d.decay_slack),
        }
    }

    pub fn projection(&self) -> f64 {
        self.projection.unwrap_or(1e-8)
    }
}

/// Expected outcomes checked after a run.
#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExpectConfig {
    pub projection: Option<Vec<Vec<f64>>>,
    pub min_alpha: Option<f64>,
    pub k_range: Option<[f64; 2]>,
    pub exponent_signs: Option<Vec<i8>>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ForwardConfig {
    pub projection: Vec<Vec<f64>>,
    pub alpha: f64,
    #[serde(default = "one")]
    pub k: f64,
    /// Number of random inputs pushed through the convolution.
    #[serde(default = "default_inputs")]
    pub inputs: usize,
}

fn default_inputs() -> usize {
    10
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct MetSection {
    pub n_steps: u64,
    pub gap_tolerance: Option<f64>,
    pub margin: Option<f64>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ReturnsSection {
    /// `F = [lo, hi)`; omitted means the whole space.
    pub interval: Option<[f64; 2]>,
    pub n_returns: usize,
    pub step_cap: Option<u64>,
    #[serde(default = "default_measure_samples")]
    pub measure_samples: usize,
    #[serde(default = "default_kac_tolerance")]
    pub kac_tolerance: f64,
}

fn default_measure_samples() -> usize {
    dichotomy::spectrum::MEASURE_SAMPLES
}

fn default_kac_tolerance() -> f64 {
    0.05
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RoughnessSection {
    pub rhos: Vec<f64>,
    pub directions: Vec<Vec<Vec<f64>>>,
    pub xi: Vec<f64>,
    #[serde(default = "one")]
    pub upsilon: f64,
    #[serde(default = "one")]
    pub sigma: f64,
    #[serde(default)]
    pub holder_xi: Vec<Vec<f64>>,
    #[serde(default)]
    pub tolerance: Option<f64>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub pipeline: Pipeline,
    pub driver: DriverSpec,
    pub generator: GeneratorSpec,
    /// Base point: a phase for rotations, an index otherwise.
    #[serde(default)]
    pub omega: f64,
    /// Additional seeded base points beyond `omega`.
    #[serde(default)]
    pub extra_omegas: usize,
    #[serde(default)]
    pub seed: u64,
    pub window: Option<WindowSpec>,
    pub weight: Option<WeightConfig>,
    #[serde(default)]
    pub tolerances: ToleranceConfig,
    #[serde(default)]
    pub expect: ExpectConfig,
    pub forward: Option<ForwardConfig>,
    pub met: Option<MetSection>,
    pub returns: Option<ReturnsSection>,
    pub roughness: Option<RoughnessSection>,
}

/// Parses a scenario; relative table paths resolve against `base_dir`.
pub fn parse_in(text: &str, base_dir: &Path) -> Result<Scenario, ConfigError> {
    let de = toml::Deserializer::parse(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
    let mut sc: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        field(&path, e.into_inner().message().trim().to_string())
    })?;
    load_tables(&mut sc.generator, base_dir, "generator")?;
    sc.validate()?;
    Ok(sc)
}

pub fn parse(text: &str) -> Result<Scenario, ConfigError> {
    parse_in(text, Path::new("."))
}

fn load_tables(g: &mut GeneratorSpec, base_dir: &Path, at: &str) -> Result<(), ConfigError> {
    match g {
        GeneratorSpec::Perturbed { base, .. } => load_tables(base, base_dir, &format!("{at}.base")),
        GeneratorSpec::CustomTable { path, loaded, .. } => {
            let at = format!("{at}.path");
            let full = base_dir.join(&*path);
            let text = std::fs::read_to_string(&full).map_err(|e| field(&at, format!("cannot read {}: {e}", full.display())))?;
            *loaded = read_blocks(&text).map_err(|m| field(&at, m))?;
            Ok(())
        }
        _ => Ok(()),
    }
}

/// Each non-empty, non-`#` line holds `d^2` numbers.
fn read_blocks(text: &str) -> Result<Vec<Vec<Vec<f64>>>, String> {
    let mut blocks = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| format!("line {}: {e}", i + 1))?;
        let d = (vals.len() as f64).sqrt().round() as usize;
        if d == 0 || d * d != vals.len() {
            return Err(format!("line {}: {} values is not a square block", i + 1, vals.len()));
        }
        blocks.push(vals.chunks(d).map(|r| r.to_vec()).collect());
    }
    if blocks.is_empty() {
        return Err("the table has no blocks".into());
    }
    Ok(blocks)
}

pub fn matrix(rows: &[Vec<f64>], path: &str) -> Result<DMatrix<f64>, ConfigError> {
    let d = rows.len();
    if d == 0 || rows.iter().any(|r| r.len() != d) {
        return Err(field(path, "matrix must be square and non-empty"));
    }
    if rows.iter().flatten().any(|x| !x.is_finite()) {
        return Err(field(path, "matrix entries must be finite"));
    }
    Ok(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
}

fn positive(v: f64, path: &str) -> Result<(), ConfigError> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(field(path, format!("must be positive, got {v}")));
    }
    Ok(())
}

impl Scenario {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.name.trim().is_empty() {
            return Err(field("name", "must not be empty"));
        }
        self.cocycle()?;
        self.base()?;
        if let Some(w) = &self.window {
            if w.n < 4 {
                return Err(field("window.n", format!("must be at least 4, got {}", w.n)));
            }
            if let Some(m) = w.m {
                if m < 1 || m > w.n {
                    return Err(field("window.m", format!("must lie in [1, window.n], got {m}")));
                }
            }
        }
        if let Some(w) = &self.weight {
            if !w.beta.is_finite() {
                return Err(field("weight.beta", "must be finite"));
            }
            positive(w.kappa, "weight.kappa")?;
            if !(w.epsilon >= 0.0 && w.epsilon.is_finite()) {
                return Err(field("weight.epsilon", format!("must be non-negative, got {}", w.epsilon)));
            }
        }
        for (v, p) in [
            (self.tolerances.idempotence, "tolerances.idempotence"),
            (self.tolerances.equivariance, "tolerances.equivariance"),
            (self.tolerances.agreement, "tolerances.agreement"),
            (self.tolerances.decay_slack, "tolerances.decay_slack"),
            (self.tolerances.projection, "tolerances.projection"),
        ] {
            if let Some(v) = v {
                positive(v, p)?;
            }
        }
        if let Some(p) = &self.expect.projection {
            let m = matrix(p, "expect.projection")?;
            if m.nrows() != self.dim() {
                return Err(field("expect.projection", "dimension differs from the generator"));
            }
        }
        let need = |present: bool, what: &str| {
            if present {
                Ok(())
            } else {
                Err(field(what, format!("required by the {:?} pipeline", self.pipeline).to_lowercase()))
            }
        };
        match self.pipeline {
            Pipeline::Forward => {
                need(self.forward.is_some(), "forward")?;
                need(self.window.is_some(), "window")?;
                need(self.weight.is_some(), "weight")?;
                let f = self.forward.as_ref().unwrap();
                let p = matrix(&f.projection, "forward.projection")?;
                if p.nrows() != self.dim() {
                    return Err(field("forward.projection", "dimension differs from the generator"));
                }
                positive(f.alpha, "forward.alpha")?;
                positive(f.k, "forward.k")?;
                let beta = self.weight.as_ref().unwrap().beta;
                if !(beta.abs() < f.alpha) {
                    return Err(field("weight.beta", format!("|beta| must be below alpha = {}", f.alpha)));
                }
            }
            Pipeline::Detect | Pipeline::Deterministic => {
                need(self.window.is_some(), "window")?;
                need(self.weight.is_some(), "weight")?;
                if !(self.weight.as_ref().unwrap().beta > 0.0) {
                    return Err(field("weight.beta", "must be positive for detection"));
                }
                if self.pipeline == Pipeline::Deterministic && !matches!(self.driver, DriverSpec::IntegerShift) {
                    return Err(field("driver.kind", "the deterministic pipeline needs integer_shift"));
                }
            }
            Pipeline::Met => {
                need(self.met.is_some(), "met")?;
                need(self.window.is_some(), "window")?;
                let m = self.met.as_ref().unwrap();
                if m.n_steps < 100 {
                    return Err(field("met.n_steps", format!("must be at least 100, got {}", m.n_steps)));
                }
                if let Some(r) = &self.returns {
                    if r.n_returns == 0 {
                        return Err(field("returns.n_returns", "must be positive"));
                    }
                    if let Some([lo, hi]) = r.interval {
                        if !(0.0 <= lo && lo < hi && hi <= 1.0) {
                            return Err(field("returns.interval", format!("need 0 <= lo < hi <= 1, got [{lo}, {hi}]")));
                        }
                    }
                    positive(r.kac_tolerance, "returns.kac_tolerance")?;
                }
            }
            Pipeline::Roughness => {
                need(self.roughness.is_some(), "roughness")?;
                need(self.window.is_some(), "window")?;
                need(self.weight.is_some(), "weight")?;
                let r = self.roughness.as_ref().unwrap();
                if r.rhos.is_empty() {
                    return Err(field("roughness.rhos", "needs at least one value"));
                }
                for (i, rho) in r.rhos.iter().enumerate() {
                    positive(*rho, &format!("roughness.rhos[{i}]"))?;
                }
                for (i, e) in r.directions.iter().enumerate() {
                    let m = matrix(e, &format!("roughness.directions[{i}]"))?;
                    if m.nrows() != self.dim() {
                        return Err(field(&format!("roughness.directions[{i}]"), "dimension differs from the generator"));
                    }
                }
                if r.xi.len() != r.directions.len() {
                    return Err(field("roughness.xi", "needs one component per direction"));
                }
                for (i, x) in r.holder_xi.iter().enumerate() {
                    if x.len() != r.directions.len() {
                        return Err(field(&format!("roughness.holder_xi[{i}]"), "needs one component per direction"));
                    }
                }
                positive(r.upsilon, "roughness.upsilon")?;
                if !(r.sigma > 0.0 && r.sigma <= 1.0) {
                    return Err(field("roughness.sigma", format!("must lie in (0, 1], got {}", r.sigma)));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.generator().map(|g| g.dim()).unwrap_or(0)
    }

    pub fn driver(&self) -> Result<BaseDriver, ConfigError> {
        let d = match &self.driver {
            DriverSpec::Rotation { q: None } => BaseDriver::golden_rotation(),
            DriverSpec::Rotation { q: Some(q) } => BaseDriver::Rotation { q: *q },
            DriverSpec::Bernoulli { seed, symbols } => BaseDriver::Bernoulli {
                seed: *seed,
                symbol_count: *symbols,
            },
            DriverSpec::IntegerShift => BaseDriver::IntegerShift,
        };
        d.validate().map_err(|e| field("driver", e.to_string()))?;
        Ok(d)
    }

    pub fn generator(&self) -> Result<Generator, ConfigError> {
        build_generator(&self.generator, "generator")
    }

    pub fn cocycle(&self) -> Result<Cocycle, ConfigError> {
        Cocycle::new(self.driver()?, self.generator()?).map_err(|e| field("generator", e.to_string()))
    }

    pub fn base(&self) -> Result<State, ConfigError> {
        let s = match self.driver {
            DriverSpec::Rotation { .. } => State::Phase(self.omega),
            _ => {
                if self.omega.fract() != 0.0 {
                    return Err(field("omega", "index drivers need an integer base point"));
                }
                State::Index(self.omega as i64)
            }
        };
        self.driver()?.check_state(&s).map_err(|e| field("omega", e.to_string()))?;
        Ok(s)
    }
}

fn build_generator(spec: &GeneratorSpec, at: &str) -> Result<Generator, ConfigError> {
    let blocks = |b: &[Vec<Vec<f64>>], path: &str| -> Result<Vec<DMatrix<f64>>, ConfigError> {
            if b.is_empty() {
                return Err(field(path, "needs at least one block"));
            }
            b.iter()
                .enumerate()
                .map(|(i, m)| matrix(m, &format!("{path}[{i}]")))
                .collect()
        };
        Ok(match spec {
            GeneratorSpec::Constant { matrix: m } => Generator::Constant(matrix(m, &format!("{at}.matrix"))?),
            GeneratorSpec::ConstantDiag { entries } => {
                if entries.is_empty() || entries.iter().any(|x| !x.is_finite()) {
                    return Err(field(&format!("{at}.entries"), "needs finite entries"));
                }
                Generator::constant_diag(entries)
            }
            GeneratorSpec::Remark42 { i_max } => {
                let i_max = i_max.unwrap_or(Generator::DEFAULT_I_MAX);
                if !(1..=350).contains(&i_max) {
                    return Err(field(&format!("{at}.i_max"), format!("must lie in [1, 350], got {i_max}")));
                }
                Generator::Staircase { i_max }
            }
            GeneratorSpec::Perturbed { base, directions, xi } => {
                let base = build_generator(base, &format!("{at}.base"))?;
                let dirs: Vec<DMatrix<f64>> = directions
                    .iter()
                    .enumerate()
                    .map(|(i, e)| matrix(e, &format!("{at}.directions[{i}]")))
                    .collect::<Result<_, _>>()?;
                if dirs.iter().any(|e| e.nrows() != base.dim()) {
                    return Err(field(&format!("{at}.directions"), "dimension differs from the base generator"));
                }
                if xi.len() != dirs.len() || xi.iter().any(|x| !x.is_finite()) {
                    return Err(field(&format!("{at}.xi"), "needs one finite component per direction"));
                }
                Generator::Perturbed {
                    base: Box::new(base),
                    directions: dirs,
                    xi: xi.clone(),
                }
            }
            GeneratorSpec::CustomTable { start, loaded, .. } => Generator::Table {
                start: *start,
                blocks: blocks(loaded, &format!("{at}.path"))?,
            },
            GeneratorSpec::Rotation { angle } => {
                let (s, c) = angle.sin_cos();
                Generator::Constant(DMatrix::from_row_slice(2, 2, &[c, -s, s, c]))
            }
            GeneratorSpec::Table { start, blocks: b } => Generator::Table {
                start: *start,
                blocks: blocks(b, &format!("{at}.blocks"))?,
            },
            GeneratorSpec::SymbolTable { blocks: b } => Generator::SymbolTable(blocks(b, &format!("{at}.blocks"))?),
            GeneratorSpec::ModulatedDiag { rate, delta } => {
                positive(*rate, &format!("{at}.rate"))?;
                Generator::ModulatedDiag {
                    rate: *rate,
                    delta: *delta,
                }
            }
        })
    }
