//! Pipelines behind `dichotomy run`.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use dichotomy::admissibility::{detect_dichotomy, DetectConfig, Detection};
use dichotomy::dynamics::{Cocycle, State};
use dichotomy::green::{convolve, gamma, gamma_tilde, green_bound_check, DichotomyData, GreenTable};
use dichotomy::roughness::{
    check_smallness, deterministic_mode, holder_empirical, perturbed_green, roughness_constants, IterationConfig,
    PerturbationSpec,
};
use dichotomy::spectrum::{
    build_return_cocycle, induced_decay_check, kac_check, met_dichotomy, return_bound, return_constants, MetConfig,
    ReturnSet,
};
use dichotomy::weighted::{weighted_norm, WeightSpec, WeightVariant, WindowedSequence};
use dichotomy::Error;

use crate::config::{matrix, ConfigError, Pipeline, Scenario};

/// A pass/fail decision together with the number behind it.
#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub limit: f64,
    /// `"<="` or `">="`.
    pub relation: &'static str,
    pub margin: f64,
    pub pass: bool,
}

impl Check {
    pub fn at_most(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Check {
            name: name.into(),
            value,
            limit,
            relation: "<=",
            margin: limit - value,
            pass: value <= limit,
        }
    }

    pub fn at_least(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Check {
            name: name.into(),
            value,
            limit,
            relation: ">=",
            margin: value - limit,
            pass: value >= limit,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Library(#[from] Error),
}

impl RunError {
    /// 2 for numeric failures, 1 for anything the user has to fix in the input.
    pub fn exit_code(&self) -> u8 {
        match self {
            RunError::Library(e) if e.is_numeric() => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Default)]
pub struct RunOutput {
    pub checks: Vec<Check>,
    pub results: serde_json::Map<String, Value>,
    /// `(file name, contents)`, written next to the report.
    pub tables: Vec<(String, String)>,
}

impl RunOutput {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    fn result(&mut self, key: &str, v: impl Serialize) {
        self.results.insert(key.into(), serde_json::to_value(v).expect("serializable result"));
    }
}

fn matrix_json(m: &DMatrix<f64>) -> Value {
    json!((0..m.nrows()).map(|i| m.row(i).iter().copied().collect::<Vec<f64>>()).collect::<Vec<_>>())
}

fn state_json(s: &State) -> Value {
    match s {
        State::Phase(x) => json!(x),
        State::Index(i) => json!(i),
    }
}

fn projectors_csv(data: &DichotomyData) -> String {
    let m = data.half_width();
    let mut out = String::from("n,row,col,value\n");
    for n in -m..=m {
        let p = data.proj(n);
        for i in 0..p.nrows() {
            for j in 0..p.ncols() {
                let _ = writeln!(out, "{n},{i},{j},{:?}", p[(i, j)]);
            }
        }
    }
    out
}

fn k_csv(data: &DichotomyData) -> String {
    let m = data.half_width();
    let mut out = String::from("n,k\n");
    for n in -m..=m {
        let _ = writeln!(out, "{n},{:?}", data.k(n));
    }
    out
}

fn certificates_csv(det: &Detection) -> String {
    let m = det.data.half_width();
    let mut out = String::from("n,idempotence,equivariance,agreement,alpha_fit,k_fit,gamma_hat\n");
    for (i, c) in det.certificates.iter().enumerate() {
        let _ = writeln!(
            out,
            "{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
            i as i64 - m,
            c.idempotence_defect,
            c.equivariance_defect,
            c.agreement_defect,
            c.decay_fit.alpha,
            c.decay_fit.k,
            c.gamma_hat
        );
    }
    out
}

fn data_checks(sc: &Scenario, data: &DichotomyData, out: &mut RunOutput) -> Result<(), RunError> {
    if let Some(p) = &sc.expect.projection {
        let want = matrix(p, "expect.projection")?;
        let err = data.projections().iter().map(|q| (q - &want).norm()).fold(0.0, f64::max);
        out.checks.push(Check::at_most("projection error", err, sc.tolerances.projection()));
    }
    if let Some(a) = sc.expect.min_alpha {
        out.checks.push(Check::at_least("fitted alpha", data.alpha, a));
    }
    if let Some([lo, hi]) = sc.expect.k_range {
        let kmin = data.k_samples().iter().copied().fold(f64::INFINITY, f64::min);
        let kmax = data.k_samples().iter().copied().fold(0.0, f64::max);
        out.checks.push(Check::at_least("smallest bound K", kmin, lo));
        out.checks.push(Check::at_most("largest bound K", kmax, hi));
    }
    out.result("alpha", data.alpha);
    out.result("projection_at_base", matrix_json(data.proj(0)));
    out.result("k_at_base", data.k(0));
    out.tables.push(("projectors.csv".into(), projectors_csv(data)));
    out.tables.push(("k_samples.csv".into(), k_csv(data)));
    Ok(())
}

fn detect_config(sc: &Scenario) -> DetectConfig {
    let w = sc.window.as_ref().expect("validated window");
    let beta = sc.weight.as_ref().expect("validated weight").beta;
    let mut cfg = DetectConfig::new(w.n, beta);
    cfg.data_half_width = w.m;
    cfg.tolerances = sc.tolerances.detection();
    cfg
}

/// `omega` followed by `extra_omegas` seeded samples of the driver.
fn base_points(sc: &Scenario, seed: u64) -> Result<Vec<State>, RunError> {
    let driver = sc.driver()?;
    let mut pts = vec![sc.base()?];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..sc.extra_omegas {
        pts.push(driver.sample(&mut rng)?);
    }
    Ok(pts)
}

pub fn run(sc: &Scenario, seed: u64) -> Result<RunOutput, RunError> {
    match sc.pipeline {
        Pipeline::Forward => forward(sc, seed),
        Pipeline::Detect => detect(sc, seed),
        Pipeline::Met => met(sc, seed),
        Pipeline::Roughness => roughness(sc, seed),
        Pipeline::Deterministic => deterministic(sc),
    }
}

fn forward(sc: &Scenario, seed: u64) -> Result<RunOutput, RunError> {
    let f = sc.forward.as_ref().expect("validated forward section");
    let w = sc.weight.as_ref().expect("validated weight");
    let m = sc.window.as_ref().expect("validated window").n;
    let cocycle = sc.cocycle()?;
    let p = matrix(&f.projection, "forward.projection")?;
    let dich = DichotomyData::uniform(cocycle, sc.base()?, m, p, f.alpha, f.k)?;
    let mut out = RunOutput::default();
    let defects = dich.defects()?;
    let tol = sc.tolerances.detection();
    out.checks.push(Check::at_most("idempotence defect", defects.idempotence, tol.idempotence));
    out.checks.push(Check::at_most("equivariance defect", defects.equivariance, tol.equivariance));
    let table = GreenTable::build(&dich)?;
    let bound = green_bound_check(&table, tol.decay_slack);
    out.checks.push(Check::at_most("Green bound slack", bound.max_slack, 1.0 + tol.decay_slack));
    let variant = WeightVariant::from(w.variant);
    let constant = match variant {
        WeightVariant::Signed => gamma(f.alpha, w.beta)?,
        WeightVariant::Absolute => gamma_tilde(f.alpha, w.beta)?,
    };
    let len = (2 * m + 1) as usize;
    let wf = WeightSpec::from_samples(-m, vec![f.k; len], w.beta, variant)?;
    let wx = WeightSpec::unit(-m, m, w.beta, variant);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = dich.dim();
    let support = m / 2;
    let mut probes = String::from("input,ratio,residual\n");
    let mut worst_ratio = 0.0f64;
    let mut worst_residual = 0.0f64;
    let mut first = None;
    for i in 0..f.inputs {
        let input = WindowedSequence::from_fn(-m, m, |n| {
            if n.abs() <= support {
                DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0))
            } else {
                DVector::zeros(d)
            }
        })?;
        let sol = convolve(&dich, &table, &input)?;
        let ratio = weighted_norm(&sol.x, &wx)? / weighted_norm(&input, &wf)?;
        worst_ratio = worst_ratio.max(ratio);
        worst_residual = worst_residual.max(sol.residual);
        let _ = writeln!(probes, "{i},{ratio:?},{:?}", sol.residual);
        if first.is_none() {
            first = Some(sol.x);
        }
    }
    out.checks.push(Check::at_most("solution ratio", worst_ratio, constant));
    out.checks.push(Check::at_most("recurrence residual", worst_residual, 1e-10));
    out.result("gamma", constant);
    out.result("max_ratio", worst_ratio);
    out.result("green_bound", json!({"max_slack": bound.max_slack, "argmax": bound.argmax}));
    out.tables.push(("green.csv".into(), table.to_csv()));
    out.tables.push(("probes.csv".into(), probes));
    if let Some(x) = first {
        let mut s = String::from("n,component,value\n");
        for (n, v) in x.iter() {
            for (j, c) in v.iter().enumerate() {
                let _ = writeln!(s, "{n},{j},{c:?}");
            }
        }
        out.tables.push(("solution.csv".into(), s));
    }
    Ok(out)
}

fn detect(sc: &Scenario, seed: u64) -> Result<RunOutput, RunError> {
    let cocycle = sc.cocycle()?;
    let cfg = detect_config(sc);
    let bases = base_points(sc, seed)?;
    let mut out = RunOutput::default();
    let mut summary = String::from("omega,alpha,k_min,k_max,temperedness\n");
    let mut first = None;
    for b in &bases {
        let det = detect_dichotomy(&cocycle, b, &cfg)?;
        let kmin = det.data.k_samples().iter().copied().fold(f64::INFINITY, f64::min);
        let kmax = det.data.k_samples().iter().copied().fold(0.0, f64::max);
        let _ = writeln!(
            summary,
            "{},{:?},{kmin:?},{kmax:?},{}",
            b,
            det.data.alpha,
            det.temperedness.map_or(String::new(), |t| format!("{t:?}"))
        );
        if first.is_none() {
            first = Some(det);
        } else {
            let tmp = RunOutput::default();
            let mut sub = tmp;
            data_checks(sc, &det.data, &mut sub)?;
            for mut c in sub.checks {
                c.name = format!("{} at omega = {b}", c.name);
                out.checks.push(c);
            }
        }
    }
    let det = first.expect("at least one base point");
    let mut head = RunOutput::default();
    data_checks(sc, &det.data, &mut head)?;
    head.checks.append(&mut out.checks);
    head.result("base", state_json(&bases[0]));
    head.result("temperedness", det.temperedness);
    head.result(
        "defects",
        json!({
            "idempotence": det.defects.idempotence,
            "equivariance": det.defects.equivariance,
            "decay_slack": det.defects.decay_slack,
        }),
    );
    head.tables.push(("certificates.csv".into(), certificates_csv(&det)));
    head.tables.push(("bases.csv".into(), summary));
    Ok(head)
}

/// Orthonormal basis of the range of a projector.
fn range_of(p: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = p.clone().svd(true, false);
    let u = svd.u.expect("left vectors requested");
    let cols: Vec<_> = (0..p.ncols())
        .filter(|&i| svd.singular_values[i] > 0.5)
        .map(|i| u.column(i).into_owned())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(p.nrows(), 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

fn met(sc: &Scenario, seed: u64) -> Result<RunOutput, RunError> {
    let cocycle = sc.cocycle()?;
    let base = sc.base()?;
    let ms = sc.met.as_ref().expect("validated met section");
    let w = sc.window.as_ref().expect("validated window");
    let mut cfg = MetConfig::new(ms.n_steps, w.m.unwrap_or(w.n / 2));
    if let Some(g) = ms.gap_tolerance {
        cfg.gap_tolerance = g;
    }
    if let Some(mg) = ms.margin {
        cfg.margin = mg;
    }
    let md = met_dichotomy(&cocycle, &base, &cfg)?;
    let mut out = RunOutput::default();
    data_checks(sc, &md.data, &mut out)?;
    let tol = sc.tolerances.detection();
    out.checks.push(Check::at_most("idempotence defect", md.defects.idempotence, tol.idempotence));
    out.checks.push(Check::at_most("equivariance defect", md.defects.equivariance, tol.equivariance));
    out.checks.push(Check::at_most("Green bound slack", md.defects.decay_slack, 1.0 + tol.decay_slack));
    if let Some(signs) = &sc.expect.exponent_signs {
        let ex = &md.lyapunov.exponents;
        let agree = signs.len() == ex.len()
            && signs.iter().zip(ex).all(|(s, e)| (*s > 0 && *e > 0.0) || (*s < 0 && *e < 0.0));
        let gap = ex.iter().map(|x| x.abs()).fold(f64::INFINITY, f64::min);
        out.checks.push(Check {
            name: "exponent signs".into(),
            value: gap,
            limit: 0.0,
            relation: ">=",
            margin: if agree { gap } else { -gap },
            pass: agree,
        });
    }
    out.result("exponents", &md.lyapunov.exponents);
    out.result("temperedness", md.temperedness);
    out.tables.push(("lyapunov.csv".into(), md.lyapunov.to_csv()));

    if let Some(r) = &sc.returns {
        let set = match r.interval {
            Some([lo, hi]) => ReturnSet::Interval { lo, hi },
            None => ReturnSet::Whole,
        };
        let p_hat = set.estimate_measure(cocycle.driver(), r.measure_samples, seed)?;
        let cap = r.step_cap.unwrap_or(100 * r.n_returns as u64 + 1000);
        let rc = build_return_cocycle(&cocycle, &set, &base, r.n_returns, cap, p_hat)?;
        let kac = kac_check(&rc);
        out.checks.push(Check::at_most("Kac ratio deviation", (kac.kac_ratio - 1.0).abs(), r.kac_tolerance));
        let data = &md.data;
        let l = return_bound(&cocycle, &rc, data.k(0), gamma(data.alpha, 0.0)?, data.k(1));
        let consts = return_constants(l)?;
        let stable = range_of(data.proj(0));
        let decay = induced_decay_check(&rc, &stable, &consts, 0.0);
        out.checks.push(Check::at_most("induced decay ratio", decay.max_ratio, 1.0));
        out.result("p_hat", p_hat);
        out.result("kac_ratio", kac.kac_ratio);
        out.result("mean_return", kac.mean_return);
        out.result(
            "return_constants",
            json!({"l": consts.l, "h1": consts.h1, "h2": consts.h2, "n0": consts.n0, "nu": consts.nu, "q": consts.q}),
        );
        out.tables.push(("kac.csv".into(), kac.to_csv()));
        let mut times = String::from("return,time\n");
        for (j, t) in rc.return_times.iter().enumerate() {
            let _ = writeln!(times, "{},{t}", j + 1);
        }
        out.tables.push(("returns.csv".into(), times));
    }
    Ok(out)
}

fn roughness(sc: &Scenario, seed: u64) -> Result<RunOutput, RunError> {
    let _ = seed;
    let r = sc.roughness.as_ref().expect("validated roughness section");
    let a = sc.cocycle()?;
    let base = sc.base()?;
    let cfg = detect_config(sc);
    let det = detect_dichotomy(&a, &base, &cfg)?;
    let dich = det.data;
    let directions: Vec<DMatrix<f64>> = r
        .directions
        .iter()
        .enumerate()
        .map(|(i, e)| matrix(e, &format!("roughness.directions[{i}]")))
        .collect::<Result<_, _>>()?;
    let mut out = RunOutput::default();
    let mut csv = String::from(
        "rho,beta_star,contraction,alpha_tilde,kappa,holder_bound,smallness_slack,measured_rate,analytic_rate,bound_slack,holder_ratio,projector_gap\n",
    );
    let mut rows = Vec::new();
    for rho in &r.rhos {
        let consts = roughness_constants(dich.alpha, *rho)?;
        let pert = PerturbationSpec::new(directions.clone(), *rho, r.upsilon, r.sigma)?;
        let small = check_smallness(&dich, &pert, &r.xi)?;
        out.checks.push(Check::at_least(format!("smallness slack at rho = {rho}"), small.slack, 0.0));
        let mut it = IterationConfig::at_beta_star(dich.alpha, *rho)?;
        if let Some(t) = r.tolerance {
            it.tolerance = t;
        }
        let pg = perturbed_green(&dich, &pert, &r.xi, &it, 0.0)?;
        out.checks.push(Check::at_most(format!("perturbed Green slack at rho = {rho}"), pg.bound_check.max_slack, 1.0));
        out.checks.push(Check::at_most(
            format!("contraction rate at rho = {rho}"),
            pg.measured_rate,
            1.1 * pg.analytic_rate,
        ));
        let b = pert.cocycle(&a, &r.xi)?;
        let direct = detect_dichotomy(&b, &base, &cfg)?;
        let gap = (&pg.projector - direct.data.proj(0)).norm();
        out.checks.push(Check::at_most(format!("projector agreement at rho = {rho}"), gap, 1e-7));
        let (holder_ratio, holder_bound) = if r.holder_xi.len() >= 2 {
            let h = holder_empirical(&dich, &pert, &r.holder_xi, &it, 0.0)?;
            out.checks.push(Check::at_most(format!("Hölder ratio at rho = {rho}"), h.max_ratio, h.bound));
            (Some(h.max_ratio), h.bound)
        } else {
            (
                None,
                dichotomy::roughness::holder_bound(consts.kappa, r.upsilon, dich.k(0), consts.alpha_tilde, r.sigma)?,
            )
        };
        let _ = writeln!(
            csv,
            "{rho:?},{:?},{:?},{:?},{:?},{holder_bound:?},{:?},{:?},{:?},{:?},{},{gap:?}",
            consts.beta_star,
            consts.contraction,
            consts.alpha_tilde,
            consts.kappa,
            small.slack,
            pg.measured_rate,
            pg.analytic_rate,
            pg.bound_check.max_slack,
            holder_ratio.map_or(String::new(), |h| format!("{h:?}")),
        );
        rows.push(json!({
            "rho": rho,
            "beta_star": consts.beta_star,
            "contraction": consts.contraction,
            "alpha_tilde": consts.alpha_tilde,
            "kappa": consts.kappa,
            "varrho": consts.varrho,
            "d1": consts.d1,
            "d2": consts.d2,
            "beta_tilde": consts.beta_tilde,
            "holder_bound": holder_bound,
            "iterations": pg.iterations,
            "perturbed_projector": matrix_json(&pg.projector),
        }));
    }
    out.result("alpha", dich.alpha);
    out.result("rows", rows);
    out.tables.push(("roughness.csv".into(), csv));
    Ok(out)
}

fn deterministic(sc: &Scenario) -> Result<RunOutput, RunError> {
    let cocycle: Cocycle = sc.cocycle()?;
    let w = sc.weight.as_ref().expect("validated weight");
    let cfg = detect_config(sc);
    let rep = deterministic_mode(&cocycle, w.kappa, w.epsilon, &cfg)?;
    let mut out = RunOutput::default();
    data_checks(sc, &rep.detection.data, &mut out)?;
    out.result("kappa_tilde", rep.kappa_tilde);
    out.result("epsilon", rep.epsilon);
    out.tables.push(("certificates.csv".into(), certificates_csv(&rep.detection)));
    Ok(out)
}
