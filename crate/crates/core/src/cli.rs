//! Configuration-driven scenario runner behind the `ahmass` binary.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::charges::{
    charge_adm, charge_surface_density, mass_vector, sphere_rule_seeded, ChargeOptions, ChargeResult, CutoffFamily,
    CutoffProfile, IntegrandForm, SphereRule, TestFunction, MAX_SCHEDULE,
};
use crate::chartlab::{
    apply_chart_change, make_kottler, make_wang_metric, verify_covariance, ChartChange, GaugeDirection, GaugeField,
    GaugeProfile,
};
use crate::eigenfunctions::{integral_i, integral_j, BoundaryFunction, Eigenfunction, KernelQuadratureSpec};
use crate::fd::{self, FdStep};
use crate::geometry::{lorentz, LapseFunction, LorentzKind, LorentzMap};
use crate::quad;
use crate::tensorcalc::MetricPerturbation;
use crate::Error;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

pub const CSV_HEADER: &str = "k_or_r,charge,extrapolated,error_est";

#[derive(Debug, Parser)]
#[command(name = "ahmass", version, about = "Mass and mass-aspect charges of asymptotically hyperbolic metrics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the scenario described by a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (default: current directory).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Skip the SVG convergence plot.
        #[arg(long)]
        no_plots: bool,
    },
    /// List the available scenarios and their parameters.
    ListScenarios,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Wang,
    Kottler,
    Gauge,
    Boost,
    Rotation,
    EigenSelftest,
    IntegralsSelftest,
}

impl Scenario {
    pub const ALL: [Scenario; 7] = [
        Scenario::Wang,
        Scenario::Kottler,
        Scenario::Gauge,
        Scenario::Boost,
        Scenario::Rotation,
        Scenario::EigenSelftest,
        Scenario::IntegralsSelftest,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Scenario::Wang => "wang",
            Scenario::Kottler => "kottler",
            Scenario::Gauge => "gauge",
            Scenario::Boost => "boost",
            Scenario::Rotation => "rotation",
            Scenario::EigenSelftest => "eigen_selftest",
            Scenario::IntegralsSelftest => "integrals_selftest",
        }
    }

    pub fn describe(&self) -> (&'static str, &'static str) {
        match self {
            Scenario::Wang => ("mass vector of a Wang-type metric vs sphere moments of m", "mass_aspect"),
            Scenario::Kottler => ("Kottler benchmark: symmetry, linearity in m0, p0/m0", "m0"),
            Scenario::Gauge => ("charges before/after a pure-gauge chart change", "mass_aspect, gauge"),
            Scenario::Boost => ("mass vector covariance under a boost", "mass_aspect, rapidity, boost_axis"),
            Scenario::Rotation => ("mass vector covariance under a rotation", "mass_aspect, angle, axes"),
            Scenario::EigenSelftest => ("eigenfunction solver vs lapse functions, eigen residual", "boundary"),
            Scenario::IntegralsSelftest => ("closed forms of I and J vs quadrature, identities", "(none)"),
        }
    }
}

/// Boundary data as written in configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundarySpec {
    Constant(f64),
    Affine { c: f64, a: Vec<f64> },
    Harmonics { l_max: usize, coeffs: Vec<f64> },
}

impl BoundarySpec {
    pub fn to_function(&self) -> BoundaryFunction {
        match self {
            BoundarySpec::Constant(c) => BoundaryFunction::Constant(*c),
            BoundarySpec::Affine { c, a } => BoundaryFunction::Affine { c: *c, a: a.clone() },
            BoundarySpec::Harmonics { l_max, coeffs } => {
                BoundaryFunction::Harmonics { l_max: *l_max, coeffs: coeffs.clone() }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaugeSpec {
    pub profile: GaugeProfile,
    pub direction: GaugeDirection,
}

impl Default for GaugeSpec {
    fn default() -> Self {
        GaugeSpec {
            profile: GaugeProfile::Decaying { amplitude: 0.5, rate: 2.0, r0: 2.0 },
            direction: GaugeDirection::Rotation { a: 1, b: 2 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Params {
    /// Mass aspect `m` of the Wang metric (wang, gauge, boost, rotation).
    pub mass_aspect: Option<BoundarySpec>,
    /// Kottler mass.
    pub m0: Option<f64>,
    pub rapidity: Option<f64>,
    /// 1-based boost axis.
    pub boost_axis: Option<usize>,
    pub angle: Option<f64>,
    /// 1-based rotation plane.
    pub axes: Option<[usize; 2]>,
    pub gauge: Option<GaugeSpec>,
    /// Boundary data of the eigenfunction self-test.
    pub boundary: Option<BoundarySpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadratureConfig {
    pub sphere_order: usize,
    pub radial_order: usize,
    pub kernel_radial_order: usize,
    pub kernel_angular_order: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        let k = KernelQuadratureSpec::default();
        QuadratureConfig {
            sphere_order: 12,
            radial_order: 16,
            kernel_radial_order: k.radial_order,
            kernel_angular_order: k.angular_order,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CutoffConfig {
    pub profile: CutoffProfile,
    pub k_min: u32,
    pub k_max: u32,
}

impl Default for CutoffConfig {
    fn default() -> Self {
        CutoffConfig { profile: CutoffProfile::Quintic, k_min: 4, k_max: 10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Relative gate for charges against their references.
    pub charge_rel: f64,
    pub rotation: f64,
    pub boost: f64,
    pub gauge: f64,
    pub eigen_rel: f64,
    pub eigen_residual: f64,
    pub integrals: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            charge_rel: 1e-2,
            rotation: 1e-2,
            boost: 2e-2,
            gauge: 1e-2,
            eigen_rel: 1e-6,
            eigen_residual: 1e-4,
            integrals: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub csv: String,
    pub summary: String,
    pub plot: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { csv: "convergence.csv".into(), summary: "summary.json".into(), plot: "convergence.svg".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_n")]
    pub n: usize,
    pub scenario: Scenario,
    #[serde(default)]
    pub params: Params,
    #[serde(default)]
    pub quadrature: QuadratureConfig,
    #[serde(default)]
    pub cutoff: CutoffConfig,
    #[serde(default = "default_fd_step")]
    pub fd_step: f64,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub rng_seed: u64,
}

fn default_n() -> usize {
    3
}

fn default_fd_step() -> f64 {
    FdStep::default().rel
}

/// A config problem, naming the offending field.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config field `{}`: {}", self.field, self.message)
    }
}

fn cfg_err(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError { field: field.into(), message: message.into() }
}

/// Inner radius of every shipped benchmark.
const BENCH_INNER_RADIUS: f64 = 1.0;

impl RunConfig {
    pub fn from_json(text: &str) -> Result<RunConfig, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner().to_string();
            let field = if path == "." { "<document>".to_string() } else { path };
            cfg_err(&field, inner)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(3..=8).contains(&self.n) {
            return Err(cfg_err("n", "dimension must be between 3 and 8"));
        }
        let q = &self.quadrature;
        if !(4..=64).contains(&q.sphere_order) {
            return Err(cfg_err("quadrature.sphere_order", "must be in [4, 64]"));
        }
        if !(4..=64).contains(&q.radial_order) {
            return Err(cfg_err("quadrature.radial_order", "must be in [4, 64]"));
        }
        if !(8..=512).contains(&q.kernel_radial_order) {
            return Err(cfg_err("quadrature.kernel_radial_order", "must be in [8, 512]"));
        }
        if !(8..=256).contains(&q.kernel_angular_order) {
            return Err(cfg_err("quadrature.kernel_angular_order", "must be in [8, 256]"));
        }
        let c = &self.cutoff;
        if (c.k_min as f64) < BENCH_INNER_RADIUS + 1.0 {
            return Err(cfg_err("cutoff.k_min", format!("must be at least {}", BENCH_INNER_RADIUS + 1.0)));
        }
        if c.k_max as f64 > MAX_SCHEDULE {
            return Err(cfg_err("cutoff.k_max", format!("must be at most {MAX_SCHEDULE}")));
        }
        if c.k_max < c.k_min + 3 {
            return Err(cfg_err("cutoff.k_max", "schedule needs at least four cutoffs"));
        }
        if !(self.fd_step > 1e-6 && self.fd_step < 0.1) {
            return Err(cfg_err("fd_step", "must be in (1e-6, 0.1)"));
        }
        let t = &self.tolerances;
        for (name, v) in [
            ("charge_rel", t.charge_rel),
            ("rotation", t.rotation),
            ("boost", t.boost),
            ("gauge", t.gauge),
            ("eigen_rel", t.eigen_rel),
            ("eigen_residual", t.eigen_residual),
            ("integrals", t.integrals),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(cfg_err(&format!("tolerances.{name}"), "must be positive"));
            }
        }
        let p = &self.params;
        for spec in [("params.mass_aspect", &p.mass_aspect), ("params.boundary", &p.boundary)] {
            if let Some(b) = spec.1 {
                b.to_function().check_dim(self.n).map_err(|e| cfg_err(spec.0, e.to_string()))?;
            }
        }
        if let Some(m0) = p.m0 {
            if !(m0 >= 0.0) {
                return Err(cfg_err("params.m0", "must be non-negative"));
            }
        }
        if let Some(a) = p.boost_axis {
            if a == 0 || a > self.n {
                return Err(cfg_err("params.boost_axis", format!("must be in 1..={}", self.n)));
            }
        }
        if let Some([a, b]) = p.axes {
            if a == 0 || b == 0 || a > self.n || b > self.n || a == b {
                return Err(cfg_err("params.axes", "need two distinct axes in 1..=n"));
            }
        }
        if let Some(g) = p.gauge {
            GaugeField::new(self.n, g.profile, g.direction).map_err(|e| cfg_err("params.gauge", e.to_string()))?;
        }
        for (name, v) in [("params.rapidity", p.rapidity), ("params.angle", p.angle)] {
            if let Some(v) = v {
                if !v.is_finite() || v.abs() > 3.0 * std::f64::consts::PI {
                    return Err(cfg_err(name, "must be finite and moderate"));
                }
            }
        }
        if self.output.csv.is_empty() || self.output.summary.is_empty() || self.output.plot.is_empty() {
            return Err(cfg_err("output", "file names must be non-empty"));
        }
        Ok(())
    }

    fn step(&self) -> FdStep {
        FdStep::new(self.fd_step)
    }

    fn kernel(&self) -> KernelQuadratureSpec {
        KernelQuadratureSpec {
            radial_order: self.quadrature.kernel_radial_order,
            angular_order: self.quadrature.kernel_angular_order,
        }
    }

    fn cutoffs(&self) -> crate::Result<CutoffFamily> {
        CutoffFamily::range(self.cutoff.profile, self.cutoff.k_min, self.cutoff.k_max)
    }

    fn rule(&self) -> crate::Result<SphereRule> {
        sphere_rule_seeded(self.n, self.quadrature.sphere_order, self.rng_seed)
    }

    fn charge_options(&self) -> ChargeOptions {
        ChargeOptions {
            form: None,
            radial_order: self.quadrature.radial_order,
            step: self.step(),
            rel_tol: self.tolerances.charge_rel,
        }
    }

    fn mass_aspect(&self, default: BoundarySpec) -> BoundaryFunction {
        self.params.mass_aspect.clone().unwrap_or(default).to_function()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gate {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl Gate {
    fn at_most(name: &str, value: f64, threshold: f64) -> Gate {
        Gate { name: name.into(), value, threshold, pass: value <= threshold }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChargeSummary {
    pub label: String,
    pub extrapolated: f64,
    pub error_estimate: f64,
    pub converged: bool,
}

/// One convergence-table row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub k_or_r: f64,
    pub charge: f64,
    pub extrapolated: f64,
    pub error_est: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub version: String,
    pub scenario: Scenario,
    pub n: usize,
    pub mass_vector: Option<Vec<f64>>,
    pub future_timelike: Option<bool>,
    pub gates: Vec<Gate>,
    pub charges: Vec<ChargeSummary>,
    pub values: std::collections::BTreeMap<String, f64>,
    pub all_pass: bool,
    #[serde(skip)]
    pub table: Vec<Row>,
    #[serde(skip)]
    pub table_title: String,
    #[serde(skip)]
    pub timings: Vec<(String, f64)>,
}

impl RunReport {
    fn new(cfg: &RunConfig) -> Self {
        RunReport {
            version: env!("CARGO_PKG_VERSION").into(),
            scenario: cfg.scenario,
            n: cfg.n,
            mass_vector: None,
            future_timelike: None,
            gates: vec![],
            charges: vec![],
            values: Default::default(),
            all_pass: false,
            table: vec![],
            table_title: String::new(),
            timings: vec![],
        }
    }

    fn charge(&mut self, label: &str, r: &ChargeResult) {
        self.charges.push(ChargeSummary {
            label: label.into(),
            extrapolated: r.extrapolated,
            error_estimate: r.error_estimate,
            converged: r.converged,
        });
    }

    fn table_from(&mut self, title: &str, r: &ChargeResult) {
        self.table_title = title.into();
        self.table = r
            .samples
            .iter()
            .map(|(k, v)| Row { k_or_r: *k, charge: *v, extrapolated: r.extrapolated, error_est: r.error_estimate })
            .collect();
    }

    fn mass(&mut self, p: &[f64]) {
        let m2 = p[0] * p[0] - p[1..].iter().map(|c| c * c).sum::<f64>();
        self.future_timelike = Some(p[0] > 0.0 && m2 > 0.0);
        self.mass_vector = Some(p.to_vec());
    }

    pub fn converged(&self) -> bool {
        self.charges.iter().all(|c| c.converged)
    }
}

/// `(\int m, \int m x^i)` with a high-order sphere rule.
pub fn sphere_moments(m: &BoundaryFunction, n: usize) -> crate::Result<Vec<f64>> {
    let rule = sphere_rule_seeded(n, 24, 0)?;
    let mut out = vec![rule.integrate(|x| m.eval(x))];
    for i in 0..n {
        out.push(rule.integrate(|x| m.eval(x) * x[i]));
    }
    Ok(out)
}

fn rel_gap(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |s, v| s.max(v.abs())).max(1e-300);
    a.iter().zip(b).fold(0.0f64, |s, (x, y)| s.max((x - y).abs())) / scale
}

fn run_wang(cfg: &RunConfig, rep: &mut RunReport) -> crate::Result<()> {
    let m = cfg.mass_aspect(BoundarySpec::Constant(1.0));
    let e = make_wang_metric(cfg.n, m.clone())?;
    let mv = mass_vector(&e, &cfg.cutoffs()?, &cfg.rule()?, &cfg.charge_options())?;
    for (mu, r) in mv.results.iter().enumerate() {
        rep.charge(&format!("p(e, V^{mu})"), r);
    }
    rep.table_from("p(e, V^0)", &mv.results[0]);
    let expected = sphere_moments(&m, cfg.n)?;
    rep.mass(&mv.p);
    rep.gates.push(Gate::at_most("mass_vector_vs_sphere_moments", rel_gap(&mv.p, &expected), cfg.tolerances.charge_rel));
    for (mu, v) in expected.iter().enumerate() {
        rep.values.insert(format!("expected_p{mu}"), *v);
    }
    Ok(())
}

fn run_kottler(cfg: &RunConfig, rep: &mut RunReport) -> crate::Result<()> {
    let m0 = cfg.params.m0.unwrap_or(0.1);
    let (cut, rule, opts) = (cfg.cutoffs()?, cfg.rule()?, cfg.charge_options());
    let e = make_kottler(cfg.n, m0)?;
    let mv = mass_vector(&e, &cut, &rule, &opts)?;
    for (mu, r) in mv.results.iter().enumerate() {
        rep.charge(&format!("p(e, V^{mu})"), r);
    }
    rep.table_from("p(e, V^0)", &mv.results[0]);
    rep.mass(&mv.p);
    let spatial = mv.p[1..].iter().fold(0.0f64, |s, v| s.max(v.abs())) / mv.p[0].abs().max(1e-300);
    rep.gates.push(Gate::at_most("spatial_components_vanish", spatial, cfg.tolerances.charge_rel));
    let v0 = TestFunction::Lapse(LapseFunction::basis(cfg.n, 0));
    let doubled = charge_adm(&make_kottler(cfg.n, 2.0 * m0)?, &v0, &cut, &rule, &opts)?;
    rep.charge("p(e(2 m0), V^0)", &doubled);
    let ratio = doubled.extrapolated / mv.results[0].extrapolated;
    rep.values.insert("p0_doubled_ratio".into(), ratio);
    rep.gates.push(Gate::at_most("linearity_in_m0", (ratio - 2.0).abs() / 2.0, cfg.tolerances.charge_rel));
    // mass aspect density over the sphere nodes at a large radius
    let r = cut.schedule.last().copied().unwrap_or(8.0);
    let dens: Vec<f64> = rule
        .nodes
        .iter()
        .map(|th| charge_surface_density(&e, &v0, r, th, opts.step))
        .collect::<crate::Result<_>>()?;
    let mean = dens.iter().sum::<f64>() / dens.len() as f64;
    let std = (dens.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / dens.len() as f64).sqrt();
    rep.gates.push(Gate::at_most("mass_aspect_constancy", std / mean.abs().max(1e-300), cfg.tolerances.charge_rel));
    rep.values.insert("p0_over_m0".into(), mv.p[0] / m0.max(1e-300));
    Ok(())
}

fn gauge_field(cfg: &RunConfig) -> crate::Result<GaugeField> {
    let g = cfg.params.gauge.unwrap_or_default();
    GaugeField::new(cfg.n, g.profile, g.direction)
}

fn covariance_all(
    cfg: &RunConfig,
    rep: &mut RunReport,
    e1: &MetricPerturbation,
    change: &ChartChange,
    gate: &str,
    tol: f64,
) -> crate::Result<()> {
    let (cut, rule, opts) = (cfg.cutoffs()?, cfg.rule()?, cfg.charge_options());
    let mut after = Vec::new();
    let mut transformed = Vec::new();
    let mut worst = 0.0f64;
    for mu in 0..=cfg.n {
        let r = verify_covariance(e1, change, &LapseFunction::basis(cfg.n, mu), &cut, &rule, &opts)?;
        after.push(r.p_after / cfg.n as f64);
        transformed.push(r.p_transformed / cfg.n as f64);
        rep.values.insert(format!("p{mu}_before"), r.p_before / cfg.n as f64);
        rep.values.insert(format!("p{mu}_transformed"), r.p_transformed / cfg.n as f64);
        worst = worst.max(r.gap);
    }
    // relative to the size of the mass vector
    let gap = rel_gap(&after, &transformed);
    rep.values.insert("max_componentwise_gap".into(), worst);
    rep.mass(&after);
    rep.gates.push(Gate::at_most(gate, gap, tol));
    let e2 = apply_chart_change(e1, change, opts.step)?;
    let mut hess = opts;
    hess.form = Some(IntegrandForm::Hessian);
    let r = charge_adm(&e2, &TestFunction::Lapse(LapseFunction::basis(cfg.n, 0)), &cut, &rule, &hess)?;
    rep.charge("p(e2, V^0)", &r);
    rep.table_from("p(e2, V^0)", &r);
    Ok(())
}

fn run_gauge(cfg: &RunConfig, rep: &mut RunReport) -> crate::Result<()> {
    let m = cfg.mass_aspect(BoundarySpec::Constant(1.0));
    let e1 = make_wang_metric(cfg.n, m.clone())?;
    let change = ChartChange::gauge(LorentzMap::identity(cfg.n), &gauge_field(cfg)?);
    let rule = cfg.rule()?;
    change.check_injective(cfg.n, &[cfg.cutoff.k_min as f64, cfg.cutoff.k_max as f64 + 1.0], &rule, cfg.step())?;
    covariance_all(cfg, rep, &e1, &change, "gauge_invariance", cfg.tolerances.gauge)?;
    // pure gauge perturbation of b against the Wang scale
    let pure = apply_chart_change(&MetricPerturbation::zero(cfg.n), &change, cfg.step())?;
    let mut hess = cfg.charge_options();
    hess.form = Some(IntegrandForm::Hessian);
    let pv = mass_vector(&pure, &cfg.cutoffs()?, &rule, &hess)?;
    let scale = sphere_moments(&m, cfg.n)?[0].abs().max(1e-300);
    let size = pv.p.iter().fold(0.0f64, |s, v| s.max(v.abs()));
    rep.values.insert("pure_gauge_max_component".into(), size);
    rep.gates.push(Gate::at_most("pure_gauge_mass", size / scale, cfg.tolerances.gauge));
    Ok(())
}

fn run_boost(cfg: &RunConfig, rep: &mut RunReport) -> crate::Result<()> {
    let e1 = make_wang_metric(cfg.n, cfg.mass_aspect(BoundarySpec::Constant(1.0)))?;
    let b = lorentz(
        cfg.n,
        LorentzKind::Boost { axis: cfg.params.boost_axis.unwrap_or(1), rapidity: cfg.params.rapidity.unwrap_or(0.3) },
    )?;
    covariance_all(cfg, rep, &e1, &ChartChange::Isometry(b), "boost_covariance", cfg.tolerances.boost)
}

fn run_rotation(cfg: &RunConfig, rep: &mut RunReport) -> crate::Result<()> {
    let mut a = vec![0.0; cfg.n];
    a[0] = 0.5;
    let e1 = make_wang_metric(cfg.n, cfg.mass_aspect(BoundarySpec::Affine { c: 1.0, a }))?;
    let [x, y] = cfg.params.axes.unwrap_or([1, 2]);
    let b = lorentz(cfg.n, LorentzKind::Rotation { a: x, b: y, angle: cfg.params.angle.unwrap_or(0.7) })?;
    covariance_all(cfg, rep, &e1, &ChartChange::Isometry(b), "rotation_equivariance", cfg.tolerances.rotation)
}

/// Seeded interior sample points of the ball with radii in `[0.05, 0.9]`.
pub fn interior_points(n: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            let s = v.iter().map(|c| c * c).sum::<f64>().sqrt().max(1e-12);
            let rad = 0.05 + 0.85 * rng.random::<f64>();
            v.iter().map(|c| c / s * rad).collect()
        })
        .collect()
}

/// `Laplacian V - n V` by finite differences in the ball chart.
pub fn eigen_residual(v: &Eigenfunction, x: &[f64], step: FdStep) -> f64 {
    let n = x.len();
    let f = |y: &[f64]| v.jet_ball(y, false).value;
    let h = fd::hessian(&f, x, step.ball(x));
    let g = fd::jacobian(&|y: &[f64]| vec![f(y)], x, step.ball(x));
    let rho = 0.5 * (1.0 - x.iter().map(|c| c * c).sum::<f64>());
    let phi_g: f64 = (0..n).map(|k| x[k] * g[(0, k)]).sum::<f64>() / rho;
    rho * rho * (h.trace() + (n as f64 - 2.0) * phi_g) - n as f64 * f(x)
}

fn lapse_reference(b: &BoundaryFunction, n: usize) -> Option<LapseFunction> {
    match b {
        BoundaryFunction::Constant(c) => {
            let mut coeffs = vec![0.0; n + 1];
            coeffs[0] = *c;
            Some(LapseFunction { coeffs })
        }
        BoundaryFunction::Affine { c, a } => {
            let mut coeffs = vec![*c];
            coeffs.extend_from_slice(a);
            Some(LapseFunction { coeffs })
        }
        _ => None,
    }
}

fn run_eigen(cfg: &RunConfig, rep: &mut RunReport) -> crate::Result<()> {
    let b = cfg.params.boundary.clone().unwrap_or(BoundarySpec::Constant(1.0)).to_function();
    let v = Eigenfunction::new(cfg.n, b.clone(), cfg.kernel())?;
    let fine = Eigenfunction::new(cfg.n, b.clone(), cfg.kernel().doubled())?;
    let pts = interior_points(cfg.n, 20, cfg.rng_seed);
    let reference = lapse_reference(&b, cfg.n);
    let (mut worst_rel, mut worst_res) = (0.0f64, 0.0f64);
    for x in &pts {
        let val = v.jet_ball(x, false).value;
        let refv = match &reference {
            Some(l) => l.value_ball(x),
            None => fine.jet_ball(x, false).value,
        };
        let err = (val - refv).abs();
        worst_rel = worst_rel.max(err / refv.abs().max(1.0));
        let res = eigen_residual(&v, x, cfg.step()).abs() / val.abs().max(1.0);
        worst_res = worst_res.max(res);
        let s = x.iter().map(|c| c * c).sum::<f64>().sqrt();
        rep.table.push(Row { k_or_r: 2.0 * s.atanh(), charge: val, extrapolated: refv, error_est: err });
    }
    rep.table_title = "V at sample points vs reference".into();
    let label = if reference.is_some() { "max_rel_error_vs_lapse" } else { "max_rel_error_vs_doubled_quadrature" };
    rep.gates.push(Gate::at_most(label, worst_rel, cfg.tolerances.eigen_rel));
    rep.gates.push(Gate::at_most("max_eigen_residual", worst_res, cfg.tolerances.eigen_residual));
    rep.values.insert("kernel_mass_error".into(), (v.kernel_mass() - integral_i(cfg.n, cfg.n as f64)?).abs());
    Ok(())
}

/// `\int_{R^{n-1}} |w^1|^alpha (1 + |w|^2)^-beta dw` by brute-force
/// quadrature in polar coordinates; `alpha = 0` gives `I_{n,beta}`.
pub fn brute_force_j(n: usize, alpha: f64, beta: f64) -> f64 {
    // radial part with t = tan u; angular part |w^1/|w||^alpha on S^{n-2}
    let (u, wu) = quad::gauss_legendre_interval(400, 0.0, std::f64::consts::FRAC_PI_2);
    let m = n - 1;
    let radial = quad::compensated_sum(u.iter().zip(&wu).map(|(u, w)| {
        let (s, c) = u.sin_cos();
        // t^(m - 1 + alpha) (1 + t^2)^-beta dt, dt = du / c^2
        w * (s / c).powf(m as f64 - 1.0 + alpha) * c.powf(2.0 * beta - 2.0)
    }));
    let angular = if m == 1 {
        2.0
    } else {
        let (nodes, w) = quad::product_sphere(m, 16);
        quad::compensated_sum(nodes.iter().zip(&w).map(|(x, w)| w * x[0].abs().powf(alpha)))
    };
    radial * angular
}

fn run_integrals(cfg: &RunConfig, rep: &mut RunReport) -> crate::Result<()> {
    let mut worst_q = 0.0f64;
    let mut worst_id = 0.0f64;
    let mut dims: Vec<usize> = vec![3, 4, 5];
    if !dims.contains(&cfg.n) {
        dims.push(cfg.n);
    }
    for &n in &dims {
        let nf = n as f64;
        for (alpha, beta) in [(0.0, nf), (0.0, nf + 1.0), (0.0, nf + 2.0), (2.0, nf), (2.0, nf + 1.0), (2.0, nf + 2.0), (4.0, nf + 2.0)] {
            let closed = if alpha == 0.0 { integral_i(n, beta)? } else { integral_j(n, alpha, beta)? };
            let brute = brute_force_j(n, alpha, beta);
            let err = (closed - brute).abs() / closed.abs();
            worst_q = worst_q.max(err);
            rep.table.push(Row { k_or_r: nf, charge: closed, extrapolated: brute, error_est: err });
        }
        let base = integral_i(n, nf)?;
        let ids = [
            integral_i(n, nf + 1.0)? / base - (nf + 1.0) / (2.0 * nf),
            integral_i(n, nf + 2.0)? / base - (nf + 3.0) / (4.0 * nf),
            4.0 * nf * (integral_j(n, 2.0, nf + 1.0)? - integral_j(n, 2.0, nf + 2.0)?) - (nf - 1.0) * integral_j(n, 2.0, nf)?,
        ];
        for v in ids {
            worst_id = worst_id.max(v.abs());
        }
    }
    rep.table_title = "closed form vs brute-force quadrature (k_or_r = n)".into();
    rep.gates.push(Gate::at_most("closed_form_vs_quadrature", worst_q, cfg.tolerances.integrals));
    rep.gates.push(Gate::at_most("integral_identities", worst_id, cfg.tolerances.integrals));
    Ok(())
}

/// Runs a validated config.
pub fn run(cfg: &RunConfig) -> crate::Result<RunReport> {
    let mut rep = RunReport::new(cfg);
    let t = Instant::now();
    match cfg.scenario {
        Scenario::Wang => run_wang(cfg, &mut rep)?,
        Scenario::Kottler => run_kottler(cfg, &mut rep)?,
        Scenario::Gauge => run_gauge(cfg, &mut rep)?,
        Scenario::Boost => run_boost(cfg, &mut rep)?,
        Scenario::Rotation => run_rotation(cfg, &mut rep)?,
        Scenario::EigenSelftest => run_eigen(cfg, &mut rep)?,
        Scenario::IntegralsSelftest => run_integrals(cfg, &mut rep)?,
    }
    rep.timings.push((cfg.scenario.name().into(), t.elapsed().as_secs_f64()));
    rep.all_pass = rep.gates.iter().all(|g| g.pass) && rep.converged();
    Ok(rep)
}

pub fn csv_text(rep: &RunReport) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in &rep.table {
        let _ = writeln!(s, "{:e},{:e},{:e},{:e}", r.k_or_r, r.charge, r.extrapolated, r.error_est);
    }
    s
}

pub fn summary_json(rep: &RunReport) -> String {
    serde_json::to_string_pretty(rep).expect("report serialises") + "\n"
}

/// A minimal SVG line chart of the convergence table.
pub fn svg_plot(rep: &RunReport) -> String {
    let (w, h, pad) = (640.0, 400.0, 50.0);
    let pts: Vec<(f64, f64)> = rep.table.iter().map(|r| (r.k_or_r, r.charge)).collect();
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{pad}\" y=\"25\" font-family=\"sans-serif\" font-size=\"14\">{} : {}</text>\n",
        rep.scenario.name(),
        rep.table_title
    );
    if pts.is_empty() {
        s.push_str("</svg>\n");
        return s;
    }
    let extra = rep.table.last().map(|r| r.extrapolated).unwrap_or(0.0);
    let xmin = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let xmax = pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let ymin = pts.iter().map(|p| p.1).chain([extra]).fold(f64::INFINITY, f64::min);
    let ymax = pts.iter().map(|p| p.1).chain([extra]).fold(f64::NEG_INFINITY, f64::max);
    let sx = |x: f64| pad + (x - xmin) / (xmax - xmin).max(1e-300) * (w - 2.0 * pad);
    let sy = |y: f64| h - pad - (y - ymin) / (ymax - ymin).max(1e-300) * (h - 2.0 * pad);
    let _ = writeln!(
        s,
        "<line x1=\"{pad}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n<line x1=\"{pad}\" y1=\"{pad}\" x2=\"{pad}\" y2=\"{}\" stroke=\"black\"/>",
        h - pad,
        w - pad,
        h - pad,
        h - pad
    );
    let path: Vec<String> = pts.iter().map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y))).collect();
    let _ = writeln!(s, "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"{}\"/>", path.join(" "));
    for (x, y) in &pts {
        let _ = writeln!(s, "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"steelblue\"/>", sx(*x), sy(*y));
    }
    let _ = writeln!(
        s,
        "<line x1=\"{pad}\" y1=\"{0:.2}\" x2=\"{1}\" y2=\"{0:.2}\" stroke=\"firebrick\" stroke-dasharray=\"6 4\"/>",
        sy(extra),
        w - pad
    );
    let _ = writeln!(
        s,
        "<text x=\"{pad}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">x: {xmin:.3} .. {xmax:.3}   y: {ymin:.6e} .. {ymax:.6e}</text>",
        h - 15.0
    );
    s.push_str("</svg>\n");
    s
}

pub fn write_outputs(rep: &RunReport, cfg: &RunConfig, out: &Path, plots: bool) -> std::io::Result<()> {
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join(&cfg.output.csv), csv_text(rep))?;
    std::fs::write(out.join(&cfg.output.summary), summary_json(rep))?;
    if plots {
        std::fs::write(out.join(&cfg.output.plot), svg_plot(rep))?;
    }
    Ok(())
}

pub fn scenario_table() -> String {
    let mut s = format!("{:<20} {:<62} {}\n", "scenario", "description", "params");
    for sc in Scenario::ALL {
        let (d, p) = sc.describe();
        let _ = writeln!(s, "{:<20} {:<62} {}", sc.name(), d, p);
    }
    s
}

fn is_numerical(e: &Error) -> bool {
    !matches!(e, Error::Invalid(_) | Error::Unsupported(_))
}

/// Entry point of the binary; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_PASS };
            let _ = e.print();
            return code;
        }
    };
    match cli.command {
        Command::ListScenarios => {
            print!("{}", scenario_table());
            EXIT_PASS
        }
        Command::Run { config, out, no_plots } => {
            let text = match std::fs::read_to_string(&config) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("error: cannot read config {}: {e}", config.display());
                    return EXIT_CONFIG;
                }
            };
            let cfg = match RunConfig::from_json(&text) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return EXIT_CONFIG;
                }
            };
            let rep = match run(&cfg) {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("error: {e}");
                    return if is_numerical(&e) { EXIT_NUMERICAL } else { EXIT_CONFIG };
                }
            };
            let out = out.unwrap_or_else(|| PathBuf::from("."));
            if let Err(e) = write_outputs(&rep, &cfg, &out, !no_plots) {
                eprintln!("error: writing outputs to {}: {e}", out.display());
                return EXIT_NUMERICAL;
            }
            for g in &rep.gates {
                eprintln!("{} {:<36} {:.3e} (<= {:.1e})", if g.pass { "PASS" } else { "FAIL" }, g.name, g.value, g.threshold);
            }
            for c in rep.charges.iter().filter(|c| !c.converged) {
                eprintln!("not converged: {} (error estimate {:.3e})", c.label, c.error_estimate);
            }
            for (name, secs) in &rep.timings {
                eprintln!("time {name}: {secs:.2} s");
            }
            if rep.all_pass {
                EXIT_PASS
            } else {
                EXIT_NUMERICAL
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_fields_are_rejected() {
        let e = RunConfig::from_json(r#"{"scenario": "wang", "bogus": 1}"#).unwrap_err();
        assert_eq!(e.field, "bogus");
        let e = RunConfig::from_json(r#"{"scenario": "wang", "cutoff": {"k_min": 4, "kmax": 9}}"#).unwrap_err();
        assert_eq!(e.field, "cutoff.kmax");
    }

    #[test]
    fn unknown_scenario_is_a_config_error() {
        assert!(RunConfig::from_json(r#"{"scenario": "nope"}"#).is_err());
    }

    #[test]
    fn validation_names_fields() {
        let e = RunConfig::from_json(r#"{"scenario": "wang", "cutoff": {"k_min": 1}}"#).unwrap_err();
        assert_eq!(e.field, "cutoff.k_min");
        let e = RunConfig::from_json(r#"{"scenario": "wang", "n": 2}"#).unwrap_err();
        assert_eq!(e.field, "n");
        let e = RunConfig::from_json(r#"{"scenario": "wang", "quadrature": {"sphere_order": 2}}"#).unwrap_err();
        assert_eq!(e.field, "quadrature.sphere_order");
    }

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::from_json(r#"{"scenario": "integrals_selftest"}"#).unwrap();
        assert_eq!(c.n, 3);
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), c);
    }

    #[test]
    fn seven_scenarios() {
        assert_eq!(scenario_table().lines().count(), 8);
    }

    #[test]
    fn brute_force_matches_i() {
        for n in 3..6 {
            let nf = n as f64;
            let b = brute_force_j(n, 0.0, nf);
            assert!((b - integral_i(n, nf).unwrap()).abs() < 1e-10 * b);
        }
    }
}
