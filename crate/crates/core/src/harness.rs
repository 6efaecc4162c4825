//! Named, reproducible experiments.
//!
//! Each experiment binds generators, procedures and metrics to one claim
//! about FDR under average significance level control and returns an
//! [`ExperimentReport`]: one [`Check`] per verdict with the numbers behind
//! it, plus CSV detail tables. Statistical verdicts use explicit margins
//! (three standard errors unless stated otherwise).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generators::{
    null_permutation_transform, random_null_permutation, AltLaw, GeneratorSpec, SlopeProfile,
};
use crate::metrics::{convergence_profile, fdp, mc_fdr_many, ConvergenceRow, Rule, SimulationReport};
use crate::procedures::{permutation_image, permute, ProcedureSpec, StepUp};
use crate::rng::{derive_seed, replication_rng};
use crate::shape::{NuMeasure, ShapeFunction};

/// Standard errors allowed in statistical verdicts.
pub const SIGMAS: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub claim: String,
    /// Which property or construction the check exercises.
    pub reference: String,
    pub estimate: f64,
    pub se: f64,
    /// The value `estimate` is compared against.
    pub bound: f64,
    /// Allowed slack (or required excess) around `bound`.
    pub margin: f64,
    pub pass: bool,
}

impl Check {
    /// Passes when `estimate <= bound + margin`.
    pub fn at_most(claim: impl Into<String>, reference: &str, estimate: f64, se: f64, bound: f64, margin: f64) -> Self {
        Self {
            claim: claim.into(),
            reference: reference.into(),
            estimate,
            se,
            bound,
            margin,
            pass: estimate <= bound + margin,
        }
    }

    /// Passes when `estimate >= bound - margin`.
    pub fn at_least(claim: impl Into<String>, reference: &str, estimate: f64, se: f64, bound: f64, margin: f64) -> Self {
        Self {
            claim: claim.into(),
            reference: reference.into(),
            estimate,
            se,
            bound,
            margin,
            pass: estimate >= bound - margin,
        }
    }

    /// Passes when `estimate - bound >= margin` and `estimate > bound`.
    pub fn exceeds(claim: impl Into<String>, reference: &str, estimate: f64, se: f64, bound: f64, margin: f64) -> Self {
        Self {
            claim: claim.into(),
            reference: reference.into(),
            estimate,
            se,
            bound,
            margin,
            pass: estimate - bound >= margin && estimate > bound,
        }
    }

    /// Passes when `count` mismatches is zero.
    pub fn no_mismatches(claim: impl Into<String>, reference: &str, count: usize) -> Self {
        Self {
            claim: claim.into(),
            reference: reference.into(),
            estimate: count as f64,
            se: 0.0,
            bound: 0.0,
            margin: 0.0,
            pass: count == 0,
        }
    }
}

/// A named CSV table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Self {
            name: name.into(),
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn simulation(name: &str, reports: &[SimulationReport]) -> Self {
        let mut t = Self::new(name, &SimulationReport::CSV_HEADER);
        t.rows.extend(reports.iter().map(SimulationReport::csv_record));
        t
    }

    /// RFC 4180 CSV with LF line endings.
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        w.into_inner()
            .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub seed: u64,
    /// Fully resolved configuration.
    pub config: serde_json::Value,
    pub pass: bool,
    pub checks: Vec<Check>,
    #[serde(skip)]
    pub tables: Vec<Table>,
}

impl ExperimentReport {
    fn new(experiment: &str, seed: u64, config: &impl Serialize) -> Result<Self> {
        Ok(Self {
            experiment: experiment.into(),
            seed,
            config: serde_json::to_value(config)?,
            pass: true,
            checks: Vec::new(),
            tables: Vec::new(),
        })
    }

    fn push(&mut self, check: Check) {
        self.pass &= check.pass;
        self.checks.push(check);
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.pass)
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    /// Writes `<experiment>.json` and one `<experiment>_<table>.csv` per
    /// table into `dir`, returning the paths written.
    pub fn write_to(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let json = dir.join(format!("{}.json", self.experiment));
        fs::write(&json, serde_json::to_string_pretty(self)? + "\n")?;
        written.push(json);
        for table in &self.tables {
            let path = dir.join(format!("{}_{}.csv", self.experiment, table.name));
            fs::write(&path, table.to_csv()?)?;
            written.push(path);
        }
        Ok(written)
    }

    /// One line per check, `PASS`/`FAIL` first.
    pub fn summary_lines(&self) -> Vec<String> {
        self.checks
            .iter()
            .map(|c| {
                format!(
                    "{} {}: estimate={:.6} se={:.6} bound={:.6} margin={:.6}",
                    if c.pass { "PASS" } else { "FAIL" },
                    c.claim,
                    c.estimate,
                    c.se,
                    c.bound,
                    c.margin
                )
            })
            .collect()
    }
}

/// Command-line style overrides for experiment defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Overrides {
    pub m: Option<usize>,
    pub q: Option<f64>,
    pub qs: Option<Vec<f64>>,
    pub m_list: Option<Vec<usize>>,
    pub n_reps: Option<usize>,
    pub lambda: Option<f64>,
}

fn reject_override(name: &str, flag: &str, present: bool) -> Result<()> {
    if present {
        Err(Error::InvalidParameter(format!("experiment {name} does not accept {flag}")))
    } else {
        Ok(())
    }
}

fn check_reps(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::InvalidParameter("experiments need at least 2 replications".into()));
    }
    Ok(())
}

/// Names accepted by [`run_experiment`].
pub const EXPERIMENTS: [&str; 6] = [
    "counterexample",
    "by-control",
    "fdrhat-bias",
    "asymptotic-bh",
    "oracle-equivalence",
    "storey-failure",
];

/// Runs a named experiment with defaults adjusted by `overrides`.
pub fn run_experiment(name: &str, overrides: &Overrides, seed: u64) -> Result<ExperimentReport> {
    let o = overrides;
    match name {
        "counterexample" => {
            reject_override(name, "--m-list", o.m_list.is_some())?;
            reject_override(name, "--qs", o.qs.is_some())?;
            reject_override(name, "--lambda", o.lambda.is_some())?;
            let d = CounterexampleConfig::default();
            exp_counterexample(
                &CounterexampleConfig {
                    m: o.m.unwrap_or(d.m),
                    q: o.q.unwrap_or(d.q),
                    n_reps: o.n_reps.unwrap_or(d.n_reps),
                },
                seed,
            )
        }
        "by-control" => {
            reject_override(name, "--m-list", o.m_list.is_some())?;
            reject_override(name, "--lambda", o.lambda.is_some())?;
            let d = ByControlConfig::default();
            exp_by_control(
                &ByControlConfig {
                    m: o.m.unwrap_or(d.m),
                    qs: o.qs.clone().or(o.q.map(|q| vec![q])).unwrap_or(d.qs),
                    n_reps: o.n_reps.unwrap_or(d.n_reps),
                    ..d
                },
                seed,
            )
        }
        "fdrhat-bias" => {
            reject_override(name, "--q/--qs", o.q.is_some() || o.qs.is_some())?;
            reject_override(name, "--m-list", o.m_list.is_some())?;
            reject_override(name, "--lambda", o.lambda.is_some())?;
            let d = FdrHatBiasConfig::default();
            exp_fdrhat_bias(
                &FdrHatBiasConfig {
                    m: o.m.unwrap_or(d.m),
                    n_reps: o.n_reps.unwrap_or(d.n_reps),
                    ..d
                },
                seed,
            )
        }
        "asymptotic-bh" => {
            reject_override(name, "--m (use --m-list)", o.m.is_some())?;
            reject_override(name, "--qs", o.qs.is_some())?;
            reject_override(name, "--lambda", o.lambda.is_some())?;
            let d = AsymptoticBhConfig::default();
            exp_asymptotic_bh(
                &AsymptoticBhConfig {
                    q: o.q.unwrap_or(d.q),
                    m_list: o.m_list.clone().unwrap_or(d.m_list),
                    n_reps: o.n_reps.unwrap_or(d.n_reps),
                    ..d
                },
                seed,
            )
        }
        "oracle-equivalence" => {
            reject_override(name, "--m/--m-list", o.m.is_some() || o.m_list.is_some())?;
            reject_override(name, "--qs", o.qs.is_some())?;
            reject_override(name, "--lambda", o.lambda.is_some())?;
            let d = OracleEquivalenceConfig::default();
            exp_oracle_equivalence(
                &OracleEquivalenceConfig {
                    q: o.q.unwrap_or(d.q),
                    n_reps: o.n_reps.unwrap_or(d.n_reps),
                    ..d
                },
                seed,
            )
        }
        "storey-failure" => {
            reject_override(name, "--qs", o.qs.is_some())?;
            let d = StoreyFailureConfig::default();
            exp_storey_failure(
                &StoreyFailureConfig {
                    m_list: o.m_list.clone().or(o.m.map(|m| vec![m])).unwrap_or(d.m_list),
                    q: o.q.unwrap_or(d.q),
                    lambda: o.lambda.unwrap_or(d.lambda),
                    n_reps: o.n_reps.unwrap_or(d.n_reps),
                },
                seed,
            )
        }
        other => Err(Error::InvalidParameter(format!(
            "unknown experiment {other:?}; expected one of {}",
            EXPERIMENTS.join(", ")
        ))),
    }
}

// ---------------------------------------------------------------------------
// BH counterexample

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleConfig {
    pub m: usize,
    pub q: f64,
    pub n_reps: usize,
}

impl Default for CounterexampleConfig {
    fn default() -> Self {
        Self {
            m: 2,
            q: 0.25,
            n_reps: 200_000,
        }
    }
}

/// `q + q²/4`: the probability of the two disjoint events that force BH to
/// reject under the counterexample law. Exact when `m = 2`.
pub fn counterexample_lower_bound(q: f64) -> f64 {
    q + q * q / 4.0
}

/// BH over-rejects under average level control with independent p-values,
/// while BY stays below `q`.
pub fn exp_counterexample(cfg: &CounterexampleConfig, seed: u64) -> Result<ExperimentReport> {
    check_reps(cfg.n_reps)?;
    if !(cfg.q > 0.0 && cfg.q < 2.0 / 3.0) {
        return Err(Error::Precondition(format!("the counterexample needs 0 < q < 2/3, got {}", cfg.q)));
    }
    if cfg.m < 2 {
        return Err(Error::Precondition(format!("the counterexample needs m >= 2, got {}", cfg.m)));
    }
    let mut report = ExperimentReport::new("counterexample", seed, cfg)?;
    let gen = GeneratorSpec::Counterexample { m: cfg.m, q: cfg.q };
    let rules = [Rule::StepUp(ProcedureSpec::bh(cfg.q)), Rule::StepUp(ProcedureSpec::by(cfg.q))];
    let reports = mc_fdr_many(&gen, &rules, cfg.n_reps, seed)?;
    let (bh, by) = (&reports[0], &reports[1]);
    let reference = "BH counterexample under average level control";
    report.push(Check::exceeds(
        "BH FDR exceeds q",
        reference,
        bh.mean_fdp,
        bh.se(),
        cfg.q,
        SIGMAS * bh.se(),
    ));
    report.push(Check::at_least(
        "BH FDR at least q + q^2/4",
        reference,
        bh.mean_fdp,
        bh.se(),
        counterexample_lower_bound(cfg.q),
        SIGMAS * bh.se(),
    ));
    report.push(Check::at_most(
        "BY FDR at most q",
        "BY control under arbitrary dependence",
        by.mean_fdp,
        by.se(),
        cfg.q,
        SIGMAS * by.se(),
    ));
    report.tables.push(Table::simulation("fdr", &reports));
    Ok(report)
}

// ---------------------------------------------------------------------------
// BY and Blanchard-Roquain shapes

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ByControlConfig {
    /// Size of the non-counterexample generators.
    pub m: usize,
    pub qs: Vec<f64>,
    pub n_reps: usize,
    pub block_size: usize,
    pub rhos: Vec<f64>,
}

impl Default for ByControlConfig {
    fn default() -> Self {
        Self {
            m: 200,
            qs: vec![0.05, 0.1, 0.2],
            n_reps: 4000,
            block_size: 10,
            rhos: vec![0.0, 0.5, 0.8],
        }
    }
}

fn power_alt() -> AltLaw {
    AltLaw::Power { exponent: 0.2 }
}

/// The average-level generator family used for the dependence-robust shapes.
pub fn by_control_generators(m: usize, q: f64, block_size: usize, rhos: &[f64]) -> Vec<GeneratorSpec> {
    let mut gens = vec![
        GeneratorSpec::Counterexample { m: 2, q },
        GeneratorSpec::Counterexample { m: 10, q },
        GeneratorSpec::ClassicalIid { m, m0: m / 2, alternative: power_alt() },
        GeneratorSpec::AverageSlopes {
            m,
            m0: m / 2,
            profile: SlopeProfile::new(vec![2.0], power_alt()),
        },
        GeneratorSpec::AverageSlopes {
            m,
            m0: m,
            profile: SlopeProfile::new(vec![4.0, 0.0, 0.0, 0.0], power_alt()),
        },
    ];
    gens.extend(rhos.iter().map(|&rho| GeneratorSpec::BlockDependent {
        m,
        m0: m / 2,
        block_size,
        rho,
        profile: SlopeProfile::new(vec![2.0], power_alt()),
    }));
    gens
}

/// BY and two `ν`-induced shapes for a problem of size `m`.
pub fn dependence_robust_procedures(q: f64, m: usize) -> Vec<ProcedureSpec<f64>> {
    vec![
        ProcedureSpec::by(q),
        ProcedureSpec::with_shape(q, ShapeFunction::Nu(NuMeasure::uniform_atoms(m))),
        ProcedureSpec::with_shape(q, ShapeFunction::Nu(NuMeasure::linear_decay_atoms(m))),
    ]
}

pub fn exp_by_control(cfg: &ByControlConfig, seed: u64) -> Result<ExperimentReport> {
    check_reps(cfg.n_reps)?;
    let mut report = ExperimentReport::new("by-control", seed, cfg)?;
    let mut all = Vec::new();
    for (qi, &q) in cfg.qs.iter().enumerate() {
        for (gi, gen) in by_control_generators(cfg.m, q, cfg.block_size, &cfg.rhos).iter().enumerate() {
            let rules: Vec<Rule> = dependence_robust_procedures(q, gen.m()).into_iter().map(Rule::StepUp).collect();
            let cell_seed = derive_seed(seed, (qi * 64 + gi) as u64);
            let reports = mc_fdr_many(gen, &rules, cfg.n_reps, cell_seed)?;
            for r in &reports {
                report.push(Check::at_most(
                    format!("{} FDR at most q on {}", r.rule.label(), gen.label()),
                    "dependence-robust shapes under average level control",
                    r.mean_fdp,
                    r.se(),
                    q,
                    SIGMAS * r.se(),
                ));
            }
            all.extend(reports);
        }
    }
    report.tables.push(Table::simulation("fdr", &all));
    Ok(report)
}

// ---------------------------------------------------------------------------
// Upward bias of fdr_hat

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdrHatBiasConfig {
    pub m: usize,
    pub n_reps: usize,
    pub t_points: usize,
}

impl Default for FdrHatBiasConfig {
    fn default() -> Self {
        Self {
            m: 100,
            n_reps: 4000,
            t_points: 20,
        }
    }
}

/// Independent average-level generators.
pub fn independent_average_generators(m: usize) -> Vec<GeneratorSpec> {
    vec![
        GeneratorSpec::ClassicalIid { m, m0: m / 2, alternative: power_alt() },
        GeneratorSpec::AverageSlopes {
            m,
            m0: m / 2,
            profile: SlopeProfile::new(vec![2.0], power_alt()),
        },
        GeneratorSpec::AverageSlopes {
            m,
            m0: m,
            profile: SlopeProfile::new(vec![4.0, 0.0, 0.0, 0.0], power_alt()),
        },
        GeneratorSpec::Counterexample { m: 10, q: 0.25 },
    ]
}

/// `E fdr_hat(t) >= FDR` of the fixed cutoff `t` on every grid point.
pub fn exp_fdrhat_bias(cfg: &FdrHatBiasConfig, seed: u64) -> Result<ExperimentReport> {
    check_reps(cfg.n_reps)?;
    if cfg.t_points == 0 {
        return Err(Error::InvalidParameter("t_points must be positive".into()));
    }
    let mut report = ExperimentReport::new("fdrhat-bias", seed, cfg)?;
    let rules: Vec<Rule> = (1..=cfg.t_points)
        .map(|k| Rule::Fixed { t: k as f64 / cfg.t_points as f64 })
        .collect();
    let mut all = Vec::new();
    for (gi, gen) in independent_average_generators(cfg.m).iter().enumerate() {
        let reports = mc_fdr_many(gen, &rules, cfg.n_reps, derive_seed(seed, gi as u64))?;
        for r in &reports {
            let se = r.fdr_hat_gap_se.unwrap_or(0.0);
            report.push(Check::at_least(
                format!("mean fdr_hat >= FDR for {} on {}", r.rule.label(), gen.label()),
                "upward bias of the fixed-cutoff FDR estimate",
                r.mean_fdr_hat.unwrap_or(f64::NAN),
                se,
                r.mean_fdp,
                SIGMAS * se,
            ));
        }
        all.extend(reports);
    }
    report.tables.push(Table::simulation("fixed_cutoffs", &all));
    Ok(report)
}

// ---------------------------------------------------------------------------
// Asymptotic BH control and conservative consistency

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticBhConfig {
    pub q: f64,
    pub m_list: Vec<usize>,
    pub n_reps: usize,
    pub null_fraction: f64,
    pub alt_exponent: f64,
    pub block_size: usize,
    pub rho: f64,
}

impl Default for AsymptoticBhConfig {
    fn default() -> Self {
        Self {
            q: 0.1,
            m_list: vec![100, 1000, 10_000],
            n_reps: 500,
            null_fraction: 0.5,
            alt_exponent: 0.2,
            block_size: 10,
            rho: 0.5,
        }
    }
}

/// Allowed excess of the BH FDR over `q` at size `m`.
pub fn asymptotic_tolerance(m: usize) -> f64 {
    match m {
        0..=100 => 0.05,
        101..=1000 => 0.02,
        _ => 0.01,
    }
}

/// Allowed uniform deviation of `V(t)/m` or `R(t)/m` from its limit.
pub fn lln_tolerance(m: usize) -> f64 {
    let mf = m as f64;
    3.0 / mf.sqrt() + 1.0 / mf
}

/// Allowed shortfall of `min_t (fdr_hat(t) - FDP(t))`: `3·m^{-1/2}·C` with
/// `C = 1 / F(t_low)`, since the shortfall is at most
/// `sup_t (V(t)/m - t) / (R(t_low)/m)`.
pub fn consistency_tolerance(m: usize, f_low: f64) -> f64 {
    3.0 / (m as f64).sqrt() / f_low
}

pub fn asymptotic_generators(cfg: &AsymptoticBhConfig, m: usize) -> Vec<GeneratorSpec> {
    let m0 = (cfg.null_fraction * m as f64).round() as usize;
    let alt = AltLaw::Power { exponent: cfg.alt_exponent };
    let sharp = SlopeProfile::new(vec![m as f64 / m0.max(1) as f64], alt);
    vec![
        GeneratorSpec::ClassicalIid { m, m0, alternative: alt },
        GeneratorSpec::AverageSlopes { m, m0, profile: sharp.clone() },
        GeneratorSpec::BlockDependent {
            m,
            m0,
            block_size: cfg.block_size,
            rho: cfg.rho,
            profile: sharp,
        },
    ]
}

/// Generator label without its size parameters.
fn family_name(gen: &GeneratorSpec) -> String {
    let label = gen.label();
    match label.find("(m=") {
        Some(i) => label[..i].to_string(),
        None => label,
    }
}

/// BH controls FDR as `m` grows, and `fdr_hat` is conservatively consistent.
///
/// Refuses generators with no `t*` such that `F(t*) > 0` and
/// `G(t*)/F(t*) < q`.
pub fn exp_asymptotic_bh(cfg: &AsymptoticBhConfig, seed: u64) -> Result<ExperimentReport> {
    check_reps(cfg.n_reps)?;
    if cfg.m_list.is_empty() {
        return Err(Error::InvalidParameter("m_list is empty".into()));
    }
    let mut report = ExperimentReport::new("asymptotic-bh", seed, cfg)?;
    let first = cfg.m_list[0];
    let families = asymptotic_generators(cfg, first);
    let mut fdr_rows = Vec::new();
    let mut conv = Table::new("convergence", &[&["generator"], &ConvergenceRow::CSV_HEADER[..]].concat());
    for (gi, family) in families.iter().enumerate() {
        let limits = family.limit_functions()?;
        if limits.find_t_star(cfg.q).is_none() {
            return Err(Error::Precondition(format!(
                "{}: no t* with F(t*) > 0 and G(t*)/F(t*) < q",
                family.label()
            )));
        }
        for (mi, &m) in cfg.m_list.iter().enumerate() {
            let gen = &asymptotic_generators(cfg, m)[gi];
            let seed_m = derive_seed(seed, (gi * 64 + mi) as u64);
            let r = mc_fdr_many(gen, &[Rule::StepUp(ProcedureSpec::bh(cfg.q))], cfg.n_reps, seed_m)?.remove(0);
            report.push(Check::at_most(
                format!("BH FDR at most q + eps(m) on {}", gen.label()),
                "asymptotic BH control",
                r.mean_fdp,
                r.se(),
                cfg.q,
                asymptotic_tolerance(m),
            ));
            fdr_rows.push(r);
        }

        let rows = convergence_profile(family, None, &cfg.m_list, cfg.n_reps, derive_seed(seed, 1000 + gi as u64))?;
        for (k, row) in rows.iter().enumerate() {
            let tol = lln_tolerance(row.m);
            let limits_m = asymptotic_generators(cfg, row.m)[gi].limit_functions()?;
            let label = asymptotic_generators(cfg, row.m)[gi].label();
            report.push(Check::at_most(
                format!("sup |V/m - G| within tolerance on {label}"),
                "law of large numbers for V(t)/m",
                row.mean_sup_v_dev,
                0.0,
                0.0,
                tol,
            ));
            report.push(Check::at_most(
                format!("sup |R/m - F| within tolerance on {label}"),
                "law of large numbers for R(t)/m",
                row.mean_sup_r_dev,
                0.0,
                0.0,
                tol,
            ));
            report.push(Check::at_least(
                format!("1% quantile of min (fdr_hat - FDP) above -eps(m) on {label}"),
                "conservative consistency of fdr_hat",
                row.q01_min_fdr_hat_gap,
                0.0,
                0.0,
                consistency_tolerance(row.m, limits_m.f(row.t_low)),
            ));
            if k > 0 {
                let prev = &rows[k - 1];
                for (what, now, before) in [
                    ("sup |V/m - G|", row.mean_sup_v_dev, prev.mean_sup_v_dev),
                    ("sup |R/m - F|", row.mean_sup_r_dev, prev.mean_sup_r_dev),
                    ("sup |FDP - G/F|", row.mean_sup_fdp_dev, prev.mean_sup_fdp_dev),
                ] {
                    report.push(Check::at_most(
                        format!("{what} shrinks from m={} to m={} on {}", prev.m, row.m, family_name(family)),
                        "uniform convergence to the limits",
                        now,
                        0.0,
                        before,
                        0.0,
                    ));
                }
            }
            let mut rec = vec![family.label()];
            rec.extend(row.csv_record());
            conv.rows.push(rec);
        }
    }
    report.tables.push(Table::simulation("bh_fdr", &fdr_rows));
    report.tables.push(conv);
    Ok(report)
}

// ---------------------------------------------------------------------------
// Permutation invariance and the rescaling reduction

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleEquivalenceConfig {
    pub q: f64,
    pub n_reps: usize,
    pub lambda: f64,
}

impl Default for OracleEquivalenceConfig {
    fn default() -> Self {
        Self {
            q: 0.1,
            n_reps: 1000,
            lambda: 0.5,
        }
    }
}

pub fn oracle_generators() -> Vec<GeneratorSpec> {
    vec![
        GeneratorSpec::Counterexample { m: 4, q: 0.25 },
        GeneratorSpec::AverageSlopes {
            m: 40,
            m0: 40,
            profile: SlopeProfile::new(vec![4.0, 0.0, 0.0, 0.0], power_alt()),
        },
        GeneratorSpec::ClassicalIid { m: 50, m0: 25, alternative: power_alt() },
        GeneratorSpec::AverageSlopes {
            m: 20,
            m0: 10,
            profile: SlopeProfile::new(vec![2.0], power_alt()),
        },
        GeneratorSpec::BlockDependent {
            m: 30,
            m0: 20,
            block_size: 5,
            rho: 0.5,
            profile: SlopeProfile::new(vec![1.5], power_alt()),
        },
    ]
}

/// One-sided Kolmogorov statistic `sup_α (F̂(α) - α)` of a sample against
/// the uniform CDF; values above 1 never count toward `F̂` below 1.
pub fn uniform_excess_statistic(sample: &[f64]) -> f64 {
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .filter(|(_, &x)| x <= 1.0)
        .map(|(i, &x)| (i + 1) as f64 / n - x)
        .fold(0.0, f64::max)
}

/// Checks the identities behind the rescaling reduction replication by
/// replication: rejection sets move with any permutation, FDP is unchanged
/// by permutations of the nulls, and the rescaled nulls are super-uniform.
pub fn exp_oracle_equivalence(cfg: &OracleEquivalenceConfig, seed: u64) -> Result<ExperimentReport> {
    use rand::seq::SliceRandom;

    check_reps(cfg.n_reps)?;
    let mut report = ExperimentReport::new("oracle-equivalence", seed, cfg)?;
    let mut detail = Table::new(
        "identities",
        &["generator", "procedure", "n_reps", "set_mismatches", "fdp_mismatches"],
    );
    let mut ks = Table::new("rescaled_nulls", &["generator", "n", "excess_statistic", "bound"]);
    for (gi, gen) in oracle_generators().iter().enumerate() {
        let sampler = gen.prepare()?;
        let m = sampler.m();
        let gen_seed = derive_seed(seed, gi as u64);
        let procedures = [
            ProcedureSpec::bh(cfg.q),
            ProcedureSpec::by(cfg.q),
            ProcedureSpec::storey(cfg.q, cfg.lambda),
        ];
        for (pi, spec) in procedures.iter().enumerate() {
            let up = StepUp::new(spec.clone(), m)?;
            let mut set_mismatches = 0usize;
            let mut fdp_mismatches = 0usize;
            for rep in 0..cfg.n_reps as u64 {
                let problem = sampler.sample(gen_seed, rep);
                let mut rng = replication_rng(derive_seed(gen_seed, 100 + pi as u64), rep);
                let direct = up.apply(&problem)?;

                let mut sigma: Vec<usize> = (0..m).collect();
                if rep > 0 {
                    sigma.shuffle(&mut rng);
                }
                let moved = up.apply(&permute(&problem, &sigma)?)?;
                if permutation_image(&direct, &sigma)? != moved {
                    set_mismatches += 1;
                }

                // a permutation of the nulls only, in push form
                let pull = random_null_permutation(problem.null_mask(), &mut rng);
                let mut push = vec![0; m];
                for (i, &s) in pull.iter().enumerate() {
                    push[s] = i;
                }
                let within = permute(&problem, &push)?;
                let after = up.apply(&within)?;
                if fdp(&after, within.null_mask()) != fdp(&direct, problem.null_mask())
                    || after.len() != direct.len()
                {
                    fdp_mismatches += 1;
                }
            }
            let label = format!("{} on {}", spec.label(), gen.label());
            report.push(Check::no_mismatches(
                format!("rejections follow the permutation: {label}"),
                "permutation invariance",
                set_mismatches,
            ));
            report.push(Check::no_mismatches(
                format!("FDP unchanged by null permutations: {label}"),
                "rescaling reduction, final identity",
                fdp_mismatches,
            ));
            detail.rows.push(vec![
                gen.label(),
                spec.label(),
                cfg.n_reps.to_string(),
                set_mismatches.to_string(),
                fdp_mismatches.to_string(),
            ]);
        }

        // rescaled nulls: first null coordinate across replications
        let first_null = sampler
            .null_mask()
            .iter()
            .position(|&n| n)
            .ok_or(Error::NoNulls)?;
        let sample = (0..cfg.n_reps as u64)
            .map(|rep| {
                let p = sampler.sample(gen_seed, rep);
                null_permutation_transform(&p, gen_seed, rep).map(|t| t.pvalues()[first_null])
            })
            .collect::<Result<Vec<_>>>()?;
        let stat = uniform_excess_statistic(&sample);
        let bound = SIGMAS * 0.5 / (sample.len() as f64).sqrt();
        report.push(Check::at_most(
            format!("rescaled null is super-uniform on {}", gen.label()),
            "classical level after null permutation and m/m0 rescaling",
            stat,
            0.5 / (sample.len() as f64).sqrt(),
            0.0,
            bound,
        ));
        ks.rows.push(vec![gen.label(), sample.len().to_string(), stat.to_string(), bound.to_string()]);
    }
    report.tables.push(detail);
    report.tables.push(ks);
    Ok(report)
}

// ---------------------------------------------------------------------------
// Storey-adaptive failure

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreyFailureConfig {
    pub m_list: Vec<usize>,
    pub q: f64,
    pub lambda: f64,
    pub n_reps: usize,
}

impl Default for StoreyFailureConfig {
    fn default() -> Self {
        Self {
            m_list: vec![100, 10_000],
            q: 0.1,
            lambda: 0.5,
            n_reps: 1000,
        }
    }
}

/// The Storey-adaptive procedure over-rejects on average-level nulls packed
/// below `λ`, while BY still controls FDR; with classical nulls the
/// adaptive procedure is fine.
pub fn exp_storey_failure(cfg: &StoreyFailureConfig, seed: u64) -> Result<ExperimentReport> {
    check_reps(cfg.n_reps)?;
    let mut report = ExperimentReport::new("storey-failure", seed, cfg)?;
    let storey = Rule::StepUp(ProcedureSpec::storey(cfg.q, cfg.lambda));
    let by = Rule::StepUp(ProcedureSpec::by(cfg.q));
    let mut all = Vec::new();
    for (mi, &m) in cfg.m_list.iter().enumerate() {
        let breaker = GeneratorSpec::StoreyBreaker {
            m,
            lambda: cfg.lambda,
            null_fraction: 0.5f64.min(cfg.lambda),
            alt_exponent: 0.2,
        };
        let reports = mc_fdr_many(&breaker, &[storey.clone(), by.clone()], cfg.n_reps, derive_seed(seed, mi as u64))?;
        let (s, b) = (&reports[0], &reports[1]);
        report.push(Check::exceeds(
            format!("Storey-adaptive FDR exceeds q on {}", breaker.label()),
            "adaptive null-proportion estimates fail under average level control",
            s.mean_fdp,
            s.se(),
            cfg.q,
            SIGMAS * s.se(),
        ));
        report.push(Check::at_most(
            format!("BY FDR at most q on {}", breaker.label()),
            "BY control under average level control",
            b.mean_fdp,
            b.se(),
            cfg.q,
            SIGMAS * b.se(),
        ));
        all.extend(reports);

        let classical = GeneratorSpec::ClassicalIid { m, m0: m / 2, alternative: power_alt() };
        let c = mc_fdr_many(&classical, std::slice::from_ref(&storey), cfg.n_reps, derive_seed(seed, 100 + mi as u64))?.remove(0);
        report.push(Check::at_most(
            format!("Storey-adaptive FDR at most q on {}", classical.label()),
            "adaptive control under classical level control",
            c.mean_fdp,
            c.se(),
            cfg.q,
            SIGMAS * c.se(),
        ));
        all.push(c);
    }
    report.tables.push(Table::simulation("fdr", &all));
    Ok(report)
}
