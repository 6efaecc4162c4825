//! Resumable cross-product sweeps.
//!
//! Every cell (generator at one size, procedure at one level) is keyed by
//! the SHA-256 of its canonical JSON spec and cached under `cells/`, so a
//! rerun only computes cells that are missing. All cells share the sweep
//! seed, which makes procedures within one generator directly comparable
//! and lets a cell reproduce the matching named experiment.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use fdr_forge::harness::Table;
use fdr_forge::procedures::PiRule;
use fdr_forge::{mc_fdr, GeneratorSpec, NuMeasure, ProcedureSpec, Rule, ShapeFunction, SimulationReport};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub seed: u64,
    pub n_reps: usize,
    pub generators: Vec<GeneratorSpec>,
    pub procedures: Vec<ProcedureTemplate>,
    /// Problem sizes; each generator keeps its own size when absent.
    #[serde(default)]
    pub m: Option<Vec<usize>>,
    pub q: Vec<f64>,
}

/// A procedure without its level.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProcedureTemplate {
    /// `bh`, `by`, `storey`, `nu-uniform` or `nu-linear`.
    Named(String),
    Custom {
        pi: PiRule<f64>,
        shape: ShapeFunction<f64>,
    },
}

impl ProcedureTemplate {
    pub fn at(&self, q: f64, m: usize) -> Result<ProcedureSpec<f64>> {
        Ok(match self {
            ProcedureTemplate::Named(name) => match name.as_str() {
                "bh" => ProcedureSpec::bh(q),
                "by" => ProcedureSpec::by(q),
                "storey" => ProcedureSpec::storey(q, fdr_forge::procedures::DEFAULT_LAMBDA),
                "nu-uniform" => ProcedureSpec::with_shape(q, ShapeFunction::Nu(NuMeasure::uniform_atoms(m))),
                "nu-linear" => ProcedureSpec::with_shape(q, ShapeFunction::Nu(NuMeasure::linear_decay_atoms(m))),
                other => bail!("unknown procedure {other:?}"),
            },
            ProcedureTemplate::Custom { pi, shape } => ProcedureSpec {
                pi: pi.clone(),
                shape: shape.clone(),
                q,
            },
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Cell {
    pub generator: GeneratorSpec,
    pub procedure: ProcedureSpec<f64>,
    pub n_reps: usize,
    pub seed: u64,
}

impl Cell {
    pub fn key(&self) -> Result<String> {
        let bytes = serde_json::to_vec(self)?;
        Ok(hex::encode(Sha256::digest(&bytes)))
    }
}

/// Cells in generator, procedure, m, q order.
pub fn expand(cfg: &SweepConfig) -> Result<Vec<Cell>> {
    if cfg.generators.is_empty() || cfg.procedures.is_empty() || cfg.q.is_empty() {
        bail!("sweep needs at least one generator, procedure and q");
    }
    if cfg.m.as_ref().is_some_and(Vec::is_empty) {
        bail!("m list is empty");
    }
    let mut cells = Vec::new();
    for gen in &cfg.generators {
        let sizes = cfg.m.clone().unwrap_or_else(|| vec![gen.m()]);
        for template in &cfg.procedures {
            for &m in &sizes {
                for &q in &cfg.q {
                    let mut generator = gen.with_m(m);
                    if let GeneratorSpec::Counterexample { q: gq, .. } = &mut generator {
                        *gq = q;
                    }
                    let procedure = template.at(q, m)?;
                    procedure.validate()?;
                    cells.push(Cell {
                        generator,
                        procedure,
                        n_reps: cfg.n_reps,
                        seed: cfg.seed,
                    });
                }
            }
        }
    }
    Ok(cells)
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct SweepStats {
    pub computed: usize,
    pub reused: usize,
}

/// Runs missing cells and writes `sweep.csv` and `sweep.json` into `out`.
pub fn run(cfg: &SweepConfig, out: &Path) -> Result<SweepStats> {
    let cells = expand(cfg)?;
    let cell_dir = out.join("cells");
    fs::create_dir_all(&cell_dir).with_context(|| format!("cannot create {}", cell_dir.display()))?;
    let mut stats = SweepStats::default();
    let mut header = vec!["cell"];
    header.extend(SimulationReport::CSV_HEADER);
    let mut table = Table::new("sweep", &header);
    for cell in &cells {
        let key = cell.key()?;
        let path = cell_dir.join(format!("{key}.json"));
        let cached = fs::read_to_string(&path)
            .ok()
            .and_then(|s| serde_json::from_str::<SimulationReport>(&s).ok());
        let report = match cached {
            Some(r) => {
                stats.reused += 1;
                r
            }
            None => {
                let r = mc_fdr(&cell.generator, &Rule::StepUp(cell.procedure.clone()), cell.n_reps, cell.seed)?;
                let tmp = path.with_extension("json.tmp");
                fs::write(&tmp, serde_json::to_string_pretty(&r)? + "\n")?;
                fs::rename(&tmp, &path)?;
                stats.computed += 1;
                r
            }
        };
        let mut row = vec![key];
        row.extend(report.csv_record());
        table.rows.push(row);
    }
    fs::write(out.join("sweep.csv"), table.to_csv()?)?;
    fs::write(out.join("sweep.json"), serde_json::to_string_pretty(cfg)? + "\n")?;
    Ok(stats)
}
