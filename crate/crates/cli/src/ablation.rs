//! Ablation sweep: every cell is trained once per configured seed and the
//! per-cell medians are tabulated.
//!
//! Work runs in two phases. Phase one pre-trains, phase two fine-tunes from
//! the phase-one checkpoints. Each (cell, seed) job is single-threaded and
//! deterministic, so the worker count never changes a result. Finished jobs
//! leave a result file behind and are skipped when the sweep is re-run into
//! the same directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use ssreg_core::data::{generate_splits, Splits};
use ssreg_core::metrics::{evaluate, fmt_r};
use ssreg_core::seed::RunSeeds;
use ssreg_core::ssl::{load_checkpoint, naive_ssl, pretrain, save_checkpoint, self_train, CheckpointMeta, StageResult};
use ssreg_core::{Error, ModelParams, Result, StrategyConfig};

use crate::commands::{prepare_output_dir, write_text, RESOLVED_CONFIG};
use crate::config::ExperimentConfig;

/// One trained configuration of the sweep.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    /// Pre-training with MSE only.
    PretrainMse,
    /// Pre-training with the triplet term at `margin`.
    PretrainTriplet { margin: f64, adaptive: bool },
    /// Pseudo-labels generated once, from the MSE-only model.
    Ssl,
    /// Pseudo-labels generated once, from the triplet model.
    SslAtl,
    /// Gated self-training without the consistency term.
    ProposedNoConsistency,
    Proposed,
}

impl Cell {
    pub fn name(&self) -> String {
        match self {
            Cell::PretrainMse => "pretrain-mse".into(),
            Cell::PretrainTriplet { margin, adaptive } => {
                format!("pretrain-{}-m{margin}", if *adaptive { "adaptive" } else { "fixed" })
            }
            Cell::Ssl => "ssl".into(),
            Cell::SslAtl => "ssl-atl".into(),
            Cell::ProposedNoConsistency => "proposed-no-consistency".into(),
            Cell::Proposed => "proposed".into(),
        }
    }

    fn is_pretrain(&self) -> bool {
        matches!(self, Cell::PretrainMse | Cell::PretrainTriplet { .. })
    }

    /// The pre-training cell a fine-tuning cell starts from.
    fn parent(&self, cfg: &StrategyConfig) -> Option<Cell> {
        match self {
            Cell::PretrainMse | Cell::PretrainTriplet { .. } => None,
            Cell::Ssl => Some(Cell::PretrainMse),
            Cell::SslAtl | Cell::ProposedNoConsistency | Cell::Proposed => {
                Some(Cell::PretrainTriplet { margin: cfg.margin, adaptive: true })
            }
        }
    }

    /// Training hyperparameters of this cell.
    fn config(&self, base: &StrategyConfig) -> StrategyConfig {
        let mut cfg = base.clone();
        match *self {
            Cell::PretrainMse | Cell::Ssl => cfg.lambda_triplet = 0.0,
            Cell::PretrainTriplet { margin, adaptive } => {
                cfg.margin = margin;
                cfg.adaptive_margin = adaptive;
            }
            Cell::SslAtl | Cell::Proposed => cfg.adaptive_margin = true,
            Cell::ProposedNoConsistency => {
                cfg.adaptive_margin = true;
                cfg.lambda_consistency = 0.0;
            }
        }
        cfg
    }
}

/// Row labels of the component table, in output order.
pub const COMPONENT_ROWS: [&str; 6] =
    ["Baseline", "Baseline + ATL", "SSL", "SSL + ATL", "Proposed w/o Consistency", "Proposed"];

fn component_cells(cfg: &StrategyConfig) -> Vec<Cell> {
    vec![
        Cell::PretrainMse,
        Cell::PretrainTriplet { margin: cfg.margin, adaptive: true },
        Cell::Ssl,
        Cell::SslAtl,
        Cell::ProposedNoConsistency,
        Cell::Proposed,
    ]
}

/// Test-split outcome of one (cell, seed) job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellResult {
    pub cell: String,
    pub seed: u64,
    pub test_r: Option<f64>,
    pub test_rmse: f64,
    pub test_mse: f64,
    pub val_r: Option<f64>,
    /// Which evaluation of the stage was selected (see `TrainLog`).
    pub best_eval: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub label: String,
    pub median_r: f64,
    pub median_rmse: f64,
    pub seeds: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    /// `(margin, fixed row, adaptive row)` per margin.
    pub triplet_table: Vec<(f64, TableRow, TableRow)>,
    pub component_table: Vec<TableRow>,
    pub results: Vec<CellResult>,
}

/// Median with the mean of the two central values for even counts.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of nothing");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 }
}

/// Undefined correlations count as the worst possible value.
const UNDEFINED_R: f64 = -1.0;

fn summarize(label: &str, results: &[&CellResult]) -> TableRow {
    let rs: Vec<f64> = results.iter().map(|r| r.test_r.unwrap_or(UNDEFINED_R)).collect();
    let rmses: Vec<f64> = results.iter().map(|r| r.test_rmse).collect();
    TableRow { label: label.to_string(), median_r: median(&rs), median_rmse: median(&rmses), seeds: results.len() }
}

struct Job {
    cell: Cell,
    seed: u64,
}

struct Sweep<'a> {
    cfg: &'a ExperimentConfig,
    root: PathBuf,
    data: BTreeMap<u64, Splits>,
}

impl Sweep<'_> {
    fn cell_dir(&self, cell: &Cell) -> PathBuf {
        self.root.join("cells").join(cell.name())
    }

    fn result_path(&self, cell: &Cell, seed: u64) -> PathBuf {
        self.cell_dir(cell).join(format!("seed-{seed}.result.json"))
    }

    fn checkpoint_path(&self, cell: &Cell, seed: u64) -> PathBuf {
        self.cell_dir(cell).join(format!("seed-{seed}.ssreg"))
    }

    fn cached(&self, cell: &Cell, seed: u64) -> Result<Option<CellResult>> {
        let path = self.result_path(cell, seed);
        if !path.is_file() || (cell.is_pretrain() && !self.checkpoint_path(cell, seed).is_file()) {
            return Ok(None);
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map(Some).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }

    fn run(&self, job: &Job) -> Result<()> {
        if self.cached(&job.cell, job.seed)?.is_some() {
            log::debug!("{} seed {}: cached", job.cell.name(), job.seed);
            return Ok(());
        }
        let started = Instant::now();
        let splits = &self.data[&job.seed];
        let seeds = RunSeeds::from_master(job.seed);
        let cfg = job.cell.config(&self.cfg.train);
        let stage: StageResult = match job.cell.parent(&self.cfg.train) {
            None => {
                let init = ModelParams::<f32>::init(&self.cfg.model, seeds.init)?;
                pretrain(&init, &splits.train, &splits.validation, &cfg, &seeds)?
            }
            Some(parent) => {
                let (start, _) = load_checkpoint(&self.checkpoint_path(&parent, job.seed))?;
                match job.cell {
                    Cell::Ssl | Cell::SslAtl => naive_ssl(&start, splits, &cfg, &seeds)?,
                    _ => self_train(&start, splits, &cfg, &seeds)?,
                }
            }
        };
        let dir = self.cell_dir(&job.cell);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        if job.cell.is_pretrain() {
            let meta = CheckpointMeta { spec: self.cfg.model.clone(), strategy: job.cell.name(), adam: None, trainer: None };
            save_checkpoint(&self.checkpoint_path(&job.cell, job.seed), &stage.params, &meta)?;
        }
        let test = evaluate(&stage.params, &splits.test, "test", stage.log.best_eval)?;
        let result = CellResult {
            cell: job.cell.name(),
            seed: job.seed,
            test_r: test.r_value,
            test_rmse: test.rmse,
            test_mse: test.mse,
            val_r: stage.log.best_val().r_value,
            best_eval: stage.log.best_eval,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "{} seed {}: test R {} RMSE {:.4} ({:.1}s)",
            result.cell,
            result.seed,
            fmt_r(result.test_r),
            result.test_rmse,
            result.seconds
        );
        let text = serde_json::to_string_pretty(&result).expect("plain data serializes") + "\n";
        write_text(&self.result_path(&job.cell, job.seed), &text)
    }

    /// Runs `jobs` on `threads` workers; the first error stops the phase.
    fn run_all(&self, jobs: &[Job], threads: usize) -> Result<()> {
        let next = AtomicUsize::new(0);
        let failure: Mutex<Option<Error>> = Mutex::new(None);
        let workers = threads.clamp(1, jobs.len().max(1));
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    if failure.lock().expect("no poisoning").is_some() {
                        break;
                    }
                    let k = next.fetch_add(1, Ordering::SeqCst);
                    let Some(job) = jobs.get(k) else { break };
                    if let Err(e) = self.run(job) {
                        failure.lock().expect("no poisoning").get_or_insert(e);
                        break;
                    }
                });
            }
        });
        match failure.into_inner().expect("no poisoning") {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }
}

/// Opens `out` for a sweep. A directory holding the same resolved
/// configuration is resumed; anything else needs `force`.
fn open_sweep_dir(cfg: &ExperimentConfig, out: &Path, force: bool) -> Result<()> {
    let resolved = cfg.to_toml();
    let existing = fs::read_to_string(out.join(RESOLVED_CONFIG)).ok();
    if existing.as_deref() != Some(resolved.as_str()) {
        prepare_output_dir(out, force)?;
        write_text(&out.join(RESOLVED_CONFIG), &resolved)?;
    } else {
        log::info!("resuming sweep in {}", out.display());
    }
    Ok(())
}

pub fn run_ablation(cfg: &ExperimentConfig, out: &Path, threads: usize, force: bool) -> Result<AblationReport> {
    cfg.validate()?;
    let cfg = &ExperimentConfig { out_dir: out.to_path_buf(), ..cfg.clone() };
    open_sweep_dir(cfg, out, force)?;
    let train = &cfg.train;

    let mut cells: Vec<Cell> = Vec::new();
    let mut push = |c: Cell| {
        if !cells.contains(&c) {
            cells.push(c);
        }
    };
    if cfg.ablation.triplet_table {
        for &margin in &cfg.ablation.margins {
            push(Cell::PretrainTriplet { margin, adaptive: false });
            push(Cell::PretrainTriplet { margin, adaptive: true });
        }
    }
    if cfg.ablation.component_table {
        component_cells(train).into_iter().for_each(&mut push);
    }

    let mut data = BTreeMap::new();
    for &seed in &cfg.seeds {
        data.insert(seed, generate_splits(&cfg.split, RunSeeds::from_master(seed).data, &cfg.synth)?);
    }
    let sweep = Sweep { cfg, root: out.to_path_buf(), data };

    let jobs = |pretraining: bool| -> Vec<Job> {
        cells
            .iter()
            .filter(|c| c.is_pretrain() == pretraining)
            .flat_map(|c| cfg.seeds.iter().map(move |&seed| Job { cell: c.clone(), seed }))
            .collect()
    };
    let started = Instant::now();
    sweep.run_all(&jobs(true), threads)?;
    sweep.run_all(&jobs(false), threads)?;
    log::info!("sweep finished in {:.1}s", started.elapsed().as_secs_f64());

    let mut results = Vec::new();
    for cell in &cells {
        for &seed in &cfg.seeds {
            let r = sweep.cached(cell, seed)?.ok_or_else(|| Error::Data(format!("missing result for {}", cell.name())))?;
            results.push(r);
        }
    }
    let row = |cell: &Cell, label: &str| {
        let name = cell.name();
        let rs: Vec<&CellResult> = results.iter().filter(|r| r.cell == name).collect();
        summarize(label, &rs)
    };

    let mut triplet_table = Vec::new();
    if cfg.ablation.triplet_table {
        for &margin in &cfg.ablation.margins {
            triplet_table.push((
                margin,
                row(&Cell::PretrainTriplet { margin, adaptive: false }, "fixed"),
                row(&Cell::PretrainTriplet { margin, adaptive: true }, "adaptive"),
            ));
        }
        let mut text = String::from("margin,triplet,median_r,median_rmse,seeds\n");
        for (m, fixed, adaptive) in &triplet_table {
            for r in [fixed, adaptive] {
                text.push_str(&format!("{m},{},{},{},{}\n", r.label, r.median_r, r.median_rmse, r.seeds));
            }
        }
        write_text(&out.join("table3.csv"), &text)?;
    }

    let mut component_table = Vec::new();
    if cfg.ablation.component_table {
        for (cell, label) in component_cells(train).iter().zip(COMPONENT_ROWS) {
            component_table.push(row(cell, label));
        }
        let mut text = String::from("row,median_r,median_rmse,seeds\n");
        for r in &component_table {
            text.push_str(&format!("{},{},{},{}\n", r.label, r.median_r, r.median_rmse, r.seeds));
        }
        write_text(&out.join("table4.csv"), &text)?;
    }

    let mut text = String::from("cell,seed,test_r,test_rmse,test_mse,val_r,best_eval\n");
    for r in &results {
        text.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.cell,
            r.seed,
            fmt_r(r.test_r),
            r.test_rmse,
            r.test_mse,
            fmt_r(r.val_r),
            r.best_eval
        ));
    }
    write_text(&out.join("cells.csv"), &text)?;
    Ok(AblationReport { triplet_table, component_table, results })
}
