//! Experiment driver: run configuration, single decays, resumable sweeps,
//! equilibration-bound reports and the scaling fit over sweep output.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chebyshev::propagator::PlanOptions;
use crate::chebyshev::{EvolveOptions, DEFAULT_MAX_ADT};
use crate::dynamics::{
    analyze, collapse_distance, find_lambda_crit, fit_fgr_constant, AnalysisOptions, DecaySummary, FgrFit, Regime,
    REFERENCE_FGR_CONSTANT,
};
use crate::error::{Error, Result};
use crate::gpb::{exact_report, partial_report, GpbReport, DEFAULT_ED_CAP, GPB_CSV_HEADER};
use crate::lattice::{CouplingSpec, LatticeSpec};
use crate::model::WheelModel;
use crate::scaling::{fit_scaling, ScalingFit};
use crate::sector::binomial;
use crate::series::{SeriesMeta, TimeSeries};
use crate::typicality::{
    default_energy, effective_dimension, evolve_ensemble, prepare_ensemble, CheckpointOptions, DeffEstimate,
    EnsembleOptions, InitialStateSpec, WeightedEnsemble, DEFAULT_BETA, DEFAULT_DELTA,
};

/// Sampling interval of the magnetization.
pub const DEFAULT_DT: f64 = 0.5;
/// Default `t_max` in units of the expected relaxation time `0.95 / lambda^2`.
pub const T_MAX_RELAXATION_TIMES: f64 = 20.0;
pub const SWEEP_CSV_HEADER: &str =
    "N,L,lambda,seed,coupling_mode,longtime_avg,tau_rel,censored,fit_residual,regime,config_hash";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatticeConfig {
    /// Bath columns; `N = 3L + 1`.
    pub l: usize,
}

impl Default for LatticeConfig {
    fn default() -> Self {
        Self { l: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialConfig {
    /// Bath energy; `-0.15 (N - 1)` when absent.
    pub energy: Option<f64>,
    pub delta: f64,
    pub seed: u64,
}

impl Default for InitialConfig {
    fn default() -> Self {
        Self {
            energy: None,
            delta: DEFAULT_DELTA,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicsConfig {
    pub lambda: f64,
    /// `20 * 0.95 / lambda^2` when absent; required at `lambda = 0`.
    pub t_max: Option<f64>,
    pub dt: f64,
    pub cheb_tol: f64,
    pub max_adt: f64,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            t_max: None,
            dt: DEFAULT_DT,
            cheb_tol: PlanOptions::default().tol,
            max_adt: DEFAULT_MAX_ADT,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub lambdas: Vec<f64>,
    pub ls: Vec<usize>,
    /// `[initial.seed]` when empty.
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpbConfig {
    /// `[dynamics.lambda]` when empty.
    pub lambdas: Vec<f64>,
    /// Bin widths for the plateau scan; derived from the gap spread when absent.
    pub eps_grid: Option<Vec<f64>>,
    /// Also propagate to measure `tau_rel` for the lower bound.
    pub relaxation: bool,
}

impl Default for GpbConfig {
    fn default() -> Self {
        Self {
            lambdas: Vec::new(),
            eps_grid: None,
            relaxation: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Grid samples between checkpoint saves; 0 disables checkpoints.
    pub checkpoint_every: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            checkpoint_every: 0,
        }
    }
}

/// Complete description of an experiment. Every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub lattice: LatticeConfig,
    pub couplings: CouplingSpec,
    pub initial: InitialConfig,
    pub dynamics: DynamicsConfig,
    pub analysis: AnalysisOptions,
    pub sweep: SweepConfig,
    pub gpb: GpbConfig,
    pub outputs: OutputConfig,
    /// Largest sector handed to dense diagonalization.
    pub ed_cap: usize,
    /// Worker threads for sweep points; 0 uses all cores.
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            lattice: LatticeConfig::default(),
            couplings: CouplingSpec::default(),
            initial: InitialConfig::default(),
            dynamics: DynamicsConfig::default(),
            analysis: AnalysisOptions::default(),
            sweep: SweepConfig::default(),
            gpb: GpbConfig::default(),
            outputs: OutputConfig::default(),
            ed_cap: DEFAULT_ED_CAP,
            workers: 0,
        }
    }
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidParameter(msg()))
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        LatticeSpec::new(self.lattice.l)?;
        self.couplings.validate()?;
        let d = &self.dynamics;
        check(self.initial.delta > 0.0, || format!("delta = {} must be > 0", self.initial.delta))?;
        check(self.initial.energy.is_none_or(f64::is_finite), || "energy must be finite".into())?;
        check(d.lambda.is_finite() && d.lambda >= 0.0, || format!("lambda = {} must be >= 0", d.lambda))?;
        check(d.dt > 0.0 && d.dt.is_finite(), || format!("dt = {} must be > 0", d.dt))?;
        check(d.t_max.is_none_or(|t| t > 0.0 && t.is_finite()), || "t_max must be > 0".into())?;
        check(d.cheb_tol > 0.0 && d.cheb_tol < 1.0, || format!("cheb_tol = {} must lie in (0, 1)", d.cheb_tol))?;
        check(d.max_adt > 0.0, || format!("max_adt = {} must be > 0", d.max_adt))?;
        let t = self.analysis.tail_fraction;
        check(t > 0.0 && t <= 1.0, || format!("tail_fraction = {t} must lie in (0, 1]"))?;
        check(self.ed_cap > 0, || "ed_cap must be > 0".into())?;
        check(
            self.sweep.lambdas.iter().chain(&self.gpb.lambdas).all(|l| l.is_finite() && *l >= 0.0),
            || "grid couplings must be >= 0".into(),
        )?;
        for &l in &self.sweep.ls {
            LatticeSpec::new(l)?;
        }
        Ok(())
    }

    pub fn n_spins(&self) -> usize {
        3 * self.lattice.l + 1
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(&Sha256::digest(&bytes)[..8])
    }

    /// Hash of [`RunConfig::point`] at this configuration's own point.
    pub fn physics_hash(&self) -> String {
        self.point(self.lattice.l, self.dynamics.lambda, self.initial.seed).hash()
    }

    /// The single-run configuration of one sweep point; output and grid
    /// settings are dropped so the hash depends on the physics only.
    pub fn point(&self, l: usize, lambda: f64, seed: u64) -> Self {
        let mut p = self.clone();
        p.lattice.l = l;
        p.dynamics.lambda = lambda;
        p.initial.seed = seed;
        p.sweep = SweepConfig::default();
        p.gpb = GpbConfig::default();
        p.outputs = OutputConfig::default();
        p.workers = 0;
        p
    }

    pub fn model(&self) -> Result<WheelModel> {
        WheelModel::new(LatticeSpec::new(self.lattice.l)?, self.couplings)
    }

    pub fn state_spec(&self) -> InitialStateSpec {
        InitialStateSpec {
            energy: self.initial.energy.unwrap_or_else(|| default_energy(self.n_spins())),
            delta: self.initial.delta,
            beta_target: DEFAULT_BETA,
            seed: self.initial.seed,
        }
    }

    pub fn t_max(&self) -> Result<f64> {
        if let Some(t) = self.dynamics.t_max {
            return Ok(t);
        }
        let l = self.dynamics.lambda;
        check(l > 0.0, || "lambda = 0 needs an explicit t_max".into())?;
        Ok(T_MAX_RELAXATION_TIMES * REFERENCE_FGR_CONSTANT / (l * l))
    }

    pub fn time_grid(&self) -> Result<Vec<f64>> {
        let t_max = self.t_max()?;
        let n = (t_max / self.dynamics.dt).round().max(1.0) as usize;
        Ok(TimeSeries::uniform_grid(self.dynamics.dt, n))
    }

    pub fn evolve_options(&self) -> EvolveOptions {
        EvolveOptions {
            max_adt: self.dynamics.max_adt,
            plan: PlanOptions {
                tol: self.dynamics.cheb_tol,
                ..PlanOptions::default()
            },
            ..EvolveOptions::default()
        }
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| Error::InvalidParameter(format!("worker pool: {e}")))
    }
}

/// Rough cost of a decay run, surfaced before long propagations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    pub n_spins: usize,
    pub t_max: f64,
    pub samples: usize,
    /// Summed dimension of the propagated sectors.
    pub total_dim: u64,
    /// Matrix-vector products over all members.
    pub matvecs: f64,
    /// Stored amplitudes times products.
    pub amplitude_updates: f64,
}

/// Chebyshev products scale with `||H|| t_max` plus a fixed overhead per sample.
pub fn estimate_cost(cfg: &RunConfig) -> Result<CostEstimate> {
    let n = cfg.n_spins();
    let t_max = cfg.t_max()?;
    let samples = cfg.time_grid()?.len() - 1;
    // Bond count bounds ||H||: each Heisenberg bond has norm 3/4.
    let lattice = LatticeSpec::new(cfg.lattice.l)?;
    let bonds = lattice.bath_bonds().len() as f64 * cfg.couplings.j.max(cfg.couplings.random_mean).abs()
        + lattice.interaction_bonds().len() as f64 * cfg.dynamics.lambda;
    let norm = 0.75 * bonds + 0.5 * cfg.couplings.b.abs();
    let per_member = norm * t_max + 12.0 * samples as f64;
    let dims: Vec<u64> = (1..=n as u64).map(|k| binomial(n as u64, k)).collect();
    let total_dim: u64 = dims.iter().sum();
    Ok(CostEstimate {
        n_spins: n,
        t_max,
        samples,
        total_dim,
        matvecs: per_member * dims.len() as f64,
        amplitude_updates: per_member * total_dim as f64,
    })
}

/// One row of the sweep table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "L")]
    pub l: usize,
    pub lambda: f64,
    pub seed: u64,
    pub coupling_mode: String,
    pub longtime_avg: Option<f64>,
    pub tau_rel: Option<f64>,
    pub censored: Option<bool>,
    pub fit_residual: Option<f64>,
    /// Regime label, or `failed` for a point that raised an error.
    pub regime: String,
    pub config_hash: String,
}

impl SweepRow {
    pub fn failed(&self) -> bool {
        self.regime == "failed"
    }

    pub fn regime(&self) -> Option<Regime> {
        match self.regime.as_str() {
            "nonMarkovian" => Some(Regime::NonMarkovian),
            "Markovian" => Some(Regime::Markovian),
            "superweak" => Some(Regime::Superweak),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DecayRun {
    pub config_hash: String,
    pub series: TimeSeries,
    pub summary: DecaySummary,
    pub row: SweepRow,
    pub ensemble: WeightedEnsemble,
    pub cost: CostEstimate,
}

impl DecayRun {
    pub fn summary_csv(&self) -> Result<String> {
        rows_to_csv(std::slice::from_ref(&self.row))
    }

    /// Writes `series_<hash>.csv`, `summary_<hash>.csv` and `manifest_<hash>.json`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let h = &self.config_hash;
        let files = [
            (dir.join(format!("series_{h}.csv")), self.series.to_csv()),
            (dir.join(format!("summary_{h}.csv")), self.summary_csv()?),
            (dir.join(format!("manifest_{h}.json")), self.ensemble.manifest_json()?),
        ];
        for (p, text) in &files {
            fs::write(p, text)?;
        }
        Ok(files.into_iter().map(|(p, _)| p).collect())
    }
}

fn checkpoint_path(dir: &Path, hash: &str) -> PathBuf {
    dir.join("checkpoints").join(format!("{hash}.ckpt"))
}

/// Build, prepare, propagate and analyze one configuration.
pub fn run_decay(cfg: &RunConfig) -> Result<DecayRun> {
    cfg.validate()?;
    let hash = cfg.physics_hash();
    let cost = estimate_cost(cfg)?;
    log::info!(
        "N = {}, lambda = {}: t_max = {}, about {:.2e} products over {} amplitudes",
        cost.n_spins,
        cfg.dynamics.lambda,
        cost.t_max,
        cost.matvecs,
        cost.total_dim
    );
    let model = cfg.model()?;
    let ensemble = prepare_ensemble(&model, &cfg.state_spec())?;
    let grid = cfg.time_grid()?;
    let checkpoint = (cfg.outputs.checkpoint_every > 0).then(|| {
        let path = checkpoint_path(&cfg.outputs.dir, &hash);
        CheckpointOptions {
            resume: path.exists(),
            path,
            every: cfg.outputs.checkpoint_every,
        }
    });
    if let Some(c) = &checkpoint {
        if let Some(parent) = c.path.parent() {
            fs::create_dir_all(parent)?;
        }
    }
    let opts = EnsembleOptions {
        evolve: cfg.evolve_options(),
        checkpoint,
    };
    let evo = evolve_ensemble(&model, &ensemble, cfg.dynamics.lambda, &grid, &opts)?;
    let series = evo.series.with_meta(SeriesMeta {
        n_spins: cfg.n_spins(),
        l: cfg.lattice.l,
        lambda: cfg.dynamics.lambda,
        seed: cfg.initial.seed,
        coupling_mode: cfg.couplings.mode,
    });
    let summary = analyze(&series, cfg.dynamics.lambda, &cfg.analysis)?;
    let row = SweepRow {
        n: cfg.n_spins(),
        l: cfg.lattice.l,
        lambda: cfg.dynamics.lambda,
        seed: cfg.initial.seed,
        coupling_mode: cfg.couplings.mode.to_string(),
        longtime_avg: Some(summary.longtime_avg),
        tau_rel: Some(summary.relaxation.tau),
        censored: Some(summary.relaxation.censored),
        fit_residual: summary.fit.as_ref().map(|f| f.residual),
        regime: summary.regime.to_string(),
        config_hash: hash.clone(),
    };
    Ok(DecayRun {
        config_hash: hash,
        series,
        summary,
        row,
        ensemble,
        cost,
    })
}

fn rows_to_csv(rows: &[SweepRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    if rows.is_empty() {
        return Ok(format!("{SWEEP_CSV_HEADER}\n"));
    }
    String::from_utf8(w.into_inner().map_err(|e| Error::InvalidParameter(e.to_string()))?)
        .map_err(|e| Error::InvalidParameter(e.to_string()))
}

fn csv_error(e: csv::Error) -> Error {
    Error::InvalidParameter(format!("csv: {e}"))
}

/// Data rows of a sweep table; footer blocks after the first blank line are ignored.
pub fn read_sweep_rows(text: &str) -> Result<Vec<SweepRow>> {
    let body = text.split("\n\n").next().unwrap_or("");
    let mut r = csv::Reader::from_reader(body.as_bytes());
    r.deserialize().map(|x| x.map_err(csv_error)).collect()
}

/// One point of the sweep grid, in output order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub l: usize,
    pub lambda: f64,
    pub seed: u64,
}

pub fn sweep_points(cfg: &RunConfig) -> Result<Vec<SweepPoint>> {
    check(!cfg.sweep.lambdas.is_empty(), || "sweep lambda grid is empty".into())?;
    check(!cfg.sweep.ls.is_empty(), || "sweep L grid is empty".into())?;
    let seeds = if cfg.sweep.seeds.is_empty() {
        vec![cfg.initial.seed]
    } else {
        cfg.sweep.seeds.clone()
    };
    let mut out = Vec::new();
    for &l in &cfg.sweep.ls {
        for &lambda in &cfg.sweep.lambdas {
            for &seed in &seeds {
                out.push(SweepPoint { l, lambda, seed });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    /// `(N, lambda_crit)`; `None` where the curve never crosses the threshold.
    pub lambda_crit: Vec<(usize, Option<f64>)>,
    pub scaling: Option<ScalingFit>,
    pub fgr: Option<FgrFit>,
    /// RMS distance of the Markovian series after `t -> lambda^2 t`.
    pub collapse_rms: Option<f64>,
    /// Points computed in this call; the rest came from an earlier run.
    pub computed: usize,
}

/// `lambda_crit` per size from seed-averaged long-time averages.
pub fn lambda_crit_by_size(rows: &[SweepRow], threshold: f64) -> Vec<(usize, Option<f64>)> {
    let mut by: BTreeMap<usize, BTreeMap<u64, Vec<f64>>> = BTreeMap::new();
    for r in rows.iter().filter(|r| !r.failed()) {
        if let Some(avg) = r.longtime_avg {
            by.entry(r.n).or_default().entry(r.lambda.to_bits()).or_default().push(avg);
        }
    }
    by.into_iter()
        .map(|(n, curve)| {
            let pts: Vec<(f64, f64)> = curve
                .into_iter()
                .map(|(l, v)| (f64::from_bits(l), v.iter().sum::<f64>() / v.len() as f64))
                .collect();
            let crit = match find_lambda_crit(&pts, threshold) {
                Ok(c) => Some(c),
                Err(e) => {
                    log::warn!("N = {n}: {e}");
                    None
                }
            };
            (n, crit)
        })
        .collect()
}

fn sweep_footer(out: &SweepOutcome) -> String {
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    let mut s = String::from("\nN,lambda_crit\n");
    for (n, c) in &out.lambda_crit {
        s.push_str(&format!("{n},{}\n", opt(*c)));
    }
    s.push_str("\nC2,b,residual\n");
    match &out.scaling {
        Some(f) => s.push_str(&format!("{},{},{}\n", f.c2, f.b, f.residual)),
        None => s.push_str(",,\n"),
    }
    s.push_str("\nfgr_r,fgr_spread,collapse_rms\n");
    s.push_str(&format!(
        "{},{},{}\n",
        opt(out.fgr.as_ref().map(|f| f.r)),
        opt(out.fgr.as_ref().map(|f| f.spread)),
        opt(out.collapse_rms)
    ));
    s
}

pub fn sweep_csv_path(cfg: &RunConfig) -> PathBuf {
    cfg.outputs.dir.join("sweep.csv")
}

fn series_path(dir: &Path, hash: &str) -> PathBuf {
    dir.join("series").join(format!("{hash}.csv"))
}

fn failed_row(cfg: &RunConfig, e: &Error) -> SweepRow {
    log::error!("N = {}, lambda = {}, seed = {}: {e}", cfg.n_spins(), cfg.dynamics.lambda, cfg.initial.seed);
    SweepRow {
        n: cfg.n_spins(),
        l: cfg.lattice.l,
        lambda: cfg.dynamics.lambda,
        seed: cfg.initial.seed,
        coupling_mode: cfg.couplings.mode.to_string(),
        longtime_avg: None,
        tau_rel: None,
        censored: None,
        fit_residual: None,
        regime: "failed".into(),
        config_hash: cfg.physics_hash(),
    }
}

/// Runs every grid point not already present in the sweep table, then
/// rewrites the table in grid order with the fit blocks appended.
///
/// Rows are matched by their point hash, so an interrupted sweep resumes
/// where it stopped and a changed configuration recomputes. Points with
/// checkpointing enabled also resume mid-propagation.
pub fn sweep(cfg: &RunConfig) -> Result<SweepOutcome> {
    cfg.validate()?;
    let points = sweep_points(cfg)?;
    let dir = &cfg.outputs.dir;
    fs::create_dir_all(dir.join("series"))?;
    let path = sweep_csv_path(cfg);
    let existing: HashMap<String, SweepRow> = match fs::read_to_string(&path) {
        Ok(text) => read_sweep_rows(&text)?
            .into_iter()
            .filter(|r| !r.failed() && series_path(dir, &r.config_hash).exists())
            .map(|r| (r.config_hash.clone(), r))
            .collect(),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => HashMap::new(),
        Err(e) => return Err(e.into()),
    };
    let configs: Vec<RunConfig> = points
        .iter()
        .map(|p| {
            let mut c = cfg.point(p.l, p.lambda, p.seed);
            c.outputs = cfg.outputs.clone();
            c
        })
        .collect();
    let hashes: Vec<String> = configs.iter().map(RunConfig::physics_hash).collect();
    let done: Vec<SweepRow> = hashes.iter().filter_map(|h| existing.get(h).cloned()).collect();

    // Keep the finished rows and append new ones as they complete.
    fs::write(&path, rows_to_csv(&done)?)?;
    let appender = Mutex::new(fs::OpenOptions::new().append(true).open(&path)?);
    let todo: Vec<(usize, &RunConfig)> = configs
        .iter()
        .enumerate()
        .filter(|(i, _)| !existing.contains_key(&hashes[*i]))
        .collect();
    let computed = todo.len();
    let new_rows: Vec<(usize, SweepRow)> = cfg.pool()?.install(|| {
        todo.par_iter()
            .map(|&(i, c)| {
                let row = match run_decay(c) {
                    Ok(run) => match fs::write(series_path(dir, &hashes[i]), run.series.to_csv()) {
                        Ok(()) => run.row,
                        Err(e) => failed_row(c, &e.into()),
                    },
                    Err(e) => failed_row(c, &e),
                };
                let line = rows_to_csv(std::slice::from_ref(&row))?;
                let body = line.split_once('\n').map(|x| x.1).unwrap_or("");
                appender.lock().expect("appender").write_all(body.as_bytes())?;
                Ok((i, row))
            })
            .collect::<Result<_>>()
    })?;
    drop(appender);

    let mut by_index: BTreeMap<usize, SweepRow> = new_rows.into_iter().collect();
    for (i, h) in hashes.iter().enumerate() {
        if let Some(r) = existing.get(h) {
            by_index.insert(i, r.clone());
        }
    }
    let rows: Vec<SweepRow> = by_index.into_values().collect();
    let mut outcome = summarize_rows(rows, dir, &cfg.analysis)?;
    outcome.computed = computed;
    let mut text = rows_to_csv(&outcome.rows)?;
    text.push_str(&sweep_footer(&outcome));
    fs::write(&path, text)?;
    fs::write(dir.join("sweep_fit.json"), serde_json::to_string_pretty(&outcome.scaling)?)?;
    Ok(outcome)
}

/// `lambda_crit`, the scaling fit, the FGR fit and the collapse check over
/// finished rows. Series are read back from `dir/series`.
pub fn summarize_rows(rows: Vec<SweepRow>, dir: &Path, analysis: &AnalysisOptions) -> Result<SweepOutcome> {
    let lambda_crit = lambda_crit_by_size(&rows, analysis.threshold);
    let crossings: Vec<(usize, f64)> = lambda_crit.iter().filter_map(|&(n, c)| c.map(|c| (n, c))).collect();
    let scaling = if crossings.len() >= 3 {
        Some(fit_scaling(&crossings)?)
    } else {
        log::warn!("{} sizes with a threshold crossing; scaling fit needs 3", crossings.len());
        None
    };
    let markovian: Vec<&SweepRow> = rows
        .iter()
        .filter(|r| r.regime() == Some(Regime::Markovian) && r.censored == Some(false))
        .collect();
    let fgr = if markovian.len() >= 3 {
        Some(fit_fgr_constant(
            &markovian.iter().map(|r| (r.lambda, r.tau_rel.expect("finished row"))).collect::<Vec<_>>(),
        )?)
    } else {
        None
    };
    let collapse_rms = if markovian.len() >= 2 {
        let series: Vec<(f64, TimeSeries)> = markovian
            .iter()
            .map(|r| Ok((r.lambda, TimeSeries::from_csv(&fs::read_to_string(series_path(dir, &r.config_hash))?)?)))
            .collect::<Result<_>>()?;
        let end = series.iter().map(|(l, s)| l * l * s.final_time()).fold(f64::INFINITY, f64::min);
        let grid: Vec<f64> = (0..=50).map(|k| end * k as f64 / 50.0).collect();
        let runs: Vec<(f64, &TimeSeries)> = series.iter().map(|(l, s)| (*l, s)).collect();
        Some(collapse_distance(&runs, &grid)?)
    } else {
        None
    };
    Ok(SweepOutcome {
        rows,
        lambda_crit,
        scaling,
        fgr,
        collapse_rms,
        computed: 0,
    })
}

/// `(N, lambda_crit)` per size; `None` without a threshold crossing.
pub type CritBySize = Vec<(usize, Option<f64>)>;

/// Scaling fit over the rows of an existing sweep table.
pub fn scaling_fit_from_csv(text: &str, threshold: f64) -> Result<(CritBySize, ScalingFit)> {
    let rows = read_sweep_rows(text)?;
    let crit = lambda_crit_by_size(&rows, threshold);
    let pts: Vec<(usize, f64)> = crit.iter().filter_map(|&(n, c)| c.map(|c| (n, c))).collect();
    let fit = fit_scaling(&pts)?;
    Ok((crit, fit))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GpbOutcome {
    pub config_hash: String,
    pub reports: Vec<GpbReport>,
}

impl GpbOutcome {
    pub fn csv(&self) -> String {
        let mut s = format!("{GPB_CSV_HEADER}\n");
        for r in &self.reports {
            s.push_str(&r.csv_row());
            s.push('\n');
        }
        s
    }

    /// Writes `gpb_report.json` and `gpb.csv`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("gpb_report.json"), serde_json::to_string_pretty(self)?)?;
        fs::write(dir.join("gpb.csv"), self.csv())?;
        Ok(())
    }
}

/// The equilibration-bound quantities for each coupling of the GPB grid:
/// the full chain within the diagonalization cap, curvature and bound above it.
pub fn gpb_report(cfg: &RunConfig) -> Result<GpbOutcome> {
    cfg.validate()?;
    let model = cfg.model()?;
    let spec = cfg.state_spec();
    let n = cfg.n_spins();
    let max_sector = binomial(n as u64, n as u64 / 2) as usize;
    let exact = max_sector <= cfg.ed_cap;
    let lambdas = if cfg.gpb.lambdas.is_empty() {
        vec![cfg.dynamics.lambda]
    } else {
        cfg.gpb.lambdas.clone()
    };
    let ensemble = if exact { None } else { Some(prepare_ensemble(&model, &spec)?) };
    let mut reports = Vec::new();
    for &lambda in &lambdas {
        let mut r = match &ensemble {
            None => exact_report(&model, &spec, lambda, cfg.gpb.eps_grid.as_deref(), cfg.ed_cap)?,
            Some(e) => partial_report(&model, e, lambda)?,
        };
        if cfg.gpb.relaxation && lambda > 0.0 {
            let mut point = cfg.point(cfg.lattice.l, lambda, cfg.initial.seed);
            point.dynamics.t_max = cfg.dynamics.t_max;
            point.outputs = cfg.outputs.clone();
            let run = run_decay(&point)?;
            r = r.with_relaxation(run.summary.relaxation.tau, run.summary.relaxation.censored);
        } else if lambda == 0.0 {
            // Nothing relaxes and the curvature vanishes.
            r = r.with_relaxation(0.0, true);
        }
        reports.push(r);
    }
    Ok(GpbOutcome {
        config_hash: cfg.hash(),
        reports,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MemberCheck {
    pub n_up: Option<u32>,
    pub weight: f64,
    pub binomial_weight: f64,
    pub filter_order: usize,
    /// `<H_bath>` of the normalized member.
    pub bath_energy: f64,
    /// Spread of `H_bath` in the member.
    pub bath_energy_std: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilterCheck {
    pub config_hash: String,
    pub n_spins: usize,
    pub target_energy: f64,
    pub delta: f64,
    /// Weighted `<H_bath>` over members.
    pub mean_bath_energy: f64,
    pub d_eff: DeffEstimate,
    pub dropped_weight: f64,
    pub members: Vec<MemberCheck>,
}

/// Prepares the ensemble of `cfg` and reports where the filter put each member.
pub fn filter_check(cfg: &RunConfig, n_probes: usize) -> Result<FilterCheck> {
    cfg.validate()?;
    let model = cfg.model()?;
    let spec = cfg.state_spec();
    let ens = prepare_ensemble(&model, &spec)?;
    let members: Vec<MemberCheck> = ens
        .members
        .par_iter()
        .map(|m| {
            let hb = model.bath.to_operator(&ens.basis_of(m));
            let e = hb.expectation(&m.state)?.re;
            let hpsi = hb.apply(&m.state)?;
            let e2 = crate::operator::norm_sqr(&hpsi);
            Ok(MemberCheck {
                n_up: m.n_up,
                weight: m.weight,
                binomial_weight: m.binomial_weight,
                filter_order: m.filter_order,
                bath_energy: e,
                bath_energy_std: (e2 - e * e).max(0.0).sqrt(),
            })
        })
        .collect::<Result<_>>()?;
    let mean_bath_energy = members.iter().map(|m| m.weight * m.bath_energy).sum();
    Ok(FilterCheck {
        config_hash: cfg.hash(),
        n_spins: cfg.n_spins(),
        target_energy: spec.energy,
        delta: spec.delta,
        mean_bath_energy,
        d_eff: effective_dimension(&model, &spec, n_probes)?,
        dropped_weight: ens.dropped_weight,
        members,
    })
}
