//! The fit, predict, assess and combine stages over a planned grid of cells.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::artifacts::{self as art, RunLayout};
use super::schedule::{self, ScheduleFamily};
use super::spec::{CombineSpec, DatasetKind, ExperimentSpec, SplitChoice};
use super::{config_hash, derive_seed};
use crate::assess::{elpd_loo, elpd_waic, ElpdResult, LogLikMatrix, WaicPenalty, KHAT_UNRELIABLE, KHAT_WARN};
use crate::combine::{combine_predictive, mixture_log_predictive_density, Candidate, CandidateSet, CombineMethod};
use crate::data::{self, SplitKind, SplitSpec, Standardizer};
use crate::draws::{DrawSource, PosteriorDraws};
use crate::error::{Error, Result};
use crate::hmc::NutsConfig;
use crate::model::{Dataset, NetworkConfig};
use crate::predictive::{
    coverage_pair, mean_log_predictive_density, pointwise_log_lik, posterior_predictive, rmse, MetricRecord,
    PredictiveSamples,
};
use crate::recipe::{fit_posterior, InferenceRecipe};
use crate::stats::{quantile_sorted, sort_floats};
use crate::vi::ViConfig;

/// Seed index reserved for data generation.
const DATA_STREAM: u64 = u64::MAX;
// ChaCha stream ids; stream 1 is taken by variational draws
const PREDICT_STREAM: u64 = 2;
const CURVE_STREAM: u64 = 3;
const MIXTURE_STREAM: u64 = 4;
const CURVE_POINTS: usize = 200;

/// Command-line level settings shared by every stage.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out: PathBuf,
    /// Worker threads; all cores when `None`.
    pub jobs: Option<usize>,
    /// Multiplies iteration, warmup, sample and draw counts.
    pub scale: f64,
    pub force: bool,
    /// Replaces the spec's master seed.
    pub seed: Option<u64>,
    /// Caps the NUTS tree depth of every cell.
    pub max_tree_depth: Option<usize>,
    /// Keeps only cells whose run id or group id is listed; seeds stay those of the full grid.
    pub only: Vec<String>,
}

impl RunOptions {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        RunOptions {
            out: out.into(),
            jobs: None,
            scale: 1.0,
            force: false,
            seed: None,
            max_tree_depth: None,
            only: Vec::new(),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::InvalidConfig(format!("--scale must be positive, got {}", self.scale)));
        }
        if self.jobs == Some(0) || self.max_tree_depth == Some(0) {
            return Err(Error::InvalidConfig("--jobs and --max-tree-depth must be positive".into()));
        }
        Ok(())
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs.unwrap_or(0))
            .build()
            .map_err(|e| Error::InvalidConfig(format!("cannot start worker pool: {e}")))
    }
}

/// One point of the grid: an architecture, an engine and a member index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub index: usize,
    pub run_id: String,
    /// `run_id` without the member suffix; members of a group are combined.
    pub group_id: String,
    pub member: usize,
    pub seed: u64,
    pub config_hash: String,
    pub network: NetworkConfig,
    pub recipe: InferenceRecipe,
}

impl Cell {
    pub fn method_label(&self) -> String {
        format!("{}{}", engine_label(&self.recipe), self.network.activation.short_name())
    }

    pub fn width(&self) -> usize {
        self.network.hidden_widths[0]
    }

    pub fn depth(&self) -> usize {
        self.network.depth()
    }
}

fn engine_label(recipe: &InferenceRecipe) -> &'static str {
    match recipe {
        InferenceRecipe::Vi { .. } => "VI",
        InferenceRecipe::Hmc(_) => "HMC",
    }
}

/// Everything later stages need to know about a fitted run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub name: String,
    pub master_seed: u64,
    pub scale: f64,
    pub combine: Option<CombineSpec>,
    /// Input is one-dimensional and the noiseless signal is known.
    pub synthetic_signal: bool,
    pub cells: Vec<Cell>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    Ok,
    Failed,
}

/// Deterministic per-cell record; timing lives in a separate file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellManifest {
    pub run_id: String,
    pub index: usize,
    pub group_id: String,
    pub member: usize,
    pub master_seed: u64,
    pub seed: u64,
    pub config_hash: String,
    pub network: NetworkConfig,
    pub recipe: InferenceRecipe,
    pub status: CellStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub num_draws: usize,
    pub num_params: usize,
    pub diagnostics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellTiming {
    pub run_id: String,
    pub tt_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssessRecord {
    pub run_id: String,
    pub master_seed: u64,
    pub config_hash: String,
    pub loo: ElpdResult,
    pub waic: ElpdResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ElpdRow {
    run_id: String,
    seed: u64,
    config_hash: String,
    elpd_loo: f64,
    se_loo: f64,
    p_loo: f64,
    elpd_waic: f64,
    se_waic: f64,
    p_waic: f64,
    khat_max: f64,
    khat_over_warn: usize,
    khat_over_unreliable: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupWeights {
    pub group_id: String,
    pub members: Vec<String>,
    pub weights: BTreeMap<String, Vec<f64>>,
}

/// Outcome of one stage: how many units finished and which failed numerically.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StageReport {
    pub stage: String,
    pub completed: usize,
    pub failures: Vec<(String, String)>,
}

impl StageReport {
    fn new(stage: &str) -> Self {
        StageReport {
            stage: stage.into(),
            ..Default::default()
        }
    }

    fn absorb(&mut self, outcome: Result<()>, id: &str) -> Result<()> {
        match outcome {
            Ok(()) => self.completed += 1,
            Err(e) if e.is_numeric() => self.failures.push((id.to_string(), e.to_string())),
            Err(e) => return Err(e),
        }
        Ok(())
    }
}

fn schedule_family(spec: &ExperimentSpec) -> ScheduleFamily {
    match spec.dataset.kind {
        DatasetKind::Lgbb => ScheduleFamily::Lgbb {
            held_out_beta: spec.dataset.is_lgbb_ood(),
        },
        _ => ScheduleFamily::Synthetic,
    }
}

fn input_dim(spec: &ExperimentSpec) -> usize {
    match spec.dataset.kind {
        DatasetKind::Lgbb => 3,
        _ => 1,
    }
}

fn master_seed(spec: &ExperimentSpec, opts: &RunOptions) -> u64 {
    opts.seed.unwrap_or(spec.seed)
}

/// Expands the grid into cells with derived seeds and the default schedules.
pub fn plan_cells(spec: &ExperimentSpec, opts: &RunOptions) -> Result<Plan> {
    spec.validate()?;
    opts.validate()?;
    let master = master_seed(spec, opts);
    let family = schedule_family(spec);
    let inf = &spec.inference;
    let members = spec.combine.as_ref().map_or(1, |c| c.members);
    let draws_floor = schedule::MIN_SCALED_DRAWS;
    let mut cells = Vec::new();
    for &source in &inf.methods {
        for &depth in &spec.model.depths {
            for &width in &spec.model.widths {
                for &activation in &spec.model.activations {
                    for &prior in &spec.model.priors {
                        let network = NetworkConfig::new(input_dim(spec), vec![width; depth], 1, activation, prior)?;
                        for member in 0..members {
                            let index = cells.len();
                            let seed = derive_seed(master, index as u64);
                            let recipe = match source {
                                DrawSource::Vi => {
                                    let iterations = inf
                                        .vi_iterations
                                        .unwrap_or_else(|| schedule::vi_iterations(family, width, depth));
                                    InferenceRecipe::Vi {
                                        config: ViConfig {
                                            iterations: schedule::scaled(
                                                iterations,
                                                opts.scale,
                                                schedule::MIN_SCALED_ITERATIONS,
                                            ),
                                            learning_rate: inf
                                                .learning_rate
                                                .unwrap_or_else(|| schedule::learning_rate(family)),
                                            mc_samples_per_step: inf.vi_mc_samples,
                                            init_mode: schedule::vi_init_mode(depth),
                                            seed,
                                            ..ViConfig::default()
                                        },
                                        posterior_draws: schedule::scaled(
                                            inf.vi_posterior_draws,
                                            opts.scale,
                                            draws_floor,
                                        ),
                                    }
                                }
                                DrawSource::Hmc => {
                                    let warmup = inf.hmc_warmup.unwrap_or(schedule::HMC_WARMUP);
                                    let samples =
                                        inf.hmc_samples.unwrap_or_else(|| schedule::hmc_samples(width, depth));
                                    InferenceRecipe::Hmc(NutsConfig {
                                        warmup: schedule::scaled(warmup, opts.scale, draws_floor),
                                        samples: schedule::scaled(samples, opts.scale, draws_floor),
                                        target_accept: inf.target_accept,
                                        max_tree_depth: opts.max_tree_depth.unwrap_or(inf.max_tree_depth),
                                        chains: inf.hmc_chains,
                                        seed,
                                    })
                                }
                            };
                            let group_id = format!(
                                "{}{}-{}-w{width}-L{depth}",
                                engine_label(&recipe),
                                activation.short_name(),
                                prior
                            );
                            let run_id = if spec.combine.is_some() {
                                format!("{group_id}-m{member}")
                            } else {
                                group_id.clone()
                            };
                            let hash = config_hash(&(&spec.dataset, &network, &recipe));
                            cells.push(Cell {
                                index,
                                run_id,
                                group_id,
                                member,
                                seed,
                                config_hash: hash,
                                network: network.clone(),
                                recipe,
                            });
                        }
                    }
                }
            }
        }
    }
    if !opts.only.is_empty() {
        if let Some(unknown) = opts
            .only
            .iter()
            .find(|id| !cells.iter().any(|c| &c.run_id == *id || &c.group_id == *id))
        {
            return Err(Error::InvalidConfig(format!("--only names no planned cell: `{unknown}`")));
        }
        cells.retain(|c| opts.only.iter().any(|id| *id == c.run_id || *id == c.group_id));
    }
    Ok(Plan {
        name: spec.name.clone(),
        master_seed: master,
        scale: opts.scale,
        combine: spec.combine.clone(),
        synthetic_signal: spec.dataset.kind != DatasetKind::Lgbb,
        cells,
    })
}

/// Training and evaluation data on the model's scale.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: Dataset,
    pub test: Dataset,
    pub transform: Option<Standardizer>,
}

/// Generates or loads the data and applies the split and optional standardisation.
pub fn prepare_data(spec: &ExperimentSpec, master: u64) -> Result<PreparedData> {
    let d = &spec.dataset;
    let seed = derive_seed(master, DATA_STREAM);
    let (train, test) = match (d.kind, d.split) {
        (DatasetKind::Sine, SplitChoice::Independent) => (
            data::gen_sine_dataset(d.n_train, d.x_low, d.x_high, d.noise_variance, seed)?,
            data::gen_sine_dataset(d.n_test, d.x_low, d.x_high, d.noise_variance, derive_seed(seed, 1))?,
        ),
        (DatasetKind::Sine, SplitChoice::Complement) => {
            data::ood_complement_split(&data::gen_sine_dataset(d.n_train, d.x_low, d.x_high, d.noise_variance, seed)?)?
        }
        (DatasetKind::Sine, SplitChoice::Random) => data::random_split(
            &data::gen_sine_dataset(d.n_train, d.x_low, d.x_high, d.noise_variance, seed)?,
            d.train_fraction,
            derive_seed(seed, 1),
        )?,
        (DatasetKind::Related, _) => data::gen_related_dataset(seed)?,
        (DatasetKind::Lgbb, split) => {
            let table = match &d.path {
                Some(p) => data::load_lgbb_csv(p)?.data,
                None => data::gen_lgbb_surrogate(d.surrogate_rows, d.noise_variance.sqrt(), seed)?,
            };
            let kind = if split == SplitChoice::Beta4 {
                SplitKind::LgbbBeta4
            } else {
                SplitKind::Random
            };
            let split = SplitSpec {
                kind,
                train_fraction: d.train_fraction,
                seed: derive_seed(seed, 1),
            };
            data::lgbb_splits(&table, &split)?
        }
        (k, s) => return Err(Error::InvalidConfig(format!("split {s:?} is not available for {k:?} data"))),
    };
    if d.standardize() {
        let (train, test, s) = data::standardize(&train, &test)?;
        Ok(PreparedData {
            train,
            test,
            transform: Some(s),
        })
    } else {
        Ok(PreparedData {
            train,
            test,
            transform: None,
        })
    }
}

fn param_layout_labels(network: &NetworkConfig) -> Vec<String> {
    let layers = network.depth() + 1;
    let mut out: Vec<String> = (1..=layers).flat_map(|l| [format!("W{l}"), format!("b{l}")]).collect();
    out.push("log_sigma".into());
    out
}

fn finite_diagnostics(d: &BTreeMap<String, f64>) -> BTreeMap<String, f64> {
    d.iter().filter(|(_, v)| v.is_finite()).map(|(k, v)| (k.clone(), *v)).collect()
}

fn prepare_out_dir(out: &Path, force: bool) -> Result<()> {
    if out.exists() {
        let occupied = fs::read_dir(out)?.next().is_some();
        if occupied && !force {
            return Err(Error::InvalidConfig(format!(
                "output directory {} already exists; pass --force to overwrite it",
                out.display()
            )));
        }
        if occupied {
            fs::remove_dir_all(out)?;
        }
    }
    fs::create_dir_all(out)?;
    Ok(())
}

/// Fits every cell and writes draws, manifests and timings.
///
/// Numeric failures are recorded in the cell's manifest and the run continues.
pub fn cmd_fit(spec: &ExperimentSpec, opts: &RunOptions) -> Result<StageReport> {
    let plan = plan_cells(spec, opts)?;
    let prepared = prepare_data(spec, plan.master_seed)?;
    prepare_out_dir(&opts.out, opts.force)?;
    let layout = RunLayout::new(&opts.out);
    let mut stored = spec.clone();
    stored.seed = plan.master_seed;
    art::write_atomic(&layout.spec(), stored.to_toml_string().as_bytes())?;
    art::write_json(&layout.plan(), &plan)?;
    art::write_dataset(&layout.train(), &prepared.train)?;
    art::write_dataset(&layout.test(), &prepared.test)?;
    art::write_json(&layout.transform(), &prepared.transform)?;

    let train = &prepared.train;
    let outcomes: Vec<Result<()>> = opts.pool()?.install(|| {
        plan.cells
            .par_iter()
            .map(|cell| fit_cell(&layout, &plan, cell, train))
            .collect()
    });
    let mut report = StageReport::new("fit");
    for (cell, outcome) in plan.cells.iter().zip(outcomes) {
        report.absorb(outcome, &cell.run_id)?;
    }
    Ok(report)
}

fn fit_cell(layout: &RunLayout, plan: &Plan, cell: &Cell, train: &Dataset) -> Result<()> {
    let fitted = fit_posterior(&cell.network, train, &cell.recipe);
    let dir = layout.cell_dir(&cell.run_id);
    let mut manifest = CellManifest {
        run_id: cell.run_id.clone(),
        index: cell.index,
        group_id: cell.group_id.clone(),
        member: cell.member,
        master_seed: plan.master_seed,
        seed: cell.seed,
        config_hash: cell.config_hash.clone(),
        network: cell.network.clone(),
        recipe: cell.recipe.clone(),
        status: CellStatus::Ok,
        error: None,
        num_draws: 0,
        num_params: cell.network.param_count(),
        diagnostics: BTreeMap::new(),
    };
    let outcome = match fitted {
        Ok(draws) => {
            art::write_draws(&dir, &draws, param_layout_labels(&cell.network), cell.seed)?;
            manifest.num_draws = draws.num_draws();
            manifest.diagnostics = finite_diagnostics(&draws.diagnostics);
            art::write_json(
                &layout.timing(&cell.run_id),
                &CellTiming {
                    run_id: cell.run_id.clone(),
                    tt_seconds: draws.wall_time_s,
                },
            )?;
            Ok(())
        }
        Err(e) if e.is_numeric() => {
            manifest.status = CellStatus::Failed;
            manifest.error = Some(e.to_string());
            Err(e)
        }
        Err(e) => return Err(e),
    };
    art::write_json(&layout.manifest(&cell.run_id), &manifest)?;
    outcome
}

/// A fitted run read back from disk.
struct RunContext {
    layout: RunLayout,
    plan: Plan,
    train: Dataset,
    test: Dataset,
    transform: Option<Standardizer>,
}

impl RunContext {
    fn open(out: &Path) -> Result<Self> {
        let layout = RunLayout::new(out);
        let plan: Plan = art::read_json(&layout.plan())?;
        let train = art::read_dataset(&layout.train())?;
        let test = art::read_dataset(&layout.test())?;
        let transform: Option<Standardizer> = art::read_json(&layout.transform())?;
        Ok(RunContext {
            layout,
            plan,
            train,
            test,
            transform,
        })
    }

    fn manifest(&self, cell: &Cell) -> Result<CellManifest> {
        art::read_json(&self.layout.manifest(&cell.run_id))
    }

    /// Draws of a successfully fitted cell, or the numeric failure recorded for it.
    fn draws(&self, cell: &Cell) -> Result<PosteriorDraws> {
        let m = self.manifest(cell)?;
        if m.status == CellStatus::Failed {
            return Err(Error::NonFinite {
                quantity: format!(
                    "fit of {} (recorded failure: {})",
                    cell.run_id,
                    m.error.unwrap_or_default()
                ),
            });
        }
        Ok(art::read_draws(&self.layout.cell_dir(&cell.run_id))?.0)
    }

    fn tt_seconds(&self, cell: &Cell) -> Result<f64> {
        let t: CellTiming = art::read_json(&self.layout.timing(&cell.run_id))?;
        Ok(t.tt_seconds)
    }

    fn to_original_scale(&self, pred: &PredictiveSamples) -> Result<PredictiveSamples> {
        let Some(t) = &self.transform else {
            return Ok(pred.clone());
        };
        let od = pred.output_dim;
        let back = |a: &Array2<f64>| {
            let mut out = a.clone();
            for ((_, j), v) in out.indexed_iter_mut() {
                *v = *v * t.y_std[j % od] + t.y_mean[j % od];
            }
            out
        };
        let x = t.inverse(&Dataset::new(pred.x_new.clone(), Array2::zeros((pred.x_new.nrows(), od)))?)?.x;
        PredictiveSamples::new(back(&pred.mu_samples), back(&pred.y_samples), x, od)
    }

    fn test_original(&self) -> Result<Dataset> {
        match &self.transform {
            Some(t) => t.inverse(&self.test),
            None => Ok(self.test.clone()),
        }
    }

    /// Per-point log density shift from the model scale to the original scale.
    fn log_jacobian(&self) -> f64 {
        self.transform
            .as_ref()
            .map_or(0.0, |t| t.y_std.iter().map(|s| s.ln()).sum::<f64>())
    }

    fn test_predictive(&self, cell: &Cell, draws: &PosteriorDraws) -> Result<PredictiveSamples> {
        let mut rng = ChaCha8Rng::seed_from_u64(cell.seed);
        rng.set_stream(PREDICT_STREAM);
        posterior_predictive(draws, &cell.network, &self.test.x, &mut rng)
    }

    /// RMSE, both coverages and the mean log predictive density, all on the original scale.
    fn score(&self, pred: &PredictiveSamples, mlpd_model_scale: f64) -> Result<(f64, f64, f64, f64)> {
        let orig = self.to_original_scale(pred)?;
        let truth = self.test_original()?.y;
        let r = rmse(&orig, &truth)?;
        let (ec_signal, ec_obs) = coverage_pair(&orig, &truth)?;
        Ok((r, ec_signal, ec_obs, mlpd_model_scale - self.log_jacobian()))
    }
}

fn check_spec_matches(out: &Path, spec: Option<&ExperimentSpec>) -> Result<()> {
    let Some(spec) = spec else { return Ok(()) };
    let stored = ExperimentSpec::from_toml_str(&art::read_required(&RunLayout::new(out).spec())?)?;
    let mut given = spec.clone();
    given.seed = stored.seed;
    if given != stored {
        return Err(Error::InvalidConfig(format!(
            "spec differs from the one fitted in {}",
            out.display()
        )));
    }
    Ok(())
}

const QUANTILES: [f64; 3] = [0.025, 0.5, 0.975];

fn column_quantiles(samples: &Array2<f64>, j: usize) -> [f64; 3] {
    let mut col = samples.column(j).to_vec();
    sort_floats(&mut col);
    QUANTILES.map(|p| quantile_sorted(&col, p))
}

fn quantile_header(prefix: &str) -> Vec<String> {
    ["q025", "q50", "q975"].iter().map(|q| format!("{prefix}_{q}")).collect()
}

/// One row per evaluation point: inputs, target, predictive mean and quantile bands.
fn write_prediction_table(path: &Path, pred: &PredictiveSamples, truth: &Array2<f64>) -> Result<()> {
    let d_in = pred.x_new.ncols();
    let od = pred.output_dim;
    let mut header: Vec<String> = (0..d_in).map(|j| format!("x{j}")).collect();
    header.extend(["output".into(), "y_true".into(), "mean".into()]);
    header.extend(quantile_header("mu"));
    header.extend(quantile_header("y"));
    let mean = pred.predictive_mean();
    let flat: Vec<f64> = truth.iter().copied().collect();
    let rows: Vec<Vec<f64>> = (0..pred.y_samples.ncols())
        .map(|j| {
            let mut r: Vec<f64> = pred.x_new.row(j / od).to_vec();
            r.extend([(j % od) as f64, flat[j], mean[j]]);
            r.extend(column_quantiles(&pred.mu_samples, j));
            r.extend(column_quantiles(&pred.y_samples, j));
            r
        })
        .collect();
    art::write_csv_table(path, &header, &rows)
}

fn curve_grid(ctx: &RunContext) -> Option<Array2<f64>> {
    if !ctx.plan.synthetic_signal || ctx.train.input_dim() != 1 {
        return None;
    }
    let xs = ctx.train.x.iter().chain(ctx.test.x.iter());
    let (lo, hi) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let step = (hi - lo) / (CURVE_POINTS - 1) as f64;
    Some(Array2::from_shape_fn((CURVE_POINTS, 1), |(i, _)| lo + step * i as f64))
}

/// Predictive bands over a dense grid alongside the noiseless signal.
fn write_curves(ctx: &RunContext, cell: &Cell, draws: &PosteriorDraws) -> Result<()> {
    let Some(grid) = curve_grid(ctx) else { return Ok(()) };
    let mut rng = ChaCha8Rng::seed_from_u64(cell.seed);
    rng.set_stream(CURVE_STREAM);
    let pred = ctx.to_original_scale(&posterior_predictive(draws, &cell.network, &grid, &mut rng)?)?;
    let mut header = vec!["x".to_string(), "signal".into(), "mean".into()];
    header.extend(quantile_header("mu"));
    header.extend(quantile_header("y"));
    let mean = pred.predictive_mean();
    let rows: Vec<Vec<f64>> = (0..CURVE_POINTS)
        .map(|j| {
            let x = pred.x_new[[j, 0]];
            let mut r = vec![x, data::sine_signal(x), mean[j]];
            r.extend(column_quantiles(&pred.mu_samples, j));
            r.extend(column_quantiles(&pred.y_samples, j));
            r
        })
        .collect();
    art::write_csv_table(&ctx.layout.curves(&cell.run_id), &header, &rows)
}

fn predict_cell(ctx: &RunContext, cell: &Cell) -> Result<MetricRecord> {
    let draws = ctx.draws(cell)?;
    let tt = ctx.tt_seconds(cell)?;
    let pred = ctx.test_predictive(cell, &draws)?;
    let test_ll = pointwise_log_lik(&draws, &cell.network, &ctx.test, &cell.run_id)?;
    let (r, ec_signal, ec_obs, mlpd) = ctx.score(&pred, mean_log_predictive_density(&test_ll))?;
    write_prediction_table(
        &ctx.layout.predictions(&cell.run_id),
        &ctx.to_original_scale(&pred)?,
        &ctx.test_original()?.y,
    )?;
    write_curves(ctx, cell, &draws)?;
    Ok(MetricRecord {
        run_id: cell.run_id.clone(),
        seed: ctx.plan.master_seed,
        config_hash: cell.config_hash.clone(),
        method: cell.method_label(),
        width: cell.width(),
        depth: cell.depth(),
        prior: cell.network.prior_family.to_string(),
        rmse: r,
        ec_signal,
        ec_obs,
        tt_seconds: tt,
        mlpd,
    })
}

/// Writes per-point predictive quantiles, curves and the metrics table.
pub fn cmd_predict(opts: &RunOptions, spec: Option<&ExperimentSpec>) -> Result<StageReport> {
    check_spec_matches(&opts.out, spec)?;
    let ctx = RunContext::open(&opts.out)?;
    let results: Vec<Result<MetricRecord>> =
        opts.pool()?.install(|| ctx.plan.cells.par_iter().map(|c| predict_cell(&ctx, c)).collect());
    let mut report = StageReport::new("predict");
    let mut rows = Vec::new();
    for (cell, r) in ctx.plan.cells.iter().zip(results) {
        let outcome = r.map(|rec| rows.push(rec));
        report.absorb(outcome, &cell.run_id)?;
    }
    art::write_csv_rows(&ctx.layout.metrics(), &rows)?;
    Ok(report)
}

fn assess_cell(ctx: &RunContext, cell: &Cell) -> Result<ElpdRow> {
    let draws = ctx.draws(cell)?;
    let ll = pointwise_log_lik(&draws, &cell.network, &ctx.train, &cell.run_id)?;
    let loo = elpd_loo(&ll)?;
    let waic = elpd_waic(&ll, WaicPenalty::default())?;
    let row = ElpdRow {
        run_id: cell.run_id.clone(),
        seed: ctx.plan.master_seed,
        config_hash: cell.config_hash.clone(),
        elpd_loo: loo.total,
        se_loo: loo.se,
        p_loo: loo.p_eff,
        elpd_waic: waic.total,
        se_waic: waic.se,
        p_waic: waic.p_eff,
        khat_max: loo.khat.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        khat_over_warn: loo.warn_points().len(),
        khat_over_unreliable: loo.unreliable_points().len(),
    };
    debug_assert!(KHAT_WARN < KHAT_UNRELIABLE);
    art::write_json(
        &ctx.layout.elpd(&cell.run_id),
        &AssessRecord {
            run_id: cell.run_id.clone(),
            master_seed: ctx.plan.master_seed,
            config_hash: cell.config_hash.clone(),
            loo,
            waic,
        },
    )?;
    Ok(row)
}

/// PSIS-LOO and WAIC on the training data of every cell.
pub fn cmd_assess(opts: &RunOptions, spec: Option<&ExperimentSpec>) -> Result<StageReport> {
    check_spec_matches(&opts.out, spec)?;
    let ctx = RunContext::open(&opts.out)?;
    let results: Vec<Result<ElpdRow>> =
        opts.pool()?.install(|| ctx.plan.cells.par_iter().map(|c| assess_cell(&ctx, c)).collect());
    let mut report = StageReport::new("assess");
    let mut rows = Vec::new();
    for (cell, r) in ctx.plan.cells.iter().zip(results) {
        let outcome = r.map(|row| rows.push(row));
        report.absorb(outcome, &cell.run_id)?;
    }
    art::write_csv_rows(&ctx.layout.elpd_table(), &rows)?;
    Ok(report)
}

struct GroupOutcome {
    weights: GroupWeights,
    metrics: Vec<MetricRecord>,
}

fn combine_group(ctx: &RunContext, cells: &[&Cell], methods: &[CombineMethod]) -> Result<GroupOutcome> {
    let mut candidates = Vec::with_capacity(cells.len());
    let mut test_lls = Vec::with_capacity(cells.len());
    let mut tt = 0.0;
    for cell in cells {
        let draws = ctx.draws(cell)?;
        let assessed: AssessRecord = art::read_json(&ctx.layout.elpd(&cell.run_id))?;
        tt += ctx.tt_seconds(cell)?;
        let predictive = ctx.test_predictive(cell, &draws)?;
        test_lls.push(pointwise_log_lik(&draws, &cell.network, &ctx.test, &cell.run_id)?);
        candidates.push(Candidate {
            model_id: cell.run_id.clone(),
            source: draws.source,
            predictive,
            loglik: pointwise_log_lik(&draws, &cell.network, &ctx.train, &cell.run_id)?,
            elpd: assessed.loo,
        });
    }
    let s_out = candidates[0].predictive.num_draws();
    let set = CandidateSet::new(candidates)?;
    let first = cells[0];
    let group_id = first.group_id.clone();
    let hashes: Vec<&str> = cells.iter().map(|c| c.config_hash.as_str()).collect();
    let mut weights = BTreeMap::new();
    let mut metrics = Vec::new();
    let ll_refs: Vec<&LogLikMatrix> = test_lls.iter().collect();
    for (mi, &method) in methods.iter().enumerate() {
        let w = set.weights(method)?;
        let mut rng = ChaCha8Rng::seed_from_u64(first.seed);
        rng.set_stream(MIXTURE_STREAM + mi as u64);
        let pred = combine_predictive(&set, &w, s_out, &mut rng)?;
        let lpd = mixture_log_predictive_density(&ll_refs, &w)?;
        let mlpd = crate::stats::neumaier_sum(lpd.iter().copied()) / lpd.len() as f64;
        let (r, ec_signal, ec_obs, mlpd) = ctx.score(&pred, mlpd)?;
        let id = format!("{group_id}-{}", method.label());
        write_prediction_table(
            &ctx.layout.combined_predictions(&id),
            &ctx.to_original_scale(&pred)?,
            &ctx.test_original()?.y,
        )?;
        metrics.push(MetricRecord {
            run_id: id,
            seed: ctx.plan.master_seed,
            config_hash: config_hash(&(&hashes, method.label())),
            method: method.label().to_string(),
            width: first.width(),
            depth: first.depth(),
            prior: first.network.prior_family.to_string(),
            rmse: r,
            ec_signal,
            ec_obs,
            tt_seconds: tt,
            mlpd,
        });
        weights.insert(method.label().to_string(), w.w);
    }
    Ok(GroupOutcome {
        weights: GroupWeights {
            group_id,
            members: cells.iter().map(|c| c.run_id.clone()).collect(),
            weights,
        },
        metrics,
    })
}

/// Weights and combined metrics for every group of members.
pub fn cmd_combine(opts: &RunOptions, spec: Option<&ExperimentSpec>) -> Result<StageReport> {
    check_spec_matches(&opts.out, spec)?;
    let ctx = RunContext::open(&opts.out)?;
    let combine = ctx
        .plan
        .combine
        .clone()
        .ok_or_else(|| Error::InvalidConfig("spec has no [combine] block".into()))?;
    let methods = combine.parsed_methods()?;
    let mut groups: Vec<(String, Vec<&Cell>)> = Vec::new();
    for cell in &ctx.plan.cells {
        match groups.iter_mut().find(|(g, _)| *g == cell.group_id) {
            Some((_, members)) => members.push(cell),
            None => groups.push((cell.group_id.clone(), vec![cell])),
        }
    }
    let results: Vec<Result<GroupOutcome>> = opts.pool()?.install(|| {
        groups
            .par_iter()
            .map(|(_, cells)| combine_group(&ctx, cells, &methods))
            .collect()
    });
    let mut report = StageReport::new("combine");
    let mut all_weights = Vec::new();
    let mut rows = Vec::new();
    for ((gid, _), r) in groups.iter().zip(results) {
        let outcome = r.map(|g| {
            all_weights.push(g.weights);
            rows.extend(g.metrics);
        });
        report.absorb(outcome, gid)?;
    }
    art::write_json(&ctx.layout.weights(), &all_weights)?;
    art::write_csv_rows(&ctx.layout.combined_metrics(), &rows)?;
    Ok(report)
}

/// Fit, predict, assess and (when configured) combine in one go.
pub fn cmd_reproduce(spec: &ExperimentSpec, opts: &RunOptions) -> Result<Vec<StageReport>> {
    let mut reports = vec![cmd_fit(spec, opts)?, cmd_predict(opts, None)?, cmd_assess(opts, None)?];
    if spec.combine.is_some() {
        reports.push(cmd_combine(opts, None)?);
    }
    Ok(reports)
}
