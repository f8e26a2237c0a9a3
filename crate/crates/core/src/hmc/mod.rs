//! No-U-Turn Hamiltonian Monte Carlo with an identity mass matrix.
//!
//! Trajectories are built by recursive doubling with multinomial selection
//! inside subtrees and biased progressive sampling between them. The step size
//! is tuned by dual averaging during warmup and then frozen.

mod adapt;
mod diagnostics;

use std::time::Instant;

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{BnnPosterior, LogDensity};
use crate::model::{Dataset, NetworkConfig};
use crate::draws::{DrawSource, PosteriorDraws};
use crate::error::{Error, Result};
use crate::stats::log_add_exp;

pub use adapt::{dual_averaging_adapt, DualAveraging};
pub use diagnostics::{chain_diagnostics, ParamDiagnostics};

/// Energy error above which a trajectory is declared divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1000.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NutsConfig {
    pub warmup: usize,
    pub samples: usize,
    pub target_accept: f64,
    pub max_tree_depth: usize,
    pub chains: usize,
    pub seed: u64,
}

impl Default for NutsConfig {
    fn default() -> Self {
        NutsConfig {
            warmup: 1000,
            samples: 1000,
            target_accept: 0.8,
            max_tree_depth: 10,
            chains: 1,
            seed: 0,
        }
    }
}

impl NutsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.warmup == 0 || self.samples == 0 || self.chains == 0 || self.max_tree_depth == 0 {
            return Err(Error::InvalidConfig(
                "warmup, samples, chains and max_tree_depth must be at least 1".into(),
            ));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::InvalidConfig("target_accept must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Position, momentum and the cached log density and gradient at the position.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseState {
    pub position: Vec<f64>,
    pub momentum: Vec<f64>,
    pub grad: Vec<f64>,
    pub log_density: f64,
}

impl PhaseState {
    pub fn new(target: &dyn LogDensity, position: Vec<f64>, momentum: Vec<f64>) -> Result<Self> {
        let mut grad = vec![0.0; position.len()];
        let log_density = target.log_density_and_grad(&position, &mut grad)?;
        Ok(PhaseState {
            position,
            momentum,
            grad,
            log_density,
        })
    }

    pub fn hamiltonian(&self) -> f64 {
        -self.log_density + 0.5 * dot(&self.momentum, &self.momentum)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// One leapfrog step: half momentum, full position, half momentum.
///
/// A negative `step_size` integrates backwards in time.
pub fn leapfrog(target: &dyn LogDensity, state: &PhaseState, step_size: f64) -> Result<PhaseState> {
    let half = 0.5 * step_size;
    let mut momentum: Vec<f64> = state
        .momentum
        .iter()
        .zip(&state.grad)
        .map(|(p, g)| p + half * g)
        .collect();
    let position: Vec<f64> = state
        .position
        .iter()
        .zip(&momentum)
        .map(|(q, p)| q + step_size * p)
        .collect();
    let mut grad = vec![0.0; position.len()];
    let log_density = target.log_density_and_grad(&position, &mut grad)?;
    for (p, g) in momentum.iter_mut().zip(&grad) {
        *p += half * g;
    }
    if !log_density.is_finite() || momentum.iter().any(|p| !p.is_finite()) {
        return Err(Error::non_finite("leapfrog state"));
    }
    Ok(PhaseState {
        position,
        momentum,
        grad,
        log_density,
    })
}

/// Statistics of one NUTS transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionStats {
    pub accept_stat: f64,
    pub tree_depth: usize,
    pub n_leapfrog: usize,
    pub diverged: bool,
    pub energy: f64,
}

struct Subtree {
    /// Edge adjacent to where the subtree started.
    first: PhaseState,
    /// Outermost edge in the integration direction.
    last: PhaseState,
    proposal: PhaseState,
    log_weight: f64,
    rho: Vec<f64>,
}

fn is_turning(rho: &[f64], p_a: &[f64], p_b: &[f64]) -> bool {
    dot(rho, p_a) <= 0.0 || dot(rho, p_b) <= 0.0
}

/// U-turn test over the union of `inner` followed by `outer`, plus the two
/// checks straddling the junction between them.
fn merged_turning(inner: (&[f64], &[f64], &[f64]), outer: (&[f64], &[f64], &[f64])) -> bool {
    let (a_rho, a_first, a_last) = inner;
    let (b_rho, b_first, b_last) = outer;
    let rho: Vec<f64> = a_rho.iter().zip(b_rho).map(|(a, b)| a + b).collect();
    if is_turning(&rho, a_first, b_last) {
        return true;
    }
    let ext: Vec<f64> = a_rho.iter().zip(b_first).map(|(a, b)| a + b).collect();
    if is_turning(&ext, a_first, b_first) {
        return true;
    }
    let ext: Vec<f64> = b_rho.iter().zip(a_last).map(|(a, b)| a + b).collect();
    is_turning(&ext, a_last, b_last)
}

struct TreeBuilder<'a, R> {
    target: &'a dyn LogDensity,
    step: f64,
    h0: f64,
    rng: &'a mut R,
    sum_accept: f64,
    n_leapfrog: usize,
    diverged: bool,
}

impl<R: Rng> TreeBuilder<'_, R> {
    /// Builds `2^depth` states from `start`; `None` when the subtree diverged or turned.
    fn build(&mut self, start: &PhaseState, depth: usize) -> Option<Subtree> {
        if depth == 0 {
            self.n_leapfrog += 1;
            let next = match leapfrog(self.target, start, self.step) {
                Ok(s) => s,
                Err(_) => {
                    self.diverged = true;
                    return None;
                }
            };
            let delta = next.hamiltonian() - self.h0;
            if !delta.is_finite() || delta > DIVERGENCE_THRESHOLD {
                self.diverged = true;
                return None;
            }
            self.sum_accept += (-delta).exp().min(1.0);
            return Some(Subtree {
                rho: next.momentum.clone(),
                first: next.clone(),
                last: next.clone(),
                proposal: next,
                log_weight: -delta,
            });
        }
        let inner = self.build(start, depth - 1)?;
        let outer = self.build(&inner.last, depth - 1)?;
        let turning = merged_turning(
            (&inner.rho, &inner.first.momentum, &inner.last.momentum),
            (&outer.rho, &outer.first.momentum, &outer.last.momentum),
        );
        if turning {
            return None;
        }
        let log_weight = log_add_exp(inner.log_weight, outer.log_weight);
        let take_outer = self.rng.gen::<f64>().ln() < outer.log_weight - log_weight;
        let rho = inner.rho.iter().zip(&outer.rho).map(|(a, b)| a + b).collect();
        Some(Subtree {
            first: inner.first,
            last: outer.last,
            proposal: if take_outer { outer.proposal } else { inner.proposal },
            log_weight,
            rho,
        })
    }
}

/// One NUTS transition from `current` with freshly drawn momentum.
pub fn nuts_transition<R: Rng>(
    target: &dyn LogDensity,
    current: &PhaseState,
    step_size: f64,
    max_tree_depth: usize,
    rng: &mut R,
) -> (PhaseState, TransitionStats) {
    let mut start = current.clone();
    for p in start.momentum.iter_mut() {
        *p = rng.sample(StandardNormal);
    }
    let h0 = start.hamiltonian();
    let mut left = start.clone();
    let mut right = start.clone();
    let mut rho = start.momentum.clone();
    let mut log_weight = 0.0;
    let mut sample = start;
    let mut depth = 0;

    let mut builder = TreeBuilder {
        target,
        step: step_size,
        h0,
        rng,
        sum_accept: 0.0,
        n_leapfrog: 0,
        diverged: false,
    };

    while depth < max_tree_depth {
        let forward = builder.rng.gen::<bool>();
        builder.step = if forward { step_size } else { -step_size };
        let edge = if forward { &right } else { &left };
        let sub = builder.build(&edge.clone(), depth);
        depth += 1;
        let Some(sub) = sub else { break };

        if builder.rng.gen::<f64>().ln() < sub.log_weight - log_weight {
            sample = sub.proposal.clone();
        }
        log_weight = log_add_exp(log_weight, sub.log_weight);

        // orient the existing trajectory so its last edge touches the new subtree
        let (old_first, old_last) = if forward { (&left, &right) } else { (&right, &left) };
        let turning = merged_turning(
            (&rho, &old_first.momentum, &old_last.momentum),
            (&sub.rho, &sub.first.momentum, &sub.last.momentum),
        );
        for (r, s) in rho.iter_mut().zip(&sub.rho) {
            *r += s;
        }
        if forward {
            right = sub.last;
        } else {
            left = sub.last;
        }
        if turning {
            break;
        }
    }

    let stats = TransitionStats {
        accept_stat: if builder.n_leapfrog == 0 {
            0.0
        } else {
            builder.sum_accept / builder.n_leapfrog as f64
        },
        tree_depth: depth,
        n_leapfrog: builder.n_leapfrog,
        diverged: builder.diverged,
        energy: sample.hamiltonian(),
    };
    (sample, stats)
}

/// Doubles or halves the step until the one-step acceptance crosses 1/2.
fn find_reasonable_step<R: Rng>(target: &dyn LogDensity, state: &PhaseState, rng: &mut R) -> f64 {
    let mut probe = state.clone();
    for p in probe.momentum.iter_mut() {
        *p = rng.sample(StandardNormal);
    }
    let h0 = probe.hamiltonian();
    let log_accept = |step: f64| match leapfrog(target, &probe, step) {
        Ok(next) => {
            let v = h0 - next.hamiltonian();
            if v.is_finite() {
                v
            } else {
                f64::NEG_INFINITY
            }
        }
        Err(_) => f64::NEG_INFINITY,
    };
    let mut step = 1.0;
    let direction = if log_accept(step) > 0.5f64.ln() { 1.0 } else { -1.0 };
    for _ in 0..100 {
        let la = log_accept(step);
        if direction * la <= -direction * std::f64::consts::LN_2 {
            break;
        }
        step *= 2f64.powf(direction);
    }
    step
}

#[derive(Debug, Clone)]
struct ChainRun {
    draws: Vec<Vec<f64>>,
    divergences: usize,
    warmup_divergences: usize,
    mean_accept: f64,
    step_size: f64,
    max_depth_hits: usize,
    total_leapfrog: usize,
}

fn run_chain(target: &dyn LogDensity, config: &NutsConfig, chain: usize) -> Result<ChainRun> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(chain as u64);
    let d = target.dim();

    const INIT_ATTEMPTS: usize = 100;
    let mut state = None;
    for _ in 0..INIT_ATTEMPTS {
        let q: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        if let Ok(s) = PhaseState::new(target, q, vec![0.0; d]) {
            if s.log_density.is_finite() {
                state = Some(s);
                break;
            }
        }
    }
    let mut state = state.ok_or(Error::InitializationFailed {
        attempts: INIT_ATTEMPTS,
    })?;

    let mut step = find_reasonable_step(target, &state, &mut rng);
    let mut adapt = DualAveraging::new(step, config.target_accept);
    let mut run = ChainRun {
        draws: Vec::with_capacity(config.samples),
        divergences: 0,
        warmup_divergences: 0,
        mean_accept: 0.0,
        step_size: 0.0,
        max_depth_hits: 0,
        total_leapfrog: 0,
    };

    for i in 0..config.warmup + config.samples {
        let (next, stats) = nuts_transition(target, &state, step, config.max_tree_depth, &mut rng);
        state = next;
        run.total_leapfrog += stats.n_leapfrog;
        if i < config.warmup {
            run.warmup_divergences += stats.diverged as usize;
            step = adapt.update(stats.accept_stat);
            if i + 1 == config.warmup {
                step = adapt.final_step();
            }
        } else {
            run.divergences += stats.diverged as usize;
            run.max_depth_hits += (stats.tree_depth >= config.max_tree_depth) as usize;
            run.mean_accept += stats.accept_stat / config.samples as f64;
            run.draws.push(state.position.clone());
        }
    }
    run.step_size = step;
    Ok(run)
}

/// Runs `chains` independent NUTS chains in parallel and stacks their draws by chain index.
pub fn nuts_sample(target: &dyn LogDensity, config: &NutsConfig) -> Result<PosteriorDraws> {
    config.validate()?;
    let start = Instant::now();
    let runs: Vec<ChainRun> = (0..config.chains)
        .into_par_iter()
        .map(|c| run_chain(target, config, c))
        .collect::<Result<_>>()?;

    let d = target.dim();
    let total = config.chains * config.samples;
    let mut draws = Array2::zeros((total, d));
    let mut chain_ids = Vec::with_capacity(total);
    for (c, run) in runs.iter().enumerate() {
        for (s, row) in run.draws.iter().enumerate() {
            draws
                .row_mut(c * config.samples + s)
                .assign(&ndarray::ArrayView1::from(row.as_slice()));
            chain_ids.push(c);
        }
    }
    let mut out = PosteriorDraws::new(draws, DrawSource::Hmc)?;
    out.chain_ids = chain_ids;
    let diag = &mut out.diagnostics;
    diag.insert(
        "divergences".into(),
        runs.iter().map(|r| r.divergences).sum::<usize>() as f64,
    );
    diag.insert(
        "warmup_divergences".into(),
        runs.iter().map(|r| r.warmup_divergences).sum::<usize>() as f64,
    );
    diag.insert(
        "mean_accept_prob".into(),
        runs.iter().map(|r| r.mean_accept).sum::<f64>() / runs.len() as f64,
    );
    diag.insert(
        "max_tree_depth_hits".into(),
        runs.iter().map(|r| r.max_depth_hits).sum::<usize>() as f64,
    );
    diag.insert(
        "leapfrog_steps".into(),
        runs.iter().map(|r| r.total_leapfrog).sum::<usize>() as f64,
    );
    for (c, r) in runs.iter().enumerate() {
        diag.insert(format!("step_size.chain{c}"), r.step_size);
    }
    let summary = chain_diagnostics(&out);
    let ess: Vec<f64> = summary.iter().filter_map(|d| d.bulk_ess).collect();
    let rhat: Vec<f64> = summary.iter().filter_map(|d| d.split_rhat).collect();
    if !ess.is_empty() {
        out.diagnostics
            .insert("min_bulk_ess".into(), ess.iter().copied().fold(f64::INFINITY, f64::min));
    }
    if !rhat.is_empty() {
        out.diagnostics
            .insert("max_split_rhat".into(), rhat.iter().copied().fold(0.0, f64::max));
    }
    out.wall_time_s = start.elapsed().as_secs_f64();
    Ok(out)
}

/// NUTS on the network posterior given training data.
pub fn sample_network_posterior(
    model: &NetworkConfig,
    data: &Dataset,
    config: &NutsConfig,
) -> Result<PosteriorDraws> {
    model.validate()?;
    data.check_dims(model)?;
    nuts_sample(&BnnPosterior::new(model, data), config)
}
