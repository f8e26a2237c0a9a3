//! Default iteration and sample counts per architecture.

use crate::vi::InitMode;

/// Learning rate for the synthetic experiments.
pub const SYNTHETIC_LEARNING_RATE: f64 = 5e-3;
/// Learning rate for the LGBB experiments.
pub const LGBB_LEARNING_RATE: f64 = 5e-2;
pub const HMC_WARMUP: usize = 1000;
/// Fewest draws a scaled-down run keeps, so coverage and PSIS stay defined.
pub const MIN_SCALED_DRAWS: usize = 50;
/// Fewest optimiser steps a scaled-down run keeps.
pub const MIN_SCALED_ITERATIONS: usize = 100;

/// Which schedule table applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleFamily {
    Synthetic,
    Lgbb { held_out_beta: bool },
}

/// ADVI iterations: per width for one hidden layer, `L * 10^4` for `L` layers.
pub fn vi_iterations(family: ScheduleFamily, width: usize, depth: usize) -> usize {
    match family {
        ScheduleFamily::Lgbb { held_out_beta } => {
            if held_out_beta && width == 200 {
                20_000
            } else {
                10_000
            }
        }
        ScheduleFamily::Synthetic if depth > 1 => depth * 10_000,
        ScheduleFamily::Synthetic => match width {
            0..=200 => 10_000,
            201..=1000 => 50_000,
            _ => 60_000,
        },
    }
}

pub fn learning_rate(family: ScheduleFamily) -> f64 {
    match family {
        ScheduleFamily::Synthetic => SYNTHETIC_LEARNING_RATE,
        ScheduleFamily::Lgbb { .. } => LGBB_LEARNING_RATE,
    }
}

/// Posterior draws per chain after warmup.
pub fn hmc_samples(width: usize, depth: usize) -> usize {
    if depth > 1 {
        (depth * 1000).min(4000)
    } else if width <= 20 {
        1000
    } else {
        2000
    }
}

/// Uniform initialisation for shallow nets, prior mean from three layers on.
pub fn vi_init_mode(depth: usize) -> InitMode {
    if depth <= 2 {
        InitMode::ToFeasible
    } else {
        InitMode::ToMean
    }
}

/// Scales a count by `scale`, never going below `floor` (or the count itself if smaller).
pub fn scaled(count: usize, scale: f64, floor: usize) -> usize {
    let s = (count as f64 * scale).round() as usize;
    s.max(floor.min(count))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_schedule_table() {
        let syn = ScheduleFamily::Synthetic;
        let vi: Vec<usize> = [20, 200, 1000, 2000].iter().map(|&w| vi_iterations(syn, w, 1)).collect();
        assert_eq!(vi, vec![10_000, 10_000, 50_000, 60_000]);
        let deep: Vec<usize> = (1..=6).map(|l| vi_iterations(syn, 20, l)).collect();
        assert_eq!(deep, vec![10_000, 20_000, 30_000, 40_000, 50_000, 60_000]);

        let hmc: Vec<usize> = [20, 200, 1000, 2000].iter().map(|&w| hmc_samples(w, 1)).collect();
        assert_eq!(hmc, vec![1000, 2000, 2000, 2000]);
        let deep_hmc: Vec<usize> = (1..=6).map(|l| hmc_samples(20, l)).collect();
        assert_eq!(deep_hmc, vec![1000, 2000, 3000, 4000, 4000, 4000]);
        assert_eq!(HMC_WARMUP, 1000);

        assert_eq!(learning_rate(syn), 5e-3);
        let lgbb = ScheduleFamily::Lgbb { held_out_beta: false };
        let lgbb_ood = ScheduleFamily::Lgbb { held_out_beta: true };
        assert_eq!(learning_rate(lgbb), 5e-2);
        assert_eq!(vi_iterations(lgbb, 200, 1), 10_000);
        assert_eq!(vi_iterations(lgbb_ood, 20, 1), 10_000);
        assert_eq!(vi_iterations(lgbb_ood, 100, 1), 10_000);
        assert_eq!(vi_iterations(lgbb_ood, 200, 1), 20_000);

        let init: Vec<InitMode> = (1..=6).map(vi_init_mode).collect();
        assert_eq!(init[..2], [InitMode::ToFeasible; 2]);
        assert_eq!(init[2..], [InitMode::ToMean; 4]);
    }

    #[test]
    fn scaling_clamps() {
        assert_eq!(scaled(10_000, 0.1, MIN_SCALED_ITERATIONS), 1000);
        assert_eq!(scaled(1000, 0.01, MIN_SCALED_DRAWS), 50);
        assert_eq!(scaled(30, 0.1, MIN_SCALED_DRAWS), 30);
        assert_eq!(scaled(2000, 1.0, MIN_SCALED_DRAWS), 2000);
    }
}
