/// Nesterov dual averaging of the log step size towards a target acceptance statistic.
#[derive(Debug, Clone)]
pub struct DualAveraging {
    target_accept: f64,
    mu: f64,
    gamma: f64,
    t0: f64,
    kappa: f64,
    count: usize,
    h_bar: f64,
    log_step: f64,
    log_step_bar: f64,
}

impl DualAveraging {
    /// Shrinkage point is `log(10 * initial_step)`.
    pub fn new(initial_step: f64, target_accept: f64) -> Self {
        DualAveraging {
            target_accept,
            mu: (10.0 * initial_step).ln(),
            gamma: 0.05,
            t0: 10.0,
            kappa: 0.75,
            count: 0,
            h_bar: 0.0,
            log_step: initial_step.ln(),
            log_step_bar: 0.0,
        }
    }

    /// Feeds one acceptance statistic and returns the next step size.
    pub fn update(&mut self, accept_stat: f64) -> f64 {
        self.count += 1;
        let m = self.count as f64;
        let eta = 1.0 / (m + self.t0);
        self.h_bar = (1.0 - eta) * self.h_bar + eta * (self.target_accept - accept_stat);
        self.log_step = self.mu - m.sqrt() / self.gamma * self.h_bar;
        let w = m.powf(-self.kappa);
        self.log_step_bar = w * self.log_step + (1.0 - w) * self.log_step_bar;
        self.log_step.exp()
    }

    pub fn current_step(&self) -> f64 {
        self.log_step.exp()
    }

    /// Averaged step size used after warmup.
    pub fn final_step(&self) -> f64 {
        if self.count == 0 {
            self.log_step.exp()
        } else {
            self.log_step_bar.exp()
        }
    }
}

/// Step-size schedule produced by feeding `accept_stats` through [`DualAveraging`].
pub fn dual_averaging_adapt(accept_stats: &[f64], target_accept: f64, initial_step: f64) -> Vec<f64> {
    let mut da = DualAveraging::new(initial_step, target_accept);
    accept_stats.iter().map(|&a| da.update(a)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn on_target_acceptance_has_no_drift() {
        let steps = dual_averaging_adapt(&[0.8; 500], 0.8, 0.1);
        let anchor = 1.0;
        for s in &steps {
            assert!((s - anchor).abs() < 1e-12);
        }
    }

    #[test]
    fn full_acceptance_grows_step() {
        let steps = dual_averaging_adapt(&[1.0; 200], 0.8, 0.1);
        assert!(steps.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn zero_acceptance_shrinks_step() {
        let steps = dual_averaging_adapt(&[0.0; 200], 0.8, 0.1);
        assert!(steps.windows(2).all(|w| w[1] < w[0]));
    }
}
