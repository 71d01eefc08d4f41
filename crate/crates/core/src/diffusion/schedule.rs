//! DDPM noise schedules and forward corruption.

use crate::fields::FieldParams;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Linear,
    Cosine,
}

/// Beta/alpha/alpha-bar sequences for T timesteps (1-indexed access).
/// `alpha_bars[i]` is exactly the running product of `alphas[..=i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    pub t_max: usize,
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
}

const LINEAR_BETA_START: f64 = 1e-4;
const LINEAR_BETA_END: f64 = 0.02;
const COSINE_S: f64 = 0.008;
const BETA_CLIP: f64 = 0.999;

pub fn make_schedule(kind: ScheduleKind, t_max: usize) -> Result<NoiseSchedule> {
    if t_max == 0 {
        return Err(Error::Config("schedule needs at least one timestep".into()));
    }
    let betas: Vec<f64> = match kind {
        ScheduleKind::Linear => (0..t_max)
            .map(|i| {
                if t_max == 1 {
                    LINEAR_BETA_START
                } else {
                    LINEAR_BETA_START
                        + (LINEAR_BETA_END - LINEAR_BETA_START) * i as f64 / (t_max - 1) as f64
                }
            })
            .collect(),
        ScheduleKind::Cosine => {
            // alpha_bar(t) = f(t)/f(0), f(t) = cos^2(((t/T + s)/(1 + s)) * pi/2);
            // f(0) cancels in the consecutive ratios the betas come from.
            let f = |t: f64| {
                let x = ((t / t_max as f64 + COSINE_S) / (1.0 + COSINE_S))
                    * std::f64::consts::FRAC_PI_2;
                x.cos() * x.cos()
            };
            (1..=t_max)
                .map(|t| {
                    let ratio = f(t as f64) / f((t - 1) as f64);
                    (1.0 - ratio).min(BETA_CLIP).max(0.0)
                })
                .collect()
        }
    };
    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bars = Vec::with_capacity(t_max);
    let mut running = 1.0;
    for &a in &alphas {
        running *= a;
        alpha_bars.push(running);
    }
    let sched = NoiseSchedule {
        t_max,
        betas,
        alphas,
        alpha_bars,
    };
    sched.validate()?;
    Ok(sched)
}

impl NoiseSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.betas.len() != self.t_max
            || self.alphas.len() != self.t_max
            || self.alpha_bars.len() != self.t_max
        {
            return Err(Error::Config("schedule sequence lengths must equal T".into()));
        }
        for (&b, &a) in self.betas.iter().zip(&self.alphas) {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::Config(format!("beta {b} outside (0, 1)")));
            }
            if (a - (1.0 - b)).abs() > 0.0 {
                return Err(Error::Config("alpha must equal 1 - beta".into()));
            }
        }
        for w in self.alpha_bars.windows(2) {
            if !(w[1] < w[0]) {
                return Err(Error::Config("alpha_bar must be strictly decreasing".into()));
            }
        }
        Ok(())
    }

    /// Cumulative product at 1-indexed timestep `t`; `alpha_bar(0) = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }
}

/// Closed-form DDPM corruption:
/// `zeta_t = sqrt(alpha_bar_t) zeta_0 + sqrt(1 - alpha_bar_t) eps`.
pub fn forward_corrupt(
    zeta0: &FieldParams,
    t: usize,
    eps: &FieldParams,
    sched: &NoiseSchedule,
) -> Result<FieldParams> {
    if t == 0 || t > sched.t_max {
        return Err(Error::Contract(format!(
            "timestep {t} outside [1, {}]",
            sched.t_max
        )));
    }
    if zeta0.spec != eps.spec {
        return Err(Error::Contract("noise spec must match the state spec".into()));
    }
    let ab = sched.alpha_bar(t);
    let signal = ab.sqrt();
    let noise = (1.0 - ab).sqrt();
    let data = zeta0
        .data
        .iter()
        .zip(&eps.data)
        .map(|(x, e)| signal * x + noise * e)
        .collect();
    FieldParams::new(zeta0.spec.clone(), data)
}
