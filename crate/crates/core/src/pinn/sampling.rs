//! Collocation-point sampling.

use rand::Rng;

use super::TrainingConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    /// `log10 t` uniform on `[log10 t_min, log10 t_max]`.
    LogUniform,
    /// `t` uniform on `[t_min, t_max]`.
    Uniform,
}

impl std::str::FromStr for Sampling {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "log-uniform" | "log" => Ok(Self::LogUniform),
            "uniform" | "linear" => Ok(Self::Uniform),
            other => Err(format!("unknown sampling `{other}` (expected log-uniform or uniform)")),
        }
    }
}

impl std::fmt::Display for Sampling {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::LogUniform => "log-uniform",
            Self::Uniform => "uniform",
        })
    }
}

/// Exactly `cfg.n_collocation` times drawn according to `cfg.sampling`.
pub fn sample_collocation<R: Rng>(cfg: &TrainingConfig, rng: &mut R) -> Vec<f64> {
    let (lo, hi) = (cfg.t_min, cfg.t_max);
    (0..cfg.n_collocation)
        .map(|_| {
            if lo == hi {
                return lo;
            }
            match cfg.sampling {
                Sampling::LogUniform => {
                    let e = rng.gen_range(lo.log10()..=hi.log10());
                    10f64.powf(e).clamp(lo, hi)
                }
                Sampling::Uniform => rng.gen_range(lo..=hi),
            }
        })
        .collect()
}
