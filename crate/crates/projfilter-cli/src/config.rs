//! Configuration schema: a single JSON document, schema-validated (unknown
//! keys rejected), with CLI flags overriding file keys. `resolve` fills in
//! per-example defaults and produces the fully-determined settings every run
//! records in its summary.

use serde::{Deserialize, Serialize};

use projfilter::posterior::tracking_measurement;

/// Which experiment to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
#[clap(rename_all = "kebab-case")]
pub enum ExampleKind {
    /// 2-D multimodal update: sinusoidal likelihood against a unit-variance
    /// Gaussian prior.
    ExampleA,
    /// 2-D range-bearing tracking update with a tight prior.
    ExampleB,
    /// 1-D conjugate Kalman problem with a known closed-form posterior.
    LinearGaussian,
    /// User-supplied prior and conjugate coefficients.
    Custom,
}

impl ExampleKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExampleKind::ExampleA => "example-a",
            ExampleKind::ExampleB => "example-b",
            ExampleKind::LinearGaussian => "linear-gaussian",
            ExampleKind::Custom => "custom",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
#[clap(rename_all = "kebab-case")]
pub enum GradientChoice {
    Riemannian,
    Euclidean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
#[clap(rename_all = "kebab-case")]
pub enum SolverChoice {
    Euler,
    AdaptiveRk,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionConfig {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BaselineConfig {
    Unscented,
    GaussHermite {
        order: usize,
    },
    Particle {
        n_particles: usize,
        #[serde(default)]
        seed: Option<u64>,
    },
}

/// One monomial term of a drift polynomial.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermConfig {
    pub powers: Vec<u32>,
    pub coef: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdeConfig {
    /// One coefficient list per state dimension.
    pub drift: Vec<Vec<TermConfig>>,
    /// Constant generator coefficient matrix (callers fold rho rho' here).
    pub diffusion: Vec<Vec<f64>>,
    pub delta_t: f64,
    #[serde(default)]
    pub n_substeps: Option<usize>,
}

/// The user-facing experiment configuration; every field except `example`
/// is optional and defaulted per example.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub example: ExampleKind,
    #[serde(default)]
    pub n_o: Option<u32>,
    #[serde(default)]
    pub quad_level: Option<u32>,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub gradient: Option<GradientChoice>,
    #[serde(default)]
    pub solver: Option<SolverChoice>,
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default)]
    pub n_steps: Option<usize>,
    #[serde(default)]
    pub grad_tol: Option<f64>,
    #[serde(default)]
    pub metric_stride: Option<usize>,
    #[serde(default)]
    pub resolution: Option<usize>,
    #[serde(default)]
    pub region: Option<RegionConfig>,
    #[serde(default)]
    pub prior: Option<PriorConfig>,
    /// Measurement value override (`y`).
    #[serde(default)]
    pub measurement: Option<Vec<f64>>,
    /// Conjugate likelihood coefficients, required for `custom`.
    #[serde(default)]
    pub theta_ell: Option<Vec<f64>>,
    #[serde(default)]
    pub baselines: Option<Vec<BaselineConfig>>,
    #[serde(default)]
    pub sde: Option<SdeConfig>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl ExperimentConfig {
    pub fn new(example: ExampleKind) -> Self {
        Self {
            example,
            n_o: None,
            quad_level: None,
            alpha: None,
            gradient: None,
            solver: None,
            delta: None,
            dt: None,
            n_steps: None,
            grad_tol: None,
            metric_stride: None,
            resolution: None,
            region: None,
            prior: None,
            measurement: None,
            theta_ell: None,
            baselines: None,
            sde: None,
            seed: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| format!("config: {e}"))
    }

    /// Fill per-example defaults and validate cross-field consistency.
    pub fn resolve(&self) -> Result<Resolved, String> {
        let (_dim, n_o, dt, n_steps, prior_mean, prior_cov) = match self.example {
            ExampleKind::ExampleA => (
                2usize,
                4u32,
                1.25e-2,
                400usize,
                vec![1.0, 1.0],
                vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            ),
            ExampleKind::ExampleB => (
                2,
                2,
                5e-2,
                100,
                vec![0.5, -0.5],
                vec![vec![5e-2, 0.0], vec![0.0, 5e-2]],
            ),
            ExampleKind::LinearGaussian => (1, 2, 2.5e-2, 500, vec![0.0], vec![vec![1.0]]),
            ExampleKind::Custom => {
                let prior = self
                    .prior
                    .as_ref()
                    .ok_or("custom example requires a prior")?;
                (prior.mean.len(), 2, 2.5e-2, 500, prior.mean.clone(), prior.cov.clone())
            }
        };
        let (prior_mean, prior_cov) = match &self.prior {
            Some(p) => (p.mean.clone(), p.cov.clone()),
            None => (prior_mean, prior_cov),
        };
        let dim = prior_mean.len();
        if prior_cov.len() != dim || prior_cov.iter().any(|row| row.len() != dim) {
            return Err("prior covariance shape must match the mean".into());
        }
        if self.example == ExampleKind::ExampleB && dim != 2 {
            return Err("the tracking example is two-dimensional".into());
        }
        if self.example == ExampleKind::LinearGaussian && dim != 1 {
            return Err("the linear-Gaussian example is one-dimensional".into());
        }
        let measurement = match &self.measurement {
            Some(y) => y.clone(),
            None => match self.example {
                ExampleKind::ExampleA => vec![0.0; dim],
                ExampleKind::ExampleB => {
                    tracking_measurement(&prior_mean)
                }
                ExampleKind::LinearGaussian => vec![1.0],
                ExampleKind::Custom => vec![],
            },
        };
        if self.example == ExampleKind::Custom && self.theta_ell.is_none() {
            return Err("custom example requires theta_ell".into());
        }
        let n_o = self.n_o.unwrap_or(n_o);
        if n_o < 2 {
            return Err("n_o must be at least 2".into());
        }
        let quad_level = self.quad_level.unwrap_or(6);
        let alpha = self.alpha.unwrap_or(0.5);
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err("alpha must lie in (0, 1]".into());
        }
        let dt = self.dt.unwrap_or(dt);
        let delta = self.delta.unwrap_or(1.0);
        if dt <= 0.0 || delta <= 0.0 {
            return Err("dt and delta must be positive".into());
        }
        let n_steps = self.n_steps.unwrap_or(n_steps);
        if n_steps == 0 {
            return Err("n_steps must be at least 1".into());
        }
        let metric_stride = self.metric_stride.unwrap_or(1).max(1);
        let resolution = self.resolution.unwrap_or(500);
        if resolution < 2 {
            return Err("resolution must be at least 2".into());
        }
        if let Some(r) = &self.region {
            if r.lo.len() != dim || r.hi.len() != dim {
                return Err("region bounds must match the state dimension".into());
            }
        }
        Ok(Resolved {
            example: self.example,
            dim,
            n_o,
            quad_level,
            alpha,
            gradient: self.gradient.unwrap_or(GradientChoice::Riemannian),
            solver: self.solver.unwrap_or(SolverChoice::Euler),
            delta,
            dt,
            n_steps,
            grad_tol: self.grad_tol.unwrap_or(1e-8),
            metric_stride,
            resolution,
            region: self.region.clone(),
            prior_mean,
            prior_cov,
            measurement,
            theta_ell: self.theta_ell.clone(),
            baselines: self.baselines.clone().unwrap_or_default(),
            sde: self.sde.clone(),
            seed: self.seed.unwrap_or(0),
        })
    }
}

/// Fully-determined settings of a run; everything here lands in
/// `summary.json` so a run is reproducible from its own output.
#[derive(Debug, Clone, Serialize)]
pub struct Resolved {
    pub example: ExampleKind,
    pub dim: usize,
    pub n_o: u32,
    pub quad_level: u32,
    pub alpha: f64,
    pub gradient: GradientChoice,
    pub solver: SolverChoice,
    pub delta: f64,
    pub dt: f64,
    pub n_steps: usize,
    pub grad_tol: f64,
    pub metric_stride: usize,
    pub resolution: usize,
    pub region: Option<RegionConfig>,
    pub prior_mean: Vec<f64>,
    pub prior_cov: Vec<Vec<f64>>,
    pub measurement: Vec<f64>,
    pub theta_ell: Option<Vec<f64>>,
    pub baselines: Vec<BaselineConfig>,
    pub sde: Option<SdeConfig>,
    pub seed: u64,
}

/// One requested row of a comparison table.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TableRow {
    Unscented,
    GaussHermite {
        order: usize,
    },
    Renyi {
        n_o: u32,
        iterations: usize,
        #[serde(default)]
        solver: Option<SolverChoice>,
    },
    Kl {
        n_o: u32,
        iterations: usize,
        #[serde(default)]
        solver: Option<SolverChoice>,
    },
    Particle {
        n_particles: usize,
        #[serde(default)]
        seed: Option<u64>,
    },
}

/// Configuration of the `table` subcommand.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableConfig {
    pub example: ExampleKind,
    /// Rows in output order; when absent, the standard comparison set runs.
    #[serde(default)]
    pub rows: Option<Vec<TableRow>>,
    #[serde(default)]
    pub quad_level: Option<u32>,
    #[serde(default)]
    pub resolution: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl TableConfig {
    pub fn from_json(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| format!("config: {e}"))
    }

    /// The default row set mirroring the published comparison: sigma-point
    /// methods, gradient runs at orders two and four, and three particle
    /// sizes.
    pub fn default_rows() -> Vec<TableRow> {
        let (dt_iters_2, dt_iters_4) = (50usize, 100usize);
        vec![
            TableRow::Unscented,
            TableRow::GaussHermite { order: 17 },
            TableRow::Renyi {
                n_o: 2,
                iterations: dt_iters_2,
                solver: None,
            },
            TableRow::Renyi {
                n_o: 4,
                iterations: dt_iters_4,
                solver: None,
            },
            TableRow::Kl {
                n_o: 2,
                iterations: dt_iters_2,
                solver: None,
            },
            TableRow::Kl {
                n_o: 4,
                iterations: dt_iters_4,
                solver: None,
            },
            TableRow::Particle {
                n_particles: 48_000,
                seed: None,
            },
            TableRow::Particle {
                n_particles: 480_000,
                seed: None,
            },
            TableRow::Particle {
                n_particles: 4_800_000,
                seed: None,
            },
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ExperimentConfig::from_json(r#"{"example": "example-a", "bogus": 1}"#)
            .unwrap_err();
        assert!(err.contains("bogus"), "{err}");
    }

    #[test]
    fn example_defaults_resolve() {
        let r = ExperimentConfig::new(ExampleKind::ExampleA).resolve().unwrap();
        assert_eq!(r.n_o, 4);
        assert_eq!(r.dt, 1.25e-2);
        assert_eq!(r.n_steps, 400);
        assert_eq!(r.prior_mean, vec![1.0, 1.0]);
        assert_eq!(r.measurement, vec![0.0, 0.0]);

        let r = ExperimentConfig::new(ExampleKind::ExampleB).resolve().unwrap();
        assert_eq!(r.n_o, 2);
        assert_eq!(r.dt, 5e-2);
        assert_eq!(r.n_steps, 100);
        // y = h(prior mean)
        assert_eq!(r.measurement.len(), 3);
        assert!((r.measurement[0] - 0.7348469228349535).abs() < 1e-12);
    }

    #[test]
    fn overrides_take_precedence() {
        let mut c = ExperimentConfig::new(ExampleKind::ExampleA);
        c.n_o = Some(6);
        c.alpha = Some(1.0);
        c.n_steps = Some(10);
        let r = c.resolve().unwrap();
        assert_eq!(r.n_o, 6);
        assert_eq!(r.alpha, 1.0);
        assert_eq!(r.n_steps, 10);
    }

    #[test]
    fn invalid_values_are_rejected() {
        let mut c = ExperimentConfig::new(ExampleKind::ExampleA);
        c.alpha = Some(1.5);
        assert!(c.resolve().is_err());
        let mut c = ExperimentConfig::new(ExampleKind::ExampleA);
        c.dt = Some(-1.0);
        assert!(c.resolve().is_err());
        let c = ExperimentConfig::new(ExampleKind::Custom);
        assert!(c.resolve().is_err());
    }

    #[test]
    fn table_rows_parse() {
        let cfg = TableConfig::from_json(
            r#"{"example": "example-b", "rows": [{"method": "unscented"},
                {"method": "particle", "n_particles": 1000, "seed": 3}]}"#,
        )
        .unwrap();
        assert_eq!(cfg.rows.as_ref().unwrap().len(), 2);
        let empty = TableConfig::from_json(r#"{"example": "example-a", "rows": []}"#).unwrap();
        assert_eq!(empty.rows.unwrap().len(), 0);
    }
}
