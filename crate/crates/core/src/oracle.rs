//! Stochastic first-order oracles.
//!
//! Every noise realization is a pure function of a [`SeedPath`]: the key
//! `(run_seed, stream, function, k, t)` seeds a ChaCha8 generator, so draws
//! are reproducible, order independent and can be replayed at a second
//! query point for paired (shared-seed) evaluations.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::problem::BilevelProblem;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NoiseModel {
    AdditiveGaussian,
    AdditiveUniform,
    /// Unbiased random coordinate masking; its realization is not Lipschitz
    /// in the query point, so it cannot back paired queries.
    CoordinateDropout,
}

impl NoiseModel {
    pub fn is_additive(self) -> bool {
        matches!(self, NoiseModel::AdditiveGaussian | NoiseModel::AdditiveUniform)
    }

    pub fn name(self) -> &'static str {
        match self {
            NoiseModel::AdditiveGaussian => "additive_gaussian",
            NoiseModel::AdditiveUniform => "additive_uniform",
            NoiseModel::CoordinateDropout => "coordinate_dropout",
        }
    }
}

impl fmt::Display for NoiseModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NoiseModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "additive_gaussian" | "gaussian" => Ok(NoiseModel::AdditiveGaussian),
            "additive_uniform" | "uniform" => Ok(NoiseModel::AdditiveUniform),
            "coordinate_dropout" | "dropout" => Ok(NoiseModel::CoordinateDropout),
            other => Err(Error::argument(format!("unknown noise model '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleConfig {
    pub noise_f: f64,
    pub noise_g: f64,
    pub noise_model: NoiseModel,
    pub mean_squared_smooth: bool,
}

impl OracleConfig {
    pub fn new(noise_f: f64, noise_g: f64, noise_model: NoiseModel) -> Result<Self> {
        for (name, v) in [("noise_f", noise_f), ("noise_g", noise_g)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be finite and nonnegative, got {v}")));
            }
        }
        Ok(OracleConfig {
            noise_f,
            noise_g,
            noise_model,
            mean_squared_smooth: noise_model.is_additive(),
        })
    }

    /// Zero-noise oracle returning exact gradients.
    pub fn exact() -> Self {
        OracleConfig {
            noise_f: 0.0,
            noise_g: 0.0,
            noise_model: NoiseModel::AdditiveGaussian,
            mean_squared_smooth: true,
        }
    }

    pub fn gaussian(noise_f: f64, noise_g: f64) -> Result<Self> {
        Self::new(noise_f, noise_g, NoiseModel::AdditiveGaussian)
    }

    pub fn is_exact(&self) -> bool {
        self.noise_f == 0.0 && self.noise_g == 0.0
    }
}

/// Named sample streams of the algorithms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stream {
    Wy,
    Wz,
    XF,
    XGy,
    XGz,
}

impl Stream {
    pub const ALL: [Stream; 5] = [Stream::Wy, Stream::Wz, Stream::XF, Stream::XGy, Stream::XGz];

    pub fn index(self) -> usize {
        match self {
            Stream::Wy => 0,
            Stream::Wz => 1,
            Stream::XF => 2,
            Stream::XGy => 3,
            Stream::XGz => 4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SeedPath {
    pub run_seed: u64,
    pub stream: Stream,
    /// Outer iteration index `k`.
    pub outer: u64,
    /// Inner index `t` (or batch index `m`).
    pub inner: u64,
}

impl SeedPath {
    pub fn new(run_seed: u64, stream: Stream, outer: u64, inner: u64) -> Self {
        SeedPath {
            run_seed,
            stream,
            outer,
            inner,
        }
    }

    fn rng(&self, which: Which) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        let tag = self.stream.index() as u64 | ((which as u64) << 8);
        key[0..8].copy_from_slice(&self.run_seed.to_le_bytes());
        key[8..16].copy_from_slice(&tag.to_le_bytes());
        key[16..24].copy_from_slice(&self.outer.to_le_bytes());
        key[24..32].copy_from_slice(&self.inner.to_le_bytes());
        ChaCha8Rng::from_seed(key)
    }
}

/// Which objective a draw belongs to; `f` and `g` noise are independent.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Which {
    F = 0,
    G = 1,
}

/// Sampled `(grad_x, grad_y)`.
pub type GradSample = (DVector<f64>, DVector<f64>);

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Oracle {
    config: OracleConfig,
}

impl Oracle {
    pub fn new(config: OracleConfig) -> Self {
        Oracle { config }
    }

    pub fn exact() -> Self {
        Oracle::new(OracleConfig::exact())
    }

    pub fn config(&self) -> &OracleConfig {
        &self.config
    }

    pub fn sample_grad_f(
        &self,
        problem: &BilevelProblem,
        x: &DVector<f64>,
        y: &DVector<f64>,
        seed: SeedPath,
    ) -> Result<GradSample> {
        problem.check_feasible(x, y)?;
        Ok(self.grad_f(problem, x, y, seed))
    }

    pub fn sample_grad_g(
        &self,
        problem: &BilevelProblem,
        x: &DVector<f64>,
        y: &DVector<f64>,
        seed: SeedPath,
    ) -> Result<GradSample> {
        problem.check_feasible(x, y)?;
        Ok(self.grad_g(problem, x, y, seed))
    }

    /// Two samples of `grad f` sharing one seed realization.
    pub fn sample_grad_f_paired(
        &self,
        problem: &BilevelProblem,
        first: (&DVector<f64>, &DVector<f64>),
        second: (&DVector<f64>, &DVector<f64>),
        seed: SeedPath,
    ) -> Result<(GradSample, GradSample)> {
        self.require_smooth()?;
        problem.check_feasible(first.0, first.1)?;
        problem.check_feasible(second.0, second.1)?;
        Ok((
            self.grad_f(problem, first.0, first.1, seed),
            self.grad_f(problem, second.0, second.1, seed),
        ))
    }

    pub fn sample_grad_g_paired(
        &self,
        problem: &BilevelProblem,
        first: (&DVector<f64>, &DVector<f64>),
        second: (&DVector<f64>, &DVector<f64>),
        seed: SeedPath,
    ) -> Result<(GradSample, GradSample)> {
        self.require_smooth()?;
        problem.check_feasible(first.0, first.1)?;
        problem.check_feasible(second.0, second.1)?;
        Ok((
            self.grad_g(problem, first.0, first.1, seed),
            self.grad_g(problem, second.0, second.1, seed),
        ))
    }

    pub(crate) fn require_smooth(&self) -> Result<()> {
        if !self.config.mean_squared_smooth || !self.config.noise_model.is_additive() {
            return Err(Error::config(format!(
                "paired queries need a mean-squared-smooth oracle; '{}' is not",
                self.config.noise_model
            )));
        }
        Ok(())
    }

    // Unchecked variants used inside solver loops, where feasibility is an
    // invariant of the iterates.

    pub(crate) fn grad_f(
        &self,
        problem: &BilevelProblem,
        x: &DVector<f64>,
        y: &DVector<f64>,
        seed: SeedPath,
    ) -> GradSample {
        let exact = problem.f.gradient(x, y);
        self.perturb(exact, self.config.noise_f, seed, Which::F)
    }

    pub(crate) fn grad_g(
        &self,
        problem: &BilevelProblem,
        x: &DVector<f64>,
        y: &DVector<f64>,
        seed: SeedPath,
    ) -> GradSample {
        let exact = problem.g.gradient(x, y);
        self.perturb(exact, self.config.noise_g, seed, Which::G)
    }

    fn perturb(&self, exact: GradSample, scale: f64, seed: SeedPath, which: Which) -> GradSample {
        if scale == 0.0 {
            return exact;
        }
        let (mut gx, mut gy) = exact;
        let dx = gx.len();
        let d = (dx + gy.len()) as f64;
        let mut rng = seed.rng(which);
        match self.config.noise_model {
            NoiseModel::AdditiveGaussian => {
                let s = scale / d.sqrt();
                for v in gx.iter_mut().chain(gy.iter_mut()) {
                    let z: f64 = rng.sample(StandardNormal);
                    *v += s * z;
                }
            }
            NoiseModel::AdditiveUniform => {
                // U[-a, a] has variance a^2 / 3.
                let a = scale * (3.0 / d).sqrt();
                for v in gx.iter_mut().chain(gy.iter_mut()) {
                    let u: f64 = rng.random::<f64>();
                    *v += a * (2.0 * u - 1.0);
                }
            }
            NoiseModel::CoordinateDropout => {
                let norm2 = gx.norm_squared() + gy.norm_squared();
                if norm2 > 0.0 {
                    // Keep probability chosen so that E||noise||^2 = scale^2.
                    let keep = norm2 / (norm2 + scale * scale);
                    for v in gx.iter_mut().chain(gy.iter_mut()) {
                        let u: f64 = rng.random::<f64>();
                        *v = if u < keep { *v / keep } else { 0.0 };
                    }
                }
            }
        }
        (gx, gy)
    }
}
