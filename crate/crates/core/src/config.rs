//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::oracle::{NoiseModel, OracleConfig};
use crate::solver::{make_schedule, Algorithm, Exponents, Preset, Schedule, ScheduleConstants};
use crate::testbed::TestbedName;

/// Per-exponent overrides of a preset.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ExponentOverrides {
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub c: Option<f64>,
    pub s: Option<f64>,
    pub n: Option<f64>,
    pub t: Option<f64>,
    pub m: Option<f64>,
}

impl ExponentOverrides {
    fn apply(&self, e: Exponents) -> Exponents {
        Exponents {
            a: self.a.unwrap_or(e.a),
            b: self.b.unwrap_or(e.b),
            c: self.c.unwrap_or(e.c),
            s: self.s.unwrap_or(e.s),
            n: self.n.unwrap_or(e.n),
            t: self.t.unwrap_or(e.t),
            m: self.m.unwrap_or(e.m),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub problem: TestbedName,
    pub algorithm: Algorithm,
    pub preset: Preset,
    pub constants: ScheduleConstants,
    pub exponents: ExponentOverrides,
    pub rho: f64,
    pub k: u64,
    pub seed: u64,
    pub noise_f: f64,
    pub noise_g: f64,
    pub noise_model: NoiseModel,
    pub output: PathBuf,
    pub replicas: u64,
    pub report_every: u64,
    pub track_potential: bool,
    pub track_psi_sigma: bool,
    pub record_wall_time: bool,
    pub x_min: f64,
    pub x_max: f64,
    pub x_steps: usize,
    pub sigmas: Vec<f64>,
    pub fd_step: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            problem: TestbedName::QuadSc,
            algorithm: Algorithm::DoubleLoop,
            preset: Preset::Det,
            constants: ScheduleConstants::default(),
            exponents: ExponentOverrides::default(),
            rho: 0.05,
            k: 1000,
            seed: 0,
            noise_f: 0.0,
            noise_g: 0.0,
            noise_model: NoiseModel::AdditiveGaussian,
            output: PathBuf::from("out"),
            replicas: 1,
            report_every: 1,
            track_potential: true,
            track_psi_sigma: false,
            record_wall_time: false,
            x_min: -2.0,
            x_max: 2.0,
            x_steps: 101,
            sigmas: vec![1e-1, 1e-2],
            fd_step: 1e-4,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, raw: &str, line: usize) -> Result<T> {
    raw.parse().map_err(|_| Error::Parse {
        line,
        message: format!("invalid value '{raw}' for '{key}'"),
    })
}

fn parse_bool(key: &str, raw: &str, line: usize) -> Result<bool> {
    match raw {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Parse {
            line,
            message: format!("invalid value '{raw}' for '{key}', expected true or false"),
        }),
    }
}

fn named<T: FromStr<Err = Error>>(raw: &str, line: usize) -> Result<T> {
    raw.parse().map_err(|e: Error| Error::Parse {
        line,
        message: e.to_string(),
    })
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::Parse {
                line,
                message: format!("expected 'key = value', found '{content}'"),
            })?;
            cfg.set(key.trim(), value.trim(), line)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        RunConfig::parse(&std::fs::read_to_string(path)?)
    }

    fn set(&mut self, key: &str, v: &str, line: usize) -> Result<()> {
        let f = |v: &str| parse_value::<f64>(key, v, line);
        let c = &mut self.constants;
        let e = &mut self.exponents;
        match key {
            "problem" => self.problem = named(v, line)?,
            "algorithm" => self.algorithm = named(v, line)?,
            "preset" => self.preset = named(v, line)?,
            "noise_model" => self.noise_model = named(v, line)?,
            "alpha0" => c.alpha0 = Some(f(v)?),
            "beta0" => c.beta0 = Some(f(v)?),
            "gamma0" => c.gamma0 = Some(f(v)?),
            "sigma0" => c.sigma0 = Some(f(v)?),
            "c_eta" => c.c_eta = Some(f(v)?),
            "k0" => c.k0 = Some(parse_value(key, v, line)?),
            "eps_target" => c.eps_target = Some(f(v)?),
            "horizon" => c.horizon = Some(parse_value(key, v, line)?),
            "a" => e.a = Some(f(v)?),
            "b" => e.b = Some(f(v)?),
            "c" => e.c = Some(f(v)?),
            "s" => e.s = Some(f(v)?),
            "n" => e.n = Some(f(v)?),
            "t" => e.t = Some(f(v)?),
            "m" => e.m = Some(f(v)?),
            "rho" => self.rho = f(v)?,
            "K" => self.k = parse_value(key, v, line)?,
            "seed" => self.seed = parse_value(key, v, line)?,
            "noise_f" => self.noise_f = f(v)?,
            "noise_g" => self.noise_g = f(v)?,
            "output" => self.output = PathBuf::from(v),
            "replicas" => self.replicas = parse_value(key, v, line)?,
            "report_every" => self.report_every = parse_value(key, v, line)?,
            "track_potential" => self.track_potential = parse_bool(key, v, line)?,
            "track_psi_sigma" => self.track_psi_sigma = parse_bool(key, v, line)?,
            "record_wall_time" => self.record_wall_time = parse_bool(key, v, line)?,
            "x_min" => self.x_min = f(v)?,
            "x_max" => self.x_max = f(v)?,
            "x_steps" => self.x_steps = parse_value(key, v, line)?,
            "sigmas" => {
                self.sigmas = v
                    .split(',')
                    .map(|s| parse_value::<f64>(key, s.trim(), line))
                    .collect::<Result<_>>()?
            }
            "fd_step" => self.fd_step = f(v)?,
            other => {
                return Err(Error::Parse {
                    line,
                    message: format!("unknown key '{other}'"),
                })
            }
        }
        Ok(())
    }

    /// Writes every key; `parse(serialize(c)) == c`.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        put("problem", self.problem.to_string());
        put("algorithm", self.algorithm.to_string());
        put("preset", self.preset.to_string());
        let c = &self.constants;
        let opt_f = [
            ("alpha0", c.alpha0),
            ("beta0", c.beta0),
            ("gamma0", c.gamma0),
            ("sigma0", c.sigma0),
            ("c_eta", c.c_eta),
            ("eps_target", c.eps_target),
            ("a", self.exponents.a),
            ("b", self.exponents.b),
            ("c", self.exponents.c),
            ("s", self.exponents.s),
            ("n", self.exponents.n),
            ("t", self.exponents.t),
            ("m", self.exponents.m),
        ];
        for (k, v) in opt_f {
            if let Some(v) = v {
                put(k, format!("{v:?}"));
            }
        }
        if let Some(k0) = c.k0 {
            put("k0", k0.to_string());
        }
        if let Some(h) = c.horizon {
            put("horizon", h.to_string());
        }
        put("rho", format!("{:?}", self.rho));
        put("K", self.k.to_string());
        put("seed", self.seed.to_string());
        put("noise_f", format!("{:?}", self.noise_f));
        put("noise_g", format!("{:?}", self.noise_g));
        put("noise_model", self.noise_model.to_string());
        put("output", self.output.display().to_string());
        put("replicas", self.replicas.to_string());
        put("report_every", self.report_every.to_string());
        put("track_potential", self.track_potential.to_string());
        put("track_psi_sigma", self.track_psi_sigma.to_string());
        put("record_wall_time", self.record_wall_time.to_string());
        put("x_min", format!("{:?}", self.x_min));
        put("x_max", format!("{:?}", self.x_max));
        put("x_steps", self.x_steps.to_string());
        put(
            "sigmas",
            self.sigmas.iter().map(|s| format!("{s:?}")).collect::<Vec<_>>().join(", "),
        );
        put("fd_step", format!("{:?}", self.fd_step));
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicas == 0 {
            return Err(Error::config("replicas must be at least 1"));
        }
        if self.k == 0 {
            return Err(Error::config("K must be at least 1"));
        }
        if self.report_every == 0 {
            return Err(Error::config("report_every must be at least 1"));
        }
        if self.algorithm == Algorithm::SingleLoop && !self.noise_model.is_additive() {
            return Err(Error::config(format!(
                "single_loop needs a mean-squared smooth noise model, not {}",
                self.noise_model
            )));
        }
        if !(self.x_min <= self.x_max) || self.x_steps == 0 {
            return Err(Error::config("landscape range needs x_min <= x_max and x_steps >= 1"));
        }
        if self.sigmas.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::config("landscape sigmas must be positive"));
        }
        if !(self.fd_step > 0.0) {
            return Err(Error::config("fd_step must be positive"));
        }
        self.oracle_config()?;
        self.schedule()?;
        Ok(())
    }

    /// Preset schedule with overrides; `sigma0` defaults to hitting
    /// `eps_target` at `k = K`.
    pub fn schedule(&self) -> Result<Schedule> {
        let constants = ScheduleConstants {
            horizon: self.constants.horizon.or(Some(self.k)),
            ..self.constants
        };
        let base = make_schedule(self.preset, self.rho, &constants)?;
        let exponents = self.exponents.apply(base.exponents);
        if exponents == base.exponents {
            return Ok(base);
        }
        let sigma0 = match (self.constants.sigma0, self.exponents.s) {
            (None, Some(s)) => {
                let eps = constants.eps_target.unwrap_or(crate::solver::DEFAULT_EPS_TARGET);
                eps * ((constants.horizon.unwrap_or(self.k) + base.k0) as f64).powf(s)
            }
            _ => base.sigma0,
        };
        Schedule::new(
            base.alpha0,
            base.beta0,
            base.gamma0,
            sigma0,
            base.c_eta,
            base.k0,
            exponents,
            base.rho,
        )
    }

    pub fn oracle_config(&self) -> Result<OracleConfig> {
        OracleConfig::new(self.noise_f, self.noise_g, self.noise_model)
    }

    /// `seed + r`.
    pub fn replica_seed(&self, r: u64) -> u64 {
        self.seed.wrapping_add(r)
    }
}
