//! Polynomial step-size, penalty and momentum schedules.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Named exponent sets for both algorithms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Preset {
    /// Double loop, exact gradients.
    Det,
    /// Double loop, noise in `f` only.
    StochUpper,
    /// Double loop, noise in both levels.
    StochBoth,
    /// Single loop with momentum, exact gradients.
    MomDet,
    MomUpper,
    MomBoth,
}

impl Preset {
    pub const ALL: [Preset; 6] = [
        Preset::Det,
        Preset::StochUpper,
        Preset::StochBoth,
        Preset::MomDet,
        Preset::MomUpper,
        Preset::MomBoth,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Det => "det",
            Preset::StochUpper => "stoch_upper",
            Preset::StochBoth => "stoch_both",
            Preset::MomDet => "mom_det",
            Preset::MomUpper => "mom_upper",
            Preset::MomBoth => "mom_both",
        }
    }

    /// `(a, b, c, s, n, t, m)`.
    pub fn exponents(self) -> Exponents {
        let (a, b, c, s, n, t, m) = match self {
            Preset::Det => (0.0, 0.0, 0.0, 1.0 / 3.0, 0.0, 0.0, 0.0),
            Preset::StochUpper => (0.0, 0.0, 2.0 / 3.0, 1.0 / 3.0, 0.0, 2.0 / 3.0, 2.0 / 3.0),
            Preset::StochBoth => (0.0, 0.0, 4.0 / 3.0, 1.0 / 3.0, 0.0, 4.0 / 3.0, 4.0 / 3.0),
            Preset::MomDet => (0.0, 0.0, 0.0, 1.0 / 3.0, 0.0, 0.0, 0.0),
            Preset::MomUpper => (0.25, 0.25, 0.25, 0.25, 0.5, 0.0, 0.0),
            Preset::MomBoth => (0.4, 0.4, 0.4, 0.2, 0.8, 0.0, 0.0),
        };
        Exponents { a, b, c, s, n, t, m }
    }

    pub fn is_momentum(self) -> bool {
        matches!(self, Preset::MomDet | Preset::MomUpper | Preset::MomBoth)
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::argument(format!("unknown schedule preset '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Exponents {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub s: f64,
    pub n: f64,
    pub t: f64,
    pub m: f64,
}

/// Multiplicative constants of a schedule. `None` picks the default.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ScheduleConstants {
    pub alpha0: Option<f64>,
    pub beta0: Option<f64>,
    pub gamma0: Option<f64>,
    pub sigma0: Option<f64>,
    pub c_eta: Option<f64>,
    pub k0: Option<u64>,
    /// With `horizon`, fixes `sigma0` so that `sigma_K` equals this target.
    pub eps_target: Option<f64>,
    pub horizon: Option<u64>,
}

pub const DEFAULT_BETA0: f64 = 0.5;
pub const DEFAULT_K0: u64 = 10;
pub const DEFAULT_EPS_TARGET: f64 = 1e-2;
pub const DEFAULT_HORIZON: u64 = 1000;

/// `alpha_k = alpha0 (k + k0)^-a` and likewise for the other sequences;
/// `T_k = ceil((k + k0)^t)`, `M_k = ceil((k + k0)^m)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    pub alpha0: f64,
    pub beta0: f64,
    pub gamma0: f64,
    pub sigma0: f64,
    pub c_eta: f64,
    pub k0: u64,
    pub exponents: Exponents,
    pub rho: f64,
}

/// Schedule values at one iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepSizes {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub sigma: f64,
    pub eta: f64,
    pub t: usize,
    pub m: usize,
}

fn ceil_pow(base: f64, e: f64) -> usize {
    if e == 0.0 {
        return 1;
    }
    // Guard exact powers such as 8^(1/3) against rounding up.
    let v = base.powf(e);
    ((v - 1e-9 * v).ceil() as usize).max(1)
}

impl Schedule {
    pub fn new(
        alpha0: f64,
        beta0: f64,
        gamma0: f64,
        sigma0: f64,
        c_eta: f64,
        k0: u64,
        exponents: Exponents,
        rho: f64,
    ) -> Result<Self> {
        let s = Schedule {
            alpha0,
            beta0,
            gamma0,
            sigma0,
            c_eta,
            k0,
            exponents,
            rho,
        };
        s.validate()?;
        Ok(s)
    }

    fn base(&self, k: u64) -> f64 {
        (k + self.k0) as f64
    }

    pub fn alpha(&self, k: u64) -> f64 {
        self.alpha0 * self.base(k).powf(-self.exponents.a)
    }

    pub fn beta(&self, k: u64) -> f64 {
        self.beta0 * self.base(k).powf(-self.exponents.b)
    }

    pub fn gamma(&self, k: u64) -> f64 {
        self.gamma0 * self.base(k).powf(-self.exponents.c)
    }

    pub fn sigma(&self, k: u64) -> f64 {
        self.sigma0 * self.base(k).powf(-self.exponents.s)
    }

    /// `eta_0 = 1`, then `min(1, c_eta (k + k0)^-n)`.
    pub fn eta(&self, k: u64) -> f64 {
        if k == 0 {
            1.0
        } else {
            (self.c_eta * self.base(k).powf(-self.exponents.n)).min(1.0)
        }
    }

    pub fn inner_steps(&self, k: u64) -> usize {
        ceil_pow(self.base(k), self.exponents.t)
    }

    pub fn batch(&self, k: u64) -> usize {
        ceil_pow(self.base(k), self.exponents.m)
    }

    pub fn at(&self, k: u64) -> StepSizes {
        StepSizes {
            alpha: self.alpha(k),
            beta: self.beta(k),
            gamma: self.gamma(k),
            sigma: self.sigma(k),
            eta: self.eta(k),
            t: self.inner_steps(k),
            m: self.batch(k),
        }
    }

    /// Positivity, `beta_k <= 1`, `gamma_k < rho` and, at `k = 0`,
    /// `T_0 gamma_0 < rho / 4` and `alpha_0 <= rho`.
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("alpha0", self.alpha0),
            ("beta0", self.beta0),
            ("gamma0", self.gamma0),
            ("sigma0", self.sigma0),
            ("c_eta", self.c_eta),
            ("rho", self.rho),
        ];
        for (name, v) in named {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if self.k0 == 0 {
            return Err(Error::config("k0 must be positive"));
        }
        let e = &self.exponents;
        for (name, v) in [("a", e.a), ("b", e.b), ("c", e.c), ("s", e.s), ("n", e.n), ("t", e.t), ("m", e.m)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("exponent {name} must be nonnegative, got {v}")));
            }
        }
        let s0 = self.at(0);
        if s0.beta > 1.0 {
            return Err(Error::config(format!("beta_0 = {} exceeds 1", s0.beta)));
        }
        if s0.t as f64 * s0.gamma >= self.rho / 4.0 {
            return Err(Error::config(format!(
                "T_0 gamma_0 = {:.4e} must be below rho / 4 = {:.4e}",
                s0.t as f64 * s0.gamma,
                self.rho / 4.0
            )));
        }
        if s0.alpha > self.rho {
            return Err(Error::config(format!("alpha_0 = {} exceeds rho = {}", s0.alpha, self.rho)));
        }
        Ok(())
    }

    /// Errors when the step size at `k` violates `gamma_k < rho`.
    pub fn check_step(&self, k: u64) -> Result<()> {
        let g = self.gamma(k);
        if g >= self.rho {
            return Err(Error::config(format!("gamma_{k} = {g} is not below rho = {}", self.rho)));
        }
        Ok(())
    }
}

/// Builds a preset schedule. Defaults: `alpha0 = rho / 10`, `beta0 = 1/2`,
/// `gamma0 = rho / 10`, `c_eta = 1`, `k0 = 10`, and `sigma0` chosen so that
/// `sigma_K` hits the target accuracy (`1e-2` at `K = 1000` unless given).
pub fn make_schedule(preset: Preset, rho: f64, constants: &ScheduleConstants) -> Result<Schedule> {
    let exponents = preset.exponents();
    let k0 = constants.k0.unwrap_or(DEFAULT_K0);
    let sigma0 = match constants.sigma0 {
        Some(s) => s,
        None => {
            let eps = constants.eps_target.unwrap_or(DEFAULT_EPS_TARGET);
            let horizon = constants.horizon.unwrap_or(DEFAULT_HORIZON);
            eps * ((horizon + k0) as f64).powf(exponents.s)
        }
    };
    Schedule::new(
        constants.alpha0.unwrap_or(rho / 10.0),
        constants.beta0.unwrap_or(DEFAULT_BETA0),
        constants.gamma0.unwrap_or(rho / 10.0),
        sigma0,
        constants.c_eta.unwrap_or(1.0),
        k0,
        exponents,
        rho,
    )
}
