//! Density-suppressed motility functions `γ(v)` with their first two
//! derivatives, plus numerical witnesses for the structural assumptions the
//! global-existence theory relies on: positivity and monotone decay, the
//! growth condition `s^k γ(s) → ∞`, and the constant `K₀ = sup |γ'|²/γ`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{self, Execution};

pub const DEFAULT_SINGULAR_CUTOFF: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Motility {
    /// `e^{-s}`.
    Exp,
    /// `c₀ s^{-k}`, singular at zero.
    Power {
        c0: f64,
        k: f64,
        #[serde(default = "default_cutoff")]
        s_min: f64,
    },
    /// `e^{-s²}`.
    Gauss,
    /// `e^{-e^s}`.
    DoubleExp,
    /// `1 / (s^k log(1 + s))`, singular at zero.
    PowerLog {
        k: f64,
        #[serde(default = "default_cutoff")]
        s_min: f64,
    },
}

fn default_cutoff() -> f64 {
    DEFAULT_SINGULAR_CUTOFF
}

/// `(γ, γ', γ'')` at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotilityValue {
    pub gamma: f64,
    pub d1: f64,
    pub d2: f64,
}

/// Result of [`Motility::k0`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum K0 {
    Finite(f64),
    /// `|γ'|²/γ` is unbounded (e.g. near the singularity of a power law).
    Infinite,
}

impl K0 {
    pub fn value(self) -> f64 {
        match self {
            K0::Finite(x) => x,
            K0::Infinite => f64::INFINITY,
        }
    }
}

impl Motility {
    pub fn power(c0: f64, k: f64) -> Self {
        Motility::Power {
            c0,
            k,
            s_min: DEFAULT_SINGULAR_CUTOFF,
        }
    }

    pub fn power_log(k: f64) -> Self {
        Motility::PowerLog {
            k,
            s_min: DEFAULT_SINGULAR_CUTOFF,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Motility::Exp => "exp",
            Motility::Power { .. } => "power",
            Motility::Gauss => "gauss",
            Motility::DoubleExp => "double_exp",
            Motility::PowerLog { .. } => "power_log",
        }
    }

    /// Parameter sanity: positive exponents and coefficients, positive cutoffs.
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, x: f64| {
            Err(Error::Config(format!(
                "motility {}: {what} must be positive and finite, got {x}",
                self.name()
            )))
        };
        match *self {
            Motility::Power { c0, k, s_min } => {
                if !(c0 > 0.0 && c0.is_finite()) {
                    return bad("c0", c0);
                }
                if !(k > 0.0 && k.is_finite()) {
                    return bad("k", k);
                }
                if !(s_min > 0.0 && s_min.is_finite()) {
                    return bad("s_min", s_min);
                }
            }
            Motility::PowerLog { k, s_min } => {
                if !(k > 0.0 && k.is_finite()) {
                    return bad("k", k);
                }
                if !(s_min > 0.0 && s_min.is_finite()) {
                    return bad("s_min", s_min);
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Lower end of the range where `γ > 0, γ' ≤ 0` holds and evaluation is
    /// allowed.
    pub fn lower_cutoff(&self) -> f64 {
        match *self {
            Motility::Exp | Motility::DoubleExp => f64::NEG_INFINITY,
            Motility::Gauss => 0.0,
            Motility::Power { s_min, .. } | Motility::PowerLog { s_min, .. } => s_min,
        }
    }

    /// Whether `γ` blows up at `s = 0`.
    pub fn is_singular(&self) -> bool {
        matches!(self, Motility::Power { .. } | Motility::PowerLog { .. })
    }

    pub fn eval(&self, s: f64) -> Result<MotilityValue> {
        let cutoff = self.lower_cutoff();
        if !(s >= cutoff) || s.is_nan() {
            return Err(Error::Domain {
                kind: self.name(),
                s,
                s_min: cutoff,
            });
        }
        Ok(self.eval_unchecked(s))
    }

    /// `γ(s)` without the domain check.
    pub fn gamma(&self, s: f64) -> f64 {
        match *self {
            Motility::Exp => (-s).exp(),
            Motility::Power { c0, k, .. } => c0 * s.powf(-k),
            Motility::Gauss => (-s * s).exp(),
            Motility::DoubleExp => (-s.exp()).exp(),
            Motility::PowerLog { k, .. } => 1.0 / (s.powf(k) * s.ln_1p()),
        }
    }

    pub(crate) fn eval_unchecked(&self, s: f64) -> MotilityValue {
        match *self {
            Motility::Exp => {
                let e = (-s).exp();
                MotilityValue {
                    gamma: e,
                    d1: -e,
                    d2: e,
                }
            }
            Motility::Power { c0, k, .. } => {
                let g = c0 * s.powf(-k);
                MotilityValue {
                    gamma: g,
                    d1: -k * g / s,
                    d2: k * (k + 1.0) * g / (s * s),
                }
            }
            Motility::Gauss => {
                let e = (-s * s).exp();
                MotilityValue {
                    gamma: e,
                    d1: -2.0 * s * e,
                    d2: (4.0 * s * s - 2.0) * e,
                }
            }
            Motility::DoubleExp => {
                let es = s.exp();
                let g = (-es).exp();
                MotilityValue {
                    gamma: g,
                    d1: -es * g,
                    d2: (es * es - es) * g,
                }
            }
            Motility::PowerLog { k, .. } => {
                // γ = 1/g with g = s^k log(1+s).
                let l = s.ln_1p();
                let sk = s.powf(k);
                let g = sk * l;
                let g1 = k * sk / s * l + sk / (1.0 + s);
                let g2 = k * (k - 1.0) * sk / (s * s) * l + 2.0 * k * sk / (s * (1.0 + s))
                    - sk / ((1.0 + s) * (1.0 + s));
                MotilityValue {
                    gamma: 1.0 / g,
                    d1: -g1 / (g * g),
                    d2: (2.0 * g1 * g1 - g * g2) / (g * g * g),
                }
            }
        }
    }

    /// `|γ'(s)|² / γ(s)`.
    pub fn k0_ratio(&self, s: f64) -> f64 {
        let v = self.eval_unchecked(s);
        v.d1 * v.d1 / v.gamma
    }

    /// `K₀ = sup_{s ≥ 0} |γ'(s)|²/γ(s)`.
    ///
    /// Samples `[0, s_max]` on `n_samples` uniform points, refines the best
    /// sample by golden-section search, and combines it with the analytic
    /// tail (the ratio tends to zero as `s → ∞` for every provided kind).
    /// Singular kinds diverge at zero and report [`K0::Infinite`].
    pub fn k0(&self, s_max: f64, n_samples: usize) -> Result<K0> {
        self.k0_with(Execution::default(), s_max, n_samples)
    }

    pub fn k0_with(&self, exec: Execution, s_max: f64, n_samples: usize) -> Result<K0> {
        if n_samples < 1000 {
            return Err(Error::Config(format!(
                "K0 needs at least 1000 samples, got {n_samples}"
            )));
        }
        if !(s_max > 0.0 && s_max.is_finite()) {
            return Err(Error::Config(format!("K0 range end must be positive, got {s_max}")));
        }
        if self.is_singular() {
            return Ok(K0::Infinite);
        }
        let ds = s_max / (n_samples - 1) as f64;
        let at = |i: usize| i as f64 * ds;
        let (best, _) = par::argmax_range(exec, n_samples, |i| self.k0_ratio(at(i)))
            .ok_or_else(|| Error::InvalidInput("K0 ratio is NaN on the whole sample".into()))?;
        let lo = at(best.saturating_sub(1));
        let hi = at((best + 1).min(n_samples - 1));
        let refined = golden_max(|s| self.k0_ratio(s), lo, hi, 1e-12);
        let sampled = self.k0_ratio(at(best));
        Ok(K0::Finite(refined.max(sampled)))
    }

    /// Numeric witness of the growth condition `lim s^k γ(s) = +∞`:
    /// `s^k γ(s)` must increase strictly along the probes and end at least an
    /// order of magnitude above its first value.
    pub fn check_a2(&self, k_witness: f64, probes: &[f64]) -> Result<bool> {
        if probes.len() < 2 || !probes.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config("A2 probes must be strictly increasing".into()));
        }
        let last = *probes.last().unwrap_or(&0.0);
        if last < 1e6 {
            return Err(Error::Config(format!(
                "A2 probes must reach at least 1e6, last is {last}"
            )));
        }
        let vals: Vec<f64> = probes
            .iter()
            .map(|&s| self.eval(s).map(|v| s.powf(k_witness) * v.gamma))
            .collect::<Result<_>>()?;
        let increasing = vals.windows(2).all(|w| w[1] > w[0]);
        Ok(increasing && vals[vals.len() - 1] >= 10.0 * vals[0])
    }
}

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    let mut best = f(a).max(f(b));
    while (b - a).abs() > tol * (1.0 + a.abs() + b.abs()) {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = f(d);
        }
        best = best.max(fc).max(fd);
    }
    best
}
