//! Robust losses on squared residual norms, including the loss obtained by
//! marginalizing a trimmed-χ inlier model over a uniform noise-scale prior.
//!
//! Every loss is written as `ρ(s)` with `s = ‖r‖²`. [`LossEval::weight`] is
//! `dρ/ds`, which is the IRLS weight. Classic losses are normalized so that
//! `ρ(s) ≈ s` near zero.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{chi_quantile, gamma, upper_incomplete_gamma};

pub const DEFAULT_MAGSAC_NU: u32 = 3;
pub const DEFAULT_MAGSAC_ALPHA: f64 = 0.99;
pub const DEFAULT_SCALE: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossEval {
    pub value: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Trivial,
    Huber,
    SoftL1,
    Cauchy,
    Tukey,
    #[serde(rename = "gm")]
    GemanMcClure,
    LHalf,
    Magsac,
}

impl LossKind {
    pub const ALL: [LossKind; 8] = [
        LossKind::Trivial,
        LossKind::Huber,
        LossKind::SoftL1,
        LossKind::Cauchy,
        LossKind::Tukey,
        LossKind::GemanMcClure,
        LossKind::LHalf,
        LossKind::Magsac,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Trivial => "trivial",
            LossKind::Huber => "huber",
            LossKind::SoftL1 => "soft_l1",
            LossKind::Cauchy => "cauchy",
            LossKind::Tukey => "tukey",
            LossKind::GemanMcClure => "gm",
            LossKind::LHalf => "l_half",
            LossKind::Magsac => "magsac",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown loss '{s}'")))
    }
}

/// Loss that integrates the trimmed χ inlier density over `σ ∈ [0, σ_max]`.
///
/// `w(r) = (1/σ_max)·M(ν)·2^{(ν−1)/2}·(Γ((ν−1)/2, r²/2σ_max²) − Γ((ν−1)/2, k²/2))`
/// for `r < k σ_max` and zero beyond, with `M(ν) = 1/(2^{ν/2} Γ(ν/2))` and
/// `k` the `α`-quantile of the χ(ν) distribution. The loss is `w(0) − w(r)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MagsacLoss {
    sigma_max: f64,
    nu: u32,
    alpha: f64,
    k: f64,
    amplitude: f64,
    tail: f64,
    w0: f64,
}

impl MagsacLoss {
    pub fn new(sigma_max: f64, nu: u32, alpha: f64) -> Result<Self> {
        if !(sigma_max > 0.0 && sigma_max.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "magsac sigma_max must be positive, got {sigma_max}"
            )));
        }
        if nu < 2 {
            return Err(Error::InvalidArgument(format!(
                "magsac degrees of freedom must be >= 2, got {nu}"
            )));
        }
        if !(alpha > 0.5 && alpha < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "magsac alpha must lie in (0.5, 1), got {alpha}"
            )));
        }
        let nu_f = nu as f64;
        let k = chi_quantile(nu, alpha);
        let normalizer = 1.0 / (2f64.powf(0.5 * nu_f) * gamma(0.5 * nu_f));
        let amplitude = normalizer * 2f64.powf(0.5 * (nu_f - 1.0)) / sigma_max;
        let shape = 0.5 * (nu_f - 1.0);
        let tail = upper_incomplete_gamma(shape, 0.5 * k * k);
        let w0 = amplitude * (gamma(shape) - tail);
        Ok(MagsacLoss {
            sigma_max,
            nu,
            alpha,
            k,
            amplitude,
            tail,
            w0,
        })
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigma_max
    }

    pub fn nu(&self) -> u32 {
        self.nu
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// χ quantile `k`; residuals beyond `k σ_max` get zero weight.
    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn cutoff(&self) -> f64 {
        self.k * self.sigma_max
    }

    fn shape(&self) -> f64 {
        0.5 * (self.nu as f64 - 1.0)
    }

    /// Marginal inlier weight of a residual of norm `r`.
    pub fn weight(&self, r: f64) -> f64 {
        if r >= self.cutoff() {
            return 0.0;
        }
        if r == 0.0 {
            return self.w0;
        }
        let x = r * r / (2.0 * self.sigma_max * self.sigma_max);
        let w = self.amplitude * (upper_incomplete_gamma(self.shape(), x) - self.tail);
        w.max(0.0)
    }

    pub fn max_weight(&self) -> f64 {
        self.w0
    }

    /// `ρ(r) = w(0) − w(r)` together with its IRLS weight `dρ/d(r²)`.
    pub fn loss(&self, r: f64) -> LossEval {
        if r >= self.cutoff() {
            return LossEval {
                value: self.w0,
                weight: 0.0,
            };
        }
        let two_var = 2.0 * self.sigma_max * self.sigma_max;
        // dρ/ds = A x^{a-1} e^{-x} / (2σ²); x is floored so ν = 2 stays finite at r = 0.
        let x = (r * r / two_var).max(1e-16);
        let shape = self.shape();
        let weight = self.amplitude * ((shape - 1.0) * x.ln() - x).exp() / two_var;
        LossEval {
            value: (self.w0 - self.weight(r)).max(0.0),
            weight: weight.max(0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossSpec {
    Trivial,
    Huber { delta: f64 },
    SoftL1 { scale: f64 },
    Cauchy { scale: f64 },
    Tukey { scale: f64 },
    GemanMcClure { scale: f64 },
    LHalf { scale: f64 },
    Magsac(MagsacLoss),
}

impl LossSpec {
    /// Builds a loss from its kind and scale. `nu` and `alpha` only apply to
    /// [`LossKind::Magsac`], where `scale` is `σ_max`.
    pub fn new(kind: LossKind, scale: f64, nu: u32, alpha: f64) -> Result<Self> {
        if kind != LossKind::Trivial && !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "loss scale must be positive, got {scale}"
            )));
        }
        Ok(match kind {
            LossKind::Trivial => LossSpec::Trivial,
            LossKind::Huber => LossSpec::Huber { delta: scale },
            LossKind::SoftL1 => LossSpec::SoftL1 { scale },
            LossKind::Cauchy => LossSpec::Cauchy { scale },
            LossKind::Tukey => LossSpec::Tukey { scale },
            LossKind::GemanMcClure => LossSpec::GemanMcClure { scale },
            LossKind::LHalf => LossSpec::LHalf { scale },
            LossKind::Magsac => LossSpec::Magsac(MagsacLoss::new(scale, nu, alpha)?),
        })
    }

    pub fn with_scale(kind: LossKind, scale: f64) -> Result<Self> {
        Self::new(kind, scale, DEFAULT_MAGSAC_NU, DEFAULT_MAGSAC_ALPHA)
    }

    pub fn kind(&self) -> LossKind {
        match self {
            LossSpec::Trivial => LossKind::Trivial,
            LossSpec::Huber { .. } => LossKind::Huber,
            LossSpec::SoftL1 { .. } => LossKind::SoftL1,
            LossSpec::Cauchy { .. } => LossKind::Cauchy,
            LossSpec::Tukey { .. } => LossKind::Tukey,
            LossSpec::GemanMcClure { .. } => LossKind::GemanMcClure,
            LossSpec::LHalf { .. } => LossKind::LHalf,
            LossSpec::Magsac(_) => LossKind::Magsac,
        }
    }

    pub fn scale(&self) -> f64 {
        match *self {
            LossSpec::Trivial => 1.0,
            LossSpec::Huber { delta } => delta,
            LossSpec::SoftL1 { scale }
            | LossSpec::Cauchy { scale }
            | LossSpec::Tukey { scale }
            | LossSpec::GemanMcClure { scale }
            | LossSpec::LHalf { scale } => scale,
            LossSpec::Magsac(m) => m.sigma_max(),
        }
    }

    /// Evaluates the loss on a squared residual norm.
    pub fn evaluate(&self, s: f64) -> Result<LossEval> {
        if s < 0.0 || s.is_nan() {
            return Err(Error::InvalidArgument(format!(
                "squared residual must be non-negative, got {s}"
            )));
        }
        Ok(self.eval(s))
    }

    pub(crate) fn eval(&self, s: f64) -> LossEval {
        match *self {
            LossSpec::Trivial => LossEval {
                value: s,
                weight: 1.0,
            },
            LossSpec::Huber { delta } => {
                let b = delta * delta;
                if s <= b {
                    LossEval {
                        value: s,
                        weight: 1.0,
                    }
                } else {
                    let r = s.sqrt();
                    LossEval {
                        value: 2.0 * delta * r - b,
                        weight: delta / r,
                    }
                }
            }
            LossSpec::SoftL1 { scale } => power_family(s, scale * scale, 0.5),
            LossSpec::LHalf { scale } => power_family(s, scale * scale, 0.25),
            LossSpec::Cauchy { scale } => {
                let b = scale * scale;
                LossEval {
                    value: b * (s / b).ln_1p(),
                    weight: 1.0 / (1.0 + s / b),
                }
            }
            LossSpec::Tukey { scale } => {
                let b = scale * scale;
                if s <= b {
                    let u = 1.0 - s / b;
                    LossEval {
                        value: b / 3.0 * (1.0 - u * u * u),
                        weight: u * u,
                    }
                } else {
                    LossEval {
                        value: b / 3.0,
                        weight: 0.0,
                    }
                }
            }
            LossSpec::GemanMcClure { scale } => {
                let b = scale * scale;
                let d = b + s;
                LossEval {
                    value: b * s / d,
                    weight: b * b / (d * d),
                }
            }
            LossSpec::Magsac(m) => m.loss(s.sqrt()),
        }
    }
}

/// `ρ(s) = (b/p)·((1 + s/b)^p − 1)`, asymptotically `‖r‖^{2p}`.
fn power_family(s: f64, b: f64, p: f64) -> LossEval {
    let base = 1.0 + s / b;
    LossEval {
        value: b / p * (base.powf(p) - 1.0),
        weight: base.powf(p - 1.0),
    }
}

pub fn classic_loss(spec: &LossSpec, s: f64) -> Result<LossEval> {
    spec.evaluate(s)
}

pub fn magsac_weight(spec: &MagsacLoss, r: f64) -> f64 {
    spec.weight(r)
}

pub fn magsac_loss(spec: &MagsacLoss, r: f64) -> LossEval {
    spec.loss(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn all_specs() -> Vec<LossSpec> {
        LossKind::ALL
            .into_iter()
            .map(|k| LossSpec::with_scale(k, 0.3).unwrap())
            .collect()
    }

    #[test]
    fn trivial_and_huber_examples() {
        let e = LossSpec::Trivial.evaluate(0.09).unwrap();
        assert_eq!((e.value, e.weight), (0.09, 1.0));
        let huber = LossSpec::Huber { delta: 1.0 };
        assert_eq!(huber.evaluate(0.25).unwrap().value, 0.25);
        let e = huber.evaluate(4.0).unwrap();
        assert!((e.value - 3.0).abs() < 1e-15);
        assert!((e.weight - 0.5).abs() < 1e-15);
    }

    #[test]
    fn cauchy_example() {
        let e = LossSpec::Cauchy { scale: 1.0 }.evaluate(1.0).unwrap();
        assert!((e.value - 2f64.ln()).abs() < 1e-15);
        assert!((e.weight - 0.5).abs() < 1e-15);
    }

    #[test]
    fn negative_squared_residual_is_rejected() {
        for spec in all_specs() {
            assert!(spec.evaluate(-1e-3).is_err());
            assert!(spec.evaluate(f64::NAN).is_err());
        }
    }

    #[test]
    fn classic_losses_vanish_with_unit_slope_at_zero() {
        for spec in all_specs() {
            if spec.kind() == LossKind::Magsac {
                continue;
            }
            let e = spec.evaluate(0.0).unwrap();
            assert_eq!(e.value, 0.0, "{spec:?}");
            assert!((e.weight - 1.0).abs() < 1e-15, "{spec:?}");
        }
    }

    #[test]
    fn weights_are_derivatives_of_values() {
        for spec in all_specs() {
            for s in [1e-3, 0.02, 0.05, 0.08, 0.2, 0.5, 2.0] {
                let h = 1e-7 * s;
                let fd = (spec.eval(s + h).value - spec.eval(s - h).value) / (2.0 * h);
                let w = spec.eval(s).weight;
                assert!(
                    (fd - w).abs() <= 1e-6 * w.abs().max(1.0),
                    "{spec:?} s={s}: fd {fd} vs {w}"
                );
            }
        }
    }

    #[test]
    fn classic_losses_are_non_decreasing() {
        for spec in all_specs() {
            let mut prev = 0.0;
            for i in 0..2000 {
                let s = i as f64 * 1e-3;
                let e = spec.eval(s);
                assert!(e.value >= prev - 1e-15, "{spec:?} at {s}");
                assert!(e.weight >= 0.0);
                prev = e.value;
            }
        }
    }

    #[test]
    fn magsac_three_dof_closed_form() {
        let m = MagsacLoss::new(1.0, 3, 0.99).unwrap();
        let c = 2.0 / (2.0 * PI).sqrt();
        let k = m.k();
        for r in [0.0, 0.3, 1.0, 2.0, 3.0] {
            let expected = c * ((-r * r / 2.0f64).exp() - (-k * k / 2.0f64).exp());
            assert!((m.weight(r) - expected).abs() < 1e-12, "r={r}");
        }
        assert!((m.weight(0.0) - 0.7951).abs() < 5e-5);
        assert!((m.loss(1.0).value - c * (1.0 - (-0.5f64).exp())).abs() < 1e-12);
        assert!((m.loss(1.0).value - 0.31394).abs() < 1e-5);
    }

    #[test]
    fn magsac_saturates_beyond_cutoff() {
        let m = MagsacLoss::new(0.02, 3, 0.99).unwrap();
        assert_eq!(m.weight(m.cutoff()), 0.0);
        assert_eq!(m.loss(0.0).value, 0.0);
        for r in [m.cutoff(), 1.5 * m.cutoff(), 10.0] {
            let e = m.loss(r);
            assert_eq!(e.value, m.max_weight());
            assert_eq!(e.weight, 0.0);
        }
        let just_below = m.cutoff() * (1.0 - 1e-15);
        assert!(m.weight(just_below) < 1e-12);
    }

    #[test]
    fn magsac_weight_is_finite_at_zero_for_all_dofs() {
        for nu in 2..6 {
            let m = MagsacLoss::new(0.1, nu, 0.95).unwrap();
            let e = m.loss(0.0);
            assert!(e.weight.is_finite() && e.weight >= 0.0, "nu={nu}");
            assert_eq!(e.value, 0.0);
        }
    }

    #[test]
    fn magsac_parameter_validation() {
        assert!(MagsacLoss::new(0.0, 3, 0.99).is_err());
        assert!(MagsacLoss::new(0.1, 1, 0.99).is_err());
        assert!(MagsacLoss::new(0.1, 3, 0.4).is_err());
        assert!(MagsacLoss::new(0.1, 3, 1.0).is_err());
        assert!(LossSpec::new(LossKind::Cauchy, -1.0, 3, 0.99).is_err());
    }

    #[test]
    fn kind_names_round_trip() {
        for kind in LossKind::ALL {
            assert_eq!(kind.name().parse::<LossKind>().unwrap(), kind);
        }
        assert!("l2".parse::<LossKind>().is_err());
    }
}
