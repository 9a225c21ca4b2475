use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Weight `a` used by generated instances unless one is given. With rates in
/// Mbit/s it puts equilibrium prices around 0.03 to 0.3 per unit of supply.
pub const DEFAULT_WEIGHT: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UtilityFamily {
    /// `a * ln(1 + x)`
    ScaledLog,
    /// `a * x^(1 - alpha) / (1 - alpha)` with `alpha` in (0, 1)
    AlphaFair,
}

/// A concave, strictly increasing utility of effective resource whose
/// relative risk aversion `-x u''(x) / u'(x)` stays below 1.
///
/// Construct through [`UtilityFunction::new`] (or the family shortcuts) so
/// that the parameters are validated. Deserialization re-validates too.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawUtility", into = "RawUtility")]
pub struct UtilityFunction {
    family: UtilityFamily,
    a: f64,
    alpha: f64,
}

#[derive(Serialize, Deserialize)]
struct RawUtility {
    family: UtilityFamily,
    a: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
}

impl TryFrom<RawUtility> for UtilityFunction {
    type Error = Error;

    fn try_from(raw: RawUtility) -> Result<Self> {
        UtilityFunction::new(raw.family, raw.a, raw.alpha)
    }
}

impl From<UtilityFunction> for RawUtility {
    fn from(u: UtilityFunction) -> Self {
        RawUtility {
            family: u.family,
            a: u.a,
            alpha: match u.family {
                UtilityFamily::ScaledLog => None,
                UtilityFamily::AlphaFair => Some(u.alpha),
            },
        }
    }
}

impl UtilityFunction {
    pub fn new(family: UtilityFamily, a: f64, alpha: Option<f64>) -> Result<Self> {
        if !(a.is_finite() && a > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "willingness-to-pay weight must be positive, got {a}"
            )));
        }
        match family {
            // x u'(x) = a x / (1 + x) is strictly increasing, so RRA = x / (1 + x) < 1.
            UtilityFamily::ScaledLog => Ok(Self {
                family,
                a,
                alpha: 0.0,
            }),
            UtilityFamily::AlphaFair => {
                let alpha = alpha.ok_or_else(|| {
                    Error::InvalidParameter("alpha-fair utility requires alpha".into())
                })?;
                // RRA is constant and equal to alpha.
                if !(alpha > 0.0 && alpha < 1.0) {
                    return Err(Error::InvalidParameter(format!(
                        "alpha must lie in (0, 1) so relative risk aversion stays below 1, got {alpha}"
                    )));
                }
                Ok(Self { family, a, alpha })
            }
        }
    }

    pub fn scaled_log(a: f64) -> Result<Self> {
        Self::new(UtilityFamily::ScaledLog, a, None)
    }

    pub fn alpha_fair(a: f64, alpha: f64) -> Result<Self> {
        Self::new(UtilityFamily::AlphaFair, a, Some(alpha))
    }

    pub fn family(&self) -> UtilityFamily {
        self.family
    }

    pub fn weight(&self) -> f64 {
        self.a
    }

    /// `None` for the scaled-log family.
    pub fn alpha(&self) -> Option<f64> {
        match self.family {
            UtilityFamily::ScaledLog => None,
            UtilityFamily::AlphaFair => Some(self.alpha),
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        match self.family {
            UtilityFamily::ScaledLog => self.a * x.ln_1p(),
            UtilityFamily::AlphaFair => self.a * x.powf(1.0 - self.alpha) / (1.0 - self.alpha),
        }
    }

    /// `u'(x)`. For the alpha-fair family `u'(0)` is `f64::INFINITY`; callers
    /// must treat it as an unbounded marginal rather than an error.
    pub fn marginal(&self, x: f64) -> f64 {
        match self.family {
            UtilityFamily::ScaledLog => self.a / (1.0 + x),
            UtilityFamily::AlphaFair => {
                if x <= 0.0 {
                    f64::INFINITY
                } else {
                    self.a * x.powf(-self.alpha)
                }
            }
        }
    }

    pub fn second_derivative(&self, x: f64) -> f64 {
        match self.family {
            UtilityFamily::ScaledLog => -self.a / ((1.0 + x) * (1.0 + x)),
            UtilityFamily::AlphaFair => -self.alpha * self.a * x.powf(-self.alpha - 1.0),
        }
    }

    /// The unique `x >= 0` with `u'(x) = mu`, or 0 when `u'(0) < mu`.
    pub fn inverse_marginal(&self, mu: f64) -> f64 {
        debug_assert!(mu > 0.0);
        match self.family {
            UtilityFamily::ScaledLog => (self.a / mu - 1.0).max(0.0),
            UtilityFamily::AlphaFair => (self.a / mu).powf(1.0 / self.alpha),
        }
    }

    /// Relative risk aversion `-x u''(x) / u'(x)`.
    pub fn relative_risk_aversion(&self, x: f64) -> f64 {
        match self.family {
            UtilityFamily::ScaledLog => x / (1.0 + x),
            UtilityFamily::AlphaFair => self.alpha,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accepts_scaled_log_and_rra_is_below_one() {
        let u = UtilityFunction::scaled_log(1.0).unwrap();
        for x in [0.0, 0.1, 1.0, 10.0, 1e6] {
            assert!((u.relative_risk_aversion(x) - x / (1.0 + x)).abs() < 1e-15);
            assert!(u.relative_risk_aversion(x) < 1.0);
        }
    }

    #[test]
    fn alpha_fair_rra_is_constant() {
        let u = UtilityFunction::alpha_fair(1.0, 0.5).unwrap();
        for x in [0.01, 1.0, 50.0] {
            let rra = -x * u.second_derivative(x) / u.marginal(x);
            assert!((rra - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(matches!(
            UtilityFunction::alpha_fair(1.0, 1.5),
            Err(Error::InvalidParameter(_))
        ));
        assert!(UtilityFunction::alpha_fair(1.0, 1.0).is_err());
        assert!(UtilityFunction::alpha_fair(1.0, 0.0).is_err());
        assert!(UtilityFunction::scaled_log(0.0).is_err());
        assert!(UtilityFunction::scaled_log(-2.0).is_err());
        assert!(UtilityFunction::scaled_log(f64::NAN).is_err());
        assert!(UtilityFunction::new(UtilityFamily::AlphaFair, 1.0, None).is_err());
    }

    #[test]
    fn marginal_examples() {
        let log1 = UtilityFunction::scaled_log(1.0).unwrap();
        let log2 = UtilityFunction::scaled_log(2.0).unwrap();
        let af = UtilityFunction::alpha_fair(1.0, 0.5).unwrap();
        assert_eq!(log1.marginal(1.0), 0.5);
        assert_eq!(log2.marginal(0.0), 2.0);
        assert!((af.marginal(0.25) - 2.0).abs() < 1e-15);
        assert_eq!(af.marginal(0.0), f64::INFINITY);
    }

    #[test]
    fn inverse_marginal_examples() {
        let log1 = UtilityFunction::scaled_log(1.0).unwrap();
        let af = UtilityFunction::alpha_fair(1.0, 0.5).unwrap();
        assert_eq!(log1.inverse_marginal(0.5), 1.0);
        assert_eq!(log1.inverse_marginal(2.0), 0.0);
        assert!((af.inverse_marginal(2.0) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn json_shape() {
        let af = UtilityFunction::alpha_fair(2.0, 0.25).unwrap();
        let s = serde_json::to_string(&af).unwrap();
        assert_eq!(s, r#"{"family":"alpha-fair","a":2.0,"alpha":0.25}"#);
        let log = UtilityFunction::scaled_log(1.0).unwrap();
        assert_eq!(
            serde_json::to_string(&log).unwrap(),
            r#"{"family":"scaled-log","a":1.0}"#
        );
        let bad: std::result::Result<UtilityFunction, _> =
            serde_json::from_str(r#"{"family":"alpha-fair","a":1.0,"alpha":1.5}"#);
        assert!(bad.is_err());
    }
}
