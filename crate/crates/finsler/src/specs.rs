//! On-disk input formats: metric files describing a single Minkowski norm
//! and chart files describing a norm field over a disc. Both are strict
//! JSON; unknown fields are rejected so typos fail loudly.

use crate::error::{FinslerError, Result};
use crate::expr::Expr;
use crate::geom::{vec2, Mat2, Vec2};
use crate::norms::MinkowskiNorm;
use serde::{Deserialize, Serialize};

/// Number of support samples a tabulated metric file must carry.
pub const SUPPORT_SAMPLES: usize = 256;

/// A single norm, as stored in a metric file.
///
/// ```json
/// {"kind": "euclidean"}
/// {"kind": "randers", "A": [[1.0, 0.0], [0.0, 1.0]], "b": [0.3, 0.0]}
/// {"kind": "tabulated", "support": [1.0, ...]}
/// ```
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum MetricSpec {
    Euclidean,
    Randers {
        #[serde(rename = "A")]
        a: [[f64; 2]; 2],
        b: [f64; 2],
    },
    Tabulated {
        support: Vec<f64>,
    },
}

impl MetricSpec {
    pub fn from_json(text: &str) -> Result<MetricSpec> {
        let spec: MetricSpec = serde_json::from_str(text)
            .map_err(|e| FinslerError::InvalidArgument(format!("bad metric file: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if let MetricSpec::Tabulated { support } = self {
            if support.len() != SUPPORT_SAMPLES {
                return Err(FinslerError::InvalidArgument(format!(
                    "tabulated metric must carry exactly {SUPPORT_SAMPLES} support samples, got {}",
                    support.len()
                )));
            }
        }
        Ok(())
    }

    pub fn build(&self) -> Result<MinkowskiNorm> {
        match self {
            MetricSpec::Euclidean => Ok(MinkowskiNorm::euclidean()),
            MetricSpec::Randers { a, b } => MinkowskiNorm::randers(
                Mat2 {
                    m11: a[0][0],
                    m12: a[0][1],
                    m21: a[1][0],
                    m22: a[1][1],
                },
                vec2(b[0], b[1]),
            ),
            MetricSpec::Tabulated { support } => {
                self.validate()?;
                MinkowskiNorm::tabulated(support.clone())
            }
        }
    }

    /// Canonical spec for a norm we constructed ourselves; used when writing
    /// artifacts.
    pub fn from_norm(norm: &MinkowskiNorm) -> MetricSpec {
        use crate::norms::NormKind;
        match norm.kind() {
            NormKind::Euclidean => MetricSpec::Euclidean,
            NormKind::Randers(r) => MetricSpec::Randers {
                a: [[r.a.m11, r.a.m12], [r.a.m21, r.a.m22]],
                b: [r.b.x, r.b.y],
            },
            _ => MetricSpec::Tabulated {
                support: norm.support_samples(SUPPORT_SAMPLES),
            },
        }
    }
}

/// A chart file: a base norm modulated by a conformal factor exp(lambda(x)),
/// valid on a disc around the origin. The optional pipeline knobs sit in the
/// middle of the precedence chain: CLI flags > chart file > defaults.
///
/// ```json
/// {"base": {"kind": "euclidean"}, "lambda": "0.1*x", "domain_radius": 2.0}
/// ```
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChartSpec {
    pub base: MetricSpec,
    /// Expression in x and y; empty or absent means identically zero.
    #[serde(default)]
    pub lambda: String,
    #[serde(default = "default_domain_radius")]
    pub domain_radius: f64,
    /// Request the symmetrized construction; requires a symmetric base norm.
    #[serde(default)]
    pub symmetric: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l: Option<u32>,
}

fn default_domain_radius() -> f64 {
    1.0
}

impl ChartSpec {
    pub fn from_json(text: &str) -> Result<ChartSpec> {
        let spec: ChartSpec = serde_json::from_str(text)
            .map_err(|e| FinslerError::InvalidArgument(format!("bad chart file: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if !self.lambda.is_empty() {
            Expr::parse(&self.lambda)?;
        }
        if !(self.domain_radius > 0.0) {
            return Err(FinslerError::InvalidArgument(
                "domain_radius must be positive".into(),
            ));
        }
        if self.symmetric && !self.base.build()?.is_symmetric_kind() {
            return Err(FinslerError::InvalidArgument(
                "symmetric construction requires a symmetric base norm".into(),
            ));
        }
        for (name, v) in [("eps", self.eps), ("r", self.r)] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(FinslerError::InvalidArgument(format!(
                        "{name} must be positive and finite"
                    )));
                }
            }
        }
        if self.l == Some(0) {
            return Err(FinslerError::InvalidArgument(
                "l must be a positive integer".into(),
            ));
        }
        Ok(())
    }

    pub fn lambda_expr(&self) -> Result<Option<Expr>> {
        if self.lambda.is_empty() {
            Ok(None)
        } else {
            Ok(Some(Expr::parse(&self.lambda)?))
        }
    }

    pub fn lambda_at(&self, p: Vec2) -> Result<f64> {
        Ok(match self.lambda_expr()? {
            Some(e) => e.eval(p),
            None => 0.0,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_the_three_kinds() {
        let e = MetricSpec::from_json(r#"{"kind":"euclidean"}"#).unwrap();
        assert_eq!(e, MetricSpec::Euclidean);
        let r = MetricSpec::from_json(
            r#"{"kind":"randers","A":[[1.0,0.0],[0.0,1.0]],"b":[0.3,0.0]}"#,
        )
        .unwrap();
        let norm = r.build().unwrap();
        assert!((norm.evaluate(vec2(1.0, 0.0)) - 1.3).abs() < 1e-15);
        let support = vec![1.0; SUPPORT_SAMPLES];
        let t = MetricSpec::Tabulated { support };
        let text = serde_json::to_string(&t).unwrap();
        assert!(MetricSpec::from_json(&text).is_ok());
    }

    #[test]
    fn rejects_malformed_and_wrong_sizes() {
        assert!(MetricSpec::from_json(r#"{"kind":"euclidean""#).is_err());
        assert!(MetricSpec::from_json(r#"{"kind":"cubist"}"#).is_err());
        assert!(MetricSpec::from_json(r#"{"kind":"randers","b":[0.1,0.0]}"#).is_err());
        assert!(MetricSpec::from_json(r#"{"kind":"tabulated","support":[1.0,2.0]}"#).is_err());
    }

    #[test]
    fn chart_round_trip() {
        let c = ChartSpec::from_json(
            r#"{"base":{"kind":"euclidean"},"lambda":"0.1*x","domain_radius":2.0}"#,
        )
        .unwrap();
        assert!((c.lambda_at(vec2(3.0, 0.0)).unwrap() - 0.3).abs() < 1e-15);
        assert!(ChartSpec::from_json(r#"{"base":{"kind":"euclidean"},"lambda":"0.1*z"}"#).is_err());
        let no_lambda = ChartSpec::from_json(r#"{"base":{"kind":"euclidean"}}"#).unwrap();
        assert_eq!(no_lambda.lambda_at(vec2(5.0, 5.0)).unwrap(), 0.0);
        assert_eq!(no_lambda.domain_radius, 1.0);
    }
}
