use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg::Point;

/// A measure with density exp(−ρ) against Lebesgue measure on R^n.
pub trait WeightedMeasure: Send + Sync {
    fn dim(&self) -> usize;
    fn rho(&self, x: &Point) -> f64;
    fn grad_rho(&self, x: &Point) -> DVector<f64>;
    fn hess_rho(&self, x: &Point) -> DMatrix<f64>;
    fn name(&self) -> String;

    fn density(&self, x: &Point) -> f64 {
        (-self.rho(x)).exp()
    }
}

/// ρ = 0.
#[derive(Debug, Clone)]
pub struct Lebesgue {
    pub n: usize,
}

impl WeightedMeasure for Lebesgue {
    fn dim(&self) -> usize {
        self.n
    }
    fn rho(&self, _x: &Point) -> f64 {
        0.0
    }
    fn grad_rho(&self, _x: &Point) -> DVector<f64> {
        DVector::zeros(self.n)
    }
    fn hess_rho(&self, _x: &Point) -> DMatrix<f64> {
        DMatrix::zeros(self.n, self.n)
    }
    fn name(&self) -> String {
        "lebesgue".into()
    }
}

/// ρ(x) = precision·‖x − center‖²/2. Negative precision gives a concave
/// weight.
#[derive(Debug, Clone)]
pub struct Gaussian {
    pub center: DVector<f64>,
    pub precision: f64,
}

impl Gaussian {
    pub fn standard(n: usize) -> Self {
        Self {
            center: DVector::zeros(n),
            precision: 1.0,
        }
    }
}

impl WeightedMeasure for Gaussian {
    fn dim(&self) -> usize {
        self.center.len()
    }
    fn rho(&self, x: &Point) -> f64 {
        0.5 * self.precision * (x - &self.center).norm_squared()
    }
    fn grad_rho(&self, x: &Point) -> DVector<f64> {
        (x - &self.center) * self.precision
    }
    fn hess_rho(&self, _x: &Point) -> DMatrix<f64> {
        DMatrix::identity(self.dim(), self.dim()) * self.precision
    }
    fn name(&self) -> String {
        format!("gaussian(precision={})", self.precision)
    }
}

/// c·μ for a constant c > 0: ρ becomes ρ − log c.
#[derive(Clone)]
pub struct ScaledMeasure {
    pub inner: Arc<dyn WeightedMeasure>,
    pub factor: f64,
}

impl WeightedMeasure for ScaledMeasure {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn rho(&self, x: &Point) -> f64 {
        self.inner.rho(x) - self.factor.ln()
    }
    fn grad_rho(&self, x: &Point) -> DVector<f64> {
        self.inner.grad_rho(x)
    }
    fn hess_rho(&self, x: &Point) -> DMatrix<f64> {
        self.inner.hess_rho(x)
    }
    fn name(&self) -> String {
        format!("{}*{}", self.factor, self.inner.name())
    }
}

/// Measure named in a config file.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "rho", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeasureSpec {
    Lebesgue,
    Gaussian {
        #[serde(default)]
        center: Option<Vec<f64>>,
        #[serde(default)]
        precision: Option<f64>,
    },
}

impl MeasureSpec {
    pub fn build(&self, n: usize) -> Result<Arc<dyn WeightedMeasure>> {
        match self {
            MeasureSpec::Lebesgue => Ok(Arc::new(Lebesgue { n })),
            MeasureSpec::Gaussian { center, precision } => {
                let center = match center {
                    Some(c) if c.len() != n => {
                        return Err(Error::Config(format!(
                            "gaussian center has length {}, expected {n}",
                            c.len()
                        )))
                    }
                    Some(c) => DVector::from_column_slice(c),
                    None => DVector::zeros(n),
                };
                Ok(Arc::new(Gaussian {
                    center,
                    precision: precision.unwrap_or(1.0),
                }))
            }
        }
    }
}

/// Curvature-dimension parameters (κ, N) for ambient dimension n.
/// `n_eff` may be +∞.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdParams {
    pub kappa: f64,
    pub n_dim: usize,
    #[serde(serialize_with = "ser_ext", deserialize_with = "de_ext")]
    pub n_eff: f64,
}

impl CdParams {
    pub fn new(kappa: f64, n_dim: usize, n_eff: f64) -> Self {
        Self {
            kappa,
            n_dim,
            n_eff,
        }
    }

    /// N must lie in (−∞, 1) ∪ [n, ∞].
    pub fn validate(&self) -> Result<()> {
        let n = self.n_dim as f64;
        if self.n_eff.is_nan() || (self.n_eff >= 1.0 && self.n_eff < n) {
            return Err(Error::InvalidN {
                n_eff: self.n_eff,
                n_dim: self.n_dim,
            });
        }
        Ok(())
    }

    pub fn is_infinite(&self) -> bool {
        self.n_eff.is_infinite() && self.n_eff > 0.0
    }
}

fn ser_ext<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() {
        s.serialize_str(if *v > 0.0 { "inf" } else { "-inf" })
    } else {
        s.serialize_f64(*v)
    }
}

fn de_ext<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Ext {
        Num(f64),
        Str(String),
    }
    match Ext::deserialize(d)? {
        Ext::Num(v) => Ok(v),
        Ext::Str(s) => match s.as_str() {
            "inf" | "infinity" | "+inf" => Ok(f64::INFINITY),
            "-inf" => Ok(f64::NEG_INFINITY),
            other => other
                .parse()
                .map_err(|_| serde::de::Error::custom(format!("bad N value {other:?}"))),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn n_validity() {
        assert!(CdParams::new(0.0, 3, 3.0).validate().is_ok());
        assert!(CdParams::new(0.0, 3, f64::INFINITY).validate().is_ok());
        assert!(CdParams::new(0.0, 3, 0.5).validate().is_ok());
        assert!(CdParams::new(0.0, 3, -2.0).validate().is_ok());
        assert!(matches!(
            CdParams::new(0.0, 3, 2.5).validate(),
            Err(Error::InvalidN { .. })
        ));
        assert!(CdParams::new(0.0, 3, 1.0).validate().is_err());
    }

    #[test]
    fn params_json_accepts_inf() {
        let p: CdParams = serde_json::from_str(r#"{"kappa":1,"n_dim":3,"n_eff":"inf"}"#).unwrap();
        assert!(p.is_infinite());
        let s = serde_json::to_string(&p).unwrap();
        assert!(s.contains("\"inf\""));
    }

    #[test]
    fn hessian_of_gaussian_is_symmetric_and_density_positive() {
        let g = Gaussian::standard(3);
        let x = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let h = g.hess_rho(&x);
        assert_eq!(h, h.transpose());
        assert!(g.density(&x) > 0.0 && g.density(&x).is_finite());
    }

    #[test]
    fn unknown_measure_keys_rejected() {
        let r: std::result::Result<MeasureSpec, _> =
            serde_json::from_str(r#"{"rho":"gaussian","precison":2}"#);
        assert!(r.is_err());
    }
}
