//! 1-Lipschitz maps with derivative access, the Lipschitz verifier and the
//! isometry defect.
//!
//! A map is any type implementing [`LipschitzMap`]; that trait is also the
//! plugin convention for user-supplied maps (point in, vector out, optional
//! analytic derivatives). Derivatives that a map does not provide are
//! obtained by central finite differences.

mod atlas;
mod measure;

pub use atlas::{
    test_atlas, AtlasEntry, ConvexDistance, Cylindrical, DistanceMap, Identity, LeafTruth,
    MapSpec, Projection,
};
pub use measure::{CdParams, Gaussian, Lebesgue, MeasureSpec, ScaledMeasure, WeightedMeasure};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, Point};

/// A map u: R^n → R^m that is assumed 1-Lipschitz.
pub trait LipschitzMap: Send + Sync {
    fn dim_in(&self) -> usize;
    fn dim_out(&self) -> usize;
    fn eval(&self, x: &Point) -> DVector<f64>;

    /// Analytic Jacobian (m×n), if available.
    fn jacobian(&self, _x: &Point) -> Option<DMatrix<f64>> {
        None
    }

    /// Analytic second derivatives: one symmetric n×n matrix per output.
    fn hessian(&self, _x: &Point) -> Option<Vec<DMatrix<f64>>> {
        None
    }

    /// Declared singular set: derivatives are not requested where this holds.
    fn excluded(&self, _x: &Point) -> bool {
        false
    }

    fn name(&self) -> String;
}

/// A map given by closures. Convenient for user-supplied maps.
pub struct FnMap {
    name: String,
    dim_in: usize,
    dim_out: usize,
    eval: Box<dyn Fn(&Point) -> DVector<f64> + Send + Sync>,
    jacobian: Option<Box<dyn Fn(&Point) -> DMatrix<f64> + Send + Sync>>,
}

impl FnMap {
    pub fn new<F>(name: &str, dim_in: usize, dim_out: usize, eval: F) -> Self
    where
        F: Fn(&Point) -> DVector<f64> + Send + Sync + 'static,
    {
        Self {
            name: name.to_string(),
            dim_in,
            dim_out,
            eval: Box::new(eval),
            jacobian: None,
        }
    }

    pub fn with_jacobian<J>(mut self, jac: J) -> Self
    where
        J: Fn(&Point) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.jacobian = Some(Box::new(jac));
        self
    }
}

impl LipschitzMap for FnMap {
    fn dim_in(&self) -> usize {
        self.dim_in
    }
    fn dim_out(&self) -> usize {
        self.dim_out
    }
    fn eval(&self, x: &Point) -> DVector<f64> {
        (self.eval)(x)
    }
    fn jacobian(&self, x: &Point) -> Option<DMatrix<f64>> {
        self.jacobian.as_ref().map(|j| j(x))
    }
    fn name(&self) -> String {
        self.name.clone()
    }
}

/// Jacobian of `map` at `x`: analytic when provided, otherwise central
/// differences.
pub fn jacobian_of(map: &dyn LipschitzMap, x: &Point) -> DMatrix<f64> {
    map.jacobian(x)
        .unwrap_or_else(|| linalg::fd_jacobian(|p| map.eval(p), x, map.dim_out()))
}

/// Second derivatives of `map` at `x`: analytic when provided, otherwise
/// differences of the analytic Jacobian, otherwise second differences of
/// values. Always symmetrized.
pub fn hessian_of(map: &dyn LipschitzMap, x: &Point) -> Vec<DMatrix<f64>> {
    if let Some(h) = map.hessian(x) {
        return h.iter().map(linalg::symmetrize).collect();
    }
    if map.jacobian(x).is_some() {
        return linalg::fd_hessian_from_jacobian(
            |p| map.jacobian(p).expect("jacobian available"),
            x,
            map.dim_out(),
        );
    }
    linalg::fd_hessian_from_eval(|p| map.eval(p), x, map.dim_out())
}

/// ‖x−y‖² − ‖u(x)−u(y)‖². Non-negative (to rounding) for 1-Lipschitz maps,
/// zero exactly when u is isometric on the segment [x, y].
pub fn isometry_defect(map: &dyn LipschitzMap, x: &Point, y: &Point) -> f64 {
    let dx = (x - y).norm_squared();
    let du = (map.eval(x) - map.eval(y)).norm_squared();
    dx - du
}

#[derive(Debug, Clone, Serialize)]
pub struct LipschitzReport {
    pub max_operator_norm: f64,
    pub worst_point: Vec<f64>,
    pub pass: bool,
}

/// Largest singular value of Du over the samples; passes iff it does not
/// exceed 1 + `tol_lip`.
pub fn verify_lipschitz(
    map: &dyn LipschitzMap,
    samples: &[Point],
    tol_lip: f64,
) -> Result<LipschitzReport> {
    if samples.is_empty() {
        return Err(Error::Config("verify_lipschitz needs samples".into()));
    }
    let mut worst = f64::NEG_INFINITY;
    let mut worst_point = samples[0].clone();
    for x in samples {
        let fx = map.eval(x);
        if !linalg::is_finite(&fx) {
            return Err(Error::NonFinite {
                what: "eval",
                point: x.iter().cloned().collect(),
            });
        }
        let jac = jacobian_of(map, x);
        if jac.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "jacobian",
                point: x.iter().cloned().collect(),
            });
        }
        let s = linalg::operator_norm(&jac);
        if s > worst {
            worst = s;
            worst_point = x.clone();
        }
    }
    Ok(LipschitzReport {
        max_operator_norm: worst,
        worst_point: worst_point.iter().cloned().collect(),
        pass: worst <= 1.0 + tol_lip,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::seeded_rng;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn p(v: &[f64]) -> Point {
        DVector::from_column_slice(v)
    }

    #[test]
    fn identity_is_exactly_one_lipschitz() {
        let map = Identity::new(2);
        let mut rng = seeded_rng(1, 0);
        let samples: Vec<Point> = (0..100)
            .map(|_| p(&[rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)]))
            .collect();
        let rep = verify_lipschitz(&map, &samples, 1e-6).unwrap();
        assert_abs_diff_eq!(rep.max_operator_norm, 1.0, epsilon = 1e-12);
        assert!(rep.pass);
    }

    #[test]
    fn doubling_map_fails() {
        let map = FnMap::new("double", 1, 1, |x: &Point| x * 2.0);
        let rep = verify_lipschitz(&map, &[p(&[0.3])], 1e-6).unwrap();
        assert_abs_diff_eq!(rep.max_operator_norm, 2.0, epsilon = 1e-6);
        assert!(!rep.pass);
    }

    #[test]
    fn cylindrical_operator_norm_is_one_away_from_axis() {
        let map = Cylindrical;
        let mut rng = seeded_rng(2, 0);
        let mut samples = Vec::new();
        while samples.len() < 1000 {
            let x = p(&[
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
            ]);
            if x[0].hypot(x[1]) > 0.1 {
                samples.push(x);
            }
        }
        let rep = verify_lipschitz(&map, &samples, 1e-6).unwrap();
        assert!((rep.max_operator_norm - 1.0).abs() <= 1e-6);
        assert!(rep.pass);
    }

    #[test]
    fn non_finite_eval_is_reported() {
        let map = FnMap::new("bad", 1, 1, |_x: &Point| DVector::from_element(1, f64::NAN));
        let err = verify_lipschitz(&map, &[p(&[0.0])], 1e-6).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
    }

    #[test]
    fn defect_examples() {
        let id = Identity::new(2);
        assert_abs_diff_eq!(isometry_defect(&id, &p(&[0.0, 0.0]), &p(&[3.0, 4.0])), 0.0);
        let proj = Projection::new(2, 1);
        assert_abs_diff_eq!(isometry_defect(&proj, &p(&[0.0, 0.0]), &p(&[0.0, 5.0])), 25.0);
        let cyl = Cylindrical;
        assert_abs_diff_eq!(
            isometry_defect(&cyl, &p(&[1.0, 0.0, 0.0]), &p(&[0.0, 1.0, 0.0])),
            2.0,
            epsilon = 1e-14
        );
    }

    #[test]
    fn fn_map_falls_back_to_finite_differences() {
        let map = FnMap::new("sin", 1, 1, |x: &Point| DVector::from_element(1, x[0].sin()));
        let j = jacobian_of(&map, &p(&[0.4]));
        assert_abs_diff_eq!(j[(0, 0)], 0.4f64.cos(), epsilon = 1e-9);
        let h = hessian_of(&map, &p(&[0.4]));
        assert_abs_diff_eq!(h[0][(0, 0)], -(0.4f64.sin()), epsilon = 1e-6);
    }
}
