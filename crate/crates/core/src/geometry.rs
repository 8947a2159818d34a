//! Pairwise leaf inequalities and a convex-hull distance helper.

use nalgebra::DVector;

use crate::leafdetect::LeafModel;
use crate::linalg::{self, Point};
use crate::lipmap::{jacobian_of, LipschitzMap};

/// True when ‖x − z‖ ≤ ‖y − z‖ for every z in `vertices`.
pub fn closer_to_all(x: &Point, y: &Point, vertices: &[Point]) -> bool {
    vertices.iter().all(|z| (x - z).norm() <= (y - z).norm())
}

/// Σ wᵢ zᵢ for non-negative weights, normalized to sum one.
pub fn convex_combination(vertices: &[Point], weights: &[f64]) -> Point {
    let total: f64 = weights.iter().sum();
    vertices
        .iter()
        .zip(weights)
        .fold(DVector::zeros(vertices[0].len()), |acc, (z, w)| acc + z * (w / total))
}

/// ‖x₁−x₂‖² − ‖u(x₁)−u(x₂)‖² at the two leaf bases.
pub fn base_defect(map: &dyn LipschitzMap, l1: &LeafModel, l2: &LeafModel) -> f64 {
    let dx = (&l1.base - &l2.base).norm_squared();
    let du = (map.eval(&l1.base) - map.eval(&l2.base)).norm_squared();
    dx - du
}

/// Slack of the strengthened Lipschitz inequality at the bases:
/// ‖x₁−x₂‖² − ‖u(x₁)−u(x₂)‖² − 2σ₁σ₂‖P₁P₂ − P₁T₁ᵀT₂P₂‖. Non-negative when
/// the inequality holds.
pub fn strengthened_lipschitz_slack(map: &dyn LipschitzMap, l1: &LeafModel, l2: &LeafModel) -> f64 {
    let p1 = l1.projection();
    let p2 = l2.projection();
    let t1 = l1.isometry();
    let t2 = l2.isometry();
    let m = &p1 * &p2 - &p1 * t1.transpose() * &t2 * &p2;
    base_defect(map, l1, l2) - 2.0 * l1.sigma * l2.sigma * linalg::operator_norm(&m)
}

/// Slack of |‖P₁s₁ − P₂s₂‖² − ‖Du(x₁)s₁ − Du(x₂)s₂‖²| ≤ D/(c·σ₁σ₂) at the
/// bases, D the base defect. `c = 2` is the constant as usually quoted;
/// `c = 1` is what the polarization argument yields.
pub fn derivative_gap_slack(
    map: &dyn LipschitzMap,
    l1: &LeafModel,
    l2: &LeafModel,
    s1: &DVector<f64>,
    s2: &DVector<f64>,
    c: f64,
) -> f64 {
    let j1 = jacobian_of(map, &l1.base);
    let j2 = jacobian_of(map, &l2.base);
    let lhs = ((l1.projection() * s1 - l2.projection() * s2).norm_squared()
        - (j1 * s1 - j2 * s2).norm_squared())
    .abs();
    base_defect(map, l1, l2) / (c * l1.sigma * l2.sigma) - lhs
}
