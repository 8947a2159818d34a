//! Numerical leaf detection: the two-sided radius α_k, the one-sided cone
//! radius β_k, point classification, leaf tracing and the Minkowski
//! functional of a leaf image.
//!
//! Tangent candidates come from the singular vectors of Du with singular
//! value 1 (on a leaf interior Du is a partial isometry), and every
//! candidate is confirmed by isometry-defect tests on a probe set. Where Du
//! yields too few candidates, a randomized direction search looks for
//! one-sided isometric rays and reads the tangent space off Du at a probe
//! point inside the cone.

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg::{self, Point};
use crate::lipmap::{jacobian_of, LipschitzMap};

/// Tolerances and budgets for leaf detection.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct DetectConfig {
    /// Radii are clamped at this value.
    pub r_max: f64,
    /// Smallest probe radius; estimates are either 0 or ≥ r_min.
    pub r_min: f64,
    /// Isometry to tolerance: defect ≤ tol_defect·(1 + ‖v‖²).
    pub tol_defect: f64,
    /// Singular values ≥ 1 − tol_sv count as isometric directions.
    pub tol_sv: f64,
    /// Relative precision of the α/β bisection.
    pub rel_precision: f64,
    pub extent_iters: usize,
    pub extent_dirs: usize,
    pub gram_min: f64,
    pub seed: u64,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            r_max: 10.0,
            r_min: 1e-3,
            tol_defect: 1e-8,
            tol_sv: 1e-4,
            rel_precision: 1e-3,
            extent_iters: 40,
            extent_dirs: 64,
            gram_min: 0.1,
            seed: 0,
        }
    }
}

/// Classification of a point by leaf dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct PointClass {
    pub point: Point,
    /// `None` means Unknown (estimates inside the hysteresis band).
    pub leaf_dim: Option<usize>,
    pub interior: bool,
    /// α_k for k = 1..m.
    pub alpha: Vec<f64>,
    /// β_k for k = 1..m.
    pub beta: Vec<f64>,
}

impl Serialize for PointClass {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("PointClass", 5)?;
        st.serialize_field("point", self.point.as_slice())?;
        match self.leaf_dim {
            Some(d) => st.serialize_field("leaf_dim", &d)?,
            None => st.serialize_field("leaf_dim", "unknown")?,
        }
        st.serialize_field("interior", &self.interior)?;
        st.serialize_field("alpha", &self.alpha)?;
        st.serialize_field("beta", &self.beta)?;
        st.end()
    }
}

/// One sample of the radial extent model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtentSample {
    /// Unit direction in tangent coordinates.
    pub direction: Vec<f64>,
    pub radius: f64,
    pub clamped: bool,
}

/// A traced leaf around an interior base point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeafModel {
    #[serde(serialize_with = "ser_vec")]
    pub base: Point,
    pub dim: usize,
    /// n×k, orthonormal columns spanning the tangent space.
    #[serde(serialize_with = "ser_matrix")]
    pub tangent_frame: DMatrix<f64>,
    /// m×k, orthonormal columns: u(base + frame·c) − u(base) = factor·c.
    #[serde(serialize_with = "ser_matrix")]
    pub isometry_factor: DMatrix<f64>,
    pub extent: Vec<ExtentSample>,
    pub sigma: f64,
    pub sigma_clamped: bool,
}

pub(crate) fn ser_vec<S: Serializer>(v: &DVector<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(v.iter())
}

/// Row-major nested arrays.
pub(crate) fn ser_matrix<S: Serializer>(
    m: &DMatrix<f64>,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    let rows: Vec<Vec<f64>> = (0..m.nrows())
        .map(|i| m.row(i).iter().cloned().collect())
        .collect();
    rows.serialize(s)
}

impl LeafModel {
    /// Orthogonal projection P onto the tangent space.
    pub fn projection(&self) -> DMatrix<f64> {
        &self.tangent_frame * self.tangent_frame.transpose()
    }

    /// The isometry T as an m×n matrix, T = factor·frameᵀ.
    pub fn isometry(&self) -> DMatrix<f64> {
        &self.isometry_factor * self.tangent_frame.transpose()
    }

    /// Point of the leaf with image offset `b`: base + frame·factorᵀ·b.
    pub fn point_at(&self, b: &DVector<f64>) -> Point {
        &self.base + &self.tangent_frame * (self.isometry_factor.transpose() * b)
    }
}

fn pairwise_isometric(map: &dyn LipschitzMap, pts: &[Point], tol: f64) -> bool {
    let imgs: Vec<DVector<f64>> = pts.iter().map(|p| map.eval(p)).collect();
    for i in 0..pts.len() {
        for j in (i + 1)..pts.len() {
            let dx = (&pts[i] - &pts[j]).norm_squared();
            let du = (&imgs[i] - &imgs[j]).norm_squared();
            let defect = dx - du;
            if !(defect <= tol * (1.0 + dx)) {
                return false;
            }
        }
    }
    true
}

/// Probe set of the two-sided disk of radius r spanned by `frame`.
fn disk_probes(x: &Point, frame: &DMatrix<f64>, r: f64) -> Vec<Point> {
    let k = frame.ncols();
    let mut pts = vec![x.clone()];
    for i in 0..k {
        let f = frame.column(i);
        pts.push(x + f * r);
        pts.push(x - f * r);
        for j in (i + 1)..k {
            let g = frame.column(j);
            let s = r / 2f64.sqrt();
            pts.push(x + (f + g) * s);
            pts.push(x - (f + g) * s);
            pts.push(x + (f - g) * s);
            pts.push(x - (f - g) * s);
        }
    }
    pts
}

/// Probe set of the one-sided cone of radius r with the given unit
/// generators.
fn cone_probes(x: &Point, gens: &[DVector<f64>], r: f64) -> Vec<Point> {
    let mut pts = vec![x.clone()];
    for (i, g) in gens.iter().enumerate() {
        pts.push(x + g * r);
        for h in gens.iter().skip(i + 1) {
            let mid = g + h;
            let nrm = mid.norm();
            if nrm > 1e-12 {
                pts.push(x + mid * (r / nrm));
            }
        }
    }
    if gens.len() > 2 {
        let c: DVector<f64> = gens.iter().fold(DVector::zeros(x.len()), |a, g| a + g);
        let nrm = c.norm();
        if nrm > 1e-12 {
            pts.push(x + c * (r / nrm));
        }
    }
    pts
}

/// Largest r ∈ [r_min, r_max] passing `test`, bisected geometrically to
/// relative precision `rel`; 0 if r_min fails.
fn largest_radius<F: Fn(f64) -> bool>(test: F, cfg: &DetectConfig) -> f64 {
    if test(cfg.r_max) {
        return cfg.r_max;
    }
    if !test(cfg.r_min) {
        return 0.0;
    }
    let (mut lo, mut hi) = (cfg.r_min, cfg.r_max);
    while hi / lo > 1.0 + cfg.rel_precision {
        let mid = (lo * hi).sqrt();
        if test(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Right singular vectors of Du(x) with singular value ≥ 1 − tol_sv, and
/// whether any singular value falls in the hysteresis band
/// [1 − 2·tol_sv, 1 − tol_sv).
struct UnitDirections {
    frame: DMatrix<f64>,
    left: DMatrix<f64>,
    in_band: bool,
}

fn unit_directions(map: &dyn LipschitzMap, x: &Point, tol_sv: f64) -> UnitDirections {
    let n = map.dim_in();
    let m = map.dim_out();
    let jac = jacobian_of(map, x);
    if jac.iter().any(|v| !v.is_finite()) {
        return UnitDirections {
            frame: DMatrix::zeros(n, 0),
            left: DMatrix::zeros(m, 0),
            in_band: false,
        };
    }
    let svd = linalg::sorted_svd(&jac);
    let count = svd.values.iter().filter(|&&s| s >= 1.0 - tol_sv).count();
    let in_band = svd
        .values
        .iter()
        .any(|&s| s >= 1.0 - 2.0 * tol_sv && s < 1.0 - tol_sv);
    UnitDirections {
        frame: svd.right.columns(0, count).into_owned(),
        left: svd.left.columns(0, count).into_owned(),
        in_band,
    }
}

fn check_k(map: &dyn LipschitzMap, k: usize) -> Result<()> {
    if k > map.dim_out() {
        return Err(Error::DimensionError(format!(
            "k = {k} exceeds target dimension m = {}",
            map.dim_out()
        )));
    }
    Ok(())
}

fn point_rng(cfg: &DetectConfig, x: &Point, k: usize) -> ChaCha8Rng {
    linalg::seeded_rng(cfg.seed, linalg::point_hash(x) ^ (k as u64).wrapping_mul(0x9E37))
}

/// Candidate k-frames at x found by direction search: one-sided isometric
/// rays d from x, with the tangent space read off Du at x + t₀·d.
/// Returns (cone center, frame) pairs.
fn searched_frames(
    map: &dyn LipschitzMap,
    x: &Point,
    k: usize,
    cfg: &DetectConfig,
) -> Vec<(DVector<f64>, DMatrix<f64>)> {
    let n = map.dim_in();
    let t0 = 2.0 * cfg.r_min;
    let ux = map.eval(x);
    let ratio = |d: &DVector<f64>| (map.eval(&(x + d * t0)) - &ux).norm() / t0;
    let mut rng = point_rng(cfg, x, k);
    let mut out = Vec::new();
    for _ in 0..(k + 3) {
        // coarse random search, then local ascent with shrinking steps
        let mut best = linalg::random_unit(&mut rng, n);
        let mut best_val = ratio(&best);
        for _ in 0..16 {
            let d = linalg::random_unit(&mut rng, n);
            let v = ratio(&d);
            if v > best_val {
                best = d;
                best_val = v;
            }
        }
        let mut step = 0.5;
        for _ in 0..30 {
            let pert = linalg::random_unit(&mut rng, n);
            let cand = (&best + pert * step).normalize();
            let v = ratio(&cand);
            if v > best_val {
                best = cand;
                best_val = v;
            } else {
                step *= 0.8;
            }
        }
        if best_val < 1.0 - 1e-3 {
            continue;
        }
        let y = x + &best * t0;
        let ud = unit_directions(map, &y, cfg.tol_sv);
        if ud.frame.ncols() < k {
            continue;
        }
        let frame = ud.frame.columns(0, k).into_owned();
        let center = &frame * (frame.transpose() * &best);
        let nrm = center.norm();
        if nrm < 0.5 {
            continue;
        }
        out.push((center / nrm, frame));
    }
    out
}

/// Unit generators of a cone around `center` inside span(`frame`) whose
/// Gram determinant is at least `gram_min`.
fn cone_generators(center: &DVector<f64>, frame: &DMatrix<f64>, gram_min: f64) -> Vec<DVector<f64>> {
    let k = frame.ncols();
    if k == 1 {
        return vec![center.clone()];
    }
    // complement of the center inside the frame span, in frame coordinates
    let c_coords = frame.transpose() * center;
    let c_mat = DMatrix::from_column_slice(k, 1, c_coords.as_slice());
    let comp = frame * linalg::orthonormal_complement(&c_mat); // n×(k−1)
    // regular simplex in R^{k−1}
    let ones = DMatrix::from_element(k, 1, 1.0 / (k as f64).sqrt());
    let q = linalg::orthonormal_complement(&ones); // k×(k−1)
    let offsets: Vec<DVector<f64>> = (0..k)
        .map(|i| {
            let mut s = DVector::from_element(k, -1.0 / k as f64);
            s[i] += 1.0;
            let coords = q.transpose() * s;
            let v = &comp * coords;
            let nrm = v.norm();
            v / nrm
        })
        .collect();
    let mut phi = 1f64.to_radians();
    loop {
        let gens: Vec<DVector<f64>> = offsets
            .iter()
            .map(|o| center * phi.cos() + o * phi.sin())
            .collect();
        if linalg::gram_det(&gens) >= gram_min || phi > 1.2 {
            return gens;
        }
        phi += 1f64.to_radians();
    }
}

/// α_k(x): largest radius of a two-sided k-disk centered at x on which u is
/// isometric (clamped at r_max, 0 if none is found at r_min).
pub fn estimate_alpha(map: &dyn LipschitzMap, x: &Point, k: usize, cfg: &DetectConfig) -> Result<f64> {
    check_k(map, k)?;
    if k == 0 {
        return Ok(cfg.r_max);
    }
    let ud = unit_directions(map, x, cfg.tol_sv);
    let mut frames: Vec<DMatrix<f64>> = Vec::new();
    if ud.frame.ncols() >= k {
        frames.push(ud.frame.columns(0, k).into_owned());
    } else {
        frames.extend(searched_frames(map, x, k, cfg).into_iter().map(|(_, f)| f));
    }
    let mut best: f64 = 0.0;
    for f in &frames {
        let r = largest_radius(|r| pairwise_isometric(map, &disk_probes(x, f, r), cfg.tol_defect), cfg);
        best = best.max(r);
        if best >= cfg.r_max {
            break;
        }
    }
    Ok(best)
}

/// β_k(x): largest radius of a one-sided isometric cone at x spanned by k
/// unit vectors with Gram determinant ≥ gram_min. Positive iff x lies on a
/// leaf of dimension ≥ k (up to tolerance).
pub fn estimate_beta(map: &dyn LipschitzMap, x: &Point, k: usize, cfg: &DetectConfig) -> Result<f64> {
    check_k(map, k)?;
    if k == 0 {
        return Ok(cfg.r_max);
    }
    let mut best = estimate_alpha(map, x, k, cfg)?;
    if best >= cfg.r_max {
        return Ok(best);
    }
    let ud = unit_directions(map, x, cfg.tol_sv);
    let mut cones: Vec<Vec<DVector<f64>>> = Vec::new();
    if ud.frame.ncols() >= k {
        let f = ud.frame.columns(0, k).into_owned();
        for sign in [1.0, -1.0] {
            cones.push((0..k).map(|i| f.column(i) * sign).collect());
        }
    }
    if best == 0.0 || cones.is_empty() {
        for (center, frame) in searched_frames(map, x, k, cfg) {
            cones.push(cone_generators(&center, &frame, cfg.gram_min));
        }
    }
    for gens in &cones {
        let r = largest_radius(|r| pairwise_isometric(map, &cone_probes(x, gens, r), cfg.tol_defect), cfg);
        best = best.max(r);
        if best >= cfg.r_max {
            break;
        }
    }
    Ok(best)
}

/// Leaf dimension from β, relative interior from α.
pub fn classify_point(map: &dyn LipschitzMap, x: &Point, cfg: &DetectConfig) -> PointClass {
    let m = map.dim_out();
    let mut alpha = vec![0.0; m];
    let mut beta = vec![0.0; m];
    let mut prev_a = cfg.r_max;
    let mut prev_b = cfg.r_max;
    for k in 1..=m {
        if prev_b == 0.0 {
            break;
        }
        let b = estimate_beta(map, x, k, cfg).expect("k <= m").min(prev_b);
        let a = if prev_a == 0.0 {
            0.0
        } else {
            estimate_alpha(map, x, k, cfg).expect("k <= m").min(prev_a).min(b)
        };
        alpha[k - 1] = a;
        beta[k - 1] = b;
        prev_a = a;
        prev_b = b;
    }
    let dim = beta.iter().take_while(|&&b| b > 0.0).count();
    let a_dim = if dim == 0 { cfg.r_max } else { alpha[dim - 1] };
    let band = 2.0 * cfg.r_min;
    let straddles = beta.iter().any(|&b| b > 0.0 && b < band) || (a_dim > 0.0 && a_dim < band);
    let sv_band = !map.excluded(x) && unit_directions(map, x, cfg.tol_sv).in_band;
    PointClass {
        point: x.clone(),
        leaf_dim: if straddles || sv_band { None } else { Some(dim) },
        interior: a_dim > 0.0,
        alpha,
        beta,
    }
}

/// Distance from `base` along unit `dir` (ambient) over which u stays
/// affine with image direction `image_dir`: bisected in `cfg.extent_iters`
/// steps, lower bracket returned. The flag reports clamping at r_max.
pub fn radial_extent(
    map: &dyn LipschitzMap,
    base: &Point,
    dir: &DVector<f64>,
    image_dir: &DVector<f64>,
    cfg: &DetectConfig,
) -> (f64, bool) {
    let ub = map.eval(base);
    let ok = |t: f64| {
        let x = base + dir * t;
        let ux = map.eval(&x);
        let resid = (&ux - &ub - image_dir * t).norm_squared();
        let defect = t * t - (&ux - &ub).norm_squared();
        let tol = cfg.tol_defect * (1.0 + t * t);
        resid <= tol && defect <= tol
    };
    if ok(cfg.r_max) {
        return (cfg.r_max, true);
    }
    let (mut lo, mut hi) = (0.0, cfg.r_max);
    for _ in 0..cfg.extent_iters {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo, false)
}

/// Trace the leaf through an interior point: tangent frame and isometry
/// factor from the SVD of Du, radial extents by bisection, σ as the
/// refined minimum extent.
pub fn trace_leaf(map: &dyn LipschitzMap, x: &Point, cfg: &DetectConfig) -> Result<LeafModel> {
    let cls = classify_point(map, x, cfg);
    let k = match cls.leaf_dim {
        Some(k) if cls.interior => k,
        _ => return Err(Error::NotInterior(x.iter().cloned().collect())),
    };
    let n = map.dim_in();
    let m = map.dim_out();
    if k == 0 {
        return Ok(LeafModel {
            base: x.clone(),
            dim: 0,
            tangent_frame: DMatrix::zeros(n, 0),
            isometry_factor: DMatrix::zeros(m, 0),
            extent: vec![],
            sigma: cfg.r_max,
            sigma_clamped: true,
        });
    }
    let ud = unit_directions(map, x, cfg.tol_sv);
    if ud.in_band || ud.frame.ncols() != k {
        return Err(Error::FrameDegenerate(x.iter().cloned().collect()));
    }
    let frame = ud.frame;
    let factor = ud.left;
    let extent_along = |c: &DVector<f64>| {
        let d = &frame * c;
        let img = &factor * c;
        radial_extent(map, x, &d, &img, cfg)
    };
    let design = linalg::direction_design(k, cfg.extent_dirs);
    let extent: Vec<ExtentSample> = design
        .iter()
        .map(|c| {
            let (radius, clamped) = extent_along(c);
            ExtentSample {
                direction: c.iter().cloned().collect(),
                radius,
                clamped,
            }
        })
        .collect();
    let (imin, smin) = extent
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.radius.total_cmp(&b.1.radius))
        .map(|(i, s)| (i, s.clone()))
        .expect("nonempty design");
    let (sigma, sigma_clamped) = if smin.clamped {
        (cfg.r_max, true)
    } else {
        let refined = refine_min_extent(&extent_along, &design[imin], k, cfg);
        (refined.min(smin.radius), false)
    };
    Ok(LeafModel {
        base: x.clone(),
        dim: k,
        tangent_frame: frame,
        isometry_factor: factor,
        extent,
        sigma,
        sigma_clamped,
    })
}

fn refine_min_extent<F>(extent_along: &F, start: &DVector<f64>, k: usize, cfg: &DetectConfig) -> f64
where
    F: Fn(&DVector<f64>) -> (f64, bool),
{
    let f = |c: &DVector<f64>| extent_along(c).0;
    match k {
        1 => f(start),
        2 => {
            // golden-section search on the angle around the design minimum
            let t0 = start[1].atan2(start[0]);
            let delta = 2.0 * std::f64::consts::PI / cfg.extent_dirs.max(4) as f64;
            let g = |t: f64| f(&DVector::from_vec(vec![t.cos(), t.sin()]));
            let phi = (5f64.sqrt() - 1.0) / 2.0;
            let (mut a, mut b) = (t0 - delta, t0 + delta);
            let mut c = b - phi * (b - a);
            let mut d = a + phi * (b - a);
            let (mut fc, mut fd) = (g(c), g(d));
            for _ in 0..50 {
                if fc < fd {
                    b = d;
                    d = c;
                    fd = fc;
                    c = b - phi * (b - a);
                    fc = g(c);
                } else {
                    a = c;
                    c = d;
                    fc = fd;
                    d = a + phi * (b - a);
                    fd = g(d);
                }
            }
            fc.min(fd).min(g(t0))
        }
        _ => {
            let mut rng = linalg::seeded_rng(cfg.seed, 0x51);
            let mut best = start.clone();
            let mut best_val = f(&best);
            let mut step = 0.1;
            for _ in 0..80 {
                let cand = (&best + linalg::random_unit(&mut rng, k) * step).normalize();
                let v = f(&cand);
                if v < best_val {
                    best = cand;
                    best_val = v;
                } else {
                    step *= 0.9;
                }
            }
            best_val
        }
    }
}

/// Minkowski functional of u(S) − u(base) at y: inf{t > 0 : y ∈ t·(u(S) −
/// u(base))}. Zero along directions where the extent is clamped (treated
/// as recession directions), +∞ when y leaves the image span.
pub fn minkowski_gamma(leaf: &LeafModel, map: &dyn LipschitzMap, y: &DVector<f64>, cfg: &DetectConfig) -> f64 {
    let ny = y.norm();
    if ny == 0.0 {
        return 0.0;
    }
    if leaf.dim == 0 {
        return f64::INFINITY;
    }
    let c = leaf.isometry_factor.transpose() * y;
    if (&leaf.isometry_factor * &c - y).norm() > 1e-9 * ny {
        return f64::INFINITY;
    }
    let c = c / ny;
    let d = &leaf.tangent_frame * &c;
    let img = y / ny;
    let (radius, clamped) = radial_extent(map, &leaf.base, &d, &img, cfg);
    if clamped {
        0.0
    } else if radius == 0.0 {
        f64::INFINITY
    } else {
        ny / radius
    }
}

/// A random generator for callers needing point-derived streams.
pub fn point_stream(cfg: &DetectConfig, x: &Point) -> ChaCha8Rng {
    point_rng(cfg, x, usize::MAX)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lipmap::{Cylindrical, DistanceMap, Identity, Projection};
    use approx::assert_abs_diff_eq;

    fn p(v: &[f64]) -> Point {
        DVector::from_column_slice(v)
    }

    #[test]
    fn alpha_distance_map_is_distance_to_center() {
        let map = DistanceMap::new(DVector::zeros(2));
        let cfg = DetectConfig {
            r_max: 100.0,
            ..Default::default()
        };
        let a = estimate_alpha(&map, &p(&[3.0, 4.0]), 1, &cfg).unwrap();
        assert!((a - 5.0).abs() <= 0.005 * 5.0, "alpha = {a}");
    }

    #[test]
    fn alpha_projection_clamps() {
        let map = Projection::new(3, 1);
        let cfg = DetectConfig::default();
        let a = estimate_alpha(&map, &p(&[0.2, -1.0, 4.0]), 1, &cfg).unwrap();
        assert_eq!(a, 10.0);
    }

    #[test]
    fn alpha_cylinder_clamps_below_axis_distance() {
        let cfg = DetectConfig {
            r_max: 0.5,
            ..Default::default()
        };
        let a = estimate_alpha(&Cylindrical, &p(&[1.0, 0.0, 2.0]), 2, &cfg).unwrap();
        assert_eq!(a, 0.5);
    }

    #[test]
    fn beta_examples() {
        let cfg = DetectConfig::default();
        let dist = DistanceMap::new(DVector::zeros(2));
        assert!(estimate_beta(&dist, &p(&[3.0, 4.0]), 1, &cfg).unwrap() > 1.0);
        assert!(matches!(
            estimate_beta(&Identity::new(2), &p(&[0.0, 0.0]), 3, &cfg),
            Err(Error::DimensionError(_))
        ));
        let axis = p(&[0.0, 0.0, 5.0]);
        assert!(estimate_beta(&Cylindrical, &axis, 2, &cfg).unwrap() > 0.0);
        assert_eq!(estimate_alpha(&Cylindrical, &axis, 2, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn classify_examples() {
        let cfg = DetectConfig::default();
        let c = classify_point(&Projection::new(3, 2), &p(&[1.0, 2.0, -3.0]), &cfg);
        assert_eq!(c.leaf_dim, Some(2));
        assert!(c.interior);
        let c = classify_point(&DistanceMap::new(DVector::zeros(2)), &p(&[0.0, 0.0]), &cfg);
        assert!(!c.interior);
        assert_eq!(c.leaf_dim, Some(1));
        let c = classify_point(&Cylindrical, &p(&[1.0, 0.0, 2.0]), &cfg);
        assert_eq!(c.leaf_dim, Some(2));
        assert!(c.interior);
    }

    #[test]
    fn trace_projection_leaf() {
        let cfg = DetectConfig::default();
        let leaf = trace_leaf(&Projection::new(3, 2), &p(&[0.0, 0.0, 7.0]), &cfg).unwrap();
        assert_eq!(leaf.dim, 2);
        let expected = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0, 0.0]));
        assert_abs_diff_eq!(leaf.projection(), expected, epsilon = 1e-12);
        assert!(leaf.extent.iter().all(|e| e.clamped));
        assert_eq!(leaf.sigma, cfg.r_max);
    }

    #[test]
    fn trace_cylinder_leaf() {
        let cfg = DetectConfig::default();
        let leaf = trace_leaf(&Cylindrical, &p(&[2.0, 0.0, 0.0]), &cfg).unwrap();
        assert_eq!(leaf.dim, 2);
        let expected = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0, 1.0]));
        assert_abs_diff_eq!(leaf.projection(), expected, epsilon = 1e-9);
        assert_abs_diff_eq!(leaf.sigma, 2.0, epsilon = 1e-7);
        assert!(leaf.sigma <= 2.0 + 1e-8);
        // extent toward −e₁ is the axis distance
        let toward_axis = p(&[-1.0, 0.0, 0.0]);
        let c = leaf.tangent_frame.transpose() * &toward_axis;
        let (r, clamped) = radial_extent(&Cylindrical, &leaf.base, &toward_axis, &(&leaf.isometry_factor * c), &cfg);
        assert!(!clamped);
        assert_abs_diff_eq!(r, 2.0, epsilon = 1e-7);
    }

    #[test]
    fn trace_distance_leaf() {
        let cfg = DetectConfig::default();
        let map = DistanceMap::new(DVector::zeros(2));
        let leaf = trace_leaf(&map, &p(&[3.0, 4.0]), &cfg).unwrap();
        assert_eq!(leaf.dim, 1);
        let f = leaf.tangent_frame.column(0);
        assert_abs_diff_eq!(f[0].abs(), 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(f[1].abs(), 0.8, epsilon = 1e-12);
        let inward = leaf
            .extent
            .iter()
            .find(|e| !e.clamped)
            .expect("extent toward the center is finite");
        assert_abs_diff_eq!(inward.radius, 5.0, epsilon = 1e-7);
    }

    #[test]
    fn trace_rejects_boundary_points() {
        let cfg = DetectConfig::default();
        let err = trace_leaf(&Cylindrical, &p(&[0.0, 0.0, 5.0]), &cfg).unwrap_err();
        assert!(matches!(err, Error::NotInterior(_)));
    }

    #[test]
    fn gamma_examples() {
        let cfg = DetectConfig::default();
        let leaf = trace_leaf(&Cylindrical, &p(&[1.0, 0.0, 2.0]), &cfg).unwrap();
        assert_eq!(minkowski_gamma(&leaf, &Cylindrical, &DVector::zeros(2), &cfg), 0.0);
        let g = minkowski_gamma(&leaf, &Cylindrical, &p(&[-2.0, 0.0]), &cfg);
        assert_abs_diff_eq!(g, 2.0, epsilon = 1e-7);
        assert_eq!(minkowski_gamma(&leaf, &Cylindrical, &p(&[1.0, 5.0]), &cfg), 0.0);
    }
}
