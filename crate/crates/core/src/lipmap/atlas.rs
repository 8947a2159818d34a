//! Analytic 1-Lipschitz test maps with known leaf structure.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::LipschitzMap;
use crate::error::{Error, Result};
use crate::linalg::Point;

/// Exclusion radius around the singular sets of the distance and
/// cylindrical maps.
const AXIS_EXCLUSION: f64 = 0.1;

/// Known leaf through a query point.
#[derive(Debug, Clone)]
pub struct LeafTruth {
    pub dim: usize,
    /// n×dim orthonormal basis of the leaf tangent space.
    pub tangent: DMatrix<f64>,
    /// Distance to the relative boundary (may be infinite).
    pub sigma: f64,
}

pub type TruthFn = Arc<dyn Fn(&Point) -> LeafTruth + Send + Sync>;

/// An atlas map with its ground truth, a sampling domain and a default
/// chart recipe (level value plus seeds spread over the level set).
#[derive(Clone)]
pub struct AtlasEntry {
    pub key: String,
    pub map: Arc<dyn LipschitzMap>,
    pub truth: TruthFn,
    pub domain_lo: Vec<f64>,
    pub domain_hi: Vec<f64>,
    pub chart_level: Vec<f64>,
    pub chart_seeds: Vec<Point>,
}

impl AtlasEntry {
    pub fn n(&self) -> usize {
        self.map.dim_in()
    }
    pub fn m(&self) -> usize {
        self.map.dim_out()
    }
}

fn unit(n: usize, i: usize) -> DVector<f64> {
    let mut e = DVector::zeros(n);
    e[i] = 1.0;
    e
}

fn columns(vs: &[DVector<f64>], n: usize) -> DMatrix<f64> {
    if vs.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(vs)
    }
}

#[derive(Debug, Clone)]
pub struct Identity {
    pub n: usize,
}

impl Identity {
    pub fn new(n: usize) -> Self {
        Self { n }
    }
}

impl LipschitzMap for Identity {
    fn dim_in(&self) -> usize {
        self.n
    }
    fn dim_out(&self) -> usize {
        self.n
    }
    fn eval(&self, x: &Point) -> DVector<f64> {
        x.clone()
    }
    fn jacobian(&self, _x: &Point) -> Option<DMatrix<f64>> {
        Some(DMatrix::identity(self.n, self.n))
    }
    fn hessian(&self, _x: &Point) -> Option<Vec<DMatrix<f64>>> {
        Some(vec![DMatrix::zeros(self.n, self.n); self.n])
    }
    fn name(&self) -> String {
        format!("identity(n={})", self.n)
    }
}

/// (x₁, …, xₙ) ↦ (x₁, …, x_m).
#[derive(Debug, Clone)]
pub struct Projection {
    pub n: usize,
    pub m: usize,
}

impl Projection {
    pub fn new(n: usize, m: usize) -> Self {
        Self { n, m }
    }
}

impl LipschitzMap for Projection {
    fn dim_in(&self) -> usize {
        self.n
    }
    fn dim_out(&self) -> usize {
        self.m
    }
    fn eval(&self, x: &Point) -> DVector<f64> {
        x.rows(0, self.m).into_owned()
    }
    fn jacobian(&self, _x: &Point) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_fn(self.m, self.n, |i, j| if i == j { 1.0 } else { 0.0 }))
    }
    fn hessian(&self, _x: &Point) -> Option<Vec<DMatrix<f64>>> {
        Some(vec![DMatrix::zeros(self.n, self.n); self.m])
    }
    fn name(&self) -> String {
        format!("projection(n={}, m={})", self.n, self.m)
    }
}

/// x ↦ ‖x − p‖. Leaves are the closed rays issuing from p.
#[derive(Debug, Clone)]
pub struct DistanceMap {
    pub center: DVector<f64>,
}

impl DistanceMap {
    pub fn new(center: DVector<f64>) -> Self {
        Self { center }
    }
}

impl LipschitzMap for DistanceMap {
    fn dim_in(&self) -> usize {
        self.center.len()
    }
    fn dim_out(&self) -> usize {
        1
    }
    fn eval(&self, x: &Point) -> DVector<f64> {
        DVector::from_element(1, (x - &self.center).norm())
    }
    fn jacobian(&self, x: &Point) -> Option<DMatrix<f64>> {
        let d = x - &self.center;
        let r = d.norm();
        if r == 0.0 {
            return None;
        }
        Some(DMatrix::from_row_slice(1, d.len(), (d / r).as_slice()))
    }
    fn hessian(&self, x: &Point) -> Option<Vec<DMatrix<f64>>> {
        let d = x - &self.center;
        let r = d.norm();
        if r == 0.0 {
            return None;
        }
        let e = d / r;
        let n = self.dim_in();
        Some(vec![(DMatrix::identity(n, n) - &e * e.transpose()) / r])
    }
    fn excluded(&self, x: &Point) -> bool {
        (x - &self.center).norm() < AXIS_EXCLUSION
    }
    fn name(&self) -> String {
        format!("distance(n={})", self.dim_in())
    }
}

/// (x, y, z) ↦ (√(x² + y²), z). Leaves are the closed half-planes bounded
/// by the z-axis.
#[derive(Debug, Clone, Copy)]
pub struct Cylindrical;

impl LipschitzMap for Cylindrical {
    fn dim_in(&self) -> usize {
        3
    }
    fn dim_out(&self) -> usize {
        2
    }
    fn eval(&self, x: &Point) -> DVector<f64> {
        DVector::from_vec(vec![x[0].hypot(x[1]), x[2]])
    }
    fn jacobian(&self, x: &Point) -> Option<DMatrix<f64>> {
        let r = x[0].hypot(x[1]);
        if r == 0.0 {
            return None;
        }
        Some(DMatrix::from_row_slice(
            2,
            3,
            &[x[0] / r, x[1] / r, 0.0, 0.0, 0.0, 1.0],
        ))
    }
    fn hessian(&self, x: &Point) -> Option<Vec<DMatrix<f64>>> {
        let r = x[0].hypot(x[1]);
        if r == 0.0 {
            return None;
        }
        let (c, s) = (x[0] / r, x[1] / r);
        let h = DMatrix::from_row_slice(3, 3, &[s * s, -s * c, 0.0, -s * c, c * c, 0.0, 0.0, 0.0, 0.0])
            / r;
        Some(vec![h, DMatrix::zeros(3, 3)])
    }
    fn excluded(&self, x: &Point) -> bool {
        x[0].hypot(x[1]) < AXIS_EXCLUSION
    }
    fn name(&self) -> String {
        "cylindrical".into()
    }
}

/// Distance to the rectangle K = [−w, w] × [−h, h] in R². Outside K the
/// leaves are the normal rays issuing from ∂K; each point of K is its own
/// (trivial) leaf.
#[derive(Debug, Clone, Copy)]
pub struct ConvexDistance {
    pub half_width: f64,
    pub half_height: f64,
}

/// Band around ∂K and around the normal-cone boundary rays where the map is
/// not twice differentiable.
const BODY_EXCLUSION: f64 = 0.05;
const CONE_EXCLUSION: f64 = 1e-3;

impl ConvexDistance {
    pub fn new(half_width: f64, half_height: f64) -> Self {
        Self {
            half_width,
            half_height,
        }
    }

    fn nearest(&self, x: &Point) -> (f64, f64) {
        (
            x[0].clamp(-self.half_width, self.half_width),
            x[1].clamp(-self.half_height, self.half_height),
        )
    }

    fn inside(&self, x: &Point) -> bool {
        x[0].abs() <= self.half_width && x[1].abs() <= self.half_height
    }

    /// Points on the level set {u = s} spaced uniformly in arclength.
    pub fn level_curve(&self, s: f64, count: usize) -> Vec<Point> {
        let (w, h) = (self.half_width, self.half_height);
        let arc = 0.5 * PI * s;
        // edge bottom (→), corner (w,−h), edge right (↑), corner (w,h), ...
        let pieces = [2.0 * w, arc, 2.0 * h, arc, 2.0 * w, arc, 2.0 * h, arc];
        let total: f64 = pieces.iter().sum();
        (0..count)
            .map(|i| {
                let mut t = total * (i as f64 + 0.5) / count as f64;
                let mut k = 0;
                while t > pieces[k] {
                    t -= pieces[k];
                    k += 1;
                }
                let (x, y) = match k {
                    0 => (-w + t, -h - s),
                    1 => corner(w, -h, s, -0.5 * PI + t / s),
                    2 => (w + s, -h + t),
                    3 => corner(w, h, s, t / s),
                    4 => (w - t, h + s),
                    5 => corner(-w, h, s, 0.5 * PI + t / s),
                    6 => (-w - s, h - t),
                    _ => corner(-w, -h, s, PI + t / s),
                };
                DVector::from_vec(vec![x, y])
            })
            .collect()
    }
}

fn corner(cx: f64, cy: f64, s: f64, angle: f64) -> (f64, f64) {
    (cx + s * angle.cos(), cy + s * angle.sin())
}

impl LipschitzMap for ConvexDistance {
    fn dim_in(&self) -> usize {
        2
    }
    fn dim_out(&self) -> usize {
        1
    }
    fn eval(&self, x: &Point) -> DVector<f64> {
        let (px, py) = self.nearest(x);
        DVector::from_element(1, (x[0] - px).hypot(x[1] - py))
    }
    fn jacobian(&self, x: &Point) -> Option<DMatrix<f64>> {
        if self.inside(x) {
            return Some(DMatrix::zeros(1, 2));
        }
        let (px, py) = self.nearest(x);
        let (dx, dy) = (x[0] - px, x[1] - py);
        let r = dx.hypot(dy);
        Some(DMatrix::from_row_slice(1, 2, &[dx / r, dy / r]))
    }
    fn hessian(&self, x: &Point) -> Option<Vec<DMatrix<f64>>> {
        let out_x = x[0].abs() > self.half_width;
        let out_y = x[1].abs() > self.half_height;
        if !(out_x && out_y) {
            return Some(vec![DMatrix::zeros(2, 2)]);
        }
        let (px, py) = self.nearest(x);
        let (dx, dy) = (x[0] - px, x[1] - py);
        let r = dx.hypot(dy);
        let (c, s) = (dx / r, dy / r);
        Some(vec![DMatrix::from_row_slice(2, 2, &[s * s, -s * c, -s * c, c * c]) / r])
    }
    fn excluded(&self, x: &Point) -> bool {
        let (w, h) = (self.half_width, self.half_height);
        let dist_boundary = if self.inside(x) {
            (w - x[0].abs()).min(h - x[1].abs())
        } else {
            self.eval(x)[0]
        };
        if dist_boundary < BODY_EXCLUSION {
            return true;
        }
        // normal-cone boundaries: |x| = w with |y| > h, or |y| = h with |x| > w
        ((x[0].abs() - w).abs() < CONE_EXCLUSION && x[1].abs() > h)
            || ((x[1].abs() - h).abs() < CONE_EXCLUSION && x[0].abs() > w)
    }
    fn name(&self) -> String {
        format!("convex_distance(w={}, h={})", self.half_width, self.half_height)
    }
}

/// Map named in a config file.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "map", rename_all = "snake_case", deny_unknown_fields)]
pub enum MapSpec {
    Identity {
        n: usize,
    },
    Projection {
        n: usize,
        m: usize,
    },
    Distance {
        n: usize,
        #[serde(default)]
        center: Option<Vec<f64>>,
    },
    Cylindrical {
        #[serde(default)]
        n: Option<usize>,
    },
    ConvexDistance {
        #[serde(default)]
        half_widths: Option<[f64; 2]>,
    },
}

impl MapSpec {
    pub fn build(&self) -> Result<Arc<dyn LipschitzMap>> {
        Ok(self.entry()?.map)
    }

    /// Atlas entry (map, truth, domain, default chart) for this spec.
    pub fn entry(&self) -> Result<AtlasEntry> {
        match self {
            MapSpec::Identity { n } => {
                if *n == 0 {
                    return Err(Error::Config("identity needs n >= 1".into()));
                }
                Ok(identity_entry(*n))
            }
            MapSpec::Projection { n, m } => {
                if *m == 0 || m > n {
                    return Err(Error::Config(format!("projection needs 1 <= m <= n, got n={n}, m={m}")));
                }
                Ok(projection_entry(*n, *m))
            }
            MapSpec::Distance { n, center } => {
                if *n == 0 {
                    return Err(Error::Config("distance needs n >= 1".into()));
                }
                let c = match center {
                    Some(c) if c.len() != *n => {
                        return Err(Error::Config("distance center has wrong length".into()))
                    }
                    Some(c) => DVector::from_column_slice(c),
                    None => DVector::zeros(*n),
                };
                Ok(distance_entry(c))
            }
            MapSpec::Cylindrical { n } => {
                if let Some(n) = n {
                    if *n != 3 {
                        return Err(Error::Config("cylindrical map is defined on R^3".into()));
                    }
                }
                Ok(cylindrical_entry())
            }
            MapSpec::ConvexDistance { half_widths } => {
                let [w, h] = half_widths.unwrap_or([1.0, 0.5]);
                if w <= 0.0 || h <= 0.0 {
                    return Err(Error::Config("rectangle half widths must be positive".into()));
                }
                Ok(convex_entry(ConvexDistance::new(w, h)))
            }
        }
    }

    pub fn catalogue() -> Vec<(&'static str, &'static str)> {
        vec![
            ("identity", "x -> x on R^n; params: n"),
            ("projection", "R^n -> R^m onto the first m coordinates; params: n, m"),
            ("distance", "x -> |x - center|; params: n, center (optional)"),
            ("cylindrical", "(x,y,z) -> (sqrt(x^2+y^2), z); params: n = 3 (optional)"),
            (
                "convex_distance",
                "distance to the rectangle [-w,w]x[-h,h] in R^2; params: half_widths (optional)",
            ),
        ]
    }
}

fn cube(n: usize, half: f64) -> (Vec<f64>, Vec<f64>) {
    (vec![-half; n], vec![half; n])
}

fn identity_entry(n: usize) -> AtlasEntry {
    let (lo, hi) = cube(n, 3.0);
    AtlasEntry {
        key: "identity".into(),
        map: Arc::new(Identity::new(n)),
        truth: Arc::new(move |_x: &Point| LeafTruth {
            dim: n,
            tangent: DMatrix::identity(n, n),
            sigma: f64::INFINITY,
        }),
        domain_lo: lo,
        domain_hi: hi,
        chart_level: vec![0.0; n],
        chart_seeds: vec![DVector::zeros(n)],
    }
}

fn projection_entry(n: usize, m: usize) -> AtlasEntry {
    let (lo, hi) = cube(n, 3.0);
    // seeds on a grid over the transverse coordinates
    let k = n - m;
    let per = if k == 0 { 1 } else { 25usize };
    let count = per.pow(k as u32);
    let seeds = (0..count)
        .map(|mut idx| {
            let mut p = DVector::zeros(n);
            for j in 0..k {
                let t = idx % per;
                idx /= per;
                p[m + j] = -3.0 + 6.0 * t as f64 / (per - 1).max(1) as f64;
            }
            p
        })
        .collect();
    AtlasEntry {
        key: "projection".into(),
        map: Arc::new(Projection::new(n, m)),
        truth: Arc::new(move |_x: &Point| LeafTruth {
            dim: m,
            tangent: columns(&(0..m).map(|i| unit(n, i)).collect::<Vec<_>>(), n),
            sigma: f64::INFINITY,
        }),
        domain_lo: lo,
        domain_hi: hi,
        chart_level: vec![0.0; m],
        chart_seeds: seeds,
    }
}

fn distance_entry(center: DVector<f64>) -> AtlasEntry {
    let n = center.len();
    let (mut lo, mut hi) = cube(n, 3.0);
    for i in 0..n {
        lo[i] += center[i];
        hi[i] += center[i];
    }
    let c2 = center.clone();
    let seeds: Vec<Point> = match n {
        1 => vec![&center + unit(1, 0), &center - unit(1, 0)],
        2 => crate::linalg::direction_design(2, 64)
            .into_iter()
            .map(|d| &center + d)
            .collect(),
        3 => crate::linalg::direction_design(3, 256)
            .into_iter()
            .map(|d| &center + d)
            .collect(),
        _ => crate::linalg::direction_design(n, 64 * n)
            .into_iter()
            .map(|d| &center + d)
            .collect(),
    };
    AtlasEntry {
        key: "distance".into(),
        map: Arc::new(DistanceMap::new(center)),
        truth: Arc::new(move |x: &Point| {
            let d = x - &c2;
            let r = d.norm();
            LeafTruth {
                dim: 1,
                tangent: columns(&[d / r], n),
                sigma: r,
            }
        }),
        domain_lo: lo,
        domain_hi: hi,
        chart_level: vec![1.0],
        chart_seeds: seeds,
    }
}

fn cylindrical_entry() -> AtlasEntry {
    let (lo, hi) = cube(3, 3.0);
    let seeds = (0..64)
        .map(|i| {
            let t = 2.0 * PI * i as f64 / 64.0;
            DVector::from_vec(vec![t.cos(), t.sin(), 0.0])
        })
        .collect();
    AtlasEntry {
        key: "cylindrical".into(),
        map: Arc::new(Cylindrical),
        truth: Arc::new(|x: &Point| {
            let r = x[0].hypot(x[1]);
            let er = DVector::from_vec(vec![x[0] / r, x[1] / r, 0.0]);
            LeafTruth {
                dim: 2,
                tangent: columns(&[er, unit(3, 2)], 3),
                sigma: r,
            }
        }),
        domain_lo: lo,
        domain_hi: hi,
        chart_level: vec![1.0, 0.0],
        chart_seeds: seeds,
    }
}

fn convex_entry(body: ConvexDistance) -> AtlasEntry {
    let (lo, hi) = cube(2, 3.0);
    let level = 0.5;
    AtlasEntry {
        key: "convex_distance".into(),
        map: Arc::new(body),
        truth: Arc::new(move |x: &Point| {
            if body.inside(x) {
                return LeafTruth {
                    dim: 0,
                    tangent: DMatrix::zeros(2, 0),
                    sigma: f64::INFINITY,
                };
            }
            let (px, py) = body.nearest(x);
            let d = DVector::from_vec(vec![x[0] - px, x[1] - py]);
            let r = d.norm();
            LeafTruth {
                dim: 1,
                tangent: columns(&[d / r], 2),
                sigma: r,
            }
        }),
        domain_lo: lo,
        domain_hi: hi,
        chart_level: vec![level],
        chart_seeds: body.level_curve(level, 128),
    }
}

/// The test atlas: identity, two projections, distance maps in R² and R³,
/// the cylindrical map and the distance to a rectangle.
pub fn test_atlas() -> Vec<AtlasEntry> {
    vec![
        identity_entry(3),
        projection_entry(3, 2),
        projection_entry(2, 1),
        distance_entry(DVector::zeros(2)),
        distance_entry(DVector::zeros(3)),
        cylindrical_entry(),
        convex_entry(ConvexDistance::new(1.0, 0.5)),
    ]
}
