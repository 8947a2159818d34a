//! Conditional measures on m-dimensional leaves and the mixture identity
//! μ(A) = ∫ μ_S(A) dν(S).
//!
//! On the leaf through v(a) the conditional density in image coordinates b
//! is exp(−ρ(F(a,b)))·J_nF(a,b); ν is the push-forward of Lebesgue measure
//! on chart labels.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chart::Chart;
use crate::error::{Error, Result};
use crate::linalg::{self, Point};
use crate::lipmap::{hessian_of, jacobian_of, LipschitzMap, WeightedMeasure};

/// Bounded test sets A.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "region", rename_all = "snake_case", deny_unknown_fields)]
pub enum Region {
    Ball {
        center: Vec<f64>,
        radius: f64,
    },
    /// {r_min ≤ √(x²+y²) ≤ r_max, z_min ≤ z ≤ z_max} in R³.
    CylinderShell {
        r_min: f64,
        r_max: f64,
        z_min: f64,
        z_max: f64,
    },
    Box {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    Empty {
        n: usize,
    },
}

impl Region {
    pub fn dim(&self) -> usize {
        match self {
            Region::Ball { center, .. } => center.len(),
            Region::CylinderShell { .. } => 3,
            Region::Box { lo, .. } => lo.len(),
            Region::Empty { n } => *n,
        }
    }

    pub fn contains(&self, x: &Point) -> bool {
        match self {
            Region::Ball { center, radius } => {
                x.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() <= radius * radius
            }
            Region::CylinderShell {
                r_min,
                r_max,
                z_min,
                z_max,
            } => {
                let r = x[0].hypot(x[1]);
                r >= *r_min && r <= *r_max && x[2] >= *z_min && x[2] <= *z_max
            }
            Region::Box { lo, hi } => x.iter().zip(lo.iter().zip(hi)).all(|(v, (l, h))| v >= l && v <= h),
            Region::Empty { .. } => false,
        }
    }

    /// Axis-aligned bounding box; `None` for the empty set.
    pub fn bbox(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        match self {
            Region::Ball { center, radius } => Some((
                center.iter().map(|c| c - radius).collect(),
                center.iter().map(|c| c + radius).collect(),
            )),
            Region::CylinderShell { r_max, z_min, z_max, .. } => {
                Some((vec![-r_max, -r_max, *z_min], vec![*r_max, *r_max, *z_max]))
            }
            Region::Box { lo, hi } => Some((lo.clone(), hi.clone())),
            Region::Empty { .. } => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("region: {msg}")));
        match self {
            Region::Ball { center, radius } if center.is_empty() || !(*radius >= 0.0) => {
                bad("ball needs a center and a non-negative radius")
            }
            Region::CylinderShell { r_min, r_max, z_min, z_max } if !(r_min <= r_max && z_min <= z_max && *r_min >= 0.0) => {
                bad("cylinder shell bounds are inverted")
            }
            Region::Box { lo, hi } if lo.len() != hi.len() || lo.is_empty() || lo.iter().zip(hi).any(|(l, h)| l > h) => {
                bad("box bounds are inconsistent")
            }
            _ => Ok(()),
        }
    }
}

/// Conditional density on the leaf through v(a), in image coordinates b
/// (the leaf point is v(a) + Du(v(a))ᵀb).
#[derive(Clone)]
pub struct ConditionalDensity {
    pub piece: usize,
    pub label: DVector<f64>,
    /// v(a).
    pub base: Point,
    /// n×m, orthonormal columns Du(v(a))ᵀ.
    pub frame: DMatrix<f64>,
    pub normalization: Option<f64>,
    dv_det: f64,
    /// Wᵀ D²u_j(v) W, one per output.
    curvature: Vec<DMatrix<f64>>,
    tol_defect: f64,
    det_min: f64,
    map: Arc<dyn LipschitzMap>,
    measure: Arc<dyn WeightedMeasure>,
}

impl std::fmt::Debug for ConditionalDensity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ConditionalDensity")
            .field("piece", &self.piece)
            .field("label", &self.label.as_slice())
            .field("base", &self.base.as_slice())
            .finish()
    }
}

/// Conditional density of `measure` on the leaf with label (piece, a).
pub fn conditional_density(
    chart: &Chart,
    piece: usize,
    a: &DVector<f64>,
    measure: Arc<dyn WeightedMeasure>,
) -> Result<ConditionalDensity> {
    let map = chart.map().clone();
    let v = chart.section(piece, a)?;
    let du = jacobian_of(map.as_ref(), &v);
    let svd = linalg::sorted_svd(&du);
    let w = linalg::orthonormal_complement(&svd.right);
    let dv = chart.section_derivative(piece, &v)?;
    let dv_det = if w.ncols() == 0 {
        1.0
    } else {
        (w.transpose() * dv).determinant().abs()
    };
    let curvature = hessian_of(map.as_ref(), &v)
        .iter()
        .map(|h| w.transpose() * h * &w)
        .collect();
    Ok(ConditionalDensity {
        piece,
        label: a.clone(),
        frame: du.transpose(),
        base: v,
        normalization: None,
        dv_det,
        curvature,
        tol_defect: chart.cfg.detect.tol_defect,
        det_min: chart.cfg.det_min,
        map,
        measure,
    })
}

impl ConditionalDensity {
    pub fn m(&self) -> usize {
        self.frame.ncols()
    }

    /// Leaf point with image coordinates b.
    pub fn point(&self, b: &DVector<f64>) -> Point {
        &self.base + &self.frame * b
    }

    /// det H(b).
    pub fn h_det(&self, b: &DVector<f64>) -> f64 {
        let k = self.curvature.first().map_or(0, |c| c.nrows());
        if k == 0 {
            return 1.0;
        }
        let h = self
            .curvature
            .iter()
            .zip(b.iter())
            .fold(DMatrix::identity(k, k), |acc, (c, bj)| acc + c * *bj);
        h.determinant()
    }

    /// J_nF(a, b).
    pub fn jacobian(&self, b: &DVector<f64>) -> f64 {
        self.dv_det * self.h_det(b)
    }

    /// b lies in the leaf image: u is affine-isometric on [v(a), F(a,b)].
    pub fn in_support(&self, b: &DVector<f64>) -> bool {
        let x = self.point(b);
        if self.map.excluded(&x) {
            return false;
        }
        let du = self.map.eval(&x) - self.map.eval(&self.base);
        let tol = self.tol_defect * (1.0 + b.norm_squared());
        (du - b).norm_squared() <= tol && self.h_det(b) > self.det_min
    }

    /// exp(−ρ)·J_nF at F(a,b) on the support, 0 elsewhere (unnormalized).
    pub fn density_raw(&self, b: &DVector<f64>) -> f64 {
        if !self.in_support(b) {
            return 0.0;
        }
        self.measure.density(&self.point(b)) * self.jacobian(b)
    }

    /// Density, divided by the normalization when one is set.
    pub fn density(&self, b: &DVector<f64>) -> f64 {
        self.density_raw(b) / self.normalization.unwrap_or(1.0)
    }

    /// ρ_S = ρ − log J_nF, the leaf potential; `None` off the support.
    pub fn rho_s(&self, b: &DVector<f64>) -> Option<f64> {
        if !self.in_support(b) {
            return None;
        }
        Some(self.measure.rho(&self.point(b)) - self.jacobian(b).ln())
    }

    /// Integral of the raw density over a b-box by stratified Monte Carlo.
    pub fn integrate(&self, lo: &[f64], hi: &[f64], samples: usize, seed: u64) -> (f64, f64) {
        let mut rng = linalg::seeded_rng(seed, linalg::point_hash(&self.base));
        let (mean, se) = stratified_mean(lo, hi, samples, &mut rng, |b| self.density_raw(b));
        let vol = box_volume(lo, hi);
        (mean * vol, se * vol)
    }

    /// Sets the normalization to the integral over the given b-box.
    pub fn normalize(&mut self, lo: &[f64], hi: &[f64], samples: usize, seed: u64) -> Result<f64> {
        let (z, _) = self.integrate(lo, hi, samples, seed);
        if !(z > 0.0) {
            return Err(Error::DegenerateSupport("zero mass in the normalization box".into()));
        }
        self.normalization = Some(z);
        Ok(z)
    }
}

fn box_volume(lo: &[f64], hi: &[f64]) -> f64 {
    lo.iter().zip(hi).map(|(l, h)| h - l).product()
}

/// Jittered-stratified mean of `f` over a box: the box is split into
/// s^d cells (the largest s with s^d ≤ samples), one draw per cell.
/// Returns (mean, standard error estimate).
fn stratified_mean<R: Rng, F: FnMut(&DVector<f64>) -> f64>(
    lo: &[f64],
    hi: &[f64],
    samples: usize,
    rng: &mut R,
    mut f: F,
) -> (f64, f64) {
    let d = lo.len();
    if d == 0 {
        return (f(&DVector::zeros(0)), 0.0);
    }
    let samples = samples.max(1);
    let mut s = (samples as f64).powf(1.0 / d as f64).round() as usize + 1;
    while s > 1 && s.pow(d as u32) > samples {
        s -= 1;
    }
    // one draw per cell; leftover samples would weight some cells twice
    let cells = s.max(1).pow(d as u32);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut b = DVector::zeros(d);
    for k in 0..cells {
        let mut idx = k;
        for j in 0..d {
            let c = idx % s;
            idx /= s;
            let t = (c as f64 + rng.gen::<f64>()) / s as f64;
            b[j] = lo[j] + t * (hi[j] - lo[j]);
        }
        let v = f(&b);
        sum += v;
        sum_sq += v * v;
    }
    let n = cells as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0);
    (mean, (var / n).sqrt())
}

/// Quadrature sizes and tolerances of the mixture check.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct MixtureConfig {
    /// Outer label nodes per chart piece.
    pub n_outer: usize,
    /// Inner samples per label node.
    pub n_inner: usize,
    /// Samples of the direct integral over the bounding box.
    pub n_direct: usize,
    /// Pilot samples in A used for coverage and label/b ranges.
    pub n_pilot: usize,
    /// Largest tolerated fraction of direct mass on points outside every
    /// chart.
    pub max_uncovered: f64,
    /// Relative padding of the pilot ranges.
    pub pad: f64,
    pub floor: f64,
    pub seed: u64,
}

impl Default for MixtureConfig {
    fn default() -> Self {
        Self {
            n_outer: 256,
            n_inner: 4096,
            n_direct: 1 << 18,
            n_pilot: 4096,
            max_uncovered: 0.02,
            pad: 0.1,
            floor: 1e-12,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct MixtureReport {
    pub set_descr: String,
    pub mu_direct: f64,
    pub mu_direct_se: f64,
    pub mu_mixture: f64,
    pub mu_mixture_se: f64,
    pub n_outer: usize,
    pub n_inner: usize,
    pub rel_err: f64,
    /// Standard error of rel_err from both Monte Carlo passes.
    pub rel_err_se: f64,
    pub uncovered_fraction: f64,
    /// Label nodes with positive weight, over all charts.
    pub label_nodes: usize,
}

/// One outer node of the mixture quadrature, for export.
#[derive(Debug, Clone, Serialize)]
pub struct NodeRecord {
    pub chart: usize,
    pub piece: usize,
    pub label: Vec<f64>,
    pub weight: f64,
    pub inner_mass: f64,
    pub inner_se: f64,
    pub b_lo: Vec<f64>,
    pub b_hi: Vec<f64>,
}

struct PieceBox {
    chart: usize,
    piece: usize,
    a_lo: Vec<f64>,
    a_hi: Vec<f64>,
    b_lo: Vec<f64>,
    b_hi: Vec<f64>,
}

fn padded(lo: &mut [f64], hi: &mut [f64], pad: f64) {
    for (l, h) in lo.iter_mut().zip(hi.iter_mut()) {
        let w = (*h - *l).max(1e-9);
        *l -= pad * w;
        *h += pad * w;
    }
}

fn first_chart(charts: &[Chart], x: &Point, upto: usize) -> Option<(usize, usize, DVector<f64>, DVector<f64>)> {
    charts
        .iter()
        .take(upto)
        .enumerate()
        .find_map(|(c, ch)| ch.g_coords(x).ok().map(|(p, a, b)| (c, p, a, b)))
}

/// Compare μ(A) computed directly with the mixture of conditional measures
/// over the charts. Overlapping charts are disjointified first-match-wins.
pub fn mixture_check(
    map: &dyn LipschitzMap,
    measure: Arc<dyn WeightedMeasure>,
    charts: &[Chart],
    region: &Region,
    cfg: &MixtureConfig,
) -> Result<MixtureReport> {
    mixture_check_detailed(map, measure, charts, region, cfg).map(|(r, _)| r)
}

/// As [`mixture_check`], also returning the outer node records.
pub fn mixture_check_detailed(
    map: &dyn LipschitzMap,
    measure: Arc<dyn WeightedMeasure>,
    charts: &[Chart],
    region: &Region,
    cfg: &MixtureConfig,
) -> Result<(MixtureReport, Vec<NodeRecord>)> {
    region.validate()?;
    let n = map.dim_in();
    if region.dim() != n || measure.dim() != n {
        return Err(Error::DimensionError(format!(
            "region, measure and map must share the dimension {n}"
        )));
    }
    let descr = serde_json::to_string(region).unwrap_or_default();
    let Some((lo, hi)) = region.bbox() else {
        return Ok((
            MixtureReport {
                set_descr: descr,
                mu_direct: 0.0,
                mu_direct_se: 0.0,
                mu_mixture: 0.0,
                mu_mixture_se: 0.0,
                n_outer: cfg.n_outer,
                n_inner: cfg.n_inner,
                rel_err: 0.0,
                rel_err_se: 0.0,
                uncovered_fraction: 0.0,
                label_nodes: 0,
            },
            vec![],
        ));
    };

    // direct pass, parallel over fixed blocks
    let blocks = 64usize;
    let per_block = cfg.n_direct.div_ceil(blocks).max(1);
    let parts: Vec<(f64, f64)> = (0..blocks)
        .into_par_iter()
        .map(|blk| {
            let mut rng = linalg::seeded_rng(cfg.seed, 0xD1 ^ ((blk as u64) << 8));
            stratified_mean(&lo, &hi, per_block, &mut rng, |x| {
                if region.contains(x) {
                    measure.density(x)
                } else {
                    0.0
                }
            })
        })
        .collect();
    let vol = box_volume(&lo, &hi);
    let mu_direct = parts.iter().map(|p| p.0).sum::<f64>() / blocks as f64 * vol;
    let mu_direct_se = parts.iter().map(|p| p.1 * p.1).sum::<f64>().sqrt() / blocks as f64 * vol;

    // pilot pass: coverage and label/b ranges per piece
    let pilot: Vec<(Point, f64)> = {
        let mut rng = linalg::seeded_rng(cfg.seed, 0x9110);
        let mut pts = Vec::with_capacity(cfg.n_pilot);
        let mut tries = 0usize;
        while pts.len() < cfg.n_pilot && tries < 1000 * cfg.n_pilot.max(1) {
            tries += 1;
            let x = DVector::from_fn(n, |i, _| rng.gen_range(lo[i]..=hi[i]));
            if region.contains(&x) {
                let w = measure.density(&x);
                pts.push((x, w));
            }
        }
        pts
    };
    let located: Vec<Option<(usize, usize, DVector<f64>, DVector<f64>)>> = pilot
        .par_iter()
        .map(|(x, _)| first_chart(charts, x, charts.len()))
        .collect();
    let total_w: f64 = pilot.iter().map(|p| p.1).sum();
    let miss_w: f64 = pilot
        .iter()
        .zip(&located)
        .filter(|(_, l)| l.is_none())
        .map(|(p, _)| p.1)
        .sum();
    // + 0.0 turns the -0.0 of an empty float sum into 0.0
    let uncovered_fraction = if total_w > 0.0 { miss_w / total_w + 0.0 } else { 0.0 };
    if uncovered_fraction > cfg.max_uncovered {
        return Err(Error::CoverageGap {
            fraction: uncovered_fraction,
            limit: cfg.max_uncovered,
        });
    }
    let mut boxes: Vec<PieceBox> = Vec::new();
    for (c, p, a, b) in located.iter().flatten() {
        let entry = match boxes.iter_mut().find(|pb| pb.chart == *c && pb.piece == *p) {
            Some(e) => e,
            None => {
                boxes.push(PieceBox {
                    chart: *c,
                    piece: *p,
                    a_lo: a.iter().cloned().collect(),
                    a_hi: a.iter().cloned().collect(),
                    b_lo: b.iter().cloned().collect(),
                    b_hi: b.iter().cloned().collect(),
                });
                boxes.last_mut().expect("just pushed")
            }
        };
        for (i, v) in a.iter().enumerate() {
            entry.a_lo[i] = entry.a_lo[i].min(*v);
            entry.a_hi[i] = entry.a_hi[i].max(*v);
        }
        for (i, v) in b.iter().enumerate() {
            entry.b_lo[i] = entry.b_lo[i].min(*v);
            entry.b_hi[i] = entry.b_hi[i].max(*v);
        }
    }
    boxes.sort_by_key(|pb| (pb.chart, pb.piece));
    for pb in boxes.iter_mut() {
        padded(&mut pb.a_lo, &mut pb.a_hi, cfg.pad);
        padded(&mut pb.b_lo, &mut pb.b_hi, cfg.pad);
    }

    // mixture pass: outer midpoint grid over labels, inner stratified MC
    struct Node {
        chart: usize,
        piece: usize,
        label: DVector<f64>,
        weight: f64,
        b_lo: Vec<f64>,
        b_hi: Vec<f64>,
    }
    let mut nodes: Vec<Node> = Vec::new();
    for pb in &boxes {
        let k = pb.a_lo.len();
        let per = if k == 0 {
            1
        } else {
            ((cfg.n_outer as f64).powf(1.0 / k as f64).round() as usize).max(1)
        };
        let count = per.pow(k as u32);
        let cell = box_volume(&pb.a_lo, &pb.a_hi) / count as f64;
        for idx in 0..count {
            let mut rem = idx;
            let label = DVector::from_fn(k, |i, _| {
                let c = rem % per;
                rem /= per;
                pb.a_lo[i] + (c as f64 + 0.5) / per as f64 * (pb.a_hi[i] - pb.a_lo[i])
            });
            nodes.push(Node {
                chart: pb.chart,
                piece: pb.piece,
                label,
                weight: if k == 0 { 1.0 } else { cell },
                b_lo: pb.b_lo.clone(),
                b_hi: pb.b_hi.clone(),
            });
        }
    }
    let records: Vec<Option<NodeRecord>> = nodes
        .par_iter()
        .enumerate()
        .map(|(i, node)| {
            let chart = &charts[node.chart];
            let v = chart.section(node.piece, &node.label).ok()?;
            if chart.locate(&v) != Some(node.piece) {
                return None;
            }
            let cond = conditional_density(chart, node.piece, &node.label, measure.clone()).ok()?;
            let mut rng = linalg::seeded_rng(cfg.seed, 0x1EAF ^ ((i as u64) << 16));
            let (mean, se) = stratified_mean(&node.b_lo, &node.b_hi, cfg.n_inner, &mut rng, |b| {
                let x = cond.point(b);
                if !region.contains(&x) {
                    return 0.0;
                }
                if node.chart > 0 && first_chart(charts, &x, node.chart).is_some() {
                    return 0.0;
                }
                cond.density_raw(b)
            });
            let bvol = box_volume(&node.b_lo, &node.b_hi);
            Some(NodeRecord {
                chart: node.chart,
                piece: node.piece,
                label: node.label.iter().cloned().collect(),
                weight: node.weight,
                inner_mass: mean * bvol,
                inner_se: se * bvol,
                b_lo: node.b_lo.clone(),
                b_hi: node.b_hi.clone(),
            })
        })
        .collect();
    let records: Vec<NodeRecord> = records.into_iter().flatten().collect();
    let mu_mixture: f64 = records.iter().map(|r| r.weight * r.inner_mass).sum();
    let mu_mixture_se = records
        .iter()
        .map(|r| (r.weight * r.inner_se).powi(2))
        .sum::<f64>()
        .sqrt();
    let denom = mu_direct.max(cfg.floor);
    let rel_err = (mu_direct - mu_mixture).abs() / denom;
    let rel_err_se = (mu_direct_se.powi(2) + mu_mixture_se.powi(2)).sqrt() / denom;
    Ok((
        MixtureReport {
            set_descr: descr,
            mu_direct,
            mu_direct_se,
            mu_mixture,
            mu_mixture_se,
            n_outer: cfg.n_outer,
            n_inner: cfg.n_inner,
            rel_err,
            rel_err_se,
            uncovered_fraction,
            label_nodes: records.len(),
        },
        records,
    ))
}

/// Draw `count` leaf points distributed by the normalized conditional
/// density restricted to the b-box [lo, hi], by rejection against the
/// uniform proposal.
pub fn sample_leaf_measure(
    cond: &ConditionalDensity,
    lo: &[f64],
    hi: &[f64],
    count: usize,
    seed: u64,
) -> Result<Vec<Point>> {
    if lo.len() != cond.m() || hi.len() != cond.m() {
        return Err(Error::DimensionError(format!("b-box must lie in R^{}", cond.m())));
    }
    if lo.iter().zip(hi).any(|(l, h)| !(h > l)) {
        return Err(Error::DegenerateSupport("empty b-box".into()));
    }
    let mut rng = linalg::seeded_rng(seed, linalg::point_hash(&cond.base));
    let draw = |rng: &mut rand_chacha::ChaCha8Rng| {
        DVector::from_fn(lo.len(), |i, _| rng.gen_range(lo[i]..hi[i]))
    };
    let mut bound: f64 = 0.0;
    for _ in 0..4096 {
        let b = draw(&mut rng);
        bound = bound.max(cond.density_raw(&b));
    }
    if !(bound > 0.0) {
        return Err(Error::DegenerateSupport("density vanishes on the b-box".into()));
    }
    bound *= 1.2;
    let mut out = Vec::with_capacity(count);
    let mut proposed = 0usize;
    let min_trials = 10_000usize;
    while out.len() < count {
        proposed += 1;
        let b = draw(&mut rng);
        let d = cond.density_raw(&b);
        if d > bound {
            log::warn!("rejection bound exceeded ({d} > {bound}); raising it");
            bound = d * 1.2;
        }
        if rng.gen::<f64>() * bound < d {
            out.push(cond.point(&b));
        }
        if proposed >= min_trials && (out.len() as f64) < 1e-4 * proposed as f64 {
            return Err(Error::DegenerateSupport(format!(
                "acceptance rate {:e} below 1e-4",
                out.len() as f64 / proposed as f64
            )));
        }
    }
    Ok(out)
}
