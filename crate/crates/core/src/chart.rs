//! Change of variables on a cluster of m-dimensional leaves.
//!
//! A chart fixes a level s ∈ R^m and a table of anchors z_i with u(z_i) = s.
//! Each anchor owns a piece of the level set: a local section v_i solved by
//! Newton's method in the tangent frame of z_i, labelled by coordinates in
//! the transverse frame W_i. A point x on an m-leaf maps to
//! G(x) = (label of z, u(x) − u(z)) with z = x + Du(x)ᵀ(s − u(x)), and back
//! through F(a, b) = v(a) + Du(v(a))ᵀb.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::leafdetect::{self, ser_matrix, ser_vec, DetectConfig, LeafModel};
use crate::linalg::{self, Point};
use crate::lipmap::{hessian_of, jacobian_of, LipschitzMap};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ChartConfig {
    /// Anchors whose leaf has σ below this are dropped.
    pub j_min: f64,
    /// λ of the sets T^λ used for the Lipschitz check of G.
    pub lambda_cut: f64,
    /// Residual bound for u(z) = s at anchors.
    pub level_tol: f64,
    pub newton_tol: f64,
    pub newton_iters: usize,
    /// Anchors closer than this are merged.
    pub dedupe: f64,
    /// Tolerance on the tangent-coordinate residual in leaf membership.
    pub member_residual: f64,
    /// Level-set points farther than this from every anchor are not in
    /// the chart. Unbounded by default: the nearest anchor's section decides.
    pub cell_radius: Option<f64>,
    /// det H(b) at or below this is reported as singular.
    pub det_min: f64,
    pub detect: DetectConfig,
}

impl Default for ChartConfig {
    fn default() -> Self {
        Self {
            j_min: 0.05,
            lambda_cut: 0.5,
            level_tol: 1e-8,
            newton_tol: 1e-10,
            newton_iters: 50,
            dedupe: 1e-7,
            member_residual: 1e-6,
            cell_radius: None,
            det_min: 1e-8,
            detect: DetectConfig::default(),
        }
    }
}

/// One anchor of a chart.
#[derive(Debug, Clone, Serialize)]
pub struct ChartBase {
    #[serde(serialize_with = "ser_vec")]
    pub a: DVector<f64>,
    #[serde(serialize_with = "ser_vec")]
    pub z: Point,
    /// n×(n−m) orthonormal frame of the leaf normal space at z.
    #[serde(serialize_with = "ser_matrix")]
    pub transverse: DMatrix<f64>,
    pub leaf: LeafModel,
}

#[derive(Clone, Serialize)]
pub struct Chart {
    #[serde(serialize_with = "ser_vec")]
    pub level_s: DVector<f64>,
    pub bases: Vec<ChartBase>,
    pub j_min: f64,
    pub lambda_cut: f64,
    pub cell_radius: f64,
    /// Seeds that produced no anchor, with the reason.
    pub rejected: Vec<(Vec<f64>, String)>,
    #[serde(skip)]
    pub cfg: ChartConfig,
    #[serde(skip)]
    map: Arc<dyn LipschitzMap>,
}

impl std::fmt::Debug for Chart {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Chart")
            .field("map", &self.map.name())
            .field("level_s", &self.level_s.as_slice())
            .field("bases", &self.bases.len())
            .finish()
    }
}

/// Image of a point under G.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChartPointImage {
    pub piece: usize,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub jacobian_f: f64,
}

fn det_or_one(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        1.0
    } else {
        m.determinant()
    }
}

/// Rotate the columns of `w` to best match `reference` (orthogonal
/// Procrustes), so that labels vary continuously across anchors.
fn align_frame(w: &DMatrix<f64>, reference: &DMatrix<f64>) -> DMatrix<f64> {
    if w.ncols() == 0 {
        return w.clone();
    }
    let svd = linalg::sorted_svd(&(w.transpose() * reference));
    w * (&svd.left * svd.right.transpose())
}

fn solve_level_along_leaf(
    map: &dyn LipschitzMap,
    leaf: &LeafModel,
    level: &DVector<f64>,
    cfg: &ChartConfig,
) -> Result<Point> {
    let unreachable = || Error::LevelUnreachable {
        level: level.iter().cloned().collect(),
        seed: leaf.base.iter().cloned().collect(),
    };
    let delta = level - map.eval(&leaf.base);
    let c = leaf.isometry_factor.transpose() * &delta;
    if (&leaf.isometry_factor * &c - &delta).norm() > cfg.level_tol {
        return Err(unreachable());
    }
    let dist = c.norm();
    if dist > 0.0 {
        let dir = &leaf.tangent_frame * &c / dist;
        let img = &delta / dist;
        let (reach, clamped) = leafdetect::radial_extent(map, &leaf.base, &dir, &img, &cfg.detect);
        if !clamped && dist > reach {
            return Err(unreachable());
        }
    }
    let z = &leaf.base + &leaf.tangent_frame * c;
    if (map.eval(&z) - level).norm() > cfg.level_tol {
        return Err(unreachable());
    }
    Ok(z)
}

/// Build a chart at `level_s` from seeds lying on m-dimensional leaves.
/// Each seed is moved along its leaf to the level set; anchors too close to
/// the leaf boundary (σ < j_min) or duplicating an earlier anchor are
/// dropped.
pub fn build_chart(
    map: Arc<dyn LipschitzMap>,
    level_s: &DVector<f64>,
    seeds: &[Point],
    cfg: &ChartConfig,
) -> Result<Chart> {
    let m = map.dim_out();
    let n = map.dim_in();
    if level_s.len() != m {
        return Err(Error::DimensionError(format!(
            "level has length {}, map has m = {m}",
            level_s.len()
        )));
    }
    if seeds.iter().any(|s| s.len() != n) {
        return Err(Error::DimensionError(format!("seeds must lie in R^{n}")));
    }
    let mut bases: Vec<ChartBase> = Vec::new();
    let mut rejected = Vec::new();
    let mut reference: Option<DMatrix<f64>> = None;
    for seed in seeds {
        let attempt = (|| -> Result<Option<ChartBase>> {
            let leaf = leafdetect::trace_leaf(map.as_ref(), seed, &cfg.detect)?;
            if leaf.dim != m {
                return Err(Error::DimensionError(format!(
                    "seed lies on a leaf of dimension {} < m",
                    leaf.dim
                )));
            }
            let z = solve_level_along_leaf(map.as_ref(), &leaf, level_s, cfg)?;
            if bases.iter().any(|b| (&b.z - &z).norm() <= cfg.dedupe) {
                return Ok(None);
            }
            let leaf = leafdetect::trace_leaf(map.as_ref(), &z, &cfg.detect)?;
            if leaf.sigma < cfg.j_min {
                return Err(Error::NotInterior(z.iter().cloned().collect()));
            }
            let mut w = linalg::orthonormal_complement(&leaf.tangent_frame);
            match &reference {
                Some(r) => w = align_frame(&w, r),
                None => reference = Some(w.clone()),
            }
            Ok(Some(ChartBase {
                a: w.transpose() * &z,
                z,
                transverse: w,
                leaf,
            }))
        })();
        match attempt {
            Ok(Some(b)) => bases.push(b),
            Ok(None) => {}
            Err(e) => {
                log::debug!("seed {:?} rejected: {e}", seed.as_slice());
                rejected.push((seed.iter().cloned().collect(), e.to_string()));
            }
        }
    }
    if bases.is_empty() {
        if seeds.len() == 1 && !rejected.is_empty() {
            // a single seed reports its own reason
            let seed = &seeds[0];
            if let Err(e) = leafdetect::trace_leaf(map.as_ref(), seed, &cfg.detect)
                .and_then(|leaf| solve_level_along_leaf(map.as_ref(), &leaf, level_s, cfg))
            {
                return Err(e);
            }
        }
        return Err(Error::EmptyChart);
    }
    let cell_radius = cfg.cell_radius.unwrap_or(f64::INFINITY);
    Ok(Chart {
        level_s: level_s.clone(),
        bases,
        j_min: cfg.j_min,
        lambda_cut: cfg.lambda_cut,
        cell_radius,
        rejected,
        cfg: cfg.clone(),
        map,
    })
}

/// Charts for several levels, built in parallel.
pub fn build_charts(
    map: Arc<dyn LipschitzMap>,
    levels: &[(DVector<f64>, Vec<Point>)],
    cfg: &ChartConfig,
) -> Vec<Result<Chart>> {
    levels
        .par_iter()
        .map(|(s, seeds)| build_chart(map.clone(), s, seeds, cfg))
        .collect()
}

impl Chart {
    pub fn map(&self) -> &Arc<dyn LipschitzMap> {
        &self.map
    }

    pub fn n(&self) -> usize {
        self.map.dim_in()
    }

    pub fn m(&self) -> usize {
        self.map.dim_out()
    }

    fn piece(&self, piece: usize) -> Result<&ChartBase> {
        self.bases
            .get(piece)
            .ok_or_else(|| Error::Config(format!("chart has no piece {piece}")))
    }

    fn check_label(&self, a: &DVector<f64>) -> Result<()> {
        if a.len() != self.n() - self.m() {
            return Err(Error::DimensionError(format!(
                "label has length {}, expected {}",
                a.len(),
                self.n() - self.m()
            )));
        }
        Ok(())
    }

    /// The section v_i(a): the point of the level set with transverse
    /// coordinates a near anchor i.
    pub fn section(&self, piece: usize, a: &DVector<f64>) -> Result<Point> {
        self.check_label(a)?;
        let base = self.piece(piece)?;
        let frame = &base.leaf.tangent_frame;
        let origin = &base.z + &base.transverse * (a - &base.a);
        let mut c = DVector::zeros(self.m());
        let scale = 1.0 + self.level_s.norm();
        let mut resid = f64::INFINITY;
        for _ in 0..self.cfg.newton_iters {
            let z = &origin + frame * &c;
            if self.map.excluded(&z) {
                return Err(Error::Newton(format!("section left the domain at {:?}", z.as_slice())));
            }
            let r = self.map.eval(&z) - &self.level_s;
            resid = r.norm();
            if resid <= 1e-14 * scale {
                break;
            }
            let jac = jacobian_of(self.map.as_ref(), &z) * frame;
            let step = jac
                .lu()
                .solve(&r)
                .ok_or_else(|| Error::Newton("singular Newton matrix".into()))?;
            c -= &step;
            if step.norm() <= 1e-15 * (1.0 + c.norm()) {
                let z = &origin + frame * &c;
                resid = (self.map.eval(&z) - &self.level_s).norm();
                break;
            }
        }
        if !(resid <= self.cfg.newton_tol * scale) {
            return Err(Error::Newton(format!("residual {resid:e} after {} iterations", self.cfg.newton_iters)));
        }
        Ok(&origin + frame * c)
    }

    /// Dv(a), n×(n−m), by implicit differentiation of u(v(a)) = s.
    pub fn section_derivative(&self, piece: usize, v: &Point) -> Result<DMatrix<f64>> {
        let base = self.piece(piece)?;
        let frame = &base.leaf.tangent_frame;
        let du = jacobian_of(self.map.as_ref(), v);
        let a = &du * frame;
        let rhs = &du * &base.transverse;
        let sol = a
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Newton("singular section derivative".into()))?;
        Ok(&base.transverse - frame * sol)
    }

    /// Index of the anchor whose cell contains the level-set point z:
    /// nearest anchor within the cell radius, earliest on ties.
    pub fn locate(&self, z: &Point) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, b) in self.bases.iter().enumerate() {
            let d = (&b.z - z).norm();
            if d <= self.cell_radius && best.map_or(true, |(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        best.map(|(i, _)| i)
    }

    /// G(x) together with J_nF at G(x).
    pub fn map_g(&self, x: &Point) -> Result<ChartPointImage> {
        let (piece, a, b) = self.g_coords(x)?;
        let jacobian_f = self.jacobian_f(piece, &a, &b)?;
        Ok(ChartPointImage {
            piece,
            a: a.iter().cloned().collect(),
            b: b.iter().cloned().collect(),
            jacobian_f,
        })
    }

    /// G(x) without the Jacobian: (piece, a, b).
    pub fn g_coords(&self, x: &Point) -> Result<(usize, DVector<f64>, DVector<f64>)> {
        let no_leaf = || Error::NoLeaf(x.iter().cloned().collect());
        if x.len() != self.n() {
            return Err(Error::DimensionError(format!("point must lie in R^{}", self.n())));
        }
        if self.map.excluded(x) {
            return Err(no_leaf());
        }
        let ux = self.map.eval(x);
        let du = jacobian_of(self.map.as_ref(), x);
        let z = x + du.transpose() * (&self.level_s - &ux);
        if self.map.excluded(&z) {
            return Err(no_leaf());
        }
        let dist2 = (x - &z).norm_squared();
        let defect = crate::lipmap::isometry_defect(self.map.as_ref(), x, &z);
        if !(defect <= self.cfg.detect.tol_defect * (1.0 + dist2)) {
            return Err(no_leaf());
        }
        if !((self.map.eval(&z) - &self.level_s).norm() <= self.cfg.member_residual) {
            return Err(no_leaf());
        }
        let piece = self.locate(&z).ok_or_else(no_leaf)?;
        let a = self.bases[piece].transverse.transpose() * &z;
        let v = self.section(piece, &a).map_err(|_| no_leaf())?;
        if (&v - &z).norm() > self.cfg.member_residual {
            return Err(no_leaf());
        }
        let b = ux - self.map.eval(&v);
        Ok((piece, a, b))
    }

    /// Minkowski functional of u(S) − u(v(a)) at b for the leaf through
    /// v(a), by bisection along the leaf ray.
    pub fn gamma(&self, piece: usize, a: &DVector<f64>, b: &DVector<f64>) -> Result<f64> {
        let v = self.section(piece, a)?;
        Ok(self.gamma_at(&v, b))
    }

    fn gamma_at(&self, v: &Point, b: &DVector<f64>) -> f64 {
        let nb = b.norm();
        if nb == 0.0 {
            return 0.0;
        }
        let du = jacobian_of(self.map.as_ref(), v);
        let dir = du.transpose() * b / nb;
        let (reach, clamped) =
            leafdetect::radial_extent(self.map.as_ref(), v, &dir, &(b / nb), &self.cfg.detect);
        if clamped {
            0.0
        } else if reach == 0.0 {
            f64::INFINITY
        } else {
            nb / reach
        }
    }

    /// F(a, b) = v(a) + Du(v(a))ᵀb for b inside the leaf image.
    pub fn map_f(&self, piece: usize, a: &DVector<f64>, b: &DVector<f64>) -> Result<Point> {
        let v = self.section(piece, a)?;
        if b.len() != self.m() {
            return Err(Error::DimensionError(format!("b must lie in R^{}", self.m())));
        }
        let g = self.gamma_at(&v, b);
        if !(g < 1.0) {
            return Err(Error::OutsideLeaf(b.iter().cloned().collect(), g));
        }
        Ok(self.f_unchecked(&v, b))
    }

    /// F without the support check, for finite differencing.
    pub fn f_raw(&self, piece: usize, a: &DVector<f64>, b: &DVector<f64>) -> Result<Point> {
        let v = self.section(piece, a)?;
        Ok(self.f_unchecked(&v, b))
    }

    fn f_unchecked(&self, v: &Point, b: &DVector<f64>) -> Point {
        v + jacobian_of(self.map.as_ref(), v).transpose() * b
    }

    /// Orthonormal frame of the normal space at v: complement of the row
    /// space of Du(v).
    fn normal_frame(&self, v: &Point) -> DMatrix<f64> {
        let du = jacobian_of(self.map.as_ref(), v);
        let svd = linalg::sorted_svd(&du);
        linalg::orthonormal_complement(&svd.right)
    }

    /// Wᵀ M(b) W with M(b) = Σ_j b_j D²u_j(v) and W the normal frame at v.
    fn curvature_block(&self, v: &Point, w: &DMatrix<f64>, b: &DVector<f64>) -> DMatrix<f64> {
        let hess = hessian_of(self.map.as_ref(), v);
        let n = self.n();
        let mb = hess
            .iter()
            .zip(b.iter())
            .fold(DMatrix::zeros(n, n), |acc, (h, bj)| acc + h * *bj);
        w.transpose() * mb * w
    }

    /// H(b) = Id + P⊥ D²u(v(a))(P⊥ ·)(b) on an orthonormal basis of the
    /// normal space, (n−m)×(n−m).
    pub fn h_matrix(&self, piece: usize, a: &DVector<f64>, b: &DVector<f64>) -> Result<DMatrix<f64>> {
        let v = self.section(piece, a)?;
        let w = self.normal_frame(&v);
        let k = w.ncols();
        Ok(DMatrix::identity(k, k) + self.curvature_block(&v, &w, b))
    }

    /// The operator A with P⊥D²u(P⊥·)(b′) = A·H(b), on the normal space.
    pub fn operator_a(
        &self,
        piece: usize,
        a: &DVector<f64>,
        b: &DVector<f64>,
        b_prime: &DVector<f64>,
    ) -> Result<DMatrix<f64>> {
        let v = self.section(piece, a)?;
        let w = self.normal_frame(&v);
        let k = w.ncols();
        let h = DMatrix::identity(k, k) + self.curvature_block(&v, &w, b);
        let k_prime = self.curvature_block(&v, &w, b_prime);
        let h_inv = h
            .try_inverse()
            .ok_or_else(|| Error::SingularH(0.0))?;
        Ok(k_prime * h_inv)
    }

    /// J_nF(a, b) = |det(P⊥Dv(a))|·det H(b).
    pub fn jacobian_f(&self, piece: usize, a: &DVector<f64>, b: &DVector<f64>) -> Result<f64> {
        let v = self.section(piece, a)?;
        self.jacobian_f_at(piece, &v, b)
    }

    pub(crate) fn jacobian_f_at(&self, piece: usize, v: &Point, b: &DVector<f64>) -> Result<f64> {
        let w = self.normal_frame(v);
        let k = w.ncols();
        let dv = self.section_derivative(piece, v)?;
        let dv_det = det_or_one(&(w.transpose() * dv)).abs();
        let h = DMatrix::identity(k, k) + self.curvature_block(v, &w, b);
        let h_det = det_or_one(&h);
        if !(h_det > self.cfg.det_min) {
            return Err(Error::SingularH(h_det));
        }
        Ok(dv_det * h_det)
    }

    /// |det DF(a, b)| by central differences of the full map F.
    pub fn jacobian_f_brute(&self, piece: usize, a: &DVector<f64>, b: &DVector<f64>, h: f64) -> Result<f64> {
        let n = self.n();
        let k = n - self.m();
        let mut df = DMatrix::zeros(n, n);
        for j in 0..n {
            let (mut ap, mut am) = (a.clone(), a.clone());
            let (mut bp, mut bm) = (b.clone(), b.clone());
            if j < k {
                ap[j] += h;
                am[j] -= h;
            } else {
                bp[j - k] += h;
                bm[j - k] -= h;
            }
            let col = (self.f_raw(piece, &ap, &bp)? - self.f_raw(piece, &am, &bm)?) / (2.0 * h);
            df.set_column(j, &col);
        }
        Ok(df.determinant().abs())
    }

    /// Distance from x to the relative boundary of its leaf (σ at x).
    pub fn boundary_distance(&self, x: &Point) -> Result<f64> {
        Ok(leafdetect::trace_leaf(self.map.as_ref(), x, &self.cfg.detect)?.sigma)
    }

    /// Membership in T^λ: x lies in the chart and farther than λ from the
    /// boundary of its leaf.
    pub fn in_t_lambda(&self, x: &Point, lambda: f64) -> bool {
        self.g_coords(x).is_ok() && self.boundary_distance(x).map_or(false, |d| d > lambda)
    }
}
