//! Curvature-dimension checks.
//!
//! Ambient: Ric_{μ,N}(v,v) = D²ρ(v,v) − (Dρ·v)²/(N−n) ≥ κ‖v‖² (flat R^n).
//! Leaf: the same with ρ_S = ρ − log J_nF∘G in leaf coordinates and N−m.
//! N = ∞ drops the quadratic term.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::chart::Chart;
use crate::disintegrate::{conditional_density, ConditionalDensity};
use crate::error::{Error, Result};
use crate::linalg::{self, Point};
use crate::lipmap::{CdParams, WeightedMeasure};

pub const TOL_CD: f64 = 1e-5;

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct CdReport {
    pub params: CdParams,
    pub worst_margin: f64,
    pub worst_point: Vec<f64>,
    pub worst_dir: Vec<f64>,
    pub n_checked: usize,
    pub tol_cd: f64,
    pub pass: bool,
}

/// Ric_{μ,N}(v,v) − κ‖v‖² from the directional derivatives of the
/// potential.
pub fn margin(params: &CdParams, first: f64, second: f64, dim: usize, norm_sq: f64) -> f64 {
    let quad = if params.is_infinite() {
        0.0
    } else {
        first * first / (params.n_eff - dim as f64)
    };
    second - quad - params.kappa * norm_sq
}

fn directions<R: Rng>(dim: usize, extra: usize, rng: &mut R) -> Vec<DVector<f64>> {
    let mut out: Vec<DVector<f64>> = (0..dim)
        .map(|i| {
            let mut e = DVector::zeros(dim);
            e[i] = 1.0;
            e
        })
        .collect();
    out.extend((0..extra).map(|_| linalg::random_unit(rng, dim)));
    out
}

struct Worst {
    margin: f64,
    point: Vec<f64>,
    dir: Vec<f64>,
}

fn fold_worst(items: Vec<Vec<(f64, Vec<f64>, Vec<f64>)>>) -> (Worst, usize) {
    let mut worst = Worst {
        margin: f64::INFINITY,
        point: vec![],
        dir: vec![],
    };
    let mut count = 0;
    for (m, p, d) in items.into_iter().flatten() {
        count += 1;
        if m < worst.margin {
            worst = Worst { margin: m, point: p, dir: d };
        }
    }
    (worst, count)
}

fn report(params: CdParams, worst: Worst, n_checked: usize, tol: f64) -> CdReport {
    CdReport {
        params,
        pass: worst.margin >= -tol,
        worst_margin: worst.margin,
        worst_point: worst.point,
        worst_dir: worst.dir,
        n_checked,
        tol_cd: tol,
    }
}

fn require_constant_rho(measure: &dyn WeightedMeasure, samples: &[Point]) -> Result<()> {
    for x in samples {
        let g = measure.grad_rho(x);
        if g.norm() > 1e-12 {
            return Err(Error::NonConstantRho(x.iter().cloned().collect()));
        }
    }
    Ok(())
}

/// CD(κ, N) of the ambient measure over samples × (coordinate + random)
/// unit directions.
pub fn check_ambient_cd(
    measure: &dyn WeightedMeasure,
    params: &CdParams,
    samples: &[Point],
    dirs_per_point: usize,
    seed: u64,
) -> Result<CdReport> {
    params.validate()?;
    let n = measure.dim();
    if params.n_dim != n {
        return Err(Error::DimensionError(format!(
            "params are for dimension {}, measure lives in R^{n}",
            params.n_dim
        )));
    }
    if samples.is_empty() {
        return Err(Error::Config("cd check needs samples".into()));
    }
    if params.n_eff == n as f64 {
        require_constant_rho(measure, samples)?;
    }
    let items: Vec<Vec<(f64, Vec<f64>, Vec<f64>)>> = samples
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let mut rng = linalg::seeded_rng(seed, i as u64);
            let g = measure.grad_rho(x);
            let h = measure.hess_rho(x);
            directions(n, dirs_per_point, &mut rng)
                .into_iter()
                .map(|v| {
                    let second = (v.transpose() * &h * &v)[0];
                    let m = if params.n_eff == n as f64 {
                        second - params.kappa
                    } else {
                        margin(params, g.dot(&v), second, n, 1.0)
                    };
                    (m, x.iter().cloned().collect(), v.iter().cloned().collect())
                })
                .collect()
        })
        .collect();
    let (worst, count) = fold_worst(items);
    Ok(report(*params, worst, count, TOL_CD))
}

/// First and second directional derivatives of ρ_S at b along q by central
/// differences with step h. Fails when the stencil leaves the support.
pub fn leaf_derivatives(cond: &ConditionalDensity, b: &DVector<f64>, q: &DVector<f64>, h: f64) -> Result<(f64, f64)> {
    let at = |t: f64| {
        let bt = b + q * t;
        cond.rho_s(&bt)
            .ok_or_else(|| Error::BoundaryContact(cond.point(&bt).iter().cloned().collect()))
    };
    let (fm, f0, fp) = (at(-h)?, at(0.0)?, at(h)?);
    Ok(((fp - fm) / (2.0 * h), (fp - 2.0 * f0 + fm) / (h * h)))
}

/// Options of the leaf check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeafCdOptions {
    pub dirs: usize,
    /// Stencil step relative to min(1, σ of the anchor).
    pub rel_step: f64,
    pub seed: u64,
    pub tol: f64,
}

impl Default for LeafCdOptions {
    fn default() -> Self {
        Self {
            dirs: 8,
            rel_step: 1e-4,
            seed: 0,
            tol: TOL_CD,
        }
    }
}

/// CD(κ, N) of the conditional measures on the leaves through the sample
/// points, with dimension m.
pub fn check_leaf_cd(
    chart: &Chart,
    measure: Arc<dyn WeightedMeasure>,
    params: &CdParams,
    samples: &[Point],
    opts: &LeafCdOptions,
) -> Result<CdReport> {
    params.validate()?;
    let n = chart.n();
    let m = chart.m();
    if params.n_dim != n || measure.dim() != n {
        return Err(Error::DimensionError(format!(
            "params/measure dimension must equal the ambient dimension {n}"
        )));
    }
    if samples.is_empty() {
        return Err(Error::Config("cd check needs samples".into()));
    }
    if params.n_eff == n as f64 {
        require_constant_rho(measure.as_ref(), samples)?;
    }
    let per_point: Vec<Result<Vec<(f64, Vec<f64>, Vec<f64>)>>> = samples
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let (piece, a, b) = chart.g_coords(x)?;
            let cond = conditional_density(chart, piece, &a, measure.clone())?;
            let h = opts.rel_step * chart.bases[piece].leaf.sigma.min(1.0);
            let mut rng = linalg::seeded_rng(opts.seed, i as u64);
            directions(m, opts.dirs, &mut rng)
                .into_iter()
                .map(|q| {
                    let (d1, d2) = leaf_derivatives(&cond, &b, &q, h)?;
                    // q is a unit vector in image coordinates, hence unit on the leaf
                    let mg = margin(params, d1, d2, m, 1.0);
                    let dir = (&cond.frame * &q).iter().cloned().collect();
                    Ok((mg, x.iter().cloned().collect(), dir))
                })
                .collect()
        })
        .collect();
    let items = per_point.into_iter().collect::<Result<Vec<_>>>()?;
    let (worst, count) = fold_worst(items);
    Ok(report(*params, worst, count, opts.tol))
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct LogConcavityReport {
    pub min_second_difference_of_neg_log: f64,
    pub n_checked: usize,
    pub pass: bool,
}

/// Second differences of −log f along the coordinate grid lines of the box
/// [lo, hi] with `grid_n` nodes per axis, scaled by 1/h².
pub fn check_needle_logconcavity<F>(density: F, lo: &[f64], hi: &[f64], grid_n: usize) -> Result<LogConcavityReport>
where
    F: Fn(&DVector<f64>) -> f64,
{
    let d = lo.len();
    if grid_n < 3 || d == 0 || hi.len() != d {
        return Err(Error::Config("log-concavity grid needs ≥ 3 nodes and a box".into()));
    }
    let step: Vec<f64> = (0..d).map(|j| (hi[j] - lo[j]) / (grid_n - 1) as f64).collect();
    let node = |idx: &[usize]| DVector::from_fn(d, |j, _| lo[j] + idx[j] as f64 * step[j]);
    let neg_log = |x: &DVector<f64>| {
        let f = density(x);
        if f > 0.0 && f.is_finite() {
            Ok(-f.ln())
        } else {
            Err(Error::BoundaryContact(x.iter().cloned().collect()))
        }
    };
    let total = grid_n.pow(d as u32);
    let mut min_sd = f64::INFINITY;
    let mut count = 0;
    let mut idx = vec![0usize; d];
    for flat in 0..total {
        let mut r = flat;
        for v in idx.iter_mut() {
            *v = r % grid_n;
            r /= grid_n;
        }
        let x = node(&idx);
        let f0 = neg_log(&x)?;
        for j in 0..d {
            if idx[j] == 0 || idx[j] + 1 == grid_n {
                continue;
            }
            let mut ip = idx.clone();
            ip[j] += 1;
            let mut im = idx.clone();
            im[j] -= 1;
            let sd = (neg_log(&node(&ip))? - 2.0 * f0 + neg_log(&node(&im))?) / (step[j] * step[j]);
            min_sd = min_sd.min(sd);
            count += 1;
        }
    }
    Ok(LogConcavityReport {
        min_second_difference_of_neg_log: min_sd,
        n_checked: count,
        pass: min_sd >= -TOL_CD,
    })
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct TraceInequalityReport {
    pub instances: usize,
    pub scalar_violations: usize,
    pub trace_violations: usize,
    /// Smallest relative slack of x²/a + y²/b ≥ (x−y)²/(a+b).
    pub worst_scalar_slack: f64,
    /// Smallest relative slack of d·tr(A²) ≥ (tr A)².
    pub worst_trace_slack: f64,
}

/// Random witnesses of x²/a + y²/b ≥ (x−y)²/(a+b) (b > 0, a ∉ [−b, 0]) and
/// of (tr A)² ≤ d·tr(A²) for A = K·H⁻¹ with K symmetric and H symmetric
/// positive definite (A is conjugate to a symmetric matrix), d ∈ {1,2,3}.
pub fn trace_inequality_check(instances: usize, seed: u64, tol: f64) -> TraceInequalityReport {
    let mut rng = linalg::seeded_rng(seed, 0x7ACE);
    let mut rep = TraceInequalityReport {
        instances,
        scalar_violations: 0,
        trace_violations: 0,
        worst_scalar_slack: f64::INFINITY,
        worst_trace_slack: f64::INFINITY,
    };
    for i in 0..instances {
        let b: f64 = rng.gen_range(0.01..5.0);
        let a: f64 = if i % 2 == 0 {
            rng.gen_range(0.01..5.0)
        } else {
            -b - rng.gen_range(0.01..5.0)
        };
        let x: f64 = rng.gen_range(-3.0..3.0);
        let y: f64 = rng.gen_range(-3.0..3.0);
        let lhs = x * x / a + y * y / b;
        let rhs = (x - y).powi(2) / (a + b);
        let scale = lhs.abs() + rhs.abs() + 1.0;
        let slack = (lhs - rhs) / scale;
        rep.worst_scalar_slack = rep.worst_scalar_slack.min(slack);
        if slack < -tol {
            rep.scalar_violations += 1;
        }

        let d = 1 + i % 3;
        let k = random_symmetric(&mut rng, d);
        let a_mat = if i % 2 == 0 {
            k
        } else {
            let g = DMatrix::from_fn(d, d, |_, _| linalg::standard_normal(&mut rng));
            let h = &g * g.transpose() + DMatrix::identity(d, d) * 0.5;
            k * h.try_inverse().expect("positive definite")
        };
        let tr = a_mat.trace();
        let tr2 = (&a_mat * &a_mat).trace();
        let scale = tr * tr + (d as f64 * tr2).abs() + 1.0;
        let slack = (d as f64 * tr2 - tr * tr) / scale;
        rep.worst_trace_slack = rep.worst_trace_slack.min(slack);
        if slack < -tol {
            rep.trace_violations += 1;
        }
    }
    rep
}

fn random_symmetric<R: Rng>(rng: &mut R, d: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, d, |_, _| linalg::standard_normal(rng));
    (&g + g.transpose()) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lipmap::{Gaussian, Lebesgue};

    fn pts(n: usize, count: usize) -> Vec<Point> {
        let mut rng = linalg::seeded_rng(5, 0);
        (0..count)
            .map(|_| DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0)))
            .collect()
    }

    #[test]
    fn ambient_examples() {
        let g = Gaussian::standard(3);
        let r = check_ambient_cd(&g, &CdParams::new(1.0, 3, f64::INFINITY), &pts(3, 20), 8, 0).unwrap();
        assert!(r.pass);
        assert!(r.worst_margin.abs() < 1e-12);
        let r = check_ambient_cd(&Lebesgue { n: 3 }, &CdParams::new(0.0, 3, 3.0), &pts(3, 20), 8, 0).unwrap();
        assert!(r.pass);
        assert_eq!(r.worst_margin, 0.0);
        let concave = Gaussian {
            center: DVector::zeros(3),
            precision: -1.0,
        };
        let r = check_ambient_cd(&concave, &CdParams::new(0.0, 3, f64::INFINITY), &pts(3, 20), 8, 0).unwrap();
        assert!(!r.pass);
    }

    #[test]
    fn ambient_errors() {
        let g = Gaussian::standard(3);
        assert!(matches!(
            check_ambient_cd(&g, &CdParams::new(0.0, 3, 2.5), &pts(3, 2), 1, 0),
            Err(Error::InvalidN { .. })
        ));
        assert!(matches!(
            check_ambient_cd(&g, &CdParams::new(0.0, 3, 3.0), &pts(3, 2), 1, 0),
            Err(Error::NonConstantRho(_))
        ));
    }

    #[test]
    fn finite_n_gaussian_margin_matches_formula() {
        // ρ = ‖x‖²/2, N = 5, n = 3: margin along e₁ at x is 1 − x₁²/2 − κ
        let g = Gaussian::standard(3);
        let x = DVector::from_vec(vec![0.5, 0.0, 0.0]);
        let r = check_ambient_cd(&g, &CdParams::new(0.0, 3, 5.0), &[x], 0, 0).unwrap();
        assert!((r.worst_margin - (1.0 - 0.125)).abs() < 1e-12);
    }

    #[test]
    fn negative_n_margin_adds_the_square() {
        // N = 0.5 < 1: (N − n) < 0 so the gradient term raises the margin
        let p = CdParams::new(0.0, 3, 0.5);
        assert!(p.validate().is_ok());
        let m = margin(&p, 2.0, 1.0, 3, 1.0);
        assert!((m - (1.0 + 4.0 / 2.5)).abs() < 1e-12);
    }

    #[test]
    fn logconcavity_examples() {
        let gauss = |b: &DVector<f64>| (-0.5 * b.norm_squared()).exp();
        assert!(check_needle_logconcavity(gauss, &[-1.0, -1.0], &[1.0, 1.0], 21).unwrap().pass);
        let linear = |b: &DVector<f64>| 1.0 + b[0];
        assert!(check_needle_logconcavity(linear, &[-0.9, -1.0], &[1.0, 1.0], 21).unwrap().pass);
        let convex = |b: &DVector<f64>| (b[0] * b[0]).exp();
        assert!(!check_needle_logconcavity(convex, &[-1.0], &[1.0], 21).unwrap().pass);
        assert!(matches!(
            check_needle_logconcavity(linear, &[-2.0], &[1.0], 21),
            Err(Error::BoundaryContact(_))
        ));
    }

    #[test]
    fn trace_examples() {
        // x²/a + y²/b with a = b = 1, x = 1, y = −1: 2 ≥ 4/2
        let (a, b, x, y) = (1.0f64, 1.0f64, 1.0f64, -1.0f64);
        assert_eq!(x * x / a + y * y / b, (x - y).powi(2) / (a + b));
        let id = DMatrix::<f64>::identity(2, 2);
        assert_eq!(id.trace().powi(2), 2.0 * (&id * &id).trace());
        let rep = trace_inequality_check(2000, 1, 1e-12);
        assert_eq!(rep.scalar_violations, 0);
        assert_eq!(rep.trace_violations, 0);
    }
}
