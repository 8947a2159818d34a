//! Small numerical helpers shared by the modules: finite differences,
//! sorted SVD, orthonormal complements, direction designs and seeding.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Point = DVector<f64>;

/// Central-difference step for first derivatives: cbrt(eps)·max(1, ‖x‖).
pub fn jacobian_step(x: &Point) -> f64 {
    f64::EPSILON.cbrt() * x.norm().max(1.0)
}

/// Step for second differences of function values: eps^(1/4)·max(1, ‖x‖).
pub fn hessian_step(x: &Point) -> f64 {
    f64::EPSILON.powf(0.25) * x.norm().max(1.0)
}

/// Central-difference Jacobian (m×n) of `f` at `x`.
pub fn fd_jacobian<F>(f: F, x: &Point, m: usize) -> DMatrix<f64>
where
    F: Fn(&Point) -> DVector<f64>,
{
    let n = x.len();
    let h = jacobian_step(x);
    let mut jac = DMatrix::zeros(m, n);
    let mut xp = x.clone();
    for j in 0..n {
        xp[j] = x[j] + h;
        let fp = f(&xp);
        xp[j] = x[j] - h;
        let fm = f(&xp);
        xp[j] = x[j];
        let col = (fp - fm) / (2.0 * h);
        jac.set_column(j, &col);
    }
    jac
}

/// Hessians (one n×n matrix per output) by second differences of `f`,
/// symmetrized.
pub fn fd_hessian_from_eval<F>(f: F, x: &Point, m: usize) -> Vec<DMatrix<f64>>
where
    F: Fn(&Point) -> DVector<f64>,
{
    let n = x.len();
    let h = hessian_step(x);
    let f0 = f(x);
    let mut out = vec![DMatrix::zeros(n, n); m];
    let mut xp = x.clone();
    for i in 0..n {
        xp[i] = x[i] + h;
        let fp = f(&xp);
        xp[i] = x[i] - h;
        let fm = f(&xp);
        xp[i] = x[i];
        for (k, hk) in out.iter_mut().enumerate() {
            hk[(i, i)] = (fp[k] - 2.0 * f0[k] + fm[k]) / (h * h);
        }
        for j in (i + 1)..n {
            let mut eval_at = |si: f64, sj: f64| {
                xp[i] = x[i] + si * h;
                xp[j] = x[j] + sj * h;
                let v = f(&xp);
                xp[i] = x[i];
                xp[j] = x[j];
                v
            };
            let fpp = eval_at(1.0, 1.0);
            let fpm = eval_at(1.0, -1.0);
            let fmp = eval_at(-1.0, 1.0);
            let fmm = eval_at(-1.0, -1.0);
            for (k, hk) in out.iter_mut().enumerate() {
                let v = (fpp[k] - fpm[k] - fmp[k] + fmm[k]) / (4.0 * h * h);
                hk[(i, j)] = v;
                hk[(j, i)] = v;
            }
        }
    }
    out
}

/// Hessians by central differences of an analytic Jacobian, symmetrized.
pub fn fd_hessian_from_jacobian<J>(jac: J, x: &Point, m: usize) -> Vec<DMatrix<f64>>
where
    J: Fn(&Point) -> DMatrix<f64>,
{
    let n = x.len();
    let h = jacobian_step(x);
    let mut out = vec![DMatrix::zeros(n, n); m];
    let mut xp = x.clone();
    for j in 0..n {
        xp[j] = x[j] + h;
        let jp = jac(&xp);
        xp[j] = x[j] - h;
        let jm = jac(&xp);
        xp[j] = x[j];
        for (k, hk) in out.iter_mut().enumerate() {
            for i in 0..n {
                hk[(i, j)] = (jp[(k, i)] - jm[(k, i)]) / (2.0 * h);
            }
        }
    }
    out.into_iter().map(|h| symmetrize(&h)).collect()
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Singular value decomposition with singular values sorted in decreasing
/// order. `left` is m×r and `right` is n×r with r = min(m, n).
#[derive(Debug, Clone)]
pub struct SortedSvd {
    pub values: Vec<f64>,
    pub left: DMatrix<f64>,
    pub right: DMatrix<f64>,
}

pub fn sorted_svd(a: &DMatrix<f64>) -> SortedSvd {
    let (m, n) = a.shape();
    let r = m.min(n);
    if r == 0 {
        return SortedSvd {
            values: vec![],
            left: DMatrix::zeros(m, 0),
            right: DMatrix::zeros(n, 0),
        };
    }
    let svd = a.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let mut left = DMatrix::zeros(m, r);
    let mut right = DMatrix::zeros(n, r);
    let mut values = Vec::with_capacity(r);
    for (dst, &src) in order.iter().enumerate() {
        values.push(svd.singular_values[src]);
        left.set_column(dst, &u.column(src));
        right.set_column(dst, &vt.row(src).transpose());
    }
    SortedSvd {
        values,
        left,
        right,
    }
}

/// Largest singular value.
pub fn operator_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.clone()
        .singular_values()
        .iter()
        .cloned()
        .fold(0.0, f64::max)
}

/// Orthonormal basis (n×(n−k)) of the orthogonal complement of the
/// columns of `frame` (assumed orthonormal). Deterministic: Gram-Schmidt
/// over the standard basis, taking the largest residuals first.
pub fn orthonormal_complement(frame: &DMatrix<f64>) -> DMatrix<f64> {
    let n = frame.nrows();
    let k = frame.ncols();
    let mut basis: Vec<DVector<f64>> = (0..k).map(|j| frame.column(j).into_owned()).collect();
    let mut out: Vec<DVector<f64>> = Vec::with_capacity(n - k);
    while out.len() < n - k {
        let mut best: Option<DVector<f64>> = None;
        let mut best_norm = 0.0;
        for i in 0..n {
            let mut e = DVector::zeros(n);
            e[i] = 1.0;
            for _ in 0..2 {
                for b in &basis {
                    let c = b.dot(&e);
                    e -= b * c;
                }
            }
            let nrm = e.norm();
            if nrm > best_norm + 1e-12 {
                best_norm = nrm;
                best = Some(e / nrm);
            }
        }
        let v = best.expect("complement exists while dimension is short");
        basis.push(v.clone());
        out.push(v);
    }
    if out.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&out)
    }
}

/// Determinant of the Gram matrix of the given vectors.
pub fn gram_det(vectors: &[DVector<f64>]) -> f64 {
    let k = vectors.len();
    if k == 0 {
        return 1.0;
    }
    let g = DMatrix::from_fn(k, k, |i, j| vectors[i].dot(&vectors[j]));
    g.determinant()
}

/// Unit direction design in R^k used for extent sampling.
/// k = 1: ±1; k = 2: `count` equally spaced angles; k = 3: Fibonacci
/// sphere; k > 3: deterministic normalized Gaussian draws.
pub fn direction_design(k: usize, count: usize) -> Vec<DVector<f64>> {
    match k {
        0 => vec![],
        1 => vec![DVector::from_element(1, 1.0), DVector::from_element(1, -1.0)],
        2 => (0..count)
            .map(|i| {
                let t = 2.0 * std::f64::consts::PI * i as f64 / count as f64;
                DVector::from_vec(vec![t.cos(), t.sin()])
            })
            .collect(),
        3 => {
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            (0..count)
                .map(|i| {
                    let y = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
                    let r = (1.0 - y * y).max(0.0).sqrt();
                    let th = golden * i as f64;
                    DVector::from_vec(vec![r * th.cos(), y, r * th.sin()])
                })
                .collect()
        }
        _ => {
            let mut rng = seeded_rng(0x5eed, k as u64);
            (0..count).map(|_| random_unit(&mut rng, k)).collect()
        }
    }
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic RNG for a (seed, stream) pair.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix64(seed ^ mix64(stream)))
}

/// Hash of the bit pattern of a point, used to derive per-point seeds.
pub fn point_hash(x: &Point) -> u64 {
    x.iter()
        .fold(0xcbf2_9ce4_8422_2325u64, |acc, v| mix64(acc ^ v.to_bits()))
}

pub fn random_unit<R: Rng>(rng: &mut R, n: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(n, |_, _| standard_normal(rng));
        let nrm = v.norm();
        if nrm > 1e-12 {
            return v / nrm;
        }
    }
}

pub fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    // Box-Muller
    let u1: f64 = rng.gen::<f64>().max(1e-300);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn is_finite(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn complement_is_orthonormal_and_orthogonal() {
        let f = DMatrix::from_column_slice(3, 1, &[0.6, 0.8, 0.0]);
        let w = orthonormal_complement(&f);
        assert_eq!(w.shape(), (3, 2));
        let g = w.transpose() * &w;
        assert_abs_diff_eq!(g, DMatrix::identity(2, 2), epsilon = 1e-12);
        assert_abs_diff_eq!((f.transpose() * &w).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn sorted_svd_orders_values() {
        let a = DMatrix::from_row_slice(2, 3, &[0.1, 0.0, 0.0, 0.0, 2.0, 0.0]);
        let s = sorted_svd(&a);
        assert!(s.values[0] >= s.values[1]);
        assert_abs_diff_eq!(s.values[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.right[(1, 0)].abs(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn fd_hessian_of_quadratic() {
        let f = |x: &Point| DVector::from_element(1, x[0] * x[0] + 3.0 * x[0] * x[1]);
        let x = DVector::from_vec(vec![0.3, -0.7]);
        let h = fd_hessian_from_eval(f, &x, 1);
        let expected = DMatrix::from_row_slice(2, 2, &[2.0, 3.0, 3.0, 0.0]);
        assert_abs_diff_eq!(h[0], expected, epsilon = 1e-6);
    }

    #[test]
    fn gram_det_of_orthonormal_is_one() {
        let v = vec![
            DVector::from_vec(vec![1.0, 0.0]),
            DVector::from_vec(vec![0.0, 1.0]),
        ];
        assert_abs_diff_eq!(gram_det(&v), 1.0, epsilon = 1e-15);
    }
}
