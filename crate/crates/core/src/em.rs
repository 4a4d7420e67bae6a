//! Poisson log-likelihood, the EM surrogate, and the closed-form penalized
//! pixel update.
//!
//! The log-likelihood omits the constant `-log y_i!` term, so reported
//! values are offset from the textbook definition by a data-dependent
//! constant that cancels in every comparison made here.

use crate::error::{Error, Result};
use crate::grid::Image;
use crate::projector::Sinogram;
use crate::sparse::LinearOperator;
use rayon::prelude::*;

/// Denominator guard, applied only when a bin has observed counts but its
/// expected mean underflows; preserves EM fixed points exactly.
pub const EM_GUARD_EPS: f64 = 1e-12;

fn check_nonneg(x: &Image) -> Result<()> {
    if let Some(i) = x.values.iter().position(|&v| v < 0.0) {
        return Err(Error::InvalidArgument(format!(
            "image must be nonnegative, pixel {i} is {}",
            x.values[i]
        )));
    }
    Ok(())
}

/// Poisson log-likelihood sum_i [y_i ln(mean_i) - mean_i] with
/// mean = A x + s. Zero-count bins contribute -mean; a zero-mean bin with
/// positive counts yields negative infinity.
pub fn log_likelihood(y: &Sinogram, x: &Image, op: &impl LinearOperator) -> Result<f64> {
    log_likelihood_raw(&y.counts, &y.additive, x, op)
}

/// [`log_likelihood`] over bare measurement slices (any operator whose
/// rows are not sinogram bins, e.g. a blur matrix).
pub fn log_likelihood_raw(
    counts: &[f64],
    additive: &[f64],
    x: &Image,
    op: &impl LinearOperator,
) -> Result<f64> {
    check_nonneg(x)?;
    let mean = op.apply(&x.values);
    let mut acc = 0.0;
    for i in 0..mean.len() {
        let m = mean[i] + additive[i];
        let c = counts[i];
        if c > 0.0 {
            if m <= 0.0 {
                return Ok(f64::NEG_INFINITY);
            }
            acc += c * m.ln() - m;
        } else {
            acc -= m;
        }
    }
    Ok(acc)
}

/// One EM step: x_j * backproject(y / mean)_j / A.j, with zero-sensitivity
/// pixels frozen at zero.
pub fn em_update(y: &Sinogram, op: &impl LinearOperator, x_n: &Image) -> Result<Image> {
    em_update_raw(&y.counts, &y.additive, op, x_n)
}

/// [`em_update`] over bare measurement slices.
pub fn em_update_raw(
    counts: &[f64],
    additive: &[f64],
    op: &impl LinearOperator,
    x_n: &Image,
) -> Result<Image> {
    check_nonneg(x_n)?;
    let mean = op.apply(&x_n.values);
    let mut ratio = vec![0.0; mean.len()];
    for i in 0..mean.len() {
        let m = mean[i] + additive[i];
        let c = counts[i];
        if m <= 0.0 {
            if c > 0.0 {
                return Err(Error::InfeasibleBin {
                    bin: i,
                    observed: c,
                });
            }
            // 0/0 bins contribute nothing.
        } else if c > 0.0 {
            let denom = if m < EM_GUARD_EPS { m + EM_GUARD_EPS } else { m };
            ratio[i] = c / denom;
        }
        // c == 0 leaves ratio 0; the correction then only subtracts mass,
        // which y/mean = 0 encodes exactly.
    }
    let bp = op.apply_adjoint(&ratio);
    let col = op.column_sums();
    let values: Vec<f64> = (0..x_n.values.len())
        .map(|j| {
            if col[j] > 0.0 {
                x_n.values[j] * (bp[j] / col[j])
            } else {
                0.0
            }
        })
        .collect();
    Ok(Image {
        grid: x_n.grid,
        values,
    })
}

/// Separable surrogate value Q(x | x_n) = sum_j A.j (xhat_j ln x_j - x_j),
/// where xhat is the EM update of x_n.
pub fn surrogate_value(
    x: &Image,
    x_n: &Image,
    y: &Sinogram,
    op: &impl LinearOperator,
) -> Result<f64> {
    let x_em = em_update(y, op, x_n)?;
    let col = op.column_sums();
    let mut acc = 0.0;
    for j in 0..x.values.len() {
        if col[j] == 0.0 {
            continue;
        }
        let xe = x_em.values[j];
        let xj = x.values[j];
        if xe > 0.0 {
            if xj <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "surrogate needs x_j > 0 where the EM target is positive (pixel {j})"
                )));
            }
            acc += col[j] * (xe * xj.ln() - xj);
        } else {
            acc -= col[j] * xj;
        }
    }
    Ok(acc)
}

/// Closed-form maximizer of
/// `A.j (x_em ln x - x) - rho/2 (x - target)^2` over x >= 0:
/// the positive root of `x^2 - u x - q = 0` with `u = target - A.j/rho`
/// and `q = x_em A.j / rho`, evaluated in the cancellation-free form.
pub fn penalized_pixel_update(x_em_j: f64, a_dot_j: f64, rho: f64, target_j: f64) -> Result<f64> {
    if !(rho > 0.0) {
        return Err(Error::InvalidArgument(format!("rho must be positive, got {rho}")));
    }
    if !(a_dot_j > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "A.j must be positive, got {a_dot_j}"
        )));
    }
    if x_em_j < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "EM value must be nonnegative, got {x_em_j}"
        )));
    }
    let c = a_dot_j / rho;
    let u = target_j - c;
    let q = x_em_j * c;
    let disc = (u * u + 4.0 * q).sqrt();
    let x = if u >= 0.0 {
        0.5 * (u + disc)
    } else if disc - u > 0.0 {
        2.0 * q / (disc - u)
    } else {
        0.0
    };
    Ok(x.max(0.0))
}

/// EM initialization: uniform at (sum y - sum s) / sum_j A.j on pixels with
/// nonzero sensitivity.
pub fn uniform_init(y: &Sinogram, op: &impl LinearOperator, grid: crate::grid::ImageGrid) -> Result<Image> {
    uniform_init_raw(&y.counts, &y.additive, op, grid)
}

/// [`uniform_init`] over bare measurement slices.
pub fn uniform_init_raw(
    counts: &[f64],
    additive: &[f64],
    op: &impl LinearOperator,
    grid: crate::grid::ImageGrid,
) -> Result<Image> {
    let col = op.column_sums();
    let col_total: f64 = col.iter().sum();
    let net: f64 = counts.iter().sum::<f64>() - additive.iter().sum::<f64>();
    if col_total <= 0.0 {
        return Err(Error::InvalidArgument("operator has zero total sensitivity".into()));
    }
    if net <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "cannot initialize: net trues {net} <= 0"
        )));
    }
    let level = net / col_total;
    let values = col
        .iter()
        .map(|&c| if c > 0.0 { level } else { 0.0 })
        .collect();
    Ok(Image { grid, values })
}

/// Plain MLEM: `n_iters` EM steps from `x0`.
pub fn mlem_reconstruct(
    y: &Sinogram,
    op: &impl LinearOperator,
    n_iters: usize,
    x0: &Image,
) -> Result<Image> {
    let mut x = x0.clone();
    for _ in 0..n_iters {
        x = em_update(y, op, &x)?;
    }
    Ok(x)
}

/// Separable Gaussian filter. `fwhm` is in pixels; sigma = fwhm / 2.3548,
/// taps truncated at |offset| <= 4 sigma and renormalized, borders
/// reflect-padded.
pub fn gaussian_filter(img: &Image, fwhm: f64) -> Result<Image> {
    if !(fwhm > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "FWHM must be positive, got {fwhm}"
        )));
    }
    let sigma = fwhm / 2.3548;
    let radius = (4.0 * sigma).floor() as usize;
    if radius == 0 {
        return Ok(img.clone());
    }
    let mut kernel = Vec::with_capacity(2 * radius + 1);
    for k in -(radius as isize)..=(radius as isize) {
        kernel.push((-((k * k) as f64) / (2.0 * sigma * sigma)).exp());
    }
    let norm: f64 = kernel.iter().sum();
    for w in &mut kernel {
        *w /= norm;
    }

    let (w, h) = (img.grid.width, img.grid.height);
    let reflect = |i: isize, n: usize| -> usize {
        let n = n as isize;
        let mut i = i;
        if i < 0 {
            i = -i;
        }
        if i >= n {
            i = 2 * n - 2 - i;
        }
        i as usize
    };

    // Horizontal pass, then vertical.
    let mut tmp = vec![0.0; w * h];
    tmp.par_chunks_mut(w).enumerate().for_each(|(row, out)| {
        for col in 0..w {
            let mut acc = 0.0;
            for (ki, wt) in kernel.iter().enumerate() {
                let src = reflect(col as isize + ki as isize - radius as isize, w);
                acc += wt * img.values[row * w + src];
            }
            out[col] = acc;
        }
    });
    let mut out = vec![0.0; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(row, dst)| {
        for col in 0..w {
            let mut acc = 0.0;
            for (ki, wt) in kernel.iter().enumerate() {
                let src = reflect(row as isize + ki as isize - radius as isize, h);
                acc += wt * tmp[src * w + col];
            }
            dst[col] = acc;
        }
    });
    Ok(Image {
        grid: img.grid,
        values: out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::ImageGrid;
    use crate::projector::{build_system_matrix, ProjectionGeometry};
    use crate::rng::RngStream;
    use crate::sparse::SparseMatrix;

    fn geo(m: usize) -> ProjectionGeometry {
        ProjectionGeometry::uniform(1, m, 1.0).unwrap()
    }

    fn scalar_system(a: f64) -> (SparseMatrix, ImageGrid) {
        (
            SparseMatrix::from_rows(1, 1, vec![vec![(0, a)]]),
            ImageGrid::new(1, 1, 1.0).unwrap(),
        )
    }

    #[test]
    fn likelihood_zero_count_convention() {
        let (op, grid) = scalar_system(1.0);
        let y = Sinogram::new(geo(1), vec![0.0], vec![0.0]).unwrap();
        let x = Image::new(grid, vec![3.0]).unwrap();
        assert_eq!(log_likelihood(&y, &x, &op).unwrap(), -3.0);
    }

    #[test]
    fn likelihood_scalar_value() {
        let (op, grid) = scalar_system(1.0);
        let y = Sinogram::new(geo(1), vec![2.0], vec![0.0]).unwrap();
        let x = Image::new(grid, vec![2.0]).unwrap();
        let expected = 2.0 * 2.0f64.ln() - 2.0;
        assert!((log_likelihood(&y, &x, &op).unwrap() - expected).abs() < 1e-12);
        assert!((expected + 0.613706).abs() < 1e-6);
    }

    #[test]
    fn likelihood_zero_mean_positive_count_is_neg_infinity() {
        let (op, grid) = scalar_system(1.0);
        let y = Sinogram::new(geo(1), vec![2.0], vec![0.0]).unwrap();
        let x = Image::new(grid, vec![0.0]).unwrap();
        assert_eq!(log_likelihood(&y, &x, &op).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn em_fixed_point_when_counts_equal_mean() {
        let grid = ImageGrid::new(8, 8, 1.0).unwrap();
        let geo = ProjectionGeometry::uniform(6, 10, 1.0).unwrap();
        let a = build_system_matrix(grid, geo).unwrap();
        let x: Vec<f64> = (0..64).map(|i| 0.5 + (i % 7) as f64 * 0.25).collect();
        let img = Image::new(grid, x).unwrap();
        let mean = a.apply(&img.values);
        let y = Sinogram::new(a.geometry.clone(), mean, vec![0.0; a.n_lors()]).unwrap();
        let next = em_update(&y, &a, &img).unwrap();
        for j in 0..img.values.len() {
            if a.column_sums()[j] > 0.0 {
                assert_eq!(next.values[j], img.values[j], "pixel {j}");
            } else {
                assert_eq!(next.values[j], 0.0);
            }
        }
    }

    #[test]
    fn em_scalar_case() {
        let (op, grid) = scalar_system(1.0);
        let y = Sinogram::new(geo(1), vec![4.0], vec![0.0]).unwrap();
        let x = Image::new(grid, vec![2.0]).unwrap();
        let next = em_update(&y, &op, &x).unwrap();
        assert_eq!(next.values[0], 4.0);
    }

    #[test]
    fn em_infeasible_bin_is_an_error() {
        let (op, grid) = scalar_system(1.0);
        let y = Sinogram::new(geo(1), vec![3.0], vec![0.0]).unwrap();
        let x = Image::new(grid, vec![0.0]).unwrap();
        assert!(matches!(
            em_update(&y, &op, &x),
            Err(Error::InfeasibleBin { .. })
        ));
    }

    #[test]
    fn em_matches_dense_oracle() {
        let grid = ImageGrid::new(16, 16, 1.5).unwrap();
        let geo = ProjectionGeometry::uniform(14, 20, 1.3).unwrap();
        let a = build_system_matrix(grid, geo).unwrap();
        let dense = a.matrix().to_dense();
        let mut rng = RngStream::new(21);
        let x: Vec<f64> = (0..grid.n_pixels()).map(|_| 0.1 + rng.uniform()).collect();
        let s: Vec<f64> = (0..a.n_lors()).map(|_| 0.05 * rng.uniform()).collect();
        let mean: Vec<f64> = (0..a.n_lors())
            .map(|i| dense[i].iter().zip(&x).map(|(w, v)| w * v).sum::<f64>() + s[i])
            .collect();
        let counts: Vec<f64> = mean.iter().map(|&m| rng.poisson(m * 3.0) as f64).collect();
        let y = Sinogram::new(a.geometry.clone(), counts.clone(), s.clone()).unwrap();
        let img = Image::new(grid, x.clone()).unwrap();
        let fast = em_update(&y, &a, &img).unwrap();

        // Dense reference implementation.
        let n = grid.n_pixels();
        let mut col = vec![0.0; n];
        for row in &dense {
            for (j, w) in row.iter().enumerate() {
                col[j] += w;
            }
        }
        for j in 0..n {
            if col[j] == 0.0 {
                assert_eq!(fast.values[j], 0.0);
                continue;
            }
            let mut acc = 0.0;
            for i in 0..a.n_lors() {
                let m = mean[i];
                if m > 0.0 && counts[i] > 0.0 {
                    acc += dense[i][j] * counts[i] / m;
                }
            }
            let oracle = x[j] / col[j] * acc;
            let scale = oracle.abs().max(1e-12);
            assert!(
                (fast.values[j] - oracle).abs() <= 1e-12 * scale,
                "pixel {j}: {} vs {}",
                fast.values[j],
                oracle
            );
        }
    }

    #[test]
    fn em_is_scale_equivariant() {
        let grid = ImageGrid::new(8, 8, 1.0).unwrap();
        let geo = ProjectionGeometry::uniform(6, 10, 1.0).unwrap();
        let a = build_system_matrix(grid, geo).unwrap();
        let mut rng = RngStream::new(4);
        let x: Vec<f64> = (0..64).map(|_| 0.2 + rng.uniform()).collect();
        let counts: Vec<f64> = (0..a.n_lors()).map(|_| rng.poisson(20.0) as f64).collect();
        let s = vec![0.3; a.n_lors()];
        let c = 2.75;
        let y = Sinogram::new(a.geometry.clone(), counts.clone(), s.clone()).unwrap();
        let y_scaled = Sinogram::new(
            a.geometry.clone(),
            counts.iter().map(|v| c * v).collect(),
            s.iter().map(|v| c * v).collect(),
        )
        .unwrap();
        let img = Image::new(grid, x.clone()).unwrap();
        let img_scaled = Image::new(grid, x.iter().map(|v| c * v).collect()).unwrap();
        let base = em_update(&y, &a, &img).unwrap();
        let scaled = em_update(&y_scaled, &a, &img_scaled).unwrap();
        for j in 0..64 {
            let expect = c * base.values[j];
            assert!(
                (scaled.values[j] - expect).abs() <= 1e-10 * expect.abs().max(1e-9),
                "pixel {j}"
            );
        }
    }

    #[test]
    fn surrogate_tangency_matches_likelihood_gradient() {
        let grid = ImageGrid::new(6, 6, 1.0).unwrap();
        let geo = ProjectionGeometry::uniform(5, 8, 1.0).unwrap();
        let a = build_system_matrix(grid, geo).unwrap();
        let mut rng = RngStream::new(17);
        let x: Vec<f64> = (0..36).map(|_| 0.5 + rng.uniform()).collect();
        let counts: Vec<f64> = a
            .apply(&x)
            .iter()
            .map(|&m| rng.poisson(3.0 * m + 1.0) as f64)
            .collect();
        let y = Sinogram::new(a.geometry.clone(), counts, vec![0.1; a.n_lors()]).unwrap();
        let x_n = Image::new(grid, x).unwrap();
        let h = 1e-5;
        for j in (0..36).step_by(5) {
            if a.column_sums()[j] == 0.0 {
                continue;
            }
            let mut plus = x_n.clone();
            plus.values[j] += h;
            let mut minus = x_n.clone();
            minus.values[j] -= h;
            let dq = (surrogate_value(&plus, &x_n, &y, &a).unwrap()
                - surrogate_value(&minus, &x_n, &y, &a).unwrap())
                / (2.0 * h);
            let dl = (log_likelihood(&y, &plus, &a).unwrap()
                - log_likelihood(&y, &minus, &a).unwrap())
                / (2.0 * h);
            assert!(
                (dq - dl).abs() <= 1e-6 * dl.abs().max(1.0),
                "pixel {j}: dQ {dq} vs dL {dl}"
            );
        }
    }

    #[test]
    fn surrogate_minorizes_likelihood() {
        let grid = ImageGrid::new(6, 6, 1.0).unwrap();
        let geo = ProjectionGeometry::uniform(5, 8, 1.0).unwrap();
        let a = build_system_matrix(grid, geo).unwrap();
        let mut rng = RngStream::new(8);
        let xv: Vec<f64> = (0..36).map(|_| 0.5 + rng.uniform()).collect();
        let counts: Vec<f64> = a
            .apply(&xv)
            .iter()
            .map(|&m| rng.poisson(2.0 * m + 0.5) as f64)
            .collect();
        let y = Sinogram::new(a.geometry.clone(), counts, vec![0.05; a.n_lors()]).unwrap();
        let x_n = Image::new(grid, xv).unwrap();
        let q_n = surrogate_value(&x_n, &x_n, &y, &a).unwrap();
        let l_n = log_likelihood(&y, &x_n, &a).unwrap();
        for _ in 0..100 {
            let x: Vec<f64> = (0..36).map(|_| 0.05 + 2.0 * rng.uniform()).collect();
            let img = Image::new(grid, x).unwrap();
            let gap_q = surrogate_value(&img, &x_n, &y, &a).unwrap() - q_n;
            let gap_l = log_likelihood(&y, &img, &a).unwrap() - l_n;
            assert!(
                gap_q <= gap_l + 1e-9 * gap_l.abs().max(1.0),
                "minorization violated: {gap_q} > {gap_l}"
            );
        }
    }

    #[test]
    fn surrogate_is_maximized_at_the_em_point() {
        let grid = ImageGrid::new(4, 4, 1.0).unwrap();
        let geo = ProjectionGeometry::uniform(4, 6, 1.0).unwrap();
        let a = build_system_matrix(grid, geo).unwrap();
        let mut rng = RngStream::new(30);
        let xv: Vec<f64> = (0..16).map(|_| 0.5 + rng.uniform()).collect();
        let counts: Vec<f64> = a
            .apply(&xv)
            .iter()
            .map(|&m| if m > 0.0 { (m + 1.0).round() } else { 0.0 })
            .collect();
        let y = Sinogram::new(a.geometry.clone(), counts, vec![0.0; a.n_lors()]).unwrap();
        let x_n = Image::new(grid, xv).unwrap();
        let x_em = em_update(&y, &a, &x_n).unwrap();
        // Guard against zero-EM pixels for the log.
        let x_em = Image::new(
            grid,
            x_em.values.iter().map(|&v| v.max(1e-9)).collect(),
        )
        .unwrap();
        let q_star = surrogate_value(&x_em, &x_n, &y, &a).unwrap();
        for _ in 0..50 {
            let x: Vec<f64> = x_em
                .values
                .iter()
                .map(|&v| (v * (0.5 + rng.uniform())).max(1e-9))
                .collect();
            let q = surrogate_value(&Image::new(grid, x).unwrap(), &x_n, &y, &a).unwrap();
            assert!(q <= q_star + 1e-9 * q_star.abs().max(1.0));
        }
    }

    /// Golden-section argmax of the penalized pixel objective.
    fn golden_argmax(x_em: f64, a_dot: f64, rho: f64, t: f64) -> f64 {
        let p = |x: f64| {
            let log_term = if x_em > 0.0 { x_em * x.ln() } else { 0.0 };
            a_dot * (log_term - x) - 0.5 * rho * (x - t) * (x - t)
        };
        let mut lo = 1e-12;
        let mut hi = t.abs() + a_dot / rho + (x_em * a_dot / rho).sqrt() + 1.0;
        let phi = (5.0f64.sqrt() - 1.0) / 2.0;
        let mut c = hi - phi * (hi - lo);
        let mut d = lo + phi * (hi - lo);
        let mut pc = p(c);
        let mut pd = p(d);
        for _ in 0..200 {
            if pc > pd {
                hi = d;
                d = c;
                pd = pc;
                c = hi - phi * (hi - lo);
                pc = p(c);
            } else {
                lo = c;
                c = d;
                pc = pd;
                d = lo + phi * (hi - lo);
                pd = p(d);
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn penalized_update_matches_golden_section() {
        let x = penalized_pixel_update(4.0, 1.0, 1.0, 2.0).unwrap();
        let expected = 0.5 + 0.5 * 17.0f64.sqrt();
        assert!((x - expected).abs() < 1e-12);
        assert!((expected - 2.561553).abs() < 1e-6);
        let g = golden_argmax(4.0, 1.0, 1.0, 2.0);
        assert!((x - g).abs() <= 1e-6);
    }

    #[test]
    fn penalized_update_limits() {
        // rho -> infinity recovers max(target, 0).
        for t in [-2.0, 2.0] {
            let x = penalized_pixel_update(4.0, 1.0, 1e12, t).unwrap();
            assert!((x - t.max(0.0)).abs() <= 1e-4, "t={t}: {x}");
        }
        // rho -> 0 recovers the EM value.
        let x = penalized_pixel_update(4.0, 1.0, 1e-12, 2.0).unwrap();
        assert!((x - 4.0).abs() <= 1e-4 * 4.0, "{x}");
    }

    #[test]
    fn penalized_update_rejects_bad_inputs() {
        assert!(penalized_pixel_update(1.0, 1.0, 0.0, 1.0).is_err());
        assert!(penalized_pixel_update(1.0, 0.0, 1.0, 1.0).is_err());
        assert!(penalized_pixel_update(-1.0, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn penalized_update_nonnegative_and_monotone() {
        let mut rng = RngStream::new(55);
        for _ in 0..500 {
            let x_em = 10.0 * rng.uniform();
            let a_dot = 0.1 + 10.0 * rng.uniform();
            let rho = 10f64.powf(-3.0 + 6.0 * rng.uniform());
            let t = -5.0 + 15.0 * rng.uniform();
            let x = penalized_pixel_update(x_em, a_dot, rho, t).unwrap();
            assert!(x >= 0.0);
            // Monotone in the EM value and in the target.
            let x_up = penalized_pixel_update(x_em + 0.5, a_dot, rho, t).unwrap();
            assert!(x_up >= x - 1e-12);
            let t_up = penalized_pixel_update(x_em, a_dot, rho, t + 0.5).unwrap();
            assert!(t_up >= x - 1e-12);
        }
    }

    #[test]
    fn mlem_zero_iterations_returns_x0() {
        let (op, grid) = scalar_system(1.0);
        let y = Sinogram::new(geo(1), vec![4.0], vec![0.0]).unwrap();
        let x0 = Image::new(grid, vec![2.0]).unwrap();
        let out = mlem_reconstruct(&y, &op, 0, &x0).unwrap();
        assert_eq!(out.values, x0.values);
    }

    #[test]
    fn mlem_likelihood_is_monotone_and_rmse_improves_on_noise_free_data() {
        let grid = ImageGrid::new(16, 16, 2.0).unwrap();
        let geo = ProjectionGeometry::uniform(24, 24, 1.5).unwrap();
        let a = build_system_matrix(grid, geo).unwrap();
        let truth = {
            let spec = crate::phantom::default_brain_spec(grid, 0);
            crate::phantom::make_phantom(&spec).unwrap().activity
        };
        let mean = a.apply(&truth.values);
        let y = Sinogram::new(a.geometry.clone(), mean, vec![0.0; a.n_lors()]).unwrap();
        let mut x = uniform_init(&y, &a, grid).unwrap();
        let mut ll_prev = log_likelihood(&y, &x, &a).unwrap();
        let rmse = |img: &Image| {
            let mut acc = 0.0;
            for (v, t) in img.values.iter().zip(&truth.values) {
                acc += (v - t) * (v - t);
            }
            (acc / img.values.len() as f64).sqrt()
        };
        let rmse0 = rmse(&x);
        for it in 0..60 {
            x = em_update(&y, &a, &x).unwrap();
            let ll = log_likelihood(&y, &x, &a).unwrap();
            assert!(
                ll >= ll_prev - 1e-9 * ll_prev.abs(),
                "iteration {it}: {ll} < {ll_prev}"
            );
            ll_prev = ll;
        }
        assert!(rmse(&x) < 0.5 * rmse0, "RMSE {} vs start {}", rmse(&x), rmse0);
    }

    #[test]
    fn gaussian_filter_preserves_constants() {
        let grid = ImageGrid::new(12, 9, 1.0).unwrap();
        let img = Image::constant(grid, 3.25);
        let out = gaussian_filter(&img, 2.5).unwrap();
        for v in &out.values {
            assert!((v - 3.25).abs() < 1e-12);
        }
    }

    #[test]
    fn gaussian_filter_impulse_matches_analytic_kernel() {
        let grid = ImageGrid::new(17, 17, 1.0).unwrap();
        let mut img = Image::zeros(grid);
        img.set(8, 8, 1.0);
        let fwhm = 3.0;
        let out = gaussian_filter(&img, fwhm).unwrap();
        let sigma = fwhm / 2.3548;
        let radius = (4.0 * sigma).floor() as isize;
        let mut taps = Vec::new();
        for k in -radius..=radius {
            taps.push((-(k * k) as f64 / (2.0 * sigma * sigma)).exp());
        }
        let norm: f64 = taps.iter().sum();
        for dy in -radius..=radius {
            for dx in -radius..=radius {
                let expected =
                    taps[(dx + radius) as usize] / norm * taps[(dy + radius) as usize] / norm;
                let got = out.get((8 + dx) as usize, (8 + dy) as usize);
                assert!(
                    (got - expected).abs() <= 1e-6,
                    "offset ({dx},{dy}): {got} vs {expected}"
                );
            }
        }
    }

    #[test]
    fn gaussian_filter_below_half_pixel_is_identity() {
        let grid = ImageGrid::new(8, 8, 1.0).unwrap();
        let mut rng = RngStream::new(2);
        let img = Image::new(grid, (0..64).map(|_| rng.uniform()).collect()).unwrap();
        let out = gaussian_filter(&img, 0.4).unwrap();
        for (a, b) in out.values.iter().zip(&img.values) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn uniform_init_matches_count_balance() {
        let grid = ImageGrid::new(8, 8, 1.0).unwrap();
        let geo = ProjectionGeometry::uniform(8, 12, 1.0).unwrap();
        let a = build_system_matrix(grid, geo).unwrap();
        let counts = vec![5.0; a.n_lors()];
        let s = vec![1.0; a.n_lors()];
        let y = Sinogram::new(a.geometry.clone(), counts, s).unwrap();
        let x0 = uniform_init(&y, &a, grid).unwrap();
        let col_total: f64 = a.column_sums().iter().sum();
        let expected = (5.0 - 1.0) * a.n_lors() as f64 / col_total;
        for (j, &v) in x0.values.iter().enumerate() {
            if a.column_sums()[j] > 0.0 {
                assert_eq!(v, expected);
            } else {
                assert_eq!(v, 0.0);
            }
        }
    }
}
