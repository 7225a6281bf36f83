//! Small dense helpers shared by the numerical modules.

use nalgebra::DMatrix;

/// Spectral norm (largest singular value).
pub fn op_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    if m.nrows() == 1 || m.ncols() == 1 {
        return m.norm();
    }
    m.singular_values().max()
}

/// Singular values in descending order.
pub fn singular_values_desc(m: &DMatrix<f64>) -> Vec<f64> {
    let mut s: Vec<f64> = m.singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Orthonormal basis of the column space, keeping singular directions above `threshold`.
pub fn range_basis(m: &DMatrix<f64>, threshold: f64) -> DMatrix<f64> {
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > threshold)
        .collect();
    DMatrix::from_fn(m.nrows(), keep.len(), |r, c| u[(r, keep[c])])
}

/// Left and right singular factors sorted by descending singular value.
pub fn sorted_svd(m: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("left singular vectors requested");
    let vt = svd.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let u_s = DMatrix::from_fn(u.nrows(), order.len(), |r, c| u[(r, order[c])]);
    let v_s = DMatrix::from_fn(vt.ncols(), order.len(), |r, c| vt[(order[c], r)]);
    let s = order.iter().map(|&i| svd.singular_values[i]).collect();
    (u_s, s, v_s)
}

/// Moore-Penrose pseudo-inverse with relative cutoff.
pub fn pinv(m: &DMatrix<f64>, rel_cutoff: f64) -> DMatrix<f64> {
    let (u, s, v) = sorted_svd(m);
    let smax = s.first().copied().unwrap_or(0.0);
    let mut out = DMatrix::zeros(m.ncols(), m.nrows());
    for (i, &si) in s.iter().enumerate() {
        if si > rel_cutoff * smax && si > 0.0 {
            out += v.column(i) * u.column(i).transpose() / si;
        }
    }
    out
}

/// Ordinary least-squares line fit, returning (slope, intercept).
pub fn line_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, my - slope * mx)
}

/// Rotation of the plane by `angle` radians.
#[cfg(test)]
pub fn rotation2(angle: f64) -> DMatrix<f64> {
    let (s, c) = angle.sin_cos();
    DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    #[test]
    fn op_norm_of_diagonal() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, -3.0, 2.0]));
        assert!((op_norm(&m) - 3.0).abs() < 1e-14);
    }

    #[test]
    fn pinv_inverts_square() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 4.0]);
        let p = pinv(&m, 1e-14);
        assert!((p * m - DMatrix::<f64>::identity(2, 2)).norm() < 1e-14);
    }

    #[test]
    fn range_basis_of_projector() {
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 0.0]);
        let b = range_basis(&p, 0.5);
        assert_eq!(b.ncols(), 1);
        assert!((b[(0, 0)].abs() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn line_fit_recovers_line() {
        let xs: Vec<f64> = (0..10).map(f64::from).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 - 0.5 * x).collect();
        let (s, c) = line_fit(&xs, &ys);
        assert!((s + 0.5).abs() < 1e-14 && (c - 3.0).abs() < 1e-13);
    }
}
