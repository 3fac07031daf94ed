use nalgebra::{DMatrix, SymmetricEigen};

use crate::fusion::FeatureField;
use crate::{Error, Result};

/// Low-dimensional projection of the valid rows of a [`FeatureField`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedField {
    /// Row-major `N × k`, one row per field row (invalid rows are projected too).
    pub coords: Vec<f64>,
    /// Row-major `dim × k`; columns are the principal axes.
    pub basis: Vec<f64>,
    pub mean: Vec<f64>,
    /// Sample variance along each axis, descending.
    pub explained_variance: Vec<f64>,
    pub k: usize,
    /// Fewer than `k` non-zero-variance directions; missing axes are zero.
    pub degenerate: bool,
}

impl ReducedField {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.coords[i * self.k..(i + 1) * self.k]
    }

    /// Rows padded or truncated to 3 components.
    pub fn coords3(&self) -> Vec<[f64; 3]> {
        (0..self.coords.len() / self.k.max(1))
            .map(|i| {
                let r = self.row(i);
                [r.first().copied().unwrap_or(0.0), r.get(1).copied().unwrap_or(0.0), r.get(2).copied().unwrap_or(0.0)]
            })
            .collect()
    }

    /// True when every axis has zero variance.
    pub fn is_constant(&self) -> bool {
        self.explained_variance.iter().all(|&v| v == 0.0)
    }

    pub fn reconstruct(&self, i: usize) -> Vec<f64> {
        let dim = self.mean.len();
        let r = self.row(i);
        (0..dim).map(|j| self.mean[j] + (0..self.k).map(|a| r[a] * self.basis[j * self.k + a]).sum::<f64>()).collect()
    }
}

/// Principal component projection fitted on the field's valid rows.
///
/// Each axis is signed so its largest-magnitude entry is positive.
pub fn pca_reduce(field: &FeatureField, k: usize) -> Result<ReducedField> {
    let valid = field.valid_indices();
    let dim = field.dim;
    if valid.is_empty() {
        return Err(Error::invalid("no valid points to fit PCA"));
    }
    if k == 0 || k > dim {
        return Err(Error::invalid(format!("cannot take {k} components of {dim}-dimensional features")));
    }
    let n = valid.len() as f64;
    let mut mean = vec![0.0; dim];
    for &i in &valid {
        for (m, &x) in mean.iter_mut().zip(field.row(i)) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);

    let mut centered = DMatrix::<f64>::zeros(valid.len(), dim);
    for (r, &i) in valid.iter().enumerate() {
        for (j, &x) in field.row(i).iter().enumerate() {
            centered[(r, j)] = x - mean[j];
        }
    }
    let denom = if valid.len() > 1 { n - 1.0 } else { 1.0 };
    let cov = centered.tr_mul(&centered) / denom;
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let floor = 1e-12 * top.max(f64::MIN_POSITIVE);

    let mut basis = vec![0.0; dim * k];
    let mut explained = vec![0.0; k];
    let mut degenerate = false;
    for (a, &e) in order.iter().take(k).enumerate() {
        let lambda = eig.eigenvalues[e];
        if top == 0.0 || lambda <= floor {
            degenerate = true;
            continue;
        }
        let col = eig.eigenvectors.column(e);
        let pivot = (0..dim).fold(0, |best, j| if col[j].abs() > col[best].abs() { j } else { best });
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..dim {
            basis[j * k + a] = sign * col[j];
        }
        explained[a] = lambda;
    }

    let mut coords = vec![0.0; field.len() * k];
    for i in 0..field.len() {
        let row = field.row(i);
        for a in 0..k {
            coords[i * k + a] = (0..dim).map(|j| (row[j] - mean[j]) * basis[j * k + a]).sum();
        }
    }
    Ok(ReducedField { coords, basis, mean, explained_variance: explained, k, degenerate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn field(rows: &[Vec<f64>]) -> FeatureField {
        let dim = rows[0].len();
        FeatureField::new(rows.concat(), vec![1; rows.len()], dim).unwrap()
    }

    /// Cyclic Jacobi eigen-solver, used only as an independent oracle.
    fn jacobi_eigen(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
        let n = a.len();
        let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| (i == j) as u8 as f64).collect()).collect();
        for _ in 0..100 {
            let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
            if off < 1e-30 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    if a[p][q].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let (akp, akq) = (a[k][p], a[k][q]);
                        a[k][p] = c * akp - s * akq;
                        a[k][q] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let (apk, aqk) = (a[p][k], a[q][k]);
                        a[p][k] = c * apk - s * aqk;
                        a[q][k] = s * apk + c * aqk;
                    }
                    for k in 0..n {
                        let (vkp, vkq) = (v[k][p], v[k][q]);
                        v[k][p] = c * vkp - s * vkq;
                        v[k][q] = s * vkp + c * vkq;
                    }
                }
            }
        }
        ((0..n).map(|i| a[i][i]).collect(), v)
    }

    #[test]
    fn identical_features_are_degenerate() {
        let f = field(&vec![vec![1.0, 2.0, 3.0, 4.0]; 10]);
        let r = pca_reduce(&f, 3).unwrap();
        assert!(r.degenerate);
        assert!(r.is_constant());
        assert!(r.coords.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn diagonal_covariance() {
        // ±2, ±1, ±0.5 along separate axes → sample variances scale with these
        let mut rows = Vec::new();
        for s in [-1.0, 1.0] {
            rows.push(vec![2.0 * s, 0.0, 0.0]);
            rows.push(vec![0.0, 1.0 * s, 0.0]);
            rows.push(vec![0.0, 0.0, 0.5 * s]);
        }
        let r = pca_reduce(&field(&rows), 3).unwrap();
        let scale = 2.0 / 5.0;
        let expect = [4.0 * scale, 1.0 * scale, 0.25 * scale];
        for (a, e) in r.explained_variance.iter().zip(expect) {
            assert!((a - e).abs() < 1e-12, "{a} vs {e}");
        }
        for (i, row) in rows.iter().enumerate() {
            for a in 0..3 {
                assert!((r.row(i)[a].abs() - row[a].abs()).abs() < 1e-12);
            }
        }
        assert!(!r.degenerate);
    }

    #[test]
    fn matches_jacobi_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let rows: Vec<Vec<f64>> = (0..50).map(|_| (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let r = pca_reduce(&field(&rows), 3).unwrap();

        let mean: Vec<f64> = (0..16).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / 50.0).collect();
        let cov: Vec<Vec<f64>> = (0..16)
            .map(|a| (0..16).map(|b| rows.iter().map(|r| (r[a] - mean[a]) * (r[b] - mean[b])).sum::<f64>() / 49.0).collect())
            .collect();
        let (vals, vecs) = jacobi_eigen(cov);
        let mut order: Vec<usize> = (0..16).collect();
        order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]));
        for a in 0..3 {
            let e = order[a];
            assert!((vals[e] - r.explained_variance[a]).abs() < 1e-8);
            let col: Vec<f64> = (0..16).map(|j| vecs[j][e]).collect();
            let pivot = (0..16).fold(0, |b, j| if col[j].abs() > col[b].abs() { j } else { b });
            let sign = col[pivot].signum();
            for (i, row) in rows.iter().enumerate() {
                let proj: f64 = (0..16).map(|j| (row[j] - mean[j]) * col[j] * sign).sum();
                assert!((proj - r.row(i)[a]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn basis_orthonormal_and_reconstruction_monotone() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let rows: Vec<Vec<f64>> = (0..40).map(|_| (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let f = field(&rows);
        let mut prev = f64::INFINITY;
        for k in 1..=6 {
            let r = pca_reduce(&f, k).unwrap();
            for a in 0..k {
                for b in 0..k {
                    let dot: f64 = (0..6).map(|j| r.basis[j * k + a] * r.basis[j * k + b]).sum();
                    assert!((dot - (a == b) as u8 as f64).abs() < 1e-6);
                }
            }
            for w in r.explained_variance.windows(2) {
                assert!(w[0] >= w[1]);
            }
            let err: f64 = (0..40).map(|i| r.reconstruct(i).iter().zip(&rows[i]).map(|(a, b)| (a - b).powi(2)).sum::<f64>()).sum();
            assert!(err <= prev + 1e-9);
            prev = err;
        }
        assert!(prev < 1e-18);
    }

    #[test]
    fn invalid_rows_excluded_from_fit() {
        let mut f = field(&[vec![1.0, 0.0], vec![-1.0, 0.0], vec![100.0, 100.0]]);
        f.visible_count[2] = 0;
        let r = pca_reduce(&f, 1).unwrap();
        assert_eq!(r.mean, vec![0.0, 0.0]);
        assert!((r.explained_variance[0] - 2.0).abs() < 1e-12);
    }
}
