use ndarray::{Array2, ArrayView1};

use crate::error::{Error, Result};

/// Cepstral coefficients kept for MCD, excluding the energy term `c0`.
pub const MCD_COEFFS: usize = 13;

/// `(10 / ln 10) * sqrt(2)`
pub fn mcd_constant() -> f64 {
    10.0 / std::f64::consts::LN_10 * std::f64::consts::SQRT_2
}

/// Orthonormal DCT-II of each log-mel frame, keeping coefficients `1..=n`.
pub fn mel_cepstra(log_mel: &Array2<f64>, n: usize) -> Array2<f64> {
    let bands = log_mel.ncols();
    let n_bands = bands as f64;
    let basis = Array2::from_shape_fn((bands, n), |(m, k)| {
        let k = k + 1;
        (2.0 / n_bands).sqrt() * (std::f64::consts::PI * k as f64 * (2 * m + 1) as f64 / (2.0 * n_bands)).cos()
    });
    log_mel.dot(&basis)
}

fn euclid(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Minimum-cost monotone alignment with steps (1,1), (1,0), (0,1) under
/// Euclidean frame cost. Backtracking prefers the diagonal, then advancing `a`.
pub fn dtw_path(a: &Array2<f64>, b: &Array2<f64>) -> Vec<(usize, usize)> {
    let (n, m) = (a.nrows(), b.nrows());
    let mut acc = Array2::from_elem((n, m), f64::INFINITY);
    for i in 0..n {
        for j in 0..m {
            let cost = euclid(a.row(i), b.row(j));
            let prev = if i == 0 && j == 0 {
                0.0
            } else {
                let diag = if i > 0 && j > 0 { acc[[i - 1, j - 1]] } else { f64::INFINITY };
                let up = if i > 0 { acc[[i - 1, j]] } else { f64::INFINITY };
                let left = if j > 0 { acc[[i, j - 1]] } else { f64::INFINITY };
                diag.min(up).min(left)
            };
            acc[[i, j]] = cost + prev;
        }
    }
    let (mut i, mut j) = (n - 1, m - 1);
    let mut path = vec![(i, j)];
    while i > 0 || j > 0 {
        if i == 0 {
            j -= 1;
        } else if j == 0 {
            i -= 1;
        } else {
            let diag = acc[[i - 1, j - 1]];
            let up = acc[[i - 1, j]];
            let left = acc[[i, j - 1]];
            if diag <= up && diag <= left {
                i -= 1;
                j -= 1;
            } else if up <= left {
                i -= 1;
            } else {
                j -= 1;
            }
        }
        path.push((i, j));
    }
    path.reverse();
    path
}

/// Mel-cepstral distortion in dB between two cepstral sequences, averaged
/// over the DTW-aligned frame pairs.
pub fn mcd(reference: &Array2<f64>, converted: &Array2<f64>) -> Result<f64> {
    if reference.nrows() == 0 || converted.nrows() == 0 {
        return Err(Error::Data("MCD needs non-empty cepstral sequences".into()));
    }
    if reference.ncols() != converted.ncols() {
        return Err(Error::Shape(format!(
            "cepstra have {} and {} coefficients",
            reference.ncols(),
            converted.ncols()
        )));
    }
    let path = dtw_path(reference, converted);
    let total: f64 = path
        .iter()
        .map(|&(i, j)| euclid(reference.row(i), converted.row(j)))
        .sum();
    Ok(mcd_constant() * total / path.len() as f64)
}

/// MCD between two log-mel (or log-feature) sequences via [`mel_cepstra`].
pub fn mcd_from_log_mel(reference: &Array2<f64>, converted: &Array2<f64>) -> Result<f64> {
    mcd(&mel_cepstra(reference, MCD_COEFFS), &mel_cepstra(converted, MCD_COEFFS))
}
