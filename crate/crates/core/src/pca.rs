//! Two-component PCA by power iteration with deflation.
//!
//! Vectors are centered, the covariance is formed with a 1/N normalization,
//! and each principal direction is found by power iteration (tolerance
//! 1e-10, at most 10,000 iterations) followed by Hotelling deflation. Each
//! direction is sign-fixed so its first nonzero coordinate is positive,
//! which makes exports reproducible up to that convention.

use std::io::Write;

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

const POWER_TOLERANCE: f64 = 1e-10;
const POWER_MAX_ITERS: usize = 10_000;

/// 2-D projections plus the variance captured by each direction.
#[derive(Debug, Clone)]
pub struct Pca2 {
    pub projections: Vec<[f64; 2]>,
    pub explained_variance: [f64; 2],
    pub components: [Vec<f64>; 2],
}

fn covariance(centered: &[Vec<f64>], dim: usize) -> Vec<f64> {
    let n = centered.len() as f64;
    let mut cov = vec![0.0; dim * dim];
    for row in centered {
        for i in 0..dim {
            let vi = row[i];
            if vi != 0.0 {
                for j in 0..dim {
                    cov[i * dim + j] += vi * row[j];
                }
            }
        }
    }
    for c in &mut cov {
        *c /= n;
    }
    cov
}

fn matvec(m: &[f64], v: &[f64], dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    for i in 0..dim {
        let row = &m[i * dim..(i + 1) * dim];
        out[i] = row.iter().zip(v).map(|(a, b)| a * b).sum();
    }
    out
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Dominant eigenpair of a symmetric PSD matrix, or zeros when the matrix
/// has no energy in any direction reachable from the start vector.
fn power_iteration(cov: &[f64], dim: usize, rng: &mut SplitMix64) -> (Vec<f64>, f64) {
    let mut v: Vec<f64> = (0..dim).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let nv = norm(&v);
    for x in &mut v {
        *x /= nv;
    }
    for _ in 0..POWER_MAX_ITERS {
        let mut w = matvec(cov, &v, dim);
        let nw = norm(&w);
        if nw == 0.0 {
            return (vec![0.0; dim], 0.0);
        }
        for x in &mut w {
            *x /= nw;
        }
        let delta: f64 = w
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        v = w;
        if delta <= POWER_TOLERANCE {
            break;
        }
    }
    let cv = matvec(cov, &v, dim);
    let lambda: f64 = v.iter().zip(&cv).map(|(a, b)| a * b).sum();
    (v, lambda.max(0.0))
}

fn fix_sign(v: &mut [f64], projections: &mut [[f64; 2]], axis: usize) {
    let first_nonzero = v.iter().find(|x| **x != 0.0).copied().unwrap_or(0.0);
    if first_nonzero < 0.0 {
        for x in v.iter_mut() {
            *x = -*x;
        }
        for p in projections.iter_mut() {
            p[axis] = -p[axis];
        }
    }
}

/// Project `vectors` onto their top two principal directions.
///
/// Needs at least two vectors of equal dimension >= 2. Zero-variance input
/// is not an error: projections and variances are all zero.
pub fn pca_project_2d(vectors: &[Vec<f64>]) -> Result<Pca2> {
    if vectors.len() < 2 {
        return Err(Error::Contract(format!(
            "pca_project_2d needs at least 2 vectors, got {}",
            vectors.len()
        )));
    }
    let dim = vectors[0].len();
    if dim < 2 {
        return Err(Error::Contract(format!(
            "pca_project_2d needs dimension >= 2, got {dim}"
        )));
    }
    if let Some(bad) = vectors.iter().find(|v| v.len() != dim) {
        return Err(Error::Contract(format!(
            "pca_project_2d got mixed dimensions {} and {dim}",
            bad.len()
        )));
    }

    let n = vectors.len();
    let mut mean = vec![0.0; dim];
    for v in vectors {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let centered: Vec<Vec<f64>> = vectors
        .iter()
        .map(|v| v.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();

    let cov = covariance(&centered, dim);
    // Fixed-seed start vectors keep the output reproducible; the seed only
    // breaks symmetry and never influences the converged direction.
    let mut rng = SplitMix64::new(0x50CA);
    let (c1, lambda1) = power_iteration(&cov, dim, &mut rng);

    let mut deflated = cov.clone();
    for i in 0..dim {
        for j in 0..dim {
            deflated[i * dim + j] -= lambda1 * c1[i] * c1[j];
        }
    }
    let (c2, lambda2) = power_iteration(&deflated, dim, &mut rng);
    // Variance along the second direction is measured against the original
    // covariance; for an exact eigenvector both agree.
    let lambda2 = if lambda2 == 0.0 {
        0.0
    } else {
        let cv = matvec(&cov, &c2, dim);
        c2.iter().zip(&cv).map(|(a, b)| a * b).sum::<f64>().max(0.0)
    };

    let mut projections: Vec<[f64; 2]> = centered
        .iter()
        .map(|v| {
            [
                v.iter().zip(&c1).map(|(a, b)| a * b).sum(),
                v.iter().zip(&c2).map(|(a, b)| a * b).sum(),
            ]
        })
        .collect();
    let mut c1 = c1;
    let mut c2 = c2;
    fix_sign(&mut c1, &mut projections, 0);
    fix_sign(&mut c2, &mut projections, 1);

    Ok(Pca2 {
        projections,
        explained_variance: [lambda1, lambda2],
        components: [c1, c2],
    })
}

/// One labeled row of a PCA export.
#[derive(Debug, Clone)]
pub struct PcaRow {
    pub group_id: String,
    pub example_id: String,
    pub pc1: f64,
    pub pc2: f64,
}

/// Write `group_id,example_id,pc1,pc2` CSV (header included).
pub fn write_pca_csv<W: Write>(w: &mut W, rows: &[PcaRow]) -> Result<()> {
    writeln!(w, "group_id,example_id,pc1,pc2")?;
    for r in rows {
        writeln!(w, "{},{},{:.6},{:.6}", r.group_id, r.example_id, r.pc1, r.pc2)?;
    }
    Ok(())
}
