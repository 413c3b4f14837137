//! PCA projection of latent vectors to two dimensions.
//!
//! Mean-center, form the sample covariance, diagonalize it with cyclic
//! Jacobi rotations, and project onto the two leading eigenvectors. Each
//! eigenvector's sign is canonicalized (largest-magnitude component made
//! positive) so the projection does not depend on input ordering.

use super::EvalError;

#[derive(Clone, Debug)]
pub struct Projection {
    /// One (x, y) pair per input latent, in input order.
    pub coords: Vec<[f64; 2]>,
    /// All covariance eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    /// Share of total variance carried by the two leading components;
    /// 0 for an input with no variance at all.
    pub explained: f64,
}

/// Projects latents onto their top-2 principal components.
pub fn project_latents(latents: &[Vec<f64>]) -> Result<Projection, EvalError> {
    if latents.len() < 3 {
        return Err(EvalError::TooFewPoints { got: latents.len() });
    }
    let d = latents[0].len();
    if d == 0 {
        return Err(EvalError::EmptyInput("latent dimension"));
    }
    for z in latents {
        if z.len() != d {
            return Err(EvalError::DimMismatch { what: "latent", want: d, got: z.len() });
        }
    }
    let n = latents.len();

    let mut mean = vec![0.0; d];
    for z in latents {
        for (m, &x) in mean.iter_mut().zip(z) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }

    // Sample covariance, denominator n - 1.
    let mut cov = vec![0.0; d * d];
    for z in latents {
        for i in 0..d {
            let zi = z[i] - mean[i];
            for j in i..d {
                cov[i * d + j] += zi * (z[j] - mean[j]);
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[i * d + j] / (n - 1) as f64;
            cov[i * d + j] = v;
            cov[j * d + i] = v;
        }
    }

    let (mut eigenvalues, mut vectors) = jacobi_eigen(&cov, d);

    // Descending eigenvalue order, index as a deterministic tiebreak.
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eigenvalues[b]
            .partial_cmp(&eigenvalues[a])
            .expect("covariance eigenvalues are finite")
            .then(a.cmp(&b))
    });
    eigenvalues = order.iter().map(|&i| eigenvalues[i]).collect();
    vectors = order.iter().map(|&i| vectors[i].clone()).collect();

    for vec in vectors.iter_mut().take(2) {
        canonicalize_sign(vec);
    }

    let total: f64 = eigenvalues.iter().sum();
    let top2 = eigenvalues.first().copied().unwrap_or(0.0)
        + eigenvalues.get(1).copied().unwrap_or(0.0);
    let explained = if total > 0.0 { top2 / total } else { 0.0 };

    // A 1-dimensional input leaves the second axis at zero.
    let coords = latents
        .iter()
        .map(|z| {
            let mut xy = [0.0; 2];
            for axis in 0..d.min(2) {
                xy[axis] = (0..d).map(|i| (z[i] - mean[i]) * vectors[axis][i]).sum();
            }
            xy
        })
        .collect();

    Ok(Projection { coords, eigenvalues, explained })
}

/// Flips a vector so its largest-magnitude component is positive.
fn canonicalize_sign(v: &mut [f64]) {
    let mut lead = 0;
    for (i, &x) in v.iter().enumerate() {
        if x.abs() > v[lead].abs() {
            lead = i;
        }
    }
    if v[lead] < 0.0 {
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
}

/// Cyclic Jacobi diagonalization of a symmetric matrix. Returns the
/// eigenvalues and one eigenvector per entry (unsorted).
fn jacobi_eigen(matrix: &[f64], d: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut a = matrix.to_vec();
    let mut v = vec![0.0; d * d];
    for i in 0..d {
        v[i * d + i] = 1.0;
    }
    let scale: f64 = (0..d).map(|i| a[i * d + i].abs()).fold(0.0, f64::max).max(1e-300);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..d {
            for q in p + 1..d {
                off += a[p * d + q] * a[p * d + q];
            }
        }
        if off.sqrt() <= 1e-14 * scale * d as f64 {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                let apq = a[p * d + q];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (a[q * d + q] - a[p * d + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let akp = a[k * d + p];
                    let akq = a[k * d + q];
                    a[k * d + p] = c * akp - s * akq;
                    a[k * d + q] = s * akp + c * akq;
                }
                for k in 0..d {
                    let apk = a[p * d + k];
                    let aqk = a[q * d + k];
                    a[p * d + k] = c * apk - s * aqk;
                    a[q * d + k] = s * apk + c * aqk;
                }
                for k in 0..d {
                    let vkp = v[k * d + p];
                    let vkq = v[k * d + q];
                    v[k * d + p] = c * vkp - s * vkq;
                    v[k * d + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let eigenvalues: Vec<f64> = (0..d).map(|i| a[i * d + i]).collect();
    let vectors: Vec<Vec<f64>> = (0..d)
        .map(|col| (0..d).map(|row| v[row * d + col]).collect())
        .collect();
    (eigenvalues, vectors)
}

/// CSV with header `x,y,label,weight`, one row per projected point.
pub fn projection_csv(
    projection: &Projection,
    labels: &[String],
    weights: &[f64],
) -> Result<String, EvalError> {
    let n = projection.coords.len();
    if labels.len() != n || weights.len() != n {
        return Err(EvalError::LengthMismatch {
            candidates: n,
            references: labels.len().min(weights.len()),
        });
    }
    let mut out = String::from("x,y,label,weight\n");
    for (([x, y], label), weight) in projection.coords.iter().zip(labels).zip(weights) {
        out.push_str(&format!("{x},{y},{label},{weight}\n"));
    }
    Ok(out)
}

/// Raw latent export: one line per vector holding label, weight, then
/// every component, space-separated. Intended for external projection
/// tools.
pub fn raw_latents_export(
    latents: &[Vec<f64>],
    labels: &[String],
    weights: &[f64],
) -> Result<String, EvalError> {
    let n = latents.len();
    if labels.len() != n || weights.len() != n {
        return Err(EvalError::LengthMismatch {
            candidates: n,
            references: labels.len().min(weights.len()),
        });
    }
    let mut out = String::new();
    for ((z, label), weight) in latents.iter().zip(labels).zip(weights) {
        out.push_str(label);
        out.push(' ');
        out.push_str(&weight.to_string());
        for x in z {
            out.push(' ');
            out.push_str(&x.to_string());
        }
        out.push('\n');
    }
    Ok(out)
}
