//! Reference NC metrics written with explicit loops and no shared helpers.

pub struct Naive {
    pub nc1: f64,
    pub nc2: f64,
    pub nc3: f64,
}

fn invert(mut a: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut inv: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for col in 0..n {
        let mut pivot = col;
        for r in col + 1..n {
            if a[r][col].abs() > a[pivot][col].abs() {
                pivot = r;
            }
        }
        a.swap(col, pivot);
        inv.swap(col, pivot);
        let p = a[col][col];
        for j in 0..n {
            a[col][j] /= p;
            inv[col][j] /= p;
        }
        for r in 0..n {
            if r != col {
                let f = a[r][col];
                for j in 0..n {
                    a[r][j] -= f * a[col][j];
                    inv[r][j] -= f * inv[col][j];
                }
            }
        }
    }
    inv
}

fn distance(gram: &[Vec<f64>]) -> f64 {
    let k = gram.len();
    let mut norm = 0.0;
    for row in gram {
        for v in row {
            norm += v * v;
        }
    }
    let norm = norm.sqrt();
    let mut acc = 0.0;
    for i in 0..k {
        for j in 0..k {
            let target =
                (if i == j { 1.0 } else { 0.0 } - 1.0 / k as f64) / ((k - 1) as f64).sqrt();
            acc += (gram[i][j] / norm - target).powi(2);
        }
    }
    acc.sqrt()
}

/// Assumes the centered means span a (K-1)-dimensional space, so the
/// pseudoinverse of Σ_B follows from the K x K Gram of centered means:
/// with G = HᵀH, G⁺ = (G + 11ᵀ/K)⁻¹ − 11ᵀ/K and Σ_B⁺ = K·H G⁺ G⁺ Hᵀ.
pub fn naive(d: usize, k: usize, samples: &[(usize, Vec<f64>)], w: &[Vec<f64>]) -> Naive {
    let mut means = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (c, x) in samples {
        counts[*c] += 1;
        for i in 0..d {
            means[*c][i] += x[i];
        }
    }
    for c in 0..k {
        for i in 0..d {
            means[c][i] /= counts[c] as f64;
        }
    }
    let mut g = vec![0.0; d];
    for c in 0..k {
        for i in 0..d {
            g[i] += means[c][i] / k as f64;
        }
    }
    let h: Vec<Vec<f64>> = (0..k)
        .map(|c| (0..d).map(|i| means[c][i] - g[i]).collect())
        .collect();

    let mut sw = vec![vec![0.0; d]; d];
    for (c, x) in samples {
        for i in 0..d {
            for j in 0..d {
                sw[i][j] += (x[i] - means[*c][i]) * (x[j] - means[*c][j]) / samples.len() as f64;
            }
        }
    }
    let mut gram = vec![vec![0.0; k]; k];
    for a in 0..k {
        for b in 0..k {
            for i in 0..d {
                gram[a][b] += h[a][i] * h[b][i];
            }
        }
    }
    let mut shifted = gram.clone();
    for row in shifted.iter_mut() {
        for v in row.iter_mut() {
            *v += 1.0 / k as f64;
        }
    }
    let mut gp = invert(shifted);
    for row in gp.iter_mut() {
        for v in row.iter_mut() {
            *v -= 1.0 / k as f64;
        }
    }
    let mut gp2 = vec![vec![0.0; k]; k];
    for a in 0..k {
        for b in 0..k {
            for c in 0..k {
                gp2[a][b] += gp[a][c] * gp[c][b];
            }
        }
    }
    let mut sb_pinv = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in 0..d {
            for a in 0..k {
                for b in 0..k {
                    sb_pinv[i][j] += k as f64 * h[a][i] * gp2[a][b] * h[b][j];
                }
            }
        }
    }
    let mut tr = 0.0;
    for i in 0..d {
        for j in 0..d {
            tr += sw[i][j] * sb_pinv[j][i];
        }
    }

    let mut cross = vec![vec![0.0; k]; k];
    for a in 0..k {
        for b in 0..k {
            for i in 0..d {
                cross[a][b] += h[a][i] * w[b][i];
            }
        }
    }
    Naive {
        nc1: tr / k as f64,
        nc2: distance(&gram),
        nc3: distance(&cross),
    }
}
