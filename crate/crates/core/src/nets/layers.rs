//! Dense primitives over row-major buffers, each with its backward pass.

use super::Real;

pub const LN_EPS: f64 = 1e-6;

/// Dot product with eight independent accumulators.
#[inline]
pub fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [F::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] = acc[l] + x[l] * y[l];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for (x, y) in ra.iter().zip(rb) {
        s = s + *x * *y;
    }
    s
}

#[inline]
pub fn axpy<F: Real>(alpha: F, x: &[F], y: &mut [F]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * *xi;
    }
}

/// `y[n, m] = x[n, k] · w[k, m] + b[m]`.
pub fn linear<F: Real>(x: &[F], n: usize, k: usize, w: &[F], b: &[F], m: usize, y: &mut [F]) {
    for i in 0..n {
        let yr = &mut y[i * m..(i + 1) * m];
        yr.copy_from_slice(b);
        let xr = &x[i * k..(i + 1) * k];
        for (p, &xv) in xr.iter().enumerate() {
            if xv != F::zero() {
                axpy(xv, &w[p * m..(p + 1) * m], yr);
            }
        }
    }
}

/// Accumulates `dw += xᵀ·dy`, `db += Σ dy` and, when requested, writes `dx = dy·wᵀ`.
pub fn linear_backward<F: Real>(
    x: &[F],
    n: usize,
    k: usize,
    w: &[F],
    m: usize,
    dy: &[F],
    dw: &mut [F],
    db: &mut [F],
    dx: Option<&mut [F]>,
) {
    for i in 0..n {
        let dyr = &dy[i * m..(i + 1) * m];
        axpy(F::one(), dyr, db);
        let xr = &x[i * k..(i + 1) * k];
        for (p, &xv) in xr.iter().enumerate() {
            if xv != F::zero() {
                axpy(xv, dyr, &mut dw[p * m..(p + 1) * m]);
            }
        }
    }
    if let Some(dx) = dx {
        for i in 0..n {
            let dyr = &dy[i * m..(i + 1) * m];
            for p in 0..k {
                dx[i * k + p] = dot(dyr, &w[p * m..(p + 1) * m]);
            }
        }
    }
}

/// Row-wise layer norm. Stores the normalized rows and reciprocal std.
pub fn layer_norm<F: Real>(x: &[F], n: usize, d: usize, g: &[F], b: &[F], xhat: &mut [F], rstd: &mut [F], y: &mut [F]) {
    let inv_d = F::one() / F::from(d).unwrap();
    let eps = F::from(LN_EPS).unwrap();
    for i in 0..n {
        let xr = &x[i * d..(i + 1) * d];
        let mean = xr.iter().copied().sum::<F>() * inv_d;
        let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() * inv_d;
        let r = F::one() / (var + eps).sqrt();
        rstd[i] = r;
        for j in 0..d {
            let h = (xr[j] - mean) * r;
            xhat[i * d + j] = h;
            y[i * d + j] = g[j] * h + b[j];
        }
    }
}

/// Adds the input gradient into `dx`.
pub fn layer_norm_backward<F: Real>(
    xhat: &[F],
    rstd: &[F],
    n: usize,
    d: usize,
    g: &[F],
    dy: &[F],
    dg: &mut [F],
    db: &mut [F],
    dx: &mut [F],
) {
    let inv_d = F::one() / F::from(d).unwrap();
    for i in 0..n {
        let h = &xhat[i * d..(i + 1) * d];
        let dyr = &dy[i * d..(i + 1) * d];
        let mut m1 = F::zero();
        let mut m2 = F::zero();
        for j in 0..d {
            let dh = dyr[j] * g[j];
            dg[j] = dg[j] + dyr[j] * h[j];
            db[j] = db[j] + dyr[j];
            m1 = m1 + dh;
            m2 = m2 + dh * h[j];
        }
        m1 = m1 * inv_d;
        m2 = m2 * inv_d;
        for j in 0..d {
            let dh = dyr[j] * g[j];
            dx[i * d + j] = dx[i * d + j] + rstd[i] * (dh - m1 - h[j] * m2);
        }
    }
}

/// Multi-head scaled dot-product attention over `n` rows of width `d`.
/// `p` receives the `heads × n × n` attention weights.
pub fn attention<F: Real>(q: &[F], k: &[F], v: &[F], n: usize, d: usize, heads: usize, p: &mut [F], ctx: &mut [F]) {
    let dk = d / heads;
    let scale = F::one() / F::from(dk).unwrap().sqrt();
    ctx.iter_mut().for_each(|c| *c = F::zero());
    for h in 0..heads {
        let c0 = h * dk;
        for i in 0..n {
            let row = &mut p[(h * n + i) * n..(h * n + i + 1) * n];
            let qi = &q[i * d + c0..i * d + c0 + dk];
            let mut mx = F::neg_infinity();
            for j in 0..n {
                let s = dot(qi, &k[j * d + c0..j * d + c0 + dk]) * scale;
                row[j] = s;
                mx = mx.max(s);
            }
            let mut z = F::zero();
            for r in row.iter_mut() {
                *r = (*r - mx).exp();
                z = z + *r;
            }
            let inv = F::one() / z;
            for j in 0..n {
                row[j] = row[j] * inv;
                axpy(row[j], &v[j * d + c0..j * d + c0 + dk], &mut ctx[i * d + c0..i * d + c0 + dk]);
            }
        }
    }
}

/// Writes `dq`, `dk`, `dv` (overwriting) from `dctx`. `scratch` needs `n` entries.
pub fn attention_backward<F: Real>(
    q: &[F],
    k: &[F],
    v: &[F],
    p: &[F],
    n: usize,
    d: usize,
    heads: usize,
    dctx: &[F],
    dq: &mut [F],
    dk_out: &mut [F],
    dv: &mut [F],
    scratch: &mut [F],
) {
    let dk = d / heads;
    let scale = F::one() / F::from(dk).unwrap().sqrt();
    for buf in [&mut *dq, &mut *dk_out, &mut *dv] {
        buf.iter_mut().for_each(|x| *x = F::zero());
    }
    for h in 0..heads {
        let c0 = h * dk;
        for i in 0..n {
            let row = &p[(h * n + i) * n..(h * n + i + 1) * n];
            let dci = &dctx[i * d + c0..i * d + c0 + dk];
            let mut s = F::zero();
            for j in 0..n {
                let dp = dot(dci, &v[j * d + c0..j * d + c0 + dk]);
                scratch[j] = dp;
                s = s + dp * row[j];
                axpy(row[j], dci, &mut dv[j * d + c0..j * d + c0 + dk]);
            }
            for j in 0..n {
                let ds = row[j] * (scratch[j] - s) * scale;
                if ds != F::zero() {
                    axpy(ds, &k[j * d + c0..j * d + c0 + dk], &mut dq[i * d + c0..i * d + c0 + dk]);
                    axpy(ds, &q[i * d + c0..i * d + c0 + dk], &mut dk_out[j * d + c0..j * d + c0 + dk]);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;

    #[test]
    fn dot_matches_naive() {
        for n in [0usize, 1, 7, 8, 9, 33] {
            let a: Vec<f64> = (0..n).map(|i| i as f64 * 0.5 - 3.0).collect();
            let b: Vec<f64> = (0..n).map(|i| 1.0 / (i as f64 + 1.0)).collect();
            let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
            assert!((dot(&a, &b) - naive).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_statistics() {
        let x: Vec<f64> = (0..16).map(|i| ((i * 7) % 5) as f64 + 0.1 * i as f64).collect();
        let g = [1.0; 8];
        let b = [0.0; 8];
        let (mut xh, mut r, mut y) = ([0.0; 16], [0.0; 2], [0.0; 16]);
        layer_norm(&x, 2, 8, &g, &b, &mut xh, &mut r, &mut y);
        for row in y.chunks(8) {
            let m: f64 = row.iter().sum::<f64>() / 8.0;
            let v: f64 = row.iter().map(|t| (t - m) * (t - m)).sum::<f64>() / 8.0;
            assert!(m.abs() < 1e-12);
            assert!((v - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn attention_rows_are_distributions() {
        let n = 3;
        let d = 4;
        let q: Vec<f64> = (0..12).map(|i| (i as f64).sin()).collect();
        let k: Vec<f64> = (0..12).map(|i| (i as f64).cos()).collect();
        let v: Vec<f64> = (0..12).map(|i| i as f64).collect();
        let mut p = [0.0; 18];
        let mut c = [0.0; 12];
        attention(&q, &k, &v, n, d, 2, &mut p, &mut c);
        for row in p.chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
