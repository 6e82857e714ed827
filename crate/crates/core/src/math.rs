//! Small dense-vector helpers shared by the models.

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity; 0 when either side is the zero vector.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

/// Unit vector in the direction of `a`, or the zero vector.
pub fn normalized(a: &[f64]) -> Vec<f64> {
    let n = norm(a);
    if n == 0.0 {
        vec![0.0; a.len()]
    } else {
        a.iter().map(|x| x / n).collect()
    }
}

pub fn add_assign(acc: &mut [f64], x: &[f64]) {
    for (a, b) in acc.iter_mut().zip(x) {
        *a += b;
    }
}

pub fn axpy(acc: &mut [f64], scale: f64, x: &[f64]) {
    for (a, b) in acc.iter_mut().zip(x) {
        *a += scale * b;
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// `out = M x` for a row-major `rows × cols` matrix.
pub fn matvec(m: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(m.len(), rows * cols);
    for (r, o) in out.iter_mut().enumerate().take(rows) {
        *o = dot(&m[r * cols..(r + 1) * cols], x);
    }
}

/// `out += Mᵀ y` for a row-major `rows × cols` matrix.
pub fn matvec_t_acc(m: &[f64], rows: usize, cols: usize, y: &[f64], out: &mut [f64]) {
    for r in 0..rows {
        let yr = y[r];
        if yr != 0.0 {
            axpy(out, yr, &m[r * cols..(r + 1) * cols]);
        }
    }
}

/// `G += y xᵀ` for a row-major `rows × cols` gradient.
pub fn outer_acc(g: &mut [f64], cols: usize, y: &[f64], x: &[f64]) {
    for (r, &yr) in y.iter().enumerate() {
        if yr != 0.0 {
            axpy(&mut g[r * cols..(r + 1) * cols], yr, x);
        }
    }
}

/// Gradients of `cosine(u, v)` with respect to `u` and `v`, accumulated
/// with weight `scale`. No-op when either vector is zero.
pub fn cosine_grad_acc(u: &[f64], v: &[f64], scale: f64, du: &mut [f64], dv: &mut [f64]) {
    let nu = norm(u);
    let nv = norm(v);
    if nu == 0.0 || nv == 0.0 || scale == 0.0 {
        return;
    }
    let c = dot(u, v) / (nu * nv);
    let inv = 1.0 / (nu * nv);
    for k in 0..u.len() {
        du[k] += scale * (v[k] * inv - c * u[k] / (nu * nu));
        dv[k] += scale * (u[k] * inv - c * v[k] / (nv * nv));
    }
}

/// SplitMix64 finalizer; used to derive independent seeds.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for stream `(tag, index)` under `base`.
pub fn derive_seed(base: u64, tag: u64, index: u64) -> u64 {
    mix64(mix64(base ^ mix64(tag)) ^ index)
}

/// FNV-1a, stable across platforms and toolchains.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}
