//! Forward pass and exact reverse-mode gradient of the equivariant network.
//!
//! Per layer, for every directed edge `(i, j)`:
//!
//! ```text
//! m_ij = silu(W2 silu(W1 [h_i, h_j, |x_i - x_j|^2] + b1) + b2)
//! w_ij = wx2 . silu(Wx1 m_ij + bx1) + bx2
//! x_i <- x_i + C * sum_j (x_i - x_j) w_ij
//! h_i <- h_i + Wh2 silu(Wh1 [h_i, sum_j m_ij] + bh1) + bh2
//! ```
//!
//! Only inter-particle differences and squared distances enter, so the
//! coordinate output commutes with rotations, reflections and translations
//! of the input positions.

use crate::action::{CanonicalAction, FEATURE_DIM};
use crate::error::{Error, Result};
use crate::types::Vec3;

use super::params::{Dense, EgnnParams, GradientBundle};

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// `out += W[:, off..off+len] x`
#[inline]
fn matvec_cols(d: &Dense, off: usize, x: &[f64], out: &mut [f64]) {
    let stride = d.n_in;
    for (r, o) in out.iter_mut().enumerate() {
        let row = &d.w[r * stride + off..r * stride + off + x.len()];
        let mut s = 0.0;
        for (a, b) in row.iter().zip(x) {
            s += a * b;
        }
        *o += s;
    }
}

/// `out = W x + b`
#[inline]
fn affine(d: &Dense, x: &[f64], out: &mut [f64]) {
    out.copy_from_slice(&d.b);
    matvec_cols(d, 0, x, out);
}

/// `out += W[:, off..off+out.len()]^T g`
#[inline]
fn matvec_t_cols(d: &Dense, off: usize, g: &[f64], out: &mut [f64]) {
    let stride = d.n_in;
    for (r, gr) in g.iter().enumerate() {
        if *gr == 0.0 {
            continue;
        }
        let row = &d.w[r * stride + off..r * stride + off + out.len()];
        for (o, w) in out.iter_mut().zip(row) {
            *o += gr * w;
        }
    }
}

/// `dW[:, off..off+x.len()] += g x^T`
#[inline]
fn outer_acc(dw: &mut Dense, off: usize, g: &[f64], x: &[f64]) {
    let stride = dw.n_in;
    for (r, gr) in g.iter().enumerate() {
        if *gr == 0.0 {
            continue;
        }
        let row = &mut dw.w[r * stride + off..r * stride + off + x.len()];
        for (o, xv) in row.iter_mut().zip(x) {
            *o += gr * xv;
        }
    }
}

#[inline]
fn add_into(dst: &mut [f64], src: &[f64]) {
    for (a, b) in dst.iter_mut().zip(src) {
        *a += b;
    }
}

/// Undirected pairs expanded to both directions, in input order.
fn directed(edges: &[(usize, usize)]) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(edges.len() * 2);
    for &(i, j) in edges {
        out.push((i, j));
        out.push((j, i));
    }
    out
}

struct LayerCache {
    x: Vec<Vec3>,
    h: Vec<f64>,
    diff: Vec<Vec3>,
    d2: Vec<f64>,
    u1: Vec<f64>,
    u2: Vec<f64>,
    a1: Vec<f64>,
    m: Vec<f64>,
    v1: Vec<f64>,
    c1: Vec<f64>,
    w: Vec<f64>,
    msum: Vec<f64>,
    q1: Vec<f64>,
    b1: Vec<f64>,
}

/// Activations recorded by a forward pass, consumed by [`backward_from`].
pub struct ForwardCache {
    feats: Vec<[f64; FEATURE_DIM]>,
    edges: Vec<(usize, usize)>,
    layers: Vec<LayerCache>,
    pub output: Vec<Vec3>,
}

fn check_inputs(positions: &[Vec3], features: &CanonicalAction, edges: &[(usize, usize)], params: &EgnnParams) -> Result<()> {
    let n = positions.len();
    if features.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: features.len(),
        });
    }
    for &(i, j) in edges {
        if i >= n || j >= n || i == j {
            return Err(Error::InvalidInput(format!("edge ({i}, {j}) invalid for {n} particles")));
        }
    }
    if params.layers.len() != params.n_layers || params.n_layers == 0 {
        return Err(Error::InvalidInput("malformed parameters".into()));
    }
    Ok(())
}

fn forward_impl(
    positions: &[Vec3],
    features: &CanonicalAction,
    edges: &[(usize, usize)],
    params: &EgnnParams,
    keep: bool,
) -> Result<(Vec<Vec3>, Option<ForwardCache>)> {
    check_inputs(positions, features, edges, params)?;
    let n = positions.len();
    let hd = params.hidden_dim;
    let dir = directed(edges);
    let ne = dir.len();
    let inv_l = 1.0 / params.length_scale;
    let inv_l2 = inv_l * inv_l;
    let feats: Vec<[f64; FEATURE_DIM]> = features
        .features()
        .into_iter()
        .map(|f| f.map(|v| v * inv_l))
        .collect();

    let mut h = vec![0.0; n * hd];
    for i in 0..n {
        affine(&params.embed, &feats[i], &mut h[i * hd..(i + 1) * hd]);
    }
    let mut x = positions.to_vec();
    let mut caches = Vec::new();

    let mut p = vec![0.0; n * hd];
    let mut q = vec![0.0; n * hd];
    for (l, layer) in params.layers.iter().enumerate() {
        let last = l + 1 == params.n_layers;
        let ein = &layer.edge_in;
        for i in 0..n {
            let hi = &h[i * hd..(i + 1) * hd];
            let pi = &mut p[i * hd..(i + 1) * hd];
            pi.copy_from_slice(&ein.b);
            matvec_cols(ein, 0, hi, pi);
            let qi = &mut q[i * hd..(i + 1) * hd];
            qi.fill(0.0);
            matvec_cols(ein, hd, hi, qi);
        }

        let mut diff = vec![Vec3::ZERO; ne];
        let mut d2 = vec![0.0; ne];
        let mut u1 = vec![0.0; ne * hd];
        let mut a1 = vec![0.0; ne * hd];
        let mut u2 = vec![0.0; ne * hd];
        let mut m = vec![0.0; ne * hd];
        let mut v1 = vec![0.0; ne * hd];
        let mut c1 = vec![0.0; ne * hd];
        let mut w = vec![0.0; ne];
        let mut msum = vec![0.0; n * hd];
        let mut x_new = x.clone();

        let stride = ein.n_in;
        for (k, &(i, j)) in dir.iter().enumerate() {
            let dk = x[i] - x[j];
            let dd = dk.norm_sq() * inv_l2;
            diff[k] = dk;
            d2[k] = dd;
            let r = k * hd..(k + 1) * hd;
            {
                let u = &mut u1[r.clone()];
                for c in 0..hd {
                    u[c] = p[i * hd + c] + q[j * hd + c] + ein.w[c * stride + 2 * hd] * dd;
                }
                let a = &mut a1[r.clone()];
                for c in 0..hd {
                    a[c] = silu(u[c]);
                }
            }
            affine(&layer.edge_out, &a1[r.clone()], &mut u2[r.clone()]);
            for c in 0..hd {
                m[k * hd + c] = silu(u2[k * hd + c]);
            }
            affine(&layer.coord_hidden, &m[r.clone()], &mut v1[r.clone()]);
            let mut wk = layer.coord_out.b[0];
            for c in 0..hd {
                let cv = silu(v1[k * hd + c]);
                c1[k * hd + c] = cv;
                wk += layer.coord_out.w[c] * cv;
            }
            w[k] = wk;
            x_new[i] += dk * (params.coord_scale * wk);
            add_into(&mut msum[i * hd..(i + 1) * hd], &m[r]);
        }

        let mut q1 = Vec::new();
        let mut b1 = Vec::new();
        let mut h_new = h.clone();
        if !last {
            q1 = vec![0.0; n * hd];
            b1 = vec![0.0; n * hd];
            let mut g = vec![0.0; 2 * hd];
            let mut out = vec![0.0; hd];
            for i in 0..n {
                g[..hd].copy_from_slice(&h[i * hd..(i + 1) * hd]);
                g[hd..].copy_from_slice(&msum[i * hd..(i + 1) * hd]);
                affine(&layer.node_hidden, &g, &mut q1[i * hd..(i + 1) * hd]);
                for c in 0..hd {
                    b1[i * hd + c] = silu(q1[i * hd + c]);
                }
                affine(&layer.node_out, &b1[i * hd..(i + 1) * hd], &mut out);
                add_into(&mut h_new[i * hd..(i + 1) * hd], &out);
            }
        }

        if x_new.iter().any(|v| !v.is_finite()) || h_new.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericLayer { layer: l });
        }

        if keep {
            caches.push(LayerCache {
                x: std::mem::take(&mut x),
                h: std::mem::take(&mut h),
                diff,
                d2,
                u1,
                u2,
                a1,
                m,
                v1,
                c1,
                w,
                msum,
                q1,
                b1,
            });
        }
        x = x_new;
        h = h_new;
    }

    let cache = keep.then(|| ForwardCache {
        feats,
        edges: dir,
        layers: caches,
        output: x.clone(),
    });
    Ok((x, cache))
}

/// Predicted particle positions at the end of the action.
pub fn egnn_forward(positions: &[Vec3], features: &CanonicalAction, edges: &[(usize, usize)], params: &EgnnParams) -> Result<Vec<Vec3>> {
    Ok(forward_impl(positions, features, edges, params, false)?.0)
}

/// Forward pass that keeps the activations needed for the gradient.
pub fn egnn_forward_cached(
    positions: &[Vec3],
    features: &CanonicalAction,
    edges: &[(usize, usize)],
    params: &EgnnParams,
) -> Result<ForwardCache> {
    Ok(forward_impl(positions, features, edges, params, true)?
        .1
        .expect("cache requested"))
}

/// Accumulates `dL/dθ` into `grads` given `dL/d(output positions)`.
pub fn backward_from(cache: &ForwardCache, grad_out: &[Vec3], params: &EgnnParams, grads: &mut GradientBundle) {
    let hd = params.hidden_dim;
    let n = grad_out.len();
    let cs = params.coord_scale;
    let inv_l2 = 1.0 / (params.length_scale * params.length_scale);
    let g = &mut grads.0;

    let mut gx = grad_out.to_vec();
    let mut gh = vec![0.0; n * hd];

    let mut tmp_h = vec![0.0; hd];
    let mut tmp_2h = vec![0.0; 2 * hd];
    let mut gc1 = vec![0.0; hd];
    let mut gv1 = vec![0.0; hd];
    let mut gm = vec![0.0; hd];
    let mut gu2 = vec![0.0; hd];
    let mut ga1 = vec![0.0; hd];
    let mut gu1 = vec![0.0; hd];

    for l in (0..params.n_layers).rev() {
        let lc = &cache.layers[l];
        let layer = &params.layers[l];
        let gl = &mut g.layers[l];
        let last = l + 1 == params.n_layers;

        let mut gh_in = gh.clone();
        let mut gmsum = vec![0.0; n * hd];
        if !last {
            for i in 0..n {
                let go = &gh[i * hd..(i + 1) * hd];
                add_into(&mut gl.node_out.b, go);
                outer_acc(&mut gl.node_out, 0, go, &lc.b1[i * hd..(i + 1) * hd]);
                tmp_h.fill(0.0);
                matvec_t_cols(&layer.node_out, 0, go, &mut tmp_h);
                for c in 0..hd {
                    tmp_h[c] *= silu_grad(lc.q1[i * hd + c]);
                }
                add_into(&mut gl.node_hidden.b, &tmp_h);
                outer_acc(&mut gl.node_hidden, 0, &tmp_h, &lc.h[i * hd..(i + 1) * hd]);
                outer_acc(&mut gl.node_hidden, hd, &tmp_h, &lc.msum[i * hd..(i + 1) * hd]);
                tmp_2h.fill(0.0);
                matvec_t_cols(&layer.node_hidden, 0, &tmp_h, &mut tmp_2h);
                add_into(&mut gh_in[i * hd..(i + 1) * hd], &tmp_2h[..hd]);
                gmsum[i * hd..(i + 1) * hd].copy_from_slice(&tmp_2h[hd..]);
            }
        }

        let mut gx_in = gx.clone();
        let mut gp = vec![0.0; n * hd];
        let mut gq = vec![0.0; n * hd];
        let ein = &layer.edge_in;
        let stride = ein.n_in;
        for (k, &(i, j)) in cache.edges.iter().enumerate() {
            let r = k * hd..(k + 1) * hd;
            let dk = lc.diff[k];
            let gxi = gx[i];
            let g_w = cs * dk.dot(gxi);
            let mut g_diff = gxi * (cs * lc.w[k]);

            // coordinate network
            gl.coord_out.b[0] += g_w;
            if g_w != 0.0 {
                for c in 0..hd {
                    gl.coord_out.w[c] += g_w * lc.c1[k * hd + c];
                    gc1[c] = g_w * layer.coord_out.w[c];
                }
            } else {
                gc1.fill(0.0);
            }
            for c in 0..hd {
                gv1[c] = gc1[c] * silu_grad(lc.v1[k * hd + c]);
            }
            add_into(&mut gl.coord_hidden.b, &gv1);
            outer_acc(&mut gl.coord_hidden, 0, &gv1, &lc.m[r.clone()]);
            gm.copy_from_slice(&gmsum[i * hd..(i + 1) * hd]);
            matvec_t_cols(&layer.coord_hidden, 0, &gv1, &mut gm);

            // edge network
            for c in 0..hd {
                gu2[c] = gm[c] * silu_grad(lc.u2[k * hd + c]);
            }
            add_into(&mut gl.edge_out.b, &gu2);
            outer_acc(&mut gl.edge_out, 0, &gu2, &lc.a1[r.clone()]);
            ga1.fill(0.0);
            matvec_t_cols(&layer.edge_out, 0, &gu2, &mut ga1);
            let mut g_d2 = 0.0;
            for c in 0..hd {
                let gu = ga1[c] * silu_grad(lc.u1[k * hd + c]);
                gu1[c] = gu;
                gl.edge_in.w[c * stride + 2 * hd] += gu * lc.d2[k];
                g_d2 += gu * ein.w[c * stride + 2 * hd];
            }
            add_into(&mut gl.edge_in.b, &gu1);
            add_into(&mut gp[i * hd..(i + 1) * hd], &gu1);
            add_into(&mut gq[j * hd..(j + 1) * hd], &gu1);

            g_diff += dk * (2.0 * g_d2 * inv_l2);
            gx_in[i] += g_diff;
            gx_in[j] -= g_diff;
        }
        for i in 0..n {
            let hi = &lc.h[i * hd..(i + 1) * hd];
            let gpi = &gp[i * hd..(i + 1) * hd];
            let gqi = &gq[i * hd..(i + 1) * hd];
            outer_acc(&mut gl.edge_in, 0, gpi, hi);
            outer_acc(&mut gl.edge_in, hd, gqi, hi);
            let ghi = &mut gh_in[i * hd..(i + 1) * hd];
            matvec_t_cols(ein, 0, gpi, ghi);
            matvec_t_cols(ein, hd, gqi, ghi);
        }
        gx = gx_in;
        gh = gh_in;
        let _ = &lc.x;
    }

    for (i, f) in cache.feats.iter().enumerate() {
        let ghi = &gh[i * hd..(i + 1) * hd];
        add_into(&mut g.embed.b, ghi);
        outer_acc(&mut g.embed, 0, ghi, f);
    }
}
