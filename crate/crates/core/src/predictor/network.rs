//! Forward and backward passes.
//!
//! Every time row is processed by the same feature extractor, and every
//! site by the same weights: a pointwise fully connected lift of the
//! occupancy bit to `dense_in` features, two periodic convolutions, and
//! dropout. Each site then runs its own copy of one shared LSTM over the
//! window; its last hidden state is projected to a logit. All activations
//! between layers are `tanh`. Arrays are `[channel][site]`, flat.

use rand::Rng;

use super::config::PredictorConfig;
use super::params::Params;
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, Copy)]
pub(crate) struct Dims {
    pub n: usize,
    pub w: usize,
    pub d: usize,
    pub c1: usize,
    pub k1: usize,
    pub c2: usize,
    pub k2: usize,
    pub h: usize,
}

impl Dims {
    pub fn new(cfg: &PredictorConfig) -> Self {
        Self {
            n: cfg.n_sites,
            w: cfg.window,
            d: cfg.dense_in,
            c1: cfg.conv[0].channels,
            k1: cfg.conv[0].kernel_width,
            c2: cfg.conv[1].channels,
            k2: cfg.conv[1].kernel_width,
            h: cfg.lstm_hidden,
        }
    }
}

/// Activations kept for the backward pass.
pub(crate) struct Trace {
    x: Vec<f64>,
    a0: Vec<f64>,
    a1: Vec<f64>,
    a2: Vec<f64>,
    mask: Option<Vec<f64>>,
    feat: Vec<f64>,
    /// Activated gates per step: `[t][4H][N]`.
    gates: Vec<f64>,
    /// Cell states, `W + 1` steps with step 0 all zeros.
    cell: Vec<f64>,
    hidden: Vec<f64>,
    pub probs: Vec<f64>,
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `out[i] += a * src[(i + shift) mod n]`.
#[inline]
fn axpy_shifted(out: &mut [f64], src: &[f64], a: f64, shift: isize) {
    let n = out.len();
    let s = shift.rem_euclid(n as isize) as usize;
    let (head, tail) = out.split_at_mut(n - s);
    for (o, v) in head.iter_mut().zip(&src[s..]) {
        *o += a * v;
    }
    for (o, v) in tail.iter_mut().zip(&src[..s]) {
        *o += a * v;
    }
}

/// `sum_i x[i] * src[(i + shift) mod n]`.
#[inline]
fn dot_shifted(x: &[f64], src: &[f64], shift: isize) -> f64 {
    let n = x.len();
    let s = shift.rem_euclid(n as isize) as usize;
    let mut acc = 0.0;
    for (a, b) in x[..n - s].iter().zip(&src[s..]) {
        acc += a * b;
    }
    for (a, b) in x[n - s..].iter().zip(&src[..s]) {
        acc += a * b;
    }
    acc
}

#[inline]
fn axpy(out: &mut [f64], src: &[f64], a: f64) {
    for (o, v) in out.iter_mut().zip(src) {
        *o += a * v;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Periodic cross-correlation: `out[c][i] = b[c] + sum w[c][c'][k] in[c'][i + k - r]`.
#[allow(clippy::too_many_arguments)]
fn conv_forward(input: &[f64], w: &[f64], b: &[f64], cin: usize, cout: usize, k: usize, n: usize, out: &mut [f64]) {
    let r = (k / 2) as isize;
    for c in 0..cout {
        let o = &mut out[c * n..(c + 1) * n];
        o.iter_mut().for_each(|v| *v = b[c]);
        for ci in 0..cin {
            let src = &input[ci * n..(ci + 1) * n];
            for kk in 0..k {
                axpy_shifted(o, src, w[(c * cin + ci) * k + kk], kk as isize - r);
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    input: &[f64],
    dpre: &[f64],
    w: &[f64],
    cin: usize,
    cout: usize,
    k: usize,
    n: usize,
    dw: &mut [f64],
    db: &mut [f64],
    din: Option<&mut [f64]>,
) {
    let r = (k / 2) as isize;
    for c in 0..cout {
        let g = &dpre[c * n..(c + 1) * n];
        db[c] += g.iter().sum::<f64>();
        for ci in 0..cin {
            let src = &input[ci * n..(ci + 1) * n];
            for kk in 0..k {
                dw[(c * cin + ci) * k + kk] += dot_shifted(g, src, kk as isize - r);
            }
        }
    }
    if let Some(din) = din {
        for ci in 0..cin {
            let o = &mut din[ci * n..(ci + 1) * n];
            for c in 0..cout {
                let g = &dpre[c * n..(c + 1) * n];
                for kk in 0..k {
                    axpy_shifted(o, g, w[(c * cin + ci) * k + kk], r - kk as isize);
                }
            }
        }
    }
}

/// Inverted-dropout mask: kept units are scaled by `1 / (1 - rate)`.
pub(crate) fn dropout_mask(len: usize, rate: f64, seed: u64) -> Vec<f64> {
    let mut rng = rng_from_seed(seed);
    let keep = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

/// Full forward pass over one window. `dropout` carries `(rate, mask_seed)`
/// in training mode.
pub(crate) fn forward(p: &Params, dims: Dims, input: &[u8], dropout: Option<(f64, u64)>) -> Trace {
    let Dims { n, w, d, c1, k1, c2, k2, h } = dims;
    let x: Vec<f64> = input.iter().map(|&b| b as f64).collect();
    let mut a0 = vec![0.0; w * d * n];
    let mut a1 = vec![0.0; w * c1 * n];
    let mut a2 = vec![0.0; w * c2 * n];

    for t in 0..w {
        let xt = &x[t * n..(t + 1) * n];
        let a0t = &mut a0[t * d * n..(t + 1) * d * n];
        for ch in 0..d {
            let (wt, bt) = (p.dense_w[ch], p.dense_b[ch]);
            for (o, xi) in a0t[ch * n..(ch + 1) * n].iter_mut().zip(xt) {
                *o = (wt * xi + bt).tanh();
            }
        }
        let a1t = &mut a1[t * c1 * n..(t + 1) * c1 * n];
        conv_forward(a0t, &p.conv1_w, &p.conv1_b, d, c1, k1, n, a1t);
        a1t.iter_mut().for_each(|v| *v = v.tanh());
        let a2t = &mut a2[t * c2 * n..(t + 1) * c2 * n];
        conv_forward(a1t, &p.conv2_w, &p.conv2_b, c1, c2, k2, n, a2t);
        a2t.iter_mut().for_each(|v| *v = v.tanh());
    }

    let mask = match dropout {
        Some((rate, seed)) if rate > 0.0 => Some(dropout_mask(a2.len(), rate, seed)),
        _ => None,
    };
    let feat = match &mask {
        Some(m) => a2.iter().zip(m).map(|(a, m)| a * m).collect(),
        None => a2.clone(),
    };

    let g4 = 4 * h;
    let mut gates = vec![0.0; w * g4 * n];
    let mut cell = vec![0.0; (w + 1) * h * n];
    let mut hidden = vec![0.0; (w + 1) * h * n];
    let mut z = vec![0.0; g4 * n];
    for t in 0..w {
        let ft = &feat[t * c2 * n..(t + 1) * c2 * n];
        let hprev = &hidden[t * h * n..(t + 1) * h * n];
        for g in 0..g4 {
            let zg = &mut z[g * n..(g + 1) * n];
            zg.iter_mut().for_each(|v| *v = p.lstm_b[g]);
            for c in 0..c2 {
                axpy(zg, &ft[c * n..(c + 1) * n], p.lstm_wx[g * c2 + c]);
            }
            for k in 0..h {
                axpy(zg, &hprev[k * n..(k + 1) * n], p.lstm_wh[g * h + k]);
            }
        }
        let gt = &mut gates[t * g4 * n..(t + 1) * g4 * n];
        for (idx, (o, zv)) in gt.iter_mut().zip(&z).enumerate() {
            // cell-candidate block uses tanh, the rest sigmoid
            *o = if (2 * h * n..3 * h * n).contains(&idx) { zv.tanh() } else { sigmoid(*zv) };
        }
        let (cprev_all, cnext_all) = cell.split_at_mut((t + 1) * h * n);
        let cprev = &cprev_all[t * h * n..];
        let cnext = &mut cnext_all[..h * n];
        let hnext = &mut hidden[(t + 1) * h * n..(t + 2) * h * n];
        for j in 0..h * n {
            let (ig, fg, gg, og) = (gt[j], gt[h * n + j], gt[2 * h * n + j], gt[3 * h * n + j]);
            let c = fg * cprev[j] + ig * gg;
            cnext[j] = c;
            hnext[j] = og * c.tanh();
        }
    }

    let hlast = &hidden[w * h * n..];
    let probs = (0..n)
        .map(|i| {
            let mut logit = p.out_b[0];
            for k in 0..h {
                logit += p.out_w[k] * hlast[k * n + i];
            }
            sigmoid(logit)
        })
        .collect();

    Trace {
        x,
        a0,
        a1,
        a2,
        mask,
        feat,
        gates,
        cell,
        hidden,
        probs,
    }
}

/// Accumulates into `grads` the gradient of a scalar whose derivative with
/// respect to each output logit is `dlogits`.
pub(crate) fn backward(p: &Params, dims: Dims, tr: &Trace, dlogits: &[f64], grads: &mut Params) {
    let Dims { n, w, d, c1, k1, c2, k2, h } = dims;
    let g4 = 4 * h;
    let hn = h * n;

    let hlast = &tr.hidden[w * hn..];
    let mut dh = vec![0.0; hn];
    grads.out_b[0] += dlogits.iter().sum::<f64>();
    for k in 0..h {
        grads.out_w[k] += dot(dlogits, &hlast[k * n..(k + 1) * n]);
        axpy(&mut dh[k * n..(k + 1) * n], dlogits, p.out_w[k]);
    }

    let mut dc = vec![0.0; hn];
    let mut dz = vec![0.0; g4 * n];
    let mut dfeat = vec![0.0; w * c2 * n];
    for t in (0..w).rev() {
        let gt = &tr.gates[t * g4 * n..(t + 1) * g4 * n];
        let cprev = &tr.cell[t * hn..(t + 1) * hn];
        let ccur = &tr.cell[(t + 1) * hn..(t + 2) * hn];
        for j in 0..hn {
            let (ig, fg, gg, og) = (gt[j], gt[hn + j], gt[2 * hn + j], gt[3 * hn + j]);
            let tc = ccur[j].tanh();
            let dog = dh[j] * tc;
            let dcj = dc[j] + dh[j] * og * (1.0 - tc * tc);
            dz[j] = dcj * gg * ig * (1.0 - ig);
            dz[hn + j] = dcj * cprev[j] * fg * (1.0 - fg);
            dz[2 * hn + j] = dcj * ig * (1.0 - gg * gg);
            dz[3 * hn + j] = dog * og * (1.0 - og);
            dc[j] = dcj * fg;
        }
        let ft = &tr.feat[t * c2 * n..(t + 1) * c2 * n];
        let hprev = &tr.hidden[t * hn..(t + 1) * hn];
        let dft = &mut dfeat[t * c2 * n..(t + 1) * c2 * n];
        dh.iter_mut().for_each(|v| *v = 0.0);
        for g in 0..g4 {
            let zg = &dz[g * n..(g + 1) * n];
            grads.lstm_b[g] += zg.iter().sum::<f64>();
            for c in 0..c2 {
                grads.lstm_wx[g * c2 + c] += dot(zg, &ft[c * n..(c + 1) * n]);
                axpy(&mut dft[c * n..(c + 1) * n], zg, p.lstm_wx[g * c2 + c]);
            }
            for k in 0..h {
                grads.lstm_wh[g * h + k] += dot(zg, &hprev[k * n..(k + 1) * n]);
                axpy(&mut dh[k * n..(k + 1) * n], zg, p.lstm_wh[g * h + k]);
            }
        }
    }

    if let Some(m) = &tr.mask {
        dfeat.iter_mut().zip(m).for_each(|(g, m)| *g *= m);
    }
    // through tanh of conv2
    let mut dpre2 = dfeat;
    dpre2.iter_mut().zip(&tr.a2).for_each(|(g, a)| *g *= 1.0 - a * a);

    let mut da1 = vec![0.0; c1 * n];
    let mut da0 = vec![0.0; d * n];
    for t in 0..w {
        let a1t = &tr.a1[t * c1 * n..(t + 1) * c1 * n];
        let a0t = &tr.a0[t * d * n..(t + 1) * d * n];
        da1.iter_mut().for_each(|v| *v = 0.0);
        conv_backward(
            a1t,
            &dpre2[t * c2 * n..(t + 1) * c2 * n],
            &p.conv2_w,
            c1,
            c2,
            k2,
            n,
            &mut grads.conv2_w,
            &mut grads.conv2_b,
            Some(&mut da1),
        );
        da1.iter_mut().zip(a1t).for_each(|(g, a)| *g *= 1.0 - a * a);
        da0.iter_mut().for_each(|v| *v = 0.0);
        conv_backward(
            a0t,
            &da1,
            &p.conv1_w,
            d,
            c1,
            k1,
            n,
            &mut grads.conv1_w,
            &mut grads.conv1_b,
            Some(&mut da0),
        );
        let xt = &tr.x[t * n..(t + 1) * n];
        for ch in 0..d {
            let a = &a0t[ch * n..(ch + 1) * n];
            let g = &da0[ch * n..(ch + 1) * n];
            let (mut gw, mut gb) = (0.0, 0.0);
            for i in 0..n {
                let dpre = g[i] * (1.0 - a[i] * a[i]);
                gw += dpre * xt[i];
                gb += dpre;
            }
            grads.dense_w[ch] += gw;
            grads.dense_b[ch] += gb;
        }
    }
}
