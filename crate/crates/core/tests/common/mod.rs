//! Independent brute-force FLOP counter.
//!
//! Runs an actual forward pass of one decoder layer on small dense matrices
//! and counts every scalar multiply and add as it happens. Softmax (with the
//! 1/sqrt(d) scale) is charged 4 operations per score and swish 1 operation
//! per element; everything else is counted literally.

#![allow(dead_code)]

use infercost::costmodel::OpKind;

pub struct Dims {
    pub h: usize,
    pub n: usize,
    pub d: usize,
    pub ff: usize,
}

#[derive(Default)]
pub struct Counter {
    pub ops: u64,
}

impl Counter {
    fn mul(&mut self, a: f64, b: f64) -> f64 {
        self.ops += 1;
        a * b
    }

    fn add(&mut self, a: f64, b: f64) -> f64 {
        self.ops += 1;
        a + b
    }

    fn charge(&mut self, n: u64) {
        self.ops += n;
    }

    /// `x` (rows x k) times `w` (k x cols); k multiplies and k adds per output.
    fn matmul(&mut self, x: &[Vec<f64>], w: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let cols = w[0].len();
        x.iter()
            .map(|row| {
                (0..cols)
                    .map(|c| {
                        let mut acc = 0.0;
                        for (k, xv) in row.iter().enumerate() {
                            let p = self.mul(*xv, w[k][c]);
                            acc = self.add(acc, p);
                        }
                        acc
                    })
                    .collect()
            })
            .collect()
    }
}

fn filled(rows: usize, cols: usize, seed: usize) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|r| {
            (0..cols)
                .map(|c| ((r * 31 + c * 7 + seed) % 11) as f64 / 10.0 - 0.5)
                .collect()
        })
        .collect()
}

/// Per-operation FLOPs of one prefill layer over `s` tokens for a single
/// sequence, or of one decode step over `s` cached tokens when `decode` is
/// set. Returned in the layer's execution order.
pub fn count_layer(dims: &Dims, s: usize, decode: bool) -> Vec<(OpKind, u64)> {
    let Dims { h, n, d, ff } = *dims;
    let rows = if decode { 1 } else { s };
    let keys = s;
    let mut out = Vec::new();
    let mut c = Counter::default();
    let take = |c: &mut Counter, kind: OpKind, out: &mut Vec<(OpKind, u64)>| {
        out.push((kind, c.ops));
        c.ops = 0;
    };

    let x = filled(rows, h, 1);

    // fused QKV projection
    let qkv = c.matmul(&x, &filled(h, 3 * h, 2));
    take(&mut c, OpKind::QkvProj, &mut out);

    // rotary embedding on q and k: x*cos + rot(x)*sin per element
    let mut q: Vec<Vec<f64>> = qkv.iter().map(|r| r[..h].to_vec()).collect();
    let mut k: Vec<Vec<f64>> = qkv.iter().map(|r| r[h..2 * h].to_vec()).collect();
    let v_new: Vec<Vec<f64>> = qkv.iter().map(|r| r[2 * h..].to_vec()).collect();
    for t in [&mut q, &mut k] {
        for row in t.iter_mut() {
            let src = row.clone();
            for i in 0..h {
                let pair = if i % 2 == 0 { i + 1 } else { i - 1 };
                let a = c.mul(src[i], 0.8);
                let b = c.mul(src[pair], 0.6);
                row[i] = c.add(a, b);
            }
        }
    }
    take(&mut c, OpKind::Rope, &mut out);

    if decode {
        // appending k and v to the cache moves data only
        take(&mut c, OpKind::CacheUpdate, &mut out);
    }

    // keys/values seen by attention: the prompt in prefill, the cache in decode
    let (kk, vv) = if decode {
        (filled(keys, h, 3), filled(keys, h, 4))
    } else {
        (k.clone(), v_new.clone())
    };
    let mut o = vec![vec![0.0; h]; rows];
    for head in 0..n {
        let lo = head * d;
        for (qi, qrow) in q.iter().enumerate() {
            let mut scores = vec![0.0; keys];
            for (ki, krow) in kk.iter().enumerate() {
                let mut acc = 0.0;
                for j in lo..lo + d {
                    let p = c.mul(qrow[j], krow[j]);
                    acc = c.add(acc, p);
                }
                scores[ki] = acc;
            }
            // scale, max-subtract, exp, normalise
            c.charge(4 * keys as u64);
            let z: f64 = scores.iter().map(|x| x.exp()).sum();
            let probs: Vec<f64> = scores.iter().map(|x| x.exp() / z).collect();
            for j in lo..lo + d {
                let mut acc = 0.0;
                for (ki, vrow) in vv.iter().enumerate() {
                    let p = c.mul(probs[ki], vrow[j]);
                    acc = c.add(acc, p);
                }
                o[qi][j] = acc;
            }
        }
    }
    take(&mut c, OpKind::Attention, &mut out);

    let attn_out = c.matmul(&o, &filled(h, h, 5));
    take(&mut c, OpKind::OutProj, &mut out);

    let x = add_norm(&mut c, &x, &attn_out);
    take(&mut c, OpKind::AddNormAttn, &mut out);

    let gu = c.matmul(&x, &filled(h, 2 * ff, 6));
    take(&mut c, OpKind::GateUpProj, &mut out);

    let act: Vec<Vec<f64>> = gu
        .iter()
        .map(|r| {
            (0..ff)
                .map(|i| {
                    c.charge(1);
                    let g = r[i] / (1.0 + (-r[i]).exp());
                    c.mul(g, r[ff + i])
                })
                .collect()
        })
        .collect();
    take(&mut c, OpKind::SwishMul, &mut out);

    let down = c.matmul(&act, &filled(ff, h, 7));
    take(&mut c, OpKind::DownProj, &mut out);

    add_norm(&mut c, &x, &down);
    take(&mut c, OpKind::AddNormFfn, &mut out);
    out
}

/// Residual add then RMS norm with a learned scale: per element one add, one
/// square, one accumulate, one normalising multiply and one weight multiply.
fn add_norm(c: &mut Counter, x: &[Vec<f64>], y: &[Vec<f64>]) -> Vec<Vec<f64>> {
    x.iter()
        .zip(y)
        .map(|(xr, yr)| {
            let summed: Vec<f64> = xr.iter().zip(yr).map(|(a, b)| c.add(*a, *b)).collect();
            let mut ss = 0.0;
            for v in &summed {
                let sq = c.mul(*v, *v);
                ss = c.add(ss, sq);
            }
            let inv = 1.0 / (ss / summed.len() as f64 + 1e-6).sqrt();
            summed
                .iter()
                .map(|v| {
                    let t = c.mul(*v, inv);
                    c.mul(t, 1.1)
                })
                .collect()
        })
        .collect()
}
