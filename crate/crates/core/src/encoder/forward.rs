use rand::Rng;

use super::{EncoderError, EncoderInput, LayerParams, Params};
use crate::linearizer::NUM_POSITIONS;
use crate::tensor::{add_matmul_tn, gelu, gelu_grad, matmul, matmul_nt, softmax_rows, Mat, Scalar};

/// Sum of the word embedding and the six position embeddings per token.
pub fn embed<F: Scalar>(input: EncoderInput<'_>, p: &Params<F>) -> Result<Mat<F>, EncoderError> {
    let d = p.cfg.hidden;
    let mut h = Mat::zeros(input.len(), d);
    for (i, (&tok, row)) in input.tokens.iter().zip(input.pos).enumerate() {
        let tok = tok as usize;
        if tok >= p.word.rows {
            return Err(EncoderError::IndexOutOfTable {
                table: "word".into(),
                index: tok,
                size: p.word.rows,
            });
        }
        let out = h.row_mut(i);
        out.copy_from_slice(p.word.row(tok));
        for k in 0..NUM_POSITIONS {
            let idx = row[k] as usize;
            let table = &p.pos[k];
            if idx >= table.rows {
                return Err(EncoderError::IndexOutOfTable {
                    table: format!("pos{k}"),
                    index: idx,
                    size: table.rows,
                });
            }
            if p.cfg.use_structure {
                out.iter_mut()
                    .zip(table.row(idx))
                    .for_each(|(a, &b)| *a += b);
            }
        }
    }
    Ok(h)
}

#[derive(Debug, Clone)]
struct LnCache<F> {
    xhat: Mat<F>,
    rstd: Vec<F>,
}

fn ln_forward<F: Scalar>(x: &Mat<F>, g: &Mat<F>, b: &Mat<F>, eps: F) -> (Mat<F>, LnCache<F>) {
    let d = x.cols;
    let dn = F::from_usize(d).unwrap();
    let mut xhat = Mat::zeros(x.rows, d);
    let mut out = Mat::zeros(x.rows, d);
    let mut rstd = Vec::with_capacity(x.rows);
    for i in 0..x.rows {
        let row = x.row(i);
        let mean = row.iter().copied().sum::<F>() / dn;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / dn;
        let r = F::one() / (var + eps).sqrt();
        rstd.push(r);
        for j in 0..d {
            let xh = (row[j] - mean) * r;
            xhat.data[i * d + j] = xh;
            out.data[i * d + j] = xh * g.data[j] + b.data[j];
        }
    }
    (out, LnCache { xhat, rstd })
}

fn ln_backward<F: Scalar>(
    dout: &Mat<F>,
    c: &LnCache<F>,
    g: &Mat<F>,
    dg: &mut Mat<F>,
    db: &mut Mat<F>,
) -> Mat<F> {
    let d = dout.cols;
    let dn = F::from_usize(d).unwrap();
    let mut dx = Mat::zeros(dout.rows, d);
    let mut dxhat = vec![F::zero(); d];
    for i in 0..dout.rows {
        let go = dout.row(i);
        let xh = c.xhat.row(i);
        let mut sum = F::zero();
        let mut sum_x = F::zero();
        for j in 0..d {
            dg.data[j] += go[j] * xh[j];
            db.data[j] += go[j];
            dxhat[j] = go[j] * g.data[j];
            sum += dxhat[j];
            sum_x += dxhat[j] * xh[j];
        }
        let r = c.rstd[i];
        let out = dx.row_mut(i);
        for j in 0..d {
            out[j] = r * (dxhat[j] - sum / dn - xh[j] * sum_x / dn);
        }
    }
    dx
}

#[derive(Debug, Clone)]
struct LayerCache<F> {
    x: Mat<F>,
    q: Vec<Mat<F>>,
    k: Vec<Mat<F>>,
    v: Vec<Mat<F>>,
    probs: Vec<Mat<F>>,
    ctx: Mat<F>,
    attn_drop: Option<Vec<F>>,
    ln1: LnCache<F>,
    y1: Mat<F>,
    f_pre: Mat<F>,
    f_act: Mat<F>,
    ffn_drop: Option<Vec<F>>,
    ln2: LnCache<F>,
}

/// Activations retained for the backward pass.
#[derive(Debug, Clone)]
pub struct EncodeCache<F> {
    tokens: Vec<u32>,
    pos: Vec<crate::linearizer::PosRow>,
    layers: Vec<LayerCache<F>>,
}

impl<F: Scalar> EncodeCache<F> {
    /// Attention probabilities of `layer`, one `T x T` matrix per head.
    pub fn attention(&self, layer: usize) -> &[Mat<F>] {
        &self.layers[layer].probs
    }
}

fn dropout_mask<F: Scalar>(n: usize, rate: f64, rng: &mut impl Rng) -> Vec<F> {
    let keep = F::lit(1.0 / (1.0 - rate));
    (0..n)
        .map(|_| {
            if rng.gen::<f64>() < rate {
                F::zero()
            } else {
                keep
            }
        })
        .collect()
}

fn apply_mask<F: Scalar>(m: &mut Mat<F>, mask: &Option<Vec<F>>) {
    if let Some(mask) = mask {
        m.data.iter_mut().zip(mask).for_each(|(x, &k)| *x *= k);
    }
}

fn layer_forward<F: Scalar>(
    x: Mat<F>,
    lp: &LayerParams<F>,
    heads: usize,
    eps: F,
    dropout: f64,
    rng: &mut Option<&mut dyn rand::RngCore>,
) -> (Mat<F>, LayerCache<F>) {
    let t = x.rows;
    let d = x.cols;
    let dh = d / heads;
    let scale = F::one() / F::from_usize(dh).unwrap().sqrt();
    let q_all = matmul(&x, &lp.wq);
    let k_all = matmul(&x, &lp.wk);
    let v_all = matmul(&x, &lp.wv);
    let mut ctx = Mat::zeros(t, d);
    let (mut qs, mut ks, mut vs, mut probs) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for h in 0..heads {
        let q = q_all.col_slice(h * dh, dh);
        let k = k_all.col_slice(h * dh, dh);
        let v = v_all.col_slice(h * dh, dh);
        let mut s = matmul_nt(&q, &k);
        s.scale(scale);
        softmax_rows(&mut s);
        ctx.set_col_slice(h * dh, &matmul(&s, &v));
        qs.push(q);
        ks.push(k);
        vs.push(v);
        probs.push(s);
    }
    let mut a = matmul(&ctx, &lp.wo);
    a.add_row_vector(&lp.bo.data);
    let attn_drop = match rng.as_mut() {
        Some(r) if dropout > 0.0 => Some(dropout_mask(a.data.len(), dropout, r)),
        _ => None,
    };
    apply_mask(&mut a, &attn_drop);
    a.add_assign(&x);
    let (y1, ln1) = ln_forward(&a, &lp.ln1_g, &lp.ln1_b, eps);

    let mut f_pre = matmul(&y1, &lp.w1);
    f_pre.add_row_vector(&lp.b1.data);
    let f_act = Mat {
        rows: f_pre.rows,
        cols: f_pre.cols,
        data: f_pre.data.iter().map(|&v| gelu(v)).collect(),
    };
    let mut z = matmul(&f_act, &lp.w2);
    z.add_row_vector(&lp.b2.data);
    let ffn_drop = match rng.as_mut() {
        Some(r) if dropout > 0.0 => Some(dropout_mask(z.data.len(), dropout, r)),
        _ => None,
    };
    apply_mask(&mut z, &ffn_drop);
    z.add_assign(&y1);
    let (out, ln2) = ln_forward(&z, &lp.ln2_g, &lp.ln2_b, eps);
    let cache = LayerCache {
        x,
        q: qs,
        k: ks,
        v: vs,
        probs,
        ctx,
        attn_drop,
        ln1,
        y1,
        f_pre,
        f_act,
        ffn_drop,
        ln2,
    };
    (out, cache)
}

/// Runs the encoder and keeps activations for [`backward`]. Dropout is only
/// applied when an rng is supplied.
pub fn encode_with_cache<F: Scalar>(
    input: EncoderInput<'_>,
    p: &Params<F>,
    mut dropout_rng: Option<&mut dyn rand::RngCore>,
) -> Result<(Mat<F>, EncodeCache<F>), EncoderError> {
    if input.len() > p.cfg.max_len {
        return Err(EncoderError::SequenceTooLong {
            len: input.len(),
            max: p.cfg.max_len,
        });
    }
    let mut h = embed(input, p)?;
    let eps = F::lit(p.cfg.layer_norm_eps);
    let mut layers = Vec::with_capacity(p.layers.len());
    for (l, lp) in p.layers.iter().enumerate() {
        let (out, cache) = layer_forward(h, lp, p.cfg.heads, eps, p.cfg.dropout, &mut dropout_rng);
        if !out.is_finite() {
            return Err(EncoderError::NonFiniteActivation(l));
        }
        layers.push(cache);
        h = out;
    }
    Ok((
        h,
        EncodeCache {
            tokens: input.tokens.to_vec(),
            pos: input.pos.to_vec(),
            layers,
        },
    ))
}

/// Inference-mode forward pass.
pub fn encode<F: Scalar>(input: EncoderInput<'_>, p: &Params<F>) -> Result<Mat<F>, EncoderError> {
    encode_with_cache(input, p, None).map(|(h, _)| h)
}

fn layer_backward<F: Scalar>(
    dout: &Mat<F>,
    c: &LayerCache<F>,
    lp: &LayerParams<F>,
    g: &mut LayerParams<F>,
) -> Mat<F> {
    let heads = c.q.len();
    let d = dout.cols;
    let dh = d / heads;
    let scale = F::one() / F::from_usize(dh).unwrap().sqrt();

    let dz = ln_backward(dout, &c.ln2, &lp.ln2_g, &mut g.ln2_g, &mut g.ln2_b);
    let mut dy1 = dz.clone();
    let mut dz_in = dz;
    apply_mask(&mut dz_in, &c.ffn_drop);
    add_matmul_tn(&mut g.w2, &c.f_act, &dz_in);
    dz_in.col_sums_into(&mut g.b2.data);
    let mut df = matmul_nt(&dz_in, &lp.w2);
    df.data
        .iter_mut()
        .zip(&c.f_pre.data)
        .for_each(|(x, &pre)| *x *= gelu_grad(pre));
    add_matmul_tn(&mut g.w1, &c.y1, &df);
    df.col_sums_into(&mut g.b1.data);
    dy1.add_assign(&matmul_nt(&df, &lp.w1));

    let dr1 = ln_backward(&dy1, &c.ln1, &lp.ln1_g, &mut g.ln1_g, &mut g.ln1_b);
    let mut dx = dr1.clone();
    let mut da = dr1;
    apply_mask(&mut da, &c.attn_drop);
    add_matmul_tn(&mut g.wo, &c.ctx, &da);
    da.col_sums_into(&mut g.bo.data);
    let dctx = matmul_nt(&da, &lp.wo);

    let t = dout.rows;
    let mut dq_all = Mat::zeros(t, d);
    let mut dk_all = Mat::zeros(t, d);
    let mut dv_all = Mat::zeros(t, d);
    for h in 0..heads {
        let dctx_h = dctx.col_slice(h * dh, dh);
        let p = &c.probs[h];
        let dp = matmul_nt(&dctx_h, &c.v[h]);
        let dv = crate::tensor::matmul_tn(p, &dctx_h);
        let mut ds = Mat::zeros(t, t);
        for i in 0..t {
            let pr = p.row(i);
            let dpr = dp.row(i);
            let dot: F = pr.iter().zip(dpr).map(|(&a, &b)| a * b).sum();
            let out = ds.row_mut(i);
            for j in 0..t {
                out[j] = pr[j] * (dpr[j] - dot) * scale;
            }
        }
        dq_all.set_col_slice(h * dh, &matmul(&ds, &c.k[h]));
        dk_all.set_col_slice(h * dh, &crate::tensor::matmul_tn(&ds, &c.q[h]));
        dv_all.set_col_slice(h * dh, &dv);
    }
    add_matmul_tn(&mut g.wq, &c.x, &dq_all);
    add_matmul_tn(&mut g.wk, &c.x, &dk_all);
    add_matmul_tn(&mut g.wv, &c.x, &dv_all);
    dx.add_assign(&matmul_nt(&dq_all, &lp.wq));
    dx.add_assign(&matmul_nt(&dk_all, &lp.wk));
    dx.add_assign(&matmul_nt(&dv_all, &lp.wv));
    dx
}

/// Accumulates parameter gradients into `grads` given `d loss / d h` for
/// the encoder output.
pub fn backward<F: Scalar>(
    dh: &Mat<F>,
    cache: &EncodeCache<F>,
    p: &Params<F>,
    grads: &mut Params<F>,
) {
    let mut d = dh.clone();
    for l in (0..p.layers.len()).rev() {
        d = layer_backward(&d, &cache.layers[l], &p.layers[l], &mut grads.layers[l]);
    }
    for (i, (&tok, row)) in cache.tokens.iter().zip(&cache.pos).enumerate() {
        let gi = d.row(i);
        grads
            .word
            .row_mut(tok as usize)
            .iter_mut()
            .zip(gi)
            .for_each(|(a, &b)| *a += b);
        if p.cfg.use_structure {
            for k in 0..NUM_POSITIONS {
                grads.pos[k]
                    .row_mut(row[k] as usize)
                    .iter_mut()
                    .zip(gi)
                    .for_each(|(a, &b)| *a += b);
            }
        }
    }
}
