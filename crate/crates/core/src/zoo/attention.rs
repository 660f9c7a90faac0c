//! Attention blocks shared by every encoder family: learned-query additive
//! pooling and multi-head scaled dot-product self-attention.

use crate::error::{Error, Result};
use crate::layers::{tanh_affine, tanh_affine_backward};
use crate::tensor::{matmul, matvec, softmax, softmax_backward, Scalar, Tensor};

/// Cache from [`additive_attention`] holding everything backward needs.
pub struct AdditiveCache<S> {
    pub x: Tensor<S>,
    pub hidden: Tensor<S>,
    pub weights: Tensor<S>,
    pub mask: Vec<bool>,
}

/// Learned-query pooling over `x [n x d]`: scores `s_i = v . tanh(W1 x_i + b1)`,
/// softmax weights over unmasked rows, output the weighted sum.
pub fn additive_attention<S: Scalar>(
    x: &Tensor<S>,
    mask: &[bool],
    w1: &Tensor<S>,
    b1: &Tensor<S>,
    v: &Tensor<S>,
) -> Result<(Tensor<S>, AdditiveCache<S>)> {
    let n = x.shape()[0];
    let d = x.shape()[1];
    if mask.len() != n {
        return Err(Error::Shape {
            op: "additive_attention_mask",
            lhs: x.shape().to_vec(),
            rhs: vec![mask.len()],
        });
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::Degenerate {
            op: "additive_attention",
            msg: "all positions masked".into(),
        });
    }
    let hidden = tanh_affine(x, w1, b1)?;
    let scores = matvec(&hidden, v)?;
    let weights = softmax(&scores, Some(mask))?;
    let mut pooled = Tensor::zeros(&[d]);
    for i in 0..n {
        let a = weights.data()[i];
        for (p, &xv) in pooled.data_mut().iter_mut().zip(x.row(i)) {
            *p = *p + a * xv;
        }
    }
    let cache = AdditiveCache {
        x: x.clone(),
        hidden,
        weights,
        mask: mask.to_vec(),
    };
    Ok((pooled, cache))
}

pub struct AdditiveGrads<S> {
    pub dx: Tensor<S>,
    pub dw1: Tensor<S>,
    pub db1: Tensor<S>,
    pub dv: Tensor<S>,
}

pub fn additive_attention_backward<S: Scalar>(
    cache: &AdditiveCache<S>,
    w1: &Tensor<S>,
    v: &Tensor<S>,
    dpooled: &Tensor<S>,
) -> Result<AdditiveGrads<S>> {
    let n = cache.x.shape()[0];
    let d_att = v.len();

    // pooled = sum_i a_i x_i
    let mut da = Tensor::zeros(&[n]);
    let mut dx = Tensor::zeros(cache.x.shape());
    for i in 0..n {
        let a = cache.weights.data()[i];
        let mut acc = S::zero();
        for (&xv, &gv) in cache.x.row(i).iter().zip(dpooled.data()) {
            acc = acc + xv * gv;
        }
        da.data_mut()[i] = acc;
        for (dv_, &gv) in dx.row_mut(i).iter_mut().zip(dpooled.data()) {
            *dv_ = a * gv;
        }
    }

    let dscores = softmax_backward(&cache.weights, &da)?;

    // s_i = hidden_i . v
    let mut dv = Tensor::zeros(&[d_att]);
    let mut dhidden = Tensor::zeros(cache.hidden.shape());
    for i in 0..n {
        let ds = dscores.data()[i];
        for ((dvj, &hj), (dhj, &vj)) in dv
            .data_mut()
            .iter_mut()
            .zip(cache.hidden.row(i))
            .zip(dhidden.row_mut(i).iter_mut().zip(v.data()))
        {
            *dvj = *dvj + ds * hj;
            *dhj = ds * vj;
        }
    }

    let affine = tanh_affine_backward(&cache.x, w1, &cache.hidden, &dhidden)?;
    dx.add_assign(&affine.dx)?;
    Ok(AdditiveGrads {
        dx,
        dw1: affine.dw,
        db1: affine.db,
        dv,
    })
}

pub struct HeadCache<S> {
    pub q: Tensor<S>,
    pub k: Tensor<S>,
    pub v: Tensor<S>,
    pub attn: Tensor<S>,
}

pub struct SelfAttnCache<S> {
    pub x: Tensor<S>,
    pub mask: Vec<bool>,
    pub heads: Vec<HeadCache<S>>,
    pub d_k: usize,
}

/// Multi-head scaled dot-product self-attention over `x [n x d_in]`.
///
/// Each head projects to `d_k` with its own Q/K/V matrices, attends with
/// `softmax(Q K^T / sqrt(d_k))` over unmasked keys, and the head outputs
/// concatenate to `[n x heads*d_k]`. No output projection.
pub fn self_attention<S: Scalar>(
    x: &Tensor<S>,
    mask: &[bool],
    heads: &[(&Tensor<S>, &Tensor<S>, &Tensor<S>)],
) -> Result<(Tensor<S>, SelfAttnCache<S>)> {
    let n = x.shape()[0];
    if mask.len() != n {
        return Err(Error::Shape {
            op: "self_attention_mask",
            lhs: x.shape().to_vec(),
            rhs: vec![mask.len()],
        });
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::Degenerate {
            op: "self_attention",
            msg: "all positions masked".into(),
        });
    }
    let d_k = heads
        .first()
        .map(|(wq, _, _)| wq.shape()[1])
        .ok_or(Error::Config("self-attention needs at least one head".into()))?;
    let scale = S::from_f64(1.0 / (d_k as f64).sqrt());

    // key mask broadcast across query rows
    let mut key_mask = vec![false; n * n];
    for t in 0..n {
        key_mask[t * n..(t + 1) * n].copy_from_slice(mask);
    }

    let mut out = Tensor::zeros(&[n, heads.len() * d_k]);
    let mut caches = Vec::with_capacity(heads.len());
    for (h, (wq, wk, wv)) in heads.iter().enumerate() {
        let q = matmul(x, wq)?;
        let k = matmul(x, wk)?;
        let v = matmul(x, wv)?;
        let scores = matmul(&q, &k.transpose()?)?.scale(scale);
        let attn = softmax(&scores, Some(&key_mask))?;
        let head_out = matmul(&attn, &v)?;
        for t in 0..n {
            out.row_mut(t)[h * d_k..(h + 1) * d_k].copy_from_slice(head_out.row(t));
        }
        caches.push(HeadCache { q, k, v, attn });
    }
    let cache = SelfAttnCache {
        x: x.clone(),
        mask: mask.to_vec(),
        heads: caches,
        d_k,
    };
    Ok((out, cache))
}

pub struct SelfAttnGrads<S> {
    pub dx: Tensor<S>,
    /// One (dWq, dWk, dWv) triple per head, in head order.
    pub dheads: Vec<(Tensor<S>, Tensor<S>, Tensor<S>)>,
}

pub fn self_attention_backward<S: Scalar>(
    cache: &SelfAttnCache<S>,
    heads: &[(&Tensor<S>, &Tensor<S>, &Tensor<S>)],
    g: &Tensor<S>,
) -> Result<SelfAttnGrads<S>> {
    let n = cache.x.shape()[0];
    let d_k = cache.d_k;
    let scale = S::from_f64(1.0 / (d_k as f64).sqrt());
    let mut dx = Tensor::zeros(cache.x.shape());
    let mut dheads = Vec::with_capacity(heads.len());
    for (h, ((wq, wk, wv), hc)) in heads.iter().zip(&cache.heads).enumerate() {
        let mut dout = Tensor::zeros(&[n, d_k]);
        for t in 0..n {
            dout.row_mut(t)
                .copy_from_slice(&g.row(t)[h * d_k..(h + 1) * d_k]);
        }
        let dattn = matmul(&dout, &hc.v.transpose()?)?;
        let dv = matmul(&hc.attn.transpose()?, &dout)?;
        let dscores = softmax_backward(&hc.attn, &dattn)?.scale(scale);
        let dq = matmul(&dscores, &hc.k)?;
        let dk = matmul(&dscores.transpose()?, &hc.q)?;

        let dwq = matmul(&cache.x.transpose()?, &dq)?;
        let dwk = matmul(&cache.x.transpose()?, &dk)?;
        let dwv = matmul(&cache.x.transpose()?, &dv)?;
        dx.add_assign(&matmul(&dq, &wq.transpose()?)?)?;
        dx.add_assign(&matmul(&dk, &wk.transpose()?)?)?;
        dx.add_assign(&matmul(&dv, &wv.transpose()?)?)?;
        dheads.push((dwq, dwk, dwv));
    }
    Ok(SelfAttnGrads { dx, dheads })
}
