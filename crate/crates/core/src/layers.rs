//! Layers used by the encoders: affine+tanh, 1-D convolution, GRU cell,
//! embedding lookup, and dropout. Every layer has an analytic backward
//! that consumes the values cached by its forward pass.

use crate::error::{Error, Result};
use crate::tensor::{matmul, Scalar, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// `tanh(x W + b)` for `x [n x d_in]`, `W [d_in x d_out]`, `b [d_out]`.
///
/// Returns the activation itself as the backward cache (tanh' = 1 - y^2).
pub fn tanh_affine<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    let mut pre = matmul(x, w)?;
    let d_out = b.len();
    if pre.last_dim() != d_out {
        return Err(Error::Shape {
            op: "tanh_affine_bias",
            lhs: pre.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    for r in 0..pre.rows_2d() {
        let row = pre.row_mut(r);
        for (v, &bv) in row.iter_mut().zip(b.data()) {
            *v = (*v + bv).tanh();
        }
    }
    Ok(pre)
}

pub struct TanhAffineGrads<S> {
    pub dx: Tensor<S>,
    pub dw: Tensor<S>,
    pub db: Tensor<S>,
}

/// Backward for [`tanh_affine`]; `y` is the forward output.
pub fn tanh_affine_backward<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    y: &Tensor<S>,
    g: &Tensor<S>,
) -> Result<TanhAffineGrads<S>> {
    let mut dpre = y.clone();
    for (dp, (&yv, &gv)) in dpre
        .data_mut()
        .iter_mut()
        .zip(y.data().iter().zip(g.data()))
    {
        *dp = gv * (S::one() - yv * yv);
    }
    let dx = matmul(&dpre, &w.transpose()?)?;
    let dw = matmul(&x.transpose()?, &dpre)?;
    let mut db = Tensor::zeros(&[dpre.last_dim()]);
    for r in 0..dpre.rows_2d() {
        for (acc, &v) in db.data_mut().iter_mut().zip(dpre.row(r)) {
            *acc = *acc + v;
        }
    }
    Ok(TanhAffineGrads { dx, dw, db })
}

/// Same-length 1-D convolution over `x [L x d_in]` with zero padding.
///
/// `filters` is laid out `[window*d_in x d_out]`: the patch at position t
/// (tokens t-w/2 .. t+w/2, row-major) flattens to the lhs of a matmul.
pub fn conv1d_same<S: Scalar>(
    x: &Tensor<S>,
    filters: &Tensor<S>,
    bias: &Tensor<S>,
    window: usize,
) -> Result<(Tensor<S>, Tensor<S>)> {
    if window % 2 == 0 || window == 0 {
        return Err(Error::Config(format!(
            "conv window must be odd and positive, got {window}"
        )));
    }
    let (len, d_in) = (x.shape()[0], x.shape()[1]);
    if len == 0 {
        return Err(Error::Degenerate {
            op: "conv1d_same",
            msg: "empty sequence".into(),
        });
    }
    if filters.shape()[0] != window * d_in {
        return Err(Error::Shape {
            op: "conv1d_same",
            lhs: vec![window * d_in],
            rhs: filters.shape().to_vec(),
        });
    }
    let half = window / 2;
    let mut patches = Tensor::zeros(&[len, window * d_in]);
    for t in 0..len {
        let dst = patches.row_mut(t);
        for o in 0..window {
            let src = t as isize + o as isize - half as isize;
            if src >= 0 && (src as usize) < len {
                dst[o * d_in..(o + 1) * d_in].copy_from_slice(x.row(src as usize));
            }
        }
    }
    let mut out = matmul(&patches, filters)?;
    for r in 0..out.rows_2d() {
        for (v, &bv) in out.row_mut(r).iter_mut().zip(bias.data()) {
            *v = *v + bv;
        }
    }
    Ok((out, patches))
}

pub struct Conv1dGrads<S> {
    pub dx: Tensor<S>,
    pub dfilters: Tensor<S>,
    pub dbias: Tensor<S>,
}

/// Backward for [`conv1d_same`]; `patches` is the cache from the forward.
pub fn conv1d_same_backward<S: Scalar>(
    patches: &Tensor<S>,
    filters: &Tensor<S>,
    g: &Tensor<S>,
    window: usize,
    d_in: usize,
) -> Result<Conv1dGrads<S>> {
    let len = patches.shape()[0];
    let half = window / 2;
    let dfilters = matmul(&patches.transpose()?, g)?;
    let mut dbias = Tensor::zeros(&[g.last_dim()]);
    for r in 0..g.rows_2d() {
        for (acc, &v) in dbias.data_mut().iter_mut().zip(g.row(r)) {
            *acc = *acc + v;
        }
    }
    let dpatches = matmul(g, &filters.transpose()?)?;
    let mut dx = Tensor::zeros(&[len, d_in]);
    for t in 0..len {
        let src_row = dpatches.row(t);
        for o in 0..window {
            let pos = t as isize + o as isize - half as isize;
            if pos >= 0 && (pos as usize) < len {
                let dst = dx.row_mut(pos as usize);
                for (dv, &sv) in dst.iter_mut().zip(&src_row[o * d_in..(o + 1) * d_in]) {
                    *dv = *dv + sv;
                }
            }
        }
    }
    Ok(Conv1dGrads {
        dx,
        dfilters,
        dbias,
    })
}

/// GRU cell parameters. Gate convention (the normative definition for this
/// crate): `z = sigmoid(x Wz + h Uz + bz)`, `r = sigmoid(x Wr + h Ur + br)`,
/// `h~ = tanh(x Wh + (r*h) Uh + bh)`, `h' = (1-z)*h + z*h~`.
#[derive(Clone, Debug)]
pub struct GruParams<S> {
    pub wz: Tensor<S>,
    pub uz: Tensor<S>,
    pub bz: Tensor<S>,
    pub wr: Tensor<S>,
    pub ur: Tensor<S>,
    pub br: Tensor<S>,
    pub wh: Tensor<S>,
    pub uh: Tensor<S>,
    pub bh: Tensor<S>,
}

impl<S: Scalar> GruParams<S> {
    pub fn zeros(d_in: usize, d: usize) -> Self {
        GruParams {
            wz: Tensor::zeros(&[d_in, d]),
            uz: Tensor::zeros(&[d, d]),
            bz: Tensor::zeros(&[d]),
            wr: Tensor::zeros(&[d_in, d]),
            ur: Tensor::zeros(&[d, d]),
            br: Tensor::zeros(&[d]),
            wh: Tensor::zeros(&[d_in, d]),
            uh: Tensor::zeros(&[d, d]),
            bh: Tensor::zeros(&[d]),
        }
    }

    pub fn view(&self) -> GruView<'_, S> {
        GruView {
            wz: &self.wz,
            uz: &self.uz,
            bz: &self.bz,
            wr: &self.wr,
            ur: &self.ur,
            br: &self.br,
            wh: &self.wh,
            uh: &self.uh,
            bh: &self.bh,
        }
    }
}

/// Borrowed view of GRU parameters, so callers holding weights elsewhere
/// (e.g. a parameter store) avoid cloning them per step.
pub struct GruView<'a, S> {
    pub wz: &'a Tensor<S>,
    pub uz: &'a Tensor<S>,
    pub bz: &'a Tensor<S>,
    pub wr: &'a Tensor<S>,
    pub ur: &'a Tensor<S>,
    pub br: &'a Tensor<S>,
    pub wh: &'a Tensor<S>,
    pub uh: &'a Tensor<S>,
    pub bh: &'a Tensor<S>,
}

pub struct GruStepCache<S> {
    pub x: Tensor<S>,
    pub h_prev: Tensor<S>,
    pub z: Tensor<S>,
    pub r: Tensor<S>,
    pub h_tilde: Tensor<S>,
}

fn sigmoid<S: Scalar>(t: S) -> S {
    S::one() / (S::one() + (-t).exp())
}

fn gate<S: Scalar>(
    x: &Tensor<S>,
    h: &Tensor<S>,
    w: &Tensor<S>,
    u: &Tensor<S>,
    b: &Tensor<S>,
) -> Result<Tensor<S>> {
    let xa = crate::tensor::vecmat(x, w)?;
    let ha = crate::tensor::vecmat(h, u)?;
    let mut out = xa;
    for ((v, &hv), &bv) in out.data_mut().iter_mut().zip(ha.data()).zip(b.data()) {
        *v = *v + hv + bv;
    }
    Ok(out)
}

/// One GRU step over vectors `x [d_in]` and `h_prev [d]`.
pub fn gru_step<S: Scalar>(
    h_prev: &Tensor<S>,
    x: &Tensor<S>,
    p: &GruView<'_, S>,
) -> Result<(Tensor<S>, GruStepCache<S>)> {
    let z = gate(x, h_prev, p.wz, p.uz, p.bz)?.map(sigmoid);
    let r = gate(x, h_prev, p.wr, p.ur, p.br)?.map(sigmoid);
    let rh = Tensor::new(
        h_prev.shape().to_vec(),
        r.data()
            .iter()
            .zip(h_prev.data())
            .map(|(&rv, &hv)| rv * hv)
            .collect(),
    )?;
    let h_tilde = gate(x, &rh, p.wh, p.uh, p.bh)?.map(|t| t.tanh());
    let h_next = Tensor::new(
        h_prev.shape().to_vec(),
        (0..h_prev.len())
            .map(|i| {
                let (z_i, hp, ht) = (z.data()[i], h_prev.data()[i], h_tilde.data()[i]);
                (S::one() - z_i) * hp + z_i * ht
            })
            .collect(),
    )?;
    let cache = GruStepCache {
        x: x.clone(),
        h_prev: h_prev.clone(),
        z,
        r,
        h_tilde,
    };
    Ok((h_next, cache))
}

pub struct GruStepGrads<S> {
    pub dx: Tensor<S>,
    pub dh_prev: Tensor<S>,
}

/// Accumulates `x^T dpre` into `dw`, `h^T dpre` into `du`, `dpre` into `db`,
/// and routes `dpre W^T` / `dpre U^T` back to the inputs.
fn gate_backward<S: Scalar>(
    dpre: &Tensor<S>,
    x: &Tensor<S>,
    h: &Tensor<S>,
    w: &Tensor<S>,
    u: &Tensor<S>,
    dw: &mut Tensor<S>,
    du: &mut Tensor<S>,
    db: &mut Tensor<S>,
    dx: &mut Tensor<S>,
    dh: &mut Tensor<S>,
) {
    let d = dpre.len();
    for (i, &xv) in x.data().iter().enumerate() {
        let row = dw.row_mut(i);
        for j in 0..d {
            row[j] = row[j] + xv * dpre.data()[j];
        }
    }
    for (i, &hv) in h.data().iter().enumerate() {
        let row = du.row_mut(i);
        for j in 0..d {
            row[j] = row[j] + hv * dpre.data()[j];
        }
    }
    for (b, &g) in db.data_mut().iter_mut().zip(dpre.data()) {
        *b = *b + g;
    }
    for (i, dv) in dx.data_mut().iter_mut().enumerate() {
        let row = w.row(i);
        let mut acc = S::zero();
        for j in 0..d {
            acc = acc + row[j] * dpre.data()[j];
        }
        *dv = *dv + acc;
    }
    for (i, dv) in dh.data_mut().iter_mut().enumerate() {
        let row = u.row(i);
        let mut acc = S::zero();
        for j in 0..d {
            acc = acc + row[j] * dpre.data()[j];
        }
        *dv = *dv + acc;
    }
}

/// Backward for one GRU step. `grads` accumulates parameter gradients in
/// place so a sequence backward can reuse one accumulator.
pub fn gru_step_backward<S: Scalar>(
    cache: &GruStepCache<S>,
    p: &GruView<'_, S>,
    dh_next: &Tensor<S>,
    grads: &mut GruParams<S>,
) -> Result<GruStepGrads<S>> {
    let d = dh_next.len();
    let d_in = cache.x.len();
    let mut dx = Tensor::zeros(&[d_in]);
    let mut dh_prev = Tensor::zeros(&[d]);

    // h' = (1-z)*h_prev + z*h~
    let mut dz = Tensor::zeros(&[d]);
    let mut dht = Tensor::zeros(&[d]);
    for i in 0..d {
        let g = dh_next.data()[i];
        dz.data_mut()[i] = g * (cache.h_tilde.data()[i] - cache.h_prev.data()[i]);
        dht.data_mut()[i] = g * cache.z.data()[i];
        dh_prev.data_mut()[i] = g * (S::one() - cache.z.data()[i]);
    }

    // candidate: h~ = tanh(x Wh + (r*h_prev) Uh + bh)
    let mut dpre_h = Tensor::zeros(&[d]);
    for i in 0..d {
        let ht = cache.h_tilde.data()[i];
        dpre_h.data_mut()[i] = dht.data()[i] * (S::one() - ht * ht);
    }
    let rh = Tensor::new(
        vec![d],
        cache
            .r
            .data()
            .iter()
            .zip(cache.h_prev.data())
            .map(|(&rv, &hv)| rv * hv)
            .collect(),
    )?;
    let mut drh = Tensor::zeros(&[d]);
    gate_backward(
        &dpre_h, &cache.x, &rh, p.wh, p.uh, &mut grads.wh, &mut grads.uh, &mut grads.bh,
        &mut dx, &mut drh,
    );
    let mut dr = Tensor::zeros(&[d]);
    for i in 0..d {
        dr.data_mut()[i] = drh.data()[i] * cache.h_prev.data()[i];
        let v = dh_prev.data()[i] + drh.data()[i] * cache.r.data()[i];
        dh_prev.data_mut()[i] = v;
    }

    // gates: sigmoid' = s*(1-s)
    let mut dpre_z = Tensor::zeros(&[d]);
    let mut dpre_r = Tensor::zeros(&[d]);
    for i in 0..d {
        let z = cache.z.data()[i];
        let r = cache.r.data()[i];
        dpre_z.data_mut()[i] = dz.data()[i] * z * (S::one() - z);
        dpre_r.data_mut()[i] = dr.data()[i] * r * (S::one() - r);
    }
    gate_backward(
        &dpre_z, &cache.x, &cache.h_prev, p.wz, p.uz, &mut grads.wz, &mut grads.uz,
        &mut grads.bz, &mut dx, &mut dh_prev,
    );
    gate_backward(
        &dpre_r, &cache.x, &cache.h_prev, p.wr, p.ur, &mut grads.wr, &mut grads.ur,
        &mut grads.br, &mut dx, &mut dh_prev,
    );

    Ok(GruStepGrads { dx, dh_prev })
}

/// Runs the GRU over `xs` rows in order, starting from `h0`.
pub fn gru_sequence<S: Scalar>(
    h0: &Tensor<S>,
    xs: &Tensor<S>,
    p: &GruView<'_, S>,
) -> Result<(Tensor<S>, Vec<GruStepCache<S>>)> {
    let steps = xs.shape()[0];
    let mut h = h0.clone();
    let mut caches = Vec::with_capacity(steps);
    for t in 0..steps {
        let x = Tensor::from_vec(xs.row(t).to_vec());
        let (h_next, cache) = gru_step(&h, &x, p)?;
        caches.push(cache);
        h = h_next;
    }
    Ok((h, caches))
}

pub struct GruSequenceGrads<S> {
    pub dxs: Tensor<S>,
    pub dh0: Tensor<S>,
    pub dparams: GruParams<S>,
}

/// Backward through a whole sequence given the gradient at the final state.
pub fn gru_sequence_backward<S: Scalar>(
    caches: &[GruStepCache<S>],
    p: &GruView<'_, S>,
    d_in: usize,
    dh_final: &Tensor<S>,
) -> Result<GruSequenceGrads<S>> {
    let d = dh_final.len();
    let mut dparams = GruParams::zeros(d_in, d);
    let mut dxs = Tensor::zeros(&[caches.len(), d_in]);
    let mut dh = dh_final.clone();
    for (t, cache) in caches.iter().enumerate().rev() {
        let step = gru_step_backward(cache, p, &dh, &mut dparams)?;
        dxs.row_mut(t).copy_from_slice(step.dx.data());
        dh = step.dh_prev;
    }
    Ok(GruSequenceGrads {
        dxs,
        dh0: dh,
        dparams,
    })
}

/// Gathers rows of `table [vocab x d]` for each id, producing `[len(ids) x d]`.
pub fn embedding_lookup<S: Scalar>(table: &Tensor<S>, ids: &[u32]) -> Result<Tensor<S>> {
    let vocab = table.shape()[0];
    let d = table.shape()[1];
    let mut out = Tensor::zeros(&[ids.len(), d]);
    for (i, &id) in ids.iter().enumerate() {
        let id = id as usize;
        if id >= vocab {
            return Err(Error::Data(format!(
                "token id {id} out of range for vocabulary of {vocab}"
            )));
        }
        out.row_mut(i).copy_from_slice(table.row(id));
    }
    Ok(out)
}

/// Scatter-adds `g [len(ids) x d]` into the embedding gradient table.
pub fn embedding_backward<S: Scalar>(grad_table: &mut Tensor<S>, ids: &[u32], g: &Tensor<S>) {
    for (i, &id) in ids.iter().enumerate() {
        let dst = grad_table.row_mut(id as usize);
        for (dv, &gv) in dst.iter_mut().zip(g.row(i)) {
            *dv = *dv + gv;
        }
    }
}

/// Inverted dropout: kept positions scale by 1/(1-rate) so expectations
/// match the no-dropout forward. Returns (output, mask); the mask feeds
/// the backward pass unchanged.
pub fn dropout<S: Scalar>(
    x: &Tensor<S>,
    rate: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(Tensor<S>, Tensor<S>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!(
            "dropout rate must be in [0,1), got {rate}"
        )));
    }
    if rate == 0.0 {
        let mask = Tensor::filled(x.shape(), S::one());
        return Ok((x.clone(), mask));
    }
    let keep = S::from_f64(1.0 / (1.0 - rate));
    let mut mask = Tensor::zeros(x.shape());
    for m in mask.data_mut() {
        if rng.gen::<f64>() >= rate {
            *m = keep;
        }
    }
    let out = Tensor::new(
        x.shape().to_vec(),
        x.data()
            .iter()
            .zip(mask.data())
            .map(|(&xv, &mv)| xv * mv)
            .collect(),
    )?;
    Ok((out, mask))
}

pub fn dropout_backward<S: Scalar>(g: &Tensor<S>, mask: &Tensor<S>) -> Result<Tensor<S>> {
    Tensor::new(
        g.shape().to_vec(),
        g.data()
            .iter()
            .zip(mask.data())
            .map(|(&gv, &mv)| gv * mv)
            .collect(),
    )
}
