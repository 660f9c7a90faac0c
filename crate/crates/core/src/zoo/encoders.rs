//! News encoders, user encoders, and the click scorer for all three
//! families, with full backward passes that accumulate into a ParamStore.

use super::attention::{
    additive_attention, additive_attention_backward, self_attention, self_attention_backward,
    AdditiveCache, SelfAttnCache,
};
use super::{Family, ModelSpec, ParamStore, UserIdMode, View};
use crate::error::{Error, Result};
use crate::layers::{
    conv1d_same, conv1d_same_backward, dropout, dropout_backward, embedding_backward,
    embedding_lookup, gru_sequence, gru_sequence_backward, tanh_affine, tanh_affine_backward,
    GruStepCache, GruView,
};
use crate::tensor::{matvec, Scalar, Tensor};
use rand_chacha::ChaCha8Rng;

/// Token/metadata inputs for one article, already padded to spec lengths.
pub struct NewsTokens<'a> {
    pub title: &'a [u32],
    pub abstract_: &'a [u32],
    pub category: u32,
    pub subcategory: u32,
}

/// Training-time dropout stream; absent at evaluation.
pub struct DropoutCtx<'r> {
    pub rate: f64,
    pub rng: &'r mut ChaCha8Rng,
}

pub type DropState<'r> = Option<DropoutCtx<'r>>;

fn maybe_dropout<S: Scalar>(
    x: Tensor<S>,
    drop: &mut DropState<'_>,
) -> Result<(Tensor<S>, Option<Tensor<S>>)> {
    match drop {
        Some(ctx) if ctx.rate > 0.0 => {
            let (y, mask) = dropout(&x, ctx.rate, ctx.rng)?;
            Ok((y, Some(mask)))
        }
        _ => Ok((x, None)),
    }
}

fn token_mask(ids: &[u32]) -> Vec<bool> {
    ids.iter().map(|&id| id != 0).collect()
}

/// Cache of an embed -> conv -> additive-pool tower.
pub struct TowerCache<S> {
    pub prefix: &'static str,
    pub ids: Vec<u32>,
    pub drop_mask: Option<Tensor<S>>,
    pub patches: Tensor<S>,
    pub pool: AdditiveCache<S>,
}

pub struct CatCache<S> {
    pub prefix: &'static str,
    pub id: u32,
    pub emb: Tensor<S>,
    pub out: Tensor<S>,
}

pub enum ViewCache<S> {
    Text(TowerCache<S>),
    Cat(CatCache<S>),
}

pub enum NewsCache<S> {
    Nrms {
        ids: Vec<u32>,
        emb_drop: Option<Tensor<S>>,
        attn: SelfAttnCache<S>,
        attn_drop: Option<Tensor<S>>,
        pool: AdditiveCache<S>,
    },
    Naml {
        views: Vec<(View, Option<ViewCache<S>>)>,
        view_pool: AdditiveCache<S>,
    },
    Lstur(TowerCache<S>),
}

fn head_names(prefix: &str, heads: usize) -> Vec<[String; 3]> {
    (0..heads)
        .map(|h| {
            [
                format!("{prefix}.h{h}.wq"),
                format!("{prefix}.h{h}.wk"),
                format!("{prefix}.h{h}.wv"),
            ]
        })
        .collect()
}

fn collect_heads<'a, S: Scalar>(
    params: &'a ParamStore<S>,
    names: &[[String; 3]],
) -> Result<Vec<(&'a Tensor<S>, &'a Tensor<S>, &'a Tensor<S>)>> {
    names
        .iter()
        .map(|[q, k, v]| Ok((params.get(q)?, params.get(k)?, params.get(v)?)))
        .collect()
}

/// Runs one embed -> conv -> pool tower. Returns None when every token is
/// padding (possible for abstracts; the view is then masked out upstream).
fn text_tower<S: Scalar>(
    spec: &ModelSpec,
    params: &ParamStore<S>,
    prefix: &'static str,
    ids: &[u32],
    drop: &mut DropState<'_>,
) -> Result<Option<(Tensor<S>, TowerCache<S>)>> {
    let mask = token_mask(ids);
    if !mask.iter().any(|&m| m) {
        return Ok(None);
    }
    let emb = embedding_lookup(params.get("word_embedding")?, ids)?;
    let (emb, drop_mask) = maybe_dropout(emb, drop)?;
    let (conv_out, patches) = conv1d_same(
        &emb,
        params.get(&format!("{prefix}.conv.filters"))?,
        params.get(&format!("{prefix}.conv.bias"))?,
        spec.conv_window,
    )?;
    let (vec, pool) = additive_attention(
        &conv_out,
        &mask,
        params.get(&format!("{prefix}.pool.w1"))?,
        params.get(&format!("{prefix}.pool.b1"))?,
        params.get(&format!("{prefix}.pool.v"))?,
    )?;
    Ok(Some((
        vec,
        TowerCache {
            prefix,
            ids: ids.to_vec(),
            drop_mask,
            patches,
            pool,
        },
    )))
}

fn cat_tower<S: Scalar>(
    params: &ParamStore<S>,
    prefix: &'static str,
    id: u32,
) -> Result<(Tensor<S>, CatCache<S>)> {
    let emb = embedding_lookup(params.get(&format!("{prefix}.embedding"))?, &[id])?;
    let out = tanh_affine(
        &emb,
        params.get(&format!("{prefix}.dense.w"))?,
        params.get(&format!("{prefix}.dense.b"))?,
    )?;
    let vec = Tensor::from_vec(out.row(0).to_vec());
    Ok((
        vec,
        CatCache {
            prefix,
            id,
            emb,
            out,
        },
    ))
}

/// Encodes one article into a `d_news` vector.
pub fn encode_news<S: Scalar>(
    spec: &ModelSpec,
    params: &ParamStore<S>,
    tokens: &NewsTokens<'_>,
    drop: &mut DropState<'_>,
) -> Result<(Tensor<S>, NewsCache<S>)> {
    match spec.family {
        Family::Nrms => {
            let mask = token_mask(tokens.title);
            if !mask.iter().any(|&m| m) {
                return Err(Error::Degenerate {
                    op: "encode_news",
                    msg: "title is all padding".into(),
                });
            }
            let emb = embedding_lookup(params.get("word_embedding")?, tokens.title)?;
            let (emb, emb_drop) = maybe_dropout(emb, drop)?;
            let names = head_names("news.self", spec.heads);
            let heads = collect_heads(params, &names)?;
            let (attn_out, attn) = self_attention(&emb, &mask, &heads)?;
            drop_heads(heads);
            let (attn_out, attn_drop) = maybe_dropout(attn_out, drop)?;
            let (vec, pool) = additive_attention(
                &attn_out,
                &mask,
                params.get("news.pool.w1")?,
                params.get("news.pool.b1")?,
                params.get("news.pool.v")?,
            )?;
            Ok((
                vec,
                NewsCache::Nrms {
                    ids: tokens.title.to_vec(),
                    emb_drop,
                    attn,
                    attn_drop,
                    pool,
                },
            ))
        }
        Family::Naml => {
            let f = spec.conv_filters;
            let mut view_mat = Tensor::zeros(&[spec.views.len(), f]);
            let mut view_mask = vec![false; spec.views.len()];
            let mut views = Vec::with_capacity(spec.views.len());
            for (i, view) in spec.views.iter().enumerate() {
                let entry = match view {
                    View::Title => {
                        match text_tower(spec, params, "title", tokens.title, drop)? {
                            Some((vec, cache)) => {
                                view_mat.row_mut(i).copy_from_slice(vec.data());
                                view_mask[i] = true;
                                Some(ViewCache::Text(cache))
                            }
                            None => {
                                return Err(Error::Degenerate {
                                    op: "encode_news",
                                    msg: "title is all padding".into(),
                                })
                            }
                        }
                    }
                    View::Abstract => {
                        match text_tower(spec, params, "abstract", tokens.abstract_, drop)? {
                            Some((vec, cache)) => {
                                view_mat.row_mut(i).copy_from_slice(vec.data());
                                view_mask[i] = true;
                                Some(ViewCache::Text(cache))
                            }
                            None => None,
                        }
                    }
                    View::Category => {
                        let (vec, cache) = cat_tower(params, "category", tokens.category)?;
                        view_mat.row_mut(i).copy_from_slice(vec.data());
                        view_mask[i] = true;
                        Some(ViewCache::Cat(cache))
                    }
                    View::Subcategory => {
                        let (vec, cache) = cat_tower(params, "subcategory", tokens.subcategory)?;
                        view_mat.row_mut(i).copy_from_slice(vec.data());
                        view_mask[i] = true;
                        Some(ViewCache::Cat(cache))
                    }
                };
                views.push((*view, entry));
            }
            let (vec, view_pool) = additive_attention(
                &view_mat,
                &view_mask,
                params.get("views.pool.w1")?,
                params.get("views.pool.b1")?,
                params.get("views.pool.v")?,
            )?;
            Ok((vec, NewsCache::Naml { views, view_pool }))
        }
        Family::Lstur => match text_tower(spec, params, "news", tokens.title, drop)? {
            Some((vec, cache)) => Ok((vec, NewsCache::Lstur(cache))),
            None => Err(Error::Degenerate {
                op: "encode_news",
                msg: "title is all padding".into(),
            }),
        },
    }
}

// Head tuples borrow the store; dropping them before mutable gradient
// writes keeps the borrow checker satisfied without cloning weights.
fn drop_heads<T>(_: Vec<T>) {}

fn text_tower_backward<S: Scalar>(
    spec: &ModelSpec,
    params: &mut ParamStore<S>,
    cache: &TowerCache<S>,
    g: &Tensor<S>,
) -> Result<()> {
    let prefix = cache.prefix;
    let pool_grads = {
        let w1 = params.get(&format!("{prefix}.pool.w1"))?;
        let v = params.get(&format!("{prefix}.pool.v"))?;
        additive_attention_backward(&cache.pool, w1, v, g)?
    };
    params.add_grad(&format!("{prefix}.pool.w1"), &pool_grads.dw1)?;
    params.add_grad(&format!("{prefix}.pool.b1"), &pool_grads.db1)?;
    params.add_grad(&format!("{prefix}.pool.v"), &pool_grads.dv)?;

    let conv_grads = {
        let filters = params.get(&format!("{prefix}.conv.filters"))?;
        conv1d_same_backward(
            &cache.patches,
            filters,
            &pool_grads.dx,
            spec.conv_window,
            spec.embed_dim,
        )?
    };
    params.add_grad(&format!("{prefix}.conv.filters"), &conv_grads.dfilters)?;
    params.add_grad(&format!("{prefix}.conv.bias"), &conv_grads.dbias)?;

    let demb = match &cache.drop_mask {
        Some(mask) => dropout_backward(&conv_grads.dx, mask)?,
        None => conv_grads.dx,
    };
    embedding_backward(params.grad_mut("word_embedding")?, &cache.ids, &demb);
    Ok(())
}

fn cat_tower_backward<S: Scalar>(
    params: &mut ParamStore<S>,
    cache: &CatCache<S>,
    g: &Tensor<S>,
) -> Result<()> {
    let prefix = cache.prefix;
    let g_row = Tensor::new(vec![1, g.len()], g.data().to_vec())?;
    let grads = {
        let w = params.get(&format!("{prefix}.dense.w"))?;
        tanh_affine_backward(&cache.emb, w, &cache.out, &g_row)?
    };
    params.add_grad(&format!("{prefix}.dense.w"), &grads.dw)?;
    params.add_grad(&format!("{prefix}.dense.b"), &grads.db)?;
    embedding_backward(
        params.grad_mut(&format!("{prefix}.embedding"))?,
        &[cache.id],
        &grads.dx,
    );
    Ok(())
}

/// Accumulates gradients of one encoded article into the store.
pub fn encode_news_backward<S: Scalar>(
    spec: &ModelSpec,
    params: &mut ParamStore<S>,
    cache: &NewsCache<S>,
    g: &Tensor<S>,
) -> Result<()> {
    match cache {
        NewsCache::Nrms {
            ids,
            emb_drop,
            attn,
            attn_drop,
            pool,
        } => {
            let pool_grads = {
                let w1 = params.get("news.pool.w1")?;
                let v = params.get("news.pool.v")?;
                additive_attention_backward(pool, w1, v, g)?
            };
            params.add_grad("news.pool.w1", &pool_grads.dw1)?;
            params.add_grad("news.pool.b1", &pool_grads.db1)?;
            params.add_grad("news.pool.v", &pool_grads.dv)?;

            let dattn = match attn_drop {
                Some(mask) => dropout_backward(&pool_grads.dx, mask)?,
                None => pool_grads.dx,
            };
            let names = head_names("news.self", spec.heads);
            let attn_grads = {
                let heads = collect_heads(params, &names)?;
                self_attention_backward(attn, &heads, &dattn)?
            };
            for (name, (dwq, dwk, dwv)) in names.iter().zip(&attn_grads.dheads) {
                params.add_grad(&name[0], dwq)?;
                params.add_grad(&name[1], dwk)?;
                params.add_grad(&name[2], dwv)?;
            }
            let demb = match emb_drop {
                Some(mask) => dropout_backward(&attn_grads.dx, mask)?,
                None => attn_grads.dx,
            };
            embedding_backward(params.grad_mut("word_embedding")?, ids, &demb);
            Ok(())
        }
        NewsCache::Naml { views, view_pool } => {
            let pool_grads = {
                let w1 = params.get("views.pool.w1")?;
                let v = params.get("views.pool.v")?;
                additive_attention_backward(view_pool, w1, v, g)?
            };
            params.add_grad("views.pool.w1", &pool_grads.dw1)?;
            params.add_grad("views.pool.b1", &pool_grads.db1)?;
            params.add_grad("views.pool.v", &pool_grads.dv)?;
            for (i, (_, entry)) in views.iter().enumerate() {
                let dview = Tensor::from_vec(pool_grads.dx.row(i).to_vec());
                match entry {
                    Some(ViewCache::Text(tc)) => text_tower_backward(spec, params, tc, &dview)?,
                    Some(ViewCache::Cat(cc)) => cat_tower_backward(params, cc, &dview)?,
                    None => {}
                }
            }
            Ok(())
        }
        NewsCache::Lstur(tc) => text_tower_backward(spec, params, tc, g),
    }
}

pub enum UserCache<S> {
    /// Empty history for an attention-pooling family: the zero vector was
    /// returned and nothing requires gradients.
    Empty { rows: usize, d: usize },
    Nrms {
        attn: SelfAttnCache<S>,
        attn_drop: Option<Tensor<S>>,
        pool: AdditiveCache<S>,
    },
    Naml {
        pool: AdditiveCache<S>,
    },
    Lstur {
        user_row: u32,
        h_rows: usize,
        d_news: usize,
        positions: Vec<usize>,
        steps: Vec<GruStepCache<S>>,
        joint: Option<Tensor<S>>,
    },
}

fn gru_view<'a, S: Scalar>(params: &'a ParamStore<S>) -> Result<GruView<'a, S>> {
    Ok(GruView {
        wz: params.get("user.gru.wz")?,
        uz: params.get("user.gru.uz")?,
        bz: params.get("user.gru.bz")?,
        wr: params.get("user.gru.wr")?,
        ur: params.get("user.gru.ur")?,
        br: params.get("user.gru.br")?,
        wh: params.get("user.gru.wh")?,
        uh: params.get("user.gru.uh")?,
        bh: params.get("user.gru.bh")?,
    })
}

/// Encodes a click history (rows of news vectors, oldest first) into a
/// user vector.
///
/// Empty histories yield the zero vector for NRMS/NAML (logged) and the
/// long-term user embedding for LSTUR.
pub fn encode_user<S: Scalar>(
    spec: &ModelSpec,
    params: &ParamStore<S>,
    history: &Tensor<S>,
    mask: &[bool],
    user_id: Option<u32>,
    drop: &mut DropState<'_>,
) -> Result<(Tensor<S>, UserCache<S>)> {
    let rows = history.shape()[0];
    let d = history.shape()[1];
    if mask.len() != rows {
        return Err(Error::Shape {
            op: "encode_user_mask",
            lhs: history.shape().to_vec(),
            rhs: vec![mask.len()],
        });
    }
    let empty = !mask.iter().any(|&m| m);
    match spec.family {
        Family::Nrms => {
            if empty {
                log::debug!("empty history: emitting zero user vector");
                return Ok((Tensor::zeros(&[d]), UserCache::Empty { rows, d }));
            }
            let names = head_names("user.self", spec.heads);
            let heads = collect_heads(params, &names)?;
            let (attn_out, attn) = self_attention(history, mask, &heads)?;
            drop_heads(heads);
            let (attn_out, attn_drop) = maybe_dropout(attn_out, drop)?;
            let (vec, pool) = additive_attention(
                &attn_out,
                mask,
                params.get("user.pool.w1")?,
                params.get("user.pool.b1")?,
                params.get("user.pool.v")?,
            )?;
            Ok((
                vec,
                UserCache::Nrms {
                    attn,
                    attn_drop,
                    pool,
                },
            ))
        }
        Family::Naml => {
            if empty {
                log::debug!("empty history: emitting zero user vector");
                return Ok((Tensor::zeros(&[d]), UserCache::Empty { rows, d }));
            }
            let (vec, pool) = additive_attention(
                history,
                mask,
                params.get("user.pool.w1")?,
                params.get("user.pool.b1")?,
                params.get("user.pool.v")?,
            )?;
            Ok((vec, UserCache::Naml { pool }))
        }
        Family::Lstur => {
            let user_row = user_id.unwrap_or(0);
            let ue = Tensor::from_vec(
                params
                    .get("user.id_embedding")?
                    .row(user_row as usize)
                    .to_vec(),
            );
            let positions: Vec<usize> = (0..rows).filter(|&i| mask[i]).collect();
            let mut xs = Tensor::zeros(&[positions.len(), d]);
            for (t, &i) in positions.iter().enumerate() {
                xs.row_mut(t).copy_from_slice(history.row(i));
            }
            let view = gru_view(params)?;
            match spec.user_id_mode {
                UserIdMode::Init => {
                    let (h, steps) = gru_sequence(&ue, &xs, &view)?;
                    Ok((
                        h,
                        UserCache::Lstur {
                            user_row,
                            h_rows: rows,
                            d_news: d,
                            positions,
                            steps,
                            joint: None,
                        },
                    ))
                }
                UserIdMode::Concat => {
                    if positions.is_empty() {
                        return Ok((
                            ue,
                            UserCache::Lstur {
                                user_row,
                                h_rows: rows,
                                d_news: d,
                                positions,
                                steps: Vec::new(),
                                joint: None,
                            },
                        ));
                    }
                    let h0 = Tensor::zeros(&[spec.gru_dim]);
                    let (h, steps) = gru_sequence(&h0, &xs, &view)?;
                    let mut joint = Vec::with_capacity(2 * spec.gru_dim);
                    joint.extend_from_slice(h.data());
                    joint.extend_from_slice(ue.data());
                    let joint = Tensor::from_vec(joint);
                    let vec = crate::tensor::vecmat(&joint, params.get("user.combine.w")?)?;
                    Ok((
                        vec,
                        UserCache::Lstur {
                            user_row,
                            h_rows: rows,
                            d_news: d,
                            positions,
                            steps,
                            joint: Some(joint),
                        },
                    ))
                }
            }
        }
    }
}

/// Backward of [`encode_user`]; returns the gradient w.r.t. the history
/// matrix (zero rows where masked) and accumulates parameter gradients.
pub fn encode_user_backward<S: Scalar>(
    spec: &ModelSpec,
    params: &mut ParamStore<S>,
    cache: &UserCache<S>,
    g: &Tensor<S>,
) -> Result<Tensor<S>> {
    match cache {
        UserCache::Empty { rows, d } => Ok(Tensor::zeros(&[*rows, *d])),
        UserCache::Nrms {
            attn,
            attn_drop,
            pool,
        } => {
            let pool_grads = {
                let w1 = params.get("user.pool.w1")?;
                let v = params.get("user.pool.v")?;
                additive_attention_backward(pool, w1, v, g)?
            };
            params.add_grad("user.pool.w1", &pool_grads.dw1)?;
            params.add_grad("user.pool.b1", &pool_grads.db1)?;
            params.add_grad("user.pool.v", &pool_grads.dv)?;
            let dattn = match attn_drop {
                Some(mask) => dropout_backward(&pool_grads.dx, mask)?,
                None => pool_grads.dx,
            };
            let names = head_names("user.self", spec.heads);
            let attn_grads = {
                let heads = collect_heads(params, &names)?;
                self_attention_backward(attn, &heads, &dattn)?
            };
            for (name, (dwq, dwk, dwv)) in names.iter().zip(&attn_grads.dheads) {
                params.add_grad(&name[0], dwq)?;
                params.add_grad(&name[1], dwk)?;
                params.add_grad(&name[2], dwv)?;
            }
            Ok(attn_grads.dx)
        }
        UserCache::Naml { pool } => {
            let pool_grads = {
                let w1 = params.get("user.pool.w1")?;
                let v = params.get("user.pool.v")?;
                additive_attention_backward(pool, w1, v, g)?
            };
            params.add_grad("user.pool.w1", &pool_grads.dw1)?;
            params.add_grad("user.pool.b1", &pool_grads.db1)?;
            params.add_grad("user.pool.v", &pool_grads.dv)?;
            Ok(pool_grads.dx)
        }
        UserCache::Lstur {
            user_row,
            h_rows,
            d_news,
            positions,
            steps,
            joint,
        } => {
            let mut d_history = Tensor::zeros(&[*h_rows, *d_news]);
            let mut due = Tensor::zeros(&[spec.gru_dim]);
            let mut dh_final: Option<Tensor<S>> = None;

            if let Some(joint) = joint {
                // user = joint . W  (concat mode)
                let g2 = spec.gru_dim * 2;
                let mut dw = Tensor::zeros(&[g2, spec.gru_dim]);
                for i in 0..g2 {
                    let ji = joint.data()[i];
                    for (dwij, &gj) in dw.row_mut(i).iter_mut().zip(g.data()) {
                        *dwij = ji * gj;
                    }
                }
                let djoint = {
                    let w = params.get("user.combine.w")?;
                    matvec(w, g)?
                };
                params.add_grad("user.combine.w", &dw)?;
                dh_final = Some(Tensor::from_vec(djoint.data()[..spec.gru_dim].to_vec()));
                due.add_assign(&Tensor::from_vec(djoint.data()[spec.gru_dim..].to_vec()))?;
            } else if steps.is_empty() {
                // user vector was the embedding itself
                due.add_assign(g)?;
            } else {
                dh_final = Some(g.clone());
            }

            if let Some(dh_final) = dh_final {
                if steps.is_empty() {
                    // init mode, empty history: h_final == h0 == embedding
                    due.add_assign(&dh_final)?;
                } else {
                    let seq_grads = {
                        let view = gru_view(params)?;
                        gru_sequence_backward(steps, &view, *d_news, &dh_final)?
                    };
                    for (t, &i) in positions.iter().enumerate() {
                        d_history
                            .row_mut(i)
                            .copy_from_slice(seq_grads.dxs.row(t));
                    }
                    for (gate, dw, du, db) in [
                        ("z", &seq_grads.dparams.wz, &seq_grads.dparams.uz, &seq_grads.dparams.bz),
                        ("r", &seq_grads.dparams.wr, &seq_grads.dparams.ur, &seq_grads.dparams.br),
                        ("h", &seq_grads.dparams.wh, &seq_grads.dparams.uh, &seq_grads.dparams.bh),
                    ] {
                        params.add_grad(&format!("user.gru.w{gate}"), dw)?;
                        params.add_grad(&format!("user.gru.u{gate}"), du)?;
                        params.add_grad(&format!("user.gru.b{gate}"), db)?;
                    }
                    if spec.user_id_mode == UserIdMode::Init {
                        due.add_assign(&seq_grads.dh0)?;
                    }
                }
            }

            let due_mat = Tensor::new(vec![1, spec.gru_dim], due.into_data())?;
            embedding_backward(params.grad_mut("user.id_embedding")?, &[*user_row], &due_mat);
            Ok(d_history)
        }
    }
}

/// Click scores: inner product of the user vector with each candidate row.
pub fn score<S: Scalar>(user: &Tensor<S>, candidates: &Tensor<S>) -> Result<Tensor<S>> {
    matvec(candidates, user)
}

/// Backward of [`score`]: returns (d_user, d_candidates).
pub fn score_backward<S: Scalar>(
    user: &Tensor<S>,
    candidates: &Tensor<S>,
    dscores: &Tensor<S>,
) -> Result<(Tensor<S>, Tensor<S>)> {
    let m = candidates.shape()[0];
    let d = candidates.shape()[1];
    let mut duser = Tensor::zeros(&[d]);
    let mut dcands = Tensor::zeros(&[m, d]);
    for j in 0..m {
        let ds = dscores.data()[j];
        for ((du, &cv), (dc, &uv)) in duser
            .data_mut()
            .iter_mut()
            .zip(candidates.row(j))
            .zip(dcands.row_mut(j).iter_mut().zip(user.data()))
        {
            *du = *du + ds * cv;
            *dc = ds * uv;
        }
    }
    Ok((duser, dcands))
}
