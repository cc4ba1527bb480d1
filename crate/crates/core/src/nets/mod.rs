//! Entity transformers: a recurrent actor and a pooled critic.
//!
//! Both networks embed each entity row with one shared linear map and run
//! pre-norm blocks (layer norm, multi-head self-attention, residual, layer
//! norm, ReLU feed-forward of width `4d`, residual) followed by a final
//! layer norm. No parameter depends on the number of rows, so one set of
//! weights serves every team size, and without positional encodings the
//! output is equivariant to row order.
//!
//! The actor appends its hidden token (already `d` wide) after the entity
//! rows. Logits are read from that row's output, and the same output row
//! becomes the next hidden token. The critic mean-pools all output rows.
//!
//! Everything is generic over the float type: training runs in `f32`,
//! gradient checks in `f64`.

mod layers;
#[cfg(test)]
mod tests;

pub use layers::{dot, LN_EPS};

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Debug;
use core::iter::Sum;
use num_traits::Float;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{N_ACTIONS, TOKEN_FEATURES};
use crate::error::{Error, Result};
use crate::rng::stream_rng;
use layers::{attention, attention_backward, layer_norm, layer_norm_backward, linear, linear_backward};

pub trait Real: Float + Sum + Default + Debug + Send + Sync + 'static {}
impl<T: Float + Sum + Default + Debug + Send + Sync + 'static> Real for T {}

/// Scale applied to the actor's output head at init so the first policy is
/// close to uniform.
pub const POLICY_HEAD_INIT_SCALE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub in_features: usize,
    pub d_model: usize,
    pub heads: usize,
    pub blocks: usize,
    pub outputs: usize,
    pub hidden_token: bool,
}

impl NetConfig {
    pub fn actor(d_model: usize, heads: usize, blocks: usize) -> Self {
        NetConfig { in_features: TOKEN_FEATURES, d_model, heads, blocks, outputs: N_ACTIONS, hidden_token: true }
    }

    pub fn critic(d_model: usize, heads: usize, blocks: usize) -> Self {
        NetConfig { in_features: TOKEN_FEATURES, d_model, heads, blocks, outputs: 1, hidden_token: false }
    }

    pub fn ffn(&self) -> usize {
        4 * self.d_model
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_features == 0 || self.d_model == 0 || self.heads == 0 || self.outputs == 0 {
            return Err(Error::Argument(format!("network dimensions must be positive: {self:?}")));
        }
        if self.d_model % self.heads != 0 {
            return Err(Error::Argument(format!(
                "d_model {} is not divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        Ok(())
    }
}

/// A contiguous slice of the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seg {
    pub off: usize,
    pub len: usize,
}

impl Seg {
    #[inline]
    pub fn of<'a, F>(&self, v: &'a [F]) -> &'a [F] {
        &v[self.off..self.off + self.len]
    }

    #[inline]
    pub fn of_mut<'a, F>(&self, v: &'a mut [F]) -> &'a mut [F] {
        &mut v[self.off..self.off + self.len]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockLayout {
    pub ln1_g: Seg,
    pub ln1_b: Seg,
    pub wq: Seg,
    pub bq: Seg,
    pub wk: Seg,
    pub bk: Seg,
    pub wv: Seg,
    pub bv: Seg,
    pub wo: Seg,
    pub bo: Seg,
    pub ln2_g: Seg,
    pub ln2_b: Seg,
    pub w1: Seg,
    pub b1: Seg,
    pub w2: Seg,
    pub b2: Seg,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub embed_w: Seg,
    pub embed_b: Seg,
    pub blocks: Vec<BlockLayout>,
    pub lnf_g: Seg,
    pub lnf_b: Seg,
    pub head_w: Seg,
    pub head_b: Seg,
    pub hidden0: Option<Seg>,
    pub total: usize,
}

impl Layout {
    pub fn new(cfg: &NetConfig) -> Self {
        let mut off = 0;
        let mut take = |len: usize| {
            let s = Seg { off, len };
            off += len;
            s
        };
        let (z, d, f) = (cfg.in_features, cfg.d_model, cfg.ffn());
        let embed_w = take(z * d);
        let embed_b = take(d);
        let blocks = (0..cfg.blocks)
            .map(|_| BlockLayout {
                ln1_g: take(d),
                ln1_b: take(d),
                wq: take(d * d),
                bq: take(d),
                wk: take(d * d),
                bk: take(d),
                wv: take(d * d),
                bv: take(d),
                wo: take(d * d),
                bo: take(d),
                ln2_g: take(d),
                ln2_b: take(d),
                w1: take(d * f),
                b1: take(f),
                w2: take(f * d),
                b2: take(d),
            })
            .collect();
        let lnf_g = take(d);
        let lnf_b = take(d);
        let head_w = take(d * cfg.outputs);
        let head_b = take(cfg.outputs);
        let hidden0 = cfg.hidden_token.then(|| take(d));
        Layout { embed_w, embed_b, blocks, lnf_g, lnf_b, head_w, head_b, hidden0, total: off }
    }

    /// Named segments in storage order, used by checkpoint manifests.
    pub fn segments(&self) -> Vec<(String, Seg)> {
        let mut out = vec![("embed.w".into(), self.embed_w), ("embed.b".into(), self.embed_b)];
        for (i, b) in self.blocks.iter().enumerate() {
            for (name, s) in [
                ("ln1.g", b.ln1_g),
                ("ln1.b", b.ln1_b),
                ("attn.wq", b.wq),
                ("attn.bq", b.bq),
                ("attn.wk", b.wk),
                ("attn.bk", b.bk),
                ("attn.wv", b.wv),
                ("attn.bv", b.bv),
                ("attn.wo", b.wo),
                ("attn.bo", b.bo),
                ("ln2.g", b.ln2_g),
                ("ln2.b", b.ln2_b),
                ("ffn.w1", b.w1),
                ("ffn.b1", b.b1),
                ("ffn.w2", b.w2),
                ("ffn.b2", b.b2),
            ] {
                out.push((format!("block{i}.{name}"), s));
            }
        }
        out.push(("final_ln.g".into(), self.lnf_g));
        out.push(("final_ln.b".into(), self.lnf_b));
        out.push(("head.w".into(), self.head_w));
        out.push(("head.b".into(), self.head_b));
        if let Some(h) = self.hidden0 {
            out.push(("hidden0".into(), h));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Params<F> {
    pub cfg: NetConfig,
    pub layout: Layout,
    pub data: Vec<F>,
}

/// Fan-in scaled uniform weights `U(-1/√fan_in, 1/√fan_in)`, zero biases,
/// unit layer-norm gains, `U(-1, 1)` initial hidden token.
pub fn init_params<F: Real>(cfg: NetConfig, seed: u64) -> Result<Params<F>> {
    cfg.validate()?;
    let layout = Layout::new(&cfg);
    let mut data = vec![F::zero(); layout.total];
    let mut rng = stream_rng(seed);
    let mut fill = |s: Seg, bound: f64, data: &mut [F]| {
        for x in s.of_mut(data) {
            *x = F::from((rng.random::<f64>() * 2.0 - 1.0) * bound).unwrap();
        }
    };
    let (z, d, f) = (cfg.in_features as f64, cfg.d_model as f64, cfg.ffn() as f64);
    fill(layout.embed_w, 1.0 / z.sqrt(), &mut data);
    for b in &layout.blocks {
        for w in [b.wq, b.wk, b.wv, b.wo, b.w1] {
            fill(w, 1.0 / d.sqrt(), &mut data);
        }
        fill(b.w2, 1.0 / f.sqrt(), &mut data);
        for g in [b.ln1_g, b.ln2_g] {
            g.of_mut(&mut data).iter_mut().for_each(|x| *x = F::one());
        }
    }
    layout.lnf_g.of_mut(&mut data).iter_mut().for_each(|x| *x = F::one());
    let head_scale = if cfg.hidden_token { POLICY_HEAD_INIT_SCALE } else { 1.0 };
    fill(layout.head_w, head_scale / d.sqrt(), &mut data);
    if let Some(h) = layout.hidden0 {
        fill(h, 1.0, &mut data);
    }
    Ok(Params { cfg, layout, data })
}

impl<F: Real> Params<F> {
    pub fn from_data(cfg: NetConfig, data: Vec<F>) -> Result<Self> {
        cfg.validate()?;
        let layout = Layout::new(&cfg);
        if data.len() != layout.total {
            return Err(Error::Argument(format!(
                "parameter vector has {} entries, configuration needs {}",
                data.len(),
                layout.total
            )));
        }
        Ok(Params { cfg, layout, data })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn cast<G: Real>(&self) -> Params<G> {
        Params {
            cfg: self.cfg,
            layout: self.layout.clone(),
            data: self.data.iter().map(|&x| G::from(x).unwrap()).collect(),
        }
    }

    pub fn zeros_like(&self) -> Vec<F> {
        vec![F::zero(); self.data.len()]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Learned initial hidden token (empty for the critic).
    pub fn hidden0(&self) -> &[F] {
        self.layout.hidden0.map(|s| s.of(&self.data)).unwrap_or(&[])
    }
}

#[derive(Debug, Clone, Default)]
struct LnCache<F> {
    xhat: Vec<F>,
    rstd: Vec<F>,
}

impl<F: Real> LnCache<F> {
    fn prepare(&mut self, rows: usize, d: usize) {
        self.xhat.resize(rows * d, F::zero());
        self.rstd.resize(rows, F::zero());
    }
}

#[derive(Debug, Clone, Default)]
struct BlockCache<F> {
    x0: Vec<F>,
    ln1: LnCache<F>,
    a: Vec<F>,
    q: Vec<F>,
    k: Vec<F>,
    v: Vec<F>,
    p: Vec<F>,
    ctx: Vec<F>,
    x1: Vec<F>,
    ln2: LnCache<F>,
    b: Vec<F>,
    pre: Vec<F>,
    act: Vec<F>,
}

/// Activations recorded by a forward pass, consumed by [`backward`].
#[derive(Debug, Clone, Default)]
pub struct Cache<F> {
    n: usize,
    rows: usize,
    x_in: Vec<F>,
    blocks: Vec<BlockCache<F>>,
    resid: Vec<F>,
    lnf: LnCache<F>,
    y: Vec<F>,
    pooled: Vec<F>,
    out: Vec<F>,
}

impl<F: Real> Cache<F> {
    pub fn new() -> Self {
        Cache {
            n: 0,
            rows: 0,
            x_in: Vec::new(),
            blocks: Vec::new(),
            resid: Vec::new(),
            lnf: LnCache { xhat: Vec::new(), rstd: Vec::new() },
            y: Vec::new(),
            pooled: Vec::new(),
            out: Vec::new(),
        }
    }

    fn prepare(&mut self, cfg: &NetConfig, n: usize) {
        let rows = n + usize::from(cfg.hidden_token);
        let (d, f, h) = (cfg.d_model, cfg.ffn(), cfg.heads);
        self.n = n;
        self.rows = rows;
        self.x_in.resize(n * cfg.in_features, F::zero());
        self.blocks.resize_with(cfg.blocks, || BlockCache {
            x0: Vec::new(),
            ln1: LnCache { xhat: Vec::new(), rstd: Vec::new() },
            a: Vec::new(),
            q: Vec::new(),
            k: Vec::new(),
            v: Vec::new(),
            p: Vec::new(),
            ctx: Vec::new(),
            x1: Vec::new(),
            ln2: LnCache { xhat: Vec::new(), rstd: Vec::new() },
            b: Vec::new(),
            pre: Vec::new(),
            act: Vec::new(),
        });
        for b in &mut self.blocks {
            for buf in [&mut b.x0, &mut b.a, &mut b.q, &mut b.k, &mut b.v, &mut b.ctx, &mut b.x1, &mut b.b] {
                buf.resize(rows * d, F::zero());
            }
            b.p.resize(h * rows * rows, F::zero());
            b.pre.resize(rows * f, F::zero());
            b.act.resize(rows * f, F::zero());
            b.ln1.prepare(rows, d);
            b.ln2.prepare(rows, d);
        }
        self.resid.resize(rows * d, F::zero());
        self.lnf.prepare(rows, d);
        self.y.resize(rows * d, F::zero());
        self.pooled.resize(d, F::zero());
        self.out.resize(cfg.outputs, F::zero());
    }

    /// Head outputs: logits for the actor, `[value]` for the critic.
    pub fn output(&self) -> &[F] {
        &self.out
    }

    /// Output hidden token of the last actor pass.
    pub fn hidden_out(&self) -> &[F] {
        let d = self.pooled.len();
        &self.y[self.n * d..(self.n + 1) * d]
    }

    /// Smallest |pre-activation| across the ReLUs of the last pass.
    pub fn relu_margin(&self) -> F {
        self.blocks.iter().flat_map(|b| b.pre.iter()).map(|v| v.abs()).fold(F::infinity(), F::min)
    }

    /// Every normalized (pre-gain) row produced by a layer norm.
    pub fn normalized_rows(&self) -> impl Iterator<Item = &[F]> {
        let d = self.pooled.len();
        self.blocks
            .iter()
            .flat_map(|b| [b.ln1.xhat.as_slice(), b.ln2.xhat.as_slice()])
            .chain(core::iter::once(self.lnf.xhat.as_slice()))
            .flat_map(move |m| m.chunks(d))
    }
}

/// Backward-pass work buffers, reusable across calls.
#[derive(Debug, Clone, Default)]
pub struct Scratch<F> {
    dy: Vec<F>,
    dx: Vec<F>,
    da: Vec<F>,
    dq: Vec<F>,
    dk: Vec<F>,
    dv: Vec<F>,
    dctx: Vec<F>,
    dpre: Vec<F>,
    tmp: Vec<F>,
    att: Vec<F>,
}

impl<F: Real> Scratch<F> {
    pub fn new() -> Self {
        Scratch {
            dy: Vec::new(),
            dx: Vec::new(),
            da: Vec::new(),
            dq: Vec::new(),
            dk: Vec::new(),
            dv: Vec::new(),
            dctx: Vec::new(),
            dpre: Vec::new(),
            tmp: Vec::new(),
            att: Vec::new(),
        }
    }

    fn prepare(&mut self, cfg: &NetConfig, rows: usize) {
        let (d, f) = (cfg.d_model, cfg.ffn());
        for b in [&mut self.dy, &mut self.dx, &mut self.da, &mut self.dq, &mut self.dk, &mut self.dv, &mut self.dctx, &mut self.tmp] {
            b.clear();
            b.resize(rows * d, F::zero());
        }
        self.dpre.clear();
        self.dpre.resize(rows * f.max(d), F::zero());
        self.att.resize(rows, F::zero());
    }
}

/// Runs the network on `n` entity rows of `tokens` (row-major, `in_features`
/// wide). `hidden` is required exactly when the network has a hidden token.
pub fn forward<F: Real>(params: &Params<F>, tokens: &[F], n: usize, hidden: Option<&[F]>, cache: &mut Cache<F>) -> Result<()> {
    let cfg = &params.cfg;
    let l = &params.layout;
    let w = &params.data;
    let (z, d, f, h) = (cfg.in_features, cfg.d_model, cfg.ffn(), cfg.heads);
    if n == 0 || tokens.len() != n * z {
        return Err(Error::Contract(format!("expected {n} rows of {z} features, got {} values", tokens.len())));
    }
    match (cfg.hidden_token, hidden) {
        (true, Some(hd)) if hd.len() == d => {}
        (false, None) => {}
        _ => return Err(Error::Contract(String::from("hidden token must be given exactly for recurrent networks"))),
    }
    cache.prepare(cfg, n);
    let rows = cache.rows;
    cache.x_in.copy_from_slice(tokens);

    let mut x = core::mem::take(&mut cache.resid);
    linear(tokens, n, z, l.embed_w.of(w), l.embed_b.of(w), d, &mut x[..n * d]);
    if let Some(hd) = hidden {
        x[n * d..].copy_from_slice(hd);
    }
    for (bl, bc) in l.blocks.iter().zip(cache.blocks.iter_mut()) {
        bc.x0.copy_from_slice(&x);
        layer_norm(&bc.x0, rows, d, bl.ln1_g.of(w), bl.ln1_b.of(w), &mut bc.ln1.xhat, &mut bc.ln1.rstd, &mut bc.a);
        linear(&bc.a, rows, d, bl.wq.of(w), bl.bq.of(w), d, &mut bc.q);
        linear(&bc.a, rows, d, bl.wk.of(w), bl.bk.of(w), d, &mut bc.k);
        linear(&bc.a, rows, d, bl.wv.of(w), bl.bv.of(w), d, &mut bc.v);
        attention(&bc.q, &bc.k, &bc.v, rows, d, h, &mut bc.p, &mut bc.ctx);
        linear(&bc.ctx, rows, d, bl.wo.of(w), bl.bo.of(w), d, &mut bc.x1);
        for (o, i) in bc.x1.iter_mut().zip(&bc.x0) {
            *o = *o + *i;
        }
        layer_norm(&bc.x1, rows, d, bl.ln2_g.of(w), bl.ln2_b.of(w), &mut bc.ln2.xhat, &mut bc.ln2.rstd, &mut bc.b);
        linear(&bc.b, rows, d, bl.w1.of(w), bl.b1.of(w), f, &mut bc.pre);
        for (a, p) in bc.act.iter_mut().zip(&bc.pre) {
            *a = p.max(F::zero());
        }
        linear(&bc.act, rows, f, bl.w2.of(w), bl.b2.of(w), d, &mut x);
        for (o, i) in x.iter_mut().zip(&bc.x1) {
            *o = *o + *i;
        }
    }
    layer_norm(&x, rows, d, l.lnf_g.of(w), l.lnf_b.of(w), &mut cache.lnf.xhat, &mut cache.lnf.rstd, &mut cache.y);
    cache.resid = x;

    if cfg.hidden_token {
        cache.pooled.copy_from_slice(&cache.y[n * d..(n + 1) * d]);
    } else {
        let inv = F::one() / F::from(rows).unwrap();
        cache.pooled.iter_mut().for_each(|p| *p = F::zero());
        for r in cache.y.chunks(d) {
            for (p, v) in cache.pooled.iter_mut().zip(r) {
                *p = *p + *v;
            }
        }
        cache.pooled.iter_mut().for_each(|p| *p = *p * inv);
    }
    linear(&cache.pooled, 1, d, l.head_w.of(w), l.head_b.of(w), cfg.outputs, &mut cache.out);
    Ok(())
}

/// Accumulates parameter gradients of `⟨d_out, output⟩ + ⟨d_hidden_out, hidden_out⟩`
/// into `grads`. For recurrent networks, the gradient with respect to the
/// input hidden token is written to `d_hidden_in`.
pub fn backward<F: Real>(
    params: &Params<F>,
    cache: &Cache<F>,
    d_out: &[F],
    d_hidden_out: Option<&[F]>,
    grads: &mut [F],
    scratch: &mut Scratch<F>,
    d_hidden_in: Option<&mut [F]>,
) {
    let cfg = &params.cfg;
    let l = &params.layout;
    let w = &params.data;
    let (z, d, f, h) = (cfg.in_features, cfg.d_model, cfg.ffn(), cfg.heads);
    let (n, rows) = (cache.n, cache.rows);
    debug_assert_eq!(grads.len(), l.total);
    scratch.prepare(cfg, rows);
    let s = scratch;

    {
        let (hw, rest) = split2(grads, l.head_w, l.head_b);
        linear_backward(&cache.pooled, 1, d, l.head_w.of(w), cfg.outputs, d_out, hw, rest, Some(&mut s.tmp[..d]));
    }
    if cfg.hidden_token {
        let row = &mut s.dy[n * d..(n + 1) * d];
        row.copy_from_slice(&s.tmp[..d]);
        if let Some(dh) = d_hidden_out {
            for (r, g) in row.iter_mut().zip(dh) {
                *r = *r + *g;
            }
        }
    } else {
        let inv = F::one() / F::from(rows).unwrap();
        for r in s.dy.chunks_mut(d) {
            for (o, g) in r.iter_mut().zip(&s.tmp[..d]) {
                *o = *g * inv;
            }
        }
    }
    {
        let (g, b) = split2(grads, l.lnf_g, l.lnf_b);
        layer_norm_backward(&cache.lnf.xhat, &cache.lnf.rstd, rows, d, l.lnf_g.of(w), &s.dy, g, b, &mut s.dx);
    }

    for (bl, bc) in l.blocks.iter().zip(&cache.blocks).rev() {
        // feed-forward half
        {
            let (gw, gb) = split2(grads, bl.w2, bl.b2);
            linear_backward(&bc.act, rows, f, bl.w2.of(w), d, &s.dx, gw, gb, Some(&mut s.dpre[..rows * f]));
        }
        for (g, p) in s.dpre[..rows * f].iter_mut().zip(&bc.pre) {
            if *p <= F::zero() {
                *g = F::zero();
            }
        }
        {
            let (gw, gb) = split2(grads, bl.w1, bl.b1);
            linear_backward(&bc.b, rows, d, bl.w1.of(w), f, &s.dpre[..rows * f], gw, gb, Some(&mut s.da));
        }
        {
            let (g, b) = split2(grads, bl.ln2_g, bl.ln2_b);
            layer_norm_backward(&bc.ln2.xhat, &bc.ln2.rstd, rows, d, bl.ln2_g.of(w), &s.da, g, b, &mut s.dx);
        }
        // attention half
        {
            let (gw, gb) = split2(grads, bl.wo, bl.bo);
            linear_backward(&bc.ctx, rows, d, bl.wo.of(w), d, &s.dx, gw, gb, Some(&mut s.dctx));
        }
        attention_backward(&bc.q, &bc.k, &bc.v, &bc.p, rows, d, h, &s.dctx, &mut s.dq, &mut s.dk, &mut s.dv, &mut s.att);
        {
            let (gw, gb) = split2(grads, bl.wq, bl.bq);
            linear_backward(&bc.a, rows, d, bl.wq.of(w), d, &s.dq, gw, gb, Some(&mut s.da));
        }
        for (wseg, bseg, dsrc) in [(bl.wk, bl.bk, &s.dk), (bl.wv, bl.bv, &s.dv)] {
            let (gw, gb) = split2(grads, wseg, bseg);
            linear_backward(&bc.a, rows, d, wseg.of(w), d, dsrc, gw, gb, Some(&mut s.tmp));
            for (o, t) in s.da.iter_mut().zip(&s.tmp) {
                *o = *o + *t;
            }
        }
        {
            let (g, b) = split2(grads, bl.ln1_g, bl.ln1_b);
            layer_norm_backward(&bc.ln1.xhat, &bc.ln1.rstd, rows, d, bl.ln1_g.of(w), &s.da, g, b, &mut s.dx);
        }
    }

    let (gw, gb) = split2(grads, l.embed_w, l.embed_b);
    linear_backward(&cache.x_in, n, z, l.embed_w.of(w), d, &s.dx[..n * d], gw, gb, None);
    if let Some(out) = d_hidden_in {
        out.copy_from_slice(&s.dx[n * d..(n + 1) * d]);
    }
}

/// Two disjoint mutable segments; `a` must precede `b`.
fn split2<F>(v: &mut [F], a: Seg, b: Seg) -> (&mut [F], &mut [F]) {
    debug_assert!(a.off + a.len <= b.off);
    let (lo, hi) = v.split_at_mut(b.off);
    (&mut lo[a.off..a.off + a.len], &mut hi[..b.len])
}

/// Log-softmax over the legal actions; illegal entries become `-inf`.
pub fn masked_log_softmax<F: Real>(logits: &[F], mask: &[bool]) -> Result<[F; N_ACTIONS]> {
    if logits.len() != N_ACTIONS || mask.len() != N_ACTIONS {
        return Err(Error::Contract(format!("policy head needs {N_ACTIONS} logits and mask entries")));
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::Contract(String::from("action mask has no legal action")));
    }
    let mx = logits.iter().zip(mask).filter(|(_, &m)| m).map(|(l, _)| *l).fold(F::neg_infinity(), F::max);
    let z: F = logits.iter().zip(mask).filter(|(_, &m)| m).map(|(l, _)| (*l - mx).exp()).sum();
    let lz = mx + z.ln();
    let mut out = [F::neg_infinity(); N_ACTIONS];
    for i in 0..N_ACTIONS {
        if mask[i] {
            out[i] = logits[i] - lz;
        }
    }
    Ok(out)
}

pub fn entropy<F: Real>(log_probs: &[F]) -> F {
    log_probs.iter().filter(|l| l.is_finite()).map(|&l| -l.exp() * l).sum()
}

/// Inverse-CDF draw from a log-probability vector given `u ∈ [0, 1)`.
pub fn sample_action<F: Real>(log_probs: &[F], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (i, l) in log_probs.iter().enumerate() {
        if !l.is_finite() {
            continue;
        }
        last = i;
        acc += l.to_f64().unwrap().exp();
        if u < acc {
            return i;
        }
    }
    last
}

pub fn greedy_action<F: Real>(log_probs: &[F]) -> usize {
    let mut best = 0;
    for i in 1..log_probs.len() {
        if log_probs[i] > log_probs[best] {
            best = i;
        }
    }
    best
}

/// Actor pass: returns masked log-probabilities; the next hidden token is
/// [`Cache::hidden_out`].
pub fn actor_forward<F: Real>(
    params: &Params<F>,
    tokens: &[F],
    n: usize,
    hidden: &[F],
    mask: &[bool],
    cache: &mut Cache<F>,
) -> Result<[F; N_ACTIONS]> {
    if !params.cfg.hidden_token || params.cfg.outputs != N_ACTIONS {
        return Err(Error::Contract(String::from("actor_forward needs a recurrent network with a policy head")));
    }
    forward(params, tokens, n, Some(hidden), cache)?;
    masked_log_softmax(cache.output(), mask)
}

pub fn critic_forward<F: Real>(params: &Params<F>, tokens: &[F], n: usize, cache: &mut Cache<F>) -> Result<F> {
    if params.cfg.hidden_token || params.cfg.outputs != 1 {
        return Err(Error::Contract(String::from("critic_forward needs a feed-forward network with one output")));
    }
    forward(params, tokens, n, None, cache)?;
    Ok(cache.output()[0])
}

/// Gradient of `coef_logp · log π(action) + coef_ent · H(π)` with respect to
/// the logits, given masked log-probabilities.
pub fn policy_logit_grad<F: Real>(log_probs: &[F], action: usize, coef_logp: F, coef_ent: F) -> [F; N_ACTIONS] {
    let h = entropy(log_probs);
    let mut g = [F::zero(); N_ACTIONS];
    for j in 0..N_ACTIONS {
        if !log_probs[j].is_finite() {
            continue;
        }
        let p = log_probs[j].exp();
        let ind = if j == action { F::one() } else { F::zero() };
        g[j] = coef_logp * (ind - p) - coef_ent * p * (log_probs[j] + h);
    }
    g
}
