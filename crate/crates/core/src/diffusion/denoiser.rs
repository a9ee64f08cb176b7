use std::fs;
use std::path::Path;

use diffcore::{ParamId, ParamStore, Tape, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DldaError, Result};
use crate::recommender::Reader;
use crate::rng::normal_vec;

/// Network widths. `latent` is the embedding width of `z`, `zu` and `zv`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenoiserShape {
    pub latent: usize,
    pub hidden: usize,
    pub down_blocks: usize,
    pub mid_blocks: usize,
    pub up_blocks: usize,
}

#[derive(Clone, Copy, Debug)]
struct Block {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct Attention {
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
}

/// Noise predictor `eps_theta(z_t, t, zu, zv)`.
///
/// Layout: input map, plus projected sinusoidal time embedding, down
/// residual blocks, dual cross-attention on the condition user and item,
/// mid blocks, up blocks fed with the down-path skips in reverse order, and
/// an output map. The bottleneck feature is the output of the last mid
/// block (the attention output when there are no mid blocks).
///
/// Parameters are registered, and flattened, in this order: `in.w`,
/// `in.b`, `time.w`, `time.b`, `down{k}.{w1,b1,w2,b2}`,
/// `attn.user.{wq,wk,wv}`, `attn.item.{wq,wk,wv}`, `mid{k}.*`, `up{k}.*`,
/// `out.w`, `out.b`. Weight matrices are `[fan_in, fan_out]`, biases `[fan_out]`.
#[derive(Clone, Debug)]
pub struct Denoiser {
    shape: DenoiserShape,
    store: ParamStore,
    in_w: ParamId,
    in_b: ParamId,
    time_w: ParamId,
    time_b: ParamId,
    down: Vec<Block>,
    attn_user: Attention,
    attn_item: Attention,
    mid: Vec<Block>,
    up: Vec<Block>,
    out_w: ParamId,
    out_b: ParamId,
}

/// Interleaved `[sin(t w_0), cos(t w_0), sin(t w_1), ...]` with
/// `w_k = 10000^(-2k / width)`.
pub fn sinusoidal_embedding(t: usize, width: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(width);
    for k in 0..width / 2 {
        let freq = 10000f64.powf(-2.0 * k as f64 / width as f64);
        let a = t as f64 * freq;
        out.push(a.sin());
        out.push(a.cos());
    }
    out
}

impl Denoiser {
    pub fn new<R: Rng + ?Sized>(shape: DenoiserShape, rng: &mut R) -> Result<Self> {
        if shape.latent == 0 || shape.hidden == 0 || !shape.hidden.is_multiple_of(2) {
            return Err(DldaError::invalid(format!(
                "denoiser needs latent > 0 and an even hidden width, got {shape:?}"
            )));
        }
        let (d, h) = (shape.latent, shape.hidden);
        let mut store = ParamStore::new();
        fn weight<R: Rng + ?Sized>(s: &mut ParamStore, rng: &mut R, name: String, fan_in: usize, fan_out: usize) -> ParamId {
            let std = 1.0 / (fan_in as f64).sqrt();
            let data = normal_vec(rng, fan_in * fan_out).into_iter().map(|v| v * std).collect();
            s.add(name, Tensor::matrix(fan_in, fan_out, data).expect("sized buffer"))
        }
        fn bias(s: &mut ParamStore, name: String, n: usize) -> ParamId {
            s.add(name, Tensor::zeros([n]))
        }
        fn block<R: Rng + ?Sized>(s: &mut ParamStore, rng: &mut R, prefix: String, h: usize) -> Block {
            Block {
                w1: weight(s, rng, format!("{prefix}.w1"), h, h),
                b1: bias(s, format!("{prefix}.b1"), h),
                w2: weight(s, rng, format!("{prefix}.w2"), h, h),
                b2: bias(s, format!("{prefix}.b2"), h),
            }
        }
        fn attention<R: Rng + ?Sized>(s: &mut ParamStore, rng: &mut R, side: &str, d: usize, h: usize) -> Attention {
            Attention {
                wq: weight(s, rng, format!("attn.{side}.wq"), h, h),
                wk: weight(s, rng, format!("attn.{side}.wk"), d, h),
                wv: weight(s, rng, format!("attn.{side}.wv"), d, h),
            }
        }

        let in_w = weight(&mut store, rng, "in.w".into(), d, h);
        let in_b = bias(&mut store, "in.b".into(), h);
        let time_w = weight(&mut store, rng, "time.w".into(), h, h);
        let time_b = bias(&mut store, "time.b".into(), h);
        let down = (0..shape.down_blocks).map(|k| block(&mut store, rng, format!("down{k}"), h)).collect();
        let attn_user = attention(&mut store, rng, "user", d, h);
        let attn_item = attention(&mut store, rng, "item", d, h);
        let mid = (0..shape.mid_blocks).map(|k| block(&mut store, rng, format!("mid{k}"), h)).collect();
        let up = (0..shape.up_blocks).map(|k| block(&mut store, rng, format!("up{k}"), h)).collect();
        let out_w = weight(&mut store, rng, "out.w".into(), h, d);
        let out_b = bias(&mut store, "out.b".into(), d);
        Ok(Self {
            shape,
            store,
            in_w,
            in_b,
            time_w,
            time_b,
            down,
            attn_user,
            attn_item,
            mid,
            up,
            out_w,
            out_b,
        })
    }

    pub fn shape(&self) -> DenoiserShape {
        self.shape
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Replaces a named parameter's value (shape must match).
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let id = self
            .store
            .find(name)
            .ok_or_else(|| DldaError::invalid(format!("no parameter named {name}")))?;
        Ok(self.store.set_value(id, value)?)
    }

    /// Sets every weight of the residual blocks, attention and output map to
    /// zero, leaving the input and time maps alone.
    pub fn zero_residual_paths(&mut self) {
        let names: Vec<String> = self
            .store
            .iter()
            .map(|p| p.name().to_string())
            .filter(|n| !n.starts_with("in.") && !n.starts_with("time."))
            .collect();
        for name in names {
            let id = self.store.find(&name).unwrap();
            let shape = self.store.value(id).shape().to_vec();
            self.store.set_value(id, Tensor::zeros(shape)).unwrap();
        }
    }

    fn linear(&self, tape: &mut Tape, x: Var, w: ParamId, b: ParamId) -> Result<Var> {
        let wv = tape.param(&self.store, w)?;
        let bv = tape.param(&self.store, b)?;
        let y = tape.matmul(x, wv)?;
        Ok(tape.add(y, bv)?)
    }

    fn residual(&self, tape: &mut Tape, x: Var, blk: &Block) -> Result<Var> {
        let a = self.linear(tape, x, blk.w1, blk.b1)?;
        let a = tape.silu(a)?;
        let a = self.linear(tape, a, blk.w2, blk.b2)?;
        Ok(tape.add(x, a)?)
    }

    fn attend_one(&self, tape: &mut Tape, q: Var, cond: Var, w: &Attention) -> Result<Var> {
        let rows = tape.value(q).rows();
        let wq = tape.param(&self.store, w.wq)?;
        let wk = tape.param(&self.store, w.wk)?;
        let wv = tape.param(&self.store, w.wv)?;
        let qp = tape.matmul(q, wq)?;
        let kp = tape.matmul(cond, wk)?;
        let vp = tape.matmul(cond, wv)?;
        let qk = tape.mul(qp, kp)?;
        let logit = tape.sum_lastdim(qk)?;
        let logit = tape.scale(logit, 1.0 / (self.shape.hidden as f64).sqrt())?;
        // one key per query: the softmax runs over a single logit
        let logit = tape.reshape(logit, [rows, 1])?;
        let weight = tape.softmax_lastdim(logit)?;
        Ok(tape.mul(vp, weight)?)
    }

    /// `q + Attn(q, zu) + Attn(q, zv)` on `[B, hidden]` queries and `[B, latent]`
    /// conditions.
    pub fn cross_attention(&self, tape: &mut Tape, q: Var, zu: Var, zv: Var) -> Result<Var> {
        let au = self.attend_one(tape, q, zu, &self.attn_user)?;
        let av = self.attend_one(tape, q, zv, &self.attn_item)?;
        let s = tape.add(q, au)?;
        Ok(tape.add(s, av)?)
    }

    /// Batched forward pass. `time_emb` holds the raw sinusoidal embeddings
    /// `[B, hidden]`. Returns `(eps_hat, bottleneck)`.
    pub fn forward(&self, tape: &mut Tape, z_t: Var, time_emb: Var, zu: Var, zv: Var) -> Result<(Var, Var)> {
        let mut h = self.linear(tape, z_t, self.in_w, self.in_b)?;
        let te = self.linear(tape, time_emb, self.time_w, self.time_b)?;
        h = tape.add(h, te)?;
        let mut skips = Vec::with_capacity(self.down.len());
        for blk in &self.down {
            h = self.residual(tape, h, blk)?;
            skips.push(h);
        }
        h = self.cross_attention(tape, h, zu, zv)?;
        for blk in &self.mid {
            h = self.residual(tape, h, blk)?;
        }
        let m = h;
        for blk in &self.up {
            if let Some(skip) = skips.pop() {
                h = tape.add(h, skip)?;
            }
            h = self.residual(tape, h, blk)?;
        }
        let eps = self.linear(tape, h, self.out_w, self.out_b)?;
        Ok((eps, m))
    }

    /// Leaves for a batch of inputs, in the order `forward` expects.
    pub fn inputs(
        &self,
        tape: &mut Tape,
        z_t: &[Vec<f64>],
        ts: &[usize],
        zu: &[Vec<f64>],
        zv: &[Vec<f64>],
    ) -> Result<(Var, Var, Var, Var)> {
        let temb: Vec<Vec<f64>> = ts.iter().map(|&t| sinusoidal_embedding(t, self.shape.hidden)).collect();
        Ok((
            tape.leaf(Tensor::from_rows(z_t)?)?,
            tape.leaf(Tensor::from_rows(&temb)?)?,
            tape.leaf(Tensor::from_rows(zu)?)?,
            tape.leaf(Tensor::from_rows(zv)?)?,
        ))
    }

    /// Single-sample prediction: `(eps_hat, bottleneck)`.
    pub fn predict(&self, z_t: &[f64], t: usize, zu: &[f64], zv: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut tape = Tape::new();
        let (z, te, u, v) = self.inputs(&mut tape, &[z_t.to_vec()], &[t], &[zu.to_vec()], &[zv.to_vec()])?;
        let (eps, m) = self.forward(&mut tape, z, te, u, v)?;
        Ok((tape.value(eps).data().to_vec(), tape.value(m).data().to_vec()))
    }

    /// Batched bottleneck features, one row per input.
    pub fn bottlenecks(
        &self,
        z_t: &[Vec<f64>],
        ts: &[usize],
        zu: &[Vec<f64>],
        zv: &[Vec<f64>],
    ) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let (z, te, u, v) = self.inputs(&mut tape, z_t, ts, zu, zv)?;
        let (_, m) = self.forward(&mut tape, z, te, u, v)?;
        let h = self.shape.hidden;
        Ok(tape.value(m).data().chunks(h).map(<[f64]>::to_vec).collect())
    }

    /// Single-query attention for inspection: `q` has the hidden width.
    pub fn attend(&self, q: &[f64], zu: &[f64], zv: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let q = tape.leaf(Tensor::matrix(1, q.len(), q.to_vec())?)?;
        let u = tape.leaf(Tensor::matrix(1, zu.len(), zu.to_vec())?)?;
        let v = tape.leaf(Tensor::matrix(1, zv.len(), zv.to_vec())?)?;
        let out = self.cross_attention(&mut tape, q, u, v)?;
        Ok(tape.value(out).data().to_vec())
    }
}

const MAGIC: &[u8; 8] = b"DLDAGEN\0";
const VERSION: u32 = 1;

/// Header of a generator checkpoint.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorMeta {
    pub shape: DenoiserShape,
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub seed: u64,
    pub lambda_disp: f64,
    pub tau: f64,
}

impl Denoiser {
    /// Little-endian header followed by every parameter value in
    /// registration order.
    pub fn to_bytes(&self, meta: &GeneratorMeta) -> Vec<u8> {
        let flat = self.store.flatten();
        let mut out = Vec::with_capacity(120 + 8 * flat.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let s = meta.shape;
        for v in [s.latent, s.hidden, s.down_blocks, s.mid_blocks, s.up_blocks, meta.steps] {
            out.extend_from_slice(&(v as u64).to_le_bytes());
        }
        out.extend_from_slice(&meta.beta_start.to_le_bytes());
        out.extend_from_slice(&meta.beta_end.to_le_bytes());
        out.extend_from_slice(&meta.seed.to_le_bytes());
        out.extend_from_slice(&meta.lambda_disp.to_le_bytes());
        out.extend_from_slice(&meta.tau.to_le_bytes());
        out.extend_from_slice(&(flat.len() as u64).to_le_bytes());
        for v in flat {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, GeneratorMeta)> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(DldaError::Format("not a generator checkpoint".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(DldaError::Format(format!("unsupported generator version {version}")));
        }
        let mut dims = [0usize; 6];
        for v in &mut dims {
            *v = r.u64()? as usize;
        }
        let shape = DenoiserShape {
            latent: dims[0],
            hidden: dims[1],
            down_blocks: dims[2],
            mid_blocks: dims[3],
            up_blocks: dims[4],
        };
        let meta = GeneratorMeta {
            shape,
            steps: dims[5],
            beta_start: r.f64()?,
            beta_end: r.f64()?,
            seed: r.u64()?,
            lambda_disp: r.f64()?,
            tau: r.f64()?,
        };
        let count = r.u64()? as usize;
        if r.remaining() != count.saturating_mul(8) {
            return Err(DldaError::Format("weight buffer length mismatch".into()));
        }
        let mut flat = Vec::with_capacity(count);
        for _ in 0..count {
            flat.push(r.f64()?);
        }
        // weights are overwritten below, so any initialization will do
        let mut den = Denoiser::new(shape, &mut crate::rng::rng_from_seed(0))?;
        if den.store.num_values() != count {
            return Err(DldaError::Format(format!(
                "header shape needs {} weights, buffer has {count}",
                den.store.num_values()
            )));
        }
        den.store.load_flat(&flat)?;
        Ok((den, meta))
    }

    pub fn save(&self, path: &Path, meta: &GeneratorMeta) -> Result<()> {
        fs::write(path, self.to_bytes(meta)).map_err(|e| DldaError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<(Self, GeneratorMeta)> {
        if !path.exists() {
            return Err(DldaError::MissingArtifact(path.to_path_buf()));
        }
        let bytes = fs::read(path).map_err(|e| DldaError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
