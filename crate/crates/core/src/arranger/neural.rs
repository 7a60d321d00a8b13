//! Small encoder-decoder transformer generator trained with token cross-entropy.
//!
//! Source: the downsampled melody tokens, each concatenated with the
//! conditioning emotion. Target: `BOS`, one token per melody slot, `SEP`, then
//! per beat the chord's ascending pitches closed by `CHORD_END`, then `EOS`.
//! Decoding is greedy under a grammar mask that also forces the anchors.

use candle_core::{Device, Tensor, Var, D};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use log::{debug, info};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{make_conditioned_input, ConditionedInput, COND_WIDTH};
use crate::model::{
    downsample, Chord, Granularity, HarmonySeq, MelodyGrid, PitchToken, Segment, TimeSignature, Tonality,
    MAX_CHORD_NOTES, MAX_PITCH, MIN_PITCH,
};
use crate::params::ParamFile;
use crate::pipeline::DatasetPiece;

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const SEP: u32 = 3;
pub const CHORD_END: u32 = 4;
pub const REST: u32 = 5;
pub const HOLD: u32 = 6;
const PITCH_BASE: u32 = 7;
pub const VOCAB: usize = PITCH_BASE as usize + (MAX_PITCH - MIN_PITCH) as usize + 1;
pub const MAX_INPUT: usize = 64;
pub const MAX_OUTPUT: usize = 256;

pub fn pitch_token(p: u8) -> u32 {
    PITCH_BASE + (p - MIN_PITCH) as u32
}

fn token_pitch(t: u32) -> Option<u8> {
    (t >= PITCH_BASE && (t as usize) < VOCAB).then(|| (t - PITCH_BASE) as u8 + MIN_PITCH)
}

fn grid_token(t: PitchToken) -> u32 {
    match t {
        PitchToken::Rest => REST,
        PitchToken::Hold => HOLD,
        PitchToken::Pitch(p) => pitch_token(p),
    }
}

pub fn encode_source(anchors: &[PitchToken]) -> Result<Vec<u32>> {
    if anchors.is_empty() {
        return Err(Error::Empty("generator input"));
    }
    if anchors.len() > MAX_INPUT {
        return Err(Error::Budget { len: anchors.len(), limit: MAX_INPUT });
    }
    Ok(anchors.iter().map(|&t| grid_token(t)).collect())
}

pub fn encode_target(seg: &Segment) -> Result<Vec<u32>> {
    let mut out = vec![BOS];
    out.extend(seg.melody.tokens().iter().map(|&t| grid_token(t)));
    out.push(SEP);
    for c in &seg.harmony.chords {
        out.extend(c.notes().iter().map(|&p| pitch_token(p)));
        out.push(CHORD_END);
    }
    out.push(EOS);
    if out.len() > MAX_OUTPUT {
        return Err(Error::Budget { len: out.len(), limit: MAX_OUTPUT });
    }
    Ok(out)
}

pub fn decode_target(tokens: &[u32], tonality: Tonality, ts: TimeSignature) -> Result<Segment> {
    let slots = ts.segment_slots();
    let body = tokens.strip_prefix(&[BOS]).unwrap_or(tokens);
    if body.len() < slots + 1 || body[slots] != SEP {
        return Err(Error::Invalid("generator output lacks a full melody and separator".into()));
    }
    let melody: Vec<PitchToken> = body[..slots]
        .iter()
        .map(|&t| match t {
            REST => Ok(PitchToken::Rest),
            HOLD => Ok(PitchToken::Hold),
            t => token_pitch(t).map(PitchToken::Pitch).ok_or_else(|| Error::Invalid(format!("token {t} in melody"))),
        })
        .collect::<Result<_>>()?;
    let mut chords = Vec::new();
    let mut cur = Vec::new();
    for &t in &body[slots + 1..] {
        match t {
            CHORD_END => {
                chords.push(if cur.is_empty() { Chord::rest() } else { Chord::new(cur.drain(..))? });
            }
            EOS => break,
            t => cur.push(token_pitch(t).ok_or_else(|| Error::Invalid(format!("token {t} in harmony")))?),
        }
    }
    Segment::new(MelodyGrid::new(melody)?, HarmonySeq::new(chords), tonality, ts)
}

/// Allowed next tokens given the tokens produced after `BOS`.
#[derive(Debug, Clone)]
struct Grammar {
    anchors: Vec<PitchToken>,
    stride: usize,
    slots: usize,
    beats: usize,
}

impl Grammar {
    fn allowed(&self, produced: &[u32]) -> Vec<u32> {
        let n = produced.len();
        let all_pitches = || (MIN_PITCH..=MAX_PITCH).map(pitch_token);
        if n < self.slots {
            let sounding = sounding_after(&produced[..n]);
            if n.is_multiple_of(self.stride) {
                if let Some(a) = self.anchors.get(n / self.stride) {
                    return match *a {
                        PitchToken::Pitch(p) if sounding == Some(p) => vec![pitch_token(p), HOLD],
                        PitchToken::Pitch(p) => vec![pitch_token(p)],
                        _ => vec![REST],
                    };
                }
            }
            let mut v = vec![REST];
            if sounding.is_some() && n > 0 {
                v.push(HOLD);
            }
            v.extend(all_pitches());
            return v;
        }
        if n == self.slots {
            return vec![SEP];
        }
        let harmony = &produced[self.slots + 1..];
        let done = harmony.iter().filter(|&&t| t == CHORD_END).count();
        if done >= self.beats {
            return vec![EOS];
        }
        let partial: Vec<u8> = harmony.iter().rev().take_while(|&&t| t != CHORD_END).filter_map(|&t| token_pitch(t)).collect();
        if partial.len() >= MAX_CHORD_NOTES {
            return vec![CHORD_END];
        }
        let floor = partial.first().copied();
        let mut v = vec![CHORD_END];
        v.extend(all_pitches().filter(|&t| floor.is_none_or(|f| token_pitch(t).unwrap() > f)));
        v
    }
}

fn sounding_after(melody: &[u32]) -> Option<u8> {
    let mut cur = None;
    for &t in melody {
        cur = match t {
            REST => None,
            HOLD => cur,
            t => token_pitch(t),
        };
    }
    cur
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeuralToyConfig {
    pub d_model: usize,
    pub heads: usize,
    pub ff: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl NeuralToyConfig {
    /// Full-size shapes: embedding 512, feed-forward 1024, 2 heads, 4 + 4 layers, dropout 0.1.
    pub fn full_scale() -> Self {
        NeuralToyConfig { d_model: 512, heads: 2, ff: 1024, enc_layers: 4, dec_layers: 4, dropout: 0.1, seed: 0 }
    }
}

impl Default for NeuralToyConfig {
    /// Desk-scale shapes with the same head count and dropout.
    fn default() -> Self {
        NeuralToyConfig { d_model: 32, heads: 2, ff: 64, enc_layers: 1, dec_layers: 1, dropout: 0.1, seed: 0 }
    }
}

struct Init<'a> {
    rng: ChaCha8Rng,
    vars: &'a mut Vec<(String, Var)>,
}

impl Init<'_> {
    fn var(&mut self, name: String, shape: &[usize], std: f64) -> Result<Var> {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = if std == 0.0 {
            vec![0.0; n]
        } else {
            let d = Normal::new(0.0, std).unwrap();
            (0..n).map(|_| d.sample(&mut self.rng)).collect()
        };
        let v = Var::from_vec(data, shape, &Device::Cpu)?;
        self.vars.push((name, v.clone()));
        Ok(v)
    }

    fn ones(&mut self, name: String, n: usize) -> Result<Var> {
        let v = Var::from_vec(vec![1.0f64; n], n, &Device::Cpu)?;
        self.vars.push((name, v.clone()));
        Ok(v)
    }

    fn linear(&mut self, name: &str, inputs: usize, outputs: usize) -> Result<Linear> {
        Ok(Linear {
            w: self.var(format!("{name}.w"), &[inputs, outputs], 1.0 / (inputs as f64).sqrt())?,
            b: self.var(format!("{name}.b"), &[outputs], 0.0)?,
        })
    }

    fn norm(&mut self, name: &str, d: usize) -> Result<LayerNorm> {
        Ok(LayerNorm { g: self.ones(format!("{name}.g"), d)?, b: self.var(format!("{name}.b"), &[d], 0.0)? })
    }

    fn attention(&mut self, name: &str, d: usize, heads: usize) -> Result<Attention> {
        Ok(Attention {
            q: self.linear(&format!("{name}.q"), d, d)?,
            k: self.linear(&format!("{name}.k"), d, d)?,
            v: self.linear(&format!("{name}.v"), d, d)?,
            o: self.linear(&format!("{name}.o"), d, d)?,
            heads,
        })
    }
}

struct Linear {
    w: Var,
    b: Var,
}

impl Linear {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.broadcast_matmul(self.w.as_tensor())?.broadcast_add(self.b.as_tensor())?)
    }
}

struct LayerNorm {
    g: Var,
    b: Var,
}

impl LayerNorm {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let xc = x.broadcast_sub(&mean)?;
        let var = xc.sqr()?.mean_keepdim(D::Minus1)?;
        let y = xc.broadcast_div(&(var + 1e-5)?.sqrt()?)?;
        Ok(y.broadcast_mul(self.g.as_tensor())?.broadcast_add(self.b.as_tensor())?)
    }
}

struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    heads: usize,
}

impl Attention {
    fn forward(&self, xq: &Tensor, xkv: &Tensor, bias: &Tensor) -> Result<Tensor> {
        let (b, tq, d) = xq.dims3()?;
        let tk = xkv.dim(1)?;
        let dh = d / self.heads;
        let split = |t: Tensor, len: usize| -> Result<Tensor> {
            Ok(t.reshape((b, len, self.heads, dh))?.transpose(1, 2)?.contiguous()?)
        };
        let q = split(self.q.forward(xq)?, tq)?;
        let k = split(self.k.forward(xkv)?, tk)?;
        let v = split(self.v.forward(xkv)?, tk)?;
        let scores = (q.matmul(&k.t()?.contiguous()?)? / (dh as f64).sqrt())?.broadcast_add(bias)?;
        let att = candle_nn::ops::softmax(&scores, D::Minus1)?;
        let out = att.matmul(&v)?.transpose(1, 2)?.contiguous()?.reshape((b, tq, d))?;
        self.o.forward(&out)
    }
}

struct EncoderLayer {
    attn: Attention,
    ln1: LayerNorm,
    ff1: Linear,
    ff2: Linear,
    ln2: LayerNorm,
}

struct DecoderLayer {
    self_attn: Attention,
    ln1: LayerNorm,
    cross: Attention,
    ln2: LayerNorm,
    ff1: Linear,
    ff2: Linear,
    ln3: LayerNorm,
}

/// Dropout masks drawn from a seeded generator.
struct Dropout<'a> {
    p: f64,
    rng: &'a mut ChaCha8Rng,
}

impl Dropout<'_> {
    fn apply(&mut self, x: &Tensor) -> Result<Tensor> {
        if self.p <= 0.0 {
            return Ok(x.clone());
        }
        let keep = 1.0 / (1.0 - self.p);
        let mask: Vec<f64> = (0..x.elem_count()).map(|_| if self.rng.gen_bool(self.p) { 0.0 } else { keep }).collect();
        Ok(x.mul(&Tensor::from_vec(mask, x.shape(), x.device())?)?)
    }
}

fn maybe_drop(drop: &mut Option<Dropout<'_>>, x: Tensor) -> Result<Tensor> {
    match drop {
        Some(d) => d.apply(&x),
        None => Ok(x),
    }
}

pub struct NeuralToy {
    pub config: NeuralToyConfig,
    vars: Vec<(String, Var)>,
    tok_emb: Var,
    src_in: Linear,
    src_pos: Var,
    tgt_pos: Var,
    enc: Vec<EncoderLayer>,
    dec: Vec<DecoderLayer>,
    out: Linear,
}

impl std::fmt::Debug for NeuralToy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NeuralToy").field("config", &self.config).field("tensors", &self.vars.len()).finish()
    }
}

/// One teacher-forced training pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenExample {
    pub src: Vec<u32>,
    pub tgt: Vec<u32>,
}

impl GenExample {
    pub fn from_segment(seg: &Segment, granularity: Granularity) -> Result<Self> {
        let ds = downsample(&seg.melody, granularity, seg.time_signature);
        Ok(GenExample { src: encode_source(&ds.tokens)?, tgt: encode_target(seg)? })
    }
}

impl NeuralToy {
    pub fn new(config: NeuralToyConfig) -> Result<Self> {
        if config.heads == 0 || !config.d_model.is_multiple_of(config.heads) {
            return Err(Error::Invalid(format!("d_model {} not divisible by {} heads", config.d_model, config.heads)));
        }
        let d = config.d_model;
        let mut vars = Vec::new();
        let mut init = Init { rng: ChaCha8Rng::seed_from_u64(config.seed), vars: &mut vars };
        let tok_emb = init.var("tok_emb".into(), &[VOCAB, d], 1.0)?;
        let src_in = init.linear("src_in", d + COND_WIDTH, d)?;
        let src_pos = init.var("src_pos".into(), &[MAX_INPUT, d], 0.1)?;
        let tgt_pos = init.var("tgt_pos".into(), &[MAX_OUTPUT, d], 0.1)?;
        let mut enc = Vec::new();
        for i in 0..config.enc_layers {
            enc.push(EncoderLayer {
                attn: init.attention(&format!("enc{i}.attn"), d, config.heads)?,
                ln1: init.norm(&format!("enc{i}.ln1"), d)?,
                ff1: init.linear(&format!("enc{i}.ff1"), d, config.ff)?,
                ff2: init.linear(&format!("enc{i}.ff2"), config.ff, d)?,
                ln2: init.norm(&format!("enc{i}.ln2"), d)?,
            });
        }
        let mut dec = Vec::new();
        for i in 0..config.dec_layers {
            dec.push(DecoderLayer {
                self_attn: init.attention(&format!("dec{i}.self"), d, config.heads)?,
                ln1: init.norm(&format!("dec{i}.ln1"), d)?,
                cross: init.attention(&format!("dec{i}.cross"), d, config.heads)?,
                ln2: init.norm(&format!("dec{i}.ln2"), d)?,
                ff1: init.linear(&format!("dec{i}.ff1"), d, config.ff)?,
                ff2: init.linear(&format!("dec{i}.ff2"), config.ff, d)?,
                ln3: init.norm(&format!("dec{i}.ln3"), d)?,
            });
        }
        // small output weights: near-uniform predictions at init
        let out = Linear { w: init.var("out.w".into(), &[d, VOCAB], 1e-3)?, b: init.var("out.b".into(), &[VOCAB], 0.0)? };
        Ok(NeuralToy { config, vars, tok_emb, src_in, src_pos, tgt_pos, enc, dec, out })
    }

    pub fn vars(&self) -> Vec<Var> {
        self.vars.iter().map(|(_, v)| v.clone()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.vars.iter().map(|(_, v)| v.elem_count()).sum()
    }

    fn embed(&self, ids: &[Vec<u32>], len: usize, pos: &Var) -> Result<Tensor> {
        let b = ids.len();
        let flat: Vec<u32> = ids.iter().flat_map(|s| s.iter().copied().chain(std::iter::repeat(PAD)).take(len)).collect();
        let idx = Tensor::from_vec(flat, b * len, &Device::Cpu)?;
        let e = self.tok_emb.as_tensor().index_select(&idx, 0)?.reshape((b, len, self.config.d_model))?;
        Ok(e.broadcast_add(&pos.as_tensor().narrow(0, 0, len)?)?)
    }

    fn padding_bias(ids: &[Vec<u32>], len: usize) -> Result<Tensor> {
        let data: Vec<f64> = ids.iter().flat_map(|s| (0..len).map(move |i| if i < s.len() { 0.0 } else { -1e9 })).collect();
        Ok(Tensor::from_vec(data, (ids.len(), 1, 1, len), &Device::Cpu)?)
    }

    fn causal_bias(len: usize) -> Result<Tensor> {
        let data: Vec<f64> = (0..len * len).map(|k| if k % len > k / len { -1e9 } else { 0.0 }).collect();
        Ok(Tensor::from_vec(data, (1, 1, len, len), &Device::Cpu)?)
    }

    fn encode(&self, src: &[Vec<u32>], cond: &Tensor, drop: &mut Option<Dropout<'_>>) -> Result<(Tensor, Tensor)> {
        let len = src.iter().map(Vec::len).max().unwrap_or(0);
        let b = src.len();
        let tok = {
            let flat: Vec<u32> = src.iter().flat_map(|s| s.iter().copied().chain(std::iter::repeat(PAD)).take(len)).collect();
            let idx = Tensor::from_vec(flat, b * len, &Device::Cpu)?;
            self.tok_emb.as_tensor().index_select(&idx, 0)?.reshape((b, len, self.config.d_model))?
        };
        let c = cond.unsqueeze(1)?.broadcast_as((b, len, COND_WIDTH))?.contiguous()?;
        let joined = Tensor::cat(&[&tok, &c], 2)?;
        let mut x = self.src_in.forward(&joined)?.broadcast_add(&self.src_pos.as_tensor().narrow(0, 0, len)?)?;
        x = maybe_drop(drop, x)?;
        let bias = Self::padding_bias(src, len)?;
        for l in &self.enc {
            let a = maybe_drop(drop, l.attn.forward(&x, &x, &bias)?)?;
            x = l.ln1.forward(&(x + a)?)?;
            let f = maybe_drop(drop, l.ff2.forward(&l.ff1.forward(&x)?.relu()?)?)?;
            x = l.ln2.forward(&(x + f)?)?;
        }
        Ok((x, bias))
    }

    fn decode(&self, memory: &Tensor, mem_bias: &Tensor, tgt: &[Vec<u32>], drop: &mut Option<Dropout<'_>>) -> Result<Tensor> {
        let len = tgt.iter().map(Vec::len).max().unwrap_or(0);
        let mut x = maybe_drop(drop, self.embed(tgt, len, &self.tgt_pos)?)?;
        let causal = Self::causal_bias(len)?;
        for l in &self.dec {
            let a = maybe_drop(drop, l.self_attn.forward(&x, &x, &causal)?)?;
            x = l.ln1.forward(&(x + a)?)?;
            let c = maybe_drop(drop, l.cross.forward(&x, memory, mem_bias)?)?;
            x = l.ln2.forward(&(x + c)?)?;
            let f = maybe_drop(drop, l.ff2.forward(&l.ff1.forward(&x)?.relu()?)?)?;
            x = l.ln3.forward(&(x + f)?)?;
        }
        self.out.forward(&x)
    }

    /// Mean token cross-entropy of a teacher-forced batch. `cond` is (batch, 2).
    /// Dropout is active when `rng` is given.
    pub fn loss(&self, batch: &[&GenExample], cond: &Tensor, rng: Option<&mut ChaCha8Rng>) -> Result<Tensor> {
        let mut drop = rng.map(|rng| Dropout { p: self.config.dropout, rng });
        let src: Vec<Vec<u32>> = batch.iter().map(|e| e.src.clone()).collect();
        let inp: Vec<Vec<u32>> = batch.iter().map(|e| e.tgt[..e.tgt.len() - 1].to_vec()).collect();
        let (memory, bias) = self.encode(&src, cond, &mut drop)?;
        let logits = self.decode(&memory, &bias, &inp, &mut drop)?;
        let (b, t, v) = logits.dims3()?;
        let mut onehot = vec![0.0f64; b * t * v];
        let mut count = 0usize;
        for (i, e) in batch.iter().enumerate() {
            for (j, &tok) in e.tgt[1..].iter().enumerate() {
                onehot[(i * t + j) * v + tok as usize] = 1.0;
                count += 1;
            }
        }
        let onehot = Tensor::from_vec(onehot, (b, t, v), &Device::Cpu)?;
        let logp = candle_nn::ops::log_softmax(&logits, D::Minus1)?;
        let loss = (logp.mul(&onehot)?.sum_all()? * (-1.0 / count as f64))?;
        Ok(loss)
    }

    pub fn loss_value(&self, batch: &[&GenExample], cond: &[[f64; COND_WIDTH]]) -> Result<f64> {
        let c = cond_tensor(cond)?;
        let l = self.loss(batch, &c, None)?.to_scalar::<f64>()?;
        if !l.is_finite() {
            return Err(Error::NonFinite("generation loss"));
        }
        Ok(l)
    }

    /// Greedy grammar-constrained decoding of one segment.
    pub fn generate(&self, cond: &ConditionedInput, tonality: Tonality, ts: TimeSignature) -> Result<Segment> {
        let anchors: Vec<PitchToken> = cond.tokens.iter().map(|t| t.0).collect();
        let src = encode_source(&anchors)?;
        let c = cond_tensor(&[cond.emotion()])?;
        let (memory, bias) = self.encode(&[src], &c, &mut None)?;
        let grammar = Grammar { anchors, stride: cond.stride, slots: ts.segment_slots(), beats: ts.segment_beats() };
        let mut out = vec![BOS];
        loop {
            let allowed = grammar.allowed(&out[1..]);
            let tok = if allowed.len() == 1 {
                allowed[0]
            } else {
                let logits = self.decode(&memory, &bias, &[out.clone()], &mut None)?;
                let t = logits.dim(1)?;
                let last: Vec<f64> = logits.narrow(1, t - 1, 1)?.flatten_all()?.to_vec1()?;
                if last.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFinite("generator logits"));
                }
                *allowed.iter().max_by(|a, b| last[**a as usize].total_cmp(&last[**b as usize]).then(b.cmp(a))).unwrap()
            };
            out.push(tok);
            if tok == EOS {
                break;
            }
            if out.len() > MAX_OUTPUT {
                return Err(Error::Budget { len: out.len(), limit: MAX_OUTPUT });
            }
        }
        decode_target(&out, tonality, ts)
    }

    pub fn to_params(&self) -> Result<ParamFile> {
        let mut pf = ParamFile::new("neural-toy", serde_json::to_value(self.config)?);
        for (name, v) in &self.vars {
            pf.push(name, v.dims(), v.as_tensor().flatten_all()?.to_vec1::<f64>()?)?;
        }
        Ok(pf)
    }

    pub fn from_params(pf: &ParamFile) -> Result<Self> {
        if pf.kind != "neural-toy" {
            return Err(Error::ParamFile(format!("expected neural-toy parameters, found {:?}", pf.kind)));
        }
        let model = NeuralToy::new(serde_json::from_value(pf.meta.clone())?)?;
        for (name, v) in &model.vars {
            let (shape, data) = pf.get(name)?;
            if shape != v.dims() {
                return Err(Error::Shape(format!("{name}: {shape:?} vs {:?}", v.dims())));
            }
            v.set(&Tensor::from_vec(data.to_vec(), shape, &Device::Cpu)?)?;
        }
        Ok(model)
    }
}

pub fn cond_tensor(cond: &[[f64; COND_WIDTH]]) -> Result<Tensor> {
    Ok(Tensor::from_vec(cond.iter().flatten().copied().collect::<Vec<f64>>(), (cond.len(), COND_WIDTH), &Device::Cpu)?)
}

pub fn adam(model: &NeuralToy, lr: f64) -> Result<AdamW> {
    Ok(AdamW::new(model.vars(), ParamsAdamW { lr, weight_decay: 0.0, ..Default::default() })?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenTrainConfig {
    pub model: NeuralToyConfig,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub granularity: Granularity,
    pub seed: u64,
}

impl Default for GenTrainConfig {
    fn default() -> Self {
        GenTrainConfig { model: NeuralToyConfig::default(), lr: 3e-3, epochs: 20, batch_size: 16, granularity: Granularity::Beat, seed: 0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GenReport {
    pub initial_loss: f64,
    pub epoch_loss: Vec<f64>,
    pub steps: usize,
}

/// Teacher-forced training on labeled pieces; each piece is conditioned on its mean emotion.
pub fn train_generator_toy(pieces: &[DatasetPiece], cfg: &GenTrainConfig) -> Result<(NeuralToy, GenReport)> {
    if pieces.is_empty() {
        return Err(Error::Empty("generator pieces"));
    }
    let mut data = Vec::with_capacity(pieces.len());
    for p in pieces {
        let seg = p.segment()?;
        let emotion = p.emotion.as_ref().ok_or_else(|| Error::Invalid("generator training needs labeled pieces".into()))?;
        let ex = GenExample::from_segment(&seg, cfg.granularity)?;
        let fused: Vec<[f64; 2]> = emotion.points.iter().map(|e| e.to_array()).collect();
        let ds = downsample(&seg.melody, cfg.granularity, seg.time_signature);
        data.push((ex, make_conditioned_input(&ds, &fused)?.emotion()));
    }
    let model = NeuralToy::new(cfg.model)?;
    let mut opt = adam(&model, cfg.lr)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let all: Vec<&GenExample> = data.iter().map(|d| &d.0).collect();
    let conds: Vec<[f64; 2]> = data.iter().map(|d| d.1).collect();
    let mut report = GenReport { initial_loss: model.loss_value(&all, &conds)?, ..Default::default() };
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let batch: Vec<&GenExample> = chunk.iter().map(|&i| &data[i].0).collect();
            let cond = cond_tensor(&chunk.iter().map(|&i| data[i].1).collect::<Vec<_>>())?;
            let loss = model.loss(&batch, &cond, Some(&mut rng))?;
            total += loss.to_scalar::<f64>()? * chunk.len() as f64;
            opt.backward_step(&loss)?;
            report.steps += 1;
        }
        let mean = total / data.len() as f64;
        debug!("generator epoch {epoch}: {mean:.4}");
        report.epoch_loss.push(mean);
    }
    info!("generator: {} steps, loss {:.4} -> {:.4}", report.steps, report.initial_loss, report.epoch_loss.last().copied().unwrap_or(f64::NAN));
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EmotionSeq, EmotionVA};
    use crate::synth::random_segment;

    fn seg(seed: u64) -> Segment {
        random_segment(&mut ChaCha8Rng::seed_from_u64(seed), Tonality::major(0), TimeSignature::FourFour)
    }

    #[test]
    fn vocabulary_and_target_roundtrip() {
        assert_eq!(VOCAB, 95);
        let s = seg(1);
        let t = encode_target(&s).unwrap();
        assert!(t.len() <= MAX_OUTPUT);
        assert_eq!(decode_target(&t, s.tonality, s.time_signature).unwrap(), s);
        assert!(matches!(encode_source(&[PitchToken::Rest; 65]), Err(Error::Budget { len: 65, limit: 64 })));
    }

    #[test]
    fn initial_loss_is_log_vocab() {
        let model = NeuralToy::new(NeuralToyConfig::default()).unwrap();
        let ex = GenExample::from_segment(&seg(2), Granularity::Beat).unwrap();
        let l = model.loss_value(&[&ex], &[[0.0, 0.0]]).unwrap();
        assert!((l - (VOCAB as f64).ln()).abs() < 0.02, "{l}");
    }

    #[test]
    fn untrained_output_is_grammatical_and_keeps_anchors() {
        let model = NeuralToy::new(NeuralToyConfig { seed: 4, ..Default::default() }).unwrap();
        let s = seg(3);
        let ds = downsample(&s.melody, Granularity::Beat, s.time_signature);
        let cond = make_conditioned_input(&ds, &[[0.5, -0.5]]).unwrap();
        let out = model.generate(&cond, s.tonality, s.time_signature).unwrap();
        assert_eq!(downsample(&out.melody, Granularity::Beat, out.time_signature), ds);
        assert_eq!(out.harmony.len(), 16);
        let again = model.generate(&cond, s.tonality, s.time_signature).unwrap();
        assert_eq!(out, again);
    }

    #[test]
    fn memorizes_one_pair() {
        let s = seg(5);
        let piece = DatasetPiece::from_segment(&s, Some(EmotionSeq::constant(EmotionVA::new(0.2, 0.4), 16)));
        let cfg = GenTrainConfig {
            model: NeuralToyConfig { dropout: 0.0, ..Default::default() },
            lr: 1e-2,
            epochs: 150,
            batch_size: 1,
            ..Default::default()
        };
        let (model, report) = train_generator_toy(&[piece], &cfg).unwrap();
        assert!(report.epoch_loss.last().unwrap() < &report.initial_loss);
        let ds = downsample(&s.melody, Granularity::Beat, s.time_signature);
        let cond = make_conditioned_input(&ds, &[[0.2, 0.4]]).unwrap();
        assert_eq!(model.generate(&cond, s.tonality, s.time_signature).unwrap(), s);
    }

    #[test]
    fn params_roundtrip() {
        let model = NeuralToy::new(NeuralToyConfig { seed: 9, d_model: 8, ff: 16, ..Default::default() }).unwrap();
        let pf = ParamFile::from_bytes(&model.to_params().unwrap().to_bytes().unwrap()).unwrap();
        let back = NeuralToy::from_params(&pf).unwrap();
        let ex = GenExample::from_segment(&seg(6), Granularity::Beat).unwrap();
        assert_eq!(model.loss_value(&[&ex], &[[0.1, 0.1]]).unwrap(), back.loss_value(&[&ex], &[[0.1, 0.1]]).unwrap());
    }

    #[test]
    fn emotion_gradient_exists() {
        let model = NeuralToy::new(NeuralToyConfig::default()).unwrap();
        let ex = GenExample::from_segment(&seg(7), Granularity::Beat).unwrap();
        let cond = Var::from_tensor(&cond_tensor(&[[0.3, -0.3]]).unwrap()).unwrap();
        let loss = model.loss(&[&ex], cond.as_tensor(), None).unwrap();
        let grads = loss.backward().unwrap();
        let g = grads.get(cond.as_tensor()).unwrap().to_vec2::<f64>().unwrap();
        assert!(g[0].iter().all(|x| x.is_finite()));
    }
}
