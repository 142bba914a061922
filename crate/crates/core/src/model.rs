//! Toy video encoders and the composition scoring head.
//!
//! Frames go through a shared two-layer encoder. The verb branch runs two
//! temporal convolutions over the frame features and mean-pools; the object
//! branch mean-pools first, so it never sees frame order. Component logits
//! are scaled cosines against learned class embeddings.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::data::{Clip, Geometry};
use crate::error::{Error, Result};
use crate::rng::{substream, Stream};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerbEncoder {
    /// conv → ReLU → conv → temporal mean.
    Temporal,
    /// Temporal mean of the frame features only.
    MeanOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub geometry: Geometry,
    pub n_verbs: usize,
    pub n_objects: usize,
    pub dim: usize,
    pub hidden: usize,
    pub temperature: f64,
    pub verb_encoder: VerbEncoder,
}

impl ModelConfig {
    pub fn new(geometry: Geometry, n_verbs: usize, n_objects: usize) -> Self {
        Self {
            geometry,
            n_verbs,
            n_objects,
            dim: 64,
            hidden: 64,
            temperature: 0.07,
            verb_encoder: VerbEncoder::Temporal,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 8 {
            return Err(Error::Config("model dimension D must be at least 8".into()));
        }
        if self.hidden == 0 || self.n_verbs == 0 || self.n_objects == 0 {
            return Err(Error::Config("model sizes must be positive".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        if self.geometry.frames < 2 {
            return Err(Error::Config("clips need at least two frames".into()));
        }
        Ok(())
    }
}

pub const PARAM_NAMES: [&str; 18] = [
    "frame.w1",
    "frame.b1",
    "frame.w2",
    "frame.b2",
    "verb.conv1.w",
    "verb.conv1.b",
    "verb.conv2.w",
    "verb.conv2.b",
    "object.w1",
    "object.b1",
    "object.w2",
    "object.b2",
    "embed.verb",
    "embed.object",
    "gate.verb.w",
    "gate.verb.b",
    "gate.object.w",
    "gate.object.b",
];

const FRAME_W1: usize = 0;
const FRAME_B1: usize = 1;
const FRAME_W2: usize = 2;
const FRAME_B2: usize = 3;
const CONV1_W: usize = 4;
const CONV1_B: usize = 5;
const CONV2_W: usize = 6;
const CONV2_B: usize = 7;
const OBJ_W1: usize = 8;
const OBJ_B1: usize = 9;
const OBJ_W2: usize = 10;
const OBJ_B2: usize = 11;
const EMBED_VERB: usize = 12;
const EMBED_OBJECT: usize = 13;
const GATE_V_W: usize = 14;
const GATE_V_B: usize = 15;
const GATE_O_W: usize = 16;
const GATE_O_B: usize = 17;

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    params: Vec<Tensor>,
}

/// Model parameters placed on a tape.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Per-batch forward results, all on the tape.
#[derive(Debug, Clone, Copy)]
pub struct ForwardOutputs {
    /// `[B, T, D]`
    pub frame_feats: Var,
    /// `[B, T, D]` before pooling.
    pub verb_seq: Var,
    /// `[B, D]`
    pub verb_feat: Var,
    /// `[B, D]`
    pub obj_feat: Var,
    /// `[B, |V|]`
    pub verb_logits: Var,
    /// `[B, |O|]`
    pub obj_logits: Var,
    /// `[B, |V|, |O|]`, softmax over verbs gives p(v | o).
    pub cond_vgo: Var,
    /// `[B, |V|, |O|]`, softmax over objects gives p(o | v).
    pub cond_ogv: Var,
}

fn glorot(shape: Vec<usize>, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-a, a);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| dist.sample(rng)).collect()).expect("shape matches")
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = substream(seed, Stream::Init);
        let (p, h, d) = (config.geometry.frame_len(), config.hidden, config.dim);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let embed = |n: usize, rng: &mut dyn rand::RngCore| {
            Tensor::new(vec![n, d], (0..n * d).map(|_| normal.sample(rng)).collect()).expect("shape")
        };
        let params = vec![
            glorot(vec![p, h], p, h, &mut rng),
            Tensor::zeros(vec![h]),
            glorot(vec![h, d], h, d, &mut rng),
            Tensor::zeros(vec![d]),
            glorot(vec![3, d, d], 3 * d, d, &mut rng),
            Tensor::zeros(vec![d]),
            glorot(vec![3, d, d], 3 * d, d, &mut rng),
            Tensor::zeros(vec![d]),
            glorot(vec![d, d], d, d, &mut rng),
            Tensor::zeros(vec![d]),
            glorot(vec![d, d], d, d, &mut rng),
            Tensor::zeros(vec![d]),
            embed(config.n_verbs, &mut rng),
            embed(config.n_objects, &mut rng),
            glorot(vec![d, d], d, d, &mut rng),
            Tensor::zeros(vec![d]),
            glorot(vec![d, d], d, d, &mut rng),
            Tensor::zeros(vec![d]),
        ];
        Ok(Self { config, params })
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        PARAM_NAMES.iter().position(|n| *n == name).map(|i| &self.params[i])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        PARAM_NAMES.iter().position(|n| *n == name).map(|i| &mut self.params[i])
    }

    /// Pushes the parameters onto `tape`, as trainable leaves when `train`.
    pub fn bind(&self, tape: &mut Tape, train: bool) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|p| if train { tape.param(p.clone()) } else { tape.constant(p.clone()) })
            .collect();
        Bound { vars }
    }

    /// Stacks clips into a `[B·T, C·H·W]` constant.
    pub fn batch_pixels(&self, clips: &[&Clip]) -> Result<Tensor> {
        let g = self.config.geometry;
        let mut data = Vec::with_capacity(clips.len() * g.clip_len());
        for c in clips {
            if c.geometry != g {
                return Err(Error::ShapeMismatch {
                    op: "forward",
                    lhs: vec![g.frames, g.channels, g.height, g.width],
                    rhs: vec![c.geometry.frames, c.geometry.channels, c.geometry.height, c.geometry.width],
                });
            }
            data.extend(c.pixels.iter().map(|&p| p as f64));
        }
        Tensor::new(vec![clips.len() * g.frames, g.frame_len()], data)
    }

    /// Frame features `[B, T, D]` from `[B·T, C·H·W]` pixels.
    pub fn encode_frames(&self, tape: &mut Tape, b: &Bound, pixels: Var) -> Result<Var> {
        let g = self.config.geometry;
        let rows = tape.shape(pixels)[0];
        if tape.shape(pixels).len() != 2 || tape.shape(pixels)[1] != g.frame_len() || !rows.is_multiple_of(g.frames) {
            return Err(Error::ShapeMismatch {
                op: "encode_frames",
                lhs: tape.shape(pixels).to_vec(),
                rhs: vec![g.frames, g.frame_len()],
            });
        }
        let v = &b.vars;
        let h = tape.matmul(pixels, v[FRAME_W1])?;
        let h = tape.add_row(h, v[FRAME_B1])?;
        let h = tape.relu(h);
        let f = tape.matmul(h, v[FRAME_W2])?;
        let f = tape.add_row(f, v[FRAME_B2])?;
        tape.reshape(f, vec![rows / g.frames, g.frames, self.config.dim])
    }

    /// Verb sequence `[B, T, D]` and pooled verb feature `[B, D]`.
    pub fn encode_verb(&self, tape: &mut Tape, b: &Bound, frame_feats: Var) -> Result<(Var, Var)> {
        let v = &b.vars;
        let seq = match self.config.verb_encoder {
            VerbEncoder::Temporal => {
                let c = tape.conv1d(frame_feats, v[CONV1_W], v[CONV1_B])?;
                let c = tape.relu(c);
                tape.conv1d(c, v[CONV2_W], v[CONV2_B])?
            }
            VerbEncoder::MeanOnly => frame_feats,
        };
        let pooled = tape.mean_axis(seq, 1)?;
        Ok((seq, pooled))
    }

    /// Object feature `[B, D]`: temporal mean, then a two-layer MLP.
    pub fn encode_object(&self, tape: &mut Tape, b: &Bound, frame_feats: Var) -> Result<Var> {
        let v = &b.vars;
        let m = tape.mean_axis(frame_feats, 1)?;
        let h = tape.matmul(m, v[OBJ_W1])?;
        let h = tape.add_row(h, v[OBJ_B1])?;
        let h = tape.relu(h);
        let o = tape.matmul(h, v[OBJ_W2])?;
        tape.add_row(o, v[OBJ_B2])
    }

    fn scaled_cosine(&self, tape: &mut Tape, feats: Var, embed: Var) -> Result<Var> {
        let f = tape.normalize_rows(feats);
        let e = tape.normalize_rows(embed);
        let et = tape.transpose(e)?;
        let s = tape.matmul(f, et)?;
        Ok(tape.scale(s, 1.0 / self.config.temperature))
    }

    /// `cos(verb_feat, e^V) / τ`, shape `[B, |V|]`.
    pub fn verb_logits(&self, tape: &mut Tape, b: &Bound, verb_feat: Var) -> Result<Var> {
        self.scaled_cosine(tape, verb_feat, b.vars[EMBED_VERB])
    }

    pub fn object_logits(&self, tape: &mut Tape, b: &Bound, obj_feat: Var) -> Result<Var> {
        self.scaled_cosine(tape, obj_feat, b.vars[EMBED_OBJECT])
    }

    /// Gated conditional logits, both `[B, |V|, |O|]`:
    /// `vgo[v, o] = cos(f^V ⊙ σ(Wg_v e^O_o + b), e^V_v) / τ` and
    /// `ogv[v, o] = cos(f^O ⊙ σ(Wg_o e^V_v + b), e^O_o) / τ`.
    pub fn conditional_logits(&self, tape: &mut Tape, b: &Bound, verb_feat: Var, obj_feat: Var) -> Result<(Var, Var)> {
        let v = &b.vars;
        let (nv, no) = (self.config.n_verbs, self.config.n_objects);
        let batch = tape.shape(verb_feat)[0];
        let ev = tape.normalize_rows(v[EMBED_VERB]);
        let eo = tape.normalize_rows(v[EMBED_OBJECT]);

        let gate = tape.matmul(eo, v[GATE_V_W])?;
        let gate = tape.add_row(gate, v[GATE_V_B])?;
        let gate = tape.sigmoid(gate); // [O, D]
        let vgo = self.gated(tape, verb_feat, gate, ev, batch, no)?; // [B·O, V]
        let vgo = tape.reshape(vgo, vec![batch, no, nv])?;
        let vgo = tape.transpose(vgo)?;

        let gate = tape.matmul(ev, v[GATE_O_W])?;
        let gate = tape.add_row(gate, v[GATE_O_B])?;
        let gate = tape.sigmoid(gate); // [V, D]
        let ogv = self.gated(tape, obj_feat, gate, eo, batch, nv)?; // [B·V, O]
        let ogv = tape.reshape(ogv, vec![batch, nv, no])?;
        Ok((vgo, ogv))
    }

    /// Rows `(b, c)` of `cos(feat[b] ⊙ gate[c], target) / τ`.
    fn gated(&self, tape: &mut Tape, feat: Var, gate: Var, target: Var, batch: usize, n: usize) -> Result<Var> {
        let feat_rows: Vec<usize> = (0..batch).flat_map(|b| std::iter::repeat_n(b, n)).collect();
        let gate_rows: Vec<usize> = (0..batch).flat_map(|_| 0..n).collect();
        let f = tape.index_select(feat, &feat_rows)?;
        let g = tape.index_select(gate, &gate_rows)?;
        let m = tape.mul(f, g)?;
        let m = tape.normalize_rows(m);
        let tt = tape.transpose(target)?;
        let s = tape.matmul(m, tt)?;
        Ok(tape.scale(s, 1.0 / self.config.temperature))
    }

    pub fn forward(&self, tape: &mut Tape, b: &Bound, pixels: Var) -> Result<ForwardOutputs> {
        let frame_feats = self.encode_frames(tape, b, pixels)?;
        let (verb_seq, verb_feat) = self.encode_verb(tape, b, frame_feats)?;
        let obj_feat = self.encode_object(tape, b, frame_feats)?;
        let verb_logits = self.verb_logits(tape, b, verb_feat)?;
        let obj_logits = self.object_logits(tape, b, obj_feat)?;
        let (cond_vgo, cond_ogv) = self.conditional_logits(tape, b, verb_feat, obj_feat)?;
        Ok(ForwardOutputs {
            frame_feats,
            verb_seq,
            verb_feat,
            obj_feat,
            verb_logits,
            obj_logits,
            cond_vgo,
            cond_ogv,
        })
    }

    /// `(f^V, f^V_rev, f^V_shuffled)` from one set of frame features, all
    /// through the same verb encoder. `perms` holds one permutation per clip.
    pub fn perturbed_verb_features(
        &self,
        tape: &mut Tape,
        b: &Bound,
        frame_feats: Var,
        perms: &[Vec<usize>],
    ) -> Result<(Var, Var, Var)> {
        let (_, f) = self.encode_verb(tape, b, frame_feats)?;
        let (f_rev, f_shuf) = self.reversed_and_shuffled(tape, b, frame_feats, perms)?;
        Ok((f, f_rev, f_shuf))
    }

    /// `(f^V_rev, f^V_shuffled)` only.
    pub fn reversed_and_shuffled(
        &self,
        tape: &mut Tape,
        b: &Bound,
        frame_feats: Var,
        perms: &[Vec<usize>],
    ) -> Result<(Var, Var)> {
        let rev = tape.reverse_time(frame_feats)?;
        let (_, f_rev) = self.encode_verb(tape, b, rev)?;
        let shuf = tape.permute_time(frame_feats, perms)?;
        let (_, f_shuf) = self.encode_verb(tape, b, shuf)?;
        Ok((f_rev, f_shuf))
    }

    pub fn verb_embed(&self, b: &Bound) -> Var {
        b.vars[EMBED_VERB]
    }

    /// Verb logits `[B, |V|]` for plain `[B, D]` features.
    pub fn verb_logits_of(&self, feats: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, false);
        let f = tape.constant(feats.clone());
        let l = self.verb_logits(&mut tape, &b, f)?;
        Ok(tape.value(l).clone())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut out)?;
        out.flush()?;
        Ok(())
    }

    /// `"RCOR"`, version, D, T, |V|, |O| (u32 LE), then named blocks:
    /// name length, name bytes, rank, dims (u32 LE) and f64 LE data.
    pub fn write_to(&self, out: &mut impl Write) -> Result<()> {
        let c = &self.config;
        out.write_all(CHECKPOINT_MAGIC)?;
        for v in [CHECKPOINT_VERSION, c.dim as u32, c.geometry.frames as u32, c.n_verbs as u32, c.n_objects as u32] {
            out.write_all(&v.to_le_bytes())?;
        }
        let g = c.geometry;
        let meta = [
            (
                "meta.frame",
                Tensor::from_vec(vec![g.channels as f64, g.height as f64, g.width as f64]),
            ),
            ("meta.hidden", Tensor::scalar(c.hidden as f64)),
            ("meta.temperature", Tensor::scalar(c.temperature)),
            (
                "meta.verb_encoder",
                Tensor::scalar(match c.verb_encoder {
                    VerbEncoder::Temporal => 0.0,
                    VerbEncoder::MeanOnly => 1.0,
                }),
            ),
        ];
        let blocks = meta
            .iter()
            .map(|(n, t)| (*n, t))
            .chain(PARAM_NAMES.iter().copied().zip(self.params.iter()));
        for (name, t) in blocks {
            out.write_all(&(name.len() as u32).to_le_bytes())?;
            out.write_all(name.as_bytes())?;
            out.write_all(&(t.rank() as u32).to_le_bytes())?;
            for &d in t.shape() {
                out.write_all(&(d as u32).to_le_bytes())?;
            }
            for x in t.data() {
                out.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(&mut BufReader::new(std::fs::File::open(path)?))
    }

    pub fn read_from(input: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::data("not a model checkpoint (bad magic)"));
        }
        let version = read_u32(input)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::data(format!("unsupported checkpoint version {version}")));
        }
        let (dim, frames, n_verbs, n_objects) = (
            read_u32(input)? as usize,
            read_u32(input)? as usize,
            read_u32(input)? as usize,
            read_u32(input)? as usize,
        );
        let mut blocks = Vec::new();
        loop {
            let mut len = [0u8; 4];
            match input.read_exact(&mut len) {
                Ok(()) => {}
                Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
                Err(e) => return Err(e.into()),
            }
            let mut name = vec![0u8; u32::from_le_bytes(len) as usize];
            input.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| Error::data("checkpoint block name is not UTF-8"))?;
            let rank = read_u32(input)? as usize;
            let shape = (0..rank).map(|_| read_u32(input).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let mut buf = vec![0u8; n * 8];
            input.read_exact(&mut buf)?;
            let data = buf
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect();
            blocks.push((name, Tensor::new(shape, data)?));
        }
        let take = |name: &str| -> Result<Tensor> {
            blocks
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t.clone())
                .ok_or_else(|| Error::data(format!("checkpoint lacks block {name:?}")))
        };
        let frame = take("meta.frame")?;
        let config = ModelConfig {
            geometry: Geometry {
                frames,
                channels: frame.data()[0] as usize,
                height: frame.data()[1] as usize,
                width: frame.data()[2] as usize,
            },
            n_verbs,
            n_objects,
            dim,
            hidden: take("meta.hidden")?.item() as usize,
            temperature: take("meta.temperature")?.item(),
            verb_encoder: if take("meta.verb_encoder")?.item() == 0.0 {
                VerbEncoder::Temporal
            } else {
                VerbEncoder::MeanOnly
            },
        };
        let model = Model::new(config, 0)?;
        let mut params = Vec::with_capacity(PARAM_NAMES.len());
        for (name, expected) in PARAM_NAMES.iter().zip(&model.params) {
            let t = take(name)?;
            if t.shape() != expected.shape() {
                return Err(Error::data(format!(
                    "checkpoint block {name:?} has shape {:?}, expected {:?}",
                    t.shape(),
                    expected.shape()
                )));
            }
            params.push(t);
        }
        Ok(Self {
            config: model.config,
            params,
        })
    }
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"RCOR";
const CHECKPOINT_VERSION: u32 = 1;

fn read_u32(input: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Flat composition scores and their softmax ŷ, both `[B, |V|·|O|]`:
/// `s(v, o) = p_O(o)·p(v | o) + p_V(v)·p(o | v)`.
pub fn compose_scores(
    tape: &mut Tape,
    verb_logits: Var,
    obj_logits: Var,
    cond_vgo: Var,
    cond_ogv: Var,
) -> Result<(Var, Var)> {
    let (b, nv, no) = match *tape.shape(cond_vgo) {
        [b, nv, no] => (b, nv, no),
        ref s => return Err(Error::invalid(format!("conditional logits must be [B, V, O], got {s:?}"))),
    };
    let vgo = tape.transpose(cond_vgo)?;
    let vgo = tape.reshape(vgo, vec![b * no, nv])?;
    let p_vgo = tape.softmax(vgo);
    let p_o = tape.softmax(obj_logits);
    let p_o = tape.reshape(p_o, vec![b * no])?;
    let t1 = tape.mul_col(p_vgo, p_o)?;
    let t1 = tape.reshape(t1, vec![b, no, nv])?;
    let t1 = tape.transpose(t1)?;

    let ogv = tape.reshape(cond_ogv, vec![b * nv, no])?;
    let p_ogv = tape.softmax(ogv);
    let p_v = tape.softmax(verb_logits);
    let p_v = tape.reshape(p_v, vec![b * nv])?;
    let t2 = tape.mul_col(p_ogv, p_v)?;
    let t2 = tape.reshape(t2, vec![b, nv, no])?;

    let s = tape.add(t1, t2)?;
    let s = tape.reshape(s, vec![b, nv * no])?;
    let y = tape.softmax(s);
    Ok((s, y))
}

/// Uniformly random non-identity permutation of `0..t`.
pub fn shuffle_permutation(t: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    if t < 2 {
        return Err(Error::invalid("temporal shuffle needs at least two frames"));
    }
    let identity: Vec<usize> = (0..t).collect();
    let mut perm = identity.clone();
    loop {
        perm.shuffle(rng);
        if perm != identity {
            return Ok(perm);
        }
    }
}

/// Reverses the rows of a `[T, D]` sequence.
pub fn temporal_reverse(seq: &Tensor) -> Result<Tensor> {
    let perm: Vec<usize> = (0..seq.shape().first().copied().unwrap_or(0)).rev().collect();
    permute_rows(seq, &perm)
}

/// Applies a random non-identity permutation to the rows of `[T, D]`;
/// row `k` of the result is input row `π[k]`.
pub fn temporal_shuffle(seq: &Tensor, rng: &mut impl Rng) -> Result<(Tensor, Vec<usize>)> {
    let perm = shuffle_permutation(seq.shape().first().copied().unwrap_or(0), rng)?;
    Ok((permute_rows(seq, &perm)?, perm))
}

fn permute_rows(seq: &Tensor, perm: &[usize]) -> Result<Tensor> {
    if seq.rank() != 2 || seq.shape()[0] < 2 {
        return Err(Error::invalid(format!("expected a [T, D] sequence with T >= 2, got {:?}", seq.shape())));
    }
    let d = seq.shape()[1];
    let data = perm
        .iter()
        .flat_map(|&k| seq.data()[k * d..(k + 1) * d].iter().copied())
        .collect();
    Tensor::new(seq.shape().to_vec(), data)
}

/// Plain-value outputs for a batch evaluated without gradients.
#[derive(Debug, Clone)]
pub struct Inference {
    pub verb_feat: Tensor,
    pub obj_feat: Tensor,
    pub verb_logits: Tensor,
    pub obj_logits: Tensor,
    /// `[B, |V|·|O|]` composition scores before the final softmax.
    pub scores: Tensor,
    /// `(f^V_rev, f^V_shuffled)` when perturbations were requested.
    pub perturbed: Option<(Tensor, Tensor)>,
}

impl Model {
    /// Forward pass without gradients. With `perms`, also returns the
    /// reversed and shuffled verb features.
    pub fn infer(&self, clips: &[&Clip], perms: Option<&[Vec<usize>]>) -> Result<Inference> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, false);
        let px = self.batch_pixels(clips)?;
        let px = tape.constant(px);
        let out = self.forward(&mut tape, &b, px)?;
        let (scores, _) = compose_scores(&mut tape, out.verb_logits, out.obj_logits, out.cond_vgo, out.cond_ogv)?;
        let perturbed = match perms {
            Some(p) => {
                let (_, rev, shuf) = self.perturbed_verb_features(&mut tape, &b, out.frame_feats, p)?;
                Some((tape.value(rev).clone(), tape.value(shuf).clone()))
            }
            None => None,
        };
        Ok(Inference {
            verb_feat: tape.value(out.verb_feat).clone(),
            obj_feat: tape.value(out.obj_feat).clone(),
            verb_logits: tape.value(out.verb_logits).clone(),
            obj_logits: tape.value(out.obj_logits).clone(),
            scores: tape.value(scores).clone(),
            perturbed,
        })
    }
}
