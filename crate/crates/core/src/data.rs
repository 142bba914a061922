//! Synthetic compositional clips, annotation ingestion and compositional
//! split construction.
//!
//! Objects are a static shape and colour drawn in every frame; verbs are the
//! trajectory of that shape. Verbs come in reversal pairs (index `2k` is the
//! forward motion, `2k + 1` the same path played backwards), so reversing a
//! clip in time turns one verb into its opposite.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label_space::AnnotationRecord;
use crate::rng::clip_rng;

pub const VERB_NAMES: [&str; 10] = [
    "move_up",
    "move_down",
    "move_left_to_right",
    "move_right_to_left",
    "approach",
    "recede",
    "move_up_right",
    "move_down_left",
    "move_up_left",
    "move_down_right",
];

const PALETTE: [(&str, [f32; 3]); 12] = [
    ("red", [0.95, 0.1, 0.1]),
    ("green", [0.1, 0.9, 0.15]),
    ("blue", [0.15, 0.25, 0.95]),
    ("yellow", [0.95, 0.9, 0.1]),
    ("magenta", [0.9, 0.1, 0.9]),
    ("cyan", [0.1, 0.9, 0.9]),
    ("orange", [1.0, 0.55, 0.05]),
    ("white", [0.95, 0.95, 0.95]),
    ("purple", [0.5, 0.1, 0.75]),
    ("lime", [0.6, 1.0, 0.4]),
    ("pink", [1.0, 0.6, 0.7]),
    ("teal", [0.1, 0.5, 0.5]),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ShapeKind {
    Square,
    Disc,
    Diamond,
    Cross,
}

const SHAPES: [ShapeKind; 4] = [ShapeKind::Square, ShapeKind::Disc, ShapeKind::Diamond, ShapeKind::Cross];

pub fn verb_name(v: usize) -> &'static str {
    VERB_NAMES[v]
}

/// Index of the time-reversed counterpart of a verb.
pub fn opposite_verb(v: usize) -> usize {
    v ^ 1
}

pub fn object_name(o: usize) -> String {
    let (color, _) = PALETTE[o % PALETTE.len()];
    format!("{}_{}", color, shape_name(object_shape(o)))
}

fn object_shape(o: usize) -> ShapeKind {
    SHAPES[(o + o / PALETTE.len()) % SHAPES.len()]
}

fn shape_name(s: ShapeKind) -> &'static str {
    match s {
        ShapeKind::Square => "square",
        ShapeKind::Disc => "disc",
        ShapeKind::Diamond => "diamond",
        ShapeKind::Cross => "cross",
    }
}

pub const MAX_VERBS: usize = VERB_NAMES.len();
pub const MAX_OBJECTS: usize = PALETTE.len() * 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Geometry {
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Geometry {
    pub fn frame_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn clip_len(&self) -> usize {
        self.frames * self.frame_len()
    }
}

impl Default for Geometry {
    fn default() -> Self {
        Self {
            frames: 8,
            channels: 3,
            height: 32,
            width: 32,
        }
    }
}

/// `T × C × H × W` pixels in `[0, 1]` with its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub geometry: Geometry,
    pub pixels: Vec<f32>,
    pub verb: usize,
    pub object: usize,
}

impl Clip {
    pub fn new(geometry: Geometry, pixels: Vec<f32>, verb: usize, object: usize) -> Result<Self> {
        if geometry.frames < 2 {
            return Err(Error::invalid("a clip needs at least two frames"));
        }
        if pixels.len() != geometry.clip_len() {
            return Err(Error::invalid(format!(
                "clip needs {} pixels, got {}",
                geometry.clip_len(),
                pixels.len()
            )));
        }
        Ok(Self {
            geometry,
            pixels,
            verb,
            object,
        })
    }

    pub fn frame(&self, k: usize) -> &[f32] {
        let n = self.geometry.frame_len();
        &self.pixels[k * n..(k + 1) * n]
    }

    pub fn frame_mut(&mut self, k: usize) -> &mut [f32] {
        let n = self.geometry.frame_len();
        &mut self.pixels[k * n..(k + 1) * n]
    }

    /// The same clip with frame order reversed.
    pub fn time_reversed(&self) -> Clip {
        let mut out = self.clone();
        for k in 0..self.geometry.frames {
            out.frame_mut(k)
                .copy_from_slice(self.frame(self.geometry.frames - 1 - k));
        }
        out
    }
}

/// Probability vector over the object vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabel(Vec<f64>);

impl SoftLabel {
    pub fn one_hot(object: usize, n_objects: usize) -> Self {
        let mut p = vec![0.0; n_objects];
        p[object] = 1.0;
        Self(p)
    }

    /// `(1 − λ)·onehot(primary) + λ·onehot(donor)`.
    pub fn mix(primary: usize, donor: usize, lambda: f64, n_objects: usize) -> Self {
        let mut p = vec![0.0; n_objects];
        p[primary] += 1.0 - lambda;
        p[donor] += lambda;
        Self(p)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    /// Object with the largest weight (lowest index on ties).
    pub fn dominant(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate() {
            if p > self.0[best] {
                best = i;
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_verbs: usize,
    pub n_objects: usize,
    pub geometry: Geometry,
    pub noise_std: f64,
    /// Row-major `|V| × |O|` training sample counts.
    pub bias_matrix: Vec<u64>,
    pub seed: u64,
    /// Shape radius as a fraction of the frame height.
    pub object_scale: f64,
}

impl SynthConfig {
    pub fn new(n_verbs: usize, n_objects: usize, bias_matrix: Vec<u64>, seed: u64) -> Result<Self> {
        let cfg = Self {
            n_verbs,
            n_objects,
            geometry: Geometry::default(),
            noise_std: 0.05,
            bias_matrix,
            seed,
            object_scale: 0.14,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Four verbs × four objects, training only on the diagonal.
    pub fn fig2b(seed: u64) -> Self {
        let mut bias = vec![0; 16];
        for i in 0..4 {
            bias[i * 4 + i] = 40;
        }
        Self::new(4, 4, bias, seed).expect("valid preset")
    }

    /// Balanced `n × n` grid with equal counts per pair.
    pub fn balanced(n: usize, per_pair: u64, seed: u64) -> Self {
        Self::new(n, n, vec![per_pair; n * n], seed).expect("valid preset")
    }

    /// Long-tailed 10 verbs × 20 objects at 15% coverage. Verbs 0..4 are
    /// generalists sharing the hub objects 0..4, with counts
    /// `80 / rank^exponent` (at least 2) over interleaved ranks. Each of the
    /// six specialist verbs 4..10 owns one exclusive object (30 clips) and
    /// touches one hub object (10 clips). The exclusive pairs form the
    /// frequent set; objects 10..20 never occur in training.
    pub fn skewed(exponent: f64, seed: u64) -> Self {
        let (nv, no) = (10, 20);
        let mut bias = vec![0; nv * no];
        for g in 0..4 {
            for h in 0..4 {
                let rank = (5 * (4 * g + h)) % 16;
                bias[g * no + h] = ((80.0 / ((rank + 1) as f64).powf(exponent)).round() as u64).max(2);
            }
        }
        for s in 0..6 {
            let v = 4 + s;
            bias[v * no + 4 + s] = 30;
            bias[v * no + s % 4] = 10;
        }
        Self::new(nv, no, bias, seed).expect("valid preset")
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_verbs == 0 || self.n_verbs > MAX_VERBS {
            return Err(Error::invalid(format!("n_verbs must be in 1..={MAX_VERBS}")));
        }
        if self.n_objects == 0 || self.n_objects > MAX_OBJECTS {
            return Err(Error::invalid(format!("n_objects must be in 1..={MAX_OBJECTS}")));
        }
        if self.bias_matrix.len() != self.n_verbs * self.n_objects {
            return Err(Error::invalid("bias_matrix must be |V| x |O|"));
        }
        if self.bias_matrix.iter().all(|&c| c == 0) {
            return Err(Error::invalid("bias_matrix needs at least one positive entry"));
        }
        if self.geometry.frames < 2 || self.geometry.channels != 3 || self.geometry.height < 8 || self.geometry.width < 8 {
            return Err(Error::invalid("geometry needs T >= 2, C = 3 and frames of at least 8x8"));
        }
        Ok(())
    }

    pub fn verb_names(&self) -> Vec<String> {
        (0..self.n_verbs).map(|v| verb_name(v).to_string()).collect()
    }

    pub fn object_names(&self) -> Vec<String> {
        (0..self.n_objects).map(object_name).collect()
    }
}

/// Position and radius of the shape in one frame, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShapeState {
    pub row: i64,
    pub col: i64,
    pub radius: i64,
}

/// Per-frame ground-truth states of `verb`. Draws the same random numbers
/// for both verbs of a reversal pair, so `trajectory(2k)` reversed equals
/// `trajectory(2k + 1)` for identical generator states.
pub fn trajectory(verb: usize, cfg: &SynthConfig, rng: &mut impl Rng) -> Vec<ShapeState> {
    let g = cfg.geometry;
    let (h, w, t) = (g.height as i64, g.width as i64, g.frames);
    let r = ((cfg.object_scale * g.height as f64).round() as i64).max(1);
    let travel = |rng: &mut dyn rand::RngCore, extent: i64| -> (i64, i64) {
        // endpoints keep the whole shape inside the frame
        let lo_bound = r;
        let hi_bound = extent - 1 - r;
        let span = hi_bound - lo_bound;
        let min_len = ((span as f64) * 0.55).round() as i64;
        let len = rng.gen_range(min_len.max(1)..=span.max(1));
        let start = rng.gen_range(lo_bound..=(hi_bound - len).max(lo_bound));
        (start, start + len)
    };
    // forward path A → B for the pair
    let (a, b) = match verb / 2 {
        0 => {
            // up: bottom to top
            let (lo, hi) = travel(rng, h);
            let col = rng.gen_range(r..w - r);
            ((hi, col, r), (lo, col, r))
        }
        1 => {
            let (lo, hi) = travel(rng, w);
            let row = rng.gen_range(r..h - r);
            ((row, lo, r), (row, hi, r))
        }
        2 => {
            let r1 = (r as f64 * 1.9).round() as i64;
            let row = rng.gen_range(r1..h - r1);
            let col = rng.gen_range(r1..w - r1);
            ((row, col, (r as f64 * 0.6).round().max(1.0) as i64), (row, col, r1))
        }
        3 => {
            // up-right: bottom-left to top-right
            let (rlo, rhi) = travel(rng, h);
            let (clo, chi) = travel(rng, w);
            ((rhi, clo, r), (rlo, chi, r))
        }
        _ => {
            // up-left: bottom-right to top-left
            let (rlo, rhi) = travel(rng, h);
            let (clo, chi) = travel(rng, w);
            ((rhi, chi, r), (rlo, clo, r))
        }
    };
    let lerp = |x: i64, y: i64, k: usize| -> i64 {
        x + ((y - x) as f64 * k as f64 / (t - 1) as f64).round() as i64
    };
    // canonical path from the "low" endpoint so that reversing is exact
    let mut path: Vec<ShapeState> = (0..t)
        .map(|k| ShapeState {
            row: lerp(a.0, b.0, k),
            col: lerp(a.1, b.1, k),
            radius: lerp(a.2, b.2, k),
        })
        .collect();
    if verb % 2 == 1 {
        path.reverse();
    }
    path
}

fn inside(shape: ShapeKind, dy: i64, dx: i64, r: i64) -> bool {
    match shape {
        ShapeKind::Square => dy.abs() <= r && dx.abs() <= r,
        ShapeKind::Disc => dy * dy + dx * dx <= r * r + r,
        ShapeKind::Diamond => dy.abs() + dx.abs() <= r + r / 2,
        ShapeKind::Cross => (dy.abs() <= r && dx.abs() <= r / 2) || (dx.abs() <= r && dy.abs() <= r / 2),
    }
}

/// Boolean `H × W` occupancy of the shape for one state.
pub fn occupancy(object: usize, state: ShapeState, geometry: Geometry) -> Vec<bool> {
    let shape = object_shape(object);
    let mut out = vec![false; geometry.height * geometry.width];
    for y in 0..geometry.height as i64 {
        for x in 0..geometry.width as i64 {
            out[(y as usize) * geometry.width + x as usize] =
                inside(shape, y - state.row, x - state.col, state.radius);
        }
    }
    out
}

/// Renders one clip. The generator state determines the trajectory and
/// the pixel noise.
pub fn generate_clip(verb: usize, object: usize, cfg: &SynthConfig, rng: &mut impl Rng) -> Result<Clip> {
    if verb >= cfg.n_verbs || object >= cfg.n_objects {
        return Err(Error::invalid(format!(
            "({verb}, {object}) outside {}x{} synthetic space",
            cfg.n_verbs, cfg.n_objects
        )));
    }
    let g = cfg.geometry;
    let states = trajectory(verb, cfg, rng);
    let color = PALETTE[object % PALETTE.len()].1;
    let plane = g.height * g.width;
    let mut pixels = vec![0.0f32; g.clip_len()];
    for (k, state) in states.iter().enumerate() {
        let occ = occupancy(object, *state, g);
        let frame = &mut pixels[k * g.frame_len()..(k + 1) * g.frame_len()];
        for (p, &on) in occ.iter().enumerate() {
            if on {
                for c in 0..3 {
                    frame[c * plane + p] = color[c];
                }
            }
        }
    }
    if cfg.noise_std > 0.0 {
        let normal = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::invalid(e.to_string()))?;
        for p in pixels.iter_mut() {
            *p = (*p as f64 + normal.sample(rng)).clamp(0.0, 1.0) as f32;
        }
    }
    Clip::new(g, pixels, verb, object)
}

/// A labelled collection of clips sharing one geometry.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub clips: Vec<Clip>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn geometry(&self) -> Option<Geometry> {
        self.clips.first().map(|c| c.geometry)
    }

    /// Splits into (clips whose pair satisfies `pred`, the rest).
    pub fn partition(&self, mut pred: impl FnMut(usize, usize) -> bool) -> (Dataset, Dataset) {
        let (a, b): (Vec<_>, Vec<_>) = self.clips.iter().cloned().partition(|c| pred(c.verb, c.object));
        (Dataset { clips: a }, Dataset { clips: b })
    }

    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut out)?;
        out.flush()?;
        Ok(())
    }

    /// `"CZSL"`, version, T, C, H, W, count (u32 LE), then per clip verb,
    /// object (u32 LE) and the pixels as little-endian f32.
    pub fn write_to(&self, out: &mut impl Write) -> Result<()> {
        let g = self.geometry().unwrap_or_default();
        out.write_all(DATASET_MAGIC)?;
        for v in [
            DATASET_VERSION,
            g.frames as u32,
            g.channels as u32,
            g.height as u32,
            g.width as u32,
            self.clips.len() as u32,
        ] {
            out.write_all(&v.to_le_bytes())?;
        }
        for clip in &self.clips {
            if clip.geometry != g {
                return Err(Error::data("clips in one dataset must share a geometry"));
            }
            out.write_all(&(clip.verb as u32).to_le_bytes())?;
            out.write_all(&(clip.object as u32).to_le_bytes())?;
            for p in &clip.pixels {
                out.write_all(&p.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_binary(path: &Path) -> Result<Self> {
        Self::read_from(&mut BufReader::new(std::fs::File::open(path)?))
    }

    pub fn read_from(input: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != DATASET_MAGIC {
            return Err(Error::data("not a clip dataset (bad magic)"));
        }
        let read_u32 = |input: &mut dyn Read| -> Result<u32> {
            let mut b = [0u8; 4];
            input.read_exact(&mut b)?;
            Ok(u32::from_le_bytes(b))
        };
        let version = read_u32(input)?;
        if version != DATASET_VERSION {
            return Err(Error::data(format!("unsupported dataset version {version}")));
        }
        let g = Geometry {
            frames: read_u32(input)? as usize,
            channels: read_u32(input)? as usize,
            height: read_u32(input)? as usize,
            width: read_u32(input)? as usize,
        };
        let count = read_u32(input)? as usize;
        let mut clips = Vec::with_capacity(count);
        let mut buf = vec![0u8; g.clip_len() * 4];
        for _ in 0..count {
            let verb = read_u32(input)? as usize;
            let object = read_u32(input)? as usize;
            input.read_exact(&mut buf)?;
            let pixels = buf
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            clips.push(Clip::new(g, pixels, verb, object)?);
        }
        Ok(Self { clips })
    }
}

const DATASET_MAGIC: &[u8; 4] = b"CZSL";
const DATASET_VERSION: u32 = 1;

/// Per-pair sample counts of the two evaluation splits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalCounts {
    pub aligned_per_pair: usize,
    pub conflict_per_pair: usize,
}

#[derive(Debug, Clone)]
pub struct BiasedDataset {
    pub train: Dataset,
    pub aligned_test: Dataset,
    pub conflict_test: Dataset,
}

/// Train on the support of `bias_matrix` (with its counts); evaluate on
/// the same support (aligned) and on its zero-count complement (conflict).
/// Conflict pairs whose verb or object never occurs in training are left
/// out.
pub fn generate_biased_dataset(cfg: &SynthConfig, counts: EvalCounts) -> Result<BiasedDataset> {
    biased_splits(cfg, counts, true, [1 << 32, 2 << 32])
}

/// Validation counterpart of the two evaluation splits: same pairs, fresh
/// clips. Returns `(aligned, conflict)`.
pub fn generate_validation_splits(cfg: &SynthConfig, counts: EvalCounts) -> Result<(Dataset, Dataset)> {
    let d = biased_splits(cfg, counts, false, [3 << 32, 4 << 32])?;
    Ok((d.aligned_test, d.conflict_test))
}

fn biased_splits(cfg: &SynthConfig, counts: EvalCounts, with_train: bool, bases: [u64; 2]) -> Result<BiasedDataset> {
    cfg.validate()?;
    let (nv, no) = (cfg.n_verbs, cfg.n_objects);
    let support: Vec<(usize, usize)> = (0..nv * no)
        .filter(|&i| cfg.bias_matrix[i] > 0)
        .map(|i| (i / no, i % no))
        .collect();
    let verb_seen = |v: usize| (0..no).any(|o| cfg.bias_matrix[v * no + o] > 0);
    let object_seen = |o: usize| (0..nv).any(|v| cfg.bias_matrix[v * no + o] > 0);
    let complement: Vec<(usize, usize)> = (0..nv * no)
        .filter(|&i| cfg.bias_matrix[i] == 0)
        .map(|i| (i / no, i % no))
        .filter(|&(v, o)| verb_seen(v) && object_seen(o))
        .collect();
    if counts.conflict_per_pair > 0 && complement.is_empty() {
        return Err(Error::invalid(
            "a bias-conflict split needs zero-count pairs, but bias_matrix has full support",
        ));
    }
    let build = |pairs: &[(usize, usize)], per_pair: &dyn Fn(usize, usize) -> usize, base: u64| -> Result<Dataset> {
        let mut clips = Vec::new();
        let mut counter = base;
        for &(v, o) in pairs {
            for _ in 0..per_pair(v, o) {
                let mut rng = clip_rng(cfg.seed, counter);
                clips.push(generate_clip(v, o, cfg, &mut rng)?);
                counter += 1;
            }
        }
        Ok(Dataset { clips })
    };
    let train = if with_train {
        build(&support, &|v, o| cfg.bias_matrix[v * no + o] as usize, 0)?
    } else {
        Dataset::default()
    };
    Ok(BiasedDataset {
        train,
        aligned_test: build(&support, &|_, _| counts.aligned_per_pair, bases[0])?,
        conflict_test: build(&complement, &|_, _| counts.conflict_per_pair, bases[1])?,
    })
}

// ----- annotation ingestion -----

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMapping {
    pub id: String,
    pub verb: String,
    pub object: String,
    /// Optional column naming the initial pool (`train` / `val`).
    pub split: Option<String>,
}

impl Default for ColumnMapping {
    fn default() -> Self {
        Self {
            id: "id".into(),
            verb: "verb".into(),
            object: "object".into(),
            split: None,
        }
    }
}

/// An ingested record plus its initial pool label, when the file has one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IngestedRecord {
    pub record: AnnotationRecord,
    pub pool: Option<String>,
    pub line: usize,
}

/// Reads a comma- or tab-delimited annotation table with a header row.
pub fn ingest_annotations(path: &Path, mapping: &ColumnMapping) -> Result<Vec<IngestedRecord>> {
    let text = std::fs::read_to_string(path)?;
    let header = text.lines().next().unwrap_or_default();
    let delimiter = if header.contains('\t') { b'\t' } else { b',' };
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let column = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h.trim() == name).ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: format!("missing column {name:?}"),
        })
    };
    let (ci, cv, co) = (column(&mapping.id)?, column(&mapping.verb)?, column(&mapping.object)?);
    let cs = mapping.split.as_deref().map(column).transpose()?;
    let mut ids = HashSet::new();
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let field = |c: usize, name: &str| -> Result<String> {
            match row.get(c).map(str::trim) {
                Some(s) if !s.is_empty() => Ok(s.to_string()),
                _ => Err(parse_err(format!("empty {name} field"))),
            }
        };
        let id = field(ci, "id")?;
        if !ids.insert(id.clone()) {
            return Err(parse_err(format!("duplicate id {id:?}")));
        }
        let record = AnnotationRecord::new(id, field(cv, "verb")?, field(co, "object")?);
        let pool = cs.map(|c| field(c, "split")).transpose()?;
        out.push(IngestedRecord { record, pool, line });
    }
    Ok(out)
}

// ----- split construction -----

/// `(verb name, object name)`.
pub type NamedPair = (String, String);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub seen_val: BTreeSet<NamedPair>,
    pub unseen_val: BTreeSet<NamedPair>,
    pub seen_test: BTreeSet<NamedPair>,
    pub unseen_test: BTreeSet<NamedPair>,
    /// Compositions removed by the count filter or by closure.
    pub dropped: BTreeSet<NamedPair>,
}

impl SplitSpec {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitParams {
    /// Compositions with at most this many samples are dropped.
    pub min_count: usize,
    pub swap_fraction: f64,
    /// `(val, test)` share of each held-out composition.
    pub val_test_ratio: (usize, usize),
}

impl Default for SplitParams {
    fn default() -> Self {
        Self {
            min_count: 5,
            swap_fraction: 0.5,
            val_test_ratio: (3, 4),
        }
    }
}

fn pair_of(r: &AnnotationRecord) -> NamedPair {
    (r.verb.clone(), r.object.clone())
}

fn group(records: &[AnnotationRecord]) -> BTreeMap<NamedPair, Vec<AnnotationRecord>> {
    let mut out: BTreeMap<NamedPair, Vec<AnnotationRecord>> = BTreeMap::new();
    for r in records {
        out.entry(pair_of(r)).or_default().push(r.clone());
    }
    out
}

/// Builds train/val/test splits with held-out compositions:
/// filter rare compositions, close the val pool over the train pool, swap a
/// random fraction of compositions between the pools, then divide the val
/// pool into val and test per composition.
pub fn construct_compositional_splits(
    train_pool: &[AnnotationRecord],
    val_pool: &[AnnotationRecord],
    params: SplitParams,
    rng: &mut impl Rng,
) -> Result<SplitSpec> {
    if params.min_count < 1 {
        return Err(Error::invalid("min_count must be at least 1"));
    }
    if !(0.0..=1.0).contains(&params.swap_fraction) {
        return Err(Error::invalid("swap_fraction must lie in [0, 1]"));
    }
    let (rv, rt) = params.val_test_ratio;
    if rv + rt == 0 {
        return Err(Error::invalid("val_test_ratio must have a positive total"));
    }
    let mut dropped = BTreeSet::new();

    // (1) count filter over both pools
    let mut totals: BTreeMap<NamedPair, usize> = BTreeMap::new();
    for r in train_pool.iter().chain(val_pool) {
        *totals.entry(pair_of(r)).or_default() += 1;
    }
    let keep = |p: &NamedPair| totals[p] > params.min_count;
    let mut train = group(train_pool);
    let mut val = group(val_pool);
    for pools in [&mut train, &mut val] {
        pools.retain(|p, _| {
            let k = keep(p);
            if !k {
                dropped.insert(p.clone());
            }
            k
        });
    }

    // (2) closure: every val composition must exist in train
    let val_only: Vec<NamedPair> = val.keys().filter(|p| !train.contains_key(*p)).cloned().collect();
    if !val_only.is_empty() && val_only.len() == val.len() {
        return Err(Error::data(format!(
            "no validation composition exists in the train pool; offending: {}",
            format_pairs(&val_only)
        )));
    }
    for p in &val_only {
        val.remove(p);
        dropped.insert(p.clone());
    }
    if train.is_empty() || val.is_empty() {
        return Err(Error::data("pools too small after filtering"));
    }

    // (3) swap a random fraction of compositions in each direction
    let pick = |keys: Vec<NamedPair>, rng: &mut dyn rand::RngCore| -> BTreeSet<NamedPair> {
        let n = (keys.len() as f64 * params.swap_fraction).round() as usize;
        let mut keys = keys;
        keys.shuffle(rng);
        keys.into_iter().take(n).collect()
    };
    let from_train = pick(train.keys().cloned().collect(), rng);
    let from_val = pick(val.keys().cloned().collect(), rng);
    let mut new_train: BTreeMap<NamedPair, Vec<AnnotationRecord>> = BTreeMap::new();
    let mut new_val: BTreeMap<NamedPair, Vec<AnnotationRecord>> = BTreeMap::new();
    for (p, recs) in train {
        let dst = if from_train.contains(&p) { &mut new_val } else { &mut new_train };
        dst.entry(p).or_default().extend(recs);
    }
    for (p, recs) in val {
        let dst = if from_val.contains(&p) { &mut new_train } else { &mut new_val };
        dst.entry(p).or_default().extend(recs);
    }

    // held-out compositions must use verbs and objects that train still has
    let train_verbs: BTreeSet<&String> = new_train.keys().map(|(v, _)| v).collect();
    let train_objects: BTreeSet<&String> = new_train.keys().map(|(_, o)| o).collect();
    let orphan: Vec<NamedPair> = new_val
        .keys()
        .filter(|(v, o)| !train_verbs.contains(v) || !train_objects.contains(o))
        .cloned()
        .collect();
    for p in orphan {
        new_val.remove(&p);
        dropped.insert(p);
    }
    if new_train.is_empty() || new_val.is_empty() {
        return Err(Error::data("pools too small after swapping compositions"));
    }

    // (4) per-composition val/test division
    let mut spec = SplitSpec {
        train: new_train.values().flatten().map(|r| r.id.clone()).collect(),
        val: Vec::new(),
        test: Vec::new(),
        seen_val: BTreeSet::new(),
        unseen_val: BTreeSet::new(),
        seen_test: BTreeSet::new(),
        unseen_test: BTreeSet::new(),
        dropped,
    };
    for (p, mut recs) in new_val {
        recs.shuffle(rng);
        let n_val = ((recs.len() * rv) as f64 / (rv + rt) as f64).round() as usize;
        let seen = new_train.contains_key(&p);
        if n_val > 0 {
            if seen { &mut spec.seen_val } else { &mut spec.unseen_val }.insert(p.clone());
        }
        if recs.len() > n_val {
            if seen { &mut spec.seen_test } else { &mut spec.unseen_test }.insert(p.clone());
        }
        let (v, t) = recs.split_at(n_val);
        spec.val.extend(v.iter().map(|r| r.id.clone()));
        spec.test.extend(t.iter().map(|r| r.id.clone()));
    }
    Ok(spec)
}

fn format_pairs(pairs: &[NamedPair]) -> String {
    pairs
        .iter()
        .map(|(v, o)| format!("({v}, {o})"))
        .collect::<Vec<_>>()
        .join(", ")
}
