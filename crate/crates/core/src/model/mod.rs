//! A small two-channel energy model.
//!
//! The geometric channel turns each atom into
//! `[element one-hot | tag one-hot | Σ RBF(d_ij) over strict neighbors]`,
//! runs a two-layer tanh MLP per atom, max-pools over atoms and projects to
//! `embed_dim`. The text channel averages token embeddings of a
//! configuration string and applies a two-layer feedforward net. A trunk over
//! `[geo | text]` feeds a regression head and a `bin_count`-way energy-bin
//! classifier; the final prediction is the mean of the regression output and
//! the midpoint of the most likely bin. A learned vector stands in for the
//! geometric embedding when no structure is available.

mod checkpoint;
mod train;

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Sample;
use crate::neighbors::{build_neighbor_list, NeighborError, NeighborList, STRICT_SCALE};
use crate::radii::{Element, RadiiTable};
use crate::stringify::ConfigString;
use crate::structure::{Composition, Structure, Tag};

pub use checkpoint::{from_bytes, read_checkpoint, to_bytes, write_checkpoint, CheckpointError, MAGIC};
pub use train::{
    gradient_check, train_stage, EpochRecord, LossKind, TrainConfig, TrainError, TrainingLog,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("element {0} is not in the model palette")]
    UnknownElement(String),
    #[error(transparent)]
    Neighbor(#[from] NeighborError),
    #[error("invalid model configuration: {0}")]
    BadConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub rbf_count: usize,
    /// Upper end of the RBF centre range; centres span `[0, rbf_max]` Å.
    pub rbf_max: f64,
    pub palette: Vec<Element>,
    pub bin_count: usize,
    pub energy_lo: f64,
    pub energy_hi: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let el = |s| Element::from_symbol(s).expect("bundled element");
        Self {
            embed_dim: 64,
            hidden_dim: 64,
            rbf_count: 16,
            rbf_max: 6.0,
            palette: ["Cu", "Al", "As", "Pt", "H", "C", "O"].into_iter().map(el).collect(),
            bin_count: 32,
            energy_lo: -12.0,
            energy_hi: 2.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::BadConfig(m.into()));
        if self.embed_dim == 0 || self.hidden_dim == 0 {
            return bad("dimensions must be positive");
        }
        if self.rbf_count < 2 || !(self.rbf_max > 0.0) {
            return bad("need at least 2 RBF centres over a positive range");
        }
        if self.bin_count < 2 {
            return bad("bin_count must be at least 2");
        }
        if !(self.energy_lo < self.energy_hi) || !self.energy_lo.is_finite() || !self.energy_hi.is_finite() {
            return bad("energy range must be finite with lo < hi");
        }
        if self.palette.is_empty() {
            return bad("empty palette");
        }
        Ok(())
    }

    /// Sets the energy range to the span of `energies` widened by 5% each side.
    pub fn fit_energy_range(&mut self, energies: impl IntoIterator<Item = f64>) {
        let (lo, hi) = energies
            .into_iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), e| (lo.min(e), hi.max(e)));
        if lo.is_finite() && hi.is_finite() {
            let pad = 0.05 * (hi - lo).max(1.0);
            self.energy_lo = lo - pad;
            self.energy_hi = hi + pad;
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.palette.len() + 3 + self.rbf_count
    }

    pub fn bin_width(&self) -> f64 {
        (self.energy_hi - self.energy_lo) / self.bin_count as f64
    }

    /// Bin index of `e`; values outside the range clamp to the end bins.
    pub fn bin_of(&self, e: f64) -> usize {
        let k = ((e - self.energy_lo) / self.bin_width()).floor();
        if k < 0.0 {
            0
        } else {
            (k as usize).min(self.bin_count - 1)
        }
    }

    pub fn bin_midpoint(&self, k: usize) -> f64 {
        self.energy_lo + (k as f64 + 0.5) * self.bin_width()
    }

    fn energy_center(&self) -> f64 {
        0.5 * (self.energy_lo + self.energy_hi)
    }
}

pub const UNK: &str = "<unk>";

/// Token inventory. Index 0 is the unknown token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<String>,
}

/// Tokens carry their segment role, so `Cu` in the catalyst and `Cu` among
/// the primary atoms are different tokens. The `data`, `primary` and
/// `secondary` keywords are implied by the roles.
pub fn tokenize(cs: &ConfigString) -> Vec<String> {
    let meta = cs.meta();
    let mut out = vec![format!("ads:{}", meta.adsorbate)];
    if let Ok(c) = Composition::parse(&meta.formula) {
        out.extend(c.counts().iter().map(|(el, n)| format!("cat:{el}{n}")));
    }
    out.push(format!("hkl:{}", meta.miller_text()));
    if let Some(cfg) = cs.config() {
        for (role, m) in [("pri", &cfg.primary), ("sec", &cfg.secondary)] {
            if m.is_empty() {
                out.push(format!("{role}:none"));
            }
            out.extend(m.iter().map(|(el, n)| format!("{role}:{el}x{n}")));
        }
    }
    out
}

impl Vocab {
    pub fn from_strings<'a>(strings: impl IntoIterator<Item = &'a ConfigString>) -> Self {
        let mut set = BTreeSet::new();
        for s in strings {
            set.extend(tokenize(s));
            set.extend(tokenize(&s.without_config()));
        }
        set.remove(UNK);
        let mut tokens = vec![UNK.to_string()];
        tokens.extend(set);
        Self { tokens }
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, ModelError> {
        if tokens.first().map(String::as_str) != Some(UNK) {
            return Err(ModelError::BadConfig("vocabulary must start with <unk>".into()));
        }
        if tokens[1..].windows(2).any(|w| w[0] >= w[1]) {
            return Err(ModelError::BadConfig("vocabulary tokens must be sorted and unique".into()));
        }
        Ok(Self { tokens })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Token ids and the number of tokens mapped to `<unk>`.
    pub fn encode(&self, cs: &ConfigString) -> (Vec<usize>, usize) {
        let mut unk = 0;
        let ids = tokenize(cs)
            .into_iter()
            .map(|t| {
                self.tokens[1..].binary_search(&t).map(|i| i + 1).unwrap_or_else(|_| {
                    unk += 1;
                    0
                })
            })
            .collect();
        (ids, unk)
    }
}

/// `y = W x + b` with `W` of shape (out, in).
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl Dense {
    fn init(out: usize, inp: usize, rng: &mut ChaCha8Rng) -> Self {
        let r = 1.0 / (inp as f64).sqrt();
        Self {
            w: DMatrix::from_fn(out, inp, |_, _| rng.random_range(-r..=r)),
            b: DVector::zeros(out),
        }
    }

    fn zeros(out: usize, inp: usize) -> Self {
        Self {
            w: DMatrix::zeros(out, inp),
            b: DVector::zeros(out),
        }
    }

    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.w * x + &self.b
    }

    /// Accumulates `dy xᵀ` and `dy`; returns `Wᵀ dy`.
    fn backward(&self, x: &DVector<f64>, dy: &DVector<f64>, grad: &mut Dense) -> DVector<f64> {
        grad.w.ger(1.0, dy, x, 1.0);
        grad.b += dy;
        self.w.tr_mul(dy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Group {
    Geo,
    Text,
    Trunk,
    Heads,
    Missing,
}

impl Group {
    pub const ALL: [Group; 5] = [Group::Geo, Group::Text, Group::Trunk, Group::Heads, Group::Missing];
}

/// All learnable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub atom1: Dense,
    pub atom2: Dense,
    pub proj: Dense,
    /// Token embedding table, one row per token.
    pub embed: DMatrix<f64>,
    pub text1: Dense,
    pub text2: Dense,
    pub trunk1: Dense,
    pub trunk2: Dense,
    pub reg: Dense,
    pub cls: Dense,
    pub missing: DVector<f64>,
}

impl Params {
    fn shaped(
        cfg: &ModelConfig,
        mut make: impl FnMut(usize, usize) -> Dense,
        embed: DMatrix<f64>,
        missing: DVector<f64>,
    ) -> Self {
        let (d, h, f) = (cfg.embed_dim, cfg.hidden_dim, cfg.feature_dim());
        Self {
            atom1: make(h, f),
            atom2: make(h, h),
            proj: make(d, h),
            embed,
            text1: make(h, d),
            text2: make(d, h),
            trunk1: make(h, 2 * d),
            trunk2: make(h, h),
            reg: make(1, h),
            cls: make(cfg.bin_count, h),
            missing,
        }
    }

    /// Weights uniform in ±1/√fan_in, biases zero, embeddings uniform in ±1.
    pub fn init(cfg: &ModelConfig, vocab: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embed = DMatrix::from_fn(vocab, cfg.embed_dim, |_, _| rng.random_range(-1.0..=1.0));
        let r = 1.0 / (cfg.embed_dim as f64).sqrt();
        let missing = DVector::from_fn(cfg.embed_dim, |_, _| rng.random_range(-r..=r));
        Self::shaped(cfg, |o, i| Dense::init(o, i, &mut rng), embed, missing)
    }

    pub fn zeros_like(&self) -> Self {
        let z = |d: &Dense| Dense::zeros(d.w.nrows(), d.w.ncols());
        Self {
            atom1: z(&self.atom1),
            atom2: z(&self.atom2),
            proj: z(&self.proj),
            embed: DMatrix::zeros(self.embed.nrows(), self.embed.ncols()),
            text1: z(&self.text1),
            text2: z(&self.text2),
            trunk1: z(&self.trunk1),
            trunk2: z(&self.trunk2),
            reg: z(&self.reg),
            cls: z(&self.cls),
            missing: DVector::zeros(self.missing.len()),
        }
    }

    /// Every block with its group, in checkpoint order.
    pub fn blocks(&self) -> Vec<(&'static str, Group, &[f64])> {
        use Group::*;
        vec![
            ("atom1.w", Geo, self.atom1.w.as_slice()),
            ("atom1.b", Geo, self.atom1.b.as_slice()),
            ("atom2.w", Geo, self.atom2.w.as_slice()),
            ("atom2.b", Geo, self.atom2.b.as_slice()),
            ("proj.w", Geo, self.proj.w.as_slice()),
            ("proj.b", Geo, self.proj.b.as_slice()),
            ("embed", Text, self.embed.as_slice()),
            ("text1.w", Text, self.text1.w.as_slice()),
            ("text1.b", Text, self.text1.b.as_slice()),
            ("text2.w", Text, self.text2.w.as_slice()),
            ("text2.b", Text, self.text2.b.as_slice()),
            ("trunk1.w", Trunk, self.trunk1.w.as_slice()),
            ("trunk1.b", Trunk, self.trunk1.b.as_slice()),
            ("trunk2.w", Trunk, self.trunk2.w.as_slice()),
            ("trunk2.b", Trunk, self.trunk2.b.as_slice()),
            ("reg.w", Heads, self.reg.w.as_slice()),
            ("reg.b", Heads, self.reg.b.as_slice()),
            ("cls.w", Heads, self.cls.w.as_slice()),
            ("cls.b", Heads, self.cls.b.as_slice()),
            ("missing", Missing, self.missing.as_slice()),
        ]
    }

    pub fn blocks_mut(&mut self) -> Vec<(&'static str, Group, &mut [f64])> {
        use Group::*;
        vec![
            ("atom1.w", Geo, self.atom1.w.as_mut_slice()),
            ("atom1.b", Geo, self.atom1.b.as_mut_slice()),
            ("atom2.w", Geo, self.atom2.w.as_mut_slice()),
            ("atom2.b", Geo, self.atom2.b.as_mut_slice()),
            ("proj.w", Geo, self.proj.w.as_mut_slice()),
            ("proj.b", Geo, self.proj.b.as_mut_slice()),
            ("embed", Text, self.embed.as_mut_slice()),
            ("text1.w", Text, self.text1.w.as_mut_slice()),
            ("text1.b", Text, self.text1.b.as_mut_slice()),
            ("text2.w", Text, self.text2.w.as_mut_slice()),
            ("text2.b", Text, self.text2.b.as_mut_slice()),
            ("trunk1.w", Trunk, self.trunk1.w.as_mut_slice()),
            ("trunk1.b", Trunk, self.trunk1.b.as_mut_slice()),
            ("trunk2.w", Trunk, self.trunk2.w.as_mut_slice()),
            ("trunk2.b", Trunk, self.trunk2.b.as_mut_slice()),
            ("reg.w", Heads, self.reg.w.as_mut_slice()),
            ("reg.b", Heads, self.reg.b.as_mut_slice()),
            ("cls.w", Heads, self.cls.w.as_mut_slice()),
            ("cls.b", Heads, self.cls.b.as_mut_slice()),
            ("missing", Missing, self.missing.as_mut_slice()),
        ]
    }

    pub fn count(&self) -> usize {
        self.blocks().iter().map(|b| b.2.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.2.iter().all(|x| x.is_finite()))
    }

    pub fn get(&self, flat: usize) -> f64 {
        let mut k = flat;
        for (_, _, s) in self.blocks() {
            if k < s.len() {
                return s[k];
            }
            k -= s.len();
        }
        panic!("parameter index {flat} out of range")
    }

    pub fn set(&mut self, flat: usize, v: f64) {
        let mut k = flat;
        for (_, _, s) in self.blocks_mut() {
            if k < s.len() {
                s[k] = v;
                return;
            }
            k -= s.len();
        }
        panic!("parameter index {flat} out of range")
    }
}

/// Per-sample inputs computed once: atom features, token ids, targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    /// One row per atom.
    pub atoms: DMatrix<f64>,
    pub tokens: Vec<usize>,
    pub unk: usize,
    pub energy: f64,
    pub bin: usize,
}

#[derive(Debug, Clone)]
pub struct GeoCache {
    h1: DMatrix<f64>,
    h2: DMatrix<f64>,
    argmax: Vec<usize>,
    pooled: DVector<f64>,
    pub out: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct TextCache {
    mean: DVector<f64>,
    u: DVector<f64>,
    pub out: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct HeadCache {
    x: DVector<f64>,
    z1: DVector<f64>,
    z2: DVector<f64>,
    pub e_reg: f64,
    pub logits: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub e_reg: f64,
    pub logits: Vec<f64>,
    pub e_cls: f64,
    pub e_final: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub params: Params,
}

fn tanh_inplace<S: nalgebra::StorageMut<f64, R, C>, R: nalgebra::Dim, C: nalgebra::Dim>(
    m: &mut nalgebra::Matrix<f64, R, C, S>,
) {
    m.apply(|x| *x = x.tanh());
}

impl Model {
    pub fn new(config: ModelConfig, vocab: Vocab, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let params = Params::init(&config, vocab.len(), seed);
        Ok(Self { config, vocab, params })
    }

    /// Per-atom features under the strict neighbor list.
    pub fn atom_features(&self, structure: &Structure, nl: &NeighborList) -> Result<DMatrix<f64>, ModelError> {
        let cfg = &self.config;
        let np = cfg.palette.len();
        let spacing = cfg.rbf_max / (cfg.rbf_count - 1) as f64;
        let mut x = DMatrix::zeros(structure.len(), cfg.feature_dim());
        for (i, site) in structure.sites().iter().enumerate() {
            let e = cfg
                .palette
                .iter()
                .position(|p| *p == site.element)
                .ok_or_else(|| ModelError::UnknownElement(site.element.symbol().to_string()))?;
            x[(i, e)] = 1.0;
            let t = match site.tag {
                Tag::Subsurface => 0,
                Tag::Surface => 1,
                Tag::Adsorbate => 2,
            };
            x[(i, np + t)] = 1.0;
            for nb in nl.neighbors_of(i)? {
                for k in 0..cfg.rbf_count {
                    let z = (nb.distance - k as f64 * spacing) / spacing;
                    x[(i, np + 3 + k)] += (-0.5 * z * z).exp();
                }
            }
        }
        Ok(x)
    }

    pub fn structure_features(&self, structure: &Structure) -> Result<DMatrix<f64>, ModelError> {
        let nl = build_neighbor_list(structure, RadiiTable::bundled(), STRICT_SCALE)?;
        self.atom_features(structure, &nl)
    }

    pub fn prepare(&self, sample: &Sample) -> Result<Prepared, ModelError> {
        let atoms = self.structure_features(&sample.structure)?;
        let (tokens, unk) = self.vocab.encode(&sample.config);
        Ok(Prepared {
            atoms,
            tokens,
            unk,
            energy: sample.energy,
            bin: self.config.bin_of(sample.energy),
        })
    }

    pub fn geo_forward(&self, atoms: &DMatrix<f64>) -> GeoCache {
        let p = &self.params;
        let mut h1 = atoms * p.atom1.w.transpose();
        for mut row in h1.row_iter_mut() {
            row += p.atom1.b.transpose();
        }
        tanh_inplace(&mut h1);
        let mut h2 = &h1 * p.atom2.w.transpose();
        for mut row in h2.row_iter_mut() {
            row += p.atom2.b.transpose();
        }
        tanh_inplace(&mut h2);
        let h = h2.ncols();
        let mut argmax = vec![0; h];
        let mut pooled = DVector::zeros(h);
        for k in 0..h {
            let col = h2.column(k);
            let mut best = 0;
            for i in 1..col.len() {
                if col[i] > col[best] {
                    best = i;
                }
            }
            argmax[k] = best;
            pooled[k] = col[best];
        }
        let out = p.proj.apply(&pooled);
        GeoCache {
            h1,
            h2,
            argmax,
            pooled,
            out,
        }
    }

    fn geo_backward(&self, atoms: &DMatrix<f64>, c: &GeoCache, d_out: &DVector<f64>, g: &mut Params) {
        let p = &self.params;
        let d_pooled = p.proj.backward(&c.pooled, d_out, &mut g.proj);
        // only the winning atom of each channel receives gradient
        let h = c.h2.ncols();
        let mut winners: Vec<usize> = c.argmax.clone();
        winners.sort_unstable();
        winners.dedup();
        for &i in &winners {
            let mut dz2 = DVector::zeros(h);
            for (k, &w) in c.argmax.iter().enumerate() {
                if w == i {
                    let y = c.h2[(i, k)];
                    dz2[k] = d_pooled[k] * (1.0 - y * y);
                }
            }
            let h1 = c.h1.row(i).transpose();
            let mut dz1 = p.atom2.backward(&h1, &dz2, &mut g.atom2);
            dz1.zip_apply(&h1, |d, y| *d *= 1.0 - y * y);
            let x = atoms.row(i).transpose();
            p.atom1.backward(&x, &dz1, &mut g.atom1);
        }
    }

    pub fn text_forward(&self, tokens: &[usize]) -> TextCache {
        let p = &self.params;
        let mut mean = DVector::zeros(p.embed.ncols());
        for &t in tokens {
            mean += p.embed.row(t).transpose();
        }
        if !tokens.is_empty() {
            mean /= tokens.len() as f64;
        }
        let mut u = p.text1.apply(&mean);
        tanh_inplace(&mut u);
        let out = p.text2.apply(&u);
        TextCache { mean, u, out }
    }

    fn text_backward(&self, tokens: &[usize], c: &TextCache, d_out: &DVector<f64>, g: &mut Params) {
        let p = &self.params;
        let mut du = p.text2.backward(&c.u, d_out, &mut g.text2);
        du.zip_apply(&c.u, |d, y| *d *= 1.0 - y * y);
        let d_mean = p.text1.backward(&c.mean, &du, &mut g.text1);
        if tokens.is_empty() {
            return;
        }
        let scale = 1.0 / tokens.len() as f64;
        for &t in tokens {
            let mut row = g.embed.row_mut(t);
            row += d_mean.transpose() * scale;
        }
    }

    /// Trunk and both heads. `geo = None` uses the missing-modality vector.
    pub fn head_forward(&self, geo: Option<&DVector<f64>>, text: &DVector<f64>) -> HeadCache {
        let p = &self.params;
        let geo = geo.unwrap_or(&p.missing);
        let d = geo.len();
        let mut x = DVector::zeros(2 * d);
        x.rows_mut(0, d).copy_from(geo);
        x.rows_mut(d, d).copy_from(text);
        let mut z1 = p.trunk1.apply(&x);
        tanh_inplace(&mut z1);
        let mut z2 = p.trunk2.apply(&z1);
        tanh_inplace(&mut z2);
        let raw = p.reg.apply(&z2)[0];
        let e_reg = self.config.energy_center() + raw;
        let logits = p.cls.apply(&z2);
        HeadCache {
            x,
            z1,
            z2,
            e_reg,
            logits,
        }
    }

    /// Returns the gradient with respect to the trunk input `[geo | text]`.
    fn head_backward(&self, c: &HeadCache, d_reg: f64, d_logits: &DVector<f64>, g: &mut Params) -> DVector<f64> {
        let p = &self.params;
        let d_raw = DVector::from_element(1, d_reg);
        let mut dz2 = p.reg.backward(&c.z2, &d_raw, &mut g.reg);
        dz2 += p.cls.backward(&c.z2, d_logits, &mut g.cls);
        dz2.zip_apply(&c.z2, |d, y| *d *= 1.0 - y * y);
        let mut dz1 = p.trunk2.backward(&c.z1, &dz2, &mut g.trunk2);
        dz1.zip_apply(&c.z1, |d, y| *d *= 1.0 - y * y);
        p.trunk1.backward(&c.x, &dz1, &mut g.trunk1)
    }

    pub fn finish(&self, c: &HeadCache) -> Prediction {
        let logits: Vec<f64> = c.logits.iter().copied().collect();
        let mut best = 0;
        for k in 1..logits.len() {
            if logits[k] > logits[best] {
                best = k;
            }
        }
        let e_cls = self.config.bin_midpoint(best);
        Prediction {
            e_reg: c.e_reg,
            logits,
            e_cls,
            e_final: 0.5 * (c.e_reg + e_cls),
        }
    }

    pub fn encode_structure(&self, structure: &Structure) -> Result<DVector<f64>, ModelError> {
        Ok(self.geo_forward(&self.structure_features(structure)?).out)
    }

    pub fn encode_text(&self, cs: &ConfigString) -> DVector<f64> {
        self.text_forward(&self.vocab.encode(cs).0).out
    }

    pub fn predict(&self, geo: Option<&DVector<f64>>, text: &DVector<f64>) -> Prediction {
        self.finish(&self.head_forward(geo, text))
    }

    /// Prediction from the string alone; the geometric slot gets the
    /// missing-modality vector.
    pub fn predict_text_only(&self, cs: &ConfigString) -> Prediction {
        self.predict(None, &self.encode_text(cs))
    }

    pub fn predict_prepared(&self, p: &Prepared, text_only: bool) -> Prediction {
        let text = self.text_forward(&p.tokens).out;
        if text_only {
            self.predict(None, &text)
        } else {
            let geo = self.geo_forward(&p.atoms).out;
            self.predict(Some(&geo), &text)
        }
    }
}
