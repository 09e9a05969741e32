//! Deterministic synthetic adsorption systems and a Morse-sum energy oracle.
//!
//! Slabs are fcc-like (100), (110) and (111) surfaces built from one or two
//! catalyst elements; one adsorbate group sits on an atop, bridge or hollow
//! site. Everything is a pure function of the generator seed and a sample
//! index, so datasets are byte-stable and can be generated in any order.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cif::{parse_cif, write_cif, CifError, TAG_COLUMN};
use crate::dataset::Sample;
use crate::neighbors::{build_neighbor_list, NeighborError, STRICT_SCALE};
use crate::radii::{Element, RadiiTable};
use crate::stringify::{three_part_string, StringifyError, SystemMeta};
use crate::structure::{min_image_distance, Composition, Lattice, Structure, StructureError, Tag};

/// Pairs farther apart than this do not contribute to the oracle energy, Å.
pub const ORACLE_CUTOFF: f64 = 6.0;

/// Cartesian noise applied to every atom of an indicative structure, Å.
pub const INDICATIVE_SIGMA: f64 = 0.3;

/// Fraction of the contact distance `r_i + r_j` at which an adsorbate anchor
/// is placed before jitter.
const CONTACT_FRACTION: f64 = 0.95;
const MIN_ANCHOR_HEIGHT: f64 = 0.6;
const SLAB_FLOOR: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("no structure to evaluate: {0}")]
    NoAdsorbate(String),
    #[error("metadata {0:?} cannot be realised with this generator")]
    UnrealizableMeta(SystemMeta),
    #[error("invalid generator settings: {0}")]
    BadSpec(String),
    #[error(transparent)]
    Structure(#[from] StructureError),
    #[error(transparent)]
    Cif(#[from] CifError),
    #[error(transparent)]
    Neighbor(#[from] NeighborError),
    #[error(transparent)]
    Stringify(#[from] StringifyError),
}

pub(crate) fn hash64(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("digest has 32 bytes"))
}

fn unit_interval(x: u64) -> f64 {
    (x >> 11) as f64 / (1u64 << 53) as f64
}

/// Morse parameters for every element pair, derived from a seeded hash of
/// the (sorted) pair so the table needs no storage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OracleParams {
    pub seed: u64,
}

impl Default for OracleParams {
    fn default() -> Self {
        Self { seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MorsePair {
    /// Well depth, eV, in [0.1, 1.0].
    pub depth: f64,
    /// Width, 1/Å, in [1.0, 2.0].
    pub width: f64,
    /// Equilibrium distance `r_i + r_j`, Å.
    pub r0: f64,
}

impl MorsePair {
    pub fn energy(&self, d: f64) -> f64 {
        let x = 1.0 - (-self.width * (d - self.r0)).exp();
        self.depth * (x * x - 1.0)
    }
}

impl OracleParams {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn pair(&self, a: Element, b: Element) -> MorsePair {
        let (x, y) = if a <= b { (a, b) } else { (b, a) };
        let key = format!("{}-{}", x.symbol(), y.symbol());
        let seed = self.seed.to_le_bytes();
        let u = unit_interval(hash64(&[b"depth", &seed, key.as_bytes()]));
        let v = unit_interval(hash64(&[b"width", &seed, key.as_bytes()]));
        MorsePair {
            depth: 0.1 + 0.9 * u,
            width: 1.0 + v,
            r0: a.covalent_radius() + b.covalent_radius(),
        }
    }
}

/// Sum of Morse terms over adsorbate × non-adsorbate pairs within
/// [`ORACLE_CUTOFF`] (minimum image), eV.
pub fn oracle_energy(structure: &Structure, params: &OracleParams) -> Result<f64, SynthError> {
    let ads = structure.adsorbate_indices();
    if ads.is_empty() {
        return Err(SynthError::NoAdsorbate("structure has no adsorbate sites".into()));
    }
    let sites = structure.sites();
    let mut e = 0.0;
    for &i in &ads {
        for sj in sites {
            if sj.is_adsorbate() {
                continue;
            }
            let d = min_image_distance(structure.lattice(), sites[i].frac(), sj.frac());
            if d <= ORACLE_CUTOFF {
                e += params.pair(sites[i].element, sj.element).energy(d);
            }
        }
    }
    Ok(e)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Facet {
    F100,
    F110,
    F111,
}

impl Facet {
    pub const ALL: [Facet; 3] = [Facet::F100, Facet::F110, Facet::F111];

    pub fn miller(self) -> [i32; 3] {
        match self {
            Facet::F100 => [1, 0, 0],
            Facet::F110 => [1, 1, 0],
            Facet::F111 => [1, 1, 1],
        }
    }

    pub fn from_miller(m: [i32; 3]) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.miller() == m)
    }

    /// In-plane cell vectors, layer spacing and per-layer offset (in units of
    /// the in-plane vectors) for an fcc crystal of cubic constant `a`.
    fn geometry(self, a: f64) -> ([f64; 2], [f64; 2], f64, fn(usize) -> [f64; 2]) {
        let s = a / 2f64.sqrt();
        match self {
            Facet::F100 => ([s, 0.0], [0.0, s], a / 2.0, |l| {
                let o = (l % 2) as f64 * 0.5;
                [o, o]
            }),
            Facet::F110 => ([s, 0.0], [0.0, a], s / 2.0, |l| {
                let o = (l % 2) as f64 * 0.5;
                [o, o]
            }),
            Facet::F111 => ([s, 0.0], [s / 2.0, s * 3f64.sqrt() / 2.0], a / 3f64.sqrt(), |l| {
                let o = (l % 3) as f64 / 3.0;
                [o, o]
            }),
        }
    }

    /// Lateral offsets (surface-cell units) of atop, bridge and hollow sites
    /// relative to a top-layer atom.
    fn site_offsets(self) -> [(SiteKind, [f64; 2]); 3] {
        let hollow = match self {
            Facet::F111 => [1.0 / 3.0, 1.0 / 3.0],
            _ => [0.5, 0.5],
        };
        [
            (SiteKind::Atop, [0.0, 0.0]),
            (SiteKind::Bridge, [0.5, 0.0]),
            (SiteKind::Hollow, hollow),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SiteKind {
    Atop,
    Bridge,
    Hollow,
}

/// One (adsorbate, catalyst, facet) combination.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemSpec {
    pub adsorbate: String,
    pub catalyst: Vec<Element>,
    pub facet: Facet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenSpec {
    pub palette: Vec<Element>,
    /// In-plane repeats along u, v and number of layers.
    pub dims: [usize; 3],
    /// Range of the cubic lattice constant, Å.
    pub lattice_range: (f64, f64),
    pub adsorbates: Vec<String>,
    /// Standard deviation of the adsorbate placement noise, Å.
    pub jitter: f64,
    /// Empty space above the top layer, Å.
    pub vacuum: f64,
    pub seed: u64,
    pub oracle: OracleParams,
}

impl Default for GenSpec {
    fn default() -> Self {
        let el = |s| Element::from_symbol(s).expect("bundled element");
        Self {
            palette: ["Cu", "Al", "As", "Pt", "H", "C", "O"].into_iter().map(el).collect(),
            dims: [3, 3, 3],
            lattice_range: (3.5, 4.5),
            adsorbates: ["H", "O", "C", "CH", "OH", "CCH3"].into_iter().map(String::from).collect(),
            jitter: 0.2,
            vacuum: 12.0,
            seed: 0,
            oracle: OracleParams::default(),
        }
    }
}

/// Internal geometry of each adsorbate group relative to its anchor atom
/// (first atom), Å. Atoms are listed in label order.
fn adsorbate_geometry(label: &str) -> Option<Vec<(&'static str, [f64; 3])>> {
    let h3 = |z0: f64| {
        (0..3).map(move |k| {
            let t = k as f64 * 2.0 * std::f64::consts::PI / 3.0;
            ("H", [1.03 * t.cos(), 1.03 * t.sin(), z0 + 0.36])
        })
    };
    Some(match label {
        "H" => vec![("H", [0.0; 3])],
        "O" => vec![("O", [0.0; 3])],
        "C" => vec![("C", [0.0; 3])],
        "CH" => vec![("C", [0.0; 3]), ("H", [0.0, 0.0, 1.09])],
        "OH" => vec![("O", [0.0; 3]), ("H", [0.0, 0.0, 0.97])],
        "CCH3" => {
            let mut v = vec![("C", [0.0; 3]), ("C", [0.0, 0.0, 1.50])];
            v.extend(h3(1.50));
            v
        }
        _ => return None,
    })
}

impl GenSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::BadSpec(m.to_string()));
        if self.dims.iter().any(|&d| d == 0) {
            return bad("dims must be at least 1");
        }
        if !(self.lattice_range.0 > 0.0 && self.lattice_range.0 <= self.lattice_range.1) {
            return bad("lattice range must be positive and ordered");
        }
        if !(self.jitter >= 0.0 && self.vacuum > 0.0) {
            return bad("jitter must be non-negative and vacuum positive");
        }
        for label in &self.adsorbates {
            let geo = adsorbate_geometry(label).ok_or_else(|| SynthError::BadSpec(format!("unknown adsorbate `{label}`")))?;
            for (sym, _) in geo {
                if !self.palette.iter().any(|e| e.symbol() == sym) {
                    return bad(&format!("adsorbate element {sym} not in palette"));
                }
            }
        }
        if self.catalyst_elements().is_empty() {
            return bad("palette has no catalyst elements");
        }
        Ok(())
    }

    /// Palette elements that do not appear in any adsorbate, in palette order.
    pub fn catalyst_elements(&self) -> Vec<Element> {
        let ads: Vec<&str> = self
            .adsorbates
            .iter()
            .filter_map(|l| adsorbate_geometry(l))
            .flatten()
            .map(|(s, _)| s)
            .collect();
        self.palette.iter().copied().filter(|e| !ads.contains(&e.symbol())).collect()
    }

    /// Every system the generator can emit, in a fixed order: catalysts
    /// (unary then binary) × facets × adsorbates.
    pub fn systems(&self) -> Vec<SystemSpec> {
        let cat = self.catalyst_elements();
        let mut catalysts: Vec<Vec<Element>> = cat.iter().map(|&e| vec![e]).collect();
        for i in 0..cat.len() {
            for j in i + 1..cat.len() {
                catalysts.push(vec![cat[i], cat[j]]);
            }
        }
        let mut out = Vec::new();
        for c in &catalysts {
            for facet in Facet::ALL {
                for a in &self.adsorbates {
                    out.push(SystemSpec {
                        adsorbate: a.clone(),
                        catalyst: c.clone(),
                        facet,
                    });
                }
            }
        }
        out
    }

    /// Close-packed lattice constant: nearest neighbors sit at 95-99% of the
    /// mean covalent contact distance, clamped into `lattice_range`.
    fn lattice_constant(&self, catalyst: &[Element]) -> f64 {
        let key: String = catalyst.iter().map(|e| e.symbol()).collect::<Vec<_>>().join("-");
        let u = unit_interval(hash64(&[b"lattice", &self.seed.to_le_bytes(), key.as_bytes()]));
        let r = catalyst.iter().map(|e| e.covalent_radius()).sum::<f64>() / catalyst.len() as f64;
        let a = 2.0 * 2f64.sqrt() * r * (0.95 + 0.04 * u);
        a.clamp(self.lattice_range.0, self.lattice_range.1)
    }

    fn rng(&self, stream: &[u8], index: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(hash64(&[stream, &self.seed.to_le_bytes(), &index.to_le_bytes()]))
    }

    pub fn meta_of(&self, sys: &SystemSpec) -> SystemMeta {
        let slab = self.slab(sys);
        let formula = Composition::from_elements(slab.atoms.iter().map(|a| a.0)).to_string();
        SystemMeta {
            adsorbate: sys.adsorbate.clone(),
            formula,
            miller: sys.facet.miller(),
        }
    }

    pub fn find_system(&self, meta: &SystemMeta) -> Option<SystemSpec> {
        self.systems().into_iter().find(|s| {
            s.adsorbate == meta.adsorbate && s.facet.miller() == meta.miller && self.meta_of(s).formula == meta.formula
        })
    }

    fn slab(&self, sys: &SystemSpec) -> Slab {
        let a = self.lattice_constant(&sys.catalyst);
        let (u, v, dz, offset) = sys.facet.geometry(a);
        let [nx, ny, nz] = self.dims;
        let height = SLAB_FLOOR + (nz - 1) as f64 * dz + self.vacuum;
        let lattice = Lattice::new([
            [u[0] * nx as f64, u[1] * nx as f64, 0.0],
            [v[0] * ny as f64, v[1] * ny as f64, 0.0],
            [0.0, 0.0, height],
        ])
        .expect("slab lattice is right-handed");
        let mut atoms = Vec::with_capacity(nx * ny * nz);
        for l in 0..nz {
            let o = offset(l);
            for i in 0..nx {
                for j in 0..ny {
                    let (fi, fj) = (i as f64 + o[0], j as f64 + o[1]);
                    let pos = Vector3::new(fi * u[0] + fj * v[0], fi * u[1] + fj * v[1], SLAB_FLOOR + l as f64 * dz);
                    let el = sys.catalyst[(i + j + l) % sys.catalyst.len()];
                    let tag = if l + 1 == nz { Tag::Surface } else { Tag::Subsurface };
                    atoms.push((el, pos, tag));
                }
            }
        }
        Slab {
            lattice,
            atoms,
            u,
            v,
            top_z: SLAB_FLOOR + (nz - 1) as f64 * dz,
        }
    }

    /// Places the adsorbate group of `sys` at the given site, before jitter.
    fn place(&self, sys: &SystemSpec, slab: &Slab, kind_index: usize, cell: (usize, usize)) -> Vector3<f64> {
        let (_, off) = sys.facet.site_offsets()[kind_index];
        let nz = self.dims[2];
        let o = sys.facet.geometry(1.0).3(nz - 1);
        let (fi, fj) = (cell.0 as f64 + o[0] + off[0], cell.1 as f64 + o[1] + off[1]);
        let lateral = Vector3::new(fi * slab.u[0] + fj * slab.v[0], fi * slab.u[1] + fj * slab.v[1], slab.top_z);
        let anchor = Element::from_symbol(adsorbate_geometry(&sys.adsorbate).expect("validated")[0].0).expect("bundled");
        // nearest top-layer atom in-plane (minimum image)
        let mut best = (f64::INFINITY, anchor);
        for (el, pos, tag) in &slab.atoms {
            if *tag != Tag::Surface {
                continue;
            }
            let d = min_image_distance(
                &slab.lattice,
                &slab.lattice.to_fractional(&lateral),
                &slab.lattice.to_fractional(pos),
            );
            if d < best.0 {
                best = (d, *el);
            }
        }
        let target = CONTACT_FRACTION * (anchor.covalent_radius() + best.1.covalent_radius());
        let h = (target * target - best.0 * best.0).max(MIN_ANCHOR_HEIGHT * MIN_ANCHOR_HEIGHT).sqrt();
        lateral + Vector3::new(0.0, 0.0, h)
    }

    fn assemble(&self, sys: &SystemSpec, slab: &Slab, anchor: Vector3<f64>) -> Result<Structure, SynthError> {
        let mut atoms = slab.atoms.clone();
        for (sym, rel) in adsorbate_geometry(&sys.adsorbate).expect("validated") {
            let el = Element::from_symbol(sym).expect("bundled");
            atoms.push((el, anchor + Vector3::from(rel), Tag::Adsorbate));
        }
        Ok(Structure::from_cartesian(slab.lattice, atoms)?)
    }

    fn random_configuration(&self, sys: &SystemSpec, slab: &Slab, rng: &mut ChaCha8Rng) -> Vector3<f64> {
        let kind = rng.random_range(0..3);
        let cell = (rng.random_range(0..self.dims[0]), rng.random_range(0..self.dims[1]));
        let base = self.place(sys, slab, kind, cell);
        base + self.jitter_vector(rng, self.jitter)
    }

    fn jitter_vector(&self, rng: &mut ChaCha8Rng, sigma: f64) -> Vector3<f64> {
        if sigma == 0.0 {
            return Vector3::zeros();
        }
        let n = Normal::new(0.0, sigma).expect("finite sigma");
        Vector3::new(n.sample(rng), n.sample(rng), n.sample(rng))
    }

    /// Structure of configuration `config` of system `system`.
    pub fn configuration(&self, system: usize, config: u64) -> Result<(SystemSpec, Structure), SynthError> {
        let systems = self.systems();
        let sys = systems
            .get(system)
            .cloned()
            .ok_or_else(|| SynthError::BadSpec(format!("system {system} out of range")))?;
        let slab = self.slab(&sys);
        let mut rng = self.rng(b"config", (system as u64) << 32 | config);
        let anchor = self.random_configuration(&sys, &slab, &mut rng);
        let s = self.assemble(&sys, &slab, anchor)?;
        Ok((sys, s))
    }
}

/// Lowest oracle energy of `sys` over un-jittered atop, bridge and hollow
/// placements above every surface cell.
pub fn ground_state_energy(spec: &GenSpec, sys: &SystemSpec) -> Result<f64, SynthError> {
    spec.validate()?;
    let slab = spec.slab(sys);
    let mut best = f64::INFINITY;
    for kind in 0..3 {
        for i in 0..spec.dims[0] {
            for j in 0..spec.dims[1] {
                let anchor = spec.place(sys, &slab, kind, (i, j));
                best = best.min(oracle_energy(&spec.assemble(sys, &slab, anchor)?, &spec.oracle)?);
            }
        }
    }
    Ok(best)
}

#[derive(Debug, Clone)]
struct Slab {
    lattice: Lattice,
    atoms: Vec<(Element, Vector3<f64>, Tag)>,
    u: [f64; 2],
    v: [f64; 2],
    top_z: f64,
}

pub fn data_block_name(meta: &SystemMeta) -> String {
    format!(
        "{}_{}{}{}_{}",
        meta.formula, meta.miller[0], meta.miller[1], meta.miller[2], meta.adsorbate
    )
}

/// Sample `index` of the dataset defined by `spec`: system `index mod S`,
/// configuration `index div S`, where `S` is the number of systems.
pub fn generate_system(spec: &GenSpec, index: u64) -> Result<Sample, SynthError> {
    spec.validate()?;
    let n = spec.systems().len() as u64;
    let (sys, raw) = spec.configuration((index % n) as usize, index / n)?;
    let meta = spec.meta_of(&sys);
    sample_from_structure(&raw, &meta, &spec.oracle)
}

/// Snaps a structure to its CIF representation and derives the strict
/// configuration string and energy from the snapped copy, so a sample read
/// back from disk reproduces exactly.
pub fn sample_from_structure(raw: &Structure, meta: &SystemMeta, oracle: &OracleParams) -> Result<Sample, SynthError> {
    let structure = parse_cif(&write_cif(raw, &data_block_name(meta)))?.structure;
    let nl = build_neighbor_list(&structure, RadiiTable::bundled(), STRICT_SCALE)?;
    let config = three_part_string(&structure, meta, &nl)?;
    let energy = oracle_energy(&structure, oracle)?;
    Ok(Sample {
        structure,
        meta: meta.clone(),
        config,
        energy,
    })
}

/// An imprecise structure for `meta`, mimicking a generative model trained
/// on relaxed structures: the most stable of the atop/bridge/hollow sites is
/// chosen, every coordinate is perturbed by [`INDICATIVE_SIGMA`], tags are
/// dropped half of the time, and trailing text follows a blank line.
pub fn generate_indicative_cif(spec: &GenSpec, meta: &SystemMeta, index: u64) -> Result<String, SynthError> {
    spec.validate()?;
    let sys = spec
        .find_system(meta)
        .ok_or_else(|| SynthError::UnrealizableMeta(meta.clone()))?;
    let slab = spec.slab(&sys);
    let mut rng = spec.rng(format!("indicative:{}", data_block_name(meta)).as_bytes(), index);
    let cell = (rng.random_range(0..spec.dims[0]), rng.random_range(0..spec.dims[1]));
    let mut best: Option<(f64, Vector3<f64>)> = None;
    for kind in 0..3 {
        let anchor = spec.place(&sys, &slab, kind, cell);
        let e = oracle_energy(&spec.assemble(&sys, &slab, anchor)?, &spec.oracle)?;
        if best.is_none_or(|(b, _)| e < b) {
            best = Some((e, anchor));
        }
    }
    let anchor = best.expect("three candidates").1 + spec.jitter_vector(&mut rng, spec.jitter);
    let clean = spec.assemble(&sys, &slab, anchor)?;

    let noisy: Vec<_> = (0..clean.len())
        .map(|i| {
            let s = &clean.sites()[i];
            (s.element, clean.cartesian(i) + spec.jitter_vector(&mut rng, INDICATIVE_SIGMA), s.tag)
        })
        .collect();
    let noisy = Structure::from_cartesian(*clean.lattice(), noisy)?;
    let mut text = write_cif(&noisy, &data_block_name(meta));
    if rng.random_bool(0.5) {
        text = strip_tag_column(&text);
    }
    text.push_str("\n\n_generation_continued\nloop_ junk tokens </s> data_");
    text.push_str(&index.to_string());
    text.push('\n');
    Ok(text)
}

/// Removes the tag column from text produced by [`write_cif`].
pub fn strip_tag_column(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut in_rows = false;
    for line in text.lines() {
        if line == TAG_COLUMN {
            in_rows = true;
            continue;
        }
        if in_rows {
            if let Some((head, _)) = line.rsplit_once(' ') {
                out.push_str(head);
                out.push('\n');
                continue;
            }
        }
        out.push_str(line);
        out.push('\n');
    }
    out
}
