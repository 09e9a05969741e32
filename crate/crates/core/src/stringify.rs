//! Three-part configuration strings:
//!
//! ```text
//! data <adsorbate></s><catalyst formula> (h k l)</s>primary <El>x<n> ... secondary <El>x<n> ...
//! ```
//!
//! The BNF and golden examples live in `docs/string-grammar.md`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::neighbors::{neighbors_within, NeighborError, NeighborList, PERMISSIVE_SCALE};
use crate::radii::{Element, RadiiTable, UnknownElement};
use crate::structure::{split_formula, Composition, Structure, Tag};

pub const SEPARATOR: &str = "</s>";

/// Non-adsorbate sites within this distance of the highest one form the
/// topmost layer, Å.
pub const TOP_LAYER_TOLERANCE: f64 = 0.5;

/// Heights closer than this are treated as equal when choosing an anchor, Å.
pub const HEIGHT_RESOLUTION: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StringifyError {
    #[error("structure has no adsorbate sites")]
    NoAdsorbate,
    #[error("no candidate adsorbate atom matches the metadata")]
    AmbiguousAdsorbate,
    #[error("invalid metadata: {0}")]
    BadMeta(String),
    #[error("malformed configuration string: {0}")]
    BadString(String),
    #[error(transparent)]
    UnknownElement(#[from] UnknownElement),
    #[error(transparent)]
    Neighbor(#[from] NeighborError),
}

/// Adsorbate label, catalyst formula and facet of one adsorption system.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SystemMeta {
    /// Adsorbate label as written in the string, e.g. `CCH3`.
    pub adsorbate: String,
    /// Canonical catalyst formula, e.g. `Al12As12`.
    pub formula: String,
    pub miller: [i32; 3],
}

impl SystemMeta {
    pub fn new(adsorbate: &str, formula: &str, miller: [i32; 3]) -> Result<Self, StringifyError> {
        let meta = Self {
            adsorbate: adsorbate.to_string(),
            formula: formula.to_string(),
            miller,
        };
        meta.validate()?;
        Ok(meta)
    }

    pub fn validate(&self) -> Result<(), StringifyError> {
        if self.adsorbate_symbols()?.is_empty() {
            return Err(StringifyError::BadMeta("empty adsorbate".into()));
        }
        if self.miller == [0, 0, 0] {
            return Err(StringifyError::BadMeta("Miller indices all zero".into()));
        }
        Composition::parse(&self.formula).map_err(|e| StringifyError::BadMeta(e.to_string()))?;
        Ok(())
    }

    /// Adsorbate atoms in label order: `CCH3` → C, C, H, H, H.
    pub fn adsorbate_symbols(&self) -> Result<Vec<Element>, StringifyError> {
        let groups = split_formula(&self.adsorbate)
            .ok_or_else(|| StringifyError::BadMeta(format!("bad adsorbate `{}`", self.adsorbate)))?;
        let mut out = Vec::new();
        for (sym, n) in groups {
            let el = Element::from_symbol(&sym)?;
            out.extend(std::iter::repeat_n(el, n));
        }
        Ok(out)
    }

    /// Composition of catalyst plus adsorbate, the expected content of a
    /// generated file for this system.
    pub fn total_formula(&self) -> Result<String, StringifyError> {
        let cat = Composition::parse(&self.formula).map_err(|e| StringifyError::BadMeta(e.to_string()))?;
        let ads = Composition::from_elements(self.adsorbate_symbols()?);
        Ok(cat.merged(&ads).to_string())
    }

    pub fn miller_text(&self) -> String {
        format!("({} {} {})", self.miller[0], self.miller[1], self.miller[2])
    }
}

/// Element counts of the primary and secondary interacting atoms.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct ConfigCounts {
    pub primary: BTreeMap<Element, usize>,
    pub secondary: BTreeMap<Element, usize>,
}

impl ConfigCounts {
    fn from_sets(structure: &Structure, primary: &BTreeSet<usize>, secondary: &BTreeSet<usize>) -> Self {
        let count = |set: &BTreeSet<usize>| {
            let mut m = BTreeMap::new();
            for &i in set {
                *m.entry(structure.sites()[i].element).or_insert(0) += 1;
            }
            m
        };
        Self {
            primary: count(primary),
            secondary: count(secondary),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.primary.is_empty() && self.secondary.is_empty()
    }
}

impl fmt::Display for ConfigCounts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let group = |f: &mut fmt::Formatter<'_>, name: &str, m: &BTreeMap<Element, usize>| {
            write!(f, "{name}")?;
            if m.is_empty() {
                return write!(f, " none");
            }
            for (el, n) in m {
                write!(f, " {el}x{n}")?;
            }
            Ok(())
        };
        group(f, "primary", &self.primary)?;
        f.write_str(" ")?;
        group(f, "secondary", &self.secondary)
    }
}

impl std::str::FromStr for ConfigCounts {
    type Err = StringifyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || StringifyError::BadString(format!("configuration segment `{s}`"));
        let words: Vec<&str> = s.split_whitespace().collect();
        let split = words.iter().position(|w| *w == "secondary").ok_or_else(bad)?;
        if words.first() != Some(&"primary") {
            return Err(bad());
        }
        let group = |ws: &[&str]| -> Result<BTreeMap<Element, usize>, StringifyError> {
            if ws == ["none"] {
                return Ok(BTreeMap::new());
            }
            if ws.is_empty() {
                return Err(bad());
            }
            let mut m = BTreeMap::new();
            for w in ws {
                let (sym, n) = w.split_once('x').ok_or_else(bad)?;
                let n: usize = n.parse().map_err(|_| bad())?;
                if n == 0 || m.insert(Element::from_symbol(sym)?, n).is_some() {
                    return Err(bad());
                }
            }
            Ok(m)
        };
        Ok(Self {
            primary: group(&words[1..split])?,
            secondary: group(&words[split + 1..])?,
        })
    }
}

/// Parsed form of a configuration string. Two-part prompts have an empty
/// third segment and no trailing separator.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ConfigString {
    text: String,
    meta: SystemMeta,
    config: Option<ConfigCounts>,
}

impl ConfigString {
    fn build(meta: &SystemMeta, config: Option<ConfigCounts>) -> Self {
        let mut text = format!("data {}{SEPARATOR}{} {}", meta.adsorbate, meta.formula, meta.miller_text());
        if let Some(c) = &config {
            text.push_str(SEPARATOR);
            text.push_str(&c.to_string());
        }
        Self {
            text,
            meta: meta.clone(),
            config,
        }
    }

    pub fn parse(text: &str) -> Result<Self, StringifyError> {
        let bad = |why: &str| StringifyError::BadString(format!("{why}: `{text}`"));
        let segs: Vec<&str> = text.split(SEPARATOR).collect();
        if !(2..=3).contains(&segs.len()) {
            return Err(bad("expected one or two separators"));
        }
        let adsorbate = segs[0].strip_prefix("data ").ok_or_else(|| bad("missing `data `"))?;
        let (formula, miller) = segs[1].split_once(" (").ok_or_else(|| bad("missing facet"))?;
        let miller = miller.strip_suffix(')').ok_or_else(|| bad("unterminated facet"))?;
        let idx: Vec<i32> = miller
            .split(' ')
            .map(|x| x.parse().map_err(|_| bad("bad Miller index")))
            .collect::<Result<_, _>>()?;
        let miller: [i32; 3] = idx.try_into().map_err(|_| bad("need three Miller indices"))?;
        let meta = SystemMeta::new(adsorbate, formula, miller)?;
        let config = match segs.get(2) {
            Some(seg) => Some(seg.parse()?),
            None => None,
        };
        let out = Self::build(&meta, config);
        if out.text != text {
            return Err(bad("not in canonical form"));
        }
        Ok(out)
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn meta(&self) -> &SystemMeta {
        &self.meta
    }

    /// Segment 3, `None` for a two-part prompt.
    pub fn config(&self) -> Option<&ConfigCounts> {
        self.config.as_ref()
    }

    pub fn segments(&self) -> [String; 3] {
        let mut it = self.text.splitn(3, SEPARATOR);
        std::array::from_fn(|_| it.next().unwrap_or("").to_string())
    }

    /// The same system with segment 3 dropped.
    pub fn without_config(&self) -> Self {
        Self::build(&self.meta, None)
    }
}

impl fmt::Display for ConfigString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

/// Primary: non-adsorbate sites bonded to any adsorbate site. Secondary:
/// non-adsorbate, non-primary sites bonded to any primary site.
pub fn interacting_atoms(
    structure: &Structure,
    nl_strict: &NeighborList,
) -> Result<(BTreeSet<usize>, BTreeSet<usize>), StringifyError> {
    let ads = structure.adsorbate_indices();
    if ads.is_empty() {
        return Err(StringifyError::NoAdsorbate);
    }
    let is_ads = |i: usize| structure.sites()[i].is_adsorbate();
    let mut primary = BTreeSet::new();
    for &a in &ads {
        for n in nl_strict.neighbors_of(a)? {
            if !is_ads(n.index) {
                primary.insert(n.index);
            }
        }
    }
    let mut secondary = BTreeSet::new();
    for &p in &primary {
        for n in nl_strict.neighbors_of(p)? {
            if !is_ads(n.index) && !primary.contains(&n.index) {
                secondary.insert(n.index);
            }
        }
    }
    Ok((primary, secondary))
}

pub fn three_part_string(
    structure: &Structure,
    meta: &SystemMeta,
    nl_strict: &NeighborList,
) -> Result<ConfigString, StringifyError> {
    let (primary, secondary) = interacting_atoms(structure, nl_strict)?;
    let counts = ConfigCounts::from_sets(structure, &primary, &secondary);
    Ok(ConfigString::build(meta, Some(counts)))
}

pub fn two_part_prompt(meta: &SystemMeta) -> ConfigString {
    ConfigString::build(meta, None)
}

/// Heights along the a×b normal with the origin placed just above the
/// widest empty gap in c, so a slab that straddles the cell boundary reads
/// as one contiguous block with the vacuum on top.
pub fn slab_heights(structure: &Structure) -> Vec<f64> {
    let lat = structure.lattice();
    let c_perp = lat.vector(2).dot(&lat.surface_normal());
    let mut fc: Vec<f64> = structure.sites().iter().map(|s| s.frac().z).collect();
    let mut sorted = fc.clone();
    sorted.sort_by(f64::total_cmp);
    let mut best_gap = sorted[0] + 1.0 - sorted[sorted.len() - 1];
    let mut origin = sorted[0];
    for w in sorted.windows(2) {
        if w[1] - w[0] > best_gap {
            best_gap = w[1] - w[0];
            origin = w[1];
        }
    }
    for f in &mut fc {
        *f = (*f - origin).rem_euclid(1.0);
    }
    fc.into_iter().map(|f| f * c_perp).collect()
}

/// Picks adsorbate sites for a file without tags: for each adsorbate
/// element, the highest sites of that element, as many as the label needs.
pub fn infer_adsorbate_sites(structure: &Structure, meta: &SystemMeta) -> Result<Vec<usize>, StringifyError> {
    let heights = slab_heights(structure);
    let needed = Composition::from_elements(meta.adsorbate_symbols()?);
    let mut chosen = Vec::new();
    for (el, &n) in needed.counts() {
        let mut candidates: Vec<usize> = (0..structure.len())
            .filter(|&i| structure.sites()[i].element == *el)
            .collect();
        if candidates.is_empty() {
            return Err(StringifyError::AmbiguousAdsorbate);
        }
        candidates.sort_by(|&a, &b| heights[b].total_cmp(&heights[a]).then(a.cmp(&b)));
        chosen.extend(candidates.into_iter().take(n));
    }
    chosen.sort_unstable();
    Ok(chosen)
}

/// Re-tags a structure given its adsorbate sites: the topmost non-adsorbate
/// layer becomes `Surface`, the rest `Subsurface`.
pub fn retag(structure: &Structure, adsorbate: &[usize]) -> Structure {
    let heights = slab_heights(structure);
    let is_ads = |i: usize| adsorbate.contains(&i);
    let top = (0..structure.len())
        .filter(|&i| !is_ads(i))
        .map(|i| heights[i])
        .fold(f64::NEG_INFINITY, f64::max);
    let tags: Vec<Tag> = (0..structure.len())
        .map(|i| {
            if is_ads(i) {
                Tag::Adsorbate
            } else if heights[i] >= top - TOP_LAYER_TOLERANCE {
                Tag::Surface
            } else {
                Tag::Subsurface
            }
        })
        .collect();
    structure.with_tags(&tags)
}

/// Lowest adsorbate atom above the topmost surface layer; ties within
/// [`HEIGHT_RESOLUTION`] go to the lowest index.
pub fn permissive_anchor(structure: &Structure) -> Result<usize, StringifyError> {
    let heights = slab_heights(structure);
    let mut best: Option<usize> = None;
    for i in structure.adsorbate_indices() {
        match best {
            Some(b) if heights[i] >= heights[b] - HEIGHT_RESOLUTION => {}
            _ => best = Some(i),
        }
    }
    best.ok_or(StringifyError::NoAdsorbate)
}

/// Configuration string for an imprecise ("indicative") structure: one
/// anchor atom, neighbors at [`PERMISSIVE_SCALE`]. Files without tags have
/// their adsorbate identified from `meta`.
pub fn permissive_config_string(
    structure: &Structure,
    meta: &SystemMeta,
    radii: &RadiiTable,
) -> Result<ConfigString, StringifyError> {
    let tagged;
    let structure = if structure.adsorbate_indices().is_empty() {
        let ads = infer_adsorbate_sites(structure, meta)?;
        tagged = retag(structure, &ads);
        &tagged
    } else {
        structure
    };
    let anchor = permissive_anchor(structure)?;
    let is_ads = |i: usize| structure.sites()[i].is_adsorbate();
    let primary: BTreeSet<usize> = neighbors_within(structure, radii, PERMISSIVE_SCALE, anchor)?
        .into_iter()
        .map(|n| n.index)
        .filter(|&j| !is_ads(j))
        .collect();
    let mut secondary = BTreeSet::new();
    for &p in &primary {
        for n in neighbors_within(structure, radii, PERMISSIVE_SCALE, p)? {
            if !is_ads(n.index) && !primary.contains(&n.index) {
                secondary.insert(n.index);
            }
        }
    }
    let counts = ConfigCounts::from_sets(structure, &primary, &secondary);
    Ok(ConfigString::build(meta, Some(counts)))
}
