//! Periodic structure data model and minimum-image geometry.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::radii::{Element, UnknownElement};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StructureError {
    #[error("lattice is degenerate or left-handed (det = {0})")]
    BadLattice(f64),
    #[error("lattice contains non-finite entries")]
    NonFiniteLattice,
    #[error("non-positive cell parameter")]
    NonPositiveCell,
    #[error("structure has no sites")]
    NoSites,
    #[error("non-finite fractional coordinate")]
    NonFiniteCoordinate,
    #[error(transparent)]
    UnknownElement(#[from] UnknownElement),
    #[error("cannot parse formula `{0}`")]
    BadFormula(String),
}

/// Three lattice vectors stored as matrix rows, Å.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lattice {
    rows: Matrix3<f64>,
    inv_t: Matrix3<f64>,
}

impl Lattice {
    pub fn new(rows: [[f64; 3]; 3]) -> Result<Self, StructureError> {
        Self::from_matrix(Matrix3::from_row_slice(&rows.concat()))
    }

    pub fn from_matrix(rows: Matrix3<f64>) -> Result<Self, StructureError> {
        if rows.iter().any(|x| !x.is_finite()) {
            return Err(StructureError::NonFiniteLattice);
        }
        let det = rows.determinant();
        if !(det > 1e-9) {
            return Err(StructureError::BadLattice(det));
        }
        let inv_t = rows
            .transpose()
            .try_inverse()
            .ok_or(StructureError::BadLattice(det))?;
        Ok(Self { rows, inv_t })
    }

    pub fn cubic(a: f64) -> Result<Self, StructureError> {
        Self::new([[a, 0.0, 0.0], [0.0, a, 0.0], [0.0, 0.0, a]])
    }

    /// Standard crystallographic orientation: `a` along x, `b` in the xy-plane.
    /// Angles in degrees.
    pub fn from_parameters(
        a: f64,
        b: f64,
        c: f64,
        alpha: f64,
        beta: f64,
        gamma: f64,
    ) -> Result<Self, StructureError> {
        if !(a > 0.0 && b > 0.0 && c > 0.0) {
            return Err(StructureError::NonPositiveCell);
        }
        for ang in [alpha, beta, gamma] {
            if !(ang > 0.0 && ang < 180.0) {
                return Err(StructureError::NonPositiveCell);
            }
        }
        let (al, be, ga) = (alpha.to_radians(), beta.to_radians(), gamma.to_radians());
        let (ca, cb, cg, sg) = (al.cos(), be.cos(), ga.cos(), ga.sin());
        let cx = c * cb;
        let cy = c * (ca - cb * cg) / sg;
        let cz2 = c * c - cx * cx - cy * cy;
        if !(cz2 > 0.0) {
            return Err(StructureError::BadLattice(0.0));
        }
        Self::new([
            [a, 0.0, 0.0],
            [b * cg, b * sg, 0.0],
            [cx, cy, cz2.sqrt()],
        ])
    }

    /// `(a, b, c, alpha, beta, gamma)` with angles in degrees.
    pub fn parameters(&self) -> [f64; 6] {
        let (va, vb, vc) = (self.vector(0), self.vector(1), self.vector(2));
        let (a, b, c) = (va.norm(), vb.norm(), vc.norm());
        let angle = |u: Vector3<f64>, v: Vector3<f64>, nu: f64, nv: f64| {
            (u.dot(&v) / (nu * nv)).clamp(-1.0, 1.0).acos().to_degrees()
        };
        [
            a,
            b,
            c,
            angle(vb, vc, b, c),
            angle(va, vc, a, c),
            angle(va, vb, a, b),
        ]
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.rows
    }

    pub fn vector(&self, k: usize) -> Vector3<f64> {
        self.rows.row(k).transpose()
    }

    pub fn volume(&self) -> f64 {
        self.rows.determinant()
    }

    pub fn to_cartesian(&self, frac: &Vector3<f64>) -> Vector3<f64> {
        self.rows.transpose() * frac
    }

    pub fn to_fractional(&self, cart: &Vector3<f64>) -> Vector3<f64> {
        self.inv_t * cart
    }

    pub fn shortest_vector(&self) -> f64 {
        (0..3).map(|k| self.vector(k).norm()).fold(f64::INFINITY, f64::min)
    }

    /// Distance between opposite faces of the cell along each lattice direction.
    pub fn perpendicular_widths(&self) -> [f64; 3] {
        let v = self.volume();
        let (a, b, c) = (self.vector(0), self.vector(1), self.vector(2));
        [v / b.cross(&c).norm(), v / c.cross(&a).norm(), v / a.cross(&b).norm()]
    }

    /// Unit normal of the a×b plane; heights of slab sites are measured along it.
    pub fn surface_normal(&self) -> Vector3<f64> {
        self.vector(0).cross(&self.vector(1)).normalize()
    }

    pub fn rotated(&self, rotation: &Rotation3<f64>) -> Result<Self, StructureError> {
        // rows are vectors: v' = R v  ⇒  M' = M Rᵀ
        Self::from_matrix(self.rows * rotation.matrix().transpose())
    }
}

/// Minimum distance between `a` and any of the 27 nearest periodic images of
/// `b`, after folding the raw difference into [-0.5, 0.5].
pub fn min_image_distance(lattice: &Lattice, a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let mut d = b - a;
    d.apply(|x| *x -= x.round());
    let base = lattice.to_cartesian(&d);
    let mut best = f64::INFINITY;
    for i in -1..=1 {
        for j in -1..=1 {
            for k in -1..=1 {
                let shift = lattice.to_cartesian(&Vector3::new(i as f64, j as f64, k as f64));
                best = best.min((base + shift).norm_squared());
            }
        }
    }
    best.sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Tag {
    Subsurface,
    Surface,
    Adsorbate,
}

impl Tag {
    pub fn code(self) -> u8 {
        match self {
            Tag::Subsurface => 0,
            Tag::Surface => 1,
            Tag::Adsorbate => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Tag::Subsurface),
            1 => Some(Tag::Surface),
            2 => Some(Tag::Adsorbate),
            _ => None,
        }
    }
}

fn wrap(x: f64) -> f64 {
    let w = x - x.floor();
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Site {
    pub element: Element,
    frac: Vector3<f64>,
    pub tag: Tag,
}

impl Site {
    /// Fractional coordinates are wrapped into [0, 1).
    pub fn new(element: Element, frac: [f64; 3], tag: Tag) -> Result<Self, StructureError> {
        if frac.iter().any(|x| !x.is_finite()) {
            return Err(StructureError::NonFiniteCoordinate);
        }
        Ok(Self {
            element,
            frac: Vector3::new(wrap(frac[0]), wrap(frac[1]), wrap(frac[2])),
            tag,
        })
    }

    pub fn frac(&self) -> &Vector3<f64> {
        &self.frac
    }

    pub fn is_adsorbate(&self) -> bool {
        self.tag == Tag::Adsorbate
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Structure {
    lattice: Lattice,
    sites: Vec<Site>,
}

impl Structure {
    pub fn new(lattice: Lattice, sites: Vec<Site>) -> Result<Self, StructureError> {
        if sites.is_empty() {
            return Err(StructureError::NoSites);
        }
        Ok(Self { lattice, sites })
    }

    /// Builds a structure from Cartesian positions (Å); coordinates are wrapped.
    pub fn from_cartesian(
        lattice: Lattice,
        atoms: impl IntoIterator<Item = (Element, Vector3<f64>, Tag)>,
    ) -> Result<Self, StructureError> {
        let sites = atoms
            .into_iter()
            .map(|(el, cart, tag)| {
                let f = lattice.to_fractional(&cart);
                Site::new(el, [f.x, f.y, f.z], tag)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(lattice, sites)
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn cartesian(&self, i: usize) -> Vector3<f64> {
        self.lattice.to_cartesian(&self.sites[i].frac)
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        min_image_distance(&self.lattice, &self.sites[i].frac, &self.sites[j].frac)
    }

    pub fn adsorbate_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.sites[i].is_adsorbate()).collect()
    }

    /// Height of a site along the a×b normal, using its wrapped position.
    pub fn height(&self, i: usize) -> f64 {
        self.cartesian(i).dot(&self.lattice.surface_normal())
    }

    pub fn composition(&self) -> Composition {
        Composition::from_elements(self.sites.iter().map(|s| s.element))
    }

    /// Alphabetical formula with unit counts omitted, e.g. `Al12As12`.
    pub fn composition_formula(&self) -> String {
        self.composition().to_string()
    }

    /// Same structure with sites reordered so that new site `k` is old site `order[k]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        assert_eq!(order.len(), self.len());
        Self {
            lattice: self.lattice,
            sites: order.iter().map(|&i| self.sites[i].clone()).collect(),
        }
    }

    /// Applies a rigid rotation to lattice and atoms, then a Cartesian
    /// translation; coordinates are re-wrapped.
    pub fn rigidly_moved(
        &self,
        rotation: &Rotation3<f64>,
        translation: &Vector3<f64>,
    ) -> Result<Self, StructureError> {
        let lattice = self.lattice.rotated(rotation)?;
        let atoms: Vec<_> = (0..self.len())
            .map(|i| {
                let cart = rotation * self.cartesian(i) + translation;
                (self.sites[i].element, cart, self.sites[i].tag)
            })
            .collect();
        Self::from_cartesian(lattice, atoms)
    }

    /// Copy with every tag replaced, as in a file without tag information.
    pub fn with_uniform_tag(&self, tag: Tag) -> Self {
        let mut out = self.clone();
        for s in &mut out.sites {
            s.tag = tag;
        }
        out
    }

    pub fn with_tags(&self, tags: &[Tag]) -> Self {
        assert_eq!(tags.len(), self.len());
        let mut out = self.clone();
        for (s, t) in out.sites.iter_mut().zip(tags) {
            s.tag = *t;
        }
        out
    }
}

/// Element counts with canonical alphabetical formatting.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct Composition(BTreeMap<Element, usize>);

impl Composition {
    pub fn from_elements(elements: impl IntoIterator<Item = Element>) -> Self {
        let mut map = BTreeMap::new();
        for el in elements {
            *map.entry(el).or_insert(0) += 1;
        }
        Self(map)
    }

    /// Parses element–count pairs such as `Al12As12` or `CCH3`; repeated
    /// elements are summed.
    pub fn parse(formula: &str) -> Result<Self, StructureError> {
        let bad = || StructureError::BadFormula(formula.to_string());
        let groups = split_formula(formula).ok_or_else(bad)?;
        let mut map = BTreeMap::new();
        for (sym, n) in groups {
            let el = Element::from_symbol(&sym)?;
            *map.entry(el).or_insert(0) += n;
        }
        if map.is_empty() {
            return Err(bad());
        }
        Ok(Self(map))
    }

    pub fn counts(&self) -> &BTreeMap<Element, usize> {
        &self.0
    }

    pub fn total(&self) -> usize {
        self.0.values().sum()
    }

    pub fn merged(&self, other: &Composition) -> Composition {
        let mut map = self.0.clone();
        for (el, n) in &other.0 {
            *map.entry(*el).or_insert(0) += n;
        }
        Composition(map)
    }
}

impl fmt::Display for Composition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (el, n) in &self.0 {
            if *n == 1 {
                write!(f, "{el}")?;
            } else {
                write!(f, "{el}{n}")?;
            }
        }
        Ok(())
    }
}

/// Splits `CCH3` into `[("C",1),("C",1),("H",3)]`, keeping order.
pub(crate) fn split_formula(formula: &str) -> Option<Vec<(String, usize)>> {
    let mut out = Vec::new();
    let mut chars = formula.chars().peekable();
    while let Some(c) = chars.next() {
        if !c.is_ascii_uppercase() {
            return None;
        }
        let mut sym = c.to_string();
        while let Some(&l) = chars.peek() {
            if l.is_ascii_lowercase() {
                sym.push(l);
                chars.next();
            } else {
                break;
            }
        }
        let mut digits = String::new();
        while let Some(&d) = chars.peek() {
            if d.is_ascii_digit() {
                digits.push(d);
                chars.next();
            } else {
                break;
            }
        }
        let n = if digits.is_empty() { 1 } else { digits.parse().ok()? };
        if n == 0 {
            return None;
        }
        out.push((sym, n));
    }
    Some(out)
}
