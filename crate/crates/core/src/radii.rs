//! Covalent radii and the element type built on top of them.
//!
//! The bundled table holds single-bond covalent radii (Cordero et al., 2008)
//! for H through Bi. Where the source lists several values (C hybridisations,
//! high/low spin 3d metals) the sp3 / low-spin value is used.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Identifies the bundled data; bump when any value changes.
pub const RADII_TABLE_VERSION: &str = "cordero2008-sb-v1";

const BUNDLED: &[(&str, f64)] = &[
    ("H", 0.31), ("He", 0.28),
    ("Li", 1.28), ("Be", 0.96), ("B", 0.84), ("C", 0.76), ("N", 0.71), ("O", 0.66), ("F", 0.57), ("Ne", 0.58),
    ("Na", 1.66), ("Mg", 1.41), ("Al", 1.21), ("Si", 1.11), ("P", 1.07), ("S", 1.05), ("Cl", 1.02), ("Ar", 1.06),
    ("K", 2.03), ("Ca", 1.76), ("Sc", 1.70), ("Ti", 1.60), ("V", 1.53), ("Cr", 1.39), ("Mn", 1.39), ("Fe", 1.32),
    ("Co", 1.26), ("Ni", 1.24), ("Cu", 1.32), ("Zn", 1.22), ("Ga", 1.22), ("Ge", 1.20), ("As", 1.19), ("Se", 1.20),
    ("Br", 1.20), ("Kr", 1.16),
    ("Rb", 2.20), ("Sr", 1.95), ("Y", 1.90), ("Zr", 1.75), ("Nb", 1.64), ("Mo", 1.54), ("Tc", 1.47), ("Ru", 1.46),
    ("Rh", 1.42), ("Pd", 1.39), ("Ag", 1.45), ("Cd", 1.44), ("In", 1.42), ("Sn", 1.39), ("Sb", 1.39), ("Te", 1.38),
    ("I", 1.39), ("Xe", 1.40),
    ("Cs", 2.44), ("Ba", 2.15), ("La", 2.07), ("Ce", 2.04), ("Pr", 2.03), ("Nd", 2.01), ("Pm", 1.99), ("Sm", 1.98),
    ("Eu", 1.98), ("Gd", 1.96), ("Tb", 1.94), ("Dy", 1.92), ("Ho", 1.92), ("Er", 1.89), ("Tm", 1.90), ("Yb", 1.87),
    ("Lu", 1.87), ("Hf", 1.75), ("Ta", 1.70), ("W", 1.62), ("Re", 1.51), ("Os", 1.44), ("Ir", 1.41), ("Pt", 1.36),
    ("Au", 1.36), ("Hg", 1.32), ("Tl", 1.45), ("Pb", 1.46), ("Bi", 1.48),
];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown element `{0}`")]
pub struct UnknownElement(pub String);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RadiiError {
    #[error(transparent)]
    UnknownElement(#[from] UnknownElement),
    #[error("radius {radius} Å for `{element}` outside (0.2, 3.0)")]
    OutOfRange { element: String, radius: f64 },
}

/// A chemical element known to the bundled radii table.
///
/// Ordering and equality follow the chemical symbol, so sorting a list of
/// elements sorts it alphabetically.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Element(u8);

impl Element {
    pub fn from_symbol(symbol: &str) -> Result<Self, UnknownElement> {
        BUNDLED
            .iter()
            .position(|(s, _)| *s == symbol)
            .map(|i| Element(i as u8))
            .ok_or_else(|| UnknownElement(symbol.to_string()))
    }

    pub fn symbol(self) -> &'static str {
        BUNDLED[self.0 as usize].0
    }

    /// Bundled covalent radius in Å.
    pub fn covalent_radius(self) -> f64 {
        BUNDLED[self.0 as usize].1
    }
}

impl PartialOrd for Element {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Element {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.symbol().cmp(other.symbol())
    }
}

impl fmt::Debug for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

impl std::str::FromStr for Element {
    type Err = UnknownElement;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Element::from_symbol(s)
    }
}

impl Serialize for Element {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.symbol())
    }
}

impl<'de> Deserialize<'de> for Element {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Element::from_symbol(&s).map_err(serde::de::Error::custom)
    }
}

/// Immutable element → covalent radius map (Å).
#[derive(Debug, Clone, PartialEq)]
pub struct RadiiTable {
    radii: BTreeMap<String, f64>,
}

impl RadiiTable {
    pub fn new<I, S>(entries: I) -> Result<Self, RadiiError>
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        let mut radii = BTreeMap::new();
        for (element, radius) in entries {
            let element = element.into();
            if !(radius > 0.2 && radius < 3.0) {
                return Err(RadiiError::OutOfRange { element, radius });
            }
            radii.insert(element, radius);
        }
        Ok(Self { radii })
    }

    /// The table shipped with the crate, see [`RADII_TABLE_VERSION`].
    pub fn bundled() -> &'static RadiiTable {
        static TABLE: OnceLock<RadiiTable> = OnceLock::new();
        TABLE.get_or_init(|| RadiiTable::new(BUNDLED.iter().copied()).expect("bundled radii in range"))
    }

    pub fn covalent_radius(&self, element: &str) -> Result<f64, UnknownElement> {
        self.radii
            .get(element)
            .copied()
            .ok_or_else(|| UnknownElement(element.to_string()))
    }

    pub fn contains(&self, element: &str) -> bool {
        self.radii.contains_key(element)
    }

    pub fn len(&self) -> usize {
        self.radii.len()
    }

    pub fn is_empty(&self) -> bool {
        self.radii.is_empty()
    }
}
