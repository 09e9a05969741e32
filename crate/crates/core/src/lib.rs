//! Adsorption-system toolkit: periodic structures and CIF I/O, covalent
//! neighbor lists, three-part configuration strings, gated multitask and
//! contrastive losses, a small graph + text model, a synthetic energy
//! oracle, and evaluation metrics.

pub mod cif;
pub mod cli;
pub mod dataset;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod neighbors;
pub mod radii;
pub mod stringify;
pub mod structure;
pub mod synth;

pub use radii::{Element, RadiiTable};
pub use structure::{Lattice, Site, Structure, Tag};
