//! Periodic neighbor lists under the covalent-radius rule
//! `d_ij <= scale * (r_i + r_j)`.
//!
//! `scale = 1.0` gives the strict connectivity used for configuration
//! strings; `scale = 4.0` the permissive one used on generated structures.

use thiserror::Error;

use crate::radii::{RadiiTable, UnknownElement};
use crate::structure::Structure;

pub const STRICT_SCALE: f64 = 1.0;
pub const PERMISSIVE_SCALE: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NeighborError {
    #[error(transparent)]
    UnknownElement(#[from] UnknownElement),
    #[error("shortest lattice vector {shortest:.3} Å must exceed {required:.3} Å at scale {scale}")]
    CellTooSmall {
        shortest: f64,
        required: f64,
        scale: f64,
    },
    #[error("scale must be positive, got {0}")]
    BadScale(f64),
    #[error("site index {index} out of range for {len} sites")]
    IndexOutOfRange { index: usize, len: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborList {
    rows: Vec<Vec<Neighbor>>,
    scale: f64,
}

impl NeighborList {
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn neighbors_of(&self, i: usize) -> Result<&[Neighbor], NeighborError> {
        self.rows
            .get(i)
            .map(Vec::as_slice)
            .ok_or(NeighborError::IndexOutOfRange {
                index: i,
                len: self.rows.len(),
            })
    }

    pub fn rows(&self) -> &[Vec<Neighbor>] {
        &self.rows
    }

    /// Builds a list from rows produced elsewhere; rows are sorted into the
    /// canonical order.
    pub fn from_rows(mut rows: Vec<Vec<Neighbor>>, scale: f64) -> Self {
        for row in &mut rows {
            sort_row(row);
        }
        Self { rows, scale }
    }
}

fn sort_row(row: &mut [Neighbor]) {
    row.sort_by(|a, b| a.index.cmp(&b.index).then(a.distance.total_cmp(&b.distance)));
}

fn site_radii(structure: &Structure, radii: &RadiiTable) -> Result<Vec<f64>, UnknownElement> {
    structure
        .sites()
        .iter()
        .map(|s| radii.covalent_radius(s.element.symbol()))
        .collect()
}

/// Cell-list construction. Bins are at least one global maximum cutoff wide
/// along every lattice direction, so the 27-bin stencil covers every pair.
pub fn build_neighbor_list(
    structure: &Structure,
    radii: &RadiiTable,
    scale: f64,
) -> Result<NeighborList, NeighborError> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(NeighborError::BadScale(scale));
    }
    let r = site_radii(structure, radii)?;
    let max_r = r.iter().copied().fold(0.0, f64::max);
    let max_cutoff = scale * 2.0 * max_r;
    let lattice = structure.lattice();
    let shortest = lattice.shortest_vector();
    if shortest <= 2.0 * max_cutoff {
        return Err(NeighborError::CellTooSmall {
            shortest,
            required: 2.0 * max_cutoff,
            scale,
        });
    }

    let widths = lattice.perpendicular_widths();
    let nbins: [usize; 3] = std::array::from_fn(|k| ((widths[k] / max_cutoff).floor() as usize).max(1));
    let bin_of = |i: usize| -> [usize; 3] {
        let f = structure.sites()[i].frac();
        std::array::from_fn(|k| ((f[k] * nbins[k] as f64) as usize).min(nbins[k] - 1))
    };
    let flat = |b: [usize; 3]| (b[0] * nbins[1] + b[1]) * nbins[2] + b[2];
    let mut bins: Vec<Vec<usize>> = vec![Vec::new(); nbins.iter().product()];
    let site_bins: Vec<[usize; 3]> = (0..structure.len()).map(bin_of).collect();
    for (i, b) in site_bins.iter().enumerate() {
        bins[flat(*b)].push(i);
    }

    let mut rows = vec![Vec::new(); structure.len()];
    let mut stencil = Vec::with_capacity(27);
    for i in 0..structure.len() {
        let home = site_bins[i];
        stencil.clear();
        for di in -1i64..=1 {
            for dj in -1i64..=1 {
                for dk in -1i64..=1 {
                    let d = [di, dj, dk];
                    let b: [usize; 3] = std::array::from_fn(|k| {
                        (home[k] as i64 + d[k]).rem_euclid(nbins[k] as i64) as usize
                    });
                    stencil.push(flat(b));
                }
            }
        }
        // fewer than three bins along an axis revisits bins
        stencil.sort_unstable();
        stencil.dedup();
        for &b in &stencil {
            for &j in &bins[b] {
                if j == i {
                    continue;
                }
                let d = structure.distance(i, j);
                if d <= scale * (r[i] + r[j]) {
                    rows[i].push(Neighbor { index: j, distance: d });
                }
            }
        }
        sort_row(&mut rows[i]);
    }
    Ok(NeighborList { rows, scale })
}

/// Sites within `scale * (r_center + r_j)` of `center`, by minimum-image
/// distance, sorted by index. Unlike [`build_neighbor_list`] this has no cell
/// size precondition: each site is counted once however many of its images
/// fall inside the cutoff.
pub fn neighbors_within(
    structure: &Structure,
    radii: &RadiiTable,
    scale: f64,
    center: usize,
) -> Result<Vec<Neighbor>, NeighborError> {
    if center >= structure.len() {
        return Err(NeighborError::IndexOutOfRange {
            index: center,
            len: structure.len(),
        });
    }
    let r = site_radii(structure, radii)?;
    Ok((0..structure.len())
        .filter(|&j| j != center)
        .filter_map(|j| {
            let d = structure.distance(center, j);
            (d <= scale * (r[center] + r[j])).then_some(Neighbor { index: j, distance: d })
        })
        .collect())
}
