//! Reader and writer for the small P1 CIF dialect used for slab + adsorbate
//! files, plus the clean-up applied to generated CIF text.
//!
//! The accepted grammar is documented in `docs/cif-subset.md`.

use thiserror::Error;

use crate::radii::{Element, UnknownElement};
use crate::structure::{Composition, Lattice, Site, Structure, StructureError, Tag};

pub const TAG_COLUMN: &str = "_atom_site_adsorbkit_tag";

const LENGTH_KEYS: [&str; 3] = ["_cell_length_a", "_cell_length_b", "_cell_length_c"];
const ANGLE_KEYS: [&str; 3] = ["_cell_angle_alpha", "_cell_angle_beta", "_cell_angle_gamma"];
const SPACE_GROUP_KEYS: [&str; 3] = [
    "_symmetry_space_group_name_h-m",
    "_space_group_name_h-m_alt",
    "_symmetry_int_tables_number",
];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CifError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("missing `{0}`")]
    Missing(&'static str),
    #[error("non-positive cell parameter")]
    NonPositiveCell,
    #[error("only P1 cells are supported, found `{0}`")]
    NotP1(String),
    #[error(transparent)]
    UnknownElement(#[from] UnknownElement),
    #[error(transparent)]
    Structure(#[from] StructureError),
}

fn parse_err(line: usize, message: impl Into<String>) -> CifError {
    CifError::Parse {
        line,
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedCif {
    pub structure: Structure,
    pub data_block_name: String,
    /// Set when the file has no tag column; every site then defaults to
    /// [`Tag::Surface`].
    pub tags_missing: bool,
}

/// Splits a CIF line into tokens, honouring single and double quotes.
fn tokenize(line: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut chars = line.chars().peekable();
    while let Some(&c) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
            continue;
        }
        if c == '#' {
            break;
        }
        if c == '\'' || c == '"' {
            chars.next();
            let mut tok = String::new();
            for q in chars.by_ref() {
                if q == c {
                    break;
                }
                tok.push(q);
            }
            out.push(tok);
        } else {
            let mut tok = String::new();
            while let Some(&q) = chars.peek() {
                if q.is_whitespace() {
                    break;
                }
                tok.push(q);
                chars.next();
            }
            out.push(tok);
        }
    }
    out
}

/// Numeric CIF value; a trailing standard uncertainty such as `4.05(2)` is dropped.
fn number(tok: &str, line: usize) -> Result<f64, CifError> {
    let core = tok.split('(').next().unwrap_or(tok);
    core.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| parse_err(line, format!("expected a number, found `{tok}`")))
}

/// Strips oxidation states and labels: `Cu2+` → `Cu`, `Fe1` → `Fe`.
fn element_symbol(tok: &str) -> &str {
    let end = tok
        .char_indices()
        .skip(1)
        .find(|(_, c)| !c.is_ascii_lowercase())
        .map(|(i, _)| i)
        .unwrap_or(tok.len());
    &tok[..end]
}

struct Loop {
    headers: Vec<String>,
    rows: Vec<(usize, Vec<String>)>,
}

fn normalize_newlines(text: &str) -> String {
    let mut out = text.replace("\r\n", "\n");
    // "\r\r\n" collapses to a fresh "\r\n" after one pass
    while out.contains("\r\n") {
        out = out.replace("\r\n", "\n");
    }
    out
}

pub fn parse_cif(text: &str) -> Result<ParsedCif, CifError> {
    let text = normalize_newlines(text);
    let mut block: Option<String> = None;
    let mut cell = [None::<f64>; 6];
    let mut loops: Vec<Loop> = Vec::new();

    let lines: Vec<(usize, Vec<String>)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, tokenize(l)))
        .collect();

    let mut i = 0;
    while i < lines.len() {
        let (lineno, toks) = &lines[i];
        let lineno = *lineno;
        let Some(first) = toks.first() else {
            i += 1;
            continue;
        };
        let lower = first.to_ascii_lowercase();
        if lower.starts_with("data_") {
            if block.is_some() {
                return Err(parse_err(lineno, "more than one data block"));
            }
            block = Some(first[5..].to_string());
            i += 1;
        } else if lower == "loop_" {
            let mut headers = Vec::new();
            i += 1;
            while i < lines.len() {
                match lines[i].1.first() {
                    Some(t) if t.starts_with('_') && lines[i].1.len() == 1 => {
                        headers.push(t.to_ascii_lowercase());
                        i += 1;
                    }
                    None if headers.is_empty() => i += 1,
                    _ => break,
                }
            }
            if headers.is_empty() {
                return Err(parse_err(lineno, "loop_ without column headers"));
            }
            let mut rows = Vec::new();
            while i < lines.len() {
                let (ln, row) = &lines[i];
                match row.first() {
                    None => break,
                    Some(t) if t.starts_with('_') => break,
                    Some(t) => {
                        let tl = t.to_ascii_lowercase();
                        if tl == "loop_" || tl.starts_with("data_") {
                            break;
                        }
                    }
                }
                rows.push((*ln, row.clone()));
                i += 1;
            }
            loops.push(Loop { headers, rows });
        } else if first.starts_with('_') {
            if toks.len() < 2 {
                return Err(parse_err(lineno, format!("`{first}` has no value")));
            }
            if let Some(k) = LENGTH_KEYS.iter().position(|key| lower == *key) {
                cell[k] = Some(number(&toks[1], lineno)?);
            } else if let Some(k) = ANGLE_KEYS.iter().position(|key| lower == *key) {
                cell[3 + k] = Some(number(&toks[1], lineno)?);
            } else if SPACE_GROUP_KEYS.contains(&lower.as_str()) {
                let value: String = toks[1..].concat().replace(' ', "");
                if !matches!(value.as_str(), "P1" | "1" | "p1") {
                    return Err(CifError::NotP1(toks[1..].join(" ")));
                }
            }
            i += 1;
        } else {
            return Err(parse_err(lineno, format!("unexpected token `{first}`")));
        }
    }

    let data_block_name = block.ok_or(CifError::Missing("data_"))?;
    let keys = [LENGTH_KEYS, ANGLE_KEYS].concat();
    let mut p = [0.0; 6];
    for k in 0..6 {
        p[k] = cell[k].ok_or(CifError::Missing(keys[k]))?;
    }
    if p[..3].iter().any(|&v| v <= 0.0) || p[3..].iter().any(|&v| v <= 0.0 || v >= 180.0) {
        return Err(CifError::NonPositiveCell);
    }
    let lattice = Lattice::from_parameters(p[0], p[1], p[2], p[3], p[4], p[5])?;

    for lp in &loops {
        if lp.headers.iter().any(|h| h == "_symmetry_equiv_pos_as_xyz" || h == "_space_group_symop_operation_xyz") {
            let ops: Vec<String> = lp.rows.iter().map(|(_, r)| r.concat().replace(' ', "")).collect();
            if ops.len() > 1 || ops.iter().any(|o| o.to_ascii_lowercase().trim_start_matches('1') != "x,y,z") {
                return Err(CifError::NotP1(format!("{} symmetry operations", ops.len())));
            }
        }
    }

    let atoms = loops
        .iter()
        .find(|l| l.headers.iter().any(|h| h == "_atom_site_fract_x"))
        .ok_or(CifError::Missing("_atom_site_fract_x"))?;
    let col = |name: &str| atoms.headers.iter().position(|h| h == name);
    let cx = col("_atom_site_fract_x").ok_or(CifError::Missing("_atom_site_fract_x"))?;
    let cy = col("_atom_site_fract_y").ok_or(CifError::Missing("_atom_site_fract_y"))?;
    let cz = col("_atom_site_fract_z").ok_or(CifError::Missing("_atom_site_fract_z"))?;
    let csym = col("_atom_site_type_symbol")
        .or_else(|| col("_atom_site_label"))
        .ok_or(CifError::Missing("_atom_site_type_symbol"))?;
    let ctag = col(TAG_COLUMN);

    let mut sites = Vec::with_capacity(atoms.rows.len());
    for (ln, row) in &atoms.rows {
        if row.len() != atoms.headers.len() {
            return Err(parse_err(
                *ln,
                format!("expected {} values, found {}", atoms.headers.len(), row.len()),
            ));
        }
        let element = Element::from_symbol(element_symbol(&row[csym]))?;
        let frac = [number(&row[cx], *ln)?, number(&row[cy], *ln)?, number(&row[cz], *ln)?];
        let tag = match ctag {
            Some(c) => row[c]
                .parse::<u8>()
                .ok()
                .and_then(Tag::from_code)
                .ok_or_else(|| parse_err(*ln, format!("bad tag `{}`", row[c])))?,
            None => Tag::Surface,
        };
        sites.push(Site::new(element, frac, tag)?);
    }
    if sites.is_empty() {
        return Err(CifError::Missing("atom site rows"));
    }
    Ok(ParsedCif {
        structure: Structure::new(lattice, sites)?,
        data_block_name,
        tags_missing: ctag.is_none(),
    })
}

fn coord(x: f64) -> String {
    let s = format!("{x:.8}");
    // a coordinate just below 1 rounds up to the wrapped-equivalent 0
    if s == "1.00000000" {
        "0.00000000".to_string()
    } else {
        s
    }
}

pub fn write_cif(structure: &Structure, data_block_name: &str) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    let p = structure.lattice().parameters();
    let _ = writeln!(out, "data_{data_block_name}");
    let _ = writeln!(out, "_symmetry_space_group_name_H-M 'P 1'");
    for (k, key) in LENGTH_KEYS.iter().enumerate() {
        let _ = writeln!(out, "{key} {:.8}", p[k]);
    }
    for (k, key) in ANGLE_KEYS.iter().enumerate() {
        let _ = writeln!(out, "{key} {:.8}", p[3 + k]);
    }
    out.push_str("loop_\n_atom_site_type_symbol\n_atom_site_fract_x\n_atom_site_fract_y\n_atom_site_fract_z\n");
    out.push_str(TAG_COLUMN);
    out.push('\n');
    for site in structure.sites() {
        let f = site.frac();
        let _ = writeln!(
            out,
            "{} {} {} {} {}",
            site.element,
            coord(f.x),
            coord(f.y),
            coord(f.z),
            site.tag.code()
        );
    }
    out
}

/// Keeps only the text before the first blank-line terminator (`\n\n`, after
/// CRLF → LF normalisation).
pub fn truncate_at_double_newline(text: &str) -> String {
    let text = normalize_newlines(text);
    match text.find("\n\n") {
        Some(i) => text[..i].to_string(),
        None => text,
    }
}

/// Filter for generated CIF text: truncates at the generation terminator,
/// parses, and compares the composition with `expected_formula`. Any parse
/// failure yields `false`.
pub fn composition_matches(cif_text: &str, expected_formula: &str) -> bool {
    let Ok(expected) = Composition::parse(expected_formula) else {
        return false;
    };
    match parse_cif(&truncate_at_double_newline(cif_text)) {
        Ok(parsed) => parsed.structure.composition() == expected,
        Err(_) => false,
    }
}
