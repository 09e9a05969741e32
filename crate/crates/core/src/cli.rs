//! Batch command-line front end. Every subcommand writes files and prints a
//! single summary line; diagnostics go to stderr.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use thiserror::Error;

use crate::cif::{parse_cif, truncate_at_double_newline, CifError};
use crate::dataset::{read_jsonl, split_indices, write_jsonl, DatasetError, Sample};
use crate::metrics::{
    autocorrelation_heatmap, mae, mae_r2, matrix_to_csv, pir, similarity_matrix, MetricsError, PirSpec,
    DEFAULT_PIR_TOLERANCE,
};
use crate::model::{
    read_checkpoint, train_stage, write_checkpoint, CheckpointError, LossKind, Model, ModelConfig, ModelError,
    TrainConfig, TrainError, Vocab,
};
use crate::neighbors::{build_neighbor_list, NeighborError, STRICT_SCALE};
use crate::radii::RadiiTable;
use crate::stringify::{
    infer_adsorbate_sites, permissive_config_string, retag, three_part_string, two_part_prompt, StringifyError,
    SystemMeta,
};
use crate::structure::Composition;
use crate::synth::{generate_indicative_cif, generate_system, ground_state_energy, GenSpec, SynthError};

#[derive(Debug, Parser)]
#[command(name = "adsorbkit", version, about = "Adsorption-system dataset, training and evaluation pipeline")]
pub struct Cli {
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Directory for generated files.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// File of `key=value` lines; each key is a long flag of the subcommand.
    /// Flags given on the command line win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset as train/val/test JSONL files.
    Gen(GenArgs),
    /// Print the configuration string of a CIF file.
    Stringify(StringifyArgs),
    /// Run one training stage.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 4096, value_parser = clap::value_parser!(u64).range(1..))]
    pub n: u64,
}

#[derive(Debug, Args)]
pub struct StringifyArgs {
    #[arg(long)]
    pub cif: PathBuf,
    /// Single-anchor string with wide neighbor shells, for imprecise structures.
    #[arg(long)]
    pub permissive: bool,
    /// Discard everything after the first blank line before parsing.
    #[arg(long)]
    pub raw_stream: bool,
    /// Adsorbate label; defaults to the one encoded in the data block name.
    #[arg(long)]
    pub adsorbate: Option<String>,
    /// Miller indices as `h,k,l`; defaults to the data block name.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub miller: Option<Vec<i32>>,
    /// Catalyst formula; defaults to the non-adsorbate composition.
    #[arg(long)]
    pub formula: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
    pub stage: u8,
    #[arg(long)]
    pub data: PathBuf,
    /// Output checkpoint.
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Checkpoint to continue from; a fresh model is built from the data otherwise.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long, default_value = "mmtg")]
    pub loss: LossKind,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Training log CSV; defaults to `<out-dir>/train_stage<s>.csv`.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Predict from the configuration string alone.
    #[arg(long)]
    pub text_only: bool,
    /// Prediction-in-range on indicative structures regenerated with `--seed`.
    #[arg(long)]
    pub pir: bool,
    #[arg(long, default_value_t = 20)]
    pub pir_systems: usize,
    #[arg(long, default_value_t = 5)]
    pub pir_samples: u64,
    #[arg(long, default_value_t = DEFAULT_PIR_TOLERANCE)]
    pub tolerance: f64,
    /// Directory for similarity and autocorrelation CSVs.
    #[arg(long)]
    pub heatmaps: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Cif(#[from] CifError),
    #[error(transparent)]
    Stringify(#[from] StringifyError),
    #[error(transparent)]
    Neighbor(#[from] NeighborError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("checkpoint mismatch: {0}")]
    Mismatch(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

const SUBCOMMANDS: [&str; 4] = ["gen", "stringify", "train", "eval"];

/// Splices `--key value` pairs from the `--config` file into `args` right
/// after the subcommand, skipping keys already present.
pub fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let strs: Vec<String> = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let mut path = None;
    for (i, a) in strs.iter().enumerate() {
        if a == "--config" {
            path = strs.get(i + 1).cloned();
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        }
    }
    let Some(path) = path else { return Ok(args) };
    let Some(at) = strs.iter().position(|a| SUBCOMMANDS.contains(&a.as_str())) else {
        return Ok(args);
    };
    let path = PathBuf::from(path);
    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    let present = |key: &str| {
        let flag = format!("--{key}");
        strs.iter().any(|a| *a == flag || a.starts_with(&format!("{flag}=")))
    };
    let mut extra = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("{}:{}: expected key=value", path.display(), n + 1)))?;
        let (key, value) = (key.trim().replace('_', "-"), value.trim());
        if key == "config" || present(&key) {
            continue;
        }
        match value {
            "true" => extra.push(OsString::from(format!("--{key}"))),
            "false" => {}
            v => extra.push(OsString::from(format!("--{key}={v}"))),
        }
    }
    let mut out = args;
    out.splice(at + 1..at + 1, extra);
    Ok(out)
}

/// Runs one command and returns its summary line.
pub fn run(cli: &Cli) -> Result<String, CliError> {
    match &cli.command {
        Command::Gen(a) => cmd_gen(cli, a),
        Command::Stringify(a) => cmd_stringify(a),
        Command::Train(a) => cmd_train(cli, a),
        Command::Eval(a) => cmd_eval(cli, a),
    }
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))
}

fn cmd_gen(cli: &Cli, a: &GenArgs) -> Result<String, CliError> {
    let spec = GenSpec {
        seed: cli.seed,
        ..GenSpec::default()
    };
    let samples = (0..a.n)
        .map(|i| generate_system(&spec, i))
        .collect::<Result<Vec<_>, _>>()?;
    let (train, val, test) = split_indices(samples.len(), cli.seed);
    ensure_dir(&cli.out_dir)?;
    for (name, idx) in [("train", &train), ("val", &val), ("test", &test)] {
        let part: Vec<Sample> = idx.iter().map(|&i| samples[i].clone()).collect();
        write_jsonl(&cli.out_dir.join(format!("{name}.jsonl")), &part)?;
    }
    eprintln!("wrote {} samples to {}", samples.len(), cli.out_dir.display());
    Ok(format!(
        "n={} train={} val={} test={} seed={}",
        a.n,
        train.len(),
        val.len(),
        test.len(),
        cli.seed
    ))
}

/// `{formula}_{hkl}_{adsorbate}`, as written by the generator.
fn meta_from_block_name(name: &str) -> Option<(String, [i32; 3], String)> {
    let mut parts = name.split('_');
    let (formula, hkl, ads) = (parts.next()?, parts.next()?, parts.next()?);
    if parts.next().is_some() || hkl.len() != 3 {
        return None;
    }
    let d: Vec<i32> = hkl.chars().map(|c| c.to_digit(10).map(|d| d as i32)).collect::<Option<_>>()?;
    Some((formula.to_string(), [d[0], d[1], d[2]], ads.to_string()))
}

fn cmd_stringify(a: &StringifyArgs) -> Result<String, CliError> {
    let text = std::fs::read_to_string(&a.cif).map_err(io_err(&a.cif))?;
    let text = if a.raw_stream { truncate_at_double_newline(&text) } else { text };
    let parsed = parse_cif(&text)?;
    let from_name = meta_from_block_name(&parsed.data_block_name);
    let adsorbate = a
        .adsorbate
        .clone()
        .or_else(|| from_name.as_ref().map(|m| m.2.clone()))
        .ok_or_else(|| CliError::Usage("no --adsorbate given and none in the data block name".into()))?;
    let miller = match (&a.miller, &from_name) {
        (Some(m), _) if m.len() == 3 => [m[0], m[1], m[2]],
        (Some(_), _) => return Err(CliError::Usage("--miller takes three comma-separated integers".into())),
        (None, Some(m)) => m.1,
        (None, None) => return Err(CliError::Usage("no --miller given and none in the data block name".into())),
    };
    let probe = SystemMeta::new(&adsorbate, "H", miller)?;
    let structure = if parsed.tags_missing {
        let ads = infer_adsorbate_sites(&parsed.structure, &probe)?;
        retag(&parsed.structure, &ads)
    } else {
        parsed.structure
    };
    let formula = match &a.formula {
        Some(f) => f.clone(),
        None => {
            let cat: Vec<_> = structure
                .sites()
                .iter()
                .filter(|s| !s.is_adsorbate())
                .map(|s| s.element)
                .collect();
            Composition::from_elements(cat).to_string()
        }
    };
    let meta = SystemMeta::new(&adsorbate, &formula, miller)?;
    let cs = if a.permissive {
        permissive_config_string(&structure, &meta, RadiiTable::bundled())?
    } else {
        let nl = build_neighbor_list(&structure, RadiiTable::bundled(), STRICT_SCALE)?;
        three_part_string(&structure, &meta, &nl)?
    };
    Ok(cs.to_string())
}

fn cmd_train(cli: &Cli, a: &TrainArgs) -> Result<String, CliError> {
    let data = read_jsonl(&a.data)?;
    let mut model = match &a.init {
        Some(p) => read_checkpoint(p)?,
        None => {
            let mut cfg = ModelConfig::default();
            cfg.fit_energy_range(data.iter().map(|s| s.energy));
            Model::new(cfg, Vocab::from_strings(data.iter().map(|s| &s.config)), cli.seed)?
        }
    };
    let prepared = data.iter().map(|s| model.prepare(s)).collect::<Result<Vec<_>, _>>()?;
    let mut cfg = TrainConfig {
        seed: cli.seed,
        loss: a.loss,
        ..TrainConfig::default()
    };
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(lr) = a.lr {
        cfg.learning_rate = lr;
    }
    if let Some(b) = a.batch_size {
        cfg.batch_size = b;
    }
    let log = train_stage(&mut model, a.stage, &prepared, &cfg)?;
    if log.unk_tokens > 0 {
        eprintln!("{} tokens outside the vocabulary mapped to {}", log.unk_tokens, crate::model::UNK);
    }
    if let Some(dir) = a.ckpt.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    write_checkpoint(&a.ckpt, &model)?;
    let log_path = a
        .log
        .clone()
        .unwrap_or_else(|| cli.out_dir.join(format!("train_stage{}.csv", a.stage)));
    if let Some(dir) = log_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    std::fs::write(&log_path, log.to_csv()).map_err(io_err(&log_path))?;
    let last = log.last().ok_or(CliError::Usage("--epochs must be at least 1".into()))?;
    Ok(format!(
        "stage={} mae={:.6} ce={:.6} top1={:.4}",
        a.stage, last.l_mae, last.l_ce, last.retrieval_top1
    ))
}

/// `n` distinct systems of `data`, evenly spaced through their sorted order.
pub fn spread_systems(data: &[Sample], n: usize) -> Vec<SystemMeta> {
    let all: Vec<&SystemMeta> = data.iter().map(|s| &s.meta).collect::<BTreeSet<_>>().into_iter().collect();
    let n = n.min(all.len());
    (0..n).map(|k| all[k * all.len() / n].clone()).collect()
}

/// Prediction-in-range of text-only predictions for each system, with the
/// permissive string of `samples` indicative structures and with the
/// two-part prompt. Ranges sit around the enumerated ground state.
pub fn pir_pair(
    model: &Model,
    systems: &[SystemMeta],
    spec: &GenSpec,
    samples: u64,
    tolerance: f64,
) -> Result<(f64, f64), CliError> {
    let mut with = Vec::new();
    let mut without = Vec::new();
    let mut ranges = Vec::new();
    for meta in systems {
        let sys = spec
            .find_system(meta)
            .ok_or_else(|| SynthError::UnrealizableMeta(meta.clone()))?;
        let range = PirSpec::around_minimum(ground_state_energy(spec, &sys)?, tolerance);
        let bare = model.predict_text_only(&two_part_prompt(meta)).e_final;
        for k in 0..samples {
            let text = generate_indicative_cif(spec, meta, k)?;
            let parsed = parse_cif(&truncate_at_double_newline(&text))?;
            let cs = permissive_config_string(&parsed.structure, meta, RadiiTable::bundled())?;
            with.push(model.predict_text_only(&cs).e_final);
            without.push(bare);
            ranges.push(range);
        }
    }
    Ok((pir(&with, &ranges)?, pir(&without, &ranges)?))
}

/// Up to `limit` samples with pairwise distinct configuration strings.
pub fn distinct_strings(data: &[Sample], limit: usize) -> Vec<&Sample> {
    let mut seen = BTreeSet::new();
    data.iter().filter(|s| seen.insert(s.config.as_str())).take(limit).collect()
}

fn stack(rows: &[nalgebra::DVector<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])
}

fn cmd_eval(cli: &Cli, a: &EvalArgs) -> Result<String, CliError> {
    let model = read_checkpoint(&a.ckpt)?;
    let data = read_jsonl(&a.data)?;
    if data.is_empty() {
        return Err(CliError::Dataset(DatasetError::Json {
            line: 0,
            message: "empty dataset".into(),
        }));
    }
    let mut unk = 0;
    let mut preds = Vec::with_capacity(data.len());
    for s in &data {
        let p = model
            .prepare(s)
            .map_err(|e| CliError::Mismatch(format!("{e} (palette {:?})", model.config.palette)))?;
        unk += p.unk;
        preds.push(model.predict_prepared(&p, a.text_only));
    }
    if unk > 0 {
        eprintln!("{unk} tokens outside the checkpoint vocabulary");
    }
    let targets: Vec<f64> = data.iter().map(|s| s.energy).collect();
    let finals: Vec<f64> = preds.iter().map(|p| p.e_final).collect();
    let (m, r2) = mae_r2(&finals, &targets)?;
    let m_reg = mae(&preds.iter().map(|p| p.e_reg).collect::<Vec<_>>(), &targets)?;
    let m_cls = mae(&preds.iter().map(|p| p.e_cls).collect::<Vec<_>>(), &targets)?;
    let mode = if a.text_only { "text-only" } else { "multimodal" };
    let mut line = format!("mode={mode} n={} mae={m:.6} r2={r2:.6} mae_reg={m_reg:.6} mae_cls={m_cls:.6}", data.len());

    if a.pir {
        let spec = GenSpec {
            seed: cli.seed,
            ..GenSpec::default()
        };
        let systems = spread_systems(&data, a.pir_systems);
        let (w, wo) = pir_pair(&model, &systems, &spec, a.pir_samples, a.tolerance)?;
        line.push_str(&format!(" pir_with_config={w:.4} pir_without_config={wo:.4}"));
    }
    if let Some(dir) = &a.heatmaps {
        let picked = distinct_strings(&data, 128);
        if picked.len() < 2 {
            return Err(MetricsError::TooSmall(picked.len()).into());
        }
        let geo = picked
            .iter()
            .map(|s| model.encode_structure(&s.structure))
            .collect::<Result<Vec<_>, _>>()?;
        let text: Vec<_> = picked.iter().map(|s| model.encode_text(&s.config)).collect();
        let (g, t) = (stack(&geo), stack(&text));
        ensure_dir(dir)?;
        for (name, mat) in [
            ("similarity.csv", similarity_matrix(&g, &t)?),
            ("autocorrelation_geo.csv", autocorrelation_heatmap(&g)?),
            ("autocorrelation_text.csv", autocorrelation_heatmap(&t)?),
        ] {
            let p = dir.join(name);
            std::fs::write(&p, matrix_to_csv(&mat)).map_err(io_err(&p))?;
        }
        line.push_str(&format!(" heatmap_n={}", picked.len()));
    }
    Ok(line)
}
