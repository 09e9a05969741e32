use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use adsorbkit::stringify::ConfigString;

const BIN: &str = env!("CARGO_BIN_EXE_adsorbkit");

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn stdout_line(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout.clone()).unwrap();
    assert_eq!(text.lines().count(), 1, "{text}");
    text.trim_end().to_string()
}

fn fields(line: &str) -> BTreeMap<String, String> {
    line.split_whitespace()
        .filter_map(|kv| kv.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

fn gen(dir: &Path, n: usize, seed: u64) -> String {
    stdout_line(&run(&[
        "gen",
        "--n",
        &n.to_string(),
        "--seed",
        &seed.to_string(),
        "--out-dir",
        dir.to_str().unwrap(),
    ]))
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

#[test]
fn gen_is_byte_stable_and_splits_n() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let line = gen(a.path(), 4096, 7);
    assert_eq!(line, gen(b.path(), 4096, 7));
    let mut total = 0;
    for f in ["train.jsonl", "val.jsonl", "test.jsonl"] {
        let bytes = read(&a.path().join(f));
        assert_eq!(bytes, read(&b.path().join(f)), "{f}");
        total += bytes.iter().filter(|&&c| c == b'\n').count();
    }
    assert_eq!(total, 4096);
    let f = fields(&line);
    assert_eq!(f["train"], "3276");
    assert_eq!(f["val"], "409");
    assert_eq!(f["test"], "411");
}

#[test]
fn gen_rejects_zero_samples() {
    let out = run(&["gen", "--n", "0"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(out.stdout.is_empty());
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(run(&["gen", "--bogus"]).status.code(), Some(2));
}

#[test]
fn stringify_golden_fixture() {
    let cif = fixture("golden.cif");
    let golden = std::fs::read_to_string(fixture("golden.txt")).unwrap();
    let strict = stdout_line(&run(&["stringify", "--cif", cif.to_str().unwrap()]));
    assert_eq!(strict, golden.trim_end());

    let permissive = stdout_line(&run(&["stringify", "--cif", cif.to_str().unwrap(), "--permissive"]));
    let (s, p) = (ConfigString::parse(&strict).unwrap(), ConfigString::parse(&permissive).unwrap());
    assert_eq!(s.meta(), p.meta());
    let total = |cs: &ConfigString| {
        let c = cs.config().unwrap();
        let mut m = c.primary.clone();
        for (el, n) in &c.secondary {
            *m.entry(*el).or_default() += n;
        }
        m
    };
    let (ts, tp) = (total(&s), total(&p));
    for (el, n) in &ts {
        assert!(tp.get(el).copied().unwrap_or(0) >= *n, "{el:?}");
    }
}

#[test]
fn stringify_errors_exit_one() {
    let out = run(&["stringify", "--cif", "/nonexistent/file.cif"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(out.stdout.is_empty());

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.cif");
    std::fs::write(&bad, "data_x\n_cell_length_a 3.0\nloop_\n_atom_site_type_symbol\nCu\n").unwrap();
    let out = run(&["stringify", "--cif", bad.to_str().unwrap(), "--adsorbate", "H", "--miller", "1,1,1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

#[test]
fn stringify_raw_stream_truncates() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw.cif");
    let mut text = std::fs::read_to_string(fixture("golden.cif")).unwrap();
    text.push_str("\n\nloop_ garbage </s> data_9\n");
    std::fs::write(&raw, text).unwrap();
    assert_eq!(run(&["stringify", "--cif", raw.to_str().unwrap()]).status.code(), Some(1));
    let line = stdout_line(&run(&["stringify", "--cif", raw.to_str().unwrap(), "--raw-stream"]));
    assert_eq!(line, std::fs::read_to_string(fixture("golden.txt")).unwrap().trim_end());
}

struct Trained {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Trained {
    fn path(&self, name: &str) -> String {
        self.root.join(name).to_str().unwrap().to_string()
    }
}

fn small_run() -> Trained {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    gen(&root, 240, 1);
    let t = Trained { _dir: dir, root };
    let train = |stage: &str, init: Option<&str>, ckpt: &str, loss: &str, log: &str| {
        let mut args = vec![
            "train", "--stage", stage, "--data", &t.path("train.jsonl"), "--ckpt", ckpt, "--loss", loss, "--epochs",
            "2", "--seed", "1", "--log", log,
        ]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>();
        if let Some(i) = init {
            args.extend(["--init".to_string(), i.to_string()]);
        }
        stdout_line(&Command::new(BIN).args(&args).output().unwrap())
    };
    let line = train("1", None, &t.path("s1.ckpt"), "mmtg", &t.path("s1.csv"));
    assert!(line.starts_with("stage=1 mae="), "{line}");
    for k in ["mae", "ce", "top1"] {
        assert!(fields(&line)[k].parse::<f64>().unwrap().is_finite());
    }
    let s1 = t.path("s1.ckpt");
    train("2", Some(&s1), &t.path("mmtg.ckpt"), "mmtg", &t.path("mmtg.csv"));
    train("2", Some(&s1), &t.path("mmtg2.ckpt"), "mmtg", &t.path("mmtg2.csv"));
    train("2", Some(&s1), &t.path("plain.ckpt"), "plain", &t.path("plain.csv"));
    t
}

#[test]
fn train_and_eval() {
    let t = small_run();
    let header = "epoch,L_MAE,L_CE,combined,retrieval_top1";
    let log = std::fs::read_to_string(t.path("mmtg.csv")).unwrap();
    assert_eq!(log.lines().next(), Some(header));
    assert_eq!(log.lines().count(), 3);
    assert_ne!(log, std::fs::read_to_string(t.path("plain.csv")).unwrap());
    assert_eq!(log, std::fs::read_to_string(t.path("mmtg2.csv")).unwrap());
    assert_eq!(read(Path::new(&t.path("mmtg.ckpt"))), read(Path::new(&t.path("mmtg2.ckpt"))));

    let eval = |extra: &[&str]| {
        let (ckpt, data) = (t.path("mmtg.ckpt"), t.path("test.jsonl"));
        let mut args = vec!["eval", "--ckpt", &ckpt];
        args.extend(["--data", &data, "--seed", "1"]);
        args.extend(extra);
        fields(&stdout_line(&run(&args)))
    };
    let mm = eval(&[]);
    let txt = eval(&["--text-only"]);
    assert_eq!(mm["mode"], "multimodal");
    assert_eq!(txt["mode"], "text-only");
    for f in [&mm, &txt] {
        assert!(f["mae"].parse::<f64>().unwrap().is_finite());
    }

    let pir = eval(&["--pir", "--pir-systems", "4", "--pir-samples", "2"]);
    for k in ["pir_with_config", "pir_without_config"] {
        let v: f64 = pir[k].parse().unwrap();
        assert!((0.0..=100.0).contains(&v), "{k}={v}");
    }

    let hm = t.path("hm");
    let f = eval(&["--heatmaps", &hm]);
    let n: usize = f["heatmap_n"].parse().unwrap();
    for name in ["similarity.csv", "autocorrelation_geo.csv", "autocorrelation_text.csv"] {
        let text = std::fs::read_to_string(t.root.join("hm").join(name)).unwrap();
        let rows: Vec<&str> = text.lines().collect();
        assert_eq!(rows.len(), n + 1, "{name}");
        for row in &rows[1..] {
            let cells: Vec<f64> = row.split(',').map(|c| c.parse().unwrap()).collect();
            assert_eq!(cells.len(), n);
            assert!(cells.iter().all(|c| c.is_finite()));
        }
    }
    let again = t.path("hm2");
    eval(&["--heatmaps", &again]);
    assert_eq!(
        read(&t.root.join("hm/similarity.csv")),
        read(&t.root.join("hm2/similarity.csv"))
    );
}

#[test]
fn train_divergence_exits_one_with_epoch() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), 60, 2);
    let data = dir.path().join("train.jsonl");
    let ckpt = dir.path().join("x.ckpt");
    let out = run(&[
        "train",
        "--stage",
        "2",
        "--data",
        data.to_str().unwrap(),
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--lr",
        "1e300",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epoch"));
    assert!(!ckpt.exists());
}

#[test]
fn eval_rejects_corrupt_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), 30, 0);
    let ckpt = dir.path().join("bad.ckpt");
    std::fs::write(&ckpt, b"ADK1\x05\x00\x00\x00{}").unwrap();
    let data = dir.path().join("test.jsonl");
    let out = run(&["eval", "--ckpt", ckpt.to_str().unwrap(), "--data", data.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn config_file_supplies_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("gen.cfg");
    std::fs::write(&cfg, format!("n=25\nseed=4\nout_dir={}\n", dir.path().display())).unwrap();
    let line = stdout_line(&run(&["gen", "--config", cfg.to_str().unwrap()]));
    assert_eq!(fields(&line)["n"], "25");
    assert_eq!(fields(&line)["seed"], "4");
    assert!(dir.path().join("train.jsonl").exists());
    std::fs::write(&cfg, "frobnicate=1\n").unwrap();
    assert_eq!(run(&["gen", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
}
