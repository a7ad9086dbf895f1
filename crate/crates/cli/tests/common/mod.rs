#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use apac_cli::config::{DeformPreset, ExperimentConfig, DEFAULT_M_LIST};
use apac_core::augment::{Image, ValueDomain};
use apac_core::dataio::{encode_mnist_idx, DatasetKind, LabeledDataset, Provenance};
use apac_core::nn::{LayerSpec, Network};
use apac_core::rng::RngStream;

pub fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn configs_dir() -> PathBuf {
    workspace_root().join("configs")
}

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn ints(v: &toml::Value, key: &str) -> Vec<usize> {
    v[key].as_array().unwrap().iter().map(|x| x.as_integer().unwrap() as usize).collect()
}

fn op_symbol(l: &LayerSpec) -> Option<String> {
    match l {
        LayerSpec::ConvValid { kernel, .. } => Some(format!("C{kernel}")),
        LayerSpec::MaxPool { grid } => Some(format!("P{grid}")),
        LayerSpec::FullyConnected { .. } => Some("F".into()),
        LayerSpec::Softmax => Some("S".into()),
        LayerSpec::Relu => None,
    }
}

/// Differences between one golden table entry and a parsed config; empty
/// when they agree.
pub fn diff_against_golden(entry: &toml::Value, recipe: &toml::Value, cfg: &ExperimentConfig) -> Vec<String> {
    let mut out = Vec::new();
    let mut expect = |what: &str, got: String, want: String| {
        if got != want {
            out.push(format!("{what}: config has {got}, expected {want}"));
        }
    };
    let layers = cfg.layers();
    let net = match Network::zeroed(cfg.input_shape(), layers.clone()) {
        Ok(n) => n,
        Err(e) => return vec![format!("architecture does not build: {e}")],
    };
    let [c, h, w] = cfg.input_shape();
    let mut maps = vec![c];
    let mut sizes = vec![h];
    let mut ops = Vec::new();
    let mut units = vec![c * h * w];
    for (i, l) in layers.iter().enumerate() {
        let Some(sym) = op_symbol(l) else { continue };
        ops.push(sym);
        if *l == LayerSpec::Softmax {
            continue;
        }
        let shape = net.activation_shape(i + 1);
        match shape {
            [m, y, x] => {
                maps.push(*m);
                sizes.push(if y == x { *y } else { 0 });
            }
            [m] => {
                maps.push(*m);
                sizes.push(1);
            }
            _ => unreachable!(),
        }
        if let LayerSpec::FullyConnected { out_units } = l {
            units.push(*out_units);
        }
    }
    // A ReLU follows every convolution and every hidden fully-connected layer.
    let last_fc = layers.iter().rposition(|l| matches!(l, LayerSpec::FullyConnected { .. }));
    for (i, l) in layers.iter().enumerate() {
        let hidden = matches!(l, LayerSpec::ConvValid { .. })
            || (matches!(l, LayerSpec::FullyConnected { .. }) && Some(i) != last_fc);
        let relu_next = layers.get(i + 1) == Some(&LayerSpec::Relu);
        if hidden != relu_next {
            expect(&format!("activation after layer {i} ({l})"), relu_next.to_string(), hidden.to_string());
        }
    }
    if layers.last() != Some(&LayerSpec::Softmax) {
        expect("output", format!("{:?}", layers.last()), "softmax".into());
    }
    if entry.get("units").is_some() {
        expect("units", format!("{units:?}"), format!("{:?}", ints(entry, "units")));
        let want_ops: Vec<String> = (1..ints(entry, "units").len()).map(|_| "F".to_string()).chain(["S".into()]).collect();
        expect("operation", format!("{ops:?}"), format!("{want_ops:?}"));
    } else {
        expect("maps", format!("{maps:?}"), format!("{:?}", ints(entry, "maps")));
        expect("map_size", format!("{sizes:?}"), format!("{:?}", ints(entry, "map_size")));
        let want_ops: Vec<String> = entry["operation"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_str().unwrap().to_string())
            .collect();
        expect("operation", format!("{ops:?}"), format!("{want_ops:?}"));
    }
    let t = &cfg.train;
    let f = |v: &toml::Value, k: &str| v[k].as_float().unwrap();
    let i = |v: &toml::Value, k: &str| v[k].as_integer().unwrap() as u64;
    expect("train.initial_lr", t.initial_lr.to_string(), f(entry, "initial_lr").to_string());
    expect("train.l2", t.l2.to_string(), f(entry, "l2").to_string());
    expect("train.lr_decay", t.lr_decay.to_string(), f(recipe, "lr_decay").to_string());
    expect("train.momentum", t.momentum.to_string(), f(recipe, "momentum").to_string());
    expect("train.batch_size", t.batch_size.to_string(), i(recipe, "batch_size").to_string());
    expect("train.epochs", t.epochs.to_string(), i(recipe, "epochs").to_string());
    expect("train.augment", t.augment.to_string(), "true".into());
    expect("train.class_distinctive", t.class_distinctive.to_string(), "false".into());
    let preset = cfg.deform.as_ref().map_or(Some(DeformPreset::Standard), |d| {
        if d.sets.is_none() && d.class_sets.is_none() {
            d.preset
        } else {
            None
        }
    });
    expect("deform.preset", format!("{preset:?}"), format!("{:?}", Some(DeformPreset::Standard)));
    expect("sweep.m_list", format!("{:?}", cfg.sweep.m_list), format!("{:?}", DEFAULT_M_LIST));
    expect(
        "dataset.zca",
        cfg.zca().to_string(),
        (cfg.dataset.kind == DatasetKind::Cifar10).to_string(),
    );
    expect("dataset.train_limit", format!("{:?}", cfg.dataset.train_limit), "None".into());
    expect("dataset.test_limit", format!("{:?}", cfg.dataset.test_limit), "None".into());
    out
}

/// Golden entries keyed by model name, plus the shared recipe.
pub fn golden() -> (BTreeMap<String, toml::Value>, toml::Value) {
    let text = fs::read_to_string(fixture("full_presets.toml")).unwrap();
    let mut table: toml::Table = toml::from_str(&text).unwrap();
    let recipe = table.remove("recipe").unwrap();
    (table.into_iter().collect(), recipe)
}

/// Every mismatch between the shipped full-scale configs and the golden
/// fixture.
pub fn golden_mismatches() -> Vec<String> {
    let (entries, recipe) = golden();
    let mut out = Vec::new();
    for (name, entry) in &entries {
        let file = entry["config"].as_str().unwrap();
        let text = match fs::read_to_string(configs_dir().join(file)) {
            Ok(t) => t,
            Err(e) => {
                out.push(format!("{name}: cannot read {file}: {e}"));
                continue;
            }
        };
        match ExperimentConfig::parse(&text) {
            Ok(cfg) => out.extend(diff_against_golden(entry, &recipe, &cfg).into_iter().map(|m| format!("{name}: {m}"))),
            Err(e) => out.push(format!("{name}: {e}")),
        }
    }
    out
}

/// Synthetic 28×28 digits: class `c` lights a bar whose position depends on
/// `c`, plus noise.
pub fn bars(n: usize, seed: u64) -> LabeledDataset {
    let mut rng = RngStream::new(seed, 0xba5);
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % 10;
        let mut px = vec![0.0f32; 784];
        for y in 0..28 {
            for x in 0..28 {
                let on = if label < 5 { x / 5 == label } else { y / 5 == label - 5 };
                px[y * 28 + x] = (if on { 0.7 + 0.3 * rng.unit_f64() } else { 0.15 * rng.unit_f64() }) as f32;
            }
        }
        images.push(Image::new(28, 28, 1, px, ValueDomain::UnitInterval).unwrap());
        labels.push(label);
    }
    LabeledDataset::new(images, labels, 10, Provenance::Train).unwrap()
}

/// Writes train/test IDX files into `dir/data`.
pub fn write_bars(dir: &Path, n_train: usize, n_test: usize) {
    let data = dir.join("data");
    fs::create_dir_all(&data).unwrap();
    for (stem, ds) in [("train", bars(n_train, 1)), ("test", bars(n_test, 2))] {
        let (img, lbl) = encode_mnist_idx(&ds);
        fs::write(data.join(format!("{stem}-images")), img).unwrap();
        fs::write(data.join(format!("{stem}-labels")), lbl).unwrap();
    }
}

pub const TINY_CONFIG: &str = r#"
seed = 7

[dataset]
kind = "mnist"
train_images = "data/train-images"
train_labels = "data/train-labels"
test_images = "data/test-images"
test_labels = "data/test-labels"

[architecture]
layers = ["fc16", "relu", "fc10", "softmax"]

[train]
epochs = 3
batch_size = 20
initial_lr = 0.03125
lr_decay = 0.9993
momentum = 0.9
l2 = 5e-6
augment = true

[[decision]]
rule = "non_apac"

[[decision]]
rule = "apac_log_mean"
m = 1

[[decision]]
rule = "apac_log_mean"
m = 4

[[decision]]
rule = "softmax_sum"
m = 4

[sweep]
m_list = [1, 2, 4]
rules = ["apac_log_mean", "softmax_sum"]

[output]
dir = "run"
"#;

/// A tempdir holding the synthetic dataset and `config.toml` (with
/// `replace` substitutions applied to the tiny config).
pub fn tiny_setup(replace: &[(&str, &str)]) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    write_bars(dir.path(), 200, 40);
    let mut text = TINY_CONFIG.to_string();
    for (from, to) in replace {
        assert!(text.contains(from), "{from}");
        text = text.replace(from, to);
    }
    let path = dir.path().join("config.toml");
    fs::write(&path, text).unwrap();
    (dir, path)
}

pub fn apac(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_apac")).args(args).output().unwrap()
}

pub fn apac_ok(args: &[&str]) -> String {
    let out = apac(args);
    assert!(
        out.status.success(),
        "apac {args:?} failed ({:?}): {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// All files under `dir` except wall-clock timing files, keyed by relative
/// path.
pub fn deterministic_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if !p.file_name().unwrap().to_string_lossy().ends_with("_timing.csv") {
                out.insert(p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

/// Parses an emitted CSV (after its `#` header line) into rows of fields.
pub fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}
