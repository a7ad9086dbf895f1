use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use apac_core::augment::{Image, ZcaTransform};
use apac_core::dataio::{self, DatasetKind, LabeledDataset, Provenance};
use apac_core::decision::{self, DecisionConfig, Evaluation, Rule};
use apac_core::nn::{checkpoint, LayerSpec, Network};
use apac_core::rng::{domain, RngStream};
use apac_core::trainer::{self, EpochRecord, TrainReport};

use crate::config::LoadedConfig;
use crate::CliError;

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const ZCA_FILE: &str = "zca.bin";
pub const TOP_K: [usize; 2] = [1, 2];

/// A loaded config with command-line overrides applied.
#[derive(Clone, Debug)]
pub struct Context {
    pub loaded: LoadedConfig,
    pub out_dir: PathBuf,
    pub digest: String,
}

impl Context {
    pub fn new(config_path: &Path, seed: Option<u64>, out_dir: Option<PathBuf>) -> Result<Self, CliError> {
        let mut loaded = LoadedConfig::load(config_path)?;
        if let Some(s) = seed {
            loaded.config.seed = s;
        }
        let out_dir = out_dir.unwrap_or_else(|| loaded.output_dir());
        let digest = loaded.config.digest();
        Ok(Self { loaded, out_dir, digest })
    }

    pub fn seed(&self) -> u64 {
        self.loaded.config.seed
    }

    /// First line of every emitted file.
    pub fn header(&self) -> String {
        format!("# seed={},config_digest={}", self.seed(), self.digest)
    }

    pub fn checkpoint_path(&self, explicit: Option<&Path>) -> PathBuf {
        explicit.map_or_else(|| self.out_dir.join(CHECKPOINT_FILE), Path::to_path_buf)
    }

    fn resolve(&self, p: &Option<PathBuf>) -> PathBuf {
        self.loaded.resolve(p.as_deref().expect("validated config has the path"))
    }

    pub fn load_train_set(&self) -> Result<LabeledDataset, CliError> {
        let d = &self.loaded.config.dataset;
        let ds = match d.kind {
            DatasetKind::Mnist => dataio::load_mnist_idx(&self.resolve(&d.train_images), &self.resolve(&d.train_labels))?,
            DatasetKind::Cifar10 => {
                let paths: Vec<PathBuf> = d.train_batches.iter().map(|p| self.loaded.resolve(p)).collect();
                dataio::load_cifar10_bin(&paths)?
            }
        };
        Ok(ds.truncate(d.train_limit.unwrap_or(usize::MAX)).with_provenance(Provenance::Train))
    }

    pub fn load_test_set(&self) -> Result<LabeledDataset, CliError> {
        let d = &self.loaded.config.dataset;
        let ds = match d.kind {
            DatasetKind::Mnist => dataio::load_mnist_idx(&self.resolve(&d.test_images), &self.resolve(&d.test_labels))?,
            DatasetKind::Cifar10 => {
                let paths: Vec<PathBuf> = d.test_batches.iter().map(|p| self.loaded.resolve(p)).collect();
                dataio::load_cifar10_bin(&paths)?
            }
        };
        Ok(ds.truncate(d.test_limit.unwrap_or(usize::MAX)).with_provenance(Provenance::Test))
    }

    fn ensure_out_dir(&self, sub: Option<&str>) -> Result<PathBuf, CliError> {
        let dir = match sub {
            Some(s) => self.out_dir.join(s),
            None => self.out_dir.clone(),
        };
        fs::create_dir_all(&dir).map_err(|source| CliError::Output { path: dir.clone(), source })?;
        Ok(dir)
    }

    fn write(&self, path: &Path, body: &str) -> Result<(), CliError> {
        let text = format!("{}\n{body}", self.header());
        fs::write(path, text).map_err(|source| CliError::Output {
            path: path.to_path_buf(),
            source,
        })
    }
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|source| CliError::Output {
        path: path.to_path_buf(),
        source,
    })
}

fn apply_zca(ds: LabeledDataset, zca: &ZcaTransform) -> Result<LabeledDataset, CliError> {
    Ok(ds.map_images(|img| zca.apply(&img))?)
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub checkpoint_digest: String,
    pub report: TrainReport,
}

/// Trains from scratch and writes `checkpoint.bin`, `train_report.csv`,
/// `manifest.txt`, `config.toml`, `train_timing.csv` (and `zca.bin`).
pub fn cmd_train(ctx: &Context) -> Result<TrainOutcome, CliError> {
    let cfg = &ctx.loaded.config;
    let mut train_set = ctx.load_train_set()?;
    let dir = ctx.ensure_out_dir(None)?;
    if cfg.zca() {
        let refs: Vec<&[f32]> = train_set.images().iter().map(Image::pixels).collect();
        let zca = ZcaTransform::fit(&refs)?;
        write_bytes(&dir.join(ZCA_FILE), &zca.encode())?;
        train_set = apply_zca(train_set, &zca)?;
    }
    let net = trainer::init_network(cfg.input_shape(), cfg.layers(), cfg.seed)?;
    let train_cfg = cfg.train_config();

    let report_path = dir.join("train_report.csv");
    let mut report_file = fs::File::create(&report_path).map_err(|source| CliError::Output {
        path: report_path.clone(),
        source,
    })?;
    let io_err = |source| CliError::Output {
        path: report_path.clone(),
        source,
    };
    writeln!(report_file, "{}\n{}", ctx.header(), EpochRecord::CSV_HEADER).map_err(io_err)?;
    let mut write_error = None;
    let (net, mut report) = trainer::train_with(&train_set, net, &train_cfg, |rec| {
        if write_error.is_none() {
            if let Err(e) = writeln!(report_file, "{}", rec.csv_row()).and_then(|_| report_file.flush()) {
                write_error = Some(e);
            }
        }
    })?;
    if let Some(e) = write_error {
        return Err(io_err(e));
    }

    let ckpt = dir.join(CHECKPOINT_FILE);
    let digest = checkpoint::save(&ckpt, &net, cfg.seed, &ctx.digest)?;
    report.checkpoint_digest = Some(digest.clone());
    ctx.write(
        &dir.join("manifest.txt"),
        &format!(
            "seed={}\nconfig_digest={}\ncheckpoint_sha256={digest}\niterations={}\nparameters={}\n",
            cfg.seed,
            ctx.digest,
            report.iterations,
            net.parameter_count()
        ),
    )?;
    let canonical = toml::to_string(cfg).expect("config serializes");
    ctx.write(&dir.join("config.toml"), &canonical)?;
    ctx.write(
        &dir.join("train_timing.csv"),
        &format!("command,wall_clock_secs\ntrain,{:.3}\n", report.wall_clock_secs),
    )?;
    Ok(TrainOutcome {
        checkpoint: ckpt,
        checkpoint_digest: digest,
        report,
    })
}

/// Loads a checkpoint and rejects it unless its architecture is the config's.
pub fn load_checked_checkpoint(ctx: &Context, path: &Path) -> Result<(Network, String), CliError> {
    let bytes = fs::read(path).map_err(|e| apac_core::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let ck = checkpoint::decode(&bytes)?;
    let cfg = &ctx.loaded.config;
    let want: Vec<LayerSpec> = cfg.layers();
    if ck.network.input_shape() != cfg.input_shape() || ck.network.layers() != want.as_slice() {
        let show = |l: &[LayerSpec]| l.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ");
        return Err(CliError::Config(format!(
            "checkpoint {} has architecture {:?} [{}], config expects {:?} [{}]",
            path.display(),
            ck.network.input_shape(),
            show(ck.network.layers()),
            cfg.input_shape(),
            show(&want)
        )));
    }
    Ok((ck.network, checkpoint::digest_hex(&bytes)))
}

fn load_eval_set(ctx: &Context, checkpoint: &Path) -> Result<LabeledDataset, CliError> {
    let test = ctx.load_test_set()?;
    if !ctx.loaded.config.zca() {
        return Ok(test);
    }
    let path = checkpoint.parent().unwrap_or(Path::new(".")).join(ZCA_FILE);
    let bytes = fs::read(&path).map_err(|e| apac_core::Error::Io { path: path.clone(), source: e })?;
    apply_zca(test, &ZcaTransform::decode(&bytes)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErrorRow {
    pub rule: Rule,
    pub m: usize,
    pub top1: f64,
    pub top2: f64,
    pub checkpoint_digest: String,
}

impl ErrorRow {
    pub const CSV_HEADER: &'static str = "rule,m,top1_error,top2_error,checkpoint_digest";

    fn new(ev: &Evaluation, digest: &str) -> Self {
        Self {
            rule: ev.rule,
            m: ev.m,
            top1: ev.error(1).unwrap_or(f64::NAN),
            top2: ev.error(2).unwrap_or(f64::NAN),
            checkpoint_digest: digest.to_string(),
        }
    }

    pub fn csv_row(&self) -> String {
        format!("{},{},{:.6},{:.6},{}", self.rule, self.m, self.top1, self.top2, self.checkpoint_digest)
    }
}

fn rows_csv(rows: &[ErrorRow]) -> String {
    let mut s = String::from(ErrorRow::CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

/// Evaluates every `[[decision]]` entry; writes `errors.csv`,
/// `eval_timing.csv` and `outcomes/<rule>_m<M>.csv`.
pub fn cmd_eval(ctx: &Context, checkpoint: Option<&Path>) -> Result<Vec<ErrorRow>, CliError> {
    let ckpt = ctx.checkpoint_path(checkpoint);
    let (net, digest) = load_checked_checkpoint(ctx, &ckpt)?;
    let decisions = ctx.loaded.config.decision_configs()?;
    if decisions.is_empty() {
        return Err(CliError::Config("no [[decision]] entries to evaluate".into()));
    }
    let test = load_eval_set(ctx, &ckpt)?;
    let dir = ctx.ensure_out_dir(None)?;
    let outcomes = ctx.ensure_out_dir(Some("outcomes"))?;
    let mut rows = Vec::new();
    let mut timing = String::from("rule,m,wall_clock_secs\n");
    for dc in &decisions {
        let start = Instant::now();
        let ev = decision::evaluate(&net, &test, dc, &TOP_K)?;
        writeln!(timing, "{},{},{:.3}", ev.rule, ev.m, start.elapsed().as_secs_f64()).unwrap();
        ctx.write(&outcomes.join(format!("{}_m{}.csv", ev.rule, ev.m)), &ev.outcomes_csv())?;
        rows.push(ErrorRow::new(&ev, &digest));
    }
    ctx.write(&dir.join("errors.csv"), &rows_csv(&rows))?;
    ctx.write(&dir.join("eval_timing.csv"), &timing)?;
    Ok(rows)
}

/// One row per `(rule, M)` from `[sweep]`; writes `sweep.csv` and
/// `sweep_timing.csv`.
pub fn cmd_sweep_m(ctx: &Context, checkpoint: Option<&Path>) -> Result<Vec<ErrorRow>, CliError> {
    let ckpt = ctx.checkpoint_path(checkpoint);
    let (net, digest) = load_checked_checkpoint(ctx, &ckpt)?;
    let cfg = &ctx.loaded.config;
    let test = load_eval_set(ctx, &ckpt)?;
    let spec = cfg.deform_spec()?;
    let dir = ctx.ensure_out_dir(None)?;
    let mut rows = Vec::new();
    let mut timing = String::from("rule,wall_clock_secs\n");
    for &rule in &cfg.sweep.rules {
        let start = Instant::now();
        let dc = DecisionConfig {
            rule,
            m: *cfg.sweep.m_list.last().unwrap(),
            deform: spec.clone(),
            seed: cfg.seed,
        };
        let evs = if rule == Rule::NonApac {
            vec![decision::evaluate(&net, &test, &dc, &TOP_K)?]
        } else {
            decision::evaluate_sweep(&net, &test, &dc, &cfg.sweep.m_list, &TOP_K)?
        };
        rows.extend(evs.iter().map(|ev| ErrorRow::new(ev, &digest)));
        writeln!(timing, "{rule},{:.3}", start.elapsed().as_secs_f64()).unwrap();
    }
    ctx.write(&dir.join("sweep.csv"), &rows_csv(&rows))?;
    ctx.write(&dir.join("sweep_timing.csv"), &timing)?;
    Ok(rows)
}

/// Min-max normalizes one map to bytes; a constant map becomes mid-gray.
pub fn normalize_map(values: &[f32]) -> Vec<u8> {
    let lo = values.iter().cloned().fold(f32::INFINITY, f32::min);
    let hi = values.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let range = hi - lo;
    values
        .iter()
        .map(|&v| {
            let t = if range > 0.0 { (v - lo) / range } else { 0.5 };
            (t * 255.0).round() as u8
        })
        .collect()
}

/// PGM (1 channel) or PPM (3 channels) from a channel-planar `[C,H,W]` map.
pub fn encode_pnm(planar: &[u8], channels: usize, height: usize, width: usize, comment: &str) -> Option<Vec<u8>> {
    let magic = match channels {
        1 => "P5",
        3 => "P6",
        _ => return None,
    };
    let mut out = format!("{magic}\n{comment}\n{width} {height}\n255\n").into_bytes();
    let plane = height * width;
    for i in 0..plane {
        for c in 0..channels {
            out.push(planar[c * plane + i]);
        }
    }
    Some(out)
}

/// Writes `count` randomly chosen first-layer weight maps to
/// `weight_maps/`.
pub fn cmd_export_weight_maps(ctx: &Context, checkpoint: Option<&Path>, count: usize) -> Result<Vec<PathBuf>, CliError> {
    let ckpt = ctx.checkpoint_path(checkpoint);
    let (net, _) = load_checked_checkpoint(ctx, &ckpt)?;
    let weights = &net.params()[0];
    let [c, h, w] = net.input_shape();
    let (units, map_shape) = match net.layers()[0] {
        LayerSpec::FullyConnected { out_units } => (out_units, [c, h, w]),
        LayerSpec::ConvValid { kernel, out_maps } => (out_maps, [c, kernel, kernel]),
        ref other => return Err(CliError::Config(format!("first layer `{other}` has no weight maps"))),
    };
    let map_len: usize = map_shape.iter().product();
    let mut rng = RngStream::derive(ctx.seed(), domain::EXPORT, &[]);
    let chosen = rand::seq::index::sample(&mut rng, units, count.min(units)).into_vec();
    let dir = ctx.ensure_out_dir(Some("weight_maps"))?;
    let ext = if c == 1 { "pgm" } else { "ppm" };
    let mut written = Vec::new();
    for (i, unit) in chosen.into_iter().enumerate() {
        let values = &weights.data()[unit * map_len..(unit + 1) * map_len];
        let bytes = encode_pnm(&normalize_map(values), map_shape[0], map_shape[1], map_shape[2], &ctx.header())
            .ok_or_else(|| CliError::Config(format!("cannot export {c}-channel weight maps")))?;
        let path = dir.join(format!("map_{i:03}_unit_{unit}.{ext}"));
        write_bytes(&path, &bytes)?;
        written.push(path);
    }
    Ok(written)
}

/// Human-readable expansion of the effective configuration.
pub fn cmd_inspect_config(ctx: &Context) -> Result<String, CliError> {
    let cfg = &ctx.loaded.config;
    let mut s = String::new();
    writeln!(s, "config_digest = {}", ctx.digest).unwrap();
    writeln!(s, "seed = {}", cfg.seed).unwrap();
    writeln!(s, "output = {}", ctx.out_dir.display()).unwrap();
    writeln!(s, "dataset = {} (zca: {})", cfg.dataset.kind, cfg.zca()).unwrap();
    let layers: Vec<String> = cfg.layers().iter().map(ToString::to_string).collect();
    writeln!(s, "input = {:?}", cfg.input_shape()).unwrap();
    writeln!(s, "layers = {}", layers.join(" ")).unwrap();
    let net = Network::zeroed(cfg.input_shape(), cfg.layers())?;
    writeln!(s, "parameters = {}", net.parameter_count()).unwrap();
    let t = cfg.train_config();
    writeln!(
        s,
        "train = {} epochs, batch {}, lr {} x {}^epoch, momentum {}, l2 {}, augment {}, class_distinctive {}",
        t.epochs,
        t.optim.batch_size,
        t.optim.initial_lr,
        t.optim.decay_per_epoch,
        t.optim.momentum,
        t.optim.l2_factor,
        t.deform.is_some(),
        t.class_distinctive
    )
    .unwrap();
    if let Some(spec) = cfg.deform_spec()? {
        writeln!(s, "deform = {}", toml::to_string(&spec).expect("spec serializes").replace('\n', "\n  ")).unwrap();
    }
    for d in cfg.decision_configs()? {
        writeln!(s, "decision = {} M={} seed={}", d.rule, d.m, d.seed).unwrap();
    }
    let rules: Vec<String> = cfg.sweep.rules.iter().map(ToString::to_string).collect();
    writeln!(s, "sweep = {:?} over {}", cfg.sweep.m_list, rules.join(", ")).unwrap();
    Ok(s)
}
