//! Batch experiment runner: each command reads a config, writes its
//! artifacts under the output directory and records them in `manifest.json`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::classifier::ClassifierHandle;
use crate::config::{Experiment, ExperimentConfig, Persona, SetupConfig};
use crate::denoiser::{AnalyticDenoiser, GuidancePath};
use crate::error::{Error, Result};
use crate::eval::{self, read_sweep_csv, write_sweep_csv, MetricsReport, SweepRow};
use crate::guidance::{sample_batch, BatchOutcome, GuidanceConfig, StabilizerConfig};
use crate::nn::{self, Mlp, NoiseMode, Trained};
use crate::numfmt::sig17;
use crate::plot::{LinePlot, Series};
use crate::sensitivity::{self, Metric, SensitivityCurve};
use crate::synthdata::{sample_dataset, LabeledDataset};

/// Oracle accuracy a configuration must reach to compete for "best".
pub const BEST_ACCURACY: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl Format {
    fn ext(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

/// Where every artifact lives, relative to the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn train_data(&self) -> PathBuf {
        self.root.join("data/train.csv")
    }

    pub fn validation_data(&self) -> PathBuf {
        self.root.join("data/validation.csv")
    }

    pub fn checkpoint(&self, persona: Persona) -> PathBuf {
        self.root.join(format!("models/{persona}.json"))
    }

    pub fn loss(&self, persona: Persona) -> PathBuf {
        self.root.join(format!("models/{persona}_loss.csv"))
    }

    pub fn samples(&self, setup: &str) -> PathBuf {
        self.root.join(format!("samples/{setup}.csv"))
    }

    pub fn sample_report(&self, setup: &str) -> PathBuf {
        self.root.join(format!("samples/{setup}_report.json"))
    }

    pub fn sweep(&self, setup: &str, format: Format) -> PathBuf {
        self.root.join(format!("sweep/{setup}.{}", format.ext()))
    }

    pub fn sweep_plot(&self, metric: &str) -> PathBuf {
        self.root.join(format!("sweep/{metric}.svg"))
    }

    pub fn sensitivity(&self, stem: &str, ext: &str) -> PathBuf {
        self.root.join(format!("sensitivity/{stem}.{ext}"))
    }

    pub fn report(&self, format: Format) -> PathBuf {
        self.root.join(format!("report.{}", format.ext()))
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    fn relative(&self, p: &Path) -> String {
        p.strip_prefix(&self.root).unwrap_or(p).to_string_lossy().replace('\\', "/")
    }
}

/// Config hash of the most recent run plus the hash each file was written under.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub config_hash: String,
    pub files: BTreeMap<String, String>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        match std::fs::read_to_string(path) {
            Ok(text) => Ok(serde_json::from_str(&text)?),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self::default()),
            Err(e) => Err(Error::io(path, e)),
        }
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    ensure_parent(path)?;
    Ok(csv::Writer::from_path(path)?)
}

/// Writes the resolved config and records `files` in the manifest.
fn record(exp: &Experiment, layout: &Layout, files: &[PathBuf]) -> Result<()> {
    let mut resolved = exp.resolved_config();
    resolved.output_dir = PathBuf::from(".");
    write_text(&layout.config(), &resolved.to_json()?)?;
    let mut m = Manifest::load(&layout.manifest())?;
    m.config_hash = exp.hash().to_string();
    for f in files.iter().chain(std::iter::once(&layout.config())) {
        m.files.insert(layout.relative(f), exp.hash().to_string());
    }
    write_text(&layout.manifest(), &serde_json::to_string_pretty(&m)?)
}

fn missing(path: &Path, hint: &str) -> Error {
    Error::MissingArtifact { path: path.display().to_string(), hint: hint.into() }
}

/// Training and validation sets drawn from the configured mixture.
pub fn datasets(exp: &Experiment) -> Result<(LabeledDataset, LabeledDataset)> {
    let d = &exp.config.data;
    let train = sample_dataset(&exp.spec, d.n_train, exp.seed_for("train-data"))?;
    let validation = sample_dataset(&exp.spec, d.n_validation, exp.seed_for("validation-data"))?;
    Ok((train, validation))
}

pub fn train_persona(exp: &Experiment, persona: Persona, data: &LabeledDataset) -> Result<Trained> {
    let (cfg, mode) = match persona {
        Persona::NonRobust => (&exp.config.classifiers.non_robust, NoiseMode::Clean),
        Persona::Robust => (&exp.config.classifiers.robust, NoiseMode::ForwardNoised(&exp.schedule)),
        Persona::BayesOracle => return Err(Error::InvalidArgument("the Bayes oracle is not trained".into())),
    };
    let init = Mlp::random(&exp.layer_sizes(), exp.config.classifiers.activation, exp.seed_for(&format!("init-{persona}")))?;
    nn::train(&init, data, mode, cfg, exp.seed_for(&format!("train-{persona}")))
}

/// The classifiers an experiment can guide with; trained ones are optional.
#[derive(Debug, Clone)]
pub struct Classifiers {
    pub non_robust: Option<ClassifierHandle>,
    pub robust: Option<ClassifierHandle>,
    pub oracle: ClassifierHandle,
}

impl Classifiers {
    pub fn new(exp: &Experiment, non_robust: Option<Mlp>, robust: Option<Mlp>) -> Result<Self> {
        Ok(Self {
            non_robust: non_robust.map(ClassifierHandle::NonRobust),
            robust: robust.map(ClassifierHandle::Robust),
            oracle: ClassifierHandle::bayes_oracle(&exp.spec)?,
        })
    }

    /// Loads the checkpoints for `personas` from the output directory.
    pub fn load(exp: &Experiment, layout: &Layout, personas: &[Persona]) -> Result<Self> {
        let get = |p: Persona| -> Result<Option<Mlp>> {
            if !personas.contains(&p) {
                return Ok(None);
            }
            let path = layout.checkpoint(p);
            if !path.exists() {
                return Err(missing(&path, &format!("run `guidelab train --persona {p}` first")));
            }
            let model = Mlp::load(&path)?;
            if model.sizes() != exp.layer_sizes().as_slice() {
                return Err(Error::InvalidModel(format!(
                    "{} has layer sizes {:?}, config expects {:?}",
                    path.display(),
                    model.sizes(),
                    exp.layer_sizes()
                )));
            }
            Ok(Some(model))
        };
        Self::new(exp, get(Persona::NonRobust)?, get(Persona::Robust)?)
    }

    pub fn get(&self, persona: Persona) -> Result<&ClassifierHandle> {
        match persona {
            Persona::NonRobust => self.non_robust.as_ref(),
            Persona::Robust => self.robust.as_ref(),
            Persona::BayesOracle => Some(&self.oracle),
        }
        .ok_or_else(|| Error::InvalidArgument(format!("classifier {persona} not loaded")))
    }
}

pub fn guidance_for<'a>(exp: &Experiment, setup: &SetupConfig, classifiers: &'a Classifiers, scale: f64) -> Result<GuidanceConfig<'a>> {
    let mut cfg = GuidanceConfig::new(classifiers.get(setup.classifier)?, exp.config.guidance.target);
    cfg.scale = scale;
    cfg.path = setup.path;
    cfg.stabilizer = setup.stabilizer;
    cfg.objective = exp.config.guidance.objective;
    Ok(cfg)
}

fn load_validation(exp: &Experiment, layout: &Layout) -> Result<LabeledDataset> {
    let path = layout.validation_data();
    if !path.exists() {
        return Err(missing(&path, "run `guidelab gen-data` first"));
    }
    LabeledDataset::read_csv(&path, exp.seed_for("validation-data"))
}

pub fn cmd_gen_data(exp: &Experiment, layout: &Layout) -> Result<Vec<PathBuf>> {
    let (train, validation) = datasets(exp)?;
    let files = vec![layout.train_data(), layout.validation_data()];
    ensure_parent(&files[0])?;
    train.write_csv(&files[0])?;
    validation.write_csv(&files[1])?;
    record(exp, layout, &files)?;
    Ok(files)
}

pub fn cmd_train(exp: &Experiment, layout: &Layout, persona: Persona) -> Result<Vec<PathBuf>> {
    let path = layout.train_data();
    if !path.exists() {
        return Err(missing(&path, "run `guidelab gen-data` first"));
    }
    let data = LabeledDataset::read_csv(&path, exp.seed_for("train-data"))?;
    let trained = train_persona(exp, persona, &data)?;
    let files = vec![layout.checkpoint(persona), layout.loss(persona)];
    ensure_parent(&files[0])?;
    trained.model.save(&files[0])?;
    let mut w = csv_writer(&files[1])?;
    w.write_record(["epoch", "loss"])?;
    for (i, l) in trained.losses.iter().enumerate() {
        w.write_record([(i + 1).to_string(), sig17(*l)])?;
    }
    w.flush().map_err(|e| Error::io(&files[1], e))?;
    record(exp, layout, &files)?;
    Ok(files)
}

/// What `cmd_sensitivity` measures along the coupled trajectories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum CurveKind {
    /// Classification accuracy after noising (raw) or denoising (x0pred).
    Accuracy,
    /// Mean |Δlogits| / |Δx| between adjacent steps of shared-noise trajectories.
    Logit,
    /// Same ratio for the guidance gradient.
    Gradient,
    /// Same ratio for the stabilized guidance gradient.
    Stabilized,
}

impl fmt::Display for CurveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CurveKind::Accuracy => "accuracy",
            CurveKind::Logit => "logit",
            CurveKind::Gradient => "gradient",
            CurveKind::Stabilized => "stabilized",
        })
    }
}

impl FromStr for CurveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        <Self as clap::ValueEnum>::from_str(s, true).map_err(|_| Error::InvalidArgument(format!("unknown curve kind {s:?}")))
    }
}

#[derive(Debug, Clone, Serialize)]
struct AccuracyRow {
    t: usize,
    accuracy: f64,
}

pub fn cmd_sensitivity(
    exp: &Experiment,
    layout: &Layout,
    persona: Persona,
    kind: CurveKind,
    path: GuidancePath,
    stabilizer: StabilizerConfig,
    format: Format,
) -> Result<Vec<PathBuf>> {
    stabilizer.validate()?;
    let data = load_validation(exp, layout)?;
    let classifiers = Classifiers::load(exp, layout, &[persona].into_iter().filter(Persona::is_trained).collect::<Vec<_>>())?;
    let h = classifiers.get(persona)?;
    let dn = AnalyticDenoiser::new(&exp.spec, &exp.schedule)?;
    let seed = exp.seed_for("sensitivity");
    let mut stem = format!("{kind}_{persona}_{path}");
    if kind == CurveKind::Stabilized {
        stem.push('_');
        stem.push_str(&stabilizer.to_string().replace(':', "-"));
    }
    let table = layout.sensitivity(&stem, format.ext());
    let svg = layout.sensitivity(&stem, "svg");
    ensure_parent(&table)?;
    let label = format!("{persona} {path}");
    let plot = if kind == CurveKind::Accuracy {
        let ts: Vec<usize> = (1..=exp.schedule.steps()).collect();
        let curve = sensitivity::accuracy_curve(h, &dn, &data, path, &ts, seed)?;
        match format {
            Format::Csv => {
                let mut w = csv_writer(&table)?;
                w.write_record(["t", "accuracy", "classifier", "path"])?;
                for &(t, a) in &curve {
                    w.write_record([t.to_string(), sig17(a), persona.to_string(), path.to_string()])?;
                }
                w.flush().map_err(|e| Error::io(&table, e))?;
            }
            Format::Json => {
                let rows: Vec<AccuracyRow> = curve.iter().map(|&(t, accuracy)| AccuracyRow { t, accuracy }).collect();
                write_text(&table, &serde_json::to_string_pretty(&rows)?)?;
            }
        }
        LinePlot::new(format!("accuracy under noise: {label}"), "t", "accuracy")
            .with_series(Series::new(label, curve.iter().map(|&(t, a)| (t as f64, a)).collect()))
    } else {
        let metric = match kind {
            CurveKind::Logit => Metric::Logit,
            CurveKind::Gradient => Metric::Gradient,
            _ => Metric::Stabilized(stabilizer),
        };
        let curve = sensitivity::curve(h, &dn, &data, metric, path, exp.config.guidance.objective, seed)?;
        match format {
            Format::Csv => curve.write_csv(&table)?,
            Format::Json => write_text(&table, &serde_json::to_string_pretty(&curve)?)?,
        }
        curve_plot(&curve, &label)
    };
    plot.write(&svg, exp.hash())?;
    let files = vec![table, svg];
    record(exp, layout, &files)?;
    Ok(files)
}

fn curve_plot(curve: &SensitivityCurve, label: &str) -> LinePlot {
    let title = if curve.stabilizer == "identity" {
        format!("{}: {label}", curve.metric)
    } else {
        format!("{} ({}): {label}", curve.metric, curve.stabilizer)
    };
    LinePlot::new(title, "t", "mean sensitivity")
        .log_y(true)
        .with_series(Series::new(label, curve.points.iter().map(|p| (p.t as f64, p.mean)).collect()))
}

fn write_samples(exp: &Experiment, batch: &BatchOutcome, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header: Vec<String> = (0..batch.dim).map(|i| format!("x{i}")).collect();
    header.extend(["diverged", "seed", "config_hash"].map(String::from));
    w.write_record(&header)?;
    for c in &batch.chains {
        let mut row: Vec<String> = match &c.sample {
            Some(x) => x.iter().map(|v| sig17(*v)).collect(),
            None => vec![sig17(f64::NAN); batch.dim],
        };
        row.push(c.sample.is_none().to_string());
        row.push(c.seed.to_string());
        row.push(exp.hash().to_string());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn personas_of<'a>(setups: impl IntoIterator<Item = &'a SetupConfig>) -> Vec<Persona> {
    let mut p: Vec<Persona> = setups.into_iter().map(|s| s.classifier).filter(Persona::is_trained).collect();
    p.sort();
    p.dedup();
    p
}

/// Guided batch for the configured sample setup. Fails with
/// `EmptyReport` after writing the samples if every chain diverged.
pub fn cmd_sample(exp: &Experiment, layout: &Layout) -> Result<(Vec<PathBuf>, MetricsReport)> {
    let s = &exp.config.sample;
    let setup = exp.config.setup(&s.setup)?;
    let classifiers = Classifiers::load(exp, layout, &personas_of([setup]))?;
    let dn = AnalyticDenoiser::new(&exp.spec, &exp.schedule)?;
    let cfg = guidance_for(exp, setup, &classifiers, s.scale)?;
    let batch = sample_batch(&dn, &cfg, s.n_chains, exp.seed_for("sample"))?;
    let samples = layout.samples(&setup.name);
    write_samples(exp, &batch, &samples)?;
    let report = eval::evaluate_batch(&batch, &exp.spec, cfg.target, Some(cfg.classifier), exp.seed_for("sample-eval"));
    let mut report = match report {
        Ok(r) => r,
        Err(e) => {
            record(exp, layout, &[samples])?;
            return Err(e);
        }
    };
    report.config_hash = exp.hash().to_string();
    let json = layout.sample_report(&setup.name);
    write_text(&json, &report.to_json()?)?;
    let files = vec![samples, json];
    record(exp, layout, &files)?;
    Ok((files, report))
}

/// Scale sweep of every configured setup, run in memory.
/// Sweep rows per setup, in config order.
pub type SetupSweeps = Vec<(String, Vec<SweepRow>)>;

pub fn run_sweeps(exp: &Experiment, classifiers: &Classifiers) -> Result<SetupSweeps> {
    let dn = AnalyticDenoiser::new(&exp.spec, &exp.schedule)?;
    let sw = &exp.config.sweep;
    exp.config
        .setups
        .iter()
        .map(|setup| {
            let base = guidance_for(exp, setup, classifiers, 0.0)?;
            let mut rows = eval::sweep(&dn, &base, &sw.scales, sw.n_chains, exp.seed_for("sweep"))?;
            for r in rows.iter_mut().filter_map(|r| r.report.as_mut()) {
                r.config_hash = exp.hash().to_string();
            }
            Ok((setup.name.clone(), rows))
        })
        .collect()
}

pub fn cmd_sweep(exp: &Experiment, layout: &Layout, format: Format) -> Result<(Vec<PathBuf>, SetupSweeps)> {
    let classifiers = Classifiers::load(exp, layout, &personas_of(&exp.config.setups))?;
    let results = run_sweeps(exp, &classifiers)?;
    let mut files = Vec::new();
    for (name, rows) in &results {
        let path = layout.sweep(name, format);
        ensure_parent(&path)?;
        match format {
            Format::Csv => write_sweep_csv(rows, &path)?,
            Format::Json => write_text(&path, &serde_json::to_string_pretty(rows)?)?,
        }
        files.push(path);
    }
    type Panel = (&'static str, &'static str, fn(&SweepRow) -> f64);
    let panels: [Panel; 3] =
        [("accuracy", "oracle accuracy", SweepRow::acc_oracle), ("fd", "FD", SweepRow::fd), ("cfd", "cFD", SweepRow::cfd)];
    for (stem, y_label, get) in panels {
        let mut plot = LinePlot::new(format!("{y_label} vs guidance scale"), "s", y_label);
        for (name, rows) in &results {
            plot = plot.with_series(Series::new(name.clone(), rows.iter().map(|r| (r.scale, get(r))).collect()));
        }
        let path = layout.sweep_plot(stem);
        plot.write(&path, exp.hash())?;
        files.push(path);
    }
    record(exp, layout, &files)?;
    let all_diverged = results.iter().flat_map(|(_, rows)| rows).all(|r| r.report.is_none());
    if all_diverged {
        let n = results.iter().flat_map(|(_, rows)| rows).map(|r| r.n_diverged).sum();
        return Err(Error::EmptyReport { n });
    }
    Ok((files, results))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub setup: String,
    pub classifier: Persona,
    pub path: GuidancePath,
    pub stabilizer: String,
    pub scale: f64,
    pub acc_oracle: f64,
    pub acc_guiding: f64,
    pub fd: f64,
    pub cfd: f64,
    pub n: usize,
    pub n_diverged: usize,
    pub qualifies: bool,
    pub best: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config_hash: String,
    pub accuracy_threshold: f64,
    pub best: Option<usize>,
    pub rows: Vec<ReportRow>,
}

impl Report {
    pub fn best_row(&self) -> Option<&ReportRow> {
        self.best.map(|i| &self.rows[i])
    }

    /// Flags the minimum-cfd row among those reaching the accuracy threshold.
    pub fn from_rows(config_hash: String, mut rows: Vec<ReportRow>) -> Self {
        for r in rows.iter_mut() {
            r.qualifies = r.acc_oracle >= BEST_ACCURACY && r.cfd.is_finite();
            r.best = false;
        }
        let best = rows
            .iter()
            .enumerate()
            .filter(|(_, r)| r.qualifies)
            .min_by(|a, b| a.1.cfd.total_cmp(&b.1.cfd))
            .map(|(i, _)| i);
        if let Some(i) = best {
            rows[i].best = true;
        }
        Report { config_hash, accuracy_threshold: BEST_ACCURACY, best, rows }
    }
}

fn sweep_rows(layout: &Layout, setup: &SetupConfig) -> Result<Vec<ReportRow>> {
    let mk = |scale, acc_oracle, acc_guiding, fd, cfd, n, n_diverged| ReportRow {
        setup: setup.name.clone(),
        classifier: setup.classifier,
        path: setup.path,
        stabilizer: setup.stabilizer.to_string(),
        scale,
        acc_oracle,
        acc_guiding,
        fd,
        cfd,
        n,
        n_diverged,
        qualifies: false,
        best: false,
    };
    let csv = layout.sweep(&setup.name, Format::Csv);
    if csv.exists() {
        return Ok(read_sweep_csv(&csv)?.into_iter().map(|(s, a, g, f, c, n, d)| mk(s, a, g, f, c, n, d)).collect());
    }
    let json = layout.sweep(&setup.name, Format::Json);
    if json.exists() {
        let text = std::fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
        let rows: Vec<SweepRow> = serde_json::from_str(&text)?;
        return Ok(rows
            .iter()
            .map(|r| {
                let g = r.report.as_ref().and_then(|m| m.target_accuracy_guiding_classifier).unwrap_or(f64::NAN);
                mk(r.scale, r.acc_oracle(), g, r.fd(), r.cfd(), r.n, r.n_diverged)
            })
            .collect());
    }
    Err(missing(&csv, "run `guidelab sweep` first"))
}

/// Consolidated comparison of every setup's sweep found in `out_dir`.
pub fn cmd_report(out_dir: &Path, format: Format) -> Result<(PathBuf, Report)> {
    let layout = Layout::new(out_dir);
    let cfg_path = layout.config();
    if !cfg_path.exists() {
        return Err(missing(&cfg_path, "run any experiment command with this output directory first"));
    }
    let text = std::fs::read_to_string(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?;
    let config = ExperimentConfig::from_json(&text)?;
    let exp = Experiment::new(config, out_dir)?.with_output_dir(out_dir);
    let mut rows = Vec::new();
    for setup in &exp.config.setups {
        rows.extend(sweep_rows(&layout, setup)?);
    }
    let report = Report::from_rows(exp.hash().to_string(), rows);
    let path = layout.report(format);
    match format {
        Format::Json => write_text(&path, &serde_json::to_string_pretty(&report)?)?,
        Format::Csv => {
            let mut w = csv_writer(&path)?;
            w.write_record([
                "setup",
                "classifier",
                "path",
                "stabilizer",
                "s",
                "acc_oracle",
                "acc_guiding",
                "fd",
                "cfd",
                "n",
                "n_diverged",
                "qualifies",
                "best",
                "config_hash",
            ])?;
            for r in &report.rows {
                w.write_record([
                    r.setup.clone(),
                    r.classifier.to_string(),
                    r.path.to_string(),
                    r.stabilizer.clone(),
                    sig17(r.scale),
                    sig17(r.acc_oracle),
                    sig17(r.acc_guiding),
                    sig17(r.fd),
                    sig17(r.cfd),
                    r.n.to_string(),
                    r.n_diverged.to_string(),
                    r.qualifies.to_string(),
                    r.best.to_string(),
                    report.config_hash.clone(),
                ])?;
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
        }
    }
    record(&exp, &layout, std::slice::from_ref(&path))?;
    Ok((path, report))
}

/// Sensitivity curves produced by `run`: accuracy, logit and gradient
/// sensitivity per classifier, plus the stabilized x0pred variants.
pub fn default_curves() -> Vec<(Persona, CurveKind, GuidancePath, StabilizerConfig)> {
    use crate::denoiser::JacobianMode::Full;
    let raw = GuidancePath::Raw;
    let x0 = GuidancePath::X0Pred(Full);
    let id = StabilizerConfig::Identity;
    let mut v = Vec::new();
    for kind in [CurveKind::Accuracy, CurveKind::Logit, CurveKind::Gradient] {
        v.push((Persona::NonRobust, kind, raw, id));
        v.push((Persona::Robust, kind, raw, id));
        v.push((Persona::NonRobust, kind, x0, id));
    }
    for s in [StabilizerConfig::Ema { beta: 0.9 }, StabilizerConfig::Ema { beta: 0.99 }, StabilizerConfig::adam()] {
        v.push((Persona::NonRobust, CurveKind::Stabilized, x0, s));
    }
    v
}
