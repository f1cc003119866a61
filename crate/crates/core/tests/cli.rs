use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use guidelab::cli::{self, CurveKind, Format, Layout};
use guidelab::config::{Experiment, ExperimentConfig, Persona, SetupConfig, DEFAULT_CONFIG};
use guidelab::guidance::StabilizerConfig;
use guidelab::{Error, GuidancePath, JacobianMode};

fn small_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::from_json(DEFAULT_CONFIG).unwrap();
    c.schedule.steps = 60;
    c.data.n_train = 400;
    c.data.n_validation = 120;
    c.classifiers.hidden = vec![12, 12];
    c.classifiers.non_robust.epochs = 4;
    c.classifiers.robust.epochs = 4;
    c.sample.n_chains = 40;
    c.sweep.n_chains = 30;
    c.sweep.scales = vec![0.0, 0.0, 2.0];
    c
}

fn small(dir: &Path) -> (Experiment, Layout) {
    let exp = Experiment::new(small_config(), Path::new(".")).unwrap().with_output_dir(dir);
    (exp, Layout::new(dir))
}

fn run_all(exp: &Experiment, layout: &Layout) {
    cli::cmd_gen_data(exp, layout).unwrap();
    cli::cmd_train(exp, layout, Persona::NonRobust).unwrap();
    cli::cmd_train(exp, layout, Persona::Robust).unwrap();
    for (p, kind, path, stab) in cli::default_curves() {
        cli::cmd_sensitivity(exp, layout, p, kind, path, stab, Format::Csv).unwrap();
    }
    cli::cmd_sample(exp, layout).unwrap();
    cli::cmd_sweep(exp, layout, Format::Csv).unwrap();
    cli::cmd_report(&layout.root, Format::Csv).unwrap();
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn pipeline_is_byte_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (exp_a, la) = small(a.path());
    let (exp_b, lb) = small(b.path());
    run_all(&exp_a, &la);
    run_all(&exp_b, &lb);
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    assert!(ta.len() > 30, "{} files", ta.len());
    assert_eq!(ta.keys().collect::<Vec<_>>(), tb.keys().collect::<Vec<_>>());
    for (k, v) in &ta {
        assert!(v == &tb[k], "{} differs", k.display());
    }
    let manifest: cli::Manifest = serde_json::from_slice(&ta[Path::new("manifest.json")]).unwrap();
    assert_eq!(manifest.config_hash, exp_a.hash());
    for k in ta.keys().filter(|k| k.as_os_str() != "manifest.json") {
        assert_eq!(manifest.files.get(&k.to_string_lossy().replace('\\', "/")).map(String::as_str), Some(exp_a.hash()), "{}", k.display());
    }
    for (k, v) in ta.iter().filter(|(k, _)| k.extension().is_some_and(|e| e == "svg")) {
        let text = String::from_utf8(v.clone()).unwrap();
        assert!(text.contains(&format!("config_hash={}", exp_a.hash())), "{}", k.display());
    }
}

#[test]
fn repeated_scales_give_identical_rows_and_embedded_hashes() {
    let dir = tempfile::tempdir().unwrap();
    let (exp, layout) = small(dir.path());
    cli::cmd_gen_data(&exp, &layout).unwrap();
    cli::cmd_train(&exp, &layout, Persona::NonRobust).unwrap();
    cli::cmd_train(&exp, &layout, Persona::Robust).unwrap();
    let (_, results) = cli::cmd_sweep(&exp, &layout, Format::Json).unwrap();
    for (_, rows) in &results {
        assert_eq!(rows[0], rows[1]);
        assert_eq!(rows[0].report.as_ref().unwrap().config_hash, exp.hash());
    }
    // Every setup shares the chain seeds, so the unguided rows agree across setups.
    assert!(results.windows(2).all(|w| w[0].1[0].report == w[1].1[0].report));
    let (path, report) = cli::cmd_report(dir.path(), Format::Json).unwrap();
    assert_eq!(report.rows.len(), 3 * 3);
    assert_eq!(report.config_hash, exp.hash());
    let back: cli::Report = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    assert_eq!(back.rows.len(), report.rows.len());

    let (_, sample) = cli::cmd_sample(&exp, &layout).unwrap();
    assert_eq!(sample.config_hash, exp.hash());
    let csv = std::fs::read_to_string(layout.samples(&exp.config.sample.setup)).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "x0,x1,diverged,seed,config_hash");
    assert_eq!(lines.count(), exp.config.sample.n_chains);
}

#[test]
fn commands_report_missing_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let (exp, layout) = small(dir.path());
    assert!(matches!(cli::cmd_train(&exp, &layout, Persona::Robust), Err(Error::MissingArtifact { .. })));
    cli::cmd_gen_data(&exp, &layout).unwrap();
    let err = cli::cmd_sample(&exp, &layout).unwrap_err();
    assert!(matches!(err, Error::MissingArtifact { .. }), "{err}");
    assert!(err.to_string().contains("non_robust"));
    assert!(matches!(cli::cmd_report(&dir.path().join("nowhere"), Format::Csv), Err(Error::MissingArtifact { .. })));
    assert!(matches!(cli::cmd_report(dir.path(), Format::Csv), Err(Error::MissingArtifact { .. })));
}

#[test]
fn checkpoint_shape_is_checked() {
    let dir = tempfile::tempdir().unwrap();
    let (exp, layout) = small(dir.path());
    cli::cmd_gen_data(&exp, &layout).unwrap();
    cli::cmd_train(&exp, &layout, Persona::NonRobust).unwrap();
    let mut cfg = small_config();
    cfg.classifiers.hidden = vec![8];
    let other = Experiment::new(cfg, Path::new(".")).unwrap().with_output_dir(dir.path());
    assert!(matches!(
        cli::cmd_sensitivity(&other, &layout, Persona::NonRobust, CurveKind::Gradient, GuidancePath::Raw, StabilizerConfig::Identity, Format::Csv),
        Err(Error::InvalidModel(_))
    ));
}

#[test]
fn bundled_config_sensitivity_ordering() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::from_json(DEFAULT_CONFIG).unwrap();
    cfg.data.n_validation = 200;
    let exp = Experiment::new(cfg, Path::new(".")).unwrap().with_output_dir(dir.path());
    let layout = Layout::new(dir.path());
    cli::cmd_gen_data(&exp, &layout).unwrap();
    cli::cmd_train(&exp, &layout, Persona::NonRobust).unwrap();
    cli::cmd_train(&exp, &layout, Persona::Robust).unwrap();
    let mean_of = |p: Persona, path: GuidancePath| {
        let files = cli::cmd_sensitivity(&exp, &layout, p, CurveKind::Gradient, path, StabilizerConfig::Identity, Format::Csv).unwrap();
        let mut r = csv::Reader::from_path(&files[0]).unwrap();
        let means: Vec<f64> = r.records().map(|rec| rec.unwrap()[1].parse::<f64>().unwrap()).filter(|m| m.is_finite()).collect();
        means.iter().sum::<f64>() / means.len() as f64
    };
    let raw = mean_of(Persona::NonRobust, GuidancePath::Raw);
    let hat = mean_of(Persona::NonRobust, GuidancePath::X0Pred(JacobianMode::Full));
    let robust = mean_of(Persona::Robust, GuidancePath::Raw);
    assert!(robust < hat && hat < raw, "robust {robust} x0pred {hat} raw {raw}");
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_guidelab"))
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin().arg("default-config").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(String::from_utf8(out.stdout).unwrap(), DEFAULT_CONFIG);

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, DEFAULT_CONFIG.replacen("\"n_train\"", "\"n_trian\"", 1)).unwrap();
    let out = bin().args(["--config", bad.to_str().unwrap(), "gen-data"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("n_trian") && err.contains("line"), "{err}");

    // A scale large enough to overflow every chain: divergence-only batch.
    let mut cfg = small_config();
    cfg.setups.push(SetupConfig {
        name: "oracle-raw".into(),
        classifier: Persona::BayesOracle,
        path: GuidancePath::Raw,
        stabilizer: StabilizerConfig::Identity,
    });
    cfg.sample.setup = "oracle-raw".into();
    cfg.sample.scale = 1e308;
    let path = dir.path().join("boom.json");
    std::fs::write(&path, cfg.to_json().unwrap()).unwrap();
    let out_dir = dir.path().join("out");
    let run = |args: &[&str]| {
        let mut c = bin();
        c.args(["--config", path.to_str().unwrap(), "--out", out_dir.to_str().unwrap(), "--threads", "1"]).args(args);
        c.output().unwrap()
    };
    let out = run(&["sample"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(out_dir.join("samples/oracle-raw.csv")).unwrap();
    assert!(csv.lines().skip(1).all(|l| l.contains(",true,")));

    let out = run(&["sweep"]);
    assert_eq!(out.status.code(), Some(1), "missing checkpoints are an ordinary error");
    assert!(String::from_utf8_lossy(&out.stderr).contains("guidelab train"));

    let out = run(&["--seed", "9", "gen-data"]);
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8(out.stdout).unwrap();
    let seeded = Experiment::load(&path).unwrap().with_seed(9).unwrap();
    assert!(stdout.contains(seeded.hash()));
}
