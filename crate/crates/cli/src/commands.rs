use std::collections::BTreeMap;
use std::process::{Command as Process, Stdio};

use anyhow::{anyhow, bail, Context};
use serde::Serialize;

use symfeat::experiments::{prepare_splits, run_row, EvalReport, RowSpec, Splits, Table, TableReport, TrainVariant};
use symfeat::render::{bar_chart_svg, line_plot_svg, parse_pgm, render_triptych, Bar};
use symfeat::symmetry::{self, SampledLossReport, SymmetrizedLoss, ToyRotationTask, WeightFlipReport};
use symfeat::{
    load_model, load_optdigits, parse_optdigits, save_model, symmetrize, Dataset, FeatureMap, FeatureMapKind,
    GroupElement, Mlp, RawDigits, DIGIT_ARCHITECTURE,
};

use crate::config::RunConfig;
use crate::manifest::Manifest;
use crate::{Command, DataAction, Failure, Probe, Target};

type Outcome = Result<(), Failure>;

const FLIP_TOL: f64 = 1e-9;
const ORBIT_TOL: f64 = 1e-9;
const DIRECTIONAL_TOL: f64 = 1e-8;

fn json<T: Serialize>(value: &T) -> anyhow::Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

fn command_name(cmd: &Command) -> String {
    match cmd {
        Command::Data { action } => format!("data {action:?}").to_lowercase(),
        Command::Train => "train".into(),
        Command::Eval => "eval".into(),
        Command::Reproduce { target } => format!("reproduce {target:?}").to_lowercase(),
        Command::Probe { probe } => format!("probe {probe:?}").to_lowercase(),
    }
}

fn needs_data(cmd: &Command) -> bool {
    !matches!(
        cmd,
        Command::Data { action: DataAction::Fetch } | Command::Probe { probe: Probe::Orbit | Probe::Goldstone }
    )
}

/// Checks paths, runs the command and always leaves a manifest behind.
pub fn run(cmd: &Command, cfg: &RunConfig, argv: Vec<String>) -> Outcome {
    if needs_data(cmd) && !cfg.data.is_file() {
        return Err(Failure::Usage(anyhow!(
            "data file {} not found (pass --data; `symfeat data fetch` downloads a copy)",
            cfg.data.display()
        )));
    }
    if let Some(model) = &cfg.model {
        if !model.is_file() {
            return Err(Failure::Usage(anyhow!("model file {} not found", model.display())));
        }
    }
    std::fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    let mut m = Manifest::start(command_name(cmd), argv, cfg.clone());
    let result = match cmd {
        Command::Data { action } => data(*action, cfg, &mut m),
        Command::Train => train(cfg, &mut m),
        Command::Eval => eval(cfg, &mut m),
        Command::Reproduce { target: Target::Figure1 } => figure1(cfg, &mut m),
        Command::Reproduce { target } => {
            let table = if *target == Target::Table1 { Table::One } else { Table::Two };
            tables(table, cfg, &mut m)
        }
        Command::Probe { probe } => match probe {
            Probe::WeightFlip => weight_flip(cfg, &mut m),
            Probe::Orbit => orbit(cfg, &mut m),
            Probe::Goldstone => goldstone(cfg, &mut m),
            Probe::SampledLoss => sampled_loss(cfg, &mut m),
        },
    };
    let status = match &result {
        Ok(()) => "ok",
        Err(Failure::Usage(_)) => "error",
        Err(Failure::Check(_)) => "check_failed",
    };
    m.finish(status)?;
    result
}

fn corpus(cfg: &RunConfig) -> anyhow::Result<RawDigits> {
    load_optdigits(&cfg.data).with_context(|| format!("loading {}", cfg.data.display()))
}

fn splits(cfg: &RunConfig) -> anyhow::Result<Splits> {
    Ok(prepare_splits(&corpus(cfg)?.to_dataset("X"), cfg.test_fraction, cfg.split_seed)?)
}

#[derive(Serialize)]
struct Stats {
    rows: usize,
    classes: usize,
    class_counts: Vec<usize>,
    pixel_histogram: Vec<usize>,
}

fn stats_of(raw: &RawDigits) -> Stats {
    let counts = raw.class_counts();
    Stats {
        rows: raw.len(),
        classes: counts.iter().filter(|&&c| c > 0).count(),
        class_counts: counts.to_vec(),
        pixel_histogram: raw.pixel_histogram().to_vec(),
    }
}

fn fetch(url: &str) -> anyhow::Result<String> {
    let hint = "the corpus is vendored at data/optdigits.csv; use `symfeat data convert --data data/optdigits.csv`";
    let download = Process::new("curl")
        .args(["-fsSL", "--max-time", "120", url])
        .output()
        .with_context(|| format!("could not run curl to download {url}; {hint}"))?;
    if !download.status.success() {
        bail!(
            "download of {url} failed ({}); {hint}",
            String::from_utf8_lossy(&download.stderr).trim()
        );
    }
    let bytes = if url.ends_with(".gz") {
        use std::io::Write;
        let mut gz = Process::new("gzip")
            .arg("-dc")
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .context("could not run gzip to decompress the download")?;
        gz.stdin.take().expect("piped").write_all(&download.stdout)?;
        let out = gz.wait_with_output()?;
        if !out.status.success() {
            bail!("downloaded file from {url} is not valid gzip; {hint}");
        }
        out.stdout
    } else {
        download.stdout
    };
    String::from_utf8(bytes).map_err(|_| anyhow!("downloaded file from {url} is not text; {hint}"))
}

fn data(action: DataAction, cfg: &RunConfig, m: &mut Manifest) -> Outcome {
    let raw = match action {
        DataAction::Fetch => {
            let text = fetch(&cfg.url)?;
            parse_optdigits(&text, std::path::Path::new(&cfg.url))?
        }
        DataAction::Convert | DataAction::Stats => corpus(cfg)?,
    };
    let stats = stats_of(&raw);
    if action != DataAction::Stats {
        let path = m.write("optdigits.csv", raw.to_csv())?;
        println!("wrote {} rows to {}", raw.len(), path.display());
    }
    m.write("stats.json", json(&stats)?)?;
    let mut csv = String::from("class,count\n");
    for (c, n) in stats.class_counts.iter().enumerate() {
        csv.push_str(&format!("{c},{n}\n"));
    }
    m.write("class_counts.csv", csv)?;
    println!("{} rows, {} classes, class counts {:?}", stats.rows, stats.classes, stats.class_counts);
    Ok(())
}

fn train_variant(cfg: &RunConfig) -> TrainVariant {
    if cfg.train_set == "symmetrized" {
        TrainVariant::Symmetrized
    } else {
        TrainVariant::Original
    }
}

fn check_bound(report: &EvalReport) -> Outcome {
    match &report.bound {
        Some(b) if !b.holds || b.antisymmetry_violations > 0 => Err(Failure::Check(format!(
            "R + R̄ = {} with {} antisymmetry violations",
            b.sum, b.antisymmetry_violations
        ))),
        _ => Ok(()),
    }
}

fn train(cfg: &RunConfig, m: &mut Manifest) -> Outcome {
    let splits = splits(cfg)?;
    let spec = RowSpec {
        train_variant: train_variant(cfg),
        config: cfg.train_config(),
    };
    let row = run_row(&spec, &splits)?;
    let model_path = cfg.out.join("model.json");
    save_model(&row.model, &row.map, &model_path)?;
    m.record(&model_path);
    let mut curve = String::from("epoch,loss\n");
    for (i, l) in row.epoch_losses.iter().enumerate() {
        curve.push_str(&format!("{},{l}\n", i + 1));
    }
    m.write("curve.csv", curve)?;
    m.write("report.json", json(&row.report)?)?;
    println!(
        "{}: R = {:.4}, R̄ = {:.4} on {} test images",
        row.report.model_id, row.report.r, row.report.r_bar, row.report.sample_counts.test
    );
    check_bound(&row.report)
}

fn eval(cfg: &RunConfig, m: &mut Manifest) -> Outcome {
    let path = cfg
        .model
        .as_ref()
        .ok_or_else(|| anyhow!("eval needs --model <file>"))?;
    let (model, map) = load_model(path).with_context(|| format!("loading model {}", path.display()))?;
    let splits = splits(cfg)?;
    let test = if cfg.invert { splits.test.inverted() } else { splits.test };
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let report = EvalReport::evaluate(id, &model, &map, "unspecified".into(), 0, cfg.seed, &test)?;
    m.write("eval.json", json(&report)?)?;
    println!(
        "{} on {}: accuracy {:.4} ({}/{})",
        report.model_id, test.name, report.r, report.test.correct, report.test.total
    );
    check_bound(&report)
}

fn tables(table: Table, cfg: &RunConfig, m: &mut Manifest) -> Outcome {
    let splits = splits(cfg)?;
    let report = symfeat::reproduce_tables(&[table], &cfg.seeds, &cfg.train_config(), cfg.perm_seed, &splits, cfg.jobs)?;
    let stem = if table == Table::One { "table1" } else { "table2" };
    m.write(&format!("{stem}.csv"), report.to_csv())?;
    m.write(&format!("{stem}.json"), json(&report)?)?;
    m.write(&format!("{stem}.svg"), table_chart(stem, &report))?;
    let mut bands = String::from("verdict,band,detail\n");
    for b in &report.bands {
        let verdict = if b.pass { "PASS" } else { "FAIL" };
        println!("{verdict} {}: {}", b.name, b.detail);
        bands.push_str(&format!("{verdict},\"{}\",\"{}\"\n", b.name, b.detail));
    }
    m.write("bands.csv", bands)?;
    let failed = report.bands.iter().filter(|b| !b.pass).count();
    if failed > 0 {
        return Err(Failure::Check(format!("{failed} of {} bands failed", report.bands.len())));
    }
    Ok(())
}

/// Mean accuracy per table row across seeds, with the reference value as a tick.
fn table_chart(title: &str, report: &TableReport) -> String {
    let mut groups: BTreeMap<(String, String, String, String), (Vec<f64>, f64)> = BTreeMap::new();
    for r in report.rows() {
        let key = (r.bias_mode, r.features, r.train_set, r.test_set);
        let entry = groups.entry(key).or_insert((Vec::new(), r.published));
        entry.0.push(r.accuracy);
    }
    let bars: Vec<Bar> = groups
        .into_iter()
        .map(|((bias, features, train, test), (values, published))| Bar {
            label: format!("{bias} {features} {train} -> {test}"),
            value: values.iter().sum::<f64>() / values.len() as f64,
            reference: Some(published),
        })
        .collect();
    bar_chart_svg(&format!("{title}: mean accuracy over {} seeds", report.seeds.len()), &bars)
}

fn figure1(cfg: &RunConfig, m: &mut Manifest) -> Outcome {
    let ds = corpus(cfg)?.to_dataset("X");
    let six = ds
        .images
        .iter()
        .find(|i| i.label == 6)
        .ok_or_else(|| anyhow!("no image labelled 6 in {}", cfg.data.display()))?;
    let paths = render_triptych(six, &cfg.out, "figure1")?;
    for p in &paths {
        m.record(p);
    }
    let read = |i: usize| -> anyhow::Result<Vec<u8>> {
        let text = std::fs::read_to_string(&paths[i])?;
        parse_pgm(&text).ok_or_else(|| anyhow!("unreadable PGM {}", paths[i].display()))
    };
    let (orig, inv) = (read(0)?, read(1)?);
    let complement = orig.iter().zip(&inv).all(|(a, b)| u16::from(*a) + u16::from(*b) == 255);
    println!("figure1 from origin {}: inverted is the 255-complement: {complement}", six.origin_id);
    if !complement {
        return Err(Failure::Check("inverted render is not the 255-complement".into()));
    }
    Ok(())
}

fn probe_model(cfg: &RunConfig) -> anyhow::Result<(Mlp, FeatureMap)> {
    match &cfg.model {
        Some(p) => Ok(load_model(p)?),
        None => Ok((
            Mlp::init(&DIGIT_ARCHITECTURE, cfg.use_bias, cfg.seed)?,
            FeatureMap::new(cfg.features),
        )),
    }
}

#[derive(Serialize)]
struct WeightFlipProbe {
    symmetrized: WeightFlipReport,
    unsymmetrized: WeightFlipReport,
    tolerance: f64,
    pass: bool,
}

fn weight_flip(cfg: &RunConfig, m: &mut Manifest) -> Outcome {
    let (model, map) = probe_model(cfg)?;
    if map.kind() != FeatureMapKind::Identity {
        return Err(Failure::Usage(anyhow!(
            "weight flip acts on raw pixels; model uses {} features",
            map.kind()
        )));
    }
    let test: Dataset = splits(cfg)?.test;
    let closed = symmetry::weight_orbit_invariance(&model, &symmetrize(&test))?;
    let open = symmetry::weight_flip_deviation(&model, &test)?;
    let pass = closed.deviation <= FLIP_TOL;
    println!(
        "weight flip: deviation {:.3e} on ±X_test (tolerance {FLIP_TOL:e}), {:.3e} on X_test",
        closed.deviation, open.deviation
    );
    m.write(
        "weight_flip.json",
        json(&WeightFlipProbe {
            symmetrized: closed,
            unsymmetrized: open,
            tolerance: FLIP_TOL,
            pass,
        })?,
    )?;
    if !pass {
        return Err(Failure::Check("Ω(W₁) and Ω(-W₁) differ on a symmetrized set".into()));
    }
    Ok(())
}

#[derive(Serialize)]
struct OrbitProbe {
    n: usize,
    fit: symmetry::ToyFit,
    relative_spread: f64,
    tolerance: f64,
    pass: bool,
}

fn orbit(cfg: &RunConfig, m: &mut Manifest) -> Outcome {
    let task = ToyRotationTask::closed(cfg.n, cfg.seed)?;
    let fit = symmetry::train_toy(&task, cfg.seed)?;
    let profile = symmetry::orbit_loss_scan(&task, &fit.params)?;
    let spread = symmetry::relative_spread(&profile);
    let mut csv = String::from("angle,loss\n");
    for p in &profile {
        csv.push_str(&format!("{},{}\n", p.angle, p.loss));
    }
    m.write("orbit.csv", csv)?;
    let points: Vec<(f64, f64)> = profile.iter().map(|p| (p.angle, p.loss)).collect();
    m.write(
        "orbit.svg",
        line_plot_svg(&format!("symmetrized loss along the C_{} orbit", cfg.n), "rotation angle", "loss", &points),
    )?;
    let pass = spread <= ORBIT_TOL;
    println!("orbit C_{}: loss {:.6}, relative spread {spread:.3e} (tolerance {ORBIT_TOL:e})", cfg.n, fit.loss);
    m.write(
        "orbit.json",
        json(&OrbitProbe {
            n: cfg.n,
            fit,
            relative_spread: spread,
            tolerance: ORBIT_TOL,
            pass,
        })?,
    )?;
    if !pass {
        return Err(Failure::Check(format!("orbit spread {spread:.3e} exceeds {ORBIT_TOL:e}")));
    }
    Ok(())
}

#[derive(Serialize)]
struct GoldstoneEntry {
    fit: symmetry::ToyFit,
    report: symmetry::GoldstoneReport,
}

#[derive(Serialize)]
struct GoldstoneProbe {
    entries: Vec<GoldstoneEntry>,
    directional_tolerance: f64,
    /// Curvature along the generator at most 1/100 of the radial curvature, per entry.
    flat: Vec<bool>,
    /// Curvature along the generator never increases with n, up to rounding.
    non_increasing: bool,
    pass: bool,
}

fn goldstone(cfg: &RunConfig, m: &mut Manifest) -> Outcome {
    let mut sweep = cfg.sweep.clone();
    sweep.sort_unstable();
    let mut entries = Vec::new();
    let mut csv = String::from(
        "n,loss,gradient_norm,directional_derivative,curvature_generator,curvature_radial,smallest_eigenvalue\n",
    );
    for &n in &sweep {
        let task = ToyRotationTask::closed(n, cfg.seed)?;
        let fit = symmetry::train_toy(&task, cfg.seed)?;
        let report = symmetry::generator_curvature(&task, &fit.params);
        if let Some(w) = &report.warning {
            eprintln!("warning: C_{n}: {w}");
        }
        csv.push_str(&format!(
            "{n},{},{},{},{},{},{}\n",
            fit.loss,
            report.gradient_norm,
            report.directional_derivative,
            report.curvature_generator,
            report.curvature_radial,
            report.smallest_eigenvalue
        ));
        println!(
            "C_{n}: ∇Ω·d = {:.2e}, curvature along generator {:.3e}, radial {:.3e}",
            report.directional_derivative, report.curvature_generator, report.curvature_radial
        );
        entries.push(GoldstoneEntry { fit, report });
    }
    m.write("goldstone.csv", csv)?;
    let points: Vec<(f64, f64)> = entries
        .iter()
        .map(|e| ((e.report.n as f64).log10(), e.report.curvature_generator))
        .collect();
    m.write(
        "goldstone.svg",
        line_plot_svg("curvature along the rotation generator", "log10 n", "curvature", &points),
    )?;
    let flat = entries
        .iter()
        .map(|e| e.report.curvature_generator.abs() * 100.0 <= e.report.curvature_radial)
        .collect();
    let non_increasing = entries.windows(2).all(|w| {
        let slack = symmetry::curvature_noise_floor(w[0].fit.loss.max(w[1].fit.loss));
        w[1].report.curvature_generator <= w[0].report.curvature_generator + slack
    });
    let exact_ok = entries
        .iter()
        .filter(|e| e.report.n >= 360)
        .all(|e| e.report.directional_derivative.abs() <= DIRECTIONAL_TOL);
    m.write(
        "goldstone.json",
        json(&GoldstoneProbe {
            entries,
            directional_tolerance: DIRECTIONAL_TOL,
            flat,
            non_increasing,
            pass: exact_ok,
        })?,
    )?;
    if !exact_ok {
        return Err(Failure::Check(format!(
            "directional derivative along the generator exceeds {DIRECTIONAL_TOL:e} for n >= 360"
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct SampledLossProbe {
    #[serde(flatten)]
    report: SampledLossReport,
    /// Whether a statistical verdict was possible (needs at least two trials).
    assessed: bool,
    pass: bool,
}

fn sampled_loss(cfg: &RunConfig, m: &mut Manifest) -> Outcome {
    let (model, map) = probe_model(cfg)?;
    let test = splits(cfg)?.test;
    let loss = SymmetrizedLoss::new(&test, vec![GroupElement::Identity, GroupElement::Inversion])?;
    let report = symmetry::sampled_loss_expectation(&model, &map, &loss, cfg.mu, cfg.trials, cfg.seed)?;
    let (assessed, pass) = if cfg.mu == 1.0 {
        (true, report.min_trial == report.omega && report.max_trial == report.omega && report.mean == report.omega)
    } else if report.trials > 1 {
        (true, report.within_standard_errors(3.0))
    } else {
        (false, true)
    };
    println!(
        "sampled loss μ = {}: {} trials, mean/(μΩ) = {:.6}, standard error {:?}",
        cfg.mu, report.trials, report.ratio, report.standard_error
    );
    m.write("sampled_loss.json", json(&SampledLossProbe { report, assessed, pass })?)?;
    if !pass {
        return Err(Failure::Check("sampled-loss mean is not consistent with μΩ".into()));
    }
    Ok(())
}
