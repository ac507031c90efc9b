use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use epnn_core::arch::{assemble_default, gradient_check_suite};
use epnn_core::datagen::{
    dataset_stats, generate_dataset, read_dataset_csv, write_dataset_csv, Dataset, DatasetMetadata, GenConfig,
};
use epnn_core::mech::PrincipalVec3;
use epnn_core::plot::{line_chart, Series};
use epnn_core::recall::{compare, ground_truth, simulate, Driver, Trajectory, TrajectoryRow};
use epnn_core::train::{
    evaluate, fit_and_train, learning_curve, learning_curve_rows, split, training_curve_rows, write_curve_csv, Checkpoint,
    NormalizedSet, SampleSet, CHECKPOINT_FORMAT_VERSION,
};
use epnn_core::wg::IntegratorTolerances;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{DriverKind, RunConfig};
use crate::CliError;

#[derive(Debug, Serialize, Deserialize)]
struct FileDigest {
    path: PathBuf,
    sha256: String,
}

/// Everything needed to repeat a run: the effective configuration plus
/// digests of what was read and written.
#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    tool: String,
    version: String,
    command: String,
    argv: Vec<String>,
    seed: u64,
    config: RunConfig,
    config_digest: String,
    checkpoint_format: u32,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
}

pub fn config_from_manifest(path: &Path) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::new("missing-file", format!("cannot read manifest {}: {e}", path.display())))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| CliError::new("config", format!("{}: {e}", path.display())))?;
    Ok(m.config)
}

fn file_digest(path: &Path) -> Result<FileDigest, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::new("missing-file", format!("{}: {e}", path.display())))?;
    Ok(FileDigest {
        path: path.to_path_buf(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

struct Run<'a> {
    command: &'a str,
    cfg: &'a RunConfig,
    out: PathBuf,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Run<'_> {
    fn output(&mut self, name: &str) -> PathBuf {
        let p = self.out.join(name);
        self.outputs.push(p.clone());
        p
    }

    fn input(&mut self, path: &Path) -> Result<(), CliError> {
        if !path.exists() {
            return Err(CliError::new("missing-file", format!("{} does not exist", path.display())));
        }
        self.inputs.push(path.to_path_buf());
        Ok(())
    }

    fn write_manifest(&mut self, argv: &[String]) -> Result<(), CliError> {
        let config_json = serde_json::to_vec(self.cfg)?;
        let manifest = Manifest {
            tool: "epnn".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: self.command.into(),
            argv: argv.to_vec(),
            seed: self.cfg.seed,
            config: self.cfg.clone(),
            config_digest: hex::encode(Sha256::digest(&config_json)),
            checkpoint_format: CHECKPOINT_FORMAT_VERSION,
            inputs: self.inputs.iter().map(|p| file_digest(p)).collect::<Result<_, _>>()?,
            outputs: self.outputs.iter().map(|p| file_digest(p)).collect::<Result<_, _>>()?,
        };
        let path = self.out.join(format!("manifest_{}.json", self.command));
        fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
        println!("manifest: {}", path.display());
        Ok(())
    }
}

pub fn run(command: &str, cfg: &RunConfig, argv: &[String]) -> Result<(), CliError> {
    let out = cfg.out_dir();
    fs::create_dir_all(&out).map_err(|e| CliError::new("io", format!("cannot create {}: {e}", out.display())))?;
    let mut run = Run {
        command,
        cfg,
        out,
        inputs: Vec::new(),
        outputs: Vec::new(),
    };
    match command {
        "generate" => cmd_generate(&mut run)?,
        "stats" => cmd_stats(&mut run)?,
        "train" => cmd_train(&mut run)?,
        "evaluate" => cmd_evaluate(&mut run)?,
        "simulate" => cmd_simulate(&mut run)?,
        "curves" => cmd_curves(&mut run)?,
        "gradcheck" => cmd_gradcheck(&mut run)?,
        other => return Err(CliError::new("invalid-argument", format!("unknown command {other}"))),
    }
    run.write_manifest(argv)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn metadata_path(dataset: &Path) -> PathBuf {
    dataset.with_extension("meta.json")
}

fn load_dataset(run: &mut Run) -> Result<Dataset, CliError> {
    let path = run.cfg.dataset_path();
    run.input(&path)?;
    Ok(read_dataset_csv(&path)?)
}

fn cmd_generate(run: &mut Run) -> Result<(), CliError> {
    let gen: GenConfig = run.cfg.generate.resolve(run.cfg.seed);
    let ds = generate_dataset(&gen)?;
    let path = run.cfg.dataset.clone().unwrap_or_else(|| run.out.join("dataset.csv"));
    write_dataset_csv(&ds, &path)?;
    run.outputs.push(path.clone());
    let meta = DatasetMetadata::new(&gen, &ds);
    let meta_path = metadata_path(&path);
    meta.save(&meta_path)?;
    run.outputs.push(meta_path);
    let stats = dataset_stats(&ds)?;
    let stats_path = run.output("stats.txt");
    fs::write(&stats_path, stats.to_table())?;
    println!(
        "generated {} samples ({} paths completed, {} left the pressure bounds, {} failed)",
        ds.len(),
        ds.path_counts.completed,
        ds.path_counts.left_bounds,
        ds.path_counts.failed
    );
    println!("dataset: {}", path.display());
    println!("content digest: {}", meta.content_digest);
    Ok(())
}

#[derive(Serialize)]
struct StatsReport {
    n_samples: usize,
    content_digest: String,
    stats: epnn_core::datagen::DatasetStats,
    matches_metadata: Option<bool>,
}

fn cmd_stats(run: &mut Run) -> Result<(), CliError> {
    let ds = load_dataset(run)?;
    let stats = dataset_stats(&ds)?;
    let meta_path = metadata_path(&run.cfg.dataset_path());
    let matches_metadata = if meta_path.exists() {
        run.input(&meta_path)?;
        let meta = DatasetMetadata::load(&meta_path)?;
        Some(meta.stats.as_ref() == Some(&stats) && meta.content_digest == ds.content_digest())
    } else {
        None
    };
    print!("{}", stats.to_table());
    match matches_metadata {
        Some(true) => println!("statistics match the dataset metadata exactly"),
        Some(false) => println!("statistics DIFFER from the dataset metadata"),
        None => println!("no metadata sidecar found"),
    }
    let table = run.output("stats.txt");
    fs::write(&table, stats.to_table())?;
    let report = StatsReport {
        n_samples: ds.len(),
        content_digest: ds.content_digest(),
        stats,
        matches_metadata,
    };
    let json = run.output("stats.json");
    write_json(&json, &report)
}

fn cmd_train(run: &mut Run) -> Result<(), CliError> {
    let ds = load_dataset(run)?;
    let cfg = &run.cfg.train.config;
    let arch = run.cfg.train.arch;
    let sp = split(&ds, cfg)?;
    let model = assemble_default(arch, cfg.seed)?;
    let outcome = fit_and_train(
        model,
        &SampleSet::from_dataset(&sp.train),
        &SampleSet::from_dataset(&sp.cv),
        cfg,
        &ds.content_digest(),
    )?;
    let ckpt_path = run.cfg.checkpoint_path();
    outcome.checkpoint.save(&ckpt_path)?;
    run.outputs.push(ckpt_path.clone());
    let curve_path = run.output(&format!("training_curve_{arch}.csv"));
    write_curve_csv(BufWriter::new(File::create(&curve_path)?), training_curve_rows(&outcome.curve))?;
    let svg_path = run.output(&format!("training_curve_{arch}.svg"));
    let series: Vec<Series> = ["void_ratio", "plastic_strain", "stress"]
        .iter()
        .enumerate()
        .map(|(k, name)| Series {
            label: name,
            points: outcome.curve.iter().map(|p| (p.x, p.train.values()[k])).collect(),
        })
        .collect();
    fs::write(&svg_path, line_chart(&format!("{arch} training curve"), "epoch", "train error (%)", &series))?;
    let c = &outcome.checkpoint;
    println!("trained {arch} for {} epochs on {} samples", c.epochs, sp.train.len());
    println!("{:<16} {:>12} {:>12}", "role", "train (%)", "cv (%)");
    for (k, role) in ["void_ratio", "plastic_strain", "stress"].iter().enumerate() {
        println!("{role:<16} {:>12.4} {:>12.4}", c.final_train.values()[k], c.final_cv.values()[k]);
    }
    if arch == epnn_core::arch::ArchKind::Epnn {
        println!("shear-to-bulk ratio r = {:.6}", c.model.epnn_ratio);
    }
    println!("checkpoint: {}", ckpt_path.display());
    Ok(())
}

#[derive(Serialize)]
struct EvaluationReport {
    arch: String,
    n_test: usize,
    test: epnn_core::train::RoleErrors,
    final_train: epnn_core::train::RoleErrors,
    final_cv: epnn_core::train::RoleErrors,
    epnn_ratio: Option<f64>,
}

fn cmd_evaluate(run: &mut Run) -> Result<(), CliError> {
    let ckpt_path = run.cfg.checkpoint_path();
    run.input(&ckpt_path)?;
    let ckpt = Checkpoint::load(&ckpt_path)?;
    let ds = load_dataset(run)?;
    if ds.content_digest() != ckpt.dataset_digest {
        return Err(CliError::new(
            "invalid-argument",
            "dataset content does not match the one the checkpoint was trained on",
        ));
    }
    let sp = split(&ds, &ckpt.config)?;
    let test = NormalizedSet::new(&ckpt.model, &SampleSet::from_dataset(&sp.test))?;
    let errors = evaluate(&ckpt, &test)?;
    let arch = ckpt.model.kind;
    println!("test-split errors of the {arch} model ({} samples)", test.len());
    println!("{:<16} {:>12}", "role", "test (%)");
    for (k, role) in ["void_ratio", "plastic_strain", "stress"].iter().enumerate() {
        println!("{role:<16} {:>12.4}", errors.values()[k]);
    }
    let report = EvaluationReport {
        arch: arch.to_string(),
        n_test: test.len(),
        test: errors,
        final_train: ckpt.final_train,
        final_cv: ckpt.final_cv,
        epnn_ratio: (arch == epnn_core::arch::ArchKind::Epnn).then_some(ckpt.model.epnn_ratio),
    };
    let path = run.output(&format!("evaluation_{arch}.json"));
    write_json(&path, &report)
}

fn build_driver(run: &Run) -> Result<Driver, CliError> {
    let s = &run.cfg.simulate;
    let norm = s.step_size.unwrap_or_else(|| run.cfg.generate.resolve(run.cfg.seed).mean_step_magnitude());
    Ok(match s.driver {
        DriverKind::Axisym => Driver::axisymmetric_with_norm(s.alpha, norm, s.steps)?,
        DriverKind::Proportional => {
            let d = PrincipalVec3(s.direction);
            let n = d.norm();
            if !(n > 0.0) {
                return Err(CliError::new("invalid-argument", "proportional direction must be nonzero"));
            }
            Driver::proportional(d * (1.0 / n), norm, s.steps)?
        }
    })
}

fn write_trajectory(run: &mut Run, name: &str, traj: &Trajectory) -> Result<(), CliError> {
    let path = run.output(name);
    traj.write_csv(BufWriter::new(File::create(&path)?))?;
    if let Some(why) = &traj.truncated {
        println!("{name}: truncated at {why}");
    }
    Ok(())
}

fn cmd_simulate(run: &mut Run) -> Result<(), CliError> {
    let driver = build_driver(run)?;
    let (p_in, e_in) = (run.cfg.simulate.pin, run.cfg.simulate.ein);
    let ckpt_path = run.cfg.checkpoint_path();
    let model_traj = if run.cfg.checkpoint.is_some() || ckpt_path.exists() {
        run.input(&ckpt_path)?;
        let ckpt = Checkpoint::load(&ckpt_path)?;
        let t = simulate(&ckpt.model, &driver, p_in, e_in)?;
        if !t.out_of_range_steps.is_empty() {
            println!("{} steps fed the model inputs outside its training range", t.out_of_range_steps.len());
        }
        write_trajectory(run, "trajectory_model.csv", &t)?;
        Some(t)
    } else {
        None
    };
    let truth = if run.cfg.simulate.ground_truth {
        let gen = run.cfg.generate.resolve(run.cfg.seed);
        let t = ground_truth(&driver, p_in, e_in, &gen.params, &IntegratorTolerances::default())?;
        write_trajectory(run, "trajectory_truth.csv", &t)?;
        Some(t)
    } else {
        None
    };
    if model_traj.is_none() && truth.is_none() {
        return Err(CliError::new("invalid-argument", "nothing to simulate: no checkpoint and ground truth disabled"));
    }

    type Axes = fn(&TrajectoryRow) -> (f64, f64);
    let charts: [(&str, &str, &str, Axes); 3] = [
        ("q_gamma.svg", "gamma", "q (kPa)", |r| (r.gamma, r.q)),
        ("p_q.svg", "p (kPa)", "q (kPa)", |r| (r.p, r.q)),
        ("e_gamma.svg", "gamma", "e", |r| (r.gamma, r.e)),
    ];
    for (file, xl, yl, f) in charts {
        let mut series = Vec::new();
        if let Some(t) = &model_traj {
            series.push(Series {
                label: "model",
                points: t.rows.iter().map(f).collect(),
            });
        }
        if let Some(t) = &truth {
            series.push(Series {
                label: "truth",
                points: t.rows.iter().map(f).collect(),
            });
        }
        let path = run.output(file);
        fs::write(&path, line_chart(&format!("{yl} vs {xl}"), xl, yl, &series))?;
    }

    if let (Some(m), Some(t)) = (&model_traj, &truth) {
        let c = compare(m, t);
        let path = run.output("comparison.csv");
        c.write_csv(BufWriter::new(File::create(&path)?))?;
        println!("{:<10} {:>14} {:>14}", "quantity", "end rel err", "max rel err");
        for (i, q) in epnn_core::recall::COMPARED.iter().enumerate() {
            println!("{q:<10} {:>14.4e} {:>14.4e}", c.end_errors[i], c.max_errors[i]);
        }
        let summary = serde_json::json!({
            "n": c.n,
            "length_mismatch": c.length_mismatch,
            "quantities": epnn_core::recall::COMPARED,
            "end_errors": c.end_errors,
            "max_errors": c.max_errors,
        });
        let path = run.output("comparison.json");
        write_json(&path, &summary)?;
    }
    let last = model_traj.as_ref().or(truth.as_ref()).expect("at least one trajectory").last();
    println!("final state: p = {:.4} kPa, q = {:.4} kPa, e = {:.6}", last.p, last.q, last.e);
    Ok(())
}

fn cmd_curves(run: &mut Run) -> Result<(), CliError> {
    let ds = load_dataset(run)?;
    let cfg = &run.cfg.train.config;
    let arch = run.cfg.train.arch;
    let sp = split(&ds, cfg)?;
    let points = learning_curve(
        arch,
        &SampleSet::from_dataset(&sp.train),
        &SampleSet::from_dataset(&sp.cv),
        &run.cfg.curves.fractions,
        cfg,
        &ds.content_digest(),
    )?;
    let path = run.output(&format!("learning_curve_{arch}.csv"));
    write_curve_csv(BufWriter::new(File::create(&path)?), learning_curve_rows(&points))?;
    let json = run.output(&format!("learning_curve_{arch}.json"));
    write_json(&json, &points)?;
    println!("{:>8} {:>8} {:<16} {:>12} {:>12}", "fraction", "n_train", "role", "train (%)", "cv (%)");
    for p in &points {
        for (k, role) in ["void_ratio", "plastic_strain", "stress"].iter().enumerate() {
            println!(
                "{:>8.3} {:>8} {role:<16} {:>12.4} {:>12.4}",
                p.fraction,
                p.n_train,
                p.train_mean.values()[k],
                p.cv_mean.values()[k]
            );
        }
    }
    Ok(())
}

fn cmd_gradcheck(run: &mut Run) -> Result<(), CliError> {
    let g = &run.cfg.gradcheck;
    let rows = gradient_check_suite(g.instances, g.batch, g.h, run.cfg.seed)?;
    println!("{:>4} {:<9} {:<15} {:<14} {:>12} {:>8} {:>8}", "inst", "arch", "target", "shape", "max rel err", "checked", "excluded");
    for r in &rows {
        println!(
            "{:>4} {:<9} {:<15} {:<14} {:>12.3e} {:>8} {:>8}",
            r.instance,
            r.arch.to_string(),
            r.target,
            r.shape,
            r.report.max_rel_error,
            r.report.checked,
            r.report.excluded
        );
    }
    let path = run.output("gradcheck.json");
    write_json(&path, &rows)?;
    let worst = rows.iter().map(|r| r.report.max_rel_error).fold(0.0_f64, f64::max);
    if rows.iter().any(|r| r.report.checked == 0) || worst >= g.threshold {
        return Err(CliError::new(
            "gradcheck-threshold",
            format!("max relative error {worst:.3e} is not below {:.1e}", g.threshold),
        ));
    }
    println!("all gradients agree: max relative error {worst:.3e} < {:.1e}", g.threshold);
    Ok(())
}
