use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use bsnn::convert::{
    compute_thresholds, conversion_report, convert_to_snn, read_profile_csv, record_activation_stats,
    calibration_subset, write_profile_csv, write_report_csv, ConversionConfig,
};
use bsnn::graph::{build_network, load_dataset, load_model, save_dataset, save_model, Dataset, DepthConfig, Mode, ModelGraph};
use bsnn::metrics::{crossbar_activity, percentile_sweep, write_rows_csv, CrossbarLayer, OpsReport};
use bsnn::spikesim::{early_exit_inference, run_inference, write_results_csv, write_trace_csv, InferenceResult, SimConfig};
use bsnn::synth::{generate, SynthConfig};
use bsnn::train::{train, write_log_csv, OptimizerConfig, Phase, TrainOutcome, TrainSchedule};
use serde::Serialize;

use crate::args::{
    BinarizeArgs, CalibrateArgs, ConvertArgs, Depth, InferArgs, OptimArgs, ReportArgs, SimArgs, SweepArgs, SynthArgs,
    TrainArgs,
};
use crate::error::{dependency, invalid};

/// Files written by a command, the first being the primary artifact.
pub type Outputs = Vec<PathBuf>;

fn require_input(path: &Path, what: &str, producer: &str) -> Result<()> {
    if !path.is_file() {
        return Err(dependency(format!(
            "{what} '{}' not found; produce it with `bsnn {producer}` first",
            path.display()
        )));
    }
    Ok(())
}

fn same_file(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(x), Ok(y)) => x == y,
        _ => a == b,
    }
}

/// Rejects outputs that would overwrite an input or each other, and creates
/// missing parent directories.
fn prepare_outputs(inputs: &[&Path], outputs: &[&Path]) -> Result<()> {
    for (i, out) in outputs.iter().enumerate() {
        if let Some(input) = inputs.iter().find(|inp| same_file(inp, out)) {
            return Err(invalid(format!("output '{}' would overwrite input '{}'", out.display(), input.display())));
        }
        if outputs[..i].iter().any(|o| same_file(o, out)) {
            return Err(invalid(format!("output '{}' is given twice", out.display())));
        }
        if out.is_dir() {
            return Err(invalid(format!("output '{}' is a directory", out.display())));
        }
    }
    for out in outputs {
        if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).with_context(|| format!("creating directory '{}'", parent.display()))?;
        }
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating '{}'", path.display()))?))
}

fn read_dataset(path: &Path) -> Result<Dataset> {
    load_dataset(path).with_context(|| format!("reading dataset '{}'", path.display()))
}

fn read_model(path: &Path, mode: Mode) -> Result<ModelGraph> {
    let model = load_model(path).with_context(|| format!("reading model '{}'", path.display()))?;
    if model.mode != mode {
        let (want, hint) = match mode {
            Mode::Ann => ("a trained (non-spiking) network", "pass the checkpoint written by `bsnn train` or `bsnn binarize`"),
            Mode::Snn => ("a spiking network", "convert the trained network with `bsnn convert` first"),
        };
        return Err(invalid(format!("'{}' is not {want}; {hint}", path.display())));
    }
    Ok(model)
}

fn emit<T: Serialize>(summary: &T) -> Result<()> {
    println!("{}", serde_json::to_string(summary)?);
    Ok(())
}

fn positive(value: usize, flag: &str) -> Result<()> {
    if value == 0 {
        return Err(invalid(format!("--{flag} must be positive")));
    }
    Ok(())
}

pub fn synth(a: &SynthArgs) -> Result<Outputs> {
    if a.classes < 2 {
        return Err(invalid("--classes must be at least 2"));
    }
    prepare_outputs(&[], &[&a.out])?;
    let cfg = SynthConfig {
        channels: a.channels,
        noise: a.noise,
        ..SynthConfig::new(a.classes, a.samples, a.size, a.seed)
    };
    let ds = generate(&cfg).map_err(|e| invalid(e.to_string()))?;
    save_dataset(&ds, &a.out)?;
    emit(&serde_json::json!({ "samples": ds.len(), "classes": ds.classes, "image_shape": ds.image_shape() }))?;
    Ok(vec![a.out.clone()])
}

fn optimizer_config(base: OptimizerConfig, o: &OptimArgs) -> OptimizerConfig {
    OptimizerConfig {
        kind: o.optimizer.unwrap_or(base.kind),
        lr: o.lr.unwrap_or(base.lr),
        weight_decay: o.weight_decay.unwrap_or(base.weight_decay),
        lr_decay_every: o.lr_decay_every.unwrap_or(base.lr_decay_every),
        ..base
    }
}

fn split_validation(data: &Dataset, fraction: f64) -> Result<(Dataset, Option<Dataset>)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(invalid("--val-fraction must lie in [0, 1)"));
    }
    let count = (data.len() as f64 * fraction).round() as usize;
    if count == 0 {
        return Ok((data.clone(), None));
    }
    if count >= data.len() {
        return Err(invalid("--val-fraction leaves no training samples"));
    }
    let (head, tail) = data.split_tail(count)?;
    Ok((head, Some(tail)))
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    phase: &'a str,
    epochs: usize,
    final_loss: Option<f64>,
    final_train_acc: Option<f64>,
    final_val_acc: Option<f64>,
}

fn finish_training(outcome: &TrainOutcome, phase: Phase, out: &Path, log: Option<&Path>) -> Result<Outputs> {
    save_model(&outcome.graph, out)?;
    let mut outputs = vec![out.to_path_buf()];
    if let Some(log) = log {
        let mut w = create(log)?;
        write_log_csv(&outcome.log, &mut w)?;
        w.flush()?;
        outputs.push(log.to_path_buf());
    }
    let last = outcome.log.last();
    emit(&TrainSummary {
        phase: phase.name(),
        epochs: outcome.log.len(),
        final_loss: last.map(|l| l.loss),
        final_train_acc: last.map(|l| l.train_acc),
        final_val_acc: outcome.final_val_acc(),
    })?;
    Ok(outputs)
}

pub fn train_cmd(a: &TrainArgs) -> Result<Outputs> {
    require_input(&a.data, "dataset", "synth")?;
    if a.phase == Phase::BinarizeFineTune {
        return Err(invalid("binarization fine-tuning starts from a checkpoint; use `bsnn binarize`"));
    }
    positive(a.epochs, "epochs")?;
    let mut outs = vec![a.out.as_path()];
    outs.extend(a.optim.log.as_deref());
    prepare_outputs(&[&a.data], &outs)?;

    let data = read_dataset(&a.data)?;
    let (train_set, val) = split_validation(&data, a.optim.val_fraction)?;
    let shape = data.image_shape().to_vec();
    let depth = match a.depth {
        Depth::Tiny => DepthConfig {
            input_shape: shape,
            ..DepthConfig::tiny(data.classes)
        },
        Depth::Vgg15 => DepthConfig::vgg15(shape, data.classes),
    };
    let depth = DepthConfig {
        init_seed: a.optim.seed,
        ..depth
    };
    let graph = build_network(a.arch, &depth).map_err(|e| invalid(e.to_string()))?;
    let base = match a.phase {
        Phase::ScratchBinary => OptimizerConfig::binarize(),
        _ => OptimizerConfig::full_precision(),
    };
    let schedule = TrainSchedule {
        batch_size: a.optim.batch_size,
        seed: a.optim.seed,
        activation: a.activation.into(),
        ..TrainSchedule::new(a.phase, a.epochs)
    };
    let outcome = train(graph, &train_set, val.as_ref(), &optimizer_config(base, &a.optim), &schedule)?;
    finish_training(&outcome, a.phase, &a.out, a.optim.log.as_deref())
}

pub fn binarize(a: &BinarizeArgs) -> Result<Outputs> {
    require_input(&a.model, "full-precision checkpoint", "train")?;
    require_input(&a.data, "dataset", "synth")?;
    positive(a.epochs, "epochs")?;
    let mut outs = vec![a.out.as_path()];
    outs.extend(a.optim.log.as_deref());
    prepare_outputs(&[&a.model, &a.data], &outs)?;

    let model = read_model(&a.model, Mode::Ann)?;
    let activation = if model.uses_sign_activation() {
        bsnn::train::Activation::Sign
    } else {
        bsnn::train::Activation::Relu
    };
    let data = read_dataset(&a.data)?;
    let (train_set, val) = split_validation(&data, a.optim.val_fraction)?;
    let schedule = TrainSchedule {
        batch_size: a.optim.batch_size,
        seed: a.optim.seed,
        activation,
        ..TrainSchedule::new(Phase::BinarizeFineTune, a.epochs)
    };
    let cfg = optimizer_config(OptimizerConfig::binarize(), &a.optim);
    let outcome = train(model, &train_set, val.as_ref(), &cfg, &schedule)?;
    finish_training(&outcome, Phase::BinarizeFineTune, &a.out, a.optim.log.as_deref())
}

fn calibration_images(data: &Dataset, size: usize, seed: u64) -> Result<Dataset> {
    positive(size, "calibration-size")?;
    Ok(data.subset(&calibration_subset(data.len(), size, seed))?)
}

pub fn calibrate(a: &CalibrateArgs) -> Result<Outputs> {
    require_input(&a.model, "trained network", "train")?;
    require_input(&a.data, "dataset", "synth")?;
    if !(a.percentile > 0.0 && a.percentile <= 100.0) {
        return Err(invalid("--percentile must lie in (0, 100]"));
    }
    prepare_outputs(&[&a.model, &a.data], &[&a.out])?;

    let model = read_model(&a.model, Mode::Ann)?;
    let data = read_dataset(&a.data)?;
    let subset = calibration_images(&data, a.calibration_size, a.seed)?;
    let cfg = ConversionConfig {
        percentile: a.percentile,
        calibration_size: a.calibration_size,
        seed: a.seed,
        ..ConversionConfig::new(model.arch)
    };
    let stats = record_activation_stats(&model, &subset.images, &cfg)?;
    let profile = compute_thresholds(&stats, a.percentile)?;
    let mut w = create(&a.out)?;
    write_profile_csv(&profile, &mut w)?;
    w.flush()?;
    emit(&serde_json::json!({
        "sites": profile.entries.len(),
        "subset_size": subset.len(),
        "thresholds": profile.entries.iter().map(|e| e.v_th).collect::<Vec<_>>(),
    }))?;
    Ok(vec![a.out.clone()])
}

pub fn convert(a: &ConvertArgs) -> Result<Outputs> {
    require_input(&a.model, "trained network", "train")?;
    require_input(&a.profile, "threshold profile", "calibrate")?;
    let mut outs = vec![a.out.as_path()];
    outs.extend(a.site_map.as_deref());
    prepare_outputs(&[&a.model, &a.profile], &outs)?;

    let model = read_model(&a.model, Mode::Ann)?;
    let profile = read_profile_csv(File::open(&a.profile)?)
        .with_context(|| format!("reading threshold profile '{}'", a.profile.display()))?;
    let first = profile.entries.first().ok_or_else(|| invalid("threshold profile is empty"))?;
    let cfg = ConversionConfig {
        reset: a.reset,
        percentile: first.percentile,
        calibration_size: first.subset_size,
        inserted: a.inserted.into(),
        ..ConversionConfig::new(model.arch)
    };
    let snn = convert_to_snn(&model, &profile, &cfg)?;
    save_model(&snn, &a.out)?;
    let mut outputs = vec![a.out.clone()];
    let rows = conversion_report(&model, &snn)?;
    if let Some(path) = &a.site_map {
        let mut w = create(path)?;
        write_report_csv(&rows, &mut w)?;
        w.flush()?;
        outputs.push(path.clone());
    }
    emit(&serde_json::json!({
        "layers": snn.layers.len(),
        "if_layers": snn.if_layers().len(),
        "reset": a.reset.to_string(),
    }))?;
    Ok(outputs)
}

fn sim_config(s: &SimArgs, record_trace: bool) -> Result<SimConfig> {
    positive(s.timesteps, "timesteps")?;
    positive(s.batch_size, "batch-size")?;
    Ok(SimConfig {
        theta: s.early_exit,
        batch_size: s.batch_size,
        record_ifr: true,
        record_trace,
        ..SimConfig::new(s.timesteps)
    })
}

fn simulate(snn: &ModelGraph, data: &Dataset, cfg: &SimConfig) -> Result<InferenceResult> {
    Ok(match cfg.theta {
        Some(_) => early_exit_inference(snn, &data.images, cfg)?,
        None => run_inference(snn, &data.images, cfg)?,
    })
}

pub fn infer(a: &InferArgs) -> Result<Outputs> {
    require_input(&a.model, "spiking network", "convert")?;
    require_input(&a.data, "dataset", "synth")?;
    let mut outs = vec![a.out.as_path()];
    outs.extend(a.trace.as_deref());
    prepare_outputs(&[&a.model, &a.data], &outs)?;

    let snn = read_model(&a.model, Mode::Snn)?;
    let data = read_dataset(&a.data)?;
    let cfg = sim_config(&a.sim, a.trace.is_some())?;
    let result = simulate(&snn, &data, &cfg)?;
    let mut w = create(&a.out)?;
    write_results_csv(&result, Some(&data.labels), &mut w)?;
    w.flush()?;
    let mut outputs = vec![a.out.clone()];
    if let Some(path) = &a.trace {
        let mut w = create(path)?;
        write_trace_csv(&result, &snn, &mut w)?;
        w.flush()?;
        outputs.push(path.clone());
    }
    emit(&serde_json::json!({
        "samples": result.samples.len(),
        "accuracy": result.accuracy(&data.labels),
        "mean_exit_timestep": result.mean_exit_timestep(),
        "total_spikes": result.total_spikes(),
    }))?;
    Ok(outputs)
}

#[derive(Serialize)]
struct SweepRow {
    percentile: f64,
    reset: String,
    timestep: usize,
    accuracy: f64,
    normalized_ops: Option<f64>,
}

pub fn sweep(a: &SweepArgs) -> Result<Outputs> {
    require_input(&a.model, "trained network", "train")?;
    require_input(&a.data, "dataset", "synth")?;
    let mut inputs = vec![a.model.as_path(), a.data.as_path()];
    if let Some(c) = &a.calibration_data {
        require_input(c, "calibration dataset", "synth")?;
        inputs.push(c);
    }
    if a.percentiles.is_empty() || a.percentiles.iter().any(|p| !(*p > 0.0 && *p <= 100.0)) {
        return Err(invalid("--percentiles must be a non-empty list of values in (0, 100]"));
    }
    positive(a.timesteps, "timesteps")?;
    positive(a.batch_size, "batch-size")?;
    prepare_outputs(&inputs, &[&a.out])?;

    let model = read_model(&a.model, Mode::Ann)?;
    let data = read_dataset(&a.data)?;
    let calibration_source = match &a.calibration_data {
        Some(path) => read_dataset(path)?,
        None => data.clone(),
    };
    let calibration = calibration_images(&calibration_source, a.calibration_size, a.seed)?;
    let conversion = ConversionConfig {
        reset: a.reset,
        calibration_size: a.calibration_size,
        seed: a.seed,
        ..ConversionConfig::new(model.arch)
    };
    let sim = SimConfig {
        batch_size: a.batch_size,
        ..SimConfig::new(a.timesteps)
    };
    let curves = percentile_sweep(&model, &calibration.images, &data, &a.percentiles, &conversion, &sim)?;
    let rows: Vec<SweepRow> = curves
        .iter()
        .flat_map(|c| {
            c.curve.iter().map(move |p| SweepRow {
                percentile: c.percentile,
                reset: c.reset.to_string(),
                timestep: p.timestep,
                accuracy: p.accuracy,
                normalized_ops: p.normalized_ops,
            })
        })
        .collect();
    let mut w = create(&a.out)?;
    write_rows_csv(&rows, &mut w)?;
    w.flush()?;
    emit(
        &curves
            .iter()
            .map(|c| {
                serde_json::json!({
                    "percentile": c.percentile,
                    "final_accuracy": c.curve.last().map(|p| p.accuracy),
                })
            })
            .collect::<Vec<_>>(),
    )?;
    Ok(vec![a.out.clone()])
}

#[derive(Serialize)]
struct Report {
    samples: usize,
    timesteps: usize,
    early_exit: Option<String>,
    accuracy: f64,
    mean_exit_timestep: f64,
    total_spikes: u64,
    ops: OpsReport,
    crossbar: Vec<CrossbarLayer>,
}

pub fn report(a: &ReportArgs) -> Result<Outputs> {
    require_input(&a.model, "spiking network", "convert")?;
    require_input(&a.data, "dataset", "synth")?;
    let mut outs = vec![a.out.as_path()];
    outs.extend(a.csv.as_deref());
    prepare_outputs(&[&a.model, &a.data], &outs)?;

    let snn = read_model(&a.model, Mode::Snn)?;
    let data = read_dataset(&a.data)?;
    let cfg = sim_config(&a.sim, false)?;
    let result = simulate(&snn, &data, &cfg)?;
    let ops = OpsReport::from_inference(&snn, &result, a.include_all_layers)?;
    let report = Report {
        samples: result.samples.len(),
        timesteps: result.timesteps,
        early_exit: a.sim.early_exit.map(|t| if t.is_infinite() { "none".into() } else { t.to_string() }),
        accuracy: result.accuracy(&data.labels),
        mean_exit_timestep: result.mean_exit_timestep(),
        total_spikes: result.total_spikes(),
        crossbar: crossbar_activity(&result),
        ops,
    };
    let mut w = create(&a.out)?;
    serde_json::to_writer_pretty(&mut w, &report)?;
    writeln!(w)?;
    w.flush()?;
    let mut outputs = vec![a.out.clone()];
    if let Some(path) = &a.csv {
        let mut w = create(path)?;
        report.ops.write_csv(&mut w)?;
        w.flush()?;
        outputs.push(path.clone());
    }
    emit(&serde_json::json!({
        "accuracy": report.accuracy,
        "normalized_ops": report.ops.normalized_ops,
        "mean_exit_timestep": report.mean_exit_timestep,
    }))?;
    Ok(outputs)
}
