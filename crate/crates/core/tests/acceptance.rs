//! Acceptance suite. Runs as a plain binary so that one PASS/FAIL line per
//! criterion is always printed; exits nonzero if any criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::Instant;

use bsnn::convert::{calibration_subset, compute_thresholds, convert_to_snn, record_activation_stats, ConversionConfig};
use bsnn::graph::{build_network, ArchOption, Dataset, DepthConfig, LayerKind, ModelGraph, ResetMode};
use bsnn::metrics::{
    accuracy_curve, area_factor, crossbar_activity, graph_layer_ops, normalized_ops, select_theta, timesteps_to_target,
    CrossbarModel, OpsReport,
};
use bsnn::spikesim::{binary_dot, early_exit_inference, run_inference, InferenceResult, NeuronState, SimConfig, SpikeVector};
use bsnn::synth::{generate, SynthConfig};
use bsnn::tensor::{conv2d_counted, linear_counted, MacCounter, Tensor};
use bsnn::train::{binarize_weights, evaluate_ann, predict_ann, train, OptimizerConfig, Phase, TrainSchedule};
use common::gradcheck;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Scalar integrate-and-fire neuron driven by a constant current.
fn scalar_spike_count(c: f32, v_th: f32, steps: usize, reset: ResetMode) -> u64 {
    let (c, v_th) = (c as f64, v_th as f64);
    let mut v = 0.0f64;
    let mut spikes = 0;
    for _ in 0..steps {
        v += c;
        if v >= v_th {
            spikes += 1;
            v = if reset == ResetMode::Sif { v - v_th } else { 0.0 };
        }
    }
    spikes
}

fn engine_spike_count(inputs: impl Iterator<Item = f32>, v_th: f32, reset: ResetMode) -> (u64, NeuronState) {
    let mut state = NeuronState::new(1, reset, v_th);
    let mut out = SpikeVector::new(1);
    let spikes = inputs.map(|x| state.step(&[x], &mut out)).sum();
    (spikes, state)
}

fn if_dynamics_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let c = 2.0 - 2.0 * rng.random::<f32>();
        let v_th = 2.0 - 2.0 * rng.random::<f32>();
        let n = rng.random_range(1..=512);
        for reset in [ResetMode::Sif, ResetMode::Rif] {
            let (ours, _) = engine_spike_count(std::iter::repeat_n(c, n), v_th, reset);
            mismatches += usize::from(ours != scalar_spike_count(c, v_th, n, reset));
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    check(
        mismatches == 0 && elapsed < 5.0,
        format!("{mismatches} mismatches over 1000 triples x 2 reset modes in {elapsed:.3} s"),
    )
}

fn sif_conservation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let v_th = rng.random_range(0.05f32..2.0);
        let n = rng.random_range(1..=512);
        let inputs: Vec<f32> = (0..n).map(|_| rng.random_range(-0.5f32..2.0)).collect();
        let (spikes, state) = engine_spike_count(inputs.iter().copied(), v_th, ResetMode::Sif);
        let total: f64 = inputs.iter().map(|&x| x as f64).sum();
        worst = worst.max((state.potentials()[0] + v_th as f64 * spikes as f64 - total).abs());
    }
    check(worst <= 1e-4, format!("worst |v(T) + v_th*spikes - sum(inputs)| = {worst:.3e} over 500 streams"))
}

fn rate_correspondence() -> Outcome {
    let n = 512;
    let mut worst = 0.0f64;
    for v_th in [1.0f32, 0.7, 1.9] {
        for k in 0..=250 {
            let c = k as f32 * 0.01;
            let (spikes, _) = engine_spike_count(std::iter::repeat_n(c, n), v_th, ResetMode::Sif);
            let expected = (c as f64 / v_th as f64).min(1.0);
            worst = worst.max((spikes as f64 / n as f64 - expected).abs());
        }
    }
    check(
        worst <= 1.0 / n as f64,
        format!("worst |rate - min(c/v_th, 1)| = {worst:.5} (bound {:.5}) at N = {n}", 1.0 / n as f64),
    )
}

fn binary_kernel_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut mismatches = 0;
    for case in 0..100_000 {
        let len = rng.random_range(1..=600);
        let w: Vec<f32> = (0..len)
            .map(|_| if rng.random_bool(0.02) { 0.0 } else { rng.random_range(-2.0f32..2.0) })
            .collect();
        let density = rng.random::<f64>();
        let bits: Vec<bool> = (0..len).map(|_| rng.random_bool(density)).collect();
        let packed = binarize_weights(&Tensor::new(vec![1, len], w.clone()).unwrap());
        let row = packed.row(0);
        let alpha = (w.iter().map(|&v| (v as f64).abs()).sum::<f64>() / len as f64) as f32;
        // Unpacked dot product; exact in f64 because it only adds ±alpha.
        let dense: f64 = bits
            .iter()
            .zip(&w)
            .map(|(&s, &v)| if s { if v >= 0.0 { alpha as f64 } else { -(alpha as f64) } } else { 0.0 })
            .sum();
        let ours = binary_dot(&SpikeVector::from_bools(&bits), row).unwrap();
        if ours != dense as f32 || row.alpha != alpha {
            mismatches += 1;
            if mismatches == 1 {
                eprintln!("first mismatch at case {case}: {ours} vs {}", dense as f32);
            }
        }
    }
    check(mismatches == 0, format!("{mismatches} mismatches over 100000 random cases"))
}

fn gradient_checks() -> Outcome {
    use gradcheck::*;
    let mut single = vec![
        ("linear", linear_error::<f32>(&SINGLE)),
        ("relu", relu_error::<f32>(&SINGLE)),
        ("avgpool", pool_errors::<f32>(&SINGLE).0),
        ("maxpool", pool_errors::<f32>(&SINGLE).1),
        ("dropout", dropout_error::<f32>(&SINGLE)),
        ("softmax_xent", softmax_xent_error::<f32>(&SINGLE)),
        ("ste", ste_error()),
        ("network", network_error()),
    ];
    let mut double = vec![
        ("linear", linear_error::<f64>(&DOUBLE)),
        ("relu", relu_error::<f64>(&DOUBLE)),
        ("avgpool", pool_errors::<f64>(&DOUBLE).0),
        ("maxpool", pool_errors::<f64>(&DOUBLE).1),
        ("dropout", dropout_error::<f64>(&DOUBLE)),
        ("softmax_xent", softmax_xent_error::<f64>(&DOUBLE)),
    ];
    for (stride, pad) in [(1, 1), (1, 0), (2, 1)] {
        single.push(("conv", conv_error::<f32>(&SINGLE, stride, pad)));
        double.push(("conv", conv_error::<f64>(&DOUBLE, stride, pad)));
    }
    fn worst<'a>(v: &[(&'a str, f64)]) -> (&'a str, f64) {
        v.iter().cloned().fold(("", 0.0), |a, b| if b.1 > a.1 { b } else { a })
    }
    let (ws, wd) = (worst(&single), worst(&double));
    check(
        ws.1 <= TOL_F32 && wd.1 <= TOL_F64,
        format!("worst single-precision {:.2e} ({}), worst verification-mode {:.2e} ({})", ws.1, ws.0, wd.1, wd.0),
    )
}

fn ops_formulas() -> Outcome {
    let graph = build_network(ArchOption::AvgBefore, &DepthConfig::vgg15(vec![3, 32, 32], 100)).unwrap();
    let shapes = graph.layer_shapes().unwrap();
    let formulas = graph_layer_ops(&graph).unwrap();
    let mut mismatched = Vec::new();
    for &(layer, ops) in &formulas {
        let mut input = vec![1];
        input.extend(graph.layer_input_shape(&shapes, layer));
        let x = Tensor::zeros(&input).unwrap();
        let w = graph.weight(layer).unwrap();
        let mut counter = MacCounter::default();
        match &graph.layers[layer].kind {
            LayerKind::Conv { stride, pad, .. } => {
                conv2d_counted(&x, w, *stride, *pad, &mut counter).unwrap();
            }
            LayerKind::Linear { .. } => {
                linear_counted(&x, w, &mut counter).unwrap();
            }
            _ => unreachable!(),
        }
        if counter.0 != ops {
            mismatched.push(layer);
        }
    }
    let ifr = [(2, 0.4), (3, 0.2)].into_iter().collect();
    let hand = normalized_ops(&[50, 100, 200, 100], &ifr, false).unwrap();
    check(
        mismatched.is_empty() && formulas.len() == 15 && hand == 0.25,
        format!(
            "{} VGG-15 weight layers, {} counter mismatches, hand example = {hand}",
            formulas.len(),
            mismatched.len()
        ),
    )
}

/// Shared desk-scale models for the end-to-end criteria.
struct Desk {
    train: Dataset,
    val: Dataset,
    test: Dataset,
    fp: ModelGraph,
    hybrid: ModelGraph,
    scratch: ModelGraph,
    calibration: Tensor,
}

const FP_EPOCHS: usize = 10;
const FINETUNE_EPOCHS: usize = 8;

fn desk() -> &'static Desk {
    static DESK: OnceLock<Desk> = OnceLock::new();
    DESK.get_or_init(|| {
        let ds = generate(&SynthConfig {
            noise: 2.0,
            ..SynthConfig::new(4, 2000, 16, 7)
        })
        .unwrap();
        let (rest, test) = ds.split_tail(400).unwrap();
        let (train_set, val) = rest.split_tail(400).unwrap();
        let run = |graph, phase, epochs, seed, cfg: OptimizerConfig| {
            let schedule = TrainSchedule {
                seed,
                ..TrainSchedule::new(phase, epochs)
            };
            train(graph, &train_set, None, &cfg, &schedule).unwrap().graph
        };
        let fresh = || build_network(ArchOption::AvgBefore, &DepthConfig::tiny(4)).unwrap();
        let fp = run(fresh(), Phase::FullPrecision, FP_EPOCHS, 1, OptimizerConfig::full_precision());
        let hybrid = run(fp.clone(), Phase::BinarizeFineTune, FINETUNE_EPOCHS, 2, OptimizerConfig::binarize());
        // Same total epoch budget as the hybrid path.
        let scratch = run(fresh(), Phase::ScratchBinary, FP_EPOCHS + FINETUNE_EPOCHS, 3, OptimizerConfig::binarize());
        let calibration = train_set.images.select_batch(&calibration_subset(train_set.len(), 256, 0)).unwrap();
        Desk {
            train: train_set,
            val,
            test,
            fp,
            hybrid,
            scratch,
            calibration,
        }
    })
}

fn to_snn(ann: &ModelGraph, reset: ResetMode, percentile: f64) -> ModelGraph {
    let cfg = ConversionConfig {
        reset,
        percentile,
        ..ConversionConfig::new(ann.arch)
    };
    let stats = record_activation_stats(ann, &desk().calibration, &cfg).unwrap();
    convert_to_snn(ann, &compute_thresholds(&stats, percentile).unwrap(), &cfg).unwrap()
}

fn full_run(snn: &ModelGraph, data: &Dataset, timesteps: usize) -> InferenceResult {
    let cfg = SimConfig {
        record_trajectory: true,
        record_trace: true,
        ..SimConfig::new(timesteps)
    };
    run_inference(snn, &data.images, &cfg).unwrap()
}

fn end_to_end_conversion() -> Outcome {
    let d = desk();
    let snn = to_snn(&d.fp, ResetMode::Sif, 100.0);
    let result = full_run(&snn, &d.test, 512);
    let ann_preds = predict_ann(&d.fp, &d.test).unwrap();
    let agree = result.predictions().iter().zip(&ann_preds).filter(|(a, b)| a == b).count() as f64 / d.test.len() as f64;
    let ann_acc = evaluate_ann(&d.fp, &d.test).unwrap();
    let snn_acc = result.accuracy(&d.test.labels);
    check(
        agree >= 0.95 && (ann_acc - snn_acc).abs() <= 0.02,
        format!(
            "agreement {:.1}%, ANN {:.2}% vs SNN {:.2}% at N = 512 ({} training samples)",
            100.0 * agree,
            100.0 * ann_acc,
            100.0 * snn_acc,
            d.train.len()
        ),
    )
}

/// Accuracy target for the latency comparisons: 95% of the source network's accuracy.
fn target(ann: &ModelGraph) -> f64 {
    0.95 * evaluate_ann(ann, &desk().test).unwrap()
}

fn latency(snn: &ModelGraph, target: f64) -> Option<usize> {
    let d = desk();
    let result = full_run(snn, &d.test, 256);
    timesteps_to_target(&accuracy_curve(snn, &result, &d.test.labels).unwrap(), target)
}

fn design_trends() -> Outcome {
    let d = desk();
    let goal = target(&d.hybrid);
    let sif = latency(&to_snn(&d.hybrid, ResetMode::Sif, 100.0), goal);
    let rif = latency(&to_snn(&d.hybrid, ResetMode::Rif, 100.0), goal);
    let reset_ok = matches!((sif, rif), (Some(s), Some(r)) if s < r) || matches!((sif, rif), (Some(_), None));

    let per_p: Vec<Option<usize>> = [100.0, 99.0, 95.0]
        .iter()
        .map(|&p| latency(&to_snn(&d.hybrid, ResetMode::Sif, p), goal))
        .collect();
    let percentile_ok = per_p.iter().all(Option::is_some) && per_p.windows(2).all(|w| w[1] <= w[0]);

    let hybrid = evaluate_ann(&d.hybrid, &d.test).unwrap();
    let scratch = evaluate_ann(&d.scratch, &d.test).unwrap();
    let init_ok = hybrid >= scratch - 0.01;

    let detail = format!(
        "(a) timesteps to {:.1}%: SIF {sif:?} vs RIF {rif:?}; (b) p = 100/99/95: {per_p:?}; (c) hybrid {:.2}% vs scratch {:.2}%",
        100.0 * goal,
        100.0 * hybrid,
        100.0 * scratch
    );
    check(reset_ok && percentile_ok && init_ok, detail)
}

fn early_exit() -> Outcome {
    let d = desk();
    let n = 256;
    let snn = to_snn(&d.hybrid, ResetMode::Sif, 100.0);
    let on_val = full_run(&snn, &d.val, n);
    let Some(choice) = select_theta(&on_val, &d.val.labels, 0.0, 64).unwrap() else {
        return Err("no confidence threshold keeps validation accuracy".into());
    };
    let full_cfg = SimConfig::new(n);
    let full = run_inference(&snn, &d.test.images, &full_cfg).unwrap();
    let early = early_exit_inference(
        &snn,
        &d.test.images,
        &SimConfig {
            theta: Some(choice.theta_conf),
            ..full_cfg
        },
    )
    .unwrap();
    let (acc_full, acc_early) = (full.accuracy(&d.test.labels), early.accuracy(&d.test.labels));
    let ops_full = OpsReport::from_inference(&snn, &full, false).unwrap().normalized_ops;
    let ops_early = OpsReport::from_inference(&snn, &early, false).unwrap().normalized_ops;
    let exit = early.mean_exit_timestep();
    check(
        exit <= 0.8 * n as f64 && (acc_full - acc_early).abs() <= 0.005 && ops_early < ops_full,
        format!(
            "theta {:.3}: mean exit {exit:.1} of {n}, accuracy {:.2}% vs {:.2}%, normalized ops {ops_early:.3} vs {ops_full:.3}",
            choice.theta_conf,
            100.0 * acc_early,
            100.0 * acc_full
        ),
    )
}

fn crossbar_model() -> Outcome {
    let d = desk();
    let snn = to_snn(&d.hybrid, ResetMode::Sif, 100.0);
    let images = d.test.images.slice_batch(0, 100).unwrap();
    let result = run_inference(&snn, &images, &SimConfig::new(64)).unwrap();
    let layers = crossbar_activity(&result);
    let mut ok = !layers.is_empty();
    for layer in &layers {
        // Spikes feeding this layer come from the nearest IF layer above it.
        let source = (0..layer.layer)
            .rev()
            .find(|&i| matches!(snn.layers[i].kind, LayerKind::If { .. }))
            .unwrap();
        let spikes = result.if_layers.iter().find(|l| l.layer == source).unwrap().spikes;
        ok &= layer.bnn_row_activations == layer.inputs as u64 * 100;
        ok &= layer.bsnn_row_activations == spikes;
        ok &= layer.area_factor == 0.5;
    }
    let bnn = CrossbarModel::bnn(100, 7);
    let bsnn = CrossbarModel::bsnn(100, &[3, 0, 5]);
    ok &= bnn.row_activations == 700 && bsnn.row_activations == 8 && area_factor(&bsnn, &bnn) == 0.5;
    check(
        ok,
        format!(
            "{} spike-driven layers; BNN rows = inputs x cycles, B-SNN rows = spikes, area factor {}",
            layers.len(),
            area_factor(&bsnn, &bnn)
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("IF dynamics oracle", if_dynamics_oracle),
        ("SIF conservation", sif_conservation),
        ("rate correspondence", rate_correspondence),
        ("binary kernel equivalence", binary_kernel_equivalence),
        ("gradient checks", gradient_checks),
        ("OPS formulas", ops_formulas),
        ("end-to-end conversion", end_to_end_conversion),
        ("design-option trends", design_trends),
        ("early exit", early_exit),
        ("crossbar model", crossbar_model),
    ];
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {:>2} ({name}): {detail} [{secs:.1} s]", i + 1),
            Err(detail) => {
                failures += 1;
                println!("FAIL criterion {:>2} ({name}): {detail} [{secs:.1} s]", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failures} failed", criteria.len() - failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
