use bsnn::graph::{build_network, ArchOption, Dataset, DepthConfig, ModelGraph};
use bsnn::synth::{generate, SynthConfig};
use bsnn::tensor::argmax;
use bsnn::train::{
    evaluate_ann, forward_eval, predict_ann, train, Activation, OptimizerConfig, Phase, TrainError, TrainSchedule,
};

fn data() -> (Dataset, Dataset) {
    let ds = generate(&SynthConfig::new(4, 1000, 16, 21)).unwrap();
    ds.split_tail(300).unwrap()
}

fn fit(graph: ModelGraph, train_set: &Dataset, phase: Phase, epochs: usize, activation: Activation) -> ModelGraph {
    let cfg = match phase {
        Phase::FullPrecision => OptimizerConfig::full_precision(),
        _ => OptimizerConfig::binarize(),
    };
    let schedule = TrainSchedule {
        seed: 5,
        activation,
        ..TrainSchedule::new(phase, epochs)
    };
    train(graph, train_set, None, &cfg, &schedule).unwrap().graph
}

fn tiny(arch: ArchOption) -> ModelGraph {
    build_network(arch, &DepthConfig::tiny(4)).unwrap()
}

#[test]
fn pipeline_phases_reach_expected_accuracy() {
    let (train_set, test) = data();
    let fp = fit(tiny(ArchOption::AvgBefore), &train_set, Phase::FullPrecision, 8, Activation::Relu);
    let fp_acc = evaluate_ann(&fp, &test).unwrap();
    assert!(fp_acc > 0.9, "full precision {fp_acc}");

    let hybrid = fit(fp.clone(), &train_set, Phase::BinarizeFineTune, 5, Activation::Relu);
    assert!(hybrid.is_binarized());
    let hybrid_acc = evaluate_ann(&hybrid, &test).unwrap();
    assert!(hybrid_acc >= fp_acc - 0.05, "binarized {hybrid_acc} vs {fp_acc}");

    let scratch = fit(tiny(ArchOption::AvgBefore), &train_set, Phase::ScratchBinary, 5, Activation::Relu);
    let scratch_acc = evaluate_ann(&scratch, &test).unwrap();
    assert!(scratch_acc <= hybrid_acc + 0.01, "scratch {scratch_acc} vs hybrid {hybrid_acc}");
}

/// Binarizing activations as well as weights costs accuracy.
#[test]
fn sign_activations_trail_binary_weights() {
    let ds = generate(&SynthConfig {
        noise: 2.0,
        ..SynthConfig::new(4, 1000, 16, 22)
    })
    .unwrap();
    let (train_set, test) = ds.split_tail(300).unwrap();
    let bwn = fit(tiny(ArchOption::AvgBefore), &train_set, Phase::ScratchBinary, 6, Activation::Relu);
    let xnor = fit(tiny(ArchOption::AvgBefore), &train_set, Phase::ScratchBinary, 6, Activation::Sign);
    assert!(xnor.uses_sign_activation());
    let (a_bwn, a_xnor) = (evaluate_ann(&bwn, &test).unwrap(), evaluate_ann(&xnor, &test).unwrap());
    assert!(a_xnor < a_bwn, "xnor {a_xnor} vs bwn {a_bwn}");
}

#[test]
fn training_is_deterministic() {
    let (train_set, _) = data();
    let small = train_set.subset(&(0..200).collect::<Vec<_>>()).unwrap();
    let a = fit(tiny(ArchOption::MaxBefore), &small, Phase::FullPrecision, 2, Activation::Relu);
    let b = fit(tiny(ArchOption::MaxBefore), &small, Phase::FullPrecision, 2, Activation::Relu);
    assert_eq!(a, b);
}

#[test]
fn evaluation_matches_per_sample_loop() {
    let (train_set, test) = data();
    let small = train_set.subset(&(0..200).collect::<Vec<_>>()).unwrap();
    let g = fit(tiny(ArchOption::AvgAfter), &small, Phase::FullPrecision, 2, Activation::Relu);
    let mut hits = 0;
    let mut preds = Vec::new();
    for i in 0..test.len() {
        let logits = forward_eval(&g, &test.images.slice_batch(i, 1).unwrap()).unwrap();
        let p = argmax(logits.data());
        hits += usize::from(p == test.labels[i] as usize);
        preds.push(p);
    }
    assert_eq!(predict_ann(&g, &test).unwrap(), preds);
    assert_eq!(evaluate_ann(&g, &test).unwrap(), hits as f64 / test.len() as f64);
}

#[test]
fn finetune_requires_full_precision_checkpoint() {
    let (train_set, _) = data();
    let err = train(
        tiny(ArchOption::AvgBefore),
        &train_set,
        None,
        &OptimizerConfig::binarize(),
        &TrainSchedule::new(Phase::BinarizeFineTune, 1),
    )
    .unwrap_err();
    assert!(matches!(err, TrainError::MissingCheckpoint));
}

#[test]
fn rejects_mismatched_dataset() {
    let ds = generate(&SynthConfig::new(4, 40, 8, 1)).unwrap();
    let err = train(
        tiny(ArchOption::AvgBefore),
        &ds,
        None,
        &OptimizerConfig::full_precision(),
        &TrainSchedule::new(Phase::FullPrecision, 1),
    )
    .unwrap_err();
    assert!(matches!(err, TrainError::InputShape { .. }), "{err}");
}
