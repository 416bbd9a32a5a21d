use scriptbmi_core::harness::preset_by_tag;
use scriptbmi_core::layers::{softmax, Mode};
use scriptbmi_core::metrics::{cross_entropy, softmax_ce_backward};
use scriptbmi_core::model::{build_model, ModelConfig, Network};
use scriptbmi_core::optim::AdamState;
use scriptbmi_core::synth::synth_dataset;
use scriptbmi_core::train::{evaluate, train, Samples, SplitData, TrainConfig};
use scriptbmi_core::workflow::prepare_image;
use scriptbmi_core::RngStream;

const SIZE: usize = 16;

/// `per_writer` synthetic glyphs for each of 8 writers, all in one sample set.
fn corpus(per_writer: usize, seed: u64) -> Samples {
    let corpus = synth_dataset(8, per_writer, SIZE, &RngStream::new(seed, "synth", 0)).unwrap();
    let mut samples = Samples::new([3, SIZE, SIZE]);
    for img in &corpus.images {
        samples.push(&prepare_image(&img.image, [3, SIZE, SIZE]).unwrap(), img.writer_id as usize).unwrap();
    }
    samples
}

fn small_model() -> ModelConfig {
    ModelConfig {
        conv_kernels: vec![8, 16],
        conv_dropout_pct: vec![0, 0],
        hidden_units: vec![32],
        hidden_dropout_pct: vec![0],
        num_classes: 8,
        input: [3, SIZE, SIZE],
    }
}

fn config(epochs: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 8,
        max_epochs: epochs,
        learning_rate: 1e-3,
        patience: epochs,
        input_size: (SIZE, SIZE),
        ..TrainConfig::default()
    }
}

#[test]
fn first_adam_steps_reduce_batch_loss() {
    let samples = corpus(4, 1);
    let idx: Vec<usize> = (0..samples.len()).collect();
    let (x, labels) = samples.batch(&idx).unwrap();
    let mut net = Network::init(&build_model(&small_model()).unwrap(), &RngStream::new(1, "init", 0)).unwrap();
    let mut adam = AdamState::new(net.params(), 1e-3);
    let mut losses = Vec::new();
    for _ in 0..6 {
        let probs = softmax(&net.forward(&x, Mode::Eval, None).unwrap()).unwrap();
        losses.push(cross_entropy(&probs, &labels).unwrap());
        let grads = net.backward(&softmax_ce_backward(&probs, &labels).unwrap()).unwrap();
        adam.step(&mut net.params_mut(), &grads).unwrap();
    }
    assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
}

#[test]
fn separable_corpus_is_fit_within_thirty_epochs() {
    let train_set = corpus(25, 2);
    assert_eq!(train_set.len(), 200);
    let data = SplitData {
        val: corpus(3, 3),
        test: corpus(3, 4),
        train: train_set,
        num_classes: 8,
    };
    let mut outcome = train(&small_model(), &data, &config(30), |_| {}).unwrap();
    let acc = evaluate(&mut outcome.network, &data.train, 32).unwrap().metrics.accuracy;
    assert!(acc >= 0.99, "train accuracy {acc}");
}

#[test]
fn same_seed_same_curves_and_reports() {
    let data = SplitData {
        train: corpus(6, 5),
        val: corpus(2, 6),
        test: corpus(2, 7),
        num_classes: 8,
    };
    let model = preset_by_tag("base").unwrap().config.with_input([3, SIZE, SIZE]).with_classes(8);
    let a = train(&model, &data, &config(3), |_| {}).unwrap();
    let mut b = train(&model, &data, &config(3), |_| {}).unwrap();
    for (x, y) in a.report.train_loss.iter().zip(&b.report.train_loss) {
        assert!((x - y).abs() <= 1e-12);
    }
    assert_eq!(a.report.loss_curve_csv(), b.report.loss_curve_csv());
    assert_eq!(a.report.metrics_csv(), b.report.metrics_csv());
    let e1 = evaluate(&mut b.network, &data.test, 4).unwrap();
    let e2 = evaluate(&mut b.network, &data.test, 4).unwrap();
    assert_eq!(e1.metrics, e2.metrics);
    assert_eq!(e1.predictions, e2.predictions);
}

#[test]
fn steps_follow_batch_arithmetic_and_best_weights_are_restored() {
    let data = SplitData {
        train: corpus(5, 8),
        val: corpus(2, 9),
        test: corpus(2, 10),
        num_classes: 8,
    };
    let cfg = TrainConfig {
        batch_size: 7,
        patience: 2,
        learning_rate: 2e-2,
        ..config(15)
    };
    let mut outcome = train(&small_model(), &data, &cfg, |_| {}).unwrap();
    let r = &outcome.report;
    assert_eq!(r.steps_per_epoch, 40usize.div_ceil(7));
    assert_eq!(r.total_steps, (r.steps_per_epoch * r.stopped_epoch) as u64);
    assert!(r.stopped_epoch > cfg.patience || r.stopped_epoch == cfg.max_epochs);
    let val = evaluate(&mut outcome.network, &data.val, cfg.batch_size).unwrap().loss;
    assert!((val - outcome.report.best_val_loss).abs() <= 1e-9);
}
