use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::synthetic_separable;
use crate::graph::{GraphBuilder, LayerSpec, ModelGraph, NodeId};
use crate::space::{CellKind, SpaceConfig};

fn input(length: usize, channels: usize) -> LayerSpec {
    LayerSpec::Input {
        length,
        channels,
        reshape: None,
    }
}

fn conv(kernel_size: usize, filters: usize, stride: usize) -> LayerSpec {
    LayerSpec::Conv1D {
        kernel_size,
        filters,
        stride,
    }
}

/// `body` maps a spatial node to the node feeding global pooling.
fn graph_with(input_spec: LayerSpec, classes: usize, body: impl FnOnce(&mut GraphBuilder, NodeId) -> NodeId) -> ModelGraph {
    let mut b = GraphBuilder::new();
    let x = b.add(input_spec, &[]);
    let h = body(&mut b, x);
    let h = b.chain(h, [LayerSpec::GlobalAvgPool, LayerSpec::Dense { units: classes }]);
    b.add(LayerSpec::Softmax, &[h]);
    b.finish(classes).unwrap()
}

fn random_batch(rows: usize, width: usize, classes: usize, seed: u64) -> (Tensor, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * width).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let labels = (0..rows).map(|_| rng.gen_range(0..classes)).collect();
    (Tensor::from_vec(&[rows, width], data), labels)
}

/// Jitters every trainable tensor so gamma/beta and biases are not at their
/// symmetric initial values.
fn jitter(model: &mut ModelInstance, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for s in 0..model.num_trainable_tensors() {
        for v in model.trainable_mut(s).data_mut() {
            *v += rng.gen_range(-0.3..0.3);
        }
    }
}

fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale < 1e-8 {
        diff
    } else {
        diff / scale
    }
}

/// Central-difference gradient of the loss over every trainable element and
/// every input element, compared tensor by tensor.
fn check_gradients(graph: ModelGraph, mode: Mode) -> f64 {
    const H: f64 = 1e-5;
    let classes = graph.num_classes();
    let width = graph.input_len();
    let mut model = ModelInstance::init(graph, 3);
    jitter(&mut model, 4);
    let (batch, labels) = random_batch(4, width, classes, 5);
    let loss = |m: &ModelInstance, x: &Tensor| m.loss_and_grads(x, &labels, mode, 11).unwrap().0;
    let (_, grads) = model.loss_and_grads(&batch, &labels, mode, 11).unwrap();

    let mut worst: f64 = 0.0;
    for slot in 0..model.num_trainable_tensors() {
        let mut numeric = Vec::new();
        for i in 0..model.trainable(slot).len() {
            let orig = model.trainable(slot).data()[i];
            model.trainable_mut(slot).data_mut()[i] = orig + H;
            let up = loss(&model, &batch);
            model.trainable_mut(slot).data_mut()[i] = orig - H;
            let down = loss(&model, &batch);
            model.trainable_mut(slot).data_mut()[i] = orig;
            numeric.push((up - down) / (2.0 * H));
        }
        let err = rel_error(grads.params[slot].data(), &numeric);
        assert!(err < 1e-4, "slot {slot} (node {}): relative error {err}", model.slot_owner(slot));
        worst = worst.max(err);
    }
    let mut numeric = Vec::new();
    for i in 0..batch.len() {
        let mut x = batch.clone();
        x.data_mut()[i] += H;
        let up = loss(&model, &x);
        x.data_mut()[i] -= 2.0 * H;
        let down = loss(&model, &x);
        numeric.push((up - down) / (2.0 * H));
    }
    let err = rel_error(grads.input.data(), &numeric);
    assert!(err < 1e-4, "input gradient: relative error {err}");
    worst.max(err)
}

#[test]
fn gradients_conv1d_strided() {
    check_gradients(graph_with(input(8, 3), 3, |b, x| b.add(conv(3, 4, 2), &[x])), Mode::Train);
}

#[test]
fn gradients_conv2d_on_reshaped_input() {
    let spec = LayerSpec::Input {
        length: 11,
        channels: 1,
        reshape: Some([4, 3]),
    };
    let g = graph_with(spec, 2, |b, x| {
        b.add(
            LayerSpec::Conv2D {
                kernel_size: 2,
                filters: 3,
                stride: 1,
            },
            &[x],
        )
    });
    check_gradients(g, Mode::Train);
}

#[test]
fn gradients_separable_conv() {
    let g = graph_with(input(8, 2), 3, |b, x| {
        b.chain(
            x,
            [
                LayerSpec::SeparableConv1D {
                    kernel_size: 3,
                    filters: 4,
                    stride: 1,
                },
                LayerSpec::SeparableConv1D {
                    kernel_size: 5,
                    filters: 3,
                    stride: 2,
                },
            ],
        )
    });
    check_gradients(g, Mode::Train);
}

#[test]
fn gradients_batchnorm_both_modes() {
    let body = |b: &mut GraphBuilder, x| b.chain(x, [conv(1, 4, 1), LayerSpec::BatchNorm]);
    check_gradients(graph_with(input(6, 2), 3, body), Mode::Train);
    check_gradients(graph_with(input(6, 2), 3, body), Mode::Eval);
}

#[test]
fn gradients_dense_and_activations() {
    let mut b = GraphBuilder::new();
    let x = b.add(input(5, 2), &[]);
    let h = b.chain(
        x,
        [
            LayerSpec::Flatten,
            LayerSpec::Dense { units: 6 },
            LayerSpec::ELU,
            LayerSpec::Dense { units: 5 },
            LayerSpec::ReLU,
            LayerSpec::Dropout { rate: 0.3 },
            LayerSpec::Dense { units: 3 },
        ],
    );
    b.add(LayerSpec::Softmax, &[h]);
    check_gradients(b.finish(3).unwrap(), Mode::Train);
}

#[test]
fn gradients_pooling() {
    for (pool_size, stride) in [(3, 1), (3, 2), (2, 2), (1, 2)] {
        let g = graph_with(input(7, 2), 2, |b, x| {
            let h = b.add(conv(1, 3, 1), &[x]);
            let m = b.add(LayerSpec::MaxPool1D { pool_size, stride }, &[h]);
            b.add(LayerSpec::AvgPool1D { pool_size, stride }, &[m])
        });
        check_gradients(g, Mode::Train);
    }
    let spec = LayerSpec::Input {
        length: 20,
        channels: 1,
        reshape: Some([5, 4]),
    };
    let g = graph_with(spec, 2, |b, x| {
        b.chain(
            x,
            [
                LayerSpec::MaxPool2D {
                    pool_size: 2,
                    stride: 2,
                },
                LayerSpec::AvgPool2D {
                    pool_size: 3,
                    stride: 1,
                },
            ],
        )
    });
    check_gradients(g, Mode::Train);
}

#[test]
fn gradients_merge_and_plumbing() {
    let g = graph_with(input(8, 2), 3, |b, x| {
        let a = b.add(conv(1, 2, 1), &[x]);
        let s = b.chain(x, [LayerSpec::Shift, LayerSpec::Identity]);
        let sum = b.add(LayerSpec::Add, &[a, s, x]);
        b.add(LayerSpec::Concat, &[sum, a])
    });
    check_gradients(g, Mode::Train);
}

#[test]
fn gradients_decoded_child() {
    let space = SpaceConfig {
        nodes_per_cell: 2,
        initial_filters: 4,
        input_length: 8,
        num_classes: 3,
        cell_dropout_rate: 0.2,
        ..SpaceConfig::default()
    };
    let seq = crate::space::DecisionSequence(vec![0, 1, 0, 2, 1, 4, 0, 3, 0, 3, 0, 2, 1, 1, 1, 4]);
    let g = crate::space::decode(&seq, &space).unwrap();
    check_gradients(g, Mode::Train);
}

#[test]
fn softmax_rows_sum_to_one_and_eval_is_repeatable() {
    let space = SpaceConfig {
        nodes_per_cell: 2,
        initial_filters: 4,
        input_length: 16,
        num_classes: 4,
        ..SpaceConfig::default()
    };
    let g = crate::space::decode(&space.sample_random(1), &space).unwrap();
    let model = ModelInstance::init(g, 1);
    let (batch, _) = random_batch(5, 16, 4, 2);
    let p = model.predict(&batch).unwrap();
    for i in 0..5 {
        assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    assert_eq!(p, model.predict(&batch).unwrap());
}

#[test]
fn zero_dropout_train_matches_eval_without_batchnorm() {
    let g = graph_with(input(6, 1), 2, |b, x| b.chain(x, [conv(3, 4, 1), LayerSpec::Dropout { rate: 0.0 }]));
    let mut model = ModelInstance::init(g, 2);
    let (batch, _) = random_batch(3, 6, 2, 1);
    let eval = model.predict(&batch).unwrap();
    let train = model.forward(&batch, Mode::Train, 9).unwrap();
    assert_eq!(eval, train);
}

#[test]
fn uniform_logits_give_log_classes() {
    let mut b = GraphBuilder::new();
    let x = b.add(input(4, 1), &[]);
    let h = b.chain(x, [LayerSpec::Flatten, LayerSpec::Dense { units: 5 }]);
    b.add(LayerSpec::Softmax, &[h]);
    let mut model = ModelInstance::init(b.finish(5).unwrap(), 0);
    model.trainable_mut(0).data_mut().iter_mut().for_each(|v| *v = 0.0);
    let (batch, labels) = random_batch(3, 4, 5, 0);
    let (loss, _) = model.loss_and_grads(&batch, &labels, Mode::Eval, 0).unwrap();
    assert!((loss - 5f64.ln()).abs() < 1e-12);
}

#[test]
fn confident_correct_output_has_vanishing_gradient() {
    let mut b = GraphBuilder::new();
    let x = b.add(input(2, 1), &[]);
    let h = b.chain(x, [LayerSpec::Flatten, LayerSpec::Dense { units: 2 }]);
    b.add(LayerSpec::Softmax, &[h]);
    let mut model = ModelInstance::init(b.finish(2).unwrap(), 0);
    model.trainable_mut(0).data_mut().iter_mut().for_each(|v| *v = 0.0);
    model.trainable_mut(1).data_mut().copy_from_slice(&[60.0, -60.0]);
    let batch = Tensor::from_vec(&[1, 2], vec![0.5, 0.5]);
    let (loss, grads) = model.loss_and_grads(&batch, &[0], Mode::Eval, 0).unwrap();
    assert!(loss < 1e-40);
    assert!(grads.global_norm() < 1e-40);
}

#[test]
fn label_out_of_range_is_rejected() {
    let g = graph_with(input(4, 1), 2, |b, x| b.add(conv(1, 2, 1), &[x]));
    let model = ModelInstance::init(g, 0);
    let (batch, _) = random_batch(2, 4, 2, 0);
    assert!(matches!(
        model.loss_and_grads(&batch, &[0, 2], Mode::Eval, 0),
        Err(EngineError::LabelOutOfRange { label: 2, classes: 2 })
    ));
    let wrong = Tensor::zeros(&[2, 5]);
    assert!(matches!(model.predict(&wrong), Err(EngineError::ShapeMismatch { .. })));
}

#[test]
fn init_is_seeded_and_glorot_bounded() {
    let mut b = GraphBuilder::new();
    let x = b.add(input(10, 1), &[]);
    let h = b.chain(x, [LayerSpec::Flatten, LayerSpec::Dense { units: 5 }, LayerSpec::BatchNorm]);
    b.add(LayerSpec::Softmax, &[h]);
    let g = b.finish(5).unwrap();
    let a = ModelInstance::init(g.clone(), 42);
    let c = ModelInstance::init(g, 42);
    assert_eq!(a.layer_params(), c.layer_params());
    let bound = (6.0f64 / 15.0).sqrt();
    let w = a.trainable(0);
    assert_eq!(w.shape(), &[10, 5]);
    assert!(w.data().iter().all(|v| v.abs() <= bound));
    assert!(w.data().iter().any(|v| v.abs() > 0.8 * bound));
    assert!(a.trainable(1).data().iter().all(|&v| v == 0.0));
    let bn = a.params_of(3).unwrap();
    assert!(bn[0].data().iter().all(|&v| v == 1.0));
    assert!(bn[1].data().iter().chain(bn[2].data()).all(|&v| v == 0.0));
    assert!(bn[3].data().iter().all(|&v| v == 1.0));
}

#[test]
fn batchnorm_train_output_is_standardised() {
    let g = graph_with(input(6, 2), 2, |b, x| b.chain(x, [conv(1, 3, 1), LayerSpec::BatchNorm]));
    let mut model = ModelInstance::init(g, 1);
    let bn_slot = 2;
    model.trainable_mut(bn_slot).data_mut().copy_from_slice(&[0.5, 2.0, 1.5]);
    model.trainable_mut(bn_slot + 1).data_mut().copy_from_slice(&[0.1, -0.4, 3.0]);
    let (batch, _) = random_batch(8, 12, 2, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let trace = model.run(&batch, Mode::Train, &mut rng).unwrap();
    let conv_out = model.node_output(&trace, 1).unwrap().data().to_vec();
    let out = model.node_output(&trace, 2).unwrap();
    let gamma = [0.5, 2.0, 1.5];
    let beta = [0.1, -0.4, 3.0];
    for c in 0..3 {
        let col = |v: &[f64]| v.iter().skip(c).step_by(3).copied().collect::<Vec<f64>>();
        let stats = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64)
        };
        let (_, in_var) = stats(&col(&conv_out));
        let (mean, var) = stats(&col(out.data()));
        assert!((mean - beta[c]).abs() < 1e-9);
        let expected = gamma[c] * gamma[c] * in_var / (in_var + BN_EPSILON);
        assert!((var - expected).abs() < 1e-6, "channel {c}: {var} vs {expected}");
    }
}

#[test]
fn moving_statistics_follow_momentum() {
    let g = graph_with(input(4, 1), 2, |b, x| b.chain(x, [conv(1, 2, 1), LayerSpec::BatchNorm]));
    let mut model = ModelInstance::init(g, 0);
    let (batch, _) = random_batch(6, 4, 2, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let trace = model.run(&batch, Mode::Train, &mut rng).unwrap();
    let conv_out = model.node_output(&trace, 1).unwrap().data().to_vec();
    model.apply_batch_stats(&trace);
    let mean0: f64 = conv_out.iter().step_by(2).sum::<f64>() / 24.0;
    let bn = model.params_of(2).unwrap();
    assert!((bn[2].data()[0] - (1.0 - BN_MOMENTUM) * mean0).abs() < 1e-12);
}

#[test]
fn dropout_is_unbiased_in_expectation() {
    let mut b = GraphBuilder::new();
    let x = b.add(input(6, 1), &[]);
    let d = b.add(LayerSpec::Dropout { rate: 0.4 }, &[x]);
    let h = b.chain(d, [LayerSpec::Flatten, LayerSpec::Dense { units: 2 }]);
    b.add(LayerSpec::Softmax, &[h]);
    let model = ModelInstance::init(b.finish(2).unwrap(), 0);
    let batch = Tensor::from_vec(&[1, 6], vec![0.1, 0.5, 0.9, 0.3, 0.7, 1.0]);
    let passes = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut sum = [0.0; 6];
    let mut sq = [0.0; 6];
    for _ in 0..passes {
        let trace = model.run(&batch, Mode::Train, &mut rng).unwrap();
        for (i, v) in model.node_output(&trace, d).unwrap().data().iter().enumerate() {
            sum[i] += v;
            sq[i] += v * v;
        }
    }
    for i in 0..6 {
        let mean = sum[i] / passes as f64;
        let var = sq[i] / passes as f64 - mean * mean;
        let se = (var / passes as f64).sqrt();
        assert!((mean - batch.data()[i]).abs() < 3.0 * se, "element {i}: {mean}");
    }
}

fn small_space() -> SpaceConfig {
    SpaceConfig {
        nodes_per_cell: 2,
        initial_filters: 8,
        input_length: 16,
        num_classes: 2,
        ..SpaceConfig::default()
    }
}

#[test]
fn training_is_deterministic_and_splits_cleanly() {
    let space = small_space();
    let g = crate::space::decode(&space.sample_random(5), &space).unwrap();
    let data = synthetic_separable(96, 16, 2, 1);
    let cfg = TrainConfig {
        batch_size: 32,
        epochs: 4,
        seed: 8,
        ..TrainConfig::default()
    };
    let mut a = ModelInstance::init(g.clone(), 1);
    let ha = train(&mut a, &data, Some(&data), &cfg).unwrap();
    let mut b = ModelInstance::init(g, 1);
    let first = train(&mut b, &data, None, &TrainConfig { epochs: 1, ..cfg.clone() }).unwrap();
    let rest = train(&mut b, &data, None, &TrainConfig { epochs: 3, ..cfg.clone() }).unwrap();
    assert_eq!(ha.len(), 4);
    assert_eq!(a.layer_params(), b.layer_params());
    assert_eq!(first[0].train_loss, ha[0].train_loss);
    assert_eq!(rest.iter().map(|e| e.epoch).collect::<Vec<_>>(), vec![1, 2, 3]);
    assert_eq!(b.epoch(), 4);
}

#[test]
fn lr_trace_follows_global_epoch() {
    let mut b = GraphBuilder::new();
    let x = b.add(input(2, 1), &[]);
    let h = b.chain(x, [LayerSpec::Flatten, LayerSpec::Dense { units: 2 }]);
    b.add(LayerSpec::Softmax, &[h]);
    let mut model = ModelInstance::init(b.finish(2).unwrap(), 0);
    let data = synthetic_separable(4, 2, 2, 0);
    let cfg = TrainConfig {
        epochs: 25,
        ..TrainConfig::default()
    };
    let h = train(&mut model, &data, None, &cfg).unwrap();
    assert_eq!(h[9].lr, 0.001);
    assert_eq!(h[10].lr, 0.0005);
    assert_eq!(h[24].lr, 0.00025);
}

#[test]
fn small_steps_reduce_fixed_batch_loss() {
    let space = SpaceConfig {
        cell_dropout_rate: 0.0,
        ..small_space()
    };
    let g = crate::space::decode(&space.sample_random(2), &space).unwrap();
    let mut model = ModelInstance::init(g, 3);
    let data = synthetic_separable(64, 16, 2, 4);
    let idx: Vec<usize> = (0..64).collect();
    let (batch, labels) = (data.batch(&idx), data.batch_labels(&idx));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut last = f64::INFINITY;
    for _ in 0..10 {
        let loss = model.train_step(&batch, &labels, 1e-4, &mut rng).unwrap();
        assert!(loss <= last + 1e-12, "{loss} > {last}");
        last = loss;
    }
}

#[test]
fn separable_data_is_learned() {
    let space = small_space();
    let g = crate::space::decode(&space.sample_random(11), &space).unwrap();
    let mut model = ModelInstance::init(g, 0);
    // 320 steps: moving statistics at momentum 0.99 need a few hundred
    // updates before Eval mode tracks the batch statistics.
    let data = synthetic_separable(256, 16, 2, 3);
    let cfg = TrainConfig {
        epochs: 20,
        batch_size: 16,
        ..TrainConfig::default()
    };
    train(&mut model, &data, None, &cfg).unwrap();
    let test = synthetic_separable(100, 16, 2, 99);
    assert!(accuracy(&model, &test, 64).unwrap() >= 0.99);
}

#[test]
fn empty_dataset_is_rejected() {
    let space = small_space();
    let g = crate::space::decode(&space.sample_random(1), &space).unwrap();
    let mut model = ModelInstance::init(g, 0);
    let empty = crate::data::Dataset::new(16, vec!["a".into(), "b".into()]);
    assert!(matches!(
        train(&mut model, &empty, None, &TrainConfig::default()),
        Err(EngineError::EmptyDataset)
    ));
}

#[test]
fn checkpoint_round_trip_resumes_training() {
    let space = SpaceConfig {
        cells: vec![CellKind::Normal, CellKind::Reduction],
        ..small_space()
    };
    let g = crate::space::decode(&space.sample_random(3), &space).unwrap();
    let data = synthetic_separable(64, 16, 2, 1);
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 16,
        ..TrainConfig::default()
    };
    let mut model = ModelInstance::init(g, 0);
    train(&mut model, &data, None, &cfg).unwrap();
    let restored = decode_checkpoint(&encode_checkpoint(&model)).unwrap();
    assert_eq!(restored.layer_params(), model.layer_params());
    assert_eq!(restored.optimizer(), model.optimizer());
    assert_eq!(restored.epoch(), 2);
    let mut a = model;
    let mut b = restored;
    train(&mut a, &data, None, &cfg).unwrap();
    train(&mut b, &data, None, &cfg).unwrap();
    assert_eq!(a.layer_params(), b.layer_params());
}

#[test]
fn corrupt_checkpoint_is_rejected() {
    assert!(decode_checkpoint(b"something else\n").is_err());
    let space = small_space();
    let g = crate::space::decode(&space.sample_random(3), &space).unwrap();
    let bytes = encode_checkpoint(&ModelInstance::init(g, 0));
    assert!(decode_checkpoint(&bytes[..bytes.len() - 8]).is_err());
}

#[test]
fn policy_log_prob_gradient_matches_finite_differences() {
    const H: f64 = 1e-6;
    let arities = [1, 5, 2, 5, 3];
    let mut net = PolicyNet::new(&arities, 6, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for t in net.params_mut() {
        t.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.2..0.2));
    }
    let choices = [0, 3, 1, 4, 2];
    let (_, grads) = net.log_prob_grads(&choices);
    for k in 0..net.params().len() {
        let mut numeric = Vec::new();
        for i in 0..net.params()[k].len() {
            let orig = net.params()[k].data()[i];
            net.params_mut()[k].data_mut()[i] = orig + H;
            let up = net.log_prob(&choices);
            net.params_mut()[k].data_mut()[i] = orig - H;
            let down = net.log_prob(&choices);
            net.params_mut()[k].data_mut()[i] = orig;
            numeric.push((up - down) / (2.0 * H));
        }
        let err = rel_error(grads.0[k].data(), &numeric);
        assert!(err < 1e-4, "policy tensor {k}: relative error {err}");
    }
}
