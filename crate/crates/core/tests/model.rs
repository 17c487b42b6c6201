mod common;

use common::{small_config, unrolled_logits};
use rrn_core::autograd::{OpKind, Tape};
use rrn_core::blocks::{downsample_skip, temporal_parameter_count, TemporalConnection, TemporalResidualBlock};
use rrn_core::model::{temporal_reachability, NetworkConfig, Readout, RecurrentResidualNet, Stage};
use rrn_core::ops::NormMode;
use rrn_core::Tensor;

const CONNECTIONS: [TemporalConnection; 3] = TemporalConnection::ALL;

#[test]
fn forward_matches_a_hand_unrolled_network() {
    // Temporal blocks both with and without a downsampling projection.
    for connection in CONNECTIONS {
        for readout in [Readout::LastColumn, Readout::MeanColumns] {
            let cfg = small_config(&[(3, 2), (4, 1)], &[(0, 1), (1, 0)], connection, readout);
            let mut net = RecurrentResidualNet::<f64>::new(cfg, 3).unwrap();
            let chunks = common::random_chunks(4, 3, 3, [1, 8, 8]);
            let mut tape = Tape::new();
            let out = net.forward(&mut tape, &chunks).unwrap();
            let got = tape.value(out.logits);
            let want = unrolled_logits(&net, &chunks);
            for (i, row) in want.iter().enumerate() {
                for (k, &v) in row.iter().enumerate() {
                    let g = got.data()[i * row.len() + k];
                    assert!((g - v).abs() <= 1e-10, "{connection:?} {readout:?}: {g} vs {v}");
                }
            }
        }
    }
}

/// Primitive count of one unrolled forward pass plus the loss, derived from
/// the block structure rather than from the tape.
fn expected_records(cfg: &NetworkConfig, t_len: usize) -> usize {
    let temporal = cfg.temporal_blocks();
    let mut per_column = 3; // stem conv, bn, relu
    let mut temporal_extra = 0;
    let mut in_ch = cfg.stages[0].channels;
    let mut flat = 0;
    for (si, stage) in cfg.stages.iter().enumerate() {
        for bi in 0..stage.blocks {
            let projects = in_ch != stage.channels || (si > 0 && bi == 0);
            per_column += 6 + usize::from(projects) + 1;
            if temporal.contains(&flat) {
                temporal_extra += match cfg.connection {
                    TemporalConnection::IdentityMap => 1,
                    TemporalConnection::ConvLinear => 2,
                    TemporalConnection::ConvNonlinear => 3,
                };
            }
            in_ch = stage.channels;
            flat += 1;
        }
    }
    let pooled = match cfg.readout {
        Readout::LastColumn => 1,
        Readout::MeanColumns => t_len,
    };
    let readout = 2 * pooled + if pooled > 1 { pooled } else { 0 };
    t_len * per_column + (t_len - 1) * temporal_extra + readout + 2
}

#[test]
fn tape_record_count_follows_the_structure() {
    for connection in CONNECTIONS {
        for readout in [Readout::LastColumn, Readout::MeanColumns] {
            for t in 1..=4 {
                let cfg = small_config(&[(2, 2), (3, 1)], &[(0, 0), (1, 0)], connection, readout);
                let mut net = RecurrentResidualNet::<f64>::new(cfg.clone(), 0).unwrap();
                let mut tape = Tape::new();
                net.loss(&mut tape, &common::random_chunks(1, 2, t, [1, 8, 8]), &[0, 1]).unwrap();
                assert_eq!(tape.records(), expected_records(&cfg, t), "{connection:?} {readout:?} T={t}");
                assert_eq!(tape.count(OpKind::SoftmaxCrossEntropy), 1);
            }
        }
    }
}

#[test]
fn reachability_and_gradients_agree() {
    let slots = [(0, 0), (0, 1), (1, 0), (1, 1)];
    for n in [1usize, 2, 4] {
        let t_len = n + 2;
        for connection in CONNECTIONS {
            let cfg = small_config(&[(3, 2), (4, 2)], &slots[..n], connection, Readout::LastColumn);
            let reach = temporal_reachability(&cfg, t_len).unwrap();
            assert_eq!(reach.max_lag(), n);
            let mut net = RecurrentResidualNet::<f64>::new(cfg, 5).unwrap();
            let chunk = common::random_chunks(6, 1, t_len, [1, 8, 8]);
            let chunk = chunk.reshape(&[t_len, 1, 8, 8]).unwrap();
            let norms = net.frame_gradient_norms(&chunk, 1).unwrap();
            let last = t_len - 1;
            for (t, &g) in norms.iter().enumerate() {
                let k = last - t;
                assert_eq!(reach.reaches(last, k), k <= n, "n={n} k={k}");
                if k <= n {
                    assert!(g > 0.0, "n={n} {connection:?}: frame t-{k} has zero gradient");
                } else {
                    assert_eq!(g, 0.0, "n={n} {connection:?}: frame t-{k} has gradient {g}");
                }
            }
        }
    }
}

#[test]
fn reachability_without_connections_is_framewise() {
    let cfg = small_config(&[(3, 2)], &[], TemporalConnection::IdentityMap, Readout::LastColumn);
    let reach = temporal_reachability(&cfg, 4).unwrap();
    for t in 0..4 {
        for k in 0..4 {
            assert_eq!(reach.reaches(t, k), k == 0);
        }
    }
}

#[test]
fn single_frame_chunks_reduce_to_the_spatial_network() {
    for connection in CONNECTIONS {
        let cfg = small_config(&[(3, 1), (4, 1)], &[(0, 0), (1, 0)], connection, Readout::LastColumn);
        let mut temporal = RecurrentResidualNet::<f64>::new(cfg.clone(), 8).unwrap();
        let mut spatial = RecurrentResidualNet::<f64>::new(
            NetworkConfig {
                temporal_positions: vec![],
                ..cfg
            },
            0,
        )
        .unwrap();
        for p in spatial.params_mut().iter_mut() {
            let id = temporal.params().find(&p.name).unwrap();
            p.value = temporal.params().value(id).clone();
        }
        let frame = common::random_chunks(9, 1, 1, [1, 8, 8]).reshape(&[1, 1, 8, 8]).unwrap();
        let a = temporal.unroll_forward(&frame).unwrap();
        let b = spatial.unroll_forward(&frame).unwrap();
        assert!(a.logits.max_abs_diff(&b.logits).unwrap() <= 1e-12, "{connection:?}");
    }
}

fn block(connection: TemporalConnection, in_ch: usize, out_ch: usize, stride: usize) -> (TemporalResidualBlock<f64>, rrn_core::autograd::ParamStore<f64>) {
    use rand::SeedableRng;
    let mut store = rrn_core::autograd::ParamStore::new();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
    let b = TemporalResidualBlock::new(&mut store, &mut rng, "b", in_ch, out_ch, stride, Some(connection));
    (b, store)
}

#[test]
fn zero_previous_input_adds_nothing() {
    for connection in CONNECTIONS {
        for (in_ch, out_ch, stride) in [(3, 3, 1), (2, 4, 2)] {
            let (mut b, store) = block(connection, in_ch, out_ch, stride);
            let x = common::random_chunks(13, 2, 1, [in_ch, 6, 6]).reshape(&[2, in_ch, 6, 6]).unwrap();
            let zero = Tensor::zeros(x.shape()).unwrap();
            let with = b.temporal_forward(&store, &x, &zero, NormMode::Train).unwrap();
            let without = b.spatial_forward(&store, &x, NormMode::Train).unwrap();
            assert!(with.max_abs_diff(&without).unwrap() <= 1e-12, "{connection:?}");
        }
    }
}

#[test]
fn identity_connection_adds_the_previous_input() {
    let (mut b, store) = block(TemporalConnection::IdentityMap, 3, 3, 1);
    let x = common::random_chunks(14, 2, 1, [3, 5, 5]).reshape(&[2, 3, 5, 5]).unwrap();
    let prev = common::random_chunks(15, 2, 1, [3, 5, 5]).reshape(&[2, 3, 5, 5]).unwrap();
    let y = b.temporal_forward(&store, &x, &prev, NormMode::Train).unwrap();
    let spatial = b.spatial_forward(&store, &x, NormMode::Train).unwrap();
    assert!(y.max_abs_diff(&spatial.add(&prev).unwrap()).unwrap() <= 1e-12);
}

#[test]
fn nonlinear_connection_is_relu_of_linear() {
    let (mut lin, store) = block(TemporalConnection::ConvLinear, 3, 3, 1);
    let (mut non, store2) = block(TemporalConnection::ConvNonlinear, 3, 3, 1);
    assert_eq!(store.len(), store2.len());
    let x = common::random_chunks(16, 2, 1, [3, 5, 5]).reshape(&[2, 3, 5, 5]).unwrap();
    let prev = common::random_chunks(17, 2, 1, [3, 5, 5]).reshape(&[2, 3, 5, 5]).unwrap().map(|v| v - 0.5);
    let spatial = lin.spatial_forward(&store, &x, NormMode::Train).unwrap();
    let yl = lin.temporal_forward(&store, &x, &prev, NormMode::Train).unwrap().sub(&spatial).unwrap();
    let yn = non.temporal_forward(&store2, &x, &prev, NormMode::Train).unwrap().sub(&spatial).unwrap();
    assert!(yl.data().iter().any(|&v| v < -1e-3), "linear term should go negative somewhere");
    assert!(yn.max_abs_diff(&yl.map(|v| v.max(0.0))).unwrap() <= 1e-12);
}

#[test]
fn mismatched_previous_column_is_rejected() {
    let (mut b, store) = block(TemporalConnection::IdentityMap, 3, 3, 1);
    let x = Tensor::zeros(&[1, 3, 4, 4]).unwrap();
    let err = b.temporal_forward(&store, &x, &Tensor::zeros(&[1, 3, 4, 5]).unwrap(), NormMode::Train);
    assert!(err.unwrap_err().to_string().contains("width"));
}

#[test]
fn downsample_skip_shapes() {
    let x = Tensor::<f64>::full(&[1, 2, 4, 4], 1.0).unwrap();
    let w = Tensor::full(&[4, 2, 1, 1], 0.5).unwrap();
    let y = downsample_skip(&x, &w).unwrap();
    assert_eq!(y.shape(), [1, 4, 2, 2]);
    assert!(y.data().iter().all(|&v| v == 1.0));
    assert!(downsample_skip(&Tensor::<f64>::zeros(&[1, 2, 5, 4]).unwrap(), &w).is_err());
    assert!(downsample_skip(&x, &Tensor::zeros(&[3, 2, 1, 1]).unwrap()).is_err());
}

#[test]
fn identity_connections_have_the_fewest_parameters() {
    let counts: Vec<(usize, usize)> = CONNECTIONS
        .iter()
        .map(|&c| {
            let cfg = NetworkConfig {
                connection: c,
                ..NetworkConfig::desk_default(4)
            };
            let net = RecurrentResidualNet::<f32>::new(cfg, 0).unwrap();
            (net.trainable_count(), temporal_parameter_count(net.blocks(), net.params()))
        })
        .collect();
    // The last block maps 32 → 64 channels, so W_s is 64×32×1×1.
    assert_eq!(counts[0].1, 0);
    assert_eq!(counts[1].1, 64 * 32);
    assert_eq!(counts[2].1, 64 * 32);
    assert_eq!(counts[1].0, counts[0].0 + 64 * 32);
    assert!(counts[0].0 < counts[1].0 && counts[0].0 < counts[2].0);
}

#[test]
fn parameter_count_matches_the_architecture() {
    let cfg = NetworkConfig::desk_default(4);
    let net = RecurrentResidualNet::<f32>::new(cfg.clone(), 0).unwrap();
    let conv_bn = |i: usize, o: usize| o * i * 9 + 2 * o;
    let mut expected = conv_bn(1, 8);
    let mut in_ch = 8;
    for Stage { channels, .. } in &cfg.stages {
        expected += conv_bn(in_ch, *channels) + conv_bn(*channels, *channels);
        if in_ch != *channels {
            expected += channels * in_ch;
        }
        in_ch = *channels;
    }
    expected += 4 * 64 + 4;
    assert_eq!(net.trainable_count(), expected);
}

#[test]
fn wrong_frame_shape_is_reported_with_its_axis() {
    let mut net = RecurrentResidualNet::<f64>::new(NetworkConfig::desk_default(4), 0).unwrap();
    let err = net.unroll_forward(&Tensor::zeros(&[2, 1, 32, 16]).unwrap()).unwrap_err();
    assert!(err.to_string().contains("width"), "{err}");
}

#[test]
fn forward_is_deterministic_across_instances() {
    let cfg = small_config(&[(3, 1), (4, 1)], &[(1, 0)], TemporalConnection::ConvNonlinear, Readout::LastColumn);
    let chunk = common::random_chunks(18, 1, 2, [1, 8, 8]).reshape(&[2, 1, 8, 8]).unwrap();
    let a = RecurrentResidualNet::<f64>::new(cfg.clone(), 19).unwrap().unroll_forward(&chunk).unwrap();
    let b = RecurrentResidualNet::<f64>::new(cfg, 19).unwrap().unroll_forward(&chunk).unwrap();
    assert_eq!(a, b);
}
