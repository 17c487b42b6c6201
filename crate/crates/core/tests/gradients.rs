//! Finite-difference checks of every primitive and of whole networks.

mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rrn_core::autograd::{NodeId, OpKind, ParamId, ParamStore, Tape};
use rrn_core::blocks::TemporalConnection;
use rrn_core::gradcheck::{grad_check, Differentiable, FnObjective, GradCheckConfig, GradCheckReport};
use rrn_core::model::{Readout, RecurrentResidualNet};
use rrn_core::ops::{BatchNormStats, ConvSpec, NormMode};
use rrn_core::{Result, Tensor};

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let len = shape.iter().product();
    Tensor::from_vec(shape, (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Values bounded away from zero, so ReLU inputs sit far from the kink.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    random(rng, shape).map(|v| if v >= 0.0 { v + 0.05 } else { v - 0.05 })
}

/// Scalar probe `Σ y ⊙ R` with a fixed random `R`, so every output element
/// contributes a distinct weight.
fn probe(tape: &mut Tape<f64>, y: NodeId, seed: u64) -> Result<NodeId> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = tape.input(random(&mut rng, tape.value(y).shape()));
    let m = tape.mul(y, r)?;
    Ok(tape.sum(m))
}

fn check(mut obj: impl Differentiable) -> GradCheckReport {
    let report = grad_check(&mut obj, &GradCheckConfig::default()).unwrap();
    assert!(report.passed(), "{report:#?}");
    assert!(report.params.iter().all(|p| p.skipped_kinks == 0 && p.checked > 0), "{report:#?}");
    report
}

fn store_with(rng: &mut ChaCha8Rng, shapes: &[(&str, &[usize])]) -> (ParamStore<f64>, Vec<ParamId>) {
    let mut store = ParamStore::new();
    let ids = shapes.iter().map(|(n, s)| store.add(*n, random(rng, s))).collect();
    (store, ids)
}

#[test]
fn conv2d_gradients() {
    for (kernel, stride, pad, bias) in [(3, 1, 1, true), (3, 2, 1, false), (1, 2, 0, false), (2, 1, 0, true)] {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (store, ids) = store_with(&mut rng, &[("x", &[2, 2, 5, 5]), ("w", &[3, 2, kernel, kernel]), ("b", &[3])]);
        check(FnObjective {
            store,
            f: move |s: &ParamStore<f64>, tape: &mut Tape<f64>| {
                let (x, w) = (tape.param(s, ids[0]), tape.param(s, ids[1]));
                let b = bias.then(|| tape.param(s, ids[2]));
                let y = tape.conv2d(x, w, b, ConvSpec::new(kernel, stride, pad))?;
                probe(tape, y, 7)
            },
        });
    }
}

#[test]
fn batch_norm_gradients_in_both_modes() {
    for mode in [NormMode::Train, NormMode::Eval] {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (store, ids) = store_with(&mut rng, &[("x", &[3, 2, 3, 3]), ("gamma", &[2]), ("beta", &[2])]);
        let running = BatchNormStats::with_running(vec![0.1, -0.2], vec![0.8, 1.3]);
        check(FnObjective {
            store,
            f: move |s: &ParamStore<f64>, tape: &mut Tape<f64>| {
                let mut stats = running.clone();
                let (x, g, b) = (tape.param(s, ids[0]), tape.param(s, ids[1]), tape.param(s, ids[2]));
                let y = tape.batch_norm(x, g, b, &mut stats, mode)?;
                probe(tape, y, 8)
            },
        });
    }
}

#[test]
fn pointwise_gradients_away_from_the_relu_kink() {
    type Unary = fn(&mut Tape<f64>, NodeId) -> NodeId;
    let ops: [(&str, Unary); 4] = [
        ("relu", |t, x| t.relu(x)),
        ("sigmoid", |t, x| t.sigmoid(x)),
        ("tanh", |t, x| t.tanh(x)),
        ("affine", |t, x| t.affine(x, -1.7, 0.3)),
    ];
    for (name, op) in ops {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let x = store.add("x", away_from_zero(&mut rng, &[4, 5]));
        let mut tape = Tape::new();
        let xn = tape.param(&store, x);
        op(&mut tape, xn);
        if name == "relu" {
            assert!(tape.relu_margin().unwrap() > 1e-3);
        }
        check(FnObjective {
            store,
            f: move |s: &ParamStore<f64>, tape: &mut Tape<f64>| {
                let xn = tape.param(s, x);
                let y = op(tape, xn);
                probe(tape, y, 9)
            },
        });
    }
}

#[test]
fn binary_gradients() {
    type Binary = fn(&mut Tape<f64>, NodeId, NodeId) -> Result<NodeId>;
    let ops: [Binary; 3] = [|t, a, b| t.add(a, b), |t, a, b| t.sub(a, b), |t, a, b| t.mul(a, b)];
    for op in ops {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (store, ids) = store_with(&mut rng, &[("a", &[3, 4]), ("b", &[3, 4])]);
        check(FnObjective {
            store,
            f: move |s: &ParamStore<f64>, tape: &mut Tape<f64>| {
                let (a, b) = (tape.param(s, ids[0]), tape.param(s, ids[1]));
                let y = op(tape, a, b)?;
                probe(tape, y, 10)
            },
        });
    }
}

#[test]
fn the_same_parameter_used_twice_accumulates() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (store, ids) = store_with(&mut rng, &[("a", &[2, 3])]);
    check(FnObjective {
        store,
        f: move |s: &ParamStore<f64>, tape: &mut Tape<f64>| {
            let a = tape.param(s, ids[0]);
            let again = tape.param(s, ids[0]);
            assert_eq!(a, again);
            let y = tape.mul(a, again)?;
            let z = tape.add(y, a)?;
            probe(tape, z, 11)
        },
    });
}

#[test]
fn pooling_and_selection_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (store, ids) = store_with(&mut rng, &[("x", &[2, 3, 4, 4]), ("m", &[5, 3])]);
    check(FnObjective {
        store,
        f: move |s: &ParamStore<f64>, tape: &mut Tape<f64>| {
            let x = tape.param(s, ids[0]);
            let g = tape.global_avg_pool(x)?;
            let m = tape.param(s, ids[1]);
            let mr = tape.mean_rows(m)?;
            let r = tape.row(m, 3)?;
            let (a, b, c) = (probe(tape, g, 12)?, probe(tape, mr, 13)?, probe(tape, r, 14)?);
            let ab = tape.add(a, b)?;
            tape.add(ab, c)
        },
    });
}

#[test]
fn linear_and_cross_entropy_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (store, ids) = store_with(&mut rng, &[("x", &[4, 6]), ("w", &[3, 6]), ("b", &[3])]);
    check(FnObjective {
        store,
        f: move |s: &ParamStore<f64>, tape: &mut Tape<f64>| {
            let (x, w, b) = (tape.param(s, ids[0]), tape.param(s, ids[1]), tape.param(s, ids[2]));
            let y = tape.linear(x, w, Some(b))?;
            tape.softmax_cross_entropy(y, &[0, 2, 1, 2])
        },
    });
}

struct Net {
    net: RecurrentResidualNet<f64>,
    chunks: Tensor<f64>,
    labels: Vec<usize>,
}

impl Differentiable for Net {
    fn params(&self) -> &ParamStore<f64> {
        self.net.params()
    }
    fn params_mut(&mut self) -> &mut ParamStore<f64> {
        self.net.params_mut()
    }
    fn loss(&mut self, tape: &mut Tape<f64>) -> Result<NodeId> {
        Ok(self.net.loss(tape, &self.chunks, &self.labels)?.0)
    }
}

fn net(connection: TemporalConnection, positions: &[(usize, usize)], t: usize, readout: Readout) -> Net {
    let cfg = common::small_config(&[(3, 1), (4, 1)], positions, connection, readout);
    Net {
        net: RecurrentResidualNet::new(cfg, 21).unwrap(),
        chunks: common::random_chunks(22, 2, t, [1, 8, 8]),
        labels: vec![2, 0],
    }
}

#[test]
fn whole_network_gradients_for_every_connection_type() {
    for connection in TemporalConnection::ALL {
        for (positions, t) in [(&[(1, 0)][..], 2), (&[(0, 0), (1, 0)][..], 3)] {
            for readout in [Readout::LastColumn, Readout::MeanColumns] {
                let mut m = net(connection, positions, t, readout);
                let report = grad_check(&mut m, &GradCheckConfig::default()).unwrap();
                assert!(report.passed(), "{connection:?} {positions:?}: {report:#?}");
                assert!(report.params.iter().map(|p| p.checked).sum::<usize>() > 100);
            }
        }
    }
}

#[test]
fn injected_faults_are_caught_in_the_network() {
    for kind in [OpKind::Conv2d, OpKind::BatchNorm, OpKind::Add, OpKind::GlobalAvgPool, OpKind::Linear] {
        let mut m = net(TemporalConnection::ConvLinear, &[(1, 0)], 2, Readout::LastColumn);
        let cfg = GradCheckConfig {
            fault: Some(kind),
            max_coords: Some(4),
            ..Default::default()
        };
        assert!(!grad_check(&mut m, &cfg).unwrap().passed(), "{kind:?} fault not detected");
    }
}
