//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use csrobust::cost::CostMatrix;
use csrobust::data::Dataset;
use csrobust::model::{init_params, Network};
use csrobust::numcore::{Rng, Tape, Tensor};
use csrobust::train::Objective;

/// He-initialized network with small random biases, so that bounds are not
/// symmetric around zero.
pub fn random_net(rng: &mut Rng, arch: &[usize]) -> Network<f64> {
    let base = init_params::<f64>(arch, rng).unwrap();
    let params = base
        .params()
        .into_iter()
        .enumerate()
        .map(|(k, p)| {
            if k % 2 == 1 {
                Tensor::vector((0..p.len()).map(|_| 0.1 * rng.normal()).collect())
            } else {
                p
            }
        })
        .collect();
    Network::from_params(arch, params).unwrap()
}

/// Input dimension, 2-3 hidden layers of width at most `max_width`, and a
/// class count.
pub fn random_arch(rng: &mut Rng, max_width: usize) -> Vec<usize> {
    let d = 2 + rng.below(5);
    let hidden = 2 + rng.below(2);
    let m = 2 + rng.below(4);
    let mut arch = vec![d];
    arch.extend((0..hidden).map(|_| 4 + rng.below(max_width - 3)));
    arch.push(m);
    arch
}

pub fn random_point(rng: &mut Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.uniform()).collect()
}

pub fn random_dataset(rng: &mut Rng, d: usize, m: usize, n: usize) -> Dataset<f64> {
    let features = (0..n * d).map(|_| rng.uniform()).collect();
    // every class appears at least once when n ≥ m
    let labels = (0..n).map(|i| if i < m { i } else { rng.below(m) }).collect();
    Dataset::new(features, labels, d, m, "random").unwrap()
}

/// Off-diagonal costs drawn from {0, 1, 0.5..4} with some zeros.
pub fn random_cost(rng: &mut Rng, m: usize) -> CostMatrix {
    let mut entries = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            if i != j && rng.uniform() < 0.7 {
                entries[i * m + j] = if rng.uniform() < 0.5 { 1.0 } else { rng.uniform_in(0.5, 4.0) };
            }
        }
    }
    CostMatrix::new(m, entries).unwrap()
}

/// Loss value and the side of every kink the evaluation touched.
pub fn loss_with_signature(
    obj: &Objective<f64>,
    arch: &[usize],
    params: &[Tensor<f64>],
    data: &Dataset<f64>,
    batch: &[usize],
) -> (f64, Vec<i8>) {
    let net = Network::from_params(arch, params.to_vec()).unwrap();
    let tape = Tape::with_kink_tracking();
    let vars = net.on_tape(&tape);
    let loss = obj.batch_on_tape(&vars, data, batch);
    (loss.item(), tape.kink_signature().unwrap())
}

/// Outcome of comparing an analytic gradient against central differences.
#[derive(Debug, Default)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub checked: usize,
    /// Coordinates whose stencil crossed a kink and were not compared.
    pub skipped: usize,
}

/// Relative error `|a − n| / max(|a|, |n|, floor)` per coordinate, skipping
/// coordinates where `p ± h` leaves the smooth piece containing `p`.
pub fn check_gradient(
    obj: &Objective<f64>,
    net: &Network<f64>,
    data: &Dataset<f64>,
    batch: &[usize],
    h: f64,
    floor: f64,
) -> GradCheck {
    let arch = net.arch();
    let params = net.params();
    let (_, analytic) = obj.value_and_grad(net, data, batch).unwrap();
    let (_, base_sig) = loss_with_signature(obj, &arch, &params, data, batch);
    let mut out = GradCheck::default();
    let mut work = params.clone();
    for (p, g) in params.iter().zip(&analytic) {
        let k = params.iter().position(|q| std::ptr::eq(q, p)).unwrap();
        for i in 0..p.len() {
            let mut eval = |delta: f64| {
                let mut v = p.to_vec();
                v[i] += delta;
                work[k] = Tensor::new(p.shape().to_vec(), v).unwrap();
                let r = loss_with_signature(obj, &arch, &work, data, batch);
                work[k] = p.clone();
                r
            };
            let (fp, sp) = eval(h);
            let (fm, sm) = eval(-h);
            if sp != base_sig || sm != base_sig {
                out.skipped += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * h);
            let a = g.data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            out.max_rel_err = out.max_rel_err.max(rel);
            out.checked += 1;
        }
    }
    out
}
