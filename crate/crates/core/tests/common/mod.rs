#![allow(dead_code)]

use botstoi::model::{Batch, Model};
use botstoi::nn::{Graph, Mode, Tensor, Var};
use botstoi::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Coarse central-difference step; see [`derivative`].
pub const FD_STEP: f64 = 1e-4;
/// Relative-error threshold for gradient checks.
pub const GRAD_TOL: f64 = 1e-4;
/// Denominator floor so that entries whose true gradient is ~0 are judged
/// on absolute error instead of dividing round-off by zero.
pub const GRAD_FLOOR: f64 = 1e-7;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(GRAD_FLOOR)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

pub type Build<'a> = dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var> + 'a;

fn probe_loss(inputs: &[Tensor<f64>], f: &Build, weights: &[f64]) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone()).unwrap()).collect();
    let out = f(&mut g, &vars).unwrap();
    g.value(out).data().iter().zip(weights).map(|(a, b)| a * b).sum()
}

/// Richardson-extrapolated central difference `(4 D(h/2) - D(h)) / 3`,
/// accurate to O(h^4), so a moderate step keeps both truncation and
/// round-off error far below the gradient tolerance.
pub fn derivative(f: &mut dyn FnMut(f64) -> f64) -> f64 {
    let d = |f: &mut dyn FnMut(f64) -> f64, h: f64| (f(h) - f(-h)) / (2.0 * h);
    let coarse = d(f, FD_STEP);
    let fine = d(f, FD_STEP / 2.0);
    (4.0 * fine - coarse) / 3.0
}

/// Worst relative error between backprop and central differences of
/// `sum(r * f(inputs))` over every element of every input, for a fixed random
/// projection `r`. `f` must be deterministic.
pub fn gradcheck(inputs: &[Tensor<f64>], f: &Build, seed: u64) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input_with_grad(t.clone()).unwrap()).collect();
    let out = f(&mut g, &vars).unwrap();
    let mut r = rng(seed ^ 0x9e37);
    let weights: Vec<f64> = (0..g.value(out).len()).map(|_| r.random_range(-1.0..1.0)).collect();
    let loss = g.weighted_sum(out, &weights).unwrap();
    g.backward(loss).unwrap();
    let mut worst: f64 = 0.0;
    for (i, v) in vars.iter().enumerate() {
        let analytic = g
            .grad(*v)
            .map(|s| s.to_vec())
            .unwrap_or_else(|| vec![0.0; inputs[i].len()]);
        for j in 0..inputs[i].len() {
            let numeric = derivative(&mut |h| {
                let mut moved = inputs.to_vec();
                moved[i].data_mut()[j] += h;
                probe_loss(&moved, f, &weights)
            });
            worst = worst.max(rel_err(analytic[j], numeric));
        }
    }
    worst
}

fn model_loss(model: &Model<f64>, batch: &Batch<f64>, target: &[f64], seed: u64) -> (Graph<f64>, Var) {
    let mut g = Graph::new();
    let out = model.forward(&mut g, batch, Mode::Train, &mut rng(seed)).unwrap();
    let loss = g.mse(out.prediction, target).unwrap();
    (g, loss)
}

/// Worst relative error between backprop and finite differences of the
/// train-mode MSE of a full model, over up to `per_tensor` random entries of
/// every trainable tensor. Dropout masks are fixed by reseeding each pass.
pub fn model_gradcheck(model: &Model<f64>, batch: &Batch<f64>, target: &[f64], seed: u64, per_tensor: usize) -> f64 {
    let (mut g, loss) = model_loss(model, batch, target, seed);
    g.backward(loss).unwrap();
    let grads = g.param_grads(model.store());
    let mut pick = rng(seed ^ 0x51);
    let mut worst: f64 = 0.0;
    let ids: Vec<_> = model
        .store()
        .iter()
        .filter(|(_, p)| p.trainable)
        .map(|(id, p)| (id, p.tensor.len()))
        .collect();
    for (id, len) in ids {
        for _ in 0..per_tensor.min(len) {
            let j = pick.random_range(0..len);
            let numeric = derivative(&mut |h| {
                let mut m = model.clone();
                m.store_mut().get_mut(id).tensor.data_mut()[j] += h;
                let (g, l) = model_loss(&m, batch, target, seed);
                g.value(l).data()[0]
            });
            worst = worst.max(rel_err(grads[id.index()][j], numeric));
        }
    }
    worst
}
