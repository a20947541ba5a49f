//! Central finite-difference checks for the hand-written reverse mode.

use freshchain_core::nn::{
    backward, backward_with_input, forward, gaussian_log_density, init_network, log_prob_gradient,
    squashed_log_prob, squashed_log_prob_reparam_gradient, Activation, Batch, MlpParams, OutputHead,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const COORDS_PER_DRAW: usize = 160;

fn random_batch(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Batch {
    let data = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
    Batch::from_flat(rows, cols, data).unwrap()
}

/// Relative error of the analytic gradient over a random subset of coordinates
/// (plus every log_std entry), measured as ||a - n|| / max(||a||, ||n||).
fn fd_relative_error(
    params: &MlpParams,
    analytic: &[f64],
    rng: &mut ChaCha8Rng,
    loss: impl Fn(&MlpParams) -> f64,
) -> f64 {
    let n = params.param_count();
    let std_start = n - params.log_std.len();
    let mut coords: Vec<usize> = (0..COORDS_PER_DRAW).map(|_| rng.random_range(0..n)).collect();
    coords.extend(std_start..n);
    let mut diff = 0.0;
    let mut na = 0.0;
    let mut nn = 0.0;
    for &c in &coords {
        let mut plus = params.clone();
        *plus.values_mut().nth(c).unwrap() += H;
        let mut minus = params.clone();
        *minus.values_mut().nth(c).unwrap() -= H;
        let numeric = (loss(&plus) - loss(&minus)) / (2.0 * H);
        let a = analytic[c];
        diff += (a - numeric) * (a - numeric);
        na += a * a;
        nn += numeric * numeric;
    }
    let denom = na.sqrt().max(nn.sqrt());
    if denom == 0.0 {
        0.0
    } else {
        diff.sqrt() / denom
    }
}

fn random_arch(rng: &mut ChaCha8Rng) -> (usize, usize) {
    (rng.random_range(1..8), rng.random_range(1..4))
}

#[test]
fn backward_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for draw in 0..100 {
        let act = if draw % 2 == 0 { Activation::Tanh } else { Activation::Relu };
        let (n_in, n_out) = random_arch(&mut rng);
        let params = init_network(&[n_in, 64, 128, n_out], act, OutputHead::Linear, draw).unwrap();
        let rows = rng.random_range(1..4);
        let x = random_batch(&mut rng, rows, n_in, 2.0);
        let up = random_batch(&mut rng, rows, n_out, 1.0);
        let (_, cache) = forward(&params, &x).unwrap();
        let g = backward(&params, &cache, &up).unwrap();
        assert!(g.matches(&params));
        let analytic: Vec<f64> = g.values().copied().collect();
        let err = fd_relative_error(&params, &analytic, &mut rng, |p| {
            let (y, _) = forward(p, &x).unwrap();
            y.data().iter().zip(up.data()).map(|(a, b)| a * b).sum()
        });
        worst = worst.max(err);
    }
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn input_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for draw in 0..20 {
        let act = if draw % 2 == 0 { Activation::Tanh } else { Activation::Relu };
        let params = init_network(&[5, 64, 128, 2], act, OutputHead::Linear, draw).unwrap();
        let x = random_batch(&mut rng, 2, 5, 1.5);
        let up = random_batch(&mut rng, 2, 2, 1.0);
        let (_, cache) = forward(&params, &x).unwrap();
        let (_, dx) = backward_with_input(&params, &cache, &up).unwrap();
        let loss = |xb: &Batch| -> f64 {
            let (y, _) = forward(&params, xb).unwrap();
            y.data().iter().zip(up.data()).map(|(a, b)| a * b).sum()
        };
        for i in 0..x.data().len() {
            let mut p = x.data().to_vec();
            p[i] += H;
            let mut m = x.data().to_vec();
            m[i] -= H;
            let numeric = (loss(&Batch::from_flat(2, 5, p).unwrap()) - loss(&Batch::from_flat(2, 5, m).unwrap())) / (2.0 * H);
            assert!((dx.data()[i] - numeric).abs() < 1e-6 * (1.0 + numeric.abs()));
        }
    }
}

#[test]
fn gaussian_log_prob_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for draw in 0..100 {
        let (n_in, n_out) = random_arch(&mut rng);
        let mut params = init_network(&[n_in, 64, 128, n_out], Activation::Tanh, OutputHead::Gaussian, draw).unwrap();
        for s in &mut params.log_std {
            *s = rng.random_range(-1.0..0.5);
        }
        let rows = rng.random_range(1..4);
        let x = random_batch(&mut rng, rows, n_in, 2.0);
        let a = random_batch(&mut rng, rows, n_out, 1.5);
        let coefs: Vec<f64> = (0..rows).map(|_| rng.random_range(-2.0..2.0)).collect();
        let (g, _) = log_prob_gradient(&params, &x, &a, &coefs).unwrap();
        let analytic: Vec<f64> = g.values().copied().collect();
        let err = fd_relative_error(&params, &analytic, &mut rng, |p| {
            let (mean, _) = forward(p, &x).unwrap();
            (0..rows).map(|r| coefs[r] * gaussian_log_density(mean.row(r), &p.log_std, a.row(r))).sum()
        });
        worst = worst.max(err);
    }
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn squashed_reparam_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for draw in 0..100 {
        let (n_in, n_out) = random_arch(&mut rng);
        let mut params = init_network(&[n_in, 64, 128, n_out], Activation::Tanh, OutputHead::Gaussian, 500 + draw).unwrap();
        for s in &mut params.log_std {
            *s = rng.random_range(-1.5..0.3);
        }
        let rows = rng.random_range(1..4);
        let x = random_batch(&mut rng, rows, n_in, 2.0);
        let noise = random_batch(&mut rng, rows, n_out, 1.5);
        let coefs: Vec<f64> = (0..rows).map(|_| rng.random_range(0.1..1.0)).collect();
        let (g, _) = squashed_log_prob_reparam_gradient(&params, &x, &noise, &coefs).unwrap();
        let analytic: Vec<f64> = g.values().copied().collect();
        let err = fd_relative_error(&params, &analytic, &mut rng, |p| {
            let (mean, _) = forward(p, &x).unwrap();
            (0..rows)
                .map(|r| {
                    let raw: Vec<f64> = (0..n_out)
                        .map(|j| mean.row(r)[j] + p.log_std[j].exp() * noise.row(r)[j])
                        .collect();
                    coefs[r] * squashed_log_prob(mean.row(r), &p.log_std, &raw)
                })
                .sum()
        });
        worst = worst.max(err);
    }
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn forward_is_pure() {
    let params = init_network(&[6, 64, 128, 3], Activation::Relu, OutputHead::Linear, 3).unwrap();
    let x = Batch::from_rows(&[[0.1, 0.2, -0.3, 0.4, 0.5, -0.6]]).unwrap();
    let (a, _) = forward(&params, &x).unwrap();
    let (b, _) = forward(&params, &x).unwrap();
    assert_eq!(a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
}
