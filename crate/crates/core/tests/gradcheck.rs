//! Central finite differences against every backward pass, and naive loop
//! oracles for convolution and pooling, all at 64-bit precision.

use hypno_core::model::{ArchitectureConfig, Model};
use hypno_core::nn::{
    batchnorm, batchnorm_backward, conv1d, conv1d_backward, dense, dense_backward, dropout, dropout_backward,
    maxpool1d, maxpool1d_backward, relu, relu_backward, softmax_xent_batch, BatchNormState, BnMode, Padding, Tensor,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-6;
const TOL: f64 = 1e-4;

fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// `‖a − n‖ / max(‖a‖ + ‖n‖, 1e-12)`.
fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale = analytic.iter().map(|a| a * a).sum::<f64>().sqrt() + numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    diff / scale.max(1e-12)
}

/// Central difference of `f` with respect to every element of `x`.
fn numeric_grad(x: &Tensor<f64>, mut f: impl FnMut(&Tensor<f64>) -> f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut p = x.clone();
            p.data_mut()[i] += H;
            let mut m = x.clone();
            m.data_mut()[i] -= H;
            (f(&p) - f(&m)) / (2.0 * H)
        })
        .collect()
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn padding(rng: &mut ChaCha8Rng) -> Padding {
    if rng.random_bool(0.5) {
        Padding::Same
    } else {
        Padding::Valid
    }
}

struct Tally {
    cases: usize,
    worst: f64,
}

impl Tally {
    fn check(&mut self, what: &str, analytic: &[f64], numeric: &[f64]) {
        let e = rel_error(analytic, numeric);
        assert!(e < TOL, "{what}: relative error {e:e}");
        self.worst = self.worst.max(e);
    }
}

fn conv_cases(t: &mut Tally, rng: &mut ChaCha8Rng, n: usize) {
    for _ in 0..n {
        let (b, cin, cout) = (rng.random_range(1..4), rng.random_range(1..4), rng.random_range(1..4));
        let k = rng.random_range(1..6);
        let l = rng.random_range(k..k + 10);
        let stride = rng.random_range(1..4);
        let pad = padding(rng);
        let x = rand_tensor(&[b, l, cin], rng);
        let w = rand_tensor(&[k, cin, cout], rng);
        let y = conv1d(&x, &w, stride, pad).unwrap();
        let r = rand_tensor(y.shape(), rng);
        let (gx, gw) = conv1d_backward(&r, &x, &w, stride, pad).unwrap();
        let nx = numeric_grad(&x, |x| dot(&conv1d(x, &w, stride, pad).unwrap(), &r));
        let nw = numeric_grad(&w, |w| dot(&conv1d(&x, w, stride, pad).unwrap(), &r));
        t.check("conv input", gx.data(), &nx);
        t.check("conv filters", gw.data(), &nw);
        t.cases += 1;
    }
}

/// Inputs whose values are at least 0.01 apart, so a finite-difference
/// step never changes which element wins a pooling window.
fn separated(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| i as f64 * 0.01).collect();
    for i in (1..n).rev() {
        v.swap(i, rng.random_range(0..=i));
    }
    Tensor::new(shape, v).unwrap()
}

fn pool_cases(t: &mut Tally, rng: &mut ChaCha8Rng, n: usize) {
    for _ in 0..n {
        let (b, c) = (rng.random_range(1..3), rng.random_range(1..4));
        let size = rng.random_range(1..5);
        let l = rng.random_range(size..size + 12);
        let stride = rng.random_range(1..4);
        let pad = padding(rng);
        let x = separated(&[b, l, c], rng);
        let fwd = maxpool1d(&x, size, stride, pad).unwrap();
        let r = rand_tensor(fwd.output.shape(), rng);
        let gx = maxpool1d_backward(&r, &fwd).unwrap();
        let nx = numeric_grad(&x, |x| dot(&maxpool1d(x, size, stride, pad).unwrap().output, &r));
        t.check("maxpool", gx.data(), &nx);
        t.cases += 1;
    }
}

fn batchnorm_cases(t: &mut Tally, rng: &mut ChaCha8Rng, n: usize) {
    for case in 0..n {
        let mode = if case % 4 == 3 { BnMode::Running } else { BnMode::Batch };
        let (b, l, c) = (rng.random_range(2..5), rng.random_range(1..5), rng.random_range(1..4));
        let x = rand_tensor(&[b, l, c], rng);
        let gamma = rand_tensor(&[c], rng);
        let beta = rand_tensor(&[c], rng);
        let mut state = BatchNormState::new(c, 0.9, 1e-5);
        state.running_mean = (0..c).map(|_| rng.random_range(-0.5..0.5)).collect();
        state.running_var = (0..c).map(|_| rng.random_range(0.5..2.0)).collect();
        let fresh = state.clone();
        let fwd = |x: &Tensor<f64>, g: &Tensor<f64>, bt: &Tensor<f64>| {
            let mut s = fresh.clone();
            batchnorm(x, g, bt, &mut s, mode).unwrap().0
        };
        let (y, cache) = batchnorm(&x, &gamma, &beta, &mut state, mode).unwrap();
        let r = rand_tensor(y.shape(), rng);
        let (gx, gg, gb) = batchnorm_backward(&r, &gamma, &cache).unwrap();
        t.check(
            "bn input",
            gx.data(),
            &numeric_grad(&x, |x| dot(&fwd(x, &gamma, &beta), &r)),
        );
        t.check(
            "bn gamma",
            gg.data(),
            &numeric_grad(&gamma, |g| dot(&fwd(&x, g, &beta), &r)),
        );
        t.check(
            "bn beta",
            gb.data(),
            &numeric_grad(&beta, |bt| dot(&fwd(&x, &gamma, bt), &r)),
        );
        t.cases += 1;
    }
}

fn dense_cases(t: &mut Tally, rng: &mut ChaCha8Rng, n: usize) {
    for _ in 0..n {
        let (b, i, o) = (rng.random_range(1..4), rng.random_range(1..8), rng.random_range(1..6));
        let x = rand_tensor(&[b, i], rng);
        let w = rand_tensor(&[i, o], rng);
        let bias = rand_tensor(&[o], rng);
        let r = rand_tensor(&[b, o], rng);
        let (gx, gw, gb) = dense_backward(&r, &x, &w).unwrap();
        t.check(
            "dense input",
            gx.data(),
            &numeric_grad(&x, |x| dot(&dense(x, &w, &bias).unwrap(), &r)),
        );
        t.check(
            "dense weights",
            gw.data(),
            &numeric_grad(&w, |w| dot(&dense(&x, w, &bias).unwrap(), &r)),
        );
        t.check(
            "dense bias",
            gb.data(),
            &numeric_grad(&bias, |bb| dot(&dense(&x, &w, bb).unwrap(), &r)),
        );
        t.cases += 1;
    }
}

fn relu_cases(t: &mut Tally, rng: &mut ChaCha8Rng, n: usize) {
    for _ in 0..n {
        let len = rng.random_range(1..20);
        // keep clear of the kink at zero
        let v: Vec<f64> = (0..len)
            .map(|_| {
                let m = rng.random_range(0.01..1.0);
                if rng.random_bool(0.5) {
                    m
                } else {
                    -m
                }
            })
            .collect();
        let x = Tensor::new(&[1, len], v).unwrap();
        let r = rand_tensor(&[1, len], rng);
        let gx = relu_backward(&r, &x);
        t.check("relu", gx.data(), &numeric_grad(&x, |x| dot(&relu(x), &r)));
        t.cases += 1;
    }
}

fn xent_cases(t: &mut Tally, rng: &mut ChaCha8Rng, n: usize) {
    for _ in 0..n {
        let b = rng.random_range(1..5);
        let z = Tensor::new(&[b, 5], (0..b * 5).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap();
        let targets: Vec<Vec<f64>> = (0..b)
            .map(|_| {
                let raw: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..1.0)).collect();
                let s: f64 = raw.iter().sum();
                raw.iter().map(|v| v / s).collect()
            })
            .collect();
        let (_, _, g) = softmax_xent_batch(&z, &targets).unwrap();
        let nz = numeric_grad(&z, |z| softmax_xent_batch(z, &targets).unwrap().1);
        t.check("softmax cross-entropy", g.data(), &nz);
        t.cases += 1;
    }
}

fn dropout_cases(t: &mut Tally, rng: &mut ChaCha8Rng, n: usize) {
    for case in 0..n {
        let len = rng.random_range(1..30);
        let x = rand_tensor(&[1, len], rng);
        let seed = case as u64;
        let f = |x: &Tensor<f64>| dropout(x, 0.5, true, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap().0;
        let (_, mask) = dropout(&x, 0.5, true, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let r = rand_tensor(&[1, len], rng);
        let gx = dropout_backward(&r, &mask);
        t.check("dropout", gx.data(), &numeric_grad(&x, |x| dot(&f(x), &r)));
        t.cases += 1;
    }
}

fn tiny_architecture() -> ArchitectureConfig {
    let mut cfg = ArchitectureConfig::for_sample_rate(8).narrowed(16);
    cfg.small.convs.truncate(1);
    cfg.large.convs.truncate(1);
    cfg
}

/// Whole-network gradients: the loss is recomputed with the same dropout
/// masks (re-seeded generator) for each perturbed parameter.
fn model_cases(t: &mut Tally, rng: &mut ChaCha8Rng, n: usize) {
    for case in 0..n {
        let mut model = Model::<f64>::build(tiny_architecture(), rng).unwrap();
        let len = model.config().input_len();
        let b = 3;
        let windows: Vec<Vec<f32>> = (0..b)
            .map(|_| (0..len).map(|_| rng.random_range(-1.0f32..1.0)).collect())
            .collect();
        let input = model.input_tensor(windows.iter().map(Vec::as_slice)).unwrap();
        let targets: Vec<Vec<f64>> = (0..b)
            .map(|i| (0..5).map(|k| if k == (i + case) % 5 { 0.8 } else { 0.05 }).collect())
            .collect();
        let seed = 1000 + case as u64;
        let loss = |m: &mut Model<f64>| {
            let (trace, _) = m.forward_train(&input, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            softmax_xent_batch(&trace.logits, &targets).unwrap().1
        };
        let (trace, cache) = model
            .forward_train(&input, &mut ChaCha8Rng::seed_from_u64(seed))
            .unwrap();
        let (_, _, g) = softmax_xent_batch(&trace.logits, &targets).unwrap();
        model.backward(&g, &cache).unwrap();
        let names: Vec<String> = model.params().iter().map(|p| p.name.clone()).collect();
        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        for name in &names {
            let n_el = model.params().by_name(name).unwrap().value.len();
            for _ in 0..3 {
                let i = rng.random_range(0..n_el);
                analytic.push(model.params().by_name(name).unwrap().grad.data()[i]);
                let orig = model.params().by_name(name).unwrap().value.data()[i];
                let mut probe = model.clone();
                probe.params_mut().by_name_mut(name).unwrap().value.data_mut()[i] = orig + H;
                let up = loss(&mut probe);
                probe.params_mut().by_name_mut(name).unwrap().value.data_mut()[i] = orig - H;
                let down = loss(&mut probe);
                numeric.push((up - down) / (2.0 * H));
            }
        }
        t.check("model parameters", &analytic, &numeric);
        t.cases += 1;
    }
}

pub fn finite_difference_gradients() {
    let start = std::time::Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut t = Tally { cases: 0, worst: 0.0 };
    conv_cases(&mut t, &mut rng, 60);
    pool_cases(&mut t, &mut rng, 30);
    batchnorm_cases(&mut t, &mut rng, 40);
    dense_cases(&mut t, &mut rng, 20);
    relu_cases(&mut t, &mut rng, 10);
    xent_cases(&mut t, &mut rng, 20);
    dropout_cases(&mut t, &mut rng, 10);
    model_cases(&mut t, &mut rng, 12);
    println!(
        "{} gradient cases, worst relative error {:.2e}, {:.1?}",
        t.cases,
        t.worst,
        start.elapsed()
    );
    assert!(t.cases >= 200);
}

/// TF-style SAME: output `ceil(L/s)`, total padding
/// `max((out−1)·s + k − L, 0)`, the smaller half on the left.
fn naive_geometry(l: usize, k: usize, s: usize, pad: Padding) -> (usize, isize) {
    match pad {
        Padding::Valid => ((l - k) / s + 1, 0),
        Padding::Same => {
            let out = l.div_ceil(s);
            let total = ((out - 1) * s + k).saturating_sub(l);
            (out, (total / 2) as isize)
        }
    }
}

fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, s: usize, pad: Padding) -> Vec<f64> {
    let [b, l, cin] = [x.shape()[0], x.shape()[1], x.shape()[2]];
    let [k, _, cout] = [w.shape()[0], w.shape()[1], w.shape()[2]];
    let (out, left) = naive_geometry(l, k, s, pad);
    let mut y = vec![0.0; b * out * cout];
    for bi in 0..b {
        for o in 0..out {
            for co in 0..cout {
                let mut acc = 0.0;
                for tap in 0..k {
                    let pos = (o * s + tap) as isize - left;
                    if pos < 0 || pos >= l as isize {
                        continue;
                    }
                    for ci in 0..cin {
                        acc += x.data()[(bi * l + pos as usize) * cin + ci] * w.data()[(tap * cin + ci) * cout + co];
                    }
                }
                y[(bi * out + o) * cout + co] = acc;
            }
        }
    }
    y
}

fn naive_pool(x: &Tensor<f64>, size: usize, s: usize, pad: Padding) -> Vec<f64> {
    let [b, l, c] = [x.shape()[0], x.shape()[1], x.shape()[2]];
    let (out, left) = naive_geometry(l, size, s, pad);
    let mut y = vec![0.0; b * out * c];
    for bi in 0..b {
        for o in 0..out {
            for ch in 0..c {
                let mut best = f64::NEG_INFINITY;
                for tap in 0..size {
                    let pos = (o * s + tap) as isize - left;
                    if pos >= 0 && pos < l as isize {
                        best = best.max(x.data()[(bi * l + pos as usize) * c + ch]);
                    }
                }
                y[(bi * out + o) * c + ch] = best;
            }
        }
    }
    y
}

pub fn conv_and_pool_match_naive_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..200 {
        let (b, cin, cout) = (rng.random_range(1..4), rng.random_range(1..5), rng.random_range(1..5));
        let k = rng.random_range(1..9);
        let l = rng.random_range(k..k + 40);
        let s = rng.random_range(1..7);
        let pad = padding(&mut rng);
        let x = rand_tensor(&[b, l, cin], &mut rng);
        let w = rand_tensor(&[k, cin, cout], &mut rng);
        let fast = conv1d(&x, &w, s, pad).unwrap();
        let slow = naive_conv(&x, &w, s, pad);
        assert_eq!(fast.len(), slow.len());
        for (a, e) in fast.data().iter().zip(&slow) {
            assert!((a - e).abs() <= 1e-10, "conv {a} vs {e}");
        }
        let p = maxpool1d(&x, k, s, pad).unwrap();
        let slow = naive_pool(&x, k, s, pad);
        assert_eq!(p.output.data(), slow.as_slice());
    }
}

pub fn default_geometry_matches_expected_shapes() {
    // 9000 samples: small branch 9000/6 = 1500, /8 = 188 (ceil), /4 = 47;
    // large branch 9000/50 = 180, /4 = 45, /2 = 23.
    let (o1, _) = naive_geometry(9000, 50, 6, Padding::Same);
    let (o2, _) = naive_geometry(o1, 8, 8, Padding::Same);
    let (o3, _) = naive_geometry(o2, 4, 4, Padding::Same);
    assert_eq!((o1, o2, o3), (1500, 188, 47));
    let (l1, _) = naive_geometry(9000, 400, 50, Padding::Same);
    let (l2, _) = naive_geometry(l1, 4, 4, Padding::Same);
    let (l3, _) = naive_geometry(l2, 2, 2, Padding::Same);
    assert_eq!((l1, l2, l3), (180, 45, 23));
    assert_eq!((o3 + l3) * 128, 8960);
    let m = Model::<f32>::build(ArchitectureConfig::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(m.feature_split(), (47 * 128, 23 * 128));
}

mod checks {
    #[test]
    fn finite_difference_gradients() {
        super::finite_difference_gradients();
    }

    #[test]
    fn conv_and_pool_match_naive_loops() {
        super::conv_and_pool_match_naive_loops();
    }

    #[test]
    fn default_geometry_matches_expected_shapes() {
        super::default_geometry_matches_expected_shapes();
    }
}
