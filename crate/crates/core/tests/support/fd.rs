//! Central finite-difference checks of every differentiable tape op in f64.
//! Shared by the gradient tests and the acceptance runner; each check
//! returns the worst relative error it saw.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use utime::metrics::loss::{cross_entropy, cross_entropy_with_grad, dice_loss, dice_with_grad, one_hot, DiceVariant};
use utime::model::{Head, UTimeConfig, UTimeModel};
use utime::tensor::kernels::Padding;
use utime::tensor::{ConvSpec, Mode, Tape, Tensor, Var};

pub const H: f64 = 1e-6;
pub const TOL: f64 = 1e-4;

pub struct Check {
    pub name: &'static str,
    pub worst: f64,
    pub tol: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.worst <= self.tol
    }
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-4)
}

/// Builds `sum(op(inputs) * probe)` and compares its tape gradient with
/// central differences for every input element.
fn check<B>(inputs: Vec<Tensor<f64>>, seed: u64, build: B) -> f64
where
    B: Fn(&mut Tape<f64>, &[Var<f64>]) -> Var<f64>,
{
    let eval = |inputs: &[Tensor<f64>], probe: Option<&Tensor<f64>>| -> (f64, Vec<Tensor<f64>>) {
        let mut tape = Tape::new();
        let vars: Vec<_> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
        let out = build(&mut tape, &vars);
        let Some(probe) = probe else {
            return (0.0, vec![out.value().clone()]);
        };
        let value: f64 = out.value().data().iter().zip(probe.data()).map(|(a, b)| a * b).sum();
        let root = tape.loss(&out, value, probe.data().to_vec()).unwrap();
        let grads = tape.backward(&root).unwrap();
        (value, vars.iter().map(|v| grads.get_or_zeros(v)).collect())
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let shape = eval(&inputs, None).1[0].shape().to_vec();
    let probe = random(&mut rng, &shape);
    let (_, analytic) = eval(&inputs, Some(&probe));
    let mut worst = 0.0f64;
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.len() {
            let mut plus = inputs.clone();
            plus[i].data_mut()[j] += H;
            let mut minus = inputs.clone();
            minus[i].data_mut()[j] -= H;
            let numeric = (eval(&plus, Some(&probe)).0 - eval(&minus, Some(&probe)).0) / (2.0 * H);
            worst = worst.max(rel_err(analytic[i].data()[j], numeric));
        }
    }
    worst
}

fn over_seeds(seeds: u64, f: impl Fn(u64, &mut ChaCha8Rng) -> f64) -> f64 {
    (0..seeds)
        .map(|seed| f(seed, &mut ChaCha8Rng::seed_from_u64(seed)))
        .fold(0.0, f64::max)
}

pub fn conv_same_and_valid(seeds: u64) -> Check {
    let worst = over_seeds(seeds, |seed, rng| {
        let x = random(rng, &[2, 13, 3]);
        let w = random(rng, &[5, 3, 4]);
        let b = random(rng, &[4]);
        let mut worst = 0.0f64;
        for padding in [Padding::Same, Padding::Valid] {
            for dilation in [1, 2] {
                worst = worst.max(check(vec![x.clone(), w.clone(), b.clone()], seed, |t, v| {
                    t.conv1d(&v[0], &v[1], Some(&v[2]), ConvSpec { dilation, padding }).unwrap()
                }));
            }
        }
        worst
    });
    Check { name: "conv1d same/valid, dilation 1/2", worst, tol: TOL }
}

pub fn conv_even_kernel_without_bias(seeds: u64) -> Check {
    let worst = over_seeds(seeds, |seed, rng| {
        let x = random(rng, &[1, 12, 2]);
        let w = random(rng, &[4, 2, 3]);
        check(vec![x, w], seed, |t, v| t.conv1d(&v[0], &v[1], None, ConvSpec::default()).unwrap())
    });
    Check { name: "conv1d even kernel, no bias", worst, tol: TOL }
}

pub fn max_pool_with_remainder(seeds: u64) -> Check {
    let worst = over_seeds(seeds, |seed, rng| {
        let x = random(rng, &[2, 23, 3]);
        check(vec![x], seed, |t, v| t.max_pool1d(&v[0], 4).unwrap())
    });
    Check { name: "max pool with remainder", worst, tol: TOL }
}

pub fn avg_pool_and_upsample(seeds: u64) -> Check {
    let worst = over_seeds(seeds, |seed, rng| {
        let x = random(rng, &[2, 12, 3]);
        let a = check(vec![x.clone()], seed, |t, v| t.avg_pool1d(&v[0], 4, 4).unwrap());
        a.max(check(vec![x], seed, |t, v| t.upsample_nearest(&v[0], 3).unwrap()))
    });
    Check { name: "average pool, nearest upsample", worst, tol: TOL }
}

pub fn batch_norm_train_and_running(seeds: u64) -> Check {
    let worst = over_seeds(seeds, |seed, rng| {
        let x = random(rng, &[3, 7, 4]);
        let g = random(rng, &[4]);
        let b = random(rng, &[4]);
        let a = check(vec![x.clone(), g.clone(), b.clone()], seed, |t, v| {
            t.batch_norm(&v[0], &v[1], &v[2], None, 1e-3).unwrap().0
        });
        let mean = vec![0.1, -0.2, 0.3, 0.0];
        let var = vec![0.5, 1.5, 2.0, 0.9];
        a.max(check(vec![x, g, b], seed, |t, v| {
            t.batch_norm(&v[0], &v[1], &v[2], Some((&mean, &var)), 1e-3).unwrap().0
        }))
    });
    Check { name: "batch norm, batch and running statistics", worst, tol: TOL }
}

pub fn crop_concat_and_pad(seeds: u64) -> Check {
    let worst = over_seeds(seeds, |seed, rng| {
        let enc = random(rng, &[2, 11, 2]);
        let dec = random(rng, &[2, 8, 3]);
        let a = check(vec![enc, dec.clone()], seed, |t, v| t.crop_concat(&v[0], &v[1]).unwrap());
        a.max(check(vec![dec], seed, |t, v| t.zero_pad_end(&v[0], 13).unwrap()))
    });
    Check { name: "crop-concat, zero padding", worst, tol: TOL }
}

pub fn relu_softmax(seeds: u64) -> Check {
    let worst = over_seeds(seeds, |seed, rng| {
        let x = random(rng, &[2, 6, 5]);
        let a = check(vec![x.clone()], seed, |t, v| t.relu(&v[0]));
        a.max(check(vec![x], seed, |t, v| t.softmax(&v[0]).unwrap()))
    });
    Check { name: "relu, softmax", worst, tol: TOL }
}

pub fn tanh(seeds: u64) -> Check {
    let worst = over_seeds(seeds, |seed, rng| {
        let x = random(rng, &[2, 6, 5]);
        check(vec![x], seed, |t, v| t.tanh(&v[0]))
    });
    Check { name: "tanh", worst, tol: 1e-6 }
}

fn check_loss(seed: u64, f: impl Fn(&Tensor<f64>, &Tensor<f64>) -> (f64, Vec<f64>)) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, k) = (9, 5);
    let y = Tensor::from_fn([n, k], |i| if i % k == (i / k * 7 + seed as usize) % k { 1.0 } else { 0.0 });
    let mut p = Tensor::from_fn([n, k], |_| rng.random_range(0.05..1.0));
    for row in p.data_mut().chunks_mut(k) {
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
    let (_, g) = f(&y, &p);
    let mut worst = 0.0f64;
    for j in 0..p.len() {
        let mut a = p.clone();
        a.data_mut()[j] += H;
        let mut b = p.clone();
        b.data_mut()[j] -= H;
        let numeric = (f(&y, &a).0 - f(&y, &b).0) / (2.0 * H);
        worst = worst.max(rel_err(g[j], numeric));
    }
    worst
}

pub fn losses(seeds: u64) -> Check {
    let worst = (0..seeds)
        .map(|seed| {
            let a = check_loss(seed, |y, p| dice_with_grad(y, p, DiceVariant::PerClass).unwrap());
            let b = check_loss(seed, |y, p| dice_with_grad(y, p, DiceVariant::Pooled).unwrap());
            a.max(b).max(check_loss(seed, |y, p| cross_entropy_with_grad(y, p).unwrap()))
        })
        .fold(0.0, f64::max);
    Check { name: "dice (both forms), cross entropy", worst, tol: TOL }
}

pub fn composed_chain(seeds: u64) -> Check {
    // conv -> relu -> bn -> pool -> upsample -> concat -> conv -> softmax
    let worst = over_seeds(seeds, |seed, rng| {
        let x = random(rng, &[2, 16, 1]);
        let w1 = random(rng, &[3, 1, 2]);
        let g = random(rng, &[2]);
        let b = random(rng, &[2]);
        let w2 = random(rng, &[1, 4, 3]);
        check(vec![x, w1, g, b, w2], seed, |t, v| {
            let h = t.conv1d(&v[0], &v[1], None, ConvSpec::default()).unwrap();
            let h = t.relu(&h);
            let (h, _) = t.batch_norm(&h, &v[2], &v[3], None, 1e-3).unwrap();
            let p = t.max_pool1d(&h, 2).unwrap();
            let u = t.upsample_nearest(&p, 2).unwrap();
            let c = t.crop_concat(&h, &u).unwrap();
            let o = t.conv1d(&c, &v[4], None, ConvSpec::default()).unwrap();
            t.softmax(&o).unwrap()
        })
    });
    Check { name: "composed block chain", worst, tol: TOL }
}

fn tiny() -> UTimeConfig {
    UTimeConfig {
        base_filters: 2,
        depth: 2,
        pool_windows: vec![2, 3],
        decoder_kernels: vec![3, 2],
        kernel_width: 3,
        dilation: 2,
        segment_samples: 6,
        transition_window: 3,
        ..Default::default()
    }
}

/// Loss and, when `grads` is set, the parameter gradients.
fn loss_of(
    model: &UTimeModel<f64>,
    x: &Tensor<f64>,
    y: &Tensor<f64>,
    mode: Mode,
    dice: bool,
    grads: bool,
) -> (f64, Vec<Tensor<f64>>) {
    let mut m = model.clone();
    let mut tape = Tape::new();
    let vars = m.bind(&mut tape);
    let out = m
        .forward(&mut tape, &vars, &Var::constant(x.clone()), mode, Head::Segments(6))
        .unwrap();
    let loss = if dice {
        dice_loss(&mut tape, y, &out).unwrap()
    } else {
        cross_entropy(&mut tape, y, &out).unwrap()
    };
    let value = loss.value().data()[0];
    if !grads {
        return (value, Vec::new());
    }
    let g = tape.backward(&loss).unwrap();
    (value, vars.iter().map(|v| g.get_or_zeros(v)).collect())
}

fn check_model(seed: u64, mode: Mode, dice: bool) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model: UTimeModel<f64> = UTimeModel::new(tiny(), seed).unwrap();
    if mode == Mode::Infer {
        model.seed_batch_norm_identity();
    }
    for p in model.params_mut() {
        if p.name.ends_with(".bias") || p.name.ends_with(".beta") {
            p.value.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.3..0.3));
        }
    }
    let (b, t) = (2, 3);
    let x = random(&mut rng, &[b, t * 6, 1]);
    let labels: Vec<usize> = (0..b * t).map(|_| rng.random_range(0..5)).collect();
    let y = Tensor::new([b, t, 5], one_hot(&labels, 5).unwrap()).unwrap();
    let (_, analytic) = loss_of(&model, &x, &y, mode, dice, true);
    let mut worst = 0.0f64;
    for (pi, param) in model.params().iter().enumerate() {
        for j in 0..param.value.len() {
            let mut plus = model.clone();
            plus.params_mut()[pi].value.data_mut()[j] += H;
            let mut minus = model.clone();
            minus.params_mut()[pi].value.data_mut()[j] -= H;
            let numeric = (loss_of(&plus, &x, &y, mode, dice, false).0 - loss_of(&minus, &x, &y, mode, dice, false).0)
                / (2.0 * H);
            worst = worst.max(rel_err(analytic[pi].data()[j], numeric));
        }
    }
    worst
}

pub fn dice_through_model(seeds: u64) -> Check {
    let worst = (0..seeds).map(|s| check_model(s, Mode::Train, true)).fold(0.0, f64::max);
    Check { name: "dice loss through the model, train mode", worst, tol: TOL }
}

pub fn cross_entropy_through_model(seeds: u64) -> Check {
    let worst = (0..seeds).map(|s| check_model(s, Mode::Infer, false)).fold(0.0, f64::max);
    Check { name: "cross entropy through the model, infer mode", worst, tol: TOL }
}

/// Every check above.
pub fn suite(seeds: u64) -> Vec<Check> {
    vec![
        conv_same_and_valid(seeds),
        conv_even_kernel_without_bias(seeds),
        max_pool_with_remainder(seeds),
        avg_pool_and_upsample(seeds),
        batch_norm_train_and_running(seeds),
        crop_concat_and_pad(seeds),
        relu_softmax(seeds),
        tanh(seeds),
        losses(seeds),
        composed_chain(seeds),
        dice_through_model(seeds),
        cross_entropy_through_model(seeds),
    ]
}
