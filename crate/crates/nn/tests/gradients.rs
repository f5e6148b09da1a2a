//! Finite-difference checks of every differentiable op.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skullcut_nn::gradcheck::{central_difference, relative_error};
use skullcut_nn::graph::PadMode;
use skullcut_nn::{Graph, Tensor, Var};

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Builds `build` over fresh leaves, reduces with a Charbonnier loss against a
/// fixed random target, and compares analytic and numerical gradients.
fn check(shapes: &[&[usize]], seed: u64, build: impl Fn(&mut Graph<f64>, &[Var]) -> Var) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<Tensor<f64>> = shapes.iter().map(|s| random(s, &mut rng)).collect();
    let target_rng_seed = rng.random::<u64>();
    let eval = |ts: &[Tensor<f64>], grad: bool| -> (f64, Vec<f64>) {
        let mut g = Graph::new();
        let leaves: Vec<Var> = ts.iter().map(|t| g.leaf(t.clone())).collect();
        let out = build(&mut g, &leaves);
        let loss = if g.value(out).len() == 1 {
            out
        } else {
            let mut trng = ChaCha8Rng::seed_from_u64(target_rng_seed);
            let target = random(g.value(out).shape(), &mut trng);
            g.charbonnier(out, &target, 0.5).unwrap()
        };
        let value = g.value(loss).item();
        if !grad {
            return (value, vec![]);
        }
        let grads = g.backward(loss);
        let flat = leaves
            .iter()
            .zip(ts)
            .flat_map(|(v, t)| grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())).into_vec())
            .collect();
        (value, flat)
    };
    let (_, analytic) = eval(&inputs, true);
    let flat: Vec<f64> = inputs.iter().flat_map(|t| t.data().to_vec()).collect();
    let numeric = central_difference(
        |x| {
            let mut off = 0;
            let ts: Vec<Tensor<f64>> = inputs
                .iter()
                .map(|t| {
                    let v = x[off..off + t.len()].to_vec();
                    off += t.len();
                    Tensor::from_vec(t.shape(), v).unwrap()
                })
                .collect();
            eval(&ts, false).0
        },
        &flat,
        1e-5,
    );
    relative_error(&analytic, &numeric)
}

const TOL: f64 = 1e-6;

#[test]
fn conv3d_stride_one_and_two() {
    let e = check(&[&[2, 5, 4, 5], &[3, 2, 3, 3, 3], &[3]], 1, |g, v| g.conv3d(v[0], v[1], Some(v[2]), 1, 1).unwrap());
    assert!(e < TOL, "{e}");
    let e = check(&[&[2, 6, 6, 4], &[2, 2, 3, 3, 3], &[2]], 2, |g, v| g.conv3d(v[0], v[1], Some(v[2]), 2, 1).unwrap());
    assert!(e < TOL, "{e}");
}

#[test]
fn conv_transpose3d() {
    let e = check(&[&[2, 3, 2, 3], &[2, 3, 4, 4, 4], &[3]], 3, |g, v| {
        g.conv_transpose3d(v[0], v[1], Some(v[2]), 2, 1).unwrap()
    });
    assert!(e < TOL, "{e}");
}

#[test]
fn instance_norm_and_affine() {
    let e = check(&[&[3, 3, 4, 3], &[3], &[3]], 4, |g, v| {
        let n = g.instance_norm(v[0], 1e-5).unwrap();
        g.channel_affine(n, v[1], v[2]).unwrap()
    });
    assert!(e < 1e-5, "{e}");
}

#[test]
fn pointwise_ops() {
    let e = check(&[&[2, 3, 3, 3], &[2, 3, 3, 3]], 5, |g, v| {
        let a = g.tanh(v[0]);
        let b = g.leaky_relu(v[1], 0.2);
        let c = g.add(a, b).unwrap();
        let d = g.relu(c);
        let e = g.affine(c, 0.5, 0.5);
        g.add(d, e).unwrap()
    });
    assert!(e < TOL, "{e}");
}

#[test]
fn padding_and_crop() {
    for mode in [PadMode::Reflect, PadMode::Replicate] {
        let e = check(&[&[2, 3, 4, 3]], 6, |g, v| {
            let p = g.pad(v[0], 2, mode).unwrap();
            g.crop(p, [1, 0, 2], [4, 5, 3]).unwrap()
        });
        assert!(e < TOL, "{mode:?}: {e}");
    }
}

#[test]
fn projection_head_and_info_nce() {
    let e = check(&[&[4, 3, 3, 3], &[4, 6], &[6], &[6, 3, 3, 3]], 7, |g, v| {
        let sites = [0, 5, 11, 26, 13];
        let q = g.gather_sites(v[0], &sites).unwrap();
        let q = g.linear(q, v[1], v[2]).unwrap();
        let q = g.l2_normalize_rows(q).unwrap();
        let k = g.gather_sites(v[3], &sites).unwrap();
        let k = g.l2_normalize_rows(k).unwrap();
        g.info_nce(q, k, 0.07).unwrap()
    });
    assert!(e < TOL, "{e}");
}

#[test]
fn scalar_losses() {
    let e = check(&[&[1, 2, 3, 2], &[1, 2, 3, 2]], 8, |g, v| {
        let a = g.bce_with_logits(v[0], true);
        let b = g.bce_with_logits(v[1], false);
        let c = g.mse_to(v[0], 1.0);
        let d = g.mean(v[1]);
        g.weighted_sum(&[(a, 1.0), (b, 0.5), (c, 2.0), (d, -1.0)]).unwrap()
    });
    assert!(e < TOL, "{e}");
}

#[test]
fn charbonnier_gradient() {
    let target = Tensor::from_vec(&[1, 2, 2, 2], vec![0.1, -0.3, 0.2, 0.0, 0.5, -0.5, 0.9, 0.4]).unwrap();
    let e = check(&[&[1, 2, 2, 2]], 9, move |g, v| g.charbonnier(v[0], &target, 1e-3).unwrap());
    assert!(e < 1e-5, "{e}");
}

#[test]
fn frozen_inputs_receive_no_gradient() {
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::full(&[1, 2, 2, 2], 0.3));
    let w = g.leaf(Tensor::full(&[1, 1, 1, 1, 1], 2.0));
    let y = g.conv3d(x, w, None, 1, 0).unwrap();
    let l = g.mean(y);
    let grads = g.backward(l);
    assert!(grads.get(x).is_none());
    assert!((grads.get(w).unwrap().item() - 0.3).abs() < 1e-12);
}
