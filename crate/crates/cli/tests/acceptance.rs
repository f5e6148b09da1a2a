//! Acceptance suite: one line per criterion, `PASS` or `FAIL`, with the measured
//! quantity and the wall time. Runs without the libtest harness so the lines
//! are always printed; the process exits non-zero if any criterion fails.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skullcut::evaluate::REPORT_HEADER;
use skullcut::infer::MASK_FILE;
use skullcut::train::LOSS_FILE;
use skullcut_core::cut::{
    discriminator_loss, encoder_features, gan_losses, generator_adv_loss, info_nce, patch_nce_loss, CutConfig,
    Discriminator, DiscriminatorSpec, GanMode, Generator, GeneratorSpec, Projector, ProjectorSpec,
};
use skullcut_core::lapsrn::{
    assemble_chunks, charbonnier_loss, charbonnier_value, chunk_volume, sr_forward, super_resolve,
    AugmentationConfig, ChunkGrid, PyramidSpec, SrDataset, SrNetwork, SrOptimizer, SrTrainConfig, SrTrainer,
};
use skullcut_core::metrics::{dice, psnr};
use skullcut_core::phantom::{make_phantom, PhantomSpec};
use skullcut_core::postprocess::{binary_close, binary_open, histogram_match, SegmentationParams, StructuringElement};
use skullcut_core::volume_io::{preprocess_ct, resample};
use skullcut_core::{Domain, SegmentationMask, Volume};
use skullcut_nn::gradcheck::{central_difference, relative_error};
use skullcut_nn::init::normal;
use skullcut_nn::{Binding, Graph, Tensor};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

struct Criterion {
    id: usize,
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

fn main() {
    let filter: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria = [
        Criterion { id: 1, name: "InfoNCE all-equal similarities give ln 64", budget: secs(1), run: info_nce_symmetry },
        Criterion { id: 2, name: "gradient oracles", budget: secs(120), run: gradient_oracles },
        Criterion { id: 3, name: "Charbonnier floor L·eps", budget: secs(1), run: charbonnier_floor },
        Criterion { id: 4, name: "chunk round trip", budget: secs(30), run: chunk_round_trip },
        Criterion { id: 5, name: "morphology and Dice oracles", budget: secs(60), run: morphology_and_dice },
        Criterion { id: 6, name: "histogram matching deciles and monotonicity", budget: secs(30), run: histogram_matching },
        Criterion { id: 7, name: "end-to-end phantom overfit", budget: secs(30 * 60), run: phantom_overfit },
        Criterion { id: 8, name: "super-resolution beats trilinear", budget: secs(10 * 60), run: sr_benefit },
        Criterion { id: 9, name: "training determinism and resume", budget: secs(10 * 60), run: determinism },
        Criterion { id: 10, name: "instance-norm contract", budget: secs(60), run: instance_norm },
    ];
    let mut failed = 0;
    for c in criteria.iter().filter(|c| filter.is_empty() || filter.contains(&c.id)) {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let elapsed = start.elapsed();
        let outcome = outcome.and_then(|detail| {
            if elapsed <= c.budget {
                Ok(detail)
            } else {
                Err(format!("{detail}; over the {:?} budget", c.budget))
            }
        });
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {:>2} {tag}  {} ({:.1}s): {detail}", c.id, c.name, elapsed.as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

fn unit_rows(rows: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / n).collect()
        })
        .collect()
}

fn info_nce_symmetry() -> Outcome {
    let ln64 = 64f64.ln();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let r = unit_rows(1, 32, &mut rng).remove(0);
    let mut worst: f64 = 0.0;
    for tau in [0.07, 0.5, 1.0] {
        let l = info_nce(&r, &r, &vec![r.clone(); 63], tau).map_err(|e| e.to_string())?;
        worst = worst.max((l - ln64).abs());
        // Batched form: 64 identical rows, each the others' negatives.
        let mut g = Graph::<f64>::new();
        let rows = Tensor::from_vec(&[64, 32], r.repeat(64)).unwrap();
        let (q, k) = (g.input(rows.clone()), g.input(rows));
        let l = g.info_nce(q, k, tau).map_err(|e| e.to_string())?;
        worst = worst.max((g.value(l).item() - ln64).abs());
    }
    ensure!(worst <= 1e-5, "max |loss − ln 64| = {worst:.3e}");
    Ok(format!("max |loss − ln 64| = {worst:.1e}"))
}

fn perturb(tensors: &mut [Tensor<f64>], std: f64, rng: &mut ChaCha8Rng) {
    for t in tensors {
        let noise: Tensor<f64> = normal(t.shape(), std, rng);
        t.add_assign(&noise);
    }
}

fn gradient_oracles() -> Outcome {
    let mut report = Vec::new();
    let mut check = |name: &str, params: usize, err: f64| -> Result<(), String> {
        ensure!(params <= 1000, "{name}: {params} parameters");
        ensure!(err <= 1e-3, "{name}: relative error {err:.3e}");
        report.push(format!("{name} {err:.1e}"));
        Ok(())
    };

    // InfoNCE over normalized embedding rows.
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (s, e) = (6, 4);
    let x: Vec<f64> = (0..2 * s * e).map(|_| rng.random_range(-1.0..1.0)).collect();
    let nce = |flat: &[f64], grad: bool| {
        let mut g = Graph::<f64>::new();
        let q = g.leaf(Tensor::from_vec(&[s, e], flat[..s * e].to_vec()).unwrap());
        let k = g.leaf(Tensor::from_vec(&[s, e], flat[s * e..].to_vec()).unwrap());
        let (qn, kn) = (g.l2_normalize_rows(q).unwrap(), g.l2_normalize_rows(k).unwrap());
        let loss = g.info_nce(qn, kn, 0.3).unwrap();
        let gr = grad.then(|| {
            let grads = g.backward(loss);
            let mut v = grads.get(q).unwrap().data().to_vec();
            v.extend_from_slice(grads.get(k).unwrap().data());
            v
        });
        (g.value(loss).item(), gr)
    };
    let err = relative_error(&nce(&x, true).1.unwrap(), &central_difference(|p| nce(p, false).0, &x, 1e-5));
    check("info_nce", x.len(), err)?;

    // PatchNCE through a tiny generator and projector.
    let spec = GeneratorSpec { base_filters: 1, n_downsample: 1, n_residual_blocks: 1, outer_kernel: 3 };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut gen = Generator::<f64>::init(&spec, &mut rng).map_err(|e| e.to_string())?;
    perturb(gen.params.tensors_mut(), 0.3, &mut rng);
    let taps = spec.default_taps();
    let channels: Vec<usize> = taps.iter().map(|&t| spec.tap_channels(t)).collect();
    let mut proj = Projector::<f64>::init(&ProjectorSpec { n_layers: 2, embed_dim: 4 }, &channels, &mut rng);
    perturb(proj.params.tensors_mut(), 0.3, &mut rng);
    let n_g = gen.params.numel();
    let x = Tensor::from_vec(&[1, 8, 8, 8], (0..512).map(|_| rng.random::<f64>()).collect()).unwrap();
    let sites = {
        let mut g = Graph::new();
        let gp = g.bind(&gen.params, Binding::Frozen);
        let xv = g.input(x.clone());
        let out = gen.forward(&mut g, &gp, xv, None).unwrap();
        let pp = g.bind(&proj.params, Binding::Frozen);
        encoder_features(&mut g, &proj, &pp, &out.taps, None, 6, &mut rng).unwrap().sites
    };
    let pnce = |flat: &[f64], grad: bool| {
        let (mut gn, mut pr) = (gen.clone(), proj.clone());
        gn.params.assign_flat(&flat[..n_g]);
        pr.params.assign_flat(&flat[n_g..]);
        let mut g = Graph::new();
        let gp = g.bind(&gn.params, Binding::Trainable(0));
        let fp = g.bind(&pr.params, Binding::Trainable(1));
        let xv = g.input(x.clone());
        let out = gn.forward(&mut g, &gp, xv, None).unwrap();
        let enc = gn.forward(&mut g, &gp, out.output.unwrap(), Some(taps.len())).unwrap();
        let mut unused = ChaCha8Rng::seed_from_u64(0);
        let src = encoder_features(&mut g, &pr, &fp, &out.taps, Some(&sites), 6, &mut unused).unwrap();
        let trn = encoder_features(&mut g, &pr, &fp, &enc.taps, Some(&sites), 6, &mut unused).unwrap();
        let (loss, _) = patch_nce_loss(&mut g, &src, &trn, 0.5, false).unwrap();
        let gr = grad.then(|| {
            let grads = g.backward(loss);
            let mut v: Vec<f64> = g.param_grads(&grads, 0, &gn.params).iter().flat_map(|t| t.data().to_vec()).collect();
            v.extend(g.param_grads(&grads, 1, &pr.params).iter().flat_map(|t| t.data().to_vec()));
            v
        });
        (g.value(loss).item(), gr)
    };
    let flat: Vec<f64> = gen.params.flatten().into_iter().chain(proj.params.flatten()).collect();
    let err = relative_error(&pnce(&flat, true).1.unwrap(), &central_difference(|p| pnce(p, false).0, &flat, 1e-5));
    check("patch_nce", flat.len(), err)?;

    // GAN losses: discriminator parameters, and the synthetic volume for the generator term.
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut d = Discriminator::<f64>::init(&DiscriminatorSpec { n_layers: 1, base_filters: 1 }, &mut rng);
    perturb(d.params.tensors_mut(), 0.2, &mut rng);
    let shape = [1, 12, 12, 12];
    let real = Tensor::from_vec(&shape, (0..1728).map(|_| rng.random::<f64>()).collect()).unwrap();
    let syn = Tensor::from_vec(&shape, (0..1728).map(|_| rng.random::<f64>()).collect()).unwrap();
    for mode in [GanMode::Vanilla, GanMode::Lsgan] {
        let mut g = Graph::new();
        let p = g.bind(&d.params, Binding::Trainable(0));
        let (xr, xs) = (g.input(real.clone()), g.input(syn.clone()));
        let (lr, ls) = (d.forward(&mut g, &p, xr).unwrap(), d.forward(&mut g, &p, xs).unwrap());
        let loss = discriminator_loss(&mut g, lr, ls, mode).unwrap();
        let grads = g.backward(loss);
        let analytic: Vec<f64> = g.param_grads(&grads, 0, &d.params).iter().flat_map(|t| t.data().to_vec()).collect();
        let numeric = central_difference(
            |flat| {
                let mut dd = d.clone();
                dd.params.assign_flat(flat);
                gan_losses(&dd, &real, &syn, mode).unwrap().0
            },
            &d.params.flatten(),
            1e-5,
        );
        check(&format!("gan_d/{mode:?}"), d.params.numel(), relative_error(&analytic, &numeric))?;

        let mut g = Graph::new();
        let p = g.bind(&d.params, Binding::Frozen);
        let xs = g.leaf(syn.clone());
        let ls = d.forward(&mut g, &p, xs).unwrap();
        let adv = generator_adv_loss(&mut g, ls, mode);
        let analytic = g.backward(adv).get(xs).unwrap().data().to_vec();
        let numeric = central_difference(
            |v| gan_losses(&d, &real, &Tensor::from_vec(&shape, v.to_vec()).unwrap(), mode).unwrap().1,
            syn.data(),
            1e-5,
        );
        check(&format!("gan_g/{mode:?}"), d.params.numel(), relative_error(&analytic, &numeric))?;
    }

    // Charbonnier through a one- and a two-level pyramid.
    for levels in [1, 2] {
        let spec = PyramidSpec { levels, feat_layers: 2 - levels, recon_layers: 2, filters: 2, ..PyramidSpec::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(10 + levels as u64);
        let mut net = SrNetwork::<f64>::init(&spec, &mut rng).map_err(|e| e.to_string())?;
        perturb(net.params.tensors_mut(), 0.15, &mut rng);
        let lr = random_unit([3, 3, 2], &mut rng).to_tensor::<f64>();
        let targets: Vec<Tensor<f64>> =
            (1..=levels).map(|s| random_unit([3 << s, 3 << s, 2 << s], &mut rng).to_tensor::<f64>()).collect();
        let loss_at = |flat: &[f64], grad: bool| {
            let mut n = net.clone();
            n.params.assign_flat(flat);
            let mut g = Graph::new();
            let p = g.bind(&n.params, Binding::Trainable(0));
            let x = g.input(lr.clone());
            let preds = sr_forward(&n, &mut g, &p, x, levels).unwrap();
            let loss = charbonnier_loss(&mut g, &preds, &targets, 1e-3).unwrap();
            let gr = grad.then(|| {
                let grads = g.backward(loss);
                g.param_grads(&grads, 0, &n.params).iter().flat_map(|t| t.data().to_vec()).collect::<Vec<f64>>()
            });
            (g.value(loss).item(), gr)
        };
        let flat = net.params.flatten();
        let err = relative_error(&loss_at(&flat, true).1.unwrap(), &central_difference(|x| loss_at(x, false).0, &flat, 1e-6));
        check(&format!("charbonnier/L{levels}"), flat.len(), err)?;
    }
    Ok(report.join(", "))
}

fn random_unit(shape: [usize; 3], rng: &mut ChaCha8Rng) -> Volume {
    Volume::new(Array3::from_shape_simple_fn(shape, || rng.random::<f32>()), [1.0; 3], Domain::Unit).unwrap()
}

fn charbonnier_floor() -> Outcome {
    let eps = 1e-3;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for levels in [1, 2] {
        let targets: Vec<Volume> = (0..levels).map(|l| random_unit([4 << l; 3], &mut rng)).collect();
        let value = charbonnier_value(&targets, &targets, eps).map_err(|e| e.to_string())?;
        let mut g = Graph::<f64>::new();
        let preds: Vec<_> = targets.iter().map(|t| g.input(t.to_tensor())).collect();
        let tensors: Vec<Tensor<f64>> = targets.iter().map(|t| t.to_tensor()).collect();
        let loss = charbonnier_loss(&mut g, &preds, &tensors, eps).map_err(|e| e.to_string())?;
        let floor = levels as f64 * eps;
        worst = worst.max((value - floor).abs()).max((g.value(loss).item() - floor).abs());
    }
    ensure!(worst <= 1e-9, "max |loss − L·eps| = {worst:.3e}");
    Ok(format!("max |loss − L·eps| = {worst:.1e}"))
}

fn chunk_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut cases: Vec<([usize; 3], usize, usize)> = vec![([128; 3], 64, 8)];
    while cases.len() < 100 {
        let shape = [rng.random_range(1..40), rng.random_range(1..40), rng.random_range(1..40)];
        cases.push((shape, rng.random_range(1..24), rng.random_range(0..9)));
    }
    for (i, &(shape, core, halo)) in cases.iter().enumerate() {
        let v = random_unit(shape, &mut rng);
        let grid = ChunkGrid::new(shape, core, halo).map_err(|e| e.to_string())?;
        let chunks = chunk_volume(&v, &grid).map_err(|e| e.to_string())?;
        if i == 0 {
            ensure!(chunks.len() == 8, "128³ core 64 gave {} chunks", chunks.len());
            ensure!(chunks.iter().all(|c| c.data.shape() == [72; 3]), "128³ chunks are not 64 + 8 wide");
        }
        let back = assemble_chunks(&chunks, &grid, 1).map_err(|e| e.to_string())?;
        let same = back.shape() == v.shape() && back.data().iter().zip(v.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        ensure!(same, "volume {i} {shape:?} core {core} halo {halo} not restored bitwise");
    }
    Ok("100 volumes bitwise identical, including 128³ → 8 × (64+8)³".into())
}

fn random_mask(n: usize, density: f64, rng: &mut ChaCha8Rng) -> SegmentationMask {
    SegmentationMask::new(Array3::from_shape_simple_fn((n, n, n), || rng.random_bool(density)), [1.0; 3]).unwrap()
}

/// Erosion (`all`) or dilation (`any`) straight from the definition; outside is background.
fn brute(m: &Array3<bool>, se: StructuringElement, r: i64, erode: bool) -> Array3<bool> {
    let n = m.shape()[0] as i64;
    Array3::from_shape_fn(m.raw_dim(), |(z, y, x)| {
        let (mut all, mut any) = (true, false);
        for dz in -r..=r {
            for dy in -r..=r {
                for dx in -r..=r {
                    if se == StructuringElement::Ball && dz * dz + dy * dy + dx * dx > r * r {
                        continue;
                    }
                    let (a, b, c) = (z as i64 + dz, y as i64 + dy, x as i64 + dx);
                    let v = (0..n).contains(&a) && (0..n).contains(&b) && (0..n).contains(&c) && m[[a as usize, b as usize, c as usize]];
                    all &= v;
                    any |= v;
                }
            }
        }
        if erode {
            all
        } else {
            any
        }
    })
}

/// Closing in unbounded background: pad by r, close, crop.
fn brute_close(m: &Array3<bool>, se: StructuringElement, r: i64) -> Array3<bool> {
    let (n, p) = (m.shape()[0], r as usize);
    let inside = |v: usize| v >= p && v < n + p;
    let padded = Array3::from_shape_fn((n + 2 * p, n + 2 * p, n + 2 * p), |(z, y, x)| {
        inside(z) && inside(y) && inside(x) && m[[z - p, y - p, x - p]]
    });
    let closed = brute(&brute(&padded, se, r, false), se, r, true);
    Array3::from_shape_fn(m.raw_dim(), |(z, y, x)| closed[[z + p, y + p, x + p]])
}

fn morphology_and_dice() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..1000 {
        let se = if trial % 2 == 0 { StructuringElement::Cube } else { StructuringElement::Ball };
        let r = 1 + (trial / 2) % 2;
        let p = SegmentationParams { opening_radius: r, closing_radius: r, structuring_element: se, ..Default::default() };
        let m = random_mask(16, rng.random_range(0.2..0.9), &mut rng);
        let open = brute(&brute(m.data(), se, r as i64, true), se, r as i64, false);
        ensure!(binary_open(&m, &p).data() == &open, "opening differs on trial {trial} ({se:?}, r {r})");
        ensure!(binary_close(&m, &p).data() == &brute_close(m.data(), se, r as i64), "closing differs on trial {trial}");

        let a = random_mask(8, rng.random_range(0.0..1.0), &mut rng);
        let b = random_mask(8, rng.random_range(0.0..1.0), &mut rng);
        let set = |m: &SegmentationMask| m.data().indexed_iter().filter(|(_, &v)| v).map(|(i, _)| i).collect::<BTreeSet<_>>();
        let (sa, sb) = (set(&a), set(&b));
        let expected = if sa.is_empty() && sb.is_empty() {
            1.0
        } else {
            2.0 * sa.intersection(&sb).count() as f64 / (sa.len() + sb.len()) as f64
        };
        let got = dice(&a, &b).map_err(|e| e.to_string())?;
        ensure!(got == expected, "dice {got} vs set-count {expected} on trial {trial}");
    }
    Ok("1000 × 16³ opening/closing and 1000 × 8³ Dice exact".into())
}

/// Linear-interpolated sample quantile at positions q·(n−1).
fn quantile(values: &[f32], q: f64) -> f64 {
    let mut s: Vec<f64> = values.iter().map(|&v| v as f64).collect();
    s.sort_by(f64::total_cmp);
    let pos = q * (s.len() - 1) as f64;
    let (i, t) = (pos.floor() as usize, pos.fract());
    if i + 1 < s.len() {
        s[i] * (1.0 - t) + s[i + 1] * t
    } else {
        s[i]
    }
}

fn histogram_matching() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    // Pairs 20.. use coarsely quantized sources: ties must stay tied, which
    // rules out decile agreement, so they only check monotonicity.
    for pair in 0..25 {
        let gamma = rng.random_range(0.5..3.0);
        let levels = if pair < 20 { 1e6 } else { 64.0 };
        let source = Array3::from_shape_simple_fn((24, 24, 24), || (rng.random::<f32>().powf(gamma) * levels).round() / levels);
        let reference = Array3::from_shape_simple_fn((20, 22, 25), || {
            if rng.random_bool(0.4) {
                -1000.0 + rng.random::<f32>() * 50.0
            } else {
                rng.random_range(-200.0..1800.0)
            }
        });
        let s = Volume::new(source, [1.0; 3], Domain::Unit).unwrap();
        let r = Volume::new(reference, [1.0; 3], Domain::Hu).unwrap();
        ensure!(s.data().len() >= 10_000 && r.data().len() >= 10_000, "volumes too small");
        let out = histogram_match(&s, &r).map_err(|e| e.to_string())?;
        let rv: Vec<f32> = r.data().iter().copied().collect();
        let ov: Vec<f32> = out.data().iter().copied().collect();
        let (lo, hi) = r.min_max();
        let range = (hi - lo) as f64;
        for k in (1..10).filter(|_| pair < 20) {
            let q = k as f64 / 10.0;
            let rel = (quantile(&ov, q) - quantile(&rv, q)).abs() / range;
            worst = worst.max(rel);
            ensure!(rel <= 0.01, "pair {pair} decile {k}: off by {:.3}% of the range", 100.0 * rel);
        }
        let mut order: Vec<(f32, f32)> = s.data().iter().copied().zip(ov.iter().copied()).collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in order.windows(2) {
            ensure!(w[1].1 >= w[0].1, "pair {pair}: source {} < {} maps to {} > {}", w[0].0, w[1].0, w[0].1, w[1].1);
            ensure!(w[0].0 != w[1].0 || w[0].1 == w[1].1, "pair {pair}: tied sources map apart");
        }
    }
    Ok(format!("20 pairs, worst decile error {:.3}% of range; monotone on 25 pairs", 100.0 * worst))
}

fn skullcut(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_skullcut")).args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    } else {
        Err(format!("`skullcut {}` failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)))
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn case(root: &Path, kind: &str, i: usize) -> PathBuf {
    root.join(kind).join(format!("case_{i:03}.nii.gz"))
}

/// Desk-scale translation setup: 4 noisy jittered 32³ phantoms, small networks,
/// 400 epochs of 4 steps each.
const OVERFIT_CONFIG: &str = "\
[data]
floor_hu = -500

[cut]
generator.base_filters = 8
generator.n_downsample = 2
generator.n_residual_blocks = 3
generator.outer_kernel = 3
discriminator.base_filters = 8
discriminator.n_layers = 3
projector.embed_dim = 64
train.lr = 0.0002
train.max_epochs = 400
train.plateau_patience_epochs = 10

[run]
seed = 1
";

fn phantom_overfit() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = tmp.path();
    let data = root.join("phantoms");
    skullcut(&["phantom-gen", "--seed", "100", "--out", s(&data), "--count", "4", "--size", "32", "--jitter", "--mr-noise", "0.02", "--ct-noise-hu", "20"])?;
    let config = root.join("overfit.ini");
    let text = OVERFIT_CONFIG.replace("[data]\n", &format!("[data]\nmr_dir = {}\nct_dir = {}\n", s(&data.join("mr")), s(&data.join("ct"))));
    std::fs::write(&config, text).map_err(|e| e.to_string())?;
    let runs = root.join("runs");
    skullcut(&["--config", s(&config), "--out-dir", s(&runs), "train-cut"])?;
    let ckpt = runs.join("cut").join("latest.ckpt");
    let steps = std::fs::read_to_string(runs.join("cut").join(LOSS_FILE)).map_err(|e| e.to_string())?.lines().count() - 1;
    ensure!(steps <= 2000, "{steps} training steps");

    let pred = root.join("pred");
    std::fs::create_dir_all(&pred).map_err(|e| e.to_string())?;
    for i in 0..4 {
        let out = root.join("infer").join(i.to_string());
        let mr = case(&data, "mr", i);
        let reference = case(&data, "ct", 0);
        skullcut(&[
            "--config", s(&config), "infer", "--mr", s(&mr), "--cut-ckpt", s(&ckpt),
            "--reference-ct", s(&reference), "--out", s(&out), "--skip-sr",
        ])?;
        std::fs::copy(out.join(MASK_FILE), case(root, "pred", i)).map_err(|e| e.to_string())?;
    }
    let report = root.join("report.csv");
    skullcut(&["--config", s(&config), "evaluate", "--pred", s(&pred), "--truth", s(&data.join("mask")), "--out", s(&report)])?;
    let text = std::fs::read_to_string(&report).map_err(|e| e.to_string())?;
    ensure!(text.starts_with(REPORT_HEADER), "unexpected report header");
    let mean: Vec<f64> = text
        .lines()
        .find(|l| l.starts_with("mean,"))
        .ok_or("report has no mean row")?
        .split(',')
        .skip(1)
        .map(|v| v.parse().unwrap())
        .collect();
    let (dsc, sdsc) = (mean[0], mean[1]);
    let per_case: Vec<&str> = text.lines().skip(1).filter(|l| l.starts_with("case_")).collect();
    let detail = format!("{steps} steps, mean DSC {dsc:.3}, SDSC@1mm {sdsc:.3} over {} cases", per_case.len());
    ensure!(dsc >= 0.8 && sdsc >= 0.8, "{detail}");
    Ok(detail)
}

fn phantom_ct(seed: u64) -> Volume {
    let p = make_phantom(&PhantomSpec::jittered([64; 3], seed).with_noise(0.02, 20.0)).unwrap();
    preprocess_ct(&p.ct, -500.0).unwrap()
}

fn sr_benefit() -> Outcome {
    let train: Vec<Volume> = (200..208).map(phantom_ct).collect();
    let held_out = phantom_ct(300);
    let spec = PyramidSpec { levels: 1, feat_layers: 3, recon_layers: 2, filters: 16, ..PyramidSpec::default() };
    let config = SrTrainConfig {
        optimizer: SrOptimizer::Adam,
        lr: 1e-3,
        grad_accum: 4,
        core_size: 32,
        halo: 4,
        max_epochs: 10_000,
        seed: 1,
        ..SrTrainConfig::default()
    };
    let data = SrDataset::new(&train, &spec, &config).map_err(|e| e.to_string())?;
    let mut trainer = SrTrainer::new(&spec, &config, &AugmentationConfig::default(), &data).map_err(|e| e.to_string())?;
    let steps = 200;
    for _ in 0..steps {
        trainer.train_step(&data).map_err(|e| e.to_string())?;
    }
    let low = resample(&held_out, [32; 3]).map_err(|e| e.to_string())?;
    let tri = psnr(&resample(&low, [64; 3]).unwrap(), &held_out, 1.0).map_err(|e| e.to_string())?;
    let sr = super_resolve(&trainer.network, &low, 1, 16, spec.receptive_radius(1)).map_err(|e| e.to_string())?;
    let sr = psnr(&sr, &held_out, 1.0).map_err(|e| e.to_string())?;
    let detail = format!("{steps} steps, held-out PSNR {sr:.2} dB vs trilinear {tri:.2} dB (gain {:+.2} dB)", sr - tri);
    ensure!(sr >= tri + 0.5, "{detail}");
    Ok(detail)
}

const TINY_CONFIG: &str = "\
[data]
floor_hu = -500

[cut]
generator.base_filters = 2
generator.n_downsample = 1
generator.n_residual_blocks = 1
discriminator.base_filters = 2
discriminator.n_layers = 2
projector.embed_dim = 8
nce.num_patches = 8
train.max_epochs = 3

[lapsrn]
pyramid.filters = 2
pyramid.feat_layers = 1
train.grad_accum = 2
train.core_size = 8
train.halo = 2
train.max_epochs = 3
train.lr = 0.001

[run]
seed = 9
";

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = tmp.path();
    let data = root.join("phantoms");
    skullcut(&["phantom-gen", "--out", s(&data), "--count", "3", "--size", "16", "--jitter", "--mr-noise", "0.02", "--ct-noise-hu", "20"])?;
    let config = root.join("tiny.ini");
    let text = TINY_CONFIG.replace("[data]\n", &format!("[data]\nmr_dir = {}\nct_dir = {}\n", s(&data.join("mr")), s(&data.join("ct"))));
    std::fs::write(&config, text).map_err(|e| e.to_string())?;
    let log = |run: &str, kind: &str| std::fs::read(root.join(run).join(kind).join(LOSS_FILE)).map_err(|e| e.to_string());
    let mut rows = Vec::new();
    for (command, kind) in [("train-cut", "cut"), ("train-sr", "lapsrn")] {
        let train = |run: &str, extra: &[&str]| {
            let out = root.join(run);
            let mut args = vec!["--config", s(&config), "--out-dir", s(&out)];
            args.extend_from_slice(extra);
            args.push(command);
            skullcut(&args)
        };
        train("a", &[])?;
        train("b", &[])?;
        let (a, b) = (log("a", kind)?, log("b", kind)?);
        ensure!(a == b, "{command}: reruns with the same seed wrote different loss logs");
        let n = a.iter().filter(|&&c| c == b'\n').count() - 1;
        ensure!(n >= 4, "{command}: only {n} steps logged");

        train("c", &["--set", "run.stop_after_steps=2"])?;
        let partial = log("c", kind)?;
        ensure!(partial.len() < a.len(), "{command}: the interrupted run did not stop early");
        let out = root.join("c");
        skullcut(&["--config", s(&config), "--out-dir", s(&out), command, "--resume"])?;
        ensure!(log("c", kind)? == a, "{command}: resumed log differs from the uninterrupted run");
        rows.push(format!("{command} {n} steps"));
    }
    Ok(format!("bitwise-equal logs on rerun and on resume after step 2 ({})", rows.join(", ")))
}

fn instance_norm() -> Outcome {
    let cfg = CutConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let spec = GeneratorSpec { base_filters: 8, ..cfg.generator };
    let gen = Generator::<f32>::init(&spec, &mut rng).map_err(|e| e.to_string())?;
    let (mut max_mean, mut max_var): (f64, f64) = (0.0, 0.0);
    let mut count = 0;
    for seed in [5, 6] {
        let p = make_phantom(&PhantomSpec::jittered([32; 3], seed).with_noise(0.02, 20.0)).unwrap();
        let mut g = Graph::new();
        let gp = g.bind(&gen.params, Binding::Frozen);
        let x = g.input(p.mr.to_tensor());
        let out = gen.forward(&mut g, &gp, x, None).map_err(|e| e.to_string())?;
        for &n in &out.norms {
            let t = g.value(n);
            let per = t.len() / t.shape()[0];
            for ch in t.data().chunks(per) {
                let mean = ch.iter().map(|&v| v as f64).sum::<f64>() / per as f64;
                let var = ch.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / per as f64;
                max_mean = max_mean.max(mean.abs());
                max_var = max_var.max((var - 1.0).abs());
                count += 1;
            }
        }
    }
    let detail = format!("{count} channels, max |mean| {max_mean:.1e}, max |var − 1| {max_var:.1e}");
    ensure!(count > 0 && max_mean <= 1e-4 && max_var <= 1e-3, "{detail}");
    Ok(detail)
}
