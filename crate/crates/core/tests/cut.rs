use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use skullcut_core::checkpoint::Checkpoint;
use skullcut_core::cut::{
    discriminator_loss, encoder_features, gan_losses, generator_adv_loss, info_nce, load_generator, patch_nce_loss,
    translate, CutConfig, CutDataset, CutTrainer, Discriminator, DiscriminatorSpec, FeatureStack, GanMode, Generator,
    GeneratorSpec, Projector, ProjectorSpec, NORM_EPS,
};
use skullcut_core::phantom::{make_phantom, PhantomSpec};
use skullcut_core::volume_io::preprocess_ct;
use skullcut_core::{Domain, Volume};
use skullcut_nn::gradcheck::{central_difference, relative_error};
use skullcut_nn::{Binding, Graph, Tensor};

const LN_64: f64 = 4.158883083359672;

fn unit_vec(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn tiny_config() -> CutConfig {
    let mut c = CutConfig::default();
    c.generator = GeneratorSpec { base_filters: 2, n_downsample: 1, n_residual_blocks: 1, outer_kernel: 3 };
    c.discriminator = DiscriminatorSpec { n_layers: 2, base_filters: 2 };
    c.projector = ProjectorSpec { n_layers: 2, embed_dim: 8 };
    c.nce.num_patches = 8;
    c.train.seed = 3;
    c
}

fn phantom_pairs(n: usize, shape: usize) -> (Vec<Volume>, Vec<Volume>) {
    (0..n)
        .map(|i| {
            let p = make_phantom(&PhantomSpec::jittered([shape; 3], 20 + i as u64).with_noise(0.02, 20.0)).unwrap();
            (p.mr, preprocess_ct(&p.ct, -500.0).unwrap())
        })
        .unzip()
}

#[test]
fn info_nce_all_equal_similarities_is_ln_n() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for &tau in &[0.07, 1.0, 3.0] {
        let r = unit_vec(16, &mut rng);
        let negs = vec![r.clone(); 63];
        let l = info_nce(&r, &r, &negs, tau).unwrap();
        assert!((l - LN_64).abs() < 1e-12, "τ={tau}: {l}");
    }
    for n in 2..10 {
        let r = unit_vec(4, &mut rng);
        let l = info_nce(&r, &r, &vec![r.clone(); n - 1], 0.5).unwrap();
        assert!((l - (n as f64).ln()).abs() < 1e-12);
    }
}

#[test]
fn info_nce_closed_forms_and_errors() {
    let e1 = [1.0, 0.0];
    let e2 = vec![0.0, 1.0];
    assert!((info_nce(&e1, &e1, &[e2.clone()], 1.0).unwrap() - 0.313262).abs() < 1e-6);
    let neg = vec![-1.0, 0.0];
    assert!((info_nce(&e1, &e1, &[neg], 1.0).unwrap() - 0.126928).abs() < 1e-6);
    assert!(info_nce(&e1, &e1, &[], 1.0).is_err());
    assert!(info_nce(&e1, &e1, &[vec![1.0]], 1.0).is_err());
}

#[test]
fn info_nce_is_invariant_to_a_common_similarity_shift() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let d = 6;
        let r = unit_vec(d, &mut rng);
        let p = unit_vec(d, &mut rng);
        let negs: Vec<Vec<f64>> = (0..7).map(|_| unit_vec(d, &mut rng)).collect();
        let base = info_nce(&r, &p, &negs, 0.7).unwrap();
        // A shared extra component raises every dot product by c·b.
        let (c, b) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let ext = |v: &[f64], x: f64| v.iter().copied().chain([x]).collect::<Vec<_>>();
        let shifted =
            info_nce(&ext(&r, c), &ext(&p, b), &negs.iter().map(|n| ext(n, b)).collect::<Vec<_>>(), 0.7).unwrap();
        assert!((base - shifted).abs() < 1e-12);
    }
}

#[test]
fn info_nce_graph_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (s, e) = (5, 4);
    let q: Vec<f64> = (0..s * e).map(|_| StandardNormal.sample(&mut rng)).collect();
    let k: Vec<f64> = (0..s * e).map(|_| StandardNormal.sample(&mut rng)).collect();
    let eval = |flat: &[f64], grad: bool| {
        let mut g = Graph::<f64>::new();
        let qv = g.leaf(Tensor::from_vec(&[s, e], flat[..s * e].to_vec()).unwrap());
        let kv = g.leaf(Tensor::from_vec(&[s, e], flat[s * e..].to_vec()).unwrap());
        let (qn, kn) = (g.l2_normalize_rows(qv).unwrap(), g.l2_normalize_rows(kv).unwrap());
        let loss = g.info_nce(qn, kn, 0.3).unwrap();
        let gr = grad.then(|| {
            let grads = g.backward(loss);
            let mut out = grads.get(qv).unwrap().data().to_vec();
            out.extend_from_slice(grads.get(kv).unwrap().data());
            out
        });
        (g.value(loss).item(), gr)
    };
    let x: Vec<f64> = q.iter().chain(&k).copied().collect();
    let analytic = eval(&x, true).1.unwrap();
    let numeric = central_difference(|p| eval(p, false).0, &x, 1e-5);
    assert!(relative_error(&analytic, &numeric) <= 1e-3);
}

/// Tiny f64 generator + projector; everything trainable.
fn nce_networks() -> (Generator<f64>, Projector<f64>, Vec<usize>) {
    let spec = GeneratorSpec { base_filters: 1, n_downsample: 1, n_residual_blocks: 1, outer_kernel: 3 };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut gen = Generator::<f64>::init(&spec, &mut rng).unwrap();
    // Larger weights than the 0.02 init keep the activations informative.
    for t in gen.params.tensors_mut() {
        for v in t.data_mut() {
            *v += 0.3 * { let z: f64 = StandardNormal.sample(&mut rng); z };
        }
    }
    let taps = spec.default_taps();
    let channels: Vec<usize> = taps.iter().map(|&t| spec.tap_channels(t)).collect();
    let mut proj = Projector::<f64>::init(&ProjectorSpec { n_layers: 2, embed_dim: 4 }, &channels, &mut rng);
    for t in proj.params.tensors_mut() {
        for v in t.data_mut() {
            *v += 0.3 * { let z: f64 = StandardNormal.sample(&mut rng); z };
        }
    }
    (gen, proj, taps)
}

#[test]
fn patch_nce_gradient_matches_finite_differences() {
    let (gen, proj, taps) = nce_networks();
    let n_g = gen.params.numel();
    let total = n_g + proj.params.numel();
    assert!(total <= 1000, "{total} parameters");
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = Tensor::from_vec(&[1, 8, 8, 8], (0..512).map(|_| rng.random::<f64>()).collect()).unwrap();
    let sites: Vec<Vec<usize>> = {
        let mut g = Graph::new();
        let p = g.bind(&gen.params, Binding::Frozen);
        let xv = g.input(x.clone());
        let out = gen.forward(&mut g, &p, xv, None).unwrap();
        let pp = g.bind(&proj.params, Binding::Frozen);
        encoder_features(&mut g, &proj, &pp, &out.taps, None, 6, &mut rng).unwrap().sites
    };
    let eval = |flat: &[f64], grad: bool| {
        let (mut gn, mut pr) = (gen.clone(), proj.clone());
        gn.params.assign_flat(&flat[..n_g]);
        pr.params.assign_flat(&flat[n_g..]);
        let mut g = Graph::new();
        let gp = g.bind(&gn.params, Binding::Trainable(0));
        let fp = g.bind(&pr.params, Binding::Trainable(1));
        let xv = g.input(x.clone());
        let out = gn.forward(&mut g, &gp, xv, None).unwrap();
        let syn = out.output.unwrap();
        let enc = gn.forward(&mut g, &gp, syn, Some(taps.len())).unwrap();
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
    let analytic = eval(&flat, true).1.unwrap();
    let numeric = central_difference(|p| eval(p, false).0, &flat, 1e-5);
    let err = relative_error(&analytic, &numeric);
    assert!(err <= 1e-3, "relative error {err}");
}

#[test]
fn gan_gradients_match_finite_differences() {
    let spec = DiscriminatorSpec { n_layers: 1, base_filters: 1 };
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut d = Discriminator::<f64>::init(&spec, &mut rng);
    for t in d.params.tensors_mut() {
        for v in t.data_mut() {
            *v += 0.2 * { let z: f64 = StandardNormal.sample(&mut rng); z };
        }
    }
    assert!(d.params.numel() <= 1000);
    let real = Tensor::from_vec(&[1, 12, 12, 12], (0..1728).map(|_| rng.random::<f64>()).collect()).unwrap();
    let syn = Tensor::from_vec(&[1, 12, 12, 12], (0..1728).map(|_| rng.random::<f64>()).collect()).unwrap();
    for mode in [GanMode::Vanilla, GanMode::Lsgan] {
        // Discriminator loss w.r.t. D parameters; the oracle is the standalone closed form.
        let mut g = Graph::new();
        let p = g.bind(&d.params, Binding::Trainable(0));
        let (xr, xs) = (g.input(real.clone()), g.input(syn.clone()));
        let (lr, ls) = (d.forward(&mut g, &p, xr).unwrap(), d.forward(&mut g, &p, xs).unwrap());
        let loss = discriminator_loss(&mut g, lr, ls, mode).unwrap();
        let (oracle_d, _) = gan_losses(&d, &real, &syn, mode).unwrap();
        assert!((g.value(loss).item() - oracle_d).abs() < 1e-12);
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
        let err = relative_error(&analytic, &numeric);
        assert!(err <= 1e-3, "{mode:?} d-loss relative error {err}");

        // Generator adversarial loss w.r.t. the synthetic volume, D frozen.
        let mut g = Graph::new();
        let p = g.bind(&d.params, Binding::Frozen);
        let xs = g.leaf(syn.clone());
        let ls = d.forward(&mut g, &p, xs).unwrap();
        let adv = generator_adv_loss(&mut g, ls, mode);
        let analytic = g.backward(adv).get(xs).unwrap().data().to_vec();
        let numeric = central_difference(
            |v| gan_losses(&d, &real, &Tensor::from_vec(&[1, 12, 12, 12], v.to_vec()).unwrap(), mode).unwrap().1,
            syn.data(),
            1e-5,
        );
        let err = relative_error(&analytic, &numeric);
        assert!(err <= 1e-3, "{mode:?} g-loss relative error {err}");
    }
}

#[test]
fn uninformative_discriminator_scores_two_ln_two() {
    let spec = DiscriminatorSpec { n_layers: 1, base_filters: 1 };
    let mut d = Discriminator::<f64>::init(&spec, &mut ChaCha8Rng::seed_from_u64(0));
    for t in d.params.tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let x = Tensor::full(&[1, 8, 8, 8], 0.3);
    let (dl, gl) = gan_losses(&d, &x, &x, GanMode::Vanilla).unwrap();
    assert!((dl - 2.0 * 2f64.ln()).abs() < 1e-12);
    assert!((gl - 2f64.ln()).abs() < 1e-12);
    assert!(gan_losses(&d, &x, &Tensor::full(&[1, 8, 8, 4], 0.3), GanMode::Vanilla).is_err());
}

#[test]
fn one_hot_embeddings_drive_the_loss_to_zero_as_temperature_shrinks() {
    let s = 8;
    let one_hot = Tensor::from_vec(&[s, s], (0..s * s).map(|i| if i / s == i % s { 1.0 } else { 0.0 }).collect()).unwrap();
    let mut prev = f64::INFINITY;
    for tau in [1.0, 0.3, 0.1, 0.03, 0.01] {
        let mut g = Graph::<f64>::new();
        let k = g.input(one_hot.clone());
        let q = g.input(one_hot.clone());
        let stack = |v| FeatureStack { sites: vec![(0..s).collect()], embeddings: vec![v] };
        let (loss, per_layer) = patch_nce_loss(&mut g, &stack(k), &stack(q), tau, false).unwrap();
        let l = g.value(loss).item();
        assert_eq!(per_layer.len(), 1);
        let expect = (1.0 + (s - 1) as f64 * (-1.0 / tau).exp()).ln();
        assert!((l - expect).abs() < 1e-12);
        assert!(l < prev);
        prev = l;
    }
    assert!(prev < 1e-40);
}

#[test]
fn random_unit_embeddings_give_about_ln_64() {
    let (s, e, trials) = (64, 2048, 40);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut values = Vec::new();
    for _ in 0..trials {
        let rows = |rng: &mut ChaCha8Rng| {
            Tensor::from_vec(&[s, e], (0..s).flat_map(|_| unit_vec(e, rng)).collect::<Vec<f64>>()).unwrap()
        };
        let mut g = Graph::<f64>::new();
        let k = g.input(rows(&mut rng));
        let q = g.input(rows(&mut rng));
        let st = |v| FeatureStack { sites: vec![(0..s).collect()], embeddings: vec![v] };
        let (loss, _) = patch_nce_loss(&mut g, &st(k), &st(q), 1.0, false).unwrap();
        values.push(g.value(loss).item());
    }
    let mean = values.iter().sum::<f64>() / trials as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (trials - 1) as f64;
    let half_width = 1.96 * (var / trials as f64).sqrt();
    // Second-order term of E[logsumexp] for similarities with variance 1/e.
    let bias = 1.0 / (2.0 * e as f64);
    assert!((mean - LN_64 - bias).abs() <= half_width + 1e-4, "mean {mean}, ±{half_width}");
}

#[test]
fn patch_nce_rejects_misaligned_or_tiny_stacks() {
    let mut g = Graph::<f64>::new();
    let a = g.input(Tensor::full(&[2, 2], 0.5));
    let b = g.input(Tensor::full(&[1, 2], 0.5));
    let s1 = FeatureStack { sites: vec![vec![0, 1]], embeddings: vec![a] };
    let s2 = FeatureStack { sites: vec![vec![1, 0]], embeddings: vec![a] };
    assert!(patch_nce_loss(&mut g, &s1, &s2, 1.0, false).is_err());
    let tiny = FeatureStack { sites: vec![vec![0]], embeddings: vec![b] };
    assert!(patch_nce_loss(&mut g, &tiny, &tiny, 1.0, false).is_err());
}

#[test]
fn generator_contracts() {
    let cfg = tiny_config();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let gen = Generator::<f32>::init(&cfg.generator, &mut rng).unwrap();
    let p = make_phantom(&PhantomSpec::centered([32; 3], 1)).unwrap();
    let out = translate(&gen, &p.mr).unwrap();
    assert_eq!(out.shape(), [32; 3]);
    assert_eq!(out.domain(), Domain::Unit);
    let (lo, hi) = out.min_max();
    assert!(lo >= 0.0 && hi <= 1.0 && hi > lo, "range {lo}..{hi}");
    assert_eq!(out, translate(&gen, &p.mr).unwrap());

    let odd = Volume::new(Array3::zeros((31, 32, 32)), [1.0; 3], Domain::Unit).unwrap();
    assert!(translate(&gen, &odd).is_err());
    let hu = Volume::new(Array3::zeros((32, 32, 32)), [1.0; 3], Domain::Hu).unwrap();
    assert!(translate(&gen, &hu).is_err());
}

#[test]
fn encoder_feature_sampling_contracts() {
    let cfg = tiny_config();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let gen = Generator::<f32>::init(&cfg.generator, &mut rng).unwrap();
    let taps = cfg.taps();
    let channels: Vec<usize> = taps.iter().map(|&t| cfg.generator.tap_channels(t)).collect();
    let proj = Projector::<f32>::init(&cfg.projector, &channels, &mut rng);
    let p = make_phantom(&PhantomSpec::centered([16; 3], 2)).unwrap();
    let mut g = Graph::new();
    let gp = g.bind(&gen.params, Binding::Frozen);
    let fp = g.bind(&proj.params, Binding::Frozen);
    let x = g.input(p.mr.to_tensor());
    let out = gen.forward(&mut g, &gp, x, None).unwrap();
    let a = encoder_features(&mut g, &proj, &fp, &out.taps, None, 64, &mut rng).unwrap();
    for (l, sites) in a.sites.iter().enumerate() {
        let n: usize = g.value(out.taps[l]).shape()[1..].iter().product();
        let mut sorted = sites.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 64.min(n), "layer {l}: distinct sites");
        assert!(sites.iter().all(|&s| s < n));
    }
    let b = encoder_features(&mut g, &proj, &fp, &out.taps, Some(&a.sites), 64, &mut rng).unwrap();
    assert_eq!(a.sites, b.sites);
    for (ea, eb) in a.embeddings.iter().zip(&b.embeddings) {
        assert_eq!(g.value(*ea), g.value(*eb));
    }
    // Identical source and translated stacks: positives are maximal, so the loss beats ln S.
    let (loss, per_layer) = patch_nce_loss(&mut g, &a, &b, 1.0, false).unwrap();
    for (l, v) in per_layer.iter().enumerate() {
        assert!(*v < (a.sites[l].len() as f64).ln(), "layer {l}: {v}");
    }
    assert!(g.value(loss).item().is_finite());
    let bad = vec![vec![usize::MAX]; a.sites.len()];
    assert!(encoder_features(&mut g, &proj, &fp, &out.taps, Some(&bad), 64, &mut rng).is_err());
    assert!(encoder_features(&mut g, &proj, &fp, &out.taps, Some(&a.sites[..1]), 64, &mut rng).is_err());
}

#[test]
fn instance_norm_outputs_are_standardized() {
    let cfg = CutConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let spec = GeneratorSpec { base_filters: 4, ..cfg.generator };
    let gen = Generator::<f32>::init(&spec, &mut rng).unwrap();
    let p = make_phantom(&PhantomSpec::jittered([32; 3], 5).with_noise(0.02, 20.0)).unwrap();
    let mut g = Graph::new();
    let gp = g.bind(&gen.params, Binding::Frozen);
    let x = g.input(p.mr.to_tensor());
    let out = gen.forward(&mut g, &gp, x, None).unwrap();
    assert!(!out.norms.is_empty());
    for &n in &out.norms {
        let t = g.value(n);
        let c = t.shape()[0];
        let per = t.len() / c;
        for ch in t.data().chunks(per) {
            let mean = ch.iter().map(|&v| v as f64).sum::<f64>() / per as f64;
            let var = ch.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / per as f64;
            assert!(mean.abs() <= 1e-4, "mean {mean}");
            assert!((var - 1.0).abs() <= 1e-3, "variance {var} (eps {NORM_EPS})");
        }
    }
}

#[test]
fn updates_touch_only_their_own_networks() {
    let cfg = tiny_config();
    let (mr, ct) = phantom_pairs(2, 16);
    let data = CutDataset::new(&mr, &ct, &cfg).unwrap();
    let mut t = CutTrainer::new(&cfg, &data).unwrap();
    let pairs = t.sample_pairs(&data);
    let passes: Vec<_> = pairs.into_iter().map(|p| t.generator_pass(&data, p).unwrap()).collect();
    let (g0, f0, d0) = (t.model.generator.clone(), t.model.projector.clone(), t.model.discriminator.clone());
    t.update_discriminator(&data, &passes).unwrap();
    assert_eq!(t.model.generator, g0);
    assert_eq!(t.model.projector, f0);
    assert_ne!(t.model.discriminator, d0);
    let d1 = t.model.discriminator.clone();
    t.update_generator(passes).unwrap();
    assert_eq!(t.model.discriminator, d1);
    assert_ne!(t.model.generator, g0);
    assert_ne!(t.model.projector, f0);
}

#[test]
fn gan_only_run_matches_the_standalone_oracle() {
    let mut cfg = tiny_config();
    cfg.train.lambda_syn = 0.0;
    cfg.train.lambda_idt = 0.0;
    let (mr, ct) = phantom_pairs(2, 16);
    let data = CutDataset::new(&mr, &ct, &cfg).unwrap();
    let mut t = CutTrainer::new(&cfg, &data).unwrap();
    for _ in 0..3 {
        let pairs = t.sample_pairs(&data);
        let (mi, ci) = pairs[0];
        let pass = t.generator_pass(&data, (mi, ci)).unwrap();
        let syn = pass.synthetic().clone();
        let real = ct[ci].to_tensor::<f32>();
        let (d_oracle, _) = gan_losses(&t.model.discriminator, &real, &syn, cfg.train.gan_mode).unwrap();
        let d = t.update_discriminator(&data, std::slice::from_ref(&pass)).unwrap();
        assert!((d - d_oracle).abs() <= 1e-5 * d_oracle.abs().max(1.0), "{d} vs {d_oracle}");
        let (_, g_oracle) = gan_losses(&t.model.discriminator, &real, &syn, cfg.train.gan_mode).unwrap();
        let [g_adv, nce_syn, nce_idt, total] = t.update_generator(vec![pass]).unwrap();
        assert!((g_adv - g_oracle).abs() <= 1e-5 * g_oracle.abs().max(1.0), "{g_adv} vs {g_oracle}");
        assert_eq!((nce_syn, nce_idt), (0.0, 0.0));
        assert!((total - g_adv).abs() < 1e-6);
    }
}

#[test]
fn training_is_seed_deterministic_and_resumable() {
    let cfg = tiny_config();
    let (mr, ct) = phantom_pairs(3, 16);
    let data = CutDataset::new(&mr, &ct, &cfg).unwrap();
    let mut straight = CutTrainer::new(&cfg, &data).unwrap();
    let full: Vec<String> = (0..4).map(|_| straight.train_step(&data).unwrap().csv_row()).collect();
    let mut again = CutTrainer::new(&cfg, &data).unwrap();
    assert_eq!(again.train_step(&data).unwrap().csv_row(), full[0]);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cut.ckpt");
    let mut first = CutTrainer::new(&cfg, &data).unwrap();
    let mut rows: Vec<String> = (0..2).map(|_| first.train_step(&data).unwrap().csv_row()).collect();
    first.to_checkpoint().unwrap().save(&path).unwrap();
    drop(first);
    let ck = Checkpoint::load(&path).unwrap();
    let mut resumed = CutTrainer::from_checkpoint(&ck, &path, &data).unwrap();
    rows.extend((0..2).map(|_| resumed.train_step(&data).unwrap().csv_row()));
    assert_eq!(rows, full);
    assert_eq!(resumed.model, straight.model);

    straight.to_checkpoint().unwrap().save(&path).unwrap();
    let gen = load_generator(&path).unwrap();
    assert_eq!(gen, straight.model.generator);
    assert_eq!(translate(&gen, &mr[0]).unwrap(), translate(&straight.model.generator, &mr[0]).unwrap());
    let ck = Checkpoint::load(&path).unwrap();
    let taps: Vec<usize> = serde_json::from_value(ck.meta["taps"].clone()).unwrap();
    assert_eq!(taps, cfg.taps());
}

#[test]
fn datasets_are_validated() {
    let cfg = tiny_config();
    let (mr, ct) = phantom_pairs(1, 16);
    assert!(CutDataset::new(&[], &ct, &cfg).is_err());
    assert!(CutDataset::new(&mr, &[], &cfg).is_err());
    let hu = Volume::new(Array3::zeros((16, 16, 16)), [1.0; 3], Domain::Hu).unwrap();
    assert!(CutDataset::new(&mr, &[hu], &cfg).is_err());
    let (other, _) = phantom_pairs(1, 32);
    assert!(CutDataset::new(&other, &ct, &cfg).is_err());
}
