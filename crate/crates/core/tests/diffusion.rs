#[global_allocator]
static ALLOC: mimalloc::MiMalloc = mimalloc::MiMalloc;

use octsynth::data::{gen_phantom_at, Image, PhantomConfig};
use octsynth::diffusion::{
    cosine_level, reverse_chain, train_eps, AnalyticEps, GaussianData, PixelDenoiser, standard_normal, ddpm_loss, ddpm_loss_at, forward_marginal, forward_step, histogram_divergence,
    reverse_mean, sample_batch, sample_from_sketch, train_ddpm, DdpmTrainConfig, DenoiserModel, EpsilonModel,
    NoiseSchedule, COSINE_OFFSET,
};
use octsynth::sketch::{generate_sketch_at, BoundaryStats, SketchConfig};
use octsynth::tensor::{ParamStore, Tape, Tensor, Var};
use octsynth::Result;
use rand::Rng;
use rand_distr::StandardNormal;

fn sched() -> NoiseSchedule {
    NoiseSchedule::cosine(400, COSINE_OFFSET).unwrap()
}

fn moments(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
}

#[test]
fn schedule_matches_direct_cosine() {
    let s = sched();
    let f0 = cosine_level(0.0, 400, COSINE_OFFSET);
    let mut prod = 1.0;
    for t in 1..=400 {
        prod *= 1.0 - s.beta(t);
        assert!((s.alpha_bar(t) - prod).abs() < 1e-12);
        let direct = cosine_level(t as f64, 400, COSINE_OFFSET) / f0;
        // Only the final step is clipped; before it ᾱ is the cosine ratio.
        if t < 400 {
            assert!((s.alpha_bar(t) - direct).abs() < 1e-12, "t = {t}");
        } else {
            assert!(direct < 1e-3 && s.alpha_bar(t) < 1e-3);
        }
    }
}

#[test]
fn forward_step_moments() {
    let s = sched();
    let n = 10_000;
    for t in [1, 120, 399] {
        let x = Tensor::full(&[n], 0.6f64);
        let out = forward_step(&x, t, &s, &mut octsynth::seed::rng(t as u64)).unwrap();
        let (m, v) = moments(out.data());
        let beta = s.beta(t);
        let mean = (1.0 - beta).sqrt() * 0.6;
        assert!((m - mean).abs() < 3.0 * (beta / n as f64).sqrt(), "t {t}: mean {m} vs {mean}");
        let se_v = beta * (2.0 / (n - 1) as f64).sqrt();
        assert!((v - beta).abs() < 3.0 * se_v, "t {t}: var {v} vs {beta}");
    }
}

#[test]
fn chain_agrees_with_marginal() {
    let s = sched();
    let n = 10_000;
    let x0 = Tensor::full(&[n], 0.4f64);
    let mut rng = octsynth::seed::rng(11);
    let mut chain = x0.clone();
    for t in 1..=400 {
        chain = forward_step(&chain, t, &s, &mut rng).unwrap();
        if [50, 200, 400].contains(&t) {
            let eps = Tensor::from_fn(&[n], |_| rng.sample::<f64, _>(StandardNormal));
            let marg = forward_marginal(&x0, t, &eps, &s).unwrap();
            let (mc, vc) = moments(chain.data());
            let (mm, vm) = moments(marg.data());
            let se_m = ((vc + vm) / n as f64).sqrt();
            let se_v = (2.0 * (vc * vc + vm * vm) / (n - 1) as f64).sqrt();
            assert!((mc - mm).abs() < 3.0 * se_m, "t {t}: means {mc} vs {mm}");
            assert!((vc - vm).abs() < 3.0 * se_v, "t {t}: variances {vc} vs {vm}");
        }
    }
}

/// Independent posterior mean of q(x_{t-1} | x_t, x0).
fn posterior_mean(s: &NoiseSchedule, t: usize, x0: f64, xt: f64) -> f64 {
    let ab = s.alpha_bar(t);
    let ab_prev = s.alpha_bar(t - 1);
    let beta = s.beta(t);
    ((ab_prev.sqrt() * beta) * x0 + ((1.0 - beta).sqrt() * (1.0 - ab_prev)) * xt) / (1.0 - ab)
}

#[test]
fn posterior_mean_identity() {
    let s = sched();
    let mut rng = octsynth::seed::rng(4);
    for _ in 0..1000 {
        let t = rng.random_range(1..=400);
        let x0 = rng.random_range(-1.0..1.0);
        let e: f64 = rng.sample(StandardNormal);
        let xt = forward_marginal(&Tensor::scalar(x0), t, &Tensor::scalar(e), &s).unwrap();
        let mu = reverse_mean(&xt, t, &Tensor::scalar(e), &s).unwrap();
        let expect = posterior_mean(&s, t, x0, xt.data()[0]);
        assert!((mu.data()[0] - expect).abs() < 1e-10, "t {t}: {} vs {expect}", mu.data()[0]);
    }
}

/// Predicts the exact noise by inverting the marginal with the known x0.
struct Oracle<'a> {
    x0: Tensor<f64>,
    sched: &'a NoiseSchedule,
    store: ParamStore<f64>,
}

impl EpsilonModel<f64> for Oracle<'_> {
    fn params(&self) -> &ParamStore<f64> {
        &self.store
    }
    fn params_mut(&mut self) -> &mut ParamStore<f64> {
        &mut self.store
    }
    fn forward(&self, tape: &mut Tape<f64>, x: Var, t: &[usize]) -> Result<Var> {
        let per = self.x0.len() / t.len();
        let xt = tape.value(x).clone();
        let eps = Tensor::from_fn(xt.shape(), |i| {
            let ab = self.sched.alpha_bar(t[i / per]);
            (xt.data()[i] - ab.sqrt() * self.x0.data()[i]) / (1.0 - ab).sqrt()
        });
        Ok(tape.input(eps))
    }
}

/// ε̂ = w·x_t + b as a 1x1 convolution.
struct Affine {
    store: ParamStore<f64>,
}

impl EpsilonModel<f64> for Affine {
    fn params(&self) -> &ParamStore<f64> {
        &self.store
    }
    fn params_mut(&mut self) -> &mut ParamStore<f64> {
        &mut self.store
    }
    fn forward(&self, tape: &mut Tape<f64>, x: Var, _t: &[usize]) -> Result<Var> {
        let w = tape.param(&self.store, "w")?;
        let b = tape.param(&self.store, "b")?;
        tape.conv2d(x, w, b, 1, 0)
    }
}

fn affine(w: f64, b: f64) -> Affine {
    let mut store = ParamStore::new();
    store.insert("w", Tensor::new(&[1, 1, 1, 1], vec![w]).unwrap());
    store.insert("b", Tensor::new(&[1], vec![b]).unwrap());
    Affine { store }
}

fn random_batch(n: usize, seed: u64) -> Tensor<f64> {
    let mut rng = octsynth::seed::rng(seed);
    Tensor::from_fn(&[n, 1, 8, 8], |_| rng.random_range(-1.0..1.0))
}

#[test]
fn loss_of_perfect_and_zero_predictors() {
    let s = sched();
    let x0 = random_batch(64, 1);
    let oracle = Oracle { x0: x0.clone(), sched: &s, store: ParamStore::new() };
    let (loss, grads) = ddpm_loss(&oracle, &x0, &s, &mut octsynth::seed::rng(2)).unwrap();
    assert!(loss < 1e-20, "{loss}");
    assert!(grads.is_empty());

    let zero = affine(0.0, 0.0);
    let (loss, _) = ddpm_loss(&zero, &x0, &s, &mut octsynth::seed::rng(3)).unwrap();
    // Mean of eps² over 64·64 unit Gaussians: variance of eps² is 2.
    let se = (2.0f64 / (64.0 * 64.0)).sqrt();
    assert!((loss - 1.0).abs() < 3.0 * se, "{loss}");
}

#[test]
fn loss_gradient_matches_finite_differences() {
    let s = sched();
    let x0 = random_batch(4, 9);
    let t = [3, 77, 210, 399];
    let mut rng = octsynth::seed::rng(10);
    let eps = Tensor::from_fn(x0.shape(), |_| rng.sample::<f64, _>(StandardNormal));
    for (w, b) in [(0.3, -0.2), (1.1, 0.4), (-0.7, 0.05)] {
        let (_, grads) = ddpm_loss_at(&affine(w, b), &x0, &s, &t, &eps).unwrap();
        let h = 1e-5;
        let f = |w, b| ddpm_loss_at(&affine(w, b), &x0, &s, &t, &eps).unwrap().0;
        let dw = (f(w + h, b) - f(w - h, b)) / (2.0 * h);
        let db = (f(w, b + h) - f(w, b - h)) / (2.0 * h);
        let gw = grads.get("w").unwrap().data()[0];
        let gb = grads.get("b").unwrap().data()[0];
        let rel = ((gw - dw).powi(2) + (gb - db).powi(2)).sqrt() / (dw.hypot(db)).max(gw.hypot(gb));
        assert!(rel < 1e-4, "rel {rel}: ({gw}, {gb}) vs ({dw}, {db})");
    }
}

fn phantoms(n: usize, seed: u64) -> Vec<Image> {
    (0..n).map(|i| gen_phantom_at(&PhantomConfig::default(), seed, i).unwrap().image).collect()
}

#[test]
fn training_reduces_loss_and_is_deterministic() {
    let s = sched();
    let images = phantoms(32, 1);
    let cfg = DdpmTrainConfig { steps: 200, lr: 2e-3, batch: 4, seed: 3, checkpoint_every: 100, ..Default::default() };
    let mut model = DenoiserModel::new(16, 7).unwrap();
    let mut saved = Vec::new();
    let log = train_ddpm(&mut model, &images, &s, &cfg, |step, _| {
        saved.push(step);
        Ok(())
    })
    .unwrap();
    assert_eq!(saved, vec![100, 200]);
    let (first, last) = (log.mean(0..50), log.mean(150..200));
    assert!(last < first, "first {first}, last {last}");

    let short = DdpmTrainConfig { steps: 10, ..cfg };
    let run = || {
        let mut m = DenoiserModel::new(16, 7).unwrap();
        train_ddpm(&mut m, &images, &s, &short, |_, _| Ok(())).unwrap();
        let mut bytes = Vec::new();
        octsynth::tensor::write_checkpoint(&mut bytes, &m.params, &m.meta()).unwrap();
        bytes
    };
    assert_eq!(run(), run());
}

fn sketch_stats() -> BoundaryStats {
    let pairs: Vec<_> = (0..24)
        .map(|i| {
            let p = gen_phantom_at(&PhantomConfig::default(), 2, i);
            let p = p.unwrap();
            (p.image, p.mask)
        })
        .collect();
    let names = (0..24).map(|i| i.to_string()).collect::<Vec<_>>();
    BoundaryStats::fit(&pairs, &names, 8).unwrap()
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let (ma, va) = moments(a);
    let (mb, vb) = moments(b);
    let cov = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (a.len() - 1) as f64;
    cov / (va * vb).sqrt()
}

#[test]
fn shortcut_sampling_endpoints() {
    let s = sched();
    let stats = sketch_stats();
    let sketches: Vec<Image> = (0..100)
        .map(|i| generate_sketch_at(&stats, &SketchConfig::default(), 120, 8, i).unwrap().image)
        .collect();
    let pooled: Vec<f64> = sketches.iter().flat_map(|i| i.to_signed()).collect();
    let (m, v) = moments(&pooled);
    let model = AnalyticEps::<f32>::new(GaussianData::new(m, v.sqrt()).unwrap(), &s);

    let same = sample_from_sketch(&sketches[0], "s0", 0, &model, &s, 1).unwrap();
    assert_eq!(same.image, sketches[0]);

    let corr_gap = |t_start: usize| {
        let (mut own, mut other) = (Vec::new(), Vec::new());
        for (i, sk) in sketches.iter().enumerate() {
            let out = sample_from_sketch(sk, "s", t_start, &model, &s, i as u64).unwrap();
            own.push(pearson(&sk.to_signed(), &out.signed));
            other.push(pearson(&sketches[(i + 37) % 100].to_signed(), &out.signed));
        }
        let d: Vec<f64> = own.iter().zip(&other).map(|(a, b)| a - b).collect();
        let (md, vd) = moments(&d);
        md / (vd / d.len() as f64).sqrt()
    };
    // One-sided paired t at the 1% level (df = 99).
    let t_full = corr_gap(400);
    assert!(t_full < 2.365, "pure-noise start still tracks its sketch: t = {t_full}");
    let t_short = corr_gap(100);
    assert!(t_short > 2.365, "short chain should keep sketch structure: t = {t_short}");
}

#[test]
fn histogram_divergence_cases() {
    let s = sched();
    let stats = sketch_stats();
    let real = phantoms(8, 3);
    let flat: Vec<Image> = (0..8)
        .map(|i| {
            let cfg = SketchConfig { blur: false, perturb: false, ..Default::default() };
            generate_sketch_at(&stats, &cfg, 120, 4, i).unwrap().image
        })
        .collect();
    assert!(histogram_divergence(&real, &flat, 0, &s, 64, 1).unwrap() > 0.0);
    assert_eq!(histogram_divergence(&real, &real, 250, &s, 64, 5).unwrap(), 0.0);
    let wins = (0..50u64)
        .filter(|&seed| {
            let late = histogram_divergence(&real, &flat, 400, &s, 64, seed).unwrap();
            let early = histogram_divergence(&real, &flat, 100, &s, 64, seed + 1000).unwrap();
            late < early
        })
        .count();
    assert!(wins >= 48, "{wins}/50");
}

#[test]
fn batched_sampling_matches_single_sketches() {
    let s = sched();
    let stats = sketch_stats();
    let model = DenoiserModel::new(4, 6).unwrap();
    let sketches: Vec<Image> = (0..3)
        .map(|i| generate_sketch_at(&stats, &SketchConfig::default(), 120, 9, i).unwrap().image)
        .collect();
    let items: Vec<(&Image, &str, u64)> = sketches.iter().enumerate().map(|(i, sk)| (sk, "s", 50 + i as u64)).collect();
    let batch = sample_batch(&items, 20, &model, &s).unwrap();
    for (b, &(sk, r, seed)) in batch.iter().zip(&items) {
        let single = sample_from_sketch(sk, r, 20, &model, &s, seed).unwrap();
        assert_eq!(b, &single);
    }
}

#[test]
fn analytic_sampler_recovers_gaussian_data() {
    let s = sched();
    for (m, sd) in [(0.3, 0.5), (-0.4, 0.2)] {
        let g = GaussianData::new(m, sd).unwrap();
        let model = AnalyticEps::<f64>::new(g, &s);
        let mut rng = octsynth::seed::rng(1);
        let x = standard_normal::<f64>(&[1, 1, 100, 100], &mut rng);
        let out = reverse_chain(x, 400, &s, &mut rng, |x, t| model.predict(x, &[t])).unwrap();
        let (mean, var) = moments(out.data());
        assert!((mean - m).abs() < 0.02, "mean {mean} vs {m}");
        assert!((var.sqrt() / sd - 1.0).abs() < 0.05, "sd {} vs {sd}", var.sqrt());
    }
}

#[test]
fn tiny_denoiser_approaches_minimum_mse() {
    let s = sched();
    let g = GaussianData::new(0.3, 0.5).unwrap();
    let mut model = PixelDenoiser::<f64>::new(16, 32, 0);
    let cfg = DdpmTrainConfig { steps: 1500, lr: 3e-3, batch: 32, seed: 0, checkpoint_every: 1500, ..Default::default() };
    train_eps(&mut model, &s, &cfg, |r| Ok(g.draw(&[32, 1, 1, 64], r)), |_, _| Ok(())).unwrap();
    let mut rng = octsynth::seed::rng(99);
    let n = 800;
    let x0 = g.draw::<f64>(&[n, 1, 1, 128], &mut rng);
    let t: Vec<usize> = (0..n).map(|i| i % 400 + 1).collect();
    let eps = standard_normal(&[n, 1, 1, 128], &mut rng);
    let (mse, _) = ddpm_loss_at(&model, &x0, &s, &t, &eps).unwrap();
    let min = g.min_mse(&s);
    assert!(mse <= 1.1 * min, "trained {mse} vs minimum {min}");
}
