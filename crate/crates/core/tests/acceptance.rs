//! Acceptance suite. Each test prints one PASS/FAIL line straight to stdout
//! (bypassing the test harness capture) and then asserts.

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use stgconvnet::energy::{energy, energy_grad, ModelConfig};
use stgconvnet::gradcheck::{random_tiny_net, TinyNet};
use stgconvnet::learner::{train_with_hook, PreprocessStats, Preprocessing, Scheme, TrainConfig};
use stgconvnet::mrf_baseline::{gibbs_conditional, mrf_recover, Estimate, GibbsSampler, MrfConfig, Potential};
use stgconvnet::net::{activation_pattern, affine_decomposition, forward, grad_input, grad_params, score, LayerSpec, NetParams, NetSpec};
use stgconvnet::recovery::{fill_occluded, make_mask, recovery_error, train_with_recovery, train_with_recovery_hook, OcclusionSpec};
use stgconvnet::rng::{stream_rng, Stream};
use stgconvnet::sampler::{langevin_step, Model};
use stgconvnet::tensor::{read_stv, write_stv, Dims, MaskTensor, StvDtype, VideoTensor};

fn report(n: usize, name: &str, pass: bool, detail: &str, elapsed: Duration) {
    let status = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "criterion {n:>2} {status} {name}: {detail} ({:.1}s)", elapsed.as_secs_f64());
}

fn inner(a: &VideoTensor, b: &VideoTensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn half_sq_dist(a: &VideoTensor, b: &VideoTensor) -> f64 {
    0.5 * a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()
}

fn gaussian_like(v: &VideoTensor, scale: f64, rng: &mut impl Rng) -> VideoTensor {
    VideoTensor::from_fn(v.dims(), |_, _, _, _| scale * rng.sample::<f64, _>(StandardNormal))
}

// ---------------------------------------------------------------- 1

/// Skips a coordinate when any pre-activation it moves starts or ends within
/// `margin` of zero or changes sign.
fn kink_free(spec: &NetSpec, params: &NetParams, base: &VideoTensor, perturbed: &[&VideoTensor], pp: &[&NetParams]) -> bool {
    const MARGIN: f64 = 1e-3;
    let b = forward(spec, params, base).unwrap();
    let mut passes = Vec::new();
    for v in perturbed {
        passes.push(forward(spec, params, v).unwrap());
    }
    for p in pp {
        passes.push(forward(spec, p, base).unwrap());
    }
    passes.iter().all(|q| {
        b.pre.iter().zip(&q.pre).all(|(u, w)| {
            u.data().iter().zip(w.data()).all(|(&x, &y)| x == y || (x * y > 0.0 && x.abs() >= MARGIN && y.abs() >= MARGIN))
        })
    })
}

fn rel(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

#[test]
fn c01_gradient_correctness() {
    let start = Instant::now();
    let h = 1e-4;
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut worst, mut checked, mut nets, mut deep) = (0.0f64, 0usize, 0usize, 0usize);
    while nets < 60 {
        let layers = if nets % 3 == 0 { Some(3) } else { None };
        let TinyNet { spec, params, input } = random_tiny_net(&mut rng, layers).unwrap();
        let d = input.dims();
        assert!(d.channels == 1 && d.height <= 6 && d.width <= 6 && d.frames <= 4 && spec.layers.len() <= 3);
        nets += 1;
        deep += usize::from(spec.layers.len() == 3);
        let model = ModelConfig::gaussian(rng.random_range(0.5..2.0));
        let gi = grad_input(&spec, &params, &input).unwrap();
        let ge = energy_grad(&spec, &params, &model, &input).unwrap();
        for j in 0..input.len() {
            let mut p = input.clone();
            p.data_mut()[j] += h;
            let mut m = input.clone();
            m.data_mut()[j] -= h;
            if !kink_free(&spec, &params, &input, &[&p, &m], &[]) {
                continue;
            }
            let fd = (score(&spec, &params, &p).unwrap() - score(&spec, &params, &m).unwrap()) / (2.0 * h);
            // energy oracle written out: -f + |I|^2 / (2 sigma^2)
            let e = |v: &VideoTensor| {
                -score(&spec, &params, v).unwrap() + v.data().iter().map(|x| x * x).sum::<f64>() / (2.0 * model.sigma * model.sigma)
            };
            let fde = (e(&p) - e(&m)) / (2.0 * h);
            worst = worst.max(rel(gi.data()[j], fd)).max(rel(ge.data()[j], fde));
            checked += 2;
        }
        let gp = grad_params(&spec, &params, &input).unwrap();
        for l in 0..params.layers.len() {
            let nw = params.layers[l].weights.len();
            for j in 0..nw + params.layers[l].biases.len() {
                let bump = |delta: f64| {
                    let mut q = params.clone();
                    if j < nw {
                        q.layers[l].weights[j] += delta;
                    } else {
                        q.layers[l].biases[j - nw] += delta;
                    }
                    q
                };
                let (qp, qm) = (bump(h), bump(-h));
                if !kink_free(&spec, &params, &input, &[], &[&qp, &qm]) {
                    continue;
                }
                let fd = (score(&spec, &qp, &input).unwrap() - score(&spec, &qm, &input).unwrap()) / (2.0 * h);
                let an = if j < nw { gp.layers[l].weights[j] } else { gp.layers[l].biases[j - nw] };
                worst = worst.max(rel(an, fd));
                checked += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = worst <= 1e-4 && checked > 1000 && deep >= 20 && elapsed < Duration::from_secs(60);
    report(1, "gradient correctness", pass, &format!("{nets} nets ({deep} with 3 layers), {checked} coordinates, max rel err {worst:.2e} (tol 1e-4)"), elapsed);
    assert!(pass);
}

// ---------------------------------------------------------------- 2, 3

/// A perturbation of `input` that keeps the activation pattern.
fn same_piece(spec: &NetSpec, params: &NetParams, input: &VideoTensor, rng: &mut ChaCha8Rng) -> Option<VideoTensor> {
    let pat = activation_pattern(spec, params, input).unwrap();
    let dir = gaussian_like(input, 1.0, rng);
    let mut s = 1e-2;
    for _ in 0..20 {
        let cand = VideoTensor::from_vec(input.dims(), input.data().iter().zip(dir.data()).map(|(a, d)| a + s * d).collect()).unwrap();
        if activation_pattern(spec, params, &cand).unwrap() == pat {
            return Some(cand);
        }
        s *= 0.5;
    }
    None
}

#[test]
fn c02_piecewise_linearity() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let (mut triples, mut worst, mut active) = (0, 0.0f64, 0);
    while triples < 100 {
        let TinyNet { spec, params, input } = random_tiny_net(&mut rng, None).unwrap();
        let Some(moved) = same_piece(&spec, &params, &input, &mut rng) else { continue };
        let (a, b) = affine_decomposition(&spec, &params, &input).unwrap();
        let f = score(&spec, &params, &moved).unwrap();
        let err = (f - a - inner(&moved, &b)).abs() / (1.0 + f.abs());
        worst = worst.max(err);
        active += usize::from(f != 0.0);
        triples += 1;
    }
    let elapsed = start.elapsed();
    let pass = worst <= 1e-9 && active >= 50 && elapsed < Duration::from_secs(10);
    report(2, "piecewise linearity", pass, &format!("{triples} triples ({active} with f != 0), max |f - a - <I,B>| / (1+|f|) = {worst:.2e} (tol 1e-9)"), elapsed);
    assert!(pass);
}

#[test]
fn c03_energy_decomposition() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let model = ModelConfig::gaussian(1.0);
    let (mut pairs, mut worst) = (0, 0.0f64);
    while pairs < 100 {
        let TinyNet { spec, params, input } = random_tiny_net(&mut rng, None).unwrap();
        let Some(other) = same_piece(&spec, &params, &input, &mut rng) else { continue };
        let offset = |v: &VideoTensor| {
            let b = grad_input(&spec, &params, v).unwrap();
            energy(&spec, &params, &model, v).unwrap() - half_sq_dist(v, &b)
        };
        let (c1, c2) = (offset(&input), offset(&other));
        // closed form of the constant: -a - |B|^2 / 2
        let (a, b) = affine_decomposition(&spec, &params, &input).unwrap();
        let c0 = -a - 0.5 * inner(&b, &b);
        let scale = 1.0 + c1.abs().max(c2.abs());
        worst = worst.max((c1 - c2).abs() / scale).max((c1 - c0).abs() / scale);
        pairs += 1;
    }
    let elapsed = start.elapsed();
    let pass = worst <= 1e-9 && elapsed < Duration::from_secs(10);
    report(3, "energy decomposition", pass, &format!("{pairs} pairs, max relative disagreement {worst:.2e} (tol 1e-9)"), elapsed);
    assert!(pass);
}

// ---------------------------------------------------------------- 4

#[test]
fn c04_reference_sampling() {
    let start = Instant::now();
    let dims = Dims::new(1, 2, 2, 2);
    let spec = NetSpec::new(1, vec![LayerSpec::conv3d(2, [1, 1, 1], [1, 1, 1])]);
    let params = NetParams::zeros(&spec, dims).unwrap();
    let cfg = ModelConfig::gaussian(1.0);
    let model = Model::new(&spec, &params, &cfg);
    let (chains, steps, burn) = (24u64, 100_000usize, 2_000usize);
    let n = dims.len();
    let (mut sum, mut sq) = (vec![0.0; n], vec![0.0; n]);
    let mut count = 0usize;
    for m in 0..chains {
        let mut rng = stream_rng(44, m, Stream::Chain);
        let mut v = VideoTensor::zeros(dims);
        for s in 0..steps {
            v = langevin_step(&model, &v, 0.1, &mut rng, None).unwrap();
            if s >= burn {
                for (j, x) in v.data().iter().enumerate() {
                    sum[j] += x;
                    sq[j] += x * x;
                }
                count += 1;
            }
        }
    }
    let c = count as f64;
    let means: Vec<f64> = sum.iter().map(|s| s / c).collect();
    let vars: Vec<f64> = sq.iter().zip(&means).map(|(q, m)| q / c - m * m).collect();
    let max_mean = means.iter().fold(0.0f64, |a, m| a.max(m.abs()));
    let (vmin, vmax) = vars.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    let elapsed = start.elapsed();
    let pass = max_mean <= 0.05 && vmin >= 0.90 && vmax <= 1.10 && elapsed < Duration::from_secs(30);
    report(
        4,
        "reference sampling",
        pass,
        &format!("{chains} chains x {steps} steps at eps 0.1, max |mean| {max_mean:.4}, variance in [{vmin:.4}, {vmax:.4}]"),
        elapsed,
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 5

#[test]
fn c05_moment_matching() {
    let start = Instant::now();
    let dims = Dims::new(1, 4, 4, 4);
    let observed = VideoTensor::from_fn(dims, |_, y, x, t| 5.0 + (y as f64 - 1.5) * 0.3 + ((x + t) % 2) as f64 * 0.2);
    // single linear filter: the bias keeps the ReLU on, so f is linear in I
    let spec = NetSpec::new(1, vec![LayerSpec::conv3d(1, [1, 1, 1], [1, 1, 1])]);
    let mut init = NetParams::zeros(&spec, dims).unwrap();
    init.layers[0].biases[0] = 100.0;
    let cfg = TrainConfig {
        iterations: 500,
        langevin_steps: 20,
        num_chains: 3,
        learning_rate: 2e-3,
        layer_rate_scales: vec![1.0],
        epsilon: Some(0.5),
        seed: 5,
        ..TrainConfig::default()
    };
    let sum_obs: f64 = observed.data().iter().sum();
    // H for this filter: (sum of I, number of positions); the count cancels
    let oracle = |chains: &[VideoTensor]| {
        let syn = chains.iter().map(|c| c.data().iter().sum::<f64>()).sum::<f64>() / chains.len() as f64;
        (sum_obs - syn).abs()
    };
    let mut history = Vec::new();
    let state = train_with_hook(&spec, std::slice::from_ref(&observed), &cfg, Some(init), &mut |s| {
        history.push(oracle(&s.chains.chains));
        Ok(())
    })
    .unwrap();
    let (first, last) = (history[0], *history.last().unwrap());
    let agree = state
        .diagnostics
        .iter()
        .zip(&history)
        .all(|(d, o)| (d.grad_norm - o).abs() <= 1e-9 * o.max(1.0));
    let reduction = 1.0 - last / first;
    let elapsed = start.elapsed();
    let pass = agree && reduction >= 0.9 && elapsed < Duration::from_secs(120);
    report(
        5,
        "moment matching",
        pass,
        &format!("|H_obs - H_syn| {first:.3} -> {last:.3} ({:.1}% reduction in 500 iterations), logged norms match oracle: {agree}", 100.0 * reduction),
        elapsed,
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 6, 7

const SIDE: usize = 16;

/// Drifting sinusoid, 4 cycles across x and 1 down y per frame, moving 2
/// cycles per 16 frames.
fn periodic_pattern() -> VideoTensor {
    VideoTensor::from_fn(Dims::new(1, SIDE, SIDE, SIDE), |_, y, x, t| {
        (128.0 + 50.0 * (2.0 * PI * (4.0 * x as f64 + y as f64 - 2.0 * t as f64) / SIDE as f64).sin()).round()
    })
}

fn pattern_net() -> NetSpec {
    NetSpec::new(1, vec![LayerSpec::conv3d(8, [4, 4, 4], [2, 2, 2]), LayerSpec::conv3d(4, [2, 2, 2], [1, 1, 1])])
}

fn pattern_config(iterations: usize) -> TrainConfig {
    TrainConfig {
        iterations,
        langevin_steps: 20,
        num_chains: 3,
        learning_rate: 2e-6,
        epsilon: Some(1.0),
        seed: 1,
        ..TrainConfig::default()
    }
}

/// Naive DFT magnitude at spatial frequency (ky, kx), summed over frames.
fn spatial_magnitude(v: &VideoTensor, ky: usize, kx: usize) -> f64 {
    let d = v.dims();
    (0..d.frames)
        .map(|t| {
            let (mut re, mut im) = (0.0, 0.0);
            for y in 0..d.height {
                for x in 0..d.width {
                    let a = -2.0 * PI * ((ky * y) as f64 / d.height as f64 + (kx * x) as f64 / d.width as f64);
                    re += v.get(0, y, x, t) * a.cos();
                    im += v.get(0, y, x, t) * a.sin();
                }
            }
            re.hypot(im)
        })
        .sum()
}

/// Naive DFT magnitude at temporal frequency k, summed over pixels.
fn temporal_magnitude(v: &VideoTensor, k: usize) -> f64 {
    let d = v.dims();
    let mut total = 0.0;
    for y in 0..d.height {
        for x in 0..d.width {
            let (mut re, mut im) = (0.0, 0.0);
            for t in 0..d.frames {
                let a = -2.0 * PI * (k * t) as f64 / d.frames as f64;
                re += v.get(0, y, x, t) * a.cos();
                im += v.get(0, y, x, t) * a.sin();
            }
            total += re.hypot(im);
        }
    }
    total
}

/// Dominant non-DC frequencies; each is folded onto its conjugate
/// (real signals have equal magnitude at k and -k).
fn dominant_frequencies(v: &VideoTensor) -> ((usize, usize), usize) {
    let d = v.dims();
    let fold = |k: usize, n: usize| k.min((n - k) % n);
    let mut best = (f64::NEG_INFINITY, (0, 0));
    for ky in 0..d.height {
        for kx in 0..d.width {
            if ky == 0 && kx == 0 {
                continue;
            }
            let m = spatial_magnitude(v, ky, kx);
            if m > best.0 {
                best = (m, (ky, kx));
            }
        }
    }
    let (ky, kx) = best.1;
    // fold the pair (ky, kx) ~ (-ky, -kx) onto a canonical representative
    let neg = ((d.height - ky) % d.height, (d.width - kx) % d.width);
    let spatial = if (ky, kx) <= neg { (ky, kx) } else { neg };
    let temporal = (1..d.frames)
        .map(|k| (temporal_magnitude(v, k), k))
        .fold((f64::NEG_INFINITY, 0), |a, b| if b.0 > a.0 { b } else { a })
        .1;
    (spatial, fold(temporal, d.frames))
}

#[test]
fn c06_desk_scale_synthesis() {
    let start = Instant::now();
    let video = periodic_pattern();
    let stats = PreprocessStats::fit(std::slice::from_ref(&video), None, Preprocessing::MeanSubtract).unwrap();
    let centered = stats.apply(&video).unwrap();
    let truth = dominant_frequencies(&centered);
    let state = train_with_hook(&pattern_net(), &[centered], &pattern_config(300), None, &mut |_| Ok(())).unwrap();
    let found: Vec<_> = state.chains.chains.iter().map(dominant_frequencies).collect();
    let elapsed = start.elapsed();
    let pass = truth == ((1, 4), 2) && found.iter().all(|f| *f == truth) && elapsed < Duration::from_secs(600);
    report(6, "desk-scale synthesis", pass, &format!("training (spatial, temporal) {truth:?}, synthesized {found:?}"), elapsed);
    assert!(pass);
}

#[test]
fn c07_recovery_ordering() {
    let start = Instant::now();
    let video = periodic_pattern();
    let dims = video.dims();
    let spec = OcclusionSpec::SaltPepper { block: (3, 3), coverage: 0.3 };
    let mask = make_mask(dims, &spec, &mut stream_rng(0, 0, Stream::Mask)).unwrap();
    let frac = mask.occluded_fraction();

    let fill = recovery_error(&video, &fill_occluded(&video, &mask).unwrap(), &mask).unwrap();
    // the baseline gets its best smoothing weight from a small grid
    let mrf_best = |potential: Potential| {
        [0.1, 1.0, 10.0]
            .iter()
            .map(|&lambda| {
                let cfg = MrfConfig { potential, lambda, ..MrfConfig::default() };
                let r = mrf_recover(&video, &mask, &cfg, &mut stream_rng(0, 0, Stream::Gibbs)).unwrap();
                recovery_error(&video, &r, &mask).unwrap()
            })
            .fold(f64::INFINITY, f64::min)
    };
    let (l1, l2) = (mrf_best(Potential::L1), mrf_best(Potential::L2));

    let stats = PreprocessStats::fit(std::slice::from_ref(&video), Some(std::slice::from_ref(&mask)), Preprocessing::MeanSubtract).unwrap();
    let centered = stats.apply(&video).unwrap();
    let state = train_with_recovery(&pattern_net(), &[centered], std::slice::from_ref(&mask), &pattern_config(400)).unwrap();
    let ours = recovery_error(&video, &stats.invert(&state.recovered[0]).unwrap(), &mask).unwrap();
    let elapsed = start.elapsed();
    let pass = (0.3..0.33).contains(&frac) && ours < l1 && ours < l2 && ours < fill && elapsed < Duration::from_secs(900);
    report(
        7,
        "recovery ordering",
        pass,
        &format!("{:.1}% occluded; mean abs error ours {ours:.2}, mrf_l1 {l1:.2}, mrf_l2 {l2:.2}, fill {fill:.2}", 100.0 * frac),
        elapsed,
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 8

fn brute_conditional(neighbors: &[f64], potential: Potential, lambda: f64, levels: usize) -> Vec<f64> {
    let cost = |v: f64| -> f64 {
        neighbors
            .iter()
            .map(|n| match potential {
                Potential::L1 => (v - n).abs(),
                Potential::L2 => (v - n) * (v - n),
            })
            .sum::<f64>()
            * lambda
    };
    let costs: Vec<f64> = (0..levels).map(|v| cost(v as f64)).collect();
    let lo = costs.iter().copied().fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = costs.iter().map(|c| (lo - c).exp()).collect();
    let z: f64 = w.iter().sum();
    w.iter().map(|x| x / z).collect()
}

fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

#[test]
fn c08_mrf_baseline() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut worst_site = 0.0f64;
    for i in 0..200 {
        let k = 1 + i % 6;
        let neighbors: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..255.0)).collect();
        let potential = if i % 2 == 0 { Potential::L1 } else { Potential::L2 };
        let lambda = [0.003, 0.05, 0.4, 2.0][i % 4];
        let cfg = MrfConfig { potential, lambda, ..MrfConfig::default() };
        let p = gibbs_conditional(&neighbors, &cfg);
        let q = brute_conditional(&neighbors, potential, lambda, 256);
        worst_site = worst_site.max(p.iter().zip(&q).fold(0.0, |m, (a, b)| m.max((a - b).abs())));
    }

    // two occluded sites above two observed ones on a 2x2 single-frame grid
    let (a, b) = (3.0, 12.0);
    let dims = Dims::new(1, 2, 2, 1);
    let video = VideoTensor::from_vec(dims, vec![0.0, 0.0, a, b]).unwrap();
    let mut mask = MaskTensor::all_observed(2, 2, 1);
    mask.set_observed(0, 0, 0, false);
    mask.set_observed(0, 1, 0, false);
    let mut worst_tv = 0.0f64;
    for (potential, lambda) in [(Potential::L1, 0.25), (Potential::L2, 0.03)] {
        let levels = 16;
        let phi = |d: f64| match potential {
            Potential::L1 => d.abs(),
            Potential::L2 => d * d,
        };
        let mut joint = vec![vec![0.0; levels]; levels];
        for (u, row) in joint.iter_mut().enumerate() {
            for (v, cell) in row.iter_mut().enumerate() {
                let (u, v) = (u as f64, v as f64);
                *cell = (-lambda * (phi(u - a) + phi(v - b) + phi(u - v))).exp();
            }
        }
        let z: f64 = joint.iter().flatten().sum();
        let exact1: Vec<f64> = joint.iter().map(|r| r.iter().sum::<f64>() / z).collect();
        let exact2: Vec<f64> = (0..levels).map(|v| joint.iter().map(|r| r[v]).sum::<f64>() / z).collect();

        let cfg = MrfConfig { potential, lambda, levels, sweeps: 1, estimate: Estimate::LastSample };
        let mut sampler = GibbsSampler::new(&video, &mask, &cfg).unwrap();
        let mut grng = stream_rng(8, 0, Stream::Gibbs);
        let (mut h1, mut h2) = (vec![0.0; levels], vec![0.0; levels]);
        let sweeps = 200_000;
        for _ in 0..1_000 {
            sampler.sweep(&mut grng);
        }
        for _ in 0..sweeps {
            sampler.sweep(&mut grng);
            h1[sampler.state().get(0, 0, 0, 0) as usize] += 1.0 / sweeps as f64;
            h2[sampler.state().get(0, 0, 1, 0) as usize] += 1.0 / sweeps as f64;
        }
        worst_tv = worst_tv.max(total_variation(&h1, &exact1)).max(total_variation(&h2, &exact2));
    }
    let elapsed = start.elapsed();
    let pass = worst_site <= 1e-12 && worst_tv <= 0.02 && elapsed < Duration::from_secs(120);
    report(
        8,
        "MRF baseline",
        pass,
        &format!("single-site max abs diff {worst_site:.2e} (tol 1e-12), two-site marginal TV {worst_tv:.4} (tol 0.02)"),
        elapsed,
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 9

#[test]
fn c09_algorithm_reduction() {
    let start = Instant::now();
    let dims = Dims::new(1, 6, 6, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let videos: Vec<VideoTensor> = (0..3)
        .map(|_| VideoTensor::from_fn(dims, |_, _, _, _| rng.random_range(-1.0..1.0)))
        .collect();
    let spec = NetSpec::new(1, vec![LayerSpec::conv3d(3, [3, 3, 2], [1, 1, 1]), LayerSpec::conv3d(2, [2, 2, 2], [2, 2, 1])]);
    let cfg = TrainConfig {
        iterations: 12,
        langevin_steps: 4,
        learning_rate: 0.01,
        scheme: Scheme::LayerByLayer,
        layer_add_every: 5,
        minibatch_size: Some(2),
        epsilon: Some(0.3),
        seed: 9,
        ..TrainConfig::default()
    };
    let snapshot = |s: &stgconvnet::learner::TrainState| {
        let mut bytes = s.params.to_bytes();
        for c in &s.chains.chains {
            bytes.extend(c.data().iter().flat_map(|x| x.to_bits().to_le_bytes()));
        }
        bytes
    };
    let mut plain = Vec::new();
    train_with_hook(&spec, &videos, &cfg, None, &mut |s| {
        plain.push(snapshot(s));
        Ok(())
    })
    .unwrap();
    let masks = vec![MaskTensor::all_observed(6, 6, 5); videos.len()];
    let mut masked = Vec::new();
    let rec = train_with_recovery_hook(&spec, &videos, &masks, &cfg, None, &mut |s| {
        masked.push(snapshot(s));
        Ok(())
    })
    .unwrap();
    let same = plain == masked && rec.recovered == videos;
    let elapsed = start.elapsed();
    report(
        9,
        "algorithm reduction",
        same,
        &format!("{} iterations, parameter and chain trajectories bit-identical: {same}", plain.len()),
        elapsed,
    );
    assert!(same);
}

// ---------------------------------------------------------------- 10

fn bin(args: &[&str]) -> Vec<u8> {
    let out = Command::new(env!("CARGO_BIN_EXE_stgconvnet"))
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

/// Every file under `dir`, relative path and bytes; `dir` itself is blanked
/// out of the contents so two output directories compare equal.
fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let text = fs::read(&p).unwrap();
                let needle = dir.to_str().unwrap().as_bytes();
                let mut clean = Vec::with_capacity(text.len());
                let mut i = 0;
                while i < text.len() {
                    if text[i..].starts_with(needle) {
                        clean.extend_from_slice(b"<out>");
                        i += needle.len();
                    } else {
                        clean.push(text[i]);
                        i += 1;
                    }
                }
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), clean));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn c10_format_and_determinism() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let mut rng = ChaCha8Rng::seed_from_u64(1010);

    // STV1 round trips
    let mut exact = true;
    for (i, dims) in [Dims::new(1, 5, 7, 3), Dims::new(3, 4, 4, 2), Dims::new(2, 1, 9, 6)].into_iter().enumerate() {
        let bytes = VideoTensor::from_fn(dims, |_, _, _, _| rng.random_range(0..=255u8) as f64);
        let floats = VideoTensor::from_fn(dims, |_, _, _, _| (rng.sample::<f64, _>(StandardNormal) * 1e3) as f32 as f64);
        for (v, dtype) in [(bytes, StvDtype::U8), (floats, StvDtype::F32)] {
            let p = root.join(format!("rt_{i}_{dtype:?}.stv"));
            write_stv(&v, &p, dtype).unwrap();
            let back = read_stv(&p).unwrap();
            exact &= back.dims() == v.dims() && back.data().iter().zip(v.data()).all(|(a, b)| a.to_bits() == b.to_bits());
            let q = root.join(format!("rt_{i}_{dtype:?}_again.stv"));
            write_stv(&back, &q, dtype).unwrap();
            exact &= fs::read(&p).unwrap() == fs::read(&q).unwrap();
        }
    }

    // every seeded command twice
    let video = root.join("clip.stv");
    let v = VideoTensor::from_fn(Dims::new(1, 8, 8, 6), |_, y, x, t| ((y * 31 + x * 17 + t * 11) % 256) as f64);
    write_stv(&v, &video, StvDtype::U8).unwrap();
    let cfg = root.join("run.cfg");
    fs::write(&cfg, "layer=conv3d filters=3 kernel=3x3x2 stride=1x1x1\niterations=4\nlangevin_steps=3\nseed=11\nchain_init=noise\nlearning_rate=1e-4\n").unwrap();
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let mut reproducible = true;
    let mut commands = 0;
    type ArgsFor<'a> = Box<dyn Fn(&Path) -> Vec<String> + 'a>;
    let runs: Vec<ArgsFor> = vec![
        Box::new(|o| vec!["train".into(), "--config".into(), s(&cfg), "--out".into(), s(o), s(&video)]),
        Box::new(|o| {
            vec![
                "recover".into(), "--config".into(), s(&cfg), "--occlusion".into(), "salt_pepper:0.3:2x2".into(),
                "--sweeps".into(), "6".into(), "--estimate".into(), "mean_of_last:3".into(), "--out".into(), s(o), s(&video),
            ]
        }),
        Box::new(|o| {
            vec![
                "baseline".into(), "--potential".into(), "l1".into(), "--seed".into(), "4".into(), "--sweeps".into(), "5".into(),
                "--estimate".into(), "last_sample".into(), "--occlusion".into(), "single_region:3x3".into(), "--out".into(), s(o), s(&video),
            ]
        }),
    ];
    for (i, make) in runs.iter().enumerate() {
        let (a, b) = (root.join(format!("a{i}")), root.join(format!("b{i}")));
        for o in [&a, &b] {
            let args = make(o);
            bin(&args.iter().map(String::as_str).collect::<Vec<_>>());
        }
        reproducible &= tree(&a) == tree(&b);
        commands += 1;
    }
    let ck = root.join("a0/checkpoint");
    let (a, b) = (root.join("sa"), root.join("sb"));
    for o in [&a, &b] {
        bin(&["synthesize", "--checkpoint", &s(&ck), "--seed", "2", "--steps", "7", "--init", "noise", "--out", &s(o)]);
    }
    reproducible &= tree(&a) == tree(&b);
    let g1 = bin(&["gradcheck", "--nets", "4", "--seed", "6"]);
    let g2 = bin(&["gradcheck", "--nets", "4", "--seed", "6"]);
    reproducible &= g1 == g2;
    commands += 2;
    let elapsed = start.elapsed();
    let pass = exact && reproducible;
    report(
        10,
        "format and determinism",
        pass,
        &format!("STV1 u8/f32 round trips bit-exact: {exact}; {commands} seeded commands bit-reproducible: {reproducible}"),
        elapsed,
    );
    assert!(pass);
}
