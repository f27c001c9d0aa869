//! One PASS/FAIL line per acceptance criterion. `ACCEPTANCE_ONLY=<n>` runs a
//! single criterion; `ACCEPTANCE_STRICT=1` exits non-zero on any FAIL.

use std::time::Instant;

use conda_core::concat::{band_ranges, concatenate, AssignmentPattern, ConcatTemplate, Domain};
use conda_core::metrics::ConfusionMatrix;
use conda_core::network::layers::{
    concat_channels, leaky_relu, leaky_relu_backward, upsample_nearest, upsample_nearest_backward,
};
use conda_core::network::{Backbone, BackboneConfig, ParamKind, Real, RegularizedConv, Tensor};
use conda_core::pipeline::{cmd_pretrain, cmd_selftrain, generate_domains, MixingChoice, Precision, RunConfig};
use conda_core::pointcloud::{LabelMap, Projection, RangeImage, RvSample, RV_CHANNELS};
use conda_core::selftrain::{
    acceptance, class_thresholds, combined_step_loss, cross_entropy, entropy_aggregate, entropy_map,
    generate_pseudolabels, pretrain, run_conda, sample_uncertainty, MixingMode, NoopObserver, ProbMap, SigmaGate,
    SigmaMode,
};
use conda_core::IGNORE;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- 1

fn oracle_entropy(p: &[f64]) -> f64 {
    // base-C logarithm evaluated directly
    let c = p.len() as f64;
    p.iter().filter(|&&v| v > 0.0).map(|&v| v * (1.0 / v).log2() / c.log2()).sum()
}

fn single_pixel(p: &[f64]) -> ProbMap {
    ProbMap::new(p.len(), 1, 1, p.to_vec(), vec![true]).unwrap()
}

fn criterion_1() -> Outcome {
    for c in 2..=32 {
        let e = entropy_map(&single_pixel(&vec![1.0 / c as f64; c])).unwrap()[0];
        check((e - 1.0).abs() < 1e-9, || format!("uniform C={c}: {e}"))?;
        for hot in [0, c - 1] {
            let mut p = vec![0.0; c];
            p[hot] = 1.0;
            let e = entropy_map(&single_pixel(&p)).unwrap()[0];
            check(e == 0.0, || format!("one-hot C={c}: {e}"))?;
        }
    }
    let e = entropy_map(&single_pixel(&[0.9, 0.1])).unwrap()[0];
    let o = oracle_entropy(&[0.9, 0.1]);
    check((e - 0.4690).abs() <= 1e-4 && (e - o).abs() < 1e-12, || format!("(0.9, 0.1): {e} vs oracle {o}"))?;
    Ok(format!("uniform C=2..32 within 1e-9, one-hot 0, (0.9,0.1) -> {e:.6}"))
}

// ---------------------------------------------------------------- 2

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Worst relative error between analytic and central-difference gradients of
/// `f` with respect to the entries of `x`.
fn fd_check(x: &Tensor<f64>, analytic: &Tensor<f64>, f: &mut dyn FnMut(&Tensor<f64>) -> f64) -> f64 {
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let mut xp = x.clone();
        xp.data_mut()[i] += h;
        let mut xm = x.clone();
        xm.data_mut()[i] -= h;
        let num = (f(&xp) - f(&xm)) / (2.0 * h);
        let a = analytic.data()[i];
        let rel = (a - num).abs() / a.abs().max(num.abs()).max(1e-4);
        worst = worst.max(rel);
    }
    worst
}

fn conv_fd(rng: &mut ChaCha8Rng, k: usize, stride: (usize, usize), pad: (usize, usize)) -> f64 {
    let (cin, cout, h, w) = (3, 4, 6, 7);
    let x = rand_tensor(rng, &[cin, h, w], -1.0, 1.0);
    let kernel = rand_tensor(rng, &[cout, cin, k, k], -0.5, 0.5);
    let modulator = rand_tensor(rng, &[cout, cin, k, k], 0.5, 1.5);
    let bias = rand_tensor(rng, &[cout], -0.2, 0.2);
    let layer = RegularizedConv::with_modulator(kernel.clone(), modulator.clone(), Some(bias.clone()), stride, pad).unwrap();
    let out = layer.forward(&x).unwrap();
    let weights = rand_tensor(rng, out.shape(), -1.0, 1.0);
    let g = layer.backward(&x, &weights).unwrap();
    let build = |k: &Tensor<f64>, m: &Tensor<f64>, b: &Tensor<f64>| {
        RegularizedConv::with_modulator(k.clone(), m.clone(), Some(b.clone()), stride, pad).unwrap()
    };
    let mut worst = fd_check(&x, g.input.as_ref().unwrap(), &mut |xv| dot(&layer.forward(xv).unwrap(), &weights));
    worst = worst.max(fd_check(&kernel, &g.kernel, &mut |kv| {
        dot(&build(kv, &modulator, &bias).forward(&x).unwrap(), &weights)
    }));
    worst = worst.max(fd_check(&modulator, &g.modulator, &mut |mv| {
        dot(&build(&kernel, mv, &bias).forward(&x).unwrap(), &weights)
    }));
    worst.max(fd_check(&bias, g.bias.as_ref().unwrap(), &mut |bv| {
        dot(&build(&kernel, &modulator, bv).forward(&x).unwrap(), &weights)
    }))
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut report = Vec::new();

    let conv = [conv_fd(&mut rng, 3, (1, 1), (1, 1)), conv_fd(&mut rng, 3, (2, 1), (1, 1)), conv_fd(&mut rng, 3, (1, 2), (1, 1))]
        .into_iter()
        .fold(0.0, f64::max);
    report.push(("conv", conv));

    // keep inputs away from the kink
    let x = Tensor::from_vec(
        &[2, 3, 4],
        (0..24).map(|_| {
            let v: f64 = rng.random_range(0.05..1.0);
            if rng.random::<bool>() { v } else { -v }
        }).collect(),
    )
    .unwrap();
    let wts = rand_tensor(&mut rng, &[2, 3, 4], -1.0, 1.0);
    let g = leaky_relu_backward(&x, &wts, 0.01);
    report.push(("leaky_relu", fd_check(&x, &g, &mut |xv| dot(&leaky_relu(xv, 0.01), &wts))));

    let x = rand_tensor(&mut rng, &[3, 2, 3], -1.0, 1.0);
    let wts = rand_tensor(&mut rng, &[3, 4, 12], -1.0, 1.0);
    let g = upsample_nearest_backward(&wts, 2, 3).unwrap();
    report.push(("upsample", fd_check(&x, &g, &mut |xv| dot(&upsample_nearest(xv, 4, 12).unwrap(), &wts))));

    // head: upsample two taps, stack, 1x1 convolution
    let a = rand_tensor(&mut rng, &[3, 4, 8], -1.0, 1.0);
    let b = rand_tensor(&mut rng, &[2, 2, 4], -1.0, 1.0);
    let hk = rand_tensor(&mut rng, &[4, 5, 1, 1], -0.5, 0.5);
    let hm = rand_tensor(&mut rng, &[4, 5, 1, 1], 0.5, 1.5);
    let head = RegularizedConv::with_modulator(hk, hm, Some(rand_tensor(&mut rng, &[4], -0.1, 0.1)), (1, 1), (0, 0)).unwrap();
    let run_head = |a: &Tensor<f64>, b: &Tensor<f64>| {
        let stacked = concat_channels(&[a.clone(), upsample_nearest(b, 4, 8).unwrap()]).unwrap();
        head.forward(&stacked).unwrap()
    };
    let wts = rand_tensor(&mut rng, &[4, 4, 8], -1.0, 1.0);
    let stacked = concat_channels(&[a.clone(), upsample_nearest(&b, 4, 8).unwrap()]).unwrap();
    let gin = head.backward(&stacked, &wts).unwrap().input.unwrap();
    let (ga, gb_up) = (
        Tensor::from_vec(&[3, 4, 8], gin.data()[..96].to_vec()).unwrap(),
        Tensor::from_vec(&[2, 4, 8], gin.data()[96..].to_vec()).unwrap(),
    );
    let gb = upsample_nearest_backward(&gb_up, 2, 4).unwrap();
    let head_err = fd_check(&a, &ga, &mut |av| dot(&run_head(av, &b), &wts))
        .max(fd_check(&b, &gb, &mut |bv| dot(&run_head(&a, bv), &wts)));
    report.push(("head", head_err));

    for (name, e) in &report {
        check(*e < 1e-4, || format!("{name}: max relative error {e:.3e}"))?;
    }

    // end to end on a 6x8x16 input, every parameter tensor
    let cfg = BackboneConfig::desk(8, 16, 3).with_channels([4, 4, 6, 6, 6, 6, 6]);
    let mut net = Backbone::<f64>::init(&cfg, 3).unwrap();
    for (p, (_, kind)) in net.params_mut().into_iter().zip(cfg_layout(&cfg)) {
        if kind != ParamKind::Kernel {
            for v in p.data_mut() {
                *v += rng.random_range(-0.3..0.3);
            }
        }
    }
    let x = rand_tensor(&mut rng, &[RV_CHANNELS, 8, 16], -1.0, 1.0);
    let labels = LabelMap::from_vec(
        8,
        16,
        (0..128).map(|i| if i % 7 == 0 { IGNORE } else { rng.random_range(0..3u16) }).collect(),
    )
    .unwrap();
    let loss = |n: &Backbone<f64>| cross_entropy(&n.infer(&x).unwrap(), &labels).unwrap().0;
    let (logits, tape) = net.forward(&x).unwrap();
    let (_, g_logits) = cross_entropy(&logits, &labels).unwrap();
    let grads = net.backward(&tape, &g_logits).unwrap();
    let mut worst: f64 = 0.0;
    for (pi, g) in grads.iter().enumerate() {
        let base = net.params()[pi].clone();
        let mut probe = net.clone();
        worst = worst.max(fd_check(&base, g, &mut |pv| {
            probe.params_mut()[pi].data_mut().copy_from_slice(pv.data());
            loss(&probe)
        }));
    }
    check(worst < 1e-3, || format!("end-to-end: max relative error {worst:.3e}"))?;
    Ok(format!(
        "{}, backbone {worst:.2e} over {} parameters",
        report.iter().map(|(n, e)| format!("{n} {e:.2e}")).collect::<Vec<_>>().join(", "),
        net.parameter_count()
    ))
}

fn cfg_layout(cfg: &BackboneConfig) -> Vec<(String, ParamKind)> {
    Backbone::<f64>::init(cfg, 0).unwrap().param_layout()
}

// ---------------------------------------------------------------- 3

fn fold_gap<T: Real>(rng: &mut ChaCha8Rng) -> f64 {
    let cfg = BackboneConfig::desk(16, 64, 5).with_channels([8, 8, 8, 16, 16, 16, 16]);
    let mut net = Backbone::<T>::init(&cfg, 5).unwrap();
    let layout = net.param_layout();
    for (p, (_, kind)) in net.params_mut().into_iter().zip(layout) {
        if kind == ParamKind::Modulator {
            for v in p.data_mut() {
                *v = T::cast(rng.random_range(0.5..1.5));
            }
        }
    }
    let mut folded = net.clone();
    folded.fold().unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let x = Tensor::<T>::from_f64(
            &[RV_CHANNELS, 16, 64],
            &(0..RV_CHANNELS * 16 * 64).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<_>>(),
        )
        .unwrap();
        let a = net.infer(&x).unwrap();
        let b = folded.infer(&x).unwrap();
        worst = worst.max(a.max_abs_diff(&b));
    }
    worst
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let g32 = fold_gap::<f32>(&mut rng);
    let g64 = fold_gap::<f64>(&mut rng);
    check(g32 <= 1e-6, || format!("f32 gap {g32:e}"))?;
    check(g64 == 0.0, || format!("f64 gap {g64:e}"))?;
    Ok(format!("100 inputs each: f32 max gap {g32:e}, f64 max gap {g64:e}"))
}

// ---------------------------------------------------------------- 4

fn random_sample(rng: &mut ChaCha8Rng, p: Projection) -> RvSample {
    let hw = p.h * p.w;
    let mut channels = vec![0.0f32; RV_CHANNELS * hw];
    let mut index = vec![u32::MAX; hw];
    let mut labels = vec![IGNORE; hw];
    for i in 0..hw {
        if rng.random::<f64>() < 0.7 {
            for c in 0..RV_CHANNELS - 1 {
                channels[c * hw + i] = rng.random_range(-5.0..5.0);
            }
            channels[(RV_CHANNELS - 1) * hw + i] = 1.0;
            index[i] = rng.random_range(0..10_000);
            labels[i] = rng.random_range(0..5);
        }
    }
    RvSample::new(
        RangeImage::from_parts(p, channels, index).unwrap(),
        LabelMap::from_vec(p.h, p.w, labels).unwrap(),
    )
    .unwrap()
}

/// Band of `i` when `len` cells are cut into `parts` bands of `len / parts`,
/// the last band absorbing the remainder.
fn band_of(i: usize, len: usize, parts: usize) -> usize {
    (i / (len / parts)).min(parts - 1)
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for case in 0..100 {
        let (m, n) = (rng.random_range(1..=4), rng.random_range(1..=4));
        let (h, w) = (m + rng.random_range(0..6), n + rng.random_range(0..10));
        let p = Projection::new(h, w, 0.2, -0.4).unwrap();
        let pattern = if rng.random::<bool>() {
            AssignmentPattern::Checkerboard
        } else {
            AssignmentPattern::Fixed(
                (0..m * n)
                    .map(|_| if rng.random::<bool>() { Domain::Source } else { Domain::Target })
                    .collect(),
            )
        };
        let template = ConcatTemplate::new(m, n, pattern.clone()).unwrap();
        let (b_s, b_t) = (rng.random_range(1..=4), rng.random_range(1..=4));
        let source: Vec<_> = (0..b_s).map(|_| random_sample(&mut rng, p)).collect();
        let target: Vec<_> = (0..b_t).map(|_| random_sample(&mut rng, p)).collect();
        let seed = rng.random();
        let out = concatenate(&source, &target, &template, seed).unwrap();
        check(out.len() == b_s + b_t, || format!("case {case}: {} outputs", out.len()))?;
        let assignments = template.assign(b_s, b_t, seed).unwrap();
        for (len, parts) in [(h, m), (w, n)] {
            for (b, range) in band_ranges(len, parts).unwrap().into_iter().enumerate() {
                check(range.clone().all(|i| band_of(i, len, parts) == b), || format!("case {case}: band split"))?;
            }
        }
        for (o, (sample, a)) in out.iter().zip(&assignments).enumerate() {
            let (anchor, own) = if o < b_s { (Domain::Source, o) } else { (Domain::Target, o - b_s) };
            for r in 0..h {
                for c in 0..w {
                    let region = band_of(r, h, m) * n + band_of(c, w, n);
                    let want_domain = match &pattern {
                        AssignmentPattern::Checkerboard => {
                            if (band_of(r, h, m) + band_of(c, w, n)) % 2 == 0 {
                                anchor
                            } else if anchor == Domain::Source {
                                Domain::Target
                            } else {
                                Domain::Source
                            }
                        }
                        AssignmentPattern::Fixed(cells) => cells[region],
                    };
                    let donor = a.regions[region];
                    check(donor.domain == want_domain, || format!("case {case}: region domain"))?;
                    if want_domain == anchor {
                        check(donor.index == own, || format!("case {case}: anchor region not from own sample"))?;
                    }
                    let src = match donor.domain {
                        Domain::Source => &source[donor.index],
                        Domain::Target => &target[donor.index],
                    };
                    let i = r * w + c;
                    for ch in 0..RV_CHANNELS {
                        check(
                            sample.image.channels()[ch * h * w + i].to_bits() == src.image.channels()[ch * h * w + i].to_bits(),
                            || format!("case {case}: channel {ch} at ({r},{c})"),
                        )?;
                    }
                    check(sample.image.point_index()[i] == src.image.point_index()[i], || format!("case {case}: index"))?;
                    check(sample.labels.as_slice()[i] == src.labels.as_slice()[i], || format!("case {case}: label"))?;
                }
            }
        }
    }
    Ok("100 random cases with m, n in 1..=4 match the per-pixel oracle".into())
}

// ---------------------------------------------------------------- 5

fn random_maps(rng: &mut ChaCha8Rng, count: usize, classes: usize, pixels: usize) -> Vec<ProbMap> {
    (0..count)
        .map(|_| {
            let mut probs = vec![0.0; classes * pixels];
            for i in 0..pixels {
                let raw: Vec<f64> = (0..classes).map(|_| rng.random::<f64>().powi(3) + 1e-6).collect();
                let s: f64 = raw.iter().sum();
                for c in 0..classes {
                    probs[c * pixels + i] = raw[c] / s;
                }
            }
            let occupied = (0..pixels).map(|_| rng.random::<f64>() < 0.6).collect();
            ProbMap::new(classes, 4, pixels / 4, probs, occupied).unwrap()
        })
        .collect()
}

fn ceil_count(k: f64, n: usize) -> usize {
    // exact for the dyadic proportions used here
    (k * n as f64).ceil() as usize
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ks = [0.25, 0.5, 0.75, 1.0];
    let mut checked = 0;
    for trial in 0..20 {
        let maps = random_maps(&mut rng, 6, 5, 64);
        let mut previous: Option<Vec<LabelMap>> = None;
        for &k in &ks {
            let th = class_thresholds(&maps, 5, k).unwrap();
            let labels: Vec<_> = maps.iter().map(|m| generate_pseudolabels(m, &th).unwrap()).collect();
            let acc = acceptance(&maps, &labels, 5);
            for c in 0..5 {
                let n = acc.predicted[c];
                check(acc.accepted[c] == ceil_count(k, n), || {
                    format!("trial {trial}, k={k}, class {c}: {} of {n} accepted", acc.accepted[c])
                })?;
                checked += 1;
            }
            if let Some(prev) = &previous {
                for (a, b) in prev.iter().zip(&labels) {
                    for (&x, &y) in a.as_slice().iter().zip(b.as_slice()) {
                        check(x == IGNORE || x == y, || format!("trial {trial}: k-nesting broken at k={k}"))?;
                    }
                }
            }
            previous = Some(labels);
        }
        let e: Vec<f64> = (0..30).map(|_| (rng.random_range(0..10) as f64) / 10.0).collect();
        let sets: Vec<_> = ks.iter().map(|&v| entropy_aggregate(&e, v).unwrap()).collect();
        for w in sets.windows(2) {
            check(w[0].iter().all(|i| w[1].contains(i)), || format!("trial {trial}: ϖ-nesting broken"))?;
        }
    }
    Ok(format!("{checked} class/proportion cells exact; k- and ϖ-nesting hold over 20 trials"))
}

// ---------------------------------------------------------------- 6

fn oracle_median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for trial in 0..20 {
        let n = rng.random_range(1..25);
        let mut maps = random_maps(&mut rng, n, 4, 36);
        // duplicates force ties
        for i in 0..n / 3 {
            maps[n - 1 - i] = maps[i].clone();
        }
        let medians: Vec<f64> = maps
            .iter()
            .map(|m| {
                oracle_median(
                    (0..m.pixels())
                        .map(|i| oracle_entropy(&(0..m.classes).map(|c| m.prob(c, i)).collect::<Vec<_>>()))
                        .collect(),
                )
            })
            .collect();
        for varpi in [0.25, 0.5, 0.75, 1.0, 0.3] {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| medians[a].partial_cmp(&medians[b]).unwrap().then(a.cmp(&b)));
            let keep = ((varpi * n as f64) - 1e-9).ceil().max(1.0) as usize;
            order.truncate(keep);
            let u: Vec<f64> = maps.iter().map(|m| sample_uncertainty(m).unwrap()).collect();
            for (a, b) in u.iter().zip(&medians) {
                check((a - b).abs() < 1e-12, || format!("trial {trial}: median {a} vs {b}"))?;
            }
            // identical maps must produce identical medians for the tie-break to bite
            let got = entropy_aggregate(&u, varpi).unwrap();
            check(got == order, || format!("trial {trial}, ϖ={varpi}: {got:?} vs {order:?}"))?;
        }
    }
    Ok("20 trials x 5 proportions equal the sort oracle, ties by id".into())
}

// ---------------------------------------------------------------- 7

struct SeedResult {
    source_only: f64,
    baseline: f64,
    conda: f64,
    seconds: f64,
}

fn miou(net: &Backbone<f32>, set: &conda_core::synth::Dataset, p: Projection) -> f64 {
    let mut folded = net.clone();
    folded.fold().unwrap();
    conda_core::selftrain::evaluate(&folded, set, p).unwrap().scores().unwrap().miou * 100.0
}

fn desk_seed(seed: u64) -> SeedResult {
    let t = Instant::now();
    let mut cfg = RunConfig::desk();
    cfg.seed = seed;
    let d = generate_domains(&cfg).unwrap();
    let p = cfg.projection().unwrap();
    let mut net = Backbone::<f32>::init(&cfg.model, seed).unwrap();
    pretrain(&mut net, &d.source, p, &cfg.train, seed, &mut NoopObserver).unwrap();
    let source_only = miou(&net, &d.target_val, p);

    let st = cfg.selftrain_config().unwrap();
    let conda = run_conda(&net, &d.source, &d.target, p, &cfg.train, &st, &mut NoopObserver).unwrap();
    let mut base_cfg = st.clone();
    base_cfg.mixing = MixingMode::Separate;
    let base = run_conda(&net, &d.source, &d.target, p, &cfg.train, &base_cfg, &mut NoopObserver).unwrap();
    SeedResult {
        source_only,
        baseline: miou(&base.weights, &d.target_val, p),
        conda: miou(&conda.weights, &d.target_val, p),
        seconds: t.elapsed().as_secs_f64(),
    }
}

fn criterion_7() -> Outcome {
    let results: Vec<SeedResult> = (1..=3).map(desk_seed).collect();
    let mut lines = Vec::new();
    for (s, r) in results.iter().enumerate() {
        lines.push(format!(
            "seed {}: source-only {:.2}, baseline {:.2}, concat {:.2} ({:.0} s)",
            s + 1,
            r.source_only,
            r.baseline,
            r.conda,
            r.seconds
        ));
    }
    let detail = lines.join("; ");
    let min_gain = results.iter().map(|r| r.conda - r.source_only).fold(f64::INFINITY, f64::min);
    let margin = results.iter().map(|r| r.conda - r.baseline).sum::<f64>() / results.len() as f64;
    let verdict = |ok: bool| if ok { "ok" } else { "FAILED" };
    let summary = format!(
        "(a) min gain over source-only {min_gain:.2} >= 3 {}; (b) mean margin over baseline {margin:.2} >= 1 {}; {detail}",
        verdict(min_gain >= 3.0),
        verdict(margin >= 1.0)
    );
    check(min_gain >= 3.0 && margin >= 1.0, || summary.clone())?;
    Ok(summary)
}

// ---------------------------------------------------------------- 8

fn criterion_8() -> Outcome {
    let mut out = Vec::new();
    for sigma in [0.25, 0.5] {
        let gate = SigmaGate::new(sigma, SigmaMode::Gate).map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let opened = (0..10_000).filter(|_| combined_step_loss(0.0, 1.0, &gate, &mut rng) == 1.0).count();
        let f = opened as f64 / 10_000.0;
        check((f - sigma).abs() <= 0.02, || format!("σ={sigma}: frequency {f}"))?;
        out.push(format!("σ={sigma} -> {f:.4}"));
    }
    Ok(out.join(", "))
}

// ---------------------------------------------------------------- 9

fn criterion_9() -> Outcome {
    let mut cm = ConfusionMatrix::new(2);
    cm.accumulate(&[0, 0, 0, 0, 1, 1, 1, 1], &[0, 0, 0, 1, 0, 1, 1, 1]).unwrap();
    let s = cm.scores().unwrap();
    check(
        s.iou == vec![Some(0.6), Some(0.6)] && (s.miou - 0.6).abs() < 1e-12 && (s.fiou - 0.6).abs() < 1e-12,
        || format!("hand matrix: {s:?}"),
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let truth: Vec<u16> = (0..500).map(|_| rng.random_range(0..4)).collect();
    let mut perfect = ConfusionMatrix::new(4);
    perfect.accumulate(&truth, &truth).unwrap();
    let p = perfect.scores().unwrap();
    check(p.miou == 1.0 && p.fiou == 1.0 && p.iou.iter().all(|v| *v == Some(1.0)), || "perfect prediction".into())?;
    for trial in 0..50 {
        let n = rng.random_range(1..300);
        let t: Vec<u16> = (0..n).map(|_| if rng.random::<f64>() < 0.1 { IGNORE } else { rng.random_range(0..4) }).collect();
        let q: Vec<u16> = (0..n).map(|_| rng.random_range(0..4)).collect();
        let mut whole = ConfusionMatrix::new(4);
        whole.accumulate(&t, &q).unwrap();
        let cut = rng.random_range(0..=n);
        let (mut a, mut b) = (ConfusionMatrix::new(4), ConfusionMatrix::new(4));
        a.accumulate(&t[..cut], &q[..cut]).unwrap();
        b.accumulate(&t[cut..], &q[cut..]).unwrap();
        let mut ab = a.clone();
        ab.merge(&b).unwrap();
        let mut ba = b.clone();
        ba.merge(&a).unwrap();
        let mut seq = ConfusionMatrix::new(4);
        seq.accumulate(&t[..cut], &q[..cut]).unwrap();
        seq.accumulate(&t[cut..], &q[cut..]).unwrap();
        check(ab == whole && ba == whole && seq == whole, || format!("trial {trial}: split at {cut}"))?;
    }
    Ok("hand matrix 0.6/0.6, perfect 1.0, additivity and merge order over 50 splits".into())
}

// ---------------------------------------------------------------- 10

fn criterion_10() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = RunConfig::tiny();
    cfg.precision = Precision::F64;
    cfg.seed = 10;
    cfg.concat.mixing = MixingChoice::Concat;
    cfg.pseudo.sigma = 0.5;
    cfg.train.round_epochs = [2, 2];
    let pre = cmd_pretrain(&cfg, &dir.path().join("pre")).map_err(|e| e.to_string())?;
    let mut digests = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        cmd_selftrain(&cfg, &pre.checkpoint, &out).map_err(|e| e.to_string())?;
        let files = ["w_r1.ckpt", "w_r2.ckpt", "selftrain.csv", "round1/pseudo.json", "round2/pseudo.json"];
        let mut bytes = files
            .iter()
            .map(|f| std::fs::read(out.join(f)).map_err(|e| format!("{f}: {e}")))
            .collect::<Result<Vec<_>, _>>()?;
        // the report names its own checkpoint path, which differs by directory
        let report = std::fs::read_to_string(out.join("report.json")).map_err(|e| e.to_string())?;
        bytes.push(report.replace(out.to_str().unwrap(), "<out>").into_bytes());
        digests.push(bytes);
    }
    check(digests[0] == digests[1], || "selftrain outputs differ between runs".into())?;
    Ok("two f64 selftrain runs: checkpoints, CSV, report and sidecars byte-identical".into())
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("entropy contract", criterion_1),
        ("gradient fidelity", criterion_2),
        ("fold equivalence", criterion_3),
        ("concatenation oracle", criterion_4),
        ("pseudo-label class balance", criterion_5),
        ("entropy aggregator", criterion_6),
        ("desk-scale adaptation", criterion_7),
        ("sigma gate statistics", criterion_8),
        ("metrics", criterion_9),
        ("determinism", criterion_10),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let id = i + 1;
        if only.is_some_and(|o| o != id) {
            continue;
        }
        let t = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {id} ({name}) [{secs:.1} s]: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {id} ({name}) [{secs:.1} s]: {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        // the desk-scale experiment is a measurement, not a regression gate;
        // ACCEPTANCE_STRICT=1 turns any FAIL into a failing exit status
        if std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
            std::process::exit(1);
        }
    } else {
        println!("all acceptance criteria passed");
    }
}
