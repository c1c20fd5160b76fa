//! Checks shared by the individual suites and the acceptance report.
#![allow(dead_code)]

use gait_core::data::{random_identities, synthesize, Dataset, PairLabel, Role};
use gait_core::eval::{build_cache, eer, rank_k, score_matrix, ScoreMatrix};
use gait_core::gradcheck::{check_gradient, random_tensor, GradCheckReport};
use gait_core::layers::{
    conv2d_backward, conv2d_forward, fc_backward, fc_forward, lrn_backward, lrn_forward, maxpool2x2_backward,
    maxpool2x2_forward, relu_backward, relu_forward, ConvLayer, FcLayer, LrnParams,
};
use gait_core::net::{
    compare_backward, compare_logits, compare_traced, embed_backward, embed_traced, forward_pair, ModelParams,
    NetConfig, SimilarityScore,
};
use gait_core::seqpool::{pool, pool_backward, FrameFeature};
use gait_core::train::{pair_loss, pair_loss_grad};
use gait_core::{PoolingMode, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EPS: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn conv_reports(r: &mut ChaCha8Rng) -> Vec<GradCheckReport> {
    let layer = ConvLayer::new(random_tensor(&[3, 2, 7, 7], r), random_tensor(&[3], r)).unwrap();
    let input: Tensor<f64> = random_tensor(&[2, 10, 10], r);
    let weight: Tensor<f64> = random_tensor(&[3, 4, 4], r);
    let (gi, gw, gb) = conv2d_backward(&input, &layer, &weight).unwrap();
    let obj = |x: &Tensor<f64>, l: &ConvLayer<f64>| dot(&conv2d_forward(x, l).unwrap(), &weight);
    vec![
        check_gradient("conv2d.input", &input, &gi, EPS, 1e-4, |x| obj(x, &layer)),
        check_gradient("conv2d.weights", &layer.weights, &gw, EPS, 1e-4, |w| {
            obj(&input, &ConvLayer::new(w.clone(), layer.bias.clone()).unwrap())
        }),
        check_gradient("conv2d.bias", &layer.bias, &gb, EPS, 1e-4, |b| {
            obj(&input, &ConvLayer::new(layer.weights.clone(), b.clone()).unwrap())
        }),
    ]
}

/// Distinct values spaced far beyond `EPS`, so every window has a unique max.
fn strict_max_input(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(r);
    Tensor::new(shape, order.into_iter().map(|i| i as f64 * 0.01 - 0.3).collect()).unwrap()
}

fn maxpool_report(r: &mut ChaCha8Rng) -> GradCheckReport {
    let x = strict_max_input(&[3, 6, 8], r);
    let w: Tensor<f64> = random_tensor(&[3, 3, 4], r);
    let (_, idx) = maxpool2x2_forward(&x).unwrap();
    let g = maxpool2x2_backward(&idx, &w).unwrap();
    check_gradient("maxpool2x2", &x, &g, EPS, 1e-4, |p| dot(&maxpool2x2_forward(p).unwrap().0, &w))
}

fn lrn_report(r: &mut ChaCha8Rng) -> GradCheckReport {
    // Large alpha so the normalization term is not negligible.
    let p = LrnParams::new(2, 2.0, 0.5, 0.75).unwrap();
    let x: Tensor<f64> = random_tensor(&[6, 3, 3], r);
    let w: Tensor<f64> = random_tensor(&[6, 3, 3], r);
    let g = lrn_backward(&x, &p, &w).unwrap();
    let mut reports = vec![check_gradient("lrn", &x, &g, EPS, 1e-4, |xx| dot(&lrn_forward(xx, &p).unwrap(), &w))];
    let p = LrnParams::default();
    let g = lrn_backward(&x, &p, &w).unwrap();
    reports.push(check_gradient("lrn", &x, &g, EPS, 1e-4, |xx| dot(&lrn_forward(xx, &p).unwrap(), &w)));
    GradCheckReport::merge("lrn", &reports)
}

fn fc_reports(r: &mut ChaCha8Rng) -> Vec<GradCheckReport> {
    let layer = FcLayer::new(random_tensor(&[3, 5], r), random_tensor(&[3], r)).unwrap();
    let x: Tensor<f64> = random_tensor(&[5], r);
    let w: Tensor<f64> = random_tensor(&[3], r);
    let (gw, gb, gx) = fc_backward(&x, &layer, &w).unwrap();
    let obj = |x: &Tensor<f64>, l: &FcLayer<f64>| dot(&fc_forward(x, l).unwrap(), &w);
    vec![
        check_gradient("fc.input", &x, &gx, EPS, 1e-6, |p| obj(p, &layer)),
        check_gradient("fc.weights", &layer.weights, &gw, EPS, 1e-6, |p| {
            obj(&x, &FcLayer::new(p.clone(), layer.bias.clone()).unwrap())
        }),
        check_gradient("fc.bias", &layer.bias, &gb, EPS, 1e-6, |p| {
            obj(&x, &FcLayer::new(layer.weights.clone(), p.clone()).unwrap())
        }),
    ]
}

fn relu_report(r: &mut ChaCha8Rng) -> GradCheckReport {
    let x = Tensor::from_fn(&[40], |_| {
        let m: f64 = r.random_range(1e-3..1.0);
        if r.random_bool(0.5) {
            m
        } else {
            -m
        }
    });
    let w: Tensor<f64> = random_tensor(&[40], r);
    let g = relu_backward(&x, &w).unwrap();
    check_gradient("relu", &x, &g, EPS, 1e-6, |p| dot(&relu_forward(p), &w))
}

fn stack(frames: &[Tensor<f64>]) -> Tensor<f64> {
    let mut shape = vec![frames.len()];
    shape.extend_from_slice(frames[0].shape());
    Tensor::new(&shape, frames.iter().flat_map(|f| f.data().to_vec()).collect()).unwrap()
}

fn unstack(s: &Tensor<f64>) -> Vec<FrameFeature<f64>> {
    let shape = &s.shape()[1..];
    let n: usize = shape.iter().product();
    s.data()
        .chunks(n)
        .enumerate()
        .map(|(i, c)| FrameFeature {
            maps: Tensor::new(shape, c.to_vec()).unwrap(),
            frame_index: i + 1,
        })
        .collect()
}

fn temporal_pool_report(mode: PoolingMode, r: &mut ChaCha8Rng) -> GradCheckReport {
    let stacked = strict_max_input(&[4, 2, 3, 3], r);
    let frames = unstack(&stacked);
    let w: Tensor<f64> = random_tensor(&[2, 3, 3], r);
    let g = pool_backward(&frames, &w, mode).unwrap();
    let analytic = stack(&g);
    let tol = if mode == PoolingMode::Mean { 1e-6 } else { 1e-4 };
    check_gradient(&format!("pool_backward_{mode}"), &stacked, &analytic, EPS, tol, |s| {
        dot(&pool(&unstack(s), mode).unwrap().maps, &w)
    })
}

/// Numerical derivative of the pair loss against `p - t`.
fn loss_identity_report(r: &mut ChaCha8Rng) -> GradCheckReport {
    let reports: Vec<GradCheckReport> = (0..50)
        .map(|i| {
            let label = if i % 2 == 0 { PairLabel::Same } else { PairLabel::Different };
            let z = Tensor::new(&[2], vec![r.random_range(-4.0..4.0), r.random_range(-4.0..4.0)]).unwrap();
            let analytic = Tensor::new(&[2], pair_loss_grad(&SimilarityScore::from_logits(z.data()), label).to_vec()).unwrap();
            check_gradient("softmax_ce", &z, &analytic, EPS, 1e-8, |p| {
                pair_loss(&SimilarityScore::from_logits(p.data()), label)
            })
        })
        .collect();
    GradCheckReport::merge("softmax_ce_identity", &reports)
}

fn pair_objective(params: &ModelParams<f64>, a: &[Tensor<f64>], b: &[Tensor<f64>], label: PairLabel) -> f64 {
    let fa = embed_traced(a, params, params.pooling).unwrap().fused.maps;
    let fb = embed_traced(b, params, params.pooling).unwrap().fused.maps;
    pair_loss(&SimilarityScore::from_logits(compare_logits(&fa, &fb, params).unwrap().data()), label)
}

/// Whole network in double precision on the smallest valid clone, one
/// report per parameter tensor.
pub fn full_network_reports(mode: PoolingMode, seed: u64) -> Vec<GradCheckReport> {
    let mut r = rng(seed);
    let mut params = ModelParams::<f64>::init(NetConfig::gradcheck(), mode, seed).unwrap();
    // Nonzero biases keep ReLU inputs off the kink.
    for t in params.tensors_mut().into_iter().skip(1).step_by(2) {
        *t = random_tensor(t.shape(), &mut r).map(|v| v * 0.1);
    }
    let shape = params.config.shape_chain().unwrap().input;
    let seq = |r: &mut ChaCha8Rng| -> Vec<Tensor<f64>> { (0..3).map(|_| random_tensor(&shape, r)).collect() };
    let (a, b) = (seq(&mut r), seq(&mut r));
    let label = PairLabel::Same;

    let ta = embed_traced(&a, &params, mode).unwrap();
    let tb = embed_traced(&b, &params, mode).unwrap();
    let trace = compare_traced(&ta.fused.maps, &tb.fused.maps, &params).unwrap();
    let g = pair_loss_grad(&SimilarityScore::from_logits(trace.logits.data()), label);
    let g_logits = Tensor::new(&[2], g.to_vec()).unwrap();
    let mut grads = params.zero_grads();
    let (ga, gb) = compare_backward(&trace, &ta.fused.maps, &tb.fused.maps, &g_logits, &params, &mut grads).unwrap();
    embed_backward(&ta, &ga, &params, &mut grads).unwrap();
    embed_backward(&tb, &gb, &params, &mut grads).unwrap();

    gait_core::net::PARAM_NAMES
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let point = params.tensors()[k].clone();
            let mut probe = params.clone();
            check_gradient(&format!("network.{name}"), &point, &grads.tensors[k], EPS, 1e-3, |p| {
                *probe.tensors_mut()[k] = p.clone();
                pair_objective(&probe, &a, &b, label)
            })
        })
        .collect()
}

pub fn gradient_suite(seed: u64) -> Vec<GradCheckReport> {
    let mut r = rng(seed);
    let mut out = conv_reports(&mut r);
    out.push(maxpool_report(&mut r));
    out.push(lrn_report(&mut r));
    out.extend(fc_reports(&mut r));
    out.push(relu_report(&mut r));
    out.push(temporal_pool_report(PoolingMode::Max, &mut r));
    out.push(temporal_pool_report(PoolingMode::Mean, &mut r));
    out.push(loss_identity_report(&mut r));
    for mode in [PoolingMode::Max, PoolingMode::Mean] {
        out.push(GradCheckReport::merge(
            format!("network_{mode}"),
            &full_network_reports(mode, seed),
        ));
    }
    out
}

// ---- pooling properties -------------------------------------------------

pub fn random_frames(r: &mut ChaCha8Rng, t: usize, shape: &[usize]) -> Vec<FrameFeature<f32>> {
    (0..t)
        .map(|i| FrameFeature {
            maps: Tensor::from_fn(shape, |_| r.random_range(-2.0f32..2.0)),
            frame_index: i + 1,
        })
        .collect()
}

fn max_abs(a: &Tensor<f32>, b: &Tensor<f32>) -> f64 {
    a.max_abs_diff(b).unwrap_or(f64::INFINITY)
}

/// Every pooling property on one random case; `Err` names the first
/// violation.
pub fn pooling_case(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let t = r.random_range(1..=8);
    let shape = [r.random_range(1..=3), r.random_range(1..=4), r.random_range(1..=4)];
    let frames = random_frames(&mut r, t, &shape);
    let max = pool(&frames, PoolingMode::Max).unwrap().maps;
    let mean = pool(&frames, PoolingMode::Mean).unwrap().maps;

    let mut shuffled = frames.clone();
    shuffled.shuffle(&mut r);
    if pool(&shuffled, PoolingMode::Max).unwrap().maps != max {
        return Err("max not permutation invariant".into());
    }
    if max_abs(&pool(&shuffled, PoolingMode::Mean).unwrap().maps, &mean) >= 1e-6 {
        return Err("mean not permutation invariant".into());
    }
    for mode in [PoolingMode::Max, PoolingMode::Mean] {
        if pool(&frames[..1], mode).unwrap().maps != frames[0].maps {
            return Err(format!("{mode}: T=1 is not the identity"));
        }
    }
    let doubled: Vec<_> = frames.iter().chain(&frames).cloned().collect();
    if pool(&doubled, PoolingMode::Max).unwrap().maps != max {
        return Err("max changes under duplication".into());
    }
    if max_abs(&pool(&doubled, PoolingMode::Mean).unwrap().maps, &mean) >= 1e-6 {
        return Err("mean changes under duplication".into());
    }
    if max.data().iter().zip(mean.data()).any(|(m, a)| m < a) {
        return Err("max below mean".into());
    }
    let mut prev = pool(&frames[..1], PoolingMode::Max).unwrap().maps;
    for k in 2..=t {
        let cur = pool(&frames[..k], PoolingMode::Max).unwrap().maps;
        if cur.data().iter().zip(prev.data()).any(|(c, p)| c < p) {
            return Err(format!("max prefix of {k} decreased"));
        }
        prev = cur;
    }
    let g = Tensor::from_fn(&shape, |_| r.random_range(-1.0f32..1.0));
    for mode in [PoolingMode::Max, PoolingMode::Mean] {
        let parts = pool_backward(&frames, &g, mode).unwrap();
        let mut total = Tensor::zeros(&shape);
        for p in &parts {
            total.add_assign(p).unwrap();
        }
        let tol = if mode == PoolingMode::Max { 0.0 } else { 1e-6 };
        if max_abs(&total, &g) > tol {
            return Err(format!("{mode}: gradient not conserved"));
        }
    }
    Ok(())
}

// ---- metric oracles ------------------------------------------------------

pub struct RandomMatrix {
    pub matrix: ScoreMatrix,
}

/// Scores on a coarse grid half the time so ties are common.
fn random_score(r: &mut ChaCha8Rng, coarse: bool) -> f64 {
    if coarse {
        r.random_range(0..10) as f64 / 10.0
    } else {
        r.random_range(0.0..1.0)
    }
}

pub fn random_matrix(r: &mut ChaCha8Rng) -> ScoreMatrix {
    let cols = r.random_range(1..=20);
    let rows = r.random_range(1..=cols.min(20));
    let gallery: Vec<String> = (0..cols).map(|i| format!("s{i:02}")).collect();
    let mut probes = gallery.clone();
    probes.shuffle(r);
    probes.truncate(rows);
    let coarse = r.random_bool(0.5);
    let scores = (0..rows * cols).map(|_| random_score(r, coarse)).collect();
    ScoreMatrix::new(0, 0, probes, gallery, scores).unwrap()
}

/// Sort the whole row, then find the genuine gallery.
pub fn oracle_rank_k(m: &ScoreMatrix, k: usize) -> f64 {
    let mut hits = 0;
    for i in 0..m.rows() {
        let row = m.row(i);
        let mut order: Vec<usize> = (0..row.len()).collect();
        order.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap().then(a.cmp(&b)));
        let pos = order.iter().position(|&j| j == m.genuine_index(i)).unwrap();
        if pos < k {
            hits += 1;
        }
    }
    100.0 * hits as f64 / m.rows() as f64
}

/// Counts FAR and FRR from scratch at every candidate threshold.
pub fn oracle_eer(genuine: &[f64], impostor: &[f64]) -> f64 {
    let mut ts: Vec<f64> = genuine.iter().chain(impostor).copied().collect();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    ts.push(f64::INFINITY);
    let rates = |t: f64| {
        let far = impostor.iter().filter(|&&s| s >= t).count() as f64 / impostor.len() as f64;
        let frr = genuine.iter().filter(|&&s| s < t).count() as f64 / genuine.len() as f64;
        (far, frr)
    };
    let mut prev: Option<(f64, f64)> = None;
    for t in ts {
        let (far, frr) = rates(t);
        if far <= frr {
            return match prev {
                Some((pf, pr)) if far < frr && pf > pr => {
                    let w = (pf - pr) / ((pf - pr) - (far - frr));
                    100.0 * (pf + w * (far - pf))
                }
                _ => 100.0 * far,
            };
        }
        prev = Some((far, frr));
    }
    unreachable!()
}

pub fn metric_case(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let m = random_matrix(&mut r);
    let mut last = -1.0;
    for k in 1..=m.cols() {
        let got = rank_k(&m, k);
        let want = oracle_rank_k(&m, k);
        if (got - want).abs() > 1e-9 {
            return Err(format!("rank-{k}: {got} vs oracle {want}"));
        }
        if got < last {
            return Err(format!("rank-{k} decreased"));
        }
        last = got;
    }

    let ng = r.random_range(1..=200);
    let ni = r.random_range(1..=200);
    let coarse = r.random_bool(0.5);
    let g: Vec<f64> = (0..ng).map(|_| random_score(&mut r, coarse) * 0.8 + 0.2).collect();
    let im: Vec<f64> = (0..ni).map(|_| random_score(&mut r, coarse) * 0.8).collect();
    let got = eer(&g, &im).map_err(|e| e.to_string())?;
    let want = oracle_eer(&g, &im);
    if (got - want).abs() > 1e-9 {
        return Err(format!("eer {got} vs oracle {want}"));
    }
    let f = |v: &f64| (3.0 * v).exp() + v.powi(3);
    let tg: Vec<f64> = g.iter().map(f).collect();
    let ti: Vec<f64> = im.iter().map(f).collect();
    let transformed = eer(&tg, &ti).map_err(|e| e.to_string())?;
    if (transformed - got).abs() > 1e-9 {
        return Err(format!("eer not invariant: {got} vs {transformed}"));
    }
    Ok(())
}

// ---- symmetry and cache equivalence ---------------------------------------

pub fn small_dataset(subjects: usize, frames: usize, seed: u64) -> Dataset {
    synthesize(&random_identities(subjects, frames, 0.0, seed)).unwrap()
}

/// `Err` describes the first pair or metric that differs.
pub fn symmetry_and_cache(pairs: usize, seed: u64) -> Result<(), String> {
    let net = NetConfig::tiny();
    let params = ModelParams::<f32>::init(net, PoolingMode::Max, seed).unwrap();
    let ds = small_dataset(4, 6, seed).resized(net.input_size);
    let mut r = rng(seed);
    for n in 0..pairs {
        let a = ds.sequence(r.random_range(0..ds.len()));
        let b = ds.sequence(r.random_range(0..ds.len()));
        let ab = forward_pair(a, b, &params, PoolingMode::Max).unwrap();
        let ba = forward_pair(b, a, &params, PoolingMode::Max).unwrap();
        if ab.p_same.to_bits() != ba.p_same.to_bits() || ab.logits != ba.logits {
            return Err(format!("pair {n}: {} vs {} not symmetric", a.key, b.key));
        }
    }

    let cache = build_cache(&ds, &params).unwrap();
    let views = ds.views(Role::Probe);
    for &pv in &views {
        for &gv in &ds.views(Role::Gallery) {
            let cached = score_matrix(&cache, pv, gv, &params).unwrap();
            let probes: Vec<_> = ds.indices_at(Role::Probe, pv);
            let galleries: Vec<_> = ds.indices_at(Role::Gallery, gv);
            let direct: Vec<f64> = probes
                .iter()
                .flat_map(|&p| galleries.iter().map(move |&g| (p, g)))
                .map(|(p, g)| forward_pair(ds.sequence(p), ds.sequence(g), &params, PoolingMode::Max).unwrap().p_same)
                .collect();
            if cached.scores.iter().zip(&direct).any(|(c, d)| c.to_bits() != d.to_bits()) {
                return Err(format!("views {pv}/{gv}: cached scores differ from direct"));
            }
            let direct = ScoreMatrix::new(
                pv,
                gv,
                cached.probe_subjects.clone(),
                cached.gallery_subjects.clone(),
                direct,
            )
            .unwrap();
            for k in [1, 2, 5] {
                if rank_k(&cached, k).to_bits() != rank_k(&direct, k).to_bits() {
                    return Err(format!("views {pv}/{gv}: rank-{k} differs"));
                }
            }
            let (cg, ci) = cached.split_scores();
            let (dg, di) = direct.split_scores();
            if !ci.is_empty() && eer(&cg, &ci).unwrap().to_bits() != eer(&dg, &di).unwrap().to_bits() {
                return Err(format!("views {pv}/{gv}: EER differs"));
            }
        }
    }
    Ok(())
}
