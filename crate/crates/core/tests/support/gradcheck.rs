//! Analytic gradients against central finite differences, in f64.
//!
//! Each objective is re-evaluated from scratch at `θ ± h·e_k`; components
//! whose perturbation flips a ReLU or the triplet hinge are excluded, since
//! the derivative is not defined there.
//!
//! Shared by the core test suite and the acceptance runner.

#![allow(dead_code)]

use rand::Rng;
use ssreg_core::data::ImageTensor;
use ssreg_core::diffnet::{forward, Gradients, ModelParams, ModelSpec};
use ssreg_core::losses::{
    consistency_loss, fixed_triplet_loss, mine_triplets, mse_loss, total_loss, adaptive_triplet_loss, BatchItem,
    LossMode, LossWeights, ConsistencyTerms,
};
use ssreg_core::seed;

const H: f64 = 1e-3;
const REL_TOL: f64 = 1e-4;

fn small_spec() -> ModelSpec {
    ModelSpec { input_height: 8, input_width: 8, channels: vec![3, 4] }
}

fn random_image(rng: &mut impl Rng, spec: &ModelSpec) -> ImageTensor {
    let n = spec.input_height * spec.input_width;
    ImageTensor::new(spec.input_height, spec.input_width, (0..n).map(|_| rng.gen::<f32>()).collect()).unwrap()
}

/// Random params with biases pushed away from zero so ReLUs see both signs.
fn random_params(rng: &mut impl Rng, spec: &ModelSpec, seed: u64) -> ModelParams<f64> {
    let mut p = ModelParams::<f64>::init(spec, seed).unwrap();
    for arr in p.arrays_mut() {
        if arr.name.ends_with(".bias") {
            arr.data.iter_mut().for_each(|b| *b = rng.gen_range(-0.1..0.1));
        }
    }
    p
}

/// Objective value plus everything that must stay constant for the
/// finite difference to be valid (ReLU patterns, hinge signs).
struct Eval {
    value: f64,
    pattern: Vec<bool>,
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Compares `analytic` with central differences of `eval` over every
/// parameter. Returns (checked, skipped).
fn check(params: &ModelParams<f64>, analytic: &Gradients<f64>, eval: impl Fn(&ModelParams<f64>) -> Eval, label: &str) -> (usize, usize) {
    let base = params.flat();
    let grad = analytic.flat();
    let reference = eval(params).pattern;
    let (mut checked, mut skipped) = (0, 0);
    let mut p = params.clone();
    for k in 0..base.len() {
        // a step that crosses a kink is retried once with a much smaller one
        let mut fd = None;
        for h in [H, H * 1e-3] {
            let mut plus = base.clone();
            plus[k] += h;
            p.set_flat(&plus).unwrap();
            let ep = eval(&p);
            let mut minus = base.clone();
            minus[k] -= h;
            p.set_flat(&minus).unwrap();
            let em = eval(&p);
            if ep.pattern == reference && em.pattern == reference {
                fd = Some((ep.value - em.value) / (2.0 * h));
                break;
            }
        }
        let Some(fd) = fd else {
            skipped += 1;
            continue;
        };
        let e = rel_err(grad[k], fd);
        assert!(e < REL_TOL, "{label}: component {k} analytic {} vs fd {fd} (rel {e:e})", grad[k]);
        checked += 1;
    }
    (checked, skipped)
}

fn assert_mostly_checked(label: &str, checked: usize, skipped: usize) {
    assert!(checked > 0 && skipped * 50 <= checked + skipped, "{label}: only {checked} checked, {skipped} skipped");
}

pub fn network_backward_matches_finite_differences() {
    let spec = small_spec();
    for s in 0..10u64 {
        let mut rng = seed::rng(100 + s);
        let params = random_params(&mut rng, &spec, s);
        let img = random_image(&mut rng, &spec);
        let g: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let hp: f64 = rng.gen_range(-1.0..1.0);
        let out = forward(&params, &img).unwrap();
        let analytic = out.tape.backward(&g, hp).unwrap();
        let eval = |p: &ModelParams<f64>| {
            let o = forward(p, &img).unwrap();
            let value = o.embedding.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>() + hp * o.prediction;
            Eval { value, pattern: o.tape.relu_pattern() }
        };
        let (c, k) = check(&params, &analytic, eval, "linear probe");
        assert_mostly_checked("linear probe", c, k);
    }
}

pub fn backward_is_linear_in_upstream() {
    let spec = small_spec();
    let mut rng = seed::rng(7);
    let params = random_params(&mut rng, &spec, 7);
    let img = random_image(&mut rng, &spec);
    let out = forward(&params, &img).unwrap();
    for _ in 0..10 {
        let g: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let h: f64 = rng.gen_range(-1.0..1.0);
        let c: f64 = rng.gen_range(-3.0..3.0);
        let one = out.tape.backward(&g, h).unwrap().flat();
        let gc: Vec<f64> = g.iter().map(|v| c * v).collect();
        let scaled = out.tape.backward(&gc, c * h).unwrap().flat();
        for (a, b) in one.iter().zip(&scaled) {
            assert!((c * a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }
}

/// Which single-sample loss to push through the network.
#[derive(Clone, Copy, Debug)]
enum Probe {
    Mse,
    AdaptiveTriplet,
    FixedTriplet,
    Consistency,
}

pub fn single_losses_through_network() {
    let spec = small_spec();
    for probe in [Probe::Mse, Probe::AdaptiveTriplet, Probe::FixedTriplet, Probe::Consistency] {
        let (mut active, mut inactive) = (0, 0);
        for s in 0..12u64 {
            let mut rng = seed::rng(1000 + s);
            let params = random_params(&mut rng, &spec, s);
            let mut imgs: Vec<ImageTensor> = (0..3).map(|_| random_image(&mut rng, &spec)).collect();
            if s % 2 == 1 {
                // order near/far by embedding distance so the hinge is inactive
                let e: Vec<Vec<f64>> = imgs.iter().map(|im| forward(&params, im).unwrap().embedding).collect();
                let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
                if d(&e[0], &e[1]) > d(&e[0], &e[2]) {
                    imgs.swap(1, 2);
                }
            }
            let target: f64 = rng.gen_range(0.2..1.4);
            // alternate margins so both hinge states are visited
            let (alpha, margin) = if s % 2 == 0 { (rng.gen_range(0.05..0.5), 50.0) } else { (0.0, 1e-9) };

            let objective = |p: &ModelParams<f64>| -> (f64, Vec<bool>, Option<(Vec<Vec<f64>>, Vec<f64>)>) {
                let outs: Vec<_> = imgs.iter().map(|im| forward(p, im).unwrap()).collect();
                let emb: Vec<&[f64]> = outs.iter().map(|o| o.embedding.as_slice()).collect();
                let mut pattern: Vec<bool> = outs.iter().flat_map(|o| o.tape.relu_pattern()).collect();
                let d = emb[0].len();
                let mut de = vec![vec![0.0; d]; 3];
                let mut dp = vec![0.0; 3];
                let value = match probe {
                    Probe::Mse => {
                        let l = mse_loss(outs[0].prediction, target);
                        dp[0] = l.grad;
                        l.value
                    }
                    Probe::AdaptiveTriplet | Probe::FixedTriplet => {
                        let l = match probe {
                            Probe::AdaptiveTriplet => adaptive_triplet_loss(emb[0], emb[1], emb[2], alpha, margin).unwrap(),
                            _ => fixed_triplet_loss(emb[0], emb[1], emb[2], margin).unwrap(),
                        };
                        pattern.push(l.value > 0.0);
                        de[0] = l.grad.anchor;
                        de[1] = l.grad.near;
                        de[2] = l.grad.far;
                        l.value
                    }
                    Probe::Consistency => {
                        let l = consistency_loss(emb[0], emb[1], outs[0].prediction, outs[1].prediction).unwrap();
                        de[0] = l.grad.embedding_1;
                        de[1] = l.grad.embedding_2;
                        dp[0] = l.grad.prediction_1;
                        dp[1] = l.grad.prediction_2;
                        l.value
                    }
                };
                (value, pattern, Some((de, dp)))
            };

            let (value, _, grads) = objective(&params);
            let (de, dp) = grads.unwrap();
            if matches!(probe, Probe::AdaptiveTriplet | Probe::FixedTriplet) {
                if value > 0.0 { active += 1 } else { inactive += 1 }
            }
            let mut analytic = Gradients::zeros_like(&params);
            for (k, im) in imgs.iter().enumerate() {
                forward(&params, im).unwrap().tape.backward_into(&de[k], dp[k], &mut analytic).unwrap();
            }
            let (c, k) = check(&params, &analytic, |p| {
                let (value, pattern, _) = objective(p);
                Eval { value, pattern }
            }, &format!("{probe:?}"));
            assert_mostly_checked(&format!("{probe:?}"), c, k);
        }
        if matches!(probe, Probe::AdaptiveTriplet | Probe::FixedTriplet) {
            assert!(active > 0 && inactive > 0, "{probe:?}: active {active}, inactive {inactive}");
        }
    }
}

pub fn total_loss_through_network_both_modes() {
    let spec = small_spec();
    for mode in [LossMode::Pretrain, LossMode::SelfTrain] {
        for s in 0..10u64 {
            let mut rng = seed::rng(5000 + s);
            let params = random_params(&mut rng, &spec, 40 + s);
            let n = 5;
            let v1: Vec<ImageTensor> = (0..n).map(|_| random_image(&mut rng, &spec)).collect();
            let v2: Vec<ImageTensor> = (0..n).map(|_| random_image(&mut rng, &spec)).collect();
            let targets: Vec<Option<f64>> = (0..n).map(|k| (k != 2).then(|| rng.gen_range(0.2..1.4))).collect();
            let labels: Vec<f64> = targets.iter().map(|t| t.unwrap_or(0.8)).collect();
            let triplets = mine_triplets(&labels, &mut rng);
            let weights = LossWeights {
                triplet: 0.5,
                consistency: 1.0,
                margin: if s % 2 == 0 { 20.0 } else { 0.5 },
                adaptive: s % 3 != 0,
                consistency_terms: if s % 4 == 1 { ConsistencyTerms::PredictionOnly } else { ConsistencyTerms::Full },
            };

            let objective = |p: &ModelParams<f64>| {
                let o1: Vec<_> = v1.iter().map(|im| forward(p, im).unwrap()).collect();
                let o2: Vec<_> = v2.iter().map(|im| forward(p, im).unwrap()).collect();
                let items: Vec<BatchItem<'_>> = (0..n)
                    .map(|k| BatchItem {
                        embedding: &o1[k].embedding,
                        prediction: o1[k].prediction,
                        target: targets[k],
                        second: (mode == LossMode::SelfTrain).then(|| (o2[k].embedding.as_slice(), o2[k].prediction)),
                    })
                    .collect();
                let (l, _) = total_loss(&items, mode, &weights, &triplets).unwrap();
                let mut pattern: Vec<bool> = o1.iter().chain(&o2).flat_map(|o| o.tape.relu_pattern()).collect();
                // hinge state of every triplet
                for t in &triplets {
                    let alpha = if weights.adaptive { t.alpha } else { 1.0 };
                    let raw = adaptive_triplet_loss(&o1[t.anchor].embedding, &o1[t.near].embedding, &o1[t.far].embedding, alpha, weights.margin).unwrap();
                    pattern.push(raw.value > 0.0);
                }
                let mut g = Gradients::zeros_like(p);
                for k in 0..n {
                    o1[k].tape.backward_into(&l.grad.embedding[k], l.grad.prediction[k], &mut g).unwrap();
                    if mode == LossMode::SelfTrain {
                        o2[k].tape.backward_into(&l.grad.embedding_2[k], l.grad.prediction_2[k], &mut g).unwrap();
                    }
                }
                (l.value, pattern, g)
            };
            let (_, _, analytic) = objective(&params);
            let (c, k) = check(&params, &analytic, |p| {
                let (value, pattern, _) = objective(p);
                Eval { value, pattern }
            }, &format!("total {mode:?}"));
            assert_mostly_checked("total", c, k);
        }
    }
}
