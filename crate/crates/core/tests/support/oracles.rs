//! Independent recomputations used to check loss arithmetic, the
//! pseudo-label gate and the evaluation metrics. Every check panics with a
//! description of the first disagreement.

use rand::Rng;
use ssreg_core::losses::{
    adaptive_coefficient, adaptive_triplet_loss, consistency_loss, fixed_triplet_loss, mine_triplets, mse_loss,
    total_loss, BatchItem, ConsistencyTerms, LossMode, LossWeights,
};
use ssreg_core::metrics::{mse, pearson_r, rmse};
use ssreg_core::seed;
use ssreg_core::ssl::{replay_gate, TrainerState};

const LOSS_TOL: f64 = 1e-9;

fn close(label: &str, got: f64, want: f64, tol: f64) {
    assert!((got - want).abs() <= tol, "{label}: got {got}, want {want} (tolerance {tol:e})");
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]) * (a[i] - b[i]);
    }
    s
}

/// Worked examples with hand arithmetic, then random batches against a
/// straight-line recomputation of the combined objective.
pub fn loss_arithmetic() {
    let alpha = adaptive_coefficient(0.9, 0.8, 0.5).unwrap();
    close("alpha(0.9, 0.8, 0.5)", alpha, 0.16 - 0.01, LOSS_TOL);
    close("alpha(0.8, 0.7, 0.5)", adaptive_coefficient(0.8, 0.7, 0.5).unwrap(), 0.08, LOSS_TOL);
    close("alpha(1.0, 0.9, 0.8)", adaptive_coefficient(1.0, 0.9, 0.8).unwrap(), 0.03, LOSS_TOL);
    close("alpha(y, y, y)", adaptive_coefficient(0.6, 0.6, 0.6).unwrap(), 0.0, 0.0);

    let inactive = adaptive_triplet_loss(&[0.0, 0.0], &[1.0, 0.0], &[0.0, 2.0], alpha, 0.5).unwrap();
    close("triplet with far sample further", inactive.value, 0.0, LOSS_TOL);
    let active = adaptive_triplet_loss(&[0.0, 0.0], &[2.0, 0.0], &[1.0, 0.0], alpha, 0.5).unwrap();
    close("triplet with near sample further", active.value, 4.0 - 1.0 + 0.15 * 0.5, LOSS_TOL);
    close("3.075 literal", active.value, 3.075, LOSS_TOL);
    let same = adaptive_triplet_loss(&[0.3, 0.1], &[0.3, 0.1], &[0.3, 0.1], 0.0, 0.5).unwrap();
    close("identical embeddings, zero alpha", same.value, 0.0, 0.0);
    assert!(same.grad.anchor.iter().chain(&same.grad.near).chain(&same.grad.far).all(|&g| g == 0.0));

    close("fixed, identical", fixed_triplet_loss(&[1.0], &[1.0], &[1.0], 0.5).unwrap().value, 0.5, LOSS_TOL);
    close("fixed, far further", fixed_triplet_loss(&[0.0, 0.0], &[1.0, 0.0], &[0.0, 2.0], 0.5).unwrap().value, 0.0, LOSS_TOL);

    close("mse equal", mse_loss(0.7, 0.7).value, 0.0, 0.0);
    let m = mse_loss(1.0, 0.0);
    close("mse value", m.value, 1.0, LOSS_TOL);
    close("mse grad", m.grad, 2.0, LOSS_TOL);

    let c = consistency_loss(&[1.0, 0.0], &[0.0, 0.0], 0.2, 0.0).unwrap();
    close("consistency", c.value, 1.04, LOSS_TOL);
    close("consistency swapped", consistency_loss(&[0.0, 0.0], &[1.0, 0.0], 0.0, 0.2).unwrap().value, 1.04, LOSS_TOL);

    let mut rng = seed::rng(2024);
    for trial in 0..200 {
        // random scalar pair: derivative against a central difference
        let (p, t): (f64, f64) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        let h = 1e-5;
        let fd = (mse_loss(p + h, t).value - mse_loss(p - h, t).value) / (2.0 * h);
        close("mse derivative", mse_loss(p, t).grad, fd, 1e-7);

        let n = rng.gen_range(1..9);
        let d = rng.gen_range(1..6);
        let emb1: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let emb2: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let pred1: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.6)).collect();
        let pred2: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.6)).collect();
        let targets: Vec<Option<f64>> =
            (0..n).map(|_| if rng.gen_bool(0.7) { Some(rng.gen_range(0.2..1.4)) } else { None }).collect();
        let labels: Vec<f64> = targets.iter().map(|t| t.unwrap_or(0.8)).collect();
        let triplets = mine_triplets(&labels, &mut rng);
        let mode = if trial % 2 == 0 { LossMode::Pretrain } else { LossMode::SelfTrain };
        let weights = LossWeights {
            triplet: rng.gen_range(0.0..1.0),
            consistency: rng.gen_range(0.0..2.0),
            margin: rng.gen_range(0.05..2.0),
            adaptive: trial % 3 != 0,
            consistency_terms: if trial % 5 == 0 { ConsistencyTerms::PredictionOnly } else { ConsistencyTerms::Full },
        };
        let items: Vec<BatchItem<'_>> = (0..n)
            .map(|k| BatchItem {
                embedding: &emb1[k],
                prediction: pred1[k],
                target: targets[k],
                second: (mode == LossMode::SelfTrain).then(|| (emb2[k].as_slice(), pred2[k])),
            })
            .collect();
        let (got, _) = total_loss(&items, mode, &weights, &triplets).unwrap();

        let mut mse_sum = 0.0;
        let mut mse_n = 0.0;
        for k in 0..n {
            if let Some(t) = targets[k] {
                mse_sum += (pred1[k] - t) * (pred1[k] - t);
                mse_n += 1.0;
            }
        }
        let mse_term = if mse_n > 0.0 { mse_sum / mse_n } else { 0.0 };
        let mut trip_sum = 0.0;
        for t in &triplets {
            let (ya, yn, yf) = (labels[t.anchor], labels[t.near], labels[t.far]);
            let a = if weights.adaptive { (ya - yf) * (ya - yf) - (ya - yn) * (ya - yn) } else { 1.0 };
            let raw = sq(&emb1[t.anchor], &emb1[t.near]) - sq(&emb1[t.anchor], &emb1[t.far]) + a * weights.margin;
            trip_sum += if raw > 0.0 { raw } else { 0.0 };
        }
        let trip_term = if triplets.is_empty() { 0.0 } else { trip_sum / triplets.len() as f64 };
        let mut cons_term = 0.0;
        if mode == LossMode::SelfTrain {
            for k in 0..n {
                let dy = (pred1[k] - pred2[k]) * (pred1[k] - pred2[k]);
                cons_term += match weights.consistency_terms {
                    ConsistencyTerms::Full => sq(&emb1[k], &emb2[k]) + dy,
                    ConsistencyTerms::PredictionOnly => dy,
                };
            }
            cons_term /= n as f64;
        }
        let want = mse_term + weights.triplet * trip_term + weights.consistency * cons_term;
        close(&format!("total loss, trial {trial}"), got.value, want, LOSS_TOL);
    }
}

/// Regeneration epochs under "R strictly up and MSE strictly down", from
/// bests of 0 and infinity. Undefined R never counts as an improvement.
pub fn reference_gate(metrics: &[(Option<f64>, f64)]) -> Vec<usize> {
    let (mut best_r, mut best_mse) = (0.0, f64::INFINITY);
    let mut events = Vec::new();
    for (epoch, &(r, m)) in metrics.iter().enumerate() {
        if let Some(r) = r {
            if r > best_r && m < best_mse {
                best_r = r;
                best_mse = m;
                events.push(epoch);
            }
        }
    }
    events
}

pub fn gate_replay() {
    let worked = [(Some(0.5), 0.1), (Some(0.4), 0.05), (Some(0.6), 0.05), (Some(0.7), 0.04)];
    assert_eq!(replay_gate(&worked), vec![0, 2, 3], "worked sequence");
    assert_eq!(reference_gate(&worked), vec![0, 2, 3], "worked sequence, reference");

    let mut rng = seed::rng(77);
    for case in 0..1000 {
        let len = rng.gen_range(1..40);
        // coarse grids make exact ties common, which is where strictness matters
        let coarse = case % 2 == 0;
        let metrics: Vec<(Option<f64>, f64)> = (0..len)
            .map(|_| {
                let r = if rng.gen_bool(0.05) {
                    None
                } else if coarse {
                    Some(f64::from(rng.gen_range(-2..10)) / 10.0)
                } else {
                    Some(rng.gen_range(-1.0..1.0))
                };
                let m = if coarse { f64::from(rng.gen_range(0..6)) / 20.0 } else { rng.gen_range(0.0..0.5) };
                (r, m)
            })
            .collect();
        let want = reference_gate(&metrics);
        assert_eq!(replay_gate(&metrics), want, "case {case}: {metrics:?}");

        let mut state = TrainerState::new(len);
        let mut live = Vec::new();
        for (epoch, &(r, m)) in metrics.iter().enumerate() {
            state.epoch = epoch;
            if state.observe(r, m) {
                live.push(epoch);
            }
        }
        assert_eq!(live, want, "case {case}: stateful gate");
        assert_eq!(state.regenerations, want, "case {case}: regeneration log");
    }
}

fn two_pass_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for i in 0..x.len() {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    sxy / (sxx * syy).sqrt()
}

pub fn metric_properties() {
    let r = pearson_r(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap().unwrap();
    close("perfect positive", r, 1.0, 4.0 * f64::EPSILON);
    let r = pearson_r(&[1.0, 2.0, 3.0], &[6.0, 4.0, 2.0]).unwrap().unwrap();
    close("perfect negative", r, -1.0, 4.0 * f64::EPSILON);
    assert_eq!(pearson_r(&[0.5, 0.5, 0.5], &[1.0, 2.0, 3.0]).unwrap(), None, "constant input is undefined");
    close("rmse (0,1)/(1,0)", rmse(&[0.0, 1.0], &[1.0, 0.0]).unwrap(), 1.0, 0.0);

    let mut rng = seed::rng(6);
    for case in 0..10_000 {
        let n = rng.gen_range(2..64);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();

        let e = rmse(&x, &y).unwrap();
        assert_eq!(rmse(&x, &x).unwrap(), 0.0, "case {case}: rmse(x, x)");
        assert_eq!(e, rmse(&y, &x).unwrap(), "case {case}: rmse symmetry");
        assert!(e > 0.0, "case {case}: distinct vectors have positive rmse");
        close(&format!("case {case}: rmse = sqrt(mse)"), e, mse(&x, &y).unwrap().sqrt(), 4.0 * f64::EPSILON * e);

        if case < 1000 {
            let r = pearson_r(&x, &y).unwrap().unwrap();
            close(&format!("case {case}: two-pass"), r, two_pass_pearson(&x, &y), 1e-12);
            close(&format!("case {case}: symmetry"), pearson_r(&y, &x).unwrap().unwrap(), r, 1e-12);
            let a = rng.gen_range(0.01..100.0);
            let b = rng.gen_range(-10.0..10.0);
            let scaled: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            close(&format!("case {case}: affine a={a} b={b}"), pearson_r(&scaled, &y).unwrap().unwrap(), r, 1e-12);
            let flipped: Vec<f64> = x.iter().map(|v| -a * v + b).collect();
            close(&format!("case {case}: negated"), pearson_r(&flipped, &y).unwrap().unwrap(), -r, 1e-12);
        }
    }
}
