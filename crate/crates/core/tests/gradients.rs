mod common;

use common::{random_problem, sphere_grid, Problem};
use ldif::grad::{grad_loss, loss_and_grad, ParameterVector, Segment};
use ldif::loss::{loss_total, LossConfig};

fn loss_at(p: &ParameterVector, prob: &Problem, cfg: &LossConfig) -> f64 {
    loss_total(&p.to_model().unwrap(), &prob.samples, &prob.grid, cfg).unwrap()
}

/// Largest per-coordinate relative error between the analytic gradient and
/// central differences, over coordinates with `|g| > 1e-6`.
fn worst_relative_error(prob: &Problem, cfg: &LossConfig) -> (f64, usize) {
    let h = 1e-5;
    let g = grad_loss(&prob.params, &prob.samples, &prob.grid, cfg).unwrap();
    let mut worst = (0.0, 0);
    for i in 0..g.values.len() {
        let mut plus = prob.params.clone();
        plus.values[i] += h;
        let mut minus = prob.params.clone();
        minus.values[i] -= h;
        let fd = (loss_at(&plus, prob, cfg) - loss_at(&minus, prob, cfg)) / (2.0 * h);
        let a = g.values[i];
        if a.abs().max(fd.abs()) <= 1e-6 {
            continue;
        }
        let rel = (a - fd).abs() / a.abs().max(fd.abs());
        if rel > worst.0 {
            worst = (rel, i);
        }
    }
    worst
}

#[test]
fn matches_central_differences() {
    let grid = sphere_grid();
    let cfg = LossConfig::default();
    for seed in 0..20 {
        let prob = random_problem(seed, 2, 4, 4, 32, &grid);
        let (err, at) = worst_relative_error(&prob, &cfg);
        assert!(
            err < 1e-4,
            "seed {seed}: relative error {err:e} at coordinate {at} ({})",
            prob.params.layout.segment_of(at)
        );
    }
}

#[test]
fn every_segment_receives_gradient() {
    let grid = sphere_grid();
    let prob = random_problem(3, 2, 4, 4, 32, &grid);
    let g = grad_loss(&prob.params, &prob.samples, &prob.grid, &LossConfig::default()).unwrap();
    for s in [Segment::Elements, Segment::Latents, Segment::Decoder] {
        assert!(g.segment(s).iter().any(|v| *v != 0.0), "{s} gradient is zero");
    }
}

#[test]
fn linear_in_loss_weights() {
    let grid = sphere_grid();
    let prob = random_problem(11, 2, 4, 4, 32, &grid);
    let with = |w_point, w_center| {
        let cfg = LossConfig {
            w_point,
            w_center,
            ..LossConfig::default()
        };
        grad_loss(&prob.params, &prob.samples, &prob.grid, &cfg).unwrap()
    };
    let (a, b) = (0.7, 3.0);
    let combined = with(a, b);
    let (gp, gc) = (with(1.0, 0.0), with(0.0, 1.0));
    for i in 0..combined.values.len() {
        let expect = a * gp.values[i] + b * gc.values[i];
        assert!(
            (combined.values[i] - expect).abs() <= 1e-10 * expect.abs().max(1.0),
            "coordinate {i}: {} vs {expect}",
            combined.values[i]
        );
    }
}

#[test]
fn zero_output_layer_gives_zero_latent_gradient() {
    let grid = sphere_grid();
    let mut prob = random_problem(5, 2, 4, 4, 32, &grid);
    let mut d = prob.params.decoder();
    d.output.weight.iter_mut().for_each(|w| *w = 0.0);
    d.output.bias.iter_mut().for_each(|w| *w = 0.0);
    prob.params
        .segment_mut(Segment::Decoder)
        .copy_from_slice(&d.flatten());
    let g = grad_loss(&prob.params, &prob.samples, &prob.grid, &LossConfig::default()).unwrap();
    assert!(g.segment(Segment::Latents).iter().all(|v| *v == 0.0));
    // The output layer itself still learns.
    let out = &g.decoder().output;
    assert!(out.weight.iter().chain(&out.bias).any(|v| *v != 0.0));
}

#[test]
fn bit_identical_across_thread_counts() {
    let grid = sphere_grid();
    let prob = random_problem(8, 3, 4, 4, 500, &grid);
    let cfg = LossConfig::default();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| loss_and_grad(&prob.params, &prob.samples, &prob.grid, &cfg, true).unwrap())
    };
    let (l1, g1) = run(1);
    let (l4, g4) = run(4);
    assert_eq!(l1, l4);
    assert_eq!(g1.values, g4.values);
}

#[test]
fn loss_matches_forward_evaluation() {
    let grid = sphere_grid();
    let prob = random_problem(13, 2, 4, 4, 64, &grid);
    let cfg = LossConfig::default();
    let (values, _) = loss_and_grad(&prob.params, &prob.samples, &prob.grid, &cfg, true).unwrap();
    let direct = loss_at(&prob.params, &prob, &cfg);
    assert!((values.total - direct).abs() <= 1e-12 * direct.max(1.0));
}
