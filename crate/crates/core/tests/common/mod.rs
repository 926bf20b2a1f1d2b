#![allow(dead_code)]

use ldif::decoder::DecoderWeights;
use ldif::fixtures;
use ldif::geom::{build_sdf_grid, LabeledSampleSet, SampleOrigin, SdfGrid, Vec3};
use ldif::grad::ParameterVector;
use ldif::model::RawElementVars;
use ldif::rng;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

/// A small random problem: parameters, labeled samples and a center-loss grid.
pub struct Problem {
    pub params: ParameterVector,
    pub samples: LabeledSampleSet,
    pub grid: SdfGrid,
}

pub fn sphere_grid() -> SdfGrid {
    build_sdf_grid(&fixtures::icosphere(2, 0.3)).unwrap()
}

/// Random configuration with `n` elements, latent width `m`, hidden width `h`
/// and `count` samples. The decoder output layer is nonzero so that every
/// parameter segment receives gradient.
pub fn random_problem(seed: u64, n: usize, m: usize, h: usize, count: usize, grid: &SdfGrid) -> Problem {
    let mut r = rng::substream(seed, "problem", 0);
    let mut u = |lo: f64, hi: f64| r.random_range(lo..hi);
    let raw: Vec<RawElementVars> = (0..n)
        .map(|_| {
            let mag = u(0.3, 1.5);
            let sign = if u(0.0, 1.0) < 0.5 { -1.0 } else { 1.0 };
            RawElementVars {
                y_c: sign * mag,
                y_p: Vec3::new(u(-0.7, 0.7), u(-0.7, 0.7), u(-0.7, 0.7)),
                y_r: Vec3::new(u(-0.8, 1.5), u(-0.8, 1.5), u(-0.8, 1.5)),
                y_e: Vec3::new(u(-0.7, 0.7), u(-0.7, 0.7), u(-0.7, 0.7)),
            }
        })
        .collect();
    let latents: Vec<Vec<f64>> = (0..n).map(|_| (0..m).map(|_| u(-0.5, 0.5)).collect()).collect();
    let sym_axis = (u(0.0, 3.0) as usize).min(2);
    let mut r = rng::substream(seed, "problem", 1);
    let mut decoder = DecoderWeights::init(m, h, 0.3, &mut r);
    let out = Normal::new(0.0, 0.3).unwrap();
    for v in decoder.output.weight.iter_mut().chain(decoder.output.bias.iter_mut()) {
        *v = out.sample(&mut r);
    }
    let params = ParameterVector::from_parts(&raw, &latents, &decoder, 1.min(n), sym_axis);

    let noise = Normal::new(0.0, 0.08).unwrap();
    let mut samples = LabeledSampleSet::default();
    for s in 0..count {
        let c = raw[s % n].y_p * 0.5;
        let p = c + Vec3::from_fn(|_, _| noise.sample(&mut r));
        let inside = r.random::<bool>();
        let (w, origin) = if s % 2 == 0 {
            (0.1, SampleOrigin::NearSurface)
        } else {
            (1.0, SampleOrigin::Uniform)
        };
        samples.push(p, inside, w, origin);
    }
    Problem {
        params,
        samples,
        grid: grid.clone(),
    }
}
