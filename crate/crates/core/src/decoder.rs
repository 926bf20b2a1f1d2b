//! The shared residual decoder `f(x, z)`.
//!
//! A small fully connected network with one pre-activation residual block.
//! Each of its three normalization stages is a conditional affine map whose
//! scale and shift are linear functions of the element's latent code:
//!
//! ```text
//! h0  = input(x)
//! h1  = h0 + res2(relu(cbn2(res1(relu(cbn1(h0))))))
//! out = output(relu(cbn3(h1)))
//! cbn_k(h) = gamma_k(z) * h + beta_k(z)
//! ```
//!
//! Normalization is the identity (no batch statistics), so `f` is a pure
//! function of `(x, z, weights)`.

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Dense layer, `y = W x + b` with `W` stored row-major (`outputs x inputs`).
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Linear {
            inputs,
            outputs,
            weight: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    /// `out = W x + b`
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (o, (row, b)) in out
            .iter_mut()
            .zip(self.weight.chunks_exact(self.inputs).zip(&self.bias))
        {
            *o = b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    /// `out = W^T g`
    pub fn apply_transpose(&self, g: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (row, gi) in self.weight.chunks_exact(self.inputs).zip(g) {
            for (o, w) in out.iter_mut().zip(row) {
                *o += w * gi;
            }
        }
    }

    /// Flattened parameters: weights row-major, then bias.
    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.weight.iter().chain(self.bias.iter())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weight.iter_mut().chain(self.bias.iter_mut())
    }
}

/// Latent-conditioned affine stage: `gamma(z) * h + beta(z)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalAffine {
    pub gamma: Linear,
    pub beta: Linear,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderWeights {
    pub hidden: usize,
    pub latent: usize,
    pub input: Linear,
    pub cbn: [ConditionalAffine; 3],
    pub res1: Linear,
    pub res2: Linear,
    pub output: Linear,
}

/// Exact scalar parameter count of a decoder with latent width `m` and
/// hidden width `h`.
pub fn param_count(m: usize, h: usize) -> usize {
    let input = 3 * h + h;
    let res = 2 * (h * h + h);
    let cbn = 3 * 2 * (m * h + h);
    let output = h + 1;
    input + res + cbn + output
}

/// Per-element scale and shift vectors of the three conditional stages,
/// which depend only on the latent code.
#[derive(Clone, Debug, PartialEq)]
pub struct Conditioning {
    pub gamma: [Vec<f64>; 3],
    pub beta: [Vec<f64>; 3],
}

/// Intermediate activations of one forward pass, reused by the backward pass.
#[derive(Clone, Debug)]
pub struct Activations {
    pub h0: Vec<f64>,
    pub a1: Vec<f64>,
    pub r1: Vec<f64>,
    pub m1: Vec<f64>,
    pub a2: Vec<f64>,
    pub r2: Vec<f64>,
    pub h1: Vec<f64>,
    pub a3: Vec<f64>,
    pub r3: Vec<f64>,
}

impl Activations {
    pub fn new(hidden: usize) -> Self {
        let v = || vec![0.0; hidden];
        Activations {
            h0: v(),
            a1: v(),
            r1: v(),
            m1: v(),
            a2: v(),
            r2: v(),
            h1: v(),
            a3: v(),
            r3: v(),
        }
    }
}

/// Gradient of `f` with respect to the layer parameters that do not depend
/// on the latent code, plus the per-element conditioning vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderGrad {
    pub input: Linear,
    pub res1: Linear,
    pub res2: Linear,
    pub output: Linear,
}

impl DecoderGrad {
    pub fn zeros(hidden: usize) -> Self {
        DecoderGrad {
            input: Linear::zeros(3, hidden),
            res1: Linear::zeros(hidden, hidden),
            res2: Linear::zeros(hidden, hidden),
            output: Linear::zeros(hidden, 1),
        }
    }

    pub fn add_assign(&mut self, other: &DecoderGrad) {
        for (a, b) in [
            (&mut self.input, &other.input),
            (&mut self.res1, &other.res1),
            (&mut self.res2, &other.res2),
            (&mut self.output, &other.output),
        ] {
            for (x, y) in a.params_mut().zip(b.params()) {
                *x += y;
            }
        }
    }
}

/// Scratch for the backward pass.
#[derive(Clone, Debug)]
pub struct BackwardScratch {
    da3: Vec<f64>,
    dh1: Vec<f64>,
    dr2: Vec<f64>,
    da2: Vec<f64>,
    dm1: Vec<f64>,
    dr1: Vec<f64>,
    da1: Vec<f64>,
    dh0: Vec<f64>,
}

impl BackwardScratch {
    pub fn new(hidden: usize) -> Self {
        let v = || vec![0.0; hidden];
        BackwardScratch {
            da3: v(),
            dh1: v(),
            dr2: v(),
            da2: v(),
            dm1: v(),
            dr1: v(),
            da1: v(),
            dh0: v(),
        }
    }
}

fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

fn relu_mask(a: f64) -> f64 {
    if a > 0.0 {
        1.0
    } else {
        0.0
    }
}

impl DecoderWeights {
    pub fn zeros(latent: usize, hidden: usize) -> Self {
        let cbn = || ConditionalAffine {
            gamma: Linear::zeros(latent, hidden),
            beta: Linear::zeros(latent, hidden),
        };
        DecoderWeights {
            hidden,
            latent,
            input: Linear::zeros(3, hidden),
            cbn: [cbn(), cbn(), cbn()],
            res1: Linear::zeros(hidden, hidden),
            res2: Linear::zeros(hidden, hidden),
            output: Linear::zeros(hidden, 1),
        }
    }

    /// Random initialization with a zeroed output layer, so that `f == 0`
    /// until the output layer is trained.
    ///
    /// Dense layers use He-normal weights; the latent maps of each
    /// conditional stage use normal weights with standard deviation `std`, and
    /// their biases start at the identity affine (`gamma = 1`, `beta = 0`).
    pub fn init(latent: usize, hidden: usize, std: f64, rng: &mut Rng) -> Self {
        let mut w = DecoderWeights::zeros(latent, hidden);
        let he = |layer: &mut Linear, rng: &mut Rng| {
            let n = Normal::new(0.0, (2.0 / layer.inputs as f64).sqrt()).unwrap();
            for v in &mut layer.weight {
                *v = n.sample(rng);
            }
        };
        he(&mut w.input, rng);
        he(&mut w.res1, rng);
        he(&mut w.res2, rng);
        let small = Normal::new(0.0, std).unwrap();
        for stage in &mut w.cbn {
            for v in stage.gamma.weight.iter_mut().chain(stage.beta.weight.iter_mut()) {
                *v = small.sample(rng);
            }
            stage.gamma.bias.iter_mut().for_each(|b| *b = 1.0);
        }
        w
    }

    /// Layers in serialization order: input, cbn1 gamma, cbn1 beta, res1,
    /// cbn2 gamma, cbn2 beta, res2, cbn3 gamma, cbn3 beta, output.
    pub fn layers(&self) -> [&Linear; 10] {
        [
            &self.input,
            &self.cbn[0].gamma,
            &self.cbn[0].beta,
            &self.res1,
            &self.cbn[1].gamma,
            &self.cbn[1].beta,
            &self.res2,
            &self.cbn[2].gamma,
            &self.cbn[2].beta,
            &self.output,
        ]
    }

    pub fn layers_mut(&mut self) -> [&mut Linear; 10] {
        let [c0, c1, c2] = &mut self.cbn;
        [
            &mut self.input,
            &mut c0.gamma,
            &mut c0.beta,
            &mut self.res1,
            &mut c1.gamma,
            &mut c1.beta,
            &mut self.res2,
            &mut c2.gamma,
            &mut c2.beta,
            &mut self.output,
        ]
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|l| l.param_count()).sum()
    }

    /// All parameters flattened in serialization order.
    pub fn flatten(&self) -> Vec<f64> {
        self.layers().iter().flat_map(|l| l.params().copied()).collect()
    }

    pub fn unflatten(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.param_count());
        let mut it = values.iter();
        for layer in self.layers_mut() {
            for (p, v) in layer.params_mut().zip(&mut it) {
                *p = *v;
            }
        }
    }

    /// True when the output layer is identically zero, i.e. `f == 0`.
    pub fn output_is_zero(&self) -> bool {
        self.output.params().all(|&v| v == 0.0)
    }

    pub fn condition(&self, z: &[f64]) -> Result<Conditioning> {
        if z.len() != self.latent {
            return Err(Error::ShapeMismatch {
                expected: self.latent,
                got: z.len(),
            });
        }
        let mut gamma: [Vec<f64>; 3] = Default::default();
        let mut beta: [Vec<f64>; 3] = Default::default();
        for k in 0..3 {
            gamma[k] = vec![0.0; self.hidden];
            beta[k] = vec![0.0; self.hidden];
            self.cbn[k].gamma.apply(z, &mut gamma[k]);
            self.cbn[k].beta.apply(z, &mut beta[k]);
        }
        Ok(Conditioning { gamma, beta })
    }

    /// Forward pass for a locally transformed point, filling `act`.
    pub fn forward_conditioned(&self, x: &[f64; 3], cond: &Conditioning, act: &mut Activations) -> f64 {
        let h = self.hidden;
        self.input.apply(x, &mut act.h0);
        for j in 0..h {
            act.a1[j] = cond.gamma[0][j] * act.h0[j] + cond.beta[0][j];
            act.r1[j] = relu(act.a1[j]);
        }
        self.res1.apply(&act.r1, &mut act.m1);
        for j in 0..h {
            act.a2[j] = cond.gamma[1][j] * act.m1[j] + cond.beta[1][j];
            act.r2[j] = relu(act.a2[j]);
        }
        self.res2.apply(&act.r2, &mut act.h1);
        for j in 0..h {
            act.h1[j] += act.h0[j];
            act.a3[j] = cond.gamma[2][j] * act.h1[j] + cond.beta[2][j];
            act.r3[j] = relu(act.a3[j]);
        }
        self.output.bias[0]
            + self
                .output
                .weight
                .iter()
                .zip(&act.r3)
                .map(|(w, r)| w * r)
                .sum::<f64>()
    }

    /// Backpropagates `upstream = dL/df` through a pass recorded in `act`.
    ///
    /// Accumulates into `grad` (latent-independent layers), `dgamma`/`dbeta`
    /// (per-stage conditioning vectors) and returns `dL/dx`.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        x: &[f64; 3],
        cond: &Conditioning,
        act: &Activations,
        upstream: f64,
        grad: &mut DecoderGrad,
        dgamma: &mut [Vec<f64>; 3],
        dbeta: &mut [Vec<f64>; 3],
        s: &mut BackwardScratch,
    ) -> [f64; 3] {
        let h = self.hidden;
        for j in 0..h {
            grad.output.weight[j] += upstream * act.r3[j];
        }
        grad.output.bias[0] += upstream;

        for j in 0..h {
            s.da3[j] = upstream * self.output.weight[j] * relu_mask(act.a3[j]);
            dgamma[2][j] += s.da3[j] * act.h1[j];
            dbeta[2][j] += s.da3[j];
            s.dh1[j] = s.da3[j] * cond.gamma[2][j];
        }
        // h1 = h0 + res2(r2)
        accumulate_outer(&mut grad.res2, &s.dh1, &act.r2);
        self.res2.apply_transpose(&s.dh1, &mut s.dr2);
        for j in 0..h {
            s.da2[j] = s.dr2[j] * relu_mask(act.a2[j]);
            dgamma[1][j] += s.da2[j] * act.m1[j];
            dbeta[1][j] += s.da2[j];
            s.dm1[j] = s.da2[j] * cond.gamma[1][j];
        }
        accumulate_outer(&mut grad.res1, &s.dm1, &act.r1);
        self.res1.apply_transpose(&s.dm1, &mut s.dr1);
        for j in 0..h {
            s.da1[j] = s.dr1[j] * relu_mask(act.a1[j]);
            dgamma[0][j] += s.da1[j] * act.h0[j];
            dbeta[0][j] += s.da1[j];
            s.dh0[j] = s.dh1[j] + s.da1[j] * cond.gamma[0][j];
        }
        accumulate_outer(&mut grad.input, &s.dh0, x);
        let mut dx = [0.0; 3];
        self.input.apply_transpose(&s.dh0, &mut dx);
        dx
    }
}

/// `layer.W += g x^T`, `layer.b += g`
fn accumulate_outer(layer: &mut Linear, g: &[f64], x: &[f64]) {
    for (row, (gi, b)) in layer
        .weight
        .chunks_exact_mut(layer.inputs)
        .zip(g.iter().zip(layer.bias.iter_mut()))
    {
        *b += gi;
        for (w, xv) in row.iter_mut().zip(x) {
            *w += gi * xv;
        }
    }
}

/// Convenience forward pass `f(x, z)` for a single query.
pub fn decoder_forward(x_local: &[f64; 3], z: &[f64], w: &DecoderWeights) -> Result<f64> {
    let cond = w.condition(z)?;
    let mut act = Activations::new(w.hidden);
    Ok(w.forward_conditioned(x_local, &cond, &mut act))
}
