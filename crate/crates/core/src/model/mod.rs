//! Shape elements and the composite implicit function
//! `LDIF(x) = sum_i g(x, theta_i) * (1 + f(T_i x, z_i))`.

mod format;

use std::f64::consts::FRAC_PI_4;

use rayon::prelude::*;

pub use format::{parse_model, read_model, write_model, write_model_to};

use crate::decoder::{Activations, Conditioning, DecoderWeights};
use crate::error::{Error, Result};
use crate::geom::{Aabb, Mat3, Similarity, Vec3};

/// Upper bound of every element radius.
pub const MAX_RADIUS: f64 = 0.15;
/// Euler angles are clamped to `[-EULER_LIMIT, EULER_LIMIT]`.
pub const EULER_LIMIT: f64 = FRAC_PI_4;
/// Field value at which surfaces are extracted and samples are classified.
pub const DEFAULT_ISOLEVEL: f64 = -0.07;

/// Analytic parameters of one shape element.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElementParams {
    /// Density amplitude, never positive.
    pub scale: f64,
    pub center: Vec3,
    pub radii: Vec3,
    /// Intrinsic z-y-x Euler angles (radians): `R = Rz(e.z) Ry(e.y) Rx(e.x)`.
    pub euler: Vec3,
}

/// Unconstrained optimization variables that [`activate`] maps to [`ElementParams`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RawElementVars {
    pub y_c: f64,
    pub y_p: Vec3,
    pub y_r: Vec3,
    pub y_e: Vec3,
}

impl RawElementVars {
    pub fn to_array(&self) -> [f64; 10] {
        let mut a = [0.0; 10];
        a[0] = self.y_c;
        a[1..4].copy_from_slice(self.y_p.as_slice());
        a[4..7].copy_from_slice(self.y_r.as_slice());
        a[7..10].copy_from_slice(self.y_e.as_slice());
        a
    }

    pub fn from_slice(a: &[f64]) -> Self {
        RawElementVars {
            y_c: a[0],
            y_p: Vec3::new(a[1], a[2], a[3]),
            y_r: Vec3::new(a[4], a[5], a[6]),
            y_e: Vec3::new(a[7], a[8], a[9]),
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Maps raw variables to valid analytic parameters:
/// `c = -|y_c|`, `p = y_p / 2`, `r = 0.15 sig(y_r)`, `e = clamp(y_e, +-pi/4)`.
pub fn activate(raw: &RawElementVars) -> ElementParams {
    ElementParams {
        scale: -raw.y_c.abs(),
        center: raw.y_p * 0.5,
        radii: raw.y_r.map(|y| MAX_RADIUS * sigmoid(y)),
        euler: raw.y_e.map(|y| y.clamp(-EULER_LIMIT, EULER_LIMIT)),
    }
}

/// A right inverse of [`activate`] on valid parameters (radii strictly below
/// the bound).
pub fn deactivate(params: &ElementParams) -> RawElementVars {
    RawElementVars {
        y_c: -params.scale,
        y_p: params.center * 2.0,
        y_r: params.radii.map(|r| {
            let s = r / MAX_RADIUS;
            (s / (1.0 - s)).ln()
        }),
        y_e: params.euler,
    }
}

fn rot_x(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    Mat3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

fn rot_y(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    Mat3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

fn rot_z(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// `R = Rz(e.z) * Ry(e.y) * Rx(e.x)`
pub fn euler_rotation(e: &Vec3) -> Mat3 {
    rot_z(e.z) * rot_y(e.y) * rot_x(e.x)
}

fn drot_x(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    Mat3::new(0.0, 0.0, 0.0, 0.0, -s, -c, 0.0, c, -s)
}

fn drot_y(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    Mat3::new(-s, 0.0, c, 0.0, 0.0, 0.0, -c, 0.0, -s)
}

fn drot_z(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    Mat3::new(-s, -c, 0.0, c, -s, 0.0, 0.0, 0.0, 0.0)
}

/// Partial derivatives of [`euler_rotation`] with respect to `e.x`, `e.y`, `e.z`.
pub fn euler_rotation_derivatives(e: &Vec3) -> [Mat3; 3] {
    let (rx, ry, rz) = (rot_x(e.x), rot_y(e.y), rot_z(e.z));
    [
        rz * ry * drot_x(e.x),
        rz * drot_y(e.y) * rx,
        drot_z(e.z) * ry * rx,
    ]
}

/// Affine world-to-local map `x -> diag(1/r) R^T (x - p)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElementTransform {
    pub linear: Mat3,
    pub translation: Vec3,
}

impl ElementTransform {
    pub fn apply(&self, x: &Vec3) -> Vec3 {
        self.linear * x + self.translation
    }

    pub fn inverse(&self) -> ElementTransform {
        let inv = self
            .linear
            .try_inverse()
            .expect("element transforms are invertible");
        ElementTransform {
            linear: inv,
            translation: -(inv * self.translation),
        }
    }

    /// The 3x4 matrix `[linear | translation]`, row-major.
    pub fn matrix(&self) -> [[f64; 4]; 3] {
        let mut m = [[0.0; 4]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for j in 0..3 {
                row[j] = self.linear[(i, j)];
            }
            row[3] = self.translation[i];
        }
        m
    }
}

impl ElementParams {
    pub fn is_valid(&self) -> bool {
        self.scale <= 0.0
            && self.radii.iter().all(|&r| r > 0.0 && r <= MAX_RADIUS)
            && self.euler.iter().all(|e| e.abs() <= EULER_LIMIT)
            && self.center.iter().all(|v| v.is_finite())
    }

    pub fn to_array(&self) -> [f64; 10] {
        let mut a = [0.0; 10];
        a[0] = self.scale;
        a[1..4].copy_from_slice(self.center.as_slice());
        a[4..7].copy_from_slice(self.radii.as_slice());
        a[7..10].copy_from_slice(self.euler.as_slice());
        a
    }

    pub fn from_slice(a: &[f64]) -> Self {
        ElementParams {
            scale: a[0],
            center: Vec3::new(a[1], a[2], a[3]),
            radii: Vec3::new(a[4], a[5], a[6]),
            euler: Vec3::new(a[7], a[8], a[9]),
        }
    }

    pub fn rotation(&self) -> Mat3 {
        euler_rotation(&self.euler)
    }

    pub fn transform(&self) -> Result<ElementTransform> {
        element_transform(self)
    }

    /// The element reflected by `S`: mirrored center and the rotation `S R S`.
    /// Its transform satisfies `T'(x) = S T(S x)`.
    pub fn mirrored(&self, axis: usize) -> ElementParams {
        let mut m = *self;
        m.center[axis] = -m.center[axis];
        // Conjugating by a reflection keeps the angle about `axis` and negates the others.
        for k in 0..3 {
            if k != axis {
                m.euler[k] = -m.euler[k];
            }
        }
        m
    }
}

pub fn element_transform(params: &ElementParams) -> Result<ElementTransform> {
    if params.radii.iter().any(|&r| !(r > 0.0)) {
        return Err(Error::DegenerateRadii(params.radii.into()));
    }
    let inv_r = Mat3::from_diagonal(&params.radii.map(|r| 1.0 / r));
    let linear = inv_r * params.rotation().transpose();
    Ok(ElementTransform {
        linear,
        translation: -(linear * params.center),
    })
}

/// Oriented anisotropic Gaussian `c * exp(-|T x|^2 / 2)`.
pub fn eval_gaussian(x: &Vec3, params: &ElementParams) -> Result<f64> {
    let t = element_transform(params)?;
    Ok(params.scale * (-0.5 * t.apply(x).norm_squared()).exp())
}

/// Reflection `S` across the plane through the origin with normal `axis`.
pub fn reflect(x: &Vec3, axis: usize) -> Vec3 {
    let mut y = *x;
    y[axis] = -y[axis];
    y
}

/// Number of reflection-symmetric elements used when none is specified: half, rounded up.
pub fn default_sym_count(n_elements: usize) -> usize {
    n_elements.div_ceil(2)
}

/// A complete shape: `N` elements, their latent codes and the shared decoder.
///
/// The first `sym_count` elements are symmetric and contribute a second,
/// mirrored term for the reflected query `S x`.
#[derive(Clone, Debug, PartialEq)]
pub struct LdifModel {
    pub elements: Vec<ElementParams>,
    pub latents: Vec<Vec<f64>>,
    pub decoder: DecoderWeights,
    pub sym_count: usize,
    pub sym_axis: usize,
    /// Object-to-model similarity. Queries in object coordinates are mapped
    /// through it before evaluation; `None` means the frames coincide.
    pub frame: Option<Similarity>,
}

impl LdifModel {
    pub fn new(
        elements: Vec<ElementParams>,
        latents: Vec<Vec<f64>>,
        decoder: DecoderWeights,
        sym_count: usize,
        sym_axis: usize,
    ) -> Result<Self> {
        let m = LdifModel {
            elements,
            latents,
            decoder,
            sym_count,
            sym_axis,
            frame: None,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |msg: String| Err(Error::InvalidArgument(msg));
        if self.latents.len() != self.elements.len() {
            return invalid(format!(
                "{} latent codes for {} elements",
                self.latents.len(),
                self.elements.len()
            ));
        }
        if self.sym_count > self.elements.len() {
            return invalid(format!(
                "sym_count {} exceeds element count {}",
                self.sym_count,
                self.elements.len()
            ));
        }
        if self.sym_axis > 2 {
            return invalid(format!("symmetry axis {} is not 0, 1 or 2", self.sym_axis));
        }
        if let Some(z) = self.latents.iter().find(|z| z.len() != self.decoder.latent) {
            return Err(Error::ShapeMismatch {
                expected: self.decoder.latent,
                got: z.len(),
            });
        }
        if let Some((i, e)) = self.elements.iter().enumerate().find(|(_, e)| !e.is_valid()) {
            return invalid(format!("element {i} violates parameter bounds: {e:?}"));
        }
        Ok(())
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.decoder.latent
    }

    pub fn is_symmetric(&self, i: usize) -> bool {
        i < self.sym_count
    }

    /// Precomputes transforms and latent conditioning for repeated evaluation.
    pub fn prepare(&self) -> PreparedModel<'_> {
        let elements = self
            .elements
            .iter()
            .zip(&self.latents)
            .map(|(e, z)| PreparedElement {
                scale: e.scale,
                transform: element_transform(e).expect("validated model"),
                cond: self.decoder.condition(z).expect("validated model"),
            })
            .collect();
        PreparedModel {
            model: self,
            elements,
            residual: !self.decoder.output_is_zero(),
        }
    }

    /// Bounds enclosing `sigmas` standard deviations of every Gaussian,
    /// including mirrored copies, in model coordinates.
    pub fn support_bounds(&self, sigmas: f64) -> Aabb {
        let mut b = Aabb::empty();
        for (i, e) in self.elements.iter().enumerate() {
            let copies = if self.is_symmetric(i) {
                vec![*e, e.mirrored(self.sym_axis)]
            } else {
                vec![*e]
            };
            for c in copies {
                let r = c.rotation();
                let half = Vec3::from_fn(|j, _| {
                    sigmas
                        * (0..3)
                            .map(|k| (r[(j, k)] * c.radii[k]).powi(2))
                            .sum::<f64>()
                            .sqrt()
                });
                b.grow(&(c.center - half));
                b.grow(&(c.center + half));
            }
        }
        b
    }

    /// Converts an object-space point to model coordinates.
    pub fn to_model(&self, x: &Vec3) -> Vec3 {
        match &self.frame {
            Some(f) => f.apply(x),
            None => *x,
        }
    }

    /// Converts a model-space point back to object coordinates.
    pub fn to_object(&self, x: &Vec3) -> Vec3 {
        match &self.frame {
            Some(f) => f.apply_inverse(x),
            None => *x,
        }
    }
}

struct PreparedElement {
    scale: f64,
    transform: ElementTransform,
    cond: Conditioning,
}

/// An [`LdifModel`] with per-element quantities cached.
pub struct PreparedModel<'a> {
    model: &'a LdifModel,
    elements: Vec<PreparedElement>,
    residual: bool,
}

impl PreparedModel<'_> {
    fn term(&self, e: &PreparedElement, x: &Vec3, act: &mut Activations) -> f64 {
        let local = e.transform.apply(x);
        let g = e.scale * (-0.5 * local.norm_squared()).exp();
        if !self.residual {
            return g;
        }
        let f = self
            .model
            .decoder
            .forward_conditioned(&[local.x, local.y, local.z], &e.cond, act);
        g * (1.0 + f)
    }

    /// Field value at `x` in model coordinates.
    pub fn eval_with(&self, x: &Vec3, act: &mut Activations) -> f64 {
        let mut sum = 0.0;
        let mirrored = reflect(x, self.model.sym_axis);
        for (i, e) in self.elements.iter().enumerate() {
            sum += self.term(e, x, act);
            if self.model.is_symmetric(i) {
                sum += self.term(e, &mirrored, act);
            }
        }
        sum
    }

    pub fn eval(&self, x: &Vec3) -> f64 {
        let mut act = Activations::new(self.model.decoder.hidden);
        self.eval_with(x, &mut act)
    }

    /// Evaluates many model-space points, in parallel, preserving order.
    pub fn eval_batch(&self, points: &[Vec3]) -> Vec<f64> {
        let hidden = self.model.decoder.hidden;
        points
            .par_iter()
            .map_init(|| Activations::new(hidden), |act, p| self.eval_with(p, act))
            .collect()
    }
}

/// `LDIF(x)` at a model-space point.
pub fn eval_ldif(x: &Vec3, model: &LdifModel) -> f64 {
    model.prepare().eval(x)
}

/// Elementwise [`eval_ldif`].
pub fn eval_ldif_batch(points: &[Vec3], model: &LdifModel) -> Vec<f64> {
    model.prepare().eval_batch(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn element(c: f64, p: [f64; 3], r: [f64; 3], e: [f64; 3]) -> ElementParams {
        ElementParams {
            scale: c,
            center: Vec3::from(p),
            radii: Vec3::from(r),
            euler: Vec3::from(e),
        }
    }

    #[test]
    fn activation_examples() {
        let raw = RawElementVars {
            y_c: 2.0,
            y_p: Vec3::new(1.0, 2.0, 3.0),
            y_r: Vec3::zeros(),
            y_e: Vec3::new(10.0, 0.0, -10.0),
        };
        let p = activate(&raw);
        assert_eq!(p.scale, -2.0);
        assert_eq!(p.center, Vec3::new(0.5, 1.0, 1.5));
        assert_eq!(p.radii, Vec3::repeat(0.075));
        assert_eq!(p.euler, Vec3::new(FRAC_PI_4, 0.0, -FRAC_PI_4));
    }

    #[test]
    fn deactivate_is_right_inverse() {
        let p = element(-1.3, [0.1, -0.2, 0.3], [0.05, 0.1, 0.149], [0.1, -0.7, 0.3]);
        let q = activate(&deactivate(&p));
        assert_relative_eq!(q.scale, p.scale);
        assert_relative_eq!(q.center, p.center, epsilon = 1e-15);
        assert_relative_eq!(q.radii, p.radii, epsilon = 1e-14);
        assert_eq!(q.euler, p.euler);
    }

    #[test]
    fn transform_examples() {
        let t = element_transform(&element(-1.0, [0.0; 3], [1.0; 3], [0.0; 3])).unwrap();
        assert_eq!(t.linear, Mat3::identity());
        assert_eq!(t.translation, Vec3::zeros());

        let t = element_transform(&element(-1.0, [1.0, 0.0, 0.0], [2.0, 1.0, 1.0], [0.0; 3]))
            .unwrap();
        assert_relative_eq!(t.apply(&Vec3::new(3.0, 0.0, 0.0)), Vec3::new(1.0, 0.0, 0.0));

        let t = element_transform(&element(-1.0, [0.0; 3], [1.0; 3], [0.0, 0.0, FRAC_PI_4]))
            .unwrap();
        let h = 0.5f64.sqrt();
        assert_relative_eq!(
            t.apply(&Vec3::new(1.0, 0.0, 0.0)),
            Vec3::new(h, -h, 0.0),
            epsilon = 1e-15
        );
    }

    #[test]
    fn degenerate_radii_rejected() {
        let e = element(-1.0, [0.0; 3], [1.0, 0.0, 1.0], [0.0; 3]);
        assert!(matches!(element_transform(&e), Err(Error::DegenerateRadii(_))));
    }

    #[test]
    fn gaussian_examples() {
        let e = element(-1.0, [1.0, 0.0, 0.0], [2.0, 1.0, 1.0], [0.0; 3]);
        assert_eq!(eval_gaussian(&e.center, &e).unwrap(), -1.0);
        assert_relative_eq!(
            eval_gaussian(&Vec3::new(3.0, 0.0, 0.0), &e).unwrap(),
            -(-0.5f64).exp(),
            epsilon = 1e-15
        );
        // |T x| = 6 at x = p + (12, 0, 0).
        assert_relative_eq!(
            eval_gaussian(&Vec3::new(13.0, 0.0, 0.0), &e).unwrap(),
            -(-18.0f64).exp(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn rotation_derivatives_match_finite_differences() {
        let e = Vec3::new(0.3, -0.5, 0.7);
        let d = euler_rotation_derivatives(&e);
        let h = 1e-6;
        for k in 0..3 {
            let mut ep = e;
            let mut em = e;
            ep[k] += h;
            em[k] -= h;
            let fd = (euler_rotation(&ep) - euler_rotation(&em)) / (2.0 * h);
            assert_relative_eq!(fd, d[k], epsilon = 1e-9);
        }
    }

    fn random_model(n: usize, m: usize, h: usize, sym: usize, seed: u64) -> LdifModel {
        let mut r = rng::substream(seed, "model-test", 0);
        let elements = (0..n)
            .map(|_| {
                activate(&RawElementVars {
                    y_c: r.random_range(-2.0..2.0),
                    y_p: Vec3::from_fn(|_, _| r.random_range(-0.6..0.6)),
                    y_r: Vec3::from_fn(|_, _| r.random_range(-1.0..1.0)),
                    y_e: Vec3::from_fn(|_, _| r.random_range(-1.0..1.0)),
                })
            })
            .collect();
        let latents = (0..n)
            .map(|_| (0..m).map(|_| r.random_range(-1.0..1.0)).collect())
            .collect();
        let mut decoder = DecoderWeights::init(m, h, 0.3, &mut r);
        decoder
            .output
            .params_mut()
            .for_each(|v| *v = r.random_range(-0.5..0.5));
        LdifModel::new(elements, latents, decoder, sym, 0).unwrap()
    }

    fn random_point(r: &mut crate::rng::Rng) -> Vec3 {
        Vec3::from_fn(|_, _| r.random_range(-0.5..0.5))
    }

    #[test]
    fn zero_output_layer_degenerates_to_gaussian_sum() {
        let mut model = random_model(5, 4, 6, 2, 1);
        model.decoder.output = crate::decoder::Linear::zeros(6, 1);
        let mut r = rng::substream(1, "pts", 0);
        for _ in 0..1000 {
            let x = random_point(&mut r);
            let mut sif = 0.0;
            for (i, e) in model.elements.iter().enumerate() {
                sif += eval_gaussian(&x, e).unwrap();
                if i < model.sym_count {
                    sif += eval_gaussian(&reflect(&x, 0), e).unwrap();
                }
            }
            assert!((eval_ldif(&x, &model) - sif).abs() <= 1e-12);
        }
    }

    #[test]
    fn single_element_matches_gaussian() {
        let mut model = random_model(1, 3, 4, 0, 2);
        model.decoder.output = crate::decoder::Linear::zeros(4, 1);
        let x = Vec3::new(0.1, 0.05, -0.2);
        assert_eq!(eval_ldif(&x, &model), eval_gaussian(&x, &model.elements[0]).unwrap());
    }

    #[test]
    fn symmetric_element_equals_explicit_mirror_pair() {
        let mut r = rng::substream(3, "mirror", 0);
        let base = element(-0.8, [0.2, 0.0, 0.0], [0.1, 0.07, 0.12], [0.3, -0.2, 0.5]);
        let z: Vec<f64> = (0..4).map(|_| r.random_range(-1.0..1.0)).collect();
        // The mirrored term feeds T(Sx) to the decoder while an explicit mirror
        // copy would feed S T(Sx); they agree when f vanishes.
        let decoder = DecoderWeights::init(4, 5, 0.2, &mut r);
        let a = LdifModel::new(vec![base], vec![z.clone()], decoder.clone(), 1, 0).unwrap();
        let b = LdifModel::new(
            vec![base, base.mirrored(0)],
            vec![z.clone(), z],
            decoder,
            0,
            0,
        )
        .unwrap();
        for _ in 0..1000 {
            let x = random_point(&mut r);
            assert!((eval_ldif(&x, &a) - eval_ldif(&x, &b)).abs() <= 1e-12);
        }
    }

    #[test]
    fn mirrored_transform_identity() {
        let e = element(-1.0, [0.2, 0.1, -0.3], [0.1, 0.07, 0.12], [0.3, -0.2, 0.5]);
        let t = e.transform().unwrap();
        let tm = e.mirrored(0).transform().unwrap();
        let x = Vec3::new(0.3, -0.1, 0.2);
        assert_relative_eq!(tm.apply(&x), reflect(&t.apply(&reflect(&x, 0)), 0), epsilon = 1e-14);
    }

    #[test]
    fn fully_symmetric_model_is_reflection_invariant() {
        let model = random_model(4, 3, 5, 4, 4);
        let mut r = rng::substream(4, "pts", 0);
        for _ in 0..1000 {
            let x = random_point(&mut r);
            let a = eval_ldif(&x, &model);
            let b = eval_ldif(&reflect(&x, 0), &model);
            assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn batch_matches_pointwise() {
        let model = random_model(3, 2, 4, 1, 5);
        let mut r = rng::substream(5, "pts", 0);
        let pts: Vec<Vec3> = (0..257).map(|_| random_point(&mut r)).collect();
        let batch = eval_ldif_batch(&pts, &model);
        for (p, v) in pts.iter().zip(batch) {
            assert_eq!(v.to_bits(), eval_ldif(p, &model).to_bits());
        }
    }

    #[test]
    fn invalid_models_rejected() {
        let d = DecoderWeights::zeros(2, 2);
        let e = element(-1.0, [0.0; 3], [0.1; 3], [0.0; 3]);
        assert!(LdifModel::new(vec![e], vec![vec![0.0; 3]], d.clone(), 0, 0).is_err());
        assert!(LdifModel::new(vec![e], vec![vec![0.0; 2]], d.clone(), 2, 0).is_err());
        let bad = element(0.5, [0.0; 3], [0.1; 3], [0.0; 3]);
        assert!(LdifModel::new(vec![bad], vec![vec![0.0; 2]], d, 0, 0).is_err());
    }

    proptest! {
        #[test]
        fn activate_always_in_range(
            yc in -1e6f64..1e6,
            yp in proptest::array::uniform3(-1e3f64..1e3),
            yr in proptest::array::uniform3(-30f64..30.0),
            ye in proptest::array::uniform3(-1e3f64..1e3),
        ) {
            let p = activate(&RawElementVars {
                y_c: yc,
                y_p: Vec3::from(yp),
                y_r: Vec3::from(yr),
                y_e: Vec3::from(ye),
            });
            prop_assert!(p.is_valid(), "{:?}", p);
        }

        #[test]
        fn transform_inverse_round_trip(
            p in proptest::array::uniform3(-1f64..1.0),
            r in proptest::array::uniform3(0.01f64..0.15),
            e in proptest::array::uniform3(-FRAC_PI_4..FRAC_PI_4),
            x in proptest::array::uniform3(-2f64..2.0),
        ) {
            let el = element(-1.0, p, r, e);
            let t = el.transform().unwrap();
            let x = Vec3::from(x);
            let back = t.inverse().apply(&t.apply(&x));
            prop_assert!((back - x).norm() <= 1e-12 * x.norm().max(1.0));
        }

        #[test]
        fn gaussian_bounded_by_scale(
            c in -5f64..0.0,
            x in proptest::array::uniform3(-1f64..1.0),
        ) {
            let el = element(c, [0.1, 0.0, -0.1], [0.1, 0.05, 0.12], [0.2, 0.1, -0.3]);
            let g = eval_gaussian(&Vec3::from(x), &el).unwrap();
            prop_assert!(g <= 0.0 && g >= c);
        }
    }
}
