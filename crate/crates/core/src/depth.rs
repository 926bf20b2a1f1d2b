//! Depth camera utilities: depth to XYZ conversion, normal estimation,
//! global point cloud creation and per-element local point extraction.
//!
//! Depth is measured along the camera's +z axis. Pixel `(u, v)` is column
//! `u`, row `v`, with pixel centers at integer coordinates.

use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::Rng as _;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::{Mat3, Vec3};
use crate::model::{element_transform, ElementParams};
use crate::rng;

pub const LOCAL_RADIUS: f64 = 4.0;
pub const LOCAL_GROWTH: f64 = 1.5;
pub const LOCAL_COUNT: usize = 1000;
pub const GLOBAL_COUNT: usize = 10_000;

/// Pinhole camera. The extrinsics map world to camera coordinates:
/// `x_cam = rotation * x_world + translation`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: Mat3,
    pub translation: Vec3,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidArgument("focal lengths must be positive".into()));
        }
        let r = self.rotation;
        if (r.transpose() * r - Mat3::identity()).abs().max() > 1e-6 || r.determinant() < 0.0 {
            return Err(Error::InvalidArgument("extrinsic rotation is not orthonormal".into()));
        }
        Ok(())
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn to_camera(&self, x: &Vec3) -> Vec3 {
        self.rotation * x + self.translation
    }

    pub fn to_world(&self, x: &Vec3) -> Vec3 {
        self.rotation.transpose() * (x - self.translation)
    }

    /// World point of pixel `(u, v)` at depth `d`.
    pub fn unproject_pixel(&self, u: f64, v: f64, d: f64) -> Vec3 {
        self.to_world(&Vec3::new((u - self.cx) * d / self.fx, (v - self.cy) * d / self.fy, d))
    }

    /// `(u, v, depth)` of a world point.
    pub fn project(&self, x: &Vec3) -> (f64, f64, f64) {
        let c = self.to_camera(x);
        (self.fx * c.x / c.z + self.cx, self.fy * c.y / c.z + self.cy, c.z)
    }
}

/// Row-major depth map; zero, negative and non-finite values are invalid.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl DepthImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::ShapeMismatch {
                expected: width * height,
                got: data.len(),
            });
        }
        Ok(DepthImage {
            width,
            height,
            data,
        })
    }

    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.data[v * self.width + u]
    }

    pub fn is_valid(d: f64) -> bool {
        d.is_finite() && d > 0.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct XyzImage {
    pub width: usize,
    pub height: usize,
    pub points: Vec<Vec3>,
    pub valid: Vec<bool>,
}

impl XyzImage {
    fn at(&self, u: usize, v: usize) -> Option<Vec3> {
        let i = v * self.width + u;
        self.valid[i].then(|| self.points[i])
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct OrientedPointCloud {
    pub points: Vec<Vec3>,
    pub normals: Vec<Vec3>,
}

impl OrientedPointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn select(&self, indices: impl IntoIterator<Item = usize>) -> OrientedPointCloud {
        let (points, normals) = indices
            .into_iter()
            .map(|i| (self.points[i], self.normals[i]))
            .unzip();
        OrientedPointCloud { points, normals }
    }
}

pub fn unproject(depth: &DepthImage, cam: &Camera) -> Result<XyzImage> {
    cam.validate()?;
    if (depth.width, depth.height) != (cam.width, cam.height) {
        return Err(Error::InvalidArgument(format!(
            "depth image is {}x{} but the camera expects {}x{}",
            depth.width, depth.height, cam.width, cam.height
        )));
    }
    let (points, valid) = depth
        .data
        .par_iter()
        .enumerate()
        .map(|(i, &d)| {
            if DepthImage::is_valid(d) {
                let (u, v) = ((i % depth.width) as f64, (i / depth.width) as f64);
                (cam.unproject_pixel(u, v, d), true)
            } else {
                (Vec3::zeros(), false)
            }
        })
        .unzip();
    Ok(XyzImage {
        width: depth.width,
        height: depth.height,
        points,
        valid,
    })
}

/// Per-pixel normals from central differences, oriented toward the camera.
/// Pixels without four valid neighbors are dropped.
pub fn estimate_normals(xyz: &XyzImage, cam: &Camera) -> OrientedPointCloud {
    let (w, h) = (xyz.width, xyz.height);
    let eye = cam.center();
    let found: Vec<Option<(Vec3, Vec3)>> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let (u, v) = (i % w, i / w);
            if u == 0 || v == 0 || u + 1 >= w || v + 1 >= h {
                return None;
            }
            let p = xyz.at(u, v)?;
            let du = xyz.at(u + 1, v)? - xyz.at(u - 1, v)?;
            let dv = xyz.at(u, v + 1)? - xyz.at(u, v - 1)?;
            let mut n = du.cross(&dv).try_normalize(0.0)?;
            if n.dot(&(eye - p)) < 0.0 {
                n = -n;
            }
            Some((p, n))
        })
        .collect();
    let (points, normals) = found.into_iter().flatten().unzip();
    OrientedPointCloud { points, normals }
}

/// `count` points drawn without replacement, topped up with random repeats
/// when the cloud is smaller than `count`.
pub fn gather_global(cloud: &OrientedPointCloud, count: usize, seed: u64) -> Result<OrientedPointCloud> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let mut r = rng::substream(seed, "global-cloud", 0);
    let n = cloud.len();
    let mut picks = index::sample(&mut r, n, count.min(n)).into_vec();
    while picks.len() < count {
        picks.push(r.random_range(0..n));
    }
    Ok(cloud.select(picks))
}

/// Points of one element's neighborhood, measured in its local frame.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalCloud {
    pub cloud: OrientedPointCloud,
    /// Final local-frame distance threshold.
    pub radius: f64,
}

/// Up to `count` points with `|T x| <= r`, starting from `r = 4` and growing
/// the threshold by half until enough points qualify or all points do.
pub fn extract_local(
    cloud: &OrientedPointCloud,
    params: &ElementParams,
    count: usize,
    seed: u64,
) -> Result<LocalCloud> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let t = element_transform(params)?;
    let dist: Vec<f64> = cloud.points.iter().map(|p| t.apply(p).norm()).collect();
    let mut radius = LOCAL_RADIUS;
    let candidates = loop {
        let c: Vec<usize> = (0..dist.len()).filter(|&i| dist[i] <= radius).collect();
        if c.len() >= count || c.len() == dist.len() {
            break c;
        }
        radius *= LOCAL_GROWTH;
    };
    let mut r = rng::substream(seed, "local-cloud", 0);
    let picks = index::sample(&mut r, candidates.len(), count.min(candidates.len()));
    Ok(LocalCloud {
        cloud: cloud.select(picks.into_iter().map(|k| candidates[k])),
        radius,
    })
}

/// Reads a depth map. A `.png` is read as 16-bit grayscale holding `scale`
/// raw units per scene unit; anything else as `DPTH w h` followed by
/// little-endian `f32` values.
pub fn read_depth(path: impl AsRef<Path>, scale: f64) -> Result<DepthImage> {
    let path = path.as_ref();
    let is_png = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png"));
    if is_png {
        read_depth_png(path, scale)
    } else {
        parse_depth_raw(&fs::read(path)?, &path.display().to_string())
    }
}

pub fn read_depth_png(path: impl AsRef<Path>, scale: f64) -> Result<DepthImage> {
    if !(scale > 0.0) {
        return Err(Error::InvalidArgument("depth scale must be positive".into()));
    }
    let img = image::open(path)?.into_luma16();
    let (w, h) = img.dimensions();
    let data = img.pixels().map(|p| p.0[0] as f64 / scale).collect();
    DepthImage::new(w as usize, h as usize, data)
}

pub fn write_depth_png(path: impl AsRef<Path>, depth: &DepthImage, scale: f64) -> Result<()> {
    let raw: Vec<u16> = depth
        .data
        .iter()
        .map(|&d| {
            if DepthImage::is_valid(d) {
                (d * scale).round().clamp(0.0, u16::MAX as f64) as u16
            } else {
                0
            }
        })
        .collect();
    let img = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(depth.width as u32, depth.height as u32, raw)
        .ok_or_else(|| Error::InvalidArgument("depth buffer size".into()))?;
    img.save(path)?;
    Ok(())
}

pub fn parse_depth_raw(bytes: &[u8], name: &str) -> Result<DepthImage> {
    let nl = bytes
        .iter()
        .position(|b| *b == b'\n')
        .ok_or_else(|| Error::parse(name, 1, "missing `DPTH w h` header"))?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| Error::parse(name, 1, "header is not text"))?;
    let toks: Vec<&str> = header.split_whitespace().collect();
    if toks.len() != 3 || toks[0] != "DPTH" {
        return Err(Error::parse(name, 1, "expected `DPTH w h`"));
    }
    let dim = |t: &str| t.parse::<usize>().map_err(|_| Error::parse(name, 1, format!("bad size {t:?}")));
    let (w, h) = (dim(toks[1])?, dim(toks[2])?);
    let body = &bytes[nl + 1..];
    if body.len() != 4 * w * h {
        return Err(Error::parse(
            name,
            1,
            format!("expected {} bytes of depth data, found {}", 4 * w * h, body.len()),
        ));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    DepthImage::new(w, h, data)
}

pub fn write_depth_raw(path: impl AsRef<Path>, depth: &DepthImage) -> Result<()> {
    let mut out = format!("DPTH {} {}\n", depth.width, depth.height).into_bytes();
    for d in &depth.data {
        out.extend_from_slice(&(*d as f32).to_le_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}

/// Camera file: `fx fy cx cy`, then the 12 values of `[R | t]` row-major.
/// Whitespace and line breaks are free-form.
pub fn parse_camera(text: &str, name: &str, width: usize, height: usize) -> Result<Camera> {
    let values = text
        .split_whitespace()
        .map(|t| t.parse::<f64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::parse(name, 0, e.to_string()))?;
    if values.len() != 16 {
        return Err(Error::parse(name, 0, format!("expected 16 numbers, found {}", values.len())));
    }
    let e = &values[4..];
    let cam = Camera {
        fx: values[0],
        fy: values[1],
        cx: values[2],
        cy: values[3],
        rotation: Mat3::new(e[0], e[1], e[2], e[4], e[5], e[6], e[8], e[9], e[10]),
        translation: Vec3::new(e[3], e[7], e[11]),
        width,
        height,
    };
    cam.validate()?;
    Ok(cam)
}

pub fn read_camera(path: impl AsRef<Path>, width: usize, height: usize) -> Result<Camera> {
    let path = path.as_ref();
    parse_camera(&fs::read_to_string(path)?, &path.display().to_string(), width, height)
}

pub fn camera_to_string(cam: &Camera) -> String {
    let (r, t) = (cam.rotation, cam.translation);
    let mut s = format!("{} {} {} {}\n", cam.fx, cam.fy, cam.cx, cam.cy);
    for i in 0..3 {
        s += &format!("{} {} {} {}\n", r[(i, 0)], r[(i, 1)], r[(i, 2)], t[i]);
    }
    s
}

/// Depth map of the first intersections of camera rays with `hit`, which
/// returns the ray parameter for a world-space origin and direction.
pub fn render_depth(cam: &Camera, hit: impl Fn(&Vec3, &Vec3) -> Option<f64> + Sync) -> DepthImage {
    let eye = cam.center();
    let rt = cam.rotation.transpose();
    let data = (0..cam.width * cam.height)
        .into_par_iter()
        .map(|i| {
            let (u, v) = ((i % cam.width) as f64, (i / cam.width) as f64);
            // Camera-frame direction with unit z, so the ray parameter is the depth.
            let dir = rt * Vec3::new((u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0);
            hit(&eye, &dir).filter(|t| *t > 0.0).unwrap_or(0.0)
        })
        .collect();
    DepthImage {
        width: cam.width,
        height: cam.height,
        data,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::euler_rotation;

    fn camera(seed: u64) -> Camera {
        let mut r = rng::substream(seed, "camera", 0);
        Camera {
            fx: r.random_range(100.0..300.0),
            fy: r.random_range(100.0..300.0),
            cx: 64.0,
            cy: 48.0,
            rotation: euler_rotation(&Vec3::from_fn(|_, _| r.random_range(-1.0..1.0))),
            translation: Vec3::new(0.1, -0.2, 3.0),
            width: 128,
            height: 96,
        }
    }

    fn sphere_hit(center: Vec3, radius: f64) -> impl Fn(&Vec3, &Vec3) -> Option<f64> + Sync {
        move |o: &Vec3, d: &Vec3| {
            let oc = o - center;
            let a = d.norm_squared();
            let b = oc.dot(d);
            let c = oc.norm_squared() - radius * radius;
            let disc = b * b - a * c;
            (disc >= 0.0).then(|| (-b - disc.sqrt()) / a)
        }
    }

    #[test]
    fn principal_point_on_axis() {
        let cam = camera(1);
        let p = cam.unproject_pixel(cam.cx, cam.cy, 1.0);
        assert!(((p - cam.center()).norm() - 1.0).abs() < 1e-12);
        let axis = cam.rotation.transpose() * Vec3::z();
        assert!(((p - cam.center()).normalize() - axis).norm() < 1e-12);
    }

    #[test]
    fn project_inverts_unproject() {
        let cam = camera(2);
        let mut r = rng::substream(2, "pixels", 0);
        let data = (0..cam.width * cam.height).map(|_| r.random_range(0.5..5.0)).collect();
        let depth = DepthImage::new(cam.width, cam.height, data).unwrap();
        let xyz = unproject(&depth, &cam).unwrap();
        for _ in 0..1000 {
            let (u, v) = (r.random_range(0..cam.width), r.random_range(0..cam.height));
            let (pu, pv, pd) = cam.project(&xyz.points[v * cam.width + u]);
            assert!((pu - u as f64).abs() < 1e-6 && (pv - v as f64).abs() < 1e-6);
            assert!((pd - depth.get(u, v)).abs() < 1e-6);
        }
    }

    #[test]
    fn invalid_pixels_stay_invalid() {
        let cam = Camera { width: 3, height: 1, ..camera(3) };
        let depth = DepthImage::new(3, 1, vec![0.0, f64::NAN, 2.0]).unwrap();
        let xyz = unproject(&depth, &cam).unwrap();
        assert_eq!(xyz.valid, vec![false, false, true]);
    }

    #[test]
    fn plane_normals() {
        let mut cam = camera(4);
        cam.rotation = Mat3::identity();
        cam.translation = Vec3::zeros();
        // Fronto-parallel plane z = 2 in front of the camera.
        let depth = render_depth(&cam, |o, d| Some((2.0 - o.z) / d.z));
        let cloud = estimate_normals(&unproject(&depth, &cam).unwrap(), &cam);
        assert_eq!(cloud.len(), (cam.width - 2) * (cam.height - 2));
        for n in &cloud.normals {
            assert!((n - Vec3::new(0.0, 0.0, -1.0)).norm() < 1e-6);
        }
    }

    #[test]
    fn sphere_normals() {
        let cam = camera(5);
        let center = cam.unproject_pixel(cam.cx, cam.cy, 3.0);
        let depth = render_depth(&cam, sphere_hit(center, 0.8));
        let cloud = estimate_normals(&unproject(&depth, &cam).unwrap(), &cam);
        assert!(cloud.len() > 1000);
        let mut checked = 0;
        for (p, n) in cloud.points.iter().zip(&cloud.normals) {
            let exact = (p - center).normalize();
            // Skip the grazing band near the silhouette.
            if exact.dot(&(cam.center() - p).normalize()) < 0.3 {
                continue;
            }
            assert!(n.dot(&exact).clamp(-1.0, 1.0).acos().to_degrees() < 2.0);
            checked += 1;
        }
        assert!(checked > 500);
    }

    #[test]
    fn single_pixel_has_no_normal() {
        let cam = Camera { width: 3, height: 3, ..camera(6) };
        let mut data = vec![0.0; 9];
        data[4] = 1.0;
        let xyz = unproject(&DepthImage::new(3, 3, data).unwrap(), &cam).unwrap();
        assert!(estimate_normals(&xyz, &cam).is_empty());
    }

    fn cloud_of(n: usize) -> OrientedPointCloud {
        OrientedPointCloud {
            points: (0..n).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect(),
            normals: vec![Vec3::z(); n],
        }
    }

    #[test]
    fn global_without_replacement() {
        let c = cloud_of(20_000);
        let g = gather_global(&c, GLOBAL_COUNT, 1).unwrap();
        let mut xs: Vec<i64> = g.points.iter().map(|p| p.x as i64).collect();
        xs.sort();
        xs.dedup();
        assert_eq!(xs.len(), GLOBAL_COUNT);
        assert_eq!(g, gather_global(&c, GLOBAL_COUNT, 1).unwrap());
    }

    #[test]
    fn global_repeats_when_short() {
        let c = cloud_of(3000);
        let g = gather_global(&c, GLOBAL_COUNT, 2).unwrap();
        assert_eq!(g.len(), GLOBAL_COUNT);
        let mut xs: Vec<i64> = g.points.iter().map(|p| p.x as i64).collect();
        xs.sort();
        xs.dedup();
        assert_eq!(xs.len(), 3000);
        assert!(matches!(gather_global(&cloud_of(0), 10, 1), Err(Error::EmptyCloud)));
    }

    fn unit_element() -> ElementParams {
        ElementParams {
            scale: -1.0,
            center: Vec3::zeros(),
            radii: Vec3::repeat(0.1),
            euler: Vec3::zeros(),
        }
    }

    fn shell(n: usize, local_distance: f64) -> OrientedPointCloud {
        let mut r = rng::substream(9, "shell", 0);
        let points = (0..n)
            .map(|_| {
                let d = Vec3::from_fn(|_, _| r.random_range(-1.0..1.0)).normalize();
                d * (0.1 * local_distance)
            })
            .collect();
        OrientedPointCloud {
            points,
            normals: vec![Vec3::z(); n],
        }
    }

    #[test]
    fn local_within_initial_radius() {
        let c = shell(3000, 1.0);
        let l = extract_local(&c, &unit_element(), LOCAL_COUNT, 1).unwrap();
        assert_eq!(l.radius, 4.0);
        assert_eq!(l.cloud.len(), 1000);
        let mut xs: Vec<_> = l.cloud.points.iter().map(|p| (p.x, p.y, p.z)).collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        xs.dedup();
        assert_eq!(xs.len(), 1000);
        assert!(l.cloud.points.iter().all(|p| c.points.contains(p)));
    }

    #[test]
    fn local_expands_radius() {
        let c = shell(3000, 10.0);
        let l = extract_local(&c, &unit_element(), LOCAL_COUNT, 1).unwrap();
        assert_eq!(l.cloud.len(), 1000);
        assert!(l.radius > 4.0);
        let t = element_transform(&unit_element()).unwrap();
        assert!(l.cloud.points.iter().all(|p| t.apply(p).norm() <= l.radius));
        assert!(matches!(
            extract_local(&OrientedPointCloud::default(), &unit_element(), 10, 1),
            Err(Error::EmptyCloud)
        ));
    }

    #[test]
    fn raw_depth_and_camera_round_trip() {
        let cam = camera(7);
        let depth = DepthImage::new(2, 2, vec![1.5, 0.0, 2.25, 3.0]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.bin");
        write_depth_raw(&p, &depth).unwrap();
        assert_eq!(read_depth(&p, 1.0).unwrap(), depth);
        let back = parse_camera(&camera_to_string(&cam), "cam", cam.width, cam.height).unwrap();
        assert_eq!(back, cam);
        let png = dir.path().join("d.png");
        write_depth_png(&png, &depth, 1000.0).unwrap();
        assert_eq!(read_depth(&png, 1000.0).unwrap(), depth);
    }
}
