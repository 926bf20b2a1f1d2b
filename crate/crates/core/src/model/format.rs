//! Versioned text serialization of [`LdifModel`].
//!
//! ```text
//! LDIF 1 <N> <M> <sym_count> <sym_axis>
//! c p1 p2 p3 r1 r2 r3 e1 e2 e3          (N lines, activated parameters)
//! z1 ... zM                             (N lines)
//! DECODER <H> <M>
//! <weights row-major> <bias>            (10 lines, one per layer)
//! FRAME <scale> <tx> <ty> <tz>          (optional object-to-model similarity)
//! ```
//!
//! Reals are written with 17 significant digits so that reading a file back
//! reproduces every value bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;

use super::{ElementParams, LdifModel};
use crate::decoder::DecoderWeights;
use crate::error::{Error, Result};
use crate::geom::{Similarity, Vec3};

const MAGIC: &str = "LDIF";
const VERSION: u32 = 1;

fn push_reals<'a>(out: &mut String, values: impl IntoIterator<Item = &'a f64>) {
    for (i, v) in values.into_iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{v:.16e}");
    }
    out.push('\n');
}

pub fn model_to_string(model: &LdifModel) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{MAGIC} {VERSION} {} {} {} {}",
        model.n_elements(),
        model.latent_dim(),
        model.sym_count,
        model.sym_axis
    );
    for e in &model.elements {
        push_reals(&mut out, &e.to_array());
    }
    for z in &model.latents {
        push_reals(&mut out, z);
    }
    let _ = writeln!(out, "DECODER {} {}", model.decoder.hidden, model.decoder.latent);
    for layer in model.decoder.layers() {
        push_reals(&mut out, layer.params());
    }
    if let Some(f) = &model.frame {
        out.push_str("FRAME ");
        push_reals(
            &mut out,
            &[f.scale, f.translation.x, f.translation.y, f.translation.z],
        );
    }
    out
}

pub fn write_model_to(w: &mut impl Write, model: &LdifModel) -> Result<()> {
    w.write_all(model_to_string(model).as_bytes())?;
    Ok(())
}

pub fn write_model(path: impl AsRef<Path>, model: &LdifModel) -> Result<()> {
    fs::write(path, model_to_string(model))?;
    Ok(())
}

pub fn read_model(path: impl AsRef<Path>) -> Result<LdifModel> {
    let path = path.as_ref();
    parse_model(&fs::read_to_string(path)?, &path.display().to_string())
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    name: &'a str,
    line: usize,
}

impl<'a> Lines<'a> {
    fn next_line(&mut self) -> Result<Option<&'a str>> {
        for (i, l) in self.inner.by_ref() {
            self.line = i + 1;
            if !l.trim().is_empty() {
                return Ok(Some(l));
            }
        }
        Ok(None)
    }

    fn expect_line(&mut self, what: &str) -> Result<&'a str> {
        self.next_line()?
            .ok_or_else(|| Error::parse(self.name, self.line + 1, format!("missing {what}")))
    }

    fn reals(&mut self, count: usize, what: &str) -> Result<Vec<f64>> {
        let line = self.expect_line(what)?;
        let values = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| self.err(format!("{what}: {e}")))?;
        if values.len() != count {
            return Err(self.err(format!("{what}: expected {count} values, found {}", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(self.err(format!("{what}: non-finite value")));
        }
        Ok(values)
    }

    fn err(&self, msg: String) -> Error {
        Error::parse(self.name, self.line, msg)
    }
}

fn parse_counts(toks: &[&str], lines: &Lines) -> Result<Vec<usize>> {
    toks.iter()
        .map(|t| t.parse::<usize>().map_err(|_| lines.err(format!("bad count {t:?}"))))
        .collect()
}

pub fn parse_model(text: &str, name: &str) -> Result<LdifModel> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        name,
        line: 0,
    };
    let header: Vec<&str> = lines.expect_line("header")?.split_whitespace().collect();
    if header.len() != 6 || header[0] != MAGIC {
        return Err(lines.err("expected `LDIF <version> <N> <M> <sym_count> <sym_axis>`".into()));
    }
    let nums = parse_counts(&header[1..], &lines)?;
    let (version, n, m, sym_count, sym_axis) = (nums[0], nums[1], nums[2], nums[3], nums[4]);
    if version != VERSION as usize {
        return Err(lines.err(format!("unsupported version {version}")));
    }
    if m == 0 {
        return Err(lines.err("latent dimension must be positive".into()));
    }
    let mut elements = Vec::with_capacity(n);
    for i in 0..n {
        elements.push(ElementParams::from_slice(
            &lines.reals(10, &format!("element {i}"))?,
        ));
    }
    let mut latents = Vec::with_capacity(n);
    for i in 0..n {
        latents.push(lines.reals(m, &format!("latent {i}"))?);
    }
    let dec: Vec<&str> = lines.expect_line("decoder header")?.split_whitespace().collect();
    if dec.len() != 3 || dec[0] != "DECODER" {
        return Err(lines.err("expected `DECODER <H> <M>`".into()));
    }
    let dims = parse_counts(&dec[1..], &lines)?;
    let (h, dm) = (dims[0], dims[1]);
    if h == 0 || dm != m {
        return Err(lines.err(format!(
            "decoder dimensions H={h}, M={dm} do not match latent dimension {m}"
        )));
    }
    let mut decoder = DecoderWeights::zeros(m, h);
    for (k, layer) in decoder.layers_mut().into_iter().enumerate() {
        let values = lines.reals(layer.param_count(), &format!("decoder layer {k}"))?;
        for (p, v) in layer.params_mut().zip(values) {
            *p = v;
        }
    }
    let mut frame = None;
    if let Some(line) = lines.next_line()? {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.first() != Some(&"FRAME") || toks.len() != 5 {
            return Err(lines.err("unexpected trailing content".into()));
        }
        let v = toks[1..]
            .iter()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| lines.err(format!("frame: {e}")))?;
        if !(v[0] > 0.0) || v.iter().any(|x| !x.is_finite()) {
            return Err(lines.err("frame scale must be positive and finite".into()));
        }
        frame = Some(Similarity {
            scale: v[0],
            translation: Vec3::new(v[1], v[2], v[3]),
        });
        if lines.next_line()?.is_some() {
            return Err(lines.err("unexpected trailing content".into()));
        }
    }
    let mut model = LdifModel::new(elements, latents, decoder, sym_count, sym_axis)
        .map_err(|e| Error::parse(name, 0, e.to_string()))?;
    model.frame = frame;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{activate, RawElementVars};
    use crate::rng;
    use rand::Rng as _;

    fn sample_model() -> LdifModel {
        let mut r = rng::substream(9, "format", 0);
        let elements = (0..3)
            .map(|_| {
                activate(&RawElementVars {
                    y_c: r.random_range(-2.0..2.0),
                    y_p: Vec3::from_fn(|_, _| r.random_range(-1.0..1.0)),
                    y_r: Vec3::from_fn(|_, _| r.random_range(-1.0..1.0)),
                    y_e: Vec3::from_fn(|_, _| r.random_range(-1.0..1.0)),
                })
            })
            .collect();
        let latents = (0..3)
            .map(|_| (0..2).map(|_| r.random::<f64>() / 3.0).collect())
            .collect();
        let decoder = DecoderWeights::init(2, 4, 0.1, &mut r);
        let mut m = LdifModel::new(elements, latents, decoder, 2, 1).unwrap();
        m.frame = Some(Similarity {
            scale: 0.25,
            translation: Vec3::new(0.1, -0.2, 1.0 / 3.0),
        });
        m
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = sample_model();
        let text = model_to_string(&m);
        assert!(text.starts_with("LDIF 1 3 2 2 1\n"));
        let back = parse_model(&text, "mem").unwrap();
        assert_eq!(back, m);
        assert_eq!(model_to_string(&back), text);
    }

    #[test]
    fn frame_line_is_optional() {
        let mut m = sample_model();
        m.frame = None;
        let back = parse_model(&model_to_string(&m), "mem").unwrap();
        assert_eq!(back.frame, None);
    }

    #[test]
    fn malformed_inputs() {
        let good = model_to_string(&sample_model());
        for bad in [
            String::new(),
            good.replace("LDIF 1", "LDIF 2"),
            good.replace("DECODER 4 2", "DECODER 4 3"),
            good.lines().take(5).collect::<Vec<_>>().join("\n"),
            format!("{good}garbage\n"),
        ] {
            assert!(parse_model(&bad, "mem").is_err(), "accepted:\n{bad}");
        }
    }
}
