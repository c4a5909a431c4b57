//! Grasp-probability map cleanup: threshold, centroid, fixed-radius disc.

use std::io::{BufRead, Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TAU: f64 = 0.7;
pub const DEFAULT_RADIUS: f64 = 30.0;

/// Row-major grid of grasp probabilities. Pixel `(u, v)` is column `u`, row `v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspProbMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

pub type Pixel = (usize, usize);

impl GraspProbMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidConfig(
                "map dimensions must be positive".into(),
            ));
        }
        if values.len() != width * height {
            return Err(Error::ShapeMismatch {
                expected: (height, width),
                found: (values.len(), 1),
            });
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidConfig(format!(
                "map value {v} outside [0, 1]"
            )));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![0.0; width * height],
        }
    }

    /// Builds a map from `f(u, v)`, clamping to `[0, 1]`.
    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(width * height);
        for v in 0..height {
            for u in 0..width {
                values.push(f(u, v).clamp(0.0, 1.0));
            }
        }
        Self {
            width,
            height,
            values,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.values[v * self.width + u]
    }

    pub fn set(&mut self, u: usize, v: usize, value: f64) {
        self.values[v * self.width + u] = value.clamp(0.0, 1.0);
    }

    /// Pixels with value exactly 1.
    pub fn ones(&self) -> Vec<Pixel> {
        threshold_filter(self, 1.0)
    }
}

/// Pixels with probability `≥ tau`, in row-major order.
pub fn threshold_filter(map: &GraspProbMap, tau: f64) -> Vec<Pixel> {
    let mut out = Vec::new();
    for v in 0..map.height {
        for u in 0..map.width {
            if map.get(u, v) >= tau {
                out.push((u, v));
            }
        }
    }
    out
}

pub fn centroid(pixels: &[Pixel]) -> Result<(f64, f64)> {
    if pixels.is_empty() {
        return Err(Error::EmptySet);
    }
    let n = pixels.len() as f64;
    let (su, sv) = pixels
        .iter()
        .fold((0.0, 0.0), |(a, b), (u, v)| (a + *u as f64, b + *v as f64));
    Ok((su / n, sv / n))
}

/// Binary disc: 1 where the pixel centre lies within `radius` of `center`.
pub fn circular_mask(center: (f64, f64), radius: f64, width: usize, height: usize) -> GraspProbMap {
    let r2 = radius * radius;
    GraspProbMap::from_fn(width, height, |u, v| {
        let du = u as f64 - center.0;
        let dv = v as f64 - center.1;
        if du * du + dv * dv <= r2 {
            1.0
        } else {
            0.0
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stabilized {
    pub map: GraspProbMap,
    pub center: Option<(f64, f64)>,
    /// No pixel reached the threshold; `map` is all zeros.
    pub low_confidence: bool,
}

impl Stabilized {
    /// `[u / width, v / height, disc area / map area]`, zeros when low confidence.
    pub fn summary(&self) -> Vec<f64> {
        match self.center {
            None => vec![0.0; 3],
            Some((u, v)) => {
                let area = self.map.ones().len() as f64;
                vec![
                    u / self.map.width as f64,
                    v / self.map.height as f64,
                    area / (self.map.width * self.map.height) as f64,
                ]
            }
        }
    }
}

pub fn stabilize(map: &GraspProbMap, tau: f64, radius: f64) -> Stabilized {
    let kept = threshold_filter(map, tau);
    match centroid(&kept) {
        Ok(c) => Stabilized {
            map: circular_mask(c, radius, map.width, map.height),
            center: Some(c),
            low_confidence: false,
        },
        Err(_) => {
            log::warn!("no pixel at or above {tau}, returning empty grasp map");
            Stabilized {
                map: GraspProbMap::zeros(map.width, map.height),
                center: None,
                low_confidence: true,
            }
        }
    }
}

/// Isotropic Gaussian bump with the given peak value.
pub fn synthetic_blob(
    width: usize,
    height: usize,
    center: (f64, f64),
    sigma: f64,
    peak: f64,
) -> GraspProbMap {
    let s2 = 2.0 * sigma * sigma;
    GraspProbMap::from_fn(width, height, |u, v| {
        let du = u as f64 - center.0;
        let dv = v as f64 - center.1;
        peak * (-(du * du + dv * dv) / s2).exp()
    })
}

/// Sets `round(fraction · N)` distinct random pixels to 1.
pub fn add_salt_noise<R: Rng + ?Sized>(map: &mut GraspProbMap, fraction: f64, rng: &mut R) {
    let n = map.values.len();
    let count = ((fraction * n as f64).round() as usize).min(n);
    for i in rand::seq::index::sample(rng, n, count) {
        map.values[i] = 1.0;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PgmDepth {
    Eight,
    Sixteen,
}

impl PgmDepth {
    pub fn maxval(self) -> u32 {
        match self {
            PgmDepth::Eight => 255,
            PgmDepth::Sixteen => 65535,
        }
    }
}

/// Writes a binary (P5) graymap; values are quantized to `round(p · maxval)`.
pub fn write_pgm<W: Write>(map: &GraspProbMap, depth: PgmDepth, mut out: W) -> Result<()> {
    let maxval = depth.maxval();
    write!(out, "P5\n{} {}\n{}\n", map.width, map.height, maxval)?;
    let mut buf = Vec::with_capacity(map.values.len() * 2);
    for p in &map.values {
        let q = (p * maxval as f64).round() as u32;
        match depth {
            PgmDepth::Eight => buf.push(q as u8),
            PgmDepth::Sixteen => buf.extend_from_slice(&(q as u16).to_be_bytes()),
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

/// Reads a P5 or P2 graymap, dividing samples by maxval.
pub fn read_pgm<R: Read>(input: R) -> Result<GraspProbMap> {
    let mut reader = std::io::BufReader::new(input);
    let mut header = Vec::new();
    // magic, width, height, maxval
    while header.len() < 4 {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 {
            return Err(Error::Format("truncated PGM header".into()));
        }
        let content = line.split('#').next().unwrap_or("");
        header.extend(content.split_whitespace().map(str::to_owned));
    }
    if header.len() > 4 {
        return Err(Error::Format("PGM header must end its own line".into()));
    }
    let parse = |s: &str| -> Result<usize> {
        s.parse()
            .map_err(|_| Error::Format(format!("bad PGM header field {s:?}")))
    };
    let (width, height, maxval) = (parse(&header[1])?, parse(&header[2])?, parse(&header[3])?);
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Format(format!("PGM maxval {maxval} out of range")));
    }
    let n = width * height;
    let samples: Vec<u32> = match header[0].as_str() {
        "P5" => {
            let wide = maxval > 255;
            let mut raw = vec![0u8; n * if wide { 2 } else { 1 }];
            reader
                .read_exact(&mut raw)
                .map_err(|_| Error::Format("truncated PGM raster".into()))?;
            if wide {
                raw.chunks_exact(2)
                    .map(|b| u16::from_be_bytes([b[0], b[1]]) as u32)
                    .collect()
            } else {
                raw.into_iter().map(u32::from).collect()
            }
        }
        "P2" => {
            let mut text = String::new();
            reader.read_to_string(&mut text)?;
            text.lines()
                .flat_map(|l| l.split('#').next().unwrap_or("").split_whitespace())
                .map(|t| {
                    t.parse::<u32>()
                        .map_err(|_| Error::Format(format!("bad PGM sample {t:?}")))
                })
                .collect::<Result<_>>()?
        }
        m => return Err(Error::Format(format!("unsupported PGM magic {m:?}"))),
    };
    if samples.len() != n {
        return Err(Error::Format(format!(
            "PGM raster has {} samples, expected {n}",
            samples.len()
        )));
    }
    if let Some(s) = samples.iter().find(|s| **s as usize > maxval) {
        return Err(Error::Format(format!(
            "PGM sample {s} exceeds maxval {maxval}"
        )));
    }
    GraspProbMap::new(
        width,
        height,
        samples.iter().map(|s| *s as f64 / maxval as f64).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_cases() {
        assert!(threshold_filter(&GraspProbMap::zeros(4, 4), DEFAULT_TAU).is_empty());
        let uniform = GraspProbMap::new(3, 2, vec![0.7; 6]).unwrap();
        assert_eq!(threshold_filter(&uniform, 0.7).len(), 6);
        let mut m = GraspProbMap::from_fn(8, 8, |_, _| 0.1);
        m.set(3, 4, 0.9);
        assert_eq!(threshold_filter(&m, 0.7), vec![(3, 4)]);
    }

    #[test]
    fn centroid_cases() {
        assert_eq!(centroid(&[(2, 5)]).unwrap(), (2.0, 5.0));
        assert_eq!(
            centroid(&[(0, 0), (2, 0), (0, 2), (2, 2)]).unwrap(),
            (1.0, 1.0)
        );
        assert_eq!(centroid(&[(3, 4), (5, 8)]).unwrap(), (4.0, 6.0));
        assert!(matches!(centroid(&[]), Err(Error::EmptySet)));
    }

    #[test]
    fn small_radius_is_single_pixel() {
        let m = circular_mask((4.0, 4.0), 0.5, 9, 9);
        assert_eq!(m.ones(), vec![(4, 4)]);
    }

    #[test]
    fn low_confidence_path() {
        let s = stabilize(&GraspProbMap::from_fn(5, 5, |_, _| 0.2), 0.7, 30.0);
        assert!(s.low_confidence);
        assert!(s.map.values().iter().all(|v| *v == 0.0));
        assert_eq!(s.summary(), vec![0.0; 3]);
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(GraspProbMap::new(1, 1, vec![1.5]).is_err());
        assert!(GraspProbMap::new(0, 1, vec![]).is_err());
    }

    #[test]
    fn pgm_round_trip() {
        let m = synthetic_blob(13, 7, (6.0, 3.0), 3.0, 1.0);
        for depth in [PgmDepth::Eight, PgmDepth::Sixteen] {
            let mut buf = Vec::new();
            write_pgm(&m, depth, &mut buf).unwrap();
            let back = read_pgm(&buf[..]).unwrap();
            let step = 1.0 / depth.maxval() as f64;
            for (a, b) in m.values().iter().zip(back.values()) {
                assert!((a - b).abs() <= 0.5 * step + 1e-15);
            }
            // quantized maps survive a second trip unchanged
            let mut again = Vec::new();
            write_pgm(&back, depth, &mut again).unwrap();
            assert_eq!(buf, again);
        }
    }

    #[test]
    fn pgm_ascii() {
        let text = "P2\n# comment\n3 1\n4\n0 2 4\n";
        let m = read_pgm(text.as_bytes()).unwrap();
        assert_eq!(m.values(), &[0.0, 0.5, 1.0]);
        assert!(read_pgm("P2\n2 1\n4\n0 9\n".as_bytes()).is_err());
        assert!(read_pgm("P7\n1 1\n1\n0\n".as_bytes()).is_err());
    }
}
