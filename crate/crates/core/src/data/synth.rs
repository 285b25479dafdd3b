use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Dataset, Record};
use crate::error::{Error, Result};
use crate::tensor::{sq_dist, Tensor};
use crate::view::View;

const MAX_ATTEMPTS: usize = 1000;

/// Gaussian identity clusters observed through two shifted camera views.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub identities: usize,
    pub per_view: usize,
    /// Sample shape, e.g. `[1, 24, 8]` for images or `[d]` for raw vectors.
    pub shape: Vec<usize>,
    /// Centers lie in a random subspace of this dimension; `None` uses the
    /// full sample space. Noise is always full-dimensional.
    pub latent_dim: Option<usize>,
    /// Gaussian blur (std in pixels) applied to the subspace basis of
    /// image-shaped samples, giving spatially smooth identity patterns.
    pub smoothing: f64,
    /// Minimum Euclidean distance between any two identity centers.
    pub separation: f64,
    /// Per-component standard deviation of the within-identity noise.
    pub noise: f64,
    /// Distance between the two view offsets.
    pub view_shift: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config("synthetic spec", m));
        if self.identities < 2 {
            return bad(format!(
                "need at least 2 identities, got {}",
                self.identities
            ));
        }
        if self.per_view < 1 {
            return bad("need at least 1 sample per view".into());
        }
        if self.shape.is_empty() || self.shape.contains(&0) {
            return bad(format!(
                "sample shape {:?} has a zero or missing extent",
                self.shape
            ));
        }
        let dim: usize = self.shape.iter().product();
        if let Some(k) = self.latent_dim {
            if k == 0 || k > dim {
                return bad(format!("latent dimension must be in 1..={dim}, got {k}"));
            }
        }
        for (name, v) in [
            ("separation", self.separation),
            ("noise", self.noise),
            ("view shift", self.view_shift),
            ("smoothing", self.smoothing),
        ] {
            if !v.is_finite() || v < 0.0 {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        Ok(())
    }
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, std: f64) -> Vec<f64> {
    (0..n)
        .map(|_| std * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Separable Gaussian blur of each `h x w` plane of a `[.., h, w]` sample.
fn blur(v: &[f64], shape: &[usize], std: f64) -> Vec<f64> {
    if std == 0.0 || shape.len() < 2 {
        return v.to_vec();
    }
    let h = shape[shape.len() - 2];
    let w = shape[shape.len() - 1];
    let radius = (3.0 * std).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|t| (-(t * t) as f64 / (2.0 * std * std)).exp())
        .collect();
    let pass = |src: &[f64], along_rows: bool| -> Vec<f64> {
        let mut out = vec![0.0; src.len()];
        for plane in 0..src.len() / (h * w) {
            let base = plane * h * w;
            for y in 0..h {
                for x in 0..w {
                    let (mut acc, mut norm) = (0.0, 0.0);
                    for (ki, t) in (-radius..=radius).enumerate() {
                        let (yy, xx) = if along_rows {
                            (y as isize + t, x as isize)
                        } else {
                            (y as isize, x as isize + t)
                        };
                        if yy >= 0 && yy < h as isize && xx >= 0 && xx < w as isize {
                            acc += kernel[ki] * src[base + yy as usize * w + xx as usize];
                            norm += kernel[ki];
                        }
                    }
                    out[base + y * w + x] = acc / norm;
                }
            }
        }
        out
    };
    pass(&pass(v, true), false)
}

/// Orthonormal rows spanning a random `k`-dimensional subspace of R^dim.
fn random_basis(rng: &mut ChaCha8Rng, k: usize, shape: &[usize], smoothing: f64) -> Vec<Vec<f64>> {
    let dim: usize = shape.iter().product();
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
    while basis.len() < k {
        let mut v = blur(&gaussian(rng, dim, 1.0), shape, smoothing);
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    basis
}

/// Centers are Gaussian in a `k`-dimensional subspace with per-component std
/// `1.5 * separation / sqrt(2 k)`, so typical center distances are 1.5x the
/// separation, and are redrawn until every pair is at least `separation`
/// apart. The two views are offset by
/// `-/+ view_shift / 2` along a random unit direction.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dim: usize = spec.shape.iter().product();
    let k = spec.latent_dim.unwrap_or(dim);
    let basis = spec
        .latent_dim
        .map(|k| random_basis(&mut rng, k, &spec.shape, spec.smoothing));
    let center_std = 1.5 * spec.separation / (2.0 * k as f64).sqrt();

    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(spec.identities);
    for i in 0..spec.identities {
        let mut placed = false;
        for _ in 0..MAX_ATTEMPTS {
            let z = gaussian(&mut rng, k, center_std);
            let c = match &basis {
                Some(rows) => (0..dim)
                    .map(|d| rows.iter().zip(&z).map(|(r, zi)| r[d] * zi).sum())
                    .collect(),
                None => z,
            };
            if centers
                .iter()
                .all(|o| sq_dist(o, &c).sqrt() >= spec.separation)
            {
                centers.push(c);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Data(format!(
                "cannot place {} identities {} apart in {k} dimensions (gave up at identity {i})",
                spec.identities, spec.separation
            )));
        }
    }

    let mut dir = gaussian(&mut rng, dim, 1.0);
    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    dir.iter_mut().for_each(|v| *v /= norm);

    let mut records = Vec::with_capacity(spec.identities * 2 * spec.per_view);
    for (i, c) in centers.iter().enumerate() {
        for view in View::BOTH {
            let sign = if view == View::A { -0.5 } else { 0.5 };
            for _ in 0..spec.per_view {
                let noise = gaussian(&mut rng, dim, spec.noise);
                let x: Vec<f64> = c
                    .iter()
                    .zip(&dir)
                    .zip(noise)
                    .map(|((c, u), e)| c + sign * spec.view_shift * u + e)
                    .collect();
                records.push(Record {
                    identity: i as u32,
                    view,
                    sample: Tensor::new(spec.shape.clone(), x)?,
                });
            }
        }
    }
    Dataset::new(records)
}
