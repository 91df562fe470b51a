use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::mmodel::{read_coeff_sequence, synth, CoeffVector, N_COEFF, N_POSE};

/// Coefficient trajectories, one per clip.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrajectoryDataset {
    pub sequences: Vec<Vec<CoeffVector>>,
}

impl TrajectoryDataset {
    pub fn new(sequences: Vec<Vec<CoeffVector>>) -> Self {
        Self { sequences }
    }

    /// One JSON-lines file per clip.
    pub fn from_files<P: AsRef<Path>>(paths: &[P]) -> Result<Self> {
        let sequences = paths.iter().map(|p| read_coeff_sequence(p.as_ref())).collect::<Result<Vec<_>>>()?;
        Ok(Self { sequences })
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn frames(&self) -> impl Iterator<Item = &CoeffVector> {
        self.sequences.iter().flatten()
    }

    /// Every sequence must hold at least `min_len` frames.
    pub fn check_min_len(&self, min_len: usize) -> Result<()> {
        if self.sequences.is_empty() {
            return Err(Error::InvalidInput("dataset has no sequences".into()));
        }
        if let Some((i, s)) = self.sequences.iter().enumerate().find(|(_, s)| s.len() < min_len) {
            return Err(Error::InvalidInput(format!(
                "sequence {i} has {} frames, need at least {min_len}",
                s.len()
            )));
        }
        Ok(())
    }
}

/// Shared structure of a family of synthetic sinusoidal trajectories: every
/// frame is `base + M·z_t` where `z_t` stacks the sine and cosine of two
/// harmonics of a per-clip frequency.
#[derive(Debug, Clone)]
pub struct SinusoidFamily {
    base: CoeffVector,
    mixing: DMatrix<f64>,
}

pub const SINUSOID_LATENTS: usize = 4;

impl SinusoidFamily {
    pub fn new(seed: u64) -> Self {
        let mut rng = synth::rng(seed);
        let base = synth::centred_coeffs(128);
        let mut mixing = DMatrix::zeros(N_COEFF, SINUSOID_LATENTS);
        for k in 0..N_COEFF {
            // Rotation entries move a little, translation a few pixels,
            // shape and expression by about one unit.
            let gain = match k {
                3 | 7 => 3.0,
                11 => 0.0,
                _ if k < N_POSE => 0.05,
                _ => 0.7,
            };
            for j in 0..SINUSOID_LATENTS {
                let z: f64 = StandardNormal.sample(&mut rng);
                mixing[(k, j)] = gain * z;
            }
        }
        Self { base, mixing }
    }

    fn frame(&self, latent: &[f64; SINUSOID_LATENTS]) -> CoeffVector {
        let base = self.base.to_array();
        let v: Vec<f64> = (0..N_COEFF)
            .map(|k| base[k] + (0..SINUSOID_LATENTS).map(|j| self.mixing[(k, j)] * latent[j]).sum::<f64>())
            .collect();
        CoeffVector::from_slice(&v).unwrap()
    }

    /// One clip with random frequency, phases and amplitudes.
    pub fn sample(&self, len: usize, rng: &mut impl Rng) -> Vec<CoeffVector> {
        let omega = rng.random_range(0.15..0.35);
        let (p1, p2): (f64, f64) = (rng.random_range(0.0..std::f64::consts::TAU), rng.random_range(0.0..std::f64::consts::TAU));
        let (a1, a2): (f64, f64) = (rng.random_range(0.6..1.0), rng.random_range(0.2..0.5));
        (0..len)
            .map(|t| {
                let t = t as f64;
                let z = [
                    a1 * (omega * t + p1).sin(),
                    a1 * (omega * t + p1).cos(),
                    a2 * (2.0 * omega * t + p2).sin(),
                    a2 * (2.0 * omega * t + p2).cos(),
                ];
                self.frame(&z)
            })
            .collect()
    }

    pub fn dataset(&self, clips: usize, len: usize, seed: u64) -> TrajectoryDataset {
        let mut rng = synth::rng(seed);
        TrajectoryDataset::new((0..clips).map(|_| self.sample(len, &mut rng)).collect())
    }
}

/// `clips` sinusoidal trajectories of `len` frames from a family drawn with
/// `seed`.
pub fn sinusoid_dataset(clips: usize, len: usize, seed: u64) -> TrajectoryDataset {
    SinusoidFamily::new(seed).dataset(clips, len, seed.wrapping_add(1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_shapes_and_determinism() {
        let a = sinusoid_dataset(3, 30, 9);
        let b = sinusoid_dataset(3, 30, 9);
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
        assert!(a.sequences.iter().all(|s| s.len() == 30));
        assert!(a.check_min_len(30).is_ok());
        assert!(a.check_min_len(31).is_err());
        // Depth translation never moves.
        assert!(a.frames().all(|c| c.pose[(2, 3)] == 0.0));
    }
}
