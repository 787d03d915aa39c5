use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

/// Parameters of the synthetic place descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DescriptorConfig {
    pub dim: usize,
    /// Lattice spacing of the underlying random field, meters.
    pub grid: f64,
    /// Gaussian smoothing length, meters.
    pub length_scale: f64,
    /// Per-component noise added before normalization.
    pub noise: f64,
    /// Virtual cameras per keyframe; each gets its own descriptor.
    pub cameras: usize,
}

impl Default for DescriptorConfig {
    fn default() -> Self {
        DescriptorConfig {
            dim: 32,
            grid: 0.5,
            length_scale: 1.0,
            noise: 0.02,
            cameras: 1,
        }
    }
}

/// SplitMix64 finalizer; a fixed, platform independent hash.
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn hash_words(words: &[u64]) -> u64 {
    words.iter().fold(0x5EED_0F_5EED_u64, |h, &w| mix64(h ^ mix64(w)))
}

fn unit_open(h: u64) -> f64 {
    ((h >> 11) as f64 + 0.5) / (1u64 << 53) as f64
}

/// A smooth vector-valued random field over space: Gaussian-weighted sum of
/// i.i.d. normal vectors attached to lattice nodes. Nearby points get nearly
/// identical values, distant points independent ones.
#[derive(Debug, Clone, Copy)]
pub struct DescriptorField {
    pub seed: u64,
    pub cfg: DescriptorConfig,
}

impl DescriptorField {
    pub fn new(seed: u64, cfg: DescriptorConfig) -> Self {
        DescriptorField { seed, cfg }
    }

    fn node_value(&self, cell: [i64; 3], component: usize) -> f64 {
        let h = hash_words(&[
            self.seed,
            cell[0] as u64,
            cell[1] as u64,
            cell[2] as u64,
            component as u64,
        ]);
        // Box-Muller on two independent uniforms.
        let u1 = unit_open(h);
        let u2 = unit_open(mix64(h));
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Unit-norm field value at `p`.
    pub fn eval(&self, p: &Vector3<f64>) -> Vec<f64> {
        let g = self.cfg.grid;
        let l = self.cfg.length_scale;
        let reach = (3.0 * l / g).ceil() as i64;
        let base = [
            (p.x / g).round() as i64,
            (p.y / g).round() as i64,
            (p.z / g).round() as i64,
        ];
        let mut acc = vec![0.0; self.cfg.dim];
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                for dz in -reach..=reach {
                    let cell = [base[0] + dx, base[1] + dy, base[2] + dz];
                    let node = Vector3::new(cell[0] as f64, cell[1] as f64, cell[2] as f64) * g;
                    let r2 = (node - p).norm_squared();
                    if r2 > 9.0 * l * l {
                        continue;
                    }
                    let w = (-r2 / (2.0 * l * l)).exp();
                    for (c, a) in acc.iter_mut().enumerate() {
                        *a += w * self.node_value(cell, c);
                    }
                }
            }
        }
        normalize(acc)
    }
}

pub(crate) fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maploc::{descriptor_distance, LoopThresholds};

    #[test]
    fn colocated_points_share_a_descriptor() {
        let f = DescriptorField::new(1, DescriptorConfig::default());
        let p = Vector3::new(1.3, -2.2, 1.0);
        assert_eq!(descriptor_distance(&f.eval(&p), &f.eval(&p)), 0.0);
    }

    #[test]
    fn descriptor_is_unit_norm_and_deterministic() {
        let f = DescriptorField::new(5, DescriptorConfig::default());
        let d = f.eval(&Vector3::new(0.1, 0.2, 0.3));
        assert_eq!(d.len(), 32);
        assert!((d.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(d, DescriptorField::new(5, DescriptorConfig::default()).eval(&Vector3::new(0.1, 0.2, 0.3)));
    }

    #[test]
    fn locality_against_the_match_threshold() {
        let tau = LoopThresholds::default().feature_dist;
        for seed in 0..20u64 {
            let f = DescriptorField::new(seed, DescriptorConfig::default());
            let p = Vector3::new(seed as f64 * 0.37, -(seed as f64) * 0.21, 1.0);
            let near = p + Vector3::new(0.3, 0.0, 0.0);
            let far = p + Vector3::new(10.0, 0.0, 0.0);
            assert!(descriptor_distance(&f.eval(&p), &f.eval(&near)) < tau, "seed {seed}");
            assert!(descriptor_distance(&f.eval(&p), &f.eval(&far)) > tau, "seed {seed}");
        }
    }
}
