//! Deterministic synthetic articulated-motion generator.
//!
//! A rooted skeleton chain/tree is driven by per-joint angle tracks, each a
//! sum of random-parameter sinusoids plus optional per-frame angle noise,
//! and mapped through forward kinematics to 3-D joint coordinates. All
//! randomness is a pure function of `(seed, sequence index)`, so generation
//! of distinct sequences is order-independent and reproducible bit for bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::array::Array;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("skeleton parent of joint {joint} must be < {joint}, got {parent}")]
    BadParent { joint: usize, parent: usize },
    #[error("bone length of joint {joint} must be positive, got {length}")]
    BadBoneLength { joint: usize, length: f64 },
    #[error("skeleton needs at least 2 joints, got {0}")]
    TooFewJoints(usize),
    #[error("bone_lengths has {lengths} entries for {joints} joints")]
    BoneCountMismatch { lengths: usize, joints: usize },
    #[error("config field {field} must be positive")]
    NonPositive { field: &'static str },
    #[error("range {field} must satisfy 0 < lo <= hi, got [{lo}, {hi}]")]
    BadRange {
        field: &'static str,
        lo: f64,
        hi: f64,
    },
    #[error("angle track has {angles} entries for {joints} joints")]
    AngleCountMismatch { angles: usize, joints: usize },
    #[error("split fractions must be non-negative and sum to 1, got {0:?}")]
    BadSplit(Vec<f64>),
}

/// Rooted articulated skeleton. Joint 0 is the root; `parents[i] < i`.
/// `bone_lengths[i]` is the bone from joint `i` to its parent (entry 0 is
/// unused by kinematics but must still be positive).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skeleton {
    pub parents: Vec<usize>,
    pub bone_lengths: Vec<f64>,
}

impl Skeleton {
    pub fn new(parents: Vec<usize>, bone_lengths: Vec<f64>) -> Result<Self, SynthError> {
        if parents.len() < 2 {
            return Err(SynthError::TooFewJoints(parents.len()));
        }
        if bone_lengths.len() != parents.len() {
            return Err(SynthError::BoneCountMismatch {
                lengths: bone_lengths.len(),
                joints: parents.len(),
            });
        }
        for (joint, &parent) in parents.iter().enumerate().skip(1) {
            if parent >= joint {
                return Err(SynthError::BadParent { joint, parent });
            }
        }
        for (joint, &length) in bone_lengths.iter().enumerate() {
            if length <= 0.0 {
                return Err(SynthError::BadBoneLength { joint, length });
            }
        }
        Ok(Self {
            parents,
            bone_lengths,
        })
    }

    /// Simple chain 0 -> 1 -> ... -> J-1 with the given bone lengths.
    pub fn chain(bone_lengths: Vec<f64>) -> Result<Self, SynthError> {
        let parents = (0..bone_lengths.len())
            .map(|i| i.saturating_sub(1))
            .collect();
        Skeleton::new(parents, bone_lengths)
    }

    pub fn joints(&self) -> usize {
        self.parents.len()
    }
}

/// One generated motion clip: `[T, J, D]` coordinates at a fixed frame rate.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSequence {
    pub frames: Array<f64>,
    pub frame_rate: f64,
}

impl PoseSequence {
    pub fn num_frames(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn joints(&self) -> usize {
        self.frames.shape()[1]
    }

    pub fn dims(&self) -> usize {
        self.frames.shape()[2]
    }
}

/// Generation config; [`GenerationConfig::default`] is the desk-scale setup
/// every comparison in this crate runs on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub seed: u64,
    pub num_sequences: usize,
    /// Frames per generated sequence.
    #[serde(rename = "T")]
    pub frames_per_sequence: usize,
    /// Joint count.
    #[serde(rename = "J")]
    pub joints: usize,
    /// Coordinate dimension (fixed at 3 by the kinematics).
    pub dims: usize,
    pub frame_rate: f64,
    /// Bone lengths, one per joint; `None` means unit bones.
    pub bone_lengths: Option<Vec<f64>>,
    pub sinusoids_per_joint: usize,
    /// Sinusoid frequency range in Hz.
    pub freq_range: [f64; 2],
    /// Sinusoid amplitude range in radians.
    pub amp_range: [f64; 2],
    /// Std of per-frame Gaussian noise added to each joint angle (radians).
    pub noise_std: f64,
    /// Scale of the out-of-plane (elevation) angle track.
    pub out_of_plane_amp: f64,
    /// Train/val/test fractions over source sequences.
    pub split_fractions: [f64; 3],
    /// Windowing applied when the generator is asked for split datasets.
    pub t_h: usize,
    pub t_p: usize,
    pub stride: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        // Calibrated so short horizons are cleanly learnable and long
        // horizons remain noisy but partially predictable (slow sinusoids
        // relative to the 1 s prediction span at 25 fps).
        Self {
            seed: 42,
            num_sequences: 48,
            frames_per_sequence: 60,
            joints: 8,
            dims: 3,
            frame_rate: 25.0,
            bone_lengths: None,
            sinusoids_per_joint: 2,
            freq_range: [0.15, 0.6],
            amp_range: [0.2, 0.7],
            noise_std: 0.01,
            out_of_plane_amp: 0.3,
            split_fractions: [0.7, 0.15, 0.15],
            t_h: 10,
            t_p: 25,
            stride: 1,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.num_sequences == 0 {
            return Err(SynthError::NonPositive {
                field: "num_sequences",
            });
        }
        if self.frames_per_sequence == 0 {
            return Err(SynthError::NonPositive { field: "T" });
        }
        if self.joints < 2 {
            return Err(SynthError::TooFewJoints(self.joints));
        }
        if self.frame_rate <= 0.0 {
            return Err(SynthError::NonPositive {
                field: "frame_rate",
            });
        }
        if self.sinusoids_per_joint == 0 {
            return Err(SynthError::NonPositive {
                field: "sinusoids_per_joint",
            });
        }
        let [lo, hi] = self.freq_range;
        if !(0.0 < lo && lo <= hi) {
            return Err(SynthError::BadRange {
                field: "freq_range",
                lo,
                hi,
            });
        }
        // Zero amplitude is a valid degenerate config (constant rest pose).
        let [lo, hi] = self.amp_range;
        if !(0.0 <= lo && lo <= hi) {
            return Err(SynthError::BadRange {
                field: "amp_range",
                lo,
                hi,
            });
        }
        if self.noise_std < 0.0 {
            return Err(SynthError::NonPositive { field: "noise_std" });
        }
        let sum: f64 = self.split_fractions.iter().sum();
        if self.split_fractions.iter().any(|&f| f < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(SynthError::BadSplit(self.split_fractions.to_vec()));
        }
        Ok(())
    }

    pub fn skeleton(&self) -> Result<Skeleton, SynthError> {
        match &self.bone_lengths {
            Some(lengths) => {
                if lengths.len() != self.joints {
                    return Err(SynthError::BoneCountMismatch {
                        lengths: lengths.len(),
                        joints: self.joints,
                    });
                }
                Skeleton::chain(lengths.clone())
            }
            None => Skeleton::chain(vec![1.0; self.joints]),
        }
    }
}

/// Place joints for one frame. `azimuth[i]` accumulates along the parent
/// chain; `elevation[i]` tilts bone `i` out of the plane locally. Unit
/// direction vectors keep every bone at its configured length exactly.
pub fn forward_kinematics(
    skeleton: &Skeleton,
    azimuth: &[f64],
    elevation: &[f64],
) -> Result<Array<f64>, SynthError> {
    let j = skeleton.joints();
    if azimuth.len() != j || elevation.len() != j {
        return Err(SynthError::AngleCountMismatch {
            angles: azimuth.len().min(elevation.len()),
            joints: j,
        });
    }
    let mut coords = vec![0.0f64; j * 3];
    let mut accumulated = vec![0.0f64; j];
    accumulated[0] = azimuth[0];
    for i in 1..j {
        let p = skeleton.parents[i];
        accumulated[i] = accumulated[p] + azimuth[i];
        let (theta, psi) = (accumulated[i], elevation[i]);
        let dir = [theta.cos() * psi.cos(), theta.sin() * psi.cos(), psi.sin()];
        let len = skeleton.bone_lengths[i];
        for d in 0..3 {
            coords[i * 3 + d] = coords[p * 3 + d] + len * dir[d];
        }
    }
    Ok(Array::from_raw(vec![j, 3], coords))
}

struct SinusoidTrack {
    amps: Vec<f64>,
    omegas: Vec<f64>,
    phases: Vec<f64>,
}

impl SinusoidTrack {
    fn sample(rng: &mut ChaCha20Rng, count: usize, freq: [f64; 2], amp: [f64; 2]) -> Self {
        let mut amps = Vec::with_capacity(count);
        let mut omegas = Vec::with_capacity(count);
        let mut phases = Vec::with_capacity(count);
        for _ in 0..count {
            amps.push(rng.random_range(amp[0]..=amp[1]));
            omegas.push(2.0 * std::f64::consts::PI * rng.random_range(freq[0]..=freq[1]));
            phases.push(rng.random_range(0.0..2.0 * std::f64::consts::PI));
        }
        Self {
            amps,
            omegas,
            phases,
        }
    }

    fn at(&self, t: f64) -> f64 {
        self.amps
            .iter()
            .zip(&self.omegas)
            .zip(&self.phases)
            .map(|((a, w), p)| a * (w * t + p).sin())
            .sum()
    }
}

fn sequence_rng(seed: u64, index: usize) -> ChaCha20Rng {
    // Distinct stream per sequence; generation order never matters.
    ChaCha20Rng::seed_from_u64(seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(index as u64 + 1)))
}

/// Generate `num_sequences` independent clips. Pure function of the config.
pub fn generate_sequences(config: &GenerationConfig) -> Result<Vec<PoseSequence>, SynthError> {
    config.validate()?;
    let skeleton = config.skeleton()?;
    (0..config.num_sequences)
        .map(|index| generate_one(config, &skeleton, index))
        .collect()
}

fn generate_one(
    config: &GenerationConfig,
    skeleton: &Skeleton,
    index: usize,
) -> Result<PoseSequence, SynthError> {
    let mut rng = sequence_rng(config.seed, index);
    let j = config.joints;
    let t = config.frames_per_sequence;

    let azimuth_tracks: Vec<SinusoidTrack> = (0..j)
        .map(|_| {
            SinusoidTrack::sample(
                &mut rng,
                config.sinusoids_per_joint,
                config.freq_range,
                config.amp_range,
            )
        })
        .collect();
    let elevation_tracks: Vec<SinusoidTrack> = (0..j)
        .map(|_| {
            SinusoidTrack::sample(
                &mut rng,
                config.sinusoids_per_joint,
                config.freq_range,
                config.amp_range,
            )
        })
        .collect();

    let noise = Normal::new(0.0, config.noise_std.max(f64::MIN_POSITIVE)).expect("valid normal");
    let mut frames = Vec::with_capacity(t * j * 3);
    let mut azimuth = vec![0.0f64; j];
    let mut elevation = vec![0.0f64; j];
    for frame in 0..t {
        let time = frame as f64 / config.frame_rate;
        for joint in 0..j {
            let eps = if config.noise_std > 0.0 {
                noise.sample(&mut rng)
            } else {
                0.0
            };
            azimuth[joint] = azimuth_tracks[joint].at(time) + eps;
            elevation[joint] = config.out_of_plane_amp * elevation_tracks[joint].at(time);
        }
        let coords = forward_kinematics(skeleton, &azimuth, &elevation)?;
        frames.extend_from_slice(coords.data());
    }
    Ok(PoseSequence {
        frames: Array::from_raw(vec![t, j, 3], frames),
        frame_rate: config.frame_rate,
    })
}
