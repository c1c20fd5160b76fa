//! Articulated-blob walkers standing in for real silhouette captures.

use std::f64::consts::PI;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, MANIFEST_FILE};
use super::sequence::{write_sequence, Role, SequenceKey, SilhouetteSequence, FRAME_SIZE};
use crate::error::{GaitError, Result};
use crate::rng::{substream, Stream};
use crate::tensor::Tensor;

pub const DEFAULT_VIEWS: [u32; 4] = [55, 65, 75, 85];
pub const SPEC_FILE: &str = "walkers.jsonl";

/// Body geometry and motion of one synthetic subject.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WalkerIdentity {
    /// Torso width over torso height.
    pub torso_ratio: f64,
    /// Leg length as a fraction of frame height.
    pub limb_length: f64,
    /// Peak thigh swing in radians.
    pub stride_amplitude: f64,
    /// Gait cycles per frame.
    pub gait_frequency: f64,
    pub phase_offset: f64,
}

/// Camera azimuth surrogate applied as `x' = cx + scale (x - cx) + shear (y - cy)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewParams {
    pub shear: f64,
    pub scale: f64,
}

impl ViewParams {
    /// Mild deformation: views differ visibly but less than identities do.
    pub fn from_degrees(deg: u32) -> Self {
        let d = deg as f64;
        ViewParams {
            shear: (d - 70.0) / 150.0,
            scale: 0.85 + 0.15 * (d - 55.0) / 30.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticWalkerSpec {
    pub identity: WalkerIdentity,
    pub view: ViewParams,
    pub frame_count: usize,
    /// Per-pixel flip probability.
    pub noise: f64,
    pub seed: u64,
}

struct Capsule {
    a: (f64, f64),
    b: (f64, f64),
    radius: f64,
}

impl Capsule {
    fn contains(&self, p: (f64, f64)) -> bool {
        let (dx, dy) = (self.b.0 - self.a.0, self.b.1 - self.a.1);
        let len2 = dx * dx + dy * dy;
        let t = if len2 > 0.0 {
            (((p.0 - self.a.0) * dx + (p.1 - self.a.1) * dy) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let (cx, cy) = (self.a.0 + t * dx - p.0, self.a.1 + t * dy - p.1);
        cx * cx + cy * cy <= self.radius * self.radius
    }
}

struct Pose {
    head: ((f64, f64), f64),
    torso: ((f64, f64), f64, f64),
    limbs: Vec<Capsule>,
}

fn pose(id: &WalkerIdentity, phase: f64) -> Pose {
    let s = FRAME_SIZE as f64;
    let leg = id.limb_length * s;
    let thigh = 0.52 * leg;
    let shin = 0.48 * leg;
    let torso_h = 0.32 * s;
    let torso_w = id.torso_ratio * torso_h;
    let head_r = 0.08 * s;
    let foot_y = 0.95 * s;
    // Vertical bob at twice the gait frequency.
    let hip_y = foot_y - leg * 0.97 + 0.015 * s * (2.0 * phase).cos();
    let cx = s / 2.0;
    let torso_c = (cx, hip_y - torso_h / 2.0);
    let shoulder = (cx, hip_y - 0.9 * torso_h);
    let head_c = (cx, hip_y - torso_h - head_r * 0.9);
    let limb_r = 0.055 * s;

    let mut limbs = Vec::with_capacity(8);
    for side in [0.0, PI] {
        let swing = id.stride_amplitude * (phase + side).sin();
        let knee_bend = 0.6 * id.stride_amplitude * (1.0 + (phase + side + PI / 2.0).sin()).max(0.0);
        let knee = (cx + thigh * swing.sin(), hip_y + thigh * swing.cos());
        let shin_angle = swing - knee_bend;
        let foot = (knee.0 + shin * shin_angle.sin(), knee.1 + shin * shin_angle.cos());
        limbs.push(Capsule { a: (cx, hip_y), b: knee, radius: limb_r });
        limbs.push(Capsule { a: knee, b: foot, radius: limb_r * 0.85 });
        // Arms swing against the leg on the same side.
        let arm = -0.7 * id.stride_amplitude * (phase + side).sin();
        let arm_len = 0.75 * torso_h;
        let hand = (shoulder.0 + arm_len * arm.sin(), shoulder.1 + arm_len * arm.cos());
        limbs.push(Capsule { a: shoulder, b: hand, radius: limb_r * 0.7 });
    }
    Pose {
        head: (head_c, head_r),
        torso: (torso_c, torso_w / 2.0, torso_h / 2.0),
        limbs,
    }
}

fn render(pose: &Pose, view: &ViewParams) -> Tensor<f32> {
    let s = FRAME_SIZE as f64;
    let c = s / 2.0;
    Tensor::from_fn(&[FRAME_SIZE, FRAME_SIZE], |i| {
        let (y, x) = ((i / FRAME_SIZE) as f64 + 0.5, (i % FRAME_SIZE) as f64 + 0.5);
        // Invert the view transform to body coordinates.
        let yb = c + (y - c) / view.scale;
        let xb = c + (x - c - view.shear * (y - c)) / view.scale;
        let p = (xb, yb);
        let ((hx, hy), hr) = pose.head;
        let ((tx, ty), ta, tb) = pose.torso;
        let inside = (p.0 - hx).powi(2) + (p.1 - hy).powi(2) <= hr * hr
            || ((p.0 - tx) / ta).powi(2) + ((p.1 - ty) / tb).powi(2) <= 1.0
            || pose.limbs.iter().any(|l| l.contains(p));
        if inside {
            1.0
        } else {
            0.0
        }
    })
}

/// Renders `spec.frame_count` binary frames at the native frame size.
pub fn generate_walker(spec: &SyntheticWalkerSpec, key: SequenceKey) -> Result<SilhouetteSequence> {
    if spec.frame_count < 2 {
        return Err(GaitError::invalid(format!(
            "a walker needs at least 2 frames, got {}",
            spec.frame_count
        )));
    }
    if !(0.0..=0.5).contains(&spec.noise) {
        return Err(GaitError::invalid(format!("noise {} outside [0, 0.5]", spec.noise)));
    }
    let mut rng = substream(spec.seed, Stream::Synth, 0);
    let start: f64 = rng.random_range(0.0..2.0 * PI);
    let frames = (0..spec.frame_count)
        .map(|t| {
            let phase = start + spec.identity.phase_offset + 2.0 * PI * spec.identity.gait_frequency * t as f64;
            let mut frame = render(&pose(&spec.identity, phase), &spec.view);
            if spec.noise > 0.0 {
                for v in frame.data_mut() {
                    if rng.random_bool(spec.noise) {
                        *v = 1.0 - *v;
                    }
                }
            }
            frame
        })
        .collect();
    SilhouetteSequence::new(key, frames)
}

/// One line of the walker spec file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityRecord {
    pub subject_id: String,
    #[serde(flatten)]
    pub identity: WalkerIdentity,
    pub frame_count: usize,
    pub noise: f64,
    pub seed: u64,
    pub views: Vec<u32>,
}

impl IdentityRecord {
    /// Seed of one rendered sequence, distinct per role and view.
    fn sequence_seed(&self, role: Role, view: u32) -> u64 {
        let role_bit = match role {
            Role::Probe => 0,
            Role::Gallery => 1,
        };
        self.seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(((view as u64) << 1) | role_bit)
    }

    pub fn spec(&self, role: Role, view: u32) -> SyntheticWalkerSpec {
        SyntheticWalkerSpec {
            identity: self.identity,
            view: ViewParams::from_degrees(view),
            frame_count: self.frame_count,
            noise: self.noise,
            seed: self.sequence_seed(role, view),
        }
    }

    pub fn sequences(&self) -> Result<Vec<SilhouetteSequence>> {
        let mut out = Vec::with_capacity(2 * self.views.len());
        for role in [Role::Probe, Role::Gallery] {
            for &view in &self.views {
                let key = SequenceKey::new(self.subject_id.clone(), role, view)?;
                out.push(generate_walker(&self.spec(role, view), key)?);
            }
        }
        Ok(out)
    }
}

/// `n` identities with parameters spread over the walker ranges.
pub fn random_identities(n: usize, frame_count: usize, noise: f64, seed: u64) -> Vec<IdentityRecord> {
    let width = n.max(1).to_string().len().max(3);
    (0..n)
        .map(|i| {
            let mut rng = substream(seed, Stream::Synth, 1 + i as u64);
            IdentityRecord {
                subject_id: format!("s{i:0width$}"),
                identity: WalkerIdentity {
                    torso_ratio: rng.random_range(0.35..0.75),
                    limb_length: rng.random_range(0.34..0.46),
                    stride_amplitude: rng.random_range(0.2..0.6),
                    gait_frequency: rng.random_range(0.04..0.09),
                    phase_offset: rng.random_range(0.0..2.0 * PI),
                },
                frame_count,
                noise,
                seed: rng.random(),
                views: DEFAULT_VIEWS.to_vec(),
            }
        })
        .collect()
}

pub fn write_spec_file(records: &[IdentityRecord], path: &Path) -> Result<()> {
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r).map_err(|e| GaitError::Format(e.to_string()))?);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| GaitError::io(path, e))
}

pub fn read_spec_file(path: &Path) -> Result<Vec<IdentityRecord>> {
    let text = fs::read_to_string(path).map_err(|e| GaitError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| GaitError::data(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

/// In-memory dataset of every record, all roles and views.
pub fn synthesize(records: &[IdentityRecord]) -> Result<Dataset> {
    use rayon::prelude::*;
    let per_record = records
        .par_iter()
        .map(IdentityRecord::sequences)
        .collect::<Result<Vec<_>>>()?;
    Dataset::from_sequences(per_record.into_iter().flatten().collect())
}

/// Writes the dataset layout, `manifest.csv` and the spec file under `root`.
pub fn materialize(records: &[IdentityRecord], root: &Path) -> Result<Dataset> {
    let dataset = synthesize(records)?;
    fs::create_dir_all(root).map_err(|e| GaitError::io(root, e))?;
    let mut manifest = String::from("subject_id,role,view,path,frame_count\n");
    for seq in dataset.sequences() {
        let rel = format!("{}/{}/{}", seq.key.subject_id, seq.key.role, seq.key.view);
        write_sequence(seq, &root.join(&rel))?;
        manifest.push_str(&format!(
            "{},{},{},{},{}\n",
            seq.key.subject_id,
            seq.key.role,
            seq.key.view,
            rel,
            seq.frames.len()
        ));
    }
    let path = root.join(MANIFEST_FILE);
    fs::File::create(&path)
        .and_then(|mut f| f.write_all(manifest.as_bytes()))
        .map_err(|e| GaitError::io(&path, e))?;
    write_spec_file(records, &root.join(SPEC_FILE))?;
    Ok(dataset)
}
