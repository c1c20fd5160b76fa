use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{GaitError, Result};
use crate::tensor::Tensor;

/// Side length every loaded silhouette is normalized to.
pub const FRAME_SIZE: usize = 126;
pub const BINARIZE_THRESHOLD: f32 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Probe,
    Gallery,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Probe => "probe",
            Role::Gallery => "gallery",
        })
    }
}

impl FromStr for Role {
    type Err = GaitError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "probe" => Ok(Role::Probe),
            "gallery" => Ok(Role::Gallery),
            _ => Err(GaitError::data(format!("unknown role '{s}' (expected probe or gallery)"))),
        }
    }
}

/// `subject/role/view`, also the tensor name inside feature caches.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SequenceKey {
    pub subject_id: String,
    pub role: Role,
    pub view: u32,
}

impl SequenceKey {
    pub fn new(subject_id: impl Into<String>, role: Role, view: u32) -> Result<Self> {
        let subject_id = subject_id.into();
        if subject_id.is_empty() || subject_id.contains(['/', '\\']) || subject_id.chars().any(char::is_whitespace) {
            return Err(GaitError::data(format!("invalid subject id '{subject_id}'")));
        }
        Ok(SequenceKey { subject_id, role, view })
    }
}

impl fmt::Display for SequenceKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.subject_id, self.role, self.view)
    }
}

impl FromStr for SequenceKey {
    type Err = GaitError;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split('/').collect();
        let [subject, role, view] = parts[..] else {
            return Err(GaitError::data(format!("'{s}' is not subject/role/view")));
        };
        let view = view
            .parse()
            .map_err(|_| GaitError::data(format!("'{view}' is not a view angle")))?;
        SequenceKey::new(subject, role.parse()?, view)
    }
}

/// Binary silhouettes of one subject, role and view. Frames are `[H, W]`
/// with values in {0, 1}.
#[derive(Clone, Debug, PartialEq)]
pub struct SilhouetteSequence {
    pub key: SequenceKey,
    pub frames: Vec<Tensor<f32>>,
}

impl SilhouetteSequence {
    pub fn new(key: SequenceKey, frames: Vec<Tensor<f32>>) -> Result<Self> {
        if frames.len() < 2 {
            return Err(GaitError::data(format!(
                "{key}: need at least 2 frames for a temporal difference, got {}",
                frames.len()
            )));
        }
        let shape = frames[0].shape().to_vec();
        if shape.len() != 2 || frames.iter().any(|f| f.shape() != shape.as_slice()) {
            return Err(GaitError::data(format!("{key}: frames must share one [H, W] shape")));
        }
        Ok(SilhouetteSequence { key, frames })
    }

    pub fn frame_size(&self) -> (usize, usize) {
        let s = self.frames[0].shape();
        (s[0], s[1])
    }

    /// Usable steps (frame 0 only feeds the first difference).
    pub fn step_count(&self) -> usize {
        self.frames.len() - 1
    }

    pub fn resized(&self, size: usize) -> SilhouetteSequence {
        if self.frame_size() == (size, size) {
            return self.clone();
        }
        SilhouetteSequence {
            key: self.key.clone(),
            frames: self.frames.iter().map(|f| resize_binary(f, size)).collect(),
        }
    }

    /// Keeps the first `steps` step inputs (`steps + 1` frames).
    pub fn truncated(&self, steps: usize) -> Result<SilhouetteSequence> {
        if steps == 0 {
            return Err(GaitError::invalid("a sequence needs at least one step"));
        }
        let n = (steps + 1).min(self.frames.len());
        SilhouetteSequence::new(self.key.clone(), self.frames[..n].to_vec())
    }
}

/// Network input for time step `t >= 1`: `[frame_t, frame_t - frame_{t-1}]`.
#[derive(Clone, Debug, PartialEq)]
pub struct StepInput {
    pub t: usize,
    /// `[2, H, W]`
    pub data: Tensor<f32>,
}

pub fn make_step_inputs(seq: &SilhouetteSequence) -> Vec<StepInput> {
    let (h, w) = seq.frame_size();
    seq.frames
        .windows(2)
        .enumerate()
        .map(|(i, pair)| {
            let (prev, cur) = (pair[0].data(), pair[1].data());
            let mut data = Vec::with_capacity(2 * h * w);
            data.extend_from_slice(cur);
            data.extend(cur.iter().zip(prev).map(|(c, p)| c - p));
            StepInput {
                t: i + 1,
                data: Tensor::new(&[2, h, w], data).expect("two planes of the frame size"),
            }
        })
        .collect()
}

pub fn binarize(frame: &Tensor<f32>) -> Tensor<f32> {
    frame.map(|v| if v >= BINARIZE_THRESHOLD { 1.0 } else { 0.0 })
}

/// Bilinear resample with half-pixel centres and edge clamping.
pub fn resize_bilinear(frame: &Tensor<f32>, out_h: usize, out_w: usize) -> Tensor<f32> {
    let (h, w) = (frame.shape()[0], frame.shape()[1]);
    let src = frame.data();
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    let axis = |o: usize, scale: f64, n: usize| {
        let pos = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(n - 1);
        (lo, hi, pos - lo as f64)
    };
    Tensor::from_fn(&[out_h, out_w], |i| {
        let (y0, y1, fy) = axis(i / out_w, sy, h);
        let (x0, x1, fx) = axis(i % out_w, sx, w);
        let at = |y: usize, x: usize| src[y * w + x] as f64;
        let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
        let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
        (top * (1.0 - fy) + bottom * fy) as f32
    })
}

/// Binarize, bilinear-resize to `size x size`, binarize again.
pub fn resize_binary(frame: &Tensor<f32>, size: usize) -> Tensor<f32> {
    binarize(&resize_bilinear(&binarize(frame), size, size))
}

fn read_gray(path: &Path) -> Result<Tensor<f32>> {
    let img = image::open(path).map_err(|e| GaitError::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let gray = img.to_luma8();
    let (w, h) = gray.dimensions();
    if w == 0 || h == 0 {
        return Err(GaitError::Image {
            path: path.to_path_buf(),
            message: "empty image".into(),
        });
    }
    let data = gray.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
    Tensor::new(&[h as usize, w as usize], data)
}

/// PNG frame files of `dir`, sorted lexicographically by file name.
pub fn frame_files(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| GaitError::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| GaitError::io(dir, e))?.path();
        let is_png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if path.is_file() && is_png {
            files.push(path);
        }
    }
    files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(files)
}

/// Key from the trailing `<subject>/<role>/<view>` components of `dir`,
/// falling back to `<dir name>/probe/0` for ad-hoc directories.
pub fn key_from_path(dir: &Path) -> SequenceKey {
    let parts: Vec<String> = dir
        .components()
        .rev()
        .take(3)
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect();
    if let [view, role, subject] = &parts[..] {
        if let Ok(key) = format!("{subject}/{role}/{view}").parse() {
            return key;
        }
    }
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().replace(char::is_whitespace, "_"))
        .filter(|n| !n.is_empty())
        .unwrap_or_else(|| "sequence".into());
    SequenceKey::new(name, Role::Probe, 0).expect("sanitized name")
}

pub fn load_sequence(dir: &Path) -> Result<SilhouetteSequence> {
    load_sequence_sized(dir, FRAME_SIZE)
}

/// Loads every PNG frame of `dir` and normalizes it to `size x size` binary.
pub fn load_sequence_sized(dir: &Path, size: usize) -> Result<SilhouetteSequence> {
    let files = frame_files(dir)?;
    if files.len() < 2 {
        return Err(GaitError::data(format!(
            "{}: need at least 2 frames, found {}",
            dir.display(),
            files.len()
        )));
    }
    let frames = files
        .iter()
        .map(|p| read_gray(p).map(|f| resize_binary(&f, size)))
        .collect::<Result<Vec<_>>>()?;
    SilhouetteSequence::new(key_from_path(dir), frames)
}

/// Writes frames as 8-bit grayscale PNGs named `000.png`, `001.png`, ...
pub fn write_sequence(seq: &SilhouetteSequence, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| GaitError::io(dir, e))?;
    let (h, w) = seq.frame_size();
    for (i, frame) in seq.frames.iter().enumerate() {
        let pixels: Vec<u8> = frame.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        let img = image::GrayImage::from_raw(w as u32, h as u32, pixels).expect("buffer matches frame size");
        let path = dir.join(format!("{i:03}.png"));
        img.save(&path).map_err(|e| GaitError::Image {
            path: path.clone(),
            message: e.to_string(),
        })?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key() -> SequenceKey {
        SequenceKey::new("s1", Role::Probe, 55).unwrap()
    }

    fn seq(frames: Vec<Tensor<f32>>) -> SilhouetteSequence {
        SilhouetteSequence::new(key(), frames).unwrap()
    }

    #[test]
    fn step_count_law_and_channels() {
        let frames: Vec<_> = (0..20).map(|i| Tensor::filled(&[4, 4], (i % 2) as f32)).collect();
        let steps = make_step_inputs(&seq(frames));
        assert_eq!(steps.len(), 19);
        assert_eq!(steps[0].t, 1);
        // frame_1 = 1, frame_0 = 0 -> difference +1; next step reverses.
        assert!(steps[0].data.data()[16..].iter().all(|&v| v == 1.0));
        assert!(steps[1].data.data()[16..].iter().all(|&v| v == -1.0));
        assert!(steps[1].data.data()[..16].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identical_frames_have_zero_difference() {
        let f = Tensor::from_fn(&[3, 3], |i| (i % 2) as f32);
        let steps = make_step_inputs(&seq(vec![f.clone(), f.clone(), f]));
        assert!(steps.iter().all(|s| s.data.data()[9..].iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn too_few_frames_rejected() {
        assert!(SilhouetteSequence::new(key(), vec![Tensor::zeros(&[2, 2])]).is_err());
        assert!(SilhouetteSequence::new(key(), vec![Tensor::zeros(&[2, 2]), Tensor::zeros(&[3, 2])]).is_err());
    }

    #[test]
    fn resize_stays_binary_and_preserves_blocks() {
        let big = Tensor::from_fn(&[126, 126], |i| if (i % 126) < 63 { 1.0 } else { 0.0 });
        let small = resize_binary(&big, 46);
        assert_eq!(small.shape(), [46, 46]);
        assert!(small.data().iter().all(|&v| v == 0.0 || v == 1.0));
        assert_eq!(small[0], 1.0);
        assert_eq!(small[45], 0.0);
        let ones: f32 = small.sum();
        assert_eq!(ones, 46.0 * 23.0);
    }

    #[test]
    fn key_text_roundtrip() {
        let k: SequenceKey = "abc/gallery/85".parse().unwrap();
        assert_eq!(k.to_string(), "abc/gallery/85");
        assert!("abc/side/85".parse::<SequenceKey>().is_err());
        assert!("abc/probe".parse::<SequenceKey>().is_err());
    }

    #[test]
    fn truncation_counts_steps() {
        let frames: Vec<_> = (0..10).map(|_| Tensor::zeros(&[2, 2])).collect();
        let s = seq(frames);
        assert_eq!(s.truncated(1).unwrap().step_count(), 1);
        assert_eq!(s.truncated(100).unwrap().step_count(), 9);
        assert!(s.truncated(0).is_err());
    }
}
