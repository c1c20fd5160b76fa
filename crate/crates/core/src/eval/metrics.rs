use rayon::prelude::*;

use super::cache::FeatureCache;
use crate::data::{Role, SequenceKey};
use crate::error::{GaitError, Result};
use crate::net::{compare, ModelParams};

/// `p_same` of every probe against every gallery of one view pair.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMatrix {
    pub probe_view: u32,
    pub gallery_view: u32,
    pub probe_subjects: Vec<String>,
    pub gallery_subjects: Vec<String>,
    /// Row-major `[probe][gallery]`.
    pub scores: Vec<f64>,
    pub genuine: Vec<bool>,
}

impl ScoreMatrix {
    /// Checks shapes and that each row holds exactly one genuine entry.
    pub fn new(
        probe_view: u32,
        gallery_view: u32,
        probe_subjects: Vec<String>,
        gallery_subjects: Vec<String>,
        scores: Vec<f64>,
    ) -> Result<Self> {
        let (rows, cols) = (probe_subjects.len(), gallery_subjects.len());
        if rows == 0 || cols == 0 {
            return Err(GaitError::data(format!("empty score matrix for views {probe_view}/{gallery_view}")));
        }
        if scores.len() != rows * cols {
            return Err(GaitError::shape("score_matrix", [rows, cols], scores.len()));
        }
        let genuine: Vec<bool> = probe_subjects
            .iter()
            .flat_map(|p| gallery_subjects.iter().map(move |g| p == g))
            .collect();
        for (i, p) in probe_subjects.iter().enumerate() {
            let n = genuine[i * cols..(i + 1) * cols].iter().filter(|&&g| g).count();
            if n != 1 {
                return Err(GaitError::data(format!(
                    "probe {p} at view {probe_view} has {n} genuine galleries at view {gallery_view}, expected 1"
                )));
            }
        }
        Ok(ScoreMatrix {
            probe_view,
            gallery_view,
            probe_subjects,
            gallery_subjects,
            scores,
            genuine,
        })
    }

    pub fn rows(&self) -> usize {
        self.probe_subjects.len()
    }

    pub fn cols(&self) -> usize {
        self.gallery_subjects.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.scores[i * self.cols()..(i + 1) * self.cols()]
    }

    pub fn genuine_index(&self, i: usize) -> usize {
        let c = self.cols();
        self.genuine[i * c..(i + 1) * c].iter().position(|&g| g).expect("one genuine per row")
    }

    pub fn split_scores(&self) -> (Vec<f64>, Vec<f64>) {
        let mut genuine = Vec::with_capacity(self.rows());
        let mut impostor = Vec::with_capacity(self.scores.len() - self.rows());
        for (&s, &g) in self.scores.iter().zip(&self.genuine) {
            if g {
                genuine.push(s);
            } else {
                impostor.push(s);
            }
        }
        (genuine, impostor)
    }
}

fn subjects_at(cache: &FeatureCache, role: Role, view: u32) -> Vec<&SequenceKey> {
    cache.keys().filter(|k| k.role == role && k.view == view).collect()
}

pub fn score_matrix(cache: &FeatureCache, probe_view: u32, gallery_view: u32, params: &ModelParams<f32>) -> Result<ScoreMatrix> {
    let probes = subjects_at(cache, Role::Probe, probe_view);
    let galleries = subjects_at(cache, Role::Gallery, gallery_view);
    let cells: Vec<(&SequenceKey, &SequenceKey)> =
        probes.iter().flat_map(|p| galleries.iter().map(move |g| (*p, *g))).collect();
    let scores = cells
        .par_iter()
        .map(|(p, g)| compare(cache.require(p)?, cache.require(g)?, params).map(|s| s.p_same))
        .collect::<Result<Vec<f64>>>()?;
    ScoreMatrix::new(
        probe_view,
        gallery_view,
        probes.iter().map(|k| k.subject_id.clone()).collect(),
        galleries.iter().map(|k| k.subject_id.clone()).collect(),
        scores,
    )
}

/// Position of the genuine gallery when a row is sorted by descending
/// score, ties going to the lower gallery index.
pub fn genuine_rank(m: &ScoreMatrix, i: usize) -> usize {
    let row = m.row(i);
    let j = m.genuine_index(i);
    let s = row[j];
    row.iter()
        .enumerate()
        .filter(|&(c, &v)| v > s || (v == s && c < j))
        .count()
}

/// Percentage of probes whose genuine gallery is within the top `k`.
pub fn rank_k(m: &ScoreMatrix, k: usize) -> f64 {
    let hits = (0..m.rows()).filter(|&i| genuine_rank(m, i) < k).count();
    100.0 * hits as f64 / m.rows() as f64
}

/// Equal error rate in percent. Thresholds are every distinct score plus
/// +inf; accept when `score >= threshold`. The crossing of FAR and FRR is
/// interpolated linearly between the two bracketing thresholds.
pub fn eer(genuine: &[f64], impostor: &[f64]) -> Result<f64> {
    if genuine.is_empty() || impostor.is_empty() {
        return Err(GaitError::invalid("EER needs both genuine and impostor scores"));
    }
    if genuine.iter().chain(impostor).any(|v| v.is_nan()) {
        return Err(GaitError::NonFinite("NaN score passed to EER".into()));
    }
    let mut g = genuine.to_vec();
    let mut im = impostor.to_vec();
    g.sort_by(f64::total_cmp);
    im.sort_by(f64::total_cmp);
    let mut thresholds: Vec<f64> = g.iter().chain(&im).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    thresholds.push(f64::INFINITY);

    let (ng, ni) = (g.len() as f64, im.len() as f64);
    let rates = |t: f64| {
        let far = (im.len() - im.partition_point(|&v| v < t)) as f64 / ni;
        let frr = g.partition_point(|&v| v < t) as f64 / ng;
        (far, frr)
    };
    let mut prev = rates(thresholds[0]);
    for &t in &thresholds {
        let cur = rates(t);
        let d = cur.0 - cur.1;
        if d <= 0.0 {
            let dp = prev.0 - prev.1;
            if d == 0.0 || dp <= 0.0 {
                return Ok(100.0 * cur.0);
            }
            let w = dp / (dp - d);
            return Ok(100.0 * (prev.0 + w * (cur.0 - prev.0)));
        }
        prev = cur;
    }
    unreachable!("at +inf every impostor is rejected and every genuine score too")
}
