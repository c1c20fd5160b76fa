use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use super::cache::{build_cache, FeatureCache};
use super::metrics::{eer, rank_k, score_matrix};
use crate::data::{Dataset, Role};
use crate::error::{GaitError, Result};
use crate::net::{fcnn_forward, ModelParams};
use crate::net::model::sequence_steps;
use crate::seqpool::{pool, FrameFeature};

pub const RANKS: [usize; 3] = [1, 2, 5];
pub const EER_FILE: &str = "eer.csv";
pub const SWEEP_FILE: &str = "length_sweep.csv";

pub fn rank_file(k: usize) -> String {
    format!("rank{k}.csv")
}

/// Probe views down the rows, gallery views across the columns.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub probe_views: Vec<u32>,
    pub gallery_views: Vec<u32>,
    pub cells: Vec<Vec<f64>>,
}

impl Grid {
    pub fn row_means(&self) -> Vec<f64> {
        self.cells.iter().map(|r| r.iter().sum::<f64>() / r.len() as f64).collect()
    }

    /// Mean over every cell.
    pub fn mean(&self) -> f64 {
        let n: usize = self.cells.iter().map(Vec::len).sum();
        self.cells.iter().flatten().sum::<f64>() / n as f64
    }

    /// Mean over cells whose probe and gallery views coincide.
    pub fn same_view_mean(&self) -> Option<f64> {
        let diag: Vec<f64> = self
            .probe_views
            .iter()
            .enumerate()
            .filter_map(|(i, v)| {
                let j = self.gallery_views.iter().position(|g| g == v)?;
                Some(self.cells[i][j])
            })
            .collect();
        (!diag.is_empty()).then(|| diag.iter().sum::<f64>() / diag.len() as f64)
    }

    /// Mean over cells whose views differ.
    pub fn cross_view_mean(&self) -> Option<f64> {
        let off: Vec<f64> = self
            .probe_views
            .iter()
            .enumerate()
            .flat_map(|(i, p)| {
                self.gallery_views
                    .iter()
                    .enumerate()
                    .filter(move |(_, g)| *g != p)
                    .map(move |(j, _)| self.cells[i][j])
            })
            .collect();
        (!off.is_empty()).then(|| off.iter().sum::<f64>() / off.len() as f64)
    }

    /// Header row of gallery views plus a row-mean column, two decimals.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("probe\\gallery");
        for g in &self.gallery_views {
            let _ = write!(s, ",{g}");
        }
        s.push_str(",mean\n");
        for ((p, row), mean) in self.probe_views.iter().zip(&self.cells).zip(self.row_means()) {
            let _ = write!(s, "{p}");
            for v in row {
                let _ = write!(s, ",{v:.2}");
            }
            let _ = writeln!(s, ",{mean:.2}");
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// Rank-k grids, one per entry of [`RANKS`].
    pub ranks: Vec<(usize, Grid)>,
    pub eer: Grid,
}

impl EvalReport {
    pub fn rank(&self, k: usize) -> Option<&Grid> {
        self.ranks.iter().find(|(r, _)| *r == k).map(|(_, g)| g)
    }

    pub fn mean_rank1(&self) -> f64 {
        self.rank(1).expect("rank 1 is always computed").mean()
    }

    pub fn mean_eer(&self) -> f64 {
        self.eer.mean()
    }

    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| GaitError::io(dir, e))?;
        let mut files: Vec<(String, String)> = self.ranks.iter().map(|(k, g)| (rank_file(*k), g.to_csv())).collect();
        files.push((EER_FILE.into(), self.eer.to_csv()));
        for (name, text) in files {
            let path = dir.join(name);
            fs::write(&path, text).map_err(|e| GaitError::io(&path, e))?;
        }
        Ok(())
    }

    /// Plain-text tables of every grid.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        for (k, g) in &self.ranks {
            let _ = writeln!(s, "Rank-{k} (%)\n{}", g.to_csv());
        }
        let _ = writeln!(s, "EER (%)\n{}", self.eer.to_csv());
        s
    }
}

/// Every probe view against every gallery view present in `cache`.
pub fn cross_view_report(cache: &FeatureCache, params: &ModelParams<f32>) -> Result<EvalReport> {
    cache.check_params(params)?;
    let views = |role: Role| -> Vec<u32> {
        let set: BTreeSet<u32> = cache.keys().filter(|k| k.role == role).map(|k| k.view).collect();
        set.into_iter().collect()
    };
    let (pv, gv) = (views(Role::Probe), views(Role::Gallery));
    if pv.is_empty() || gv.is_empty() {
        return Err(GaitError::data("feature cache needs both probe and gallery sequences"));
    }
    let mut rank_cells = vec![vec![Vec::with_capacity(gv.len()); pv.len()]; RANKS.len()];
    let mut eer_cells = vec![Vec::with_capacity(gv.len()); pv.len()];
    for (i, &p) in pv.iter().enumerate() {
        for &g in &gv {
            let m = score_matrix(cache, p, g, params)?;
            for (r, &k) in RANKS.iter().enumerate() {
                rank_cells[r][i].push(rank_k(&m, k));
            }
            let (genuine, impostor) = m.split_scores();
            eer_cells[i].push(if impostor.is_empty() { 0.0 } else { eer(&genuine, &impostor)? });
        }
    }
    let grid = |cells| Grid {
        probe_views: pv.clone(),
        gallery_views: gv.clone(),
        cells,
    };
    Ok(EvalReport {
        ranks: RANKS.iter().copied().zip(rank_cells.into_iter().map(grid)).collect(),
        eer: grid(eer_cells),
    })
}

/// Which side of each pair is shortened by [`length_sweep`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, clap::ValueEnum)]
pub enum TruncateSide {
    #[default]
    Probe,
    Both,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRow {
    pub length: usize,
    pub mean_rank1: f64,
    pub mean_eer: f64,
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("length,mean_rank1,mean_eer\n");
    for r in rows {
        let _ = writeln!(s, "{},{:.2},{:.2}", r.length, r.mean_rank1, r.mean_eer);
    }
    s
}

/// Mean Rank-1 and EER when sequences keep only their first `L` step
/// inputs. Per-frame features are computed once and pooled per prefix,
/// which gives the same fused maps as embedding the truncated sequences.
pub fn length_sweep(
    dataset: &Dataset,
    params: &ModelParams<f32>,
    lengths: &[usize],
    side: TruncateSide,
) -> Result<Vec<SweepRow>> {
    if lengths.is_empty() {
        return Err(GaitError::invalid("length sweep needs at least one length"));
    }
    if let Some(&bad) = lengths.iter().find(|&&l| l == 0) {
        return Err(GaitError::invalid(format!("sequence length must be at least 1, got {bad}")));
    }
    let size = params.config.input_size;
    let full = build_cache(dataset, params)?;
    let truncated: Vec<usize> = dataset
        .sequences()
        .iter()
        .enumerate()
        .filter(|(_, s)| side == TruncateSide::Both || s.key.role == Role::Probe)
        .map(|(i, _)| i)
        .collect();
    let frame_features = truncated
        .par_iter()
        .map(|&i| {
            sequence_steps::<f32>(&dataset.sequence(i).resized(size))
                .iter()
                .enumerate()
                .map(|(t, s)| fcnn_forward(s, params).map(|maps| FrameFeature { maps, frame_index: t + 1 }))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    lengths
        .iter()
        .map(|&len| {
            let mut cache = full.clone();
            for (&i, frames) in truncated.iter().zip(&frame_features) {
                let fused = pool(&frames[..len.min(frames.len())], params.pooling)?;
                cache.insert(dataset.sequence(i).key.clone(), fused)?;
            }
            let report = cross_view_report(&cache, params)?;
            Ok(SweepRow {
                length: len,
                mean_rank1: report.mean_rank1(),
                mean_eer: report.mean_eer(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_means_and_csv() {
        let g = Grid {
            probe_views: vec![55, 65],
            gallery_views: vec![55, 65],
            cells: vec![vec![100.0, 50.0], vec![25.0, 75.0]],
        };
        assert_eq!(g.row_means(), [75.0, 50.0]);
        assert_eq!(g.mean(), 62.5);
        assert_eq!(g.same_view_mean(), Some(87.5));
        assert_eq!(g.cross_view_mean(), Some(37.5));
        assert_eq!(
            g.to_csv(),
            "probe\\gallery,55,65,mean\n55,100.00,50.00,75.00\n65,25.00,75.00,50.00\n"
        );
    }

    #[test]
    fn sweep_csv_layout() {
        let rows = [SweepRow { length: 1, mean_rank1: 12.346, mean_eer: 40.0 }];
        assert_eq!(sweep_csv(&rows), "length,mean_rank1,mean_eer\n1,12.35,40.00\n");
    }
}
