use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;

use super::dataset::Dataset;
use super::sequence::Role;
use crate::error::{GaitError, Result};
use crate::net::{DIFF_INDEX, SAME_INDEX};
use crate::rng::{substream, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PairLabel {
    Same,
    Different,
}

impl PairLabel {
    /// One-hot target `(t0, t1)` over the head's output indices.
    pub fn target(self) -> [f64; 2] {
        let mut t = [0.0; 2];
        t[match self {
            PairLabel::Same => SAME_INDEX,
            PairLabel::Different => DIFF_INDEX,
        }] = 1.0;
        t
    }

    pub fn index(self) -> usize {
        match self {
            PairLabel::Same => SAME_INDEX,
            PairLabel::Different => DIFF_INDEX,
        }
    }
}

/// Probe and gallery are indices into the dataset the pair was drawn from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrainingPair {
    pub probe: usize,
    pub gallery: usize,
    pub label: PairLabel,
}

/// Probe pool plus galleries grouped by subject, built once per dataset.
#[derive(Clone, Debug)]
pub struct PairSampler {
    probes: Vec<(usize, usize)>,
    galleries: Vec<Vec<usize>>,
}

impl PairSampler {
    pub fn new(dataset: &Dataset) -> Result<Self> {
        let subjects = dataset.subjects();
        let pos: BTreeMap<&str, usize> = subjects.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let mut galleries = vec![Vec::new(); subjects.len()];
        for i in dataset.indices(Role::Gallery) {
            galleries[pos[dataset.sequence(i).key.subject_id.as_str()]].push(i);
        }
        let probes: Vec<(usize, usize)> = dataset
            .indices(Role::Probe)
            .into_iter()
            .map(|i| (i, pos[dataset.sequence(i).key.subject_id.as_str()]))
            .filter(|&(_, s)| !galleries[s].is_empty())
            .collect();
        let with_gallery = galleries.iter().filter(|g| !g.is_empty()).count();
        if with_gallery < 2 {
            return Err(GaitError::data(format!(
                "pair sampling needs at least 2 subjects with gallery sequences, found {with_gallery}"
            )));
        }
        if probes.is_empty() {
            return Err(GaitError::data("no probe sequence has a same-subject gallery"));
        }
        Ok(PairSampler { probes, galleries })
    }

    /// `batch_size / 2` probes, each paired once with a random-view gallery of
    /// its own subject and once with a random gallery of another subject.
    pub fn sample<R: Rng>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<TrainingPair>> {
        if batch_size == 0 || batch_size % 2 != 0 {
            return Err(GaitError::invalid(format!("batch size must be even and positive, got {batch_size}")));
        }
        let mut pairs = Vec::with_capacity(batch_size);
        for _ in 0..batch_size / 2 {
            let (probe, subject) = self.probes[rng.random_range(0..self.probes.len())];
            let own = &self.galleries[subject];
            pairs.push(TrainingPair {
                probe,
                gallery: own[rng.random_range(0..own.len())],
                label: PairLabel::Same,
            });
            let other = loop {
                let s = rng.random_range(0..self.galleries.len());
                if s != subject && !self.galleries[s].is_empty() {
                    break &self.galleries[s];
                }
            };
            pairs.push(TrainingPair {
                probe,
                gallery: other[rng.random_range(0..other.len())],
                label: PairLabel::Different,
            });
        }
        Ok(pairs)
    }
}

/// Batch number `index` of the sampler stream of `seed`.
pub fn sample_batch_at(dataset: &Dataset, batch_size: usize, seed: u64, index: u64) -> Result<Vec<TrainingPair>> {
    PairSampler::new(dataset)?.sample(batch_size, &mut substream(seed, Stream::Sampler, index))
}

pub fn sample_batch(dataset: &Dataset, batch_size: usize, seed: u64) -> Result<Vec<TrainingPair>> {
    sample_batch_at(dataset, batch_size, seed, 0)
}

/// Disjoint train / validation / test subject lists, each sorted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubjectSplit {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

pub fn split_subjects(subjects: &[String], train_n: usize, val_n: usize, test_n: usize, seed: u64) -> Result<SubjectSplit> {
    let mut pool: Vec<String> = subjects.to_vec();
    pool.sort();
    pool.dedup();
    let wanted = train_n + val_n + test_n;
    if wanted > pool.len() {
        return Err(GaitError::invalid(format!(
            "split asks for {wanted} subjects but only {} are available",
            pool.len()
        )));
    }
    pool.shuffle(&mut substream(seed, Stream::Split, 0));
    let mut take = |n: usize| {
        let mut part: Vec<String> = pool.drain(..n).collect();
        part.sort();
        part
    };
    Ok(SubjectSplit {
        train: take(train_n),
        validation: take(val_n),
        test: take(test_n),
    })
}
