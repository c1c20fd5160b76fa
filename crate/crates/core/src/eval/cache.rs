use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;

use crate::data::{Dataset, SequenceKey, SilhouetteSequence};
use crate::error::{GaitError, Result};
use crate::net::model::embed_sequence;
use crate::net::{params_hash, Container, ModelParams};
use crate::seqpool::{FusedFeature, PoolingMode};

/// Fused features keyed by sequence, all from one set of weights.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureCache {
    pub checkpoint_hash: String,
    pub pooling: PoolingMode,
    entries: BTreeMap<SequenceKey, FusedFeature<f32>>,
}

impl FeatureCache {
    pub fn new(checkpoint_hash: impl Into<String>, pooling: PoolingMode) -> Self {
        FeatureCache {
            checkpoint_hash: checkpoint_hash.into(),
            pooling,
            entries: BTreeMap::new(),
        }
    }

    pub fn for_params(params: &ModelParams<f32>) -> Self {
        Self::new(params_hash(params), params.pooling)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: &SequenceKey) -> Option<&FusedFeature<f32>> {
        self.entries.get(key)
    }

    pub fn require(&self, key: &SequenceKey) -> Result<&FusedFeature<f32>> {
        self.get(key).ok_or_else(|| GaitError::data(format!("{key} is not in the feature cache")))
    }

    pub fn keys(&self) -> impl Iterator<Item = &SequenceKey> {
        self.entries.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&SequenceKey, &FusedFeature<f32>)> {
        self.entries.iter()
    }

    pub fn insert(&mut self, key: SequenceKey, feature: FusedFeature<f32>) -> Result<()> {
        if feature.mode != self.pooling {
            return Err(GaitError::invalid(format!(
                "{key}: {} feature in a {} cache",
                feature.mode, self.pooling
            )));
        }
        self.entries.insert(key, feature);
        Ok(())
    }

    /// Rejected unless `params` hash to this cache's checkpoint.
    pub fn check_params(&self, params: &ModelParams<f32>) -> Result<()> {
        let hash = params_hash(params);
        if hash != self.checkpoint_hash || params.pooling != self.pooling {
            return Err(GaitError::data(format!(
                "feature cache belongs to checkpoint {} ({}), not {hash} ({})",
                short(&self.checkpoint_hash),
                self.pooling,
                params.pooling
            )));
        }
        Ok(())
    }

    /// Merges `other`, which must come from the same checkpoint and mode.
    pub fn append(&mut self, other: FeatureCache) -> Result<()> {
        if other.checkpoint_hash != self.checkpoint_hash || other.pooling != self.pooling {
            return Err(GaitError::data(format!(
                "cannot append features of checkpoint {} to a cache of {}",
                short(&other.checkpoint_hash),
                short(&self.checkpoint_hash)
            )));
        }
        self.entries.extend(other.entries);
        Ok(())
    }

    pub fn to_container(&self) -> Container {
        let lengths: Vec<String> = self.entries.values().map(|f| f.source_length.to_string()).collect();
        Container {
            meta: vec![
                ("format".into(), "features".into()),
                ("checkpoint".into(), self.checkpoint_hash.clone()),
                ("pooling".into(), self.pooling.to_string()),
                ("lengths".into(), lengths.join(" ")),
            ],
            tensors: self
                .entries
                .iter()
                .map(|(k, f)| (k.to_string(), f.maps.clone()))
                .collect(),
        }
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.meta("format") != Some("features") {
            return Err(GaitError::Format("not a feature cache (missing '@format features')".into()));
        }
        let pooling: PoolingMode = c.require_meta("pooling")?.parse()?;
        let lengths: Vec<usize> = c
            .require_meta("lengths")?
            .split_whitespace()
            .map(|v| v.parse().map_err(|_| GaitError::Format(format!("bad length '{v}'"))))
            .collect::<Result<_>>()?;
        if lengths.len() != c.tensors.len() {
            return Err(GaitError::Format(format!(
                "{} lengths for {} features",
                lengths.len(),
                c.tensors.len()
            )));
        }
        let mut cache = FeatureCache::new(c.require_meta("checkpoint")?, pooling);
        for ((name, maps), &source_length) in c.tensors.iter().zip(&lengths) {
            let key: SequenceKey = name.parse()?;
            cache.insert(
                key,
                FusedFeature {
                    maps: maps.clone(),
                    mode: pooling,
                    source_length,
                },
            )?;
        }
        Ok(cache)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::read(path)?)
    }
}

fn short(hash: &str) -> &str {
    &hash[..hash.len().min(12)]
}

fn embed_all(sequences: &[&SilhouetteSequence], params: &ModelParams<f32>) -> Result<Vec<FusedFeature<f32>>> {
    let size = params.config.input_size;
    sequences
        .par_iter()
        .map(|s| embed_sequence(&s.resized(size), params, params.pooling))
        .collect()
}

/// One embedding per sequence of `dataset`, resized to the network input.
pub fn build_cache(dataset: &Dataset, params: &ModelParams<f32>) -> Result<FeatureCache> {
    let refs: Vec<&SilhouetteSequence> = dataset.sequences().iter().collect();
    let mut cache = FeatureCache::for_params(params);
    for (s, f) in refs.iter().zip(embed_all(&refs, params)?) {
        cache.insert(s.key.clone(), f)?;
    }
    Ok(cache)
}

/// Adds the sequences of `dataset` missing from `cache`.
pub fn extend_cache(cache: &mut FeatureCache, dataset: &Dataset, params: &ModelParams<f32>) -> Result<usize> {
    cache.check_params(params)?;
    let missing: Vec<&SilhouetteSequence> = dataset.sequences().iter().filter(|s| cache.get(&s.key).is_none()).collect();
    let features = embed_all(&missing, params)?;
    let added = missing.len();
    for (s, f) in missing.into_iter().zip(features) {
        cache.insert(s.key.clone(), f)?;
    }
    Ok(added)
}
