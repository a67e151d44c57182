//! Clip-to-vector composition: normalize, extract frame features, pool.

use rayon::prelude::*;

use crate::corpus::{self, AudioClip, CorpusManifest, SampleRecord};
use crate::error::Result;
use crate::features;
use crate::pooling::{self, PooledFeatureVector};

/// Pooled feature vector of one clip, labelled with the clip's label if known.
pub fn featurize_clip(clip: &AudioClip) -> Result<PooledFeatureVector> {
    let normalized = corpus::normalize_peak(clip)?;
    let frames = features::extract_frame_features(&normalized)?;
    let mut pooled = pooling::pool(&clip.id, &frames)?;
    pooled.label = clip.label.map(|l| l.to_string());
    Ok(pooled)
}

pub fn featurize_record(record: &SampleRecord) -> Result<PooledFeatureVector> {
    featurize_clip(&corpus::load_clip(record)?)
}

/// Featurizes every record in parallel; results keep manifest order.
pub fn featurize_manifest(manifest: &CorpusManifest) -> Vec<Result<PooledFeatureVector>> {
    manifest.records.par_iter().map(featurize_record).collect()
}
