//! File-level glue: WAV file to feature vector, and batch extraction over
//! a manifest.

use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::audio::{self, AudioError, ANALYSIS_RATE};
use crate::dataset::{DatasetManifest, LabeledSample};
use crate::features::{FeatureError, FeatureExtractor, FeatureVector};

#[derive(Debug, Error)]
pub enum ClipError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Decode {
        path: String,
        #[source]
        source: AudioError,
    },
    #[error("{path}: {source}")]
    Features {
        path: String,
        #[source]
        source: FeatureError,
    },
}

/// A file that was left out of a batch extraction.
#[derive(Debug)]
pub struct Skipped {
    pub sample: LabeledSample,
    pub error: ClipError,
}

pub fn analysis_extractor() -> FeatureExtractor {
    FeatureExtractor::new(ANALYSIS_RATE).expect("default STFT settings are valid")
}

/// Read, decode, resample, cap and describe one WAV file.
pub fn features_from_file(
    path: &Path,
    max_seconds: f64,
    extractor: &FeatureExtractor,
) -> Result<FeatureVector, ClipError> {
    let name = path.display().to_string();
    let bytes = std::fs::read(path).map_err(|source| ClipError::Io {
        path: name.clone(),
        source,
    })?;
    let clip = audio::load_for_analysis(&bytes, max_seconds)
        .map_err(|source| ClipError::Decode {
            path: name.clone(),
            source,
        })?
        .with_source(name.clone());
    extractor
        .extract(&clip)
        .map_err(|source| ClipError::Features { path: name, source })
}

/// Extracts features for every sample in parallel. Samples that fail are
/// returned separately; the output manifest keeps index order.
pub fn extract_manifest(
    manifest: &DatasetManifest,
    max_seconds: f64,
) -> (DatasetManifest, Vec<Skipped>) {
    let extractor = analysis_extractor();
    let results: Vec<(LabeledSample, Result<FeatureVector, ClipError>)> = manifest
        .samples()
        .par_iter()
        .map(|s| {
            (
                s.clone(),
                features_from_file(&s.path, max_seconds, &extractor),
            )
        })
        .collect();

    let mut kept = Vec::new();
    let mut skipped = Vec::new();
    for (sample, result) in results {
        match result {
            Ok(fv) => kept.push(LabeledSample {
                features: Some(fv),
                ..sample
            }),
            Err(error) => skipped.push(Skipped { sample, error }),
        }
    }
    let out = DatasetManifest::new(kept).expect("indices already unique");
    (out, skipped)
}
