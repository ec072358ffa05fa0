//! Sample-quality metrics and the classifier that embeds clips for them.

mod inception;
mod metrics;

pub use inception::{
    train_inception, InceptionCheckpoint, InceptionConfig, InceptionModel, InceptionReport, InceptionTrainConfig,
    LabeledSpectro,
};
pub use metrics::{fad, frechet_distance, gaussian_fit, inception_score, kid, poly_kernel, EmbeddingSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::train::{GanExample, GeneratorCheckpoint};

const EVAL_SEED_SALT: u64 = 0xe7a1_0000;

/// One row of scores: inception scores of `candidate`, distances from the
/// reference set to it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub label: String,
    pub n_samples: usize,
    pub pis: f64,
    pub iis: f64,
    pub kid: f64,
    pub fad: f64,
    pub embedder: String,
}

impl MetricReport {
    pub const HEADER: &'static str = "label\tn_samples\tpis\tiis\tkid\tfad\tembedder";

    pub fn compare(label: &str, reference: &EmbeddingSet, candidate: &EmbeddingSet, embedder: &str) -> Result<Self> {
        if reference.dim != candidate.dim {
            return Err(Error::Geometry(format!(
                "embedding widths differ: {} vs {}",
                reference.dim, candidate.dim
            )));
        }
        Ok(MetricReport {
            label: label.to_string(),
            n_samples: candidate.len(),
            pis: inception_score(&candidate.pitch_probs, candidate.pitch_classes)?,
            iis: inception_score(&candidate.family_probs, candidate.family_classes)?,
            kid: kid(&reference.vectors, &candidate.vectors, reference.dim)?,
            fad: fad(&reference.vectors, &candidate.vectors, reference.dim)?,
            embedder: embedder.to_string(),
        })
    }

    pub fn to_tsv(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.label, self.n_samples, self.pis, self.iis, self.kid, self.fad, self.embedder
        )
    }

    pub fn summary(&self) -> String {
        format!(
            "{:<10} n={:<6} PIS {:>7.3}  IIS {:>6.3}  KID {:>10.3e}  FAD {:>9.4}",
            self.label, self.n_samples, self.pis, self.iis, self.kid, self.fad
        )
    }
}

/// Generates `n_samples` clips whose pitch and token sequence are copied
/// from randomly drawn `real` clips (with fresh noise each time).
pub fn sample_generator(
    generator: &GeneratorCheckpoint,
    real: &[GanExample],
    n_samples: usize,
    seed: u64,
) -> Result<Vec<crate::dsp::SpectroTensor>> {
    let usable: Vec<&GanExample> = real.iter().filter(|e| generator.pitch_index(e.pitch).is_some()).collect();
    if usable.is_empty() {
        return Err(Error::EmptyDataset("no reference clip has a pitch the generator knows".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ EVAL_SEED_SALT);
    let noise_dim = generator.generator.config.noise_dim;
    (0..n_samples)
        .map(|_| {
            let ex = usable[rng.random_range(0..usable.len())];
            let z: Vec<f64> = (0..noise_dim).map(|_| rng.sample(StandardNormal)).collect();
            generator.synthesize(ex.pitch, &ex.tokens, ex.tokens.len(), &z)
        })
        .collect()
}

/// Scores `n_samples` generations against the real clips.
pub fn evaluate(
    generator: &GeneratorCheckpoint,
    real: &[GanExample],
    classifier: &InceptionCheckpoint,
    n_samples: usize,
    seed: u64,
) -> Result<MetricReport> {
    if n_samples < 2 || real.len() < 2 {
        return Err(Error::invalid("KID and FAD need at least two real and two generated clips"));
    }
    let fake = sample_generator(generator, real, n_samples, seed)?;
    let real: Vec<_> = real.iter().map(|e| e.spectro.clone()).collect();
    let reference = classifier.model.embed(&real)?;
    let candidate = classifier.model.embed(&fake)?;
    MetricReport::compare("generated", &reference, &candidate, &classifier.fingerprint())
}
