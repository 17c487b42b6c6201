//! The three trainable model families behind one type.

use rrn_core::baselines::{AvgPoolClassifier, FeatureExtractor, GruClassifier};
use rrn_core::data::SyntheticVideo;
use rrn_core::inference::{chunk_videos, ChunkedVideo};
use rrn_core::model::RecurrentResidualNet;
use rrn_core::train::Objective;
use rrn_core::Real;

use crate::config::{ModelKind, RunConfig};
use crate::error::Result;

/// Seed offset for extractor pretraining, so it draws different numbers
/// from the classifier initialization.
pub const EXTRACTOR_SEED_MIX: u64 = 0x5eed_0f_f7a3e5;

pub enum Model<S: Real> {
    Rrn(RecurrentResidualNet<S>),
    AvgPool {
        extractor: FeatureExtractor,
        head: AvgPoolClassifier<S>,
    },
    Gru {
        extractor: FeatureExtractor,
        head: GruClassifier<S>,
    },
}

impl<S: Real> Model<S> {
    /// A freshly initialized model. Baselines pretrain their extractor here.
    pub fn build(cfg: &RunConfig) -> Result<Self> {
        let seed = cfg.train.seed;
        Ok(match cfg.model {
            ModelKind::Rrn => Model::Rrn(RecurrentResidualNet::new(cfg.network.clone(), seed)?),
            kind => {
                let extractor = FeatureExtractor::pretrain(&cfg.extractor(), seed ^ EXTRACTOR_SEED_MIX)?;
                Self::with_extractor(cfg, kind, extractor)
            }
        })
    }

    pub(crate) fn with_extractor(cfg: &RunConfig, kind: ModelKind, extractor: FeatureExtractor) -> Self {
        let (d, k, seed) = (extractor.dim(), cfg.network.classes, cfg.train.seed);
        match kind {
            ModelKind::AvgPool => Model::AvgPool {
                extractor,
                head: AvgPoolClassifier::new(d, k, seed),
            },
            ModelKind::Gru => Model::Gru {
                extractor,
                head: GruClassifier::new(d, cfg.gru_hidden, k, seed),
            },
            ModelKind::Rrn => unreachable!("the recurrent residual network has no extractor"),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Rrn(_) => ModelKind::Rrn,
            Model::AvgPool { .. } => ModelKind::AvgPool,
            Model::Gru { .. } => ModelKind::Gru,
        }
    }

    pub fn objective(&mut self) -> &mut dyn Objective<S> {
        match self {
            Model::Rrn(net) => net,
            Model::AvgPool { head, .. } => head,
            Model::Gru { head, .. } => head,
        }
    }

    pub fn extractor(&self) -> Option<&FeatureExtractor> {
        match self {
            Model::Rrn(_) => None,
            Model::AvgPool { extractor, .. } | Model::Gru { extractor, .. } => Some(extractor),
        }
    }

    /// Samples and chunks `videos`, then encodes frames for the baselines.
    pub fn prepare(&mut self, cfg: &RunConfig, videos: &[SyntheticVideo]) -> Result<Vec<ChunkedVideo>> {
        let chunked = chunk_videos(videos, &cfg.chunks)?;
        Ok(match self {
            Model::Rrn(_) => chunked,
            Model::AvgPool { extractor, .. } | Model::Gru { extractor, .. } => extractor.encode_videos(&chunked)?,
        })
    }
}
