//! The encoder together with every task head, sharing one parameter store.

use crate::encoder::{Encoder, EncoderConfig, Initializer, VocabSizes};
use crate::error::Result;
use crate::finetune::pool::PoolingHead;
use crate::numerics::{ParamStore, Real};
use crate::pretrain::heads::{LinkPredHead, MlmHead, NegativeTerm, Scorer};
use crate::rng::SeedStream;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub scorer: Scorer,
    pub gamma: f64,
    pub negative_term: NegativeTerm,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            scorer: Scorer::DistMult,
            gamma: 0.0,
            negative_term: NegativeTerm::Verbatim,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Model<F: Real> {
    pub config: ModelConfig,
    pub encoder: Encoder,
    pub mlm: MlmHead,
    pub lp: LinkPredHead,
    pub pool: PoolingHead,
    pub store: ParamStore<F>,
}

impl<F: Real> Model<F> {
    pub fn new(config: ModelConfig, sizes: VocabSizes, seeds: SeedStream) -> Result<Self> {
        let mut store = ParamStore::new();
        let encoder = Encoder::new(config.encoder.clone(), sizes, &mut store, seeds)?;
        let mut init = Initializer {
            store: &mut store,
            seeds,
        };
        let e = &config.encoder;
        let mlm = MlmHead::new(&mut init, e.d_text, sizes.tokens)?;
        let lp = LinkPredHead::new(&mut init, config.scorer, sizes.relations, e.d_node, config.gamma, config.negative_term)?;
        let pool = PoolingHead::new(&mut init, e.d_text, e.d_node)?;
        Ok(Self {
            config,
            encoder,
            mlm,
            lp,
            pool,
            store,
        })
    }

    pub fn sizes(&self) -> VocabSizes {
        self.encoder.sizes
    }

    /// Same architecture and values in another precision.
    pub fn cast<G: Real>(&self) -> Model<G> {
        Model {
            config: self.config.clone(),
            encoder: self.encoder.clone(),
            mlm: self.mlm.clone(),
            lp: self.lp.clone(),
            pool: self.pool.clone(),
            store: self.store.cast(),
        }
    }
}
