//! Attention pooling over graph nodes and the per-choice scoring perceptron.

use crate::encoder::{EncoderOutput, Initializer, Linear};
use crate::error::{Error, Result};
use crate::numerics::{Binding, ParamGroup, Real, Var};

#[derive(Debug, Clone)]
pub struct PoolingHead {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub hidden: Linear,
    pub out: Linear,
}

pub struct Pooled<'t, F: Real> {
    /// `[1, 1]` choice logit.
    pub logit: Var<'t, F>,
    /// `[1, d_node]` pooled graph vector.
    pub graph: Var<'t, F>,
    /// Attention over nodes `V_1..V_J`.
    pub alpha: Vec<f64>,
}

impl PoolingHead {
    pub fn new<F: Real>(init: &mut Initializer<F>, d_text: usize, d_node: usize) -> Result<Self> {
        let g = ParamGroup::Other;
        Ok(Self {
            query: init.linear("pool.query", d_text, d_node, g)?,
            key: init.linear("pool.key", d_node, d_node, g)?,
            value: init.linear("pool.value", d_node, d_node, g)?,
            hidden: init.linear("pool.mlp.hidden", d_text + 2 * d_node, d_text, g)?,
            out: init.linear("pool.mlp.out", d_text, 1, g)?,
        })
    }

    pub fn pool<'t, F: Real>(&self, p: &Binding<'t, '_, F>, out: &EncoderOutput<'t, F>) -> Result<Pooled<'t, F>> {
        let r = (|| {
            let h_int = out.tokens.slice(0, 0, 1)?;
            let n = out.nodes.shape()[0];
            let d = out.nodes.shape()[1];
            let v_int = out.nodes.slice(0, 0, 1)?;
            let others = out.nodes.slice(0, 1, n - 1)?;
            let q = self.query.apply(p, h_int)?;
            let k = self.key.apply(p, others)?;
            let alpha = q.matmul(k.transpose()?)?.scale(F::of(1.0 / (d as f64).sqrt()))?.softmax(1)?;
            let graph = alpha.matmul(self.value.apply(p, others)?)?;
            let x = Var::concat(&[h_int, v_int, graph], 1)?;
            let logit = self.out.apply(p, self.hidden.apply(p, x)?.gelu()?)?;
            let alpha = alpha.to_vec().into_iter().map(Real::to_f64_lossy).collect();
            Ok(Pooled { logit, graph, alpha })
        })();
        r.map_err(Error::in_layer("pool"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{ParamStore, Tape, Tensor};
    use crate::rng::SeedStream;

    #[test]
    fn attention_covers_non_interaction_nodes() {
        let mut store = ParamStore::<f64>::new();
        let mut init = Initializer {
            store: &mut store,
            seeds: SeedStream::new(2),
        };
        let head = PoolingHead::new(&mut init, 6, 4).unwrap();
        let tape = Tape::new();
        let p = Binding::new(&tape, &store);
        let out = EncoderOutput {
            tokens: tape.constant(Tensor::from_fn(&[3, 6], |i| (i as f64 * 0.37).sin())),
            nodes: tape.constant(Tensor::from_fn(&[5, 4], |i| (i as f64 * 0.11).cos())),
            attention: Vec::new(),
        };
        let pooled = head.pool(&p, &out).unwrap();
        assert_eq!(pooled.alpha.len(), 4);
        assert!((pooled.alpha.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(pooled.graph.shape(), vec![1, 4]);
        assert_eq!(pooled.logit.shape(), vec![1, 1]);
    }
}
