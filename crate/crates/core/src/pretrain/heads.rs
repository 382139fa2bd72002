//! Masked-token and link-prediction heads and their losses.

use crate::encoder::{Initializer, Linear, INIT_STD};
use crate::error::{Error, Result};
use crate::numerics::{Binding, ParamGroup, ParamId, Real, Tensor, TensorError, Var};
use crate::pretrain::corrupt::{EdgeHoldout, MaskingPlan};

type TResult<T> = crate::numerics::Result<T>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scorer {
    DistMult,
    TransE,
    RotatE,
}

impl Scorer {
    pub const ALL: [Scorer; 3] = [Scorer::DistMult, Scorer::TransE, Scorer::RotatE];

    pub fn name(self) -> &'static str {
        match self {
            Scorer::DistMult => "distmult",
            Scorer::TransE => "transe",
            Scorer::RotatE => "rotate",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|x| x.name() == s)
    }
}

/// Form of the negative-sample term of the link-prediction loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NegativeTerm {
    /// `+ (1/n) Σ log σ(φ' + γ)`.
    Verbatim,
    /// `- (1/n) Σ log σ(-(φ' + γ))`, bounded below by zero.
    Bounded,
}

impl NegativeTerm {
    pub fn name(self) -> &'static str {
        match self {
            NegativeTerm::Verbatim => "verbatim",
            NegativeTerm::Bounded => "bounded",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "verbatim" => Some(NegativeTerm::Verbatim),
            "bounded" => Some(NegativeTerm::Bounded),
            _ => None,
        }
    }
}

/// Linear projection from token states to vocabulary logits.
#[derive(Debug, Clone)]
pub struct MlmHead {
    pub proj: Linear,
}

impl MlmHead {
    pub fn new<F: Real>(init: &mut Initializer<F>, d_text: usize, vocab: usize) -> Result<Self> {
        Ok(Self {
            proj: init.linear("mlm.proj", d_text, vocab, ParamGroup::Lm)?,
        })
    }

    /// Mean cross-entropy over masked positions; `None` for an empty plan.
    pub fn loss<'t, F: Real>(
        &self,
        p: &Binding<'t, '_, F>,
        plan: &MaskingPlan,
        tokens: Var<'t, F>,
    ) -> Result<Option<Var<'t, F>>> {
        if plan.is_empty() {
            return Ok(None);
        }
        let targets: Vec<usize> = plan.originals.iter().map(|&t| t as usize).collect();
        let r = (|| self.proj.apply(p, tokens.gather_rows(&plan.positions)?)?.cross_entropy(&targets))();
        r.map(Some).map_err(Error::in_layer("mlm"))
    }
}

#[derive(Debug, Clone)]
pub struct LinkPredHead {
    pub scorer: Scorer,
    pub gamma: f64,
    pub negative_term: NegativeTerm,
    /// `[relations, d_node]`: DistMult weights or TransE translations.
    pub rel: ParamId,
    /// `[relations, d_node / 2]` rotation angles, present for RotatE.
    pub phase: Option<ParamId>,
}

impl LinkPredHead {
    pub fn new<F: Real>(
        init: &mut Initializer<F>,
        scorer: Scorer,
        relations: usize,
        d_node: usize,
        gamma: f64,
        negative_term: NegativeTerm,
    ) -> Result<Self> {
        let g = ParamGroup::Other;
        let rel = match scorer {
            Scorer::DistMult => init.constant("lp.rel", &[relations, d_node], 1.0, g)?,
            _ => init.normal("lp.rel", &[relations, d_node], INIT_STD, g)?,
        };
        let phase = match scorer {
            Scorer::RotatE => Some(init.uniform("lp.rotate_phase", &[relations, d_node / 2], std::f64::consts::PI, g)?),
            _ => None,
        };
        Ok(Self {
            scorer,
            gamma,
            negative_term,
            rel,
            phase,
        })
    }

    /// Scores row `k` of `heads`/`tails` under relation `rels[k]`; returns `[K]`.
    pub fn score<'t, F: Real>(
        &self,
        p: &Binding<'t, '_, F>,
        heads: Var<'t, F>,
        rels: &[usize],
        tails: Var<'t, F>,
    ) -> TResult<Var<'t, F>> {
        let (hs, ts) = (heads.shape(), tails.shape());
        let d = p.store().tensor(self.rel).shape()[1];
        if hs != ts || hs.len() != 2 || hs[1] != d || hs[0] != rels.len() {
            return Err(TensorError::Shape {
                op: "score",
                lhs: hs,
                rhs: ts,
            });
        }
        match self.scorer {
            Scorer::DistMult => {
                let r = p.var(self.rel).gather_rows(rels)?;
                heads.mul(r)?.mul(tails)?.sum_axis(1)
            }
            Scorer::TransE => {
                let r = p.var(self.rel).gather_rows(rels)?;
                heads.add(r)?.sub(tails)?.l2_norm()?.neg()
            }
            Scorer::RotatE => {
                let phase = p.var(self.phase.expect("rotate head has phases")).gather_rows(rels)?;
                let half = d / 2;
                let (cos, sin) = (phase.cos()?, phase.sin()?);
                let (h_re, h_im) = (heads.slice(1, 0, half)?, heads.slice(1, half, half)?);
                let (t_re, t_im) = (tails.slice(1, 0, half)?, tails.slice(1, half, half)?);
                let re = h_re.mul(cos)?.sub(h_im.mul(sin)?)?.sub(t_re)?;
                let im = h_re.mul(sin)?.add(h_im.mul(cos)?)?.sub(t_im)?;
                Var::concat(&[re, im], 1)?.l2_norm()?.neg()
            }
        }
    }

    /// Sum over held-out edges of the positive and averaged negative terms; `None`
    /// for an empty holdout.
    pub fn loss<'t, F: Real>(
        &self,
        p: &Binding<'t, '_, F>,
        holdout: &EdgeHoldout,
        nodes: Var<'t, F>,
    ) -> Result<Option<Var<'t, F>>> {
        if holdout.is_empty() {
            return Ok(None);
        }
        self.loss_inner(p, holdout, nodes).map(Some).map_err(Error::in_layer("linkpred"))
    }

    fn loss_inner<'t, F: Real>(
        &self,
        p: &Binding<'t, '_, F>,
        holdout: &EdgeHoldout,
        nodes: Var<'t, F>,
    ) -> TResult<Var<'t, F>> {
        let gamma = F::of(self.gamma);
        let pos_h: Vec<usize> = holdout.positives.iter().map(|e| e.head).collect();
        let pos_t: Vec<usize> = holdout.positives.iter().map(|e| e.tail).collect();
        let pos_r: Vec<usize> = holdout.positives.iter().map(|e| e.rel.0).collect();
        let pos = self.score(p, nodes.gather_rows(&pos_h)?, &pos_r, nodes.gather_rows(&pos_t)?)?;
        let mut loss = pos.add_scalar(gamma)?.log_sigmoid()?.sum()?.neg()?;

        let (mut nh, mut nt, mut nr, mut weight) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (e, negs) in holdout.positives.iter().zip(&holdout.negatives) {
            for &(h, t) in negs {
                nh.push(h);
                nt.push(t);
                nr.push(e.rel.0);
                weight.push(F::of(1.0 / negs.len() as f64));
            }
        }
        if !nh.is_empty() {
            let neg = self.score(p, nodes.gather_rows(&nh)?, &nr, nodes.gather_rows(&nt)?)?.add_scalar(gamma)?;
            let w = p.tape().constant(Tensor::new(vec![weight.len()], weight)?);
            let term = match self.negative_term {
                NegativeTerm::Verbatim => neg.log_sigmoid()?.mul(w)?.sum()?,
                NegativeTerm::Bounded => neg.neg()?.log_sigmoid()?.mul(w)?.sum()?.neg()?,
            };
            loss = loss.add(term)?;
        }
        Ok(loss)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::ParamStore;
    use crate::rng::SeedStream;

    #[test]
    fn names_round_trip() {
        for s in Scorer::ALL {
            assert_eq!(Scorer::parse(s.name()), Some(s));
        }
        for t in [NegativeTerm::Verbatim, NegativeTerm::Bounded] {
            assert_eq!(NegativeTerm::parse(t.name()), Some(t));
        }
        assert_eq!(Scorer::parse("complex"), None);
    }

    #[test]
    fn parameter_shapes_per_scorer() {
        for scorer in Scorer::ALL {
            let mut store = ParamStore::<f64>::new();
            let mut init = Initializer {
                store: &mut store,
                seeds: SeedStream::new(0),
            };
            LinkPredHead::new(&mut init, scorer, 5, 6, 0.0, NegativeTerm::Verbatim).unwrap();
            assert_eq!(store.by_name("lp.rel").unwrap().shape(), &[5, 6]);
            let phase = store.by_name("lp.rotate_phase");
            assert_eq!(phase.map(|t| t.shape().to_vec()), (scorer == Scorer::RotatE).then(|| vec![5, 3]));
            if scorer == Scorer::DistMult {
                assert!(store.by_name("lp.rel").unwrap().data().iter().all(|&x| x == 1.0));
            }
        }
    }
}
