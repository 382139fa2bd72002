//! Scores one triplet under each link-prediction head.

use dragonforge::encoder::Initializer;
use dragonforge::numerics::{Binding, ParamStore, Tape, Tensor};
use dragonforge::pretrain::heads::{LinkPredHead, NegativeTerm, Scorer};
use dragonforge::rng::SeedStream;

fn main() -> dragonforge::Result<()> {
    let d = 8;
    let head: Vec<f64> = (0..d).map(|i| (i as f64 * 0.9).cos()).collect();
    let tail: Vec<f64> = (0..d).map(|i| (i as f64 * 0.4).sin()).collect();
    for scorer in Scorer::ALL {
        let mut store = ParamStore::<f64>::new();
        let mut init = Initializer {
            store: &mut store,
            seeds: SeedStream::new(5),
        };
        let lp = LinkPredHead::new(&mut init, scorer, 2, d, 0.0, NegativeTerm::Verbatim)?;
        let tape = Tape::new();
        let p = Binding::new(&tape, &store);
        let h = tape.constant(Tensor::new(vec![1, d], head.clone())?);
        let t = tape.constant(Tensor::new(vec![1, d], tail.clone())?);
        let forward = lp.score(&p, h, &[0], t)?.item();
        let backward = lp.score(&p, t, &[0], h)?.item();
        println!("{:>8}: phi(h, r, t) = {forward:+.4}, phi(t, r, h) = {backward:+.4}", scorer.name());
    }
    Ok(())
}
