//! Ranking metrics, synthetic worlds, and experiment harnesses.

pub mod ablation;
pub mod attention;
pub mod linkpred;
pub mod ranking;
pub mod synthetic;
