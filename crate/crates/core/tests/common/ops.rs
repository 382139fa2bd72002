//! Finite-difference checks for every tape op, as one table.

use dragonforge::numerics::gradcheck::{self, GradCheckReport};
use dragonforge::numerics::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Random projection to a scalar so every output entry receives a distinct upstream gradient.
pub fn project<'t>(tape: &'t Tape<f64>, x: Var<'t, f64>, seed: u64) -> Var<'t, f64> {
    let shape = x.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = tape.constant(Tensor::from_fn(&shape, |_| rng.random_range(-1.0..1.0)));
    x.mul(w).unwrap().sum().unwrap()
}

pub fn composite<'t>(tape: &'t Tape<f64>, v: &[Var<'t, f64>]) -> dragonforge::numerics::Result<Var<'t, f64>> {
    let h = v[0].matmul(v[1])?.add_row(v[2])?.gelu()?;
    let h = h.layer_norm(v[3], v[4], 1e-5)?;
    let a = h.matmul(h.transpose()?)?.scale(0.5)?.softmax(1)?;
    let out = a.matmul(h)?.tanh()?;
    Ok(project(tape, out, 77))
}

macro_rules! op_table {
    ($($name:literal [$($shape:expr),*] |$v:ident| $body:expr;)*) => {
        /// `(op, report)` for every differentiable op.
        pub fn op_gradchecks() -> Vec<(&'static str, GradCheckReport)> {
            let mut out = Vec::new();
            $({
                let mut rng = ChaCha8Rng::seed_from_u64($name.len() as u64);
                let inputs = vec![$(rand_tensor(&mut rng, &$shape)),*];
                let report = gradcheck::check(&inputs, 1e-5, |t, $v| {
                    let y = $body;
                    Ok(project(t, y, 5))
                })
                .unwrap();
                out.push(($name, report));
            })*
            let mut rng = ChaCha8Rng::seed_from_u64(13);
            let inputs: Vec<_> = [&[3, 4][..], &[4, 5], &[5], &[5], &[5]].iter().map(|s| rand_tensor(&mut rng, s)).collect();
            out.push(("composite", gradcheck::check(&inputs, 1e-5, composite).unwrap()));
            out
        }
    };
}

op_table! {
    "add" [[3, 4], [3, 4]] |v| v[0].add(v[1])?;
    "sub" [[3, 4], [3, 4]] |v| v[0].sub(v[1])?;
    "mul" [[3, 4], [3, 4]] |v| v[0].mul(v[1])?;
    "div" [[3, 4], [3, 4]] |v| v[0].div(v[1].exp()?)?;
    "add_row" [[3, 4], [4]] |v| v[0].add_row(v[1])?;
    "mul_row" [[3, 4], [4]] |v| v[0].mul_row(v[1])?;
    "scalar_ops" [[3, 4]] |v| v[0].scale(-2.5)?.add_scalar(0.7)?.neg()?;
    "matmul" [[3, 4], [4, 2]] |v| v[0].matmul(v[1])?;
    "transpose_reshape" [[3, 4]] |v| v[0].transpose()?.reshape(&[2, 6])?;
    "gelu" [[3, 4]] |v| v[0].scale(2.0)?.gelu()?;
    "sigmoid" [[3, 4]] |v| v[0].scale(3.0)?.sigmoid()?;
    "tanh" [[3, 4]] |v| v[0].tanh()?;
    "sin_cos" [[3, 4]] |v| v[0].sin()?.add(v[0].cos()?)?;
    "exp_ln" [[3, 4]] |v| v[0].exp()?.add_scalar(1.0)?.ln()?;
    "log_sigmoid" [[3, 4]] |v| v[0].scale(4.0)?.log_sigmoid()?;
    "softmax_axis0" [[3, 4]] |v| v[0].softmax(0)?;
    "softmax_axis1" [[2, 3, 4]] |v| v[0].softmax(1)?;
    "masked_softmax" [[3, 4]] |v| {
        let keep = [true, false, true, true, false, true, false, true, false, false, false, false];
        v[0].masked_softmax(1, &keep)?
    };
    "layer_norm" [[3, 6], [6], [6]] |v| v[0].layer_norm(v[1], v[2], 1e-5)?;
    "gather_rows" [[5, 3]] |v| v[0].gather_rows(&[4, 0, 4, 2])?;
    "concat_axis0" [[2, 3], [1, 3]] |v| Var::concat(&[v[0], v[1], v[0]], 0)?;
    "concat_axis1" [[2, 3], [2, 1]] |v| Var::concat(&[v[1], v[0]], 1)?;
    "split_slice" [[4, 6]] |v| {
        let parts = v[0].split(1, &[2, 4])?;
        parts[0].matmul(parts[1].slice(1, 0, 2)?.transpose()?)?
    };
    "masked_fill" [[3, 4]] |v| {
        let mask: Vec<bool> = (0..12).map(|i| i % 3 == 0).collect();
        v[0].masked_fill(&mask, -5.0)?.exp()?
    };
    "cross_entropy" [[3, 5]] |v| v[0].scale(2.0)?.cross_entropy(&[1, 4, 0])?;
    "sum_mean" [[3, 4]] |v| {
        let a = v[0].sum_axis(0)?.exp()?;
        let b = v[0].mean_axis(1)?.sum()?.reshape(&[1])?;
        Var::concat(&[a, b, v[0].mean()?.reshape(&[1])?], 0)?
    };
    "max_axis" [[3, 4]] |v| v[0].max_axis(1)?;
    "l2_norm" [[3, 4]] |v| v[0].l2_norm()?;
    "dropout_fixed_mask" [[4, 5]] |v| {
        let mut mask_rng = ChaCha8Rng::seed_from_u64(99);
        v[0].dropout(0.3, &mut mask_rng)?.gelu()?
    };
}
