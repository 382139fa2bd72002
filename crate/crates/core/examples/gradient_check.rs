//! Compares tape gradients with central differences for a small attention block.

use dragonforge::numerics::gradcheck::check;
use dragonforge::numerics::Tensor;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let wave = |shape: &[usize], k: f64| Tensor::from_fn(shape, |i| (k * (i as f64 + 1.0)).sin());
    let inputs = [wave(&[4, 6], 0.7), wave(&[6, 6], 1.3), wave(&[6], 0.4)];

    // softmax(x W x^T) x, layer-normed and squashed to a scalar
    let report = check(&inputs, 1e-5, |tape, v| {
        let (x, w, g) = (v[0], v[1], v[2]);
        let scores = x.matmul(w)?.matmul(x.transpose()?)?.softmax(1)?;
        let mixed = scores.matmul(x)?;
        let bias = tape.constant(Tensor::zeros(&[6]));
        mixed.layer_norm(g, bias, 1e-5)?.gelu()?.mean()
    })?;

    println!("checked {} entries, max relative error {:.2e}", report.checked, report.max_rel_error);
    if let Some((input, index, analytic, numeric)) = report.worst {
        println!("worst: input {input} entry {index}: analytic {analytic:.6e} numeric {numeric:.6e}");
    }
    Ok(())
}
