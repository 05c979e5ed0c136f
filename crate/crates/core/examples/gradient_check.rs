//! Analytic backpropagation against central finite differences on random
//! networks and inputs.

use aoi_cache::model::ModelConfig;
use aoi_cache::neural::{NetworkShape, QNetwork};
use aoi_cache::rng::RngStream;

fn main() -> aoi_cache::Result<()> {
    let config = ModelConfig::default_operating_point(1.0)?;
    let shape = NetworkShape::for_model(&config);
    let mut rng = RngStream::from_seed(42);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let mut net = QNetwork::init_uniform(shape.clone(), &mut rng);
        // non-zero biases so every term of the chain rule is exercised
        for p in net.parameters_mut().0.iter_mut() {
            *p += 0.05 * (rng.uniform() - 0.5);
        }
        let x: Vec<f64> = (0..shape.input).map(|_| rng.uniform()).collect();
        let action = rng.below(shape.output);
        let grad = net.backward(&x, action, 1.0)?;
        for _ in 0..25 {
            let i = rng.below(grad.len());
            let orig = net.parameters().0[i];
            net.parameters_mut().0[i] = orig + h;
            let up = net.forward(&x)[action];
            net.parameters_mut().0[i] = orig - h;
            let down = net.forward(&x)[action];
            net.parameters_mut().0[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let err = (numeric - grad.0[i]).abs() / numeric.abs().max(grad.0[i].abs()).max(1e-8);
            worst = worst.max(err);
        }
    }
    println!("{} parameters, worst relative error {worst:.2e}", shape.param_count());
    Ok(())
}
