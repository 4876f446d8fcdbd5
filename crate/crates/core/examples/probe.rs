use caplab::rademacher::*;
use caplab::shattering::NormKind;
use caplab::Activation;
use std::time::Instant;
fn main() {
    for (n, trials) in [(1usize, 200usize), (4, 200), (16, 200)] {
        let t = Instant::now();
        let pts = sphere_points(16, 256, 1.0, 9);
        let spec = HypothesisSpec::dense(Activation::Relu, 1.0, 1.0, NormKind::Spectral, n);
        let e = estimate(&pts, &spec, &EstimateOptions { trials, seed: 3, ..Default::default() }).unwrap();
        println!("relu n={n} mean={:.4} se={:.4} ab={} {:?}", e.mean, e.stderr, e.abandoned_restarts, t.elapsed());
    }
    for m in [8usize, 32, 128] {
        let t = Instant::now();
        let pts = sphere_points(m, 16, 1.0, 1);
        let spec = HypothesisSpec::dense(Activation::Identity, 1.0, 1.0, NormKind::Spectral, 4);
        let e = estimate(&pts, &spec, &EstimateOptions { trials: 400, seed: 2, ..Default::default() }).unwrap();
        println!("lin m={m} mean={:.4} se={:.4} bound={:.4} {:?}", e.mean, e.stderr, 1.0/(m as f64).sqrt(), t.elapsed());
    }
    let t = Instant::now();
    let pts = sphere_points(32, 8, 1.0, 4);
    let spec = HypothesisSpec::dense(Activation::Polynomial{coeffs: vec![0.0,1.0]}, 1.0, 1.0, NormKind::Spectral, 4);
    let e = estimate(&pts, &spec, &EstimateOptions { trials: 200, seed: 2, ..Default::default() }).unwrap();
    println!("sq mean={:.4} se={:.4} bound={:.4} {:?}", e.mean, e.stderr, 1.0/32f64.sqrt(), t.elapsed());
}
