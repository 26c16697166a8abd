use afclab_core::adaptive::flms_predictor;
use afclab_core::metrics::wiener_bias_oracle;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

fn main() {
    let len = 400_000;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let base: Vec<f64> = (0..len).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut y = vec![0.0; len];
    for k in 1..len {
        y[k] = 0.9 * y[k - 1] + base[k];
    }
    for step in [0.05, 0.2, 0.4] {
        let sol = flms_predictor(&y, 1, 16, step).unwrap();
        let mut x = vec![0.0; len];
        x[1..].copy_from_slice(&y[..len - 1]);
        let oracle = wiener_bias_oracle(&x, &y, 16).unwrap();
        println!("step {step}: flms[0..4] = {:?}", &sol.taps[..4].iter().map(|v| (v*1000.0).round()/1000.0).collect::<Vec<_>>());
        println!("          oracle[0..4] = {:?}", &oracle[..4].iter().map(|v| (v*1000.0).round()/1000.0).collect::<Vec<_>>());
    }
}
