use pco_unet::gradcheck::check_param;
use pco_unet::{Tensor, UNet, UNetConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sample(cfg: &UNetConfig, rng: &mut ChaCha8Rng) -> (Tensor<f64>, Tensor<f64>) {
    let s = cfg.input_size;
    let x: Vec<f64> = (0..s * s).map(|_| rng.random::<f64>()).collect();
    let y: Vec<f64> = x.iter().map(|&v| if v > 0.6 { 1.0 } else { 0.0 }).collect();
    (
        Tensor::from_vec([1, 1, s, s], x).unwrap(),
        Tensor::from_vec([1, 1, s, s], y).unwrap(),
    )
}

// Zero biases put dead units exactly on the ReLU kink, where one-sided and
// central differences disagree.
fn jitter_biases(net: &mut UNet<f64>, rng: &mut ChaCha8Rng) {
    for spec in net.param_specs().to_vec() {
        if spec.name.ends_with(".bias") {
            for i in spec.range() {
                net.params_mut()[i] = rng.random_range(-0.05..0.05);
            }
        }
    }
}

#[test]
fn every_parameter_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for depth in [1, 2] {
        let cfg = UNetConfig {
            depth,
            base_channels: 4,
            input_size: 8,
            in_channels: 1,
        };
        let mut net = UNet::<f64>::new(cfg, 11).unwrap();
        jitter_biases(&mut net, &mut rng);
        let (x, y) = sample(&cfg, &mut rng);
        for idx in 0..net.param_count() {
            let g = check_param(&net, &x, &y, idx, 1e-6).unwrap();
            assert!(
                g.rel_error <= 1e-4 || (g.analytic - g.numeric).abs() < 1e-9,
                "depth {depth} {} [{idx}]: analytic {} numeric {}",
                g.name,
                g.analytic,
                g.numeric
            );
        }
    }
}

#[test]
fn coarse_step_agrees_off_kinks() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let cfg = UNetConfig {
        depth: 3,
        base_channels: 4,
        input_size: 32,
        in_channels: 1,
    };
    let mut net = UNet::<f64>::new(cfg, 2).unwrap();
    jitter_biases(&mut net, &mut rng);
    let (x, y) = sample(&cfg, &mut rng);
    for spec in net.param_specs() {
        let idx = spec.offset + rng.random_range(0..spec.len());
        let g = check_param(&net, &x, &y, idx, 1e-3).unwrap();
        if g.kinks_crossed == 0 {
            assert!(g.rel_error <= 1e-2, "{} [{idx}]: {g:?}", g.name);
        }
    }
}
