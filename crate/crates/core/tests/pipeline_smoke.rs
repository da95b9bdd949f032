use std::sync::Arc;

use dash_core::circuit::{decode_outputs, evaluate, garble, garble_inputs, Circuit};
use dash_core::crt::CrtBase;
use dash_core::layers::{Conv2d, Dense, Layer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

#[test]
fn small_conv_net_matches_plain() {
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let base = Arc::new(CrtBase::new(5).unwrap());
    let w = |n: usize, rng: &mut ChaCha20Rng| (0..n).map(|_| rng.gen_range(-1..=1)).collect::<Vec<i64>>();
    let layers = vec![
        Layer::Conv2d(Conv2d::new(1, 2, 3, 2, w(18, &mut rng), vec![1, -1]).unwrap()),
        Layer::Relu,
        Layer::Flatten,
        Layer::Dense(Dense::new(8, 3, w(24, &mut rng), vec![0, 2, -2]).unwrap()),
        Layer::Sign,
        Layer::Dense(Dense::new(3, 2, w(6, &mut rng), vec![0, 0]).unwrap()),
    ];
    for private in [false, true] {
        let c = Circuit::new(vec![1, 5, 5], layers.clone(), base.clone(), 1.0)
            .unwrap()
            .with_private_weights(private);
        let (gnn, e, d) = garble(&c, &[7; 32]).unwrap();
        gnn.check_tweaks().unwrap();
        let plan = c.sign_plan().unwrap();
        assert_eq!(gnn.layer_counts(), c.closed_form_counts(&plan).unwrap());
        for _ in 0..50 {
            let x: Vec<i128> = (0..25).map(|_| rng.gen_range(-4..=4)).collect();
            let out = decode_outputs(&d, &evaluate(&gnn, &garble_inputs(&e, &x).unwrap()).unwrap()).unwrap();
            assert_eq!(out, c.plain_forward(&x).unwrap());
        }
    }
}
