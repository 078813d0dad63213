//! Manual throughput probe (run with --ignored --nocapture).

use coupledcast_core::gradcheck;
use coupledcast_core::nn::{self, DslCastConfig};
use coupledcast_core::rng::SeedStream;
use coupledcast_core::tensor::Tensor;
use std::time::Instant;

#[test]
#[ignore]
fn probe_gradcheck_all_ops() {
    let t0 = Instant::now();
    for op in gradcheck::registered_ops() {
        let start = Instant::now();
        let mut worst = 0.0f64;
        for seed in 0..3 {
            let r = gradcheck::finite_difference_check(op, seed, 1e-5, 1e-4).unwrap();
            worst = worst.max(r.max_rel_err);
            assert!(r.pass, "{op} seed {seed}: {}", r.max_rel_err);
        }
        println!("{op:<22} worst {:.3e}  ({:?})", worst, start.elapsed());
    }
    println!("total {:?}", t0.elapsed());
}

#[test]
#[ignore]
fn probe_model_throughput() {
    for width in [24usize, 32, 48, 64] {
        let lat: Vec<f64> = (0..18).map(|i| -85.0 + 10.0 * i as f64).collect();
        let mut cfg = DslCastConfig::desk(9, 8, 18, 36, lat);
        cfg.width = width;
        let params: nn::ParamSet<f32> = nn::init_params(&cfg, 1).unwrap();
        let mut rng = SeedStream::new(2);
        let x = Tensor::<f32>::random_uniform(&[9, 18, 36], -1.0, 1.0, &mut rng);
        let target = Tensor::<f32>::random_uniform(&[8, 18, 36], -1.0, 1.0, &mut rng);

        // forward only
        let n_fwd = 30;
        let t0 = Instant::now();
        for _ in 0..n_fwd {
            let _ = nn::model_forward_tensor(&cfg, &params, &x).unwrap();
        }
        let fwd = t0.elapsed().as_secs_f64() / n_fwd as f64;

        // forward + backward
        let n_fb = 20;
        let t0 = Instant::now();
        for _ in 0..n_fb {
            let mut g = coupledcast_core::Graph::<f32>::new();
            let vars = nn::insert_model_params(&mut g, &cfg, &params, true).unwrap();
            let xv = g.constant(x.clone()).unwrap();
            let out = nn::dslcast_forward(&mut g, &cfg, &vars, xv).unwrap();
            let loss = coupledcast_core::train::relative_l2_graph(&mut g, out, &target).unwrap();
            g.backward(loss).unwrap();
        }
        let fb = t0.elapsed().as_secs_f64() / n_fb as f64;
        println!("D={width:2}  fwd {:.2} ms   fwd+bwd {:.2} ms", fwd * 1e3, fb * 1e3);
    }
}
