//! Throwaway per-op timing at model shapes.
use coupledcast_core::rng::SeedStream;
use coupledcast_core::tensor::{ConvAxis, Graph, PadMode, Tensor};
use std::time::Instant;

fn time_op(label: &str, mut f: impl FnMut()) {
    let n = 200;
    let t0 = Instant::now();
    for _ in 0..n {
        f();
    }
    println!("{label:<28} {:8.1} us", t0.elapsed().as_secs_f64() / n as f64 * 1e6);
}

#[test]
#[ignore]
fn diag_ops() {
    let mut rng = SeedStream::new(1);
    let x = Tensor::<f32>::random_uniform(&[32, 9, 18], -1.0, 1.0, &mut rng);
    let w11 = Tensor::<f32>::random_uniform(&[32, 32, 1, 1], -0.1, 0.1, &mut rng);
    let wmlp = Tensor::<f32>::random_uniform(&[64, 32, 1, 1], -0.1, 0.1, &mut rng);
    let big = Tensor::<f32>::random_uniform(&[64, 9, 18], -1.0, 1.0, &mut rng);
    let wdw = Tensor::<f32>::random_uniform(&[32, 7], -0.1, 0.1, &mut rng);
    let bdw = Tensor::<f32>::zeros(&[32]);
    let gamma = Tensor::<f32>::full(&[32], 1.0);
    let beta = Tensor::<f32>::zeros(&[32]);
    let xr = Tensor::<f32>::random_uniform(&[17, 18, 36], -1.0, 1.0, &mut rng);
    let wr = Tensor::<f32>::random_uniform(&[16, 17, 3, 3], -0.1, 0.1, &mut rng);
    let grid = {
        let base = coupledcast_core::tensor::base_grid::<f32>(9, 18);
        Tensor::from_fn(&[2, 9, 18], |i| base.data()[i] - 0.01)
    };
    let xe = Tensor::<f32>::random_uniform(&[9, 18, 36], -1.0, 1.0, &mut rng);
    let we = Tensor::<f32>::random_uniform(&[32, 9, 2, 2], -0.1, 0.1, &mut rng);

    time_op("conv1x1 32->32 @162", || {
        let mut g: Graph<f32> = Graph::new();
        let xv = g.constant(x.clone()).unwrap();
        let wv = g.constant(w11.clone()).unwrap();
        let _ = g.conv2d(xv, wv, None, 1, PadMode::Sphere).unwrap();
    });
    time_op("conv1x1 32->64 @162", || {
        let mut g: Graph<f32> = Graph::new();
        let xv = g.constant(x.clone()).unwrap();
        let wv = g.constant(wmlp.clone()).unwrap();
        let _ = g.conv2d(xv, wv, None, 1, PadMode::Sphere).unwrap();
    });
    time_op("gelu @[64,9,18]", || {
        let mut g: Graph<f32> = Graph::new();
        let xv = g.constant(big.clone()).unwrap();
        let _ = g.gelu(xv).unwrap();
    });
    time_op("sigmoid @[32,9,18]", || {
        let mut g: Graph<f32> = Graph::new();
        let xv = g.constant(x.clone()).unwrap();
        let _ = g.sigmoid(xv).unwrap();
    });
    time_op("group_norm @[32,9,18]", || {
        let mut g: Graph<f32> = Graph::new();
        let xv = g.constant(x.clone()).unwrap();
        let gv = g.constant(gamma.clone()).unwrap();
        let bv = g.constant(beta.clone()).unwrap();
        let _ = g.group_norm(xv, gv, bv, 8, 1e-5).unwrap();
    });
    time_op("depthwise k=7 w @[32,9,18]", || {
        let mut g: Graph<f32> = Graph::new();
        let xv = g.constant(x.clone()).unwrap();
        let wv = g.constant(wdw.clone()).unwrap();
        let bv = g.constant(bdw.clone()).unwrap();
        let _ = g.depthwise_axial(xv, wv, bv, ConvAxis::Width).unwrap();
    });
    time_op("refine conv3x3 17->16 @648", || {
        let mut g: Graph<f32> = Graph::new();
        let xv = g.constant(xr.clone()).unwrap();
        let wv = g.constant(wr.clone()).unwrap();
        let _ = g.conv2d(xv, wv, None, 1, PadMode::Sphere).unwrap();
    });
    time_op("warp @[32,9,18]", || {
        let mut g: Graph<f32> = Graph::new();
        let xv = g.constant(x.clone()).unwrap();
        let gv = g.constant(grid.clone()).unwrap();
        let _ = g.bilinear_warp(xv, gv).unwrap();
    });
    time_op("embed conv 9->32 p2", || {
        let mut g: Graph<f32> = Graph::new();
        let xv = g.constant(xe.clone()).unwrap();
        let wv = g.constant(we.clone()).unwrap();
        let _ = g.conv2d(xv, wv, None, 2, PadMode::None).unwrap();
    });
    time_op("constant clone only @[32,9,18]", || {
        let mut g: Graph<f32> = Graph::new();
        let _ = g.constant(x.clone()).unwrap();
    });
}
