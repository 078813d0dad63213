//! Throwaway diagnostic for gradcheck case tuning.
use coupledcast_core::gradcheck::{finite_difference_check, registered_ops};

#[test]
#[ignore]
fn diag() {
    let mut any_fail = false;
    for op in registered_ops() {
        let mut worst = 0.0f64;
        for seed in 0..10 {
            let r = finite_difference_check(op, seed, 1e-5, 1e-4).unwrap();
            if !r.pass {
                any_fail = true;
                println!("  FAIL {op} seed {seed}: {:.3e}", r.max_rel_err);
            }
            worst = worst.max(r.max_rel_err);
        }
        println!("{op:<20} worst {:.3e}", worst);
    }
    assert!(!any_fail);
}
