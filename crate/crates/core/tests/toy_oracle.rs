//! PGD optimality on convex toy problems: the loss PGD reaches must match
//! the exhaustive grid optimum over the perturbation box.

mod common;

use common::toy;

const TOLERANCE: f64 = 1e-3;
const INSTANCES: u64 = 5;

#[test]
fn pgd_reaches_the_box_optimum_on_convex_toys() {
    for seed in 1..=INSTANCES {
        let (best, achieved) = toy::run_instance(seed);
        println!(
            "toy {seed}: oracle {best:.9}, pgd {achieved:.9}, gap {:+.3e}",
            best - achieved
        );
        assert!(
            achieved >= best - TOLERANCE,
            "toy {seed}: pgd loss {achieved} is more than {TOLERANCE} below the box optimum {best}"
        );
        assert!(
            achieved <= best + 1e-9,
            "toy {seed}: pgd loss {achieved} exceeds the exhaustive optimum {best}"
        );
    }
}
