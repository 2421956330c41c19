//! Backward pass time against horizon and fleet size, with the dense KKT
//! solve for comparison.

use eqlq::bench::{time_backward_pass, time_oracle};

fn main() -> eqlq::Result<()> {
    for n in [5, 10, 20, 40] {
        for t in [50, 100, 200, 400] {
            let r = time_backward_pass(t, n, 5)?;
            println!("backward pass  N={n:>3} T={t:>4}  {:>9.3} ms", r.median_seconds * 1e3);
        }
    }
    for t in [25, 50, 100, 200] {
        let r = time_oracle(t, 2, 3)?;
        println!("stacked KKT    N=  2 T={t:>4}  {:>9.3} ms", r.median_seconds * 1e3);
    }
    Ok(())
}
