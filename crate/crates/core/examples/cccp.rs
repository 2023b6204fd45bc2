//! The concave-convex procedure on three splits of one quartic energy.
//!
//! `cargo run --example cccp`

use boundopt::cccp::{cccp_rate_matrix, quartic_bench, CccpMap, Decomposition};
use boundopt::{run, StopRule};

fn main() -> boundopt::Result<()> {
    let stop = StopRule::new(1e-10, 10_000)?;
    for d in quartic_bench() {
        let rate = cccp_rate_matrix(&d, &[1.0])?[(0, 0)];
        let map = CccpMap::new(d)?;
        let out = run(&map, &map.pack(&[2.0])?, &stop)?;
        let x = out.final_params.values[0];
        println!(
            "{}: rate at x=1 {rate:.4}, {} iterations from x=2, x = {x:.8}, E = {:.8}",
            map.decomposition().name(),
            out.iterations,
            map.decomposition().energy(&[x])
        );
    }
    Ok(())
}
