//! EM on two one-dimensional Gaussian clusters, well separated and overlapping.
//!
//! `cargo run --example em_mog`

use boundopt::diagnostics::convergence_report;
use boundopt::em::{gen_mog_data, MogDataSpec, MogEm, MogParams, Separation};
use boundopt::optimizer::{refine_fixed_point, run_recording};
use boundopt::StopRule;

fn main() -> boundopt::Result<()> {
    let stop = StopRule::new(1e-10, 100_000)?;
    for separation in [Separation::Well, Separation::Overlapping] {
        let data = gen_mog_data(&MogDataSpec {
            separation,
            n: 200,
            d: 1,
            seed: 0,
        });
        let map = MogEm::new(data, 2)?;
        let init = map.pack(&MogParams::quantile_init(map.data(), 2)?)?;
        let (out, traj) = run_recording(&map, &init, &stop)?;
        let p = map.unpack(&out.final_params);
        println!(
            "{separation:?}: {} iterations, log-likelihood {:.6}",
            out.iterations,
            out.final_objective()
        );
        println!("  weights {:.3?}  means {:.3?}", p.weights, p.means);

        let (fixed, _) = refine_fixed_point(&map, &out.final_params, 1e-12, 200_000)?;
        let report = convergence_report(&map, &fixed, Some(&traj))?;
        println!(
            "  predicted rate {:.4}  observed {:?}",
            report.predicted_rate, report.observed_rate
        );
    }
    Ok(())
}
