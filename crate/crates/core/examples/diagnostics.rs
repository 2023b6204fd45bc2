//! Rate-matrix diagnostics for any iteration map: finite-difference M' at a
//! fixed point, gauge detection, predicted vs observed rate, and the step
//! compared with the Newton direction.
//!
//! `cargo run --release --example diagnostics`

use boundopt::diagnostics::{chart_hessian, convergence_report, direction_report, predicted_rate};
use boundopt::nmf::{gen_nmf_data, NmfDataSpec, NmfMap, NmfUpdate};
use boundopt::optimizer::{refine_fixed_point, run_recording};
use boundopt::StopRule;

fn main() -> boundopt::Result<()> {
    let v = gen_nmf_data(&NmfDataSpec {
        dim: 4,
        count: 6,
        offset: 2.0,
        seed: 3,
    });
    let map = NmfMap::new(v, 2, NmfUpdate::Joint)?;
    let (out, traj) = run_recording(&map, &map.init(1), &StopRule::new(1e-12, 500_000)?)?;
    let (fixed, _) = refine_fixed_point(&map, &out.final_params, 1e-12, 2_000_000)?;
    let report = convergence_report(&map, &fixed, Some(&traj))?;
    println!("spectral radius  {:.6}", report.spectral_radius);
    println!("gauge dimensions {}", report.gauge_dimensions);
    println!("predicted rate   {:.6}", report.predicted_rate);
    // WQ, Q⁻¹H gives the same product for any Q near the identity, so interior
    // fixed points come in an r²-dimensional family. Only the r rescalings are
    // gauge directions of the map; the rest still show up as unit eigenvalues.
    let r = 2;
    println!(
        "rate off the r² unit eigenvalues {:.6}",
        predicted_rate(&report.spectrum, r * r)
    );
    println!("observed rate    {:?}", report.observed_rate);

    let probe = &traj[traj.len() / 2];
    let directions = direction_report(&map, probe, &chart_hessian(&map, probe)?)?;
    println!("cos(step, gradient) {:.4}", directions.cos_step_grad);
    println!("cos(step, Newton)   {:?}", directions.cos_step_newton);
    Ok(())
}
