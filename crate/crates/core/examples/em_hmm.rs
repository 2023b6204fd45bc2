//! Baum-Welch on structured and aliased sequences from a 5-state, 5-symbol HMM.
//!
//! `cargo run --release --example em_hmm`

use boundopt::em::{gen_hmm_data, HmmDataSpec, HmmEm, HmmKind, HmmParams};
use boundopt::{rng, run, StopRule};

fn main() -> boundopt::Result<()> {
    let stop = StopRule::new(1e-10, 50_000)?;
    for kind in [HmmKind::Structured, HmmKind::Aliased] {
        let spec = HmmDataSpec::new(kind, 1);
        let map = HmmEm::new(gen_hmm_data(&spec), spec.states, spec.symbols)?;
        let init = HmmParams::random(spec.states, spec.symbols, &mut rng::seeded(2));
        let out = run(&map, &map.pack(&init)?, &stop)?;
        println!(
            "{kind:?}: {} iterations, log-likelihood {:.4}",
            out.iterations,
            out.final_objective()
        );
        let fitted = map.unpack(&out.final_params);
        for row in fitted.emissions.chunks(spec.symbols) {
            println!("  emissions {row:.2?}");
        }
    }
    Ok(())
}
