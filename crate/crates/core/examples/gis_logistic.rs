//! Iterative scaling for logistic regression on shifted features, with and
//! without translating the features toward the origin.
//!
//! `cargo run --release --example gis_logistic`

use boundopt::experiment::run::{logistic_data, logistic_transform};
use boundopt::experiment::{Algorithm, DataSpec, ExperimentSpec, Preprocessing};
use boundopt::gis::logistic::{LogisticData, LogisticMap};
use boundopt::{run, StopRule};

fn main() -> boundopt::Result<()> {
    let base = ExperimentSpec::new(Algorithm::GisLogistic, DataSpec::default());
    let stop = StopRule::new(1e-10, 200_000)?;
    for steps in [
        vec![],
        vec![Preprocessing::Translate],
        vec![Preprocessing::Translate, Preprocessing::Whiten],
    ] {
        let spec = base.clone().with_preprocessing(&steps);
        let (x, y) = logistic_data(&spec)?;
        let transform = logistic_transform(&spec, &x)?;
        let map = LogisticMap::new(LogisticData::new(&transform.apply(&x)?, y)?)?;
        let out = run(&map, &map.zero(), &stop)?;
        let w = transform.weights_to_original(&out.final_params.values);
        println!(
            "{:<36} {:>7} iterations ({:?}), weights {w:.4?}",
            spec.label(),
            out.iterations,
            out.status
        );
    }
    Ok(())
}
