//! GIS on a small enumerable maximum-entropy model, and how feature
//! translation and whitening change the top eigenvalue of its rate matrix.
//!
//! `cargo run --example gis_maxent`

use boundopt::gis::maxent::{
    empirical_feature_covariance, random_maxent, solve_maxent, top_eigenvalue_under, translate_features,
    whiten_features, MaxentMap,
};
use boundopt::{rng, run, StopRule};

fn main() -> boundopt::Result<()> {
    let model = random_maxent(8, 3, 20.0, true, &mut rng::seeded(0));
    let map = MaxentMap::new(model.clone())?;
    let out = run(&map, &map.pack(&[0.0; 3])?, &StopRule::new(1e-12, 1_000_000)?)?;
    println!(
        "GIS: {} iterations, log-likelihood {:.8}",
        out.iterations,
        out.final_objective()
    );

    let theta = solve_maxent(&model, &[0.0; 4])?;
    let p = model.distribution(&theta)?;
    let (translated, shift) = translate_features(&model)?;
    let whitened = whiten_features(&model, &empirical_feature_covariance(&model))?;
    println!(
        "top eigenvalue, raw features        {:.6}",
        top_eigenvalue_under(&model, &p)?
    );
    println!(
        "top eigenvalue, translated by {shift:.2?} {:.6}",
        top_eigenvalue_under(&translated, &p)?
    );
    println!(
        "top eigenvalue, translated+whitened {:.6}",
        top_eigenvalue_under(&whitened, &p)?
    );
    Ok(())
}
