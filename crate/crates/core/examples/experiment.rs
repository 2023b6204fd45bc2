//! Declarative experiments: run two configurations into run directories,
//! compare them and emit plot data.
//!
//! `cargo run --release --example experiment -- [out-dir]`

use std::path::PathBuf;

use boundopt::experiment::{compare_runs, emit_figure_data, run_experiment, ExperimentSpec, FigureKind, Preprocessing};

const NAIVE: &str = r#"{
  "algorithm": "gis-maxent",
  "dataSpec": { "seed": 4, "outcomes": 10, "d": 3, "offset": 20.0 },
  "stop": { "relTol": 1e-12, "maxIter": 500000 }
}"#;

fn main() -> boundopt::Result<()> {
    let root = std::env::args()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("boundopt-example"), PathBuf::from);
    let naive = ExperimentSpec::parse(NAIVE)?;
    let mut translated = naive.clone();
    translated.preprocessing = vec![Preprocessing::Translate];

    let mut manifests = Vec::new();
    for (name, spec) in [("naive", naive), ("translated", translated)] {
        manifests.push(run_experiment(&spec, &root.join(name))?);
    }
    print!("{}", compare_runs(&manifests)?.to_table());
    for path in emit_figure_data(FigureKind::Fig3Curves, &manifests, &root.join("figures"))? {
        println!("wrote {}", path.display());
    }
    Ok(())
}
