//! KL-divergence NMF on 16-dimensional data shifted by +20, naive and translated.
//!
//! `cargo run --release --example nmf`

use boundopt::nmf::{gen_nmf_data, kl_divergence, translate_data, NmfDataSpec, NmfMap, NmfUpdate};
use boundopt::{run, StopRule};

fn main() -> boundopt::Result<()> {
    let v = gen_nmf_data(&NmfDataSpec::benchmark(0));
    let (translated, t) = translate_data(&v, None)?;
    let stop = StopRule::new(1e-12, 200_000)?;
    for (label, data) in [("naive", v), ("translated", translated)] {
        let map = NmfMap::new(data.clone(), 2, NmfUpdate::Joint)?;
        let out = run(&map, &map.init(1), &stop)?;
        let f = map.unpack(&out.final_params);
        println!(
            "{label:<10} {:>6} iterations, divergence {:.6}",
            out.iterations,
            kl_divergence(&data, &f)?
        );
    }
    println!("translation subtracted {t:.4} from every entry");
    Ok(())
}
