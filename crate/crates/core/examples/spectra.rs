//! Prints the spectral quantities of the built-in datasets.

use ipg_core::dataset::{compute_spectrum, DatasetSource};

fn main() -> ipg_core::Result<()> {
    for src in [DatasetSource::Ash608, DatasetSource::Gr3030] {
        let data = src.load(None)?;
        let s = compute_spectrum(&data)?;
        println!(
            "{:<18} N={:<4} d={:<4} lambda_1={:.6} lambda_d={:.6e} kappa={:.1} varrho={:.6} 2/(l1+ld)={:.5}",
            data.name(),
            data.rows(),
            data.dim(),
            s.lambda_1,
            s.lambda_d,
            s.condition_number(),
            s.varrho,
            2.0 / (s.lambda_1 + s.lambda_d)
        );
    }
    Ok(())
}
