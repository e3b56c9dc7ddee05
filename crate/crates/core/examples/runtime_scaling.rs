//! Wall-clock scaling of the loss, GW, the trispectrum and the two gradient
//! methods, on reduced sweeps.
//!
//! ```text
//! cargo run --release --example runtime_scaling
//! ```

use zernike_match::diagnostics::{bench_csv, fit_slope, runtime_bench, BenchConfig, BenchSuite};

fn main() -> zernike_match::Result<()> {
    let cfg = BenchConfig {
        repetitions: 5,
        loss_sizes: vec![1_000, 10_000],
        loss_l_max: vec![6, 10],
        gw_sizes: vec![50, 100],
        gw_eps: vec![1.0, 0.5],
        gradient_budgets: vec![50, 100, 200],
        gradient_points: 10,
        ..Default::default()
    };
    let records = runtime_bench(&BenchSuite::ALL, &cfg)?;
    print!("{}", bench_csv(&records)?);
    for op in ["implicit_gradient", "fd_gradient"] {
        if let Some(s) = fit_slope(&records, op) {
            println!("{op}: {s:.4} ms per alignment iteration");
        }
    }
    Ok(())
}
