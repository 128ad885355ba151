//! Scores the recorded closing prices of the 30 held-out markets and prints
//! the per-discipline MAE table.
//!
//!     cargo run -p replimarket --example evaluate_recorded_prices

use replimarket::eval::evaluate;
use replimarket::reference;
use replimarket::Mode;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let truth = reference::test_claims(0);
    let runs: Vec<_> = Mode::ALL.into_iter().flat_map(reference::runs).collect();
    let report = evaluate(&runs, &truth)?;
    report.write_mae_table(std::io::stdout())?;
    println!();
    for g in &report.groups {
        println!(
            "{:<18} {:<10} accuracy {}/{}",
            g.domain,
            g.mode,
            (g.accuracy * g.markets as f64).round(),
            g.markets
        );
    }
    Ok(())
}
