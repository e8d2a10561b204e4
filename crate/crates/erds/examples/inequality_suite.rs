//! Stress-tests every inequality the decay estimates rest on with
//! randomized inputs and prints the worst margin seen per family. Margins
//! are relative slack, so zero means the bound is tight and negative
//! would mean a violation.

use erds::inequalities::randomized_margins;

fn main() -> erds::Result<()> {
    let report = randomized_margins(100_000, 0)?;
    print!("{report}");
    if report.total_violations() == 0 {
        println!("no violations");
    } else {
        println!("{} violations", report.total_violations());
    }
    Ok(())
}
