//! Run the finite-difference battery over every op and the tiny fused
//! model. Equivalent to `stickpose gradcheck`.
//!
//! ```text
//! cargo run --release --example gradcheck_suite
//! ```

fn main() -> stickpose::Result<()> {
    let reports = stickpose::gradcheck::standard_suite(1e-5, 1e-4)?;
    for r in &reports {
        println!("{r}");
    }
    let failures = reports.iter().filter(|r| !r.passed()).count();
    println!("{} checks, {} failures", reports.len(), failures);
    assert_eq!(failures, 0);
    Ok(())
}
