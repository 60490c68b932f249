//! Finite-difference audit of the reverse-mode gradients.

fn main() -> wdro::Result<()> {
    let report = wdro::gradcheck::run(7, 50)?;
    let worst = report
        .cases
        .iter()
        .max_by(|a, b| {
            a.input_error
                .max(a.param_error)
                .total_cmp(&b.input_error.max(b.param_error))
        })
        .expect("nonempty");
    println!(
        "{} checks, max relative error {:.2e}, passed {}",
        report.cases.len(),
        report.max_relative_error,
        report.passed
    );
    println!("worst: network {} with {:?}", worst.case, worst.loss);
    Ok(())
}
