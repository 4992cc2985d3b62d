//! Checks every analytic gradient (metric, seven losses, encoder) against
//! central finite differences, then shows that a sign flip is caught.

use idml::config::GradcheckConfig;
use idml::gradcheck::run_gradcheck;

pub fn check(cases: usize) -> idml::Result<()> {
    let cfg = GradcheckConfig {
        cases,
        ..GradcheckConfig::default()
    };
    let report = run_gradcheck(&cfg)?;
    print!("{}", report.to_text());
    println!("passed: {}", report.passed());

    let broken = run_gradcheck(&GradcheckConfig {
        inject_sign_bug: true,
        ..cfg
    })?;
    let worst = broken.worst().expect("sections");
    println!(
        "with a sign bug: passed {}, worst {} at {:.3e}",
        broken.passed(),
        worst.name,
        worst.max_rel_error
    );
    Ok(())
}

pub fn run_example() -> idml::Result<()> {
    check(20)
}

#[allow(dead_code)]
fn main() -> idml::Result<()> {
    check(GradcheckConfig::default().cases)
}
