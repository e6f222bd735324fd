//! Compare the recorded gradient of the distillation objective against
//! central finite differences on a few small random problems.

use tsdistill::run::{gradcheck_objective, GradcheckConfig};

fn main() -> tsdistill::Result<()> {
    let cfg = GradcheckConfig { instances: 5, ..Default::default() };
    for (i, err) in gradcheck_objective(&cfg)?.iter().enumerate() {
        println!("instance {i}: max relative error {err:.2e}");
    }

    let broken = GradcheckConfig { instances: 1, fault: Some("matmul".into()), ..cfg };
    println!("with a corrupted matmul rule: {:.2e}", gradcheck_objective(&broken)?[0]);
    Ok(())
}
