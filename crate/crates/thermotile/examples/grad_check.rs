//! Verify every layer's analytic gradient against central finite
//! differences, in f64 and in f32 (looser tolerance).
//!
//!     cargo run --release --example grad_check

use thermotile::nn::{grad_check, grad_check_f32, ModelConfig, DEFAULT_TOLERANCE_F64, TOLERANCE_F32};

fn main() {
    let cfg = ModelConfig::default();

    println!("f64 suite (tolerance {DEFAULT_TOLERANCE_F64:.0e}):");
    let report = grad_check(&cfg, 1234, DEFAULT_TOLERANCE_F64);
    print!("{}", report.table());
    println!("passed: {}\n", report.passed());

    println!("f32 suite (tolerance {TOLERANCE_F32:.0e}):");
    let report32 = grad_check_f32(&cfg, 1234, TOLERANCE_F32);
    print!("{}", report32.table());
    println!("passed: {}", report32.passed());
}
