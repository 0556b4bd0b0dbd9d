//! Central-difference check of every differentiable op.

use voxagent::tensor::gradcheck_suite;

fn main() {
    let report = gradcheck_suite(7, 1e-5).expect("suite inputs are well-formed");
    println!("{report}");
    println!("total {:.2?}", report.elapsed());
}
