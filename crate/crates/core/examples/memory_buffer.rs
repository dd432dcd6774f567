//! The conception memory: prototypes start at the normalized member means and
//! drift toward incoming features with momentum.

use anyhow::Result;
use dccl::infomap::ConceptionAssignment;
use dccl::memory::ConceptionMemory;
use ndarray::array;

fn main() -> Result<()> {
    let features = array![[1.0, 0.0], [0.8, 0.6], [0.0, 1.0]];
    let assignment = ConceptionAssignment::from_modules(&[0, 0, 1]);
    let mut memory = ConceptionMemory::initialize(features.view(), &assignment, 0.9)?;
    println!("initial prototypes:\n{}", memory.reps());

    let target = array![0.0, 1.0];
    for step in 1..=30 {
        memory.momentum_update(target.view(), 0)?;
        if step % 5 == 0 {
            let p = memory.reps().row(0);
            let angle = p.dot(&target).clamp(-1.0, 1.0).acos().to_degrees();
            println!("after {step:>2} updates: prototype 0 = [{:.4}, {:.4}], {angle:.2} degrees from target", p[0], p[1]);
        }
    }
    Ok(())
}
