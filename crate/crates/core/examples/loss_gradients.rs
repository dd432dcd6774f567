//! Evaluates the three training objectives on a random batch and compares each
//! analytic gradient with a finite-difference estimate.

use anyhow::Result;
use dccl::dataset::Label;
use dccl::gradcheck::{central_difference, max_relative_error, DEFAULT_STEP};
use dccl::losses::{conception_loss, dispersion_loss, instance_loss, LossConfig};
use dccl::simgraph::normalize_rows;
use ndarray::Array2;
use rand::Rng;

fn unit_rows(rng: &mut impl Rng, r: usize, c: usize) -> Result<Array2<f64>> {
    let m = Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0));
    Ok(normalize_rows(m.view())?)
}

fn main() -> Result<()> {
    let cfg = LossConfig::default();
    let mut rng = dccl::rng::seeded(42);
    let ids = [0, 0, 1, 1, 2, 2];
    let reps = unit_rows(&mut rng, 6, 8)?;
    let protos = unit_rows(&mut rng, 3, 8)?;
    let labels = [Label::Known(0), Label::Known(0), Label::Unlabeled, Label::Known(1)];
    let proj = unit_rows(&mut rng, 8, 8)?;

    let lc = conception_loss(reps.view(), &ids, protos.view(), cfg.tau_c, false)?;
    let num = central_difference(&reps, DEFAULT_STEP, |x| {
        conception_loss(x.view(), &ids, protos.view(), cfg.tau_c, false).unwrap().value
    });
    println!("conception  {:.6}  max rel err {:.2e}", lc.value, max_relative_error(&lc.grad, &num, 1e-8));

    let ld = dispersion_loss(reps.view(), &ids, &[0, 1, 2], cfg.tau_m, true)?;
    let num = central_difference(&reps, DEFAULT_STEP, |x| dispersion_loss(x.view(), &ids, &[0, 1, 2], cfg.tau_m, true).unwrap().value);
    println!("dispersion  {:.6}  max rel err {:.2e}", ld.value, max_relative_error(&ld.grad, &num, 1e-8));

    let li = instance_loss(proj.view(), &labels, cfg.lambda, cfg.tau_s, cfg.tau_l)?;
    let num = central_difference(&proj, DEFAULT_STEP, |x| instance_loss(x.view(), &labels, cfg.lambda, cfg.tau_s, cfg.tau_l).unwrap().value);
    println!("instance    {:.6}  max rel err {:.2e}", li.value, max_relative_error(&li.grad, &num, 1e-8));
    Ok(())
}
