//! Central-difference checks of reverse-mode gradients in double precision.

mod common;
use common::grad_cases;

fn report((n, worst): (usize, f64)) {
    eprintln!("checked {n} coordinates, worst relative error {worst:.2e}");
    assert!(n >= 100);
}

#[test]
fn warp_gradients() {
    report(grad_cases::warp());
}

#[test]
fn group_warp_gradients() {
    report(grad_cases::grouped_warp());
}

#[test]
fn deblurring_loss_gradients() {
    report(grad_cases::dblr_loss());
}

#[test]
fn perceptual_loss_gradients() {
    report(grad_cases::perc_loss());
}

#[test]
fn tv_gradients() {
    report(grad_cases::tv_loss());
}

#[test]
fn cascade_stage_gradients() {
    report(grad_cases::cascade_stage());
}
