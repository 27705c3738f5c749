//! Encode oriented boxes as bivariate Gaussians and show why the encoding
//! is angle-robust: equivalent parameterizations (edge swap plus quarter
//! turn, half turn) give the same covariance, and the anisotropic variant
//! separates square-box rotations that the plain encoding cannot see.
//!
//! ```bash
//! cargo run --example gaussian_encoding
//! ```

use gbbox::gaussian::{
    obb_cov, obb_to_anisotropic_gaussian, obb_to_gaussian, SquareLikePolicy,
};
use gbbox::geometry::ObbBox;
use std::f64::consts::{FRAC_PI_2, PI};

fn show(name: &str, cov: [[f64; 2]; 2]) {
    println!(
        "  {name:<26} [[{:9.4}, {:9.4}], [{:9.4}, {:9.4}]]",
        cov[0][0], cov[0][1], cov[1][0], cov[1][1]
    );
}

fn main() -> gbbox::Result<()> {
    let b = ObbBox::new(1.0, 2.0, 4.0, 2.0, PI / 6.0)?;
    let g = obb_to_gaussian(&b);
    println!("box (cx=1, cy=2, w=4, h=2, theta=pi/6)");
    println!("  mean: ({}, {})", g.mean()[0], g.mean()[1]);
    show("covariance", g.cov());

    println!("\nequivalent parameterizations map to the same covariance:");
    show("(w, h, theta)", obb_cov(4.0, 2.0, PI / 6.0));
    show("(h, w, theta - pi/2)", obb_cov(2.0, 4.0, PI / 6.0 - FRAC_PI_2));
    show("(w, h, theta - pi)", obb_cov(4.0, 2.0, PI / 6.0 - PI));

    println!("\na square and its 45-degree rotation under the plain encoding:");
    let square = ObbBox::new(0.0, 0.0, 2.0, 2.0, 0.0)?;
    let rotated = ObbBox::new(0.0, 0.0, 2.0, 2.0, PI / 4.0)?;
    show("square", obb_to_gaussian(&square).cov());
    show("square at 45 deg", obb_to_gaussian(&rotated).cov());
    println!("  -> identical; the plain encoding is blind to this rotation");

    let policy = SquareLikePolicy::default();
    println!("\nthe anisotropic encoding (tau = {}, delta = {}):", policy.tau, policy.delta);
    show(
        "square",
        obb_to_anisotropic_gaussian(&square, &policy)?.cov(),
    );
    show(
        "square at 45 deg",
        obb_to_anisotropic_gaussian(&rotated, &policy)?.cov(),
    );
    println!("  -> distinct, while quarter-turn equivalence is kept:");
    let quarter = ObbBox::new(0.0, 0.0, 2.0, 2.0, FRAC_PI_2)?;
    show(
        "square at 90 deg",
        obb_to_anisotropic_gaussian(&quarter, &policy)?.cov(),
    );
    Ok(())
}
