//! Constant-product pool arithmetic: cash for a swap, price impact, and
//! agreement with explicit reserves `x = d / sqrt(z)`, `y = d sqrt(z)`.

use pfqvi::cexdex::{drain_limit, impact, psi, swap_cashflow};

fn reserves_cash(xi: f64, z: f64, d: f64) -> f64 {
    let (x, y) = (d / z.sqrt(), d * z.sqrt());
    // acquiring xi units leaves x - xi; the invariant fixes the quote side
    y - d * d / (x - xi)
}

fn main() -> pfqvi::Result<()> {
    let d = 50_000.0;
    let z = 2820.0;
    println!("depth {d}, pool price {z}");
    println!("impact slope psi = {:.6}", psi(z, d)?);
    println!("largest fillable buy = {:.3}", drain_limit(z, d));
    println!();
    println!(
        "{:>8} {:>14} {:>14} {:>12}",
        "xi", "cash", "reserves", "linear dz"
    );
    for xi in [-10.0, -1.0, -0.1, 0.0, 0.1, 1.0, 10.0] {
        println!(
            "{xi:>8} {:>14.6} {:>14.6} {:>12.4}",
            swap_cashflow(xi, z, d)?,
            reserves_cash(xi, z, d),
            impact(xi, z, d)?
        );
    }

    // Buying and selling back at the moved price loses to curvature.
    let xi = 5.0;
    let out = swap_cashflow(xi, z, d)?;
    let z1 = z + impact(xi, z, d)?;
    let back = swap_cashflow(-xi, z1, d)?;
    println!();
    println!(
        "buy {xi} then sell at the linearly moved price: net {:.4}",
        out + back
    );
    Ok(())
}
