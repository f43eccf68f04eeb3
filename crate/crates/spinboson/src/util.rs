#[allow(unused_imports)]
use num_traits::Float;

/// Round to nearest integer with ties to even, as a plain f64.
pub fn round_ties_even(x: f64) -> f64 {
    let r = x.round();
    if (r - x).abs() == 0.5 && (r % 2.0) != 0.0 {
        r - (r - x).signum()
    } else {
        r
    }
}

/// Odd double factorial m!! for odd m, as f64 (exact for m <= 19).
pub fn double_factorial(m: u32) -> f64 {
    let mut acc = 1.0;
    let mut k = m;
    while k > 1 {
        acc *= k as f64;
        k -= 2;
    }
    acc
}

/// m! as f64 (exact for m <= 18).
pub fn factorial(m: u32) -> f64 {
    let mut acc = 1.0;
    for k in 2..=m {
        acc *= k as f64;
    }
    acc
}
