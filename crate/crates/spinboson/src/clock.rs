//! Wall-clock shim. With `std` this reads a monotonic clock; without it every
//! interval is zero and cost reports carry counters only.

#[cfg(feature = "std")]
pub fn now() -> Option<std::time::Instant> {
    Some(std::time::Instant::now())
}

#[cfg(feature = "std")]
pub fn seconds_since(start: &Option<std::time::Instant>) -> f64 {
    start.map(|s| s.elapsed().as_secs_f64()).unwrap_or(0.0)
}

#[cfg(not(feature = "std"))]
pub fn now() -> Option<()> {
    None
}

#[cfg(not(feature = "std"))]
pub fn seconds_since(_start: &Option<()>) -> f64 {
    0.0
}
