use std::time::{Duration, Instant};

/// Busy-waits on the monotonic clock. Sleep granularity is far coarser than the
/// sub-millisecond costs this crate simulates.
pub fn spin_for(d: Duration) {
    if d.is_zero() {
        return;
    }
    let start = Instant::now();
    while start.elapsed() < d {
        std::hint::spin_loop();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spins_at_least_the_requested_time() {
        let start = Instant::now();
        spin_for(Duration::from_micros(300));
        assert!(start.elapsed() >= Duration::from_micros(300));
    }
}
