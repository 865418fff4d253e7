//! Shared fixtures for the benchmarks.

use robust_precoding::design::order_blast;
use robust_precoding::experiments::trial_estimates;
use robust_precoding::{PrecodingMode, ProblemData, QosTargets};

/// Seeded Rayleigh instance with spherical regions and equal targets.
/// THP instances use the BLAST order.
pub fn instance(seed: u64, users: usize, antennas: usize, delta: f64, target_db: f64, mode: PrecodingMode) -> ProblemData {
    let h = trial_estimates(seed, 0, users, antennas);
    let targets = QosTargets::uniform_sinr_db(target_db, users).expect("finite target");
    let data = ProblemData::spherical(h.clone(), vec![1.0; users], targets, delta, mode).expect("valid instance");
    match mode {
        PrecodingMode::Thp => data.with_ordering(order_blast(&h).order).expect("BLAST returns a permutation"),
        PrecodingMode::Linear => data,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_is_deterministic() {
        let a = instance(1, 3, 3, 0.05, 6.0, PrecodingMode::Thp);
        let b = instance(1, 3, 3, 0.05, 6.0, PrecodingMode::Thp);
        assert_eq!(a, b);
        assert_eq!(a.users(), 3);
        assert_eq!(a.regions()[0].radius(), 0.05);
    }
}
