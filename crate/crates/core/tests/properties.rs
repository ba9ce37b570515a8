mod common;

use common::{check_energy, check_gradients, check_mixing, check_projection, CASES};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig { cases: CASES, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn projection_is_nonexpansive_and_variational(seed in any::<u64>(), d in 1usize..=4, n in 2usize..=8) {
        check_projection(seed, d, n)?;
    }

    #[test]
    fn mixing_contracts_disagreement(seed in any::<u64>(), n in 2usize..=12, d in 1usize..=4) {
        check_mixing(seed, n, d)?;
    }

    #[test]
    fn gradients_match_finite_differences(seed in any::<u64>(), n in 1usize..=3, d in 1usize..=5) {
        check_gradients(seed, n, d)?;
    }

    #[test]
    fn step_is_projected_energy_descent(seed in any::<u64>(), n in 2usize..=6, d in 1usize..=3) {
        check_energy(seed, n, d)?;
    }
}
