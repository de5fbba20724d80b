//! Processor budget allocation for architecture comparisons: both variants
//! are handed the same total and split it across their pools.

use std::collections::BTreeMap;

use super::{ModelError, PoolRole, Variant};

/// Split `total` processors across the variant's pools.
///
/// Without weights the split is even, with any remainder going to the
/// transport function pool (the relay/forwarding workhorse in both
/// architectures). Explicit weights allocate proportionally, largest
/// fractional remainders first. Every pool must end up with at least one
/// processor, otherwise `BudgetTooSmall`.
pub fn equal_budget_split(
    total: u32,
    variant: Variant,
    weights: Option<&BTreeMap<PoolRole, u32>>,
) -> Result<BTreeMap<PoolRole, u32>, ModelError> {
    let pools = variant.default_pools();
    let n = pools.len() as u32;
    match weights {
        None => {
            let each = total / n;
            if each == 0 {
                return Err(ModelError::BudgetTooSmall { total, variant });
            }
            let mut split: BTreeMap<PoolRole, u32> = pools.iter().map(|p| (*p, each)).collect();
            *split
                .get_mut(&PoolRole::TransportFunction)
                .expect("every variant has a TF pool") += total % n;
            Ok(split)
        }
        Some(weights) => {
            for pool in weights.keys() {
                if !pools.contains(pool) {
                    return Err(ModelError::UnknownRoleForVariant {
                        role: *pool,
                        variant,
                    });
                }
            }
            let w: Vec<u64> = pools
                .iter()
                .map(|p| u64::from(weights.get(p).copied().unwrap_or(0)))
                .collect();
            let w_sum: u64 = w.iter().sum();
            if w_sum == 0 {
                return Err(ModelError::InvalidWeights(
                    "weights sum to zero".to_string(),
                ));
            }
            // Largest-remainder apportionment, ties broken by pool order.
            let total64 = u64::from(total);
            let mut alloc: Vec<u64> = w.iter().map(|wi| total64 * wi / w_sum).collect();
            let assigned: u64 = alloc.iter().sum();
            let mut order: Vec<usize> = (0..pools.len()).collect();
            order.sort_by_key(|&i| std::cmp::Reverse(total64 * w[i] % w_sum));
            for &i in order.iter().take((total64 - assigned) as usize) {
                alloc[i] += 1;
            }
            if alloc.contains(&0) {
                return Err(ModelError::BudgetTooSmall { total, variant });
            }
            Ok(pools
                .iter()
                .zip(alloc)
                .map(|(p, a)| (*p, a as u32))
                .collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn even_split_engn_eight() {
        let split = equal_budget_split(8, Variant::Engn, None).unwrap();
        assert_eq!(split.len(), 4);
        assert!(split.values().all(|&c| c == 2));
    }

    #[test]
    fn even_split_ngn_six() {
        let split = equal_budget_split(6, Variant::Ngn, None).unwrap();
        assert_eq!(split.len(), 3);
        assert!(split.values().all(|&c| c == 2));
    }

    #[test]
    fn remainder_goes_to_transport_function() {
        let split = equal_budget_split(7, Variant::Ngn, None).unwrap();
        assert_eq!(split[&PoolRole::EndUser], 2);
        assert_eq!(split[&PoolRole::TransportFunction], 3);
        assert_eq!(split[&PoolRole::TransportControl], 2);
    }

    #[test]
    fn too_small_budget_rejected() {
        assert_eq!(
            equal_budget_split(3, Variant::Engn, None),
            Err(ModelError::BudgetTooSmall {
                total: 3,
                variant: Variant::Engn
            })
        );
    }

    #[test]
    fn weighted_split_sums_to_total() {
        let weights: BTreeMap<PoolRole, u32> = [
            (PoolRole::EndUser, 1),
            (PoolRole::TransportFunction, 3),
            (PoolRole::TransportControl, 2),
        ]
        .into_iter()
        .collect();
        let split = equal_budget_split(10, Variant::Ngn, Some(&weights)).unwrap();
        assert_eq!(split.values().sum::<u32>(), 10);
        assert!(split[&PoolRole::TransportFunction] > split[&PoolRole::EndUser]);
    }

    #[test]
    fn weighted_split_rejects_foreign_pool() {
        let weights: BTreeMap<PoolRole, u32> =
            [(PoolRole::SignalingService, 1)].into_iter().collect();
        assert!(matches!(
            equal_budget_split(8, Variant::Ngn, Some(&weights)),
            Err(ModelError::UnknownRoleForVariant { .. })
        ));
    }

    #[test]
    fn weighted_zero_share_is_too_small() {
        let weights: BTreeMap<PoolRole, u32> = [
            (PoolRole::EndUser, 1),
            (PoolRole::TransportFunction, 100),
            (PoolRole::TransportControl, 100),
        ]
        .into_iter()
        .collect();
        assert_eq!(
            equal_budget_split(4, Variant::Ngn, Some(&weights)),
            Err(ModelError::BudgetTooSmall {
                total: 4,
                variant: Variant::Ngn
            })
        );
    }
}
