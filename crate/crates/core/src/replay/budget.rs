//! Integer budget arithmetic. Every fractional share is resolved by floor
//! plus largest remainder, so parts always sum to the requested total.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{FamilyCensus, FamilyId};
use crate::error::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Budgeting {
    /// Family budget proportional to the family's share of pooled malware.
    Ratio,
    /// Equal budget per family.
    Uniform,
}

impl Budgeting {
    pub fn as_str(self) -> &'static str {
        match self {
            Budgeting::Ratio => "ratio",
            Budgeting::Uniform => "uniform",
        }
    }
}

impl fmt::Display for Budgeting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Budgeting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "ratio" => Ok(Budgeting::Ratio),
            "uniform" => Ok(Budgeting::Uniform),
            other => Err(Error::invalid(format!("unknown budgeting `{other}`"))),
        }
    }
}

/// Splits `total` into `(share * total, rest)` rounded by largest remainder.
/// A remainder tie (exactly one half) goes to the first part.
pub fn split_share(total: usize, share: f64) -> (usize, usize) {
    let exact = share.clamp(0.0, 1.0) * total as f64;
    let floor = exact.floor();
    let first = if exact - floor >= 0.5 { floor + 1.0 } else { floor } as usize;
    let first = first.min(total);
    (first, total - first)
}

/// Per-family budgets for `total` replay slots; families with a zero
/// budget are still listed. The values always sum to `total` when the
/// census is non-empty.
pub fn family_budgets(census: &FamilyCensus, total: usize, budgeting: Budgeting) -> BTreeMap<FamilyId, usize> {
    let families: Vec<(FamilyId, usize)> = census.iter().collect();
    if families.is_empty() {
        return BTreeMap::new();
    }
    match budgeting {
        Budgeting::Ratio => {
            let denom = census.total_malware() as u128;
            let mut out: BTreeMap<FamilyId, usize> = BTreeMap::new();
            let mut remainders = Vec::with_capacity(families.len());
            let mut assigned = 0usize;
            for &(f, n) in &families {
                let num = n as u128 * total as u128;
                let q = (num / denom) as usize;
                out.insert(f, q);
                assigned += q;
                remainders.push((num % denom, n, f));
            }
            // largest remainder first, then larger family, then smaller id
            remainders.sort_by(|a, b| b.0.cmp(&a.0).then(b.1.cmp(&a.1)).then(a.2.cmp(&b.2)));
            for &(_, _, f) in remainders.iter().take(total - assigned) {
                *out.get_mut(&f).unwrap() += 1;
            }
            out
        }
        Budgeting::Uniform => {
            let base = total / families.len();
            let extra = total % families.len();
            let mut by_size = families.clone();
            by_size.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
            let mut out: BTreeMap<FamilyId, usize> = families.iter().map(|&(f, _)| (f, base)).collect();
            for &(f, _) in by_size.iter().take(extra) {
                *out.get_mut(&f).unwrap() += 1;
            }
            out
        }
    }
}

/// Budget of a single family; 0 for families absent from the census.
pub fn family_budget(census: &FamilyCensus, family: FamilyId, total: usize, budgeting: Budgeting) -> usize {
    family_budgets(census, total, budgeting)
        .get(&family)
        .copied()
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn census(counts: &[(u32, usize)]) -> FamilyCensus {
        FamilyCensus::from_counts(counts.iter().map(|&(f, n)| (FamilyId(f), n)))
    }

    fn values(m: &BTreeMap<FamilyId, usize>) -> Vec<usize> {
        m.values().copied().collect()
    }

    #[test]
    fn ratio_exact_proportions() {
        let b = family_budgets(&census(&[(1, 300), (2, 700)]), 100, Budgeting::Ratio);
        assert_eq!(values(&b), vec![30, 70]);
        let b = family_budgets(&census(&[(1, 100), (2, 900)]), 10, Budgeting::Ratio);
        assert_eq!(values(&b), vec![1, 9]);
    }

    #[test]
    fn uniform_even_split() {
        let b = family_budgets(&census(&[(1, 1), (2, 1), (3, 1), (4, 1)]), 100, Budgeting::Uniform);
        assert_eq!(values(&b), vec![25; 4]);
    }

    #[test]
    fn ratio_largest_remainder_by_hand() {
        // quotas 1.4, 2.1, 3.5 -> floors 1, 2, 3; one slot left, largest remainder is c
        let b = family_budgets(&census(&[(1, 2), (2, 3), (3, 5)]), 7, Budgeting::Ratio);
        assert_eq!(values(&b), vec![1, 2, 4]);
    }

    #[test]
    fn uniform_remainder_goes_to_largest_families() {
        let b = family_budgets(&census(&[(1, 5), (2, 50), (3, 20)]), 8, Budgeting::Uniform);
        assert_eq!(values(&b), vec![2, 3, 3]);
    }

    #[test]
    fn unknown_family_gets_zero() {
        assert_eq!(family_budget(&census(&[(1, 5)]), FamilyId(2), 10, Budgeting::Ratio), 0);
        assert!(family_budgets(&FamilyCensus::new(), 10, Budgeting::Uniform).is_empty());
    }

    #[test]
    fn share_split_examples() {
        assert_eq!(split_share(100, 0.5), (50, 50));
        assert_eq!(split_share(100, 0.9), (90, 10));
        assert_eq!(split_share(10, 0.5), (5, 5));
        assert_eq!(split_share(5, 0.5), (3, 2));
        assert_eq!(split_share(100, 0.29), (29, 71));
        assert_eq!(split_share(7, 0.0), (0, 7));
        assert_eq!(split_share(7, 1.0), (7, 0));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn budgets_sum_to_total(
                counts in prop::collection::vec(1usize..500, 1..25),
                total in 0usize..5000,
                uniform in any::<bool>(),
            ) {
                let c = FamilyCensus::from_counts(counts.iter().enumerate().map(|(i, &n)| (FamilyId(i as u32), n)));
                let mode = if uniform { Budgeting::Uniform } else { Budgeting::Ratio };
                let b = family_budgets(&c, total, mode);
                prop_assert_eq!(b.values().sum::<usize>(), total);
                if uniform {
                    let (lo, hi) = (b.values().min().unwrap(), b.values().max().unwrap());
                    prop_assert!(hi - lo <= 1);
                }
            }

            #[test]
            fn share_split_sums(total in 0usize..100_000, share in 0.0f64..=1.0) {
                let (a, b) = split_share(total, share);
                prop_assert_eq!(a + b, total);
                prop_assert!((a as f64 - share * total as f64).abs() <= 0.5 + 1e-9);
            }
        }
    }
}
