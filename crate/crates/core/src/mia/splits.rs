use std::collections::HashSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed};

/// Member and nonmember indices of one model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemberSplit {
    pub members: Vec<usize>,
    pub nonmembers: Vec<usize>,
}

impl MemberSplit {
    pub fn len(&self) -> usize {
        self.members.len() + self.nonmembers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Sizes of the member and nonmember sets as fractions of a half.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub members: f64,
    pub nonmembers: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            members: 0.5,
            nonmembers: 0.5,
        }
    }
}

/// Target and shadow data assignment over indices `0..m_total`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub seed: u64,
    pub m_total: usize,
    pub target_half: Vec<usize>,
    pub shadow_half: Vec<usize>,
    pub target: MemberSplit,
    pub shadows: Vec<MemberSplit>,
    /// Whether the shadow splits are pairwise disjoint.
    pub shadows_disjoint: bool,
}

/// Split `0..m_total` into disjoint target and shadow halves, then carve
/// member/nonmember sets out of each. Shadow splits are consecutive disjoint
/// chunks of the shadow half when they fit, otherwise independent random
/// subsets per shadow.
pub fn make_splits(
    m_total: usize,
    shadows: usize,
    fractions: SplitFractions,
    seed: u64,
) -> Result<SplitPlan> {
    if shadows < 1 {
        return Err(Error::Config("need at least one shadow model".into()));
    }
    let (fm, fn_) = (fractions.members, fractions.nonmembers);
    if !(fm > 0.0 && fn_ > 0.0 && fm + fn_ <= 1.0 + 1e-12) {
        return Err(Error::Config(format!(
            "member/nonmember fractions ({fm}, {fn_}) must be positive and sum to at most 1"
        )));
    }
    let half = m_total / 2;
    let n_mem = (fm * half as f64).floor() as usize;
    let n_non = (fn_ * half as f64).floor() as usize;
    if n_mem == 0 || n_non == 0 {
        return Err(Error::Config(format!(
            "{m_total} examples leave empty member or nonmember sets"
        )));
    }
    let mut all: Vec<usize> = (0..m_total).collect();
    all.shuffle(&mut rng_from_seed(derive_seed(seed, &[0])));
    let target_half = all[..half].to_vec();
    let shadow_half = all[half..2 * half].to_vec();
    let target = MemberSplit {
        members: target_half[..n_mem].to_vec(),
        nonmembers: target_half[n_mem..n_mem + n_non].to_vec(),
    };
    let per = n_mem + n_non;
    let disjoint = shadows * per <= half;
    let splits = (0..shadows)
        .map(|k| {
            let pool: Vec<usize> = if disjoint {
                shadow_half[k * per..(k + 1) * per].to_vec()
            } else {
                let mut p = shadow_half.clone();
                p.shuffle(&mut rng_from_seed(derive_seed(seed, &[1, k as u64])));
                p.truncate(per);
                p
            };
            MemberSplit {
                members: pool[..n_mem].to_vec(),
                nonmembers: pool[n_mem..].to_vec(),
            }
        })
        .collect();
    let plan = SplitPlan {
        seed,
        m_total,
        target_half,
        shadow_half,
        target,
        shadows: splits,
        shadows_disjoint: disjoint,
    };
    plan.validate()?;
    Ok(plan)
}

impl SplitPlan {
    /// Check every disjointness invariant.
    pub fn validate(&self) -> Result<()> {
        let th: HashSet<usize> = self.target_half.iter().copied().collect();
        let sh: HashSet<usize> = self.shadow_half.iter().copied().collect();
        let bad = |msg: &str| Err(Error::InvalidArgument(format!("split plan: {msg}")));
        if th.len() != self.target_half.len() || sh.len() != self.shadow_half.len() {
            return bad("duplicate index within a half");
        }
        if !th.is_disjoint(&sh) {
            return bad("target and shadow halves overlap");
        }
        if th.iter().chain(&sh).any(|&i| i >= self.m_total) {
            return bad("index out of range");
        }
        let check = |s: &MemberSplit, half: &HashSet<usize>| {
            let m: HashSet<usize> = s.members.iter().copied().collect();
            let n: HashSet<usize> = s.nonmembers.iter().copied().collect();
            m.len() == s.members.len()
                && n.len() == s.nonmembers.len()
                && m.is_disjoint(&n)
                && m.iter().chain(&n).all(|i| half.contains(i))
        };
        if !check(&self.target, &th) {
            return bad("target split inconsistent");
        }
        if !self.shadows.iter().all(|s| check(s, &sh)) {
            return bad("shadow split inconsistent");
        }
        if self.shadows_disjoint {
            let mut seen = HashSet::new();
            for s in &self.shadows {
                for &i in s.members.iter().chain(&s.nonmembers) {
                    if !seen.insert(i) {
                        return bad("shadow splits marked disjoint share an index");
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_plan() {
        let f = SplitFractions::default();
        assert_eq!(
            make_splits(100, 3, f, 5).unwrap(),
            make_splits(100, 3, f, 5).unwrap()
        );
        assert_ne!(
            make_splits(100, 3, f, 5).unwrap(),
            make_splits(100, 3, f, 6).unwrap()
        );
    }

    #[test]
    fn brute_force_set_check_on_small_plan() {
        let f = SplitFractions {
            members: 0.1,
            nonmembers: 0.1,
        };
        let plan = make_splits(100, 5, f, 9).unwrap();
        assert!(plan.shadows_disjoint);
        // halves partition 0..100
        let mut every: Vec<usize> = plan
            .target_half
            .iter()
            .chain(&plan.shadow_half)
            .copied()
            .collect();
        every.sort_unstable();
        assert_eq!(every, (0..100).collect::<Vec<_>>());
        for a in &plan.target_half {
            assert!(!plan.shadow_half.contains(a));
        }
        let t = &plan.target;
        for a in &t.members {
            assert!(!t.nonmembers.contains(a));
            assert!(plan.target_half.contains(a));
        }
        for (k, s) in plan.shadows.iter().enumerate() {
            assert_eq!((s.members.len(), s.nonmembers.len()), (5, 5));
            for a in s.members.iter().chain(&s.nonmembers) {
                assert!(plan.shadow_half.contains(a));
                for (j, o) in plan.shadows.iter().enumerate() {
                    if j != k {
                        assert!(!o.members.contains(a) && !o.nonmembers.contains(a));
                    }
                }
            }
        }
    }

    #[test]
    fn overlapping_shadows_when_data_is_short() {
        let plan = make_splits(100, 20, SplitFractions::default(), 1).unwrap();
        assert!(!plan.shadows_disjoint);
        assert_eq!(plan.shadows.len(), 20);
        assert!(plan
            .shadows
            .iter()
            .all(|s| s.members.len() == 25 && s.nonmembers.len() == 25));
        plan.validate().unwrap();
    }

    #[test]
    fn bad_arguments() {
        assert!(make_splits(100, 0, SplitFractions::default(), 1).is_err());
        assert!(make_splits(
            100,
            1,
            SplitFractions {
                members: 0.7,
                nonmembers: 0.7
            },
            1
        )
        .is_err());
        assert!(make_splits(3, 1, SplitFractions::default(), 1).is_err());
    }
}
