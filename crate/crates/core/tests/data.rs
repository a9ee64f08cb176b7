use std::collections::HashSet;

use dlda::data::{inject_profiles, sample_attacker_view, split_dataset, Dataset, SyntheticSpec};
use dlda::projection::{FakeProfile, FakeProfileSet, Provenance};
use dlda::runlog::RunLog;
use proptest::prelude::*;

fn dataset() -> impl Strategy<Value = Dataset> {
    (2usize..15, 2usize..12, prop::collection::vec((0usize..15, 0usize..12), 10..120)).prop_filter_map(
        "needs ten distinct interactions",
        |(m, n, raw)| {
            let pairs: Vec<(usize, usize)> =
                raw.into_iter().map(|(u, i)| (u % m, i % n)).collect::<HashSet<_>>().into_iter().collect();
            if pairs.len() < 10 {
                return None;
            }
            let mut pairs = pairs;
            pairs.sort_unstable();
            Dataset::from_pairs(m, n, &pairs).ok()
        },
    )
}

fn as_set(d: &Dataset) -> HashSet<(usize, usize)> {
    d.interactions().iter().copied().collect()
}

proptest! {
    #[test]
    fn split_partitions_the_interactions(d in dataset(), seed in any::<u64>()) {
        let s = split_dataset(&d, seed, &mut RunLog::new()).unwrap();
        let (tr, va, te) = (as_set(&s.train), as_set(&s.validation), as_set(&s.test));
        prop_assert!(tr.is_disjoint(&va) && tr.is_disjoint(&te) && va.is_disjoint(&te));
        prop_assert_eq!(tr.len() + va.len() + te.len(), d.len());
        let union: HashSet<_> = tr.union(&va).chain(&te).copied().collect();
        prop_assert_eq!(union, as_set(&d));
        let n = d.len() as f64;
        let moved = s.reassigned.len();
        prop_assert_eq!(s.train.len(), (0.8 * n).round() as usize + moved);
        prop_assert!(s.validation.len() <= (0.1 * n).round() as usize);
    }

    #[test]
    fn split_is_reproducible(d in dataset(), seed in any::<u64>()) {
        let a = split_dataset(&d, seed, &mut RunLog::new()).unwrap();
        let b = split_dataset(&d, seed, &mut RunLog::new()).unwrap();
        prop_assert_eq!(a.train.interactions(), b.train.interactions());
        prop_assert_eq!(a.test.interactions(), b.test.interactions());
    }

    #[test]
    fn attacker_view_is_a_subset(d in dataset(), seed in any::<u64>(), f in 0.05..1.0f64) {
        let v = sample_attacker_view(&d, f, seed).unwrap();
        prop_assert!(as_set(&v).is_subset(&as_set(&d)));
        prop_assert_eq!(v.len(), (f * d.len() as f64).round() as usize);
        prop_assert_eq!(v.user_count(), d.user_count());
    }

    #[test]
    fn injection_preserves_real_rows(d in dataset(), rows in prop::collection::vec(prop::collection::btree_set(0usize..12, 1..4), 0..4)) {
        let n = d.item_count();
        let profiles: Vec<FakeProfile> = rows
            .into_iter()
            .map(|r| FakeProfile {
                items: r.into_iter().map(|i| i % n).collect::<std::collections::BTreeSet<_>>().into_iter().collect(),
                provenance: Provenance::heuristic(0),
            })
            .collect();
        let fakes = FakeProfileSet::new(n, profiles);
        let p = inject_profiles(&d, &fakes, n).unwrap();
        let flat = p.to_dataset().unwrap();
        let m = d.user_count();
        let real: HashSet<_> = flat.interactions().iter().copied().filter(|&(u, _)| u < m).collect();
        prop_assert_eq!(real, as_set(&d));
        prop_assert_eq!(flat.user_count(), m + fakes.len());
        for (k, f) in fakes.profiles().iter().enumerate() {
            let got: Vec<usize> = flat.user_items()[m + k].clone();
            prop_assert_eq!(&got, &f.items);
        }
    }
}

#[test]
fn rows_over_the_cap_are_rejected() {
    let d = Dataset::from_pairs(2, 4, &[(0, 0), (1, 1)]).unwrap();
    let fakes = FakeProfileSet::new(
        4,
        vec![FakeProfile {
            items: vec![0, 1, 2],
            provenance: Provenance::heuristic(0),
        }],
    );
    assert!(inject_profiles(&d, &fakes, 2).is_err());
    assert!(inject_profiles(&d, &fakes, 3).is_ok());
}

#[test]
fn synthetic_blocks_dominate_preferences() {
    let spec = SyntheticSpec::default();
    let d = spec.generate().unwrap();
    assert_eq!((d.user_count(), d.item_count()), (500, 200));
    let inside = d
        .interactions()
        .iter()
        .filter(|&&(u, i)| spec.block_of_user(u) == spec.block_of_item(i))
        .count();
    assert!(inside as f64 / d.len() as f64 > 0.8);
    assert_eq!(d.fingerprint(), spec.generate().unwrap().fingerprint());
}
