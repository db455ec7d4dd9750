use cvxfeas::{aggregate, angle_between, HalfspaceStore, HalfspaceTag, Origin, TaggedHalfspace, Vector, WorkingSetPolicy};
use cvxfeas_testkit::{gaussian_vector, rng, unit_vector};
use proptest::prelude::*;
use rand::Rng;

fn random_store(seed: u64, count: usize, n: usize, policy: WorkingSetPolicy) -> HalfspaceStore {
    let mut r = rng(seed);
    let mut store = HalfspaceStore::new(policy);
    let mut round = 0;
    let mut set = 0;
    for _ in 0..count {
        if r.gen_bool(0.6) {
            round += 1;
            set = 0;
        }
        let a = gaussian_vector(&mut r, n);
        store.push(TaggedHalfspace::new(a, r.gen_range(-1.0..1.0), HalfspaceTag::new(round, set)).unwrap()).unwrap();
        set += 1;
    }
    store
}

fn brute_force_removed(items: &[TaggedHalfspace], max_angle: f64) -> Vec<bool> {
    items
        .iter()
        .map(|old| {
            items.iter().any(|new| {
                new.tag().round > old.tag().round && angle_between(old.normal(), new.normal()).unwrap() <= max_angle
            })
        })
        .collect()
}

#[test]
fn pruning_matches_pairwise_scan() {
    for seed in 0..20 {
        let mut store = random_store(seed, 50, 3, WorkingSetPolicy::AllAccumulating);
        let before = store.items().to_vec();
        let removed = brute_force_removed(&before, 0.2);
        let count = store.prune_by_angle(0.2);
        let kept: Vec<HalfspaceTag> = before.iter().zip(&removed).filter(|(_, r)| !**r).map(|(h, _)| h.tag()).collect();
        assert_eq!(count, removed.iter().filter(|r| **r).count());
        assert_eq!(store.items().iter().map(|h| h.tag()).collect::<Vec<_>>(), kept);
    }
}

#[test]
fn pruning_with_many_close_normals() {
    // Unit normals clustered around one direction so that pruning is frequent.
    let mut r = rng(4);
    let base = unit_vector(&mut r, 3);
    let mut store = HalfspaceStore::new(WorkingSetPolicy::AllAccumulating);
    for round in 0..50 {
        let a = &base + gaussian_vector(&mut r, 3) * 0.15;
        store.push(TaggedHalfspace::new(a, 1.0, HalfspaceTag::new(round, 0)).unwrap()).unwrap();
    }
    let removed = brute_force_removed(store.items(), 0.2);
    let expected = removed.iter().filter(|r| **r).count();
    assert!(expected > 10);
    assert_eq!(store.prune_by_angle(0.2), expected);
    assert_eq!(store.latest_round(), Some(49));
}

#[test]
fn all_accumulating_is_nested_and_contains_best() {
    let mut store = HalfspaceStore::new(WorkingSetPolicy::AllAccumulating);
    let mut r = rng(8);
    let mut previous: Vec<HalfspaceTag> = Vec::new();
    for round in 0..10 {
        for set in 0..3 {
            store.push(TaggedHalfspace::new(gaussian_vector(&mut r, 2), 0.0, HalfspaceTag::new(round, set)).unwrap()).unwrap();
        }
        let ws: Vec<HalfspaceTag> = store.select_working_set(round, 2).unwrap().iter().map(|h| h.tag()).collect();
        assert!(previous.iter().all(|t| ws.contains(t)));
        assert!(ws.contains(&HalfspaceTag::new(round, 2)));
        previous = ws;
    }
}

proptest! {
    #[test]
    fn selection_is_subset_and_deterministic(seed in any::<u64>(), window in 0usize..6, angle in 0.01f64..1.0) {
        for policy in [
            WorkingSetPolicy::CurrentRoundOnly,
            WorkingSetPolicy::LastRounds { window },
            WorkingSetPolicy::AllAccumulating,
            WorkingSetPolicy::AnglePruned { max_angle: angle, window },
        ] {
            let store = random_store(seed, 30, 3, policy);
            let i = store.latest_round().unwrap();
            let l_star = store.items().iter().rev().find(|h| h.tag().round == i).map(|h| match h.tag().origin {
                Origin::Set(l) => l,
                Origin::Aggregate => 0,
            }).unwrap();
            let a = store.select_working_set(i, l_star).unwrap();
            let b = store.select_working_set(i, l_star).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert!(a.iter().all(|h| store.items().contains(h)));
            prop_assert!(a.iter().any(|h| h.tag().round == i));
        }
    }

    #[test]
    fn aggregate_is_conservative(seed in any::<u64>()) {
        let mut r = rng(seed);
        let n = r.gen_range(1..=4);
        let m = r.gen_range(1..=6);
        let center = gaussian_vector(&mut r, n);
        let hs: Vec<TaggedHalfspace> = (0..m)
            .map(|j| {
                let a = gaussian_vector(&mut r, n);
                let b = a.dot(&center) + r.gen_range(0.0..1.0);
                TaggedHalfspace::new(a, b, HalfspaceTag::new(0, j)).unwrap()
            })
            .collect();
        let w: Vec<f64> = (0..m).map(|_| r.gen_range(0.0..2.0)).collect();
        let Ok(agg) = aggregate(&hs, &w, HalfspaceTag { round: 0, origin: Origin::Aggregate }) else { return Ok(()) };
        for _ in 0..100 {
            let x: Vector = &center + gaussian_vector(&mut r, n) * 2.0;
            if hs.iter().all(|h| h.contains(&x, 0.0)) {
                prop_assert!(agg.normal().dot(&x) - agg.offset() <= 1e-12 * (1.0 + agg.offset().abs()));
            }
        }
    }

    #[test]
    fn pruning_only_enlarges_the_polyhedron(seed in any::<u64>()) {
        let mut store = random_store(seed, 30, 2, WorkingSetPolicy::AllAccumulating);
        let before = store.items().to_vec();
        store.prune_by_angle(0.3);
        let mut r = rng(seed ^ 1);
        for _ in 0..100 {
            let x = gaussian_vector(&mut r, 2) * 3.0;
            if before.iter().all(|h| h.contains(&x, 0.0)) {
                prop_assert!(store.items().iter().all(|h| h.contains(&x, 0.0)));
            }
        }
        let latest = before.iter().map(|h| h.tag().round).max().unwrap();
        let newest_before = before.iter().filter(|h| h.tag().round == latest).count();
        let newest_after = store.items().iter().filter(|h| h.tag().round == latest).count();
        prop_assert_eq!(newest_before, newest_after);
    }
}
