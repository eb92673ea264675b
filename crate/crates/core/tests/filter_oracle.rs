mod common;

use std::collections::BTreeSet;

use common::fixtures::{adversarial, catalog_of, criteria, oracle, Fixture};
use proptest::prelude::*;
use sesmap_core::filter::{
    filter_users, prune_brands_and_reselect, select_informative, FilterCriteria, FilteredDataset, Stage,
};
use sesmap_core::ingest::{Domain, UserProfile};

fn run(fx: &Fixture, c: &FilterCriteria) -> FilteredDataset {
    let ds = filter_users(&fx.edges(), &fx.profile_store(), c).unwrap();
    prune_brands_and_reselect(ds, c).unwrap()
}

fn user_ids(ds: &FilteredDataset) -> BTreeSet<String> {
    ds.surviving_users().iter().map(|&u| ds.edges.users.token(u).to_string()).collect()
}

fn brand_ids(ds: &FilteredDataset) -> BTreeSet<String> {
    ds.surviving_brands().iter().map(|&b| ds.edges.brands.token(b).to_string()).collect()
}

fn check_audit(ds: &FilteredDataset) {
    let a = &ds.audit;
    let mut users = a.users_in;
    let mut brands = a.brands_in;
    let mut edges = a.edges_in;
    for s in &a.stages {
        assert_eq!((s.users_in, s.brands_in, s.edges_in), (users, brands, edges), "{:?}", s.stage);
        assert!(s.users_out <= s.users_in && s.brands_out <= s.brands_in && s.edges_out <= s.edges_in);
        users = s.users_out;
        brands = s.brands_out;
        edges = s.edges_out;
    }
    let excluded: usize = a.stages.iter().map(|s| s.users_in - s.users_out).sum();
    assert_eq!(a.users_in, a.users_out() + excluded);
    assert_eq!(users, ds.n_users());
    assert_eq!(edges, ds.edges.n_edges());
}

#[test]
fn adversarial_cascade_matches_iterative_deletion() {
    let fx = adversarial(11, 10_000, 400);
    let c = criteria();
    let ds = run(&fx, &c);
    let o = oracle(&fx, &c);
    assert_eq!(user_ids(&ds), o.users);
    assert_eq!(brand_ids(&ds), o.brands);
    assert_eq!(ds.edges.token_pairs(), o.edges);
    check_audit(&ds);
    // the chain unravels from both ends, one link per round
    assert!(ds.audit.prune_iterations >= 200, "{}", ds.audit.prune_iterations);
    assert!(!o.users.iter().any(|u| u.starts_with('c')));
}

#[test]
fn user_stage_survivors_match_predicates() {
    let fx = adversarial(3, 2000, 0);
    let c = criteria();
    let ds = filter_users(&fx.edges(), &fx.profile_store(), &c).unwrap();
    assert_eq!(user_ids(&ds), oracle(&fx, &c).after_user_stages);
    check_audit(&ds);
    let stages: Vec<Stage> = ds.audit.stages.iter().map(|s| s.stage).collect();
    assert_eq!(
        stages,
        [Stage::BrandCount, Stage::MissingProfile, Stage::Statuses, Stage::Followers, Stage::Recency, Stage::Location]
    );
}

#[test]
fn single_pass_stops_after_one_round() {
    let fx = adversarial(5, 1000, 50);
    let c = FilterCriteria {
        single_pass_prune: true,
        ..criteria()
    };
    let ds = run(&fx, &c);
    assert_eq!(ds.audit.prune_iterations, 1);
    // chain users lose their end links only
    let full = run(&fx, &criteria());
    assert!(user_ids(&full).is_subset(&user_ids(&ds)));
}

fn informative_fixture() -> Fixture {
    let mut brands = Vec::new();
    for d in Domain::ALL {
        for tag in ["a", "b", "c"] {
            brands.push((format!("{d}_{tag}"), d));
        }
    }
    let catalog = catalog_of(&brands);
    let mut pairs = Vec::new();
    for i in 0..40 {
        let u = format!("inf{i}");
        for d in Domain::ALL {
            let tag = if i % 2 == 0 { "a" } else { "b" };
            pairs.push((u.clone(), format!("{d}_{tag}")));
            if i < 5 {
                pairs.push((u.clone(), format!("{d}_c")));
            }
        }
    }
    for i in 0..50 {
        let u = format!("five{i}");
        for d in &Domain::ALL[..5] {
            for tag in ["a", "b", "c"] {
                pairs.push((u.clone(), format!("{d}_{tag}")));
            }
        }
    }
    let profiles = pairs
        .iter()
        .map(|(u, _)| u.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .map(|u| UserProfile {
            user_id: u,
            statuses_count: 500,
            followers_count: 500,
            last_active: "2020-02-01".parse().unwrap(),
            location_resolved: None,
            description: String::new(),
        })
        .collect();
    Fixture {
        catalog,
        pairs,
        profiles,
    }
}

#[test]
fn informative_subset_exact() {
    let fx = informative_fixture();
    let c = FilterCriteria {
        min_informative_followers: 10,
        ..criteria()
    };
    let ds = run(&fx, &c);
    let sets = select_informative(&ds, &fx.catalog, &c).unwrap();
    let users: BTreeSet<String> = sets.users.iter().map(|&u| ds.edges.users.token(u).to_string()).collect();
    let brands: BTreeSet<String> = sets.brands.iter().map(|&b| ds.edges.brands.token(b).to_string()).collect();
    let want_users: BTreeSet<String> = (0..40).map(|i| format!("inf{i}")).collect();
    let want_brands: BTreeSet<String> = Domain::ALL
        .iter()
        .flat_map(|d| [format!("{d}_a"), format!("{d}_b")])
        .collect();
    assert_eq!(users, want_users);
    assert_eq!(brands, want_brands);

    // threshold 0 keeps every brand with an informative follower
    let c0 = FilterCriteria {
        min_informative_followers: 0,
        ..c
    };
    let sets = select_informative(&ds, &fx.catalog, &c0).unwrap();
    assert_eq!(sets.brands.len(), 18);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn raising_thresholds_never_adds_survivors(
        seed in any::<u64>(),
        which in 0usize..5,
        bump in 1u64..40,
    ) {
        let fx = adversarial(seed, 400, 20);
        let base = criteria();
        let mut hi = base.clone();
        match which {
            0 => hi.min_brands_per_user += bump as usize % 4,
            1 => hi.min_statuses += bump,
            2 => hi.min_followers += bump,
            3 => hi.active_since = hi.active_since + chrono::Days::new(bump),
            _ => hi.min_post_filter_brand_followers += bump as usize % 4,
        }
        let lo_ds = run(&fx, &base);
        let hi_users = filter_users(&fx.edges(), &fx.profile_store(), &hi)
            .and_then(|d| prune_brands_and_reselect(d, &hi))
            .map(|d| (user_ids(&d), brand_ids(&d)))
            .unwrap_or_default();
        prop_assert!(hi_users.0.is_subset(&user_ids(&lo_ds)));
        prop_assert!(hi_users.1.is_subset(&brand_ids(&lo_ds)));
    }

    #[test]
    fn pruning_is_idempotent(seed in any::<u64>()) {
        let fx = adversarial(seed, 400, 15);
        let c = criteria();
        let once = run(&fx, &c);
        let twice = prune_brands_and_reselect(once.clone(), &c).unwrap();
        prop_assert_eq!(user_ids(&once), user_ids(&twice));
        prop_assert_eq!(brand_ids(&once), brand_ids(&twice));
        prop_assert_eq!(once.edges.token_pairs(), twice.edges.token_pairs());
        check_audit(&once);
        let o = oracle(&fx, &c);
        prop_assert_eq!(user_ids(&once), o.users);
    }
}
