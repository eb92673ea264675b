//! Follow-graph fixtures and a brute-force filtering oracle working on
//! plain id strings.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sesmap_core::filter::FilterCriteria;
use sesmap_core::ingest::{BrandCatalog, BrandEntry, Domain, EdgeStore, UserProfile, UserProfileStore};

pub struct Fixture {
    pub catalog: BrandCatalog,
    pub pairs: Vec<(String, String)>,
    pub profiles: Vec<UserProfile>,
}

impl Fixture {
    pub fn edges(&self) -> EdgeStore {
        EdgeStore::from_pairs(self.pairs.iter().map(|(u, b)| (u.as_str(), b.as_str())), &self.catalog).unwrap()
    }

    pub fn profile_store(&self) -> UserProfileStore {
        UserProfileStore::from_profiles(self.profiles.clone()).unwrap()
    }
}

pub fn catalog_of(ids: &[(String, Domain)]) -> BrandCatalog {
    BrandCatalog::from_entries(
        ids.iter()
            .map(|(id, d)| BrandEntry {
                brand_id: id.clone(),
                screen_name: format!("@{id}"),
                domain: *d,
                follower_count_at_selection: 1000,
            })
            .collect(),
    )
    .unwrap()
}

fn date(s: &str) -> NaiveDate {
    s.parse().unwrap()
}

/// Random users around every threshold, plus a deletion chain in which each
/// removal pushes exactly one more user and brand below threshold.
pub fn adversarial(seed: u64, n_users: usize, chain: usize) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_brands = 300;
    let mut brands: Vec<(String, Domain)> = (0..n_brands)
        .map(|b| (format!("b{b}"), Domain::ALL[b % 6]))
        .collect();
    brands.extend((0..=chain).map(|k| (format!("chain{k}"), Domain::ALL[k % 6])));
    brands.extend((0..3).map(|h| (format!("hub{h}"), Domain::ALL[h])));
    let catalog = catalog_of(&brands);

    let mut pairs = Vec::new();
    let mut profiles = Vec::new();
    let statuses = [0u64, 99, 100, 101, 5000];
    let followers = [0u64, 24, 25, 26, 900];
    let dates = ["2019-12-31", "2020-01-01", "2020-01-02", "2020-05-30"];
    let locations = [None, Some("US"), Some("US"), Some("GB"), Some("DE")];
    let random_users = n_users - chain;
    for u in 0..random_users {
        let id = format!("u{u}");
        // heavy weight on degrees just around the threshold
        let deg = [3usize, 4, 5, 5, 5, 6, 6, 7, 9, 14][rng.random_range(0..10)];
        for _ in 0..deg {
            // skewed popularity leaves plenty of brands near the prune threshold
            let x: f64 = rng.random();
            let b = ((x * x * x) * n_brands as f64) as usize;
            pairs.push((id.clone(), format!("b{b}")));
        }
        if rng.random_bool(0.02) {
            continue;
        }
        let pick = |rng: &mut ChaCha8Rng, hi: usize| if rng.random_bool(0.85) { hi - 1 } else { rng.random_range(0..hi) };
        profiles.push(UserProfile {
            user_id: id,
            statuses_count: statuses[pick(&mut rng, statuses.len())],
            followers_count: followers[pick(&mut rng, followers.len())],
            last_active: date(dates[pick(&mut rng, dates.len())]),
            location_resolved: locations[rng.random_range(0..locations.len())].map(String::from),
            description: String::new(),
        });
    }
    for k in 0..chain {
        let id = format!("c{k}");
        for b in [format!("chain{k}"), format!("chain{}", k + 1)] {
            pairs.push((id.clone(), b));
        }
        for h in 0..3 {
            pairs.push((id.clone(), format!("hub{h}")));
        }
        profiles.push(UserProfile {
            user_id: id,
            statuses_count: 1000,
            followers_count: 1000,
            last_active: date("2020-03-01"),
            location_resolved: Some("US".into()),
            description: String::new(),
        });
    }
    // an unknown brand reference and a duplicate edge
    pairs.push(("u0".into(), "nosuchbrand".into()));
    if let Some(p) = pairs.first().cloned() {
        pairs.push(p);
    }
    Fixture {
        catalog,
        pairs,
        profiles,
    }
}

pub struct OracleResult {
    pub users: BTreeSet<String>,
    pub brands: BTreeSet<String>,
    pub edges: BTreeSet<(String, String)>,
    pub after_user_stages: BTreeSet<String>,
}

/// Row-by-row predicates, then naive repeated deletion to a fixed point.
pub fn oracle(fx: &Fixture, c: &FilterCriteria) -> OracleResult {
    let known: BTreeSet<&str> = fx.catalog.entries().iter().map(|e| e.brand_id.as_str()).collect();
    let edges: BTreeSet<(String, String)> = fx
        .pairs
        .iter()
        .filter(|(_, b)| known.contains(b.as_str()))
        .cloned()
        .collect();
    let mut deg: BTreeMap<&str, usize> = BTreeMap::new();
    for (u, _) in &edges {
        *deg.entry(u).or_default() += 1;
    }
    let profile: BTreeMap<&str, &UserProfile> = fx.profiles.iter().map(|p| (p.user_id.as_str(), p)).collect();
    let mut users: BTreeSet<String> = BTreeSet::new();
    for (u, d) in &deg {
        let ok = *d >= c.min_brands_per_user
            && profile.get(u).is_some_and(|p| {
                p.statuses_count >= c.min_statuses
                    && p.followers_count >= c.min_followers
                    && p.last_active >= c.active_since
                    && match (&c.restrict_country, &p.location_resolved) {
                        (Some(want), Some(have)) => want.eq_ignore_ascii_case(have),
                        _ => true,
                    }
            });
        if ok {
            users.insert(u.to_string());
        }
    }
    let after_user_stages = users.clone();
    let mut brands: BTreeSet<String> = edges
        .iter()
        .filter(|(u, _)| users.contains(u))
        .map(|(_, b)| b.clone())
        .collect();
    loop {
        let live = |e: &&(String, String)| users.contains(&e.0) && brands.contains(&e.1);
        let mut bcount: BTreeMap<&str, usize> = BTreeMap::new();
        for e in edges.iter().filter(live) {
            *bcount.entry(&e.1).or_default() += 1;
        }
        let new_brands: BTreeSet<String> = brands
            .iter()
            .filter(|b| bcount.get(b.as_str()).copied().unwrap_or(0) >= c.min_post_filter_brand_followers)
            .cloned()
            .collect();
        let mut ucount: BTreeMap<&str, usize> = BTreeMap::new();
        for e in edges.iter().filter(|e| users.contains(&e.0) && new_brands.contains(&e.1)) {
            *ucount.entry(&e.0).or_default() += 1;
        }
        let new_users: BTreeSet<String> = users
            .iter()
            .filter(|u| ucount.get(u.as_str()).copied().unwrap_or(0) >= c.min_brands_per_user.max(1))
            .cloned()
            .collect();
        let done = new_users == users && new_brands == brands;
        users = new_users;
        brands = new_brands;
        if done {
            break;
        }
    }
    let edges = edges
        .into_iter()
        .filter(|(u, b)| users.contains(u) && brands.contains(b))
        .collect();
    OracleResult {
        users,
        brands,
        edges,
        after_user_stages,
    }
}

pub fn criteria() -> FilterCriteria {
    FilterCriteria {
        active_since: date("2020-01-01"),
        ..FilterCriteria::default()
    }
}
