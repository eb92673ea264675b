//! User/brand filtering cascade and informative-subset selection.
//!
//! Stages run in a fixed order: brand count, profile presence, activity
//! (statuses, followers, recency), location, then brand pruning alternating
//! with user re-selection. A user failing several criteria is attributed to
//! the first stage it fails, so the audit counts always sum to the input.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{BrandCatalog, Domain, EdgeStore, UserProfileStore};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FilterError {
    #[error("no {0} survive filtering")]
    EmptyResult(Side),
    #[error("invalid criteria: {0}")]
    InvalidCriteria(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Users,
    Brands,
}

impl std::fmt::Display for Side {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Side::Users => "users",
            Side::Brands => "brands",
        })
    }
}

pub type Result<T> = std::result::Result<T, FilterError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterCriteria {
    pub min_brands_per_user: usize,
    pub min_statuses: u64,
    pub min_followers: u64,
    pub active_since: NaiveDate,
    pub restrict_country: Option<String>,
    pub min_post_filter_brand_followers: usize,
    pub min_informative_followers: usize,
    /// Run brand pruning and user re-selection once instead of to a fixed point.
    pub single_pass_prune: bool,
}

impl Default for FilterCriteria {
    fn default() -> Self {
        FilterCriteria {
            min_brands_per_user: 5,
            min_statuses: 100,
            min_followers: 25,
            active_since: NaiveDate::from_ymd_opt(2020, 1, 1).expect("valid date"),
            restrict_country: Some("US".into()),
            min_post_filter_brand_followers: 2,
            min_informative_followers: 1000,
            single_pass_prune: false,
        }
    }
}

impl FilterCriteria {
    pub fn validate(&self) -> Result<()> {
        if let Some(c) = &self.restrict_country {
            if c.is_empty() {
                return Err(FilterError::InvalidCriteria("restrict_country is empty".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    BrandCount,
    MissingProfile,
    Statuses,
    Followers,
    Recency,
    Location,
    BrandPrune,
    Reselect,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounts {
    pub stage: Stage,
    pub users_in: usize,
    pub users_out: usize,
    pub brands_in: usize,
    pub brands_out: usize,
    pub edges_in: usize,
    pub edges_out: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterAudit {
    pub users_in: usize,
    pub brands_in: usize,
    pub edges_in: usize,
    pub stages: Vec<StageCounts>,
    pub prune_iterations: usize,
}

impl FilterAudit {
    pub fn users_out(&self) -> usize {
        self.stages.last().map_or(self.users_in, |s| s.users_out)
    }

    pub fn excluded(&self, stage: Stage) -> usize {
        self.stages
            .iter()
            .filter(|s| s.stage == stage)
            .map(|s| s.users_in - s.users_out)
            .sum()
    }
}

/// Edge store restricted to surviving users and brands. Index maps are those
/// of the original store, so masks and indices stay comparable across stages.
#[derive(Debug, Clone)]
pub struct FilteredDataset {
    pub edges: EdgeStore,
    pub user_alive: Vec<bool>,
    pub brand_alive: Vec<bool>,
    pub audit: FilterAudit,
}

impl FilteredDataset {
    /// Wraps an edge store with every user and brand that has an edge alive.
    pub fn unfiltered(edges: EdgeStore) -> Self {
        let user_alive = edges.user_degrees().iter().map(|&d| d > 0).collect();
        let brand_alive = edges.brand_degrees().iter().map(|&d| d > 0).collect();
        let mut ds = FilteredDataset {
            edges,
            user_alive,
            brand_alive,
            audit: FilterAudit::default(),
        };
        ds.audit.users_in = ds.n_users();
        ds.audit.brands_in = ds.n_brands();
        ds.audit.edges_in = ds.edges.n_edges();
        ds
    }

    pub fn n_users(&self) -> usize {
        self.user_alive.iter().filter(|&&a| a).count()
    }

    pub fn n_brands(&self) -> usize {
        self.brand_alive.iter().filter(|&&a| a).count()
    }

    pub fn surviving_users(&self) -> Vec<u32> {
        alive_indices(&self.user_alive)
    }

    pub fn surviving_brands(&self) -> Vec<u32> {
        alive_indices(&self.brand_alive)
    }

    /// Drops edges of dead entities; brands left without followers die too.
    fn restrict(&mut self) {
        let (ua, ba) = (&self.user_alive, &self.brand_alive);
        self.edges.retain_in_place(|u, b| ua[u as usize] && ba[b as usize]);
        let bdeg = self.edges.brand_degrees();
        for (alive, d) in self.brand_alive.iter_mut().zip(bdeg) {
            *alive &= d > 0;
        }
    }

    fn record(&mut self, stage: Stage, users_in: usize, brands_in: usize, edges_in: usize) {
        self.restrict();
        let counts = StageCounts {
            stage,
            users_in,
            users_out: self.n_users(),
            brands_in,
            brands_out: self.n_brands(),
            edges_in,
            edges_out: self.edges.n_edges(),
        };
        self.audit.stages.push(counts);
    }

    /// Kills alive users failing `pred`, recording one audit stage.
    fn user_stage(&mut self, stage: Stage, mut pred: impl FnMut(u32) -> bool) {
        let (ui, bi, ei) = (self.n_users(), self.n_brands(), self.edges.n_edges());
        for u in 0..self.user_alive.len() {
            if self.user_alive[u] && !pred(u as u32) {
                self.user_alive[u] = false;
            }
        }
        self.record(stage, ui, bi, ei);
    }

    fn degrees(&self) -> (Vec<usize>, Vec<usize>) {
        (self.edges.user_degrees(), self.edges.brand_degrees())
    }
}

fn alive_indices(mask: &[bool]) -> Vec<u32> {
    mask.iter()
        .enumerate()
        .filter(|(_, &a)| a)
        .map(|(i, _)| i as u32)
        .collect()
}

/// Applies the per-user stages (brand count, profile, activity, location).
pub fn filter_users(
    edges: &EdgeStore,
    profiles: &UserProfileStore,
    criteria: &FilterCriteria,
) -> Result<FilteredDataset> {
    criteria.validate()?;
    let mut ds = FilteredDataset::unfiltered(edges.clone());

    let deg = ds.edges.user_degrees();
    ds.user_stage(Stage::BrandCount, |u| deg[u as usize] >= criteria.min_brands_per_user);

    let profile_of: Vec<_> = (0..edges.n_users() as u32)
        .map(|u| profiles.get(edges.users.token(u)))
        .collect();
    ds.user_stage(Stage::MissingProfile, |u| profile_of[u as usize].is_some());

    let prof = |u: u32| profile_of[u as usize].expect("profile checked");
    ds.user_stage(Stage::Statuses, |u| prof(u).statuses_count >= criteria.min_statuses);
    ds.user_stage(Stage::Followers, |u| prof(u).followers_count >= criteria.min_followers);
    ds.user_stage(Stage::Recency, |u| prof(u).last_active >= criteria.active_since);
    if let Some(country) = &criteria.restrict_country {
        // only positive evidence of a different country excludes a user
        ds.user_stage(Stage::Location, |u| match &prof(u).location_resolved {
            Some(loc) => loc.eq_ignore_ascii_case(country),
            None => true,
        });
    }

    if ds.n_users() == 0 {
        return Err(FilterError::EmptyResult(Side::Users));
    }
    Ok(ds)
}

/// Removes under-followed brands, then re-checks users' brand counts, until
/// neither step removes anything (or once, with `single_pass_prune`).
pub fn prune_brands_and_reselect(
    dataset: FilteredDataset,
    criteria: &FilterCriteria,
) -> Result<FilteredDataset> {
    let mut ds = dataset;
    let mut iterations = 0;
    loop {
        iterations += 1;
        let (ui, bi, ei) = (ds.n_users(), ds.n_brands(), ds.edges.n_edges());
        let (_, bdeg) = ds.degrees();
        let mut changed = false;
        for (b, alive) in ds.brand_alive.iter_mut().enumerate() {
            if *alive && bdeg[b] < criteria.min_post_filter_brand_followers {
                *alive = false;
                changed = true;
            }
        }
        ds.record(Stage::BrandPrune, ui, bi, ei);

        let (ui, bi, ei) = (ds.n_users(), ds.n_brands(), ds.edges.n_edges());
        let (udeg, _) = ds.degrees();
        for (u, alive) in ds.user_alive.iter_mut().enumerate() {
            if *alive && udeg[u] < criteria.min_brands_per_user.max(1) {
                *alive = false;
                changed = true;
            }
        }
        ds.record(Stage::Reselect, ui, bi, ei);

        if !changed || criteria.single_pass_prune {
            break;
        }
    }
    ds.audit.prune_iterations += iterations;
    if ds.n_users() == 0 {
        return Err(FilterError::EmptyResult(Side::Users));
    }
    if ds.n_brands() == 0 {
        return Err(FilterError::EmptyResult(Side::Brands));
    }
    Ok(ds)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InformativeSets {
    /// Sorted user indices.
    pub users: Vec<u32>,
    /// Sorted brand indices.
    pub brands: Vec<u32>,
}

/// Users covering all six domains, and brands with enough such followers.
pub fn select_informative(
    dataset: &FilteredDataset,
    catalog: &BrandCatalog,
    criteria: &FilterCriteria,
) -> Result<InformativeSets> {
    let es = &dataset.edges;
    let brand_bit: Vec<u8> = (0..es.n_brands() as u32)
        .map(|b| es.brand_domain(b, catalog).bit())
        .collect();
    let mut coverage = vec![0u8; es.n_users()];
    for &(u, b) in es.edges() {
        coverage[u as usize] |= brand_bit[b as usize];
    }
    let informative_user: Vec<bool> = coverage
        .iter()
        .zip(&dataset.user_alive)
        .map(|(&m, &alive)| alive && m == Domain::FULL_MASK)
        .collect();
    let users = alive_indices(&informative_user);
    if users.is_empty() {
        return Err(FilterError::EmptyResult(Side::Users));
    }

    let mut followers = vec![0usize; es.n_brands()];
    for &(u, b) in es.edges() {
        if informative_user[u as usize] {
            followers[b as usize] += 1;
        }
    }
    let need = criteria.min_informative_followers.max(1);
    let brands: Vec<u32> = (0..es.n_brands())
        .filter(|&b| dataset.brand_alive[b] && followers[b] >= need)
        .map(|b| b as u32)
        .collect();
    if brands.is_empty() {
        return Err(FilterError::EmptyResult(Side::Brands));
    }
    Ok(InformativeSets { users, brands })
}
