//! Synthetic follow graphs with known latent SES.
//!
//! Users and brands get standard-normal positions `s`. A user follows a brand
//! with probability `logistic(β₀ + a_u + q_b − β₁·d(s_u, s_b))`, where
//! `d` is squared (default) or absolute distance and `a_u`, `q_b` are
//! activity and popularity offsets. Every draw comes from a counter-based
//! stream keyed by the entity index, so output does not depend on the
//! number of threads.

use std::fs;
use std::path::Path;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ca::EntityKind;
use crate::ingest::{BrandCatalog, BrandEntry, CsvOptions, Domain, EdgeStore, UserProfile, UserProfileStore};
use crate::score::ScoreTable;
use crate::stats::{spearman, CorrelationResult, StatsError, TitleEntry, TitleLexicon};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("expected {0:.3} edges per user; need at least 1")]
    DegenerateParams(f64),
    #[error("estimates cover {covered} of {total} entities (< 90%)")]
    InsufficientCoverage { covered: usize, total: usize },
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SynthError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProximityLink {
    Quadratic,
    Absolute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TitlePlanting {
    /// Share of users whose description names a job title.
    pub rate: f64,
    /// Noise (in latent sd units) between a user's SES and their title's SES.
    pub noise: f64,
    /// Share of users given a decoy phrase that the lexicon excludes.
    pub decoy_rate: f64,
}

impl Default for TitlePlanting {
    fn default() -> Self {
        TitlePlanting {
            rate: 0.1,
            noise: 0.5,
            decoy_rate: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthParams {
    pub n_users: usize,
    pub n_brands: usize,
    /// Probability of each domain, in [`Domain::ALL`] order.
    pub domain_probs: [f64; 6],
    pub base_rate: f64,
    pub proximity_weight: f64,
    pub popularity_spread: f64,
    pub activity_spread: f64,
    pub link: ProximityLink,
    pub titles: Option<TitlePlanting>,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            n_users: 20_000,
            n_brands: 150,
            domain_probs: [1.0 / 6.0; 6],
            base_rate: -2.2,
            proximity_weight: 1.5,
            popularity_spread: 0.5,
            activity_spread: 0.5,
            link: ProximityLink::Quadratic,
            titles: Some(TitlePlanting::default()),
            seed: 7,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SynthError::InvalidParams(m.into()));
        if self.n_users < 10 {
            return bad("n_users must be at least 10");
        }
        if self.n_brands < 6 {
            return bad("n_brands must be at least 6 (one per domain)");
        }
        if self.proximity_weight.is_nan() || self.proximity_weight < 0.0 {
            return bad("proximity_weight must be nonnegative");
        }
        if !(self.popularity_spread >= 0.0 && self.activity_spread >= 0.0) {
            return bad("spreads must be nonnegative");
        }
        if self.domain_probs.iter().any(|p| p.is_nan() || *p < 0.0) || self.domain_probs.iter().sum::<f64>() <= 0.0 {
            return bad("domain_probs must be nonnegative with positive sum");
        }
        Ok(())
    }

    fn distance(&self, a: f64, b: f64) -> f64 {
        match self.link {
            ProximityLink::Quadratic => (a - b).powi(2),
            ProximityLink::Absolute => (a - b).abs(),
        }
    }

    /// Follow probability for given latent positions and offsets.
    pub fn follow_probability(&self, s_user: f64, s_brand: f64, activity: f64, popularity: f64) -> f64 {
        let eta = self.base_rate + activity + popularity - self.proximity_weight * self.distance(s_user, s_brand);
        1.0 / (1.0 + (-eta).exp())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub user_ids: Vec<String>,
    pub user_ses: Vec<f64>,
    pub user_activity: Vec<f64>,
    pub brand_ids: Vec<String>,
    pub brand_ses: Vec<f64>,
    pub brand_popularity: Vec<f64>,
    /// Users redrawn because they followed nothing.
    pub resampled_users: usize,
    /// Σ of follow probabilities over the accepted users and all brands.
    pub expected_edges: f64,
}

#[derive(Debug)]
pub struct SynthData {
    pub edges: EdgeStore,
    pub catalog: BrandCatalog,
    pub profiles: UserProfileStore,
    pub truth: SynthTruth,
    pub lexicon: Option<TitleLexicon>,
}

const STREAM_BRAND: u64 = 1;
const STREAM_USER: u64 = 2;
const STREAM_PROFILE: u64 = 3;

fn stream(seed: u64, kind: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(kind);
    rng.set_word_pos(index as u128 * (1 << 40));
    rng
}

/// Job titles in increasing latent SES order.
pub const TITLES: [&str; 12] = [
    "cashier",
    "janitor",
    "waiter",
    "truck driver",
    "plumber",
    "electrician",
    "nurse",
    "teacher",
    "accountant",
    "engineer",
    "lawyer",
    "surgeon",
];

/// Latent position, salary and class of the planted titles. Salary rises and
/// class number falls with latent SES.
pub fn title_lexicon() -> (TitleLexicon, Vec<f64>) {
    let n = TITLES.len();
    let normal = statrs::distribution::Normal::new(0.0, 1.0).expect("unit normal");
    let mut centers = Vec::with_capacity(n);
    let mut entries = Vec::with_capacity(n);
    for (i, t) in TITLES.iter().enumerate() {
        let z = statrs::distribution::ContinuousCDF::inverse_cdf(&normal, (i as f64 + 0.5) / n as f64);
        centers.push(z);
        entries.push(TitleEntry {
            title: t.to_string(),
            class: 9 - (i * 9 / n) as u8,
            mean_salary_usd: (25_000.0 * (0.45 * (z + 3.0)).exp()).round(),
            exclusion_patterns: vec![format!("{t} simulator")],
        });
    }
    (TitleLexicon::new(entries).expect("valid built-in lexicon"), centers)
}

struct UserDraw {
    ses: f64,
    activity: f64,
    follows: Vec<u32>,
    expected: f64,
    redraws: usize,
}

pub fn generate(params: &SynthParams) -> Result<SynthData> {
    params.validate()?;
    let nb = params.n_brands;

    // brands: first six cover each domain once, the rest are drawn
    let mut brand_rng = stream(params.seed, STREAM_BRAND, 0);
    let pop = Normal::new(0.0, params.popularity_spread).expect("finite sd");
    let brand_ses: Vec<f64> = (0..nb).map(|_| StandardNormal.sample(&mut brand_rng)).collect();
    let brand_pop: Vec<f64> = (0..nb).map(|_| pop.sample(&mut brand_rng)).collect();
    let total_p: f64 = params.domain_probs.iter().sum();
    let domains: Vec<Domain> = (0..nb)
        .map(|b| {
            if b < 6 {
                return Domain::ALL[b];
            }
            let mut x = brand_rng.random::<f64>() * total_p;
            for (d, p) in Domain::ALL.iter().zip(params.domain_probs) {
                if x < p {
                    return *d;
                }
                x -= p;
            }
            Domain::TvShows
        })
        .collect();

    let act = Normal::new(0.0, params.activity_spread).expect("finite sd");
    let draws: Vec<UserDraw> = (0..params.n_users as u64)
        .into_par_iter()
        .map(|u| {
            let mut rng = stream(params.seed, STREAM_USER, u);
            let mut redraws = 0;
            loop {
                let ses: f64 = StandardNormal.sample(&mut rng);
                let activity = act.sample(&mut rng);
                let mut follows = Vec::new();
                let mut expected = 0.0;
                for b in 0..nb {
                    let p = params.follow_probability(ses, brand_ses[b], activity, brand_pop[b]);
                    expected += p;
                    if rng.random::<f64>() < p {
                        follows.push(b as u32);
                    }
                }
                if !follows.is_empty() {
                    return UserDraw {
                        ses,
                        activity,
                        follows,
                        expected,
                        redraws,
                    };
                }
                redraws += 1;
            }
        })
        .collect();

    let expected_edges: f64 = draws.iter().map(|d| d.expected).sum();
    let per_user = expected_edges / params.n_users as f64;
    if per_user < 1.0 {
        return Err(SynthError::DegenerateParams(per_user));
    }

    let user_ids: Vec<String> = (0..params.n_users).map(|u| format!("u{u:07}")).collect();
    let brand_ids: Vec<String> = (0..nb).map(|b| format!("b{b:04}")).collect();
    let mut followers = vec![0u64; nb];
    for d in &draws {
        for &b in &d.follows {
            followers[b as usize] += 1;
        }
    }
    let catalog = BrandCatalog::from_entries(
        (0..nb)
            .map(|b| BrandEntry {
                brand_id: brand_ids[b].clone(),
                screen_name: format!("{}_{b}", domains[b].as_str()),
                domain: domains[b],
                follower_count_at_selection: followers[b],
            })
            .collect(),
    )
    .expect("unique generated ids");

    let bids = &brand_ids;
    let pairs = draws
        .iter()
        .zip(&user_ids)
        .flat_map(|(d, u)| d.follows.iter().map(move |&b| (u.as_str(), bids[b as usize].as_str())));
    let edges = EdgeStore::from_pairs(pairs, &catalog).expect("every user follows a brand");

    let (lexicon, centers) = title_lexicon();
    let profiles = make_profiles(params, &user_ids, &draws, &centers);
    let profiles = UserProfileStore::from_profiles(profiles).expect("unique generated ids");

    let truth = SynthTruth {
        user_ids,
        user_ses: draws.iter().map(|d| d.ses).collect(),
        user_activity: draws.iter().map(|d| d.activity).collect(),
        brand_ids,
        brand_ses,
        brand_popularity: brand_pop,
        resampled_users: draws.iter().filter(|d| d.redraws > 0).count(),
        expected_edges,
    };
    Ok(SynthData {
        edges,
        catalog,
        profiles,
        truth,
        lexicon: params.titles.as_ref().map(|_| lexicon),
    })
}

const PLACES: [&str; 6] = ["Ohio", "Texas", "Brooklyn", "Denver", "the Bay Area", "Atlanta"];
const HOBBIES: [&str; 6] = ["coffee", "dogs", "hiking", "football", "cooking", "movies"];

fn make_profiles(params: &SynthParams, ids: &[String], draws: &[UserDraw], centers: &[f64]) -> Vec<UserProfile> {
    let base = NaiveDate::from_ymd_opt(2020, 1, 1).expect("valid date");
    (0..ids.len())
        .into_par_iter()
        .map(|u| {
            let mut rng = stream(params.seed, STREAM_PROFILE, u as u64);
            let place = PLACES[rng.random_range(0..PLACES.len())];
            let hobby = HOBBIES[rng.random_range(0..HOBBIES.len())];
            let mut description = format!("Lover of {hobby}. {place}");
            if let Some(tp) = &params.titles {
                if rng.random::<f64>() < tp.rate {
                    let noisy = draws[u].ses + tp.noise * rng.sample::<f64, _>(StandardNormal);
                    let t = nearest(centers, noisy);
                    description = format!("Proud {} in {place}. Into {hobby}", TITLES[t]);
                } else if rng.random::<f64>() < tp.decoy_rate {
                    let t = rng.random_range(0..TITLES.len());
                    description = format!("{} simulator addict. {place}", TITLES[t]);
                }
            }
            UserProfile {
                user_id: ids[u].clone(),
                statuses_count: rng.random_range(100..50_000),
                followers_count: rng.random_range(25..5_000),
                last_active: base + chrono::Days::new(rng.random_range(0..150)),
                location_resolved: rng.random_bool(0.7).then(|| "US".to_string()),
                description,
            }
        })
        .collect()
}

fn nearest(centers: &[f64], x: f64) -> usize {
    let mut best = 0;
    for (i, c) in centers.iter().enumerate() {
        if (c - x).abs() < (centers[best] - x).abs() {
            best = i;
        }
    }
    best
}

impl SynthData {
    /// Writes brands.csv, edges.csv, users.csv, lexicon.csv (when titles are
    /// planted) and truth.csv into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let opts = CsvOptions::default();
        self.catalog.write(fs::File::create(dir.join("brands.csv"))?, &opts)?;
        self.edges.write(fs::File::create(dir.join("edges.csv"))?, &opts)?;
        self.profiles.write(fs::File::create(dir.join("users.csv"))?, &opts)?;
        if let Some(lex) = &self.lexicon {
            let mut w = csv::Writer::from_writer(fs::File::create(dir.join("lexicon.csv"))?);
            w.write_record(["title", "class", "mean_salary_usd", "exclusion_patterns"])
                .map_err(std::io::Error::from)?;
            for e in &lex.entries {
                w.write_record([
                    e.title.as_str(),
                    &e.class.to_string(),
                    &e.mean_salary_usd.to_string(),
                    &e.exclusion_patterns.join(";"),
                ])
                .map_err(std::io::Error::from)?;
            }
            w.flush()?;
        }
        self.truth.write_csv(&dir.join("truth.csv"))
    }
}

impl SynthTruth {
    /// `entity_kind,entity_id,latent_ses`
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(fs::File::create(path)?);
        w.write_record(["entity_kind", "entity_id", "latent_ses"]).map_err(std::io::Error::from)?;
        for (id, s) in self.user_ids.iter().zip(&self.user_ses) {
            w.write_record(["user", id.as_str(), &s.to_string()]).map_err(std::io::Error::from)?;
        }
        for (id, s) in self.brand_ids.iter().zip(&self.brand_ses) {
            w.write_record(["brand", id.as_str(), &s.to_string()]).map_err(std::io::Error::from)?;
        }
        Ok(w.flush()?)
    }

    /// Reads the `(ids, latent)` pairs of one entity kind from a truth CSV.
    pub fn read_csv(path: &Path, kind: EntityKind) -> Result<(Vec<String>, Vec<f64>)> {
        let mut rdr = csv::Reader::from_reader(fs::File::open(path)?);
        let (mut ids, mut vals) = (Vec::new(), Vec::new());
        for rec in rdr.records() {
            let rec = rec.map_err(std::io::Error::from)?;
            if rec.get(0) != Some(kind.as_str()) {
                continue;
            }
            let v = rec
                .get(2)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| SynthError::InvalidParams(format!("bad truth row {rec:?}")))?;
            ids.push(rec.get(1).unwrap_or_default().to_string());
            vals.push(v);
        }
        Ok((ids, vals))
    }

    pub fn latent(&self, kind: EntityKind) -> (&[String], &[f64]) {
        match kind {
            EntityKind::User => (&self.user_ids, &self.user_ses),
            EntityKind::Brand => (&self.brand_ids, &self.brand_ses),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryResult {
    /// `|ρ|` between estimates and latent positions.
    pub correlation: CorrelationResult,
    /// Sign of the raw ρ; CA polarity is arbitrary, so a negative sign only
    /// means the scale is reversed.
    pub orientation_sign: i8,
    pub covered: usize,
    pub total: usize,
}

/// Spearman agreement between estimated SES and latent truth.
pub fn evaluate_recovery(estimates: &ScoreTable, truth_ids: &[String], truth: &[f64]) -> Result<RecoveryResult> {
    let index = estimates.index();
    let (mut est, mut lat) = (Vec::new(), Vec::new());
    for (id, &s) in truth_ids.iter().zip(truth) {
        if let Some(&i) = index.get(id.as_str()) {
            est.push(estimates.entries[i].ses);
            lat.push(s);
        }
    }
    let (covered, total) = (est.len(), truth_ids.len());
    if covered * 10 < total * 9 {
        return Err(SynthError::InsufficientCoverage { covered, total });
    }
    let mut c = spearman(&est, &lat)?;
    let sign = if c.rho < 0.0 { -1 } else { 1 };
    c.rho = c.rho.abs();
    Ok(RecoveryResult {
        correlation: c,
        orientation_sign: sign,
        covered,
        total,
    })
}
