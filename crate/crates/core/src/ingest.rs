//! Loading of the three input tables: brand catalog, follow edges and user
//! profiles. String identifiers are interned into dense `u32` indices.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("duplicate brand id `{id}` at line {line}")]
    DuplicateBrandId { id: String, line: u64 },
    #[error("unknown domain `{label}` at line {line}")]
    UnknownDomain { label: String, line: u64 },
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("duplicate user id `{id}` at line {line}")]
    DuplicateUserId { id: String, line: u64 },
    #[error("no valid edges in input")]
    EmptyInput,
}

pub type Result<T> = std::result::Result<T, IngestError>;

/// CSV dialect shared by all loaders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvOptions {
    pub delimiter: u8,
}

impl Default for CsvOptions {
    fn default() -> Self {
        CsvOptions { delimiter: b',' }
    }
}

impl CsvOptions {
    fn reader<R: Read>(&self, rdr: R) -> csv::Reader<R> {
        csv::ReaderBuilder::new()
            .delimiter(self.delimiter)
            .has_headers(true)
            .flexible(true)
            .trim(csv::Trim::Fields)
            .from_reader(rdr)
    }

    fn writer<W: Write>(&self, w: W) -> csv::Writer<W> {
        csv::WriterBuilder::new().delimiter(self.delimiter).from_writer(w)
    }
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn record_line(rec: &csv::StringRecord) -> u64 {
    rec.position().map(|p| p.line()).unwrap_or(0)
}

fn csv_err(err: csv::Error) -> IngestError {
    let line = err.position().map(|p| p.line()).unwrap_or(0);
    match err.into_kind() {
        csv::ErrorKind::Io(source) => IngestError::Io {
            path: "<stream>".into(),
            source,
        },
        kind => IngestError::MalformedRow {
            line,
            reason: format!("{kind:?}"),
        },
    }
}

fn field<'a>(rec: &'a csv::StringRecord, idx: usize, name: &str) -> Result<&'a str> {
    rec.get(idx).ok_or_else(|| IngestError::MalformedRow {
        line: record_line(rec),
        reason: format!("missing column `{name}`"),
    })
}

fn nonneg(rec: &csv::StringRecord, idx: usize, name: &str) -> Result<u64> {
    let raw = field(rec, idx, name)?;
    raw.parse::<u64>().map_err(|_| IngestError::MalformedRow {
        line: record_line(rec),
        reason: format!("`{name}` must be a nonnegative integer, got `{raw}`"),
    })
}

fn nonempty<'a>(rec: &'a csv::StringRecord, idx: usize, name: &str) -> Result<&'a str> {
    let v = field(rec, idx, name)?;
    if v.is_empty() {
        return Err(IngestError::MalformedRow {
            line: record_line(rec),
            reason: format!("empty `{name}`"),
        });
    }
    Ok(v)
}

/// The six brand domains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    SupermarketsDepartment,
    ClothingSpecialty,
    ChainRestaurants,
    News,
    Sports,
    TvShows,
}

impl Domain {
    pub const ALL: [Domain; 6] = [
        Domain::SupermarketsDepartment,
        Domain::ClothingSpecialty,
        Domain::ChainRestaurants,
        Domain::News,
        Domain::Sports,
        Domain::TvShows,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::SupermarketsDepartment => "supermarkets_department",
            Domain::ClothingSpecialty => "clothing_specialty",
            Domain::ChainRestaurants => "chain_restaurants",
            Domain::News => "news",
            Domain::Sports => "sports",
            Domain::TvShows => "tv_shows",
        }
    }

    /// Bit used in per-user domain coverage masks.
    pub fn bit(self) -> u8 {
        1 << (self as u8)
    }

    pub const FULL_MASK: u8 = 0b11_1111;
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Domain {
    type Err = ();

    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        Domain::ALL
            .iter()
            .copied()
            .find(|d| d.as_str() == s)
            .ok_or(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BrandEntry {
    pub brand_id: String,
    pub screen_name: String,
    pub domain: Domain,
    pub follower_count_at_selection: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BrandCatalog {
    entries: Vec<BrandEntry>,
    index: HashMap<String, usize>,
    pub warnings: Vec<String>,
}

impl BrandCatalog {
    pub fn from_entries(entries: Vec<BrandEntry>) -> Result<Self> {
        let mut index = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if index.insert(e.brand_id.clone(), i).is_some() {
                return Err(IngestError::DuplicateBrandId {
                    id: e.brand_id.clone(),
                    line: i as u64 + 2,
                });
            }
        }
        let mut cat = BrandCatalog {
            entries,
            index,
            warnings: Vec::new(),
        };
        if cat.entries.is_empty() {
            log::warn!("brand catalog is empty");
            cat.warnings.push("brand catalog is empty".into());
        }
        Ok(cat)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[BrandEntry] {
        &self.entries
    }

    pub fn position(&self, brand_id: &str) -> Option<usize> {
        self.index.get(brand_id).copied()
    }

    pub fn get(&self, brand_id: &str) -> Option<&BrandEntry> {
        self.position(brand_id).map(|i| &self.entries[i])
    }

    pub fn read<R: Read>(rdr: R, opts: &CsvOptions) -> Result<Self> {
        let mut rdr = opts.reader(rdr);
        let mut entries = Vec::new();
        let mut seen: HashMap<String, ()> = HashMap::new();
        for rec in rdr.records() {
            let rec = rec.map_err(csv_err)?;
            let line = record_line(&rec);
            let brand_id = nonempty(&rec, 0, "brand_id")?.to_string();
            let screen_name = field(&rec, 1, "screen_name")?.to_string();
            let label = field(&rec, 2, "domain")?;
            let domain = label.parse::<Domain>().map_err(|_| IngestError::UnknownDomain {
                label: label.to_string(),
                line,
            })?;
            let follower_count_at_selection = nonneg(&rec, 3, "follower_count")?;
            if seen.insert(brand_id.clone(), ()).is_some() {
                return Err(IngestError::DuplicateBrandId { id: brand_id, line });
            }
            entries.push(BrandEntry {
                brand_id,
                screen_name,
                domain,
                follower_count_at_selection,
            });
        }
        Self::from_entries(entries)
    }

    pub fn write<W: Write>(&self, w: W, opts: &CsvOptions) -> std::io::Result<()> {
        let mut wtr = opts.writer(w);
        wtr.write_record(["brand_id", "screen_name", "domain", "follower_count"])?;
        for e in &self.entries {
            wtr.write_record([
                e.brand_id.as_str(),
                e.screen_name.as_str(),
                e.domain.as_str(),
                &e.follower_count_at_selection.to_string(),
            ])?;
        }
        wtr.flush()
    }
}

pub fn load_brand_catalog(path: &Path, opts: &CsvOptions) -> Result<BrandCatalog> {
    BrandCatalog::read(open(path)?, opts)
}

/// Bidirectional token ↔ dense index map.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdMap {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl IdMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&mut self, token: &str) -> u32 {
        if let Some(&i) = self.index.get(token) {
            return i;
        }
        let i = self.tokens.len() as u32;
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), i);
        i
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, idx: u32) -> &str {
        &self.tokens[idx as usize]
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

impl FromIterator<String> for IdMap {
    fn from_iter<T: IntoIterator<Item = String>>(iter: T) -> Self {
        let mut m = IdMap::new();
        for t in iter {
            m.intern(&t);
        }
        m
    }
}

/// Deduplicated user→brand follow edges.
///
/// Brand indices are interned in order of first appearance in the edge file;
/// `brand_catalog_pos` maps each of them back to its catalog row.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EdgeStore {
    /// Sorted by (user, brand), no duplicates.
    edges: Vec<(u32, u32)>,
    pub users: IdMap,
    pub brands: IdMap,
    brand_catalog_pos: Vec<usize>,
    pub skipped_unknown_brand: usize,
    pub duplicates_removed: usize,
}

impl EdgeStore {
    /// Builds a store from raw pairs of ids, resolving brands against the catalog.
    pub fn from_pairs<'a, I>(pairs: I, catalog: &BrandCatalog) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let mut store = EdgeStore::default();
        for (u, b) in pairs {
            store.push(u, b, catalog);
        }
        store.finish()
    }

    fn push(&mut self, user: &str, brand: &str, catalog: &BrandCatalog) {
        let Some(pos) = catalog.position(brand) else {
            self.skipped_unknown_brand += 1;
            return;
        };
        let u = self.users.intern(user);
        let before = self.brands.len();
        let b = self.brands.intern(brand);
        if self.brands.len() > before {
            self.brand_catalog_pos.push(pos);
        }
        self.edges.push((u, b));
    }

    fn finish(mut self) -> Result<Self> {
        let raw = self.edges.len();
        self.edges.sort_unstable();
        self.edges.dedup();
        self.duplicates_removed = raw - self.edges.len();
        if self.edges.is_empty() {
            return Err(IngestError::EmptyInput);
        }
        Ok(self)
    }

    /// Restricts to the edges accepted by `keep`, keeping the interned id maps.
    pub fn retain_edges(&self, keep: impl FnMut(u32, u32) -> bool) -> EdgeStore {
        let mut out = self.clone();
        out.retain_in_place(keep);
        out
    }

    pub fn retain_in_place(&mut self, mut keep: impl FnMut(u32, u32) -> bool) {
        self.edges.retain(|&(u, b)| keep(u, b));
    }

    pub fn edges(&self) -> &[(u32, u32)] {
        &self.edges
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_brands(&self) -> usize {
        self.brands.len()
    }

    pub fn catalog_position(&self, brand: u32) -> usize {
        self.brand_catalog_pos[brand as usize]
    }

    pub fn brand_domain(&self, brand: u32, catalog: &BrandCatalog) -> Domain {
        catalog.entries()[self.catalog_position(brand)].domain
    }

    /// Number of edges per user index.
    pub fn user_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n_users()];
        for &(u, _) in &self.edges {
            deg[u as usize] += 1;
        }
        deg
    }

    pub fn brand_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n_brands()];
        for &(_, b) in &self.edges {
            deg[b as usize] += 1;
        }
        deg
    }

    /// Edge set as id-token pairs, independent of interning order.
    pub fn token_pairs(&self) -> std::collections::BTreeSet<(String, String)> {
        self.edges
            .iter()
            .map(|&(u, b)| (self.users.token(u).to_string(), self.brands.token(b).to_string()))
            .collect()
    }

    pub fn read<R: Read>(rdr: R, catalog: &BrandCatalog, opts: &CsvOptions) -> Result<Self> {
        let mut rdr = opts.reader(rdr);
        let mut store = EdgeStore::default();
        for rec in rdr.records() {
            let rec = rec.map_err(csv_err)?;
            let user = nonempty(&rec, 0, "user_id")?;
            let brand = nonempty(&rec, 1, "brand_id")?;
            store.push(user, brand, catalog);
        }
        if store.skipped_unknown_brand > 0 {
            log::warn!(
                "skipped {} edges referencing brands absent from the catalog",
                store.skipped_unknown_brand
            );
        }
        store.finish()
    }

    pub fn write<W: Write>(&self, w: W, opts: &CsvOptions) -> std::io::Result<()> {
        let mut wtr = opts.writer(w);
        wtr.write_record(["user_id", "brand_id"])?;
        for &(u, b) in &self.edges {
            wtr.write_record([self.users.token(u), self.brands.token(b)])?;
        }
        wtr.flush()
    }
}

pub fn load_edges(path: &Path, catalog: &BrandCatalog, opts: &CsvOptions) -> Result<EdgeStore> {
    EdgeStore::read(open(path)?, catalog, opts)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: String,
    pub statuses_count: u64,
    pub followers_count: u64,
    pub last_active: NaiveDate,
    /// Pre-resolved ISO country code; `None` when blank.
    pub location_resolved: Option<String>,
    pub description: String,
}

#[derive(Debug, Default)]
pub struct UserProfileStore {
    profiles: Vec<UserProfile>,
    index: HashMap<String, usize>,
    /// Rows skipped in lenient mode, each carrying its line number.
    pub rejected: Vec<IngestError>,
}

impl UserProfileStore {
    pub fn from_profiles(profiles: Vec<UserProfile>) -> Result<Self> {
        let mut index = HashMap::with_capacity(profiles.len());
        for (i, p) in profiles.iter().enumerate() {
            if index.insert(p.user_id.clone(), i).is_some() {
                return Err(IngestError::DuplicateUserId {
                    id: p.user_id.clone(),
                    line: i as u64 + 2,
                });
            }
        }
        Ok(UserProfileStore {
            profiles,
            index,
            rejected: Vec::new(),
        })
    }

    pub fn get(&self, user_id: &str) -> Option<&UserProfile> {
        self.index.get(user_id).map(|&i| &self.profiles[i])
    }

    pub fn profiles(&self) -> &[UserProfile] {
        &self.profiles
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    /// Profiled users that never appear in the edge store.
    pub fn orphans<'a>(&'a self, edges: &EdgeStore) -> Vec<&'a str> {
        let deg = edges.user_degrees();
        self.profiles
            .iter()
            .filter(|p| match edges.users.get(&p.user_id) {
                Some(u) => deg[u as usize] == 0,
                None => true,
            })
            .map(|p| p.user_id.as_str())
            .collect()
    }

    /// Reads profiles. With `strict` the first bad row is an error; otherwise
    /// bad rows are collected in `rejected`. Duplicate ids are always fatal.
    pub fn read<R: Read>(rdr: R, opts: &CsvOptions, strict: bool) -> Result<Self> {
        let mut rdr = opts.reader(rdr);
        let mut store = UserProfileStore::default();
        for rec in rdr.records() {
            let parsed = rec.map_err(csv_err).and_then(|rec| parse_profile(&rec).map(|p| (p, record_line(&rec))));
            match parsed {
                Ok((p, line)) => {
                    if store.index.contains_key(&p.user_id) {
                        return Err(IngestError::DuplicateUserId { id: p.user_id, line });
                    }
                    store.index.insert(p.user_id.clone(), store.profiles.len());
                    store.profiles.push(p);
                }
                Err(e @ IngestError::Io { .. }) => return Err(e),
                Err(e) if strict => return Err(e),
                Err(e) => {
                    log::warn!("{e}");
                    store.rejected.push(e);
                }
            }
        }
        Ok(store)
    }

    pub fn write<W: Write>(&self, w: W, opts: &CsvOptions) -> std::io::Result<()> {
        let mut wtr = csv::WriterBuilder::new()
            .delimiter(opts.delimiter)
            .quote_style(csv::QuoteStyle::NonNumeric)
            .from_writer(w);
        wtr.write_record([
            "user_id",
            "statuses_count",
            "followers_count",
            "last_active",
            "location",
            "description",
        ])?;
        for p in &self.profiles {
            wtr.write_record([
                p.user_id.as_str(),
                &p.statuses_count.to_string(),
                &p.followers_count.to_string(),
                &p.last_active.format("%Y-%m-%d").to_string(),
                p.location_resolved.as_deref().unwrap_or(""),
                p.description.as_str(),
            ])?;
        }
        wtr.flush()
    }
}

fn parse_profile(rec: &csv::StringRecord) -> Result<UserProfile> {
    let line = record_line(rec);
    let user_id = nonempty(rec, 0, "user_id")?.to_string();
    let statuses_count = nonneg(rec, 1, "statuses_count")?;
    let followers_count = nonneg(rec, 2, "followers_count")?;
    let raw_date = field(rec, 3, "last_active")?;
    let last_active =
        NaiveDate::parse_from_str(raw_date, "%Y-%m-%d").map_err(|_| IngestError::MalformedRow {
            line,
            reason: format!("invalid ISO-8601 date `{raw_date}`"),
        })?;
    let location = rec.get(4).unwrap_or("");
    let location_resolved = (!location.is_empty()).then(|| location.to_ascii_uppercase());
    let description = rec.get(5).unwrap_or("").to_string();
    Ok(UserProfile {
        user_id,
        statuses_count,
        followers_count,
        last_active,
        location_resolved,
        description,
    })
}

pub fn load_user_profiles(path: &Path, opts: &CsvOptions, strict: bool) -> Result<UserProfileStore> {
    UserProfileStore::read(open(path)?, opts, strict)
}
