//! Stage-by-stage orchestration over files in an output directory.
//!
//! Every stage reads only its inputs and the artifacts of earlier stages:
//!
//! | stage    | writes                                                    |
//! |----------|-----------------------------------------------------------|
//! | ingest   | `ingest.json`                                             |
//! | filter   | `audit.json`, `filtered_edges.csv`, `informative.json`    |
//! | fit      | `model.json`, `model.coords.bin`                          |
//! | project  | `projections.csv`, `projection.json`                      |
//! | score    | `users_ses.csv`, `brands_ses.csv`, `scores.json`          |
//! | validate | `validation/report.json`, `validation/*.csv`              |

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ca::{build_matrix, Anchor, CaError, CaModel, EntityKind, ProfileProjector, SvdParams};
use crate::filter::{
    filter_users, prune_brands_and_reselect, select_informative, FilterCriteria, FilterError, FilteredDataset,
    InformativeSets,
};
use crate::ingest::{
    load_brand_catalog, load_edges, load_user_profiles, BrandCatalog, CsvOptions, EdgeStore, IngestError,
};
use crate::score::{standardize_against, ScoreError, ScoreTable};
use crate::stats::{
    group_median_se, match_job_titles, one_way_anova, spearman, welch_t, BootstrapParams, MatchOptions, StatsError,
    TitleLexicon,
};
use crate::synth::{evaluate_recovery, generate, SynthError, SynthParams, SynthTruth};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Ca(#[from] CaError),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad artifact {path}: {reason}")]
    Artifact { path: String, reason: String },
}

impl PipelineError {
    /// Stable machine-readable error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            PipelineError::Config(_) | PipelineError::Ca(CaError::InvalidRank { .. }) => "config",
            PipelineError::Ingest(_) => "ingest",
            PipelineError::Filter(_) => "filter",
            PipelineError::Ca(_) => "ca",
            PipelineError::Score(_) => "score",
            PipelineError::Stats(_) => "stats",
            PipelineError::Synth(_) => "synth",
            PipelineError::Io { .. } => "io",
            PipelineError::Artifact { .. } => "artifact",
        }
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct InputPaths {
    pub brands: Option<PathBuf>,
    pub edges: Option<PathBuf>,
    pub users: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    /// Latent truth from the generator, for recovery checks.
    pub truth: Option<PathBuf>,
    /// `brand_id,value` table correlated with brand SES.
    pub brand_attributes: Option<PathBuf>,
    /// `user_id,group` table for Welch / ANOVA tests on user SES.
    pub user_groups: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitSubset {
    /// Users covering all six domains and their well-followed brands.
    Informative,
    /// Every surviving user and brand.
    AllSurviving,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Population {
    /// Standardize over every scored entity of the kind.
    AllProjected,
    /// Use the mean/sd of the entities in the fit, applied to all.
    FitOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Analysis {
    TitleSalary,
    Recovery,
    BrandAttribute,
    GroupTest,
}

impl std::str::FromStr for Analysis {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        serde_json::from_value(json!(s)).map_err(|_| format!("unknown analysis `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub inputs: InputPaths,
    pub delimiter: char,
    pub filter: FilterCriteria,
    /// Skip the user/brand filtering cascade (every user with an edge survives).
    pub skip_user_filters: bool,
    pub fit_subset: FitSubset,
    pub k_dims: usize,
    /// SVD settings; the seed comes from `seed`.
    pub svd: SvdParams,
    pub anchor: Option<Anchor>,
    pub population: Population,
    /// Bootstrap settings; the seed comes from `seed`.
    pub bootstrap: BootstrapParams,
    pub titles: MatchOptions,
    /// Empty means every analysis whose inputs are configured.
    pub analyses: Vec<Analysis>,
    pub synth: SynthParams,
    pub output_dir: PathBuf,
    /// Seeds the SVD sketch, the bootstrap and the generator.
    pub seed: u64,
    pub threads: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            inputs: InputPaths::default(),
            delimiter: ',',
            filter: FilterCriteria::default(),
            skip_user_filters: false,
            fit_subset: FitSubset::Informative,
            k_dims: 3,
            svd: SvdParams::default(),
            anchor: None,
            population: Population::AllProjected,
            bootstrap: BootstrapParams::default(),
            titles: MatchOptions::default(),
            analyses: Vec::new(),
            synth: SynthParams::default(),
            output_dir: PathBuf::from("out"),
            seed: 0,
            threads: None,
        }
    }
}

impl PipelineConfig {
    /// Defaults for generated data: every user with a follow survives and the
    /// informative-brand threshold is scaled down to the generator's size.
    pub fn synthetic_benchmark() -> Self {
        PipelineConfig {
            filter: FilterCriteria {
                min_brands_per_user: 1,
                min_informative_followers: 50,
                ..FilterCriteria::default()
            },
            ..PipelineConfig::default()
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        if !self.delimiter.is_ascii() {
            return Err(PipelineError::Config("delimiter must be ASCII".into()));
        }
        if self.k_dims == 0 {
            return Err(PipelineError::Config("k_dims must be at least 1".into()));
        }
        let i = &self.inputs;
        let mut paths: Vec<&PathBuf> = [
            &i.brands,
            &i.edges,
            &i.users,
            &i.lexicon,
            &i.truth,
            &i.brand_attributes,
            &i.user_groups,
        ]
        .into_iter()
        .flatten()
        .collect();
        paths.push(&self.output_dir);
        let n = paths.len();
        paths.sort();
        paths.dedup();
        if paths.len() != n {
            return Err(PipelineError::Config("input and output paths must be distinct".into()));
        }
        self.filter.validate()?;
        Ok(())
    }

    pub fn csv(&self) -> CsvOptions {
        CsvOptions {
            delimiter: self.delimiter as u8,
        }
    }

    fn svd_params(&self) -> SvdParams {
        SvdParams {
            seed: self.seed,
            ..self.svd
        }
    }

    fn bootstrap_params(&self) -> BootstrapParams {
        BootstrapParams {
            seed: self.seed,
            ..self.bootstrap
        }
    }

    /// SHA-256 of the canonical JSON form of the config.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(&bytes))
    }

    fn out(&self, name: &str) -> PathBuf {
        self.output_dir.join(name)
    }

    fn input<'a>(&self, p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
        p.as_deref()
            .ok_or_else(|| PipelineError::Config(format!("missing input path `{what}`")))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Outcome of one stage, recorded in the run manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: String,
    pub seconds: f64,
    pub counts: serde_json::Value,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub versions: BTreeMap<String, String>,
    pub config: PipelineConfig,
    pub stages: Vec<StageReport>,
    pub outputs: Vec<String>,
    /// Set when the run stopped on an error.
    pub error: Option<serde_json::Value>,
}

impl RunManifest {
    pub fn new(command: &str, cfg: &PipelineConfig) -> Self {
        let mut versions = BTreeMap::new();
        versions.insert(env!("CARGO_PKG_NAME").to_string(), env!("CARGO_PKG_VERSION").to_string());
        RunManifest {
            command: command.into(),
            config_hash: cfg.hash(),
            seed: cfg.seed,
            versions,
            config: cfg.clone(),
            stages: Vec::new(),
            outputs: Vec::new(),
            error: None,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("run_manifest.json");
        write_json(&path, self)?;
        Ok(path)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let f = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| PipelineError::Artifact {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    w.write_all(b"\n").map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Artifact {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

fn timed<T>(stage: &str, f: impl FnOnce() -> Result<(T, serde_json::Value)>) -> Result<(T, StageReport)> {
    let t0 = Instant::now();
    let (v, counts) = f()?;
    log::info!("{stage} finished in {:.2}s", t0.elapsed().as_secs_f64());
    Ok((
        v,
        StageReport {
            stage: stage.into(),
            seconds: t0.elapsed().as_secs_f64(),
            counts,
        },
    ))
}

pub struct Inputs {
    pub catalog: BrandCatalog,
    pub edges: EdgeStore,
    pub profiles: Option<crate::ingest::UserProfileStore>,
}

fn load_inputs(cfg: &PipelineConfig, need_profiles: bool) -> Result<Inputs> {
    let opts = cfg.csv();
    let catalog = load_brand_catalog(cfg.input(&cfg.inputs.brands, "brands")?, &opts)?;
    let edges = load_edges(cfg.input(&cfg.inputs.edges, "edges")?, &catalog, &opts)?;
    let profiles = match (&cfg.inputs.users, need_profiles) {
        (Some(p), _) => Some(load_user_profiles(p, &opts, false)?),
        (None, true) => return Err(PipelineError::Config("missing input path `users`".into())),
        (None, false) => None,
    };
    Ok(Inputs {
        catalog,
        edges,
        profiles,
    })
}

/// Loads and validates the inputs, writing `ingest.json`.
pub fn run_ingest(cfg: &PipelineConfig) -> Result<StageReport> {
    timed("ingest", || {
        let inp = load_inputs(cfg, false)?;
        let mut summary = json!({
            "brands": inp.catalog.len(),
            "catalog_warnings": inp.catalog.warnings,
            "users_with_edges": inp.edges.n_users(),
            "brands_with_edges": inp.edges.n_brands(),
            "edges": inp.edges.n_edges(),
            "duplicate_edges_removed": inp.edges.duplicates_removed,
            "edges_skipped_unknown_brand": inp.edges.skipped_unknown_brand,
        });
        if let Some(p) = &inp.profiles {
            summary["profiles"] = json!(p.len());
            summary["profile_rows_rejected"] = json!(p.rejected.len());
            summary["profile_errors"] = json!(p.rejected.iter().take(100).map(|e| e.to_string()).collect::<Vec<_>>());
            summary["orphan_profiles"] = json!(p.orphans(&inp.edges).len());
        }
        write_json(&cfg.out("ingest.json"), &summary)?;
        Ok(((), summary))
    })
    .map(|r| r.1)
}

#[derive(Debug, Serialize, Deserialize)]
struct InformativeArtifact {
    fit_subset: FitSubset,
    users: Vec<String>,
    brands: Vec<String>,
}

/// Runs the filtering cascade and subset selection.
pub fn run_filter(cfg: &PipelineConfig) -> Result<StageReport> {
    timed("filter", || {
        let inp = load_inputs(cfg, !cfg.skip_user_filters)?;
        let ds = if cfg.skip_user_filters {
            FilteredDataset::unfiltered(inp.edges.clone())
        } else {
            filter_users(&inp.edges, inp.profiles.as_ref().expect("profiles loaded"), &cfg.filter)?
        };
        let ds = prune_brands_and_reselect(ds, &cfg.filter)?;
        let sets = match cfg.fit_subset {
            FitSubset::Informative => select_informative(&ds, &inp.catalog, &cfg.filter)?,
            FitSubset::AllSurviving => InformativeSets {
                users: ds.surviving_users(),
                brands: ds.surviving_brands(),
            },
        };
        write_json(&cfg.out("audit.json"), &ds.audit)?;
        let p = cfg.out("filtered_edges.csv");
        ds.edges
            .write(fs::File::create(&p).map_err(io_err(&p))?, &cfg.csv())
            .map_err(io_err(&p))?;
        let es = &ds.edges;
        let art = InformativeArtifact {
            fit_subset: cfg.fit_subset,
            users: sets.users.iter().map(|&u| es.users.token(u).to_string()).collect(),
            brands: sets.brands.iter().map(|&b| es.brands.token(b).to_string()).collect(),
        };
        write_json(&cfg.out("informative.json"), &art)?;
        let counts = json!({
            "users_in": ds.audit.users_in,
            "users_out": ds.n_users(),
            "brands_out": ds.n_brands(),
            "edges_out": ds.edges.n_edges(),
            "prune_iterations": ds.audit.prune_iterations,
            "fit_users": art.users.len(),
            "fit_brands": art.brands.len(),
        });
        Ok(((), counts))
    })
    .map(|r| r.1)
}

fn load_filtered(cfg: &PipelineConfig) -> Result<(BrandCatalog, EdgeStore)> {
    let opts = cfg.csv();
    let catalog = load_brand_catalog(cfg.input(&cfg.inputs.brands, "brands")?, &opts)?;
    let edges = load_edges(&cfg.out("filtered_edges.csv"), &catalog, &opts)?;
    Ok((catalog, edges))
}

/// Fits CA on the selected subset, writing `model.json` and its sidecar.
pub fn run_fit(cfg: &PipelineConfig) -> Result<StageReport> {
    timed("fit", || {
        let (_, edges) = load_filtered(cfg)?;
        let art: InformativeArtifact = read_json(&cfg.out("informative.json"))?;
        let lookup = |ids: &[String], map: &crate::ingest::IdMap| -> Result<Vec<u32>> {
            ids.iter()
                .map(|id| {
                    map.get(id).ok_or_else(|| PipelineError::Artifact {
                        path: "informative.json".into(),
                        reason: format!("id `{id}` absent from filtered edges"),
                    })
                })
                .collect()
        };
        let cols = lookup(&art.brands, &edges.brands)?;
        let rows = lookup(&art.users, &edges.users)?;
        let ds = FilteredDataset::unfiltered(edges);
        // rows without an edge into the column set are left for projection
        let mut in_cols = vec![false; ds.edges.n_brands()];
        for &b in &cols {
            in_cols[b as usize] = true;
        }
        let mut has_edge = vec![false; ds.edges.n_users()];
        for &(u, b) in ds.edges.edges() {
            if in_cols[b as usize] {
                has_edge[u as usize] = true;
            }
        }
        let trimmed: Vec<u32> = rows.iter().copied().filter(|&u| has_edge[u as usize]).collect();
        let lm = build_matrix(&ds, &trimmed, &cols)?;
        let m = &lm.matrix;
        let max_k = m.n_rows().min(m.n_cols()).saturating_sub(1);
        if cfg.k_dims > max_k {
            return Err(PipelineError::Config(format!(
                "k_dims = {} exceeds min(I, J) - 1 = {max_k} for the {} x {} fit matrix",
                cfg.k_dims,
                m.n_rows(),
                m.n_cols()
            )));
        }
        let model = CaModel::fit(&lm, cfg.k_dims, &cfg.svd_params())?;
        model.save(&cfg.out("model.json"))?;
        let counts = json!({
            "rows": m.n_rows(),
            "cols": m.n_cols(),
            "nnz": m.nnz(),
            "rows_without_fit_edges": rows.len() - trimmed.len(),
            "singular_values": model.singular_values,
            "explained_inertia": model.explained_inertia(),
            "svd_iterations": model.fit_meta.iterations_run,
            "svd_max_residual": model.fit_meta.max_residual,
        });
        Ok(((), counts))
    })
    .map(|r| r.1)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ProjectionArtifact {
    /// Dimension-1 sign of the model when the projections were computed.
    dim1_sign: i8,
    k_dims: usize,
    brands_projected: usize,
    brands_unprojectable: usize,
    users_projected: usize,
    users_unprojectable: usize,
    brand_members_outside_model: usize,
    user_members_outside_basis: usize,
}

/// One projected entity.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedEntity {
    pub kind: EntityKind,
    pub id: String,
    pub in_fit: bool,
    pub coords: Vec<f64>,
}

/// Projects every surviving brand onto the model's row coordinates, then
/// every surviving user onto the resulting brand standard coordinates.
pub fn project_all(model: &CaModel, edges: &EdgeStore) -> (Vec<ProjectedEntity>, serde_json::Value) {
    let k = model.k_dims();
    let row_of: Vec<u32> = (0..edges.n_users() as u32)
        .map(|u| model.row_ids.get(edges.users.token(u)).unwrap_or(u32::MAX))
        .collect();

    let mut brand_members: Vec<Vec<u32>> = vec![Vec::new(); edges.n_brands()];
    let mut user_brands: Vec<Vec<u32>> = vec![Vec::new(); edges.n_users()];
    for &(u, b) in edges.edges() {
        brand_members[b as usize].push(row_of[u as usize]);
        user_brands[u as usize].push(b);
    }
    let brand_proj = ProfileProjector::new(&model.row_coords).project_all_lenient(&brand_members);

    // brand standard coordinates: projection divided by the singular value
    let mut basis_pos = vec![u32::MAX; edges.n_brands()];
    let mut basis_rows: Vec<f64> = Vec::new();
    let mut out = Vec::new();
    for (b, c) in brand_proj.coords.iter().enumerate() {
        let Some(c) = c else { continue };
        basis_pos[b] = (basis_rows.len() / k) as u32;
        basis_rows.extend(c.iter().zip(&model.singular_values).map(|(x, a)| x / a));
        let id = edges.brands.token(b as u32);
        out.push(ProjectedEntity {
            kind: EntityKind::Brand,
            id: id.to_string(),
            in_fit: model.col_ids.get(id).is_some(),
            coords: c.clone(),
        });
    }
    let basis = nalgebra::DMatrix::from_row_slice(basis_rows.len() / k, k, &basis_rows);
    let user_points: Vec<Vec<u32>> = user_brands
        .iter()
        .map(|bs| bs.iter().map(|&b| basis_pos[b as usize]).collect())
        .collect();
    let user_proj = ProfileProjector::new(&basis).project_all_lenient(&user_points);
    for (u, c) in user_proj.coords.iter().enumerate() {
        let Some(c) = c else { continue };
        out.push(ProjectedEntity {
            kind: EntityKind::User,
            id: edges.users.token(u as u32).to_string(),
            in_fit: row_of[u] != u32::MAX,
            coords: c.clone(),
        });
    }
    let n_brands = out.iter().filter(|e| e.kind == EntityKind::Brand).count();
    let art = ProjectionArtifact {
        dim1_sign: model.orientation.signs[0],
        k_dims: k,
        brands_projected: n_brands,
        brands_unprojectable: brand_proj.empty_points,
        users_projected: out.len() - n_brands,
        users_unprojectable: user_proj.empty_points,
        brand_members_outside_model: brand_proj.dropped_members,
        user_members_outside_basis: user_proj.dropped_members,
    };
    (out, serde_json::to_value(art).expect("serializable"))
}

fn write_projections(path: &Path, rows: &[ProjectedEntity], k: usize) -> Result<()> {
    let f = fs::File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(f));
    let mut header = vec!["entity_kind".to_string(), "entity_id".into(), "in_fit".into()];
    header.extend((1..=k).map(|d| format!("dim{d}")));
    let csv_err = |e: csv::Error| PipelineError::Artifact {
        path: path.display().to_string(),
        reason: e.to_string(),
    };
    w.write_record(&header).map_err(csv_err)?;
    for r in rows {
        let mut rec = vec![r.kind.as_str().to_string(), r.id.clone(), r.in_fit.to_string()];
        rec.extend(r.coords.iter().map(|x| x.to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

fn read_projections(path: &Path) -> Result<Vec<ProjectedEntity>> {
    let bad = |reason: String| PipelineError::Artifact {
        path: path.display().to_string(),
        reason,
    };
    let mut rdr = csv::Reader::from_reader(fs::File::open(path).map_err(io_err(path))?);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let kind = match rec.get(0) {
            Some("user") => EntityKind::User,
            Some("brand") => EntityKind::Brand,
            other => return Err(bad(format!("unknown entity kind {other:?}"))),
        };
        let coords = rec
            .iter()
            .skip(3)
            .map(|x| x.parse::<f64>().map_err(|e| bad(e.to_string())))
            .collect::<Result<Vec<f64>>>()?;
        out.push(ProjectedEntity {
            kind,
            id: rec.get(1).unwrap_or_default().to_string(),
            in_fit: rec.get(2) == Some("true"),
            coords,
        });
    }
    Ok(out)
}

/// Projects remaining brands, then remaining users.
pub fn run_project(cfg: &PipelineConfig) -> Result<StageReport> {
    timed("project", || {
        let model = CaModel::load(&cfg.out("model.json"))?;
        let (_, edges) = load_filtered(cfg)?;
        let (rows, summary) = project_all(&model, &edges);
        write_projections(&cfg.out("projections.csv"), &rows, model.k_dims())?;
        write_json(&cfg.out("projection.json"), &summary)?;
        Ok(((), summary))
    })
    .map(|r| r.1)
}

/// Orients the model and writes standardized dimension-1 scores.
pub fn score_projections(
    model: &CaModel,
    rows: &[ProjectedEntity],
    projection_sign: i8,
    anchor: &Anchor,
    population: Population,
) -> Result<(CaModel, ScoreTable, ScoreTable)> {
    let oriented = model.orient(anchor)?;
    let flip = (oriented.orientation.signs[0] * projection_sign) as f64;
    let table = |kind: EntityKind| -> Result<ScoreTable> {
        let sel: Vec<&ProjectedEntity> = rows.iter().filter(|r| r.kind == kind).collect();
        let ids = sel.iter().map(|r| r.id.clone()).collect();
        let raw: Vec<f64> = sel.iter().map(|r| flip * r.coords[0]).collect();
        let (reference, label): (Vec<bool>, &str) = match population {
            Population::AllProjected => (vec![true; sel.len()], "all_projected"),
            Population::FitOnly => (sel.iter().map(|r| r.in_fit).collect(), "fit_only"),
        };
        Ok(standardize_against(kind, ids, &raw, &reference, label)?)
    };
    let users = table(EntityKind::User)?;
    let brands = table(EntityKind::Brand)?;
    Ok((oriented, users, brands))
}

pub fn run_score(cfg: &PipelineConfig) -> Result<StageReport> {
    timed("score", || {
        let model_path = cfg.out("model.json");
        let model = CaModel::load(&model_path)?;
        let rows = read_projections(&cfg.out("projections.csv"))?;
        let proj: ProjectionArtifact = read_json(&cfg.out("projection.json"))?;
        let anchor = cfg.anchor.clone().unwrap_or_else(|| model.default_anchor());
        let (oriented, users, brands) = score_projections(&model, &rows, proj.dim1_sign, &anchor, cfg.population)?;
        oriented.save(&model_path)?;
        for (name, t) in [("users_ses.csv", &users), ("brands_ses.csv", &brands)] {
            let p = cfg.out(name);
            let f = fs::File::create(&p).map_err(io_err(&p))?;
            t.write_csv(BufWriter::new(f))?;
        }
        let summary = json!({
            "orientation": oriented.orientation,
            "users": users.meta,
            "brands": brands.meta,
        });
        write_json(&cfg.out("scores.json"), &summary)?;
        Ok(((), summary))
    })
    .map(|r| r.1)
}

fn load_scores(cfg: &PipelineConfig, kind: EntityKind) -> Result<ScoreTable> {
    let name = match kind {
        EntityKind::User => "users_ses.csv",
        EntityKind::Brand => "brands_ses.csv",
    };
    let p = cfg.out(name);
    Ok(ScoreTable::read_csv(kind, fs::File::open(&p).map_err(io_err(&p))?)?)
}

/// Per-title medians and their rank correlations with salary and class.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TitleSalaryReport {
    pub titles_used: usize,
    pub matched_users: usize,
    pub unscored_matches: usize,
    pub ambiguous: usize,
    pub excluded: usize,
    pub dropped_titles: BTreeMap<String, usize>,
    pub salary: Option<crate::stats::CorrelationResult>,
    pub class: Option<crate::stats::CorrelationResult>,
}

pub fn title_salary_analysis(
    users: &ScoreTable,
    profiles: &crate::ingest::UserProfileStore,
    lexicon: &TitleLexicon,
    opts: &MatchOptions,
    boot: &BootstrapParams,
) -> Result<(TitleSalaryReport, Vec<serde_json::Value>)> {
    let asg = match_job_titles(profiles, lexicon, opts);
    let index = users.index();
    let scored: Vec<(String, String)> = asg
        .assignment
        .iter()
        .filter(|(u, _)| index.contains_key(u.as_str()))
        .cloned()
        .collect();
    let stats = group_median_se(users, &scored, boot)?;
    let mut table = Vec::new();
    let (mut med, mut sal, mut cls) = (Vec::new(), Vec::new(), Vec::new());
    for (title, g) in &stats.groups {
        let e = lexicon.get(title).expect("assigned titles come from the lexicon");
        table.push(json!({
            "title": title,
            "n": g.n,
            "median": g.median,
            "se_median": g.se_median,
            "mean": g.mean,
            "small": g.small,
            "class": e.class,
            "mean_salary_usd": e.mean_salary_usd,
        }));
        if !g.small {
            med.push(g.median);
            sal.push(e.mean_salary_usd);
            cls.push(e.class as f64);
        }
    }
    let corr = |y: &[f64]| spearman(&med, y).ok();
    let report = TitleSalaryReport {
        titles_used: med.len(),
        matched_users: scored.len(),
        unscored_matches: asg.assignment.len() - scored.len(),
        ambiguous: asg.ambiguous,
        excluded: asg.excluded,
        dropped_titles: asg.dropped_titles,
        salary: corr(&sal),
        class: corr(&cls),
    };
    Ok((report, table))
}

fn read_two_col(path: &Path) -> Result<Vec<(String, String)>> {
    let mut rdr = csv::Reader::from_reader(fs::File::open(path).map_err(io_err(path))?);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| PipelineError::Artifact {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        out.push((rec.get(0).unwrap_or("").to_string(), rec.get(1).unwrap_or("").to_string()));
    }
    Ok(out)
}

fn write_table(path: &Path, rows: &[serde_json::Value]) -> Result<()> {
    let f = fs::File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(f));
    let cerr = |e: csv::Error| PipelineError::Artifact {
        path: path.display().to_string(),
        reason: e.to_string(),
    };
    if let Some(first) = rows.first().and_then(|r| r.as_object()) {
        let keys: Vec<&String> = first.keys().collect();
        w.write_record(keys.iter().map(|k| k.as_str())).map_err(cerr)?;
        for r in rows {
            let rec: Vec<String> = keys
                .iter()
                .map(|k| match &r[k.as_str()] {
                    serde_json::Value::String(s) => s.clone(),
                    v => v.to_string(),
                })
                .collect();
            w.write_record(&rec).map_err(cerr)?;
        }
    }
    w.flush().map_err(io_err(path))
}

pub fn run_validate(cfg: &PipelineConfig) -> Result<StageReport> {
    timed("validate", || {
        let dir = cfg.out("validation");
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let i = &cfg.inputs;
        let wanted = |a: Analysis, available: bool| -> Result<bool> {
            if cfg.analyses.is_empty() {
                return Ok(available);
            }
            let on = cfg.analyses.contains(&a);
            if on && !available {
                return Err(PipelineError::Config(format!("analysis {a:?} needs an input path that is not set")));
            }
            Ok(on)
        };
        let users = load_scores(cfg, EntityKind::User)?;
        let brands = load_scores(cfg, EntityKind::Brand)?;
        let mut report = serde_json::Map::new();
        report.insert("users".into(), json!(users.meta));
        report.insert("brands".into(), json!(brands.meta));

        if wanted(Analysis::TitleSalary, i.lexicon.is_some() && i.users.is_some())? {
            let lp = cfg.input(&i.lexicon, "lexicon")?;
            let lexicon = TitleLexicon::read(fs::File::open(lp).map_err(io_err(lp))?)?;
            let profiles = load_user_profiles(cfg.input(&i.users, "users")?, &cfg.csv(), false)?;
            let (rep, table) =
                title_salary_analysis(&users, &profiles, &lexicon, &cfg.titles, &cfg.bootstrap_params())?;
            write_table(&dir.join("title_medians.csv"), &table)?;
            report.insert("title_salary".into(), json!(rep));
        }
        if wanted(Analysis::Recovery, i.truth.is_some())? {
            let tp = cfg.input(&i.truth, "truth")?;
            let mut rec = serde_json::Map::new();
            let mut rows = Vec::new();
            for (kind, table) in [(EntityKind::User, &users), (EntityKind::Brand, &brands)] {
                let (ids, lat) = SynthTruth::read_csv(tp, kind)?;
                let r = evaluate_recovery(table, &ids, &lat)?;
                rows.push(json!({
                    "entity_kind": kind.as_str(),
                    "abs_rho": r.correlation.rho,
                    "p_value": r.correlation.p_value,
                    "n": r.correlation.n,
                    "orientation_sign": r.orientation_sign,
                    "coverage": r.covered as f64 / r.total as f64,
                }));
                rec.insert(kind.as_str().into(), json!(r));
            }
            write_table(&dir.join("recovery.csv"), &rows)?;
            report.insert("recovery".into(), serde_json::Value::Object(rec));
        }
        if wanted(Analysis::BrandAttribute, i.brand_attributes.is_some())? {
            let p = cfg.input(&i.brand_attributes, "brand_attributes")?;
            let idx = brands.index();
            let (mut x, mut y, mut rows) = (Vec::new(), Vec::new(), Vec::new());
            for (id, v) in read_two_col(p)? {
                let (Some(&k), Ok(v)) = (idx.get(id.as_str()), v.parse::<f64>()) else {
                    continue;
                };
                x.push(brands.entries[k].ses);
                y.push(v);
                rows.push(json!({"brand_id": id, "ses": brands.entries[k].ses, "value": v}));
            }
            write_table(&dir.join("brand_attribute.csv"), &rows)?;
            report.insert("brand_attribute".into(), json!(spearman(&x, &y)?));
        }
        if wanted(Analysis::GroupTest, i.user_groups.is_some())? {
            let p = cfg.input(&i.user_groups, "user_groups")?;
            let idx = users.index();
            let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            for (id, g) in read_two_col(p)? {
                if let Some(&k) = idx.get(id.as_str()) {
                    groups.entry(g).or_default().push(users.entries[k].ses);
                }
            }
            let slices: Vec<&[f64]> = groups.values().map(|v| v.as_slice()).collect();
            let mut out = json!({ "anova": one_way_anova(&slices)? });
            if slices.len() == 2 {
                out["welch"] = json!(welch_t(slices[0], slices[1])?);
            }
            let rows: Vec<serde_json::Value> = groups
                .iter()
                .map(|(g, v)| json!({"group": g, "n": v.len(), "mean": crate::stats::mean(v), "median": crate::stats::median(v)}))
                .collect();
            write_table(&dir.join("group_tests.csv"), &rows)?;
            report.insert("group_test".into(), out);
        }
        let report = serde_json::Value::Object(report);
        write_json(&dir.join("report.json"), &report)?;
        Ok(((), report))
    })
    .map(|r| r.1)
}

/// Generates a synthetic dataset into `dir` and returns the paths config for it.
pub fn run_synth(cfg: &PipelineConfig, dir: &Path) -> Result<(InputPaths, StageReport)> {
    timed("synth", || {
        let params = SynthParams {
            seed: cfg.seed,
            ..cfg.synth.clone()
        };
        let data = generate(&params)?;
        data.write_dir(dir)?;
        let paths = synth_paths(dir, data.lexicon.is_some());
        let counts = json!({
            "users": data.edges.n_users(),
            "brands": data.catalog.len(),
            "edges": data.edges.n_edges(),
            "expected_edges": data.truth.expected_edges,
            "resampled_users": data.truth.resampled_users,
        });
        Ok((paths, counts))
    })
}

/// Anchor on the fitted brand with the highest latent SES, pointing positive.
/// Needs the filter stage's `informative.json` and the truth file.
pub fn synthetic_anchor(cfg: &PipelineConfig) -> Result<Anchor> {
    let art: InformativeArtifact = read_json(&cfg.out("informative.json"))?;
    let (ids, latent) = SynthTruth::read_csv(cfg.input(&cfg.inputs.truth, "truth")?, EntityKind::Brand)?;
    let fitted: std::collections::HashSet<&str> = art.brands.iter().map(String::as_str).collect();
    let best = ids
        .iter()
        .zip(&latent)
        .filter(|(id, _)| fitted.contains(id.as_str()))
        .max_by(|a, b| a.1.total_cmp(b.1))
        .ok_or_else(|| PipelineError::Artifact {
            path: "informative.json".into(),
            reason: "no fitted brand appears in the truth file".into(),
        })?;
    Ok(Anchor {
        kind: EntityKind::Brand,
        ids: vec![best.0.clone()],
        positive: true,
    })
}

/// Input paths of a directory written by [`run_synth`].
pub fn synth_paths(dir: &Path, with_lexicon: bool) -> InputPaths {
    InputPaths {
        brands: Some(dir.join("brands.csv")),
        edges: Some(dir.join("edges.csv")),
        users: Some(dir.join("users.csv")),
        lexicon: with_lexicon.then(|| dir.join("lexicon.csv")),
        truth: Some(dir.join("truth.csv")),
        brand_attributes: None,
        user_groups: None,
    }
}

/// Runs ingest → filter → fit → project → score → validate.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<Vec<StageReport>> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.output_dir).map_err(io_err(&cfg.output_dir))?;
    Ok(vec![
        run_ingest(cfg)?,
        run_filter(cfg)?,
        run_fit(cfg)?,
        run_project(cfg)?,
        run_score(cfg)?,
        run_validate(cfg)?,
    ])
}

/// Lists the files in the output directory, relative to it, sorted.
pub fn list_outputs(dir: &Path) -> Vec<String> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let Ok(rd) = fs::read_dir(&d) else { continue };
        for e in rd.flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else if let Ok(rel) = p.strip_prefix(dir) {
                out.push(rel.display().to_string());
            }
        }
    }
    out.sort();
    out
}

/// Cheap summary of a score table keyed by id, for callers comparing runs.
pub fn score_map(t: &ScoreTable) -> HashMap<String, f64> {
    t.entries.iter().map(|e| (e.entity_id.clone(), e.ses)).collect()
}
