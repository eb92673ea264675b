use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{mean, median, Result, StatsError};
use crate::score::ScoreTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapParams {
    pub resamples: usize,
    pub seed: u64,
    /// Groups smaller than this are flagged.
    pub min_group_size: usize,
}

impl Default for BootstrapParams {
    fn default() -> Self {
        BootstrapParams {
            resamples: 1000,
            seed: 0,
            min_group_size: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStat {
    pub n: usize,
    pub median: f64,
    /// Standard deviation of the bootstrap resample medians.
    pub se_median: f64,
    pub mean: f64,
    pub small: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub groups: BTreeMap<String, GroupStat>,
    pub params: BootstrapParams,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for one resample, derived from its coordinates only so the result
/// does not depend on scheduling.
fn resample_seed(seed: u64, group: u64, resample: u64) -> u64 {
    splitmix(splitmix(splitmix(seed) ^ group) ^ resample)
}

pub(crate) fn bootstrap_median_se(values: &[f64], params: &BootstrapParams, group_key: u64) -> f64 {
    let n = values.len();
    if params.resamples < 2 {
        return 0.0;
    }
    let medians: Vec<f64> = (0..params.resamples as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(resample_seed(params.seed, group_key, r));
            let sample: Vec<f64> = (0..n).map(|_| values[rng.random_range(0..n)]).collect();
            median(&sample)
        })
        .collect();
    let m = mean(&medians);
    let var = medians.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (medians.len() - 1) as f64;
    var.sqrt()
}

fn label_key(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Median SES per group, with bootstrap standard errors.
///
/// `assignment` maps entity ids to group labels.
pub fn group_median_se(
    scores: &ScoreTable,
    assignment: &[(String, String)],
    params: &BootstrapParams,
) -> Result<GroupStats> {
    let index = scores.index();
    let mut members: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (entity, group) in assignment {
        let i = index
            .get(entity.as_str())
            .ok_or_else(|| StatsError::UnknownEntity(entity.clone()))?;
        members.entry(group).or_default().push(scores.entries[*i].ses);
    }
    let groups = members
        .into_iter()
        .map(|(label, vals)| {
            let stat = GroupStat {
                n: vals.len(),
                median: median(&vals),
                se_median: bootstrap_median_se(&vals, params, label_key(label)),
                mean: mean(&vals),
                small: vals.len() < params.min_group_size,
            };
            (label.to_string(), stat)
        })
        .collect();
    Ok(GroupStats {
        groups,
        params: *params,
    })
}
