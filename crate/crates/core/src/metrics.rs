//! Separate Power, waste measures and accuracy.
//!
//! Separate Power (SP) scores how well a grouping isolates items of one
//! label (normally the incorrect mentions):
//!
//! ```text
//! SP = Σ_i (n_i² / |C_i|) / N
//! ```
//!
//! where `n_i` counts target-labelled items in group `C_i` and `N` counts
//! them overall. SP is 1 exactly when every group that holds a target item
//! holds nothing else.
//!
//! Conv_Sampling is the number of blind random draws needed to expect `e`
//! samples from every group, `max_i (|S| / |C_i|) · min(|C_i|, e)`; the
//! imbalance waste avoided by sampling per group is Conv_Sampling minus
//! `Σ_i min(|C_i|, e)`.

use std::collections::{BTreeMap, HashMap, HashSet};

use num_rational::Ratio;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::guidance::GuidancePartition;

#[derive(Error, Debug, PartialEq)]
pub enum MetricsError {
    #[error("no item carries the target label; separate power is undefined")]
    NoTargetItems,

    #[error("item {0} has no label")]
    Unlabelled(String),

    #[error("item {0} appears in more than one group")]
    DuplicateItem(String),

    #[error("labelled item {0} is not in any group")]
    Uncovered(String),

    #[error("group sizes sum to {sizes}, but there are {items} items")]
    SizeMismatch { sizes: usize, items: usize },

    #[error("total mention count must be positive")]
    ZeroTotal,

    #[error("cluster size list is empty")]
    NoClusters,

    #[error("cluster sizes must be positive")]
    NonPositiveSize,

    #[error("e must be at least 1")]
    BadE,

    #[error("trials must be at least 1")]
    NoTrials,

    #[error("missing gold label for: {}", .0.join(", "))]
    MissingGold(Vec<String>),

    #[error("no p-known mention to score")]
    NothingCounted,
}

/// SP from `(target count, group size)` pairs, exact.
fn sp_ratio(counts: impl Iterator<Item = (u64, u64)>) -> Result<Ratio<u64>, MetricsError> {
    let mut sum = Ratio::from_integer(0u64);
    let mut total = 0u64;
    for (n, size) in counts {
        if n > 0 {
            sum += Ratio::new(n * n, size);
            total += n;
        }
    }
    if total == 0 {
        return Err(MetricsError::NoTargetItems);
    }
    Ok(sum / total)
}

fn sp_float(counts: impl Iterator<Item = (u64, u64)>) -> Result<f64, MetricsError> {
    let mut sum = 0.0;
    let mut total = 0u64;
    for (n, size) in counts {
        if n > 0 {
            sum += (n * n) as f64 / size as f64;
            total += n;
        }
    }
    if total == 0 {
        return Err(MetricsError::NoTargetItems);
    }
    Ok(sum / total as f64)
}

fn group_counts<S: AsRef<str>>(
    groups: &[Vec<S>],
    labels: &HashMap<String, bool>,
    target: bool,
) -> Result<Vec<(u64, u64)>, MetricsError> {
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(groups.len());
    for g in groups {
        let mut n = 0;
        for item in g {
            let item = item.as_ref();
            let label = labels
                .get(item)
                .ok_or_else(|| MetricsError::Unlabelled(item.to_string()))?;
            if !seen.insert(item) {
                return Err(MetricsError::DuplicateItem(item.to_string()));
            }
            if *label == target {
                n += 1;
            }
        }
        if !g.is_empty() {
            out.push((n, g.len() as u64));
        }
    }
    if let Some(missing) = labels.keys().find(|k| !seen.contains(k.as_str())) {
        return Err(MetricsError::Uncovered(missing.clone()));
    }
    Ok(out)
}

/// Separate Power of `groups` for items labelled `target`.
///
/// Groups must be disjoint and cover every labelled item.
pub fn separate_power<S: AsRef<str>>(
    groups: &[Vec<S>],
    labels: &HashMap<String, bool>,
    target: bool,
) -> Result<f64, MetricsError> {
    sp_float(group_counts(groups, labels, target)?.into_iter())
}

/// [`separate_power`] as an exact rational.
pub fn separate_power_exact<S: AsRef<str>>(
    groups: &[Vec<S>],
    labels: &HashMap<String, bool>,
    target: bool,
) -> Result<Ratio<u64>, MetricsError> {
    sp_ratio(group_counts(groups, labels, target)?.into_iter())
}

/// Mean SP over `trials` random label-preserving assignments of the items
/// into groups of the given sizes.
///
/// Each trial draws from its own ChaCha stream of `seed`, so the result does
/// not depend on how trials are scheduled.
pub fn random_baseline_sp(
    group_sizes: &[usize],
    labels: &[bool],
    target: bool,
    trials: usize,
    seed: u64,
) -> Result<f64, MetricsError> {
    let sizes_sum: usize = group_sizes.iter().sum();
    if sizes_sum != labels.len() {
        return Err(MetricsError::SizeMismatch {
            sizes: sizes_sum,
            items: labels.len(),
        });
    }
    if trials == 0 {
        return Err(MetricsError::NoTrials);
    }
    if !labels.contains(&target) {
        return Err(MetricsError::NoTargetItems);
    }
    let per_trial: Vec<f64> = (0..trials as u64)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(trial);
            let mut shuffled = labels.to_vec();
            shuffled.shuffle(&mut rng);
            let mut offset = 0;
            let counts = group_sizes.iter().map(|&size| {
                let n = shuffled[offset..offset + size]
                    .iter()
                    .filter(|&&l| l == target)
                    .count();
                offset += size;
                (n as u64, size as u64)
            });
            sp_float(counts).expect("target label present")
        })
        .collect();
    Ok(per_trial.iter().sum::<f64>() / trials as f64)
}

/// Share of mentions that need no validation: p-known cluster members plus
/// p-known singletons, over `total`.
pub fn duplicate_waste(partition: &GuidancePartition, total: usize) -> Result<f64, MetricsError> {
    if total == 0 {
        return Err(MetricsError::ZeroTotal);
    }
    Ok((partition.p_known.len() + partition.singles_known.len()) as f64 / total as f64)
}

fn check_sizes(sizes: &[usize], e: usize) -> Result<(), MetricsError> {
    if e == 0 {
        return Err(MetricsError::BadE);
    }
    if sizes.is_empty() {
        return Err(MetricsError::NoClusters);
    }
    if sizes.contains(&0) {
        return Err(MetricsError::NonPositiveSize);
    }
    Ok(())
}

/// Expected blind samples needed to see `e` examples of every group.
pub fn conv_sampling(sizes: &[usize], e: usize) -> Result<f64, MetricsError> {
    check_sizes(sizes, e)?;
    let total: u128 = sizes.iter().map(|&s| s as u128).sum();
    // argmax of total·min(c,e)/c compared exactly by cross-multiplication,
    // then a single correctly rounded division
    let (num, den) = sizes
        .iter()
        .map(|&c| (total * c.min(e) as u128, c as u128))
        .max_by(|a, b| (a.0 * b.1).cmp(&(b.0 * a.1)))
        .expect("sizes is non-empty");
    Ok(num as f64 / den as f64)
}

/// Imbalance waste avoided by per-group sampling: `(saved, guided)` where
/// `guided = Σ min(|C_i|, e)` and `saved = conv_sampling - guided`.
pub fn imbalance_waste_saved(sizes: &[usize], e: usize) -> Result<(f64, u64), MetricsError> {
    let conv = conv_sampling(sizes, e)?;
    let guided: u64 = sizes.iter().map(|&c| c.min(e) as u64).sum();
    Ok((conv - guided as f64, guided))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WasteReport {
    pub duplicate_waste: f64,
    pub conv_sampling: f64,
    pub conv_sampling_ceil: f64,
    pub guided_samples: u64,
    pub imbalance_waste_saved: f64,
    pub saved_fraction: f64,
    pub e: usize,
    /// Sizes of the p-unknown groups the imbalance figures are computed on.
    pub unknown_group_sizes: Vec<usize>,
}

/// Waste figures for a partition. Imbalance waste is computed over the
/// p-unknown groups: every p-unknown cluster plus every p-unknown single
/// mention as a group of one.
pub fn waste_report(
    partition: &GuidancePartition,
    total: usize,
) -> Result<WasteReport, MetricsError> {
    let duplicate_waste = duplicate_waste(partition, total)?;
    let e = partition.e;
    let sizes = partition.unknown_group_sizes();
    let (conv, guided, saved) = if sizes.is_empty() {
        (0.0, 0, 0.0)
    } else {
        let (saved, guided) = imbalance_waste_saved(&sizes, e)?;
        (conv_sampling(&sizes, e)?, guided, saved)
    };
    Ok(WasteReport {
        duplicate_waste,
        conv_sampling: conv,
        conv_sampling_ceil: conv.ceil(),
        guided_samples: guided,
        imbalance_waste_saved: saved,
        saved_fraction: if conv > 0.0 { saved / conv } else { 0.0 },
        e,
        unknown_group_sizes: sizes,
    })
}

/// How p-known singletons enter macro accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SinglesMode {
    /// All p-known singles form one pseudo-cluster.
    #[default]
    Pooled,
    /// Each p-known single is a cluster of its own.
    Individual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    #[serde(rename = "macro")]
    pub macro_accuracy: f64,
    #[serde(rename = "micro")]
    pub micro_accuracy: f64,
    pub per_cluster: BTreeMap<String, f64>,
    pub counted: usize,
}

pub const SINGLES_POOL: &str = "singles";

/// Accuracy of the reused model over the p-known population.
pub fn accuracy(
    partition: &GuidancePartition,
    gold: &HashMap<String, bool>,
    mode: SinglesMode,
) -> Result<AccuracyReport, MetricsError> {
    let mut groups: Vec<(String, Vec<&str>)> = partition
        .known_clusters
        .iter()
        .map(|c| {
            (
                c.cluster_id.to_string(),
                c.members.iter().map(String::as_str).collect(),
            )
        })
        .collect();
    let singles: Vec<&str> = partition.singles_known.iter().map(String::as_str).collect();
    match mode {
        SinglesMode::Pooled if !singles.is_empty() => groups.push((SINGLES_POOL.into(), singles)),
        SinglesMode::Pooled => {}
        SinglesMode::Individual => groups.extend(
            singles
                .into_iter()
                .map(|s| (format!("single:{s}"), vec![s])),
        ),
    }

    let missing: Vec<String> = groups
        .iter()
        .flat_map(|(_, m)| m.iter())
        .filter(|m| !gold.contains_key(**m))
        .map(|m| m.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(MetricsError::MissingGold(missing));
    }

    let mut per_cluster = BTreeMap::new();
    let (mut correct, mut counted) = (0usize, 0usize);
    for (key, members) in &groups {
        let ok = members.iter().filter(|m| gold[**m]).count();
        per_cluster.insert(key.clone(), ok as f64 / members.len() as f64);
        correct += ok;
        counted += members.len();
    }
    if counted == 0 {
        return Err(MetricsError::NothingCounted);
    }
    let macro_accuracy = per_cluster.values().sum::<f64>() / per_cluster.len() as f64;
    Ok(AccuracyReport {
        macro_accuracy,
        micro_accuracy: correct as f64 / counted as f64,
        per_cluster,
        counted,
    })
}
