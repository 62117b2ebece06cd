#![allow(dead_code)]

use std::collections::{HashMap, HashSet, VecDeque};
use std::path::{Path, PathBuf};

use mention_atlas::corpus::MentionAnnotation;
use mention_atlas::guidance::GuidancePartition;
use mention_atlas::ontology::ConceptId;
use mention_atlas::pipeline::{self, PipelineConfig, PipelineError};
use mention_atlas::synth::SynthConfig;
use mention_atlas::TrainConfig;
use rand::Rng;

pub fn cid(s: &str) -> ConceptId {
    ConceptId::new(s).unwrap()
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Separate Power from per-group label lists, as a reduced fraction.
/// `true` marks the target label.
pub fn sp_oracle(groups: &[Vec<bool>]) -> (u128, u128) {
    let n_f: u128 = groups.iter().flatten().filter(|&&f| f).count() as u128;
    assert!(n_f > 0);
    let mut num: u128 = 0;
    let mut den: u128 = 1;
    for g in groups.iter().filter(|g| !g.is_empty()) {
        let n = g.iter().filter(|&&f| f).count() as u128;
        // num/den + n^2/|g|
        let s = g.len() as u128;
        num = num * s + n * n * den;
        den *= s;
        let d = gcd(num, den);
        num /= d;
        den /= d;
    }
    den *= n_f;
    let d = gcd(num, den);
    (num / d, den / d)
}

/// Every set partition of `n` items as restricted growth strings.
pub fn set_partitions(n: usize) -> Vec<Vec<usize>> {
    fn rec(i: usize, n: usize, max: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if i == n {
            out.push(cur.clone());
            return;
        }
        for b in 0..=max + 1 {
            cur.push(b);
            rec(i + 1, n, max.max(b), cur, out);
            cur.pop();
        }
    }
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    let mut cur = vec![0];
    rec(1, n, 0, &mut cur, &mut out);
    out
}

/// Groups of item indices from a block assignment.
pub fn blocks(assign: &[usize]) -> Vec<Vec<usize>> {
    let k = assign.iter().max().map_or(0, |m| m + 1);
    let mut out = vec![Vec::new(); k];
    for (i, &b) in assign.iter().enumerate() {
        out[b].push(i);
    }
    out.retain(|g| !g.is_empty());
    out
}

/// Random tree of `n` nodes, `N0..N{n-1}`, each node hanging off an
/// earlier one. Returns the tree TSV and the adjacency list.
pub fn random_tree<R: Rng>(rng: &mut R, n: usize) -> (String, Vec<Vec<usize>>) {
    let mut tsv = String::new();
    let mut adj = vec![Vec::new(); n];
    for i in 0..n {
        tsv.push_str(&format!("NODE\tN{i}\tnode {i}\n"));
    }
    for i in 1..n {
        let p = rng.gen_range(0..i);
        tsv.push_str(&format!("EDGE\tN{i}\tN{p}\n"));
        adj[i].push(p);
        adj[p].push(i);
    }
    (tsv, adj)
}

pub fn bfs(adj: &[Vec<usize>], from: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; adj.len()];
    dist[from] = 0;
    let mut q = VecDeque::from([from]);
    while let Some(u) = q.pop_front() {
        for &v in &adj[u] {
            if dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                q.push_back(v);
            }
        }
    }
    dist
}

pub fn gold(anns: &[MentionAnnotation]) -> HashMap<String, bool> {
    anns.iter()
        .map(|a| (a.mention_id.clone(), a.gold_correct.unwrap()))
        .collect()
}

pub fn read_partition(dir: &Path) -> GuidancePartition {
    let text = std::fs::read_to_string(dir.join(pipeline::PARTITION_FILE)).unwrap();
    serde_json::from_str(&text).unwrap()
}

pub fn read_annotations(path: &Path) -> Vec<MentionAnnotation> {
    mention_atlas::corpus::load_annotations(path).unwrap()
}

/// A generated corpus split into source and target, with a model trained
/// on the source half.
pub struct ReuseRun {
    pub dir: PathBuf,
    pub cfg: PipelineConfig,
    pub familiar: HashSet<String>,
}

pub fn reuse_config() -> TrainConfig {
    TrainConfig {
        center_vectors: true,
        ..TrainConfig::default()
    }
}

/// Generate, split and train for one seed of the reuse preset. `cfg` points
/// at the target half.
pub fn prepare_reuse(root: &Path, seed: u64) -> Result<ReuseRun, PipelineError> {
    let dir = root.join(format!("reuse{seed}"));
    let mut synth = SynthConfig::preset("reuse")?;
    synth.seed = seed;
    let generated = mention_atlas::synth::generate(&synth)?;
    pipeline::cmd_synth(&synth, &dir, Some(0.5))?;

    let mut cfg = PipelineConfig {
        corpus: Some(dir.join("source/corpus.jsonl")),
        annotations: Some(dir.join("source/annotations.jsonl")),
        out_dir: dir.join("run"),
        train: reuse_config(),
        seed,
        deterministic: true,
        target_concept: Some(cid("C0038454")),
        eps_quantile: Some(0.9),
        ..PipelineConfig::default()
    };
    pipeline::cmd_train(&cfg)?;
    cfg.corpus = Some(dir.join("target/corpus.jsonl"));
    cfg.annotations = Some(dir.join("target/annotations.jsonl"));
    Ok(ReuseRun {
        dir,
        cfg,
        familiar: generated.familiar_pattern_ids.into_iter().collect(),
    })
}
