mod common;

use std::collections::{HashMap, HashSet};

use mention_atlas::corpus::{self, Context, MentionAnnotation};
use mention_atlas::guidance::{self, ClassifyParams, Reference, RepresentativeStrategy};
use mention_atlas::mention_space::{self, MentionVector};
use mention_atlas::metrics::{self, SinglesMode};
use mention_atlas::ontology::ConceptTree;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::*;

fn mention_vectors(points: Vec<Vec<f64>>) -> Vec<MentionVector> {
    points
        .into_iter()
        .enumerate()
        .map(|(i, vector)| MentionVector {
            mention_id: format!("m{i:03}"),
            vector,
            oov_fraction: 0.0,
        })
        .collect()
}

fn points(dim: usize, max: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-5.0f64..5.0, dim), 1..max)
}

fn reference(vector: Vec<f64>) -> Reference {
    Reference {
        task_concept: cid("C1"),
        reference_concept: cid("C2"),
        vector,
    }
}

fn params(threshold: f64, e: usize) -> ClassifyParams {
    ClassifyParams {
        threshold,
        e,
        representatives: RepresentativeStrategy::MentionIdOrder,
    }
}

proptest! {
    #[test]
    fn tokens_cover_text_in_order(text in "[a-zA-Z0-9 ,.;:!?()-]{0,80}") {
        let seq = corpus::tokenize("d", &text);
        let chars: Vec<char> = text.chars().collect();
        let mut last_end = 0;
        for t in &seq.tokens {
            prop_assert!(t.start >= last_end && t.start < t.end);
            let span: String = chars[t.start..t.end].iter().collect();
            prop_assert_eq!(span.to_lowercase(), t.surface.clone());
            prop_assert!(!t.surface.chars().any(char::is_whitespace));
            last_end = t.end;
        }
        let covered: usize = seq.tokens.iter().map(|t| t.end - t.start).sum();
        let non_space = chars.iter().filter(|c| !c.is_whitespace()).count();
        prop_assert_eq!(covered, non_space);
    }

    #[test]
    fn injection_shrinks_by_span_lengths(
        words in prop::collection::vec("[a-z]{1,6}", 1..30),
        picks in prop::collection::vec((0usize..30, 1usize..4), 0..6),
    ) {
        let text = words.join(" ");
        let seq = corpus::tokenize("d", &text);
        let mut taken = vec![false; seq.len()];
        let mut anns = Vec::new();
        for (i, (at, len)) in picks.into_iter().enumerate() {
            let at = at % seq.len();
            let end = (at + len).min(seq.len());
            if taken[at..end].iter().any(|&t| t) {
                continue;
            }
            taken[at..end].iter_mut().for_each(|t| *t = true);
            anns.push(MentionAnnotation {
                mention_id: format!("m{i}"),
                doc_id: "d".into(),
                start: seq.tokens[at].start,
                end: seq.tokens[end - 1].end,
                concept: cid("C0011849"),
                context: Context::ALL[i % 6],
                gold_correct: None,
                pattern_id: None,
            });
        }
        let refs: Vec<&MentionAnnotation> = anns.iter().collect();
        let out = corpus::inject_markups(&seq, &refs).unwrap();
        let removed: usize = anns
            .iter()
            .map(|a| seq.token_range(a.start, a.end).unwrap().len() - 1)
            .sum();
        prop_assert_eq!(out.len(), seq.len() - removed);
        let markups = out.surfaces().filter(|s| corpus::parse_markup(s).is_ok()).count();
        prop_assert_eq!(markups, anns.len());
        prop_assert_eq!(corpus::inject_markups(&seq, &[]).unwrap(), seq);
    }

    #[test]
    fn tree_distance_matches_bfs(seed in any::<u64>(), n in 2usize..60, a in 0usize..60, b in 0usize..60) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (tsv, adj) = random_tree(&mut rng, n);
        let tree = ConceptTree::from_tsv_str(&tsv).unwrap();
        let (a, b) = (a % n, b % n);
        let d = tree.tree_distance(&cid(&format!("N{a}")), &cid(&format!("N{b}"))).unwrap();
        prop_assert_eq!(d, bfs(&adj, a)[b]);
        let back = tree.tree_distance(&cid(&format!("N{b}")), &cid(&format!("N{a}"))).unwrap();
        prop_assert_eq!(d, back);
    }

    #[test]
    fn clustering_grows_with_eps(pts in points(3, 40), eps in 0.1f64..3.0, extra in 0.0f64..3.0, min_pts in 1usize..5) {
        let v = mention_vectors(pts);
        let small = mention_space::cluster_mentions(&v, eps, min_pts).unwrap();
        let large = mention_space::cluster_mentions(&v, eps + extra, min_pts).unwrap();
        prop_assert!(small.is_partition() && large.is_partition());
        prop_assert!(large.clustered_count() >= small.clustered_count());
        prop_assert_eq!(small.total(), v.len());
    }

    #[test]
    fn clustering_is_scale_covariant(pts in points(3, 30), eps in 0.2f64..3.0, scale in 0.1f64..10.0) {
        let v = mention_vectors(pts.clone());
        let scaled = mention_vectors(pts.into_iter().map(|p| p.into_iter().map(|x| x * scale).collect()).collect());
        let a = mention_space::cluster_mentions(&v, eps, 3).unwrap();
        let b = mention_space::cluster_mentions(&scaled, eps * scale, 3).unwrap();
        let groups = |cs: &mention_atlas::ClusterSet| {
            let mut g: Vec<Vec<String>> = cs.clusters.iter().map(|c| c.members.clone()).collect();
            g.sort();
            g
        };
        // boundary distances can round either way after scaling
        let near_boundary = {
            let n = v.len();
            let mut hit = false;
            for i in 0..n {
                for j in 0..n {
                    let d: f64 = v[i].vector.iter().zip(&v[j].vector).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
                    hit |= (d - eps).abs() < 1e-9 * eps.max(1.0);
                }
            }
            hit
        };
        prop_assume!(!near_boundary);
        prop_assert_eq!(groups(&a), groups(&b));
    }

    #[test]
    fn classify_partitions_every_mention(
        pts in points(4, 50),
        eps in 0.2f64..4.0,
        min_pts in 1usize..5,
        reference_vec in prop::collection::vec(-1.0f64..1.0, 4),
        threshold in -1.0f64..=1.0,
        e in 1usize..6,
    ) {
        let v = mention_vectors(pts);
        let cs = mention_space::cluster_mentions(&v, eps, min_pts).unwrap();
        let part = guidance::classify(&cs, &v, &reference(reference_vec), &params(threshold, e)).unwrap();
        let mut seen = HashSet::new();
        for m in part.all_mentions() {
            prop_assert!(seen.insert(m.clone()));
        }
        prop_assert_eq!(seen.len(), v.len());
        prop_assert_eq!(part.total(), v.len());
        for u in &part.p_unknown {
            prop_assert_eq!(u.representatives.len(), u.members.len().min(e));
        }
    }

    #[test]
    fn classification_is_rotation_invariant(
        pts in points(2, 30),
        angle in 0.0f64..std::f64::consts::TAU,
        reference_vec in prop::collection::vec(-1.0f64..1.0, 2),
        threshold in -0.9f64..0.9,
    ) {
        let rot = |p: &[f64]| vec![p[0] * angle.cos() - p[1] * angle.sin(), p[0] * angle.sin() + p[1] * angle.cos()];
        let v = mention_vectors(pts.clone());
        let r = mention_vectors(pts.iter().map(|p| rot(p)).collect());
        let a_cs = mention_space::cluster_mentions(&v, 1.0, 3).unwrap();
        let b_cs = mention_space::cluster_mentions(&r, 1.0, 3).unwrap();
        let a = guidance::classify(&a_cs, &v, &reference(reference_vec.clone()), &params(threshold, 3)).unwrap();
        let b = guidance::classify(&b_cs, &r, &reference(rot(&reference_vec)), &params(threshold, 3)).unwrap();
        // similarities within rounding of the threshold may flip
        let close = a.known_clusters.iter().map(|c| c.similarity)
            .chain(a.p_unknown.iter().filter_map(|c| c.similarity))
            .chain(a.single_similarity.values().flatten().copied())
            .any(|s| (s - threshold).abs() < 1e-9);
        prop_assume!(!close);
        let near_eps = v.iter().any(|x| v.iter().any(|y| {
            let d: f64 = x.vector.iter().zip(&y.vector).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
            (d - 1.0).abs() < 1e-9
        }));
        prop_assume!(!near_eps);
        prop_assert_eq!(a.p_known, b.p_known);
        prop_assert_eq!(a.singles_known, b.singles_known);
        prop_assert_eq!(a.singles_unknown, b.singles_unknown);
    }

    #[test]
    fn duplicate_waste_falls_as_threshold_rises(
        pts in points(3, 40),
        reference_vec in prop::collection::vec(-1.0f64..1.0, 3),
        mut thresholds in prop::collection::vec(-1.0f64..=1.0, 2..8),
    ) {
        let v = mention_vectors(pts);
        let cs = mention_space::cluster_mentions(&v, 1.5, 3).unwrap();
        thresholds.sort_by(f64::total_cmp);
        let reference = reference(reference_vec);
        let waste: Vec<f64> = thresholds
            .iter()
            .map(|&t| {
                let p = guidance::classify(&cs, &v, &reference, &params(t, 3)).unwrap();
                metrics::duplicate_waste(&p, v.len()).unwrap()
            })
            .collect();
        prop_assert!(waste.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn imbalance_saving_is_non_negative(sizes in prop::collection::vec(1usize..500, 1..60), e in 1usize..20) {
        let (saved, guided) = metrics::imbalance_waste_saved(&sizes, e).unwrap();
        prop_assert!(saved >= 0.0);
        prop_assert_eq!(guided, sizes.iter().map(|&s| s.min(e) as u64).sum::<u64>());
        let conv = metrics::conv_sampling(&sizes, e).unwrap();
        prop_assert!((conv - saved - guided as f64).abs() < 1e-9 * conv.max(1.0));
    }

    #[test]
    fn micro_is_size_weighted_mean(
        pts in points(3, 40),
        labels in prop::collection::vec(any::<bool>(), 40),
        reference_vec in prop::collection::vec(-1.0f64..1.0, 3),
    ) {
        let v = mention_vectors(pts);
        let cs = mention_space::cluster_mentions(&v, 1.5, 3).unwrap();
        let part = guidance::classify(&cs, &v, &reference(reference_vec), &params(-1.0, 3)).unwrap();
        let gold: HashMap<String, bool> = v.iter().zip(&labels).map(|(m, &g)| (m.mention_id.clone(), g)).collect();
        let acc = metrics::accuracy(&part, &gold, SinglesMode::Pooled).unwrap();
        let mut weighted = 0.0;
        let mut total = 0usize;
        for c in &part.known_clusters {
            weighted += acc.per_cluster[&c.cluster_id.to_string()] * c.members.len() as f64;
            total += c.members.len();
        }
        if !part.singles_known.is_empty() {
            weighted += acc.per_cluster[metrics::SINGLES_POOL] * part.singles_known.len() as f64;
            total += part.singles_known.len();
        }
        prop_assert_eq!(total, acc.counted);
        prop_assert!((weighted / total as f64 - acc.micro_accuracy).abs() < 1e-12);
        let mean = acc.per_cluster.values().sum::<f64>() / acc.per_cluster.len() as f64;
        prop_assert!((mean - acc.macro_accuracy).abs() < 1e-12);
    }

    #[test]
    fn separate_power_is_bounded(assign in prop::collection::vec(0usize..6, 1..30), flags in prop::collection::vec(any::<bool>(), 30)) {
        let n = assign.len();
        prop_assume!(flags[..n].contains(&true));
        let groups: Vec<Vec<String>> = blocks(&assign)
            .into_iter()
            .map(|g| g.into_iter().map(|i| i.to_string()).collect())
            .collect();
        let labels: HashMap<String, bool> = (0..n).map(|i| (i.to_string(), !flags[i])).collect();
        let sp = metrics::separate_power(&groups, &labels, false).unwrap();
        let n_f = flags[..n].iter().filter(|&&f| f).count() as f64;
        prop_assert!(sp > 0.0 && sp <= 1.0 + 1e-12);
        prop_assert!(sp >= n_f / n as f64 - 1e-12);
    }
}
