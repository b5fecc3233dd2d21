//! Property-based checks of the library's structural invariants over
//! randomized inputs; unit tests pin concrete values, these pin shapes.

use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use cardsort::cluster::{knee_point, WcssCurve};
use cardsort::metrics::{ari, edit_distance, mantel, nmi};
use cardsort::model::{
    filter_complete, parse_clustering, parse_raw_results, serialize_clustering,
    serialize_raw_results, CardId, Clustering, ParticipantSort, Provenance, SortRow, StudyConfig,
    StudyResults,
};
use cardsort::percent::Percent;
use cardsort::prompts::{render, PromptVariant};
use cardsort::simmatrix::{build_similarity, complement, DistanceMatrix, SimilarityMatrix};
use cardsort::validate::{canonicalize_label, validate_clustering_output};

fn fragment() -> impl Strategy<Value = String> {
    proptest::string::string_regex("[a-zA-Z0-9 ,'’é.\"-]{0,10}").unwrap()
}

/// Fragment safe to leave unquoted in a CSV field and to pad with spaces.
fn plain_fragment() -> impl Strategy<Value = String> {
    proptest::string::string_regex("[a-z0-9’ ]{0,8}").unwrap()
}

fn indexed_labels(frags: &[String]) -> Vec<String> {
    frags.iter().enumerate().map(|(i, f)| format!("c{i}-{f}")).collect()
}

fn config_from(labels: Vec<String>, participants: usize) -> StudyConfig {
    StudyConfig::new("prop".to_string(), labels, participants, None, None, None, None).unwrap()
}

fn clustering_from_labels(labels: &[usize]) -> Clustering {
    let k = labels.iter().max().map_or(0, |&m| m + 1);
    let mut categories: Vec<(String, Vec<CardId>)> =
        (0..k).map(|g| (format!("g{g}"), Vec::new())).collect();
    for (card, &g) in labels.iter().enumerate() {
        categories[g].1.push(CardId(card));
    }
    Clustering::from_parts(categories.into_iter().filter(|(_, cards)| !cards.is_empty()).collect())
}

fn partition_sets(labels: &[usize]) -> BTreeSet<Vec<usize>> {
    let k = labels.iter().max().map_or(0, |&m| m + 1);
    let mut groups = vec![Vec::new(); k];
    for (card, &g) in labels.iter().enumerate() {
        groups[g].push(card);
    }
    groups.into_iter().filter(|g| !g.is_empty()).collect()
}

fn clustering_sets(c: &Clustering) -> BTreeSet<Vec<usize>> {
    c.categories
        .iter()
        .map(|(_, cards)| {
            let mut v: Vec<usize> = cards.iter().map(|c| c.0).collect();
            v.sort();
            v
        })
        .collect()
}

// ---------------------------------------------------------------------
// model: raw-results round trip and completeness filtering

type RawParticipant = (String, Vec<usize>, usize);

fn raw_case() -> impl Strategy<Value = (Vec<String>, Vec<RawParticipant>)> {
    (3..=8usize).prop_flat_map(|n| {
        (
            proptest::collection::vec(fragment(), n),
            proptest::collection::vec(
                (fragment(), proptest::collection::vec(0..4usize, n), 0..=n),
                1..=5,
            ),
        )
    })
}

fn build_results(label_frags: &[String], participants: &[RawParticipant]) -> (StudyConfig, StudyResults) {
    let n = label_frags.len();
    let config = config_from(indexed_labels(label_frags), participants.len().max(2));
    let sorts: Vec<ParticipantSort> = participants
        .iter()
        .enumerate()
        .map(|(pi, (frag, groups, taken))| ParticipantSort {
            respondent_id: format!("r{pi}-{frag}"),
            rows: (0..*taken)
                .map(|card| SortRow {
                    category: format!("g{}-{frag}", groups[card]),
                    card: CardId(card),
                })
                .collect(),
            complete: *taken == n,
        })
        .collect();
    let results = StudyResults { config: config.clone(), sorts, provenance: Provenance::Real };
    (config, results)
}

proptest! {
    #[test]
    fn raw_results_round_trip_byte_identically((label_frags, mut participants) in raw_case()) {
        participants[0].2 = participants[0].2.max(1);
        let (config, results) = build_results(&label_frags, &participants);
        let csv = serialize_raw_results(&results);
        let reparsed = parse_raw_results(&csv, &config).unwrap();
        prop_assert_eq!(serialize_raw_results(&reparsed), csv);
    }

    #[test]
    fn filter_complete_is_idempotent((label_frags, mut participants) in raw_case()) {
        let n = label_frags.len();
        participants[0].2 = n; // guarantee one complete sort
        let (_, results) = build_results(&label_frags, &participants);
        let once = filter_complete(&results).unwrap();
        let twice = filter_complete(&once).unwrap();
        prop_assert_eq!(once.sorts.len(), twice.sorts.len());
        prop_assert_eq!(serialize_raw_results(&once), serialize_raw_results(&twice));
        prop_assert!(once.sorts.iter().all(|s| s.complete));
    }

    #[test]
    fn clustering_round_trips_byte_identically(
        (label_frags, groups) in (4..=9usize).prop_flat_map(|n| (
            proptest::collection::vec(fragment(), n),
            proptest::collection::vec(0..3usize, n),
        ))
    ) {
        let mut groups = groups;
        groups[0] = 0;
        groups[1] = 1; // at least two non-empty categories
        let config = config_from(indexed_labels(&label_frags), 4);
        let clustering = clustering_from_labels(&groups);
        let csv = serialize_clustering(&clustering, &config);
        let reparsed = parse_clustering(&csv, &config).unwrap();
        prop_assert_eq!(serialize_clustering(&reparsed, &config), csv);
    }
}

// ---------------------------------------------------------------------
// simmatrix: construction invariances and complement involution

proptest! {
    #[test]
    fn build_similarity_ignores_participant_order_and_category_names(
        (label_frags, assignments) in (3..=7usize).prop_flat_map(|n| (
            proptest::collection::vec(fragment(), n),
            proptest::collection::vec(proptest::collection::vec(0..3usize, n), 2..=5),
        ))
    ) {
        let n = label_frags.len();
        let config = config_from(indexed_labels(&label_frags), assignments.len());
        let sort = |pi: usize, groups: &[usize], rename: bool| ParticipantSort {
            respondent_id: format!("r{pi}"),
            rows: (0..n)
                .map(|card| SortRow {
                    category: if rename {
                        format!("renamed bucket {}", groups[card])
                    } else {
                        format!("g{}", groups[card])
                    },
                    card: CardId(card),
                })
                .collect(),
            complete: true,
        };
        let base = StudyResults {
            config: config.clone(),
            sorts: assignments.iter().enumerate().map(|(pi, g)| sort(pi, g, false)).collect(),
            provenance: Provenance::Real,
        };
        let shuffled = StudyResults {
            config: config.clone(),
            sorts: assignments.iter().enumerate().rev().map(|(pi, g)| sort(pi, g, true)).collect(),
            provenance: Provenance::Real,
        };
        prop_assert_eq!(build_similarity(&base).unwrap(), build_similarity(&shuffled).unwrap());
    }

    #[test]
    fn complement_is_involutive_off_diagonal(
        (n, total, counts) in (2..=6usize, 1..=8usize).prop_flat_map(|(n, t)| (
            Just(n),
            Just(t),
            proptest::collection::vec(0..=t, n * (n - 1) / 2),
        ))
    ) {
        let mut values = vec![vec![Percent::ZERO; n]; n];
        let mut it = counts.iter();
        for i in 0..n {
            for j in (i + 1)..n {
                let v = Percent::from_count(*it.next().unwrap(), total);
                values[i][j] = v;
                values[j][i] = v;
            }
        }
        let sim = SimilarityMatrix::new((0..n).map(CardId).collect(), values).unwrap();
        let dist = complement(&sim);
        let view = SimilarityMatrix { cards: dist.cards.clone(), values: dist.values.clone() };
        let back = complement(&view);
        prop_assert_eq!(back.values, sim.values);
        prop_assert_eq!(back.cards, sim.cards);
    }
}

// ---------------------------------------------------------------------
// metrics: symmetry, relabeling/reordering invariance, bounds

fn partition_pair() -> impl Strategy<Value = (Vec<usize>, Vec<usize>, u64)> {
    (4..=10usize).prop_flat_map(|n| {
        (
            proptest::collection::vec(0..5usize, n),
            proptest::collection::vec(0..5usize, n),
            any::<u64>(),
        )
    })
}

proptest! {
    #[test]
    fn nmi_and_ari_are_symmetric((a, b, _) in partition_pair()) {
        let (ca, cb) = (clustering_from_labels(&a), clustering_from_labels(&b));
        prop_assert!((nmi(&ca, &cb).unwrap() - nmi(&cb, &ca).unwrap()).abs() <= 1e-12);
        prop_assert!((ari(&ca, &cb).unwrap() - ari(&cb, &ca).unwrap()).abs() <= 1e-12);
        prop_assert_eq!(edit_distance(&ca, &cb).unwrap(), edit_distance(&cb, &ca).unwrap());
    }

    #[test]
    fn metrics_ignore_category_names_and_card_order((a, b, seed) in partition_pair()) {
        let (ca, cb) = (clustering_from_labels(&a), clustering_from_labels(&b));
        let rename = |c: &Clustering| {
            Clustering::from_parts(
                c.categories
                    .iter()
                    .enumerate()
                    .map(|(i, (_, cards))| (format!("entirely different {i}"), cards.clone()))
                    .collect(),
            )
        };
        prop_assert_eq!(nmi(&ca, &cb).unwrap(), nmi(&rename(&ca), &rename(&cb)).unwrap());
        prop_assert_eq!(ari(&ca, &cb).unwrap(), ari(&rename(&ca), &rename(&cb)).unwrap());

        let mut perm: Vec<usize> = (0..a.len()).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let permute = |labels: &[usize]| -> Vec<usize> { perm.iter().map(|&i| labels[i]).collect() };
        let (pa, pb) = (clustering_from_labels(&permute(&a)), clustering_from_labels(&permute(&b)));
        prop_assert_eq!(nmi(&ca, &cb).unwrap(), nmi(&pa, &pb).unwrap());
        prop_assert_eq!(ari(&ca, &cb).unwrap(), ari(&pa, &pb).unwrap());
        prop_assert_eq!(edit_distance(&ca, &cb).unwrap(), edit_distance(&pa, &pb).unwrap());
    }

    #[test]
    fn metric_bounds_hold((a, b, _) in partition_pair()) {
        let (ca, cb) = (clustering_from_labels(&a), clustering_from_labels(&b));
        let v_nmi = nmi(&ca, &cb).unwrap();
        let v_ari = ari(&ca, &cb).unwrap();
        let v_edit = edit_distance(&ca, &cb).unwrap();
        prop_assert!((0.0..=1.0).contains(&v_nmi), "nmi {}", v_nmi);
        prop_assert!(v_ari >= -1.0 - 1e-12 && v_ari <= 1.0 + 1e-12, "ari {}", v_ari);
        prop_assert!(v_edit <= a.len(), "edit {} over {} cards", v_edit, a.len());
        let same = partition_sets(&a) == partition_sets(&b);
        prop_assert_eq!(v_edit == 0, same, "edit zero iff equal partitions");
        if same {
            prop_assert_eq!(v_nmi, 1.0);
            prop_assert_eq!(v_ari, 1.0);
        }
    }
}

// ---------------------------------------------------------------------
// cluster: knee selection under exactly representable affine maps

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn knee_selection_is_invariant_under_affine_rescaling(
        (wcss, a, b) in (4..=10usize).prop_flat_map(|len| (
            proptest::collection::vec(0u32..1_000_000, len),
            prop::sample::select(vec![0.5f64, 1.0, 2.0, 8.0, 512.0]),
            prop::sample::select(vec![0.0f64, 1.0, 7.0, 4096.0]),
        ))
    ) {
        // Powers of two and integer offsets keep a·w + b exact in f64, so
        // the normalized curve is bit-identical and the property is sharp.
        let ks: Vec<usize> = (2..2 + wcss.len()).collect();
        let wcss: Vec<f64> = wcss.iter().map(|&w| f64::from(w)).collect();
        let base = knee_point(&WcssCurve { ks: ks.clone(), wcss: wcss.clone() }).unwrap();
        let scaled: Vec<f64> = wcss.iter().map(|w| a * w + b).collect();
        let rescaled = knee_point(&WcssCurve { ks, wcss: scaled }).unwrap();
        prop_assert_eq!(rescaled.k, base.k);
        prop_assert_eq!(rescaled.no_knee, base.no_knee);
    }
}

// ---------------------------------------------------------------------
// validate: canonicalization and whitespace-noise tolerance

proptest! {
    #[test]
    fn canonicalize_label_is_idempotent(s in "[a-zA-Z \\t’‘“”–—,.-]{0,20}") {
        let once = canonicalize_label(&s);
        prop_assert_eq!(canonicalize_label(&once), once.clone());
    }

    #[test]
    fn whitespace_noise_normalizes_without_failures(
        (label_frags, k, tweaks) in (4..=9usize).prop_flat_map(|n| (
            proptest::collection::vec(plain_fragment(), n),
            2..=(n / 2).max(2),
            proptest::collection::vec(0u8..5, n),
        ))
    ) {
        let n = label_frags.len();
        let groups: Vec<usize> = (0..n).map(|i| i % k).collect();
        let config = config_from(indexed_labels(&label_frags), 4);
        let clustering = clustering_from_labels(&groups);
        let csv = serialize_clustering(&clustering, &config);

        let mut lines = csv.lines();
        let header = lines.next().unwrap().to_string();
        let mut noisy = vec![header];
        for (row, tweak) in lines.zip(&tweaks) {
            let (cat, card) = row.split_once(',').unwrap();
            match tweak {
                1 => noisy.push(format!("  {cat},{card}")),
                2 => noisy.push(format!("{cat},{card}  ")),
                3 => {
                    noisy.push(String::new());
                    noisy.push(row.to_string());
                }
                4 => noisy.push(format!("{cat}, {card} ")),
                _ => noisy.push(row.to_string()),
            }
        }
        let mut payload = noisy.join("\n");
        payload.push('\n');

        let (validated, report) = validate_clustering_output(&payload, &config);
        prop_assert!(report.pass(), "errors: {:?}", report.errors);
        prop_assert_eq!(clustering_sets(&validated), clustering_sets(&clustering));
    }
}

// ---------------------------------------------------------------------
// metrics: Mantel r under joint axis reordering

fn quarter_distance(counts: &[usize]) -> DistanceMatrix {
    let n = 6;
    let mut values = vec![vec![Percent::ZERO; n]; n];
    let mut it = counts.iter();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = Percent::from_count(*it.next().unwrap(), 4);
            values[i][j] = v;
            values[j][i] = v;
        }
    }
    DistanceMatrix::new((0..n).map(CardId).collect(), values).unwrap()
}

fn permute_distance(m: &DistanceMatrix, perm: &[usize]) -> DistanceMatrix {
    let n = perm.len();
    let cards: Vec<CardId> = perm.iter().map(|&i| m.cards[i]).collect();
    let values: Vec<Vec<Percent>> =
        (0..n).map(|i| (0..n).map(|j| m.values[perm[i]][perm[j]]).collect()).collect();
    DistanceMatrix::new(cards, values).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]
    #[test]
    fn mantel_r_is_invariant_under_joint_axis_reordering(
        (mut a_counts, mut b_counts, seed) in (
            proptest::collection::vec(0..=4usize, 15),
            proptest::collection::vec(0..=4usize, 15),
            any::<u64>(),
        )
    ) {
        // Pin two cells so neither triangle is constant (Mantel rejects
        // zero-variance input by contract).
        a_counts[0] = 0;
        a_counts[1] = 4;
        b_counts[0] = 0;
        b_counts[1] = 4;
        let (a, b) = (quarter_distance(&a_counts), quarter_distance(&b_counts));
        let mut perm: Vec<usize> = (0..6).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let (pa, pb) = (permute_distance(&a, &perm), permute_distance(&b, &perm));
        let r = mantel(&a, &b, 99, 11).unwrap().r;
        let pr = mantel(&pa, &pb, 99, 11).unwrap().r;
        prop_assert!((r - pr).abs() <= 1e-12, "r {} vs permuted {}", r, pr);
    }
}

// ---------------------------------------------------------------------
// prompts: P4 is P3 minus exactly the rendered context block

fn opt_text() -> impl Strategy<Value = Option<String>> {
    proptest::option::of(proptest::string::string_regex("[a-zA-Z0-9 ,.'\"-]{1,20}").unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn p4_is_p3_minus_the_context_block(
        n in 4..=12usize,
        participants in 2..=60usize,
        welcome in opt_text(),
        instructions in opt_text(),
        demographics in opt_text(),
    ) {
        let config = StudyConfig::new(
            "prop".to_string(),
            (0..n).map(|i| format!("Item {i}")).collect(),
            participants,
            welcome.clone(),
            instructions.clone(),
            demographics.clone(),
            None,
        )
        .unwrap();
        let p3 = render(&config, PromptVariant::P3).text;
        let p4 = render(&config, PromptVariant::P4).text;

        let p4_lines: Vec<&str> = p4.lines().collect();
        let mut cursor = 0usize;
        let mut removed: Vec<String> = Vec::new();
        for line in p3.lines() {
            if cursor < p4_lines.len() && line == p4_lines[cursor] {
                cursor += 1;
            } else {
                removed.push(line.to_string());
            }
        }
        prop_assert_eq!(cursor, p4_lines.len(), "P4 is not an ordered subsequence of P3");

        let or_default = |v: &Option<String>| v.clone().unwrap_or_else(|| "not specified".to_string());
        let expected = vec![
            "Group the cards from the perspective of participants with the following context:"
                .to_string(),
            format!("- Demographic attributes for respondents are: {}", or_default(&demographics)),
            format!("- Welcome message received by participants is: \"{}\"", or_default(&welcome)),
            format!(
                "- Instructions before the task received by participants are: \"{}\"",
                or_default(&instructions)
            ),
        ];
        prop_assert_eq!(removed, expected);
    }
}

// ---------------------------------------------------------------------
// percent: rendering stability and exact fraction behavior

proptest! {
    #[test]
    fn percent_rendering_stabilizes_after_one_cycle(
        (total, count) in (1..=120usize).prop_flat_map(|t| (Just(t), 0..=t))
    ) {
        let p = Percent::from_count(count, total);
        let s1 = p.to_string();
        let q: Percent = s1.parse().unwrap();
        prop_assert_eq!(q.to_string(), s1);
        prop_assert_eq!(p.complement().complement(), p);
        prop_assert!(p.deviation_from_fraction(total) == num_rational::Ratio::from_integer(0));
    }

    #[test]
    fn percent_round_trips_exactly_for_participant_divisors_of_100(
        (total, count) in prop::sample::select(vec![1usize, 2, 4, 5, 10, 20, 25, 50, 100])
            .prop_flat_map(|t| (Just(t), 0..=t))
    ) {
        let p = Percent::from_count(count, total);
        let q: Percent = p.to_string().parse().unwrap();
        prop_assert_eq!(q, p);
    }
}
