use std::collections::BTreeSet;

use chrono::{NaiveDate, Utc};
use framelab_core::analytics::{frames_by_country, frames_by_month};
use framelab_core::annotation::{
    compute_icr, disagreement_list, Annotation, AnnotationLog, AnnotationSession, Annotator, Phase,
};
use framelab_core::codebook::Codebook;
use framelab_core::corpus::{
    filter_keywords, ingest_corpus, Article, Corpus, CorpusManifest, DateWindow, KeywordFilterSpec, KeywordScope,
    Sentiment,
};
use framelab_core::evaluation::{evaluate_predictions, make_folds};
use framelab_core::inference::{parse_label, ParsedLabel};
use framelab_core::FrameLabel;
use proptest::prelude::*;

fn label() -> impl Strategy<Value = FrameLabel> {
    (0usize..6).prop_map(|i| FrameLabel::ALL[i])
}

fn permutation() -> impl Strategy<Value = Vec<usize>> {
    Just((0..6).collect::<Vec<usize>>()).prop_shuffle()
}

fn session_with(a: &[FrameLabel], b: &[FrameLabel]) -> (AnnotationSession, AnnotationLog) {
    let ids: Vec<String> = (0..a.len()).map(|i| format!("i{i}")).collect();
    let s = AnnotationSession::create(
        "s",
        Phase::Training2,
        vec![Annotator::new("a"), Annotator::new("b")],
        ids.clone(),
        "v",
        0.65,
    )
    .unwrap();
    let mut log = AnnotationLog::new();
    for (i, id) in ids.iter().enumerate() {
        for (who, l) in [("a", a[i]), ("b", b[i])] {
            log.record(
                &s,
                Annotation {
                    session_id: "s".into(),
                    article_id: id.clone(),
                    annotator_id: who.into(),
                    primary: l,
                    secondary: None,
                    phase: Phase::Training2,
                    recorded_at: Utc::now(),
                    submission_id: None,
                },
            )
            .unwrap();
        }
    }
    (s, log)
}

proptest! {
    #[test]
    fn kappa_bounds_and_permutation_invariance(
        pairs in prop::collection::vec((label(), label()), 1..40),
        perm in permutation(),
    ) {
        let a: Vec<FrameLabel> = pairs.iter().map(|p| p.0).collect();
        let b: Vec<FrameLabel> = pairs.iter().map(|p| p.1).collect();
        let (s, log) = session_with(&a, &b);
        let r = compute_icr(&s, &log, "a", "b").unwrap();
        prop_assert!(r.kappa <= 1.0 + 1e-12);
        prop_assert_eq!(r.kappa == 1.0, r.percent_agreement == 1.0);
        let trace: u64 = (0..6).map(|i| r.confusion[i][i]).sum();
        prop_assert_eq!(r.percent_agreement, trace as f64 / r.n_items as f64);
        prop_assert_eq!(r.confusion.iter().flatten().sum::<u64>(), r.n_items);

        let relabel = |l: FrameLabel| FrameLabel::ALL[perm[l.index()]];
        let pa: Vec<FrameLabel> = a.iter().map(|l| relabel(*l)).collect();
        let pb: Vec<FrameLabel> = b.iter().map(|l| relabel(*l)).collect();
        let (s2, log2) = session_with(&pa, &pb);
        let r2 = compute_icr(&s2, &log2, "a", "b").unwrap();
        prop_assert!((r.kappa - r2.kappa).abs() < 1e-12);

        let d = disagreement_list(&s, &log, "a", "b");
        let expected = r.n_items as f64 * (1.0 - r.percent_agreement);
        prop_assert!((d.len() as f64 - expected).abs() < 1e-9);
    }

    #[test]
    fn production_assignment_is_partition(n in 1usize..300, annotators in 1usize..5, seed in any::<u64>()) {
        let ids: Vec<String> = (0..n).map(|i| format!("x{i}")).collect();
        let people = (0..annotators).map(|i| Annotator::new(format!("p{i}"))).collect();
        let mut s = AnnotationSession::create("p", Phase::Production, people, ids.clone(), "v", 0.65).unwrap();
        s.assign_items(seed, false).unwrap();
        let sizes: Vec<usize> = s.annotators.iter().map(|a| s.assignment[&a.id].len()).collect();
        prop_assert!(sizes.windows(2).all(|w| w[0] >= w[1] && w[0] - w[1] <= 1));
        let all: BTreeSet<&String> = s.assignment.values().flatten().collect();
        prop_assert_eq!(all.len(), n);
        prop_assert_eq!(sizes.iter().sum::<usize>(), n);
    }

    #[test]
    fn parse_survives_casing_and_whitespace(idx in 0usize..6, mask in prop::collection::vec(any::<bool>(), 40), pad in "[ \t\n]{0,3}") {
        let cb = Codebook::default_codebook();
        let l = FrameLabel::ALL[idx];
        let perturbed: String = l
            .display_name()
            .chars()
            .zip(mask.iter().cycle())
            .map(|(c, up)| if *up { c.to_ascii_uppercase() } else { c })
            .collect::<String>()
            .replace(' ', "  ");
        let raw = format!("{pad}{perturbed}{pad}");
        prop_assert_eq!(parse_label(&raw, &cb), ParsedLabel::Frame(l));
    }
}

fn manifest() -> CorpusManifest {
    CorpusManifest {
        countries: vec!["FR".into(), "IT".into()],
        newspapers: [("Le Monde".to_string(), "FR".to_string()), ("Corriere".to_string(), "IT".to_string())]
            .into_iter()
            .collect(),
        date_window: DateWindow {
            start: NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
            end: NaiveDate::from_ymd_opt(2021, 10, 31).unwrap(),
        },
    }
}

prop_compose! {
    fn article(i: usize)(
        words in prop::collection::vec(prop::sample::select(vec!["vaccine", "No-Vax", "march", "anti-vaxxers", "Rome", "jab", "NO VAX", "pass"]), 1..5),
        body in prop::option::of(prop::collection::vec(prop::sample::select(vec!["anti-vaccine", "doctors", "rally", "crowd"]), 1..4)),
        it in any::<bool>(),
        day in 0i64..600,
        sentiment in prop::option::of(prop::sample::select(Sentiment::ALL.to_vec())),
    ) -> Article {
        Article {
            id: format!("art-{i}"),
            headline: words.join(" "),
            body: body.map(|b| b.join(" ")),
            newspaper: if it { "Corriere".into() } else { "Le Monde".into() },
            country: if it { "IT".into() } else { "FR".into() },
            published: NaiveDate::from_ymd_opt(2020, 1, 1).unwrap() + chrono::Duration::days(day),
            sentiment,
            source_url: None,
        }
    }
}

fn corpus_strategy() -> impl Strategy<Value = Corpus> {
    (1usize..40)
        .prop_flat_map(|n| (0..n).map(article).collect::<Vec<_>>())
        .prop_map(|arts| Corpus::new(arts, manifest()).unwrap())
}

proptest! {
    #[test]
    fn filter_is_idempotent_ordered_subset(corpus in corpus_strategy(), headline_only in any::<bool>()) {
        let scope = if headline_only { KeywordScope::HeadlineOnly } else { KeywordScope::HeadlineOrBody };
        let spec = KeywordFilterSpec::new(KeywordFilterSpec::no_vax().keywords().to_vec(), scope).unwrap();
        let once = filter_keywords(&corpus, &spec);
        let twice = filter_keywords(&once, &spec);
        prop_assert_eq!(&once, &twice);
        prop_assert!(once.len() <= corpus.len());
        let positions: Vec<usize> = once.ids().map(|id| corpus.position(id).unwrap()).collect();
        prop_assert!(positions.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn ingest_serialize_round_trip(corpus in corpus_strategy()) {
        let text = corpus.to_jsonl();
        let again = ingest_corpus(text.as_bytes(), corpus.manifest()).unwrap();
        prop_assert!(again.rejected.is_empty());
        prop_assert_eq!(again.corpus, corpus);
    }

    #[test]
    fn distributions_are_scale_free(corpus in corpus_strategy(), seed in any::<u64>()) {
        let labels: Vec<(String, FrameLabel)> = corpus
            .ids()
            .enumerate()
            .map(|(i, id)| (id.to_string(), FrameLabel::ALL[((seed as usize) + i * 7) % 6]))
            .collect();
        let dist = frames_by_country(&labels, &corpus, false).unwrap();
        let total: u64 = dist.counts.values().flat_map(|m| m.values()).sum();
        prop_assert_eq!(total, labels.len() as u64);
        for shares in dist.normalized.values() {
            prop_assert!((shares.values().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let months = frames_by_month(&labels, &corpus).unwrap();
        prop_assert_eq!(months.total(), dist.total);

        // duplicate every article under a new id
        let mut doubled: Vec<Article> = corpus.articles().to_vec();
        doubled.extend(corpus.articles().iter().map(|a| Article { id: format!("{}-dup", a.id), ..a.clone() }));
        let doubled = Corpus::new(doubled, manifest()).unwrap();
        let mut doubled_labels = labels.clone();
        doubled_labels.extend(labels.iter().map(|(id, l)| (format!("{id}-dup"), *l)));
        let dist2 = frames_by_country(&doubled_labels, &doubled, false).unwrap();
        for (country, shares) in &dist.normalized {
            for (l, v) in shares {
                prop_assert!((dist2.normalized[country][l] - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fold_evaluation_properties(
        n in 5usize..200,
        k in 2usize..6,
        seed in any::<u64>(),
        noise in prop::collection::vec(0u8..10, 200),
        perm in permutation(),
    ) {
        let ids: Vec<String> = (0..n).map(|i| format!("g{i}")).collect();
        let gold: Vec<(String, FrameLabel)> =
            ids.iter().enumerate().map(|(i, id)| (id.clone(), FrameLabel::ALL[i % 6])).collect();
        let pred: Vec<(String, ParsedLabel)> = gold
            .iter()
            .enumerate()
            .map(|(i, (id, g))| {
                let p = match noise[i] {
                    0 => ParsedLabel::Unparseable,
                    1..=3 => ParsedLabel::Frame(FrameLabel::ALL[(g.index() + 1) % 6]),
                    _ => ParsedLabel::Frame(*g),
                };
                (id.clone(), p)
            })
            .collect();
        let plan = make_folds(&ids, k, seed).unwrap();
        let with_plan = evaluate_predictions(&gold, &pred, Some(&plan)).unwrap();
        let whole = evaluate_predictions(&gold, &pred, None).unwrap();
        prop_assert_eq!(with_plan.confusion, whole.confusion);
        prop_assert_eq!(with_plan.unparseable_count, whole.unparseable_count);
        let lo = with_plan.per_fold_accuracy.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = with_plan.per_fold_accuracy.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(lo - 1e-12 <= with_plan.average && with_plan.average <= hi + 1e-12);

        let relabel = |l: FrameLabel| FrameLabel::ALL[perm[l.index()]];
        let pgold: Vec<(String, FrameLabel)> = gold.iter().map(|(id, l)| (id.clone(), relabel(*l))).collect();
        let ppred: Vec<(String, ParsedLabel)> = pred
            .iter()
            .map(|(id, p)| (id.clone(), match p {
                ParsedLabel::Frame(l) => ParsedLabel::Frame(relabel(*l)),
                ParsedLabel::Unparseable => ParsedLabel::Unparseable,
            }))
            .collect();
        let permuted = evaluate_predictions(&pgold, &ppred, Some(&plan)).unwrap();
        prop_assert_eq!(permuted.per_fold_accuracy, with_plan.per_fold_accuracy);
    }
}
