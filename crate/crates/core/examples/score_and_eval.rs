// Score ID and OOD features with the stable point, write score files, compute metrics.

use nodi::bias_removal::{complete_head, DEFAULT_RANK_TOL};
use nodi::feature_store::{default_radius, ingest_set};
use nodi::metrics::{report, MetricsReport};
use nodi::schedule::{linear_schedule, DEFAULT_SCORE_T};
use nodi::scorer::{read_jsonl, write_jsonl, ScoreFileMeta, Scorer, ScorerConfig, SCORE_CONVENTION};
use nodi::stable_point::{StablePointConfig, StablePointEstimator};
use nodi::synth::{generate, SynthSpec};

pub fn run_example() -> nodi::Result<Vec<MetricsReport>> {
    let spec = SynthSpec {
        points_per_class: 150,
        test_per_class: 40,
        ood_per_split: 80,
        ..SynthSpec::default()
    };
    let data = generate(&spec)?;
    let head = data.head.as_ref().expect("multi-class spec");
    let r = default_radius(head.latent_dim(), head.num_classes());

    let store = ingest_set(&data.id_train, Some(head), r)?;
    let completed = complete_head(head, DEFAULT_RANK_TOL)?;
    let sched = linear_schedule(10, 1e-4, 1e-2)?;
    let est = StablePointEstimator::new(&store.per_class, store.dim, sched.clone(), StablePointConfig::default());
    let scorer = Scorer::new(&est, &sched, Some(&completed), ScorerConfig::new(r, DEFAULT_SCORE_T))?;

    let dir = tempfile::tempdir()?;
    let mut files = Vec::new();
    for set in [&data.id_test, &data.ood_near, &data.ood_far] {
        let scored = scorer.score_set(set);
        assert!(scored.failures.is_empty());
        let path = dir.path().join(format!("{}.jsonl", set.split_tag.replace(':', "_")));
        let meta = ScoreFileMeta {
            convention: SCORE_CONVENTION.into(),
            backend: "stable".into(),
            split_tag: set.split_tag.clone(),
            radius: r,
            score_t: DEFAULT_SCORE_T,
        };
        write_jsonl(&path, &meta, &scored.records)?;
        files.push(path);
    }

    let scores = |p| -> nodi::Result<Vec<f64>> { Ok(read_jsonl(p)?.1.iter().map(|r| r.score).collect()) };
    let id = scores(&files[0])?;
    let reports = vec![
        report("ood:near", &id, &scores(&files[1])?)?,
        report("ood:far", &id, &scores(&files[2])?)?,
    ];
    for rep in &reports {
        println!(
            "{:>8}: AUROC {:.4}  FPR@95 {:.4}",
            rep.split_name, rep.auroc, rep.fpr_at_95
        );
    }
    Ok(reports)
}

#[allow(dead_code)]
fn main() -> nodi::Result<()> {
    run_example().map(|_| ())
}
