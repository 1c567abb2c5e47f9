macro_rules! example {
    ($module:ident, $file:literal) => {
        #[allow(dead_code)]
        mod $module {
            include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/", $file));
        }
    };
}

example!(bias_removal, "bias_removal.rs");
example!(feature_files, "feature_files.rs");
example!(schedule, "schedule.rs");
example!(stable_point, "stable_point.rs");
example!(scale_search, "scale_search.rs");
example!(train_predictor, "train_predictor.rs");
example!(score_and_eval, "score_and_eval.rs");
example!(ablation, "ablation.rs");
example!(synth_benchmark, "synth_benchmark.rs");

#[test]
fn bias_removal_preserves_softmax() {
    assert!(bias_removal::run_example().unwrap() < 1e-10);
}

#[test]
fn feature_files_round_trip() {
    let store = feature_files::run_example().unwrap();
    assert_eq!(store.len(), 200);
    assert_eq!(store.radius, 7.0);
}

#[test]
fn schedule_prints_ten_steps() {
    assert_eq!(schedule::run_example().unwrap().timesteps(), 10);
}

#[test]
fn stable_point_separates() {
    let (near, far) = stable_point::run_example().unwrap();
    assert!(far > 2.0 * near);
}

#[test]
fn scale_search_converges() {
    scale_search::run_example().unwrap();
}

#[test]
fn training_lowers_loss() {
    let losses = train_predictor::run_example().unwrap();
    assert!(losses.iter().all(|l| l.is_finite()));
    assert!(losses.last().unwrap() < &losses[0]);
}

#[test]
fn score_and_eval_beats_chance() {
    for rep in score_and_eval::run_example().unwrap() {
        assert!(rep.auroc > 0.5, "{rep:?}");
    }
}

#[test]
fn ablation_covers_grid() {
    let rows = ablation::run_example().unwrap();
    // components 4 + steps 2 + radii 2 × modes 2, each on two splits
    assert_eq!(rows.len(), 2 * (4 + 2 + 4));
}

#[test]
fn synth_writes_all_files() {
    assert_eq!(synth_benchmark::run_example().unwrap(), 5);
}
