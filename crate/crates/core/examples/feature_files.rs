// Round-trip the feature, head and store file formats, then ingest from disk.

use nodi::feature_store::{default_radius, ingest, FeatureSet, NormalizedFeatureSet};
use nodi::synth::{generate, SynthSpec};

pub fn run_example() -> nodi::Result<NormalizedFeatureSet> {
    let dir = tempfile::tempdir()?;
    let spec = SynthSpec {
        points_per_class: 50,
        test_per_class: 5,
        ood_per_split: 5,
        ..SynthSpec::default()
    };
    let data = generate(&spec)?;
    let head = data.head.expect("four classes give a head");

    let (features, head_path, store_path) = (
        dir.path().join("train.bin"),
        dir.path().join("head.bin"),
        dir.path().join("store.bin"),
    );
    data.id_train.write(&features)?;
    head.write(&head_path)?;
    assert_eq!(FeatureSet::read(&features)?, data.id_train);

    let r = default_radius(head.latent_dim(), head.num_classes());
    let store = ingest(&features, Some(&head_path), r)?;
    store.write(&store_path)?;
    let back = NormalizedFeatureSet::read(&store_path)?;
    back.check_norms()?;
    println!(
        "{} points, {} classes, dim {}, radius {}",
        back.len(),
        back.num_classes(),
        back.dim,
        back.radius
    );
    Ok(back)
}

#[allow(dead_code)]
fn main() -> nodi::Result<()> {
    run_example().map(|_| ())
}
