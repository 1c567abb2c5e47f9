// Generate the synthetic benchmark and write it in the canonical file formats.

use nodi::synth::{generate, SynthSpec};

pub fn run_example() -> nodi::Result<usize> {
    let spec: SynthSpec = serde_json::from_str(r#"{"dim": 12, "classes": 3, "points_per_class": 30, "seed": 11}"#)?;
    let data = generate(&spec)?;
    let dir = tempfile::tempdir()?;
    let mut written = 0;
    for set in [&data.id_train, &data.id_test, &data.ood_near, &data.ood_far] {
        let path = dir.path().join(format!("{}.bin", set.split_tag.replace(':', "_")));
        set.write(&path)?;
        println!("{:>9}: {} vectors", set.split_tag, set.len());
        written += 1;
    }
    if let Some(head) = &data.head {
        head.write(&dir.path().join("head.bin"))?;
        written += 1;
    }
    Ok(written)
}

#[allow(dead_code)]
fn main() -> nodi::Result<()> {
    run_example().map(|_| ())
}
