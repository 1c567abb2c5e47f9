// Absorb a classifier bias into the feature space and check the softmax is unchanged.

use nodi::bias_removal::{complete_head, softmax, softmax_discrepancy, ClassifierHead, DEFAULT_RANK_TOL};

pub fn run_example() -> nodi::Result<f64> {
    // 3-d features, 5 classes: the head has rank 3 and the encoding gains 2 coordinates
    let weight = [
        0.9, -0.2, 0.4, 1.1, 0.0, //
        -0.3, 0.8, 0.5, -0.6, 0.2, //
        0.1, 0.3, -0.7, 0.2, 1.0,
    ];
    let head = ClassifierHead::from_row_major(3, 5, &weight, &[0.5, -1.0, 0.25, 2.0, -0.3])?;
    let completed = complete_head(&head, DEFAULT_RANK_TOL)?;
    println!(
        "rank {} padding {} encoded dim {}",
        completed.numerical_rank(),
        completed.padding(),
        completed.encoded_dim()
    );

    let feature = [1.5, -0.4, 2.2];
    let encoded = completed.encode(&feature)?;
    println!("encoded {encoded:.4?}");
    println!("softmax {:.4?}", softmax(head.logits(&feature)?.as_slice()));

    let gap = softmax_discrepancy(&head, &completed, &feature)?;
    println!("max softmax gap {gap:.2e}");
    assert!(gap < 1e-10);
    Ok(gap)
}

#[allow(dead_code)]
fn main() -> nodi::Result<()> {
    run_example().map(|_| ())
}
