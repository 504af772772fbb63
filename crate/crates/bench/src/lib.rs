//! Fixtures shared by the benchmarks.

use specs_core::trainer::{synth_generate, Batch, ImageGroup, TrainingData};
use specs_core::triplet::{forge, ForgeConfig};

pub const CAPTIONS: [&str; 4] = [
    "A front view of a statue on cement in a park.",
    "A man wearing a hat and a woman holding an umbrella walk along a wet street near a red brick building.",
    "To the left of the car there is a box. The box is brown and has a faded label on its side.",
    "A wooden table with a blue vase of fresh flowers, a stack of old books and a lamp with a white shade.",
];

/// `n` captions cycled from [`CAPTIONS`].
pub fn caption_corpus(n: usize) -> Vec<&'static str> {
    CAPTIONS.iter().copied().cycle().take(n).collect()
}

/// Rank-tied score pairs of length `n`.
pub fn tied_series(n: usize) -> (Vec<f64>, Vec<f64>) {
    let x = (0..n).map(|i| ((i * 7919) % 97) as f64).collect();
    let y = (0..n).map(|i| ((i * 104_729) % 89) as f64 * 0.5).collect();
    (x, y)
}

/// Synthetic training groups for step benchmarks.
pub fn training_groups(images: usize) -> Vec<ImageGroup> {
    let corpus = synth_generate(images, 16, 0).expect("synthetic corpus");
    let triplets = forge(&corpus.captions, &ForgeConfig::default()).expect("triplets");
    TrainingData::assemble(&triplets, &corpus.features, 0.0).expect("groups").train
}

pub fn batch_of(groups: &[ImageGroup], size: usize) -> Batch {
    let picked: Vec<&ImageGroup> = groups.iter().take(size).collect();
    Batch::new(&picked, specs_core::trainer::model::BUCKETS).expect("batch")
}
