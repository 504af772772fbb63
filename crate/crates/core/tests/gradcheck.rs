use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use specs_core::trainer::{
    evaluate, gradient_check, synth_generate, Batch, ImageGroup, LossWeights, MarginMode, Objective, ToyDualEncoder,
    TrainingData,
};
use specs_core::triplet::{forge, ForgeConfig};

fn groups() -> Vec<ImageGroup> {
    let corpus = synth_generate(60, 10, 5).unwrap();
    let triplets = forge(&corpus.captions, &ForgeConfig { seed: 5, ..Default::default() }).unwrap();
    TrainingData::assemble(&triplets, &corpus.features, 0.0).unwrap().train
}

fn objective(margin: MarginMode) -> Objective {
    Objective { weights: LossWeights::default(), margin, temperature: 0.07 }
}

#[test]
fn random_batches_match_finite_differences() {
    let all = groups();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..20u64 {
        let picked: Vec<&ImageGroup> = all.choose_multiple(&mut rng, 4).collect();
        let batch = Batch::new(&picked, 1024).unwrap();
        let model = ToyDualEncoder::new(100 + trial);
        let report = gradient_check(&model, &batch, &objective(MarginMode::Dynamic)).unwrap();
        assert!(report.max_rel_error < 1e-4, "trial {trial}: {report:?}");
        assert_eq!(report.checked + report.excluded, model.param_count());
    }
}

#[test]
fn inactive_hinges_without_contrastive_are_exact() {
    let all = groups();
    let picked: Vec<&ImageGroup> = all.iter().take(3).collect();
    let batch = Batch::new(&picked, 1024).unwrap();
    let model = ToyDualEncoder::new(1);
    // a margin of -3 keeps every hinge argument below -1
    let obj = Objective {
        weights: LossWeights { alpha: 0.0, beta: 1.0, gamma: 1.0 },
        margin: MarginMode::Fixed(-3.0),
        temperature: 0.07,
    };
    let report = gradient_check(&model, &batch, &obj).unwrap();
    assert!(report.max_rel_error < 1e-10, "{report:?}");
    assert_eq!(report.excluded, 0);
}

#[test]
fn kinks_are_flagged_and_excluded() {
    let all = groups();
    let picked: Vec<&ImageGroup> = all.iter().take(4).collect();
    let batch = Batch::new(&picked, 1024).unwrap();
    let model = ToyDualEncoder::new(2);
    // with a zero margin the first hinge argument is minus its gap; use that
    // gap as the margin so the argument becomes exactly zero
    let probe = evaluate(&model, &batch, &objective(MarginMode::Fixed(0.0)), None, false).unwrap();
    let at_kink = objective(MarginMode::Fixed(-probe.hinge_args[0]));
    let eval = evaluate(&model, &batch, &at_kink, None, false).unwrap();
    assert_eq!(eval.hinge_args[0], 0.0);

    let report = gradient_check(&model, &batch, &at_kink).unwrap();
    assert!(report.kinks >= 1);
    assert!(report.excluded >= 1);
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}
