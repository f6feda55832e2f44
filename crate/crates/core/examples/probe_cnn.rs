//! End-to-end learnability probe: train the desk-scale network on
//! mostly-normal synthetic subjects and report test R2 / MAE in years.

use std::time::Instant;

use spineage_core::model::train::{train, LossKind, TrainConfig, TrainSample};
use spineage_core::model::{predict, volume_to_input, SpineAgeNet};
use spineage_core::rngs::{derive_seed, domain};
use spineage_core::stats::{mae, r2};
use spineage_core::synth::generate_subject;
use spineage_core::volume::preprocess;
use spineage_core::{Severity, Sex, SynthConfig};

fn main() {
    let cfg = SynthConfig::default();
    let master = 424242u64;
    let n = 1000usize;
    let t0 = Instant::now();

    let mut inputs: Vec<Vec<f32>> = Vec::new();
    let mut ages: Vec<f64> = Vec::new();
    let mut tried = 0u64;
    while ages.len() < n {
        let age = 25.0 + 59.0 * (ages.len() as f64 / (n - 1) as f64);
        let seed = derive_seed(master, domain::SUBJECT_PROFILE, tried);
        tried += 1;
        let sex = if tried % 2 == 0 { Sex::Female } else { Sex::Male };
        let (vol, records, _subj) =
            generate_subject(&cfg, &format!("p{tried}"), age, sex, seed).unwrap();
        let severeish = records.iter().any(|r| match r {
            spineage_core::ConditionRecord::Structural(_) => true,
            spineage_core::ConditionRecord::Degenerative { severity, .. } => matches!(
                severity,
                Severity::Moderate | Severity::Severe | Severity::NearComplete
            ),
        });
        if severeish {
            continue;
        }
        let pre = preprocess(&vol, [4.0, 4.0, 3.0], [24, 48, 8], 1, None).unwrap();
        let (input, _shape) = volume_to_input(&pre);
        inputs.push(input);
        ages.push(age);
    }
    println!("generated {n} of {tried} tried in {:.1}s", t0.elapsed().as_secs_f64());

    // Interleaved split: i%10 == 8 -> val, == 9 -> test, else train.
    let mut tr: Vec<usize> = Vec::new();
    let mut va: Vec<usize> = Vec::new();
    let mut te: Vec<usize> = Vec::new();
    for i in 0..n {
        match i % 10 {
            8 => va.push(i),
            9 => te.push(i),
            _ => tr.push(i),
        }
    }
    let mu = tr.iter().map(|&i| ages[i]).sum::<f64>() / tr.len() as f64;
    let var = tr.iter().map(|&i| (ages[i] - mu).powi(2)).sum::<f64>() / tr.len() as f64;
    let sd = var.sqrt();
    println!("train target mean {mu:.2} std {sd:.2}");

    let sample = |i: usize| TrainSample {
        input: inputs[i].clone(),
        target: ((ages[i] - mu) / sd) as f32,
    };
    let train_set: Vec<TrainSample> = tr.iter().map(|&i| sample(i)).collect();
    let val_set: Vec<TrainSample> = va.iter().map(|&i| sample(i)).collect();

    let ck_dir = std::env::temp_dir().join("probe_cnn_ck");
    std::fs::create_dir_all(&ck_dir).unwrap();
    let ck_path = ck_dir.join("best.bin");
    let mut net = SpineAgeNet::<f32>::new(7);
    let mut tc = TrainConfig::new([8, 48, 24], 99);
    tc.epochs = 25;
    tc.loss = LossKind::Mse;
    tc.checkpoint_path = Some(ck_path.clone());
    let t1 = Instant::now();
    let report = train(&mut net, &tc, &train_set, &val_set).unwrap();
    for e in &report.rows {
        println!(
            "epoch {} lr {:.5} train {:.5} val {:.5}",
            e.epoch, e.lr, e.train_loss, e.val_loss
        );
    }
    println!(
        "{} epochs in {:.1}s; best epoch {}",
        report.rows.len(),
        t1.elapsed().as_secs_f64(),
        report.best_epoch
    );

    let test_inputs: Vec<Vec<f32>> = te.iter().map(|&i| inputs[i].clone()).collect();
    let truth: Vec<f64> = te.iter().map(|&i| ages[i]).collect();
    let preds_z = predict(&mut net, &test_inputs, [8, 48, 24], 8).unwrap();
    let preds: Vec<f64> = preds_z.iter().map(|p| p * sd + mu).collect();
    println!(
        "test (final weights): R2 {:.4} MAE {:.3}",
        r2(&preds, &truth).unwrap(),
        mae(&preds, &truth).unwrap()
    );

    // Best-validation weights, as the pipeline evaluates them.
    let ck = spineage_core::model::checkpoint::load_checkpoint(&ck_path).unwrap();
    spineage_core::model::checkpoint::restore(&mut net, &ck).unwrap();
    let preds_z = predict(&mut net, &test_inputs, [8, 48, 24], 8).unwrap();
    let preds: Vec<f64> = preds_z.iter().map(|p| p * sd + mu).collect();
    println!(
        "test (best-val weights): R2 {:.4} MAE {:.3}",
        r2(&preds, &truth).unwrap(),
        mae(&preds, &truth).unwrap()
    );
    let _ = std::fs::remove_file(&ck_path);
}
