use nof1::autoencoder::{AeConfig, AeModel};
use nof1::dataio::{synth_generate, SynthSpec, TrialDesign};
use nof1::tensor::Tensor;

fn synthetic_images(n_participants: usize, seed: u64) -> Vec<Tensor> {
    let spec = SynthSpec {
        seed,
        lesion_radius_px: (3.0, 5.0),
        ..SynthSpec::default()
    };
    (0..n_participants)
        .flat_map(|i| {
            let design = TrialDesign::default().for_participant(format!("p{i}"));
            synth_generate(&design, &spec).unwrap().samples
        })
        .map(|s| s.pixels)
        .collect()
}

fn trained(epochs: usize, images: &[Tensor]) -> AeModel {
    let config = AeConfig {
        epochs,
        seed: 11,
        batch_size: 8,
        learning_rate: 3e-3,
        ..AeConfig::compact((32, 32))
    };
    let mut model = AeModel::build(config).unwrap();
    let val: Vec<Tensor> = images.to_vec();
    model.train(images, &val).unwrap();
    model
}

#[test]
fn trained_model_beats_mean_image_predictor() {
    // The images are mostly flat skin, so the mean image is a strong
    // baseline; beating it requires encoding where the lesions are.
    let images = synthetic_images(1, 5);
    let model = trained(60, &images);

    let n = images.len() as f64;
    let len = images[0].numel();
    let mut mean = vec![0.0; len];
    for img in &images {
        for (m, v) in mean.iter_mut().zip(img.data()) {
            *m += v / n;
        }
    }
    let baseline: f64 = images
        .iter()
        .map(|img| {
            img.data().iter().zip(&mean).map(|(v, m)| (v - m).powi(2)).sum::<f64>() / len as f64
        })
        .sum::<f64>()
        / n;
    let mse = model.reconstruction_loss(&images).unwrap();
    assert!(mse < baseline, "model {mse} vs mean image {baseline}");

    let h = &model.history.train;
    assert!(h.iter().all(|l| l.is_finite()));
    assert!(h.last().unwrap() <= &h[0]);
}

#[test]
fn blank_images_separate_after_training() {
    let images = synthetic_images(1, 9);
    let model = trained(10, &images);
    let probe = [Tensor::zeros(&[3, 32, 32]), Tensor::full(&[3, 32, 32], 1.0)];
    let e = model.embed(&probe).unwrap();
    let norm = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>().sqrt();
    let (zeros, ones) = (norm(e.row(0)), norm(e.row(1)));
    assert!((zeros - ones).abs() > 1e-3, "norms {zeros} and {ones}");
}

#[test]
fn duplicate_inputs_embed_identically() {
    let images = synthetic_images(1, 2);
    let model = trained(1, &images[..8]);
    let batch = vec![images[0].clone(), images[3].clone(), images[0].clone()];
    let e = model.embed(&batch).unwrap();
    assert_eq!(e.row(0), e.row(2));
    assert_ne!(e.row(0), e.row(1));
    assert_eq!(e.to_matrix().shape(), (3, 64));
}

#[test]
fn untrained_reconstruction_is_in_unit_interval() {
    let model = AeModel::build(AeConfig::default()).unwrap();
    let out = model.reconstruct(&[Tensor::full(&[3, 64, 64], 0.5)]).unwrap();
    assert_eq!(out[0].shape(), &[3, 64, 64]);
    assert!(out[0].data().iter().all(|&v| v > 0.0 && v < 1.0));
}
