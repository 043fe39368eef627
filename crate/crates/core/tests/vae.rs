use localdom_core::patches::{MaskPatch, MaskPatchSet};
use localdom_core::vae::*;
use localdom_core::{rng, Error, Mask};

fn bar(size: usize, pos: usize, width: usize, vertical: bool) -> Mask {
    Mask::from_fn(size, size, |y, x| {
        let c = if vertical { x } else { y };
        if c >= pos && c < pos + width {
            1.0
        } else {
            0.0
        }
    })
}

fn bar_set(size: usize) -> MaskPatchSet {
    use rand::Rng;
    let mut r = rng::seeded(11);
    let mut set = MaskPatchSet::new(1, size);
    for i in 0..200 {
        let width = r.random_range(2..=6);
        set.push(MaskPatch {
            pixels: bar(size, r.random_range(0..=size - width), width, r.random_bool(0.5)),
            center: (size / 2, size / 2),
            image_id: format!("bar{i}"),
            domain: 1,
        })
        .unwrap();
    }
    set
}

fn cfg(steps: usize) -> VaeConfig {
    let mut c = VaeConfig::new(steps);
    c.size = 16;
    c.latent = 16;
    c.seed = 3;
    c
}

#[test]
fn kl_closed_form() {
    assert_eq!(gaussian_kl(&[0.0; 4], &[0.0; 4]), 0.0);
    assert!((gaussian_kl(&[1.0, 0.0], &[0.0, 0.0]) - 0.5).abs() < 1e-15);
    let mut r = rng::seeded(9);
    use rand::Rng;
    for _ in 0..50 {
        let mu: Vec<f64> = (0..6).map(|_| r.random_range(-2.0..2.0)).collect();
        let lv: Vec<f64> = (0..6).map(|_| r.random_range(-2.0..2.0)).collect();
        let oracle: f64 = mu
            .iter()
            .zip(&lv)
            .map(|(m, l)| 0.5 * (m * m + f64::exp(*l) - l - 1.0))
            .sum();
        assert!((gaussian_kl(&mu, &lv) - oracle).abs() < 1e-6);
    }
}

#[test]
fn perfect_reconstruction_costs_almost_nothing() {
    let m = bar(8, 2, 3, true);
    let e = elbo_loss(&m, &m, &[0.0], &[0.0]).unwrap();
    let n = 64.0;
    assert!(e.reconstruction <= -n * (1.0f64 - 1e-6).ln() + 1e-12);
    assert_eq!(e.kl, 0.0);
    assert!(matches!(
        elbo_loss(&m, &Mask::new(4, 4, 0.0), &[0.0], &[0.0]),
        Err(Error::ShapeMismatch(_))
    ));
}

#[test]
fn untrained_reconstruction_is_the_prior_mean_decoding() {
    let vae = MaskVae::new(&cfg(0)).unwrap();
    let prior = vae.decode(&[vec![0.0; 16]]).unwrap().remove(0);
    for m in [bar(16, 3, 5, true), Mask::new(16, 16, 0.0), Mask::new(16, 16, 1.0)] {
        let r = vae.reconstruct(&[&m]).unwrap().remove(0);
        let diff = r.data().iter().zip(prior.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
        assert!(diff < 1e-2, "{diff}");
    }
}

#[test]
fn rejects_sizes_not_divisible_by_eight() {
    let mut c = cfg(1);
    c.size = 20;
    assert!(matches!(MaskVae::new(&c), Err(Error::Config(_))));
}

#[test]
fn trained_on_bars_reconstructs_heldout_and_interpolates() {
    let set = bar_set(16);
    let (vae, report) = train_vae(&[&set], &cfg(500)).unwrap();
    assert!(report.heldout_masks > 0);
    assert!(report.heldout_iou > 0.8, "held-out IoU {}", report.heldout_iou);

    let a = bar(16, 4, 5, true);
    let b = bar(16, 9, 3, false);
    let rec_a = vae.reconstruct(&[&a]).unwrap().remove(0);
    let rec_b = vae.reconstruct(&[&b]).unwrap().remove(0);
    let p1 = interpolated_mask(&vae, &a, &b, 1.0, Sampling::Deterministic).unwrap();
    let p0 = interpolated_mask(&vae, &a, &b, 0.0, Sampling::Deterministic).unwrap();
    assert!(mask_iou(&p1, &rec_a) > 0.95);
    assert!(mask_iou(&p0, &rec_b) > 0.95);

    let ea = vae.encode_mean(&a).unwrap();
    assert_eq!(interpolate_latent(&vae, &a, &b, 1.0, Sampling::Deterministic).unwrap(), ea);

    let mut r1 = rng::seeded(1);
    let mut r2 = rng::seeded(2);
    let s1 = interpolated_mask(&vae, &a, &b, 0.5, Sampling::Stochastic(&mut r1)).unwrap();
    let s2 = interpolated_mask(&vae, &a, &b, 0.5, Sampling::Stochastic(&mut r2)).unwrap();
    let mad: f32 = s1.data().iter().zip(s2.data()).map(|(x, y)| (x - y).abs()).sum::<f32>() / 256.0;
    assert!(mad > 0.0);
}

#[test]
fn empty_training_set_is_rejected() {
    let set = MaskPatchSet::new(1, 16);
    assert!(matches!(train_vae(&[&set], &cfg(1)), Err(Error::EmptySet(_))));
}
