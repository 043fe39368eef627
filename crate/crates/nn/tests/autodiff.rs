use localdom_nn::{Adam, Bind, Conv2d, ConvGeom, GatedConv2d, Graph, Linear, ParamStore, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
}

/// Central-difference check of d loss / d params for a closure building the loss.
fn check_params(store: &mut ParamStore, build: impl Fn(&mut Graph, &ParamStore) -> Var) {
    let mut g = Graph::new();
    let loss = build(&mut g, store);
    let grads = g.backward(loss);
    let h = 1e-2f32;
    for i in 0..store.len() {
        let analytic = grads.get(store.uid(), i).expect("every parameter is used");
        for j in (0..store.value(i).len()).step_by(3) {
            let orig = store.value(i).data()[j];
            store.value_mut(i).data_mut()[j] = orig + h;
            let mut gp = Graph::new();
            let lp = build(&mut gp, store);
            let up = gp.value(lp).item() as f64;
            store.value_mut(i).data_mut()[j] = orig - h;
            let mut gm = Graph::new();
            let lm = build(&mut gm, store);
            let down = gm.value(lm).item() as f64;
            store.value_mut(i).data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * h as f64);
            let a = analytic.data()[j] as f64;
            let err = (a - numeric).abs() / (a.abs().max(numeric.abs()).max(1e-2));
            assert!(err < 2e-2, "{}[{j}]: analytic {a} numeric {numeric}", store.name(i));
        }
    }
}

#[test]
fn conv_stack_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let c1 = Conv2d::new(&mut store, "c1", 2, 3, 3, ConvGeom::same(3, 2), &mut rng);
    let c2 = Conv2d::new(&mut store, "c2", 3, 2, 3, ConvGeom::strided(3, 2), &mut rng);
    let gated = GatedConv2d::new(&mut store, "gc", 2, 2, 3, ConvGeom::same(3, 1), &mut rng);
    let x = random(&[2, 2, 6, 6], &mut rng);
    let target = random(&[2, 2, 6, 6], &mut rng);
    check_params(&mut store, |g, s| {
        let p = Bind::train(s);
        let xi = g.input(x.clone());
        let h = c1.forward(g, p, xi);
        let h = g.tanh(h);
        let h = g.upsample2x(h);
        let h = c2.forward(g, p, h);
        let h = gated.forward(g, p, h);
        let t = g.input(target.clone());
        let d = g.sub(h, t);
        let d = g.square(d);
        g.mean(d)
    });
}

#[test]
fn vae_style_ops_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::new();
    let enc = Linear::new(&mut store, "enc", 6, 4, &mut rng);
    let lv = Linear::new(&mut store, "lv", 6, 4, &mut rng);
    let dec = Linear::new(&mut store, "dec", 4, 8, &mut rng);
    let x = random(&[3, 6], &mut rng);
    let eps = random(&[3, 4], &mut rng);
    let target = Tensor::from_vec(&[3, 8], (0..24).map(|i| (i % 2) as f32).collect());
    check_params(&mut store, |g, s| {
        let p = Bind::train(s);
        let xi = g.input(x.clone());
        let mu = enc.forward(g, p, xi);
        let logvar = lv.forward(g, p, xi);
        let half = g.scale(logvar, 0.5);
        let std = g.exp(half);
        let e = g.input(eps.clone());
        let noise = g.mul(std, e);
        let z = g.add(mu, noise);
        let logits = dec.forward(g, p, z);
        let rec = g.bce_with_logits(logits, &target);
        let kl = g.gaussian_kl(mu, logvar);
        g.add(rec, kl)
    });
}

#[test]
fn frozen_parameters_receive_no_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut a = ParamStore::new();
    let mut b = ParamStore::new();
    let ca = Conv2d::new(&mut a, "a", 1, 1, 3, ConvGeom::same(3, 1), &mut rng);
    let cb = Conv2d::new(&mut b, "b", 1, 1, 3, ConvGeom::same(3, 1), &mut rng);
    let mut g = Graph::new();
    let x = g.input(random(&[1, 1, 4, 4], &mut rng));
    let h = ca.forward(&mut g, Bind::train(&a), x);
    let y = cb.forward(&mut g, Bind::frozen(&b), h);
    let loss = g.mean(y);
    let grads = g.backward(loss);
    assert!(grads.get(a.uid(), 0).is_some());
    assert!(grads.get(b.uid(), 0).is_none());
}

#[test]
fn adam_fits_a_linear_map() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut store = ParamStore::new();
    let lin = Linear::new(&mut store, "l", 3, 1, &mut rng);
    let x = random(&[16, 3], &mut rng);
    let y = Tensor::from_vec(
        &[16, 1],
        x.data().chunks(3).map(|r| 2.0 * r[0] - r[1] + 0.5 * r[2] + 0.25).collect(),
    );
    let mut opt = Adam::new(0.05, 0.9, 0.999);
    let mut last = f32::MAX;
    for _ in 0..400 {
        let mut g = Graph::new();
        let xi = g.input(x.clone());
        let pred = lin.forward(&mut g, Bind::train(&store), xi);
        let t = g.input(y.clone());
        let d = g.sub(pred, t);
        let d = g.square(d);
        let loss = g.mean(d);
        last = g.value(loss).item();
        let grads = g.backward(loss);
        opt.step(&mut store, &grads);
    }
    assert!(last < 1e-4, "final loss {last}");
}
